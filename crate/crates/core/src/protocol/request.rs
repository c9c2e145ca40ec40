//! Signed test requests from researchers.

use serde::{Deserialize, Serialize};

use crate::circuits::TestSpec;
use crate::ledger::{verify_ed25519, KeyPair};

const REQUEST_DOMAIN: &str = "star/request/v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestRequest {
    pub spec: TestSpec,
    /// Hex Ed25519 public key of the researcher.
    pub researcher_key: String,
    /// Free-form, makes otherwise identical requests distinct.
    pub nonce: String,
    pub signature: String,
}

impl TestRequest {
    pub fn signing_bytes(spec: &TestSpec, researcher_key: &str, nonce: &str) -> Vec<u8> {
        format!("{REQUEST_DOMAIN}|{}|{researcher_key}|{nonce}", spec.canonical_json()).into_bytes()
    }

    pub fn sign(spec: TestSpec, key: &KeyPair, nonce: &str) -> Self {
        let researcher_key = key.public_hex();
        let signature = key.sign(&Self::signing_bytes(&spec, &researcher_key, nonce));
        Self { spec, researcher_key, nonce: nonce.to_string(), signature }
    }

    pub fn verify(&self) -> bool {
        verify_ed25519(
            &self.researcher_key,
            &Self::signing_bytes(&self.spec, &self.researcher_key, &self.nonce),
            &self.signature,
        )
    }

    /// Digest the servers compare before starting work on a request.
    pub fn digest(&self) -> [u8; 32] {
        let mut bytes = Self::signing_bytes(&self.spec, &self.researcher_key, &self.nonce);
        bytes.push(b'|');
        bytes.extend_from_slice(self.signature.as_bytes());
        crate::codec::sha256(&bytes)
    }
}
