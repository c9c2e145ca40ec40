//! Ed25519 keys for servers, the data owner and researchers.

use std::fmt;

use ed25519_dalek::{Signature, Signer as _, SigningKey, VerifyingKey};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};

use crate::codec::decode_hex;

pub const SCHEME_ED25519: &str = "ed25519";

/// A signing key. Serializes as `{scheme, secret, public}` with hex fields.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "KeyPairFile", into = "KeyPairFile")]
pub struct KeyPair {
    key: SigningKey,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KeyPairFile {
    scheme: String,
    secret: String,
    public: String,
}

impl TryFrom<KeyPairFile> for KeyPair {
    type Error = String;

    fn try_from(f: KeyPairFile) -> Result<Self, String> {
        if f.scheme != SCHEME_ED25519 {
            return Err(format!("unsupported signature scheme {:?}", f.scheme));
        }
        let bytes: [u8; 32] = decode_hex(&f.secret)
            .and_then(|b| b.try_into().ok())
            .ok_or("secret must be 32 bytes of lowercase hex")?;
        let pair = KeyPair { key: SigningKey::from_bytes(&bytes) };
        if pair.public_hex() != f.public {
            return Err("public key does not match the secret".into());
        }
        Ok(pair)
    }
}

impl From<KeyPair> for KeyPairFile {
    fn from(k: KeyPair) -> Self {
        KeyPairFile {
            scheme: SCHEME_ED25519.into(),
            secret: hex::encode(k.key.to_bytes()),
            public: k.public_hex(),
        }
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair").field("public", &self.public_hex()).finish_non_exhaustive()
    }
}

impl KeyPair {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        Self { key: SigningKey::generate(rng) }
    }

    pub fn public_hex(&self) -> String {
        hex::encode(self.key.verifying_key().as_bytes())
    }

    pub fn public(&self) -> PublicIdentity {
        PublicIdentity { scheme: SCHEME_ED25519.into(), key: self.public_hex() }
    }

    /// Hex signature over `msg`.
    pub fn sign(&self, msg: &[u8]) -> String {
        hex::encode(self.key.sign(msg).to_bytes())
    }
}

/// A public key with its scheme label.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PublicIdentity {
    pub scheme: String,
    pub key: String,
}

impl PublicIdentity {
    pub fn ed25519(key_hex: &str) -> Self {
        Self { scheme: SCHEME_ED25519.into(), key: key_hex.into() }
    }

    /// False for unknown schemes and malformed keys or signatures.
    pub fn verify(&self, msg: &[u8], signature_hex: &str) -> bool {
        self.scheme == SCHEME_ED25519 && verify_ed25519(&self.key, msg, signature_hex)
    }
}

pub fn verify_ed25519(public_hex: &str, msg: &[u8], signature_hex: &str) -> bool {
    let Some(pk) = decode_hex(public_hex)
        .and_then(|b| <[u8; 32]>::try_from(b).ok())
        .and_then(|b| VerifyingKey::from_bytes(&b).ok())
    else {
        return false;
    };
    let Some(sig) = decode_hex(signature_hex).and_then(|b| <[u8; 64]>::try_from(b).ok()) else {
        return false;
    };
    pk.verify_strict(msg, &Signature::from_bytes(&sig)).is_ok()
}
