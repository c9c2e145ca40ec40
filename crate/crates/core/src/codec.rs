//! Strict hex and hashing helpers shared by the key files, proofs and the
//! ledger.
//!
//! Hex is always lowercase on output and only lowercase is accepted on
//! input, so every byte of a serialized artifact has exactly one meaning.

use num_bigint::BigUint;
use sha2::{Digest, Sha256};

pub fn is_lower_hex(s: &str) -> bool {
    s.len() % 2 == 0 && s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

pub fn decode_hex(s: &str) -> Option<Vec<u8>> {
    if !is_lower_hex(s) {
        return None;
    }
    hex::decode(s).ok()
}

/// Minimal big-endian hex; zero is `"00"`.
pub fn biguint_to_hex(v: &BigUint) -> String {
    hex::encode(v.to_bytes_be())
}

pub fn biguint_from_hex(s: &str) -> Option<BigUint> {
    let bytes = decode_hex(s)?;
    if bytes.is_empty() {
        return None;
    }
    let canonical = bytes.len() == 1 || bytes[0] != 0;
    canonical.then(|| BigUint::from_bytes_be(&bytes))
}

pub fn sha256(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

/// SHA-256 over a sequence of big integers, each encoded big-endian and
/// prefixed with its 4-byte big-endian length.
pub fn hash_biguints<'a>(domain: &[u8], items: impl IntoIterator<Item = &'a BigUint>) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update((domain.len() as u32).to_be_bytes());
    h.update(domain);
    for item in items {
        let bytes = item.to_bytes_be();
        h.update((bytes.len() as u32).to_be_bytes());
        h.update(&bytes);
    }
    h.finalize().into()
}

/// Leading `bits` of a digest as an integer (`bits` must be a multiple of 8).
pub fn truncate_digest(digest: &[u8; 32], bits: u32) -> BigUint {
    assert!(bits % 8 == 0 && bits <= 256, "unsupported truncation {bits}");
    BigUint::from_bytes_be(&digest[..(bits / 8) as usize])
}

/// Compact JSON with object keys in lexicographic order.
pub fn canonical_json<T: serde::Serialize>(value: &T) -> Result<String, serde_json::Error> {
    // serde_json's default map is a BTreeMap, so a round trip through
    // `Value` sorts every object's keys
    let v = serde_json::to_value(value)?;
    serde_json::to_string(&v)
}

/// Serde adapter: `BigUint` as strict lowercase hex.
pub mod hex_biguint {
    use num_bigint::BigUint;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &BigUint, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&super::biguint_to_hex(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BigUint, D::Error> {
        let s = String::deserialize(d)?;
        super::biguint_from_hex(&s).ok_or_else(|| D::Error::custom("expected lowercase hex integer"))
    }
}

/// Serde adapter: `Vec<BigUint>` as a list of strict lowercase hex strings.
pub mod hex_biguint_vec {
    use num_bigint::BigUint;
    use serde::{de::Error, ser::SerializeSeq, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[BigUint], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(v.len()))?;
        for item in v {
            seq.serialize_element(&super::biguint_to_hex(item))?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<BigUint>, D::Error> {
        Vec::<String>::deserialize(d)?
            .iter()
            .map(|s| super::biguint_from_hex(s).ok_or_else(|| D::Error::custom("expected lowercase hex integer")))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hex_is_strict() {
        assert_eq!(biguint_from_hex("0a").unwrap(), BigUint::from(10u32));
        assert_eq!(biguint_from_hex("00").unwrap(), BigUint::from(0u32));
        assert!(biguint_from_hex("0A").is_none());
        assert!(biguint_from_hex("a").is_none());
        assert!(biguint_from_hex("000a").is_none());
        assert!(biguint_from_hex("").is_none());
        assert_eq!(biguint_to_hex(&BigUint::from(0u32)), "00");
        assert_eq!(biguint_to_hex(&BigUint::from(4096u32)), "1000");
    }

    #[test]
    fn canonical_json_sorts_keys() {
        #[derive(serde::Serialize)]
        struct S {
            zeta: u8,
            alpha: Vec<u8>,
        }
        assert_eq!(canonical_json(&S { zeta: 1, alpha: vec![2] }).unwrap(), r#"{"alpha":[2],"zeta":1}"#);
    }

    #[test]
    fn length_prefix_separates_items() {
        let a = [BigUint::from(0x0102u32), BigUint::from(3u32)];
        let b = [BigUint::from(0x01u32), BigUint::from(0x0203u32)];
        assert_ne!(hash_biguints(b"t", &a), hash_biguints(b"t", &b));
    }
}
