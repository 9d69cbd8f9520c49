//! Stable content hashes used for instance ids and seeded permutations.

use sha2::{Digest, Sha256};

const SEP: u8 = 0x1f;

/// SHA-256 over the parts joined by the ASCII unit separator.
pub fn digest_parts(parts: &[&str]) -> [u8; 32] {
    let mut h = Sha256::new();
    for (i, p) in parts.iter().enumerate() {
        if i > 0 {
            h.update([SEP]);
        }
        h.update(p.as_bytes());
    }
    h.finalize().into()
}

/// First 16 hex characters of [`digest_parts`].
pub fn short_id(parts: &[&str]) -> String {
    hex::encode(&digest_parts(parts)[..8])
}

/// Little-endian u64 from the first eight digest bytes; used as an RNG seed.
pub fn seed_from_parts(parts: &[&str]) -> u64 {
    let d = digest_parts(parts);
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Hex SHA-256 of a byte buffer.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
