//! SHA-256 helpers for digests and seeds.

use sha2::{Digest, Sha256};

pub fn sha256_hex(data: &[u8]) -> String {
    Sha256::digest(data).iter().map(|b| format!("{b:02x}")).collect()
}

/// First eight digest bytes of `"<id>\0<trial>"`, big-endian.
pub fn trial_seed(problem_id: &str, trial: usize) -> u64 {
    let d = Sha256::digest(format!("{problem_id}\0{trial}").as_bytes());
    u64::from_be_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}
