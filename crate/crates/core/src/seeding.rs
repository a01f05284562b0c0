//! Deterministic seed derivation.
//!
//! A derived seed is the first eight bytes (little-endian) of the SHA-256
//! digest of the parts joined with `|`, so every random stream in an
//! experiment is a pure function of the experiment seed and a label.

use sha2::{Digest, Sha256};

/// Environment variable that overrides the global experiment seed.
pub const SEED_ENV: &str = "SPOTTUNET_SEED";

pub fn derive_seed(base: u64, parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_string().as_bytes());
    for p in parts {
        h.update(b"|");
        h.update(p.as_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Seed for one run cell of an experiment.
pub fn run_seed(experiment_seed: u64, pair: &str, strategy: &str, scarcity: &str, repeat: u64) -> u64 {
    derive_seed(experiment_seed, &[pair, strategy, scarcity, &repeat.to_string()])
}

/// The seed from [`SEED_ENV`] when set, else `default`.
pub fn seed_from_env(default: u64) -> crate::error::Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| crate::error::Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(default),
    }
}
