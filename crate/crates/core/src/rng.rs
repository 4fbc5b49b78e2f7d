//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! whose 256-bit seed is a SHA-256 of a domain tag, a 64-bit seed, and an
//! optional key, so streams for different purposes never collide.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn derive_seed(domain: &str, seed: u64, key: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update((domain.len() as u64).to_le_bytes());
    h.update(domain.as_bytes());
    h.update(seed.to_le_bytes());
    h.update(key.as_bytes());
    h.finalize().into()
}

pub fn derive_u64(domain: &str, seed: u64, key: &str) -> u64 {
    let bytes = derive_seed(domain, seed, key);
    u64::from_le_bytes(bytes[..8].try_into().expect("32-byte digest"))
}

pub fn stream(domain: &str, seed: u64, key: &str) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(derive_seed(domain, seed, key))
}
