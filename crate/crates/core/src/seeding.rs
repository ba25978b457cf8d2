//! Deterministic seed derivation.
//!
//! Every stochastic component takes a seed derived from the global seed plus
//! a role path (e.g. `["train-vq", "theta"]`), so independent streams never
//! collide and runs reproduce bit-for-bit across platforms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a over the base seed and path parts. Stable by construction, unlike
/// the std hasher.
pub fn derive_seed(base: u64, parts: &[&str]) -> u64 {
    const PRIME: u64 = 0x100000001b3;
    let mut h: u64 = 0xcbf29ce484222325;
    for b in base.to_le_bytes() {
        h = (h ^ b as u64).wrapping_mul(PRIME);
    }
    for part in parts {
        for b in part.as_bytes() {
            h = (h ^ *b as u64).wrapping_mul(PRIME);
        }
        h = (h ^ 0x1f).wrapping_mul(PRIME);
    }
    h
}

pub fn rng_for(base: u64, parts: &[&str]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, parts))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distinct_paths_give_distinct_seeds() {
        let a = derive_seed(7, &["train", "alice"]);
        let b = derive_seed(7, &["train", "bob"]);
        let c = derive_seed(8, &["train", "alice"]);
        assert_ne!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn derivation_is_stable() {
        // frozen: a change here silently breaks reproducibility of every
        // seeded artifact downstream
        assert_eq!(derive_seed(42, &["train", "vq"]), 14806746081551221146);
    }
}
