//! Keyed random streams.
//!
//! Every draw in a simulation is addressed by `(master seed, purpose, round,
//! agent, target)`. Each address maps to its own ChaCha stream, so the values
//! an agent sees never depend on how many draws other agents made or on the
//! order in which a thread pool scheduled them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. Part of the stream key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Topology = 1,
    Init = 2,
    Batch = 3,
    Noise = 4,
    Attack = 5,
    Partition = 6,
    Contraction = 7,
    Dataset = 8,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream for the address `(seed, purpose, round, agent, target)`.
pub fn stream(seed: u64, purpose: Purpose, round: u64, agent: u64, target: u64) -> ChaCha8Rng {
    let mut state = seed;
    for word in [purpose as u64, round, agent, target] {
        state = splitmix64(&mut state) ^ word;
    }
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn first(seed: u64, p: Purpose, k: u64, a: u64, t: u64) -> u64 {
        stream(seed, p, k, a, t).random()
    }

    #[test]
    fn same_address_same_stream() {
        assert_eq!(first(7, Purpose::Noise, 3, 1, 0), first(7, Purpose::Noise, 3, 1, 0));
    }

    #[test]
    fn every_key_component_matters() {
        let base = first(7, Purpose::Noise, 3, 1, 0);
        assert_ne!(base, first(8, Purpose::Noise, 3, 1, 0));
        assert_ne!(base, first(7, Purpose::Batch, 3, 1, 0));
        assert_ne!(base, first(7, Purpose::Noise, 4, 1, 0));
        assert_ne!(base, first(7, Purpose::Noise, 3, 2, 0));
        assert_ne!(base, first(7, Purpose::Noise, 3, 1, 1));
    }

    #[test]
    fn swapped_components_differ() {
        assert_ne!(first(1, Purpose::Attack, 0, 2, 5), first(1, Purpose::Attack, 0, 5, 2));
    }
}
