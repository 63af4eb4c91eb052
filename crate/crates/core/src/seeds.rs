use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named random sub-streams derived from one run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Trajectory = 1,
    Tuning = 2,
    NeuralNoise = 3,
    Decoder = 4,
    OracleNoise = 5,
    Analysis = 6,
}

pub fn rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream as u64);
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_independent_and_repeatable() {
        let a: u64 = rng(42, Stream::Trajectory).gen();
        let b: u64 = rng(42, Stream::NeuralNoise).gen();
        assert_ne!(a, b);
        assert_eq!(a, rng(42, Stream::Trajectory).gen::<u64>());
    }
}
