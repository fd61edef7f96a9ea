//! Seeded random streams. Every replication derives independent ChaCha
//! streams from its seed so that changing one consumer (say the privacy
//! noise) leaves the draws of every other consumer untouched.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    DecisionSet = 0,
    Function = 1,
    Participants = 2,
    Noise = 3,
    Privacy = 4,
    Shuffler = 5,
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

/// The streams consumed while an algorithm runs.
#[derive(Debug, Clone)]
pub struct RunRngs {
    pub participants: ChaCha8Rng,
    pub noise: ChaCha8Rng,
    pub privacy: ChaCha8Rng,
    pub shuffler: ChaCha8Rng,
}

impl RunRngs {
    pub fn new(seed: u64) -> Self {
        RunRngs {
            participants: stream(seed, Stream::Participants),
            noise: stream(seed, Stream::Noise),
            privacy: stream(seed, Stream::Privacy),
            shuffler: stream(seed, Stream::Shuffler),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_differ_and_repeat() {
        let a: u64 = stream(7, Stream::Noise).gen();
        let b: u64 = stream(7, Stream::Privacy).gen();
        let c: u64 = stream(7, Stream::Noise).gen();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }
}
