//! Counter-based random streams: one ChaCha stream per (seed, path id).

use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub type StreamRng = ChaCha8Rng;

/// Independent stream `stream` of the generator keyed by `seed`.
pub fn stream(seed: u64, stream: u64) -> StreamRng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Standard complex normal, `E|N|^2 = 1` (real and imaginary parts `N(0, 1/2)`).
#[inline]
pub fn complex_normal<R: rand::Rng + ?Sized>(rng: &mut R) -> C64 {
    let a: f64 = StandardNormal.sample(rng);
    let b: f64 = StandardNormal.sample(rng);
    C64::new(a, b) * std::f64::consts::FRAC_1_SQRT_2
}

/// Serializable position of a stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamPos {
    pub seed: u64,
    pub stream: u64,
    pub word_pos: u128,
}

impl StreamPos {
    pub fn of(seed: u64, rng: &StreamRng) -> Self {
        Self {
            seed,
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> StreamRng {
        let mut r = stream(self.seed, self.stream);
        r.set_word_pos(self.word_pos);
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn restore_continues_the_stream() {
        let mut a = stream(7, 3);
        for _ in 0..37 {
            complex_normal(&mut a);
        }
        let pos = StreamPos::of(7, &a);
        let mut b = pos.restore();
        for _ in 0..100 {
            assert_eq!(a.random::<u64>(), b.random::<u64>());
        }
    }

    #[test]
    fn streams_differ() {
        let mut a = stream(7, 0);
        let mut b = stream(7, 1);
        assert_ne!(a.random::<u64>(), b.random::<u64>());
    }
}
