//! Counter-addressed random streams.
//!
//! Every draw is a pure function of `(seed, domain, stream, position)`, so a
//! Monte Carlo run gives identical numbers no matter how paths are spread
//! over worker threads. Normals come from Box–Muller on a fixed budget of two
//! `u64` words per pair; that keeps positions addressable, which a rejection
//! sampler would not.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Independent families of streams drawn from the same master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Brownian = 1,
    InitialLaw = 2,
    Kernel = 3,
    Pairs = 4,
    Corpus = 5,
    Directions = 6,
}

/// A positioned random stream.
#[derive(Clone)]
pub struct Stream {
    rng: ChaCha8Rng,
}

fn mix(seed: u64, domain: Domain) -> u64 {
    // splitmix64 finaliser over the pair
    let mut z = seed ^ (domain as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Stream {
    pub fn new(seed: u64, domain: Domain, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, domain));
        rng.set_stream(stream);
        Stream { rng }
    }

    /// Jump to the given count of 32-bit words.
    pub fn seek_words(&mut self, word: u128) {
        self.rng.set_word_pos(word);
    }

    /// Uniform on the open interval (0, 1).
    pub fn uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// A pair of independent standard normals; consumes exactly four words.
    pub fn normal_pair(&mut self) -> (f64, f64) {
        let u1 = self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        (r * c, r * s)
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        let mut chunks = out.chunks_exact_mut(2);
        for pair in &mut chunks {
            let (a, b) = self.normal_pair();
            pair[0] = a;
            pair[1] = b;
        }
        if let [last] = chunks.into_remainder() {
            *last = self.normal_pair().0;
        }
    }

    pub fn normal(&mut self) -> f64 {
        self.normal_pair().0
    }

    /// Uniform direction on the unit sphere in `out.len()` dimensions.
    pub fn unit_vector(&mut self, out: &mut [f64]) {
        loop {
            self.fill_normal(out);
            let n = out.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-12 {
                out.iter_mut().for_each(|x| *x /= n);
                return;
            }
        }
    }
}

/// Words consumed by `count` normals drawn through `fill_normal`.
pub fn words_for_normals(count: usize) -> u128 {
    (count.div_ceil(2) * 4) as u128
}

/// Halton low-discrepancy point in `[0,1)^dim`.
pub fn halton(index: usize, dim: usize) -> Vec<f64> {
    const PRIMES: [usize; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    assert!(dim <= PRIMES.len(), "halton dimension too large");
    PRIMES[..dim]
        .iter()
        .map(|&b| {
            let mut f = 1.0;
            let mut r = 0.0;
            let mut i = index + 1;
            while i > 0 {
                f /= b as f64;
                r += f * (i % b) as f64;
                i /= b;
            }
            r
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn positions_are_addressable() {
        let mut a = Stream::new(7, Domain::Brownian, 3);
        let mut seq = vec![0.0; 6];
        a.fill_normal(&mut seq);
        let mut b = Stream::new(7, Domain::Brownian, 3);
        b.seek_words(words_for_normals(2) * 2);
        let mut tail = vec![0.0; 2];
        b.fill_normal(&mut tail);
        assert_eq!(&seq[4..], &tail[..]);
    }

    #[test]
    fn streams_and_domains_differ() {
        let x = Stream::new(1, Domain::Brownian, 0).normal();
        let y = Stream::new(1, Domain::Brownian, 1).normal();
        let z = Stream::new(1, Domain::Kernel, 0).normal();
        assert!(x != y && x != z);
    }

    #[test]
    fn normal_moments() {
        let mut s = Stream::new(11, Domain::Corpus, 0);
        let n = 200_000;
        let (mut m1, mut m2) = (0.0, 0.0);
        for _ in 0..n {
            let x = s.normal();
            m1 += x;
            m2 += x * x;
        }
        m1 /= n as f64;
        m2 /= n as f64;
        assert!(m1.abs() < 0.01);
        assert!((m2 - 1.0).abs() < 0.02);
    }

    #[test]
    fn halton_first_points() {
        assert_eq!(halton(0, 2), vec![0.5, 1.0 / 3.0]);
        assert_eq!(halton(1, 1), vec![0.25]);
    }
}
