//! Counter-keyed random substreams.
//!
//! Every random draw in a run comes from a ChaCha20 generator seeded by the
//! single root seed and positioned on a stream id packed from
//! `(purpose, iteration, member)`. Substreams are therefore independent of
//! the order (or the thread) in which they are consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

/// What a substream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Purpose {
    Prior = 1,
    Perturbation = 2,
    /// Free for callers (tests, synthetic problem generation).
    User = 3,
}

/// Root of all random streams of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamSeed(pub u64);

impl StreamSeed {
    /// Generator for `(purpose, iteration, member)`.
    ///
    /// Iteration is limited to 24 bits and member to 32 bits.
    pub fn substream(&self, purpose: Purpose, iteration: usize, member: usize) -> ChaCha20Rng {
        assert!(
            iteration < (1 << 24),
            "iteration index {iteration} too large"
        );
        assert!(
            member <= u32::MAX as usize,
            "member index {member} too large"
        );
        let stream = ((purpose as u64) << 56) | ((iteration as u64) << 32) | member as u64;
        let mut rng = ChaCha20Rng::seed_from_u64(self.0);
        rng.set_stream(stream);
        rng
    }

    /// `n` standard normal deviates from one substream.
    pub fn standard_normals(
        &self,
        purpose: Purpose,
        iteration: usize,
        member: usize,
        n: usize,
    ) -> Vec<f64> {
        let mut rng = self.substream(purpose, iteration, member);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }
}
