//! Seedable random streams keyed by `(phase, step, particle)`.
//!
//! A stream is a ChaCha20 generator whose key encodes the run seed, the
//! algorithm phase and the step index; the particle index selects the ChaCha
//! stream. Two streams with the same seed and id produce the same draws, so
//! the order in which particles are processed never changes a result.

use nalgebra::DVector;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

/// Which part of an algorithm a stream feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Init,
    Propagate,
    Observe,
    Perturb,
    Resample,
    Proposal,
    Mutate,
    Simulate,
    Panel,
    Dictionary,
    Custom(u32),
}

impl Phase {
    fn code(self) -> u64 {
        match self {
            Phase::Init => 1,
            Phase::Propagate => 2,
            Phase::Observe => 3,
            Phase::Perturb => 4,
            Phase::Resample => 5,
            Phase::Proposal => 6,
            Phase::Mutate => 7,
            Phase::Simulate => 8,
            Phase::Panel => 9,
            Phase::Dictionary => 10,
            Phase::Custom(c) => 0x1_0000_0000 | u64::from(c),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamId {
    pub phase: Phase,
    pub step: u64,
    pub particle: u64,
}

/// A deterministic random stream.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    id: StreamId,
    inner: ChaCha20Rng,
}

impl RngStream {
    pub fn new(seed: u64, id: StreamId) -> Self {
        let mut key = [0u8; 32];
        key[0..8].copy_from_slice(&seed.to_le_bytes());
        key[8..16].copy_from_slice(&id.phase.code().to_le_bytes());
        key[16..24].copy_from_slice(&id.step.to_le_bytes());
        key[24..32].copy_from_slice(b"assimrng");
        let mut inner = ChaCha20Rng::from_seed(key);
        inner.set_stream(id.particle);
        Self { seed, id, inner }
    }

    pub fn with(seed: u64, phase: Phase, step: u64, particle: u64) -> Self {
        Self::new(
            seed,
            StreamId {
                phase,
                step,
                particle,
            },
        )
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn id(&self) -> StreamId {
        self.id
    }

    /// A sibling stream sharing this stream's seed.
    pub fn fork(&self, phase: Phase, step: u64, particle: u64) -> Self {
        Self::with(self.seed, phase, step, particle)
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn standard_normal_vec(&mut self, d: usize) -> DVector<f64> {
        DVector::from_fn(d, |_, _| self.standard_normal())
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Factory for the substreams of one seeded run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Streams {
    seed: u64,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, phase: Phase, step: u64, particle: u64) -> RngStream {
        RngStream::with(self.seed, phase, step, particle)
    }

    /// Streams for a nested component, offset so they never alias the parent.
    pub fn child(&self, tag: u64) -> Streams {
        let mixed = self
            .seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .rotate_left(17)
            ^ tag.wrapping_add(0xD1B5_4A32_D192_ED03);
        Streams { seed: mixed }
    }
}
