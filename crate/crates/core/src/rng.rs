//! Counter-based random streams.
//!
//! Every random quantity in the crate is a pure function of a seed and a
//! path of integer tags, so replicas can be evaluated in any order, on any
//! number of threads, and still reproduce bit for bit.

use crate::lattice::Site;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 output finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Maps 64 random bits to a uniform on `(0, 1]` with 53-bit resolution.
#[inline]
pub fn unit_uniform(bits: u64) -> f64 {
    ((bits >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// A keyed stream: `bits(counter)` is a stateless hash of `(key, counter)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Stream {
    key: u64,
}

impl Stream {
    pub fn new(seed: u64) -> Self {
        Stream {
            key: mix64(seed ^ 0x5eed_1eaf_0000_0001),
        }
    }

    /// A child stream, independent of its parent and of its siblings.
    pub fn substream(&self, tag: u64) -> Self {
        Stream {
            key: mix64(self.key ^ mix64(tag ^ 0x7ab5_c0de_0000_0002)),
        }
    }

    #[inline]
    pub fn bits(&self, counter: u64) -> u64 {
        mix64(self.key ^ mix64(counter))
    }

    #[inline]
    pub fn uniform(&self, counter: u64) -> f64 {
        unit_uniform(self.bits(counter))
    }

    /// A sequential generator reading this stream from counter zero.
    pub fn rng(&self) -> CounterRng {
        CounterRng {
            stream: *self,
            counter: 0,
        }
    }
}

/// Sequential reader over a [`Stream`].
#[derive(Debug, Clone)]
pub struct CounterRng {
    stream: Stream,
    counter: u64,
}

impl CounterRng {
    pub fn next_u64(&mut self) -> u64 {
        let v = self.stream.bits(self.counter);
        self.counter += 1;
        v
    }

    pub fn uniform(&mut self) -> f64 {
        unit_uniform(self.next_u64())
    }

    /// Uniform integer in `0..bound` (bound > 0), by widening multiplication.
    pub fn below(&mut self, bound: u64) -> u64 {
        ((self.next_u64() as u128 * bound as u128) >> 64) as u64
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() <= p
    }
}

/// The i.i.d. uniforms `U_x` attached to lattice sites for one replica.
///
/// `U_x` depends only on `(seed, replica, x)`, never on evaluation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UniformField {
    pub seed: u64,
    pub replica: u64,
    stream: Stream,
}

impl UniformField {
    pub fn new(seed: u64, replica: u64) -> Self {
        UniformField {
            seed,
            replica,
            stream: Stream::new(seed).substream(replica),
        }
    }

    #[inline]
    pub fn uniform(&self, site: Site) -> f64 {
        self.stream.uniform(site.key())
    }

    /// Site color under Bernoulli(p): black iff `U_x <= p`.
    #[inline]
    pub fn is_black(&self, site: Site, p: f64) -> bool {
        self.uniform(site) <= p
    }
}
