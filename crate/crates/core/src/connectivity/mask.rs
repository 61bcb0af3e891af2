//! Balls of at most 64 sites as bitmasks.
//!
//! Bit `i` is the site with canonical index `i` in the ball. A configuration
//! is a pair of masks: `revealed` and `black` (with `black ⊆ revealed` for
//! partial configurations, or `revealed = full` for complete ones).

use std::sync::Arc;

use crate::configuration::{PartialConfig, State};
use crate::error::LatticeError;
use crate::lattice::{Ball, Site, NO_SITE};

/// Largest ball that fits in a `u64` mask (`|Λ₄| = 61`).
pub const MAX_MASK_RADIUS: u32 = 4;

#[derive(Debug, Clone)]
pub struct MaskBall {
    ball: Arc<Ball>,
    neighbors: Vec<u64>,
    rings: Vec<u64>,
    full: u64,
}

impl MaskBall {
    pub fn new(radius: u32) -> Result<Self, LatticeError> {
        if radius > MAX_MASK_RADIUS {
            return Err(LatticeError::CapacityExceeded {
                radius,
                max: MAX_MASK_RADIUS,
            });
        }
        Ok(Self::from_ball(Arc::new(Ball::new(radius)?)))
    }

    pub fn from_ball(ball: Arc<Ball>) -> Self {
        assert!(ball.len() <= 64, "ball too large for a u64 mask");
        let neighbors = (0..ball.len())
            .map(|i| {
                ball.neighbor_indices(i)
                    .iter()
                    .filter(|&&j| j != NO_SITE)
                    .fold(0u64, |acc, &j| acc | 1 << j)
            })
            .collect();
        let mut rings = vec![0u64; ball.radius() as usize + 1];
        for i in 0..ball.len() {
            rings[ball.ring_of(i) as usize] |= 1 << i;
        }
        let full = if ball.len() == 64 {
            u64::MAX
        } else {
            (1u64 << ball.len()) - 1
        };
        MaskBall {
            ball,
            neighbors,
            rings,
            full,
        }
    }

    pub fn ball(&self) -> &Arc<Ball> {
        &self.ball
    }

    pub fn radius(&self) -> u32 {
        self.ball.radius()
    }

    pub fn len(&self) -> usize {
        self.ball.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ball.is_empty()
    }

    pub fn full(&self) -> u64 {
        self.full
    }

    pub fn ring(&self, j: u32) -> u64 {
        self.rings.get(j as usize).copied().unwrap_or(0)
    }

    /// Sites at distance at most `j`.
    pub fn disc(&self, j: u32) -> u64 {
        self.rings.iter().take(j as usize + 1).fold(0, |a, r| a | r)
    }

    pub fn origin_bit(&self) -> u64 {
        1 << self
            .ball
            .index_of(Site::ORIGIN)
            .expect("origin is in every ball")
    }

    pub fn bit(&self, site: Site) -> Option<u64> {
        self.ball.index_of(site).map(|i| 1u64 << i)
    }

    /// Union of the neighbor masks of every site in `set`.
    #[inline]
    pub fn neighborhood(&self, mut set: u64) -> u64 {
        let mut out = 0;
        while set != 0 {
            let i = set.trailing_zeros() as usize;
            out |= self.neighbors[i];
            set &= set - 1;
        }
        out
    }

    /// The connected component (inside `allowed`) of the `seeds ∩ allowed`.
    #[inline]
    pub fn flood(&self, seeds: u64, allowed: u64) -> u64 {
        let mut reached = seeds & allowed;
        let mut frontier = reached;
        while frontier != 0 {
            let next = self.neighborhood(frontier) & allowed & !reached;
            reached |= next;
            frontier = next;
        }
        reached
    }

    /// Whether `open` sites connect ring `a` to ring `b` inside rings `a..=b`.
    #[inline]
    pub fn ring_crossing(&self, open: u64, a: u32, b: u32) -> bool {
        let band = self.rings[a as usize..=b as usize]
            .iter()
            .fold(0, |x, r| x | r);
        let allowed = open & band;
        let target = self.rings[b as usize];
        let mut reached = allowed & self.rings[a as usize];
        let mut frontier = reached;
        while frontier != 0 {
            if reached & target != 0 {
                return true;
            }
            let next = self.neighborhood(frontier) & allowed & !reached;
            reached |= next;
            frontier = next;
        }
        reached & target != 0
    }

    /// `{0 ↔ ∂Λₙ}` for the black set `black`.
    #[inline]
    pub fn one_arm(&self, black: u64, n: u32) -> bool {
        n == 0 || self.ring_crossing(black, 1, n)
    }

    /// `{Λ_k ↔* ∂Λ_m}` for the white set `white`.
    #[inline]
    pub fn dual_arm(&self, white: u64, k: u32, m: u32) -> bool {
        k >= m || self.ring_crossing(white, k + 1, m)
    }

    /// Unrevealed sites joined to `∂Λ_m` through revealed-white sites.
    pub fn white_reachable(&self, revealed: u64, black: u64, m: u32) -> u64 {
        let disc = self.disc(m);
        let white = revealed & !black & disc;
        let cluster = self.flood(self.ring(m), white);
        let unrevealed = !revealed & disc;
        (self.ring(m) | self.neighborhood(cluster)) & unrevealed
    }

    /// `(revealed, black)` masks of a configuration on this ball, or on a
    /// smaller ball embedded in it.
    pub fn masks_of(&self, config: &PartialConfig) -> (u64, u64) {
        let (mut revealed, mut black) = (0u64, 0u64);
        let same =
            Arc::ptr_eq(config.ball(), &self.ball) || config.ball().radius() == self.radius();
        for (i, st) in config.states().iter().enumerate() {
            if *st == State::Unrevealed {
                continue;
            }
            let j = if same {
                i
            } else {
                self.ball
                    .index_of(config.ball().site(i))
                    .expect("configuration does not fit in the mask ball")
            };
            revealed |= 1 << j;
            if *st == State::Black {
                black |= 1 << j;
            }
        }
        (revealed, black)
    }

    pub fn config_from_masks(&self, revealed: u64, black: u64) -> PartialConfig {
        let states = (0..self.len())
            .map(|i| match (revealed >> i & 1, black >> i & 1) {
                (0, _) => State::Unrevealed,
                (_, 1) => State::Black,
                _ => State::White,
            })
            .collect();
        PartialConfig::from_states(Arc::clone(&self.ball), states).expect("lengths match")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::configuration::Color;
    use crate::connectivity;
    use crate::rng::Stream;

    #[test]
    fn rejects_large_radius() {
        assert!(MaskBall::new(5).is_err());
        assert_eq!(MaskBall::new(4).unwrap().len(), 61);
    }

    #[test]
    fn agrees_with_reference_engine() {
        let mut rng = Stream::new(17).rng();
        for n in 1..=4 {
            let mb = MaskBall::new(n).unwrap();
            for _ in 0..2_000 {
                let bits = rng.next_u64();
                let revealed = (bits | rng.next_u64()) & mb.full();
                let black = bits & revealed;
                let c = mb.config_from_masks(revealed, black);
                assert_eq!(mb.masks_of(&c), (revealed, black));
                assert_eq!(mb.one_arm(black, n), connectivity::one_arm(&c, n));
                for k in 0..=n {
                    let white = revealed & !black;
                    assert_eq!(mb.dual_arm(white, k, n), connectivity::dual_arm(&c, k, n));
                    assert_eq!(
                        mb.ring_crossing(black, k.min(n), n),
                        connectivity::ring_crossing(&c, k.min(n), n, Color::Black)
                    );
                }
                let e = connectivity::white_reachable_indices(&c, n);
                let e_mask = e.iter().fold(0u64, |a, &i| a | 1 << i);
                assert_eq!(mb.white_reachable(revealed, black, n), e_mask);
            }
        }
    }

    #[test]
    fn embedding_a_smaller_ball() {
        let big = MaskBall::new(3).unwrap();
        let small = MaskBall::new(1).unwrap();
        let c = small.config_from_masks(small.full(), 0b101_0101);
        let (rev, blk) = big.masks_of(&c);
        assert_eq!(rev.count_ones(), 7);
        assert_eq!(blk.count_ones(), 4);
        assert_eq!(rev & !big.disc(1), 0);
    }
}
