//! Annulus crossings by on-demand cluster growth.
//!
//! Colors are read from a [`UniformField`] only for sites the search touches,
//! so a crossing query on `Λ₅₁₂` costs the size of the explored cluster
//! rather than the size of the ball. Results coincide with every other
//! engine on the same field.

use std::sync::Arc;

use crate::configuration::Color;
use crate::lattice::{Ball, NO_SITE};
use crate::rng::UniformField;

/// Reusable scratch space for repeated crossing queries on one ball.
#[derive(Debug, Clone)]
pub struct LazyCrossing {
    ball: Arc<Ball>,
    rings: Vec<u32>,
    ring_members: Vec<Vec<u32>>,
    stamp: Vec<u32>,
    generation: u32,
    stack: Vec<u32>,
}

impl LazyCrossing {
    pub fn new(ball: Arc<Ball>) -> Self {
        let rings: Vec<u32> = (0..ball.len()).map(|i| ball.ring_of(i)).collect();
        let mut ring_members = vec![Vec::new(); ball.radius() as usize + 1];
        for (i, &j) in rings.iter().enumerate() {
            ring_members[j as usize].push(i as u32);
        }
        let stamp = vec![0; ball.len()];
        LazyCrossing {
            ball,
            rings,
            ring_members,
            stamp,
            generation: 0,
            stack: Vec::new(),
        }
    }

    pub fn ball(&self) -> &Arc<Ball> {
        &self.ball
    }

    fn next_generation(&mut self) -> u32 {
        self.generation = self.generation.wrapping_add(1);
        if self.generation == 0 {
            self.stamp.fill(0);
            self.generation = 1;
        }
        self.generation
    }

    /// Whether `color` sites cross the annulus `Λ_m \ Λ_k` under `field` at
    /// probability `p`. Returns the number of sites whose color was read.
    pub fn crossing(
        &mut self,
        field: &UniformField,
        p: f64,
        k: u32,
        m: u32,
        color: Color,
    ) -> (bool, usize) {
        if k >= m {
            return (true, 0);
        }
        assert!(m <= self.ball.radius());
        let gen = self.next_generation();
        let want_black = color == Color::Black;
        let mut touched = 0usize;
        self.stack.clear();
        let inner = k + 1;
        // Seed with the open sites of the inner ring.
        for idx in 0..self.ring_members[inner as usize].len() {
            let i = self.ring_members[inner as usize][idx] as usize;
            self.stamp[i] = gen;
            touched += 1;
            if field.is_black(self.ball.site(i), p) == want_black {
                if inner == m {
                    return (true, touched);
                }
                self.stack.push(i as u32);
            }
        }
        while let Some(i) = self.stack.pop() {
            for &j in self.ball.neighbor_indices(i as usize) {
                if j == NO_SITE {
                    continue;
                }
                let ju = j as usize;
                let ring = self.rings[ju];
                if self.stamp[ju] == gen || ring < inner || ring > m {
                    continue;
                }
                self.stamp[ju] = gen;
                touched += 1;
                if field.is_black(self.ball.site(ju), p) == want_black {
                    if ring == m {
                        return (true, touched);
                    }
                    self.stack.push(j);
                }
            }
        }
        (false, touched)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::configuration::full_random;
    use crate::connectivity;

    #[test]
    fn agrees_with_full_configuration() {
        let ball = Arc::new(Ball::new(16).unwrap());
        let mut lazy = LazyCrossing::new(Arc::clone(&ball));
        for rep in 0..500 {
            let f = UniformField::new(4, rep);
            let c = full_random(Arc::clone(&ball), 0.5, &f).unwrap();
            for (k, m) in [(0, 1), (1, 2), (1, 16), (4, 9), (15, 16), (3, 3)] {
                for color in [Color::Black, Color::White] {
                    let (hit, _) = lazy.crossing(&f, 0.5, k, m, color);
                    assert_eq!(hit, connectivity::annulus_crossing(&c, k, m, color));
                }
            }
        }
    }

    #[test]
    fn deterministic_extremes() {
        let ball = Arc::new(Ball::new(10).unwrap());
        let mut lazy = LazyCrossing::new(ball);
        let f = UniformField::new(0, 0);
        assert!(!lazy.crossing(&f, 1.0, 1, 10, Color::White).0);
        assert!(lazy.crossing(&f, 1.0, 1, 10, Color::Black).0);
        assert!(lazy.crossing(&f, 0.0, 1, 10, Color::White).0);
    }
}
