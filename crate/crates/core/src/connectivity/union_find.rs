//! Union-find cluster engines.
//!
//! [`ClusterLabels`] labels the clusters of one color in a complete
//! configuration (Hoshen–Kopelman style, one pass over the canonical order).
//! [`crossing_threshold`] runs a Newman–Ziff sweep: sites enter in order of
//! their uniforms and the sweep reports the uniform at which the annulus is
//! first crossed, which decides the crossing event for every `p` at once.

use std::collections::BTreeSet;

use crate::configuration::{Color, PartialConfig};
use crate::lattice::{vertex_boundary, Ball, Site, NO_SITE};
use crate::rng::UniformField;

#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<u32>,
    size: Vec<u32>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n as u32).collect(),
            size: vec![1; n],
        }
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grandparent = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grandparent;
            x = grandparent;
        }
        x
    }

    /// Joins the two sets; returns false if they were already one.
    pub fn union(&mut self, a: u32, b: u32) -> bool {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return false;
        }
        if self.size[a as usize] < self.size[b as usize] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b as usize] = a;
        self.size[a as usize] += self.size[b as usize];
        true
    }

    pub fn same(&mut self, a: u32, b: u32) -> bool {
        self.find(a) == self.find(b)
    }
}

/// Cluster labels of the `color` sites of a configuration, optionally
/// restricted to a region.
#[derive(Debug, Clone)]
pub struct ClusterLabels {
    labels: Vec<Option<u32>>,
}

impl ClusterLabels {
    pub fn new(config: &PartialConfig, color: Color, within: Option<&BTreeSet<Site>>) -> Self {
        let ball = config.ball();
        let open: Vec<bool> = (0..ball.len())
            .map(|i| {
                config.state_at(i).has_color(color)
                    && within.is_none_or(|w| w.contains(&ball.site(i)))
            })
            .collect();
        let mut uf = UnionFind::new(ball.len());
        for i in 0..ball.len() {
            if !open[i] {
                continue;
            }
            // Each edge once: only link to neighbors earlier in canonical order.
            for &j in ball.neighbor_indices(i) {
                if j != NO_SITE && (j as usize) < i && open[j as usize] {
                    uf.union(i as u32, j);
                }
            }
        }
        let labels = (0..ball.len())
            .map(|i| open[i].then(|| uf.find(i as u32)))
            .collect();
        ClusterLabels { labels }
    }

    pub fn label(&self, index: usize) -> Option<u32> {
        self.labels[index]
    }

    /// `{S ↔ S'}` answered from labels, with the same conventions as
    /// [`super::connected`].
    pub fn connected(&self, ball: &Ball, from: &BTreeSet<Site>, to: &BTreeSet<Site>) -> bool {
        if !from.is_disjoint(to)
            || from
                .iter()
                .any(|s| s.neighbors().iter().any(|t| to.contains(t)))
        {
            return true;
        }
        let labels_of = |set: &BTreeSet<Site>| -> BTreeSet<u32> {
            vertex_boundary(set)
                .into_iter()
                .filter_map(|s| ball.index_of(s).and_then(|i| self.labels[i]))
                .collect()
        };
        !labels_of(from).is_disjoint(&labels_of(to))
    }
}

/// Newman–Ziff sweep over the annulus `Λ_m \ Λ_k` of `ball`.
///
/// Black sites are added in increasing `U_x` (white ones in decreasing
/// `U_x`); returns the uniform of the site whose addition first connects ring
/// `k + 1` to ring `m`. The black crossing holds at `p` iff `p >= threshold`,
/// the white crossing iff `p < threshold`. `None` when `k >= m` (the event is
/// certain).
pub fn crossing_threshold(
    ball: &Ball,
    field: &UniformField,
    k: u32,
    m: u32,
    color: Color,
) -> Option<f64> {
    if k >= m {
        return None;
    }
    assert!(m <= ball.radius());
    let mut order: Vec<(f64, u32)> = (0..ball.len())
        .filter(|&i| (k + 1..=m).contains(&ball.ring_of(i)))
        .map(|i| (field.uniform(ball.site(i)), i as u32))
        .collect();
    match color {
        Color::Black => order.sort_by(|a, b| a.0.total_cmp(&b.0)),
        Color::White => order.sort_by(|a, b| b.0.total_cmp(&a.0)),
    }
    let inner = ball.len() as u32;
    let outer = inner + 1;
    let mut uf = UnionFind::new(ball.len() + 2);
    let mut added = vec![false; ball.len()];
    for (u, i) in order {
        added[i as usize] = true;
        let ring = ball.ring_of(i as usize);
        if ring == k + 1 {
            uf.union(i, inner);
        }
        if ring == m {
            uf.union(i, outer);
        }
        for &j in ball.neighbor_indices(i as usize) {
            if j != NO_SITE && added[j as usize] {
                uf.union(i, j);
            }
        }
        if uf.same(inner, outer) {
            return Some(u);
        }
    }
    unreachable!("a fully open annulus is always crossed")
}

/// Crossing event of the annulus at probability `p`, from the sweep.
pub fn sweep_crossing(
    ball: &Ball,
    field: &UniformField,
    k: u32,
    m: u32,
    color: Color,
    p: f64,
) -> bool {
    match (crossing_threshold(ball, field, k, m, color), color) {
        (None, _) => true,
        (Some(t), Color::Black) => p >= t,
        (Some(t), Color::White) => p < t,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::configuration::full_random;
    use crate::connectivity;
    use crate::rng::Stream;
    use std::sync::Arc;

    #[test]
    fn union_find_basics() {
        let mut uf = UnionFind::new(5);
        assert!(uf.union(0, 1));
        assert!(uf.union(3, 4));
        assert!(!uf.union(1, 0));
        assert!(uf.same(0, 1) && !uf.same(1, 3));
        uf.union(1, 4);
        assert!(uf.same(0, 3));
    }

    #[test]
    fn labels_agree_with_bfs_on_large_ball() {
        let ball = Arc::new(Ball::new(64).unwrap());
        let mut rng = Stream::new(64).rng();
        let mut queries = 0;
        for rep in 0..100 {
            let c = full_random(Arc::clone(&ball), 0.5, &UniformField::new(12, rep)).unwrap();
            for color in [Color::Black, Color::White] {
                let labels = ClusterLabels::new(&c, color, None);
                for _ in 0..500 {
                    let a = ball.site(rng.below(ball.len() as u64) as usize);
                    // Nearby targets so that both outcomes occur often.
                    let d = rng.below(7) as i32 - 3;
                    let e = rng.below(7) as i32 - 3;
                    let b = Site::new(a.q + d, a.r + e);
                    let (s, t) = (BTreeSet::from([a]), BTreeSet::from([b]));
                    assert_eq!(
                        labels.connected(&ball, &s, &t),
                        connectivity::connected(&c, &s, &t, color, None)
                    );
                    queries += 1;
                }
            }
        }
        assert_eq!(queries, 100_000);
    }

    #[test]
    fn sweep_matches_direct_crossing() {
        let ball = Arc::new(Ball::new(8).unwrap());
        for rep in 0..200 {
            let f = UniformField::new(77, rep);
            for p in [0.3, 0.5, 0.7] {
                let c = full_random(Arc::clone(&ball), p, &f).unwrap();
                for (k, m) in [(0, 8), (1, 8), (3, 5)] {
                    for color in [Color::Black, Color::White] {
                        assert_eq!(
                            sweep_crossing(&ball, &f, k, m, color, p),
                            connectivity::annulus_crossing(&c, k, m, color)
                        );
                    }
                }
            }
        }
    }
}
