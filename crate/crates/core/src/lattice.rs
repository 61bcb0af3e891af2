//! Triangular-lattice geometry.
//!
//! Sites use axial coordinates `(q, r)` embedded in the plane at
//! `q·(1, 0) + r·(1/2, √3/2)`, so every pair of neighbors sits at Euclidean
//! distance one. Each site is the center of a hexagon of the dual honeycomb;
//! coloring sites is the same as coloring hexagons.
//!
//! All tie-breaking in the crate goes through one canonical total order on
//! sites: lexicographic by `(r, q)`. [`Ball`] indexes its sites in that order.

use std::cmp::Ordering;
use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::LatticeError;

/// Largest radius accepted by [`Ball::new`].
pub const MAX_BALL_RADIUS: u32 = 100_000;

/// Sentinel in neighbor tables for a neighbor outside the ball.
pub const NO_SITE: u32 = u32::MAX;

/// Axial offsets of the six neighbors, in canonical neighbor order.
pub const NEIGHBOR_OFFSETS: [(i32, i32); 6] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, -1), (-1, 1)];

/// A vertex of the triangular lattice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Site {
    pub q: i32,
    pub r: i32,
}

impl Site {
    pub const ORIGIN: Site = Site { q: 0, r: 0 };

    pub const fn new(q: i32, r: i32) -> Self {
        Site { q, r }
    }

    pub fn neighbors(self) -> [Site; 6] {
        NEIGHBOR_OFFSETS.map(|(dq, dr)| Site::new(self.q + dq, self.r + dr))
    }

    pub fn is_adjacent(self, other: Site) -> bool {
        self.distance(other) == 1
    }

    /// Graph distance to the origin.
    pub fn norm(self) -> u32 {
        let (q, r) = (self.q as i64, self.r as i64);
        ((q.abs() + r.abs() + (q + r).abs()) / 2) as u32
    }

    /// Graph distance between two sites.
    pub fn distance(self, other: Site) -> u32 {
        Site::new(self.q - other.q, self.r - other.r).norm()
    }

    /// Planar position under the axial embedding.
    pub fn position(self) -> (f64, f64) {
        let (q, r) = (self.q as f64, self.r as f64);
        (q + 0.5 * r, r * 3f64.sqrt() / 2.0)
    }

    /// Rotation by 60 degrees counterclockwise about the origin.
    pub fn rotate60(self) -> Site {
        Site::new(-self.r, self.q + self.r)
    }

    /// Ball-independent 64-bit key used to derive per-site random streams.
    pub fn key(self) -> u64 {
        fn zigzag(v: i32) -> u64 {
            ((v << 1) ^ (v >> 31)) as u32 as u64
        }
        (zigzag(self.q) << 32) | zigzag(self.r)
    }
}

impl Ord for Site {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.r, self.q).cmp(&(other.r, other.q))
    }
}

impl PartialOrd for Site {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl std::fmt::Display for Site {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})", self.q, self.r)
    }
}

/// The graph-distance ball `Λₙ` around the origin, with its sites indexed in
/// canonical order and a precomputed neighbor table.
#[derive(Debug, Clone)]
pub struct Ball {
    radius: u32,
    sites: Vec<Site>,
    boundary: Vec<Site>,
    row_offsets: Vec<usize>,
    neighbors: Vec<[u32; 6]>,
}

impl Ball {
    pub fn new(radius: u32) -> Result<Self, LatticeError> {
        if radius > MAX_BALL_RADIUS {
            return Err(LatticeError::CapacityExceeded {
                radius,
                max: MAX_BALL_RADIUS,
            });
        }
        let n = radius as i32;
        let mut sites = Vec::with_capacity(ball_size(radius));
        let mut row_offsets = Vec::with_capacity(2 * radius as usize + 1);
        for r in -n..=n {
            row_offsets.push(sites.len());
            let (lo, hi) = row_bounds(n, r);
            sites.extend((lo..=hi).map(|q| Site::new(q, r)));
        }
        let boundary = ring_sites(radius + 1);
        let mut ball = Ball {
            radius,
            sites,
            boundary,
            row_offsets,
            neighbors: Vec::new(),
        };
        ball.neighbors = ball
            .sites
            .iter()
            .map(|s| {
                s.neighbors()
                    .map(|t| ball.index_of(t).map_or(NO_SITE, |i| i as u32))
            })
            .collect();
        Ok(ball)
    }

    pub fn radius(&self) -> u32 {
        self.radius
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    /// All sites in canonical order.
    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    /// Sites at distance exactly `radius + 1`, i.e. `∂Λₙ`, in canonical order.
    pub fn boundary(&self) -> &[Site] {
        &self.boundary
    }

    pub fn site(&self, index: usize) -> Site {
        self.sites[index]
    }

    pub fn contains(&self, site: Site) -> bool {
        site.norm() <= self.radius
    }

    pub fn index_of(&self, site: Site) -> Option<usize> {
        if !self.contains(site) {
            return None;
        }
        let n = self.radius as i32;
        let (lo, _) = row_bounds(n, site.r);
        Some(self.row_offsets[(site.r + n) as usize] + (site.q - lo) as usize)
    }

    /// Neighbor indices of a site, [`NO_SITE`] where the neighbor lies outside.
    pub fn neighbor_indices(&self, index: usize) -> &[u32; 6] {
        &self.neighbors[index]
    }

    /// Graph distance to the origin of the site at `index`.
    pub fn ring_of(&self, index: usize) -> u32 {
        self.sites[index].norm()
    }

    /// Indices of the sites at distance exactly `j`, in canonical order.
    pub fn ring_indices(&self, j: u32) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.ring_of(i) == j).collect()
    }

    pub fn site_set(&self) -> BTreeSet<Site> {
        self.sites.iter().copied().collect()
    }
}

fn row_bounds(n: i32, r: i32) -> (i32, i32) {
    ((-n).max(-n - r), n.min(n - r))
}

/// `|Λₙ| = 3n(n+1) + 1`.
pub fn ball_size(radius: u32) -> usize {
    let n = radius as usize;
    3 * n * (n + 1) + 1
}

/// Sites at distance exactly `j` from the origin, in canonical order.
pub fn ring_sites(j: u32) -> Vec<Site> {
    let n = j as i32;
    let mut out = Vec::new();
    for r in -n..=n {
        let (lo, hi) = row_bounds(n, r);
        for q in lo..=hi {
            let s = Site::new(q, r);
            if s.norm() == j {
                out.push(s);
            }
        }
    }
    out
}

/// Sites at distance exactly one from `set` (the outer vertex boundary `∂S`).
pub fn vertex_boundary(set: &BTreeSet<Site>) -> BTreeSet<Site> {
    set.iter()
        .flat_map(|s| s.neighbors())
        .filter(|t| !set.contains(t))
        .collect()
}

/// A separating site set together with its bounded complementary component.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Circuit {
    pub sites: BTreeSet<Site>,
    pub interior: BTreeSet<Site>,
    pub window_radius: u32,
}

impl Circuit {
    /// True for sites in the unbounded complementary component.
    pub fn is_exterior(&self, site: Site) -> bool {
        !self.sites.contains(&site) && !self.interior.contains(&site)
    }
}

/// Checks that removing `gamma` splits the lattice into exactly two
/// components, and returns the bounded one as the interior.
///
/// The complement is flood-filled inside `Ball(window_radius)`; everything
/// outside the window is a single outer region, merged with every component
/// that reaches the window's last ring.
pub fn verify_circuit(gamma: &BTreeSet<Site>, window_radius: u32) -> Result<Circuit, LatticeError> {
    let reach = gamma.iter().map(|s| s.norm()).max().unwrap_or(0);
    if window_radius < reach + 2 {
        return Err(LatticeError::WindowTooSmall {
            window_radius,
            required: reach + 2,
        });
    }
    let window = Ball::new(window_radius)?;
    let blocked: Vec<bool> = window.sites().iter().map(|s| gamma.contains(s)).collect();
    let mut label = vec![usize::MAX; window.len()];
    let mut bounded: Vec<Vec<usize>> = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..window.len() {
        if blocked[start] || label[start] != usize::MAX {
            continue;
        }
        let id = bounded.len();
        let mut members = Vec::new();
        let mut touches_edge = false;
        label[start] = id;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            members.push(i);
            for &j in window.neighbor_indices(i) {
                if j == NO_SITE {
                    touches_edge = true;
                    continue;
                }
                let j = j as usize;
                if !blocked[j] && label[j] == usize::MAX {
                    label[j] = id;
                    queue.push_back(j);
                }
            }
        }
        // Outer components are dropped; keep the slot so ids stay dense.
        bounded.push(if touches_edge { Vec::new() } else { members });
    }
    let interiors: Vec<&Vec<usize>> = bounded.iter().filter(|c| !c.is_empty()).collect();
    if interiors.len() != 1 {
        return Err(LatticeError::NotACircuit {
            components: interiors.len() + 1,
        });
    }
    Ok(Circuit {
        sites: gamma.clone(),
        interior: interiors[0].iter().map(|&i| window.site(i)).collect(),
        window_radius,
    })
}

/// True iff `region` lies inside the circuit's interior.
pub fn circles_around(circuit: &Circuit, region: &BTreeSet<Site>) -> bool {
    region.is_subset(&circuit.interior)
}
