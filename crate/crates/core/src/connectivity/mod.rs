//! Connection events on partial configurations.
//!
//! Conventions: a path "from S to S'" starts at a site of `∂S` and ends at a
//! site of `∂S'`, every site of the path carrying the requested color. Sites
//! of `∂Λₙ` lie outside `Λₙ` and are never colored, so a path to `∂Λₙ` inside
//! `Λₙ` ends on ring `n`. Unrevealed sites are traversable for neither color.
//! The event is certain when `S` and `S'` intersect or are adjacent.
//!
//! This module is the reference engine. [`mask`] (small balls as 64-bit
//! masks), [`union_find`] (cluster labels and sweeps) and [`lazy`] (on-demand
//! cluster growth) answer the same questions faster and are checked against
//! it.

pub mod lazy;
pub mod mask;
pub mod union_find;

use std::collections::{BTreeSet, VecDeque};

use crate::configuration::{Color, PartialConfig, State};
use crate::lattice::{vertex_boundary, Site, NO_SITE};

/// `{S ↔ S'}` for `color`, optionally constrained to stay within `within`.
pub fn connected(
    config: &PartialConfig,
    from: &BTreeSet<Site>,
    to: &BTreeSet<Site>,
    color: Color,
    within: Option<&BTreeSet<Site>>,
) -> bool {
    if !from.is_disjoint(to)
        || from
            .iter()
            .any(|s| s.neighbors().iter().any(|t| to.contains(t)))
    {
        return true;
    }
    let allowed = |s: &Site| {
        config.get(*s).is_some_and(|st| st.has_color(color)) && within.is_none_or(|w| w.contains(s))
    };
    let targets = vertex_boundary(to);
    let mut seen: BTreeSet<Site> = vertex_boundary(from).into_iter().filter(allowed).collect();
    let mut queue: VecDeque<Site> = seen.iter().copied().collect();
    while let Some(s) = queue.pop_front() {
        if targets.contains(&s) {
            return true;
        }
        for t in s.neighbors() {
            if !seen.contains(&t) && allowed(&t) {
                seen.insert(t);
                queue.push_back(t);
            }
        }
    }
    false
}

/// Whether `color` sites connect ring `from_ring` to ring `to_ring` through
/// rings `from_ring..=to_ring` of the configuration's ball.
pub fn ring_crossing(config: &PartialConfig, from_ring: u32, to_ring: u32, color: Color) -> bool {
    let ball = config.ball();
    debug_assert!(from_ring <= to_ring && to_ring <= ball.radius());
    let ok = |i: usize| {
        let j = ball.ring_of(i);
        j >= from_ring && j <= to_ring && config.state_at(i).has_color(color)
    };
    let mut seen = vec![false; ball.len()];
    let mut stack: Vec<usize> = Vec::new();
    for i in ball.ring_indices(from_ring) {
        if ok(i) {
            seen[i] = true;
            stack.push(i);
        }
    }
    while let Some(i) = stack.pop() {
        if ball.ring_of(i) == to_ring {
            return true;
        }
        for &j in ball.neighbor_indices(i) {
            if j != NO_SITE && !seen[j as usize] && ok(j as usize) {
                seen[j as usize] = true;
                stack.push(j as usize);
            }
        }
    }
    false
}

/// The one-arm event `{0 ↔ ∂Λₙ}` inside `Λₙ`. The origin's own color never
/// matters: paths start on ring 1.
pub fn one_arm(config: &PartialConfig, n: u32) -> bool {
    n == 0 || ring_crossing(config, 1, n, Color::Black)
}

/// The dual one-arm event `{Λ_k ↔* ∂Λ_m}` inside `Λ_m \ Λ_k`.
pub fn dual_arm(config: &PartialConfig, k: u32, m: u32) -> bool {
    k >= m || ring_crossing(config, k + 1, m, Color::White)
}

/// Crossing of the annulus `Λ_m \ Λ_k` by `color`, i.e. `{Λ_k ↔ ∂Λ_m}` or its
/// dual.
pub fn annulus_crossing(config: &PartialConfig, k: u32, m: u32, color: Color) -> bool {
    k >= m || ring_crossing(config, k + 1, m, color)
}

/// Indices of unrevealed sites of `Λ_m` joined to `∂Λ_m` by a revealed-white
/// path: ring-`m` sites always qualify, as does any unrevealed neighbor of a
/// revealed-white cluster that contains a ring-`m` site.
pub fn white_reachable_indices(config: &PartialConfig, m: u32) -> Vec<usize> {
    let ball = config.ball();
    let mut reachable = vec![false; ball.len()];
    let mut in_cluster = vec![false; ball.len()];
    let mut stack = Vec::new();
    for i in (0..ball.len()).filter(|&i| ball.ring_of(i) == m) {
        match config.state_at(i) {
            State::Unrevealed => reachable[i] = true,
            State::White => {
                in_cluster[i] = true;
                stack.push(i);
            }
            State::Black => {}
        }
    }
    while let Some(i) = stack.pop() {
        for &j in ball.neighbor_indices(i) {
            if j == NO_SITE {
                continue;
            }
            let j = j as usize;
            if ball.ring_of(j) > m {
                continue;
            }
            match config.state_at(j) {
                State::Unrevealed => reachable[j] = true,
                State::White if !in_cluster[j] => {
                    in_cluster[j] = true;
                    stack.push(j);
                }
                _ => {}
            }
        }
    }
    (0..ball.len()).filter(|&i| reachable[i]).collect()
}

pub fn white_reachable_unrevealed(config: &PartialConfig, m: u32) -> BTreeSet<Site> {
    let ball = config.ball();
    white_reachable_indices(config, m)
        .into_iter()
        .map(|i| ball.site(i))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::configuration::full_random;
    use crate::lattice::{ring_sites, Ball};
    use crate::rng::{Stream, UniformField};
    use std::sync::Arc;

    fn ball(n: u32) -> Arc<Ball> {
        Arc::new(Ball::new(n).unwrap())
    }

    fn set(sites: impl IntoIterator<Item = Site>) -> BTreeSet<Site> {
        sites.into_iter().collect()
    }

    fn config_from_bits(b: &Arc<Ball>, bits: u64) -> PartialConfig {
        let states = (0..b.len())
            .map(|i| {
                if bits >> i & 1 == 1 {
                    State::Black
                } else {
                    State::White
                }
            })
            .collect();
        PartialConfig::from_states(Arc::clone(b), states).unwrap()
    }

    #[test]
    fn identical_sets_are_connected() {
        let b = ball(2);
        let c = PartialConfig::filled(Arc::clone(&b), State::White);
        let s = set([Site::new(2, 0)]);
        assert!(connected(&c, &s, &s, Color::Black, None));
    }

    #[test]
    fn all_black_reaches_every_ring() {
        let b = ball(5);
        let c = PartialConfig::filled(Arc::clone(&b), State::Black);
        for n in 0..=5 {
            assert!(one_arm(&c, n));
            let outer = set(ring_sites(n + 1));
            assert!(connected(
                &c,
                &set([Site::ORIGIN]),
                &outer,
                Color::Black,
                Some(&Ball::new(n).unwrap().site_set())
            ));
        }
    }

    #[test]
    fn first_ring_arm_probability_by_enumeration() {
        let b = ball(1);
        let hits = (0u64..128)
            .filter(|&bits| one_arm(&config_from_bits(&b, bits), 1))
            .count();
        // Origin bit is free: 2 * 63 of 128.
        assert_eq!(hits, 126);
    }

    #[test]
    fn origin_color_is_irrelevant() {
        let b = ball(3);
        let mut rng = Stream::new(8).rng();
        let o = b.index_of(Site::ORIGIN).unwrap();
        for _ in 0..500 {
            let c = config_from_bits(&b, rng.next_u64());
            let mut d = c.clone();
            d.set_at(
                o,
                if c.state_at(o) == State::Black {
                    State::White
                } else {
                    State::Black
                },
            );
            assert_eq!(one_arm(&c, 3), one_arm(&d, 3));
        }
    }

    #[test]
    fn single_ray() {
        let b = ball(4);
        let mut c = PartialConfig::filled(Arc::clone(&b), State::White);
        for j in 1..=4 {
            c.set(Site::new(0, -j), State::Black).unwrap();
        }
        assert!(one_arm(&c, 4));
        c.set(Site::new(0, -2), State::White).unwrap();
        assert!(!one_arm(&c, 4));
    }

    #[test]
    fn dual_arm_extremes() {
        let b = ball(3);
        assert!(dual_arm(
            &PartialConfig::filled(Arc::clone(&b), State::White),
            1,
            3
        ));
        assert!(!dual_arm(
            &PartialConfig::filled(Arc::clone(&b), State::Black),
            1,
            3
        ));
        assert!(dual_arm(&PartialConfig::filled(b, State::Black), 2, 2));
    }

    #[test]
    fn ring_two_dual_arm_by_enumeration() {
        let b = ball(2);
        let ring2: Vec<usize> = b.ring_indices(2);
        let mut count = 0;
        for bits in 0u32..(1 << 12) {
            let mut c = PartialConfig::filled(Arc::clone(&b), State::Black);
            for (j, &i) in ring2.iter().enumerate() {
                if bits >> j & 1 == 0 {
                    c.set_at(i, State::White);
                }
            }
            count += dual_arm(&c, 1, 2) as u32;
        }
        assert_eq!(count, 4095);
    }

    #[test]
    fn ring_crossing_matches_generic_connected() {
        let b = ball(4);
        let mut rng = Stream::new(21).rng();
        for _ in 0..300 {
            let c = config_from_bits(&b, rng.next_u64());
            for (k, m) in [(0u32, 2u32), (1, 3), (0, 4), (2, 4)] {
                let inner = Ball::new(k).unwrap().site_set();
                let outer = set(ring_sites(m + 1));
                let annulus: BTreeSet<Site> = b
                    .sites()
                    .iter()
                    .copied()
                    .filter(|s| s.norm() > k && s.norm() <= m)
                    .collect();
                for color in [Color::Black, Color::White] {
                    assert_eq!(
                        annulus_crossing(&c, k, m, color),
                        connected(&c, &inner, &outer, color, Some(&annulus))
                    );
                }
            }
        }
    }

    #[test]
    fn monotone_in_colors() {
        let b = ball(3);
        let mut rng = Stream::new(5).rng();
        for _ in 0..100_000 {
            let lo = rng.next_u64() & ((1 << b.len()) - 1);
            let hi = lo | (rng.next_u64() & rng.next_u64());
            let (c, d) = (config_from_bits(&b, lo), config_from_bits(&b, hi));
            assert!(!one_arm(&c, 3) || one_arm(&d, 3));
            assert!(!dual_arm(&d, 1, 3) || dual_arm(&c, 1, 3));
        }
    }

    #[test]
    fn frontier_conventions() {
        let b = ball(3);
        let all = PartialConfig::unrevealed(Arc::clone(&b));
        assert_eq!(white_reachable_unrevealed(&all, 3), set(ring_sites(3)));

        let mut blocked = all.clone();
        for s in ring_sites(3) {
            blocked.set(s, State::Black).unwrap();
        }
        assert!(white_reachable_unrevealed(&blocked, 3).is_empty());

        let w = Site::new(2, 1);
        let mut one_white = blocked.clone();
        one_white.set(w, State::White).unwrap();
        let expected: BTreeSet<Site> = w
            .neighbors()
            .into_iter()
            .filter(|s| one_white.get(*s) == Some(State::Unrevealed))
            .collect();
        assert_eq!(expected.len(), 2);
        assert_eq!(white_reachable_unrevealed(&one_white, 3), expected);
    }

    #[test]
    fn frontier_follows_white_paths_inward() {
        let b = ball(3);
        let mut c = PartialConfig::unrevealed(Arc::clone(&b));
        for s in ring_sites(3) {
            c.set(s, State::Black).unwrap();
        }
        // Isolated inner white site does not open the frontier.
        c.set(Site::new(1, 0), State::White).unwrap();
        assert!(white_reachable_unrevealed(&c, 3).is_empty());
        // A white path from ring 3 down to (1, 0) does.
        c.set(Site::new(3, 0), State::White).unwrap();
        c.set(Site::new(2, 0), State::White).unwrap();
        let e = white_reachable_unrevealed(&c, 3);
        assert!(e.contains(&Site::ORIGIN));
        assert!(e.iter().all(|s| c.get(*s) == Some(State::Unrevealed)));
    }

    #[test]
    fn measure_symmetry_under_color_flip() {
        // At p = 1/2 every configuration has the same weight, so equal counts
        // of black and white crossings is the measure-level flip symmetry.
        let b = ball(2);
        let (mut black, mut white) = (0u32, 0u32);
        for bits in 0u64..(1 << b.len()) {
            let c = config_from_bits(&b, bits);
            black += annulus_crossing(&c, 0, 2, Color::Black) as u32;
            white += annulus_crossing(&c, 0, 2, Color::White) as u32;
            assert_eq!(
                annulus_crossing(&c, 0, 2, Color::Black),
                annulus_crossing(&c.flipped(), 0, 2, Color::White)
            );
        }
        assert_eq!(black, white);
        // Independent brute-force value: 2 * 253135 (origin free).
        assert_eq!(black, 2 * 253_135);
    }

    #[test]
    fn random_configs_have_consistent_arms() {
        let b = ball(6);
        for rep in 0..200 {
            let c = full_random(Arc::clone(&b), 0.5, &UniformField::new(3, rep)).unwrap();
            // One-arm to radius n implies one-arm to every smaller radius.
            let arms: Vec<bool> = (1..=6).map(|n| one_arm(&c, n)).collect();
            assert!(arms.windows(2).all(|w| w[0] || !w[1]));
        }
    }
}
