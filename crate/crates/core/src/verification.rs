//! Exact and statistical verification suites behind `iic verify`.
//!
//! * `circuit-markov`: for random black circuits `Γ ⊆ Λₙ` around the origin
//!   and random revealed data `η` on `S ⊇ Γ`, the law of the interior of `Γ`
//!   is the same under the three conditionings
//!   `{ε_S = η, 0 ↔ ∂Λₙ}`, `{ε_S = η, 0 ↔ Γ}` and `{ε_{S∩int Γ} = η, 0 ↔ Γ}`.
//!   All three are full enumerations.
//! * `coupling-law`: the coupled configurations have the right marginals on
//!   `Λ₁` and dominate the unconditioned one.
//! * `proof-steps`: `hit ⟺ dual`, coincidence without a hit, and the
//!   circuit checks, on every replica.
//! * `tv-bound`: the exact TV bound over every `k ≤ m ≤ n ≤ radius`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::connectivity::mask::MaskBall;
use crate::coupling::{CouplingEngine, CouplingSummary};
use crate::error::{EstimatorError, OracleError};
use crate::estimator::{exact_tv, TvRegion};
use crate::lattice::{ball_size, verify_circuit, Site};
use crate::numeric::KahanSum;
use crate::oracle::{exact_conditioned_marginal, MarginalTable, OracleBackend};
use crate::rng::Stream;

/// Agreement required between exact enumerations.
pub const EXACT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub n: u32,
    pub p: f64,
    pub seed: u64,
    /// Sampled `(Γ, S, η)` triples.
    pub triples: u64,
    /// Replicas for the coupling-law suite.
    pub samples: u64,
    /// Replicas per radius triple for the proof-step suite.
    pub replicas: u64,
    /// TV allowed between empirical and exact laws in the coupling-law suite.
    pub tv_tolerance: f64,
    pub backend: OracleBackend,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            n: 2,
            p: 0.5,
            seed: 0,
            triples: 500,
            samples: 1_000_000,
            replicas: 100_000,
            tv_tolerance: 0.005,
            backend: OracleBackend::exact(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub name: String,
    pub passed: bool,
    pub checks: u64,
    pub failures: u64,
    /// Largest observed discrepancy (meaning depends on the suite).
    pub max_error: f64,
    pub detail: String,
}

/// `{0 ↔ Γ}` for black set `black`: a black path from a neighbor of the
/// origin to a site adjacent to `Γ`, certain when `Γ` touches the origin.
pub fn origin_connects_to(mb: &MaskBall, gamma: u64, black: u64) -> bool {
    let origin = mb.origin_bit();
    let near_gamma = mb.neighborhood(gamma) & !gamma;
    if gamma & origin != 0 || near_gamma & origin != 0 {
        return true;
    }
    let start = mb.neighborhood(origin) & black;
    mb.flood(start, black) & near_gamma != 0
}

/// Connected sets `I ∋ 0` of `Λ_{n−1}` whose outer boundary is a circuit
/// with interior exactly `I`, as `(interior, circuit)` masks in `Λₙ`.
pub fn circuit_catalogue(mb: &MaskBall) -> Vec<(u64, u64)> {
    let n = mb.radius();
    if n == 0 {
        return Vec::new();
    }
    let inner = mb.disc(n - 1) & !mb.origin_bit();
    let inner_bits: Vec<u64> = (0..64)
        .map(|i| 1u64 << i)
        .filter(|b| inner & b != 0)
        .collect();
    let mut out = Vec::new();
    for subset in 0u64..(1 << inner_bits.len()) {
        let interior = inner_bits
            .iter()
            .enumerate()
            .fold(mb.origin_bit(), |a, (j, b)| {
                if subset >> j & 1 == 1 {
                    a | b
                } else {
                    a
                }
            });
        if mb.flood(mb.origin_bit(), interior) != interior {
            continue;
        }
        let gamma = mb.neighborhood(interior) & !interior;
        let sites: BTreeSet<Site> = sites_of(mb, gamma).collect();
        let Ok(c) = verify_circuit(&sites, n + 2) else {
            continue;
        };
        if c.interior == sites_of(mb, interior).collect() {
            out.push((interior, gamma));
        }
    }
    out
}

fn sites_of(mb: &MaskBall, mut mask: u64) -> impl Iterator<Item = Site> + '_ {
    std::iter::from_fn(move || {
        (mask != 0).then(|| {
            let i = mask.trailing_zeros() as usize;
            mask &= mask - 1;
            mb.ball().site(i)
        })
    })
}

/// Law of the `interior` colors over completions of `free` with `black`
/// fixed, conditioned on `event`; `None` when the event is impossible.
fn interior_law(
    interior: u64,
    black: u64,
    free: u64,
    p: f64,
    event: impl Fn(u64) -> bool,
) -> Option<Vec<f64>> {
    let interior_bits: Vec<u64> = (0..64)
        .map(|i| 1u64 << i)
        .filter(|b| interior & b != 0)
        .collect();
    let free_bits: Vec<u64> = (0..64)
        .map(|i| 1u64 << i)
        .filter(|b| free & b != 0)
        .collect();
    let mut table = vec![KahanSum::new(); 1 << interior_bits.len()];
    let mut total = KahanSum::new();
    for c in 0u64..(1 << free_bits.len()) {
        let mut cfg = black;
        let mut w = 1.0;
        for (j, b) in free_bits.iter().enumerate() {
            if c >> j & 1 == 1 {
                cfg |= b;
                w *= p;
            } else {
                w *= 1.0 - p;
            }
        }
        if w == 0.0 || !event(cfg) {
            continue;
        }
        let atom = interior_bits
            .iter()
            .enumerate()
            .fold(0, |a, (j, b)| a | ((cfg & b != 0) as usize) << j);
        table[atom].add(w);
        total.add(w);
    }
    let z = total.total();
    (z > 0.0).then(|| table.iter().map(|t| t.total() / z).collect())
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Outcome of one `(Γ, S, η)` instance of the circuit Markov check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircuitMarkovCheck {
    pub interior: u64,
    pub gamma: u64,
    pub revealed: u64,
    pub black: u64,
    /// `max |P(·|η, arm) − P(·|η, 0↔Γ)|` over interior atoms.
    pub first: f64,
    /// `max |P(·|η, 0↔Γ) − P(·|η on S∩int Γ, 0↔Γ)|`.
    pub second: f64,
}

/// Samples one compatible instance and evaluates both equalities.
pub fn circuit_markov_instance(
    mb: &MaskBall,
    catalogue: &[(u64, u64)],
    p: f64,
    stream: &Stream,
) -> CircuitMarkovCheck {
    let n = mb.radius();
    let mut rng = stream.rng();
    loop {
        let (interior, gamma) = catalogue[rng.below(catalogue.len() as u64) as usize];
        let revealed = gamma | (rng.next_u64() & mb.full());
        let black = gamma | (rng.next_u64() & revealed);
        let free = mb.full() & !revealed;
        let Some(arm) = interior_law(interior, black, free, p, |c| mb.one_arm(c, n)) else {
            // η incompatible with the arm: draw again.
            continue;
        };
        let via_gamma = interior_law(interior, black, free, p, |c| {
            origin_connects_to(mb, gamma, c)
        })
        .expect("the arm event implies 0 ↔ Γ");
        let inside = revealed & interior;
        let local = interior_law(interior, black & inside, interior & !inside, p, |c| {
            origin_connects_to(mb, gamma, c)
        })
        .expect("compatible interior data");
        return CircuitMarkovCheck {
            interior,
            gamma,
            revealed,
            black,
            first: max_abs_diff(&arm, &via_gamma),
            second: max_abs_diff(&via_gamma, &local),
        };
    }
}

fn check_exact_capacity(cfg: &VerifyConfig) -> Result<(), EstimatorError> {
    let sites = ball_size(cfg.n);
    if sites > cfg.backend.exact_limit {
        return Err(OracleError::CapacityExceeded {
            unrevealed: sites,
            limit: cfg.backend.exact_limit,
        }
        .into());
    }
    if cfg.n == 0 {
        return Err(EstimatorError::InvalidParameters(
            "verification needs n ≥ 1".into(),
        ));
    }
    Ok(())
}

pub fn circuit_markov_suite(cfg: &VerifyConfig) -> Result<SuiteResult, EstimatorError> {
    check_exact_capacity(cfg)?;
    let mb = MaskBall::new(cfg.n)?;
    let catalogue = circuit_catalogue(&mb);
    let stream = Stream::new(cfg.seed).substream(0x4d41_524b);
    let (mut failures, mut worst) = (0u64, 0.0f64);
    for t in 0..cfg.triples {
        let c = circuit_markov_instance(&mb, &catalogue, cfg.p, &stream.substream(t));
        let err = c.first.max(c.second);
        worst = worst.max(err);
        failures += (err > EXACT_TOLERANCE) as u64;
    }
    Ok(SuiteResult {
        name: "circuit-markov".into(),
        passed: failures == 0 && cfg.triples > 0,
        checks: cfg.triples,
        failures,
        max_error: worst,
        detail: format!("{} circuits available in Λ{}", catalogue.len(), cfg.n),
    })
}

/// TVs of the three coupled laws on `Λ_m` against their targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingLawCheck {
    pub tv_omega: f64,
    pub tv_m: f64,
    pub tv_n: f64,
}

pub fn coupling_law_tvs(
    summary: &CouplingSummary,
    p: f64,
) -> Result<CouplingLawCheck, EstimatorError> {
    let sites = summary.region.clone();
    let law = |counts: &[u64]| MarginalTable::from_counts(sites.clone(), counts);
    let exact_m = exact_conditioned_marginal(&sites, summary.m, p)?;
    let exact_n = exact_conditioned_marginal(&sites, summary.n, p)?;
    let product = MarginalTable::product(sites.clone(), p);
    Ok(CouplingLawCheck {
        tv_omega: law(&summary.counts_omega).tv(&product),
        tv_m: law(&summary.counts_m).tv(&exact_m),
        tv_n: law(&summary.counts_n).tv(&exact_n),
    })
}

pub fn coupling_law_suite(cfg: &VerifyConfig) -> Result<SuiteResult, EstimatorError> {
    check_exact_capacity(cfg)?;
    let (m, n) = (cfg.n - 1, cfg.n);
    let m = m.max(1).min(n);
    let engine = CouplingEngine::new(0, m, n, cfg.p, cfg.backend)?;
    let region = engine.mask_ball().ball().sites().to_vec();
    let summary = engine.run_replicas(cfg.seed, 0..cfg.samples, &region)?;
    let tvs = coupling_law_tvs(&summary, cfg.p)?;
    let worst = tvs.tv_omega.max(tvs.tv_m).max(tvs.tv_n);
    let fkg = engine.oracle_stats().fkg_violations;
    let failures = summary.dominance_failures + fkg + (worst > cfg.tv_tolerance) as u64;
    Ok(SuiteResult {
        name: "coupling-law".into(),
        passed: failures == 0 && cfg.samples > 0,
        checks: summary.replicas,
        failures,
        max_error: worst,
        detail: format!(
            "(m, n) = ({m}, {n}): tv ω {:.5}, ω(m) {:.5}, ω(n) {:.5}; tolerance {}",
            tvs.tv_omega, tvs.tv_m, tvs.tv_n, cfg.tv_tolerance
        ),
    })
}

/// Radius triples exercised by the proof-step suite at ball radius `n`.
pub fn proof_step_triples(n: u32) -> Vec<(u32, u32, u32)> {
    let mut v = vec![(0, n.saturating_sub(1), n), (0, n, n)];
    if n >= 1 {
        v.push((1, n, n));
    }
    v.sort();
    v.dedup();
    v
}

pub fn proof_step_suite(cfg: &VerifyConfig) -> Result<SuiteResult, EstimatorError> {
    check_exact_capacity(cfg)?;
    let mut failures = 0;
    let mut checks = 0;
    let mut detail = Vec::new();
    for (k, m, n) in proof_step_triples(cfg.n) {
        let engine = CouplingEngine::new(k, m, n, cfg.p, cfg.backend)?;
        let s = engine.run_replicas(cfg.seed, 0..cfg.replicas, &[])?;
        let bad = s.event_mismatches
            + s.coincidence_violations
            + s.dominance_failures
            + s.markov_violations;
        let circuits_missing = s.non_hit - s.circuits_verified;
        failures += bad + circuits_missing + engine.oracle_stats().fkg_violations;
        checks += s.replicas;
        detail.push(format!(
            "({k},{m},{n}): hit {} non-hit {} circuits {}",
            s.hits, s.non_hit, s.circuits_verified
        ));
    }
    Ok(SuiteResult {
        name: "proof-steps".into(),
        passed: failures == 0,
        checks,
        failures,
        max_error: 0.0,
        detail: detail.join("; "),
    })
}

pub fn tv_bound_suite(cfg: &VerifyConfig) -> Result<SuiteResult, EstimatorError> {
    check_exact_capacity(cfg)?;
    let (mut checks, mut failures, mut positive, mut worst_slack) = (0, 0, 0, f64::INFINITY);
    for n in 0..=cfg.n {
        for m in 0..=n {
            for k in 0..=m {
                for region in [TvRegion::Ball, TvRegion::Ring1] {
                    checks += 1;
                    match exact_tv(k, m, n, cfg.p, region) {
                        Ok(r) => {
                            positive += (r.tv > 0.0) as u64;
                            worst_slack = worst_slack.min(r.bound - r.tv);
                        }
                        Err(EstimatorError::BoundViolation { .. }) => failures += 1,
                        Err(e) => return Err(e),
                    }
                }
            }
        }
    }
    Ok(SuiteResult {
        name: "tv-bound".into(),
        passed: failures == 0 && positive > 0,
        checks,
        failures,
        max_error: 0.0,
        detail: format!("{positive} strictly positive cases; smallest slack {worst_slack:.6}"),
    })
}

/// Runs every suite in a fixed order.
pub fn run_all(cfg: &VerifyConfig) -> Result<Vec<SuiteResult>, EstimatorError> {
    Ok(vec![
        circuit_markov_suite(cfg)?,
        coupling_law_suite(cfg)?,
        proof_step_suite(cfg)?,
        tv_bound_suite(cfg)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::configuration::Color;
    use crate::connectivity::connected;

    #[test]
    fn origin_connection_matches_reference() {
        let mb = MaskBall::new(2).unwrap();
        let catalogue = circuit_catalogue(&mb);
        let mut rng = Stream::new(8).rng();
        for _ in 0..3_000 {
            let (_, gamma) = catalogue[rng.below(catalogue.len() as u64) as usize];
            let black = rng.next_u64() & mb.full();
            let config = mb.config_from_masks(mb.full(), black);
            let g: BTreeSet<Site> = sites_of(&mb, gamma).collect();
            let o = BTreeSet::from([Site::ORIGIN]);
            assert_eq!(
                origin_connects_to(&mb, gamma, black),
                connected(&config, &o, &g, Color::Black, None)
            );
        }
    }

    #[test]
    fn catalogue_contents() {
        let one = circuit_catalogue(&MaskBall::new(1).unwrap());
        assert_eq!(one.len(), 1);
        let two = circuit_catalogue(&MaskBall::new(2).unwrap());
        let mb = MaskBall::new(2).unwrap();
        assert!(two.contains(&(mb.origin_bit(), mb.ring(1))));
        assert!(two.contains(&(mb.disc(1), mb.ring(2))));
        for (interior, gamma) in &two {
            assert_eq!(interior & gamma, 0);
            assert!(interior & mb.origin_bit() != 0);
        }
    }

    #[test]
    fn circuit_markov_holds_on_small_sample() {
        let cfg = VerifyConfig {
            triples: 60,
            ..VerifyConfig::default()
        };
        let r = circuit_markov_suite(&cfg).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn circuit_markov_detects_a_broken_circuit() {
        // Dropping one site of Γ opens the circuit, and the first equality
        // should then fail for some data.
        let mb = MaskBall::new(2).unwrap();
        let gamma = mb.ring(1) & !(mb.ring(1) & mb.ring(1).wrapping_neg());
        let interior = mb.origin_bit();
        let mut seen = false;
        let mut rng = Stream::new(3).rng();
        for _ in 0..200 {
            let revealed = gamma | (rng.next_u64() & mb.full());
            let black = gamma | (rng.next_u64() & revealed);
            let free = mb.full() & !revealed;
            let Some(a) = interior_law(interior | (mb.ring(1) & !gamma), black, free, 0.5, |c| {
                mb.one_arm(c, 2)
            }) else {
                continue;
            };
            let b = interior_law(interior | (mb.ring(1) & !gamma), black, free, 0.5, |c| {
                origin_connects_to(&mb, gamma, c)
            })
            .unwrap();
            seen |= max_abs_diff(&a, &b) > 1e-6;
        }
        assert!(seen);
    }

    #[test]
    fn capacity_is_reported() {
        let cfg = VerifyConfig {
            n: 3,
            ..VerifyConfig::default()
        };
        assert!(matches!(
            circuit_markov_suite(&cfg),
            Err(EstimatorError::Oracle(OracleError::CapacityExceeded { .. }))
        ));
    }

    #[test]
    fn small_suites_pass() {
        let cfg = VerifyConfig {
            triples: 10,
            samples: 20_000,
            replicas: 2_000,
            tv_tolerance: 0.05,
            ..Default::default()
        };
        for r in run_all(&cfg).unwrap() {
            assert!(r.passed, "{r:?}");
        }
    }
}
