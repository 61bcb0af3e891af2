//! Arm probabilities, total-variation distances between conditioned
//! marginals, and the one-arm exponent fit.

use std::collections::BTreeSet;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::configuration::{check_probability, full_random, Color, CRITICAL_P};
use crate::connectivity::lazy::LazyCrossing;
use crate::connectivity::mask::{MaskBall, MAX_MASK_RADIUS};
use crate::connectivity::{annulus_crossing, union_find};
use crate::error::EstimatorError;
use crate::lattice::{ball_size, ring_sites, Ball, Site};
use crate::numeric::{wilson_halfwidth, KahanSum, Z95};
use crate::oracle::{
    exact_conditioned_marginal, MarginalTable, RejectionSampler, DEFAULT_RETRY_LIMIT,
};
use crate::rng::{Stream, UniformField};

/// Replicas per parallel work unit. Fixed so that results never depend on
/// the number of workers.
pub const SHARD_SIZE: u64 = 4096;

/// Largest ball for which crossing probabilities are enumerated exactly.
pub const EXACT_SITE_LIMIT: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArmKind {
    /// Black crossing of `Λ_m \ Λ_k` (the one-arm event when `k = 0`).
    Black,
    /// White crossing `Λ_k ↔* ∂Λ_m`.
    White,
}

impl ArmKind {
    pub fn color(self) -> Color {
        match self {
            ArmKind::Black => Color::Black,
            ArmKind::White => Color::White,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArmEngine {
    /// Full configuration plus breadth-first search.
    Reference,
    /// Newman–Ziff sweep.
    UnionFind,
    /// Cluster grown on demand from the inner ring.
    Lazy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArmStats {
    pub k: u32,
    pub m: u32,
    pub trials: u64,
    pub hits: u64,
}

impl ArmStats {
    pub fn new(k: u32, m: u32) -> Self {
        ArmStats {
            k,
            m,
            trials: 0,
            hits: 0,
        }
    }

    pub fn record(&mut self, hit: bool) {
        self.trials += 1;
        self.hits += hit as u64;
    }

    pub fn merge(&self, other: &ArmStats) -> Result<ArmStats, EstimatorError> {
        if (self.k, self.m) != (other.k, other.m) {
            return Err(EstimatorError::MergeMismatch);
        }
        Ok(ArmStats {
            k: self.k,
            m: self.m,
            trials: self.trials + other.trials,
            hits: self.hits + other.hits,
        })
    }

    pub fn p_hat(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            self.hits as f64 / self.trials as f64
        }
    }

    /// Wilson 95% half-width.
    pub fn ci_halfwidth(&self) -> f64 {
        wilson_halfwidth(self.hits, self.trials, Z95)
    }

    /// Binomial standard error of `p_hat`.
    pub fn std_error(&self) -> f64 {
        if self.trials == 0 {
            return f64::INFINITY;
        }
        let p = self.p_hat();
        (p * (1.0 - p) / self.trials as f64).sqrt()
    }
}

/// Crossing counts over replicas `0..trials` of `UniformField(seed, r)`.
pub fn estimate_arm(
    kind: ArmKind,
    k: u32,
    m: u32,
    p: f64,
    trials: u64,
    seed: u64,
    engine: ArmEngine,
) -> Result<ArmStats, EstimatorError> {
    check_probability(p)?;
    if k > m {
        return Err(EstimatorError::InvalidParameters(format!(
            "k = {k} exceeds m = {m}"
        )));
    }
    let ball = Arc::new(Ball::new(m)?);
    let color = kind.color();
    let shards = trials.div_ceil(SHARD_SIZE);
    let counts = (0..shards)
        .into_par_iter()
        .map(|shard| {
            let range = shard * SHARD_SIZE..((shard + 1) * SHARD_SIZE).min(trials);
            let mut stats = ArmStats::new(k, m);
            let mut lazy =
                (engine == ArmEngine::Lazy).then(|| LazyCrossing::new(Arc::clone(&ball)));
            for r in range {
                let field = UniformField::new(seed, r);
                let hit = match engine {
                    ArmEngine::Reference => {
                        let c = full_random(Arc::clone(&ball), p, &field).expect("p checked");
                        annulus_crossing(&c, k, m, color)
                    }
                    ArmEngine::UnionFind => {
                        union_find::sweep_crossing(&ball, &field, k, m, color, p)
                    }
                    ArmEngine::Lazy => {
                        lazy.as_mut()
                            .expect("lazy engine")
                            .crossing(&field, p, k, m, color)
                            .0
                    }
                };
                stats.record(hit);
            }
            stats
        })
        .collect::<Vec<_>>();
    counts
        .iter()
        .try_fold(ArmStats::new(k, m), |acc, s| acc.merge(s))
}

/// Exact probability of the `color` crossing of `Λ_m \ Λ_k`.
pub fn exact_crossing_probability(
    k: u32,
    m: u32,
    p: f64,
    color: Color,
) -> Result<f64, EstimatorError> {
    check_probability(p)?;
    if k >= m {
        return Ok(1.0);
    }
    let sites = ball_size(m);
    if sites > EXACT_SITE_LIMIT {
        return Err(EstimatorError::CapacityExceeded {
            sites,
            limit: EXACT_SITE_LIMIT,
        });
    }
    let mask = MaskBall::new(m)?;
    let annulus = mask.full() & !mask.disc(k);
    let q = match color {
        Color::Black => p,
        Color::White => 1.0 - p,
    };
    Ok(crossing_weight(&mask, k + 1, m, q, 0, annulus))
}

fn crossing_weight(mask: &MaskBall, a: u32, b: u32, q: f64, open: u64, free: u64) -> f64 {
    if mask.ring_crossing(open, a, b) {
        return 1.0;
    }
    if free == 0 || !mask.ring_crossing(open | free, a, b) {
        return 0.0;
    }
    let bit = free & free.wrapping_neg();
    let rest = free & !bit;
    q * crossing_weight(mask, a, b, q, open | bit, rest)
        + (1.0 - q) * crossing_weight(mask, a, b, q, open, rest)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TvMode {
    Exact,
    Empirical,
}

/// Sites whose joint law is compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TvRegion {
    /// `Λ_k`.
    Ball,
    /// The six neighbors of the origin, whatever `k` is.
    Ring1,
}

impl TvRegion {
    pub fn sites(self, k: u32) -> Result<Vec<Site>, EstimatorError> {
        Ok(match self {
            TvRegion::Ball => Ball::new(k)?.sites().to_vec(),
            TvRegion::Ring1 => ring_sites(1)
                .into_iter()
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TvReport {
    pub k: u32,
    pub m: u32,
    pub n: u32,
    pub p: f64,
    pub mode: TvMode,
    pub region: TvRegion,
    pub tv: f64,
    /// `P(Λ_k ↔* ∂Λ_m)`, exact or estimated.
    pub bound: f64,
    /// Samples per measure (empirical mode).
    pub samples: Option<u64>,
    /// Standard error of the estimated bound.
    pub bound_sigma: Option<f64>,
    /// Expected plug-in TV between two samples of the same law, a scale for
    /// how much of `tv` is noise.
    pub noise: Option<f64>,
    #[serde(skip)]
    pub counts_m: Vec<u64>,
    #[serde(skip)]
    pub counts_n: Vec<u64>,
}

impl TvReport {
    /// `tv ≤ bound + z·σ`, with `σ = 0` in exact mode.
    pub fn within_bound(&self, z: f64) -> bool {
        self.tv <= self.bound + z * self.bound_sigma.unwrap_or(0.0)
    }
}

fn check_radii(k: u32, m: u32, n: u32) -> Result<(), EstimatorError> {
    if k <= m && m <= n {
        Ok(())
    } else {
        Err(EstimatorError::InvalidParameters(format!(
            "radii must satisfy k ≤ m ≤ n, got ({k}, {m}, {n})"
        )))
    }
}

/// Exact TV between the laws of the region under the arm events at `m` and
/// at `n`, checked against the exact dual-arm probability.
pub fn exact_tv(
    k: u32,
    m: u32,
    n: u32,
    p: f64,
    region: TvRegion,
) -> Result<TvReport, EstimatorError> {
    check_radii(k, m, n)?;
    let sites = region.sites(k)?;
    let at_m = arm_marginal(&sites, m, p)?;
    let at_n = arm_marginal(&sites, n, p)?;
    let tv = at_m.tv(&at_n);
    let bound = exact_crossing_probability(k, m, p, Color::White)?;
    if tv > bound {
        return Err(EstimatorError::BoundViolation { tv, bound });
    }
    Ok(TvReport {
        k,
        m,
        n,
        p,
        mode: TvMode::Exact,
        region,
        tv,
        bound,
        samples: None,
        bound_sigma: None,
        noise: None,
        counts_m: Vec::new(),
        counts_n: Vec::new(),
    })
}

/// Exact law of the region under the arm event at radius `arm`. Sites
/// outside `Λ_arm` are independent of the arm event, so they factor out as
/// Bernoulli variables.
fn arm_marginal(sites: &[Site], arm: u32, p: f64) -> Result<MarginalTable, EstimatorError> {
    let inner: Vec<(usize, Site)> = sites
        .iter()
        .copied()
        .enumerate()
        .filter(|(_, s)| s.norm() <= arm)
        .collect();
    let inner_sites: Vec<Site> = inner.iter().map(|(_, s)| *s).collect();
    let inner_table = exact_conditioned_marginal(&inner_sites, arm, p)?;
    let probs = (0..1usize << sites.len())
        .map(|atom| {
            let inner_atom = inner
                .iter()
                .enumerate()
                .fold(0, |a, (j, (i, _))| a | (atom >> i & 1) << j);
            let outer = sites
                .iter()
                .enumerate()
                .filter(|(_, s)| s.norm() > arm)
                .fold(1.0, |w, (i, _)| {
                    w * if atom >> i & 1 == 1 { p } else { 1.0 - p }
                });
            inner_table.probs[inner_atom] * outer
        })
        .collect();
    Ok(MarginalTable {
        sites: sites.to_vec(),
        probs,
    })
}

/// Atom counts of the region over `samples` rejection samples at radius `n`.
fn sample_counts(
    sites: &[Site],
    n: u32,
    p: f64,
    samples: u64,
    stream: Stream,
) -> Result<Vec<u64>, EstimatorError> {
    if n > MAX_MASK_RADIUS {
        return Err(EstimatorError::CapacityExceeded {
            sites: ball_size(n),
            limit: 64,
        });
    }
    // Region sites outside Λ_n are independent of the arm event and are drawn
    // from a separate stream.
    let sampler = RejectionSampler::new(n, p, DEFAULT_RETRY_LIMIT)?;
    let small = sampler.ball();
    let positions: Vec<(Option<usize>, Site)> =
        sites.iter().map(|s| (small.index_of(*s), *s)).collect();
    let atoms = 1usize << sites.len();
    let shards = samples.div_ceil(SHARD_SIZE);
    let partial: Vec<Result<Vec<u64>, EstimatorError>> = (0..shards)
        .into_par_iter()
        .map(|shard| {
            let mut counts = vec![0u64; atoms];
            for i in shard * SHARD_SIZE..((shard + 1) * SHARD_SIZE).min(samples) {
                let s = stream.substream(i);
                let (black, _) = sampler.sample_mask(&s)?;
                let extra = s.substream(u64::MAX);
                let atom = positions
                    .iter()
                    .enumerate()
                    .fold(0usize, |a, (j, (idx, site))| {
                        let is_black = match idx {
                            Some(idx) => black >> idx & 1 == 1,
                            None => extra.uniform(site.key()) <= p,
                        };
                        a | (is_black as usize) << j
                    });
                counts[atom] += 1;
            }
            Ok(counts)
        })
        .collect();
    let mut total = vec![0u64; atoms];
    for c in partial {
        for (t, x) in total.iter_mut().zip(c?) {
            *t += x;
        }
    }
    Ok(total)
}

/// TV between empirical region laws from independent rejection samples at
/// radii `m` and `n`, against an estimated dual-arm bound.
pub fn empirical_tv(
    k: u32,
    m: u32,
    n: u32,
    p: f64,
    samples: u64,
    seed: u64,
    region: TvRegion,
) -> Result<TvReport, EstimatorError> {
    check_radii(k, m, n)?;
    check_probability(p)?;
    if samples == 0 {
        return Err(EstimatorError::InvalidParameters(
            "samples must be positive".into(),
        ));
    }
    let sites = region.sites(k)?;
    let root = Stream::new(seed);
    let counts_m = sample_counts(&sites, m, p, samples, root.substream(1))?;
    let counts_n = sample_counts(&sites, n, p, samples, root.substream(2))?;
    let table_m = MarginalTable::from_counts(sites.clone(), &counts_m);
    let table_n = MarginalTable::from_counts(sites, &counts_n);
    let tv = table_m.tv(&table_n);
    let noise = 0.5
        * counts_m
            .iter()
            .zip(&counts_n)
            .map(|(a, b)| {
                let q = (a + b) as f64 / (2 * samples) as f64;
                (2.0 / std::f64::consts::PI).sqrt() * (2.0 * q * (1.0 - q) / samples as f64).sqrt()
            })
            .collect::<KahanSum>()
            .total();
    let arm = estimate_arm(
        ArmKind::White,
        k,
        m,
        p,
        samples,
        root.substream(3).bits(0),
        ArmEngine::UnionFind,
    )?;
    Ok(TvReport {
        k,
        m,
        n,
        p,
        mode: TvMode::Empirical,
        region,
        tv,
        bound: arm.p_hat(),
        samples: Some(samples),
        bound_sigma: Some(arm.std_error()),
        noise: Some(noise),
        counts_m,
        counts_n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
}

/// Weighted least squares `y ≈ a + b·x`.
pub fn fit_linear(xs: &[f64], ys: &[f64], weights: &[f64]) -> Result<LinearFit, EstimatorError> {
    if xs.len() != ys.len() || xs.len() != weights.len() || xs.len() < 2 {
        return Err(EstimatorError::DegenerateFit(
            "need at least two matching points".into(),
        ));
    }
    let sw: f64 = weights.iter().sum();
    let xm = xs.iter().zip(weights).map(|(x, w)| x * w).sum::<f64>() / sw;
    let ym = ys.iter().zip(weights).map(|(y, w)| y * w).sum::<f64>() / sw;
    let sxx: f64 = xs
        .iter()
        .zip(weights)
        .map(|(x, w)| w * (x - xm).powi(2))
        .sum();
    if sxx <= 0.0 || !sxx.is_finite() {
        return Err(EstimatorError::DegenerateFit(
            "abscissae do not vary".into(),
        ));
    }
    let sxy: f64 = xs
        .iter()
        .zip(ys)
        .zip(weights)
        .map(|((x, y), w)| w * (x - xm) * (y - ym))
        .sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    Ok(LinearFit {
        slope,
        intercept,
        slope_stderr: (1.0 / sxx).sqrt(),
    })
}

/// Fit of `log y` against `log x`.
pub fn fit_log_log(xs: &[f64], ys: &[f64], weights: &[f64]) -> Result<LinearFit, EstimatorError> {
    if ys.iter().chain(xs).any(|v| *v <= 0.0) {
        return Err(EstimatorError::DegenerateFit(
            "log of a non-positive value".into(),
        ));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    fit_linear(&lx, &ly, weights)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    /// `−slope` of `log p̂` against `log m`.
    pub exponent: f64,
    pub stderr: f64,
    pub intercept: f64,
    pub stats: Vec<ArmStats>,
    /// Whether `p̂` is non-increasing in `m` up to the Wilson intervals.
    pub monotone: bool,
}

/// Dual-arm exponent at `p = 1/2` from `P(Λ_k ↔* ∂Λ_m)` over `m_list`.
/// Every scale reads the same fields, so crossing counts are monotone in `m`
/// replica by replica.
pub fn fit_exponent(
    k: u32,
    m_list: &[u32],
    trials: u64,
    seed: u64,
    engine: ArmEngine,
) -> Result<ExponentFit, EstimatorError> {
    if m_list.len() < 4 {
        return Err(EstimatorError::InvalidParameters(
            "need at least four scales".into(),
        ));
    }
    if m_list.windows(2).any(|w| w[0] >= w[1]) || m_list[0] <= k {
        return Err(EstimatorError::InvalidParameters(
            "scales must increase and exceed k".into(),
        ));
    }
    let stats: Vec<ArmStats> = m_list
        .iter()
        .map(|&m| estimate_arm(ArmKind::White, k, m, CRITICAL_P, trials, seed, engine))
        .collect::<Result<_, _>>()?;
    if let Some(s) = stats.iter().find(|s| s.hits == 0) {
        return Err(EstimatorError::DegenerateFit(format!(
            "no crossing observed at m = {}",
            s.m
        )));
    }
    let xs: Vec<f64> = stats.iter().map(|s| s.m as f64).collect();
    let ys: Vec<f64> = stats.iter().map(|s| s.p_hat()).collect();
    // Delta method: sd(log p̂) ≈ sd(p̂)/p̂, with the Wilson width standing in
    // for sd so that p̂ = 1 keeps a finite weight.
    let weights: Vec<f64> = stats
        .iter()
        .map(|s| {
            let sd = s.ci_halfwidth() / Z95 / s.p_hat();
            1.0 / (sd * sd)
        })
        .collect();
    let fit = fit_log_log(&xs, &ys, &weights)?;
    let monotone = stats
        .windows(2)
        .all(|w| w[1].p_hat() <= w[0].p_hat() + w[0].ci_halfwidth() + w[1].ci_halfwidth());
    Ok(ExponentFit {
        exponent: -fit.slope,
        stderr: fit.slope_stderr,
        intercept: fit.intercept,
        stats,
        monotone,
    })
}
