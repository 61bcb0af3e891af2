//! Conditional laws of one-arm-conditioned percolation.
//!
//! The central quantity is the threshold
//! `P(ε_x = 1 | ε_S = η, 0 ↔ ∂Λₙ)` used to drive the coupled configurations.
//! It is computed either exactly, by enumerating completions of the
//! unrevealed sites of `Λₙ`, or by conditional rejection sampling.
//!
//! Exact enumeration prunes with both monotone bounds of the arm event: if
//! the all-white completion of the remaining sites already realizes the arm,
//! the whole subtree contributes its full weight; if the all-black
//! completion fails, it contributes nothing.

use std::collections::HashMap;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::configuration::{check_probability, PartialConfig};
use crate::connectivity::mask::MaskBall;
use crate::error::OracleError;
use crate::lattice::Site;
use crate::numeric::{KahanSum, Z95};
use crate::rng::{mix64, Stream};

pub const DEFAULT_EXACT_LIMIT: usize = 25;
pub const DEFAULT_MC_TOLERANCE: f64 = 1e-3;
pub const DEFAULT_MC_MAX_SAMPLES: u64 = 10_000_000;
pub const DEFAULT_RETRY_LIMIT: u64 = 10_000_000;

/// Slack allowed below `p` for exact thresholds at `p != 1/2`, where the
/// enumerated weights are not dyadic and rounding can land a hair under `p`.
pub const FKG_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendMode {
    Exact,
    #[serde(rename = "mc")]
    MonteCarlo,
    /// Exact while the number of unrevealed sites is within the limit.
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleBackend {
    pub mode: BackendMode,
    pub exact_limit: usize,
    pub mc_tolerance: f64,
    pub mc_max_samples: u64,
    pub mc_seed: u64,
}

impl Default for OracleBackend {
    fn default() -> Self {
        OracleBackend {
            mode: BackendMode::Exact,
            exact_limit: DEFAULT_EXACT_LIMIT,
            mc_tolerance: DEFAULT_MC_TOLERANCE,
            mc_max_samples: DEFAULT_MC_MAX_SAMPLES,
            mc_seed: 0,
        }
    }
}

impl OracleBackend {
    pub fn exact() -> Self {
        Self::default()
    }

    pub fn monte_carlo(mc_seed: u64, mc_tolerance: f64) -> Self {
        OracleBackend {
            mode: BackendMode::MonteCarlo,
            mc_seed,
            mc_tolerance,
            ..Self::default()
        }
    }

    pub fn with_mode(mut self, mode: BackendMode) -> Self {
        self.mode = mode;
        self
    }
}

/// One threshold question: `P(ε_target = 1 | ε_S = η, 0 ↔ ∂Λₙ)` where `η`
/// is the revealed part of `revealed`.
#[derive(Debug, Clone)]
pub struct CondQuery {
    pub target: Site,
    pub revealed: PartialConfig,
    pub arm_radius: u32,
    pub p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CondProb {
    pub value: f64,
    pub exact: bool,
    /// 95% half-width of the Monte-Carlo estimate.
    pub ci_halfwidth: Option<f64>,
    /// Accepted completions behind a Monte-Carlo estimate.
    pub samples: u64,
    /// Raw Monte-Carlo ratio before projection onto `[p, 1]`.
    pub raw: f64,
}

impl CondProb {
    fn exact(value: f64) -> Self {
        CondProb {
            value,
            exact: true,
            ci_halfwidth: None,
            samples: 0,
            raw: value,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleStats {
    pub exact_evaluations: u64,
    pub mc_evaluations: u64,
    pub cache_hits: u64,
    /// Smallest `value - p` over all exact evaluations (`+inf` if none).
    pub min_exact_margin: f64,
    pub fkg_violations: u64,
}

impl Default for OracleStats {
    fn default() -> Self {
        OracleStats {
            exact_evaluations: 0,
            mc_evaluations: 0,
            cache_hits: 0,
            min_exact_margin: f64::INFINITY,
            fkg_violations: 0,
        }
    }
}

impl OracleStats {
    pub fn merge(&mut self, other: &OracleStats) {
        self.exact_evaluations += other.exact_evaluations;
        self.mc_evaluations += other.mc_evaluations;
        self.cache_hits += other.cache_hits;
        self.min_exact_margin = self.min_exact_margin.min(other.min_exact_margin);
        self.fkg_violations += other.fkg_violations;
    }
}

type CacheKey = (u64, u64, u32);

/// Memoizing threshold oracle for the arm event at one radius and one `p`.
///
/// Results are pure functions of the query (Monte-Carlo streams are keyed by
/// the query itself), so the cache never changes what a caller observes and
/// the oracle can be shared across threads.
#[derive(Debug)]
pub struct ArmOracle {
    p: f64,
    backend: OracleBackend,
    mask: MaskBall,
    origin: u64,
    cache: RwLock<HashMap<CacheKey, CondProb>>,
    stats: Mutex<OracleStats>,
}

impl ArmOracle {
    pub fn new(radius: u32, p: f64, backend: OracleBackend) -> Result<Self, OracleError> {
        check_probability(p)?;
        let mask = MaskBall::new(radius)?;
        let origin = mask.origin_bit();
        Ok(ArmOracle {
            p,
            backend,
            mask,
            origin,
            cache: RwLock::new(HashMap::new()),
            stats: Mutex::new(OracleStats::default()),
        })
    }

    pub fn radius(&self) -> u32 {
        self.mask.radius()
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn backend(&self) -> &OracleBackend {
        &self.backend
    }

    pub fn mask_ball(&self) -> &MaskBall {
        &self.mask
    }

    pub fn stats(&self) -> OracleStats {
        *self.stats.lock()
    }

    pub fn cache_len(&self) -> usize {
        self.cache.read().len()
    }

    /// Threshold for the site at `target` given the revealed part of
    /// `revealed`, which may live on any ball contained in `Λₙ`.
    pub fn cond_prob(
        &self,
        target: Site,
        revealed: &PartialConfig,
    ) -> Result<CondProb, OracleError> {
        if revealed.ball().radius() > self.radius() {
            return Err(OracleError::InvalidQuery(format!(
                "configuration radius {} exceeds arm radius {}",
                revealed.ball().radius(),
                self.radius()
            )));
        }
        let index = self.mask.ball().index_of(target).ok_or_else(|| {
            OracleError::InvalidQuery(format!("target {target} outside the ball"))
        })?;
        let (rev, black) = self.mask.masks_of(revealed);
        self.threshold(rev, black, index as u32)
    }

    /// Mask-level entry point: `revealed`/`black` in this oracle's ball.
    pub fn threshold(
        &self,
        revealed: u64,
        black: u64,
        target: u32,
    ) -> Result<CondProb, OracleError> {
        let bit = 1u64 << target;
        if revealed & bit != 0 {
            return Err(OracleError::InvalidQuery(
                "target is already revealed".into(),
            ));
        }
        let black = black & revealed;
        let key = (revealed, black, target);
        if let Some(hit) = self.cache.read().get(&key) {
            self.stats.lock().cache_hits += 1;
            return Ok(*hit);
        }
        let unrevealed = self.mask.len() - revealed.count_ones() as usize;
        let use_exact = match self.backend.mode {
            BackendMode::Exact => {
                if unrevealed > self.backend.exact_limit {
                    return Err(OracleError::CapacityExceeded {
                        unrevealed,
                        limit: self.backend.exact_limit,
                    });
                }
                true
            }
            BackendMode::MonteCarlo => false,
            BackendMode::Auto => unrevealed <= self.backend.exact_limit,
        };
        let result = if use_exact {
            let value = self.exact_threshold(revealed, black, bit)?;
            let mut stats = self.stats.lock();
            stats.exact_evaluations += 1;
            stats.min_exact_margin = stats.min_exact_margin.min(value - self.p);
            let slack = if self.p == 0.5 { 0.0 } else { FKG_TOLERANCE };
            if value < self.p - slack {
                stats.fkg_violations += 1;
                return Err(OracleError::FkgViolation { value, p: self.p });
            }
            CondProb::exact(value)
        } else {
            let r = self.mc_threshold(revealed, black, bit)?;
            self.stats.lock().mc_evaluations += 1;
            r
        };
        self.cache.write().insert(key, result);
        Ok(result)
    }

    fn exact_threshold(&self, revealed: u64, black: u64, bit: u64) -> Result<f64, OracleError> {
        let n = self.radius();
        if bit == self.origin || n == 0 {
            // The arm never looks at the origin.
            if n > 0 && !self.mask.one_arm(black | (!revealed & self.mask.full()), n) {
                return Err(OracleError::IncompatibleConditioning { radius: n });
            }
            return Ok(self.p);
        }
        let free = self.mask.full() & !revealed & !bit & !self.origin;
        let with_target = self.p * arm_weight(&self.mask, n, self.p, black | bit, free);
        let without = (1.0 - self.p) * arm_weight(&self.mask, n, self.p, black, free);
        let total = with_target + without;
        if total == 0.0 {
            return Err(OracleError::IncompatibleConditioning { radius: n });
        }
        Ok(with_target / total)
    }

    fn mc_threshold(&self, revealed: u64, black: u64, bit: u64) -> Result<CondProb, OracleError> {
        let n = self.radius();
        let open = self.mask.full() & !revealed;
        if n > 0 && !self.mask.one_arm(black | open, n) {
            return Err(OracleError::IncompatibleConditioning { radius: n });
        }
        if bit == self.origin || n == 0 {
            return Ok(CondProb::exact(self.p));
        }
        let free_sites: Vec<Site> = bits(open & !self.origin)
            .map(|i| self.mask.ball().site(i))
            .collect();
        let free_bits: Vec<u64> = bits(open & !self.origin).map(|i| 1u64 << i).collect();
        let key = mix64(revealed)
            ^ mix64(black.rotate_left(17))
            ^ mix64(bit ^ ((n as u64) << 58))
            ^ self.p.to_bits();
        let mut rng = Stream::new(self.backend.mc_seed).substream(key).rng();
        let (mut attempts, mut accepted, mut hits) = (0u64, 0u64, 0u64);
        while attempts < self.backend.mc_max_samples {
            attempts += 1;
            let mut sample = black;
            for (s, b) in free_sites.iter().zip(&free_bits) {
                let _ = s;
                if rng.uniform() <= self.p {
                    sample |= b;
                }
            }
            if self.mask.one_arm(sample, n) {
                accepted += 1;
                hits += (sample & bit != 0) as u64;
            }
            if attempts % 256 == 0 && accepted >= 64 {
                let q = hits as f64 / accepted as f64;
                if Z95 * (q * (1.0 - q) / accepted as f64).sqrt() <= self.backend.mc_tolerance {
                    break;
                }
            }
        }
        if accepted == 0 {
            return Err(OracleError::RetryLimitExceeded { attempts });
        }
        let raw = hits as f64 / accepted as f64;
        Ok(CondProb {
            // The true threshold is at least p; project the estimate there.
            value: raw.max(self.p),
            exact: false,
            ci_halfwidth: Some(Z95 * (raw * (1.0 - raw) / accepted as f64).sqrt()),
            samples: accepted,
            raw,
        })
    }
}

fn bits(mut mask: u64) -> impl Iterator<Item = usize> {
    std::iter::from_fn(move || {
        if mask == 0 {
            None
        } else {
            let i = mask.trailing_zeros() as usize;
            mask &= mask - 1;
            Some(i)
        }
    })
}

/// `Σ_{completions of free} weight · 1{0 ↔ ∂Λₙ}` with `black` fixed, where
/// the weights of the free sites sum to one.
pub fn arm_weight(mask: &MaskBall, n: u32, p: f64, black: u64, free: u64) -> f64 {
    if mask.one_arm(black, n) {
        return 1.0;
    }
    if free == 0 || !mask.one_arm(black | free, n) {
        return 0.0;
    }
    let bit = free & free.wrapping_neg();
    let rest = free & !bit;
    p * arm_weight(mask, n, p, black | bit, rest) + (1.0 - p) * arm_weight(mask, n, p, black, rest)
}

/// One-shot threshold computation.
pub fn cond_prob(query: &CondQuery, backend: &OracleBackend) -> Result<CondProb, OracleError> {
    if query.revealed.get(query.target) != Some(crate::configuration::State::Unrevealed)
        && query.revealed.get(query.target).is_some()
    {
        return Err(OracleError::InvalidQuery(
            "target is already revealed".into(),
        ));
    }
    ArmOracle::new(query.arm_radius, query.p, *backend)?.cond_prob(query.target, &query.revealed)
}

/// Law of the colors of a finite region, as a table over `2^|region|` atoms.
/// Bit `j` of an atom index is set when `sites[j]` is black.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalTable {
    pub sites: Vec<Site>,
    pub probs: Vec<f64>,
}

impl MarginalTable {
    pub fn atom_of(&self, config: &PartialConfig) -> usize {
        self.sites.iter().enumerate().fold(0, |acc, (j, s)| {
            acc | ((config.get(*s) == Some(crate::configuration::State::Black)) as usize) << j
        })
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().copied().collect::<KahanSum>().total()
    }

    /// Empirical table from atom counts.
    pub fn from_counts(sites: Vec<Site>, counts: &[u64]) -> Self {
        let n: u64 = counts.iter().sum();
        let probs = counts
            .iter()
            .map(|&c| if n == 0 { 0.0 } else { c as f64 / n as f64 })
            .collect();
        MarginalTable { sites, probs }
    }

    /// Product Bernoulli(p) law on the same sites.
    pub fn product(sites: Vec<Site>, p: f64) -> Self {
        let probs = (0..1usize << sites.len())
            .map(|a| {
                let b = a.count_ones() as i32;
                p.powi(b) * (1.0 - p).powi(sites.len() as i32 - b)
            })
            .collect();
        MarginalTable { sites, probs }
    }

    pub fn tv(&self, other: &MarginalTable) -> f64 {
        assert_eq!(self.sites, other.sites, "tables over different regions");
        crate::numeric::total_variation(&self.probs, &other.probs)
    }
}

/// Largest region for which marginal tables are materialized.
pub const MAX_REGION_SITES: usize = 20;

/// Exact law of `ε_region` under `P(· | 0 ↔ ∂Λₙ)`.
pub fn exact_conditioned_marginal(
    region: &[Site],
    n: u32,
    p: f64,
) -> Result<MarginalTable, OracleError> {
    exact_conditioned_marginal_with_limit(region, n, p, DEFAULT_EXACT_LIMIT)
}

pub fn exact_conditioned_marginal_with_limit(
    region: &[Site],
    n: u32,
    p: f64,
    exact_limit: usize,
) -> Result<MarginalTable, OracleError> {
    check_probability(p)?;
    let size = crate::lattice::ball_size(n);
    if size > exact_limit {
        return Err(OracleError::CapacityExceeded {
            unrevealed: size,
            limit: exact_limit,
        });
    }
    if region.len() > MAX_REGION_SITES {
        return Err(OracleError::InvalidQuery(format!(
            "region of {} sites is too large",
            region.len()
        )));
    }
    let mask = MaskBall::new(n)?;
    let mut region_bits = Vec::with_capacity(region.len());
    let mut region_mask = 0u64;
    for s in region {
        let b = mask
            .bit(*s)
            .ok_or_else(|| OracleError::InvalidQuery(format!("site {s} outside the ball")))?;
        if region_mask & b != 0 {
            return Err(OracleError::InvalidQuery(format!("site {s} repeated")));
        }
        region_mask |= b;
        region_bits.push(b);
    }
    let free = mask.full() & !region_mask & !mask.origin_bit();
    let weights: Vec<f64> = (0..1usize << region.len())
        .map(|atom| {
            let mut black = 0u64;
            let mut w = 1.0;
            for (j, b) in region_bits.iter().enumerate() {
                if atom >> j & 1 == 1 {
                    black |= b;
                    w *= p;
                } else {
                    w *= 1.0 - p;
                }
            }
            if w == 0.0 {
                0.0
            } else {
                w * arm_weight(&mask, n, p, black, free)
            }
        })
        .collect();
    let total = weights.iter().copied().collect::<KahanSum>().total();
    if total == 0.0 {
        return Err(OracleError::IncompatibleConditioning { radius: n });
    }
    Ok(MarginalTable {
        sites: region.to_vec(),
        probs: weights.iter().map(|w| w / total).collect(),
    })
}

#[derive(Debug, Clone)]
pub struct RejectionSample {
    pub config: PartialConfig,
    pub attempts: u64,
}

/// Exact sampler of `P(· | 0 ↔ ∂Λₙ)` by rejection from unconditioned
/// configurations. Attempt `j` reads its uniforms from `stream.substream(j)`.
#[derive(Debug, Clone)]
pub struct RejectionSampler {
    ball: std::sync::Arc<crate::lattice::Ball>,
    mask: Option<MaskBall>,
    n: u32,
    p: f64,
    max_attempts: u64,
}

impl RejectionSampler {
    pub fn new(n: u32, p: f64, max_attempts: u64) -> Result<Self, OracleError> {
        check_probability(p)?;
        let mask = MaskBall::new(n).ok();
        let ball = match &mask {
            Some(m) => std::sync::Arc::clone(m.ball()),
            None => std::sync::Arc::new(crate::lattice::Ball::new(n)?),
        };
        Ok(RejectionSampler {
            ball,
            mask,
            n,
            p,
            max_attempts,
        })
    }

    pub fn ball(&self) -> &std::sync::Arc<crate::lattice::Ball> {
        &self.ball
    }

    /// Black mask of an accepted sample and the number of attempts used.
    /// Requires `n <= 4`.
    pub fn sample_mask(&self, stream: &Stream) -> Result<(u64, u64), OracleError> {
        let mask = self
            .mask
            .as_ref()
            .expect("mask sampling needs a ball of at most 64 sites");
        for attempt in 0..self.max_attempts {
            let s = stream.substream(attempt);
            let black = self
                .ball
                .sites()
                .iter()
                .enumerate()
                .fold(0u64, |acc, (i, site)| {
                    acc | ((s.uniform(site.key()) <= self.p) as u64) << i
                });
            if mask.one_arm(black, self.n) {
                return Ok((black, attempt + 1));
            }
        }
        Err(OracleError::RetryLimitExceeded {
            attempts: self.max_attempts,
        })
    }

    pub fn sample(&self, stream: &Stream) -> Result<RejectionSample, OracleError> {
        if let Some(mask) = &self.mask {
            let (black, attempts) = self.sample_mask(stream)?;
            return Ok(RejectionSample {
                config: mask.config_from_masks(mask.full(), black),
                attempts,
            });
        }
        for attempt in 0..self.max_attempts {
            let s = stream.substream(attempt);
            let states = self
                .ball
                .sites()
                .iter()
                .map(|site| {
                    if s.uniform(site.key()) <= self.p {
                        crate::configuration::State::Black
                    } else {
                        crate::configuration::State::White
                    }
                })
                .collect();
            let config = PartialConfig::from_states(std::sync::Arc::clone(&self.ball), states)?;
            if crate::connectivity::one_arm(&config, self.n) {
                return Ok(RejectionSample {
                    config,
                    attempts: attempt + 1,
                });
            }
        }
        Err(OracleError::RetryLimitExceeded {
            attempts: self.max_attempts,
        })
    }
}

/// One exact sample from `P(· | 0 ↔ ∂Λₙ)` on `Λₙ`.
pub fn sample_conditioned_rejection(
    n: u32,
    p: f64,
    stream: &Stream,
    max_attempts: u64,
) -> Result<RejectionSample, OracleError> {
    RejectionSampler::new(n, p, max_attempts)?.sample(stream)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::configuration::State;
    use crate::lattice::Ball;
    use std::sync::Arc;

    fn ball(n: u32) -> Arc<Ball> {
        Arc::new(Ball::new(n).unwrap())
    }

    /// Plain enumeration over every completion, without pruning.
    fn brute_force(revealed: &PartialConfig, target: Site, n: u32, p: f64) -> Option<f64> {
        let mb = MaskBall::new(n).unwrap();
        let (rev, black) = mb.masks_of(revealed);
        let free: Vec<u64> = bits(mb.full() & !rev).map(|i| 1u64 << i).collect();
        let t = mb.bit(target).unwrap();
        let (mut num, mut den) = (KahanSum::new(), KahanSum::new());
        for c in 0u64..(1 << free.len()) {
            let mut b = black;
            let mut w = 1.0;
            for (j, fb) in free.iter().enumerate() {
                if c >> j & 1 == 1 {
                    b |= fb;
                    w *= p;
                } else {
                    w *= 1.0 - p;
                }
            }
            if mb.one_arm(b, n) {
                den.add(w);
                if b & t != 0 {
                    num.add(w);
                }
            }
        }
        (den.total() > 0.0).then(|| num.total() / den.total())
    }

    #[test]
    fn first_ring_threshold_is_32_over_63() {
        let q = CondQuery {
            target: Site::new(1, 0),
            revealed: PartialConfig::unrevealed(ball(1)),
            arm_radius: 1,
            p: 0.5,
        };
        let r = cond_prob(&q, &OracleBackend::exact()).unwrap();
        assert!(r.exact);
        assert_eq!(r.value, 32.0 / 63.0);
    }

    #[test]
    fn certain_arm_leaves_p() {
        let mut c = PartialConfig::filled(ball(1), State::Black);
        c.set(Site::new(0, 1), State::Unrevealed).unwrap();
        let q = CondQuery {
            target: Site::new(0, 1),
            revealed: c,
            arm_radius: 1,
            p: 0.5,
        };
        assert_eq!(cond_prob(&q, &OracleBackend::exact()).unwrap().value, 0.5);
    }

    #[test]
    fn golden_radius_two_thresholds() {
        // Frozen from an independent brute-force enumeration of 2^18 states.
        let oracle = ArmOracle::new(2, 0.5, OracleBackend::exact()).unwrap();
        let empty = PartialConfig::unrevealed(ball(2));
        let cases = [
            (Site::new(0, -1), 25969.0 / 50627.0),
            (Site::new(0, -2), 127181.0 / 253135.0),
            (Site::new(-1, -1), 25532.0 / 50627.0),
        ];
        for (s, expected) in cases {
            let v = oracle.cond_prob(s, &empty).unwrap().value;
            assert!((v - expected).abs() < 1e-15, "{s}: {v} vs {expected}");
        }
    }

    #[test]
    fn incompatible_conditioning_is_reported() {
        let mut c = PartialConfig::unrevealed(ball(2));
        for s in Site::ORIGIN.neighbors() {
            c.set(s, State::White).unwrap();
        }
        let q = CondQuery {
            target: Site::new(2, 0),
            revealed: c,
            arm_radius: 2,
            p: 0.5,
        };
        assert!(matches!(
            cond_prob(&q, &OracleBackend::exact()),
            Err(OracleError::IncompatibleConditioning { .. })
        ));
    }

    #[test]
    fn exact_limit_is_enforced() {
        let backend = OracleBackend {
            exact_limit: 10,
            ..OracleBackend::exact()
        };
        let q = CondQuery {
            target: Site::new(1, 0),
            revealed: PartialConfig::unrevealed(ball(2)),
            arm_radius: 2,
            p: 0.5,
        };
        assert!(matches!(
            cond_prob(&q, &backend),
            Err(OracleError::CapacityExceeded {
                unrevealed: 19,
                limit: 10
            })
        ));
        // Radius 3 needs 37 free sites, past the default limit.
        let q3 = CondQuery {
            target: Site::new(1, 0),
            revealed: PartialConfig::unrevealed(ball(3)),
            arm_radius: 3,
            p: 0.5,
        };
        assert!(matches!(
            cond_prob(&q3, &OracleBackend::exact()),
            Err(OracleError::CapacityExceeded { .. })
        ));
    }

    #[test]
    fn pruned_enumeration_matches_brute_force() {
        let mut rng = Stream::new(31).rng();
        for p in [0.5, 0.3, 0.8] {
            let oracle = ArmOracle::new(2, p, OracleBackend::exact()).unwrap();
            let mb = oracle.mask_ball().clone();
            let mut checked = 0;
            while checked < 150 {
                let revealed = rng.next_u64() & rng.next_u64() & mb.full();
                let black = rng.next_u64() & revealed;
                let open = mb.full() & !revealed;
                if open == 0 {
                    continue;
                }
                let target = bits(open)
                    .nth(rng.below(open.count_ones() as u64) as usize)
                    .unwrap();
                let config = mb.config_from_masks(revealed, black);
                let site = mb.ball().site(target);
                match (
                    oracle.cond_prob(site, &config),
                    brute_force(&config, site, 2, p),
                ) {
                    (Ok(v), Some(b)) => {
                        assert!((v.value - b).abs() < 1e-12);
                        checked += 1;
                    }
                    (Err(OracleError::IncompatibleConditioning { .. }), None) => {}
                    (a, b) => panic!("mismatch {a:?} vs {b:?}"),
                }
            }
            assert_eq!(oracle.stats().fkg_violations, 0);
        }
    }

    #[test]
    fn fkg_lower_bound_on_random_queries() {
        let mut rng = Stream::new(2).rng();
        for p in [0.5, 0.2, 0.9] {
            let oracle = ArmOracle::new(2, p, OracleBackend::exact()).unwrap();
            let mb = oracle.mask_ball().clone();
            for _ in 0..2_000 {
                let revealed = rng.next_u64() & rng.next_u64() & mb.full();
                let black = rng.next_u64() & revealed;
                let open = mb.full() & !revealed;
                if open == 0 {
                    continue;
                }
                let target = open.trailing_zeros();
                match oracle.threshold(revealed, black, target) {
                    Ok(v) => assert!(v.value >= p - FKG_TOLERANCE),
                    Err(OracleError::IncompatibleConditioning { .. }) => {}
                    Err(e) => panic!("{e}"),
                }
            }
            let stats = oracle.stats();
            assert_eq!(stats.fkg_violations, 0);
            if p == 0.5 {
                assert!(stats.min_exact_margin >= 0.0);
            }
        }
    }

    #[test]
    fn martingale_consistency() {
        // Revealing one more site and averaging over its outcome reproduces
        // the earlier threshold.
        let mut rng = Stream::new(13).rng();
        let oracle = ArmOracle::new(2, 0.5, OracleBackend::exact()).unwrap();
        let mb = oracle.mask_ball().clone();
        let mut done = 0;
        while done < 1_000 {
            let revealed = rng.next_u64() & rng.next_u64() & mb.full();
            let black = rng.next_u64() & revealed;
            let open: Vec<usize> = bits(mb.full() & !revealed).collect();
            if open.len() < 2 {
                continue;
            }
            let x = open[rng.below(open.len() as u64) as usize] as u32;
            let y = loop {
                let y = open[rng.below(open.len() as u64) as usize] as u32;
                if y != x {
                    break y;
                }
            };
            let Ok(before) = oracle.threshold(revealed, black, x) else {
                continue;
            };
            let py = oracle.threshold(revealed, black, y).unwrap().value;
            let rev2 = revealed | 1 << y;
            let after_black = oracle.threshold(rev2, black | 1 << y, x).map(|c| c.value);
            let after_white = oracle.threshold(rev2, black, x).map(|c| c.value);
            let avg = match (after_black, after_white) {
                (Ok(b), Ok(w)) => py * b + (1.0 - py) * w,
                (Ok(b), Err(_)) => b,
                (Err(_), Ok(w)) => w,
                _ => unreachable!("one branch must be compatible"),
            };
            assert!((avg - before.value).abs() < 1e-12);
            done += 1;
        }
    }

    #[test]
    fn monte_carlo_close_to_exact() {
        let exact = ArmOracle::new(2, 0.5, OracleBackend::exact()).unwrap();
        let mc = ArmOracle::new(2, 0.5, OracleBackend::monte_carlo(5, 1e-2)).unwrap();
        let mut rng = Stream::new(77).rng();
        let mb = exact.mask_ball().clone();
        let mut compared = 0;
        while compared < 100 {
            let revealed = rng.next_u64() & rng.next_u64() & rng.next_u64() & mb.full();
            let black = rng.next_u64() & revealed;
            let open = mb.full() & !revealed & !mb.origin_bit();
            if open == 0 {
                continue;
            }
            let t = open.trailing_zeros();
            let Ok(e) = exact.threshold(revealed, black, t) else {
                continue;
            };
            let m = mc.threshold(revealed, black, t).unwrap();
            assert!(!m.exact);
            let sigma = m.ci_halfwidth.unwrap() / Z95;
            assert!(
                (m.raw - e.value).abs() <= 4.0 * sigma.max(1e-9),
                "{} vs {}",
                m.raw,
                e.value
            );
            assert!(m.value >= 0.5);
            compared += 1;
        }
        // Replaying a query gives the identical estimate.
        let fresh = ArmOracle::new(2, 0.5, OracleBackend::monte_carlo(5, 1e-2)).unwrap();
        let q = (
            mb.ring(2),
            mb.ring(2) & !mb.ring(2).wrapping_neg(),
            mb.ring(1).trailing_zeros(),
        );
        assert_eq!(
            fresh.threshold(q.0, q.1, q.2).unwrap(),
            mc.threshold(q.0, q.1, q.2).unwrap()
        );
    }

    #[test]
    fn marginal_edge_cases() {
        let empty = exact_conditioned_marginal(&[], 2, 0.5).unwrap();
        assert_eq!(empty.probs, vec![1.0]);
        for n in 0..=2 {
            let origin = exact_conditioned_marginal(&[Site::ORIGIN], n, 0.3).unwrap();
            assert!((origin.probs[1] - 0.3).abs() < 1e-15);
        }
        let ring: Vec<Site> = Site::ORIGIN.neighbors().to_vec();
        let t = exact_conditioned_marginal(&ring, 1, 0.5).unwrap();
        assert_eq!(t.probs[0], 0.0);
        assert!((t.total() - 1.0).abs() < 1e-12);
        assert!(matches!(
            exact_conditioned_marginal(&ring, 3, 0.5),
            Err(OracleError::CapacityExceeded { .. })
        ));
    }

    #[test]
    fn marginal_matches_brute_force_table() {
        // Full enumeration of Ball(2) as an independent oracle.
        let b = ball(2);
        let mb = MaskBall::new(2).unwrap();
        let region: Vec<Site> = b
            .sites()
            .iter()
            .copied()
            .filter(|s| s.norm() <= 1)
            .collect();
        let idx: Vec<usize> = region.iter().map(|s| b.index_of(*s).unwrap()).collect();
        let p: f64 = 0.4;
        let mut table = vec![KahanSum::new(); 1 << region.len()];
        let mut total = KahanSum::new();
        for cfg in 0u64..(1 << b.len()) {
            if !mb.one_arm(cfg, 2) {
                continue;
            }
            let k = cfg.count_ones() as i32;
            let w = p.powi(k) * (1.0 - p).powi(b.len() as i32 - k);
            let atom = idx
                .iter()
                .enumerate()
                .fold(0, |a, (j, &i)| a | ((cfg >> i & 1) as usize) << j);
            table[atom].add(w);
            total.add(w);
        }
        let got = exact_conditioned_marginal(&region, 2, p).unwrap();
        for (a, k) in table.iter().enumerate() {
            assert!((got.probs[a] - k.total() / total.total()).abs() < 1e-13);
        }
        assert!((got.total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejection_sampler_contract() {
        let s = sample_conditioned_rejection(3, 1.0, &Stream::new(1), 10).unwrap();
        assert_eq!(s.attempts, 1);
        assert!(s.config.states().iter().all(|x| *x == State::Black));

        let sampler = RejectionSampler::new(1, 0.5, DEFAULT_RETRY_LIMIT).unwrap();
        let runs = 100_000u64;
        let mut attempts = 0u64;
        for r in 0..runs {
            let (black, a) = sampler.sample_mask(&Stream::new(9).substream(r)).unwrap();
            assert!(MaskBall::new(1).unwrap().one_arm(black, 1));
            attempts += a;
        }
        let rate = runs as f64 / attempts as f64;
        let expected = 63.0 / 64.0;
        let sigma = (expected * (1.0 - expected) / attempts as f64).sqrt();
        assert!((rate - expected).abs() <= 3.0 * sigma, "rate {rate}");
    }

    #[test]
    fn rejection_on_large_ball_uses_generic_path() {
        let s = sample_conditioned_rejection(6, 0.5, &Stream::new(3), DEFAULT_RETRY_LIMIT).unwrap();
        assert!(crate::connectivity::one_arm(&s.config, 6));
        assert!(s.config.is_fully_revealed());
        assert!(matches!(
            sample_conditioned_rejection(2, 0.0, &Stream::new(3), 50),
            Err(OracleError::RetryLimitExceeded { attempts: 50 })
        ));
    }

    #[test]
    fn marginal_matches_rejection_sampler() {
        let region: Vec<Site> = Ball::new(1).unwrap().sites().to_vec();
        let exact = exact_conditioned_marginal(&region, 1, 0.5).unwrap();
        let sampler = RejectionSampler::new(1, 0.5, DEFAULT_RETRY_LIMIT).unwrap();
        let mut counts = vec![0u64; 128];
        let samples = 1_000_000u64;
        let stream = Stream::new(42);
        for r in 0..samples {
            let (black, _) = sampler.sample_mask(&stream.substream(r)).unwrap();
            // Region is the whole ball in canonical order, so atom = mask.
            counts[black as usize] += 1;
        }
        let empirical = MarginalTable::from_counts(region, &counts);
        assert!(exact.tv(&empirical) <= 0.005, "tv {}", exact.tv(&empirical));
    }
}
