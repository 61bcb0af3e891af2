//! The exploration coupling of `ω`, `ω⁽ᵐ⁾` and `ω⁽ⁿ⁾`.
//!
//! All three configurations on `Λ_m` are driven by the same uniforms. Sites
//! are revealed one at a time, white-frontier first: while some unrevealed
//! site is white-connected to `∂Λ_m` in `ω`, the canonically smallest such
//! site is next; otherwise the canonically smallest unrevealed site. The
//! stopping time `τ` is the first step with an empty frontier.

use std::collections::BTreeSet;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::configuration::{check_probability, Color, PartialConfig};
use crate::connectivity::mask::MaskBall;
use crate::error::{CouplingError, OracleError};
use crate::lattice::{circles_around, verify_circuit, vertex_boundary, Circuit, Site};
use crate::oracle::{ArmOracle, BackendMode, OracleBackend, OracleStats};
use crate::rng::UniformField;

/// Largest gap tolerated between the two thresholds inside the unexplored
/// island in exact mode.
pub const MARKOV_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub step: usize,
    pub site: Site,
    pub u: f64,
    pub thr_m: f64,
    pub thr_n: f64,
    pub omega: Color,
    pub omega_m: Color,
    pub omega_n: Color,
}

/// Exploration in progress. Masks are over `Λ_m`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplorationState {
    pub order: Vec<Site>,
    pub revealed: u64,
    pub omega: u64,
    pub omega_m: u64,
    pub omega_n: u64,
    pub frontier: u64,
    pub tau: Option<usize>,
    /// Revealed set at `τ`.
    pub revealed_at_tau: u64,
    pub trace: Vec<TraceEntry>,
    pub markov_checks: u64,
    pub markov_violations: u64,
    pub max_markov_gap: f64,
    island: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingOutcome {
    pub k: u32,
    pub m: u32,
    pub n: u32,
    pub order: Vec<Site>,
    /// Black masks over `Λ_m` in canonical index order.
    pub omega: u64,
    pub omega_m: u64,
    pub omega_n: u64,
    pub tau: usize,
    pub hit: bool,
    pub dual: bool,
    pub gamma: Option<BTreeSet<Site>>,
    pub agree: bool,
    /// Set when any threshold came from the Monte-Carlo backend.
    pub approximate: bool,
    pub markov_checks: u64,
    pub markov_violations: u64,
    pub max_markov_gap: f64,
    pub trace: Vec<TraceEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CouplingOptions {
    pub trace: bool,
    /// Build and verify `Γ` on non-hit runs.
    pub check_circuit: bool,
}

impl Default for CouplingOptions {
    fn default() -> Self {
        CouplingOptions {
            trace: false,
            check_circuit: true,
        }
    }
}

/// Reusable coupling machinery for fixed `(k, m, n, p)`; oracles (and their
/// caches) are shared by every replica run through the engine.
#[derive(Debug)]
pub struct CouplingEngine {
    k: u32,
    m: u32,
    n: u32,
    p: f64,
    mask: MaskBall,
    oracle_m: Arc<ArmOracle>,
    oracle_n: Arc<ArmOracle>,
    /// Bit of each `Λ_m` site inside `Λ_n`.
    embed: Vec<u32>,
    options: CouplingOptions,
}

impl CouplingEngine {
    pub fn new(
        k: u32,
        m: u32,
        n: u32,
        p: f64,
        backend: OracleBackend,
    ) -> Result<Self, CouplingError> {
        if !(k <= m && m <= n) {
            return Err(CouplingError::InvalidRadii { k, m, n });
        }
        check_probability(p).map_err(OracleError::from)?;
        let oracle_n = Arc::new(ArmOracle::new(n, p, backend)?);
        let oracle_m = if m == n {
            Arc::clone(&oracle_n)
        } else {
            Arc::new(ArmOracle::new(m, p, backend)?)
        };
        let mask = MaskBall::from_ball(Arc::clone(oracle_m.mask_ball().ball()));
        let big = oracle_n.mask_ball().ball();
        let embed = mask
            .ball()
            .sites()
            .iter()
            .map(|s| big.index_of(*s).expect("Λ_m ⊆ Λ_n") as u32)
            .collect();
        Ok(CouplingEngine {
            k,
            m,
            n,
            p,
            mask,
            oracle_m,
            oracle_n,
            embed,
            options: CouplingOptions::default(),
        })
    }

    pub fn with_options(mut self, options: CouplingOptions) -> Self {
        self.options = options;
        self
    }

    pub fn radii(&self) -> (u32, u32, u32) {
        (self.k, self.m, self.n)
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn mask_ball(&self) -> &MaskBall {
        &self.mask
    }

    /// Whether some threshold may come from the Monte-Carlo backend.
    pub fn approximate(&self) -> bool {
        let backend = self.oracle_n.backend();
        match backend.mode {
            BackendMode::Exact => false,
            BackendMode::MonteCarlo => true,
            BackendMode::Auto => self.oracle_n.mask_ball().len() > backend.exact_limit,
        }
    }

    pub fn oracle_stats(&self) -> OracleStats {
        let mut s = self.oracle_n.stats();
        if !Arc::ptr_eq(&self.oracle_m, &self.oracle_n) {
            s.merge(&self.oracle_m.stats());
        }
        s
    }

    fn embed_mask(&self, mut mask: u64) -> u64 {
        let mut out = 0;
        while mask != 0 {
            let i = mask.trailing_zeros() as usize;
            out |= 1 << self.embed[i];
            mask &= mask - 1;
        }
        out
    }

    pub fn start(&self) -> ExplorationState {
        ExplorationState {
            order: Vec::with_capacity(self.mask.len()),
            revealed: 0,
            omega: 0,
            omega_m: 0,
            omega_n: 0,
            frontier: self.mask.ring(self.m),
            tau: None,
            revealed_at_tau: 0,
            trace: Vec::new(),
            markov_checks: 0,
            markov_violations: 0,
            max_markov_gap: 0.0,
            island: 0,
        }
    }

    /// Index of the next site to reveal.
    pub fn next_index(&self, state: &ExplorationState) -> Result<u32, CouplingError> {
        let pool = if state.frontier != 0 {
            state.frontier
        } else {
            self.mask.full() & !state.revealed
        };
        if pool == 0 {
            return Err(CouplingError::Exhausted);
        }
        Ok(pool.trailing_zeros())
    }

    pub fn next_site(&self, state: &ExplorationState) -> Result<Site, CouplingError> {
        Ok(self.mask.ball().site(self.next_index(state)? as usize))
    }

    pub fn reveal_step(
        &self,
        state: &mut ExplorationState,
        field: &UniformField,
    ) -> Result<(), CouplingError> {
        let x = self.next_index(state)?;
        let bit = 1u64 << x;
        let site = self.mask.ball().site(x as usize);
        let u = field.uniform(site);
        let thr_m = self
            .oracle_m
            .threshold(state.revealed, state.omega_m, x)?
            .value;
        let thr_n = if Arc::ptr_eq(&self.oracle_m, &self.oracle_n) && state.omega_m == state.omega_n
        {
            thr_m
        } else {
            self.oracle_n
                .threshold(
                    self.embed_mask(state.revealed),
                    self.embed_mask(state.omega_n),
                    self.embed[x as usize],
                )?
                .value
        };
        let step = state.order.len() + 1;

        if state.island & bit != 0 {
            state.markov_checks += 1;
            let gap = (thr_m - thr_n).abs();
            state.max_markov_gap = state.max_markov_gap.max(gap);
            if gap > MARKOV_TOLERANCE {
                state.markov_violations += 1;
                if !self.approximate() {
                    return Err(CouplingError::CircuitInvariantViolation(format!(
                        "thresholds differ by {gap:e} at {site} inside the island (step {step})"
                    )));
                }
            }
        }

        let b = u <= self.p;
        let bm = u <= thr_m;
        let bn = u <= thr_n;
        if b && !(bm && bn) {
            return Err(CouplingError::DominanceViolation(site));
        }
        state.revealed |= bit;
        state.omega |= (b as u64) << x;
        state.omega_m |= (bm as u64) << x;
        state.omega_n |= (bn as u64) << x;
        state.order.push(site);
        if self.options.trace {
            let color = |black: bool| if black { Color::Black } else { Color::White };
            state.trace.push(TraceEntry {
                step,
                site,
                u,
                thr_m,
                thr_n,
                omega: color(b),
                omega_m: color(bm),
                omega_n: color(bn),
            });
        }

        state.frontier = self
            .mask
            .white_reachable(state.revealed, state.omega, self.m);
        match state.tau {
            None if state.frontier == 0 => {
                state.tau = Some(step);
                state.revealed_at_tau = state.revealed;
                let hit = state.revealed & self.mask.disc(self.k) != 0;
                if !hit {
                    state.island = self
                        .mask
                        .flood(self.mask.origin_bit(), self.mask.full() & !state.revealed);
                }
            }
            Some(_) if state.frontier != 0 => return Err(CouplingError::FrontierReopened(step)),
            _ => {}
        }
        Ok(())
    }

    /// Runs one replica to the exhaustion of `Λ_m`.
    pub fn run(&self, field: &UniformField) -> Result<CouplingOutcome, CouplingError> {
        let mut state = self.start();
        while state.revealed != self.mask.full() {
            self.reveal_step(&mut state, field)?;
        }
        self.finish(state)
    }

    fn finish(&self, state: ExplorationState) -> Result<CouplingOutcome, CouplingError> {
        let tau = state.tau.ok_or_else(|| {
            CouplingError::CircuitInvariantViolation("frontier never emptied".into())
        })?;
        let inner = self.mask.disc(self.k);
        let hit = state.revealed_at_tau & inner != 0;
        let white = self.mask.full() & !state.omega;
        let dual = self.mask.dual_arm(white, self.k, self.m);
        let gamma = if !hit && self.options.check_circuit {
            Some(self.extract_circuit(&state)?.sites)
        } else {
            None
        };
        let agree = state.omega_m & inner == state.omega_n & inner;
        Ok(CouplingOutcome {
            k: self.k,
            m: self.m,
            n: self.n,
            order: state.order,
            omega: state.omega,
            omega_m: state.omega_m,
            omega_n: state.omega_n,
            tau,
            hit,
            dual,
            gamma,
            agree,
            approximate: self.approximate(),
            markov_checks: state.markov_checks,
            markov_violations: state.markov_violations,
            max_markov_gap: state.max_markov_gap,
            trace: state.trace,
        })
    }

    /// `Γ = ∂C` for the island `C` of the origin in `Λ_m \ X_[τ]`, with every
    /// property the coupling relies on checked.
    pub fn extract_circuit(&self, state: &ExplorationState) -> Result<Circuit, CouplingError> {
        let violation = |msg: String| CouplingError::CircuitInvariantViolation(msg);
        if state.tau.is_none() {
            return Err(violation("τ not reached".into()));
        }
        let at_tau = state.revealed_at_tau;
        if at_tau & self.mask.disc(self.k) != 0 {
            return Err(violation("exploration reached Λ_k before τ".into()));
        }
        let island = self
            .mask
            .flood(self.mask.origin_bit(), self.mask.full() & !at_tau);
        let ball = self.mask.ball();
        let c: BTreeSet<Site> = bits(island).map(|i| ball.site(i)).collect();
        let gamma = vertex_boundary(&c);
        for s in &gamma {
            let Some(b) = self.mask.bit(*s) else {
                return Err(violation(format!("{s} of Γ lies outside Λ_m")));
            };
            if at_tau & b == 0 {
                return Err(violation(format!("{s} of Γ unrevealed at τ")));
            }
            // ω ≤ ω⁽ᵐ⁾, ω⁽ⁿ⁾, so checking all three is a consistency check.
            if state.omega & state.omega_m & state.omega_n & b == 0 {
                return Err(violation(format!(
                    "{s} of Γ is not black in all three configurations"
                )));
            }
        }
        let circuit = verify_circuit(&gamma, self.m + 2)?;
        if circuit.interior != c {
            return Err(violation("interior of Γ differs from the island".into()));
        }
        let lambda_k: BTreeSet<Site> = bits(self.mask.disc(self.k)).map(|i| ball.site(i)).collect();
        if !circles_around(&circuit, &lambda_k) {
            return Err(violation("Γ does not circle Λ_k".into()));
        }
        Ok(circuit)
    }
}

fn bits(mut mask: u64) -> impl Iterator<Item = usize> {
    std::iter::from_fn(move || {
        (mask != 0).then(|| {
            let i = mask.trailing_zeros() as usize;
            mask &= mask - 1;
            i
        })
    })
}

impl CouplingOutcome {
    fn config(&self, black: u64) -> PartialConfig {
        MaskBall::new(self.m)
            .expect("radius fits a mask")
            .config_from_masks(u64::MAX, black)
    }

    pub fn omega_config(&self) -> PartialConfig {
        self.config(self.omega)
    }

    pub fn omega_m_config(&self) -> PartialConfig {
        self.config(self.omega_m)
    }

    pub fn omega_n_config(&self) -> PartialConfig {
        self.config(self.omega_n)
    }

    pub fn dominated(&self) -> bool {
        self.omega & !self.omega_m == 0 && self.omega & !self.omega_n == 0
    }

    /// `hit ⟺ dual`, and without a hit the two conditioned configurations
    /// coincide on `Λ_k`.
    pub fn consistent(&self) -> bool {
        self.hit == self.dual && (self.hit || self.agree)
    }
}

/// Replicas per parallel work unit.
pub const REPLICA_SHARD: u64 = 1024;

/// Counters over many coupling replicas, plus the joint laws of the three
/// configurations on a small region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingSummary {
    pub k: u32,
    pub m: u32,
    pub n: u32,
    pub replicas: u64,
    pub hits: u64,
    pub duals: u64,
    /// Replicas with `ω⁽ᵐ⁾ = ω⁽ⁿ⁾` on `Λ_k`.
    pub agree: u64,
    pub non_hit: u64,
    /// Replicas with `hit ≠ dual`.
    pub event_mismatches: u64,
    /// Non-hit replicas where `ω⁽ᵐ⁾ ≠ ω⁽ⁿ⁾` on `Λ_k`.
    pub coincidence_violations: u64,
    pub circuits_verified: u64,
    pub dominance_failures: u64,
    pub markov_checks: u64,
    pub markov_violations: u64,
    pub max_markov_gap: f64,
    pub approximate: bool,
    #[serde(skip)]
    pub region: Vec<Site>,
    #[serde(skip)]
    pub counts_omega: Vec<u64>,
    #[serde(skip)]
    pub counts_m: Vec<u64>,
    #[serde(skip)]
    pub counts_n: Vec<u64>,
}

impl CouplingSummary {
    pub fn empty(k: u32, m: u32, n: u32, approximate: bool, region: &[Site]) -> Self {
        let atoms = 1usize << region.len();
        CouplingSummary {
            k,
            m,
            n,
            replicas: 0,
            hits: 0,
            duals: 0,
            agree: 0,
            non_hit: 0,
            event_mismatches: 0,
            coincidence_violations: 0,
            circuits_verified: 0,
            dominance_failures: 0,
            markov_checks: 0,
            markov_violations: 0,
            max_markov_gap: 0.0,
            approximate,
            region: region.to_vec(),
            counts_omega: vec![0; atoms],
            counts_m: vec![0; atoms],
            counts_n: vec![0; atoms],
        }
    }

    fn record(&mut self, out: &CouplingOutcome, region_bits: &[u32]) {
        self.replicas += 1;
        self.hits += out.hit as u64;
        self.duals += out.dual as u64;
        self.agree += out.agree as u64;
        self.non_hit += !out.hit as u64;
        self.event_mismatches += (out.hit != out.dual) as u64;
        self.coincidence_violations += (!out.hit && !out.agree) as u64;
        self.circuits_verified += out.gamma.is_some() as u64;
        self.dominance_failures += !out.dominated() as u64;
        self.markov_checks += out.markov_checks;
        self.markov_violations += out.markov_violations;
        self.max_markov_gap = self.max_markov_gap.max(out.max_markov_gap);
        let atom = |black: u64| {
            region_bits
                .iter()
                .enumerate()
                .fold(0usize, |a, (j, &b)| a | ((black >> b & 1) as usize) << j)
        };
        self.counts_omega[atom(out.omega)] += 1;
        self.counts_m[atom(out.omega_m)] += 1;
        self.counts_n[atom(out.omega_n)] += 1;
    }

    pub fn merge(&mut self, other: &CouplingSummary) {
        self.replicas += other.replicas;
        self.hits += other.hits;
        self.duals += other.duals;
        self.agree += other.agree;
        self.non_hit += other.non_hit;
        self.event_mismatches += other.event_mismatches;
        self.coincidence_violations += other.coincidence_violations;
        self.circuits_verified += other.circuits_verified;
        self.dominance_failures += other.dominance_failures;
        self.markov_checks += other.markov_checks;
        self.markov_violations += other.markov_violations;
        self.max_markov_gap = self.max_markov_gap.max(other.max_markov_gap);
        for (a, b) in [
            (&mut self.counts_omega, &other.counts_omega),
            (&mut self.counts_m, &other.counts_m),
            (&mut self.counts_n, &other.counts_n),
        ] {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    /// Every proof-step assertion held on every replica. Coincidence is only
    /// required of exact runs.
    pub fn all_consistent(&self) -> bool {
        self.event_mismatches == 0
            && self.dominance_failures == 0
            && (self.approximate
                || (self.coincidence_violations == 0 && self.markov_violations == 0))
    }
}

impl CouplingEngine {
    /// Runs replicas `range` of `seed` in parallel. `region` must lie in
    /// `Λ_m`; the summary tabulates the three configurations on it.
    pub fn run_replicas(
        &self,
        seed: u64,
        range: std::ops::Range<u64>,
        region: &[Site],
    ) -> Result<CouplingSummary, CouplingError> {
        let region_bits: Vec<u32> = region
            .iter()
            .map(|s| {
                self.mask
                    .ball()
                    .index_of(*s)
                    .map(|i| i as u32)
                    .ok_or_else(|| {
                        CouplingError::CircuitInvariantViolation(format!(
                            "region site {s} outside Λ_m"
                        ))
                    })
            })
            .collect::<Result<_, _>>()?;
        let (k, m, n) = self.radii();
        let empty = CouplingSummary::empty(k, m, n, self.approximate(), region);
        let start = range.start;
        let len = range.end.saturating_sub(start);
        let shards: Vec<Result<CouplingSummary, CouplingError>> = (0..len.div_ceil(REPLICA_SHARD))
            .into_par_iter()
            .map(|shard| {
                let mut summary = empty.clone();
                let lo = start + shard * REPLICA_SHARD;
                for r in lo..(lo + REPLICA_SHARD).min(start + len) {
                    let out = self.run(&UniformField::new(seed, r)).map_err(|e| {
                        CouplingError::Replica {
                            seed,
                            replica: r,
                            source: Box::new(e),
                        }
                    })?;
                    summary.record(&out, &region_bits);
                }
                Ok(summary)
            })
            .collect();
        let mut total = empty;
        for s in shards {
            total.merge(&s?);
        }
        Ok(total)
    }
}

/// One coupling run with a fresh engine.
pub fn run_coupling(
    k: u32,
    m: u32,
    n: u32,
    field: &UniformField,
    p: f64,
    backend: OracleBackend,
) -> Result<CouplingOutcome, CouplingError> {
    CouplingEngine::new(k, m, n, p, backend)?.run(field)
}
