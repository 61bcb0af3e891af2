//! Percolation configurations on a ball, with an explicit unrevealed state.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::connectivity;
use crate::error::ConfigError;
use crate::lattice::{Ball, Site};
use crate::rng::UniformField;

/// Default site-occupation probability (critical for the triangular lattice).
pub const CRITICAL_P: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Color {
    #[serde(rename = "B")]
    Black,
    #[serde(rename = "W")]
    White,
}

impl Color {
    pub fn flip(self) -> Color {
        match self {
            Color::Black => Color::White,
            Color::White => Color::Black,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum State {
    Black,
    White,
    Unrevealed,
}

impl State {
    pub fn color(self) -> Option<Color> {
        match self {
            State::Black => Some(Color::Black),
            State::White => Some(Color::White),
            State::Unrevealed => None,
        }
    }

    pub fn has_color(self, color: Color) -> bool {
        self.color() == Some(color)
    }

    pub fn code(self) -> char {
        match self {
            State::Black => 'B',
            State::White => 'W',
            State::Unrevealed => 'U',
        }
    }
}

impl From<Color> for State {
    fn from(c: Color) -> Self {
        match c {
            Color::Black => State::Black,
            Color::White => State::White,
        }
    }
}

pub fn check_probability(p: f64) -> Result<f64, ConfigError> {
    if (0.0..=1.0).contains(&p) {
        Ok(p)
    } else {
        Err(ConfigError::InvalidProbability(p))
    }
}

/// A coloring of the sites of a ball, where sites may still be unrevealed.
#[derive(Debug, Clone)]
pub struct PartialConfig {
    ball: Arc<Ball>,
    states: Vec<State>,
}

// A ball is determined by its radius.
impl PartialEq for PartialConfig {
    fn eq(&self, other: &Self) -> bool {
        self.ball.radius() == other.ball.radius() && self.states == other.states
    }
}

impl Eq for PartialConfig {}

impl PartialConfig {
    pub fn unrevealed(ball: Arc<Ball>) -> Self {
        Self::filled(ball, State::Unrevealed)
    }

    pub fn filled(ball: Arc<Ball>, state: State) -> Self {
        let states = vec![state; ball.len()];
        PartialConfig { ball, states }
    }

    pub fn from_states(ball: Arc<Ball>, states: Vec<State>) -> Result<Self, ConfigError> {
        if states.len() != ball.len() {
            return Err(ConfigError::LengthMismatch {
                got: states.len(),
                expected: ball.len(),
            });
        }
        Ok(PartialConfig { ball, states })
    }

    /// Parses the compact `B`/`W`/`U` string form, one character per site in
    /// canonical order.
    pub fn from_code_string(ball: Arc<Ball>, code: &str) -> Result<Self, ConfigError> {
        let states = code
            .chars()
            .map(|c| match c {
                'B' => Ok(State::Black),
                'W' => Ok(State::White),
                'U' => Ok(State::Unrevealed),
                other => Err(ConfigError::InvalidState(other)),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_states(ball, states)
    }

    pub fn to_code_string(&self) -> String {
        self.states.iter().map(|s| s.code()).collect()
    }

    pub fn ball(&self) -> &Arc<Ball> {
        &self.ball
    }

    pub fn states(&self) -> &[State] {
        &self.states
    }

    pub fn state_at(&self, index: usize) -> State {
        self.states[index]
    }

    pub fn set_at(&mut self, index: usize, state: State) {
        self.states[index] = state;
    }

    pub fn get(&self, site: Site) -> Option<State> {
        self.ball.index_of(site).map(|i| self.states[i])
    }

    pub fn set(&mut self, site: Site, state: State) -> Result<(), ConfigError> {
        let i = self
            .ball
            .index_of(site)
            .ok_or(ConfigError::SiteOutsideBall(site))?;
        self.states[i] = state;
        Ok(())
    }

    pub fn revealed_set(&self) -> BTreeSet<Site> {
        self.ball
            .sites()
            .iter()
            .zip(&self.states)
            .filter(|(_, s)| **s != State::Unrevealed)
            .map(|(site, _)| *site)
            .collect()
    }

    pub fn count_unrevealed(&self) -> usize {
        self.states
            .iter()
            .filter(|s| **s == State::Unrevealed)
            .count()
    }

    pub fn is_fully_revealed(&self) -> bool {
        self.count_unrevealed() == 0
    }

    /// Keeps the states inside `region` and forgets everything else.
    pub fn restrict(&self, region: &BTreeSet<Site>) -> PartialConfig {
        let states = self
            .ball
            .sites()
            .iter()
            .zip(&self.states)
            .map(|(site, s)| {
                if region.contains(site) {
                    *s
                } else {
                    State::Unrevealed
                }
            })
            .collect();
        PartialConfig {
            ball: Arc::clone(&self.ball),
            states,
        }
    }

    /// Every unrevealed site set to `color`.
    pub fn completed_with(&self, color: Color) -> PartialConfig {
        let states = self
            .states
            .iter()
            .map(|s| {
                if *s == State::Unrevealed {
                    color.into()
                } else {
                    *s
                }
            })
            .collect();
        PartialConfig {
            ball: Arc::clone(&self.ball),
            states,
        }
    }

    /// Black and white exchanged; unrevealed sites stay unrevealed.
    pub fn flipped(&self) -> PartialConfig {
        let states = self
            .states
            .iter()
            .map(|s| match s.color() {
                Some(c) => c.flip().into(),
                None => State::Unrevealed,
            })
            .collect();
        PartialConfig {
            ball: Arc::clone(&self.ball),
            states,
        }
    }

    /// The same coloring viewed on another ball; sites missing from `self`
    /// become unrevealed. Fails if a revealed site does not fit.
    pub fn embed(&self, ball: Arc<Ball>) -> Result<PartialConfig, ConfigError> {
        let mut out = PartialConfig::unrevealed(ball);
        for (site, s) in self.ball.sites().iter().zip(&self.states) {
            match out.ball.index_of(*site) {
                Some(i) => out.states[i] = *s,
                None if *s == State::Unrevealed => {}
                None => return Err(ConfigError::SiteOutsideBall(*site)),
            }
        }
        Ok(out)
    }

    /// Sitewise order with White < Black, on sites revealed in both.
    pub fn dominated_by(&self, other: &PartialConfig) -> bool {
        self.states
            .iter()
            .zip(&other.states)
            .all(|(a, b)| !(*a == State::Black && *b == State::White))
    }

    /// Agreement on the sites of `region` present in both balls.
    pub fn agrees_on(&self, other: &PartialConfig, region: &BTreeSet<Site>) -> bool {
        region.iter().all(|s| self.get(*s) == other.get(*s))
    }
}

/// Bernoulli(p) configuration on `ball`: site `x` is black iff `U_x <= p`.
pub fn full_random(
    ball: Arc<Ball>,
    p: f64,
    field: &UniformField,
) -> Result<PartialConfig, ConfigError> {
    check_probability(p)?;
    let states = ball
        .sites()
        .iter()
        .map(|s| {
            if field.is_black(*s, p) {
                State::Black
            } else {
                State::White
            }
        })
        .collect();
    Ok(PartialConfig { ball, states })
}

/// Free-function form of [`PartialConfig::restrict`].
pub fn restrict(config: &PartialConfig, region: &BTreeSet<Site>) -> PartialConfig {
    config.restrict(region)
}

/// Whether some completion of the unrevealed sites realizes `{0 ↔ ∂Λₙ}`.
///
/// The event is increasing, so it suffices to try the all-black completion.
pub fn compatible_with_arm(config: &PartialConfig, n: u32) -> Result<bool, ConfigError> {
    let maximal = config.completed_with(Color::Black);
    let maximal = if config.ball().radius() == n {
        maximal
    } else {
        maximal
            .embed(Arc::new(Ball::new(n)?))?
            .completed_with(Color::Black)
    };
    Ok(connectivity::one_arm(&maximal, n))
}

/// A cylinder event `{ε_S = η}`, optionally intersected with `{0 ↔ ∂Λₙ}`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EpsEvent {
    pub constraints: BTreeMap<Site, Color>,
    pub arm: Option<u32>,
}

impl EpsEvent {
    pub fn new(constraints: BTreeMap<Site, Color>, arm: Option<u32>) -> Result<Self, ConfigError> {
        if let Some(n) = arm {
            if let Some((s, _)) = constraints.iter().find(|(s, _)| s.norm() > n) {
                return Err(ConfigError::SiteOutsideBall(*s));
            }
        }
        Ok(EpsEvent { constraints, arm })
    }

    /// The event induced by the revealed part of a partial configuration.
    pub fn from_revealed(config: &PartialConfig, arm: Option<u32>) -> Result<Self, ConfigError> {
        let constraints = config
            .ball()
            .sites()
            .iter()
            .zip(config.states())
            .filter_map(|(site, s)| s.color().map(|c| (*site, c)))
            .collect();
        Self::new(constraints, arm)
    }

    /// Whether a fully revealed configuration belongs to the event.
    pub fn contains(&self, config: &PartialConfig) -> bool {
        let cylinder = self
            .constraints
            .iter()
            .all(|(s, c)| config.get(*s) == Some((*c).into()));
        cylinder && self.arm.is_none_or(|n| connectivity::one_arm(config, n))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    fn ball(n: u32) -> Arc<Ball> {
        Arc::new(Ball::new(n).unwrap())
    }

    #[test]
    fn extreme_probabilities() {
        let b = ball(3);
        let f = UniformField::new(5, 0);
        let all_black = full_random(Arc::clone(&b), 1.0, &f).unwrap();
        assert!(all_black.states().iter().all(|s| *s == State::Black));
        let all_white = full_random(b, 0.0, &f).unwrap();
        assert!(all_white.states().iter().all(|s| *s == State::White));
    }

    #[test]
    fn rejects_bad_probability() {
        let f = UniformField::new(5, 0);
        assert!(full_random(ball(1), 1.5, &f).is_err());
    }

    #[test]
    fn site_frequencies_at_half() {
        let b = ball(1);
        let samples = 1_000_000u64;
        let mut counts = [0u64; 7];
        for rep in 0..samples {
            let f = UniformField::new(99, rep);
            for (i, s) in b.sites().iter().enumerate() {
                counts[i] += f.is_black(*s, 0.5) as u64;
            }
        }
        for c in counts {
            let frac = c as f64 / samples as f64;
            assert!((0.498..=0.502).contains(&frac), "fraction {frac}");
        }
    }

    #[test]
    fn restrict_identity_and_empty() {
        let b = ball(2);
        let c = full_random(Arc::clone(&b), 0.5, &UniformField::new(1, 1)).unwrap();
        assert_eq!(c.restrict(&b.site_set()), c);
        assert_eq!(c.restrict(&BTreeSet::new()).count_unrevealed(), b.len());
    }

    #[test]
    fn code_string_round_trip() {
        let b = ball(1);
        let c = PartialConfig::from_code_string(Arc::clone(&b), "BWUBWUB").unwrap();
        assert_eq!(c.to_code_string(), "BWUBWUB");
        assert!(PartialConfig::from_code_string(Arc::clone(&b), "BWU").is_err());
        assert!(PartialConfig::from_code_string(b, "BWUBWUX").is_err());
    }

    #[test]
    fn all_unrevealed_is_compatible() {
        for n in 0..4 {
            assert!(compatible_with_arm(&PartialConfig::unrevealed(ball(n)), n).unwrap());
        }
    }

    #[test]
    fn white_first_ring_blocks_arm() {
        let b = ball(2);
        let mut c = PartialConfig::unrevealed(Arc::clone(&b));
        for s in Site::ORIGIN.neighbors() {
            c.set(s, State::White).unwrap();
        }
        assert!(!compatible_with_arm(&c, 2).unwrap());
        // Exhaustive check over every completion of the 12 free ring-2 sites.
        let free: Vec<usize> = (0..b.len()).filter(|&i| b.ring_of(i) == 2).collect();
        for bits in 0u32..(1 << free.len()) {
            let mut d = c.clone();
            for (j, &i) in free.iter().enumerate() {
                d.set_at(
                    i,
                    if bits >> j & 1 == 1 {
                        State::Black
                    } else {
                        State::White
                    },
                );
            }
            assert!(!connectivity::one_arm(&d, 2));
        }
    }

    #[test]
    fn revealed_ray_is_compatible() {
        let b = ball(4);
        let mut c = PartialConfig::unrevealed(Arc::clone(&b));
        for j in 1..=4 {
            c.set(Site::new(j, 0), State::Black).unwrap();
        }
        assert!(compatible_with_arm(&c, 4).unwrap());
        // Compatibility with a larger radius embeds the smaller ball.
        assert!(compatible_with_arm(&c, 6).unwrap());
    }

    #[test]
    fn whitening_never_helps() {
        let b = ball(3);
        let mut rng = Stream::new(4).rng();
        for _ in 0..2_000 {
            let states: Vec<State> = (0..b.len())
                .map(|_| match rng.below(3) {
                    0 => State::Black,
                    1 => State::White,
                    _ => State::Unrevealed,
                })
                .collect();
            let c = PartialConfig::from_states(Arc::clone(&b), states).unwrap();
            let i = rng.below(b.len() as u64) as usize;
            if c.state_at(i) == State::White {
                let mut d = c.clone();
                d.set_at(i, State::Black);
                assert!(
                    !compatible_with_arm(&c, 3).unwrap() || compatible_with_arm(&d, 3).unwrap()
                );
            }
        }
    }

    #[test]
    fn eps_event_membership() {
        let b = ball(1);
        let c = full_random(Arc::clone(&b), 1.0, &UniformField::new(0, 0)).unwrap();
        let ev = EpsEvent::from_revealed(&c, Some(1)).unwrap();
        assert!(ev.contains(&c));
        let mut d = c.clone();
        d.set(Site::new(1, 0), State::White).unwrap();
        assert!(!ev.contains(&d));
        assert!(EpsEvent::new(BTreeMap::from([(Site::new(3, 0), Color::Black)]), Some(1)).is_err());
    }
}
