//! Values frozen from an independent brute-force enumeration (a separate
//! script over all 2^|Λ| colorings with exact rational arithmetic).

use std::sync::Arc;

use iic_core::configuration::PartialConfig;
use iic_core::estimator::{exact_crossing_probability, exact_tv, TvRegion};
use iic_core::lattice::{Ball, Site};
use iic_core::oracle::{exact_conditioned_marginal, ArmOracle, OracleBackend};
use iic_core::Color;

#[test]
fn crossing_probabilities() {
    let cases = [
        (0, 2, Color::Black, 253135.0 / 262144.0),
        (0, 1, Color::White, 63.0 / 64.0),
        (1, 2, Color::White, 4095.0 / 4096.0),
        (0, 2, Color::White, 253135.0 / 262144.0),
    ];
    for (k, m, color, expected) in cases {
        assert_eq!(
            exact_crossing_probability(k, m, 0.5, color).unwrap(),
            expected,
            "({k}, {m}, {color:?})"
        );
    }
}

#[test]
fn first_ring_law_under_arm_one() {
    let ring: Vec<Site> = Ball::new(1)
        .unwrap()
        .sites()
        .iter()
        .copied()
        .filter(|s| *s != Site::ORIGIN)
        .collect();
    let t = exact_conditioned_marginal(&ring, 1, 0.5).unwrap();
    for (atom, p) in t.probs.iter().enumerate() {
        let expected = if atom == 0 { 0.0 } else { 1.0 / 63.0 };
        assert!((p - expected).abs() < 1e-15);
    }
}

#[test]
fn radius_two_thresholds() {
    let oracle = ArmOracle::new(2, 0.5, OracleBackend::exact()).unwrap();
    let empty = PartialConfig::unrevealed(Arc::new(Ball::new(2).unwrap()));
    for (site, num, den) in [
        (Site::new(0, -1), 25969.0, 50627.0),
        (Site::new(0, -2), 127181.0, 253135.0),
        (Site::new(-1, -1), 25532.0, 50627.0),
        (Site::new(1, 0), 25969.0, 50627.0),
    ] {
        let v = oracle.cond_prob(site, &empty).unwrap();
        assert!(v.exact);
        assert!((v.value - num / den).abs() < 1e-15, "{site}");
    }
    let one = ArmOracle::new(1, 0.5, OracleBackend::exact()).unwrap();
    let empty1 = PartialConfig::unrevealed(Arc::new(Ball::new(1).unwrap()));
    assert_eq!(
        one.cond_prob(Site::new(0, 1), &empty1).unwrap().value,
        32.0 / 63.0
    );
}

#[test]
fn total_variation_between_arm_radii() {
    let golden = 60988.0 / 5315835.0;
    for (k, region) in [(1, TvRegion::Ball), (0, TvRegion::Ring1)] {
        let r = exact_tv(k, 1, 2, 0.5, region).unwrap();
        assert!((r.tv - golden).abs() < 1e-14, "{region:?}: {}", r.tv);
    }
    for n in 0..=2 {
        for m in 0..=n {
            assert_eq!(exact_tv(0, m, n, 0.5, TvRegion::Ball).unwrap().tv, 0.0);
        }
    }
}
