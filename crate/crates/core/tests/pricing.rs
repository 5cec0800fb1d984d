use imbalance_core::pricing_be::vwap_afrr;
use imbalance_core::pricing_nl::{balance_deltas, marginal_prices};
use imbalance_core::{
    generate_random_scenario, imbalance_price_be, imbalance_price_nl, regulation_state, simulate_quarter, BelgianBranch,
    Country, Direction, DispatchProfile, RegulationState, SystemDirection,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Straight from the definition, with no incremental state.
fn naive_state(deltas: &[f64]) -> RegulationState {
    let eps = 1e-9;
    let up = deltas.iter().any(|&d| d > eps);
    let down = deltas.iter().any(|&d| d < -eps);
    let increasing = deltas.windows(2).all(|w| w[1] >= w[0] - eps);
    let decreasing = deltas.windows(2).all(|w| w[1] <= w[0] + eps);
    match (up, down) {
        (false, false) => RegulationState::Zero,
        (true, false) => RegulationState::Up,
        (false, true) => RegulationState::Down,
        _ if increasing => RegulationState::Up,
        _ if decreasing => RegulationState::Down,
        _ => RegulationState::Dual,
    }
}

#[test]
fn classifier_matches_definition() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut seen = [0usize; 4];
    for _ in 0..10_000 {
        let len = rng.gen_range(1..=15);
        // Small integer deltas make ties and sign changes common.
        let deltas: Vec<f64> = (0..len).map(|_| rng.gen_range(-3..=3) as f64).collect();
        let s = regulation_state(&deltas);
        assert_eq!(s, naive_state(&deltas), "{deltas:?}");
        seen[(s.value() + 1) as usize] += 1;
    }
    assert!(seen.iter().all(|&n| n > 0), "{seen:?}");
}

fn random_quarter(seed: u64) -> Option<imbalance_core::QuarterClearing> {
    let s = generate_random_scenario(seed, 15, Country::Belgium);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let powers: Vec<f64> = (0..15).map(|_| rng.gen_range(-10..=10) as f64).collect();
    simulate_quarter(&s, &DispatchProfile::from_net_injection(&powers), &s.mfrr_policy).ok()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn belgian_price_is_an_extreme_of_its_inputs(seed in 0u64..5000) {
        let Some(q) = random_quarter(seed) else { return Ok(()) };
        let b = imbalance_price_be(&q).unwrap();
        let mid = (q.afrr_up_best_price.unwrap() + q.afrr_down_best_price.unwrap()) / 2.0;
        let base = match b.direction {
            SystemDirection::Shortage => vwap_afrr(&q, Direction::Upward).unwrap_or(mid),
            SystemDirection::Surplus => vwap_afrr(&q, Direction::Downward).unwrap_or(mid),
        };
        match b.branch {
            BelgianBranch::ShortageAfrr | BelgianBranch::SurplusAfrr => prop_assert_eq!(b.final_price, base),
            BelgianBranch::ShortageWithMfrr => {
                prop_assert!(b.final_price >= base);
                prop_assert!(b.final_price == base || Some(b.final_price) == b.mfrr_marginal);
            }
            BelgianBranch::SurplusWithMfrr => {
                prop_assert!(b.final_price <= base);
                prop_assert!(b.final_price == base || Some(b.final_price) == b.mfrr_marginal);
            }
        }
        let shortage = b.direction == SystemDirection::Shortage;
        prop_assert_eq!(shortage, matches!(b.branch, BelgianBranch::ShortageAfrr | BelgianBranch::ShortageWithMfrr));
        // Without mFRR the direction follows the sign of the aggregate imbalance.
        if q.first_mfrr_direction().is_none() {
            prop_assert_eq!(shortage, q.aggregate_imbalance() <= 1e-9);
        } else {
            prop_assert_eq!(shortage, q.first_mfrr_direction() == Some(Direction::Upward));
        }
    }

    #[test]
    fn dutch_extremes_bound_every_marginal(seed in 0u64..5000) {
        let Some(q) = random_quarter(seed) else { return Ok(()) };
        let m = marginal_prices(&q).unwrap();
        for c in &q.minutes {
            for (dir, price) in [(c.afrr_direction(), c.afrr_marginal_price), (c.mfrr_direction(), c.mfrr_marginal_price)] {
                match (dir, price) {
                    (Some(Direction::Upward), Some(p)) => prop_assert!(m.up.unwrap() >= p),
                    (Some(Direction::Downward), Some(p)) => prop_assert!(m.down.unwrap() <= p),
                    _ => {}
                }
            }
        }
        let nl = imbalance_price_nl(&q, 1.0).unwrap();
        prop_assert_eq!(nl.state, naive_state(&balance_deltas(&q)));
        if nl.state == RegulationState::Dual {
            prop_assert!(nl.final_price_short >= nl.lambda_mid && nl.final_price_long <= nl.lambda_mid);
        }
    }
}

#[test]
fn random_quarters_mostly_clear() {
    let ok = (0..500).filter(|&s| random_quarter(s).is_some()).count();
    assert!(ok > 150, "{ok}");
}
