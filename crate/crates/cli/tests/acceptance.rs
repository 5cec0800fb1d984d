//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

use imbalance_core::market::Product;
use imbalance_core::{
    brute_force_oracle, clear_minute, compare_strategies, generate_random_scenario, generate_strategy_fixture,
    optimize_dispatch, position_energy, regulation_state, soc_step, uniform_profile, Archetype, BessSpec,
    ComparisonReport, Country, Direction, Ladders, MinuteState, OptimizerConfig, PriceBreakdown, RegulationState,
    SystemDirection,
};
use minilp::{ComparisonOp, OptimizationDirection, Problem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

type Outcome = Result<String, String>;

fn check(cond: bool, ok: String, fail: String) -> Outcome {
    if cond {
        Ok(ok)
    } else {
        Err(fail)
    }
}

fn within(elapsed: Duration, limit: Duration) -> Outcome {
    check(elapsed < limit, format!("{elapsed:.2?}"), format!("took {elapsed:.2?}, limit {limit:?}"))
}

fn lp_cost(ladders: &Ladders, r: f64, mfrr_on: bool) -> f64 {
    let mut p = Problem::new(OptimizationDirection::Minimize);
    let (mut afrr, mut mfrr) = (Vec::new(), Vec::new());
    for product in [Product::Afrr, Product::Mfrr] {
        for d in [Direction::Upward, Direction::Downward] {
            for b in ladders.get(product, d).bids() {
                let v = p.add_var(d.sign() * b.price, (0.0, b.capacity_mw));
                match product {
                    Product::Afrr => afrr.push((v, d.sign())),
                    Product::Mfrr => mfrr.push((v, d.sign())),
                }
            }
        }
    }
    let (afrr_target, mfrr_target) = if mfrr_on {
        let d = Direction::of(r).unwrap();
        let cap = d.sign() * ladders.get(Product::Afrr, d).total_capacity();
        (cap, r - cap)
    } else {
        (r, 0.0)
    };
    p.add_constraint(&afrr, ComparisonOp::Eq, afrr_target);
    p.add_constraint(&mfrr, ComparisonOp::Eq, mfrr_target);
    p.solve().expect("feasible LP").objective()
}

fn lower_level_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut checked, mut worst) = (0, 0.0f64);
    for seed in 0.. {
        if checked == 1000 {
            break;
        }
        let s = generate_random_scenario(seed, 1, Country::Belgium);
        let state = MinuteState {
            minute: 0,
            system_imbalance_mw: rng.gen_range(-25.0..25.0),
            brp_net_consumption_mw: rng.gen_range(-10.0..10.0),
        };
        let Ok(c) = clear_minute(&state, &s.ladders, false) else {
            continue;
        };
        worst = worst.max((lp_cost(&s.ladders, c.residual_mw, c.mfrr_active) - c.activation_cost()).abs());
        checked += 1;
    }
    let time = within(start.elapsed(), Duration::from_secs(10))?;
    check(
        worst <= 1e-6,
        format!("1000 instances, max gap {worst:.1e} EUR, {time}"),
        format!("max gap {worst:e} EUR"),
    )
}

fn bilevel_oracle() -> Outcome {
    let start = Instant::now();
    let (mut checked, mut worst) = (0, 0.0f64);
    for seed in 0.. {
        if checked == 200 {
            break;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = rng.gen_range(2..=6);
        let country = if seed % 2 == 0 { Country::Belgium } else { Country::Netherlands };
        let s = generate_random_scenario(seed + 10_000, len, country);
        // 3 MW on a 1 MW grid: 7 power levels.
        let spec = BessSpec::with_round_trip(3.0, rng.gen_range(0.05..0.5), 0.9);
        let position = rng.gen_range(-3..=3) as f64 * len as f64 / 60.0;
        let Ok(oracle) = brute_force_oracle(&s, position, &spec, 1.0) else {
            continue;
        };
        let config = OptimizerConfig {
            power_grid_step_mw: 1.0,
            ..OptimizerConfig::for_scenario(&s)
        };
        let dp = optimize_dispatch(&s, position, &spec, &config).map_err(|e| format!("seed {seed}: {e}"))?;
        worst = worst.max((dp.result.profit_eur - oracle.result.profit_eur).abs());
        checked += 1;
    }
    let time = within(start.elapsed(), Duration::from_secs(60))?;
    check(
        worst <= 1e-6,
        format!("200 instances, max gap {worst:.1e} EUR, {time}"),
        format!("max gap {worst:e} EUR"),
    )
}

fn fixture_report(a: Archetype, seed: u64) -> ComparisonReport {
    let s = generate_strategy_fixture(a, seed);
    let position = s.fixture.as_ref().unwrap().position_mwh;
    compare_strategies(&s, position, &BessSpec::default(), &OptimizerConfig::for_scenario(&s)).unwrap()
}

fn incumbent_dominance() -> Outcome {
    let start = Instant::now();
    let results: Vec<Option<(f64, f64)>> = (0..1600u64)
        .into_par_iter()
        .map(|seed| {
            let country = if seed % 2 == 0 { Country::Belgium } else { Country::Netherlands };
            let s = generate_random_scenario(seed + 50_000, 15, country);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let position = rng.gen_range(-2.0..2.0);
            let config = OptimizerConfig {
                power_grid_step_mw: 2.5,
                ..OptimizerConfig::for_scenario(&s)
            };
            compare_strategies(&s, position, &BessSpec::default(), &config)
                .ok()
                .map(|r| (r.uniform.profit_eur, r.optimized.profit_eur))
        })
        .collect();
    let feasible: Vec<(f64, f64)> = results.into_iter().flatten().take(1000).collect();
    if feasible.len() < 1000 {
        return Err(format!("only {} feasible scenarios", feasible.len()));
    }
    let violations = feasible.iter().filter(|(u, o)| o < u).count();
    let strict_random = feasible.iter().filter(|(u, o)| o > u).count();
    let mut strict_fixtures = Vec::new();
    for a in Archetype::ALL {
        let hit = (0..5).any(|seed| {
            let r = fixture_report(a, seed);
            r.optimized.profit_eur > r.uniform.profit_eur
        });
        if !hit {
            strict_fixtures.push(a.slug());
        }
    }
    let time = within(start.elapsed(), Duration::from_secs(300))?;
    check(
        violations == 0 && strict_fixtures.is_empty(),
        format!("1000 scenarios, {strict_random} strictly improved, every archetype strict, {time}"),
        format!("{violations} violations; no strict gain for {strict_fixtures:?}"),
    )
}

fn be(b: &PriceBreakdown) -> &imbalance_core::BelgianPriceBreakdown {
    match b {
        PriceBreakdown::Belgium(x) => x,
        PriceBreakdown::Netherlands(_) => panic!("expected Belgian breakdown"),
    }
}

fn nl(b: &PriceBreakdown) -> &imbalance_core::DutchPriceBreakdown {
    match b {
        PriceBreakdown::Netherlands(x) => x,
        PriceBreakdown::Belgium(_) => panic!("expected Dutch breakdown"),
    }
}

fn be_strategy_1() -> Outcome {
    let r = fixture_report(Archetype::BeExtremeBid, 0);
    let pmax = BessSpec::default().power_max_mw;
    // The position is a shortfall (charging), so counter-directional means full discharge.
    let spikes: Vec<usize> = r
        .optimized
        .net_injection_mw
        .iter()
        .enumerate()
        .filter(|(_, &p)| (p - pmax).abs() < 1e-9)
        .map(|(t, _)| t)
        .collect();
    let surplus = be(&r.uniform.breakdown).direction == SystemDirection::Surplus;
    check(
        r.position_mwh < 0.0 && !spikes.is_empty() && surplus && r.optimized.imbalance_price < r.uniform.imbalance_price,
        format!(
            "full discharge at minute(s) {spikes:?}; price {:.2} -> {:.2} EUR/MWh",
            r.uniform.imbalance_price, r.optimized.imbalance_price
        ),
        format!(
            "spikes {spikes:?}, price {} -> {}",
            r.uniform.imbalance_price, r.optimized.imbalance_price
        ),
    )
}

fn be_strategy_2() -> Outcome {
    let s = generate_strategy_fixture(Archetype::BeMfrrLatch, 0);
    let r = fixture_report(Archetype::BeMfrrLatch, 0);
    let lead = s.mfrr_policy.lead_time_minutes;
    let own = s.system_imbalance_mw.iter().sum::<f64>() > 0.0;
    let surplus = |b: &PriceBreakdown| be(b).direction == SystemDirection::Surplus;
    // Recompute the optimized quarter to read the mFRR trace.
    let q = imbalance_core::simulate_quarter(
        &s,
        &imbalance_core::DispatchProfile::from_net_injection(&r.optimized.net_injection_mw),
        &s.mfrr_policy,
    )
    .unwrap();
    let first = q.first_mfrr_minute();
    let latched = first.is_some_and(|f| q.minutes[f..].iter().all(|m| m.mfrr_volume_mw.abs() > 1e-9));
    let ok = own
        && !surplus(&r.uniform.breakdown)
        && r.uniform.profit_eur < 0.0
        && first == Some(lead)
        && latched
        && surplus(&r.optimized.breakdown)
        && r.optimized.profit_eur > 0.0;
    check(
        ok,
        format!(
            "uniform flips to shortage (profit {:.2}); mFRR from minute {} to the end, settlement direction stays surplus (profit {:.2})",
            r.uniform.profit_eur,
            first.unwrap(),
            r.optimized.profit_eur
        ),
        format!(
            "uniform {:?}/{:.2}, optimized {:?}/{:.2}, first mFRR {first:?}, latched {latched}",
            be(&r.uniform.breakdown).direction,
            r.uniform.profit_eur,
            be(&r.optimized.breakdown).direction,
            r.optimized.profit_eur
        ),
    )
}

fn nl_strategy_1() -> Outcome {
    let r = fixture_report(Archetype::NlExtremeBid, 0);
    let (u, o) = (nl(&r.uniform.breakdown), nl(&r.optimized.breakdown));
    let lambda_o = o.lambda_up.unwrap_or(f64::NAN);
    let setters = r
        .traces
        .iter()
        .filter(|t| t.optimized_afrr_marginal == Some(lambda_o))
        .count();
    let u_max_afrr = r
        .traces
        .iter()
        .filter_map(|t| t.uniform_afrr_marginal)
        .fold(f64::NEG_INFINITY, f64::max);
    check(
        u.state == RegulationState::Up
            && o.state == RegulationState::Up
            && lambda_o > u.lambda_up.unwrap_or(f64::INFINITY)
            && lambda_o > u_max_afrr
            && setters == 1,
        format!(
            "state +1 in both, λ+ {:.2} -> {:.2} set by aFRR in exactly one minute",
            u.lambda_up.unwrap(),
            lambda_o
        ),
        format!("states {:?}/{:?}, λ+ {:?} -> {:?}, setters {setters}", u.state, o.state, u.lambda_up, o.lambda_up),
    )
}

fn nl_strategy_2() -> Outcome {
    let r = fixture_report(Archetype::NlStateAvoid, 0);
    let (u, o) = (nl(&r.uniform.breakdown), nl(&r.optimized.breakdown));
    let expected = u.lambda_up.unwrap_or(u.lambda_mid).max(u.lambda_mid);
    check(
        u.state == RegulationState::Dual
            && r.position_mwh < 0.0
            && r.uniform.imbalance_price == expected
            && o.state == RegulationState::Down
            && r.optimized.profit_eur > r.uniform.profit_eur,
        format!(
            "uniform state 2 at max(λ+, λ_mid) = {:.2}; optimized state -1, profit {:.2} -> {:.2}",
            expected, r.uniform.profit_eur, r.optimized.profit_eur
        ),
        format!("states {:?}/{:?}, profits {} -> {}", u.state, o.state, r.uniform.profit_eur, r.optimized.profit_eur),
    )
}

fn literal_state(deltas: &[f64]) -> RegulationState {
    let eps = 1e-9;
    let up = deltas.iter().any(|&d| d > eps);
    let down = deltas.iter().any(|&d| d < -eps);
    let mut increasing = true;
    let mut decreasing = true;
    for i in 1..deltas.len() {
        increasing &= deltas[i] >= deltas[i - 1] - eps;
        decreasing &= deltas[i] <= deltas[i - 1] + eps;
    }
    if !up && !down {
        RegulationState::Zero
    } else if up && (!down || increasing) {
        RegulationState::Up
    } else if down && (!up || decreasing) {
        RegulationState::Down
    } else {
        RegulationState::Dual
    }
}

fn classifier() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    for _ in 0..10_000 {
        let len = rng.gen_range(2..=15);
        let deltas: Vec<f64> = (0..len)
            .map(|_| if rng.gen_bool(0.5) { rng.gen_range(-3..=3) as f64 } else { rng.gen_range(-5.0..5.0) })
            .collect();
        mismatches += (regulation_state(&deltas) != literal_state(&deltas)) as usize;
    }
    check(mismatches == 0, "10000 sequences, 0 mismatches".into(), format!("{mismatches} mismatches"))
}

fn battery_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let spec = BessSpec::with_round_trip(rng.gen_range(1.0..50.0), rng.gen_range(1.0..100.0), rng.gen_range(0.5..1.0));
        let soc = rng.gen_range(0.0..1.0);
        let p = rng.gen_range(0.0..spec.power_max_mw);
        let back = soc_step(soc_step(soc, p, 0.0, &spec), 0.0, p * spec.eta_charge * spec.eta_discharge, &spec);
        worst = worst.max((back - soc).abs());

        let len = rng.gen_range(1..=60);
        let hours = len as f64 * spec.dt_hours;
        let e = rng.gen_range(-1.0..1.0) * spec.power_max_mw * hours;
        let profile = uniform_profile(e, len, &spec).map_err(|err| err.to_string())?;
        worst = worst.max((position_energy(&profile, spec.dt_hours) - e).abs());
    }
    check(worst <= 1e-9, format!("10000 draws, max error {worst:.1e}"), format!("max error {worst:e}"))
}

fn determinism() -> Outcome {
    let exe = env!("CARGO_BIN_EXE_imbalance");
    let mut runs = 0;
    for a in Archetype::ALL {
        for format in ["json", "csv"] {
            let out = || {
                Command::new(exe)
                    .args(["compare", "--archetype", a.slug(), "--format", format])
                    .output()
                    .expect("runs the CLI")
            };
            let (x, y) = (out(), out());
            if !x.status.success() || x.stdout.is_empty() {
                return Err(format!("{} {format}: {}", a.slug(), String::from_utf8_lossy(&x.stderr)));
            }
            if x.stdout != y.stdout {
                return Err(format!("{} {format} differs between runs", a.slug()));
            }
            runs += 1;
        }
    }
    Ok(format!("{runs} fixture/format pairs byte-identical"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("lower-level oracle equivalence", lower_level_oracle),
        ("bi-level oracle equivalence", bilevel_oracle),
        ("incumbent dominance", incumbent_dominance),
        ("BE strategy 1 (extreme bid)", be_strategy_1),
        ("BE strategy 2 (mFRR latch)", be_strategy_2),
        ("NL strategy 1 (extreme bid)", nl_strategy_1),
        ("NL strategy 2 (state avoidance)", nl_strategy_2),
        ("regulation-state classifier", classifier),
        ("battery algebra", battery_algebra),
        ("compare determinism", determinism),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        match f() {
            Ok(detail) => println!("[PASS] {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
