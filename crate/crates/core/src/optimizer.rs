//! Bi-level dispatch optimisation for one settlement period.
//!
//! The upper level picks per-minute battery powers on a grid; the lower level
//! is the closed-form clearing in [`crate::market`] followed by the country's
//! pricing rule. [`optimize_dispatch`] runs a forward dynamic programme whose
//! state holds everything the final price depends on:
//!
//! * cumulative position (and charged energy when the SoC limits can bind),
//! * the mFRR phase (idle / pending / latched / available),
//! * Belgium: whether aFRR was activated per direction, the mFRR marginal
//!   extremes and the direction of the first mFRR activation,
//! * Netherlands: the regulation-state tracker (signs seen, monotonicity,
//!   last delta) and which marginal extremes are defined.
//!
//! The remaining path information lives in labels kept on a Pareto front per
//! state: VWAP numerator/denominator pairs for Belgium, the running λ+/λ−
//! extremes for the Netherlands. Dominance is only declared when it holds for
//! every possible continuation, so the search is exact on the grid.
//! [`brute_force_oracle`] enumerates the same grid for verification.

use crate::battery::{check_feasible, position_energy, BessSpec, DispatchProfile};
use crate::error::{Error, Result};
use crate::market::{simulate_quarter, Direction, Ladders, MfrrPhase, MinuteClearing, MinuteState, Product};
use crate::pricing_be::{
    direction_from_aggregate, direction_from_mfrr, imbalance_price_be, select_price, BelgianPriceBreakdown,
    SystemDirection,
};
use crate::pricing_nl::{imbalance_price_nl, max_opt, min_opt, minute_extremes, settle, DutchPriceBreakdown, StateTracker};
use crate::scenario::{Country, QuarterHourScenario};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::hash::{Hash, Hasher};

/// Profit tolerance used for tie detection, EUR.
const PROFIT_TIE: f64 = 1e-9;
/// Largest profile count the oracle will enumerate.
pub const ORACLE_LIMIT: u128 = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    DpGrid,
    Exhaustive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub power_grid_step_mw: f64,
    pub country: Country,
    pub search_mode: SearchMode,
    /// Cap on the number of search labels created.
    pub max_nodes: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            power_grid_step_mw: 1.0,
            country: Country::Belgium,
            search_mode: SearchMode::DpGrid,
            max_nodes: 20_000_000,
        }
    }
}

impl OptimizerConfig {
    pub fn for_scenario(scenario: &QuarterHourScenario) -> Self {
        let mut config = OptimizerConfig {
            country: scenario.country,
            ..Default::default()
        };
        if let Some(f) = &scenario.fixture {
            config.power_grid_step_mw = f.grid_step_mw;
        }
        config
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "country", rename_all = "snake_case")]
pub enum PriceBreakdown {
    Belgium(BelgianPriceBreakdown),
    Netherlands(DutchPriceBreakdown),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettlementResult {
    pub imbalance_price: f64,
    pub profit_eur: f64,
    pub position_mwh: f64,
    pub breakdown: PriceBreakdown,
    pub quarter: crate::market::QuarterClearing,
}

/// Clears the period for `profile` and settles the BRP position.
pub fn evaluate_dispatch(
    scenario: &QuarterHourScenario,
    profile: &DispatchProfile,
    country: Country,
) -> Result<SettlementResult> {
    let quarter = simulate_quarter(scenario, profile, &scenario.mfrr_policy)?;
    let position_mwh = position_energy(profile, scenario.dt_hours);
    let (imbalance_price, breakdown) = match country {
        Country::Belgium => {
            let b = imbalance_price_be(&quarter)?;
            (b.final_price, PriceBreakdown::Belgium(b))
        }
        Country::Netherlands => {
            let b = imbalance_price_nl(&quarter, position_mwh)?;
            (b.price_for(position_mwh), PriceBreakdown::Netherlands(b))
        }
    };
    Ok(SettlementResult {
        imbalance_price,
        profit_eur: imbalance_price * position_mwh + 0.0,
        position_mwh,
        breakdown,
        quarter,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchStatus {
    Optimal,
    /// The label budget ran out; the uniform incumbent is returned.
    BudgetExceeded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizedDispatch {
    pub profile: DispatchProfile,
    pub result: SettlementResult,
    pub status: SearchStatus,
    pub position_requested_mwh: f64,
    /// Target after rounding to a constant grid power.
    pub position_mwh: f64,
    pub labels_created: usize,
}

/// Power levels k·step, k ∈ [−levels, levels]; + = discharge.
#[derive(Debug, Clone, Copy)]
struct Grid {
    step: f64,
    levels: i32,
}

impl Grid {
    fn new(spec: &BessSpec, step: f64) -> Result<Grid> {
        if !(step > 0.0) || !step.is_finite() {
            return Err(Error::InvalidConfig(format!("grid step {step} must be positive")));
        }
        let ratio = spec.power_max_mw / step;
        let levels = ratio.round();
        if (ratio - levels).abs() > 1e-9 * ratio.max(1.0) || levels < 1.0 {
            return Err(Error::InvalidConfig(format!(
                "grid step {step} MW does not divide power_max {} MW",
                spec.power_max_mw
            )));
        }
        Ok(Grid {
            step,
            levels: levels as i32,
        })
    }

    fn power(&self, k: i32) -> f64 {
        k as f64 * self.step
    }

    fn profile(&self, ks: &[i32]) -> DispatchProfile {
        DispatchProfile::from_net_injection(&ks.iter().map(|&k| self.power(k)).collect::<Vec<_>>())
    }
}

/// Rounded position: the average power is snapped to the grid so the uniform
/// profile is itself a grid profile.
struct Target {
    requested: f64,
    level: i32,
    units: i32,
    mwh: f64,
}

fn round_target(scenario: &QuarterHourScenario, spec: &BessSpec, grid: &Grid, position: f64) -> Result<Target> {
    let avg = position / scenario.isp_hours();
    if !avg.is_finite() || avg.abs() > spec.power_max_mw + 1e-9 {
        return Err(Error::PowerInfeasible {
            required_mw: avg.abs(),
            power_max_mw: spec.power_max_mw,
        });
    }
    let level = ((avg / grid.step).round() as i32).clamp(-grid.levels, grid.levels);
    let len = scenario.isp_length_minutes;
    let uniform = grid.profile(&vec![level; len]);
    Ok(Target {
        requested: position,
        level,
        units: level * len as i32,
        mwh: position_energy(&uniform, scenario.dt_hours),
    })
}

fn prepare(
    scenario: &QuarterHourScenario,
    spec: &BessSpec,
    step: f64,
    position: f64,
) -> Result<(Grid, Target, DispatchProfile)> {
    scenario.validate()?;
    spec.validate()?;
    let mut spec = *spec;
    spec.dt_hours = scenario.dt_hours;
    let grid = Grid::new(&spec, step)?;
    let target = round_target(scenario, &spec, &grid, position)?;
    let uniform = grid.profile(&vec![target.level; scenario.isp_length_minutes]);
    check_feasible(&uniform, scenario.initial_soc, &spec)?;
    Ok((grid, target, uniform))
}

/// Constant grid power profile for `position`, as used for the comparison.
pub fn uniform_grid_profile(
    scenario: &QuarterHourScenario,
    position: f64,
    spec: &BessSpec,
    step: f64,
) -> Result<DispatchProfile> {
    prepare(scenario, spec, step, position).map(|(_, _, p)| p)
}

/// Picks the better of the uniform incumbent and the search result. Ties go
/// to the uniform profile.
fn choose(
    uniform: (DispatchProfile, SettlementResult),
    found: Option<(DispatchProfile, SettlementResult)>,
) -> (DispatchProfile, SettlementResult) {
    match found {
        Some(f) if f.1.profit_eur > uniform.1.profit_eur + PROFIT_TIE => f,
        _ => uniform,
    }
}

/// Exhaustive search over every grid profile with the target position.
pub fn brute_force_oracle(
    scenario: &QuarterHourScenario,
    position: f64,
    spec: &BessSpec,
    grid_step: f64,
) -> Result<OptimizedDispatch> {
    let (grid, target, uniform) = prepare(scenario, spec, grid_step, position)?;
    let len = scenario.isp_length_minutes;
    let count = (2 * grid.levels as u128 + 1).checked_pow(len as u32).unwrap_or(u128::MAX);
    if count > ORACLE_LIMIT {
        return Err(Error::EnumerationTooLarge(count));
    }
    let mut spec = *spec;
    spec.dt_hours = scenario.dt_hours;
    let country = scenario.country;
    let uniform_result = evaluate_dispatch(scenario, &uniform, country)?;

    let mut best: Option<(DispatchProfile, SettlementResult)> = None;
    let mut ks = Vec::with_capacity(len);
    let mut visited = 0usize;
    enumerate(&grid, len, target.units, &mut ks, &mut |ks| {
        visited += 1;
        let profile = grid.profile(ks);
        if check_feasible(&profile, scenario.initial_soc, &spec).is_err() {
            return Ok(());
        }
        let result = match evaluate_dispatch(scenario, &profile, country) {
            Ok(r) => r,
            Err(e) if e.is_infeasibility() => return Ok(()),
            Err(e) => return Err(e),
        };
        if best.as_ref().map_or(true, |b| result.profit_eur > b.1.profit_eur + PROFIT_TIE) {
            best = Some((profile, result));
        }
        Ok(())
    })?;
    let (profile, result) = choose((uniform, uniform_result), best);
    Ok(OptimizedDispatch {
        profile,
        result,
        status: SearchStatus::Optimal,
        position_requested_mwh: target.requested,
        position_mwh: target.mwh,
        labels_created: visited,
    })
}

fn enumerate(
    grid: &Grid,
    len: usize,
    target: i32,
    ks: &mut Vec<i32>,
    visit: &mut dyn FnMut(&[i32]) -> Result<()>,
) -> Result<()> {
    if ks.len() == len {
        return visit(ks);
    }
    let sum: i32 = ks.iter().sum();
    let after = (len - ks.len() - 1) as i32 * grid.levels;
    for k in -grid.levels..=grid.levels {
        if (target - sum - k).abs() > after {
            continue;
        }
        ks.push(k);
        enumerate(grid, len, target, ks, visit)?;
        ks.pop();
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Dynamic programme

#[derive(Debug, Clone, Copy, PartialEq)]
struct PhaseKey(MfrrPhase);

impl Eq for PhaseKey {}

impl Hash for PhaseKey {
    fn hash<H: Hasher>(&self, state: &mut H) {
        match self.0 {
            MfrrPhase::Idle => 0u8.hash(state),
            MfrrPhase::Pending {
                direction,
                block_mw,
                activates_at,
            } => {
                1u8.hash(state);
                direction.hash(state);
                block_mw.to_bits().hash(state);
                activates_at.hash(state);
            }
            MfrrPhase::Latched { direction, block_mw } => {
                2u8.hash(state);
                direction.hash(state);
                block_mw.to_bits().hash(state);
            }
            MfrrPhase::Available => 3u8.hash(state),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct BeDigest {
    mfrr_up_max: Option<u64>,
    mfrr_down_min: Option<u64>,
    first_mfrr: Option<Direction>,
    has_up: bool,
    has_down: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct NlDigest {
    tracker: StateTracker,
    up_defined: bool,
    down_defined: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Digest {
    Be(BeDigest),
    Nl(NlDigest),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct Key {
    pos: i32,
    charged: i32,
    phase: PhaseKey,
    digest: Digest,
}

#[derive(Debug, Clone, Copy)]
struct Label {
    /// BE: [Σ up price·MW, Σ up MW, Σ down price·MW, Σ down MW].
    /// NL: [λ+ so far, λ− so far, 0, 0].
    acc: [f64; 4],
    node: u32,
}

/// Per-minute outcome the search needs from a clearing.
#[derive(Debug, Clone, Copy)]
struct Step {
    next: MfrrPhase,
    up: (f64, f64),
    down: (f64, f64),
    mfrr_direction: Option<Direction>,
    mfrr_marginal: Option<f64>,
    delta: f64,
    extremes: (Option<f64>, Option<f64>),
}

impl Step {
    fn from_clearing(c: &MinuteClearing, next: MfrrPhase) -> Step {
        Step {
            next,
            up: c.afrr_energy(Direction::Upward),
            down: c.afrr_energy(Direction::Downward),
            mfrr_direction: c.mfrr_direction(),
            mfrr_marginal: c.mfrr_marginal_price,
            delta: c.balance_delta(),
            extremes: minute_extremes(c),
        }
    }
}

struct Search<'a> {
    scenario: &'a QuarterHourScenario,
    spec: BessSpec,
    grid: Grid,
    country: Country,
    position_mwh: f64,
    maximize: bool,
    up_range: (f64, f64),
    down_range: (f64, f64),
    mid: f64,
    si_total: f64,
    /// Price direction when no mFRR is activated.
    aggregate_direction: Direction,
    /// Directions mFRR could still first activate in from minute t, for an
    /// idle phase (lead time counted) and for an available phase.
    reach_idle: Vec<[bool; 2]>,
    reach_now: Vec<[bool; 2]>,
    memo: HashMap<(usize, PhaseKey, i32), Option<Step>>,
}

fn ratio_dominates(a: (f64, f64), b: (f64, f64), range: (f64, f64), maximize: bool) -> bool {
    // a dominates b if (a.0 + c1)/(a.1 + c2) is never worse than (b.0 + c1)/(b.1 + c2)
    // for any future c2 >= 0, c1 ∈ [pmin·c2, pmax·c2].
    let (mut a1, a2, mut b1, b2) = (a.0, a.1, b.0, b.1);
    let (mut pmin, mut pmax) = range;
    if maximize {
        a1 = -a1;
        b1 = -b1;
        (pmin, pmax) = (-pmax, -pmin);
    }
    let scale = 1.0 + a1.abs() * b2 + b1.abs() * a2;
    let cross = a1 * b2 - b1 * a2;
    let slope_scale = 1.0 + a1.abs() + b1.abs() + pmin.abs().max(pmax.abs()) * (a2 + b2);
    let slope = |p: f64| (a1 - b1) + p * (b2 - a2);
    cross <= 1e-12 * scale && slope(pmin) <= 1e-12 * slope_scale && slope(pmax) <= 1e-12 * slope_scale
}

impl<'a> Search<'a> {
    fn ladders(&self) -> &Ladders {
        &self.scenario.ladders
    }

    fn step(&mut self, t: usize, phase: MfrrPhase, k: i32) -> Option<Step> {
        let key = (t, PhaseKey(phase), k);
        if let Some(s) = self.memo.get(&key) {
            return *s;
        }
        let p = self.grid.power(k);
        let (charge, discharge) = if p >= 0.0 { (0.0, p) } else { (-p, 0.0) };
        let state = MinuteState {
            minute: t,
            system_imbalance_mw: self.scenario.system_imbalance_mw[t],
            brp_net_consumption_mw: charge - discharge,
        };
        let out = phase
            .advance(&state, self.ladders(), &self.scenario.mfrr_policy)
            .ok()
            .map(|(c, next)| Step::from_clearing(&c, next));
        self.memo.insert(key, out);
        out
    }

    fn initial_digest(&self) -> Digest {
        match self.country {
            Country::Belgium => Digest::Be(BeDigest {
                mfrr_up_max: None,
                mfrr_down_min: None,
                first_mfrr: None,
                has_up: false,
                has_down: false,
            }),
            Country::Netherlands => Digest::Nl(NlDigest {
                tracker: StateTracker::new(),
                up_defined: false,
                down_defined: false,
            }),
        }
    }

    /// Which directions may still set the final Belgian price: [up, down].
    fn relevant(&self, first: Option<Direction>, phase: MfrrPhase, t_next: usize) -> [bool; 2] {
        let idx = |d: Direction| (d == Direction::Downward) as usize;
        let mut set = [false; 2];
        if let Some(d) = first {
            set[idx(d)] = true;
            return set;
        }
        set[idx(self.aggregate_direction)] = true;
        let len = self.reach_now.len() - 1;
        let merge = |set: &mut [bool; 2], r: [bool; 2]| {
            set[0] |= r[0];
            set[1] |= r[1];
        };
        match phase {
            MfrrPhase::Idle => merge(&mut set, self.reach_idle[t_next]),
            MfrrPhase::Available => merge(&mut set, self.reach_now[t_next]),
            MfrrPhase::Pending {
                direction,
                activates_at,
                ..
            } => {
                set[idx(direction)] = true;
                if !self.scenario.mfrr_policy.latching {
                    merge(&mut set, self.reach_now[activates_at.min(len)]);
                }
            }
            MfrrPhase::Latched { direction, .. } => set[idx(direction)] = true,
        }
        set
    }

    fn advance(&self, digest: Digest, acc: [f64; 4], step: &Step, t_next: usize) -> (Digest, [f64; 4]) {
        match digest {
            Digest::Be(mut d) => {
                let acc = [acc[0] + step.up.0, acc[1] + step.up.1, acc[2] + step.down.0, acc[3] + step.down.1];
                d.has_up |= step.up.1 > 0.0;
                d.has_down |= step.down.1 > 0.0;
                match step.mfrr_direction {
                    Some(Direction::Upward) => {
                        d.mfrr_up_max = max_opt(d.mfrr_up_max.map(f64::from_bits), step.mfrr_marginal).map(f64::to_bits)
                    }
                    Some(Direction::Downward) => {
                        d.mfrr_down_min = min_opt(d.mfrr_down_min.map(f64::from_bits), step.mfrr_marginal).map(f64::to_bits)
                    }
                    None => {}
                }
                d.first_mfrr = d.first_mfrr.or(step.mfrr_direction);
                let mut acc = acc;
                let [up, down] = self.relevant(d.first_mfrr, step.next, t_next);
                if !up {
                    (acc[0], acc[1], d.has_up, d.mfrr_up_max) = (0.0, 0.0, false, None);
                }
                if !down {
                    (acc[2], acc[3], d.has_down, d.mfrr_down_min) = (0.0, 0.0, false, None);
                }
                (Digest::Be(d), acc)
            }
            Digest::Nl(mut d) => {
                d.tracker.push(step.delta);
                let up = max_opt(d.up_defined.then_some(acc[0]), step.extremes.0);
                let down = min_opt(d.down_defined.then_some(acc[1]), step.extremes.1);
                d.up_defined = up.is_some();
                d.down_defined = down.is_some();
                (Digest::Nl(d), [up.unwrap_or(0.0), down.unwrap_or(0.0), 0.0, 0.0])
            }
        }
    }

    fn dominates(&self, digest: &Digest, a: &[f64; 4], b: &[f64; 4]) -> bool {
        match digest {
            Digest::Be(d) => {
                (!d.has_up || ratio_dominates((a[0], a[1]), (b[0], b[1]), self.up_range, self.maximize))
                    && (!d.has_down || ratio_dominates((a[2], a[3]), (b[2], b[3]), self.down_range, self.maximize))
            }
            Digest::Nl(d) => {
                let better = |x: f64, y: f64| if self.maximize { x >= y } else { x <= y };
                (!d.up_defined || better(a[0], b[0])) && (!d.down_defined || better(a[1], b[1]))
            }
        }
    }

    fn final_price(&self, key: &Key, acc: &[f64; 4]) -> f64 {
        match key.digest {
            Digest::Be(d) => {
                let direction = match d.first_mfrr {
                    Some(m) => direction_from_mfrr(m),
                    None => direction_from_aggregate(self.si_total + key.pos as f64 * self.grid.step),
                };
                let (vwap, mfrr) = match direction {
                    SystemDirection::Shortage => (d.has_up.then(|| acc[0] / acc[1]), d.mfrr_up_max),
                    SystemDirection::Surplus => (d.has_down.then(|| acc[2] / acc[3]), d.mfrr_down_min),
                };
                select_price(direction, vwap, self.mid, mfrr.map(f64::from_bits)).1
            }
            Digest::Nl(d) => {
                let (long, short, _) = settle(
                    d.tracker.state(),
                    d.up_defined.then_some(acc[0]),
                    d.down_defined.then_some(acc[1]),
                    self.mid,
                );
                if self.position_mwh < 0.0 {
                    short
                } else {
                    long
                }
            }
        }
    }
}

/// Per start minute, the directions in which some later minute could saturate
/// aFRR under some battery power, with and without room for the lead time.
fn mfrr_reach(scenario: &QuarterHourScenario, spec: &BessSpec) -> (Vec<[bool; 2]>, Vec<[bool; 2]>) {
    let len = scenario.isp_length_minutes;
    let ladders = &scenario.ladders;
    let can = |d: Direction, si: f64| {
        let afrr = ladders.get(Product::Afrr, d).total_capacity();
        let mfrr = ladders.get(Product::Mfrr, d).total_capacity();
        // Largest residual in direction d over battery powers.
        mfrr > 0.0 && spec.power_max_mw - d.sign() * si >= afrr - crate::market::EPS
    };
    let lead = scenario.mfrr_policy.lead_time_minutes;
    let mut idle = vec![[false; 2]; len + 1];
    let mut now = vec![[false; 2]; len + 1];
    for t in (0..len).rev() {
        let si = scenario.system_imbalance_mw[t];
        let here = [can(Direction::Upward, si), can(Direction::Downward, si)];
        for i in 0..2 {
            now[t][i] = now[t + 1][i] || here[i];
            idle[t][i] = idle[t + 1][i] || (here[i] && t + lead < len);
        }
    }
    (idle, now)
}

fn soc_of(spec: &BessSpec, soc0: f64, grid: &Grid, pos: i32, charged: i32) -> f64 {
    let discharged = pos + charged;
    soc0 + (charged as f64 * grid.step * spec.eta_charge - discharged as f64 * grid.step / spec.eta_discharge)
        * spec.dt_hours
        / spec.energy_max_mwh
}

/// Maximises λ·E over grid profiles with the rounded target position.
pub fn optimize_dispatch(
    scenario: &QuarterHourScenario,
    position: f64,
    spec: &BessSpec,
    config: &OptimizerConfig,
) -> Result<OptimizedDispatch> {
    if config.search_mode == SearchMode::Exhaustive {
        let mut s = scenario.clone();
        s.country = config.country;
        return brute_force_oracle(&s, position, spec, config.power_grid_step_mw);
    }
    let (grid, target, uniform) = prepare(scenario, spec, config.power_grid_step_mw, position)?;
    let uniform_result = evaluate_dispatch(scenario, &uniform, config.country)?;
    let done = |profile, result, status, labels_created| OptimizedDispatch {
        profile,
        result,
        status,
        position_requested_mwh: target.requested,
        position_mwh: target.mwh,
        labels_created,
    };
    // Every profile earns λ·0 when the position is zero.
    if target.units == 0 {
        return Ok(done(uniform, uniform_result, SearchStatus::Optimal, 0));
    }

    let mut spec = *spec;
    spec.dt_hours = scenario.dt_hours;
    let len = scenario.isp_length_minutes;
    let soc0 = scenario.initial_soc;
    let swing = len as f64 * spec.power_max_mw * spec.dt_hours / spec.energy_max_mwh;
    let track_soc = soc0 + swing * spec.eta_charge > spec.soc_max + 1e-9 || soc0 - swing / spec.eta_discharge < spec.soc_min - 1e-9;
    let ladders = &scenario.ladders;
    let range = |product, direction| ladders.get(product, direction).price_range().unwrap_or((0.0, 0.0));

    let mut search = Search {
        scenario,
        spec,
        grid,
        country: config.country,
        position_mwh: target.mwh,
        maximize: target.units > 0,
        up_range: range(Product::Afrr, Direction::Upward),
        down_range: range(Product::Afrr, Direction::Downward),
        mid: crate::pricing_be::mid_price(&crate::market::QuarterClearing {
            minutes: vec![],
            dt_hours: scenario.dt_hours,
            afrr_up_best_price: ladders.afrr_up.best_price(),
            afrr_down_best_price: ladders.afrr_down.best_price(),
            mfrr_trigger_minute: None,
        })?,
        si_total: scenario.system_imbalance_mw.iter().sum(),
        aggregate_direction: Direction::Upward,
        reach_idle: Vec::new(),
        reach_now: Vec::new(),
        memo: HashMap::new(),
    };
    search.aggregate_direction = match direction_from_aggregate(search.si_total + target.units as f64 * grid.step) {
        SystemDirection::Shortage => Direction::Upward,
        SystemDirection::Surplus => Direction::Downward,
    };
    (search.reach_idle, search.reach_now) = mfrr_reach(scenario, &spec);

    const ROOT: u32 = u32::MAX;
    let mut arena: Vec<(u32, i32)> = Vec::new();
    let mut layer: IndexMap<Key, Vec<Label>> = IndexMap::new();
    layer.insert(
        Key {
            pos: 0,
            charged: 0,
            phase: PhaseKey(MfrrPhase::Idle),
            digest: search.initial_digest(),
        },
        vec![Label { acc: [0.0; 4], node: ROOT }],
    );

    let mut created = 0usize;
    for t in 0..len {
        let remaining = (len - t - 1) as i32 * grid.levels;
        let mut next: IndexMap<Key, Vec<Label>> = IndexMap::new();
        for (key, labels) in &layer {
            for k in -grid.levels..=grid.levels {
                let pos = key.pos + k;
                if (target.units - pos).abs() > remaining {
                    continue;
                }
                let charged = if track_soc { key.charged + (-k).max(0) } else { 0 };
                if track_soc {
                    let soc = soc_of(&search.spec, soc0, &grid, pos, charged);
                    if soc < search.spec.soc_min - 1e-9 || soc > search.spec.soc_max + 1e-9 {
                        continue;
                    }
                }
                let Some(step) = search.step(t, key.phase.0, k) else {
                    continue;
                };
                for label in labels {
                    let (digest, acc) = search.advance(key.digest, label.acc, &step, t + 1);
                    let new_key = Key {
                        pos,
                        charged,
                        phase: PhaseKey(step.next),
                        digest,
                    };
                    let front = next.entry(new_key).or_default();
                    if front.iter().any(|l| search.dominates(&digest, &l.acc, &acc)) {
                        continue;
                    }
                    front.retain(|l| !search.dominates(&digest, &acc, &l.acc));
                    front.push(Label {
                        acc,
                        node: arena.len() as u32,
                    });
                    arena.push((label.node, k));
                    created += 1;
                }
            }
            if created > config.max_nodes {
                return Ok(done(uniform, uniform_result, SearchStatus::BudgetExceeded, created));
            }
        }
        layer = next;
    }

    let mut best: Option<(f64, u32)> = None;
    for (key, labels) in &layer {
        if key.pos != target.units {
            continue;
        }
        for label in labels {
            let profit = search.final_price(key, &label.acc) * target.mwh;
            if best.map_or(true, |(b, _)| profit > b + PROFIT_TIE) {
                best = Some((profit, label.node));
            }
        }
    }

    let found = match best {
        Some((_, mut node)) => {
            let mut ks = Vec::with_capacity(len);
            while node != ROOT {
                let (parent, k) = arena[node as usize];
                ks.push(k);
                node = parent;
            }
            ks.reverse();
            let profile = grid.profile(&ks);
            let result = evaluate_dispatch(scenario, &profile, config.country)?;
            Some((profile, result))
        }
        None => None,
    };
    let (profile, result) = choose((uniform, uniform_result), found);
    Ok(done(profile, result, SearchStatus::Optimal, created))
}
