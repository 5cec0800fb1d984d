//! Dutch regulation state and marginal imbalance pricing.

use crate::error::Result;
use crate::market::{Direction, QuarterClearing, EPS};
use crate::pricing_be::mid_price;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "i8", try_from = "i8")]
pub enum RegulationState {
    /// No FRR activation.
    Zero,
    /// Upward only, or both directions with non-decreasing balance deltas.
    Up,
    /// Downward only, or both directions with non-increasing balance deltas.
    Down,
    /// Both directions without monotone balance deltas: dual pricing.
    Dual,
}

impl RegulationState {
    pub fn value(self) -> i8 {
        match self {
            RegulationState::Zero => 0,
            RegulationState::Up => 1,
            RegulationState::Down => -1,
            RegulationState::Dual => 2,
        }
    }
}

impl From<RegulationState> for i8 {
    fn from(s: RegulationState) -> i8 {
        s.value()
    }
}

impl TryFrom<i8> for RegulationState {
    type Error = String;

    fn try_from(v: i8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(RegulationState::Zero),
            1 => Ok(RegulationState::Up),
            -1 => Ok(RegulationState::Down),
            2 => Ok(RegulationState::Dual),
            other => Err(format!("invalid regulation state {other}")),
        }
    }
}

/// Incremental classifier over a delta sequence. The optimizer carries one of
/// these per search state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub(crate) struct StateTracker {
    pub has_up: bool,
    pub has_down: bool,
    pub non_decreasing: bool,
    pub non_increasing: bool,
    pub last: Option<u64>,
}

impl StateTracker {
    pub fn new() -> Self {
        StateTracker {
            non_decreasing: true,
            non_increasing: true,
            ..Default::default()
        }
    }

    pub fn push(&mut self, delta: f64) {
        self.has_up |= delta > EPS;
        self.has_down |= delta < -EPS;
        if let Some(bits) = self.last {
            let prev = f64::from_bits(bits);
            self.non_decreasing &= delta >= prev - EPS;
            self.non_increasing &= delta <= prev + EPS;
        }
        self.last = Some(delta.to_bits());
    }

    pub fn state(&self) -> RegulationState {
        match (self.has_up, self.has_down) {
            (false, false) => RegulationState::Zero,
            (true, false) => RegulationState::Up,
            (false, true) => RegulationState::Down,
            (true, true) if self.non_decreasing => RegulationState::Up,
            (true, true) if self.non_increasing => RegulationState::Down,
            (true, true) => RegulationState::Dual,
        }
    }
}

/// Per-minute net activated FRR (aFRR + mFRR, upward minus downward).
pub fn balance_deltas(quarter: &QuarterClearing) -> Vec<f64> {
    quarter.minutes.iter().map(|m| m.balance_delta()).collect()
}

pub fn regulation_state(deltas: &[f64]) -> RegulationState {
    let mut tracker = StateTracker::new();
    for &d in deltas {
        tracker.push(d);
    }
    tracker.state()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginalPrices {
    pub up: Option<f64>,
    pub down: Option<f64>,
    pub mid: f64,
}

/// Upward/downward extremes of the per-minute marginal prices, including mFRR
/// marginals, plus the mid price of the best aFRR bids.
pub fn marginal_prices(quarter: &QuarterClearing) -> Result<MarginalPrices> {
    let mut up: Option<f64> = None;
    let mut down: Option<f64> = None;
    for m in &quarter.minutes {
        let (u, d) = minute_extremes(m);
        up = max_opt(up, u);
        down = min_opt(down, d);
    }
    Ok(MarginalPrices {
        up,
        down,
        mid: mid_price(quarter)?,
    })
}

/// (highest upward marginal, lowest downward marginal) of one minute.
pub(crate) fn minute_extremes(m: &crate::market::MinuteClearing) -> (Option<f64>, Option<f64>) {
    let mut up = None;
    let mut down = None;
    match m.afrr_direction() {
        Some(Direction::Upward) => up = max_opt(up, m.afrr_marginal_price),
        Some(Direction::Downward) => down = min_opt(down, m.afrr_marginal_price),
        None => {}
    }
    match m.mfrr_direction() {
        Some(Direction::Upward) => up = max_opt(up, m.mfrr_marginal_price),
        Some(Direction::Downward) => down = min_opt(down, m.mfrr_marginal_price),
        None => {}
    }
    (up, down)
}

pub(crate) fn max_opt(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.max(y)),
        (x, None) => x,
        (None, y) => y,
    }
}

pub(crate) fn min_opt(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.min(y)),
        (x, None) => x,
        (None, y) => y,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DutchPriceBreakdown {
    pub lambda_up: Option<f64>,
    pub lambda_down: Option<f64>,
    pub lambda_mid: f64,
    pub state: RegulationState,
    /// Price paid to a BRP with a surplus (E ≥ 0).
    pub final_price_long: f64,
    /// Price charged to a BRP with a shortage (E < 0).
    pub final_price_short: f64,
    /// The state's price setter was undefined and λ_mid stood in.
    pub mid_fallback: bool,
    /// mFRR marginals took part in λ+/λ−.
    pub mfrr_in_extremes: bool,
}

impl DutchPriceBreakdown {
    /// Price the BRP with energy position `position_mwh` faces.
    pub fn price_for(&self, position_mwh: f64) -> f64 {
        if position_mwh < 0.0 {
            self.final_price_short
        } else {
            self.final_price_long
        }
    }
}

/// Shared with the optimizer: price sides from state and marginals.
pub(crate) fn settle(state: RegulationState, up: Option<f64>, down: Option<f64>, mid: f64) -> (f64, f64, bool) {
    match state {
        RegulationState::Zero => (mid, mid, false),
        RegulationState::Up => {
            let p = up.unwrap_or(mid);
            (p, p, up.is_none())
        }
        RegulationState::Down => {
            let p = down.unwrap_or(mid);
            (p, p, down.is_none())
        }
        RegulationState::Dual => {
            let long = down.map_or(mid, |d| d.min(mid));
            let short = up.map_or(mid, |u| u.max(mid));
            (long, short, up.is_none() || down.is_none())
        }
    }
}

/// Dutch settlement of the period. `_position_mwh` selects the side only
/// through [`DutchPriceBreakdown::price_for`]; both sides are reported.
pub fn imbalance_price_nl(quarter: &QuarterClearing, _position_mwh: f64) -> Result<DutchPriceBreakdown> {
    let state = regulation_state(&balance_deltas(quarter));
    let prices = marginal_prices(quarter)?;
    let (long, short, mid_fallback) = settle(state, prices.up, prices.down, prices.mid);
    Ok(DutchPriceBreakdown {
        lambda_up: prices.up,
        lambda_down: prices.down,
        lambda_mid: prices.mid,
        state,
        final_price_long: long,
        final_price_short: short,
        mid_fallback,
        mfrr_in_extremes: quarter.any_mfrr(),
    })
}
