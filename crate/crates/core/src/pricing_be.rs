//! Belgian single imbalance price: volume-weighted aFRR price with an mFRR
//! adjustment, chosen by the direction of the total system imbalance.

use crate::error::{Error, Result};
use crate::market::{Direction, QuarterClearing, EPS};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemDirection {
    Shortage,
    Surplus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionSource {
    /// Sign of Σ_t (SI_t − BRP net consumption_t).
    AggregateImbalance,
    /// Direction of the first mFRR activation of the period.
    MfrrActivation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BelgianBranch {
    ShortageAfrr,
    ShortageWithMfrr,
    SurplusAfrr,
    SurplusWithMfrr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BelgianPriceBreakdown {
    pub vwap_up: Option<f64>,
    pub vwap_down: Option<f64>,
    /// Most extreme mFRR marginal in the price-setting direction.
    pub mfrr_marginal: Option<f64>,
    /// Average system imbalance including the BRP, MW.
    pub si_sign_basis: f64,
    pub direction: SystemDirection,
    pub direction_source: DirectionSource,
    pub branch: BelgianBranch,
    /// Set when no aFRR was activated in the price-setting direction and the
    /// mid price of the best aFRR bids stood in for the VWAP.
    pub vwap_fallback: bool,
    pub final_price: f64,
}

/// Volume-weighted average price of aFRR energy activated in `direction`
/// across all minutes of the period.
pub fn vwap_afrr(quarter: &QuarterClearing, direction: Direction) -> Result<f64> {
    let (n, d) = afrr_energy_totals(quarter, direction);
    if d > 0.0 {
        Ok(n / d)
    } else {
        Err(Error::NoActivation(direction))
    }
}

pub(crate) fn afrr_energy_totals(quarter: &QuarterClearing, direction: Direction) -> (f64, f64) {
    quarter.minutes.iter().fold((0.0, 0.0), |(n, d), m| {
        let (mn, md) = m.afrr_energy(direction);
        (n + mn, d + md)
    })
}

/// `Shortage` when the aggregate is ≤ 0 (within tolerance).
pub fn direction_from_aggregate(aggregate_mw_min: f64) -> SystemDirection {
    if aggregate_mw_min <= EPS {
        SystemDirection::Shortage
    } else {
        SystemDirection::Surplus
    }
}

pub(crate) fn direction_from_mfrr(d: Direction) -> SystemDirection {
    match d {
        Direction::Upward => SystemDirection::Shortage,
        Direction::Downward => SystemDirection::Surplus,
    }
}

pub(crate) fn mid_price(quarter: &QuarterClearing) -> Result<f64> {
    match (quarter.afrr_up_best_price, quarter.afrr_down_best_price) {
        (Some(up), Some(down)) => Ok((up + down) / 2.0),
        (None, _) => Err(Error::EmptyLadder("aFRR upward")),
        (_, None) => Err(Error::EmptyLadder("aFRR downward")),
    }
}

/// Price selection from already-aggregated inputs. Shared with the optimizer.
pub(crate) fn select_price(
    direction: SystemDirection,
    vwap: Option<f64>,
    mid: f64,
    mfrr_extreme: Option<f64>,
) -> (BelgianBranch, f64) {
    let base = vwap.unwrap_or(mid);
    match (direction, mfrr_extreme) {
        (SystemDirection::Shortage, None) => (BelgianBranch::ShortageAfrr, base),
        (SystemDirection::Shortage, Some(m)) => (BelgianBranch::ShortageWithMfrr, base.max(m)),
        (SystemDirection::Surplus, None) => (BelgianBranch::SurplusAfrr, base),
        (SystemDirection::Surplus, Some(m)) => (BelgianBranch::SurplusWithMfrr, base.min(m)),
    }
}

pub fn imbalance_price_be(quarter: &QuarterClearing) -> Result<BelgianPriceBreakdown> {
    let aggregate = quarter.aggregate_imbalance();
    let (direction, direction_source) = match quarter.first_mfrr_direction() {
        Some(d) => (direction_from_mfrr(d), DirectionSource::MfrrActivation),
        None => (direction_from_aggregate(aggregate), DirectionSource::AggregateImbalance),
    };
    let vwap_up = vwap_afrr(quarter, Direction::Upward).ok();
    let vwap_down = vwap_afrr(quarter, Direction::Downward).ok();

    let setting = match direction {
        SystemDirection::Shortage => Direction::Upward,
        SystemDirection::Surplus => Direction::Downward,
    };
    let mfrr_marginal = quarter
        .minutes
        .iter()
        .filter(|m| m.mfrr_direction() == Some(setting))
        .filter_map(|m| m.mfrr_marginal_price)
        .reduce(|a, b| match setting {
            Direction::Upward => a.max(b),
            Direction::Downward => a.min(b),
        });
    let vwap = match setting {
        Direction::Upward => vwap_up,
        Direction::Downward => vwap_down,
    };
    let mid = mid_price(quarter)?;
    let (branch, final_price) = select_price(direction, vwap, mid, mfrr_marginal);

    Ok(BelgianPriceBreakdown {
        vwap_up,
        vwap_down,
        mfrr_marginal,
        si_sign_basis: quarter.average_imbalance_mw(),
        direction,
        direction_source,
        branch,
        vwap_fallback: vwap.is_none(),
        final_price,
    })
}
