//! Minute-resolution merit-order clearing of aFRR and mFRR bid ladders.
//!
//! The TSO covers the residual imbalance of every minute with aFRR first. mFRR
//! only becomes eligible once aFRR is saturated in the needed direction, is
//! delivered `lead_time_minutes` after that trigger, and (when latching) stays
//! on as a block until the end of the settlement period.

use crate::battery::DispatchProfile;
use crate::error::{Error, Result};
use crate::scenario::QuarterHourScenario;
use serde::{Deserialize, Serialize};

/// Volume tolerance in MW.
pub const EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Upward,
    Downward,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Upward => 1.0,
            Direction::Downward => -1.0,
        }
    }

    /// Direction of a signed volume, `None` inside the tolerance band.
    pub fn of(volume: f64) -> Option<Direction> {
        if volume > EPS {
            Some(Direction::Upward)
        } else if volume < -EPS {
            Some(Direction::Downward)
        } else {
            None
        }
    }

    pub fn opposite(self) -> Direction {
        match self {
            Direction::Upward => Direction::Downward,
            Direction::Downward => Direction::Upward,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Product {
    Afrr,
    Mfrr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bid {
    pub id: String,
    pub direction: Direction,
    pub product: Product,
    /// Activation price in EUR/MWh.
    pub price: f64,
    pub capacity_mw: f64,
}

/// Bids of one product and direction in merit order: upward ascending by
/// price, downward descending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BidLadder {
    direction: Direction,
    product: Product,
    bids: Vec<Bid>,
}

impl BidLadder {
    pub fn new(direction: Direction, product: Product, bids: Vec<Bid>) -> Result<Self> {
        for bid in &bids {
            if bid.direction != direction || bid.product != product {
                return Err(Error::validation(
                    "ladder membership",
                    format!("bid `{}` does not belong to a {product:?} {direction:?} ladder", bid.id),
                ));
            }
            if !bid.price.is_finite() {
                return Err(Error::validation(
                    "finite price",
                    format!("bid `{}` has a non-finite price", bid.id),
                ));
            }
            if !(bid.capacity_mw >= 0.0) || !bid.capacity_mw.is_finite() {
                return Err(Error::validation(
                    "capacity >= 0",
                    format!("bid `{}` has capacity {}", bid.id, bid.capacity_mw),
                ));
            }
        }
        for pair in bids.windows(2) {
            let ordered = match direction {
                Direction::Upward => pair[0].price <= pair[1].price,
                Direction::Downward => pair[0].price >= pair[1].price,
            };
            if !ordered {
                return Err(Error::validation(
                    "merit order",
                    format!(
                        "bids `{}` ({}) and `{}` ({}) are out of order",
                        pair[0].id, pair[0].price, pair[1].id, pair[1].price
                    ),
                ));
            }
        }
        Ok(BidLadder {
            direction,
            product,
            bids,
        })
    }

    pub fn empty(direction: Direction, product: Product) -> Self {
        BidLadder {
            direction,
            product,
            bids: Vec::new(),
        }
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn product(&self) -> Product {
        self.product
    }

    pub fn bids(&self) -> &[Bid] {
        &self.bids
    }

    pub fn is_empty(&self) -> bool {
        self.bids.is_empty()
    }

    pub fn total_capacity(&self) -> f64 {
        self.bids.iter().map(|b| b.capacity_mw).sum()
    }

    /// Price of the first bid in merit order.
    pub fn best_price(&self) -> Option<f64> {
        self.bids.first().map(|b| b.price)
    }

    /// (lowest, highest) bid price.
    pub fn price_range(&self) -> Option<(f64, f64)> {
        let first = self.bids.first()?.price;
        let last = self.bids.last()?.price;
        Some((first.min(last), first.max(last)))
    }
}

/// The four ladders of one settlement period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ladders {
    pub afrr_up: BidLadder,
    pub afrr_down: BidLadder,
    pub mfrr_up: BidLadder,
    pub mfrr_down: BidLadder,
}

impl Ladders {
    pub fn new(
        afrr_up: BidLadder,
        afrr_down: BidLadder,
        mfrr_up: BidLadder,
        mfrr_down: BidLadder,
    ) -> Result<Self> {
        let slots = [
            (&afrr_up, Product::Afrr, Direction::Upward),
            (&afrr_down, Product::Afrr, Direction::Downward),
            (&mfrr_up, Product::Mfrr, Direction::Upward),
            (&mfrr_down, Product::Mfrr, Direction::Downward),
        ];
        for (ladder, product, direction) in slots {
            if ladder.product != product || ladder.direction != direction {
                return Err(Error::validation(
                    "ladder slot",
                    format!("{product:?} {direction:?} slot holds a {:?} {:?} ladder", ladder.product, ladder.direction),
                ));
            }
        }
        Ok(Ladders {
            afrr_up,
            afrr_down,
            mfrr_up,
            mfrr_down,
        })
    }

    pub fn get(&self, product: Product, direction: Direction) -> &BidLadder {
        match (product, direction) {
            (Product::Afrr, Direction::Upward) => &self.afrr_up,
            (Product::Afrr, Direction::Downward) => &self.afrr_down,
            (Product::Mfrr, Direction::Upward) => &self.mfrr_up,
            (Product::Mfrr, Direction::Downward) => &self.mfrr_down,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Activation {
    pub bid_id: String,
    pub price: f64,
    pub volume_mw: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MeritOrderFill {
    pub activations: Vec<Activation>,
    pub marginal_price: Option<f64>,
}

impl MeritOrderFill {
    pub fn volume(&self) -> f64 {
        self.activations.iter().map(|a| a.volume_mw).sum()
    }

    /// (Σ price·MW, Σ MW) over the activations, in activation order.
    pub fn energy_terms(&self) -> (f64, f64) {
        self.activations
            .iter()
            .fold((0.0, 0.0), |(n, d), a| (n + a.price * a.volume_mw, d + a.volume_mw))
    }
}

/// Fills `volume` MW from the ladder in merit order.
pub fn activate_merit_order(ladder: &BidLadder, volume: f64) -> Result<MeritOrderFill> {
    let total = ladder.total_capacity();
    if volume > total + EPS || volume.is_nan() {
        return Err(Error::VolumeExceedsLadder {
            minute: None,
            direction: ladder.direction,
            requested: volume,
            available: total,
        });
    }
    let mut fill = MeritOrderFill::default();
    if volume <= EPS {
        return Ok(fill);
    }
    let mut remaining = volume;
    for bid in &ladder.bids {
        if remaining <= EPS {
            break;
        }
        if bid.capacity_mw <= 0.0 {
            continue;
        }
        let take = bid.capacity_mw.min(remaining);
        remaining -= take;
        fill.activations.push(Activation {
            bid_id: bid.id.clone(),
            price: bid.price,
            volume_mw: take,
        });
        fill.marginal_price = Some(bid.price);
    }
    Ok(fill)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinuteState {
    pub minute: usize,
    /// Exogenous system imbalance, + = surplus.
    pub system_imbalance_mw: f64,
    /// BRP battery charge minus discharge.
    pub brp_net_consumption_mw: f64,
}

/// Signed volume the TSO must activate: + upward, - downward.
pub fn required_balancing(state: &MinuteState) -> f64 {
    state.brp_net_consumption_mw - state.system_imbalance_mw
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinuteClearing {
    pub minute: usize,
    pub system_imbalance_mw: f64,
    pub brp_net_consumption_mw: f64,
    pub residual_mw: f64,
    /// Signed, + = upward.
    pub afrr_volume_mw: f64,
    /// Signed, + = upward.
    pub mfrr_volume_mw: f64,
    pub afrr_activations: Vec<Activation>,
    pub mfrr_activations: Vec<Activation>,
    pub afrr_marginal_price: Option<f64>,
    pub mfrr_marginal_price: Option<f64>,
    pub afrr_saturated: bool,
    pub mfrr_active: bool,
}

impl MinuteClearing {
    /// Net activated FRR, upward minus downward.
    pub fn balance_delta(&self) -> f64 {
        self.afrr_volume_mw + self.mfrr_volume_mw
    }

    pub fn afrr_direction(&self) -> Option<Direction> {
        if self.afrr_activations.is_empty() {
            None
        } else {
            Direction::of(self.afrr_volume_mw)
        }
    }

    pub fn mfrr_direction(&self) -> Option<Direction> {
        if self.mfrr_activations.is_empty() {
            None
        } else {
            Direction::of(self.mfrr_volume_mw)
        }
    }

    /// (Σ price·MW, Σ MW) of this minute's aFRR activations in `direction`.
    pub fn afrr_energy(&self, direction: Direction) -> (f64, f64) {
        if self.afrr_direction() == Some(direction) {
            self.afrr_activations
                .iter()
                .fold((0.0, 0.0), |(n, d), a| (n + a.price * a.volume_mw, d + a.volume_mw))
        } else {
            (0.0, 0.0)
        }
    }

    /// TSO activation cost of the minute per MW (upward paid, downward received).
    pub fn activation_cost(&self) -> f64 {
        let leg = |acts: &[Activation], volume: f64| {
            let sign = if volume >= 0.0 { 1.0 } else { -1.0 };
            sign * acts.iter().map(|a| a.price * a.volume_mw).sum::<f64>()
        };
        leg(&self.afrr_activations, self.afrr_volume_mw) + leg(&self.mfrr_activations, self.mfrr_volume_mw)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MfrrPolicy {
    pub lead_time_minutes: usize,
    pub latching: bool,
}

impl Default for MfrrPolicy {
    fn default() -> Self {
        MfrrPolicy {
            lead_time_minutes: 3,
            latching: true,
        }
    }
}

/// How mFRR may be used in a given minute.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum MfrrDispatch {
    /// mFRR covers whatever aFRR cannot.
    Excess,
    /// Not yet delivered; aFRR alone must cover the residual.
    Unavailable,
    /// A latched block of at least `volume` MW in `direction`.
    Block { direction: Direction, volume: f64 },
}

fn exceeds(state: &MinuteState, direction: Direction, requested: f64, available: f64) -> Error {
    Error::VolumeExceedsLadder {
        minute: Some(state.minute),
        direction,
        requested,
        available,
    }
}

pub(crate) fn clear_with(
    state: &MinuteState,
    ladders: &Ladders,
    dispatch: MfrrDispatch,
) -> Result<MinuteClearing> {
    let residual = required_balancing(state);
    let afrr_cap = |d: Direction| ladders.get(Product::Afrr, d).total_capacity();
    let mfrr_cap = |d: Direction| ladders.get(Product::Mfrr, d).total_capacity();

    let (afrr_signed, mfrr_signed) = match (dispatch, Direction::of(residual)) {
        (MfrrDispatch::Excess, None) | (MfrrDispatch::Unavailable, None) => (0.0, 0.0),
        (MfrrDispatch::Excess, Some(d)) => {
            let need = residual.abs();
            let cap = afrr_cap(d);
            if need > cap + EPS {
                if need > cap + mfrr_cap(d) + EPS {
                    return Err(exceeds(state, d, need, cap + mfrr_cap(d)));
                }
                (d.sign() * cap, d.sign() * (need - cap))
            } else {
                (residual, 0.0)
            }
        }
        (MfrrDispatch::Unavailable, Some(d)) => {
            if residual.abs() > afrr_cap(d) + EPS {
                return Err(exceeds(state, d, residual.abs(), afrr_cap(d)));
            }
            (residual, 0.0)
        }
        (MfrrDispatch::Block { direction, volume }, _) => {
            let s = direction.sign();
            let along = s * residual;
            let mfrr = volume.max(along - afrr_cap(direction));
            if mfrr > mfrr_cap(direction) + EPS {
                return Err(exceeds(state, direction, along, afrr_cap(direction) + mfrr_cap(direction)));
            }
            let afrr = residual - s * mfrr;
            if let Some(d) = Direction::of(afrr) {
                if afrr.abs() > afrr_cap(d) + EPS {
                    return Err(exceeds(state, d, afrr.abs(), afrr_cap(d)));
                }
            }
            (afrr, s * mfrr)
        }
    };

    let fill = |product: Product, signed: f64| -> Result<MeritOrderFill> {
        match Direction::of(signed) {
            None => Ok(MeritOrderFill::default()),
            Some(d) => activate_merit_order(ladders.get(product, d), signed.abs()).map_err(|e| match e {
                Error::VolumeExceedsLadder {
                    direction,
                    requested,
                    available,
                    ..
                } => Error::VolumeExceedsLadder {
                    minute: Some(state.minute),
                    direction,
                    requested,
                    available,
                },
                other => other,
            }),
        }
    };
    let afrr = fill(Product::Afrr, afrr_signed)?;
    let mfrr = fill(Product::Mfrr, mfrr_signed)?;

    let afrr_saturated = match Direction::of(residual) {
        Some(d) => d.sign() * afrr_signed >= afrr_cap(d) - EPS,
        None => false,
    };
    let mfrr_active = afrr_saturated || !mfrr.activations.is_empty();

    Ok(MinuteClearing {
        minute: state.minute,
        system_imbalance_mw: state.system_imbalance_mw,
        brp_net_consumption_mw: state.brp_net_consumption_mw,
        residual_mw: residual,
        afrr_volume_mw: if afrr.activations.is_empty() { 0.0 } else { afrr_signed },
        mfrr_volume_mw: if mfrr.activations.is_empty() { 0.0 } else { mfrr_signed },
        afrr_marginal_price: afrr.marginal_price,
        mfrr_marginal_price: mfrr.marginal_price,
        afrr_activations: afrr.activations,
        mfrr_activations: mfrr.activations,
        afrr_saturated,
        mfrr_active,
    })
}

/// Clears one minute with aFRR priority. mFRR covers any volume beyond aFRR
/// saturation; `mfrr_forced_on` marks mFRR as active regardless.
pub fn clear_minute(state: &MinuteState, ladders: &Ladders, mfrr_forced_on: bool) -> Result<MinuteClearing> {
    let mut clearing = clear_with(state, ladders, MfrrDispatch::Excess)?;
    clearing.mfrr_active |= mfrr_forced_on;
    Ok(clearing)
}

/// Volume of whole mFRR bids, in merit order, needed to cover `needed` MW.
/// At least one bid is called.
fn block_volume(ladder: &BidLadder, needed: f64) -> f64 {
    let mut cum = 0.0;
    for bid in ladder.bids() {
        if bid.capacity_mw <= 0.0 {
            continue;
        }
        cum += bid.capacity_mw;
        if cum >= needed - EPS {
            break;
        }
    }
    cum
}

/// mFRR activation status carried from one minute to the next.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "phase", rename_all = "snake_case")]
pub enum MfrrPhase {
    Idle,
    Pending {
        direction: Direction,
        block_mw: f64,
        activates_at: usize,
    },
    Latched {
        direction: Direction,
        block_mw: f64,
    },
    /// Non-latching: mFRR covers excess volume from now on.
    Available,
}

impl MfrrPhase {
    /// Clears the minute described by `state` and returns the phase for the
    /// following minute.
    pub fn advance(
        &self,
        state: &MinuteState,
        ladders: &Ladders,
        policy: &MfrrPolicy,
    ) -> Result<(MinuteClearing, MfrrPhase)> {
        let t = state.minute;
        match *self {
            MfrrPhase::Idle => {
                if policy.lead_time_minutes == 0 {
                    let probe = clear_with(state, ladders, MfrrDispatch::Excess)?;
                    match trigger_direction(&probe, ladders) {
                        None => Ok((probe, MfrrPhase::Idle)),
                        Some(d) if policy.latching => {
                            let excess = (probe.residual_mw.abs()
                                - ladders.get(Product::Afrr, d).total_capacity())
                            .max(0.0);
                            let block_mw = block_volume(ladders.get(Product::Mfrr, d), excess);
                            let clearing = clear_with(
                                state,
                                ladders,
                                MfrrDispatch::Block {
                                    direction: d,
                                    volume: block_mw,
                                },
                            )?;
                            Ok((clearing, MfrrPhase::Latched { direction: d, block_mw }))
                        }
                        Some(_) => Ok((probe, MfrrPhase::Available)),
                    }
                } else {
                    let clearing = clear_with(state, ladders, MfrrDispatch::Unavailable)?;
                    let next = match trigger_direction(&clearing, ladders) {
                        Some(d) => MfrrPhase::Pending {
                            direction: d,
                            block_mw: block_volume(ladders.get(Product::Mfrr, d), 0.0),
                            activates_at: t + policy.lead_time_minutes,
                        },
                        None => MfrrPhase::Idle,
                    };
                    Ok((clearing, next))
                }
            }
            MfrrPhase::Pending {
                direction,
                block_mw,
                activates_at,
            } => {
                if t < activates_at {
                    let clearing = clear_with(state, ladders, MfrrDispatch::Unavailable)?;
                    Ok((clearing, *self))
                } else if policy.latching {
                    MfrrPhase::Latched { direction, block_mw }.advance(state, ladders, policy)
                } else {
                    MfrrPhase::Available.advance(state, ladders, policy)
                }
            }
            MfrrPhase::Latched { direction, block_mw } => {
                let mut clearing = clear_with(
                    state,
                    ladders,
                    MfrrDispatch::Block {
                        direction,
                        volume: block_mw,
                    },
                )?;
                clearing.mfrr_active = true;
                Ok((clearing, *self))
            }
            MfrrPhase::Available => {
                let clearing = clear_with(state, ladders, MfrrDispatch::Excess)?;
                Ok((clearing, MfrrPhase::Available))
            }
        }
    }
}

/// Direction in which a saturated aFRR ladder calls mFRR, if any mFRR is offered.
fn trigger_direction(clearing: &MinuteClearing, ladders: &Ladders) -> Option<Direction> {
    if !clearing.afrr_saturated {
        return None;
    }
    let d = Direction::of(clearing.residual_mw)?;
    (ladders.get(Product::Mfrr, d).total_capacity() > 0.0).then_some(d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuarterClearing {
    pub minutes: Vec<MinuteClearing>,
    pub dt_hours: f64,
    pub afrr_up_best_price: Option<f64>,
    pub afrr_down_best_price: Option<f64>,
    pub mfrr_trigger_minute: Option<usize>,
}

impl QuarterClearing {
    pub fn isp_length(&self) -> usize {
        self.minutes.len()
    }

    /// Σ_t (SI_t − net consumption_t), in MW·minutes; + = surplus.
    pub fn aggregate_imbalance(&self) -> f64 {
        self.minutes
            .iter()
            .fold(0.0, |acc, m| acc + (m.system_imbalance_mw - m.brp_net_consumption_mw))
    }

    pub fn average_imbalance_mw(&self) -> f64 {
        if self.minutes.is_empty() {
            0.0
        } else {
            self.aggregate_imbalance() / self.minutes.len() as f64
        }
    }

    pub fn any_mfrr(&self) -> bool {
        self.minutes.iter().any(|m| !m.mfrr_activations.is_empty())
    }

    pub fn first_mfrr_direction(&self) -> Option<Direction> {
        self.minutes.iter().find_map(|m| m.mfrr_direction())
    }

    pub fn first_mfrr_minute(&self) -> Option<usize> {
        self.minutes.iter().position(|m| !m.mfrr_activations.is_empty())
    }

    pub fn activation_cost(&self) -> f64 {
        self.minutes.iter().map(|m| m.activation_cost() * self.dt_hours).sum()
    }
}

/// Clears every minute of the settlement period in sequence.
pub fn simulate_quarter(
    scenario: &QuarterHourScenario,
    profile: &DispatchProfile,
    policy: &MfrrPolicy,
) -> Result<QuarterClearing> {
    let len = scenario.isp_length_minutes;
    if profile.len() != len {
        return Err(Error::validation(
            "profile length",
            format!("profile has {} minutes, settlement period has {len}", profile.len()),
        ));
    }
    let mut phase = MfrrPhase::Idle;
    let mut minutes = Vec::with_capacity(len);
    let mut mfrr_trigger_minute = None;
    for t in 0..len {
        let state = MinuteState {
            minute: t,
            system_imbalance_mw: scenario.system_imbalance_mw[t],
            brp_net_consumption_mw: profile.net_consumption_mw(t),
        };
        let (clearing, next) = phase.advance(&state, &scenario.ladders, policy)?;
        if phase == MfrrPhase::Idle && next != MfrrPhase::Idle && mfrr_trigger_minute.is_none() {
            mfrr_trigger_minute = Some(t);
        }
        minutes.push(clearing);
        phase = next;
    }
    Ok(QuarterClearing {
        minutes,
        dt_hours: scenario.dt_hours,
        afrr_up_best_price: scenario.ladders.afrr_up.best_price(),
        afrr_down_best_price: scenario.ladders.afrr_down.best_price(),
        mfrr_trigger_minute,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn bid(id: &str, direction: Direction, product: Product, capacity_mw: f64, price: f64) -> Bid {
        Bid {
            id: id.into(),
            direction,
            product,
            price,
            capacity_mw,
        }
    }

    fn ladder(direction: Direction, product: Product, steps: &[(f64, f64)]) -> BidLadder {
        let bids = steps
            .iter()
            .enumerate()
            .map(|(i, &(cap, price))| bid(&format!("b{}", i + 1), direction, product, cap, price))
            .collect();
        BidLadder::new(direction, product, bids).unwrap()
    }

    fn ladders(afrr_up: &[(f64, f64)], afrr_down: &[(f64, f64)], mfrr_up: &[(f64, f64)], mfrr_down: &[(f64, f64)]) -> Ladders {
        Ladders::new(
            ladder(Direction::Upward, Product::Afrr, afrr_up),
            ladder(Direction::Downward, Product::Afrr, afrr_down),
            ladder(Direction::Upward, Product::Mfrr, mfrr_up),
            ladder(Direction::Downward, Product::Mfrr, mfrr_down),
        )
        .unwrap()
    }

    fn state(si: f64, charge: f64, discharge: f64) -> MinuteState {
        MinuteState {
            minute: 0,
            system_imbalance_mw: si,
            brp_net_consumption_mw: charge - discharge,
        }
    }

    #[test]
    fn required_balancing_examples() {
        assert_abs_diff_eq!(required_balancing(&state(2.66, 0.0, 10.0)), -12.66, epsilon = 1e-12);
        assert_eq!(required_balancing(&state(0.0, 0.0, 0.0)), 0.0);
        assert_abs_diff_eq!(required_balancing(&state(-4.0, 1.0, 0.0)), 5.0, epsilon = 1e-12);
    }

    #[test]
    fn upward_fill_in_merit_order() {
        let up = ladder(Direction::Upward, Product::Afrr, &[(10.0, 50.0), (10.0, 100.0)]);
        let fill = activate_merit_order(&up, 15.0).unwrap();
        let vols: Vec<_> = fill.activations.iter().map(|a| (a.bid_id.as_str(), a.volume_mw)).collect();
        assert_eq!(vols, vec![("b1", 10.0), ("b2", 5.0)]);
        assert_eq!(fill.marginal_price, Some(100.0));
    }

    #[test]
    fn downward_fill_takes_highest_price_first() {
        let down = ladder(Direction::Downward, Product::Afrr, &[(10.0, 30.0), (10.0, -20.0)]);
        let fill = activate_merit_order(&down, 12.0).unwrap();
        assert_eq!(fill.activations.len(), 2);
        assert_eq!(fill.activations[0].volume_mw, 10.0);
        assert_abs_diff_eq!(fill.activations[1].volume_mw, 2.0, epsilon = 1e-12);
        assert_eq!(fill.marginal_price, Some(-20.0));
    }

    #[test]
    fn zero_volume_activates_nothing() {
        let up = ladder(Direction::Upward, Product::Afrr, &[(10.0, 50.0)]);
        assert_eq!(activate_merit_order(&up, 0.0).unwrap(), MeritOrderFill::default());
    }

    #[test]
    fn overfill_is_an_error() {
        let up = ladder(Direction::Upward, Product::Afrr, &[(10.0, 50.0)]);
        assert!(matches!(
            activate_merit_order(&up, 10.5),
            Err(Error::VolumeExceedsLadder { .. })
        ));
    }

    #[test]
    fn unsorted_ladder_is_rejected() {
        let bids = vec![
            bid("a", Direction::Upward, Product::Afrr, 1.0, 90.0),
            bid("b", Direction::Upward, Product::Afrr, 1.0, 10.0),
        ];
        let err = BidLadder::new(Direction::Upward, Product::Afrr, bids).unwrap_err();
        assert!(err.to_string().contains("`a`") && err.to_string().contains("`b`"));
    }

    #[test]
    fn small_residual_stays_on_afrr() {
        let l = ladders(&[(10.0, 50.0)], &[(10.0, 20.0)], &[(20.0, 200.0)], &[(20.0, -100.0)]);
        let c = clear_minute(&state(-5.0, 0.0, 0.0), &l, false).unwrap();
        assert_eq!(c.afrr_volume_mw, 5.0);
        assert_eq!(c.mfrr_volume_mw, 0.0);
        assert!(!c.mfrr_active);
    }

    #[test]
    fn saturated_afrr_spills_to_mfrr() {
        let l = ladders(&[(10.0, 50.0)], &[(10.0, 20.0)], &[(20.0, 200.0)], &[(20.0, -100.0)]);
        let c = clear_minute(&state(-12.0, 0.0, 0.0), &l, false).unwrap();
        assert_eq!(c.afrr_volume_mw, 10.0);
        assert_abs_diff_eq!(c.mfrr_volume_mw, 2.0, epsilon = 1e-12);
        assert!(c.mfrr_active);
        assert_eq!(c.mfrr_marginal_price, Some(200.0));
    }

    #[test]
    fn downward_residual_example() {
        let l = ladders(&[(10.0, 50.0)], &[(10.0, 30.0), (10.0, -20.0)], &[], &[]);
        let c = clear_minute(&state(2.66, 0.0, 10.0), &l, false).unwrap();
        assert_abs_diff_eq!(c.afrr_volume_mw, -12.66, epsilon = 1e-12);
        assert_eq!(c.afrr_activations[0].volume_mw, 10.0);
        assert_abs_diff_eq!(c.afrr_activations[1].volume_mw, 2.66, epsilon = 1e-12);
        assert_eq!(c.afrr_marginal_price, Some(-20.0));
        assert!(!c.mfrr_active);
    }

    #[test]
    fn exact_saturation_marks_mfrr_without_volume() {
        let l = ladders(&[(10.0, 50.0)], &[(10.0, 20.0)], &[(20.0, 200.0)], &[]);
        let c = clear_minute(&state(-10.0, 0.0, 0.0), &l, false).unwrap();
        assert!(c.afrr_saturated && c.mfrr_active);
        assert_eq!(c.mfrr_volume_mw, 0.0);
    }

    #[test]
    fn residual_beyond_all_capacity_is_an_error() {
        let l = ladders(&[(10.0, 50.0)], &[(10.0, 20.0)], &[(5.0, 200.0)], &[]);
        let err = clear_minute(&state(-16.0, 0.0, 0.0), &l, false).unwrap_err();
        match err {
            Error::VolumeExceedsLadder { requested, available, .. } => {
                assert_eq!(requested, 16.0);
                assert_eq!(available, 15.0);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn forced_flag_sets_active() {
        let l = ladders(&[(10.0, 50.0)], &[(10.0, 20.0)], &[(20.0, 200.0)], &[]);
        let c = clear_minute(&state(-1.0, 0.0, 0.0), &l, true).unwrap();
        assert!(c.mfrr_active);
        assert_eq!(c.mfrr_volume_mw, 0.0);
    }

    #[test]
    fn latched_block_forces_counter_activation() {
        let l = ladders(&[(20.0, 60.0)], &[(14.0, 20.0)], &[], &[(10.0, -80.0), (10.0, -200.0)]);
        let phase = MfrrPhase::Latched {
            direction: Direction::Downward,
            block_mw: 10.0,
        };
        let (c, next) = phase
            .advance(&state(2.0, 8.0, 0.0), &l, &MfrrPolicy::default())
            .unwrap();
        assert_eq!(next, phase);
        assert_eq!(c.mfrr_volume_mw, -10.0);
        assert_abs_diff_eq!(c.afrr_volume_mw, 16.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.balance_delta(), c.residual_mw, epsilon = 1e-12);
    }
}
