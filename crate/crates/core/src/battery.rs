//! Battery state-of-charge dynamics and dispatch profiles for one settlement period.

use crate::error::{Constraint, Error, Result};
use serde::{Deserialize, Serialize};

const SOC_TOL: f64 = 1e-9;
const POWER_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BessSpec {
    pub power_max_mw: f64,
    pub energy_max_mwh: f64,
    pub soc_min: f64,
    pub soc_max: f64,
    pub eta_charge: f64,
    pub eta_discharge: f64,
    pub dt_hours: f64,
}

impl Default for BessSpec {
    /// 10 MW / 20 MWh, 90 % round trip split evenly between charge and discharge.
    fn default() -> Self {
        BessSpec::with_round_trip(10.0, 20.0, 0.9)
    }
}

impl BessSpec {
    pub fn with_round_trip(power_max_mw: f64, energy_max_mwh: f64, round_trip: f64) -> Self {
        let eta = round_trip.sqrt();
        BessSpec {
            power_max_mw,
            energy_max_mwh,
            soc_min: 0.0,
            soc_max: 1.0,
            eta_charge: eta,
            eta_discharge: eta,
            dt_hours: 1.0 / 60.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::validation("battery spec", what.to_string()));
        if !(self.power_max_mw > 0.0) {
            return bad("power_max must be > 0");
        }
        if !(self.energy_max_mwh > 0.0) {
            return bad("energy_max must be > 0");
        }
        if !(0.0 <= self.soc_min && self.soc_min <= self.soc_max && self.soc_max <= 1.0) {
            return bad("need 0 <= soc_min <= soc_max <= 1");
        }
        for eta in [self.eta_charge, self.eta_discharge] {
            if !(eta > 0.0 && eta <= 1.0) {
                return bad("efficiencies must lie in (0, 1]");
            }
        }
        if !(self.dt_hours > 0.0) {
            return bad("dt must be > 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MinuteDispatch {
    pub charge_mw: f64,
    pub discharge_mw: f64,
}

/// Per-minute charge/discharge powers for one settlement period.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DispatchProfile {
    pub minutes: Vec<MinuteDispatch>,
}

impl DispatchProfile {
    pub fn zeros(len: usize) -> Self {
        DispatchProfile {
            minutes: vec![MinuteDispatch::default(); len],
        }
    }

    /// Builds a profile from signed powers, + = discharge (injection).
    pub fn from_net_injection(powers: &[f64]) -> Self {
        DispatchProfile {
            minutes: powers
                .iter()
                .map(|&p| {
                    if p >= 0.0 {
                        MinuteDispatch {
                            charge_mw: 0.0,
                            discharge_mw: p,
                        }
                    } else {
                        MinuteDispatch {
                            charge_mw: -p,
                            discharge_mw: 0.0,
                        }
                    }
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.minutes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.minutes.is_empty()
    }

    pub fn net_consumption_mw(&self, minute: usize) -> f64 {
        let m = &self.minutes[minute];
        m.charge_mw - m.discharge_mw
    }

    /// Signed powers, + = discharge.
    pub fn net_injection(&self) -> Vec<f64> {
        self.minutes.iter().map(|m| m.discharge_mw - m.charge_mw).collect()
    }
}

/// One step of the state-of-charge recursion; bounds are not enforced here.
pub fn soc_step(soc: f64, charge_mw: f64, discharge_mw: f64, spec: &BessSpec) -> f64 {
    soc + (charge_mw * spec.eta_charge - discharge_mw / spec.eta_discharge) * spec.dt_hours / spec.energy_max_mwh
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub minute: usize,
    pub constraint: Constraint,
}

impl From<Violation> for Error {
    fn from(v: Violation) -> Self {
        Error::BatteryInfeasible {
            minute: v.minute,
            constraint: v.constraint,
        }
    }
}

/// Checks power limits, charge/discharge exclusivity and the SoC trajectory.
/// Reports the first violation.
pub fn check_feasible(profile: &DispatchProfile, soc0: f64, spec: &BessSpec) -> std::result::Result<(), Violation> {
    let mut soc = soc0;
    for (minute, m) in profile.minutes.iter().enumerate() {
        let fail = |constraint| Err(Violation { minute, constraint });
        if m.charge_mw < 0.0 || m.discharge_mw < 0.0 {
            return fail(Constraint::NegativePower);
        }
        if m.charge_mw > spec.power_max_mw + POWER_TOL || m.discharge_mw > spec.power_max_mw + POWER_TOL {
            return fail(Constraint::PowerBound);
        }
        if m.charge_mw > 0.0 && m.discharge_mw > 0.0 {
            return fail(Constraint::SimultaneousChargeDischarge);
        }
        soc = soc_step(soc, m.charge_mw, m.discharge_mw, spec);
        if soc < spec.soc_min - SOC_TOL || soc > spec.soc_max + SOC_TOL {
            return fail(Constraint::SocBound);
        }
    }
    Ok(())
}

/// Net energy delivered over the period, + = injection (surplus).
pub fn position_energy(profile: &DispatchProfile, dt_hours: f64) -> f64 {
    profile
        .minutes
        .iter()
        .map(|m| (m.discharge_mw - m.charge_mw) * dt_hours)
        .sum()
}

/// Constant-power profile delivering `position_mwh` over `isp_minutes`.
pub fn uniform_profile(position_mwh: f64, isp_minutes: usize, spec: &BessSpec) -> Result<DispatchProfile> {
    let hours = isp_minutes as f64 * spec.dt_hours;
    let power = position_mwh / hours;
    if power.abs() > spec.power_max_mw + POWER_TOL || !power.is_finite() {
        return Err(Error::PowerInfeasible {
            required_mw: power.abs(),
            power_max_mw: spec.power_max_mw,
        });
    }
    Ok(DispatchProfile::from_net_injection(&vec![power; isp_minutes]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn soc_step_examples() {
        let spec = BessSpec::default();
        assert_abs_diff_eq!(spec.eta_charge, 0.948683, epsilon = 1e-6);
        assert_abs_diff_eq!(soc_step(0.5, 10.0, 0.0, &spec), 0.50791, epsilon = 1e-5);
        assert_eq!(soc_step(0.5, 0.0, 0.0, &spec), 0.5);
        assert_abs_diff_eq!(soc_step(0.5, 0.0, 10.0, &spec), 0.49122, epsilon = 1e-5);
    }

    #[test]
    fn feasibility_examples() {
        let spec = BessSpec::default();
        assert!(check_feasible(&DispatchProfile::zeros(15), 0.5, &spec).is_ok());

        let charge = DispatchProfile::from_net_injection(&[-10.0; 15]);
        assert_eq!(
            check_feasible(&charge, 1.0, &spec),
            Err(Violation {
                minute: 0,
                constraint: Constraint::SocBound
            })
        );

        let discharge = DispatchProfile::from_net_injection(&[10.0; 15]);
        let v = check_feasible(&discharge, 0.10, &spec).unwrap_err();
        assert_eq!(v.constraint, Constraint::SocBound);
        // 2.0 MWh stored, each minute draws 10/60/0.9487 = 0.1757 MWh.
        assert_eq!(v.minute, 11);
    }

    #[test]
    fn feasibility_rejects_power_and_exclusivity() {
        let spec = BessSpec::default();
        let over = DispatchProfile::from_net_injection(&[0.0, 10.5]);
        assert_eq!(check_feasible(&over, 0.5, &spec).unwrap_err().constraint, Constraint::PowerBound);
        let both = DispatchProfile {
            minutes: vec![MinuteDispatch {
                charge_mw: 1.0,
                discharge_mw: 1.0,
            }],
        };
        assert_eq!(
            check_feasible(&both, 0.5, &spec).unwrap_err().constraint,
            Constraint::SimultaneousChargeDischarge
        );
    }

    #[test]
    fn position_examples() {
        let dt = 1.0 / 60.0;
        assert_abs_diff_eq!(position_energy(&DispatchProfile::from_net_injection(&[6.0; 15]), dt), 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(position_energy(&DispatchProfile::from_net_injection(&[-8.9; 15]), dt), -2.225, epsilon = 1e-12);
        let mixed = DispatchProfile::from_net_injection(&[5.0, -5.0, 3.0, -3.0]);
        assert_abs_diff_eq!(position_energy(&mixed, dt), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn uniform_examples() {
        let spec = BessSpec::default();
        let p = uniform_profile(-2.225, 15, &spec).unwrap();
        assert!(p.minutes.iter().all(|m| (m.charge_mw - 8.9).abs() < 1e-12 && m.discharge_mw == 0.0));
        assert_eq!(uniform_profile(0.0, 15, &spec).unwrap(), DispatchProfile::from_net_injection(&[0.0; 15]));
        match uniform_profile(2.51, 15, &spec) {
            Err(Error::PowerInfeasible { required_mw, .. }) => assert_abs_diff_eq!(required_mw, 10.04, epsilon = 1e-9),
            other => panic!("expected PowerInfeasible, got {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn charge_then_discharge_round_trips(soc in 0.0f64..1.0, p in 0.0f64..50.0, rt in 0.5f64..1.0) {
            let spec = BessSpec::with_round_trip(50.0, 20.0, rt);
            let up = soc_step(soc, p, 0.0, &spec);
            let back = soc_step(up, 0.0, p * spec.eta_charge * spec.eta_discharge, &spec);
            prop_assert!((back - soc).abs() <= 1e-9);
        }

        #[test]
        fn uniform_profile_inverts_position(e in -2.5f64..2.5, len in 1usize..30) {
            let spec = BessSpec::default();
            let hours = len as f64 / 60.0;
            prop_assume!(e.abs() / hours <= spec.power_max_mw);
            let p = uniform_profile(e, len, &spec).unwrap();
            prop_assert!((position_energy(&p, spec.dt_hours) - e).abs() <= 1e-9);
        }
    }
}
