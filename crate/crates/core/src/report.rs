//! Uniform-versus-optimized comparison and its JSON / CSV export.

use crate::battery::{BessSpec, DispatchProfile};
use crate::error::{Error, Result};
use crate::market::MinuteClearing;
use crate::optimizer::{
    evaluate_dispatch, optimize_dispatch, uniform_grid_profile, OptimizerConfig, PriceBreakdown, SearchStatus,
    SettlementResult,
};
use crate::scenario::{Country, QuarterHourScenario};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportFormat {
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyOutcome {
    pub imbalance_price: f64,
    pub profit_eur: f64,
    pub position_mwh: f64,
    /// + = discharge, MW.
    pub net_injection_mw: Vec<f64>,
    pub breakdown: PriceBreakdown,
}

impl StrategyOutcome {
    fn new(profile: &DispatchProfile, r: &SettlementResult) -> Self {
        StrategyOutcome {
            imbalance_price: r.imbalance_price,
            profit_eur: r.profit_eur,
            position_mwh: r.position_mwh,
            net_injection_mw: profile.net_injection(),
            breakdown: r.breakdown.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinuteTrace {
    pub minute: usize,
    pub system_imbalance_mw: f64,
    pub uniform_battery_mw: f64,
    pub optimized_battery_mw: f64,
    pub uniform_afrr_mw: f64,
    pub optimized_afrr_mw: f64,
    pub uniform_mfrr_mw: f64,
    pub optimized_mfrr_mw: f64,
    pub uniform_afrr_marginal: Option<f64>,
    pub optimized_afrr_marginal: Option<f64>,
    pub uniform_mfrr_marginal: Option<f64>,
    pub optimized_mfrr_marginal: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub scenario_id: String,
    pub country: Country,
    pub position_requested_mwh: f64,
    pub position_mwh: f64,
    pub grid_step_mw: f64,
    pub search_status: SearchStatus,
    pub labels_created: usize,
    pub uniform: StrategyOutcome,
    pub optimized: StrategyOutcome,
    pub profit_delta_eur: f64,
    pub price_delta: f64,
    pub traces: Vec<MinuteTrace>,
}

/// Settles the uniform grid profile and the optimized one side by side.
pub fn compare_strategies(
    scenario: &QuarterHourScenario,
    position_mwh: f64,
    spec: &BessSpec,
    config: &OptimizerConfig,
) -> Result<ComparisonReport> {
    let uniform_profile = uniform_grid_profile(scenario, position_mwh, spec, config.power_grid_step_mw)?;
    let uniform = evaluate_dispatch(scenario, &uniform_profile, config.country)?;
    let opt = optimize_dispatch(scenario, position_mwh, spec, config)?;

    let traces = uniform
        .quarter
        .minutes
        .iter()
        .zip(&opt.result.quarter.minutes)
        .map(|(u, o): (&MinuteClearing, &MinuteClearing)| MinuteTrace {
            minute: u.minute,
            system_imbalance_mw: u.system_imbalance_mw,
            uniform_battery_mw: -u.brp_net_consumption_mw,
            optimized_battery_mw: -o.brp_net_consumption_mw,
            uniform_afrr_mw: u.afrr_volume_mw,
            optimized_afrr_mw: o.afrr_volume_mw,
            uniform_mfrr_mw: u.mfrr_volume_mw,
            optimized_mfrr_mw: o.mfrr_volume_mw,
            uniform_afrr_marginal: u.afrr_marginal_price,
            optimized_afrr_marginal: o.afrr_marginal_price,
            uniform_mfrr_marginal: u.mfrr_marginal_price,
            optimized_mfrr_marginal: o.mfrr_marginal_price,
        })
        .collect();

    Ok(ComparisonReport {
        scenario_id: scenario.id.clone(),
        country: config.country,
        position_requested_mwh: opt.position_requested_mwh,
        position_mwh: opt.position_mwh,
        grid_step_mw: config.power_grid_step_mw,
        search_status: opt.status,
        labels_created: opt.labels_created,
        profit_delta_eur: opt.result.profit_eur - uniform.profit_eur,
        price_delta: opt.result.imbalance_price - uniform.imbalance_price,
        uniform: StrategyOutcome::new(&uniform_profile, &uniform),
        optimized: StrategyOutcome::new(&opt.profile, &opt.result),
        traces,
    })
}

pub fn export_report(report: &ComparisonReport, format: ExportFormat) -> Result<Vec<u8>> {
    match format {
        ExportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report serializes");
            s.push('\n');
            Ok(s.into_bytes())
        }
        ExportFormat::Csv => export_csv(report),
    }
}

pub fn parse_report_json(text: &str) -> Result<ComparisonReport> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

fn opt_str(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Per-minute rows, a blank line, then `metric,uniform,optimized` rows.
fn export_csv(report: &ComparisonReport) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(Vec::new());
    w.write_record([
        "minute",
        "system_imbalance_mw",
        "uniform_battery_mw",
        "optimized_battery_mw",
        "uniform_afrr_mw",
        "optimized_afrr_mw",
        "uniform_mfrr_mw",
        "optimized_mfrr_mw",
        "uniform_afrr_marginal",
        "optimized_afrr_marginal",
        "uniform_mfrr_marginal",
        "optimized_mfrr_marginal",
    ])
    .map_err(csv_err)?;
    for t in &report.traces {
        w.write_record([
            t.minute.to_string(),
            t.system_imbalance_mw.to_string(),
            t.uniform_battery_mw.to_string(),
            t.optimized_battery_mw.to_string(),
            t.uniform_afrr_mw.to_string(),
            t.optimized_afrr_mw.to_string(),
            t.uniform_mfrr_mw.to_string(),
            t.optimized_mfrr_mw.to_string(),
            opt_str(t.uniform_afrr_marginal),
            opt_str(t.optimized_afrr_marginal),
            opt_str(t.uniform_mfrr_marginal),
            opt_str(t.optimized_mfrr_marginal),
        ])
        .map_err(csv_err)?;
    }
    let mut out = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    out.push(b'\n');
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
    w.write_record(["metric", "uniform", "optimized"]).map_err(csv_err)?;
    let (u, o) = (&report.uniform, &report.optimized);
    let rows = [
        ("imbalance_price_eur_mwh", u.imbalance_price, o.imbalance_price),
        ("profit_eur", u.profit_eur, o.profit_eur),
        ("position_mwh", u.position_mwh, o.position_mwh),
    ];
    for (name, a, b) in rows {
        w.write_record([name.to_string(), a.to_string(), b.to_string()]).map_err(csv_err)?;
    }
    w.write_record(["profit_delta_eur".to_string(), String::new(), report.profit_delta_eur.to_string()])
        .map_err(csv_err)?;
    w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}
