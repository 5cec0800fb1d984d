//! Quarter-hour balancing-market simulator with Belgian and Dutch imbalance
//! pricing, and a bi-level optimizer for battery dispatch inside one
//! settlement period.
//!
//! ```
//! use imbalance_core::{generate_strategy_fixture, compare_strategies, Archetype, BessSpec, OptimizerConfig};
//!
//! let scenario = generate_strategy_fixture(Archetype::NlStateAvoid, 0);
//! let config = OptimizerConfig::for_scenario(&scenario);
//! let report = compare_strategies(&scenario, -0.75, &BessSpec::default(), &config).unwrap();
//! assert!(report.optimized.profit_eur > report.uniform.profit_eur);
//! ```

pub mod battery;
pub mod error;
pub mod market;
pub mod optimizer;
pub mod pricing_be;
pub mod pricing_nl;
pub mod report;
pub mod scenario;

pub use battery::{check_feasible, position_energy, soc_step, uniform_profile, BessSpec, DispatchProfile, MinuteDispatch};
pub use error::{Constraint, Error, Result};
pub use market::{
    activate_merit_order, clear_minute, simulate_quarter, Bid, BidLadder, Direction, Ladders, MfrrPolicy,
    MinuteClearing, MinuteState, Product, QuarterClearing,
};
pub use optimizer::{
    brute_force_oracle, evaluate_dispatch, optimize_dispatch, uniform_grid_profile, OptimizedDispatch,
    OptimizerConfig, PriceBreakdown, SearchMode, SearchStatus, SettlementResult,
};
pub use pricing_be::{imbalance_price_be, BelgianBranch, BelgianPriceBreakdown, SystemDirection};
pub use pricing_nl::{imbalance_price_nl, regulation_state, DutchPriceBreakdown, RegulationState};
pub use report::{compare_strategies, export_report, ComparisonReport, ExportFormat};
pub use scenario::{
    generate_random_scenario, generate_strategy_fixture, load_scenario, parse_scenario, save_scenario, scenario_to_json, Archetype, Country,
    QuarterHourScenario,
};
