use clap::{Args, Parser, Subcommand, ValueEnum};
use imbalance_core::report::parse_report_json;
use imbalance_core::scenario::load_si_trace_csv;
use imbalance_core::{
    compare_strategies, evaluate_dispatch, export_report, generate_random_scenario, generate_strategy_fixture,
    load_scenario, optimize_dispatch, scenario_to_json, Archetype, BessSpec, Country, DispatchProfile, Error,
    ExportFormat, OptimizerConfig, QuarterHourScenario, SearchMode,
};
use rayon::prelude::*;
use serde::Serialize;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "imbalance", version, about = "Quarter-hour imbalance settlement simulator and battery dispatch optimizer")]
struct Cli {
    /// Report errors on stderr as a JSON object.
    #[arg(long, global = true)]
    json_errors: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clear and settle one period for a given battery profile.
    Simulate {
        #[command(flatten)]
        input: Input,
        /// Comma-separated per-minute powers in MW, + = discharge. Defaults to idle.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        profile: Option<Vec<f64>>,
        #[command(flatten)]
        output: Output,
    },
    /// Find the most profitable grid profile for a position.
    Optimize {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        search: Search,
        #[command(flatten)]
        output: Output,
    },
    /// Settle the uniform profile and the optimized one side by side.
    Compare {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        search: Search,
        #[command(flatten)]
        output: Output,
    },
    /// Write a scenario file: a strategy fixture or a random period.
    GenFixture {
        #[arg(long, value_enum, conflicts_with = "random_minutes")]
        archetype: Option<ArchetypeArg>,
        /// Generate a random period of this many minutes instead.
        #[arg(long)]
        random_minutes: Option<usize>,
        #[arg(long, value_enum, default_value = "be")]
        country: CountryArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare strategies across a range of positions.
    SweepPosition {
        #[command(flatten)]
        input: Input,
        #[arg(long, allow_hyphen_values = true)]
        from_mwh: f64,
        #[arg(long, allow_hyphen_values = true)]
        to_mwh: f64,
        #[arg(long)]
        step_mwh: f64,
        #[arg(long)]
        grid_step_mw: Option<f64>,
        #[arg(long, default_value_t = OptimizerConfig::default().max_nodes)]
        max_nodes: usize,
        #[command(flatten)]
        output: Output,
    },
}

#[derive(Args)]
struct Input {
    /// Scenario JSON file.
    #[arg(long, required_unless_present = "archetype")]
    scenario: Option<PathBuf>,
    /// Use a generated fixture instead of a file.
    #[arg(long, value_enum, conflicts_with = "scenario")]
    archetype: Option<ArchetypeArg>,
    #[arg(long, default_value_t = 0, requires = "archetype")]
    seed: u64,
    /// Replace the system imbalance trace (`minute,system_imbalance_mw`).
    #[arg(long)]
    si_csv: Option<PathBuf>,
    /// Pricing rule; defaults to the scenario's country.
    #[arg(long, value_enum)]
    country: Option<CountryArg>,
    #[arg(long)]
    power_max_mw: Option<f64>,
    #[arg(long)]
    energy_max_mwh: Option<f64>,
    #[arg(long)]
    round_trip: Option<f64>,
    #[arg(long)]
    initial_soc: Option<f64>,
}

#[derive(Args)]
struct Search {
    /// Energy position, + = surplus. Defaults to the fixture's position.
    #[arg(long, allow_hyphen_values = true)]
    position_mwh: Option<f64>,
    #[arg(long)]
    grid_step_mw: Option<f64>,
    #[arg(long, default_value_t = OptimizerConfig::default().max_nodes)]
    max_nodes: usize,
    #[arg(long, value_enum, default_value = "dp")]
    search: SearchArg,
}

#[derive(Args)]
struct Output {
    #[arg(long, value_enum, default_value = "json")]
    format: FormatArg,
    /// Write to a file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum CountryArg {
    Be,
    Nl,
}

impl From<CountryArg> for Country {
    fn from(c: CountryArg) -> Country {
        match c {
            CountryArg::Be => Country::Belgium,
            CountryArg::Nl => Country::Netherlands,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ArchetypeArg {
    BeExtremeBid,
    BeMfrrLatch,
    NlExtremeBid,
    NlStateAvoid,
}

impl From<ArchetypeArg> for Archetype {
    fn from(a: ArchetypeArg) -> Archetype {
        match a {
            ArchetypeArg::BeExtremeBid => Archetype::BeExtremeBid,
            ArchetypeArg::BeMfrrLatch => Archetype::BeMfrrLatch,
            ArchetypeArg::NlExtremeBid => Archetype::NlExtremeBid,
            ArchetypeArg::NlStateAvoid => Archetype::NlStateAvoid,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SearchArg {
    Dp,
    Exhaustive,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

struct Loaded {
    scenario: QuarterHourScenario,
    spec: BessSpec,
    country: Country,
}

impl Input {
    fn load(&self) -> Result<Loaded, Error> {
        let mut scenario = match (&self.scenario, self.archetype) {
            (Some(path), _) => load_scenario(path)?,
            (None, Some(a)) => generate_strategy_fixture(a.into(), self.seed),
            (None, None) => unreachable!("clap requires one of --scenario / --archetype"),
        };
        if let Some(path) = &self.si_csv {
            let trace = load_si_trace_csv(path)?;
            scenario.isp_length_minutes = trace.len();
            scenario.system_imbalance_mw = trace;
        }
        if let Some(soc) = self.initial_soc {
            scenario.initial_soc = soc;
        }
        let mut spec = scenario.battery.unwrap_or_default();
        if let Some(rt) = self.round_trip {
            let eta = rt.sqrt();
            (spec.eta_charge, spec.eta_discharge) = (eta, eta);
        }
        if let Some(p) = self.power_max_mw {
            spec.power_max_mw = p;
        }
        if let Some(e) = self.energy_max_mwh {
            spec.energy_max_mwh = e;
        }
        spec.dt_hours = scenario.dt_hours;
        spec.validate()?;
        scenario.validate()?;
        let country = self.country.map(Country::from).unwrap_or(scenario.country);
        Ok(Loaded {
            scenario,
            spec,
            country,
        })
    }
}

impl Search {
    fn resolve(&self, l: &Loaded) -> Result<(f64, OptimizerConfig), Error> {
        let fixture = l.scenario.fixture.as_ref();
        let position = self
            .position_mwh
            .or(fixture.map(|f| f.position_mwh))
            .ok_or_else(|| Error::InvalidConfig("--position-mwh is required for scenarios without fixture info".into()))?;
        let mut config = OptimizerConfig::for_scenario(&l.scenario);
        config.country = l.country;
        if let Some(step) = self.grid_step_mw {
            config.power_grid_step_mw = step;
        }
        config.max_nodes = self.max_nodes;
        config.search_mode = match self.search {
            SearchArg::Dp => SearchMode::DpGrid,
            SearchArg::Exhaustive => SearchMode::Exhaustive,
        };
        Ok((position, config))
    }
}

impl Output {
    fn emit(&self, bytes: &[u8]) -> Result<(), Error> {
        match &self.out {
            Some(path) => std::fs::write(path, bytes)?,
            None => {
                use std::io::Write;
                std::io::stdout().write_all(bytes)?;
            }
        }
        Ok(())
    }

    fn json<T: Serialize>(&self, value: &T) -> Result<(), Error> {
        let mut s = serde_json::to_string_pretty(value).expect("output serializes");
        s.push('\n');
        self.emit(s.as_bytes())
    }
}

fn num(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[derive(Serialize)]
struct SweepRow {
    position_requested_mwh: f64,
    position_mwh: Option<f64>,
    uniform_price: Option<f64>,
    optimized_price: Option<f64>,
    uniform_profit_eur: Option<f64>,
    optimized_profit_eur: Option<f64>,
    error: Option<String>,
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Simulate { input, profile, output } => {
            let l = input.load()?;
            let len = l.scenario.isp_length_minutes;
            let powers = profile.unwrap_or_else(|| vec![0.0; len]);
            if powers.len() != len {
                return Err(Error::InvalidConfig(format!("profile has {} minutes, scenario has {len}", powers.len())));
            }
            let profile = DispatchProfile::from_net_injection(&powers);
            imbalance_core::check_feasible(&profile, l.scenario.initial_soc, &l.spec)?;
            let r = evaluate_dispatch(&l.scenario, &profile, l.country)?;
            match output.format {
                FormatArg::Json => output.json(&r),
                FormatArg::Csv => {
                    let mut s = String::from(
                        "minute,system_imbalance_mw,battery_mw,afrr_mw,mfrr_mw,afrr_marginal,mfrr_marginal\n",
                    );
                    for m in &r.quarter.minutes {
                        s += &format!(
                            "{},{},{},{},{},{},{}\n",
                            m.minute,
                            m.system_imbalance_mw,
                            -m.brp_net_consumption_mw,
                            m.afrr_volume_mw,
                            m.mfrr_volume_mw,
                            num(m.afrr_marginal_price),
                            num(m.mfrr_marginal_price)
                        );
                    }
                    s += &format!(
                        "\nmetric,value\nimbalance_price_eur_mwh,{}\nprofit_eur,{}\nposition_mwh,{}\n",
                        r.imbalance_price, r.profit_eur, r.position_mwh
                    );
                    output.emit(s.as_bytes())
                }
            }
        }
        Command::Optimize { input, search, output } => {
            let l = input.load()?;
            let (position, config) = search.resolve(&l)?;
            let r = optimize_dispatch(&l.scenario, position, &l.spec, &config)?;
            match output.format {
                FormatArg::Json => output.json(&r),
                FormatArg::Csv => {
                    let mut s = String::from("minute,battery_mw\n");
                    for (t, p) in r.profile.net_injection().iter().enumerate() {
                        s += &format!("{t},{p}\n");
                    }
                    s += &format!(
                        "\nmetric,value\nimbalance_price_eur_mwh,{}\nprofit_eur,{}\nposition_mwh,{}\n",
                        r.result.imbalance_price, r.result.profit_eur, r.position_mwh
                    );
                    output.emit(s.as_bytes())
                }
            }
        }
        Command::Compare { input, search, output } => {
            let l = input.load()?;
            let (position, config) = search.resolve(&l)?;
            let report = compare_strategies(&l.scenario, position, &l.spec, &config)?;
            let format = match output.format {
                FormatArg::Json => ExportFormat::Json,
                FormatArg::Csv => ExportFormat::Csv,
            };
            let bytes = export_report(&report, format)?;
            if format == ExportFormat::Json {
                debug_assert_eq!(parse_report_json(std::str::from_utf8(&bytes).unwrap()).ok(), Some(report));
            }
            output.emit(&bytes)
        }
        Command::GenFixture {
            archetype,
            random_minutes,
            country,
            seed,
            out,
        } => {
            let scenario = match (archetype, random_minutes) {
                (Some(a), _) => generate_strategy_fixture(a.into(), seed),
                (None, Some(len)) => generate_random_scenario(seed, len, country.into()),
                (None, None) => return Err(Error::InvalidConfig("pass --archetype or --random-minutes".into())),
            };
            scenario.validate()?;
            let output = Output {
                format: FormatArg::Json,
                out,
            };
            output.emit(scenario_to_json(&scenario).as_bytes())
        }
        Command::SweepPosition {
            input,
            from_mwh,
            to_mwh,
            step_mwh,
            grid_step_mw,
            max_nodes,
            output,
        } => {
            if !(step_mwh > 0.0) || to_mwh < from_mwh {
                return Err(Error::InvalidConfig("need --step-mwh > 0 and --from-mwh <= --to-mwh".into()));
            }
            let l = input.load()?;
            let mut config = OptimizerConfig::for_scenario(&l.scenario);
            config.country = l.country;
            config.max_nodes = max_nodes;
            if let Some(step) = grid_step_mw {
                config.power_grid_step_mw = step;
            }
            let n = ((to_mwh - from_mwh) / step_mwh + 1e-9).floor() as usize + 1;
            let rows: Vec<SweepRow> = (0..n)
                .into_par_iter()
                .map(|i| {
                    let position = from_mwh + i as f64 * step_mwh;
                    match compare_strategies(&l.scenario, position, &l.spec, &config) {
                        Ok(r) => SweepRow {
                            position_requested_mwh: position,
                            position_mwh: Some(r.position_mwh),
                            uniform_price: Some(r.uniform.imbalance_price),
                            optimized_price: Some(r.optimized.imbalance_price),
                            uniform_profit_eur: Some(r.uniform.profit_eur),
                            optimized_profit_eur: Some(r.optimized.profit_eur),
                            error: None,
                        },
                        Err(e) => SweepRow {
                            position_requested_mwh: position,
                            position_mwh: None,
                            uniform_price: None,
                            optimized_price: None,
                            uniform_profit_eur: None,
                            optimized_profit_eur: None,
                            error: Some(e.kind().to_string()),
                        },
                    }
                })
                .collect();
            match output.format {
                FormatArg::Json => output.json(&rows),
                FormatArg::Csv => {
                    let mut s = String::from(
                        "position_requested_mwh,position_mwh,uniform_price,optimized_price,uniform_profit_eur,optimized_profit_eur,error\n",
                    );
                    for r in &rows {
                        s += &format!(
                            "{},{},{},{},{},{},{}\n",
                            r.position_requested_mwh,
                            num(r.position_mwh),
                            num(r.uniform_price),
                            num(r.optimized_price),
                            num(r.uniform_profit_eur),
                            num(r.optimized_profit_eur),
                            r.error.as_deref().unwrap_or("")
                        );
                    }
                    output.emit(s.as_bytes())
                }
            }
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_infeasibility() {
        3
    } else {
        match e {
            Error::Parse { .. } | Error::Schema { .. } | Error::Validation { .. } | Error::InvalidConfig(_) => 2,
            _ => 1,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let json_errors = cli.json_errors;
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if json_errors {
                eprintln!("{}", serde_json::json!({ "error": e.kind(), "message": e.to_string() }));
            } else {
                eprintln!("error: {e}");
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
