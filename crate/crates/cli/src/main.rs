//! `forecast-eval` command-line front end.
//!
//! Exit codes: 0 success, 2 validation failure (bad records, bad arguments),
//! 3 I/O failure.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Result};
use chrono::{DateTime, Duration, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};

use forecast_eval::betting::{Granularity, RiskProfile, TieRule};
use forecast_eval::bootstrap::{DEFAULT_ALPHA, DEFAULT_REPLICATES};
use forecast_eval::consistency::DEFAULT_EPSILON;
use forecast_eval::ingest::{load_dataset, write_dataset, Dataset, DatasetPaths, DEFAULT_CUTOFF_HOURS};
use forecast_eval::model::NormalizedPrices;
use forecast_eval::report::{self, BootstrapConfig, EvalConfig};
use forecast_eval::schedule::{schedule_horizons, DEFAULT_DELTA_MIN_HOURS};
use forecast_eval::scoring::{write_reliability_csv, DEFAULT_BINS};
use forecast_eval::simulate::{self, ForecasterKind, GeneratorConfig};
use forecast_eval::Error;

const EXIT_VALIDATION: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser)]
#[command(name = "forecast-eval", version, about = "Score probabilistic forecasts on binary prediction markets")]
struct Cli {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DataArgs {
    /// Directory holding events.jsonl, markets.jsonl, snapshots.jsonl,
    /// forecasts.jsonl, outcomes.jsonl (and optionally chains.jsonl,
    /// exclusive_sets.jsonl). Individual file flags override it.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    events: Option<PathBuf>,
    #[arg(long, global = true)]
    markets: Option<PathBuf>,
    #[arg(long, global = true)]
    snapshots: Option<PathBuf>,
    #[arg(long, global = true)]
    forecasts: Option<PathBuf>,
    #[arg(long, global = true)]
    outcomes: Option<PathBuf>,
    #[arg(long, global = true)]
    chains: Option<PathBuf>,
    #[arg(long, global = true)]
    exclusive_sets: Option<PathBuf>,
}

#[derive(Args)]
struct CommonArgs {
    /// Drop forecasts made less than this many hours before resolution
    /// [default: 3, or 0 for horizon-bins]
    #[arg(long, global = true)]
    cutoff_hours: Option<f64>,
    /// Bootstrap replicates for confidence intervals; 0 disables them
    #[arg(long, global = true, default_value_t = DEFAULT_REPLICATES)]
    bootstrap: usize,
    #[arg(long, global = true, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Do not add the market-baseline forecaster
    #[arg(long, global = true)]
    no_baseline: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum TieArg {
    Yes,
    No,
}

#[derive(Clone, Copy, ValueEnum)]
enum LevelArg {
    Market,
    Event,
}

impl From<LevelArg> for Granularity {
    fn from(l: LevelArg) -> Self {
        match l {
            LevelArg::Market => Granularity::Market,
            LevelArg::Event => Granularity::Event,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Table,
    Csv,
    Json,
}

#[derive(Args)]
struct BetArgs {
    /// CRRA risk aversion in [0,1]; 0 is the all-in risk-neutral rule
    #[arg(long, default_value_t = 0.0)]
    gamma: f64,
    /// Reference return for the Sharpe ratio
    #[arg(long, default_value_t = 1.0)]
    risk_free: f64,
    /// Side taken by the risk-neutral rule when p equals the price
    #[arg(long, value_enum, default_value_t = TieArg::Yes)]
    tie_rule: TieArg,
    /// Payoff granularity for the Sharpe ratio
    #[arg(long, value_enum, default_value_t = LevelArg::Market)]
    sharpe_level: LevelArg,
    /// Resampling unit for the Average Return interval
    #[arg(long, value_enum, default_value_t = LevelArg::Market)]
    return_level: LevelArg,
}

#[derive(Subcommand)]
enum Command {
    /// Load and cross-check the dataset files
    Validate,
    /// Full leaderboard: Brier, ECE, Average Return, Sharpe, consistency
    Evaluate {
        #[command(flatten)]
        bet: BetArgs,
        #[arg(long, default_value_t = DEFAULT_BINS)]
        bins: usize,
        /// Resampling unit for the Brier interval
        #[arg(long, value_enum, default_value_t = LevelArg::Event)]
        brier_level: LevelArg,
        #[arg(long, default_value_t = DEFAULT_EPSILON)]
        epsilon: f64,
        #[arg(long, value_enum, default_value_t = FormatArg::Table)]
        format: FormatArg,
        #[arg(long)]
        out_csv: Option<PathBuf>,
        #[arg(long)]
        out_json: Option<PathBuf>,
    },
    /// ECE per forecaster and reliability-diagram CSVs
    Calibration {
        #[arg(long, default_value_t = DEFAULT_BINS)]
        bins: usize,
        /// Print this forecaster's reliability diagram to stdout
        #[arg(long)]
        forecaster: Option<String>,
        /// Write reliability_<forecaster>.csv for every forecaster here
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Average Return and Sharpe ratio per forecaster
    Returns {
        #[command(flatten)]
        bet: BetArgs,
        /// Write the per-market payoff CSV here
        #[arg(long)]
        payoffs_out: Option<PathBuf>,
    },
    /// Logical-chain and mutually-exclusive consistency scores
    Consistency {
        #[arg(long, default_value_t = DEFAULT_EPSILON)]
        epsilon: f64,
    },
    /// Geometric forecast-time schedule for one event
    Schedule {
        #[arg(long, default_value = "event")]
        event_id: String,
        /// First forecast time (RFC 3339)
        #[arg(long)]
        t0: DateTime<Utc>,
        /// Event close time (RFC 3339)
        #[arg(long)]
        tau: DateTime<Utc>,
        #[arg(long, default_value_t = DEFAULT_DELTA_MIN_HOURS as f64)]
        delta_min_hours: f64,
    },
    /// Brier score per lead-time bin
    HorizonBins {
        /// Lower bin edges in hours; the last bin is open-ended
        #[arg(long, value_delimiter = ',', default_value = "0,3,12,48")]
        edges_hours: Vec<f64>,
    },
    /// Write a synthetic dataset
    Simulate {
        #[arg(long, default_value = "calibrated")]
        kind: ForecasterKind,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0.2)]
        disagreement_scale: f64,
        #[arg(long, default_value_t = 1)]
        markets_per_event: usize,
        /// Forecast lead times in hours (prices tighten toward the outcome)
        #[arg(long, value_delimiter = ',')]
        lead_hours: Vec<f64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Check the closed-form allocation, Brier properness, and the
    /// side-balanced returns of a calibrated symmetric forecaster
    VerifyTheory {
        #[arg(long, default_value = "calibrated")]
        kind: ForecasterKind,
        #[arg(long, default_value_t = 100_000)]
        n: usize,
        /// Grid step for the brute-force allocation oracle
        #[arg(long, default_value_t = 1e-4)]
        grid_step: f64,
        /// Use this forecaster from the loaded dataset instead of synthetic data
        #[arg(long)]
        forecaster: Option<String>,
    },
}

fn hours(h: f64) -> Result<Duration> {
    if !h.is_finite() || h < 0.0 {
        bail!(Error::InvalidArgument(format!("hours must be a nonnegative number, got {h}")));
    }
    Ok(Duration::milliseconds((h * 3_600_000.0).round() as i64))
}

impl DataArgs {
    fn any(&self) -> bool {
        self.data_dir.is_some() || self.events.is_some() || self.forecasts.is_some()
    }

    fn paths(&self) -> Result<DatasetPaths> {
        let base = self.data_dir.as_ref().map(DatasetPaths::in_dir);
        let pick = |flag: &Option<PathBuf>, from_dir: Option<&PathBuf>, name: &str| -> Result<PathBuf> {
            flag.clone()
                .or_else(|| from_dir.cloned())
                .ok_or_else(|| Error::InvalidArgument(format!("missing --{name} (or --data-dir)")).into())
        };
        Ok(DatasetPaths {
            events: pick(&self.events, base.as_ref().map(|b| &b.events), "events")?,
            markets: pick(&self.markets, base.as_ref().map(|b| &b.markets), "markets")?,
            snapshots: pick(&self.snapshots, base.as_ref().map(|b| &b.snapshots), "snapshots")?,
            forecasts: pick(&self.forecasts, base.as_ref().map(|b| &b.forecasts), "forecasts")?,
            outcomes: pick(&self.outcomes, base.as_ref().map(|b| &b.outcomes), "outcomes")?,
            chains: self.chains.clone().or_else(|| base.as_ref().and_then(|b| b.chains.clone())),
            exclusive_sets: self
                .exclusive_sets
                .clone()
                .or_else(|| base.as_ref().and_then(|b| b.exclusive_sets.clone())),
        })
    }

    fn load(&self) -> Result<Dataset> {
        Ok(load_dataset(&self.paths()?)?)
    }
}

impl Cli {
    fn config(&self, default_cutoff_hours: f64) -> Result<EvalConfig> {
        let c = &self.common;
        let bootstrap = (c.bootstrap > 0).then_some(BootstrapConfig {
            replicates: c.bootstrap,
            alpha: c.alpha,
            seed: c.seed,
        });
        if bootstrap.is_some() && !(c.alpha > 0.0 && c.alpha < 1.0) {
            bail!(Error::InvalidArgument(format!("--alpha must be in (0,1), got {}", c.alpha)));
        }
        Ok(EvalConfig {
            cutoff: hours(c.cutoff_hours.unwrap_or(default_cutoff_hours))?,
            bootstrap,
            include_baseline: !c.no_baseline,
            ..EvalConfig::default()
        })
    }
}

fn apply_bet(cfg: &mut EvalConfig, bet: &BetArgs) -> Result<()> {
    let tie = match bet.tie_rule {
        TieArg::Yes => TieRule::Yes,
        TieArg::No => TieRule::No,
    };
    cfg.risk = RiskProfile::new(bet.gamma)?.with_tie_rule(tie);
    cfg.risk_free = bet.risk_free;
    cfg.sharpe_granularity = bet.sharpe_level.into();
    cfg.return_resample = bet.return_level.into();
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).map_err(|e| Error::Io {
        path: path.to_owned(),
        source: e,
    })?;
    Ok(BufWriter::new(f))
}

fn warn_all(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn run(cli: &Cli) -> Result<()> {
    let default_cutoff = DEFAULT_CUTOFF_HOURS as f64;
    let stdout = io::stdout();
    match &cli.command {
        Command::Validate => {
            let d = cli.data.load()?;
            let pairing = forecast_eval::ingest::pair_forecasts(&d, None)?;
            println!(
                "ok: {} events, {} markets, {} snapshots, {} forecasts ({} scoreable, {} unresolved), {} outcomes, {} chains, {} exclusive sets",
                d.events.len(),
                d.markets.len(),
                d.snapshots.len(),
                d.forecasts.len(),
                pairing.scored.len(),
                pairing.unresolved,
                d.outcomes.len(),
                d.chains.len(),
                d.exclusive_sets.len()
            );
        }
        Command::Evaluate {
            bet,
            bins,
            brier_level,
            epsilon,
            format,
            out_csv,
            out_json,
        } => {
            let mut cfg = cli.config(default_cutoff)?;
            apply_bet(&mut cfg, bet)?;
            let d = cli.data.load()?;
            cfg.bins = *bins;
            cfg.brier_resample = (*brier_level).into();
            cfg.epsilon = *epsilon;
            let eval = report::evaluate(&d, &cfg)?;
            warn_all(&eval.warnings);
            // build every output before writing any of them
            if let Some(p) = out_csv {
                report::write_leaderboard_csv(&eval, create(p)?)?;
            }
            if let Some(p) = out_json {
                report::write_leaderboard_json(&eval, create(p)?)?;
            }
            match format {
                FormatArg::Table => print!("{}", report::format_table(&eval)),
                FormatArg::Csv => report::write_leaderboard_csv(&eval, stdout.lock())?,
                FormatArg::Json => {
                    report::write_leaderboard_json(&eval, stdout.lock())?;
                    println!();
                }
            }
        }
        Command::Calibration {
            bins,
            forecaster,
            out_dir,
        } => {
            let mut cfg = cli.config(default_cutoff)?;
            let d = cli.data.load()?;
            cfg.bins = *bins;
            let diagrams = report::calibration(&d, &cfg)?;
            if let Some(dir) = out_dir {
                std::fs::create_dir_all(dir).map_err(|e| Error::Io {
                    path: dir.clone(),
                    source: e,
                })?;
                for (id, bins) in &diagrams {
                    write_reliability_csv(bins, create(&dir.join(format!("reliability_{id}.csv")))?)?;
                }
            }
            match forecaster {
                Some(id) => {
                    let Some(bins) = diagrams.get(id) else {
                        bail!(Error::InvalidArgument(format!("no scored forecasts for forecaster {id}")));
                    };
                    write_reliability_csv(bins, stdout.lock())?;
                }
                None => {
                    let mut out = stdout.lock();
                    writeln!(out, "forecaster_id,ece")?;
                    for (id, bins) in &diagrams {
                        writeln!(out, "{id},{}", forecast_eval::scoring::ece_from_bins(bins))?;
                    }
                }
            }
        }
        Command::Returns { bet, payoffs_out } => {
            let mut cfg = cli.config(default_cutoff)?;
            apply_bet(&mut cfg, bet)?;
            let d = cli.data.load()?;
            let eval = report::evaluate(&d, &cfg)?;
            warn_all(&eval.warnings);
            if let Some(p) = payoffs_out {
                report::write_payoffs_csv(eval.payoffs.values().flatten(), create(p)?)?;
            }
            let mut out = stdout.lock();
            writeln!(out, "forecaster_id,avg_return,avg_return_ci_halfwidth,avg_return_rank,sharpe,sharpe_rank,n_forecasts")?;
            for row in &eval.rows {
                let r = &row.report;
                writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    r.forecaster_id,
                    r.avg_return,
                    fmt_opt(r.avg_return_ci.map(|c| c.halfwidth)),
                    row.ranks.avg_return,
                    fmt_opt(r.sharpe),
                    row.ranks.sharpe.map(|s| s.to_string()).unwrap_or_default(),
                    r.n_forecasts
                )?;
            }
        }
        Command::Consistency { epsilon } => {
            let mut cfg = cli.config(default_cutoff)?;
            let d = cli.data.load()?;
            cfg.epsilon = *epsilon;
            let summaries = report::consistency(&d, &cfg)?;
            if summaries.iter().all(|s| s.per_event.is_empty()) {
                eprintln!("warning: no chain or exclusive-set annotations; scores are absent");
            }
            report::write_consistency_csv(&summaries, stdout.lock())?;
        }
        Command::Schedule {
            event_id,
            t0,
            tau,
            delta_min_hours,
        } => {
            let delta = hours(*delta_min_hours)?;
            let s = schedule_horizons(event_id, *t0, *tau, delta)?;
            if s.is_empty() {
                eprintln!("warning: gap from t0 to tau is below the minimum; schedule is empty");
            }
            let mut out = stdout.lock();
            for e in s.entries() {
                serde_json::to_writer(&mut out, &e)?;
                writeln!(out)?;
            }
        }
        Command::HorizonBins { edges_hours } => {
            let cfg = cli.config(0.0)?;
            let d = cli.data.load()?;
            let rows = report::horizon_bins(&d, &cfg, edges_hours)?;
            report::write_horizon_csv(&rows, stdout.lock())?;
        }
        Command::Simulate {
            kind,
            n,
            disagreement_scale,
            markets_per_event,
            lead_hours,
            out_dir,
        } => {
            let d = simulate::generate(&GeneratorConfig {
                n_markets: *n,
                seed: cli.common.seed,
                disagreement_scale: *disagreement_scale,
                forecaster_kind: *kind,
                markets_per_event: *markets_per_event,
                lead_hours: lead_hours.clone(),
            })?;
            write_dataset(&d, out_dir)?;
            eprintln!(
                "wrote {} events, {} markets, {} forecasts to {}",
                d.events.len(),
                d.markets.len(),
                d.forecasts.len(),
                out_dir.display()
            );
        }
        Command::VerifyTheory {
            kind,
            n,
            grid_step,
            forecaster,
        } => verify_theory(cli, *kind, *n, *grid_step, forecaster.as_deref())?,
    }
    Ok(())
}

fn verify_theory(cli: &Cli, kind: ForecasterKind, n: usize, grid_step: f64, forecaster: Option<&str>) -> Result<()> {
    let lattice: Vec<f64> = (0..10).map(|i| 0.05 + 0.1 * i as f64).collect();
    let mut worst_gap = 0.0f64;
    let mut worst_loss = 0.0f64;
    for &p in &lattice {
        for &q in &lattice {
            for g in 1..=10 {
                let gamma = g as f64 / 10.0;
                let prices = NormalizedPrices::from_yes(q);
                let risk = RiskProfile::new(gamma)?;
                let closed = forecast_eval::betting::optimal_allocation(p, prices, &risk);
                let oracle = simulate::oracle_allocation(p, prices, gamma, grid_step)?;
                worst_gap = worst_gap.max((closed.a_yes - oracle.a_yes).abs());
                let eu = |a| forecast_eval::betting::expected_utility(a, p, prices, gamma);
                worst_loss = worst_loss.max(eu(oracle.a_yes) - eu(closed.a_yes));
            }
        }
    }
    let alloc_ok = worst_gap <= 1e-6 && worst_loss <= 1e-9;
    println!(
        "[{}] allocation: closed form vs oracle over 1000 (p,q,gamma) points, max |da|={worst_gap:.2e}, max utility shortfall={worst_loss:.2e}",
        if alloc_ok { "PASS" } else { "FAIL" }
    );

    let mut proper = true;
    for i in 0..=100 {
        let t = i as f64 / 100.0;
        let best = (0..=100)
            .min_by(|&a, &b| {
                simulate::expected_brier(a as f64 / 100.0, t).total_cmp(&simulate::expected_brier(b as f64 / 100.0, t))
            })
            .unwrap();
        proper &= best == i;
    }
    println!(
        "[{}] properness: expected Brier minimized at the true probability on a 0.01 grid",
        if proper { "PASS" } else { "FAIL" }
    );

    let (d, label) = if cli.data.any() {
        (cli.data.load()?, forecaster.unwrap_or("all forecasters").to_owned())
    } else {
        let cfg = GeneratorConfig {
            n_markets: n,
            seed: cli.common.seed,
            forecaster_kind: kind,
            ..GeneratorConfig::default()
        };
        (simulate::generate(&cfg)?, format!("synthetic {kind}, n={n}, seed={}", cli.common.seed))
    };
    match simulate::verify_side_balanced_returns(&d, forecaster)? {
        Some(r) => println!(
            "[{}] side-balanced returns ({label}): E[R_Y|p>q]={:.5} (n={}), E[R_N|p<q]={:.5} (n={}), diff={:.5}, 3*SE={:.5}",
            if r.within(3.0) { "PASS" } else { "FAIL" },
            r.mean_yes,
            r.n_yes,
            r.mean_no,
            r.n_no,
            r.difference,
            3.0 * r.standard_error
        ),
        None => eprintln!("warning: side-balanced returns ({label}): one betting side is empty; check skipped"),
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_validation() => EXIT_VALIDATION,
        Some(Error::Io { .. }) => EXIT_IO,
        Some(_) => EXIT_IO,
        None if err.downcast_ref::<io::Error>().is_some() => EXIT_IO,
        None => EXIT_VALIDATION,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
