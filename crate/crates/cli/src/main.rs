mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use herding_core::events::EventWindow;
use herding_core::panel::Deseasonalize;
use herding_core::unitroot::{Bandwidth, LagChoice};

use config::{Mode, Preset, RunConfig, UsageError};

#[derive(Parser)]
#[command(name = "herding", version, about = "Herding measurement for asset return panels")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for the EM restarts and the simulator.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Log progress to stderr (-vv for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct SeriesArgs {
    /// Price table: date column then one column per asset.
    #[arg(long)]
    prices: Option<PathBuf>,
    /// Fewest observed returns a date needs to enter the dispersion series.
    #[arg(long)]
    min_assets: Option<usize>,
    /// Use log instead of simple returns.
    #[arg(long)]
    log_returns: bool,
    #[arg(long, value_enum)]
    deseasonalize: Option<DeseasonalizeArg>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum DeseasonalizeArg {
    None,
    WeekdayDemean,
}

/// `LABEL=PATH` index level file.
fn parse_index(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((label, path)) if !label.is_empty() && !path.is_empty() => {
            Ok((label.to_string(), PathBuf::from(path)))
        }
        _ => Err(format!("expected LABEL=PATH, got {s:?}")),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write the CSAD and market-return series.
    Dispersion {
        #[command(flatten)]
        series: SeriesArgs,
    },
    /// ADF and PP tests on CSAD, R_m, R_m² and index returns.
    Unitroot {
        #[command(flatten)]
        series: SeriesArgs,
        #[arg(long, value_parser = parse_index)]
        index: Vec<(String, PathBuf)>,
        /// Augmentation lags; omit for automatic selection.
        #[arg(long)]
        lags: Option<usize>,
        /// Newey–West bandwidth; omit for the automatic rule.
        #[arg(long)]
        bandwidth: Option<usize>,
    },
    /// Herding regressions: static OLS, Markov switching or event terms.
    Herd {
        #[command(flatten)]
        series: SeriesArgs,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        /// Significance level for verdicts.
        #[arg(long)]
        alpha: Option<f64>,
        /// Announcement calendar: date,authority,action.
        #[arg(long)]
        calendar: Option<PathBuf>,
        #[arg(long, value_parser = parse_index)]
        index: Vec<(String, PathBuf)>,
        #[arg(long)]
        regimes: Option<usize>,
        #[arg(long)]
        restarts: Option<usize>,
        #[arg(long)]
        max_iter: Option<usize>,
        #[arg(long)]
        lags: Option<usize>,
        #[arg(long)]
        vol_window: Option<usize>,
        /// Drop the rolling volatility regressors.
        #[arg(long)]
        no_vol: bool,
        /// Trading days marked before each announcement.
        #[arg(long)]
        window_before: Option<usize>,
        /// Trading days marked after each announcement.
        #[arg(long)]
        window_after: Option<usize>,
    },
    /// Generate a regime-switching price panel with its true path.
    Simulate {
        #[arg(long)]
        periods: Option<usize>,
        #[arg(long)]
        assets: Option<usize>,
    },
}

impl SeriesArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(p) = &self.prices {
            cfg.input.prices = Some(p.clone());
        }
        if let Some(m) = self.min_assets {
            cfg.series.min_assets_per_date = m;
        }
        if self.log_returns {
            cfg.series.return_method = herding_core::panel::ReturnMethod::Log;
        }
        if let Some(d) = self.deseasonalize {
            cfg.series.deseasonalize = match d {
                DeseasonalizeArg::None => Deseasonalize::None,
                DeseasonalizeArg::WeekdayDemean => Deseasonalize::WeekdayDemean,
            };
        }
    }
}

fn set_index(cfg: &mut RunConfig, index: &[(String, PathBuf)]) {
    if !index.is_empty() {
        cfg.input.index = index.iter().cloned().collect();
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    if cli.out.is_some() {
        cfg.out = cli.out.clone();
    }
    match &cli.command {
        Command::Dispersion { series } => {
            series.apply(&mut cfg);
            cfg.validate()?;
            commands::cmd_dispersion(&cfg)
        }
        Command::Unitroot { series, index, lags, bandwidth } => {
            series.apply(&mut cfg);
            set_index(&mut cfg, index);
            if let Some(l) = lags {
                cfg.unitroot.lags = LagChoice::Fixed(*l);
            }
            if let Some(b) = bandwidth {
                cfg.unitroot.bandwidth = Bandwidth::Fixed(*b);
            }
            cfg.validate()?;
            commands::cmd_unitroot(&cfg)
        }
        Command::Herd {
            series,
            mode,
            preset,
            alpha,
            calendar,
            index,
            regimes,
            restarts,
            max_iter,
            lags,
            vol_window,
            no_vol,
            window_before,
            window_after,
        } => {
            series.apply(&mut cfg);
            set_index(&mut cfg, index);
            if mode.is_some() {
                cfg.herd.mode = *mode;
            }
            if preset.is_some() {
                cfg.herd.preset = *preset;
            }
            if alpha.is_some() {
                cfg.alpha = *alpha;
            }
            if calendar.is_some() {
                cfg.input.calendar = calendar.clone();
            }
            if let Some(k) = regimes {
                cfg.ms.n_regimes = *k;
            }
            if let Some(r) = restarts {
                cfg.em.restarts = *r;
            }
            if let Some(m) = max_iter {
                cfg.em.max_iter = *m;
            }
            if let Some(l) = lags {
                cfg.ms.n_lags = *l;
            }
            if let Some(w) = vol_window {
                cfg.ms.vol_window = *w;
            }
            if *no_vol {
                cfg.ms.include_vol = false;
            }
            cfg.herd.window = EventWindow {
                before: window_before.unwrap_or(cfg.herd.window.before),
                after: window_after.unwrap_or(cfg.herd.window.after),
            };
            cfg.validate()?;
            let mode = cfg.herd.mode.unwrap_or(Mode::Ols);
            commands::cmd_herd(&cfg, mode)
        }
        Command::Simulate { periods, assets } => {
            if let Some(p) = periods {
                cfg.synth.n_periods = *p;
            }
            if let Some(a) = assets {
                cfg.synth.n_assets = *a;
            }
            cfg.validate()?;
            commands::cmd_simulate(&cfg)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
