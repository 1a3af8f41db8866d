use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use herding_core::events::EventWindow;
use herding_core::msherd::{EmOptions, MsSpec};
use herding_core::panel::SeriesSpec;
use herding_core::regress::{Covariance, ExogTerm, DEFAULT_ARCH_LAGS, DEFAULT_BG_LAGS};
use herding_core::synth::SynthConfig;
use herding_core::unitroot::{Bandwidth, LagChoice};
use serde::Deserialize;

pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_OUT: &str = "herding-out";

/// Bad invocation or unusable input; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Ols,
    Ms,
    Event,
}

/// Regressor set: plain (1, |R_m|, R_m²) or the lagged-CSAD and volatility
/// terms of the regime table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Static,
    Lagged,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    pub prices: Option<PathBuf>,
    pub calendar: Option<PathBuf>,
    /// Label → level file.
    pub index: BTreeMap<String, PathBuf>,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnitRootConfig {
    pub lags: LagChoice,
    pub bandwidth: Bandwidth,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HerdConfig {
    pub mode: Option<Mode>,
    pub preset: Option<Preset>,
    pub covariance: Covariance,
    pub exog_term: ExogTerm,
    pub window: EventWindow,
    pub bg_lags: usize,
    pub arch_lags: usize,
}

impl Default for HerdConfig {
    fn default() -> Self {
        Self {
            mode: None,
            preset: None,
            covariance: Covariance::Classical,
            exog_term: ExogTerm::Auto,
            window: EventWindow::default(),
            bg_lags: DEFAULT_BG_LAGS,
            arch_lags: DEFAULT_ARCH_LAGS,
        }
    }
}

/// Everything a run needs, merged from the config file and flags.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub alpha: Option<f64>,
    pub input: InputConfig,
    pub series: SeriesSpec,
    pub ms: MsSpec,
    pub em: EmOptions,
    pub unitroot: UnitRootConfig,
    pub herd: HerdConfig,
    pub synth: SynthConfig,
}

impl RunConfig {
    /// Reads a TOML file; relative input paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.input.prices.as_mut().map(fix);
        cfg.input.calendar.as_mut().map(fix);
        cfg.input.index.values_mut().for_each(fix);
        cfg.out.as_mut().map(fix);
        Ok(cfg)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(DEFAULT_ALPHA)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
    }

    pub fn em_options(&self) -> EmOptions {
        EmOptions {
            seed: self.seed.unwrap_or(self.em.seed),
            ..self.em
        }
    }

    pub fn validate(&self) -> Result<()> {
        let alpha = self.alpha();
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(UsageError(format!("alpha must lie in (0, 1), got {alpha}")).into());
        }
        self.series.validate()?;
        self.ms.validate()?;
        Ok(())
    }
}
