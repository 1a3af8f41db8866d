use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use herding_core::dispersion::{csad, DispersionSeries};
use herding_core::events::{index_returns, load_calendar_path, DummyPreset, ExogKind, ExogSeries};
use herding_core::msherd::{build_design, em_fit, label_regimes, per_regime_herding, MsSpec, RegimeLabeling};
use herding_core::panel::{
    compute_returns, deseasonalize, load_levels_path, load_prices_path, reconstruct_prices,
    Deseasonalize,
};
use herding_core::regress::{
    arch_test, breusch_godfrey, classify_activation, classify_herding, event_regression,
    fit_ols_with, Design, DiagnosticResult, OlsFit,
};
use herding_core::report::{
    event_table, ols_table, regime_probabilities_csv, regime_table, to_json, unit_root_table,
    EventReport, MsReport, OlsReport, UnitRootRow,
};
use herding_core::synth::simulate_panel;
use herding_core::unitroot::{adf, pp, Deterministic};
use serde::Serialize;

use crate::config::{Mode, Preset, RunConfig, UsageError};

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Existing, non-empty input file.
fn input_file(path: Option<&PathBuf>, what: &str, flag: &str) -> Result<PathBuf> {
    let path = path.ok_or_else(|| usage(format!("no {what} given; pass {flag} or set it in the config")))?;
    let meta = fs::metadata(path).map_err(|e| usage(format!("{what} {}: {e}", path.display())))?;
    if meta.len() == 0 {
        return Err(usage(format!("{what} {} is empty", path.display())));
    }
    Ok(path.clone())
}

fn write_out(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

/// Dispersion series from the price file, after the configured
/// deseasonalization.
pub struct Loaded {
    pub dispersion: DispersionSeries,
    pub n_assets: usize,
    pub n_return_dates: usize,
    pub rejected_cells: usize,
}

pub fn load_dispersion(cfg: &RunConfig) -> Result<Loaded> {
    let path = input_file(cfg.input.prices.as_ref(), "price file", "--prices")?;
    let loaded = load_prices_path(&path).with_context(|| format!("loading {}", path.display()))?;
    for cell in &loaded.rejected {
        log::warn!(
            "{}:{}: rejected {} for {} on {}",
            path.display(),
            cell.line,
            cell.value,
            cell.asset,
            cell.date
        );
    }
    let returns = compute_returns(&loaded.panel, &cfg.series);
    let raw = csad(&returns, cfg.series.min_assets_per_date);
    if raw.is_empty() {
        bail!(
            "no date has at least {} observed returns",
            cfg.series.min_assets_per_date
        );
    }
    let dispersion = raw.deseasonalized(cfg.series.deseasonalize)?;
    Ok(Loaded {
        dispersion,
        n_assets: returns.n_assets(),
        n_return_dates: returns.n_dates(),
        rejected_cells: loaded.rejected.len(),
    })
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, var.sqrt())
}

#[derive(Serialize)]
struct DispersionSummary {
    first_date: NaiveDate,
    last_date: NaiveDate,
    n_dates: usize,
    n_assets: usize,
    dropped_dates: usize,
    rejected_cells: usize,
    deseasonalize: Deseasonalize,
    csad_mean: f64,
    csad_sd: f64,
    rm_mean: f64,
    rm_sd: f64,
}

pub fn cmd_dispersion(cfg: &RunConfig) -> Result<()> {
    let l = load_dispersion(cfg)?;
    let d = &l.dispersion;
    let (csad_mean, csad_sd) = mean_sd(&d.csad);
    let (rm_mean, rm_sd) = mean_sd(&d.rm);
    let summary = DispersionSummary {
        first_date: d.dates[0],
        last_date: d.dates[d.len() - 1],
        n_dates: d.len(),
        n_assets: l.n_assets,
        dropped_dates: l.n_return_dates - d.len(),
        rejected_cells: l.rejected_cells,
        deseasonalize: cfg.series.deseasonalize,
        csad_mean,
        csad_sd,
        rm_mean,
        rm_sd,
    };
    let out = cfg.out_dir();
    write_out(&out, "dispersion.csv", &d.to_table())?;
    write_out(&out, "dispersion_summary.json", &to_json(&summary)?)
}

/// Index return series named on the command line or in the config, with
/// the configured deseasonalization.
fn load_indices(cfg: &RunConfig) -> Result<Vec<ExogSeries>> {
    cfg.input
        .index
        .iter()
        .map(|(label, path)| {
            let path = input_file(Some(path), "index file", "--index")?;
            let levels = load_levels_path(&path).with_context(|| format!("loading {}", path.display()))?;
            let r = index_returns(&levels, label.clone())?;
            let s = deseasonalize(&r.series(), cfg.series.deseasonalize)?;
            Ok(ExogSeries::new(s.dates, s.values, ExogKind::IndexReturn, label.clone())?)
        })
        .collect()
}

fn unit_root_row(variable: &str, values: &[f64], cfg: &RunConfig) -> Result<UnitRootRow> {
    let ctx = || format!("unit-root tests on {variable}");
    let lags = cfg.unitroot.lags;
    let bw = cfg.unitroot.bandwidth;
    Ok(UnitRootRow {
        variable: variable.to_string(),
        adf_constant: adf(values, Deterministic::Constant, lags).with_context(ctx)?,
        adf_trend: adf(values, Deterministic::ConstantTrend, lags).with_context(ctx)?,
        pp_constant: pp(values, Deterministic::Constant, bw).with_context(ctx)?,
        pp_trend: pp(values, Deterministic::ConstantTrend, bw).with_context(ctx)?,
    })
}

pub fn cmd_unitroot(cfg: &RunConfig) -> Result<()> {
    let l = load_dispersion(cfg)?;
    let d = &l.dispersion;
    let mut rows = vec![
        unit_root_row("CSAD", &d.csad, cfg)?,
        unit_root_row("Rm", &d.rm, cfg)?,
        unit_root_row("Rm^2", &d.rm_sq, cfg)?,
    ];
    for exog in load_indices(cfg)? {
        rows.push(unit_root_row(&exog.label, &exog.values, cfg)?);
    }
    let out = cfg.out_dir();
    write_out(&out, "unitroot.txt", &unit_root_table(&rows))?;
    write_out(&out, "unitroot.json", &to_json(&rows)?)
}

fn diagnostics(fit: &OlsFit, cfg: &RunConfig) -> Result<Vec<DiagnosticResult>> {
    Ok(vec![
        breusch_godfrey(fit, cfg.herd.bg_lags)?,
        arch_test(&fit.residuals, cfg.herd.arch_lags)?,
    ])
}

/// Design, response, dates and market returns for a regressor preset.
fn preset_design(
    disp: &DispersionSeries,
    preset: Preset,
    spec: &MsSpec,
) -> Result<(Design, Vec<f64>, Vec<NaiveDate>, Vec<f64>)> {
    Ok(match preset {
        Preset::Static => (Design::herding(disp), disp.csad.clone(), disp.dates.clone(), disp.rm.clone()),
        Preset::Lagged => {
            let md = build_design(disp, spec)?;
            (md.design, md.response, md.dates, md.rm)
        }
    })
}

fn ols_report(design: &Design, response: &[f64], cfg: &RunConfig) -> Result<(OlsReport, OlsFit)> {
    let fit = fit_ols_with(design, response, cfg.herd.covariance)?;
    let verdict = classify_herding(&fit, cfg.alpha())?;
    Ok((OlsReport::new(&fit, diagnostics(&fit, cfg)?, verdict), fit))
}

pub fn cmd_herd(cfg: &RunConfig, mode: Mode) -> Result<()> {
    let l = load_dispersion(cfg)?;
    match mode {
        Mode::Ols => herd_ols(cfg, &l.dispersion),
        Mode::Ms => herd_ms(cfg, &l.dispersion),
        Mode::Event => herd_event(cfg, &l.dispersion),
    }
}

fn herd_ols(cfg: &RunConfig, disp: &DispersionSeries) -> Result<()> {
    let preset = cfg.herd.preset.unwrap_or(Preset::Static);
    let (design, response, _, _) = preset_design(disp, preset, &cfg.ms)?;
    let (report, fit) = ols_report(&design, &response, cfg)?;
    let out = cfg.out_dir();
    write_out(&out, "herd_ols.txt", &ols_table(&report, &fit))?;
    write_out(&out, "herd_ols.json", &to_json(&report)?)
}

fn herd_ms(cfg: &RunConfig, disp: &DispersionSeries) -> Result<()> {
    let preset = cfg.herd.preset.unwrap_or(Preset::Lagged);
    let spec = match preset {
        Preset::Static => MsSpec::static_terms(cfg.ms.n_regimes),
        Preset::Lagged => cfg.ms,
    };
    let (design, response, dates, rm) = preset_design(disp, preset, &spec)?;
    let (ols, _) = ols_report(&design, &response, cfg)?;
    let fit = em_fit(&spec, &design, &response, &cfg.em_options())?;
    for r in fit.restarts.iter().filter(|r| r.degenerate.is_some()) {
        log::info!("restart {} discarded: {}", r.index, r.degenerate.as_deref().unwrap_or(""));
    }
    let labeling = label_regimes(&fit, &rm)?;
    // number regimes in label order
    let perm = labeling.order();
    let fit = fit.permuted(&perm);
    let labeling = RegimeLabeling {
        labels: perm.iter().map(|&p| labeling.labels[p]).collect(),
        mean_rm: perm.iter().map(|&p| labeling.mean_rm[p]).collect(),
        tie_broken: labeling.tie_broken,
    };
    let verdicts = per_regime_herding(&fit, cfg.alpha())?;
    let report = MsReport::new(&fit, &labeling, &verdicts, Some(ols))?;
    let out = cfg.out_dir();
    write_out(&out, "herd_ms.txt", &regime_table(&report))?;
    write_out(&out, "herd_ms.json", &to_json(&report)?)?;
    write_out(&out, "regime_probabilities.csv", &regime_probabilities_csv(&dates, &fit, &labeling)?)
}

#[derive(Serialize)]
struct Skipped {
    series: String,
    reason: String,
}

#[derive(Serialize)]
struct EventOutput {
    announcements: Vec<EventReport>,
    indices: Vec<EventReport>,
    skipped: Vec<Skipped>,
}

fn event_report(cfg: &RunConfig, disp: &DispersionSeries, exog: &ExogSeries) -> Result<EventReport> {
    let fit = event_regression(disp, exog, cfg.herd.exog_term)?;
    Ok(EventReport::new(
        exog.label.clone(),
        &fit,
        diagnostics(&fit, cfg)?,
        classify_herding(&fit, cfg.alpha())?,
        classify_activation(&fit, cfg.alpha())?,
    ))
}

fn herd_event(cfg: &RunConfig, disp: &DispersionSeries) -> Result<()> {
    if cfg.input.calendar.is_none() && cfg.input.index.is_empty() {
        return Err(usage("event mode needs --calendar and/or --index LABEL=PATH"));
    }
    let mut output = EventOutput {
        announcements: Vec::new(),
        indices: Vec::new(),
        skipped: Vec::new(),
    };
    let mut skip = |series: String, reason: String| {
        log::warn!("skipping {series}: {reason}");
        output.skipped.push(Skipped { series, reason });
    };
    let mut announcements = Vec::new();
    if cfg.input.calendar.is_some() {
        let path = input_file(cfg.input.calendar.as_ref(), "calendar", "--calendar")?;
        let loaded = load_calendar_path(&path).with_context(|| format!("loading {}", path.display()))?;
        for diag in &loaded.rejected {
            log::warn!("{}:{}: {}", path.display(), diag.line, diag.message);
        }
        for preset in DummyPreset::ALL {
            let dummy = preset.build(&loaded.calendar, &disp.dates, cfg.herd.window)?;
            if dummy.all_zero {
                skip(preset.label(), "no announcements fall on sample dates".into());
                continue;
            }
            match event_report(cfg, disp, &dummy.series) {
                Ok(r) => announcements.push(r),
                Err(e) => skip(preset.label(), format!("{e:#}")),
            }
        }
    }
    let mut indices = Vec::new();
    for exog in load_indices(cfg)? {
        match event_report(cfg, disp, &exog) {
            Ok(r) => indices.push(r),
            Err(e) => skip(exog.label.clone(), format!("{e:#}")),
        }
    }
    if announcements.is_empty() && indices.is_empty() {
        bail!("no exogenous series could be estimated");
    }
    output.announcements = announcements;
    output.indices = indices;
    let mut text = String::new();
    if !output.announcements.is_empty() {
        text.push_str(&event_table(&output.announcements));
    }
    if !output.indices.is_empty() {
        if !text.is_empty() {
            text.push('\n');
        }
        text.push_str(&event_table(&output.indices));
    }
    let out = cfg.out_dir();
    write_out(&out, "herd_event.txt", &text)?;
    write_out(&out, "herd_event.json", &to_json(&output)?)
}

#[derive(Serialize)]
struct SimulationSummary<'a> {
    config: &'a herding_core::synth::SynthConfig,
    floored: usize,
    regime_counts: Vec<usize>,
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<()> {
    let mut synth = cfg.synth.clone();
    if let Some(seed) = cfg.seed {
        synth.seed = seed;
    }
    let sim = simulate_panel(&synth)?;
    let prices = reconstruct_prices(&sim.returns, synth.start, &vec![100.0; synth.n_assets])?;
    let truth = &sim.truth;
    let d = &truth.dispersion;
    let mut table = String::from("date,regime,rm,csad");
    if truth.dummy.is_some() {
        table.push_str(",event");
    }
    table.push('\n');
    for t in 0..d.len() {
        let _ = write!(table, "{},{},{},{}", d.dates[t], truth.regimes[t] + 1, d.rm[t], d.csad[t]);
        if let Some(dummy) = &truth.dummy {
            let _ = write!(table, ",{}", dummy.values[t]);
        }
        table.push('\n');
    }
    let mut regime_counts = vec![0; synth.n_regimes()];
    for &s in &truth.regimes {
        regime_counts[s] += 1;
    }
    let summary = SimulationSummary {
        config: &synth,
        floored: truth.floored,
        regime_counts,
    };
    let out = cfg.out_dir();
    write_out(&out, "prices.csv", &prices.to_table())?;
    write_out(&out, "truth.csv", &table)?;
    write_out(&out, "simulate.json", &to_json(&summary)?)
}
