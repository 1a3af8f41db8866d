//! Result rendering: fixed-layout text tables (coefficient, significance
//! stars, p-value in parentheses), JSON result documents and per-date
//! series files.

use std::fmt::Write as _;

use chrono::NaiveDate;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::msherd::{MsFit, RegimeLabeling};
use crate::regress::{
    ActivationVerdict, DiagnosticKind, DiagnosticResult, HerdingVerdict, OlsFit, Term,
};
use crate::unitroot::{PBound, UnitRootResult};

/// * below 10%, ** below 5%, *** below 1%.
pub fn stars(p: f64) -> &'static str {
    if p < 0.01 {
        "***"
    } else if p < 0.05 {
        "**"
    } else if p < 0.10 {
        "*"
    } else {
        ""
    }
}

/// Fixed-point formatting that never prints a negative zero.
pub fn fixed(x: f64, decimals: usize) -> String {
    if x.is_nan() {
        return "NA".into();
    }
    let s = format!("{x:.decimals$}");
    match s.strip_prefix('-') {
        Some(rest) if rest.chars().all(|c| c == '0' || c == '.') => rest.to_string(),
        _ => s,
    }
}

/// `coef` to three decimals with stars, p-value in parentheses.
pub fn coef_cell(coef: f64, p: f64, p_decimals: usize) -> String {
    format!("{}{} ({})", fixed(coef, 3), stars(p), fixed(p, p_decimals))
}

/// Display name for a design label.
pub fn term_name(label: &str) -> String {
    match label {
        "const" => "Constant".into(),
        "XRm^2" => "XRm^2".into(),
        other => other.into(),
    }
}

/// Plain-text table: first column left-aligned, the rest right-aligned.
#[derive(Debug, Clone, Default)]
pub struct TextTable {
    pub title: Option<String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub notes: Vec<String>,
}

impl TextTable {
    pub fn render(&self) -> String {
        let ncols = std::iter::once(&self.header)
            .chain(&self.rows)
            .map(Vec::len)
            .max()
            .unwrap_or(0);
        let mut widths = vec![0; ncols];
        for row in std::iter::once(&self.header).chain(&self.rows) {
            for (j, cell) in row.iter().enumerate() {
                widths[j] = widths[j].max(cell.chars().count());
            }
        }
        let mut out = String::new();
        if let Some(t) = &self.title {
            out.push_str(t);
            out.push('\n');
        }
        let total = widths.iter().sum::<usize>() + 2 * ncols.saturating_sub(1);
        let rule = "-".repeat(total);
        let line = |row: &[String], out: &mut String| {
            let mut s = String::new();
            for (j, w) in widths.iter().enumerate() {
                let cell = row.get(j).map_or("", String::as_str);
                if j == 0 {
                    let _ = write!(s, "{cell:<w$}");
                } else {
                    let _ = write!(s, "  {cell:>w$}");
                }
            }
            out.push_str(s.trim_end());
            out.push('\n');
        };
        out.push_str(&rule);
        out.push('\n');
        line(&self.header, &mut out);
        out.push_str(&rule);
        out.push('\n');
        for row in &self.rows {
            line(row, &mut out);
        }
        out.push_str(&rule);
        out.push('\n');
        for n in &self.notes {
            out.push_str(n);
            out.push('\n');
        }
        out
    }
}

const P_NOTE: &str =
    "Values in parentheses are p-values. *, **, *** indicate significance at 10%, 5% and 1%.";

fn bound_text(b: PBound) -> &'static str {
    match b {
        PBound::Below01 => "<0.01",
        PBound::Below05 => "<0.05",
        PBound::Below10 => "<0.10",
        PBound::AtLeast10 => ">=0.10",
    }
}

fn unit_root_cell(r: &UnitRootResult) -> String {
    let s = if r.decisions.reject_1 {
        "***"
    } else if r.decisions.reject_5 {
        "**"
    } else if r.decisions.reject_10 {
        "*"
    } else {
        ""
    };
    format!("{}{} ({})", fixed(r.statistic, 3), s, bound_text(r.p_bound))
}

/// Unit-root results for one variable under both tests and both
/// sets of deterministic terms.
#[derive(Debug, Clone, Serialize)]
pub struct UnitRootRow {
    pub variable: String,
    pub adf_constant: UnitRootResult,
    pub adf_trend: UnitRootResult,
    pub pp_constant: UnitRootResult,
    pub pp_trend: UnitRootResult,
}

pub fn unit_root_table(rows: &[UnitRootRow]) -> String {
    TextTable {
        title: Some("Unit root tests".into()),
        header: vec![
            "Variable".into(),
            "ADF constant".into(),
            "ADF constant+trend".into(),
            "PP constant".into(),
            "PP constant+trend".into(),
        ],
        rows: rows
            .iter()
            .map(|r| {
                vec![
                    r.variable.clone(),
                    unit_root_cell(&r.adf_constant),
                    unit_root_cell(&r.adf_trend),
                    unit_root_cell(&r.pp_constant),
                    unit_root_cell(&r.pp_trend),
                ]
            })
            .collect(),
        notes: vec![
            "Parentheses give the p-value bound from Dickey-Fuller critical values.".into(),
            "*, **, *** indicate rejection of a unit root at 10%, 5% and 1%.".into(),
        ],
    }
    .render()
}

#[derive(Debug, Clone, Serialize)]
pub struct Scalars {
    pub r2: f64,
    pub adj_r2: f64,
    pub f: Option<f64>,
    pub f_p: Option<f64>,
    pub nobs: usize,
}

impl Scalars {
    pub fn of(fit: &OlsFit) -> Self {
        Self {
            r2: fit.r2,
            adj_r2: fit.adj_r2,
            f: fit.fstat,
            f_p: fit.f_pvalue,
            nobs: fit.nobs,
        }
    }
}

/// Structured result of one OLS herding fit.
#[derive(Debug, Clone, Serialize)]
pub struct OlsReport {
    pub coefficients: Vec<Term>,
    pub scalars: Scalars,
    pub diagnostics: Vec<DiagnosticResult>,
    pub verdict: HerdingVerdict,
}

impl OlsReport {
    pub fn new(fit: &OlsFit, diagnostics: Vec<DiagnosticResult>, verdict: HerdingVerdict) -> Self {
        Self {
            coefficients: fit.terms(),
            scalars: Scalars::of(fit),
            diagnostics,
            verdict,
        }
    }
}

fn diagnostic_name(kind: DiagnosticKind) -> &'static str {
    match kind {
        DiagnosticKind::BreuschGodfrey => "Breusch-Godfrey LM",
        DiagnosticKind::Arch => "ARCH LM",
    }
}

fn scalar_rows(fit: &OlsFit, diagnostics: &[DiagnosticResult], p_dec: usize) -> Vec<Vec<String>> {
    let mut rows = vec![
        vec!["R^2".into(), fixed(fit.r2, 3)],
        vec!["Corrected R^2".into(), fixed(fit.adj_r2, 3)],
    ];
    if let (Some(f), Some(p)) = (fit.fstat, fit.f_pvalue) {
        rows.push(vec!["F statistics".into(), coef_cell(f, p, p_dec)]);
    }
    for d in diagnostics {
        rows.push(vec![
            format!("{} ({})", diagnostic_name(d.kind), d.lags),
            format!("{} ({})", fixed(d.statistic, 3), fixed(d.pvalue, p_dec)),
        ]);
    }
    rows.push(vec!["Observations".into(), fit.nobs.to_string()]);
    rows
}

/// Single-column regression table for the static herding fit.
pub fn ols_table(report: &OlsReport, fit: &OlsFit) -> String {
    let mut rows: Vec<Vec<String>> = report
        .coefficients
        .iter()
        .map(|t| vec![term_name(&t.label), coef_cell(t.coef, t.p, 3)])
        .collect();
    rows.extend(scalar_rows(fit, &report.diagnostics, 3));
    let v = &report.verdict;
    TextTable {
        title: Some("Herding regression".into()),
        header: vec!["Term".into(), "OLS".into()],
        rows,
        notes: vec![
            P_NOTE.into(),
            format!("Verdict at alpha = {}: {}", v.alpha, v.verdict.as_str()),
        ],
    }
    .render()
}

#[derive(Debug, Clone, Serialize)]
pub struct RegimeReport {
    pub regime: usize,
    pub label: String,
    pub coefficients: Vec<Term>,
    pub sigma: f64,
    pub r2: f64,
    pub occupancy: f64,
    pub verdict: HerdingVerdict,
}

/// Structured result of a Markov-switching fit, regimes in label order.
#[derive(Debug, Clone, Serialize)]
pub struct MsReport {
    pub regimes: Vec<RegimeReport>,
    pub transition: Vec<Vec<f64>>,
    pub loglik: f64,
    pub converged: bool,
    pub n_iter: usize,
    pub best_restart: usize,
    pub restart_logliks: Vec<Option<f64>>,
    pub labeling_tie_broken: bool,
    pub ols: Option<OlsReport>,
}

impl MsReport {
    /// `fit` and `labeling` must already be in label order.
    pub fn new(
        fit: &MsFit,
        labeling: &RegimeLabeling,
        verdicts: &[HerdingVerdict],
        ols: Option<OlsReport>,
    ) -> Result<Self> {
        let k = fit.n_regimes();
        if labeling.labels.len() != k || verdicts.len() != k {
            return Err(Error::InvalidInput("labeling and verdicts must cover every regime".into()));
        }
        let regimes = (0..k)
            .map(|s| {
                let r = &fit.regimes[s];
                RegimeReport {
                    regime: s + 1,
                    label: labeling.labels[s].name(),
                    coefficients: fit
                        .labels
                        .iter()
                        .enumerate()
                        .map(|(j, l)| Term {
                            label: l.clone(),
                            coef: r.coef[j],
                            se: r.se[j],
                            t: r.tstat[j],
                            p: r.pvalue[j],
                        })
                        .collect(),
                    sigma: fit.params.sigma[s],
                    r2: r.r2,
                    occupancy: r.occupancy,
                    verdict: verdicts[s],
                }
            })
            .collect();
        Ok(Self {
            regimes,
            transition: fit.params.trans.clone(),
            loglik: fit.loglik,
            converged: fit.converged,
            n_iter: fit.n_iter,
            best_restart: fit.best_restart,
            restart_logliks: fit.restarts.iter().map(|r| r.loglik).collect(),
            labeling_tie_broken: labeling.tie_broken,
            ols,
        })
    }
}

/// Regime-wise coefficient table, optionally preceded by an OLS column.
pub fn regime_table(report: &MsReport) -> String {
    let mut header = vec!["Term".to_string()];
    if report.ols.is_some() {
        header.push("OLS".into());
    }
    header.extend(report.regimes.iter().map(|r| format!("Regime {}", r.regime)));
    let labels: Vec<String> = report
        .regimes
        .first()
        .map(|r| r.coefficients.iter().map(|t| t.label.clone()).collect())
        .unwrap_or_default();
    let mut rows = Vec::new();
    for (j, label) in labels.iter().enumerate() {
        let mut row = vec![term_name(label)];
        if let Some(ols) = &report.ols {
            row.push(
                ols.coefficients
                    .iter()
                    .find(|t| &t.label == label)
                    .map_or_else(String::new, |t| coef_cell(t.coef, t.p, 3)),
            );
        }
        row.extend(report.regimes.iter().map(|r| {
            let t = &r.coefficients[j];
            coef_cell(t.coef, t.p, 3)
        }));
        rows.push(row);
    }
    let mut push = |name: &str, ols: Option<String>, f: &dyn Fn(&RegimeReport) -> String| {
        let mut row = vec![name.to_string()];
        if report.ols.is_some() {
            row.push(ols.unwrap_or_default());
        }
        row.extend(report.regimes.iter().map(f));
        rows.push(row);
    };
    push("R^2", report.ols.as_ref().map(|o| fixed(o.scalars.r2, 3)), &|r| fixed(r.r2, 3));
    push("sigma", None, &|r| fixed(r.sigma, 4));
    push("Expected periods", report.ols.as_ref().map(|o| o.scalars.nobs.to_string()), &|r| {
        fixed(r.occupancy, 1)
    });
    push("Regime", Some(String::new()), &|r| r.label.clone());
    push(
        "Verdict",
        report.ols.as_ref().map(|o| o.verdict.verdict.as_str().to_string()),
        &|r| r.verdict.verdict.as_str().to_string(),
    );

    let mut out = TextTable {
        title: Some("Herding regression by regime".into()),
        header,
        rows,
        notes: vec![P_NOTE.into()],
    }
    .render();
    let k = report.transition.len();
    let mut trans = TextTable {
        title: Some("Transition probabilities (row: from, column: to)".into()),
        header: std::iter::once(String::new())
            .chain((1..=k).map(|s| format!("Regime {s}")))
            .collect(),
        rows: Vec::new(),
        notes: vec![format!(
            "Log-likelihood {} after {} EM iterations{}.",
            fixed(report.loglik, 4),
            report.n_iter,
            if report.converged { "" } else { " (not converged)" }
        )],
    };
    for (i, row) in report.transition.iter().enumerate() {
        trans.rows.push(
            std::iter::once(format!("Regime {}", i + 1))
                .chain(row.iter().map(|p| fixed(*p, 3)))
                .collect(),
        );
    }
    out.push('\n');
    out.push_str(&trans.render());
    out
}

/// Per-date smoothed regime probabilities with the most likely regime and
/// its label. Regimes are numbered in the order of `fit`.
pub fn regime_probabilities_csv(
    dates: &[NaiveDate],
    fit: &MsFit,
    labeling: &RegimeLabeling,
) -> Result<String> {
    if dates.len() != fit.smoothed.len() {
        return Err(Error::InvalidInput(format!(
            "{} dates for {} fitted rows",
            dates.len(),
            fit.smoothed.len()
        )));
    }
    let k = fit.n_regimes();
    let mut out = String::from("date");
    for s in 1..=k {
        let _ = write!(out, ",p_{s}");
    }
    out.push_str(",most_likely,label\n");
    for ((d, row), best) in dates.iter().zip(&fit.smoothed).zip(fit.most_likely()) {
        let _ = write!(out, "{d}");
        for p in row {
            let _ = write!(out, ",{p}");
        }
        let _ = writeln!(out, ",{},{}", best + 1, labeling.labels[best].name());
    }
    Ok(out)
}

/// Event regression for one exogenous series.
#[derive(Debug, Clone, Serialize)]
pub struct EventReport {
    pub series: String,
    pub coefficients: Vec<Term>,
    pub scalars: Scalars,
    pub diagnostics: Vec<DiagnosticResult>,
    pub herding: HerdingVerdict,
    pub activation: ActivationVerdict,
    pub verdict: String,
}

impl EventReport {
    pub fn new(
        series: impl Into<String>,
        fit: &OlsFit,
        diagnostics: Vec<DiagnosticResult>,
        herding: HerdingVerdict,
        activation: ActivationVerdict,
    ) -> Self {
        Self {
            series: series.into(),
            coefficients: fit.terms(),
            scalars: Scalars::of(fit),
            diagnostics,
            herding,
            activation,
            verdict: activation.as_str().to_string(),
        }
    }
}

/// One column per exogenous series.
pub fn event_table(reports: &[EventReport]) -> String {
    let mut header = vec!["Variables".to_string()];
    header.extend(reports.iter().map(|r| r.series.clone()));
    let labels: Vec<String> = reports
        .first()
        .map(|r| r.coefficients.iter().map(|t| t.label.clone()).collect())
        .unwrap_or_default();
    let mut rows: Vec<Vec<String>> = labels
        .iter()
        .map(|label| {
            std::iter::once(term_name(label))
                .chain(reports.iter().map(|r| {
                    r.coefficients
                        .iter()
                        .find(|t| &t.label == label)
                        .map_or_else(String::new, |t| coef_cell(t.coef, t.p, 2))
                }))
                .collect()
        })
        .collect();
    rows.push(
        std::iter::once("Corrected R^2".to_string())
            .chain(reports.iter().map(|r| fixed(r.scalars.adj_r2, 3)))
            .collect(),
    );
    rows.push(
        std::iter::once("F statistics".to_string())
            .chain(reports.iter().map(|r| match (r.scalars.f, r.scalars.f_p) {
                (Some(f), Some(p)) => coef_cell(f, p, 2),
                _ => String::new(),
            }))
            .collect(),
    );
    for kind in [DiagnosticKind::BreuschGodfrey, DiagnosticKind::Arch] {
        let name = match kind {
            DiagnosticKind::BreuschGodfrey => "Breusch-Godfrey LM",
            DiagnosticKind::Arch => "ARCH LM",
        };
        rows.push(
            std::iter::once(name.to_string())
                .chain(reports.iter().map(|r| {
                    r.diagnostics
                        .iter()
                        .find(|d| d.kind == kind)
                        .map_or_else(String::new, |d| {
                            format!("{} ({})", fixed(d.statistic, 3), fixed(d.pvalue, 2))
                        })
                }))
                .collect(),
        );
    }
    rows.push(
        std::iter::once("Observations".to_string())
            .chain(reports.iter().map(|r| r.scalars.nobs.to_string()))
            .collect(),
    );
    rows.push(
        std::iter::once("Verdict".to_string())
            .chain(reports.iter().map(|r| r.verdict.clone()))
            .collect(),
    );
    TextTable {
        title: Some("Herding regression with exogenous term".into()),
        header,
        rows,
        notes: vec![P_NOTE.into()],
    }
    .render()
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| Error::InvalidInput(format!("serialization failed: {e}")))?;
    s.push('\n');
    Ok(s)
}
