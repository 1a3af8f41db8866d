//! Least-squares engine, the static and event-augmented CSAD herding
//! regressions, and residual diagnostics (Breusch–Godfrey LM, ARCH LM).

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor, StudentsT};

use crate::dispersion::DispersionSeries;
use crate::error::{Error, Result};
use crate::events::{ExogKind, ExogSeries};
use crate::linalg::{lstsq, matrix_from_columns, r_squared};
use crate::panel::intersect_indices;
use crate::unitroot::bartlett_weight;

pub const CONST: &str = "const";
pub const RM_ABS: &str = "|Rm|";
pub const RM_SQ: &str = "Rm^2";
pub const EXOG: &str = "XRm^2";

/// Minimum retained dates for the herding regressions.
pub const MIN_HERDING_DATES: usize = 30;

/// Named regressor columns sharing one row count.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    labels: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl Design {
    pub fn new(labels: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if labels.len() != columns.len() || columns.is_empty() {
            return Err(Error::InvalidInput(format!(
                "{} labels for {} columns",
                labels.len(),
                columns.len()
            )));
        }
        let n = columns[0].len();
        if columns.iter().any(|c| c.len() != n) {
            return Err(Error::InvalidInput("design columns differ in length".into()));
        }
        Ok(Self { labels, columns })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn column(&self, label: &str) -> Option<&[f64]> {
        self.index_of(label).map(|j| self.columns[j].as_slice())
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn nobs(&self) -> usize {
        self.columns[0].len()
    }

    pub fn ncols(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, t: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[t]).collect()
    }

    /// True when some column is a nonzero constant.
    pub fn has_intercept(&self) -> bool {
        self.columns
            .iter()
            .any(|c| c[0] != 0.0 && c.iter().all(|v| *v == c[0]))
    }

    pub fn with_column(mut self, label: impl Into<String>, column: Vec<f64>) -> Result<Self> {
        if column.len() != self.nobs() {
            return Err(Error::InvalidInput("appended column has wrong length".into()));
        }
        self.labels.push(label.into());
        self.columns.push(column);
        Ok(self)
    }

    /// (1, |R_m|, R_m²).
    pub fn herding(disp: &DispersionSeries) -> Self {
        Self {
            labels: vec![CONST.into(), RM_ABS.into(), RM_SQ.into()],
            columns: vec![vec![1.0; disp.len()], disp.rm_abs.clone(), disp.rm_sq.clone()],
        }
    }

    pub(crate) fn matrix(&self) -> nalgebra::DMatrix<f64> {
        matrix_from_columns(&self.columns)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Covariance {
    /// Homoskedastic σ²(XᵀX)⁻¹.
    #[default]
    Classical,
    /// Bartlett-kernel HAC; `lags` defaults to floor(4(T/100)^(2/9)).
    NeweyWest { lags: Option<usize> },
}

#[derive(Debug, Clone, Serialize)]
pub struct OlsFit {
    pub labels: Vec<String>,
    pub coef: Vec<f64>,
    pub se: Vec<f64>,
    pub tstat: Vec<f64>,
    pub pvalue: Vec<f64>,
    pub r2: f64,
    pub adj_r2: f64,
    pub fstat: Option<f64>,
    pub f_pvalue: Option<f64>,
    pub residuals: Vec<f64>,
    pub nobs: usize,
    pub df_resid: usize,
    pub sigma: f64,
    pub covariance: Covariance,
    #[serde(skip)]
    design: Design,
    #[serde(skip)]
    response: Vec<f64>,
}

impl OlsFit {
    pub fn design(&self) -> &Design {
        &self.design
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    pub fn index_of(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::MissingLabel(label.to_string()))
    }

    /// (coef, se, t, p) for `label`.
    pub fn term(&self, label: &str) -> Result<Term> {
        let j = self.index_of(label)?;
        Ok(Term {
            label: self.labels[j].clone(),
            coef: self.coef[j],
            se: self.se[j],
            t: self.tstat[j],
            p: self.pvalue[j],
        })
    }

    pub fn terms(&self) -> Vec<Term> {
        (0..self.coef.len())
            .map(|j| Term {
                label: self.labels[j].clone(),
                coef: self.coef[j],
                se: self.se[j],
                t: self.tstat[j],
                p: self.pvalue[j],
            })
            .collect()
    }
}

/// One row of a coefficient table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Term {
    pub label: String,
    pub coef: f64,
    pub se: f64,
    pub t: f64,
    pub p: f64,
}

pub fn fit_ols(design: &Design, response: &[f64]) -> Result<OlsFit> {
    fit_ols_with(design, response, Covariance::Classical)
}

pub fn fit_ols_with(design: &Design, response: &[f64], covariance: Covariance) -> Result<OlsFit> {
    let n = design.nobs();
    let k = design.ncols();
    if response.len() != n {
        return Err(Error::InvalidInput(format!(
            "response has {} rows, design {}",
            response.len(),
            n
        )));
    }
    if n <= k {
        return Err(Error::TooFewObservations { needed: k, got: n });
    }
    let x = design.matrix();
    let ls = lstsq(&x, response, &design.labels)?;
    let df = n - k;
    let s2 = ls.rss / df as f64;

    let cov_diag: Vec<f64> = match covariance {
        Covariance::Classical => (0..k).map(|j| s2 * ls.xtx_inv[(j, j)]).collect(),
        Covariance::NeweyWest { lags } => {
            let lags = lags.unwrap_or_else(|| default_bandwidth(n));
            let meat = hac_meat(&x, &ls.residuals, lags);
            let sandwich = &ls.xtx_inv * meat * &ls.xtx_inv;
            (0..k).map(|j| sandwich[(j, j)]).collect()
        }
    };
    let se: Vec<f64> = cov_diag.iter().map(|v| v.max(0.0).sqrt()).collect();
    let tdist = StudentsT::new(0.0, 1.0, df as f64).expect("df > 0");
    let (tstat, pvalue): (Vec<f64>, Vec<f64>) = ls
        .coef
        .iter()
        .zip(&se)
        .map(|(b, s)| {
            if *s > 0.0 {
                let t = b / s;
                (t, (2.0 * tdist.sf(t.abs())).min(1.0))
            } else if *b == 0.0 {
                (0.0, 1.0)
            } else {
                (b.signum() * f64::INFINITY, 0.0)
            }
        })
        .unzip();

    let intercept = design.has_intercept();
    let r2 = if intercept {
        r_squared(response, ls.rss)
    } else {
        let tss: f64 = response.iter().map(|v| v * v).sum();
        if tss > 0.0 {
            (1.0 - ls.rss / tss).clamp(0.0, 1.0)
        } else {
            0.0
        }
    };
    let df_model = if intercept { k - 1 } else { k };
    let denom_n = if intercept { n - 1 } else { n };
    let adj_r2 = 1.0 - (1.0 - r2) * denom_n as f64 / df as f64;
    let (fstat, f_pvalue) = if df_model == 0 {
        (None, None)
    } else {
        let f = (r2 / df_model as f64) / ((1.0 - r2) / df as f64);
        let p = if f.is_finite() {
            FisherSnedecor::new(df_model as f64, df as f64)
                .expect("positive df")
                .sf(f)
        } else {
            0.0
        };
        (Some(f), Some(p))
    };

    Ok(OlsFit {
        labels: design.labels.clone(),
        coef: ls.coef,
        se,
        tstat,
        pvalue,
        r2,
        adj_r2,
        fstat,
        f_pvalue,
        residuals: ls.residuals,
        nobs: n,
        df_resid: df,
        sigma: s2.sqrt(),
        covariance,
        design: design.clone(),
        response: response.to_vec(),
    })
}

fn default_bandwidth(n: usize) -> usize {
    (4.0 * (n as f64 / 100.0).powf(2.0 / 9.0)).floor() as usize
}

fn hac_meat(x: &nalgebra::DMatrix<f64>, e: &[f64], lags: usize) -> nalgebra::DMatrix<f64> {
    let (n, k) = x.shape();
    let scores: Vec<nalgebra::DVector<f64>> = (0..n)
        .map(|t| x.row(t).transpose() * e[t])
        .collect();
    let mut s = nalgebra::DMatrix::zeros(k, k);
    for g in &scores {
        s += g * g.transpose();
    }
    for l in 1..=lags.min(n.saturating_sub(1)) {
        let w = bartlett_weight(l, lags);
        let mut gamma = nalgebra::DMatrix::zeros(k, k);
        for t in l..n {
            gamma += &scores[t] * scores[t - l].transpose();
        }
        s += (&gamma + gamma.transpose()) * w;
    }
    s
}

/// CSAD_t on (1, |R_m,t|, R²_m,t).
pub fn herding_regression(disp: &DispersionSeries) -> Result<OlsFit> {
    herding_regression_with(disp, Covariance::Classical)
}

pub fn herding_regression_with(disp: &DispersionSeries, covariance: Covariance) -> Result<OlsFit> {
    if disp.len() < MIN_HERDING_DATES {
        return Err(Error::TooFewObservations {
            needed: MIN_HERDING_DATES - 1,
            got: disp.len(),
        });
    }
    fit_ols_with(&Design::herding(disp), &disp.csad, covariance)
}

/// How the exogenous column of the event regression is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExogTerm {
    /// Dummy·R²_m for announcement dummies, X² for index returns.
    #[default]
    Auto,
    /// X·R²_m for every kind.
    Interaction,
    /// X² for every kind.
    Squared,
}

/// Rows of `disp` and `exog` sharing a date, and the XR²_m column built
/// from them.
pub fn event_design(
    disp: &DispersionSeries,
    exog: &ExogSeries,
    term: ExogTerm,
) -> Result<(DispersionSeries, Design)> {
    let idx = intersect_indices(&disp.dates, &exog.dates);
    if idx.is_empty() {
        return Err(Error::EmptyIntersection {
            left: disp.csad_series().span(),
            right: format!("{} ({})", exog.series().span(), exog.label),
        });
    }
    let dates: Vec<_> = idx.iter().map(|(i, _)| disp.dates[*i]).collect();
    let sub = disp.select(&dates);
    let x: Vec<f64> = idx.iter().map(|(_, j)| exog.values[*j]).collect();
    let interaction = match term {
        ExogTerm::Auto => exog.kind == ExogKind::AnnouncementDummy,
        ExogTerm::Interaction => true,
        ExogTerm::Squared => false,
    };
    let column: Vec<f64> = if interaction {
        x.iter().zip(&sub.rm_sq).map(|(x, r2)| x * r2).collect()
    } else {
        x.iter().map(|x| x * x).collect()
    };
    if column.iter().all(|v| *v == 0.0) {
        return Err(Error::RankDeficient {
            columns: vec![EXOG.into()],
            detail: format!(
                "exogenous column for {:?} is zero on all {} aligned dates (no events in sample?)",
                exog.label,
                column.len()
            ),
        });
    }
    let design = Design::herding(&sub).with_column(EXOG, column)?;
    Ok((sub, design))
}

/// CSAD_t on (1, |R_m,t|, R²_m,t, XR²_m,t) over the dates both inputs share.
pub fn event_regression(disp: &DispersionSeries, exog: &ExogSeries, term: ExogTerm) -> Result<OlsFit> {
    let (sub, design) = event_design(disp, exog, term)?;
    if sub.len() < MIN_HERDING_DATES {
        return Err(Error::TooFewObservations {
            needed: MIN_HERDING_DATES - 1,
            got: sub.len(),
        });
    }
    fit_ols(&design, &sub.csad)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticKind {
    BreuschGodfrey,
    Arch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiagnosticResult {
    pub kind: DiagnosticKind,
    pub statistic: f64,
    pub pvalue: f64,
    pub lags: usize,
}

pub const DEFAULT_BG_LAGS: usize = 2;
pub const DEFAULT_ARCH_LAGS: usize = 1;

fn chi2_sf(stat: f64, df: usize) -> f64 {
    ChiSquared::new(df as f64)
        .expect("df > 0")
        .sf(stat)
        .clamp(0.0, 1.0)
}

/// Breusch–Godfrey LM test: residuals on the original design plus `lags`
/// zero-filled lagged residuals; statistic nobs·R².
pub fn breusch_godfrey(fit: &OlsFit, lags: usize) -> Result<DiagnosticResult> {
    let n = fit.nobs;
    let k = fit.design.ncols();
    if lags == 0 {
        return Err(Error::InvalidInput("Breusch-Godfrey needs at least one lag".into()));
    }
    if n <= k + lags {
        return Err(Error::TooFewObservations {
            needed: k + lags,
            got: n,
        });
    }
    let e = &fit.residuals;
    let null = DiagnosticResult {
        kind: DiagnosticKind::BreuschGodfrey,
        statistic: 0.0,
        pvalue: 1.0,
        lags,
    };
    if negligible(e, &fit.response) {
        return Ok(null);
    }
    let mut labels = fit.design.labels.clone();
    let mut columns = fit.design.columns.clone();
    for l in 1..=lags {
        labels.push(format!("e(t-{l})"));
        columns.push((0..n).map(|t| if t >= l { e[t - l] } else { 0.0 }).collect());
    }
    let aux = lstsq(&matrix_from_columns(&columns), e, &labels)?;
    let stat = n as f64 * r_squared(e, aux.rss);
    Ok(DiagnosticResult {
        statistic: stat,
        pvalue: chi2_sf(stat, lags),
        ..null
    })
}

/// Engle's ARCH LM test: e²_t on a constant and `lags` lagged e²; statistic
/// (n − lags)·R².
pub fn arch_test(residuals: &[f64], lags: usize) -> Result<DiagnosticResult> {
    let n = residuals.len();
    if lags == 0 {
        return Err(Error::InvalidInput("ARCH test needs at least one lag".into()));
    }
    if n <= lags + 2 {
        return Err(Error::TooFewObservations {
            needed: lags + 2,
            got: n,
        });
    }
    let null = DiagnosticResult {
        kind: DiagnosticKind::Arch,
        statistic: 0.0,
        pvalue: 1.0,
        lags,
    };
    let sq: Vec<f64> = residuals.iter().map(|e| e * e).collect();
    let y = &sq[lags..];
    let first = y[0];
    if sq.iter().all(|v| *v == first) {
        return Ok(null);
    }
    let m = y.len();
    let mut labels = vec![CONST.to_string()];
    let mut columns = vec![vec![1.0; m]];
    for l in 1..=lags {
        labels.push(format!("e2(t-{l})"));
        columns.push(sq[lags - l..n - l].to_vec());
    }
    let aux = lstsq(&matrix_from_columns(&columns), y, &labels)?;
    let stat = m as f64 * r_squared(y, aux.rss);
    Ok(DiagnosticResult {
        statistic: stat,
        pvalue: chi2_sf(stat, lags),
        ..null
    })
}

/// Residuals too small relative to the response to carry information.
fn negligible(e: &[f64], y: &[f64]) -> bool {
    let ee: f64 = e.iter().map(|v| v * v).sum();
    let yy: f64 = y.iter().map(|v| v * v).sum();
    ee == 0.0 || ee <= 1e-24 * yy
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Herding,
    NoHerding,
    AntiHerding,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Herding => "herding",
            Verdict::NoHerding => "no_herding",
            Verdict::AntiHerding => "anti_herding",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HerdingVerdict {
    pub gamma2: f64,
    pub pvalue: f64,
    pub alpha: f64,
    pub verdict: Verdict,
}

impl HerdingVerdict {
    /// Herding iff γ₂ < 0 and p < α; anti-herding iff γ₂ > 0 and p < α.
    pub fn from_estimate(gamma2: f64, pvalue: f64, alpha: f64) -> Self {
        let verdict = if pvalue < alpha && gamma2 < 0.0 {
            Verdict::Herding
        } else if pvalue < alpha && gamma2 > 0.0 {
            Verdict::AntiHerding
        } else {
            Verdict::NoHerding
        };
        Self {
            gamma2,
            pvalue,
            alpha,
            verdict,
        }
    }
}

pub fn classify_herding(fit: &OlsFit, alpha: f64) -> Result<HerdingVerdict> {
    let term = fit.term(RM_SQ)?;
    Ok(HerdingVerdict::from_estimate(term.coef, term.p, alpha))
}

/// Whether the exogenous term activates herding: γ₃ negative and significant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ActivationVerdict {
    pub gamma3: f64,
    pub pvalue: f64,
    pub alpha: f64,
    pub activates: bool,
}

impl ActivationVerdict {
    pub fn from_estimate(gamma3: f64, pvalue: f64, alpha: f64) -> Self {
        Self {
            gamma3,
            pvalue,
            alpha,
            activates: gamma3 < 0.0 && pvalue < alpha,
        }
    }

    pub fn as_str(&self) -> &'static str {
        if self.activates {
            "activates herding"
        } else {
            "no activation"
        }
    }
}

pub fn classify_activation(fit: &OlsFit, alpha: f64) -> Result<ActivationVerdict> {
    let term = fit.term(EXOG)?;
    Ok(ActivationVerdict::from_estimate(term.coef, term.p, alpha))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use chrono::NaiveDate;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normal(rng: &mut ChaCha8Rng) -> f64 {
        StandardNormal.sample(rng)
    }

    fn design(cols: Vec<Vec<f64>>) -> Design {
        let labels = (0..cols.len()).map(|j| format!("x{j}")).collect();
        Design::new(labels, cols).unwrap()
    }

    /// (XᵀX)⁻¹Xᵀy via Cholesky on the normal equations.
    fn normal_equations(cols: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
        let x = matrix_from_columns(cols);
        let xtx = x.transpose() * &x;
        let xty = x.transpose() * nalgebra::DVector::from_column_slice(y);
        xtx.cholesky().unwrap().solve(&xty).iter().copied().collect()
    }

    #[test]
    fn exact_line_recovered() {
        let x: Vec<f64> = (0..20).map(|t| t as f64 * 0.3).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 + 3.0 * v).collect();
        let fit = fit_ols(&design(vec![vec![1.0; 20], x]), &y).unwrap();
        assert_relative_eq!(fit.coef[0], 2.0, epsilon = 1e-12);
        assert_relative_eq!(fit.coef[1], 3.0, epsilon = 1e-12);
        assert_relative_eq!(fit.r2, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn duplicated_regressor_is_rank_error() {
        let x: Vec<f64> = (0..20).map(|t| (t as f64).cos()).collect();
        let err = fit_ols(&design(vec![x.clone(), x.clone()]), &x).unwrap_err();
        match err {
            Error::RankDeficient { columns, .. } => assert_eq!(columns, vec!["x0", "x1"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn too_few_rows() {
        let err = fit_ols(&design(vec![vec![1.0; 2], vec![1.0, 2.0]]), &[1.0, 2.0]).unwrap_err();
        assert!(matches!(err, Error::TooFewObservations { .. }));
    }

    #[test]
    fn large_sample_recovery_matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10_000;
        let x: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
        let y: Vec<f64> = x.iter().map(|v| 1.0 + 0.5 * v + 0.3 * normal(&mut rng)).collect();
        let cols = vec![vec![1.0; n], x];
        let fit = fit_ols(&design(cols.clone()), &y).unwrap();
        assert!((fit.coef[0] - 1.0).abs() < 4.0 * fit.se[0]);
        assert!((fit.coef[1] - 0.5).abs() < 4.0 * fit.se[1]);
        for (a, b) in fit.coef.iter().zip(normal_equations(&cols, &y)) {
            assert!(((a - b) / b).abs() < 1e-8);
        }
    }

    #[test]
    fn residuals_orthogonal_to_design() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 200;
        let cols: Vec<Vec<f64>> = vec![
            vec![1.0; n],
            (0..n).map(|_| normal(&mut rng)).collect(),
            (0..n).map(|_| rng.random::<f64>()).collect(),
        ];
        let y: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
        let fit = fit_ols(&design(cols.clone()), &y).unwrap();
        let en: f64 = fit.residuals.iter().map(|e| e * e).sum::<f64>().sqrt();
        for c in &cols {
            let dot: f64 = c.iter().zip(&fit.residuals).map(|(a, b)| a * b).sum();
            let cn: f64 = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((dot / (en * cn)).abs() < 1e-8);
        }
        assert!(fit.adj_r2 <= fit.r2 && (0.0..=1.0).contains(&fit.r2));
    }

    #[test]
    fn f_statistic_matches_r2_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 120;
        let x: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.2 * v + normal(&mut rng)).collect();
        let fit = fit_ols(&design(vec![vec![1.0; n], x]), &y).unwrap();
        // with one slope, F = t²
        assert_relative_eq!(fit.fstat.unwrap(), fit.tstat[1].powi(2), max_relative = 1e-10);
        assert_relative_eq!(fit.f_pvalue.unwrap(), fit.pvalue[1], max_relative = 1e-8);
    }

    #[test]
    fn newey_west_option_changes_only_inference() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 400;
        let x: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
        let y: Vec<f64> = x.iter().map(|v| 1.0 + v + normal(&mut rng)).collect();
        let d = design(vec![vec![1.0; n], x]);
        let a = fit_ols(&d, &y).unwrap();
        let b = fit_ols_with(&d, &y, Covariance::NeweyWest { lags: Some(0) }).unwrap();
        assert_eq!(a.coef, b.coef);
        // lag-0 HAC is White's estimator; close to classical under homoskedasticity
        assert!((a.se[1] / b.se[1] - 1.0).abs() < 0.2);
    }

    fn disp_from(rm: &[f64], csad: &[f64]) -> DispersionSeries {
        let start = NaiveDate::from_ymd_opt(2019, 1, 1).unwrap();
        let dates = (0..rm.len() as u64).map(|k| start + chrono::Days::new(k)).collect();
        DispersionSeries::from_parts(dates, vec![10; rm.len()], rm.to_vec(), csad.to_vec(), None)
            .unwrap()
    }

    #[test]
    fn herding_regression_exact_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rm: Vec<f64> = (0..100).map(|_| 0.04 * normal(&mut rng)).collect();
        let csad: Vec<f64> = rm.iter().map(|r| 0.04 + 1.5 * r.abs() - 2.0 * r * r).collect();
        let fit = herding_regression(&disp_from(&rm, &csad)).unwrap();
        assert_relative_eq!(fit.coef[0], 0.04, epsilon = 1e-10);
        assert_relative_eq!(fit.coef[1], 1.5, epsilon = 1e-9);
        assert_relative_eq!(fit.coef[2], -2.0, epsilon = 1e-8);
        assert_relative_eq!(fit.r2, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn herding_regression_noisy_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rm: Vec<f64> = (0..2000).map(|_| 0.05 * normal(&mut rng)).collect();
        let csad: Vec<f64> = rm
            .iter()
            .map(|r| 0.04 + 1.5 * r.abs() - 2.0 * r * r + 0.005 * normal(&mut rng))
            .collect();
        let fit = herding_regression(&disp_from(&rm, &csad)).unwrap();
        for (j, truth) in [0.04, 1.5, -2.0].iter().enumerate() {
            assert!((fit.coef[j] - truth).abs() < 4.0 * fit.se[j], "coef {j}");
        }
    }

    #[test]
    fn herding_regression_needs_30_dates() {
        let rm = vec![0.01; 29];
        assert!(matches!(
            herding_regression(&disp_from(&rm, &rm)),
            Err(Error::TooFewObservations { .. })
        ));
    }

    fn dummy(dates: &[NaiveDate], values: Vec<f64>) -> ExogSeries {
        ExogSeries::new(dates.to_vec(), values, ExogKind::AnnouncementDummy, "test").unwrap()
    }

    #[test]
    fn zero_dummy_is_rank_error() {
        let rm: Vec<f64> = (0..50).map(|t| 0.01 * (t as f64).sin()).collect();
        let disp = disp_from(&rm, &vec![0.02; 50]);
        let x = dummy(&disp.dates, vec![0.0; 50]);
        match event_regression(&disp, &x, ExogTerm::Auto) {
            Err(Error::RankDeficient { columns, detail }) => {
                assert_eq!(columns, vec![EXOG]);
                assert!(detail.contains("zero"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn event_regression_recovers_gamma3() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 2000;
        let rm: Vec<f64> = (0..n).map(|_| 0.05 * normal(&mut rng)).collect();
        let d: Vec<f64> = (0..n).map(|_| if rng.random::<f64>() < 0.2 { 1.0 } else { 0.0 }).collect();
        let csad: Vec<f64> = (0..n)
            .map(|t| {
                let r = rm[t];
                0.04 + 1.5 * r.abs() - 2.0 * r * r - 1.0 * d[t] * r * r + 0.003 * normal(&mut rng)
            })
            .collect();
        let disp = disp_from(&rm, &csad);
        let fit = event_regression(&disp, &dummy(&disp.dates, d), ExogTerm::Auto).unwrap();
        let g3 = fit.term(EXOG).unwrap();
        assert!((g3.coef + 1.0).abs() < 4.0 * g3.se, "{g3:?}");
    }

    #[test]
    fn index_returns_use_squared_term_by_default() {
        let rm: Vec<f64> = (0..40).map(|t| 0.01 * (t as f64 * 0.7).sin()).collect();
        let disp = disp_from(&rm, &vec![0.02; 40]);
        let x: Vec<f64> = (0..40).map(|t| 0.005 * (t as f64 * 1.3).cos()).collect();
        let exog = ExogSeries::new(disp.dates.clone(), x.clone(), ExogKind::IndexReturn, "SPX").unwrap();
        let (_, d) = event_design(&disp, &exog, ExogTerm::Auto).unwrap();
        assert_eq!(d.column(EXOG).unwrap()[3], x[3] * x[3]);
        let (_, d) = event_design(&disp, &exog, ExogTerm::Interaction).unwrap();
        assert_eq!(d.column(EXOG).unwrap()[3], x[3] * (rm[3] * rm[3]));
    }

    #[test]
    fn bg_and_arch_on_degenerate_residuals() {
        let x: Vec<f64> = (0..50).map(|t| t as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 1.0 + v).collect();
        let fit = fit_ols(&design(vec![vec![1.0; 50], x]), &y).unwrap();
        let mut zeroed = fit.clone();
        zeroed.residuals = vec![0.0; 50];
        let bg = breusch_godfrey(&zeroed, 2).unwrap();
        assert_eq!((bg.statistic, bg.pvalue), (0.0, 1.0));
        let arch = arch_test(&[0.3; 40], 1).unwrap();
        assert_eq!((arch.statistic, arch.pvalue), (0.0, 1.0));
    }

    #[test]
    fn diagnostics_reject_short_input() {
        assert!(arch_test(&[1.0, 2.0, 3.0], 1).is_err());
        let fit = fit_ols(
            &design(vec![vec![1.0; 5], vec![1.0, 2.0, 3.0, 4.0, 6.0]]),
            &[1.0, 2.0, 2.5, 4.0, 5.0],
        )
        .unwrap();
        assert!(breusch_godfrey(&fit, 3).is_err());
        assert!(breusch_godfrey(&fit, 0).is_err());
    }

    #[test]
    fn verdicts_follow_sign_and_significance() {
        // regime 1 and regime 2 cells of a published regime table
        assert_eq!(HerdingVerdict::from_estimate(-2.761, 0.060, 0.10).verdict, Verdict::Herding);
        assert_eq!(
            HerdingVerdict::from_estimate(0.786, 0.050, 0.10).verdict,
            Verdict::AntiHerding
        );
        assert_eq!(HerdingVerdict::from_estimate(-0.5, 0.50, 0.05).verdict, Verdict::NoHerding);
        // FOMC(+) cell: positive, insignificant
        assert!(!ActivationVerdict::from_estimate(0.078, 0.67, 0.10).activates);
    }

    #[test]
    fn classify_requires_rm_sq_label() {
        let x: Vec<f64> = (0..10).map(|t| t as f64).collect();
        let fit = fit_ols(&design(vec![vec![1.0; 10], x.clone()]), &x.iter().map(|v| v * 2.0 + (v * 3.1).sin()).collect::<Vec<_>>()).unwrap();
        assert!(matches!(classify_herding(&fit, 0.05), Err(Error::MissingLabel(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn response_rescaling(seed in 0u64..10_000, c in 0.01f64..100.0) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let n = 60;
                let cols = vec![
                    vec![1.0; n],
                    (0..n).map(|_| normal(&mut rng)).collect::<Vec<_>>(),
                    (0..n).map(|_| normal(&mut rng)).collect::<Vec<_>>(),
                ];
                let y: Vec<f64> = (0..n).map(|t| cols[1][t] - 0.4 * cols[2][t] + normal(&mut rng)).collect();
                let ys: Vec<f64> = y.iter().map(|v| v * c).collect();
                let d = design(cols);
                let a = fit_ols(&d, &y).unwrap();
                let b = fit_ols(&d, &ys).unwrap();
                let close = |u: f64, v: f64| (u - v).abs() <= 1e-10 * u.abs().max(v.abs()).max(1.0);
                for j in 0..3 {
                    prop_assert!(close(b.coef[j], c * a.coef[j]));
                    prop_assert!(close(b.se[j], c * a.se[j]));
                    prop_assert!(close(b.tstat[j], a.tstat[j]));
                    prop_assert!((b.pvalue[j] - a.pvalue[j]).abs() < 1e-10);
                }
                prop_assert!((b.r2 - a.r2).abs() < 1e-10);
                prop_assert!(close(b.fstat.unwrap(), a.fstat.unwrap()));
                for (eb, ea) in b.residuals.iter().zip(&a.residuals) {
                    prop_assert!(close(*eb, c * ea));
                }
            }
        }
    }
}
