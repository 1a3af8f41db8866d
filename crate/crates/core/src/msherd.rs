//! K-regime Markov-switching herd regression.
//!
//! Each regime s has its own coefficient vector β_s and error standard
//! deviation σ_s; the regime follows a first-order Markov chain with a
//! row-stochastic transition matrix (`trans[i][j]` = P(s_t = j | s_{t−1} = i)).
//! Estimation is EM: the E-step runs the Hamilton filter and Kim smoother,
//! the M-step solves one weighted least-squares problem per regime and
//! re-estimates transitions from expected transition counts.

use chrono::NaiveDate;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::dispersion::DispersionSeries;
use crate::error::{Error, Result};
use crate::linalg::{lstsq, matrix_from_columns};
use crate::regress::{Design, HerdingVerdict, CONST, RM_ABS, RM_SQ};

pub const VOL_CSAD: &str = "Vol_CSAD";
pub const VOL_RM: &str = "Vol_Rm";

const LN_2PI: f64 = 1.837_877_066_409_345_5;
/// Floor applied to predicted probabilities in the smoother's backward step.
const PROB_FLOOR: f64 = 1e-300;

pub fn lag_label(k: usize) -> String {
    format!("CSAD(t-{k})")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MsSpec {
    pub n_regimes: usize,
    pub n_lags: usize,
    pub vol_window: usize,
    pub include_vol: bool,
}

impl Default for MsSpec {
    fn default() -> Self {
        Self {
            n_regimes: 4,
            n_lags: 3,
            vol_window: 30,
            include_vol: true,
        }
    }
}

impl MsSpec {
    /// Plain (1, |R_m|, R_m²) design with `k` regimes.
    pub fn static_terms(n_regimes: usize) -> Self {
        Self {
            n_regimes,
            n_lags: 0,
            vol_window: 2,
            include_vol: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_regimes < 1 {
            return Err(Error::InvalidInput("n_regimes must be at least 1".into()));
        }
        if self.vol_window < 2 {
            return Err(Error::InvalidInput("vol_window must be at least 2".into()));
        }
        Ok(())
    }

    fn dropped_rows(&self) -> usize {
        self.n_lags + if self.include_vol { self.vol_window } else { 0 }
    }
}

/// Regression rows for the Markov-switching model, with the dates and
/// market returns of the retained rows.
#[derive(Debug, Clone)]
pub struct MsDesign {
    pub design: Design,
    pub response: Vec<f64>,
    pub dates: Vec<NaiveDate>,
    pub rm: Vec<f64>,
}

/// Sample standard deviation of the `window` values preceding each index;
/// `None` until a full window is available.
pub fn rolling_std(values: &[f64], window: usize) -> Vec<Option<f64>> {
    (0..values.len())
        .map(|t| {
            if t < window {
                return None;
            }
            let (mut mean, mut m2) = (0.0, 0.0);
            for (n, x) in values[t - window..t].iter().enumerate() {
                let delta = x - mean;
                mean += delta / (n + 1) as f64;
                m2 += delta * (x - mean);
            }
            Some((m2 / (window - 1) as f64).max(0.0).sqrt())
        })
        .collect()
}

/// Builds (1, |R_m|, R_m², Vol^CSAD, Vol^Rm, CSAD_{t−1..L}) with CSAD_t as
/// response. Vol terms are trailing standard deviations over the
/// `vol_window` periods before t; the first `vol_window + L` rows are
/// dropped (only `L` when vol terms are disabled).
pub fn build_design(disp: &DispersionSeries, spec: &MsSpec) -> Result<MsDesign> {
    spec.validate()?;
    let drop = spec.dropped_rows();
    if disp.len() <= drop + 10 {
        return Err(Error::TooFewObservations {
            needed: drop + 10,
            got: disp.len(),
        });
    }
    let rows = drop..disp.len();
    let take = |v: &[f64]| rows.clone().map(|t| v[t]).collect::<Vec<_>>();
    let mut labels = vec![CONST.to_string(), RM_ABS.to_string(), RM_SQ.to_string()];
    let mut columns = vec![vec![1.0; rows.len()], take(&disp.rm_abs), take(&disp.rm_sq)];
    if spec.include_vol {
        let vc = rolling_std(&disp.csad, spec.vol_window);
        let vr = rolling_std(&disp.rm, spec.vol_window);
        labels.push(VOL_CSAD.into());
        columns.push(rows.clone().map(|t| vc[t].expect("window filled")).collect());
        labels.push(VOL_RM.into());
        columns.push(rows.clone().map(|t| vr[t].expect("window filled")).collect());
    }
    for k in 1..=spec.n_lags {
        labels.push(lag_label(k));
        columns.push(rows.clone().map(|t| disp.csad[t - k]).collect());
    }
    Ok(MsDesign {
        design: Design::new(labels, columns)?,
        response: take(&disp.csad),
        dates: rows.clone().map(|t| disp.dates[t]).collect(),
        rm: take(&disp.rm),
    })
}

/// Regime-specific coefficients, standard deviations and the transition
/// matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsParams {
    pub beta: Vec<Vec<f64>>,
    pub sigma: Vec<f64>,
    pub trans: Vec<Vec<f64>>,
}

impl MsParams {
    pub fn n_regimes(&self) -> usize {
        self.sigma.len()
    }

    pub fn validate(&self, ncols: usize) -> Result<()> {
        let k = self.sigma.len();
        if k == 0 || self.beta.len() != k || self.trans.len() != k {
            return Err(Error::InvalidInput("regime counts disagree".into()));
        }
        if self.beta.iter().any(|b| b.len() != ncols) {
            return Err(Error::InvalidInput(format!(
                "coefficient vectors must have {ncols} entries"
            )));
        }
        if self.sigma.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidInput("regime sigmas must be positive".into()));
        }
        validate_transition(&self.trans)
    }

    /// Reorders regimes so new regime `i` is old regime `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            beta: perm.iter().map(|&p| self.beta[p].clone()).collect(),
            sigma: perm.iter().map(|&p| self.sigma[p]).collect(),
            trans: perm
                .iter()
                .map(|&p| perm.iter().map(|&q| self.trans[p][q]).collect())
                .collect(),
        }
    }
}

pub fn validate_transition(trans: &[Vec<f64>]) -> Result<()> {
    let k = trans.len();
    for (row, p) in trans.iter().enumerate() {
        if p.len() != k {
            return Err(Error::InvalidTransition {
                row,
                reason: format!("has {} entries, expected {k}", p.len()),
            });
        }
        if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidTransition {
                row,
                reason: "has an entry outside [0, 1]".into(),
            });
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidTransition {
                row,
                reason: format!("sums to {sum}, not 1"),
            });
        }
    }
    Ok(())
}

/// Stationary distribution π of a row-stochastic matrix (πP = π).
pub fn ergodic_distribution(trans: &[Vec<f64>]) -> Vec<f64> {
    let k = trans.len();
    let mut a = DMatrix::from_fn(k, k, |i, j| trans[j][i] - if i == j { 1.0 } else { 0.0 });
    let mut b = nalgebra::DVector::zeros(k);
    for j in 0..k {
        a[(k - 1, j)] = 1.0;
    }
    b[k - 1] = 1.0;
    match a.lu().solve(&b) {
        Some(pi) if pi.iter().all(|v| v.is_finite() && *v >= -1e-12) => {
            let pi: Vec<f64> = pi.iter().map(|v| v.max(0.0)).collect();
            let s: f64 = pi.iter().sum();
            pi.into_iter().map(|v| v / s).collect()
        }
        // reducible chain: fall back to uniform
        _ => vec![1.0 / k as f64; k],
    }
}

#[derive(Debug, Clone)]
pub struct FilterOutput {
    /// P(s_t | y_1..y_t)
    pub filtered: Vec<Vec<f64>>,
    /// P(s_t | y_1..y_{t−1})
    pub predicted: Vec<Vec<f64>>,
    pub loglik: f64,
}

/// Row-major T×K regime means x_t·β_s.
fn regime_means(beta: &[Vec<f64>], design: &Design) -> Vec<f64> {
    let k = beta.len();
    let n = design.nobs();
    let mut mu = vec![0.0; n * k];
    for (j, col) in design.columns().iter().enumerate() {
        for (s, b) in beta.iter().enumerate() {
            let bj = b[j];
            for t in 0..n {
                mu[t * k + s] += col[t] * bj;
            }
        }
    }
    mu
}

/// Flat forward pass: fills row-major filtered (and optionally predicted)
/// probabilities and returns the log-likelihood.
fn filter_flat(
    mu: &[f64],
    sigma: &[f64],
    trans: &[Vec<f64>],
    init: &[f64],
    response: &[f64],
    filtered: &mut Vec<f64>,
    mut predicted: Option<&mut Vec<f64>>,
) -> Result<f64> {
    let k = sigma.len();
    let n = response.len();
    let log_norm: Vec<f64> = sigma.iter().map(|s| -0.5 * LN_2PI - s.ln()).collect();
    let inv_sigma: Vec<f64> = sigma.iter().map(|s| 1.0 / s).collect();
    filtered.clear();
    filtered.resize(n * k, 0.0);
    if let Some(p) = predicted.as_deref_mut() {
        p.clear();
        p.resize(n * k, 0.0);
    }
    let mut pred = init.to_vec();
    let mut logd = vec![0.0; k];
    let mut loglik = 0.0;
    for t in 0..n {
        let mut peak = f64::NEG_INFINITY;
        for s in 0..k {
            let z = (response[t] - mu[t * k + s]) * inv_sigma[s];
            logd[s] = log_norm[s] - 0.5 * z * z;
            peak = peak.max(logd[s]);
        }
        let row = &mut filtered[t * k..(t + 1) * k];
        let mut total = 0.0;
        for s in 0..k {
            row[s] = pred[s] * (logd[s] - peak).exp();
            total += row[s];
        }
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::ZeroLikelihood { index: t, date: None });
        }
        loglik += peak + total.ln();
        for v in row.iter_mut() {
            *v /= total;
        }
        if let Some(p) = predicted.as_deref_mut() {
            p[t * k..(t + 1) * k].copy_from_slice(&pred);
        }
        for j in 0..k {
            pred[j] = (0..k).map(|i| row[i] * trans[i][j]).sum();
        }
    }
    Ok(loglik)
}

fn to_rows(flat: &[f64], k: usize) -> Vec<Vec<f64>> {
    flat.chunks(k).map(<[f64]>::to_vec).collect()
}

/// Forward recursion over Gaussian regime densities, normalized each step.
pub fn hamilton_filter(
    params: &MsParams,
    init: &[f64],
    design: &Design,
    response: &[f64],
) -> Result<FilterOutput> {
    params.validate(design.ncols())?;
    let k = params.n_regimes();
    if init.len() != k || response.len() != design.nobs() {
        return Err(Error::InvalidInput("filter inputs have inconsistent sizes".into()));
    }
    let mu = regime_means(&params.beta, design);
    let (mut filtered, mut predicted) = (Vec::new(), Vec::new());
    let loglik = filter_flat(
        &mu,
        &params.sigma,
        &params.trans,
        init,
        response,
        &mut filtered,
        Some(&mut predicted),
    )?;
    Ok(FilterOutput {
        filtered: to_rows(&filtered, k),
        predicted: to_rows(&predicted, k),
        loglik,
    })
}

/// Flat backward pass. Fills row-major smoothed probabilities and the
/// summed expected transition counts Σ_t P(s_{t−1}=i, s_t=j | all data)
/// (row-major K×K). Returns whether the probability floor was hit.
fn smooth_flat(
    filtered: &[f64],
    trans: &[Vec<f64>],
    smoothed: &mut Vec<f64>,
    counts: &mut [f64],
) -> bool {
    let k = trans.len();
    let n = filtered.len() / k;
    smoothed.clear();
    smoothed.resize(n * k, 0.0);
    counts.iter_mut().for_each(|c| *c = 0.0);
    if n == 0 {
        return false;
    }
    smoothed[(n - 1) * k..].copy_from_slice(&filtered[(n - 1) * k..]);
    let mut floored = false;
    let mut ratio = vec![0.0; k];
    let mut row = vec![0.0; k];
    for t in (0..n - 1).rev() {
        let f = &filtered[t * k..(t + 1) * k];
        for j in 0..k {
            // P(s_{t+1} = j | y_1..y_t)
            let p: f64 = (0..k).map(|i| f[i] * trans[i][j]).sum();
            let next = smoothed[(t + 1) * k + j];
            ratio[j] = if p < PROB_FLOOR {
                if next > 0.0 {
                    floored = true;
                }
                next / PROB_FLOOR
            } else {
                next / p
            };
        }
        for i in 0..k {
            row[i] = 0.0;
            for j in 0..k {
                let joint = f[i] * trans[i][j] * ratio[j];
                row[i] += joint;
                counts[i * k + j] += joint;
            }
        }
        let total: f64 = row.iter().sum();
        let out = &mut smoothed[t * k..(t + 1) * k];
        if total > 0.0 {
            for i in 0..k {
                out[i] = row[i] / total;
            }
        } else {
            out.copy_from_slice(f);
        }
    }
    floored
}

/// Kim smoother: P(s_t | y_1..y_T) from filtered probabilities.
pub fn kim_smoother(filtered: &[Vec<f64>], trans: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    validate_transition(trans)?;
    if let Some(t) = filtered
        .iter()
        .position(|row| row.len() != trans.len() || (row.iter().sum::<f64>() - 1.0).abs() > 1e-8)
    {
        return Err(Error::InvalidInput(format!(
            "filtered row {t} is not a probability vector over {} regimes",
            trans.len()
        )));
    }
    let k = trans.len();
    let flat: Vec<f64> = filtered.iter().flatten().copied().collect();
    let mut smoothed = Vec::new();
    let mut counts = vec![0.0; k * k];
    if smooth_flat(&flat, trans, &mut smoothed, &mut counts) {
        log::warn!("smoother floored a predicted probability at {PROB_FLOOR:e}");
    }
    Ok(to_rows(&smoothed, k))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialDistribution {
    #[default]
    Uniform,
    /// Stationary distribution of the current transition matrix. The EM
    /// M-step ignores its dependence on the transitions, so the likelihood
    /// is no longer guaranteed monotone.
    Ergodic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmOptions {
    pub restarts: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub init: InitialDistribution,
    pub seed: u64,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            restarts: 16,
            max_iter: 1000,
            tol: 1e-8,
            init: InitialDistribution::Uniform,
            seed: 0,
        }
    }
}

/// Per-regime coefficient table from the final weighted least-squares step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegimeCoefs {
    pub coef: Vec<f64>,
    pub se: Vec<f64>,
    pub tstat: Vec<f64>,
    pub pvalue: Vec<f64>,
    /// Σ_t P(s_t = s | all data)
    pub occupancy: f64,
    /// Probability-weighted R².
    pub r2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RestartSummary {
    pub index: usize,
    pub loglik: Option<f64>,
    pub n_iter: usize,
    pub converged: bool,
    pub degenerate: Option<String>,
    pub loglik_trace: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MsFit {
    pub labels: Vec<String>,
    pub params: MsParams,
    pub init: Vec<f64>,
    pub regimes: Vec<RegimeCoefs>,
    pub filtered: Vec<Vec<f64>>,
    pub smoothed: Vec<Vec<f64>>,
    pub loglik: f64,
    pub loglik_trace: Vec<f64>,
    pub converged: bool,
    pub n_iter: usize,
    pub best_restart: usize,
    pub restarts: Vec<RestartSummary>,
}

impl MsFit {
    pub fn n_regimes(&self) -> usize {
        self.params.n_regimes()
    }

    /// Most probable smoothed regime per row.
    pub fn most_likely(&self) -> Vec<usize> {
        self.smoothed.iter().map(|row| argmax(row)).collect()
    }

    /// Reorders regimes so new regime `i` is old regime `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let cols = |rows: &[Vec<f64>]| -> Vec<Vec<f64>> {
            rows.iter()
                .map(|r| perm.iter().map(|&p| r[p]).collect())
                .collect()
        };
        Self {
            labels: self.labels.clone(),
            params: self.params.permuted(perm),
            init: perm.iter().map(|&p| self.init[p]).collect(),
            regimes: perm.iter().map(|&p| self.regimes[p].clone()).collect(),
            filtered: cols(&self.filtered),
            smoothed: cols(&self.smoothed),
            loglik: self.loglik,
            loglik_trace: self.loglik_trace.clone(),
            converged: self.converged,
            n_iter: self.n_iter,
            best_restart: self.best_restart,
            restarts: self.restarts.clone(),
        }
    }

    pub fn term_index(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::MissingLabel(label.to_string()))
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

struct RunState {
    params: MsParams,
    init: Vec<f64>,
    filtered: Vec<Vec<f64>>,
    smoothed: Vec<Vec<f64>>,
    loglik: f64,
    trace: Vec<f64>,
    converged: bool,
    n_iter: usize,
}

/// Weighted least squares for one regime: (β, σ², (XᵀWX)⁻¹).
fn weighted_fit(
    design: &Design,
    response: &[f64],
    weights: &[f64],
) -> Result<(Vec<f64>, f64, DMatrix<f64>)> {
    let sw: Vec<f64> = weights.iter().map(|w| w.max(0.0).sqrt()).collect();
    let columns: Vec<Vec<f64>> = design
        .columns()
        .iter()
        .map(|c| c.iter().zip(&sw).map(|(x, w)| x * w).collect())
        .collect();
    let y: Vec<f64> = response.iter().zip(&sw).map(|(y, w)| y * w).collect();
    let ls = lstsq(&matrix_from_columns(&columns), &y, design.labels())?;
    let total: f64 = weights.iter().sum();
    Ok((ls.coef, ls.rss / total, ls.xtx_inv))
}

/// Weighted normal equations solved by Cholesky after equilibration;
/// falls back to the least-squares path (which names collinear columns) whenever the
/// factorization is doubtful. Returns (β, weighted RSS / Σw).
fn weighted_fit_fast(design: &Design, response: &[f64], weights: &[f64]) -> Result<(Vec<f64>, f64)> {
    let cols = design.columns();
    let k = cols.len();
    let mut a = DMatrix::zeros(k, k);
    let mut b = nalgebra::DVector::zeros(k);
    for i in 0..k {
        for j in 0..=i {
            let v: f64 = (0..response.len()).map(|t| weights[t] * cols[i][t] * cols[j][t]).sum();
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
        b[i] = (0..response.len()).map(|t| weights[t] * cols[i][t] * response[t]).sum();
    }
    let d: Vec<f64> = (0..k).map(|i| a[(i, i)].sqrt()).collect();
    let fallback = || weighted_fit(design, response, weights).map(|(beta, var, _)| (beta, var));
    if d.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return fallback();
    }
    for i in 0..k {
        for j in 0..k {
            a[(i, j)] /= d[i] * d[j];
        }
        b[i] /= d[i];
    }
    let Some(chol) = a.clone().cholesky() else {
        return fallback();
    };
    let l_diag: Vec<f64> = (0..k).map(|i| chol.l()[(i, i)]).collect();
    let (lo, hi) = l_diag
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    // diagonal of L bounds the conditioning; near-singular systems take the least-squares path
    if lo < 1e-6 * hi {
        return fallback();
    }
    let z = chol.solve(&b);
    let beta: Vec<f64> = (0..k).map(|i| z[i] / d[i]).collect();
    let mut rss = 0.0;
    for t in 0..response.len() {
        let fitted: f64 = cols.iter().zip(&beta).map(|(c, b)| c[t] * b).sum();
        rss += weights[t] * (response[t] - fitted).powi(2);
    }
    let total: f64 = weights.iter().sum();
    Ok((beta, rss / total))
}

/// `smoothed` is row-major T×K, `counts` row-major K×K.
fn m_step(
    design: &Design,
    response: &[f64],
    smoothed: &[f64],
    counts: Option<&[f64]>,
    var_floor: f64,
    previous_trans: &[Vec<f64>],
) -> Result<MsParams> {
    let k = previous_trans.len();
    let mut beta = Vec::with_capacity(k);
    let mut sigma = Vec::with_capacity(k);
    for s in 0..k {
        let w: Vec<f64> = smoothed.iter().skip(s).step_by(k).copied().collect();
        let (b, var) = weighted_fit_fast(design, response, &w)?;
        beta.push(b);
        sigma.push(var.max(var_floor).sqrt());
    }
    let trans = match counts {
        Some(counts) => counts
            .chunks(k)
            .zip(previous_trans)
            .map(|(row, prev)| {
                let total: f64 = row.iter().sum();
                if total > 0.0 {
                    row.iter().map(|c| c / total).collect()
                } else {
                    prev.clone()
                }
            })
            .collect(),
        None => previous_trans.to_vec(),
    };
    Ok(MsParams { beta, sigma, trans })
}

fn initial_distribution(kind: InitialDistribution, trans: &[Vec<f64>]) -> Vec<f64> {
    match kind {
        InitialDistribution::Uniform => vec![1.0 / trans.len() as f64; trans.len()],
        InitialDistribution::Ergodic => ergodic_distribution(trans),
    }
}

/// Random persistent regime path turned into row-major 0/1 weights.
fn random_assignment(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * k];
    let mut s = rng.random_range(0..k);
    for t in 0..n {
        if rng.random::<f64>() < 0.05 {
            s = rng.random_range(0..k);
        }
        out[t * k + s] = 1.0;
    }
    out
}

fn run_restart(
    index: usize,
    k: usize,
    design: &Design,
    response: &[f64],
    opts: &EmOptions,
    var_floor: f64,
) -> std::result::Result<RunState, (String, Vec<f64>, usize)> {
    let n = response.len();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(index as u64);

    let stay = if k > 1 { 0.9 } else { 1.0 };
    let trans0: Vec<Vec<f64>> = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| if i == j { stay } else { (1.0 - stay) / (k - 1) as f64 })
                .collect()
        })
        .collect();
    let weights = random_assignment(&mut rng, n, k);
    let mut params = m_step(design, response, &weights, None, var_floor, &trans0)
        .map_err(|e| (format!("initialization failed: {e}"), Vec::new(), 0))?;
    // spread initial scales so restarts explore different variance orderings
    for s in params.sigma.iter_mut() {
        *s *= (rng.random::<f64>() * 2.0 - 1.0).exp();
    }

    let mut trace = Vec::new();
    let mut n_iter = 0;
    let (mut filtered, mut smoothed) = (Vec::new(), Vec::new());
    let mut counts = vec![0.0; k * k];
    loop {
        let init = initial_distribution(opts.init, &params.trans);
        let mu = regime_means(&params.beta, design);
        let loglik = filter_flat(&mu, &params.sigma, &params.trans, &init, response, &mut filtered, None)
            .map_err(|e| (e.to_string(), trace.clone(), n_iter))?;
        if smooth_flat(&filtered, &params.trans, &mut smoothed, &mut counts) {
            log::warn!("restart {index}: smoother floored a predicted probability at {PROB_FLOOR:e}");
        }
        let mut occupancy = vec![0.0; k];
        for row in smoothed.chunks(k) {
            for (o, p) in occupancy.iter_mut().zip(row) {
                *o += p;
            }
        }
        let min_occ = occupancy.iter().copied().fold(f64::INFINITY, f64::min);
        if min_occ < 1e-6 * n as f64 {
            return Err((
                format!("regime occupancy {min_occ:.3e} below 1e-6·T"),
                trace,
                n_iter,
            ));
        }
        trace.push(loglik);
        let improvement = match trace.len() {
            1 => f64::INFINITY,
            m => trace[m - 1] - trace[m - 2],
        };
        let converged = improvement < opts.tol;
        if converged || n_iter >= opts.max_iter {
            return Ok(RunState {
                params,
                init,
                filtered: to_rows(&filtered, k),
                smoothed: to_rows(&smoothed, k),
                loglik,
                trace,
                converged,
                n_iter,
            });
        }
        params = m_step(design, response, &smoothed, Some(&counts), var_floor, &params.trans)
            .map_err(|e| (format!("M-step failed: {e}"), trace.clone(), n_iter))?;
        n_iter += 1;
    }
}

fn regime_table(
    design: &Design,
    response: &[f64],
    smoothed: &[Vec<f64>],
    params: &MsParams,
    s: usize,
) -> Result<RegimeCoefs> {
    let w: Vec<f64> = smoothed.iter().map(|row| row[s]).collect();
    let (_, _, xtwx_inv) = weighted_fit(design, response, &w)?;
    let occupancy: f64 = w.iter().sum();
    let ncols = design.ncols();
    let beta = &params.beta[s];
    let var = params.sigma[s] * params.sigma[s];
    let se: Vec<f64> = (0..ncols).map(|j| (var * xtwx_inv[(j, j)]).max(0.0).sqrt()).collect();
    let df = (occupancy - ncols as f64).max(1.0);
    let tdist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    let tstat: Vec<f64> = beta.iter().zip(&se).map(|(b, s)| b / s).collect();
    let pvalue = tstat
        .iter()
        .map(|t| if t.is_finite() { (2.0 * tdist.sf(t.abs())).min(1.0) } else { 0.0 })
        .collect();

    let ybar = w.iter().zip(response).map(|(w, y)| w * y).sum::<f64>() / occupancy;
    let mut sse = 0.0;
    let mut sst = 0.0;
    for t in 0..response.len() {
        let fitted: f64 = design.columns().iter().zip(beta).map(|(c, b)| c[t] * b).sum();
        sse += w[t] * (response[t] - fitted).powi(2);
        sst += w[t] * (response[t] - ybar).powi(2);
    }
    let r2 = if sst > 0.0 { (1.0 - sse / sst).clamp(0.0, 1.0) } else { 0.0 };
    Ok(RegimeCoefs {
        coef: beta.clone(),
        se,
        tstat,
        pvalue,
        occupancy,
        r2,
    })
}

/// EM over `opts.restarts` random initializations; returns the restart with
/// the highest log-likelihood (ties go to the lower restart index).
pub fn em_fit(spec: &MsSpec, design: &Design, response: &[f64], opts: &EmOptions) -> Result<MsFit> {
    spec.validate()?;
    if opts.restarts == 0 {
        return Err(Error::InvalidInput("restarts must be at least 1".into()));
    }
    let n = response.len();
    if n != design.nobs() {
        return Err(Error::InvalidInput("response and design lengths differ".into()));
    }
    if n <= design.ncols() * spec.n_regimes {
        return Err(Error::TooFewObservations {
            needed: design.ncols() * spec.n_regimes,
            got: n,
        });
    }
    let k = spec.n_regimes;
    let mean = response.iter().sum::<f64>() / n as f64;
    let var_y = response.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n as f64;
    let var_floor = (1e-10 * var_y).max(f64::MIN_POSITIVE);

    let runs: Vec<_> = (0..opts.restarts)
        .into_par_iter()
        .map(|r| run_restart(r, k, design, response, opts, var_floor))
        .collect();

    let mut summaries = Vec::with_capacity(runs.len());
    let mut best: Option<(usize, &RunState)> = None;
    for (index, run) in runs.iter().enumerate() {
        match run {
            Ok(state) => {
                summaries.push(RestartSummary {
                    index,
                    loglik: Some(state.loglik),
                    n_iter: state.n_iter,
                    converged: state.converged,
                    degenerate: None,
                    loglik_trace: state.trace.clone(),
                });
                if best.is_none_or(|(_, b)| state.loglik > b.loglik) {
                    best = Some((index, state));
                }
            }
            Err((reason, trace, n_iter)) => {
                log::debug!("restart {index} discarded: {reason}");
                summaries.push(RestartSummary {
                    index,
                    loglik: None,
                    n_iter: *n_iter,
                    converged: false,
                    degenerate: Some(reason.clone()),
                    loglik_trace: trace.clone(),
                });
            }
        }
    }
    let (best_restart, state) = best.ok_or(Error::AllRestartsDegenerate(opts.restarts))?;
    if !state.converged {
        log::warn!("best EM restart stopped at max_iter={} without converging", opts.max_iter);
    }
    let regimes = (0..k)
        .map(|s| regime_table(design, response, &state.smoothed, &state.params, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(MsFit {
        labels: design.labels().to_vec(),
        params: state.params.clone(),
        init: state.init.clone(),
        regimes,
        filtered: state.filtered.clone(),
        smoothed: state.smoothed.clone(),
        loglik: state.loglik,
        loglik_trace: state.trace.clone(),
        converged: state.converged,
        n_iter: state.n_iter,
        best_restart,
        restarts: summaries,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeLabel {
    HighestVolatility,
    LowVolatility,
    BestIncomeHighVol,
    HighestLossHighVol,
    /// Rank by descending σ (1 = most volatile) when K ≠ 4.
    Ranked(usize),
}

impl RegimeLabel {
    pub fn name(&self) -> String {
        match self {
            RegimeLabel::HighestVolatility => "highest_volatility".into(),
            RegimeLabel::LowVolatility => "low_volatility".into(),
            RegimeLabel::BestIncomeHighVol => "best_income_high_vol".into(),
            RegimeLabel::HighestLossHighVol => "highest_loss_high_vol".into(),
            RegimeLabel::Ranked(r) => format!("regime_{r}"),
        }
    }

    /// Position in the conventional regime numbering (1-based).
    pub fn ordinal(&self) -> usize {
        match self {
            RegimeLabel::HighestVolatility => 1,
            RegimeLabel::LowVolatility => 2,
            RegimeLabel::BestIncomeHighVol => 3,
            RegimeLabel::HighestLossHighVol => 4,
            RegimeLabel::Ranked(r) => *r,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegimeLabeling {
    pub labels: Vec<RegimeLabel>,
    /// Smoothed-probability-weighted mean market return per regime.
    pub mean_rm: Vec<f64>,
    pub tie_broken: bool,
}

impl RegimeLabeling {
    /// Permutation listing regimes in label order (`perm[i]` is the regime
    /// carrying ordinal i + 1).
    pub fn order(&self) -> Vec<usize> {
        let mut perm: Vec<usize> = (0..self.labels.len()).collect();
        perm.sort_by_key(|&s| self.labels[s].ordinal());
        perm
    }
}

/// Picks the index with the extreme value among `candidates`; ties go to
/// the lower index. Reports whether a tie occurred.
fn pick(candidates: &[usize], value: impl Fn(usize) -> f64, highest: bool) -> (usize, bool) {
    let mut best = candidates[0];
    let mut tie = false;
    for &c in &candidates[1..] {
        let (v, b) = (value(c), value(best));
        if v == b {
            tie = true;
        } else if (v > b) == highest {
            best = c;
            tie = false;
        }
    }
    (best, tie)
}

/// Maps regimes to volatility/return semantics: lowest σ is low volatility;
/// of the rest, highest σ is highest volatility; of the remaining two, the
/// higher weighted mean R_m is best income, the lower highest loss.
pub fn label_regimes(fit: &MsFit, rm: &[f64]) -> Result<RegimeLabeling> {
    let k = fit.n_regimes();
    if rm.len() != fit.smoothed.len() {
        return Err(Error::InvalidInput(format!(
            "{} market returns for {} fitted rows",
            rm.len(),
            fit.smoothed.len()
        )));
    }
    let mean_rm: Vec<f64> = (0..k)
        .map(|s| {
            let (num, den) = fit
                .smoothed
                .iter()
                .zip(rm)
                .fold((0.0, 0.0), |(a, b), (p, r)| (a + p[s] * r, b + p[s]));
            if den > 0.0 {
                num / den
            } else {
                0.0
            }
        })
        .collect();
    let sigma = &fit.params.sigma;
    let mut labels = vec![RegimeLabel::Ranked(0); k];
    let tie_broken = if k == 4 {
        let all: Vec<usize> = (0..4).collect();
        let (low, t1) = pick(&all, |s| sigma[s], false);
        let rest: Vec<usize> = all.into_iter().filter(|&s| s != low).collect();
        let (high, t2) = pick(&rest, |s| sigma[s], true);
        let pair: Vec<usize> = rest.into_iter().filter(|&s| s != high).collect();
        let (gain, t3) = pick(&pair, |s| mean_rm[s], true);
        let loss = if pair[0] == gain { pair[1] } else { pair[0] };
        labels[low] = RegimeLabel::LowVolatility;
        labels[high] = RegimeLabel::HighestVolatility;
        labels[gain] = RegimeLabel::BestIncomeHighVol;
        labels[loss] = RegimeLabel::HighestLossHighVol;
        t1 || t2 || t3
    } else {
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]).then(a.cmp(&b)));
        for (rank, &s) in order.iter().enumerate() {
            labels[s] = RegimeLabel::Ranked(rank + 1);
        }
        order.windows(2).any(|w| sigma[w[0]] == sigma[w[1]])
    };
    if tie_broken {
        log::warn!("regime labeling hit a tie; broken by regime index");
    }
    Ok(RegimeLabeling {
        labels,
        mean_rm,
        tie_broken,
    })
}

/// Herding verdict per regime from the R_m² coefficient.
pub fn per_regime_herding(fit: &MsFit, alpha: f64) -> Result<Vec<HerdingVerdict>> {
    let j = fit.term_index(RM_SQ)?;
    Ok(fit
        .regimes
        .iter()
        .map(|r| HerdingVerdict::from_estimate(r.coef[j], r.pvalue[j], alpha))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regress::{fit_ols, Verdict};
    use approx::assert_relative_eq;
    use rand_distr::{Distribution, StandardNormal};

    fn simple_design(n: usize, seed: u64) -> (Design, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|v| {
                let e: f64 = StandardNormal.sample(&mut rng);
                0.5 + 0.3 * v + 0.2 * e
            })
            .collect();
        (Design::new(vec!["const".into(), "x".into()], vec![vec![1.0; n], x]).unwrap(), y)
    }

    #[test]
    fn single_regime_filter_is_gaussian_regression() {
        let (d, y) = simple_design(40, 1);
        let params = MsParams {
            beta: vec![vec![0.4, 0.25]],
            sigma: vec![0.3],
            trans: vec![vec![1.0]],
        };
        let out = hamilton_filter(&params, &[1.0], &d, &y).unwrap();
        let direct: f64 = (0..40)
            .map(|t| {
                let e = y[t] - 0.4 - 0.25 * d.columns()[1][t];
                -0.5 * (2.0 * std::f64::consts::PI).ln() - 0.3f64.ln() - 0.5 * (e / 0.3).powi(2)
            })
            .sum();
        assert_relative_eq!(out.loglik, direct, max_relative = 1e-12);
        assert!(out.filtered.iter().all(|r| r == &vec![1.0]));
        let sm = kim_smoother(&out.filtered, &params.trans).unwrap();
        assert!(sm.iter().all(|r| r == &vec![1.0]));
    }

    #[test]
    fn indistinguishable_regimes() {
        let (d, y) = simple_design(30, 2);
        let mk = |p: f64| MsParams {
            beta: vec![vec![0.5, 0.3]; 2],
            sigma: vec![0.2; 2],
            trans: vec![vec![p, 1.0 - p], vec![0.3, 0.7]],
        };
        let init = [0.6, 0.4];
        let a = hamilton_filter(&mk(0.9), &init, &d, &y).unwrap();
        let b = hamilton_filter(&mk(0.2), &init, &d, &y).unwrap();
        assert_relative_eq!(a.loglik, b.loglik, max_relative = 1e-13);
        for (f, p) in a.filtered.iter().zip(&a.predicted) {
            for s in 0..2 {
                assert_relative_eq!(f[s], p[s], epsilon = 1e-14);
            }
        }
        // smoothing adds nothing either: smoothed = predicted marginals
        let params = mk(0.9);
        let sm = kim_smoother(&a.filtered, &params.trans).unwrap();
        for (s_row, p_row) in sm.iter().zip(&a.predicted) {
            for s in 0..2 {
                assert_relative_eq!(s_row[s], p_row[s], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn ergodic_distribution_is_stationary() {
        let p = vec![vec![0.9, 0.1], vec![0.3, 0.7]];
        let pi = ergodic_distribution(&p);
        assert_relative_eq!(pi[0], 0.75, epsilon = 1e-12);
        assert_relative_eq!(pi[1], 0.25, epsilon = 1e-12);
    }

    #[test]
    fn invalid_transition_names_row() {
        match validate_transition(&[vec![0.5, 0.5], vec![0.7, 0.7]]) {
            Err(Error::InvalidTransition { row: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zero_likelihood_reports_index() {
        let (d, y) = simple_design(10, 3);
        let params = MsParams {
            beta: vec![vec![0.0, 0.0], vec![100.0, 0.0]],
            sigma: vec![1e-3, 1.0],
            trans: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        };
        // all mass on a regime whose density underflows relative to nothing else
        let err = hamilton_filter(&params, &[1.0, 0.0], &d, &y.iter().map(|v| v + 1e3).collect::<Vec<_>>());
        assert!(matches!(err, Err(Error::ZeroLikelihood { index: 0, .. })));
    }

    #[test]
    fn single_regime_em_is_ols() {
        let (d, y) = simple_design(200, 4);
        let fit = em_fit(&MsSpec::static_terms(1), &d, &y, &EmOptions { restarts: 2, ..Default::default() }).unwrap();
        let ols = fit_ols(&d, &y).unwrap();
        for j in 0..2 {
            assert_relative_eq!(fit.params.beta[0][j], ols.coef[j], epsilon = 1e-8);
        }
        let ml_sigma = (ols.residuals.iter().map(|e| e * e).sum::<f64>() / 200.0).sqrt();
        assert_relative_eq!(fit.params.sigma[0], ml_sigma, max_relative = 1e-8);
        assert!(fit.converged);
    }

    #[test]
    fn rolling_std_matches_two_pass() {
        let v = [0.3, 0.1, 0.4, 0.15, 0.9, 0.26, 0.5, 0.35, 0.89, 0.79];
        let got = rolling_std(&v, 3);
        for t in 0..v.len() {
            if t < 3 {
                assert!(got[t].is_none());
                continue;
            }
            let w = &v[t - 3..t];
            let m = w.iter().sum::<f64>() / 3.0;
            let sd = (w.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 2.0).sqrt();
            assert!((got[t].unwrap() - sd).abs() < 1e-12);
        }
    }

    fn disp(csad: Vec<f64>, rm: Vec<f64>) -> DispersionSeries {
        let start = NaiveDate::from_ymd_opt(2018, 1, 1).unwrap();
        let dates = (0..csad.len() as u64).map(|k| start + chrono::Days::new(k)).collect();
        DispersionSeries::from_parts(dates, vec![5; csad.len()], rm, csad, None).unwrap()
    }

    #[test]
    fn constant_csad_gives_zero_vol_column() {
        let rm: Vec<f64> = (0..80).map(|t| 0.01 * (t as f64).sin()).collect();
        let md = build_design(&disp(vec![0.02; 80], rm), &MsSpec::default()).unwrap();
        assert!(md.design.column(VOL_CSAD).unwrap().iter().all(|v| *v == 0.0));
        assert_eq!(md.response.len(), 80 - 33);
        assert_eq!(
            md.design.labels(),
            ["const", "|Rm|", "Rm^2", "Vol_CSAD", "Vol_Rm", "CSAD(t-1)", "CSAD(t-2)", "CSAD(t-3)"]
        );
    }

    #[test]
    fn static_spec_nests_plain_design() {
        let rm: Vec<f64> = (0..50).map(|t| 0.02 * (t as f64 * 0.3).cos()).collect();
        let csad: Vec<f64> = rm.iter().map(|r| 0.01 + r.abs()).collect();
        let dsp = disp(csad.clone(), rm);
        let md = build_design(&dsp, &MsSpec::static_terms(2)).unwrap();
        assert_eq!(md.design, Design::herding(&dsp));
        assert_eq!(md.response, csad);
    }

    #[test]
    fn lag_columns_shift_csad() {
        let csad: Vec<f64> = (0..60).map(|t| 0.01 + 0.001 * t as f64).collect();
        let spec = MsSpec { include_vol: false, n_lags: 2, ..Default::default() };
        let md = build_design(&disp(csad.clone(), vec![0.0; 60]), &spec).unwrap();
        assert_eq!(md.response[0], csad[2]);
        assert_eq!(md.design.column("CSAD(t-1)").unwrap()[0], csad[1]);
        assert_eq!(md.design.column("CSAD(t-2)").unwrap()[0], csad[0]);
        assert!(build_design(&disp(vec![0.01; 40], vec![0.0; 40]), &MsSpec::default()).is_err());
    }

    fn fake_fit(sigma: Vec<f64>, smoothed: Vec<Vec<f64>>) -> MsFit {
        let k = sigma.len();
        MsFit {
            labels: vec![RM_SQ.into()],
            params: MsParams {
                beta: vec![vec![0.0]; k],
                sigma,
                trans: vec![vec![1.0 / k as f64; k]; k],
            },
            init: vec![1.0 / k as f64; k],
            regimes: vec![
                RegimeCoefs { coef: vec![0.0], se: vec![1.0], tstat: vec![0.0], pvalue: vec![1.0], occupancy: 1.0, r2: 0.0 };
                k
            ],
            filtered: smoothed.clone(),
            smoothed,
            loglik: 0.0,
            loglik_trace: vec![],
            converged: true,
            n_iter: 0,
            best_restart: 0,
            restarts: vec![],
        }
    }

    fn one_hot(k: usize, s: usize) -> Vec<f64> {
        (0..k).map(|i| if i == s { 1.0 } else { 0.0 }).collect()
    }

    #[test]
    fn labels_constructed_separation() {
        // regime s owns date s; mean R_m per regime is that date's return
        let fit = fake_fit(vec![0.03, 0.001, 0.02, 0.02], (0..4).map(|s| one_hot(4, s)).collect());
        let l = label_regimes(&fit, &[0.0, 0.0, 0.01, -0.01]).unwrap();
        assert_eq!(
            l.labels,
            vec![
                RegimeLabel::HighestVolatility,
                RegimeLabel::LowVolatility,
                RegimeLabel::BestIncomeHighVol,
                RegimeLabel::HighestLossHighVol
            ]
        );
        assert!(!l.tie_broken);
        assert_eq!(l.order(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn labels_tie_broken_by_index() {
        let fit = fake_fit(vec![0.01; 4], (0..4).map(|s| one_hot(4, s)).collect());
        let l = label_regimes(&fit, &[0.0; 4]).unwrap();
        assert!(l.tie_broken);
        assert_eq!(l.labels[0], RegimeLabel::LowVolatility);
        assert_eq!(l.labels[1], RegimeLabel::HighestVolatility);
        assert_eq!(l.labels[2], RegimeLabel::BestIncomeHighVol);
        assert_eq!(l.labels[3], RegimeLabel::HighestLossHighVol);
    }

    #[test]
    fn non_four_regimes_ranked_by_sigma() {
        let fit = fake_fit(vec![0.01, 0.05, 0.02], (0..3).map(|s| one_hot(3, s)).collect());
        let l = label_regimes(&fit, &[0.0; 3]).unwrap();
        assert_eq!(
            l.labels,
            vec![RegimeLabel::Ranked(3), RegimeLabel::Ranked(1), RegimeLabel::Ranked(2)]
        );
    }

    #[test]
    fn labels_follow_permutation() {
        let fit = fake_fit(vec![0.03, 0.001, 0.02, 0.015], (0..4).map(|s| one_hot(4, s)).collect());
        let rm = [0.0, 0.0, 0.01, -0.01];
        let base = label_regimes(&fit, &rm).unwrap();
        let perm = [2, 0, 3, 1];
        let permuted = label_regimes(&fit.permuted(&perm), &rm).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            assert_eq!(permuted.labels[i], base.labels[p]);
        }
    }

    #[test]
    fn per_regime_verdicts_from_table_cells() {
        let mut fit = fake_fit(vec![0.03, 0.001], vec![vec![0.5, 0.5]]);
        fit.regimes = vec![
            RegimeCoefs { coef: vec![-2.761], se: vec![1.0], tstat: vec![-2.761], pvalue: vec![0.060], occupancy: 1.0, r2: 0.628 },
            RegimeCoefs { coef: vec![0.786], se: vec![0.4], tstat: vec![1.96], pvalue: vec![0.050], occupancy: 1.0, r2: 0.487 },
        ];
        let v = per_regime_herding(&fit, 0.10).unwrap();
        assert_eq!(v[0].verdict, Verdict::Herding);
        assert_eq!(v[1].verdict, Verdict::AntiHerding);
    }
}
