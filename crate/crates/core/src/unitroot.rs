//! ADF and Phillips–Perron unit-root tests with tabulated Dickey–Fuller
//! critical values.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{lstsq, matrix_from_columns};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Deterministic {
    Constant,
    ConstantTrend,
}

impl fmt::Display for Deterministic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Deterministic::Constant => "constant",
            Deterministic::ConstantTrend => "constant + trend",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LagChoice {
    Fixed(usize),
    /// AIC over 0..=floor(12·(T/100)^(1/4)).
    #[default]
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    Fixed(usize),
    /// floor(4·(T/100)^(2/9)).
    #[default]
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    Adf,
    Pp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CriticalValues {
    pub one: f64,
    pub five: f64,
    pub ten: f64,
}

/// Tightest conventional level at which the unit root is rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PBound {
    Below01,
    Below05,
    Below10,
    AtLeast10,
}

impl fmt::Display for PBound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PBound::Below01 => "p < 0.01",
            PBound::Below05 => "p < 0.05",
            PBound::Below10 => "p < 0.10",
            PBound::AtLeast10 => "p >= 0.10",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Decisions {
    pub reject_1: bool,
    pub reject_5: bool,
    pub reject_10: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UnitRootResult {
    pub kind: TestKind,
    pub spec: Deterministic,
    pub statistic: f64,
    /// ADF lag order or PP bandwidth.
    pub lags_or_bandwidth: usize,
    pub nobs: usize,
    pub crit: CriticalValues,
    pub decisions: Decisions,
    pub p_bound: PBound,
}

impl UnitRootResult {
    fn new(
        kind: TestKind,
        spec: Deterministic,
        statistic: f64,
        lags_or_bandwidth: usize,
        nobs: usize,
    ) -> Self {
        let crit = critical_values(spec, nobs);
        let decisions = Decisions {
            reject_1: statistic < crit.one,
            reject_5: statistic < crit.five,
            reject_10: statistic < crit.ten,
        };
        let p_bound = if decisions.reject_1 {
            PBound::Below01
        } else if decisions.reject_5 {
            PBound::Below05
        } else if decisions.reject_10 {
            PBound::Below10
        } else {
            PBound::AtLeast10
        };
        Self {
            kind,
            spec,
            statistic,
            lags_or_bandwidth,
            nobs,
            crit,
            decisions,
            p_bound,
        }
    }

    pub fn rejects_at(&self, alpha: f64) -> bool {
        if alpha >= 0.10 {
            self.decisions.reject_10
        } else if alpha >= 0.05 {
            self.decisions.reject_5
        } else {
            self.decisions.reject_1
        }
    }
}

// Dickey–Fuller t-distribution percentiles (Fuller 1976), rows by sample size.
const SIZES: [f64; 6] = [25.0, 50.0, 100.0, 250.0, 500.0, f64::INFINITY];
const TAU_CONSTANT: [[f64; 3]; 6] = [
    [-3.75, -3.00, -2.63],
    [-3.58, -2.93, -2.60],
    [-3.51, -2.89, -2.58],
    [-3.46, -2.88, -2.57],
    [-3.44, -2.87, -2.57],
    [-3.43, -2.86, -2.57],
];
const TAU_TREND: [[f64; 3]; 6] = [
    [-4.38, -3.60, -3.24],
    [-4.15, -3.50, -3.18],
    [-4.04, -3.45, -3.15],
    [-3.99, -3.43, -3.13],
    [-3.98, -3.42, -3.13],
    [-3.96, -3.41, -3.12],
];

/// 1/5/10% critical values, linearly interpolated in 1/T between table rows.
pub fn critical_values(spec: Deterministic, nobs: usize) -> CriticalValues {
    let table = match spec {
        Deterministic::Constant => &TAU_CONSTANT,
        Deterministic::ConstantTrend => &TAU_TREND,
    };
    let inv = 1.0 / (nobs.max(1) as f64);
    let inv_at = |i: usize| 1.0 / SIZES[i];
    let row = if inv >= inv_at(0) {
        table[0]
    } else {
        let i = (1..SIZES.len()).find(|&i| inv >= inv_at(i)).unwrap();
        let w = (inv - inv_at(i)) / (inv_at(i - 1) - inv_at(i));
        let mut r = [0.0; 3];
        for c in 0..3 {
            r[c] = table[i][c] + w * (table[i - 1][c] - table[i][c]);
        }
        r
    };
    CriticalValues {
        one: row[0],
        five: row[1],
        ten: row[2],
    }
}

pub fn schwert_max_lag(len: usize) -> usize {
    (12.0 * (len as f64 / 100.0).powf(0.25)).floor() as usize
}

pub fn auto_bandwidth(len: usize) -> usize {
    (4.0 * (len as f64 / 100.0).powf(2.0 / 9.0)).floor() as usize
}

pub fn bartlett_weight(j: usize, bandwidth: usize) -> f64 {
    1.0 - j as f64 / (bandwidth as f64 + 1.0)
}

/// Bartlett-kernel long-run variance of the demeaned input:
/// γ₀ + 2 Σ_{j=1..bw} (1 − j/(bw+1)) γ_j with γ_j = (1/n) Σ u_t u_{t−j}.
pub fn newey_west_lrv(residuals: &[f64], bandwidth: usize) -> f64 {
    let n = residuals.len();
    if n == 0 {
        return 0.0;
    }
    let mean = residuals.iter().sum::<f64>() / n as f64;
    let u: Vec<f64> = residuals.iter().map(|v| v - mean).collect();
    let gamma = |j: usize| (j..n).map(|t| u[t] * u[t - j]).sum::<f64>() / n as f64;
    let mut lrv = gamma(0);
    for j in 1..=bandwidth.min(n - 1) {
        lrv += 2.0 * bartlett_weight(j, bandwidth) * gamma(j);
    }
    lrv.max(0.0)
}

struct DfFit {
    tstat: f64,
    se: f64,
    rss: f64,
    residuals: Vec<f64>,
    nobs: usize,
    ncoef: usize,
}

/// Δy_t on y_{t−1}, k lagged differences and deterministic terms, over rows
/// t = first..len (indices into `y`). `first` must be at least k + 1.
fn df_regression(y: &[f64], k: usize, spec: Deterministic, first: usize) -> Result<DfFit> {
    let rows: Vec<usize> = (first..y.len()).collect();
    let dy = |t: usize| y[t] - y[t - 1];
    let mut labels = vec!["y(t-1)".to_string()];
    let mut columns = vec![rows.iter().map(|&t| y[t - 1]).collect::<Vec<_>>()];
    for j in 1..=k {
        labels.push(format!("dy(t-{j})"));
        columns.push(rows.iter().map(|&t| dy(t - j)).collect());
    }
    labels.push("const".into());
    columns.push(vec![1.0; rows.len()]);
    if spec == Deterministic::ConstantTrend {
        labels.push("trend".into());
        columns.push(rows.iter().map(|&t| t as f64).collect());
    }
    let response: Vec<f64> = rows.iter().map(|&t| dy(t)).collect();
    let n = rows.len();
    let ncoef = columns.len();
    if n <= ncoef {
        return Err(Error::TooFewObservations { needed: ncoef, got: n });
    }
    let ls = lstsq(&matrix_from_columns(&columns), &response, &labels)?;
    let s2 = ls.rss / (n - ncoef) as f64;
    let se = (s2 * ls.xtx_inv[(0, 0)]).sqrt();
    Ok(DfFit {
        tstat: ls.coef[0] / se,
        se,
        rss: ls.rss,
        residuals: ls.residuals,
        nobs: n,
        ncoef,
    })
}

fn validate(series: &[f64], min_len: usize) -> Result<()> {
    if series.len() <= min_len {
        return Err(Error::TooFewObservations {
            needed: min_len,
            got: series.len(),
        });
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("series contains non-finite values".into()));
    }
    if series.iter().all(|v| *v == series[0]) {
        return Err(Error::ConstantSeries);
    }
    Ok(())
}

/// Augmented Dickey–Fuller test. Auto lag selection compares AIC over a
/// common sample, then refits the chosen order on all available rows.
pub fn adf(series: &[f64], spec: Deterministic, lags: LagChoice) -> Result<UnitRootResult> {
    let len = series.len();
    let k = match lags {
        LagChoice::Fixed(k) => {
            validate(series, k + 10)?;
            k
        }
        LagChoice::Auto => {
            validate(series, 10)?;
            // keep len > k + 10 and enough rows for k + 3 coefficients
            let cap = (len - 11).min(len.saturating_sub(6) / 2);
            let max_lag = schwert_max_lag(len).min(cap);
            let mut best = (f64::INFINITY, 0);
            for k in 0..=max_lag {
                let fit = df_regression(series, k, spec, max_lag + 1)?;
                let n = fit.nobs as f64;
                let aic = n * (fit.rss / n).ln() + 2.0 * fit.ncoef as f64;
                if aic < best.0 {
                    best = (aic, k);
                }
            }
            best.1
        }
    };
    let fit = df_regression(series, k, spec, k + 1)?;
    Ok(UnitRootResult::new(TestKind::Adf, spec, fit.tstat, k, fit.nobs))
}

/// Phillips–Perron Z_t: the k = 0 Dickey–Fuller t-ratio corrected with the
/// Bartlett long-run variance of its residuals.
pub fn pp(series: &[f64], spec: Deterministic, bandwidth: Bandwidth) -> Result<UnitRootResult> {
    validate(series, 20)?;
    let fit = df_regression(series, 0, spec, 1)?;
    let n = fit.nobs;
    let bw = match bandwidth {
        Bandwidth::Fixed(b) => b,
        Bandwidth::Auto => auto_bandwidth(n),
    };
    if bw >= n {
        return Err(Error::InvalidInput(format!(
            "bandwidth {bw} must be below the {n} regression rows"
        )));
    }
    let gamma0 = fit.rss / n as f64;
    let lambda2 = newey_west_lrv(&fit.residuals, bw);
    let s = (fit.rss / (n - fit.ncoef) as f64).sqrt();
    let lambda = lambda2.sqrt();
    let z = (gamma0 / lambda2).sqrt() * fit.tstat
        - 0.5 * (lambda2 - gamma0) / lambda * (n as f64 * fit.se / s);
    Ok(UnitRootResult::new(TestKind::Pp, spec, z, bw, n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    fn walk(seed: u64, n: usize) -> Vec<f64> {
        noise(seed, n)
            .into_iter()
            .scan(0.0, |acc, e| {
                *acc += e;
                Some(*acc)
            })
            .collect()
    }

    #[test]
    fn critical_values_monotone_and_tabulated() {
        for spec in [Deterministic::Constant, Deterministic::ConstantTrend] {
            for n in [10, 25, 37, 80, 100, 300, 700, 5000, 1_000_000] {
                let c = critical_values(spec, n);
                assert!(c.one < c.five && c.five < c.ten, "{spec:?} {n}");
            }
        }
        let c = critical_values(Deterministic::Constant, 100);
        assert_eq!((c.one, c.five, c.ten), (-3.51, -2.89, -2.58));
        let c = critical_values(Deterministic::ConstantTrend, 250);
        assert_relative_eq!(c.five, -3.43, epsilon = 1e-12);
    }

    #[test]
    fn decisions_match_critical_values() {
        let r = adf(&walk(1, 300), Deterministic::Constant, LagChoice::Fixed(1)).unwrap();
        assert_eq!(r.decisions.reject_1, r.statistic < r.crit.one);
        assert_eq!(r.decisions.reject_5, r.statistic < r.crit.five);
        assert_eq!(r.decisions.reject_10, r.statistic < r.crit.ten);
    }

    #[test]
    fn white_noise_rejects_random_walk_does_not() {
        let wn = adf(&noise(2, 500), Deterministic::Constant, LagChoice::Auto).unwrap();
        assert!(wn.decisions.reject_1, "{wn:?}");
        let rw = pp(&walk(3, 500), Deterministic::Constant, Bandwidth::Auto).unwrap();
        assert!(!rw.decisions.reject_1, "{rw:?}");
    }

    #[test]
    fn adf_invariant_to_affine_rescaling() {
        let y = walk(4, 400);
        let z: Vec<f64> = y.iter().map(|v| 3.7 * v - 12.0).collect();
        for spec in [Deterministic::Constant, Deterministic::ConstantTrend] {
            let a = adf(&y, spec, LagChoice::Fixed(3)).unwrap();
            let b = adf(&z, spec, LagChoice::Fixed(3)).unwrap();
            assert!((a.statistic - b.statistic).abs() < 1e-10);
        }
    }

    #[test]
    fn adf_k0_equals_pp_bw0() {
        for seed in 0..5 {
            let y = walk(10 + seed, 250);
            for spec in [Deterministic::Constant, Deterministic::ConstantTrend] {
                let a = adf(&y, spec, LagChoice::Fixed(0)).unwrap();
                let b = pp(&y, spec, Bandwidth::Fixed(0)).unwrap();
                assert!((a.statistic - b.statistic).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn nw_lrv_examples() {
        let u = noise(7, 300);
        let mean = u.iter().sum::<f64>() / 300.0;
        let var = u.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 300.0;
        assert_relative_eq!(newey_west_lrv(&u, 0), var, max_relative = 1e-14);

        // alternating ±1 of length n: γ0 = 1, γ1 = −(n−1)/n, so LRV = 1/n
        for n in [10usize, 100, 1000] {
            let alt: Vec<f64> = (0..n).map(|t| if t % 2 == 0 { 1.0 } else { -1.0 }).collect();
            assert_relative_eq!(newey_west_lrv(&alt, 1), 1.0 / n as f64, max_relative = 1e-12);
        }
    }

    #[test]
    fn nw_lrv_nonnegative() {
        for seed in 0..20 {
            let u: Vec<f64> = noise(seed, 50).windows(2).map(|w| w[1] - w[0]).collect();
            for bw in 0..20 {
                assert!(newey_west_lrv(&u, bw) >= 0.0);
            }
        }
    }

    #[test]
    fn error_paths() {
        assert!(matches!(
            adf(&[1.0; 50], Deterministic::Constant, LagChoice::Auto),
            Err(Error::ConstantSeries)
        ));
        assert!(matches!(
            adf(&noise(1, 12), Deterministic::Constant, LagChoice::Fixed(4)),
            Err(Error::TooFewObservations { .. })
        ));
        assert!(pp(&noise(1, 20), Deterministic::Constant, Bandwidth::Auto).is_err());
    }

    #[test]
    fn schwert_and_bandwidth_rules() {
        assert_eq!(schwert_max_lag(100), 12);
        assert_eq!(schwert_max_lag(1000), 21);
        assert_eq!(auto_bandwidth(100), 4);
        assert_eq!(auto_bandwidth(1000), 6);
    }
}
