//! Synthetic data with known ground truth, and brute-force oracles for the
//! regime-switching likelihood.

use chrono::{Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Normal};
use serde::{Deserialize, Serialize};

use crate::dispersion::DispersionSeries;
use crate::error::{Error, Result};
use crate::events::{ExogKind, ExogSeries};
use crate::msherd::{ergodic_distribution, validate_transition};
use crate::panel::{ReturnMethod, ReturnPanel};
use crate::regress::Design;

/// Lower bound applied to generated CSAD values.
pub const CSAD_FLOOR: f64 = 1e-6;
/// Largest share of floored observations a valid configuration may produce.
pub const FLOOR_BUDGET: f64 = 0.01;
/// Largest number of regime paths the enumeration oracles accept.
pub const MAX_PATHS: f64 = 1e6;

/// Announcement-style dummy planted into the generated CSAD.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventPlant {
    /// Per-period probability that the dummy is 1.
    pub prob: f64,
    /// Loading on dummy·R_m².
    pub gamma3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_assets: usize,
    pub n_periods: usize,
    /// (γ₀, γ₁, γ₂) per regime.
    pub gamma: Vec<[f64; 3]>,
    /// Error standard deviation per regime.
    pub sigma: Vec<f64>,
    pub trans: Vec<Vec<f64>>,
    /// Standard deviation of the market return.
    pub rm_volatility: f64,
    /// Mean market return per regime; empty means zero everywhere.
    pub rm_drift: Vec<f64>,
    /// Multiplier on the regime error standard deviations; 0 gives a
    /// noiseless CSAD.
    pub noise_scale: f64,
    pub event: Option<EventPlant>,
    pub start: NaiveDate,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_assets: 100,
            n_periods: 3000,
            gamma: vec![[0.01, 0.3, 0.8], [0.06, 0.4, -2.5]],
            sigma: vec![0.002, 0.02],
            trans: vec![vec![0.95, 0.05], vec![0.05, 0.95]],
            rm_volatility: 0.05,
            rm_drift: Vec::new(),
            noise_scale: 1.0,
            event: None,
            start: NaiveDate::from_ymd_opt(2018, 1, 1).expect("valid date"),
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// One regime with the given coefficients and error standard deviation.
    pub fn single_regime(gamma: [f64; 3], sigma: f64) -> Self {
        Self {
            gamma: vec![gamma],
            sigma: vec![sigma],
            trans: vec![vec![1.0]],
            ..Self::default()
        }
    }

    pub fn n_regimes(&self) -> usize {
        self.sigma.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.sigma.len();
        if k == 0 {
            return Err(Error::InvalidInput("at least one regime is required".into()));
        }
        if self.gamma.len() != k || self.trans.len() != k {
            return Err(Error::InvalidInput(format!(
                "{} sigma values, {} gamma rows and {} transition rows; all must agree",
                k,
                self.gamma.len(),
                self.trans.len()
            )));
        }
        if !self.rm_drift.is_empty() && self.rm_drift.len() != k {
            return Err(Error::InvalidInput(format!(
                "rm_drift has {} entries for {k} regimes",
                self.rm_drift.len()
            )));
        }
        if let Some(s) = self.sigma.iter().position(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidInput(format!("sigma for regime {} must be positive", s + 1)));
        }
        if !(self.rm_volatility > 0.0) || !self.rm_volatility.is_finite() {
            return Err(Error::InvalidInput("rm_volatility must be positive".into()));
        }
        if !(self.noise_scale >= 0.0) || !self.noise_scale.is_finite() {
            return Err(Error::InvalidInput("noise_scale must be non-negative".into()));
        }
        if self.n_assets < 2 {
            return Err(Error::InvalidInput("n_assets must be at least 2".into()));
        }
        if self.n_periods < 1 {
            return Err(Error::InvalidInput("n_periods must be at least 1".into()));
        }
        if let Some(e) = self.event {
            if !(0.0..=1.0).contains(&e.prob) || !e.gamma3.is_finite() {
                return Err(Error::InvalidInput("event prob must lie in [0, 1]".into()));
            }
        }
        validate_transition(&self.trans)
    }

    fn dates(&self) -> Vec<NaiveDate> {
        (0..self.n_periods as u64)
            .map(|t| self.start + Days::new(t + 1))
            .collect()
    }
}

/// Generated dispersion series with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCsad {
    pub dispersion: DispersionSeries,
    /// True regime (0-based) per period.
    pub regimes: Vec<usize>,
    /// Planted announcement dummy, when configured.
    pub dummy: Option<ExogSeries>,
    /// Number of CSAD values raised to the floor.
    pub floored: usize,
}

/// Draws a regime path, market returns and CSAD from the regime-specific
/// herding regression. Dates run daily from the day after `config.start`.
pub fn simulate_csad(config: &SynthConfig) -> Result<SynthCsad> {
    simulate_with(config, &mut ChaCha8Rng::seed_from_u64(config.seed))
}

fn draw_index(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the cumulative sum: take the last positive entry
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

fn simulate_with(config: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<SynthCsad> {
    config.validate()?;
    let n = config.n_periods;
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut regimes = Vec::with_capacity(n);
    let mut rm = Vec::with_capacity(n);
    let mut csad = Vec::with_capacity(n);
    let mut dummy = Vec::with_capacity(n);
    let mut floored = 0;
    let mut s = draw_index(rng, &ergodic_distribution(&config.trans));
    for t in 0..n {
        if t > 0 {
            s = draw_index(rng, &config.trans[s]);
        }
        let drift = config.rm_drift.get(s).copied().unwrap_or(0.0);
        let r = drift + config.rm_volatility * std_normal.sample(rng);
        let eps = config.noise_scale * config.sigma[s] * std_normal.sample(rng);
        let g = config.gamma[s];
        let mut c = g[0] + g[1] * r.abs() + g[2] * r * r + eps;
        if let Some(e) = config.event {
            let d = if rng.random::<f64>() < e.prob { 1.0 } else { 0.0 };
            c += e.gamma3 * d * r * r;
            dummy.push(d);
        }
        if c < CSAD_FLOOR {
            c = CSAD_FLOOR;
            floored += 1;
        }
        regimes.push(s);
        rm.push(r);
        csad.push(c);
    }
    if floored as f64 >= FLOOR_BUDGET * n as f64 {
        return Err(Error::FloorBudgetExceeded { floored, total: n });
    }
    let dates = config.dates();
    let dummy = match config.event {
        Some(_) => Some(ExogSeries::new(
            dates.clone(),
            dummy,
            ExogKind::AnnouncementDummy,
            "event",
        )?),
        None => None,
    };
    Ok(SynthCsad {
        dispersion: DispersionSeries::from_parts(dates, vec![config.n_assets; n], rm, csad, None)?,
        regimes,
        dummy,
        floored,
    })
}

/// Laplace(0, 1) draw; its mean absolute value is 1.
fn laplace(rng: &mut ChaCha8Rng) -> f64 {
    let a: f64 = Exp1.sample(rng);
    let b: f64 = Exp1.sample(rng);
    a - b
}

/// Asset returns R_i,t = R_m,t + d_t·u_i,t with Laplace(0, 1) noise, so that
/// E|R_i − R_m| = d_t. Draws giving a simple return at or below −1 are
/// redrawn.
pub fn panel_from_targets(
    dates: &[NaiveDate],
    rm: &[f64],
    targets: &[f64],
    n_assets: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ReturnPanel> {
    if rm.len() != dates.len() || targets.len() != dates.len() {
        return Err(Error::InvalidInput("targets, returns and dates differ in length".into()));
    }
    if let Some(t) = targets.iter().position(|d| !(*d >= 0.0) || !d.is_finite()) {
        return Err(Error::InvalidInput(format!("negative CSAD target on {}", dates[t])));
    }
    let width = n_assets.to_string().len().max(3);
    let assets = (1..=n_assets).map(|i| format!("A{i:0width$}")).collect();
    let mut rows = Vec::with_capacity(dates.len());
    for (r, d) in rm.iter().zip(targets) {
        let mut row = Vec::with_capacity(n_assets);
        for _ in 0..n_assets {
            let mut x = r + d * laplace(rng);
            let mut tries = 0;
            while x <= -1.0 {
                tries += 1;
                if tries > 1000 {
                    return Err(Error::InvalidInput(
                        "market return and target leave no room for returns above -1".into(),
                    ));
                }
                x = r + d * laplace(rng);
            }
            row.push(Some(x));
        }
        rows.push(row);
    }
    ReturnPanel::new(dates.to_vec(), assets, rows, ReturnMethod::Simple)
}

/// Generated asset-level panel with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthPanel {
    pub returns: ReturnPanel,
    pub truth: SynthCsad,
}

/// Simulates the CSAD law, then spreads `n_assets` returns around each
/// market return with the generated CSAD as cross-sectional target.
pub fn simulate_panel(config: &SynthConfig) -> Result<SynthPanel> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let truth = simulate_with(config, &mut rng)?;
    let d = &truth.dispersion;
    let returns = panel_from_targets(&d.dates, &d.rm, &d.csad, config.n_assets, &mut rng)?;
    Ok(SynthPanel { returns, truth })
}

/// Per-row, per-regime Gaussian log densities.
fn log_densities(beta: &[Vec<f64>], sigma: &[f64], design: &Design, response: &[f64]) -> Vec<Vec<f64>> {
    (0..response.len())
        .map(|t| {
            let x = design.row(t);
            beta.iter()
                .zip(sigma)
                .map(|(b, s)| {
                    let mu: f64 = x.iter().zip(b).map(|(x, b)| x * b).sum();
                    let z = (response[t] - mu) / s;
                    -0.5 * (2.0 * std::f64::consts::PI).ln() - s.ln() - 0.5 * z * z
                })
                .collect()
        })
        .collect()
}

fn check_instance(
    beta: &[Vec<f64>],
    sigma: &[f64],
    trans: &[Vec<f64>],
    init: &[f64],
    design: &Design,
    response: &[f64],
) -> Result<()> {
    let k = sigma.len();
    if k == 0 || beta.len() != k || trans.len() != k || init.len() != k {
        return Err(Error::InvalidInput("regime counts disagree".into()));
    }
    if response.len() != design.nobs() || beta.iter().any(|b| b.len() != design.ncols()) {
        return Err(Error::InvalidInput("design, response and coefficients disagree".into()));
    }
    validate_transition(trans)?;
    let paths = (k as f64).powi(response.len() as i32);
    if paths > MAX_PATHS {
        return Err(Error::InstanceTooLarge(paths));
    }
    Ok(())
}

/// Log probability of every regime path, in odometer order (first period
/// most significant).
fn path_logs(
    sigma_len: usize,
    logd: &[Vec<f64>],
    trans: &[Vec<f64>],
    init: &[f64],
) -> Vec<(Vec<usize>, f64)> {
    let k = sigma_len;
    let n = logd.len();
    let total = k.pow(n as u32);
    let mut out = Vec::with_capacity(total);
    let mut path = vec![0usize; n];
    for _ in 0..total {
        let mut lp = init[path[0]].ln() + logd[0][path[0]];
        for t in 1..n {
            lp += trans[path[t - 1]][path[t]].ln() + logd[t][path[t]];
        }
        out.push((path.clone(), lp));
        for t in (0..n).rev() {
            path[t] += 1;
            if path[t] < k {
                break;
            }
            path[t] = 0;
        }
    }
    out
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let peak = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if peak == f64::NEG_INFINITY {
        return peak;
    }
    peak + values.map(|v| (v - peak).exp()).sum::<f64>().ln()
}

/// Exact mixture log-likelihood: log of the sum over all Kᵀ regime paths of
/// path probability times the Gaussian likelihood.
pub fn brute_force_loglik(
    beta: &[Vec<f64>],
    sigma: &[f64],
    trans: &[Vec<f64>],
    init: &[f64],
    design: &Design,
    response: &[f64],
) -> Result<f64> {
    check_instance(beta, sigma, trans, init, design, response)?;
    if response.is_empty() {
        return Ok(0.0);
    }
    let logd = log_densities(beta, sigma, design, response);
    let paths = path_logs(sigma.len(), &logd, trans, init);
    Ok(log_sum_exp(paths.iter().map(|(_, lp)| *lp)))
}

/// Posterior regime marginals P(s_t = j | all data) by path enumeration.
pub fn brute_force_marginals(
    beta: &[Vec<f64>],
    sigma: &[f64],
    trans: &[Vec<f64>],
    init: &[f64],
    design: &Design,
    response: &[f64],
) -> Result<Vec<Vec<f64>>> {
    check_instance(beta, sigma, trans, init, design, response)?;
    let k = sigma.len();
    let n = response.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let logd = log_densities(beta, sigma, design, response);
    let paths = path_logs(k, &logd, trans, init);
    let total = log_sum_exp(paths.iter().map(|(_, lp)| *lp));
    let mut marg = vec![vec![0.0; k]; n];
    for (path, lp) in &paths {
        let w = (lp - total).exp();
        for (t, &s) in path.iter().enumerate() {
            marg[t][s] += w;
        }
    }
    Ok(marg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispersion::csad;
    use crate::msherd::{hamilton_filter, MsParams};
    use crate::regress::herding_regression;
    use approx::assert_relative_eq;

    /// Depth-first enumeration accumulating in linear space; independent of
    /// the odometer used by the public oracles.
    fn recursive_loglik(
        beta: &[Vec<f64>],
        sigma: &[f64],
        trans: &[Vec<f64>],
        init: &[f64],
        design: &Design,
        response: &[f64],
    ) -> f64 {
        fn density(x: &[f64], b: &[f64], s: f64, y: f64) -> f64 {
            let mu: f64 = x.iter().zip(b).map(|(x, b)| x * b).sum();
            (-(y - mu).powi(2) / (2.0 * s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
        }
        #[allow(clippy::too_many_arguments)]
        fn walk(
            t: usize,
            prev: usize,
            weight: f64,
            beta: &[Vec<f64>],
            sigma: &[f64],
            trans: &[Vec<f64>],
            design: &Design,
            response: &[f64],
        ) -> f64 {
            if t == response.len() {
                return weight;
            }
            let x = design.row(t);
            (0..sigma.len())
                .map(|s| {
                    let w = weight * trans[prev][s] * density(&x, &beta[s], sigma[s], response[t]);
                    walk(t + 1, s, w, beta, sigma, trans, design, response)
                })
                .sum()
        }
        let x = design.row(0);
        (0..sigma.len())
            .map(|s| {
                let w = init[s] * density(&x, &beta[s], sigma[s], response[0]);
                walk(1, s, w, beta, sigma, trans, design, response)
            })
            .sum::<f64>()
            .ln()
    }

    fn random_instance(rng: &mut ChaCha8Rng, k: usize, n: usize) -> (MsParams, Vec<f64>, Design, Vec<f64>) {
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let design = Design::new(vec!["const".into(), "x".into()], vec![vec![1.0; n], x]).unwrap();
        let response: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rows = |rng: &mut ChaCha8Rng| {
            let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / s).collect::<Vec<f64>>()
        };
        let params = MsParams {
            beta: (0..k).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect(),
            sigma: (0..k).map(|_| rng.random_range(0.2..1.5)).collect(),
            trans: (0..k).map(|_| rows(rng)).collect(),
        };
        let init = rows(rng);
        (params, init, design, response)
    }

    #[test]
    fn enumerations_agree_with_each_other_and_the_filter() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let (p, init, d, y) = random_instance(&mut rng, 2, 6);
            let a = brute_force_loglik(&p.beta, &p.sigma, &p.trans, &init, &d, &y).unwrap();
            let b = recursive_loglik(&p.beta, &p.sigma, &p.trans, &init, &d, &y);
            let f = hamilton_filter(&p, &init, &d, &y).unwrap().loglik;
            assert_relative_eq!(a, b, max_relative = 1e-12);
            assert_relative_eq!(a, f, max_relative = 1e-10);
        }
    }

    #[test]
    fn single_period_is_mixture_density() {
        let d = Design::new(vec!["const".into()], vec![vec![1.0]]).unwrap();
        let beta = vec![vec![0.0], vec![1.0]];
        let sigma = vec![1.0, 2.0];
        let trans = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
        let init = [0.3, 0.7];
        let got = brute_force_loglik(&beta, &sigma, &trans, &init, &d, &[0.5]).unwrap();
        // 0.3·φ(0.5) + 0.7·φ((0.5−1)/2)/2
        let phi = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let hand = (0.3 * phi(0.5) + 0.7 * phi(-0.25) / 2.0).ln();
        assert_relative_eq!(got, hand, max_relative = 1e-14);
        let m = brute_force_marginals(&beta, &sigma, &trans, &init, &d, &[0.5]).unwrap();
        assert_relative_eq!(m[0][0], 0.3 * phi(0.5) / hand.exp(), max_relative = 1e-12);
    }

    #[test]
    fn single_regime_is_regression_loglik() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (p, _, d, y) = random_instance(&mut rng, 1, 7);
        let got = brute_force_loglik(&p.beta, &p.sigma, &p.trans, &[1.0], &d, &y).unwrap();
        let direct: f64 = log_densities(&p.beta, &p.sigma, &d, &y).iter().map(|r| r[0]).sum();
        assert_relative_eq!(got, direct, max_relative = 1e-13);
    }

    #[test]
    fn oversized_instance_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (p, init, d, y) = random_instance(&mut rng, 2, 21);
        assert!(matches!(
            brute_force_loglik(&p.beta, &p.sigma, &p.trans, &init, &d, &y),
            Err(Error::InstanceTooLarge(_))
        ));
    }

    #[test]
    fn noiseless_single_regime_is_recovered_exactly() {
        let mut cfg = SynthConfig::single_regime([0.01, 0.4, -1.5], 0.003);
        cfg.noise_scale = 0.0;
        cfg.n_periods = 500;
        let sim = simulate_csad(&cfg).unwrap();
        let fit = herding_regression(&sim.dispersion).unwrap();
        for (got, want) in fit.coef.iter().zip([0.01, 0.4, -1.5]) {
            assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        }
        assert!(fit.r2 > 1.0 - 1e-12);
    }

    #[test]
    fn deterministic_under_seed() {
        let cfg = SynthConfig { n_periods: 200, n_assets: 20, ..Default::default() };
        assert_eq!(simulate_panel(&cfg).unwrap(), simulate_panel(&cfg).unwrap());
        let other = SynthConfig { seed: 1, ..cfg.clone() };
        assert_ne!(
            simulate_csad(&cfg).unwrap().regimes,
            simulate_csad(&other).unwrap().regimes
        );
    }

    #[test]
    fn floor_budget_enforced() {
        let cfg = SynthConfig::single_regime([0.0, 0.0, 0.0], 0.01);
        assert!(matches!(simulate_csad(&cfg), Err(Error::FloorBudgetExceeded { .. })));
    }

    #[test]
    fn invalid_transition_row_named() {
        let cfg = SynthConfig {
            trans: vec![vec![0.95, 0.05], vec![0.5, 0.6]],
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::InvalidTransition { row: 1, .. })));
    }

    #[test]
    fn large_cross_section_hits_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let date = [NaiveDate::from_ymd_opt(2020, 1, 1).unwrap()];
        let panel = panel_from_targets(&date, &[0.01], &[0.02], 10_000, &mut rng).unwrap();
        let got = csad(&panel, 2).csad[0];
        assert!((got - 0.02).abs() < 0.001, "{got}");
    }

    #[test]
    fn zero_target_collapses_cross_section() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let date = [NaiveDate::from_ymd_opt(2020, 1, 1).unwrap()];
        let panel = panel_from_targets(&date, &[0.013], &[0.0], 50, &mut rng).unwrap();
        assert!(panel.observed(0).iter().all(|r| *r == 0.013));
        assert_eq!(csad(&panel, 2).csad[0], 0.0);
    }

    #[test]
    fn event_plant_produces_dummy() {
        let cfg = SynthConfig {
            n_periods: 400,
            event: Some(EventPlant { prob: 0.2, gamma3: -1.0 }),
            ..Default::default()
        };
        let sim = simulate_csad(&cfg).unwrap();
        let d = sim.dummy.unwrap();
        assert_eq!(d.dates, sim.dispersion.dates);
        let share = d.values.iter().sum::<f64>() / 400.0;
        assert!((0.1..0.3).contains(&share));
    }
}
