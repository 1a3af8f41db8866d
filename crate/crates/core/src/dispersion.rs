//! Equal-weighted market return and cross-sectional dispersion (CSAD, CSSD).

use chrono::NaiveDate;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::panel::{deseasonalize, intersect_indices, Deseasonalize, ReturnPanel};
use crate::series::DatedSeries;

/// Per-date dispersion and market-return regressors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DispersionSeries {
    pub dates: Vec<NaiveDate>,
    pub n_assets: Vec<usize>,
    pub rm: Vec<f64>,
    pub rm_abs: Vec<f64>,
    pub rm_sq: Vec<f64>,
    pub csad: Vec<f64>,
    pub cssd: Option<Vec<f64>>,
}

impl DispersionSeries {
    /// Builds a series from its primary columns; `rm_abs` and `rm_sq` are
    /// derived.
    pub fn from_parts(
        dates: Vec<NaiveDate>,
        n_assets: Vec<usize>,
        rm: Vec<f64>,
        csad: Vec<f64>,
        cssd: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = dates.len();
        let lens_ok = n_assets.len() == n
            && rm.len() == n
            && csad.len() == n
            && cssd.as_ref().is_none_or(|c| c.len() == n);
        if !lens_ok {
            return Err(Error::InvalidInput("dispersion columns differ in length".into()));
        }
        DatedSeries::new(dates.clone(), csad.clone())?;
        if let Some(t) = csad.iter().position(|c| !(*c >= 0.0)) {
            return Err(Error::InvalidInput(format!("negative CSAD on {}", dates[t])));
        }
        if let Some(t) = n_assets.iter().position(|&k| k < 2) {
            return Err(Error::InvalidInput(format!("fewer than 2 assets on {}", dates[t])));
        }
        Ok(Self {
            rm_abs: rm.iter().map(|r| r.abs()).collect(),
            rm_sq: rm.iter().map(|r| r * r).collect(),
            dates,
            n_assets,
            rm,
            csad,
            cssd,
        })
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn csad_series(&self) -> DatedSeries {
        DatedSeries {
            dates: self.dates.clone(),
            values: self.csad.clone(),
        }
    }

    pub fn rm_series(&self) -> DatedSeries {
        DatedSeries {
            dates: self.dates.clone(),
            values: self.rm.clone(),
        }
    }

    pub fn rm_sq_series(&self) -> DatedSeries {
        DatedSeries {
            dates: self.dates.clone(),
            values: self.rm_sq.clone(),
        }
    }

    /// Restricts the series to the given dates (those not present are skipped).
    pub fn select(&self, dates: &[NaiveDate]) -> Self {
        let idx: Vec<usize> = intersect_indices(&self.dates, dates)
            .into_iter()
            .map(|(i, _)| i)
            .collect();
        let take = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Self {
            dates: idx.iter().map(|&i| self.dates[i]).collect(),
            n_assets: idx.iter().map(|&i| self.n_assets[i]).collect(),
            rm: take(&self.rm),
            rm_abs: take(&self.rm_abs),
            rm_sq: take(&self.rm_sq),
            csad: take(&self.csad),
            cssd: self.cssd.as_deref().map(take),
        }
    }

    /// Applies `method` to CSAD, CSSD and R_m, then rederives |R_m| and R_m².
    pub fn deseasonalized(&self, method: Deseasonalize) -> Result<Self> {
        if method == Deseasonalize::None {
            return Ok(self.clone());
        }
        let apply = |v: &[f64]| -> Result<Vec<f64>> {
            let s = DatedSeries {
                dates: self.dates.clone(),
                values: v.to_vec(),
            };
            Ok(deseasonalize(&s, method)?.values)
        };
        // Demeaning can push a near-zero dispersion value below zero.
        let floor = |v: Vec<f64>| v.into_iter().map(|x| x.max(0.0)).collect::<Vec<_>>();
        let csad = floor(apply(&self.csad)?);
        let cssd = match &self.cssd {
            Some(c) => Some(floor(apply(c)?)),
            None => None,
        };
        Self::from_parts(
            self.dates.clone(),
            self.n_assets.clone(),
            apply(&self.rm)?,
            csad,
            cssd,
        )
    }

    /// Delimited export: `date,n_assets,rm,rm_abs,rm_sq,csad,cssd`. Floats use
    /// shortest round-trip formatting so the file is lossless.
    pub fn to_table(&self) -> String {
        let mut out = String::from("date,n_assets,rm,rm_abs,rm_sq,csad,cssd\n");
        for t in 0..self.len() {
            let cssd = self
                .cssd
                .as_ref()
                .map(|c| c[t].to_string())
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                self.dates[t].format("%Y-%m-%d"),
                self.n_assets[t],
                self.rm[t],
                self.rm_abs[t],
                self.rm_sq[t],
                self.csad[t],
                cssd
            ));
        }
        out
    }
}

/// Cross-sectional statistics of one date's observed returns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossSection {
    pub n: usize,
    pub rm: f64,
    pub csad: f64,
    pub cssd: f64,
}

impl CrossSection {
    /// Requires at least two returns.
    pub fn of(returns: &[f64]) -> Option<Self> {
        let n = returns.len();
        if n < 2 {
            return None;
        }
        let rm = mean(returns);
        let (abs_dev, sq_dev) = returns.iter().fold((0.0, 0.0), |(a, s), r| {
            let e = r - rm;
            (a + e.abs(), s + e * e)
        });
        Some(Self {
            n,
            rm,
            csad: abs_dev / n as f64,
            cssd: (sq_dev / (n - 1) as f64).sqrt(),
        })
    }
}

/// Equal-weighted mean of the observed returns on `date`.
pub fn market_return(panel: &ReturnPanel, date: NaiveDate, min_assets: usize) -> Result<f64> {
    let t = panel
        .dates()
        .binary_search(&date)
        .map_err(|_| Error::InvalidInput(format!("date {date} not in panel")))?;
    let obs = panel.observed(t);
    if obs.len() < min_assets.max(1) {
        return Err(Error::InsufficientAssets {
            date,
            got: obs.len(),
            needed: min_assets,
        });
    }
    Ok(mean(&obs))
}

/// Arithmetic mean computed about the first element, so a constant slice
/// returns that constant exactly.
fn mean(xs: &[f64]) -> f64 {
    let pivot = xs[0];
    pivot + xs.iter().map(|x| x - pivot).sum::<f64>() / xs.len() as f64
}

/// CSAD, CSSD and market-return columns for every date with at least
/// `min_assets` observed returns. Other dates are dropped.
pub fn csad(panel: &ReturnPanel, min_assets: usize) -> DispersionSeries {
    let min_assets = min_assets.max(2);
    let mut dates = Vec::new();
    let mut n_assets = Vec::new();
    let mut rm = Vec::new();
    let mut csad = Vec::new();
    let mut cssd = Vec::new();
    for (t, date) in panel.dates().iter().enumerate() {
        let obs = panel.observed(t);
        match CrossSection::of(&obs).filter(|cs| cs.n >= min_assets) {
            Some(cs) => {
                dates.push(*date);
                n_assets.push(cs.n);
                rm.push(cs.rm);
                csad.push(cs.csad);
                cssd.push(cs.cssd);
            }
            None => log::info!(
                "dropping {date}: {} observed assets, need {min_assets}",
                obs.len()
            ),
        }
    }
    DispersionSeries {
        rm_abs: rm.iter().map(|r: &f64| r.abs()).collect(),
        rm_sq: rm.iter().map(|r| r * r).collect(),
        dates,
        n_assets,
        rm,
        csad,
        cssd: Some(cssd),
    }
}

/// Cross-sectional standard deviation (N − 1 denominator) per retained date.
pub fn cssd(panel: &ReturnPanel, min_assets: usize) -> DatedSeries {
    let series = csad(panel, min_assets);
    DatedSeries {
        dates: series.dates,
        values: series.cssd.unwrap_or_default(),
    }
}
