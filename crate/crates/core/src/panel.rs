//! Price ingestion, return computation, weekday deseasonalization and
//! date alignment.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::DatedSeries;

pub const MIN_ASSETS: usize = 2;
pub const MIN_DATES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReturnMethod {
    #[default]
    Simple,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Deseasonalize {
    #[default]
    None,
    WeekdayDemean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeriesSpec {
    pub return_method: ReturnMethod,
    pub min_assets_per_date: usize,
    pub deseasonalize: Deseasonalize,
}

impl Default for SeriesSpec {
    fn default() -> Self {
        Self {
            return_method: ReturnMethod::Simple,
            min_assets_per_date: MIN_ASSETS,
            deseasonalize: Deseasonalize::None,
        }
    }
}

impl SeriesSpec {
    pub fn validate(&self) -> Result<()> {
        if self.min_assets_per_date < MIN_ASSETS {
            return Err(Error::InvalidInput(format!(
                "min_assets_per_date must be at least {MIN_ASSETS}, got {}",
                self.min_assets_per_date
            )));
        }
        Ok(())
    }
}

/// Closing prices, one row per date and one column per asset. `None` marks
/// an unobserved cell.
#[derive(Debug, Clone, PartialEq)]
pub struct PricePanel {
    dates: Vec<NaiveDate>,
    assets: Vec<String>,
    prices: Vec<Vec<Option<f64>>>,
}

impl PricePanel {
    pub fn new(
        dates: Vec<NaiveDate>,
        assets: Vec<String>,
        prices: Vec<Vec<Option<f64>>>,
    ) -> Result<Self> {
        if assets.len() < MIN_ASSETS {
            return Err(Error::InvalidInput(format!(
                "need at least {MIN_ASSETS} asset columns, got {}",
                assets.len()
            )));
        }
        if dates.len() < MIN_DATES {
            return Err(Error::TooFewObservations {
                needed: MIN_DATES - 1,
                got: dates.len(),
            });
        }
        check_increasing(&dates)?;
        check_shape(&dates, &assets, &prices)?;
        for (t, row) in prices.iter().enumerate() {
            for (i, p) in row.iter().enumerate() {
                if let Some(p) = p {
                    if !(p.is_finite() && *p > 0.0) {
                        return Err(Error::InvalidInput(format!(
                            "non-positive price {p} for {} on {}",
                            assets[i], dates[t]
                        )));
                    }
                }
            }
        }
        Ok(Self {
            dates,
            assets,
            prices,
        })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn assets(&self) -> &[String] {
        &self.assets
    }

    pub fn rows(&self) -> &[Vec<Option<f64>>] {
        &self.prices
    }

    pub fn price(&self, t: usize, asset: usize) -> Option<f64> {
        self.prices[t][asset]
    }

    pub fn is_observed(&self, t: usize, asset: usize) -> bool {
        self.prices[t][asset].is_some()
    }

    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    pub fn to_table(&self) -> String {
        write_table(&self.dates, &self.assets, &self.prices)
    }
}

/// Per-period returns. Dates are the later date of each price pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    dates: Vec<NaiveDate>,
    assets: Vec<String>,
    returns: Vec<Vec<Option<f64>>>,
    method: ReturnMethod,
}

impl ReturnPanel {
    pub fn new(
        dates: Vec<NaiveDate>,
        assets: Vec<String>,
        returns: Vec<Vec<Option<f64>>>,
        method: ReturnMethod,
    ) -> Result<Self> {
        check_increasing(&dates)?;
        check_shape(&dates, &assets, &returns)?;
        for (t, row) in returns.iter().enumerate() {
            for (i, r) in row.iter().enumerate() {
                if let Some(r) = r {
                    let ok = r.is_finite() && (method == ReturnMethod::Log || *r > -1.0);
                    if !ok {
                        return Err(Error::InvalidInput(format!(
                            "invalid return {r} for {} on {}",
                            assets[i], dates[t]
                        )));
                    }
                }
            }
        }
        Ok(Self {
            dates,
            assets,
            returns,
            method,
        })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn assets(&self) -> &[String] {
        &self.assets
    }

    pub fn method(&self) -> ReturnMethod {
        self.method
    }

    pub fn rows(&self) -> &[Vec<Option<f64>>] {
        &self.returns
    }

    pub fn get(&self, t: usize, asset: usize) -> Option<f64> {
        self.returns[t][asset]
    }

    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    /// Observed returns on date index `t`, in asset order.
    pub fn observed(&self, t: usize) -> Vec<f64> {
        self.returns[t].iter().flatten().copied().collect()
    }

    pub fn to_table(&self) -> String {
        write_table(&self.dates, &self.assets, &self.returns)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectedCell {
    pub line: usize,
    pub date: NaiveDate,
    pub asset: String,
    pub value: f64,
}

/// Result of [`load_prices`]: the panel plus every rejected row's offending
/// cells.
#[derive(Debug, Clone)]
pub struct LoadedPrices {
    pub panel: PricePanel,
    pub rejected: Vec<RejectedCell>,
}

pub fn load_prices_path(path: impl AsRef<Path>) -> Result<LoadedPrices> {
    let file = std::fs::File::open(path)?;
    load_prices(file)
}

/// Parses a price table: header row, ISO date first column, one numeric
/// column per asset, comma or tab delimited.
///
/// Blank or unparseable cells become unobserved. A row holding any
/// non-positive price is dropped and listed in `rejected`.
pub fn load_prices(mut reader: impl Read) -> Result<LoadedPrices> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(detect_delimiter(&text))
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let header = rdr.headers()?.clone();
    if header.len() < 1 + MIN_ASSETS {
        return Err(Error::InvalidInput(format!(
            "need a date column and at least {MIN_ASSETS} asset columns, got {} columns",
            header.len()
        )));
    }
    let assets: Vec<String> = header.iter().skip(1).map(str::to_string).collect();

    let mut rows: Vec<(NaiveDate, Vec<Option<f64>>)> = Vec::new();
    let mut rejected = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let record = record?;
        let line = idx + 2;
        let raw_date = record.get(0).unwrap_or_default();
        let date = parse_date(raw_date).ok_or_else(|| Error::MalformedDate {
            line,
            value: raw_date.to_string(),
        })?;
        let mut cells = Vec::with_capacity(assets.len());
        let mut bad = Vec::new();
        for (i, asset) in assets.iter().enumerate() {
            let cell = parse_cell(record.get(i + 1).unwrap_or_default());
            match cell {
                Some(p) if p <= 0.0 => {
                    bad.push(RejectedCell {
                        line,
                        date,
                        asset: asset.clone(),
                        value: p,
                    });
                    cells.push(None);
                }
                other => cells.push(other),
            }
        }
        if bad.is_empty() {
            rows.push((date, cells));
        } else {
            for cell in &bad {
                log::warn!(
                    "line {}: rejecting row {}: non-positive price {} for {}",
                    cell.line,
                    cell.date,
                    cell.value,
                    cell.asset
                );
            }
            rejected.extend(bad);
        }
    }

    rows.sort_by_key(|(d, _)| *d);
    let (dates, prices): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    let panel = PricePanel::new(dates, assets, prices)?;
    Ok(LoadedPrices { panel, rejected })
}

/// Same layout as [`load_prices`] but for a single-valued level series
/// (index or gold closes). Uses the first value column.
pub fn load_levels(mut reader: impl Read) -> Result<DatedSeries> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(detect_delimiter(&text))
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    if rdr.headers()?.len() < 2 {
        return Err(Error::InvalidInput(
            "level file needs a date column and a value column".into(),
        ));
    }
    let mut rows = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let record = record?;
        let raw_date = record.get(0).unwrap_or_default();
        let date = parse_date(raw_date).ok_or_else(|| Error::MalformedDate {
            line: idx + 2,
            value: raw_date.to_string(),
        })?;
        if let Some(v) = parse_cell(record.get(1).unwrap_or_default()) {
            rows.push((date, v));
        }
    }
    rows.sort_by_key(|(d, _)| *d);
    let (dates, values) = rows.into_iter().unzip();
    DatedSeries::new(dates, values)
}

pub fn load_levels_path(path: impl AsRef<Path>) -> Result<DatedSeries> {
    load_levels(std::fs::File::open(path)?)
}

/// Returns from consecutive observed prices. A gap on either side leaves the
/// return unobserved; nothing is bridged.
pub fn compute_returns(panel: &PricePanel, spec: &SeriesSpec) -> ReturnPanel {
    let rows = panel
        .prices
        .windows(2)
        .map(|w| {
            w[0].iter()
                .zip(&w[1])
                .map(|(prev, cur)| match (prev, cur) {
                    (Some(p0), Some(p1)) => Some(match spec.return_method {
                        ReturnMethod::Simple => (p1 - p0) / p0,
                        ReturnMethod::Log => (p1 / p0).ln(),
                    }),
                    _ => None,
                })
                .collect()
        })
        .collect();
    ReturnPanel {
        dates: panel.dates[1..].to_vec(),
        assets: panel.assets.clone(),
        returns: rows,
        method: spec.return_method,
    }
}

/// Compounds a gap-free return panel forward from `initial` prices dated
/// `start`. Inverse of [`compute_returns`].
pub fn reconstruct_prices(
    returns: &ReturnPanel,
    start: NaiveDate,
    initial: &[f64],
) -> Result<PricePanel> {
    if initial.len() != returns.n_assets() {
        return Err(Error::InvalidInput(format!(
            "{} initial prices for {} assets",
            initial.len(),
            returns.n_assets()
        )));
    }
    let mut dates = Vec::with_capacity(returns.n_dates() + 1);
    dates.push(start);
    dates.extend_from_slice(&returns.dates);
    let mut level = initial.to_vec();
    let mut prices = vec![level.iter().copied().map(Some).collect::<Vec<_>>()];
    for (t, row) in returns.returns.iter().enumerate() {
        for (i, r) in row.iter().enumerate() {
            let r = r.ok_or_else(|| {
                Error::InvalidInput(format!(
                    "gap for {} on {}; cannot compound",
                    returns.assets[i], returns.dates[t]
                ))
            })?;
            level[i] = match returns.method {
                ReturnMethod::Simple => level[i] * (1.0 + r),
                ReturnMethod::Log => level[i] * r.exp(),
            };
        }
        prices.push(level.iter().copied().map(Some).collect());
    }
    PricePanel::new(dates, returns.assets.clone(), prices)
}

/// Weekday demeaning: each weekday's sample mean is replaced by the grand
/// mean. Weekdays absent from the series are ignored; present ones need at
/// least two observations.
pub fn deseasonalize(series: &DatedSeries, method: Deseasonalize) -> Result<DatedSeries> {
    match method {
        Deseasonalize::None => Ok(series.clone()),
        Deseasonalize::WeekdayDemean => {
            let mut groups: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
            for (d, v) in series.dates.iter().zip(&series.values) {
                let e = groups.entry(d.weekday().num_days_from_monday()).or_default();
                e.0 += v;
                e.1 += 1;
            }
            if let Some((day, (_, n))) = groups.iter().find(|(_, (_, n))| *n < 2) {
                return Err(Error::InvalidInput(format!(
                    "weekday {} has {n} observation(s); weekday demeaning needs at least 2",
                    weekday_name(*day)
                )));
            }
            let grand = series.values.iter().sum::<f64>() / series.len() as f64;
            let values = series
                .dates
                .iter()
                .zip(&series.values)
                .map(|(d, v)| {
                    let (sum, n) = groups[&d.weekday().num_days_from_monday()];
                    v - sum / n as f64 + grand
                })
                .collect();
            Ok(DatedSeries {
                dates: series.dates.clone(),
                values,
            })
        }
    }
}

/// Inner join on dates.
pub fn align(left: &DatedSeries, right: &DatedSeries) -> Result<(DatedSeries, DatedSeries)> {
    let idx = intersect_indices(&left.dates, &right.dates);
    if idx.is_empty() {
        return Err(Error::EmptyIntersection {
            left: left.span(),
            right: right.span(),
        });
    }
    let pick = |s: &DatedSeries, side: fn(&(usize, usize)) -> usize| DatedSeries {
        dates: idx.iter().map(|p| s.dates[side(p)]).collect(),
        values: idx.iter().map(|p| s.values[side(p)]).collect(),
    };
    Ok((pick(left, |p| p.0), pick(right, |p| p.1)))
}

/// Index pairs `(i, j)` with `a[i] == b[j]`, both inputs sorted ascending.
pub(crate) fn intersect_indices(a: &[NaiveDate], b: &[NaiveDate]) -> Vec<(usize, usize)> {
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push((i, j));
                i += 1;
                j += 1;
            }
        }
    }
    out
}

pub(crate) fn parse_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").ok()
}

fn parse_cell(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

pub(crate) fn detect_delimiter(text: &str) -> u8 {
    let first = text.lines().next().unwrap_or_default();
    if first.contains('\t') {
        b'\t'
    } else {
        b','
    }
}

fn weekday_name(day: u32) -> &'static str {
    ["Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun"][day as usize]
}

fn check_increasing(dates: &[NaiveDate]) -> Result<()> {
    for w in dates.windows(2) {
        if w[1] == w[0] {
            return Err(Error::DuplicateDate(w[0]));
        }
        if w[1] < w[0] {
            return Err(Error::InvalidInput(format!(
                "dates not increasing at {} -> {}",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}

fn check_shape<T>(dates: &[NaiveDate], assets: &[String], rows: &[Vec<T>]) -> Result<()> {
    if rows.len() != dates.len() {
        return Err(Error::InvalidInput(format!(
            "{} rows for {} dates",
            rows.len(),
            dates.len()
        )));
    }
    if let Some((t, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != assets.len()) {
        return Err(Error::InvalidInput(format!(
            "row {} has {} cells for {} assets",
            dates[t],
            row.len(),
            assets.len()
        )));
    }
    Ok(())
}

fn write_table(dates: &[NaiveDate], assets: &[String], rows: &[Vec<Option<f64>>]) -> String {
    let mut out = String::from("date");
    for a in assets {
        out.push(',');
        out.push_str(a);
    }
    out.push('\n');
    for (d, row) in dates.iter().zip(rows) {
        out.push_str(&d.format("%Y-%m-%d").to_string());
        for v in row {
            out.push(',');
            if let Some(v) = v {
                out.push_str(&v.to_string());
            }
        }
        out.push('\n');
    }
    out
}
