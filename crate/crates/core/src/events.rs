//! Exogenous regressors for the event-augmented regression: central-bank
//! announcement dummies and index/gold returns.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{detect_delimiter, parse_date};
use crate::series::DatedSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Authority {
    #[serde(rename = "FOMC")]
    Fomc,
    #[serde(rename = "ECB")]
    Ecb,
    #[serde(rename = "BOJ")]
    Boj,
}

impl fmt::Display for Authority {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Authority::Fomc => "FOMC",
            Authority::Ecb => "ECB",
            Authority::Boj => "BOJ",
        })
    }
}

impl FromStr for Authority {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_uppercase().as_str() {
            "FOMC" => Ok(Authority::Fomc),
            "ECB" => Ok(Authority::Ecb),
            "BOJ" => Ok(Authority::Boj),
            _ => Err(format!("unknown authority {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Hike,
    Cut,
    Hold,
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Action::Hike => "hike",
            Action::Cut => "cut",
            Action::Hold => "hold",
        })
    }
}

impl FromStr for Action {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "hike" => Ok(Action::Hike),
            "cut" => Ok(Action::Cut),
            "hold" => Ok(Action::Hold),
            _ => Err(format!("unknown action {s:?} (expected hike, cut or hold)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Announcement {
    pub date: NaiveDate,
    pub authority: Authority,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct AnnouncementCalendar {
    entries: Vec<Announcement>,
}

impl AnnouncementCalendar {
    /// Sorts entries and rejects duplicate (date, authority) pairs.
    pub fn new(mut entries: Vec<Announcement>) -> Result<Self> {
        entries.sort();
        for w in entries.windows(2) {
            if w[0].date == w[1].date && w[0].authority == w[1].authority {
                return Err(Error::DuplicateAnnouncement {
                    date: w[0].date,
                    authority: w[0].authority.to_string(),
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[Announcement] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalendarDiagnostic {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct LoadedCalendar {
    pub calendar: AnnouncementCalendar,
    pub rejected: Vec<CalendarDiagnostic>,
}

pub fn load_calendar_path(path: impl AsRef<Path>) -> Result<LoadedCalendar> {
    load_calendar(std::fs::File::open(path)?)
}

/// Reads `date,authority,action` rows. Rows with an unknown authority or
/// action, or a bad date, are skipped and reported.
pub fn load_calendar(mut reader: impl Read) -> Result<LoadedCalendar> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    if text.trim().is_empty() {
        return Err(Error::InvalidInput("calendar file is empty".into()));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(detect_delimiter(&text))
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_ascii_lowercase).collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::InvalidInput(format!("calendar header lacks {name:?} column")))
    };
    let (di, ai, ci) = (col("date")?, col("authority")?, col("action")?);

    let mut entries = Vec::new();
    let mut rejected = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let record = record?;
        let line = idx + 2;
        let field = |i: usize| record.get(i).unwrap_or_default();
        let parsed = parse_date(field(di))
            .ok_or_else(|| format!("bad date {:?}", field(di)))
            .and_then(|date| {
                Ok(Announcement {
                    date,
                    authority: field(ai).parse()?,
                    action: field(ci).parse()?,
                })
            });
        match parsed {
            Ok(a) => entries.push(a),
            Err(message) => {
                log::warn!("calendar line {line}: {message}; row skipped");
                rejected.push(CalendarDiagnostic { line, message });
            }
        }
    }
    if entries.is_empty() {
        return Err(Error::InvalidInput("calendar has no valid rows".into()));
    }
    Ok(LoadedCalendar {
        calendar: AnnouncementCalendar::new(entries)?,
        rejected,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExogKind {
    AnnouncementDummy,
    IndexReturn,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExogSeries {
    pub dates: Vec<NaiveDate>,
    pub values: Vec<f64>,
    pub kind: ExogKind,
    pub label: String,
}

impl ExogSeries {
    pub fn new(
        dates: Vec<NaiveDate>,
        values: Vec<f64>,
        kind: ExogKind,
        label: impl Into<String>,
    ) -> Result<Self> {
        let s = DatedSeries::new(dates, values)?;
        if kind == ExogKind::AnnouncementDummy && s.values.iter().any(|v| *v != 0.0 && *v != 1.0) {
            return Err(Error::InvalidInput("dummy values must be 0 or 1".into()));
        }
        Ok(Self {
            dates: s.dates,
            values: s.values,
            kind,
            label: label.into(),
        })
    }

    pub fn series(&self) -> DatedSeries {
        DatedSeries {
            dates: self.dates.clone(),
            values: self.values.clone(),
        }
    }
}

/// Target dates marked around each mapped announcement date.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EventWindow {
    pub before: usize,
    pub after: usize,
}

/// Where one announcement landed on the target calendar.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DummyMapping {
    pub announcement: Announcement,
    /// `None` when the date falls outside the target range.
    pub mapped_to: Option<NaiveDate>,
    pub rolled: bool,
}

#[derive(Debug, Clone)]
pub struct DummyResult {
    pub series: ExogSeries,
    pub mappings: Vec<DummyMapping>,
    pub all_zero: bool,
}

/// Indicator series over `dates`: 1 where `authority` took an action in
/// `actions`, else 0. Announcements on dates missing from `dates` roll
/// forward to the next target date; those after the last target date (or
/// before the first) are dropped.
pub fn to_dummy(
    cal: &AnnouncementCalendar,
    authority: Authority,
    actions: &[Action],
    dates: &[NaiveDate],
    window: EventWindow,
) -> Result<DummyResult> {
    if dates.is_empty() {
        return Err(Error::InvalidInput("target calendar is empty".into()));
    }
    let mut values = vec![0.0; dates.len()];
    let mut mappings = Vec::new();
    let filter: BTreeSet<Action> = actions.iter().copied().collect();
    for a in cal
        .entries
        .iter()
        .filter(|a| a.authority == authority && filter.contains(&a.action))
    {
        let pos = dates.partition_point(|d| *d < a.date);
        let mapped = if a.date < dates[0] || pos == dates.len() {
            None
        } else {
            Some(pos)
        };
        match mapped {
            Some(t) => {
                let rolled = dates[t] != a.date;
                if rolled {
                    log::info!("{} {} on {} rolled to {}", a.authority, a.action, a.date, dates[t]);
                }
                let lo = t.saturating_sub(window.before);
                let hi = (t + window.after).min(dates.len() - 1);
                values[lo..=hi].iter_mut().for_each(|v| *v = 1.0);
                mappings.push(DummyMapping {
                    announcement: *a,
                    mapped_to: Some(dates[t]),
                    rolled,
                });
            }
            None => {
                log::info!(
                    "{} {} on {} outside target range; dropped",
                    a.authority,
                    a.action,
                    a.date
                );
                mappings.push(DummyMapping {
                    announcement: *a,
                    mapped_to: None,
                    rolled: false,
                });
            }
        }
    }
    let all_zero = values.iter().all(|v| *v == 0.0);
    let label = format!(
        "{authority} {}",
        actions.iter().map(|a| a.to_string()).collect::<Vec<_>>().join("/")
    );
    if all_zero {
        log::warn!("dummy {label:?} is zero on every target date");
    }
    Ok(DummyResult {
        series: ExogSeries::new(dates.to_vec(), values, ExogKind::AnnouncementDummy, label)?,
        mappings,
        all_zero,
    })
}

/// The six announcement dummies of the interest-rate event regressions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DummyPreset {
    FomcHike,
    EcbCut,
    BojCut,
    FomcHold,
    EcbHold,
    BojHold,
}

impl DummyPreset {
    pub const ALL: [DummyPreset; 6] = [
        DummyPreset::FomcHike,
        DummyPreset::EcbCut,
        DummyPreset::BojCut,
        DummyPreset::FomcHold,
        DummyPreset::EcbHold,
        DummyPreset::BojHold,
    ];

    pub fn authority(self) -> Authority {
        match self {
            DummyPreset::FomcHike | DummyPreset::FomcHold => Authority::Fomc,
            DummyPreset::EcbCut | DummyPreset::EcbHold => Authority::Ecb,
            DummyPreset::BojCut | DummyPreset::BojHold => Authority::Boj,
        }
    }

    pub fn action(self) -> Action {
        match self {
            DummyPreset::FomcHike => Action::Hike,
            DummyPreset::EcbCut | DummyPreset::BojCut => Action::Cut,
            _ => Action::Hold,
        }
    }

    /// Column heading, e.g. `FOMC (+)`.
    pub fn label(self) -> String {
        let tag = match self.action() {
            Action::Hike => "(+)",
            Action::Cut => "(-)",
            Action::Hold => "(No change)",
        };
        format!("{} {tag}", self.authority())
    }

    pub fn build(
        self,
        cal: &AnnouncementCalendar,
        dates: &[NaiveDate],
        window: EventWindow,
    ) -> Result<DummyResult> {
        let mut out = to_dummy(cal, self.authority(), &[self.action()], dates, window)?;
        out.series.label = self.label();
        Ok(out)
    }
}

/// Simple percent-difference returns of a level series.
pub fn index_returns(levels: &DatedSeries, label: impl Into<String>) -> Result<ExogSeries> {
    if let Some(t) = levels.values.iter().position(|v| !(*v > 0.0)) {
        return Err(Error::InvalidInput(format!(
            "non-positive level {} on {}",
            levels.values[t], levels.dates[t]
        )));
    }
    if levels.len() < 2 {
        return Err(Error::TooFewObservations { needed: 1, got: levels.len() });
    }
    let values = levels.values.windows(2).map(|w| (w[1] - w[0]) / w[0]).collect();
    ExogSeries::new(levels.dates[1..].to_vec(), values, ExogKind::IndexReturn, label)
}
