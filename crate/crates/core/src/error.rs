use chrono::NaiveDate;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("line {line}: malformed date {value:?}")]
    MalformedDate { line: usize, value: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("duplicate date {0}")]
    DuplicateDate(NaiveDate),

    #[error("dates do not overlap: left spans {left}, right spans {right}")]
    EmptyIntersection { left: String, right: String },

    #[error("too few observations: need more than {needed}, got {got}")]
    TooFewObservations { needed: usize, got: usize },

    #[error("date {date}: only {got} assets observed, need {needed}")]
    InsufficientAssets { date: NaiveDate, got: usize, needed: usize },

    #[error("design matrix is rank deficient ({detail}); collinear columns: {}", columns.join(", "))]
    RankDeficient { columns: Vec<String>, detail: String },

    #[error("no coefficient labelled {0:?}")]
    MissingLabel(String),

    #[error("series is constant")]
    ConstantSeries,

    #[error("zero likelihood at observation {index}{}", date.map(|d| format!(" ({d})")).unwrap_or_default())]
    ZeroLikelihood { index: usize, date: Option<NaiveDate> },

    #[error("all {0} EM restarts were degenerate")]
    AllRestartsDegenerate(usize),

    #[error("instance too large for enumeration: {0} regime paths")]
    InstanceTooLarge(f64),

    #[error("invalid transition matrix: row {row} {reason}")]
    InvalidTransition { row: usize, reason: String },

    #[error("CSAD floor hit on {floored} of {total} periods (limit 1%); raise intercepts or lower noise")]
    FloorBudgetExceeded { floored: usize, total: usize },

    #[error("duplicate announcement for {authority} on {date}")]
    DuplicateAnnouncement { date: NaiveDate, authority: String },
}
