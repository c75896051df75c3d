use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

/// Every failure the estimation core can report.
///
/// Validation variants are raised while building the typed inputs; the
/// remaining ones come out of preprocessing and estimation. `Stage` wraps an
/// error with the pipeline stage it surfaced in.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("treated unit `{0}` appears more than once in the treatment table")]
    DuplicateTreatedUnit(String),
    #[error("treated unit `{0}` has no rows in the observations")]
    UnknownTreatedUnit(String),
    #[error("observations have no column named `{0}`")]
    MissingOutcomeColumn(String),
    #[error("observations have no column named `{0}`")]
    MissingColumn(String),
    #[error("outcome for unit `{unit}` at {date} is not numeric: `{value}`")]
    NonNumericOutcome {
        unit: String,
        date: String,
        value: String,
    },
    #[error("unit `{unit}` has more than one row dated {date}")]
    DuplicateObservation { unit: String, date: String },
    #[error("every unit in the observations is treated; no never-treated controls remain")]
    NoControlUnits,
    #[error("config is missing mandatory field `{0}`")]
    MissingConfigField(&'static str),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("`{0}` is not an ISO-8601 date (YYYY-MM-DD)")]
    InvalidDate(String),
    #[error("date grid is irregular: {0}")]
    IrregularGrid(String),
    #[error("dataset is empty")]
    EmptyDataset,

    #[error("lag {lag} needs more history than the {periods} periods on the grid")]
    LagExceedsHistory { lag: usize, periods: usize },
    #[error("column `{0}` is not in the dataset")]
    UnknownColumn(String),

    #[error("treatment table has no treated units")]
    NoTreatedUnits,
    #[error("cohort {cohort}: window {needed_from}..{needed_to} falls outside the grid 0..{grid_len}")]
    WindowOutOfRange {
        cohort: usize,
        needed_from: i64,
        needed_to: i64,
        grid_len: usize,
    },
    #[error("no estimates to aggregate")]
    NoEstimates,

    #[error("{rows} rows is too few for min_leaf {min_leaf}")]
    TooFewRows { rows: usize, min_leaf: usize },
    #[error("fold {fold} has {size} rows; every fold needs at least 2")]
    FoldTooSmall { fold: usize, size: usize },
    #[error("shape mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),

    #[error("treatment is perfectly predicted by the covariates (sum of squared treatment residuals {0:e})")]
    NoTreatmentVariation(f64),
    #[error("cross-section needs at least one treated and one control row")]
    DegenerateCrossSection,
    #[error("learner failed on fold {fold}: {source}")]
    LearnerFold { fold: usize, source: Box<Error> },

    #[error("factor rank {requested} exceeds the maximum {max} for this panel")]
    RankTooLarge { requested: usize, max: usize },
    #[error("{available} pre-treatment periods available; at least {required} are required")]
    InsufficientPreTreatment { available: usize, required: usize },
    #[error("{controls} control units cannot support factor rank {rank}")]
    TooFewControls { controls: usize, rank: usize },
    #[error("{events} observation rows exceed the synthetic-control limit of {limit}; use DML")]
    GscTooLarge { events: usize, limit: usize },

    #[error("no estimator is feasible for this data: {}", .0.join("; "))]
    NoFeasibleEstimator(Vec<String>),

    #[error("control baseline is zero; uplift is undefined")]
    ZeroControlBaseline,

    #[error("synthetic data spec: {0}")]
    Synth(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn at(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// The innermost error, with stage wrappers removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } | Error::LearnerFold { source, .. } => source.root(),
            e => e,
        }
    }

    /// Whether the failure is about the inputs (as opposed to estimation).
    pub fn is_validation(&self) -> bool {
        matches!(
            self.root(),
            Error::DuplicateTreatedUnit(_)
                | Error::UnknownTreatedUnit(_)
                | Error::MissingOutcomeColumn(_)
                | Error::MissingColumn(_)
                | Error::NonNumericOutcome { .. }
                | Error::DuplicateObservation { .. }
                | Error::NoControlUnits
                | Error::MissingConfigField(_)
                | Error::InvalidConfig(_)
                | Error::InvalidDate(_)
                | Error::IrregularGrid(_)
                | Error::EmptyDataset
                | Error::NoTreatedUnits
        )
    }

    /// Stable machine-readable code for the root error.
    pub fn code(&self) -> &'static str {
        match self.root() {
            Error::DuplicateTreatedUnit(_) => "DuplicateTreatedUnit",
            Error::UnknownTreatedUnit(_) => "UnknownTreatedUnit",
            Error::MissingOutcomeColumn(_) => "MissingOutcomeColumn",
            Error::MissingColumn(_) => "MissingColumn",
            Error::NonNumericOutcome { .. } => "NonNumericOutcome",
            Error::DuplicateObservation { .. } => "DuplicateObservation",
            Error::NoControlUnits => "NoControlUnits",
            Error::MissingConfigField(_) => "MissingConfigField",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::InvalidDate(_) => "InvalidDate",
            Error::IrregularGrid(_) => "IrregularGrid",
            Error::EmptyDataset => "EmptyDataset",
            Error::LagExceedsHistory { .. } => "LagExceedsHistory",
            Error::UnknownColumn(_) => "UnknownColumn",
            Error::NoTreatedUnits => "NoTreatedUnits",
            Error::WindowOutOfRange { .. } => "WindowOutOfRange",
            Error::NoEstimates => "NoEstimates",
            Error::TooFewRows { .. } => "TooFewRows",
            Error::FoldTooSmall { .. } => "FoldTooSmall",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::InvalidHyperparameter(_) => "InvalidHyperparameter",
            Error::NoTreatmentVariation(_) => "NoTreatmentVariation",
            Error::DegenerateCrossSection => "DegenerateCrossSection",
            Error::RankTooLarge { .. } => "RankTooLarge",
            Error::InsufficientPreTreatment { .. } => "InsufficientPreTreatment",
            Error::TooFewControls { .. } => "TooFewControls",
            Error::GscTooLarge { .. } => "GscTooLarge",
            Error::NoFeasibleEstimator(_) => "NoFeasibleEstimator",
            Error::ZeroControlBaseline => "ZeroControlBaseline",
            Error::Synth(_) => "SynthSpec",
            Error::LearnerFold { .. } | Error::Stage { .. } => unreachable!("root() strips wrappers"),
        }
    }
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
