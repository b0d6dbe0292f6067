use std::path::PathBuf;

/// Errors raised anywhere in the training pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("numeric error in {location}: {detail}")]
    Numeric { location: String, detail: String },

    #[error("stale cache: parameters changed since the forward pass (cache v{cached}, params v{current})")]
    StaleCache { cached: u64, current: u64 },

    #[error("data error: {0}")]
    Data(String),

    #[error("ordering error: month tag {got} is not newer than latest stored tag {latest} for {side} side")]
    Ordering { side: &'static str, got: u32, latest: u32 },

    #[error("insufficient history: {side} side holds {have} snapshot(s), {need} required")]
    InsufficientHistory { side: &'static str, have: usize, need: usize },

    #[error("format error at byte {offset}: {detail}")]
    Format { offset: u64, detail: String },

    #[error("transfer error: structures diverge at parameter `{param}`")]
    Transfer { param: String },

    #[error("overlap error: snapshot months {snapshot_months:?} overlap training month {training_month}")]
    Overlap { snapshot_months: Vec<u32>, training_month: u32 },

    #[error("metric undefined: {0}")]
    MetricUndefined(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn numeric(location: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numeric {
            location: location.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn format(offset: u64, detail: impl Into<String>) -> Self {
        Error::Format {
            offset,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
