use thiserror::Error;

/// Errors surfaced by the estimator, simulator, and I/O layers.
#[derive(Error, Debug)]
pub enum Error {
    #[error("non-monotonic time: dt = {0} s must be positive")]
    NonMonotonicTime(f64),
    #[error("IMU gap too large: dt = {0} s exceeds 0.1 s dropout tolerance")]
    GapTooLarge(f64),
    #[error("IMU window does not cover the scan: need [{need_start}, {need_end}], have [{have_start}, {have_end}]")]
    CoverageGap {
        need_start: f64,
        need_end: f64,
        have_start: f64,
        have_end: f64,
    },
    #[error("degenerate point set: plane fit is rank deficient")]
    Degenerate,
    #[error("unknown UWB anchor id {0}")]
    UnknownAnchor(u32),
    #[error("antenna within 0.1 m of anchor {0}: distance residual is singular")]
    AntennaAtAnchor(u32),
    #[error("innovation covariance is singular")]
    SingularInnovation,
    #[error("numerical failure in update: non-finite iterate")]
    NumericalFailure,
    #[error("need at least 3 non-collinear anchors, got {0}")]
    InsufficientAnchors(usize),
    #[error("anchor geometry is degenerate (collinear anchors)")]
    DegenerateGeometry,
    #[error("robot not stationary during initialization window (accel spread {0} m/s^2 exceeds 0.05)")]
    NotStationary(f64),
    #[error("checkpoint t = {0} s outside estimated trajectory span [{1}, {2}]")]
    NoOverlap(f64, f64, f64),
    #[error("empty record stream")]
    EmptyStream,
    #[error("initialization window too short: {0} IMU samples, need at least 100")]
    TooFewImuSamples(usize),
    #[error("record {index} (t = {t} s): {source}")]
    AtRecord {
        index: usize,
        t: f64,
        #[source]
        source: Box<Error>,
    },
    #[error("log parse error at line {line}: {msg}")]
    LogParse { line: usize, msg: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn at_record(self, index: usize, t: f64) -> Error {
        Error::AtRecord {
            index,
            t,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
