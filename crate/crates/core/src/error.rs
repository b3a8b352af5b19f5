use thiserror::Error;

/// Errors produced by the simulation and analysis routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("grid too coarse: spacing {spacing_mhz:.6} MHz exceeds {limit_mhz:.6} MHz (tooth width / 8)")]
    GridTooCoarse { spacing_mhz: f64, limit_mhz: f64 },

    #[error("range [{lo:.3}, {hi:.3}] MHz is not contained in the grid span [{grid_lo:.3}, {grid_hi:.3}] MHz")]
    OutsideGrid {
        lo: f64,
        hi: f64,
        grid_lo: f64,
        grid_hi: f64,
    },

    #[error("line shape normalization off by {0:e} after truncation to the grid")]
    Normalization(f64),

    #[error("sample rate {sample_rate:.3e} S/s too low for {required:.3e} S/s")]
    SampleRateTooLow { sample_rate: f64, required: f64 },

    #[error("comb spacing {delta_mhz} MHz is not resolvable within {duration_s} s")]
    UnresolvableSpacing { delta_mhz: f64, duration_s: f64 },

    #[error("waveform clips: peak |a| = {0}")]
    Clipping(f64),

    #[error("waveform has zero power")]
    ZeroPower,

    #[error("integration step {dt:e} s exceeds stiffness bound {limit:e} s")]
    StiffStep { dt: f64, limit: f64 },

    #[error("population of level {level} became negative ({value:e})")]
    NegativePopulation { level: usize, value: f64 },

    #[error("preparation sequence does not match the nominal template: {0}")]
    SequenceTemplate(String),

    #[error("analysis band holds only {0:.2} comb periods (need at least 3)")]
    BandTooNarrow(f64),

    #[error("echo probability {p_echo} plus transmission {p_trans} exceeds 1")]
    InconsistentMemory { p_echo: f64, p_trans: f64 },

    #[error("events are not sorted by time at index {0}")]
    Unsorted(usize),

    #[error("no usable accidental region in the histogram")]
    NoSideband,

    #[error("non-positive corrected reference count ({0})")]
    NonPositiveReference(f64),

    #[error("stream carries no sync events")]
    MissingSync,

    #[error("no significant peak near {tau_ns:.1} ns (SNR {snr:.2})")]
    NoSignificantPeak { tau_ns: f64, snr: f64 },

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
