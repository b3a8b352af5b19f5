//! Simulation and analysis of a heralded-photon quantum memory node based on
//! an atomic frequency comb: comb spectra, control pulses, optical pumping,
//! echo efficiency, a gated pair source and the coincidence analysis.

// `!(x > 0.0)` rejects NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod correlator;
pub mod error;
pub mod events;
pub mod memory;
pub mod pulse;
pub mod pumping;
pub mod source;
pub mod spectral;

pub use correlator::{BinSpec, CorrelationData, CorrelatorConfig, G2Result, MultimodeResult};
pub use error::{Error, Result};
pub use events::{Event, EventStream, IDLER, NO_TRIAL, SIGNAL, SYNC};
pub use memory::{MemoryParams, MemorySpec};
pub use source::{DetectorParams, IdlerLink, SequenceTiming, SimulationSetup, SourceParams};
pub use spectral::{CombSpec, FrequencyGrid, InhomogeneousLine, SpectralProfile, ToothShape};
