//! Node configuration: one TOML document with a section per subsystem.

use std::path::Path;

use afc_core::memory::{MemoryParams, MemorySpec};
use afc_core::pulse::SechChirpParams;
use afc_core::pumping::NominalSequence;
use afc_core::source::{DetectorParams, IdlerLink, SequenceTiming, SimulationSetup, SourceParams};
use afc_core::spectral::{CombSpec, FrequencyGrid, InhomogeneousLine, ToothShape};
use serde::{Deserialize, Serialize};

use crate::NodeError;

/// Built-in nominal configuration.
pub const NOMINAL: &str = r#"# Nominal memory node.
# Values marked "fit" come from `afc-node calibrate`; the others are
# measured or set quantities of the setup.

[run]
seed = 20240611
storage_time_us = 25.0      # 1/Δ; presets 1, 5, 10, 25
fiber_length_km = 0.0
duration_s = 60.0           # used by `simulate`

[comb]
center_mhz = 0.0
bandwidth_mhz = 100.0       # prepared memory bandwidth
finesse = 2.0
tooth_shape = "square"
peak_depth = 7.0            # fit: echo efficiency 9.8% at 5 µs before mode matching
background_depth = 0.136    # fit, same target

[line]
alpha_per_cm = 1.6          # absorption coefficient of the crystal
length_cm = 1.2
passes = 4                  # four passes through the crystal
fwhm_mhz = 1300.0           # inhomogeneous linewidth
center_mhz = 0.0

[pulse]
center_frequency_mhz = 150.0
chirp_bandwidth_mhz = 100.0
duration_s = 1e-3
truncation = 10.0
sample_rate = 2e9
comb_carrier_mhz = 0.0
comb_duration_s = 1e-4
comb_sample_rate = 8e8

[pumping]
polarization_ms = 200.0     # spin polarization stage
burn_ms = 50.0              # comb burning stage
settle_ms = 5.0
pulse_ms = 1.0
polarization_power_mw = 40.0
burn_power_mw = 10.0
polarization_rate_per_mw = 250.0
burn_rate_per_mw = 100.0
polarization_band_mhz = [-50.0, 50.0]
polarization_edge_mhz = 0.5
burn_edge_mhz = 5e-4
grid_span_mhz = 400.0
grid_points = 1048576

[memory]
t2_afc_us = 69.0            # effective coherence time, exp(-4t/T2) decay
signal_fwhm_mhz = 64.0      # filtered signal linewidth
mode_matching = 0.651       # fit: measured efficiency 4.9% at 5 µs
echo_sigma_ns = 2.72        # fit: integrated/peak ratio of the 25 µs data
photon_span_mhz = 8000.0
photon_points = 80001
outside_population = 0.25   # thermal spin population outside the band
transparency_width_mhz = 200.0
transparency_depth = 0.2    # residual depth d0 of the transparency window

[source]
mean_pairs_per_mode = 0.0144   # fit: peak g2 of the four storage times
signal_filter_fwhm_mhz = 64.0
idler_filter_fwhm_mhz = 500.0
pump_power_uw = 270.0
reference_power_uw = 270.0

[detectors]
efficiency_signal = 0.20
efficiency_idler = 0.80
dark_rate_signal_hz = 30.0
dark_rate_idler_hz = 100.0
jitter_fwhm_signal_ns = 0.694   # fit: g2_ss(0) = 1.8 in 2 ns bins
jitter_fwhm_idler_ns = 1.816    # fit: g2_ii(0) = 1.7 in 2 ns bins
signal_path_transmission = 2.68e-3   # fit: signal noise level from the g2 decay
idler_path_transmission = 0.9

[link]
delay_us_per_km = 4.9
loss_db_per_km = 0.2

[timing]
repetition_hz = 2.3
polarization_ms = 200.0
burn_ms = 50.0
measurement_ms = 50.0

[correlator]
bin_ns = 2.0
shifts = 4
smoothing_bins = 5
margin_ns = 1000.0
mode_duration_ns = 20.0
echo_window_ns = 20.0
reference_window_ns = 15.0
sync_tolerance_ps = 1000
chunk_periods = 16

[scenarios]
storage_times_us = [1.0, 5.0, 10.0, 25.0]
acquisition_min = [1.15, 2.32, 3.775, 8.15]
g2_targets = [28.0, 26.0, 21.0, 14.0]
g2_target_sigmas = [4.0, 4.0, 2.0, 1.0]
autocorrelation_min = 0.1
autocorrelation_mean_pairs = 0.1   # bunching does not depend on the pair rate
g2_ss_target = [1.8, 0.1]
g2_ii_target = [1.7, 0.2]
efficiency_storage_us = 5.0
efficiency_echo_min = 1.15
efficiency_reference_min = 0.6
efficiency_target = [0.049, 0.004]
multimode_storage_us = 25.0
multimode_min = 8.15
multimode_target = [7.5, 0.2]
fiber_storage_us = 25.0
fiber_km = 4.802
fiber_min = 8.15
fiber_target = [12.0, 3.0]
pulse_storage_us = 25.0
pulse_components = [10, 30, 100, 300, 1000, 2500]
papr_components = 100
prep_storage_us = 25.0
"#;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub storage_time_us: f64,
    pub fiber_length_km: f64,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CombSection {
    pub center_mhz: f64,
    pub bandwidth_mhz: f64,
    pub finesse: f64,
    pub tooth_shape: ToothShape,
    pub peak_depth: f64,
    pub background_depth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseSection {
    pub center_frequency_mhz: f64,
    pub chirp_bandwidth_mhz: f64,
    pub duration_s: f64,
    pub truncation: f64,
    pub sample_rate: f64,
    pub comb_carrier_mhz: f64,
    pub comb_duration_s: f64,
    pub comb_sample_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PumpingSection {
    pub polarization_ms: f64,
    pub burn_ms: f64,
    pub settle_ms: f64,
    pub pulse_ms: f64,
    pub polarization_power_mw: f64,
    pub burn_power_mw: f64,
    pub polarization_rate_per_mw: f64,
    pub burn_rate_per_mw: f64,
    pub polarization_band_mhz: (f64, f64),
    pub polarization_edge_mhz: f64,
    pub burn_edge_mhz: f64,
    pub grid_span_mhz: f64,
    pub grid_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemorySection {
    pub t2_afc_us: f64,
    pub signal_fwhm_mhz: f64,
    pub mode_matching: f64,
    pub echo_sigma_ns: f64,
    pub photon_span_mhz: f64,
    pub photon_points: usize,
    pub outside_population: f64,
    pub transparency_width_mhz: f64,
    pub transparency_depth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSection {
    pub delay_us_per_km: f64,
    pub loss_db_per_km: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingSection {
    pub repetition_hz: f64,
    pub polarization_ms: f64,
    pub burn_ms: f64,
    pub measurement_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrelatorSection {
    pub bin_ns: f64,
    pub shifts: usize,
    pub smoothing_bins: usize,
    pub margin_ns: f64,
    pub mode_duration_ns: f64,
    pub echo_window_ns: f64,
    pub reference_window_ns: f64,
    pub sync_tolerance_ps: i64,
    pub chunk_periods: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub storage_times_us: Vec<f64>,
    pub acquisition_min: Vec<f64>,
    pub g2_targets: Vec<f64>,
    pub g2_target_sigmas: Vec<f64>,
    pub autocorrelation_min: f64,
    pub autocorrelation_mean_pairs: f64,
    pub g2_ss_target: (f64, f64),
    pub g2_ii_target: (f64, f64),
    pub efficiency_storage_us: f64,
    pub efficiency_echo_min: f64,
    pub efficiency_reference_min: f64,
    pub efficiency_target: (f64, f64),
    pub multimode_storage_us: f64,
    pub multimode_min: f64,
    pub multimode_target: (f64, f64),
    pub fiber_storage_us: f64,
    pub fiber_km: f64,
    pub fiber_min: f64,
    pub fiber_target: (f64, f64),
    pub pulse_storage_us: f64,
    pub pulse_components: Vec<usize>,
    pub papr_components: usize,
    pub prep_storage_us: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeConfig {
    pub run: RunSection,
    pub comb: CombSection,
    pub line: InhomogeneousLine,
    pub pulse: PulseSection,
    pub pumping: PumpingSection,
    pub memory: MemorySection,
    pub source: SourceParams,
    pub detectors: DetectorParams,
    pub link: LinkSection,
    pub timing: TimingSection,
    pub correlator: CorrelatorSection,
    pub scenarios: ScenarioSection,
}

/// What the signal photons meet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemoryMode {
    Comb,
    Transparency,
    Bypass,
}

fn field(section: &str, name: &str, err: afc_core::Error) -> NodeError {
    NodeError::Config(format!("[{section}] {name}: {err}"))
}

fn check(ok: bool, section: &str, name: &str, reason: &str) -> Result<(), NodeError> {
    if ok {
        Ok(())
    } else {
        Err(NodeError::Config(format!("[{section}] {name}: {reason}")))
    }
}

impl NodeConfig {
    pub fn nominal() -> Self {
        Self::from_toml(NOMINAL).expect("built-in preset parses")
    }

    pub fn from_toml(text: &str) -> Result<Self, NodeError> {
        let cfg: Self = toml::from_str(text).map_err(|e| NodeError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, NodeError> {
        let text = std::fs::read_to_string(path).map_err(|e| NodeError::Io(path.display().to_string(), e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serialises")
    }

    pub fn validate(&self) -> Result<(), NodeError> {
        check(
            self.run.storage_time_us > 0.0,
            "run",
            "storage_time_us",
            "must be positive",
        )?;
        check(
            self.run.fiber_length_km >= 0.0,
            "run",
            "fiber_length_km",
            "must be non-negative",
        )?;
        check(self.run.duration_s > 0.0, "run", "duration_s", "must be positive")?;
        self.comb_spec(self.run.storage_time_us)
            .validate()
            .map_err(|e| field("comb", "*", e))?;
        self.source.validate().map_err(|e| field("source", "*", e))?;
        self.detectors.validate().map_err(|e| field("detectors", "*", e))?;
        self.timing(self.run.storage_time_us)
            .validate()
            .map_err(|e| field("timing", "*", e))?;
        self.memory_spec(self.run.storage_time_us)
            .validate()
            .map_err(|e| field("memory", "*", e))?;
        check(self.correlator.bin_ns > 0.0, "correlator", "bin_ns", "must be positive")?;
        check(
            self.correlator.mode_duration_ns > 0.0,
            "correlator",
            "mode_duration_ns",
            "must be positive",
        )?;
        check(
            self.correlator.chunk_periods > 0,
            "correlator",
            "chunk_periods",
            "must be positive",
        )?;
        let s = &self.scenarios;
        let n = s.storage_times_us.len();
        check(
            s.acquisition_min.len() == n && s.g2_targets.len() == n && s.g2_target_sigmas.len() == n,
            "scenarios",
            "storage_times_us",
            "acquisition_min, g2_targets and g2_target_sigmas need one entry per storage time",
        )?;
        check(
            s.storage_times_us.iter().all(|&t| t > 0.0),
            "scenarios",
            "storage_times_us",
            "must be positive",
        )?;
        Ok(())
    }

    pub fn comb_spec(&self, storage_time_us: f64) -> CombSpec {
        CombSpec {
            center_mhz: self.comb.center_mhz,
            bandwidth_mhz: self.comb.bandwidth_mhz,
            delta_mhz: 1.0 / storage_time_us,
            finesse: self.comb.finesse,
            tooth_shape: self.comb.tooth_shape,
            peak_depth: self.comb.peak_depth,
            background_depth: self.comb.background_depth,
        }
    }

    pub fn memory_spec(&self, storage_time_us: f64) -> MemorySpec {
        let m = &self.memory;
        MemorySpec {
            comb: self.comb_spec(storage_time_us),
            t2_afc_us: m.t2_afc_us,
            signal_fwhm_mhz: m.signal_fwhm_mhz,
            mode_matching: m.mode_matching,
            echo_sigma_ns: m.echo_sigma_ns,
            photon_span_mhz: m.photon_span_mhz,
            photon_points: m.photon_points,
            outside_population: m.outside_population,
            line: self.line,
        }
    }

    pub fn memory_params(&self, storage_time_us: f64, mode: MemoryMode) -> Result<MemoryParams, NodeError> {
        let spec = self.memory_spec(storage_time_us);
        Ok(match mode {
            MemoryMode::Comb => spec.resolve()?,
            MemoryMode::Transparency => {
                spec.transparency(self.memory.transparency_width_mhz, self.memory.transparency_depth)?
            }
            MemoryMode::Bypass => MemoryParams::bypass(),
        })
    }

    pub fn timing(&self, storage_time_us: f64) -> SequenceTiming {
        SequenceTiming {
            repetition_hz: self.timing.repetition_hz,
            polarization_ms: self.timing.polarization_ms,
            burn_ms: self.timing.burn_ms,
            measurement_ms: self.timing.measurement_ms,
            storage_time_us,
        }
    }

    pub fn link(&self, fiber_length_km: f64) -> IdlerLink {
        IdlerLink {
            fiber_length_km,
            delay_us_per_km: self.link.delay_us_per_km,
            loss_db_per_km: self.link.loss_db_per_km,
        }
    }

    pub fn setup(
        &self,
        storage_time_us: f64,
        fiber_length_km: f64,
        mode: MemoryMode,
    ) -> Result<SimulationSetup, NodeError> {
        let mut memory = self.memory_params(storage_time_us, mode)?;
        if mode != MemoryMode::Comb {
            memory.storage_time_us = storage_time_us;
        }
        let setup = SimulationSetup {
            source: self.source,
            detectors: self.detectors,
            link: self.link(fiber_length_km),
            timing: self.timing(storage_time_us),
            memory,
        };
        setup.validate()?;
        Ok(setup)
    }

    pub fn sech_params(&self) -> SechChirpParams {
        SechChirpParams {
            center_frequency_mhz: self.pulse.center_frequency_mhz,
            chirp_bandwidth_mhz: self.pulse.chirp_bandwidth_mhz,
            duration_s: self.pulse.duration_s,
            truncation: self.pulse.truncation,
            sample_rate: self.pulse.sample_rate,
        }
    }

    pub fn nominal_sequence(&self) -> NominalSequence {
        let p = &self.pumping;
        NominalSequence {
            polarization_ms: p.polarization_ms,
            burn_ms: p.burn_ms,
            settle_ms: p.settle_ms,
            pulse_ms: p.pulse_ms,
            polarization_power_mw: p.polarization_power_mw,
            burn_power_mw: p.burn_power_mw,
            polarization_rate_per_mw: p.polarization_rate_per_mw,
            burn_rate_per_mw: p.burn_rate_per_mw,
            polarization_band_mhz: p.polarization_band_mhz,
            polarization_edge_mhz: p.polarization_edge_mhz,
            burn_edge_mhz: p.burn_edge_mhz,
        }
    }

    pub fn pumping_grid(&self) -> Result<FrequencyGrid, NodeError> {
        Ok(FrequencyGrid::new(
            self.comb.center_mhz,
            self.pumping.grid_span_mhz,
            self.pumping.grid_points,
        )?)
    }

    /// Detection-gate fraction of the nominal sequence.
    pub fn duty_cycle(&self) -> f64 {
        self.timing(self.run.storage_time_us).duty_cycle()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nominal_round_trips() {
        let cfg = NodeConfig::nominal();
        let back = NodeConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(back.to_toml(), cfg.to_toml());
    }

    #[test]
    fn nominal_duty_cycle() {
        let cfg = NodeConfig::nominal();
        assert!((cfg.duty_cycle() - 0.0575).abs() < 1e-4);
        assert_eq!(cfg.scenarios.storage_times_us, vec![1.0, 5.0, 10.0, 25.0]);
    }

    #[test]
    fn errors_name_the_field() {
        let bad = NOMINAL.replace("finesse = 2.0", "finesse = 0.5");
        let e = NodeConfig::from_toml(&bad).unwrap_err().to_string();
        assert!(e.contains("[comb]") && e.contains("finesse"), "{e}");
        let unknown = NOMINAL.replace("bin_ns = 2.0", "bin_ns = 2.0\nbins = 3");
        let e = NodeConfig::from_toml(&unknown).unwrap_err().to_string();
        assert!(e.contains("bins"), "{e}");
        let short = NOMINAL.replace("g2_targets = [28.0, 26.0, 21.0, 14.0]", "g2_targets = [28.0]");
        assert!(NodeConfig::from_toml(&short)
            .unwrap_err()
            .to_string()
            .contains("[scenarios]"));
    }
}
