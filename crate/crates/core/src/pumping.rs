//! Hole-burning rate equations for the four-ground / four-excited hyperfine
//! system, and the preparation sequence that sculpts the comb.
//!
//! Ions are binned into spectral classes by their detuning `δ` on transition
//! (1). A drive is described on the detuning axis of the transition it is
//! aimed at; every other transition of every class sees it at the offset set
//! by the level energies.

use std::collections::HashMap;

use nalgebra::{SMatrix, SVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::spectral::{CombSpec, FrequencyGrid, InhomogeneousLine, SpectralProfile};

pub const N_LEVELS: usize = 8;

type Mat = SMatrix<f64, N_LEVELS, N_LEVELS>;
type Vec8 = SVector<f64, N_LEVELS>;

/// Ground levels occupy indices 0..4, excited levels 4..8.
#[inline]
fn eidx(e: usize) -> usize {
    4 + e
}

const NEGATIVE_TOLERANCE: f64 = -1e-15;

/// Level structure and relaxation constants.
///
/// The default energies and branching ratios are placeholders consistent with
/// a 288 MHz - 2.623 GHz splitting range; they are inputs, not measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperfineSystem {
    pub ground_levels_mhz: [f64; 4],
    pub excited_levels_mhz: [f64; 4],
    /// `branching[e][g]`: decay probability `|e⟩ → |g⟩`; also the relative
    /// oscillator strength of transition `g ↔ e`.
    pub branching: [[f64; 4]; 4],
    /// Pairwise ground-state relaxation times (s); diagonal ignored.
    pub ground_relaxation_s: [[f64; 4]; 4],
    pub excited_lifetime_s: f64,
    /// Zero-indexed `(ground, excited)` of transitions (1)..(4).
    pub transitions: [(usize, usize); 4],
}

impl Default for HyperfineSystem {
    fn default() -> Self {
        let t = 10.0;
        Self {
            ground_levels_mhz: [0.0, 655.0, 2155.0, 2623.0],
            excited_levels_mhz: [0.0, 288.0, 1150.0, 1858.0],
            branching: [
                [0.05, 0.05, 0.10, 0.80],
                [0.40, 0.15, 0.15, 0.30],
                [0.10, 0.35, 0.25, 0.30],
                [0.25, 0.25, 0.25, 0.25],
            ],
            ground_relaxation_s: [[t; 4]; 4],
            excited_lifetime_s: 1.3e-3,
            transitions: [(3, 0), (0, 1), (1, 2), (2, 2)],
        }
    }
}

/// Range any hyperfine splitting must fall in (MHz).
pub const SPLITTING_RANGE_MHZ: (f64, f64) = (288.0, 2623.0);

impl HyperfineSystem {
    pub fn validate(&self) -> Result<()> {
        for (e, row) in self.branching.iter().enumerate() {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 || row.iter().any(|b| !(*b >= 0.0)) {
                return Err(invalid("branching", format!("row {} sums to {s}, expected 1", e + 1)));
            }
        }
        let (lo, hi) = SPLITTING_RANGE_MHZ;
        for levels in [&self.ground_levels_mhz, &self.excited_levels_mhz] {
            for i in 0..4 {
                for j in (i + 1)..4 {
                    let s = (levels[i] - levels[j]).abs();
                    if s < lo - 1e-9 || s > hi + 1e-9 {
                        return Err(invalid("levels", format!("splitting {s} MHz outside [{lo}, {hi}]")));
                    }
                }
            }
        }
        if !(self.excited_lifetime_s > 0.0) {
            return Err(invalid("excited_lifetime_s", "must be positive"));
        }
        for (i, row) in self.ground_relaxation_s.iter().enumerate() {
            for (j, t) in row.iter().enumerate() {
                if i != j && !(*t > 0.0) {
                    return Err(invalid("ground_relaxation_s", "lifetimes must be positive"));
                }
                if i != j && (t - self.ground_relaxation_s[j][i]).abs() > 1e-12 * t.abs() {
                    return Err(invalid("ground_relaxation_s", "matrix must be symmetric"));
                }
            }
        }
        for &(g, e) in &self.transitions {
            if g > 3 || e > 3 {
                return Err(invalid("transitions", "level index out of range"));
            }
        }
        Ok(())
    }

    /// Frequency of `g ↔ e` minus that of transition (1), for the same ion.
    pub fn relative_frequency(&self, g: usize, e: usize) -> f64 {
        let (g1, e1) = self.transitions[0];
        (self.excited_levels_mhz[e] - self.excited_levels_mhz[e1])
            - (self.ground_levels_mhz[g] - self.ground_levels_mhz[g1])
    }

    fn relaxation_matrix(&self) -> Mat {
        let mut m = Mat::zeros();
        let ge = 1.0 / self.excited_lifetime_s;
        for e in 0..4 {
            m[(eidx(e), eidx(e))] -= ge;
            for g in 0..4 {
                m[(g, eidx(e))] += self.branching[e][g] * ge;
            }
        }
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    let r = 1.0 / self.ground_relaxation_s[i][j];
                    m[(i, j)] += r;
                    m[(j, j)] -= r;
                }
            }
        }
        m
    }

    /// Generator `M` of `dN/dt = M N` for stimulated rates `w[g][e]` (s⁻¹).
    pub fn generator(&self, drive: &DriveRates) -> Mat {
        let mut m = self.relaxation_matrix();
        for g in 0..4 {
            for e in 0..4 {
                let w = drive.w[g][e];
                if w == 0.0 {
                    continue;
                }
                let (a, b) = (g, eidx(e));
                m[(a, a)] -= w;
                m[(b, a)] += w;
                m[(b, b)] -= w;
                m[(a, b)] += w;
            }
        }
        m
    }
}

/// Stimulated transition rates `w[g][e]` (s⁻¹), symmetric between the two levels.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DriveRates {
    pub w: [[f64; 4]; 4],
}

impl DriveRates {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn max_rate(&self) -> f64 {
        self.w.iter().flatten().cloned().fold(0.0, f64::max)
    }
}

/// Populations of one spectral class: grounds `0..4`, excited `4..8`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PopulationState {
    pub p: [f64; N_LEVELS],
}

impl PopulationState {
    /// Thermal start: ground levels equally occupied.
    pub fn thermal() -> Self {
        Self {
            p: [0.25, 0.25, 0.25, 0.25, 0.0, 0.0, 0.0, 0.0],
        }
    }

    pub fn in_ground(g: usize) -> Self {
        let mut p = [0.0; N_LEVELS];
        p[g] = 1.0;
        Self { p }
    }

    pub fn ground(&self, g: usize) -> f64 {
        self.p[g]
    }

    pub fn excited(&self, e: usize) -> f64 {
        self.p[eidx(e)]
    }

    pub fn total(&self) -> f64 {
        self.p.iter().sum()
    }

    fn as_vec(&self) -> Vec8 {
        Vec8::from_column_slice(&self.p)
    }

    fn from_vec(v: &Vec8) -> Self {
        let mut p = [0.0; N_LEVELS];
        p.copy_from_slice(v.as_slice());
        Self { p }
    }

    fn check(self) -> Result<Self> {
        if let Some((level, &value)) = self.p.iter().enumerate().find(|(_, v)| !(**v >= NEGATIVE_TOLERANCE)) {
            return Err(Error::NegativePopulation { level, value });
        }
        Ok(self)
    }
}

/// Largest decay or pumping rate appearing in the generator (s⁻¹).
pub fn fastest_rate(system: &HyperfineSystem, drive: &DriveRates) -> f64 {
    let m = system.generator(drive);
    (0..N_LEVELS).map(|i| -m[(i, i)]).fold(0.0, f64::max)
}

/// One classical RK4 step of the rate equations.
///
/// `dt` must not exceed a tenth of the shortest timescale.
pub fn rate_step(
    system: &HyperfineSystem,
    state: &PopulationState,
    drive: &DriveRates,
    dt: f64,
) -> Result<PopulationState> {
    if drive.w.iter().flatten().any(|w| !(*w >= 0.0)) {
        return Err(invalid("drive", "pumping coefficients must be non-negative"));
    }
    if !(dt > 0.0) {
        return Err(invalid("dt", "must be positive"));
    }
    let limit = 0.1 / fastest_rate(system, drive);
    if dt > limit {
        return Err(Error::StiffStep { dt, limit });
    }
    let m = system.generator(drive);
    let y = state.as_vec();
    let k1 = m * y;
    let k2 = m * (y + k1 * (0.5 * dt));
    let k3 = m * (y + k2 * (0.5 * dt));
    let k4 = m * (y + k3 * dt);
    let next = y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    PopulationState::from_vec(&next).check()
}

/// Exact propagation over `duration` with constant drive.
pub fn propagate_exact(
    system: &HyperfineSystem,
    state: &PopulationState,
    drive: &DriveRates,
    duration: f64,
) -> Result<PopulationState> {
    let u = (system.generator(drive) * duration).exp();
    PopulationState::from_vec(&(u * state.as_vec())).check()
}

/// Spectral extent of a drive, on the detuning axis of its target transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DriveBand {
    /// Flat top over `[lo, hi]` MHz with tanh edges of width `edge_mhz`.
    Window { lo_mhz: f64, hi_mhz: f64, edge_mhz: f64 },
    /// Holes of width `Δ(1 − 1/F)` centred between the teeth of `comb`.
    Holes { comb: CombSpec, edge_mhz: f64 },
    /// No drive (free evolution).
    Dark,
}

#[inline]
fn flat_top(x: f64, lo: f64, hi: f64, edge: f64) -> f64 {
    if edge <= 0.0 {
        return if x >= lo && x < hi { 1.0 } else { 0.0 };
    }
    0.25 * (1.0 + ((x - lo) / edge).tanh()) * (1.0 + ((hi - x) / edge).tanh())
}

impl DriveBand {
    /// Relative drive strength at detuning `x` (MHz), in `[0, 1]`.
    pub fn shape(&self, x: f64) -> f64 {
        match self {
            DriveBand::Window {
                lo_mhz,
                hi_mhz,
                edge_mhz,
            } => flat_top(x, *lo_mhz, *hi_mhz, *edge_mhz),
            DriveBand::Holes { comb, edge_mhz } => {
                let n = comb.n_teeth();
                let (band_lo, band_hi) = comb.band();
                let margin = comb.delta_mhz;
                if x < band_lo - margin || x > band_hi + margin {
                    return 0.0;
                }
                // Hole k is centred at tooth k + Δ/2.
                let first = comb.tooth_center(0) + 0.5 * comb.delta_mhz;
                let k = ((x - first) / comb.delta_mhz).round();
                if k < 0.0 || k >= n as f64 {
                    return 0.0;
                }
                let c = first + k * comb.delta_mhz;
                let half = 0.5 * comb.delta_mhz * (1.0 - 1.0 / comb.finesse);
                flat_top(x, c - half, c + half, *edge_mhz)
            }
            DriveBand::Dark => 0.0,
        }
    }
}

/// One step of a preparation sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepStep {
    /// Target transition label, 1..=4; ignored for dark steps.
    pub transition: u8,
    pub duration_s: f64,
    pub power_mw: f64,
    /// Pumping rate (s⁻¹) per mW at unit oscillator strength.
    pub rate_per_mw: f64,
    pub band: DriveBand,
}

impl PrepStep {
    pub fn is_dark(&self) -> bool {
        matches!(self.band, DriveBand::Dark) || self.power_mw == 0.0 || self.rate_per_mw == 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparationSequence {
    pub steps: Vec<PrepStep>,
}

/// Parameters of the standard polarize-then-burn sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NominalSequence {
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
}

impl Default for NominalSequence {
    fn default() -> Self {
        Self {
            polarization_ms: 200.0,
            burn_ms: 50.0,
            settle_ms: 5.0,
            pulse_ms: 1.0,
            polarization_power_mw: 40.0,
            burn_power_mw: 10.0,
            polarization_rate_per_mw: 250.0,
            burn_rate_per_mw: 100.0,
            polarization_band_mhz: (-50.0, 50.0),
            polarization_edge_mhz: 0.5,
            burn_edge_mhz: 5e-4,
        }
    }
}

impl PreparationSequence {
    pub fn nominal(p: &NominalSequence, comb: &CombSpec) -> Self {
        let mut steps = Vec::new();
        let n_pol = (p.polarization_ms / p.pulse_ms).round() as usize;
        let (lo, hi) = p.polarization_band_mhz;
        for i in 0..n_pol {
            steps.push(PrepStep {
                transition: 2 + (i % 3) as u8,
                duration_s: p.pulse_ms * 1e-3,
                power_mw: p.polarization_power_mw,
                rate_per_mw: p.polarization_rate_per_mw,
                band: DriveBand::Window {
                    lo_mhz: lo,
                    hi_mhz: hi,
                    edge_mhz: p.polarization_edge_mhz,
                },
            });
        }
        let n_burn = (p.burn_ms / p.pulse_ms).round() as usize;
        for _ in 0..n_burn {
            steps.push(PrepStep {
                transition: 1,
                duration_s: p.pulse_ms * 1e-3,
                power_mw: p.burn_power_mw,
                rate_per_mw: p.burn_rate_per_mw,
                band: DriveBand::Holes {
                    comb: *comb,
                    edge_mhz: p.burn_edge_mhz,
                },
            });
        }
        if p.settle_ms > 0.0 {
            steps.push(PrepStep {
                transition: 1,
                duration_s: p.settle_ms * 1e-3,
                power_mw: 0.0,
                rate_per_mw: 0.0,
                band: DriveBand::Dark,
            });
        }
        Self { steps }
    }

    pub fn total_duration_s(&self) -> f64 {
        self.steps.iter().map(|s| s.duration_s).sum()
    }

    /// Checks the 200 ms polarization / 50 ms burn template: 1 ms pulses
    /// cycling (2), (3), (4), then comb burning on (1), then optional dark time.
    pub fn validate_template(&self) -> Result<()> {
        let bad = |m: String| Err(Error::SequenceTemplate(m));
        let close = |a: f64, b: f64| (a - b).abs() < 1e-9;
        let mut i = 0;
        let mut pol = 0.0;
        while i < self.steps.len() && matches!(self.steps[i].band, DriveBand::Window { .. }) {
            let s = &self.steps[i];
            let want = 2 + (i % 3) as u8;
            if s.transition != want {
                return bad(format!("step {i} drives ({}) instead of ({want})", s.transition));
            }
            if !close(s.duration_s, 1e-3) {
                return bad(format!("polarization pulse {i} lasts {} s, not 1 ms", s.duration_s));
            }
            pol += s.duration_s;
            i += 1;
        }
        if !close(pol, 0.2) {
            return bad(format!("polarization lasts {pol} s, not 200 ms"));
        }
        let mut burn = 0.0;
        while i < self.steps.len() && matches!(self.steps[i].band, DriveBand::Holes { .. }) {
            if self.steps[i].transition != 1 {
                return bad(format!("burn step {i} is not on transition (1)"));
            }
            burn += self.steps[i].duration_s;
            i += 1;
        }
        if !close(burn, 0.05) {
            return bad(format!("comb burning lasts {burn} s, not 50 ms"));
        }
        if let Some(s) = self.steps[i..].iter().find(|s| !s.is_dark()) {
            return bad(format!("driven step on ({}) after the burn", s.transition));
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        for s in &self.steps {
            if !(1..=4).contains(&s.transition) {
                return Err(invalid("transition", "label must be 1..=4"));
            }
            if !(s.duration_s >= 0.0) || !(s.power_mw >= 0.0) || !(s.rate_per_mw >= 0.0) {
                return Err(invalid("step", "durations, powers and rates must be non-negative"));
            }
        }
        Ok(())
    }
}

const SHAPE_LEVELS: f64 = 4096.0;

/// Outcome of a preparation run.
#[derive(Debug, Clone)]
pub struct PreparationResult {
    pub profile: SpectralProfile,
    class_of_point: Vec<u32>,
    class_populations: Vec<PopulationState>,
}

/// Depths at the tooth and hole centres of a target comb.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CombMetrics {
    pub tooth_depth: f64,
    pub hole_depth: f64,
    /// `tooth_depth / hole_depth`.
    pub contrast: f64,
}

impl PreparationResult {
    pub fn populations_at(&self, i: usize) -> PopulationState {
        self.class_populations[self.class_of_point[i] as usize]
    }

    pub fn distinct_classes(&self) -> usize {
        self.class_populations.len()
    }

    /// Mean `|4_g⟩` occupation over grid points in `[lo, hi]`.
    pub fn mean_ground4(&self, lo: f64, hi: f64, system: &HyperfineSystem) -> f64 {
        let g = system.transitions[0].0;
        let r = self.profile.grid().index_range(lo, hi);
        let n = r.len().max(1) as f64;
        r.map(|i| self.populations_at(i).ground(g)).sum::<f64>() / n
    }

    /// Largest deviation of any class total from one.
    pub fn max_conservation_error(&self) -> f64 {
        self.class_populations
            .iter()
            .map(|p| (p.total() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Mean depth at tooth and hole centres over the inner 90% of the band.
    pub fn comb_metrics(&self, comb: &CombSpec) -> CombMetrics {
        let grid = self.profile.grid();
        let gamma = comb.tooth_width_mhz();
        let (lo, hi) = comb.band();
        let inner = 0.05 * (hi - lo);
        let avg = |offset: f64| {
            let mut s = 0.0;
            let mut n = 0usize;
            for k in 0..comb.n_teeth() {
                let c = comb.tooth_center(k) + offset;
                if c < lo + inner || c > hi - inner {
                    continue;
                }
                for i in grid.index_range(c - 0.25 * gamma, c + 0.25 * gamma) {
                    s += self.profile.depth_at_index(i);
                    n += 1;
                }
            }
            s / n.max(1) as f64
        };
        let tooth_depth = avg(0.0);
        let hole_depth = avg(0.5 * comb.delta_mhz);
        CombMetrics {
            tooth_depth,
            hole_depth,
            contrast: tooth_depth / hole_depth,
        }
    }
}

/// Run `sequence` on every spectral class of `grid` and read out the optical
/// depth of transition (1): `d(δ) = d_env(δ) · (N_4g − N_1e)`.
///
/// `d_env` is the envelope depth for an ensemble fully in `|4_g⟩`.
pub fn simulate_preparation(
    system: &HyperfineSystem,
    line: &InhomogeneousLine,
    sequence: &PreparationSequence,
    grid: &FrequencyGrid,
) -> Result<PreparationResult> {
    system.validate()?;
    sequence.validate()?;

    // Distinct drive configurations: (target transition, band index).
    let mut bands: Vec<&DriveBand> = Vec::new();
    let mut targets: Vec<(usize, usize)> = Vec::new();
    let mut step_config = Vec::with_capacity(sequence.steps.len());
    for s in &sequence.steps {
        if s.is_dark() {
            step_config.push(None);
            continue;
        }
        let t = s.transition as usize - 1;
        let bi = match bands.iter().position(|b| **b == s.band) {
            Some(i) => i,
            None => {
                bands.push(&s.band);
                bands.len() - 1
            }
        };
        let ci = match targets.iter().position(|c| *c == (t, bi)) {
            Some(i) => i,
            None => {
                targets.push((t, bi));
                targets.len() - 1
            }
        };
        step_config.push(Some(ci));
    }

    // Offsets of every (g, e) relative to each target transition.
    let rel: Vec<[[f64; 4]; 4]> = targets
        .iter()
        .map(|&(t, _)| {
            let (tg, te) = system.transitions[t];
            let base = system.relative_frequency(tg, te);
            let mut o = [[0.0; 4]; 4];
            for (g, row) in o.iter_mut().enumerate() {
                for (e, v) in row.iter_mut().enumerate() {
                    *v = system.relative_frequency(g, e) - base;
                }
            }
            o
        })
        .collect();

    // Quantised drive signature of every grid point.
    let key_len = targets.len() * 16;
    let signature = |f: f64| -> Vec<u16> {
        let mut k = Vec::with_capacity(key_len);
        for (ci, &(_, bi)) in targets.iter().enumerate() {
            for g in 0..4 {
                for e in 0..4 {
                    let s = if system.branching[e][g] > 0.0 {
                        bands[bi].shape(f + rel[ci][g][e])
                    } else {
                        0.0
                    };
                    k.push((s * SHAPE_LEVELS).round() as u16);
                }
            }
        }
        k
    };
    let keys: Vec<Vec<u16>> = (0..grid.len())
        .into_par_iter()
        .map(|i| signature(grid.freq(i)))
        .collect();
    let mut index: HashMap<&[u16], u32> = HashMap::new();
    let mut unique: Vec<&[u16]> = Vec::new();
    let class_of_point: Vec<u32> = keys
        .iter()
        .map(|k| {
            *index.entry(k.as_slice()).or_insert_with(|| {
                unique.push(k.as_slice());
                (unique.len() - 1) as u32
            })
        })
        .collect();

    // Distinct (config, power, rate, duration) steps share one propagator.
    let mut step_kinds: Vec<(Option<usize>, u64, u64)> = Vec::new();
    let mut step_kind_of = Vec::with_capacity(sequence.steps.len());
    for (s, cfg) in sequence.steps.iter().zip(&step_config) {
        let rate = if cfg.is_some() { s.power_mw * s.rate_per_mw } else { 0.0 };
        let kind = (*cfg, rate.to_bits(), s.duration_s.to_bits());
        let idx = match step_kinds.iter().position(|k| *k == kind) {
            Some(i) => i,
            None => {
                step_kinds.push(kind);
                step_kinds.len() - 1
            }
        };
        step_kind_of.push(idx);
    }

    let class_populations: Vec<PopulationState> = unique
        .par_iter()
        .map(|key| {
            let props: Vec<Mat> = step_kinds
                .iter()
                .map(|&(cfg, rate_bits, dur_bits)| {
                    let rate = f64::from_bits(rate_bits);
                    let mut drive = DriveRates::none();
                    if let Some(ci) = cfg {
                        for g in 0..4 {
                            for e in 0..4 {
                                let q = key[ci * 16 + g * 4 + e] as f64 / SHAPE_LEVELS;
                                drive.w[g][e] = rate * system.branching[e][g] * q;
                            }
                        }
                    }
                    (system.generator(&drive) * f64::from_bits(dur_bits)).exp()
                })
                .collect();
            let mut y = PopulationState::thermal().as_vec();
            for &k in &step_kind_of {
                y = props[k] * y;
            }
            PopulationState::from_vec(&y).check()
        })
        .collect::<Result<_>>()?;

    let (g1, e1) = system.transitions[0];
    let depth = (0..grid.len())
        .map(|i| {
            let p = &class_populations[class_of_point[i] as usize];
            (line.depth_at(grid.freq(i)) * (p.ground(g1) - p.excited(e1))).max(0.0)
        })
        .collect();
    let profile = SpectralProfile::from_depths(*grid, depth)?;
    Ok(PreparationResult {
        profile,
        class_of_point,
        class_populations,
    })
}
