//! Echo efficiency of a comb and the storage transform applied to photons.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::events::{Event, EventStream, NO_TRIAL, SIGNAL};
use crate::spectral::{
    absorbed_fraction, build_comb_profile, coarse_grain, transmitted_fraction, CombSpec, FrequencyGrid,
    InhomogeneousLine, LineShape, SpectralProfile, ToothShape,
};

/// Echo-intensity decay with storage time, `exp(−4t/T₂)`.
pub fn decay_factor(t_us: f64, t2_afc_us: f64) -> f64 {
    (-4.0 * t_us / t2_afc_us).exp()
}

#[inline]
fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

fn check_parametric(d: f64, finesse: f64, d0: f64) -> Result<()> {
    if !(d > 0.0) {
        return Err(invalid("d", "comb optical depth must be positive"));
    }
    if !(finesse > 1.0) {
        return Err(invalid("finesse", "must exceed 1"));
    }
    if !(d0 >= 0.0) {
        return Err(invalid("d0", "background depth must be non-negative"));
    }
    Ok(())
}

/// First-echo efficiency of a square-tooth comb:
/// `(d/F)² sinc²(π/F) e^{−d/F} e^{−d₀}`.
pub fn echo_efficiency_parametric(d: f64, finesse: f64, d0: f64) -> Result<f64> {
    check_parametric(d, finesse, d0)?;
    let x = d / finesse;
    let s = sinc(PI / finesse);
    Ok(x * x * s * s * (-x).exp() * (-d0).exp())
}

/// `∂η/∂F` of [`echo_efficiency_parametric`].
pub fn efficiency_finesse_derivative(d: f64, finesse: f64, d0: f64) -> Result<f64> {
    let eta = echo_efficiency_parametric(d, finesse, d0)?;
    let x = d / finesse;
    let u = PI / finesse;
    // d ln η / dF = (x − 2 + 2(1 − u cot u)) / F
    let u_cot_u = if u.abs() < 1e-8 { 1.0 } else { u / u.tan() };
    Ok(eta / finesse * (x - 2.0 * u_cot_u))
}

/// Finesse maximising the parametric efficiency at fixed `d`, `d₀`,
/// by golden-section search on `(1, 2 + d]`.
pub fn optimal_finesse(d: f64, d0: f64) -> Result<(f64, f64)> {
    check_parametric(d, 2.0, d0)?;
    let f = |x: f64| echo_efficiency_parametric(d, x, d0).unwrap_or(0.0);
    let (mut a, mut b) = (1.0 + 1e-9, 2.0 + d);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut e = a + g * (b - a);
    let (mut fc, mut fe) = (f(c), f(e));
    while b - a > 1e-10 {
        if fc > fe {
            b = e;
            e = c;
            fe = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = e;
            fc = fe;
            e = a + g * (b - a);
            fe = f(e);
        }
    }
    let x = 0.5 * (a + b);
    Ok((x, f(x)))
}

/// First-echo efficiency of an arbitrary sampled comb.
///
/// With `a₁` the weighted Fourier coefficient of `d(δ)` at period `Δ` and
/// `d̄` the weighted mean depth over `band`, the efficiency is `|a₁|² e^{−d̄}`.
/// The band is trimmed to a whole number of periods from its lower edge.
pub fn echo_efficiency_from_profile(
    profile: &SpectralProfile,
    delta_mhz: f64,
    band: (f64, f64),
    weight: Option<&LineShape>,
) -> Result<f64> {
    if !(delta_mhz > 0.0) {
        return Err(invalid("delta_mhz", "must be positive"));
    }
    let periods = ((band.1 - band.0) / delta_mhz * (1.0 + 1e-12)).floor();
    if !(periods >= 3.0) {
        return Err(Error::BandTooNarrow((band.1 - band.0) / delta_mhz));
    }
    let lo = band.0;
    let hi = lo + periods * delta_mhz;
    let grid = profile.grid();
    if !grid.contains(lo) || !grid.contains(hi) {
        return Err(Error::OutsideGrid {
            lo,
            hi,
            grid_lo: grid.lo(),
            grid_hi: grid.hi(),
        });
    }
    let weights = match weight {
        Some(w) => Some(w.weights(grid)?),
        None => None,
    };
    let h = grid.spacing();
    let mut r = grid.index_range(lo, hi);
    // Half-open band so exactly `periods` periods are sampled.
    if r.end > r.start && grid.freq(r.end - 1) >= hi - 1e-9 * h {
        r.end -= 1;
    }
    let mut wsum = 0.0;
    let mut dsum = 0.0;
    let mut a1 = Complex64::new(0.0, 0.0);
    for i in r {
        let w = weights.as_ref().map_or(1.0, |w| w[i]);
        let d = profile.depth_at_index(i);
        let phase = 2.0 * PI * ((grid.freq(i) - lo) / delta_mhz).fract();
        wsum += w;
        dsum += w * d;
        a1 += Complex64::from_polar(w * d, phase);
    }
    if !(wsum > 0.0) {
        return Err(Error::Normalization(1.0));
    }
    let a1 = a1 / wsum;
    Ok(a1.norm_sqr() * (-dsum / wsum).exp())
}

/// What happens to a signal photon entering the memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fate {
    Echo,
    Transmitted,
    Lost,
}

/// Resolved storage transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryParams {
    pub storage_time_us: f64,
    pub echo_sigma_ns: f64,
    pub p_echo: f64,
    pub p_trans: f64,
}

impl MemoryParams {
    pub fn new(storage_time_us: f64, echo_sigma_ns: f64, p_echo: f64, p_trans: f64) -> Result<Self> {
        let m = Self {
            storage_time_us,
            echo_sigma_ns,
            p_echo,
            p_trans,
        };
        m.validate()?;
        Ok(m)
    }

    /// Photons pass untouched.
    pub fn bypass() -> Self {
        Self {
            storage_time_us: 0.0,
            echo_sigma_ns: 0.0,
            p_echo: 0.0,
            p_trans: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p_echo >= 0.0) || !(self.p_trans >= 0.0) {
            return Err(invalid("p_echo", "probabilities must be non-negative"));
        }
        if self.p_echo + self.p_trans > 1.0 + 1e-12 {
            return Err(Error::InconsistentMemory {
                p_echo: self.p_echo,
                p_trans: self.p_trans,
            });
        }
        if !(self.storage_time_us >= 0.0) || !(self.echo_sigma_ns >= 0.0) {
            return Err(invalid("storage_time_us", "times must be non-negative"));
        }
        Ok(())
    }

    #[inline]
    pub fn fate(&self, u: f64) -> Fate {
        if u < self.p_echo {
            Fate::Echo
        } else if u < self.p_echo + self.p_trans {
            Fate::Transmitted
        } else {
            Fate::Lost
        }
    }

    pub fn storage_ps(&self) -> i64 {
        (self.storage_time_us * 1e6).round() as i64
    }
}

/// Physical description of the memory from which [`MemoryParams`] follow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemorySpec {
    pub comb: CombSpec,
    pub t2_afc_us: f64,
    pub signal_fwhm_mhz: f64,
    /// Spatial/temporal mode-matching factor applied to the echo.
    pub mode_matching: f64,
    pub echo_sigma_ns: f64,
    /// Span and size of the grid carrying the photon spectrum.
    pub photon_span_mhz: f64,
    pub photon_points: usize,
    /// `|4_g⟩` fraction outside the prepared band (thermal: 1/4).
    pub outside_population: f64,
    pub line: InhomogeneousLine,
}

impl MemorySpec {
    pub fn storage_time_us(&self) -> f64 {
        self.comb.storage_time_us()
    }

    pub fn validate(&self) -> Result<()> {
        self.comb.validate()?;
        if !(self.t2_afc_us > 0.0) {
            return Err(invalid("t2_afc_us", "must be positive"));
        }
        if !(self.signal_fwhm_mhz > 0.0) {
            return Err(invalid("signal_fwhm_mhz", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.mode_matching) {
            return Err(invalid("mode_matching", "must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn photon_grid(&self) -> Result<FrequencyGrid> {
        FrequencyGrid::new(self.comb.center_mhz, self.photon_span_mhz, self.photon_points)
    }

    pub fn signal_spectrum(&self) -> LineShape {
        LineShape::lorentzian(self.comb.center_mhz, self.signal_fwhm_mhz)
    }

    fn outside_depth(&self) -> impl Fn(f64) -> f64 + '_ {
        move |f| self.line.depth_at(f) * self.outside_population
    }

    /// Fraction of the signal spectrum inside the comb band.
    pub fn band_overlap(&self) -> Result<f64> {
        let grid = self.photon_grid()?;
        let (lo, hi) = self.comb.band();
        let saturated = SpectralProfile::from_depths(
            grid,
            grid.frequencies()
                .map(|f| if f >= lo && f < hi { 1e3 } else { 0.0 })
                .collect(),
        )?;
        absorbed_fraction(&saturated, &self.signal_spectrum())
    }

    /// Efficiency of the bare comb for a broadband-matched input.
    pub fn comb_efficiency(&self) -> Result<f64> {
        match self.comb.tooth_shape {
            ToothShape::Square => {
                echo_efficiency_parametric(self.comb.peak_depth, self.comb.finesse, self.comb.background_depth)
            }
            ToothShape::Gaussian => {
                let fine = self.fine_comb_profile()?;
                echo_efficiency_from_profile(&fine, self.comb.delta_mhz, self.comb.band(), None)
            }
        }
    }

    fn fine_comb_profile(&self) -> Result<SpectralProfile> {
        let gamma = self.comb.tooth_width_mhz();
        let span = self.comb.bandwidth_mhz + 4.0 * self.comb.delta_mhz;
        let n = (span / (gamma / 16.0)).ceil() as usize + 1;
        let grid = FrequencyGrid::new(self.comb.center_mhz, span, n)?;
        build_comb_profile(&self.comb, &grid)
    }

    /// Absorbed fraction of the signal spectrum by `profile` (photon grid,
    /// thermal absorption outside the profile's span).
    pub fn absorbed_by(&self, profile: &SpectralProfile) -> Result<f64> {
        let coarse = coarse_grain(profile, &self.photon_grid()?, self.outside_depth())?;
        absorbed_fraction(&coarse, &self.signal_spectrum())
    }

    fn transmitted_by(&self, profile: &SpectralProfile) -> Result<f64> {
        let coarse = coarse_grain(profile, &self.photon_grid()?, self.outside_depth())?;
        transmitted_fraction(&coarse, &self.signal_spectrum())
    }

    fn finish(&self, eta_comb: f64, p_trans: f64) -> Result<MemoryParams> {
        let p_echo =
            self.band_overlap()? * eta_comb * decay_factor(self.storage_time_us(), self.t2_afc_us) * self.mode_matching;
        MemoryParams::new(self.storage_time_us(), self.echo_sigma_ns, p_echo, p_trans)
    }

    /// Parametric comb.
    pub fn resolve(&self) -> Result<MemoryParams> {
        self.validate()?;
        let fine = self.fine_comb_profile()?;
        let p_trans = self.transmitted_by(&fine)?;
        self.finish(self.comb_efficiency()?, p_trans)
    }

    /// Comb taken from a simulated or measured profile.
    pub fn resolve_with_profile(&self, profile: &SpectralProfile) -> Result<MemoryParams> {
        self.validate()?;
        let eta = echo_efficiency_from_profile(profile, self.comb.delta_mhz, self.comb.band(), None)?;
        let p_trans = self.transmitted_by(profile)?;
        self.finish(eta, p_trans)
    }

    /// Transparency window of `width_mhz` at residual depth `d0`: no echo.
    pub fn transparency(&self, width_mhz: f64, d0: f64) -> Result<MemoryParams> {
        let n = ((width_mhz / 0.01).ceil() as usize).max(2) + 1;
        let grid = FrequencyGrid::new(self.comb.center_mhz, width_mhz, n)?;
        let window = SpectralProfile::flat(grid, d0)?;
        let p_trans = self.transmitted_by(&window)?;
        MemoryParams::new(0.0, 0.0, 0.0, p_trans)
    }
}

/// Substream seeding shared by every consumer of per-trial randomness.
pub(crate) fn substream(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ domain.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(index);
    rng
}

const APPLY_DOMAIN: u64 = 0x4d45_4d4f;

/// Map every signal photon to echo, transmission or loss.
///
/// Each trial draws from its own random substream, so results do not depend
/// on scheduling.
pub fn apply_memory(events: &EventStream, params: &MemoryParams, seed: u64) -> Result<EventStream> {
    params.validate()?;
    let all = events.events();
    // Contiguous runs of signal events with the same trial.
    let signal_idx: Vec<usize> = (0..all.len()).filter(|&i| all[i].channel == SIGNAL).collect();
    let mut groups: Vec<&[usize]> = Vec::new();
    let mut start = 0;
    for k in 1..=signal_idx.len() {
        if k == signal_idx.len() || all[signal_idx[k]].trial != all[signal_idx[start]].trial {
            groups.push(&signal_idx[start..k]);
            start = k;
        }
    }
    let storage = params.storage_ps();
    let spread = Normal::new(0.0, params.echo_sigma_ns * 1e3).map_err(|e| invalid("echo_sigma_ns", e.to_string()))?;
    let transformed: Vec<Vec<Event>> = groups
        .par_iter()
        .map(|g| {
            let first = all[g[0]];
            let index = if first.trial == NO_TRIAL {
                (1u64 << 32) + g[0] as u64
            } else {
                first.trial as u64
            };
            let mut rng = substream(seed, APPLY_DOMAIN, index);
            g.iter()
                .filter_map(|&i| {
                    let e = all[i];
                    match params.fate(rng.random::<f64>()) {
                        Fate::Echo => {
                            let dt = storage + spread.sample(&mut rng).round() as i64;
                            let t = (e.time_ps as i64 + dt).max(0) as u64;
                            Some(Event::new(SIGNAL, t, e.trial))
                        }
                        Fate::Transmitted => Some(e),
                        Fate::Lost => None,
                    }
                })
                .collect()
        })
        .collect();
    let mut out: Vec<Event> = all.iter().filter(|e| e.channel != SIGNAL).cloned().collect();
    out.extend(transformed.into_iter().flatten());
    out.sort_unstable();
    EventStream::from_sorted(out, events.trial_length_ps())
}
