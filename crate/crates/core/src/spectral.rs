//! Frequency-domain primitives shared by the physics modules.
//!
//! Every profile lives on a uniform detuning grid (MHz, relative to the
//! centre of the memory transition). Integrals over a profile are midpoint
//! sums, with sample `i` standing for the cell `[f_i - h/2, f_i + h/2]`.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Minimum number of grid samples per tooth FWHM.
pub const SAMPLES_PER_TOOTH: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    center_offset_mhz: f64,
    span_mhz: f64,
    n_points: usize,
}

impl FrequencyGrid {
    pub fn new(center_offset_mhz: f64, span_mhz: f64, n_points: usize) -> Result<Self> {
        if n_points < 2 {
            return Err(invalid("n_points", "need at least two grid points"));
        }
        if !(span_mhz > 0.0) || !span_mhz.is_finite() {
            return Err(invalid("span_mhz", format!("{span_mhz} is not a positive span")));
        }
        if !center_offset_mhz.is_finite() {
            return Err(invalid("center_offset_mhz", "not finite"));
        }
        Ok(Self {
            center_offset_mhz,
            span_mhz,
            n_points,
        })
    }

    /// 400 MHz span, 2^20 points (about 0.38 kHz resolution).
    pub fn memory_default() -> Self {
        Self::new(0.0, 400.0, 1 << 20).expect("static grid")
    }

    pub fn center_offset_mhz(&self) -> f64 {
        self.center_offset_mhz
    }

    pub fn span_mhz(&self) -> f64 {
        self.span_mhz
    }

    pub fn len(&self) -> usize {
        self.n_points
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        self.span_mhz / (self.n_points - 1) as f64
    }

    pub fn lo(&self) -> f64 {
        self.center_offset_mhz - 0.5 * self.span_mhz
    }

    pub fn hi(&self) -> f64 {
        self.center_offset_mhz + 0.5 * self.span_mhz
    }

    #[inline]
    pub fn freq(&self, i: usize) -> f64 {
        self.lo() + i as f64 * self.spacing()
    }

    pub fn frequencies(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_points).map(move |i| self.freq(i))
    }

    pub fn contains(&self, f: f64) -> bool {
        f >= self.lo() - 1e-9 * self.span_mhz && f <= self.hi() + 1e-9 * self.span_mhz
    }

    /// Indices whose sample frequency lies in `[lo, hi]`.
    pub fn index_range(&self, lo: f64, hi: f64) -> std::ops::Range<usize> {
        let h = self.spacing();
        let start = ((lo - self.lo()) / h).ceil().max(0.0) as usize;
        let end = (((hi - self.lo()) / h).floor() + 1.0).clamp(0.0, self.n_points as f64) as usize;
        start.min(end)..end
    }
}

/// Tooth profile of an atomic frequency comb.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToothShape {
    Square,
    Gaussian,
}

/// Parametric description of a target comb.
///
/// Teeth sit at the centres of `n_teeth()` cells of width `delta_mhz` that
/// tile the band `[center - n·Δ/2, center + n·Δ/2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CombSpec {
    pub center_mhz: f64,
    pub bandwidth_mhz: f64,
    pub delta_mhz: f64,
    pub finesse: f64,
    pub tooth_shape: ToothShape,
    pub peak_depth: f64,
    pub background_depth: f64,
}

impl CombSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta_mhz > 0.0) {
            return Err(invalid("delta_mhz", "comb periodicity must be positive"));
        }
        if !(self.bandwidth_mhz >= self.delta_mhz) {
            return Err(invalid("bandwidth_mhz", "bandwidth must hold at least one tooth"));
        }
        if !(self.finesse > 1.0) {
            return Err(invalid("finesse", format!("F = {} must exceed 1", self.finesse)));
        }
        if !(self.background_depth >= 0.0) {
            return Err(invalid("background_depth", "must be non-negative"));
        }
        if !(self.peak_depth > self.background_depth) {
            return Err(invalid("peak_depth", "tooth depth must exceed the background"));
        }
        Ok(())
    }

    /// Number of teeth, `floor(bandwidth / Δ)`.
    pub fn n_teeth(&self) -> usize {
        // Guard against 100/0.04 landing a hair below 2500.
        (self.bandwidth_mhz / self.delta_mhz * (1.0 + 1e-12)).floor() as usize
    }

    pub fn tooth_width_mhz(&self) -> f64 {
        self.delta_mhz / self.finesse
    }

    pub fn storage_time_us(&self) -> f64 {
        1.0 / self.delta_mhz
    }

    pub fn band(&self) -> (f64, f64) {
        let half = 0.5 * self.n_teeth() as f64 * self.delta_mhz;
        (self.center_mhz - half, self.center_mhz + half)
    }

    pub fn tooth_center(&self, k: usize) -> f64 {
        self.band().0 + (k as f64 + 0.5) * self.delta_mhz
    }
}

/// Gaussian inhomogeneous absorption line of the memory transition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InhomogeneousLine {
    pub alpha_per_cm: f64,
    pub length_cm: f64,
    pub passes: u32,
    pub fwhm_mhz: f64,
    pub center_mhz: f64,
}

impl Default for InhomogeneousLine {
    fn default() -> Self {
        Self {
            alpha_per_cm: 1.6,
            length_cm: 1.2,
            passes: 4,
            fwhm_mhz: 1300.0,
            center_mhz: 0.0,
        }
    }
}

impl InhomogeneousLine {
    pub fn single_pass_depth(&self) -> f64 {
        self.alpha_per_cm * self.length_cm
    }

    pub fn peak_depth(&self) -> f64 {
        self.single_pass_depth() * self.passes as f64
    }

    pub fn depth_at(&self, detuning_mhz: f64) -> f64 {
        let sigma = self.fwhm_mhz / (2.0 * (2.0 * 2f64.ln()).sqrt());
        let x = (detuning_mhz - self.center_mhz) / sigma;
        self.peak_depth() * (-0.5 * x * x).exp()
    }
}

/// Optical depth sampled on a [`FrequencyGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralProfile {
    grid: FrequencyGrid,
    depth: Vec<f64>,
}

impl SpectralProfile {
    pub fn from_depths(grid: FrequencyGrid, depth: Vec<f64>) -> Result<Self> {
        if depth.len() != grid.len() {
            return Err(invalid("depth", "length does not match the grid"));
        }
        if let Some(i) = depth.iter().position(|d| !(*d >= 0.0)) {
            return Err(invalid(
                "depth",
                format!("negative or NaN optical depth {} at index {i}", depth[i]),
            ));
        }
        Ok(Self { grid, depth })
    }

    pub fn flat(grid: FrequencyGrid, depth: f64) -> Result<Self> {
        Self::from_depths(grid, vec![depth; grid.len()])
    }

    /// Fresh profile equal to the inhomogeneous envelope.
    pub fn envelope(grid: FrequencyGrid, line: &InhomogeneousLine) -> Self {
        let depth = grid.frequencies().map(|f| line.depth_at(f)).collect();
        Self { grid, depth }
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    pub fn depths(&self) -> &[f64] {
        &self.depth
    }

    pub fn depth_at_index(&self, i: usize) -> f64 {
        self.depth[i]
    }

    /// Mean optical depth over the samples in `[lo, hi]`.
    pub fn mean_depth(&self, lo: f64, hi: f64) -> f64 {
        let r = self.grid.index_range(lo, hi);
        let n = r.len().max(1) as f64;
        self.depth[r].iter().sum::<f64>() / n
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::from_depths(self.grid, self.depth.iter().map(|d| d * factor).collect())
    }

    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# detuning_MHz optical_depth")?;
        for (f, d) in self.grid.frequencies().zip(&self.depth) {
            writeln!(w, "{f:.9} {d:.9e}")?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut freqs = Vec::new();
        let mut depth = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.split_whitespace();
            let parse = |s: Option<&str>| -> Result<f64> {
                s.ok_or_else(|| Error::Format(format!("line {}: missing column", lineno + 1)))?
                    .parse::<f64>()
                    .map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))
            };
            freqs.push(parse(cols.next())?);
            depth.push(parse(cols.next())?);
        }
        if freqs.len() < 2 {
            return Err(Error::Format("profile needs at least two rows".into()));
        }
        let lo = freqs[0];
        let hi = *freqs.last().unwrap();
        let grid = FrequencyGrid::new(0.5 * (lo + hi), hi - lo, freqs.len())?;
        let h = grid.spacing();
        for (i, f) in freqs.iter().enumerate() {
            if (f - grid.freq(i)).abs() > 1e-6 * h.max(1e-9) + 1e-9 {
                return Err(Error::Format(format!("non-uniform detuning at row {i}")));
            }
        }
        Self::from_depths(grid, depth)
    }
}

/// Spectral line shape of a photon or probe, normalised to unit area on a grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LineShape {
    Lorentzian { center_mhz: f64, fwhm_mhz: f64 },
    Flat { lo_mhz: f64, hi_mhz: f64 },
}

impl LineShape {
    pub fn lorentzian(center_mhz: f64, fwhm_mhz: f64) -> Self {
        Self::Lorentzian { center_mhz, fwhm_mhz }
    }

    /// Cumulative weight up to `f` (unnormalised for `Flat`, exact for Lorentzian).
    fn cdf(&self, f: f64) -> f64 {
        match *self {
            Self::Lorentzian { center_mhz, fwhm_mhz } => ((f - center_mhz) / (0.5 * fwhm_mhz)).atan() / PI,
            Self::Flat { lo_mhz, hi_mhz } => f.clamp(lo_mhz, hi_mhz) - lo_mhz,
        }
    }

    /// Cell-integrated weights on `grid`, renormalised to sum to one.
    pub fn weights(&self, grid: &FrequencyGrid) -> Result<Vec<f64>> {
        match *self {
            Self::Lorentzian { fwhm_mhz, .. } if !(fwhm_mhz > 0.0) => {
                return Err(invalid("fwhm_mhz", "Lorentzian width must be positive"))
            }
            Self::Flat { lo_mhz, hi_mhz } if !(hi_mhz > lo_mhz) => {
                return Err(invalid("hi_mhz", "flat band must have positive width"))
            }
            _ => {}
        }
        let h = grid.spacing();
        let mut w: Vec<f64> = grid
            .frequencies()
            .map(|f| self.cdf(f + 0.5 * h) - self.cdf(f - 0.5 * h))
            .collect();
        let mass: f64 = w.iter().sum();
        if !(mass > 1e-12) {
            return Err(Error::Normalization(1.0 - mass));
        }
        w.iter_mut().for_each(|x| *x /= mass);
        let total: f64 = w.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::Normalization(total - 1.0));
        }
        Ok(w)
    }
}

/// Sample `spec` on `grid`: `d(δ) = d·T(δ) + d₀` inside the comb band, `d₀` outside.
pub fn build_comb_profile(spec: &CombSpec, grid: &FrequencyGrid) -> Result<SpectralProfile> {
    spec.validate()?;
    let gamma = spec.tooth_width_mhz();
    let h = grid.spacing();
    if h > gamma / SAMPLES_PER_TOOTH {
        return Err(Error::GridTooCoarse {
            spacing_mhz: h,
            limit_mhz: gamma / SAMPLES_PER_TOOTH,
        });
    }
    let (band_lo, band_hi) = spec.band();
    if !grid.contains(band_lo) || !grid.contains(band_hi) {
        return Err(Error::OutsideGrid {
            lo: band_lo,
            hi: band_hi,
            grid_lo: grid.lo(),
            grid_hi: grid.hi(),
        });
    }
    let n = spec.n_teeth() as i64;
    let delta = spec.delta_mhz;
    let sigma = gamma / (2.0 * (2.0 * 2f64.ln()).sqrt());
    let reach: i64 = match spec.tooth_shape {
        ToothShape::Square => 1,
        ToothShape::Gaussian => 1 + (6.0 * sigma / delta).ceil() as i64,
    };
    // Half-open teeth [c - γ/2, c + γ/2): edges that land on grid points are
    // counted once, so aligned grids reproduce the duty cycle exactly.
    let eps = 1e-9 * h;
    let depth = grid
        .frequencies()
        .map(|f| {
            let k0 = ((f - band_lo) / delta).floor() as i64;
            let mut fill = 0.0;
            for k in (k0 - reach)..=(k0 + reach) {
                if k < 0 || k >= n {
                    continue;
                }
                let x = f - (band_lo + (k as f64 + 0.5) * delta);
                fill += match spec.tooth_shape {
                    ToothShape::Square => {
                        if x >= -0.5 * gamma - eps && x < 0.5 * gamma - eps {
                            1.0
                        } else {
                            0.0
                        }
                    }
                    ToothShape::Gaussian => (-0.5 * (x / sigma).powi(2)).exp(),
                };
            }
            spec.background_depth + spec.peak_depth * fill
        })
        .collect();
    SpectralProfile::from_depths(*grid, depth)
}

/// Set the optical depth to `residual` inside `window` (MHz), leaving the rest.
pub fn burn_transparency(profile: &SpectralProfile, window: (f64, f64), residual: f64) -> Result<SpectralProfile> {
    let (lo, hi) = window;
    let grid = profile.grid();
    if !(hi >= lo) || !grid.contains(lo) || !grid.contains(hi) {
        return Err(Error::OutsideGrid {
            lo,
            hi,
            grid_lo: grid.lo(),
            grid_hi: grid.hi(),
        });
    }
    if !(residual >= 0.0) {
        return Err(invalid("residual", "residual optical depth must be non-negative"));
    }
    let mut out = profile.clone();
    if hi > lo {
        let range = grid.index_range(lo, hi);
        out.depth[range].iter_mut().for_each(|d| *d = residual);
    }
    Ok(out)
}

/// Re-sample `fine` onto the cells of `coarse`, keeping transmission exact:
/// each coarse cell covered by `fine` gets `−ln⟨e^{−d}⟩` over its fine samples,
/// other cells take `outside(f)`.
pub fn coarse_grain<F: Fn(f64) -> f64>(
    fine: &SpectralProfile,
    coarse: &FrequencyGrid,
    outside: F,
) -> Result<SpectralProfile> {
    let h = coarse.spacing();
    let fg = fine.grid();
    let depth = coarse
        .frequencies()
        .map(|f| {
            let (lo, hi) = (f - 0.5 * h, f + 0.5 * h);
            if lo < fg.lo() || hi > fg.hi() {
                return outside(f);
            }
            // Half-open cells so neighbours never share a fine sample.
            let r = fg.index_range(lo, hi);
            let r = if r.end > r.start && fg.freq(r.end - 1) >= hi - 1e-9 * h {
                r.start..r.end - 1
            } else {
                r
            };
            if r.is_empty() {
                return outside(f);
            }
            let n = r.len() as f64;
            let t = fine.depth[r].iter().map(|d| (-d).exp()).sum::<f64>() / n;
            if t > 0.0 {
                -t.ln()
            } else {
                f64::MAX
            }
        })
        .collect();
    SpectralProfile::from_depths(*coarse, depth)
}

/// Fraction of `spectrum` absorbed by `profile`: `∫ S(δ)(1 − e^{−d(δ)}) dδ`.
pub fn absorbed_fraction(profile: &SpectralProfile, spectrum: &LineShape) -> Result<f64> {
    let w = spectrum.weights(profile.grid())?;
    Ok(w.iter()
        .zip(profile.depths())
        .map(|(w, d)| w * -(-d).exp_m1())
        .sum::<f64>()
        .clamp(0.0, 1.0))
}

/// Spectrum-weighted transmission `∫ S(δ) e^{−d(δ)} dδ`.
pub fn transmitted_fraction(profile: &SpectralProfile, spectrum: &LineShape) -> Result<f64> {
    Ok(1.0 - absorbed_fraction(profile, spectrum)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nominal_comb() -> CombSpec {
        CombSpec {
            center_mhz: 0.0,
            bandwidth_mhz: 100.0,
            delta_mhz: 0.04,
            finesse: 2.0,
            tooth_shape: ToothShape::Square,
            peak_depth: 2.0,
            background_depth: 0.2,
        }
    }

    #[test]
    fn grid_rejects_degenerate_inputs() {
        assert!(FrequencyGrid::new(0.0, 10.0, 1).is_err());
        assert!(FrequencyGrid::new(0.0, 0.0, 10).is_err());
        assert!(FrequencyGrid::new(0.0, -1.0, 10).is_err());
        let g = FrequencyGrid::new(1.0, 10.0, 11).unwrap();
        assert_eq!(g.spacing(), 1.0);
        assert_eq!(g.freq(0), -4.0);
        assert_eq!(g.freq(10), 6.0);
        assert_eq!(g.index_range(-0.5, 2.0), 4..7);
    }

    #[test]
    fn fresh_envelope_peaks_at_four_pass_depth() {
        let line = InhomogeneousLine::default();
        assert!((line.peak_depth() - 7.68).abs() < 1e-12);
        let p = SpectralProfile::envelope(FrequencyGrid::new(0.0, 2600.0, 2601).unwrap(), &line);
        assert!((p.depth_at_index(1300) - 7.68).abs() < 1e-12);
        // Half maximum at ±650 MHz.
        assert!((p.depth_at_index(650) - 3.84).abs() < 1e-9);
    }

    #[test]
    fn nominal_comb_has_2500_teeth_of_20_khz() {
        let spec = nominal_comb();
        assert_eq!(spec.n_teeth(), 2500);
        assert!((spec.tooth_width_mhz() - 0.02).abs() < 1e-15);
        assert!((spec.storage_time_us() - 25.0).abs() < 1e-12);

        let grid = FrequencyGrid::new(0.0, 120.0, 1_200_001).unwrap(); // 0.1 kHz
        let p = build_comb_profile(&spec, &grid).unwrap();
        // Centre of tooth 1250 and of the gap beside it.
        let c = spec.tooth_center(1250);
        let i = grid.index_range(c - 1e-7, c + 1e-7).start;
        assert!((p.depth_at_index(i) - 2.2).abs() < 1e-9);
        let g = c + 0.5 * spec.delta_mhz;
        let j = grid.index_range(g - 1e-7, g + 1e-7).start;
        assert!((p.depth_at_index(j) - 0.2).abs() < 1e-9);
        // Outside the band the profile is the background.
        assert!((p.depth_at_index(10) - 0.2).abs() < 1e-12);
        let (lo, hi) = spec.band();
        assert!((p.mean_depth(lo, hi) - (2.0 / 2.0 + 0.2)).abs() < 1e-3);
    }

    #[test]
    fn two_teeth_when_delta_is_half_the_band() {
        let spec = CombSpec {
            bandwidth_mhz: 1.0,
            delta_mhz: 0.5,
            ..nominal_comb()
        };
        assert_eq!(spec.n_teeth(), 2);
        let grid = FrequencyGrid::new(0.0, 2.0, 20_001).unwrap();
        let p = build_comb_profile(&spec, &grid).unwrap();
        // Count contiguous runs above the background.
        let mut runs = 0;
        let mut inside = false;
        for d in p.depths() {
            let now = *d > 0.2 + 1e-9;
            if now && !inside {
                runs += 1;
            }
            inside = now;
        }
        assert_eq!(runs, 2);
    }

    #[test]
    fn vanishing_teeth_add_vanishing_depth() {
        let grid = FrequencyGrid::new(0.0, 12.0, 1_200_001).unwrap();
        let mut last = f64::INFINITY;
        for finesse in [2.0, 8.0, 32.0, 100.0] {
            let spec = CombSpec {
                bandwidth_mhz: 10.0,
                delta_mhz: 1.0,
                finesse,
                ..nominal_comb()
            };
            let p = build_comb_profile(&spec, &grid).unwrap();
            let added = p.mean_depth(-5.0, 5.0) - 0.2;
            assert!((added - 2.0 / finesse).abs() < 1e-3, "F={finesse}: {added}");
            assert!(added < last);
            last = added;
        }
    }

    #[test]
    fn coarse_grid_and_oversized_band_are_rejected() {
        let spec = nominal_comb();
        let coarse = FrequencyGrid::memory_default();
        assert!(build_comb_profile(&spec, &coarse).is_ok());
        let too_coarse = FrequencyGrid::new(0.0, 400.0, 100_000).unwrap();
        assert!(matches!(
            build_comb_profile(&spec, &too_coarse),
            Err(Error::GridTooCoarse { .. })
        ));
        let narrow = FrequencyGrid::new(0.0, 50.0, 1_000_001).unwrap();
        assert!(matches!(
            build_comb_profile(&spec, &narrow),
            Err(Error::OutsideGrid { .. })
        ));
    }

    #[test]
    fn transparency_window_plateaus_at_residual() {
        let grid = FrequencyGrid::new(0.0, 400.0, 4001).unwrap();
        let env = SpectralProfile::envelope(grid, &InhomogeneousLine::default());
        let burned = burn_transparency(&env, (-100.0, 100.0), 0.2).unwrap();
        for (f, d) in grid.frequencies().zip(burned.depths()) {
            if f.abs() <= 100.0 - 1e-9 {
                assert_eq!(*d, 0.2);
            } else if f.abs() > 100.0 + 1e-9 {
                assert!(*d > 7.0);
            }
        }
        let same = burn_transparency(&env, (10.0, 10.0), 0.2).unwrap();
        assert_eq!(same, env);
        let clear = burn_transparency(&env, (-100.0, 100.0), 0.0).unwrap();
        let w = LineShape::Flat {
            lo_mhz: -50.0,
            hi_mhz: 50.0,
        };
        assert!((transmitted_fraction(&clear, &w).unwrap() - 1.0).abs() < 1e-12);
        assert!(burn_transparency(&env, (-300.0, 0.0), 0.2).is_err());
    }

    /// Independent oracle: adaptive Simpson on the analytic Lorentzian.
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, n: usize) -> f64 {
        let n = n + n % 2;
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let x = a + i as f64 * h;
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        s * h / 3.0
    }

    #[test]
    fn saturated_band_absorbs_lorentzian_overlap() {
        // Wide grid so truncation renormalisation is negligible.
        let grid = FrequencyGrid::new(0.0, 20_000.0, 2_000_001).unwrap();
        let mut depth = vec![0.0; grid.len()];
        for i in grid.index_range(-50.0, 50.0) {
            depth[i] = 1e3;
        }
        let p = SpectralProfile::from_depths(grid, depth).unwrap();
        let s = LineShape::lorentzian(0.0, 64.0);
        let got = absorbed_fraction(&p, &s).unwrap();
        let lor = |f: f64| 32.0 / PI / (f * f + 32.0 * 32.0);
        let inside = simpson(&lor, -50.0, 50.0, 20_000);
        let total = simpson(&lor, -10_000.0, 10_000.0, 2_000_000);
        let oracle = inside / total;
        let analytic = 2.0 / PI * (100.0f64 / 64.0).atan();
        assert!((analytic - 0.637_564).abs() < 1e-6);
        assert!((got - analytic).abs() < 2e-3);
        assert!((got - oracle).abs() < 2e-4, "{got} vs {oracle}");
    }

    #[test]
    fn zero_depth_absorbs_nothing() {
        let grid = FrequencyGrid::new(0.0, 400.0, 4001).unwrap();
        let p = SpectralProfile::flat(grid, 0.0).unwrap();
        assert_eq!(absorbed_fraction(&p, &LineShape::lorentzian(0.0, 64.0)).unwrap(), 0.0);
    }

    #[test]
    fn spectrum_entirely_off_grid_is_a_normalization_error() {
        let grid = FrequencyGrid::new(0.0, 1.0, 11).unwrap();
        let p = SpectralProfile::flat(grid, 1.0).unwrap();
        let s = LineShape::Flat {
            lo_mhz: 10.0,
            hi_mhz: 11.0,
        };
        assert!(matches!(absorbed_fraction(&p, &s), Err(Error::Normalization(_))));
    }

    #[test]
    fn text_format_round_trips() {
        let grid = FrequencyGrid::new(5.0, 2.0, 21).unwrap();
        let p = SpectralProfile::envelope(grid, &InhomogeneousLine::default());
        let mut buf = Vec::new();
        p.write_text(&mut buf).unwrap();
        let q = SpectralProfile::read_text(&buf[..]).unwrap();
        assert_eq!(q.grid().len(), 21);
        for (a, b) in p.depths().iter().zip(q.depths()) {
            assert!((a - b).abs() < 1e-8 * a.abs().max(1.0));
        }
    }
}
