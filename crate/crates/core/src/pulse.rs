//! Complex baseband waveforms for comb preparation.
//!
//! Frequencies are in MHz, times in seconds, and envelopes are normalised to
//! modulator full scale (`|a| <= 1`).

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::spectral::{CombSpec, FrequencyGrid};

/// Default sech truncation: the envelope is `sech(10)` at the pulse edges.
pub const DEFAULT_TRUNCATION: f64 = 10.0;
/// Default AWG sample rate for millisecond pulses.
pub const DEFAULT_SAMPLE_RATE: f64 = 2.0e9;
/// Minimum oversampling of the highest baseband frequency.
pub const OVERSAMPLING: f64 = 8.0;

const CLIP_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PulseWaveform {
    sample_rate: f64,
    duration: f64,
    envelope: Vec<Complex64>,
}

impl PulseWaveform {
    pub fn new(sample_rate: f64, duration: f64, envelope: Vec<Complex64>) -> Result<Self> {
        if !(sample_rate > 0.0) {
            return Err(invalid("sample_rate", "must be positive"));
        }
        if envelope.len() as f64 != (sample_rate * duration).round() {
            return Err(invalid(
                "envelope",
                format!(
                    "{} samples do not match round(rate * duration) = {}",
                    envelope.len(),
                    (sample_rate * duration).round()
                ),
            ));
        }
        let peak = peak_abs(&envelope);
        if peak > 1.0 + CLIP_TOLERANCE {
            return Err(Error::Clipping(peak));
        }
        Ok(Self {
            sample_rate,
            duration,
            envelope,
        })
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.envelope
    }

    pub fn len(&self) -> usize {
        self.envelope.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envelope.is_empty()
    }

    pub fn peak_amplitude(&self) -> f64 {
        peak_abs(&self.envelope)
    }

    /// Mean of `|a|²` over the samples.
    pub fn average_power(&self) -> f64 {
        if self.envelope.is_empty() {
            return 0.0;
        }
        self.envelope.iter().map(|a| a.norm_sqr()).sum::<f64>() / self.envelope.len() as f64
    }

    /// `Σ |a|² / f_s`.
    pub fn energy(&self) -> f64 {
        self.envelope.iter().map(|a| a.norm_sqr()).sum::<f64>() / self.sample_rate
    }

    /// Reversed in time.
    pub fn time_reversed(&self) -> Self {
        let mut envelope = self.envelope.clone();
        envelope.reverse();
        Self { envelope, ..*self }
    }

    /// Interleaved little-endian `f32` (re, im) pairs.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let mut buf = Vec::with_capacity(self.envelope.len() * 8);
        for a in &self.envelope {
            buf.extend_from_slice(&(a.re as f32).to_le_bytes());
            buf.extend_from_slice(&(a.im as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn write_sidecar<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "sample_rate = {:e}", self.sample_rate)?;
        writeln!(w, "duration = {:e}", self.duration)?;
        writeln!(w, "samples = {}", self.envelope.len())?;
        writeln!(w, "format = f32le interleaved re,im")?;
        Ok(())
    }
}

fn peak_abs(x: &[Complex64]) -> f64 {
    x.iter().map(|a| a.norm()).fold(0.0, f64::max)
}

fn normalize_peak(mut x: Vec<Complex64>) -> Result<Vec<Complex64>> {
    let peak = peak_abs(&x);
    if !(peak > 0.0) {
        return Err(Error::ZeroPower);
    }
    let s = 1.0 / peak;
    x.iter_mut().for_each(|a| *a *= s);
    Ok(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SechChirpParams {
    pub center_frequency_mhz: f64,
    pub chirp_bandwidth_mhz: f64,
    pub duration_s: f64,
    pub truncation: f64,
    pub sample_rate: f64,
}

impl Default for SechChirpParams {
    fn default() -> Self {
        Self {
            center_frequency_mhz: 150.0,
            chirp_bandwidth_mhz: 100.0,
            duration_s: 1e-3,
            truncation: DEFAULT_TRUNCATION,
            sample_rate: DEFAULT_SAMPLE_RATE,
        }
    }
}

/// Shared sech envelope and tanh chirp, evaluated at sample `j`.
///
/// Returns `(amplitude, chirp phase)`; the chirp phase excludes the carrier.
#[inline]
fn sech_chirp_sample(j: usize, fs: f64, duration: f64, beta: f64, bandwidth_hz: f64) -> (f64, f64) {
    let half = 0.5 * duration;
    let t = j as f64 / fs - half;
    let x = beta * t / half;
    let amp = 1.0 / x.cosh();
    let phase = 2.0 * PI * 0.5 * bandwidth_hz * (half / beta) * ln_cosh(x);
    (amp, phase)
}

/// `ln cosh x` without overflow.
#[inline]
fn ln_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// Instantaneous frequency (MHz) of a sech chirp at time `t` (s) from its start.
pub fn sech_instantaneous_frequency(p: &SechChirpParams, t: f64) -> f64 {
    let half = 0.5 * p.duration_s;
    p.center_frequency_mhz + 0.5 * p.chirp_bandwidth_mhz * (p.truncation * (t - half) / half).tanh()
}

fn check_timing(duration: f64, truncation: f64, fs: f64) -> Result<()> {
    if !(duration > 0.0) {
        return Err(invalid("duration_s", "must be positive"));
    }
    if !(truncation > 0.0) {
        return Err(invalid("truncation", "must be positive"));
    }
    if !(fs > 0.0) {
        return Err(invalid("sample_rate", "must be positive"));
    }
    if (fs * duration).round() < 2.0 {
        return Err(invalid("duration_s", "shorter than two samples"));
    }
    Ok(())
}

/// Hyperbolic-secant amplitude with a tanh frequency sweep of
/// `center ± bandwidth/2`, peak normalised to one.
pub fn sech_chirp(p: &SechChirpParams) -> Result<PulseWaveform> {
    if !(p.chirp_bandwidth_mhz >= 0.0) {
        return Err(invalid("chirp_bandwidth_mhz", "must be non-negative"));
    }
    check_timing(p.duration_s, p.truncation, p.sample_rate)?;
    let required = OVERSAMPLING * (p.center_frequency_mhz.abs() + p.chirp_bandwidth_mhz) * 1e6;
    if p.sample_rate < required {
        return Err(Error::SampleRateTooLow {
            sample_rate: p.sample_rate,
            required,
        });
    }
    let n = (p.sample_rate * p.duration_s).round() as usize;
    let fc = p.center_frequency_mhz * 1e6;
    let half = 0.5 * p.duration_s;
    let env: Vec<Complex64> = (0..n)
        .into_par_iter()
        .map(|j| {
            let (amp, chirp) = sech_chirp_sample(
                j,
                p.sample_rate,
                p.duration_s,
                p.truncation,
                p.chirp_bandwidth_mhz * 1e6,
            );
            let t = j as f64 / p.sample_rate - half;
            let carrier = 2.0 * PI * (fc * t).rem_euclid(1.0);
            Complex64::from_polar(amp, carrier + chirp)
        })
        .collect();
    PulseWaveform::new(p.sample_rate, p.duration_s, normalize_peak(env)?)
}

/// Schroeder phase schedule `θ_k = π k² / n (mod 2π)`.
pub fn schroeder_phases(n_tones: usize) -> Vec<f64> {
    let n = n_tones as u128;
    (0..n)
        .map(|k| {
            // k² mod 2n keeps the phase exact for large k.
            let r = (k * k) % (2 * n);
            PI * r as f64 / n as f64
        })
        .collect()
}

/// One period of `Σ_k exp(i(2π k j / m + φ_k))`, `j = 0..m`.
fn periodic_tones(phases: &[f64], m: usize, fft: Option<Arc<dyn Fft<f64>>>) -> Vec<Complex64> {
    assert!(m >= phases.len());
    let mut buf = vec![Complex64::new(0.0, 0.0); m];
    for (k, phi) in phases.iter().enumerate() {
        buf[k] = Complex64::from_polar(1.0, *phi);
    }
    let fft = fft.unwrap_or_else(|| FftPlanner::new().plan_fft_inverse(m));
    fft.process(&mut buf);
    buf
}

fn tone_sum_at(phases: &[f64], spacing_hz: f64, t: f64) -> Complex64 {
    phases
        .iter()
        .enumerate()
        .map(|(k, phi)| {
            let cyc = (k as f64 * spacing_hz * t).rem_euclid(1.0);
            Complex64::from_polar(1.0, 2.0 * PI * cyc + phi)
        })
        .sum()
}

/// One period of equal-amplitude tones with the given phases, sampled at
/// `samples_per_period` points (tone spacing 1 Hz, duration 1 s).
///
/// Peak normalised to one.
pub fn tone_comb(phases: &[f64], samples_per_period: usize) -> Result<PulseWaveform> {
    if phases.is_empty() {
        return Err(Error::ZeroPower);
    }
    if samples_per_period < phases.len() {
        return Err(Error::SampleRateTooLow {
            sample_rate: samples_per_period as f64,
            required: phases.len() as f64,
        });
    }
    let x = periodic_tones(phases, samples_per_period, None);
    PulseWaveform::new(samples_per_period as f64, 1.0, normalize_peak(x)?)
}

/// Multi-frequency burn pulse: one slow chirp per comb anti-tooth, all
/// sharing a sech envelope and chirp, with per-component phases.
///
/// Component `k` sweeps the hole width `Δ(1 − 1/F)` around
/// `carrier + (k − (N−1)/2)Δ + Δ/2`.
pub fn multi_tooth_pulse(
    spec: &CombSpec,
    phases: &[f64],
    carrier_offset_mhz: f64,
    duration_s: f64,
    sample_rate: f64,
) -> Result<PulseWaveform> {
    spec.validate()?;
    let n = phases.len();
    if n == 0 {
        return Err(invalid("phases", "need at least one component"));
    }
    check_timing(duration_s, DEFAULT_TRUNCATION, sample_rate)?;
    let delta_hz = spec.delta_mhz * 1e6;
    if delta_hz * duration_s < 4.0 {
        return Err(Error::UnresolvableSpacing {
            delta_mhz: spec.delta_mhz,
            duration_s,
        });
    }
    let span_mhz = n as f64 * spec.delta_mhz;
    let required = OVERSAMPLING * (carrier_offset_mhz.abs() + span_mhz) * 1e6;
    if sample_rate < required {
        return Err(Error::SampleRateTooLow { sample_rate, required });
    }
    let hole_hz = delta_hz * (1.0 - 1.0 / spec.finesse);
    let f0 = carrier_offset_mhz * 1e6 + (0.5 - 0.5 * (n as f64 - 1.0)) * delta_hz;
    let len = (sample_rate * duration_s).round() as usize;
    let half = 0.5 * duration_s;

    // Σ_k exp(i(2π kΔ t + φ_k)) repeats every 1/Δ: tabulate one period.
    let m_exact = sample_rate / delta_hz;
    let m = m_exact.round() as usize;
    let table = if (m_exact - m as f64).abs() < 1e-9 * m_exact && m >= n {
        Some(periodic_tones(phases, m, None))
    } else {
        None
    };

    let env: Vec<Complex64> = (0..len)
        .into_par_iter()
        .map(|j| {
            let t = j as f64 / sample_rate;
            let tones = match &table {
                Some(tab) => tab[j % m],
                None => tone_sum_at(phases, delta_hz, t),
            };
            let (amp, chirp) = sech_chirp_sample(j, sample_rate, duration_s, DEFAULT_TRUNCATION, hole_hz);
            // Carrier referenced to the pulse centre, as in `sech_chirp`.
            let carrier = 2.0 * PI * (f0 * (t - half)).rem_euclid(1.0);
            tones * Complex64::from_polar(amp, carrier + chirp)
        })
        .collect();
    PulseWaveform::new(sample_rate, duration_s, normalize_peak(env)?)
}

/// Peak instantaneous power over mean power.
pub fn crest_factor(w: &PulseWaveform) -> Result<f64> {
    let mean = w.average_power();
    if !(mean > 0.0) {
        return Err(Error::ZeroPower);
    }
    let peak = w.peak_amplitude();
    Ok(peak * peak / mean)
}

/// Power spectral density on an fftshifted frequency axis (MHz).
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSpectrum {
    pub grid: FrequencyGrid,
    pub psd: Vec<f64>,
}

impl PowerSpectrum {
    pub fn total(&self) -> f64 {
        self.psd.iter().sum()
    }

    /// Summed power in `[lo, hi]` MHz.
    pub fn band_power(&self, lo: f64, hi: f64) -> f64 {
        self.psd[self.grid.index_range(lo, hi)].iter().sum()
    }

    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# frequency_MHz power")?;
        for (f, p) in self.grid.frequencies().zip(&self.psd) {
            writeln!(w, "{f:.9} {p:.9e}")?;
        }
        Ok(())
    }
}

/// `|DFT|² / n`, so the bins sum to `Σ |a|²`.
pub fn pulse_spectrum(w: &PulseWaveform) -> Result<PowerSpectrum> {
    let n = w.len();
    if n < 2 {
        return Err(invalid("waveform", "need at least two samples"));
    }
    let mut buf = w.samples().to_vec();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let df = w.sample_rate() / n as f64 * 1e-6;
    let first = -((n / 2) as f64);
    let lo = first * df;
    let span = (n - 1) as f64 * df;
    let grid = FrequencyGrid::new(lo + 0.5 * span, span, n)?;
    let shift = n - n / 2;
    let psd = (0..n).map(|i| buf[(i + shift) % n].norm_sqr() / n as f64).collect();
    Ok(PowerSpectrum { grid, psd })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::ToothShape;

    fn comb(n: usize, delta_mhz: f64) -> CombSpec {
        CombSpec {
            center_mhz: 0.0,
            bandwidth_mhz: n as f64 * delta_mhz,
            delta_mhz,
            finesse: 2.0,
            tooth_shape: ToothShape::Square,
            peak_depth: 2.0,
            background_depth: 0.2,
        }
    }

    fn inst_freq(w: &PulseWaveform, j: usize) -> f64 {
        let s = w.samples();
        (s[j + 1] * s[j].conj()).arg() / (2.0 * PI) * w.sample_rate() * 1e-6
    }

    #[test]
    fn chirp_sweeps_100_to_200_mhz() {
        let p = SechChirpParams::default();
        let w = sech_chirp(&p).unwrap();
        assert_eq!(w.len(), 2_000_000);
        assert!((w.peak_amplitude() - 1.0).abs() < 1e-12);
        assert!((inst_freq(&w, 10) - 100.0).abs() < 0.01);
        assert!((inst_freq(&w, w.len() - 12) - 200.0).abs() < 0.01);
        assert!((inst_freq(&w, w.len() / 2) - 150.0).abs() < 0.01);
        let mid = sech_instantaneous_frequency(&p, 0.5e-3);
        assert!((mid - 150.0).abs() < 1e-12);
    }

    #[test]
    fn undersampled_chirp_is_rejected() {
        let p = SechChirpParams {
            sample_rate: 1e9,
            ..Default::default()
        };
        assert!(matches!(sech_chirp(&p), Err(Error::SampleRateTooLow { .. })));
    }

    #[test]
    fn reversal_keeps_modulus_and_flips_sweep() {
        let p = SechChirpParams {
            duration_s: 20e-6,
            ..Default::default()
        };
        let w = sech_chirp(&p).unwrap();
        let n = w.len();
        for j in 0..n / 2 {
            let a = w.samples()[j].norm();
            let b = w.samples()[n - 1 - j].norm();
            // Samples straddle t0 by half a step, so compare to first order.
            assert!((a - b).abs() < 2e-3 * a.max(1e-6), "{j}");
        }
        let r = w.time_reversed();
        // Reversed waveform runs backwards in phase: the sweep goes 200 → 100 MHz
        // after conjugation.
        let conj: Vec<_> = r.samples().iter().map(|a| a.conj()).collect();
        let c = PulseWaveform::new(r.sample_rate(), r.duration(), conj).unwrap();
        assert!((inst_freq(&c, 10) - 200.0).abs() < 0.05);
        assert!((inst_freq(&c, n - 12) - 100.0).abs() < 0.05);
    }

    fn fwhm_mhz(s: &PowerSpectrum) -> f64 {
        let peak = s.psd.iter().cloned().fold(0.0, f64::max);
        let above: Vec<usize> = (0..s.psd.len()).filter(|&i| s.psd[i] >= 0.5 * peak).collect();
        let h = s.grid.spacing();
        (above.last().unwrap() - above.first().unwrap() + 1) as f64 * h
    }

    #[test]
    fn unchirped_sech_width_scales_inversely_with_duration() {
        let mk = |t: f64| {
            let p = SechChirpParams {
                center_frequency_mhz: 1.0,
                chirp_bandwidth_mhz: 0.0,
                duration_s: t,
                truncation: DEFAULT_TRUNCATION,
                sample_rate: 2e8,
            };
            // Zero-pad for resolution.
            let w = sech_chirp(&p).unwrap();
            let mut s = w.samples().to_vec();
            s.resize(s.len() * 16, Complex64::new(0.0, 0.0));
            let dur = s.len() as f64 / p.sample_rate;
            pulse_spectrum(&PulseWaveform::new(p.sample_rate, dur, s).unwrap()).unwrap()
        };
        let a = fwhm_mhz(&mk(20e-6));
        let b = fwhm_mhz(&mk(40e-6));
        assert!((a / b - 2.0).abs() < 0.1, "{a} {b}");
    }

    #[test]
    fn schroeder_schedule_values() {
        assert_eq!(schroeder_phases(1), vec![0.0]);
        let p = schroeder_phases(4);
        let expect = [0.0, PI / 4.0, PI, PI / 4.0];
        for (a, b) in p.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        // Large indices stay reduced.
        let big = schroeder_phases(2500);
        assert!(big.iter().all(|p| (0.0..2.0 * PI).contains(p)));
        let k = 2499f64;
        let direct = (PI * k * k / 2500.0).rem_euclid(2.0 * PI);
        assert!((big[2499] - direct).abs() < 1e-9);
    }

    /// Brute-force PAPR of equal tones on a dense time grid, no FFT.
    fn papr_oracle(phases: &[f64], oversample: usize) -> f64 {
        let n = phases.len();
        let m = n * oversample;
        let mut peak: f64 = 0.0;
        let mut mean = 0.0;
        for j in 0..m {
            let t = j as f64 / m as f64;
            let s: Complex64 = phases
                .iter()
                .enumerate()
                .map(|(k, p)| Complex64::from_polar(1.0, 2.0 * PI * k as f64 * t + p))
                .sum();
            peak = peak.max(s.norm_sqr());
            mean += s.norm_sqr();
        }
        peak / (mean / m as f64)
    }

    #[test]
    fn schroeder_crest_factor_beats_zero_phase() {
        let n = 100;
        let s = papr_oracle(&schroeder_phases(n), 16);
        let z = papr_oracle(&vec![0.0; n], 16);
        assert!((z - n as f64).abs() < 1e-6);
        assert!(s <= 0.15 * z && s <= 3.0, "{s}");
        let via_fft = crest_factor(&tone_comb(&schroeder_phases(n), 16 * n).unwrap()).unwrap();
        assert!((via_fft - s).abs() < 1e-9 * s);
    }

    #[test]
    fn crest_factor_limits() {
        let tone = tone_comb(&[0.3], 64).unwrap();
        assert!((crest_factor(&tone).unwrap() - 1.0).abs() < 1e-12);
        let zero = PulseWaveform::new(1.0, 4.0, vec![Complex64::new(0.0, 0.0); 4]).unwrap();
        assert!(matches!(crest_factor(&zero), Err(Error::ZeroPower)));
        assert!(matches!(
            PulseWaveform::new(1.0, 1.0, vec![Complex64::new(1.5, 0.0)]),
            Err(Error::Clipping(_))
        ));
    }

    #[test]
    fn parseval_holds() {
        let w = tone_comb(&schroeder_phases(37), 1000).unwrap();
        let s = pulse_spectrum(&w).unwrap();
        let time: f64 = w.samples().iter().map(|a| a.norm_sqr()).sum();
        assert!((s.total() - time).abs() < 1e-9 * time);
    }

    #[test]
    fn pure_tone_lands_in_one_bin() {
        let fs = 1e6;
        let n = 1000;
        let f0 = 0.123; // MHz, exactly bin 123
        let x: Vec<_> = (0..n)
            .map(|j| Complex64::from_polar(1.0, 2.0 * PI * f0 * 1e6 * j as f64 / fs))
            .collect();
        let s = pulse_spectrum(&PulseWaveform::new(fs, n as f64 / fs, x).unwrap()).unwrap();
        let (imax, _) = s
            .psd
            .iter()
            .enumerate()
            .fold((0, 0.0), |a, (i, p)| if *p > a.1 { (i, *p) } else { a });
        assert!((s.grid.freq(imax) - f0).abs() < 1e-9);
        assert!(s.psd[imax] / s.total() > 1.0 - 1e-9);
    }

    #[test]
    fn chirp_energy_inside_sweep_band() {
        let w = sech_chirp(&SechChirpParams::default()).unwrap();
        let s = pulse_spectrum(&w).unwrap();
        assert!(s.band_power(100.0, 200.0) / s.total() >= 0.95);
    }

    #[test]
    fn single_component_is_a_single_chirp() {
        let spec = comb(1, 0.04);
        let fs = 4e6;
        let w = multi_tooth_pulse(&spec, &[0.0], 0.0, 1e-3, fs).unwrap();
        let p = SechChirpParams {
            center_frequency_mhz: 0.02,
            chirp_bandwidth_mhz: 0.02,
            duration_s: 1e-3,
            truncation: DEFAULT_TRUNCATION,
            sample_rate: fs,
        };
        let c = sech_chirp(&p).unwrap();
        for (a, b) in w.samples().iter().zip(c.samples()) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn tabulated_tones_match_direct_sum() {
        let phases = schroeder_phases(40);
        let m = 400;
        let tab = periodic_tones(&phases, m, None);
        for j in (0..m).step_by(7) {
            let d = tone_sum_at(&phases, 1.0, j as f64 / m as f64);
            assert!((tab[j] - d).norm() < 1e-9);
        }
    }

    #[test]
    fn spacing_too_fine_for_duration() {
        let spec = comb(10, 0.001);
        assert!(matches!(
            multi_tooth_pulse(&spec, &[0.0; 10], 0.0, 1e-3, 1e6),
            Err(Error::UnresolvableSpacing { .. })
        ));
    }

    #[test]
    fn burn_pulse_peaks_sit_on_anti_teeth() {
        let n = 50;
        let delta = 0.04;
        let spec = comb(n, delta);
        let fs = 32e6;
        let carrier = 1.0;
        let w = multi_tooth_pulse(&spec, &schroeder_phases(n), carrier, 1e-3, fs).unwrap();
        let s = pulse_spectrum(&w).unwrap();
        let mut peaks = Vec::new();
        for k in 0..n {
            let f = carrier + (k as f64 - 0.5 * (n as f64 - 1.0)) * delta + 0.5 * delta;
            let r = s.grid.index_range(f - 0.25 * delta, f + 0.25 * delta);
            let (i, p) = r
                .map(|i| (i, s.psd[i]))
                .fold((0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
            peaks.push((s.grid.freq(i), p));
        }
        let hi = peaks.iter().map(|p| p.1).fold(0.0, f64::max);
        let lo = peaks.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        assert!(
            10.0 * (hi / lo).log10() <= 1.0,
            "ripple {} dB",
            10.0 * (hi / lo).log10()
        );
        // Peak-finding oracle: consecutive spacings equal Δ to a bin.
        for pair in peaks.windows(2) {
            assert!((pair[1].0 - pair[0].0 - delta).abs() <= 1.5 * s.grid.spacing());
        }
    }
}
