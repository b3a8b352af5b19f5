//! Filtered pair source, detectors and gated timing: analytic predictions and
//! a Monte-Carlo time-tag generator.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::events::{Event, EventStream, IDLER, NO_TRIAL, SIGNAL, SYNC};
use crate::memory::{substream, Fate, MemoryParams};

const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceParams {
    /// Mean pairs per coherence time at the reference pump power.
    pub mean_pairs_per_mode: f64,
    pub signal_filter_fwhm_mhz: f64,
    pub idler_filter_fwhm_mhz: f64,
    pub pump_power_uw: f64,
    pub reference_power_uw: f64,
}

impl Default for SourceParams {
    fn default() -> Self {
        Self {
            mean_pairs_per_mode: 0.0144,
            signal_filter_fwhm_mhz: 64.0,
            idler_filter_fwhm_mhz: 500.0,
            pump_power_uw: 270.0,
            reference_power_uw: 270.0,
        }
    }
}

impl SourceParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mean_pairs_per_mode >= 0.0) {
            return Err(invalid("mean_pairs_per_mode", "must be non-negative"));
        }
        if !(self.signal_filter_fwhm_mhz > 0.0) || !(self.idler_filter_fwhm_mhz > 0.0) {
            return Err(invalid("signal_filter_fwhm_mhz", "filter widths must be positive"));
        }
        if !(self.pump_power_uw >= 0.0) || !(self.reference_power_uw > 0.0) {
            return Err(invalid("pump_power_uw", "powers must be non-negative"));
        }
        Ok(())
    }

    /// `1/(π·FWHM)` of the signal filter, in ns.
    pub fn coherence_time_ns(&self) -> f64 {
        1e3 / (std::f64::consts::PI * self.signal_filter_fwhm_mhz)
    }

    /// µ scaled linearly with pump power.
    pub fn mu(&self) -> f64 {
        self.mean_pairs_per_mode * self.pump_power_uw / self.reference_power_uw
    }

    /// Pair emission rate while the pump is on, per second.
    pub fn pair_rate_hz(&self) -> f64 {
        self.mu() / (self.coherence_time_ns() * 1e-9)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    pub efficiency_signal: f64,
    pub efficiency_idler: f64,
    pub dark_rate_signal_hz: f64,
    pub dark_rate_idler_hz: f64,
    pub jitter_fwhm_signal_ns: f64,
    pub jitter_fwhm_idler_ns: f64,
    /// Optical transmission from source to detector, memory excluded.
    pub signal_path_transmission: f64,
    pub idler_path_transmission: f64,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            efficiency_signal: 0.20,
            efficiency_idler: 0.80,
            dark_rate_signal_hz: 30.0,
            dark_rate_idler_hz: 100.0,
            jitter_fwhm_signal_ns: 0.694,
            jitter_fwhm_idler_ns: 1.816,
            signal_path_transmission: 2.68e-3,
            idler_path_transmission: 0.9,
        }
    }
}

impl DetectorParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("efficiency_signal", self.efficiency_signal),
            ("efficiency_idler", self.efficiency_idler),
            ("signal_path_transmission", self.signal_path_transmission),
            ("idler_path_transmission", self.idler_path_transmission),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(name, "must lie in [0, 1]"));
            }
        }
        for (name, v) in [
            ("dark_rate_signal_hz", self.dark_rate_signal_hz),
            ("dark_rate_idler_hz", self.dark_rate_idler_hz),
            ("jitter_fwhm_signal_ns", self.jitter_fwhm_signal_ns),
            ("jitter_fwhm_idler_ns", self.jitter_fwhm_idler_ns),
        ] {
            if !(v >= 0.0) {
                return Err(invalid(name, "must be non-negative"));
            }
        }
        Ok(())
    }

    /// Combined Gaussian jitter of a signal-idler delay, σ in ns.
    pub fn pair_jitter_sigma_ns(&self) -> f64 {
        self.jitter_fwhm_signal_ns.hypot(self.jitter_fwhm_idler_ns) / FWHM_PER_SIGMA
    }
}

/// Optional fiber spool on the idler arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdlerLink {
    pub fiber_length_km: f64,
    pub delay_us_per_km: f64,
    pub loss_db_per_km: f64,
}

impl Default for IdlerLink {
    fn default() -> Self {
        Self {
            fiber_length_km: 0.0,
            delay_us_per_km: 4.9,
            loss_db_per_km: 0.2,
        }
    }
}

impl IdlerLink {
    pub fn validate(&self) -> Result<()> {
        if !(self.fiber_length_km >= 0.0) || !(self.delay_us_per_km >= 0.0) || !(self.loss_db_per_km >= 0.0) {
            return Err(invalid("fiber_length_km", "fiber parameters must be non-negative"));
        }
        Ok(())
    }

    pub fn delay_us(&self) -> f64 {
        self.fiber_length_km * self.delay_us_per_km
    }

    pub fn transmission(&self) -> f64 {
        10f64.powf(-self.fiber_length_km * self.loss_db_per_km / 10.0)
    }
}

/// Repeating preparation/measurement cycle. Inside the measurement block,
/// trials alternate a pump gate of one storage time with a detection gate of
/// equal length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequenceTiming {
    pub repetition_hz: f64,
    pub polarization_ms: f64,
    pub burn_ms: f64,
    pub measurement_ms: f64,
    pub storage_time_us: f64,
}

impl Default for SequenceTiming {
    fn default() -> Self {
        Self {
            repetition_hz: 2.3,
            polarization_ms: 200.0,
            burn_ms: 50.0,
            measurement_ms: 50.0,
            storage_time_us: 25.0,
        }
    }
}

impl SequenceTiming {
    pub fn validate(&self) -> Result<()> {
        if !(self.repetition_hz > 0.0) {
            return Err(invalid("repetition_hz", "must be positive"));
        }
        if !(self.storage_time_us > 0.0) {
            return Err(invalid("storage_time_us", "must be positive"));
        }
        if !(self.polarization_ms >= 0.0) || !(self.burn_ms >= 0.0) || !(self.measurement_ms > 0.0) {
            return Err(invalid("measurement_ms", "sequence durations must be non-negative"));
        }
        let busy = (self.polarization_ms + self.burn_ms + self.measurement_ms) * 1e-3;
        if busy > self.period_s() * (1.0 + 1e-12) {
            return Err(invalid("repetition_hz", "sequence does not fit in one period"));
        }
        if self.trials_per_block() == 0 {
            return Err(invalid("storage_time_us", "no trial fits in the measurement block"));
        }
        Ok(())
    }

    pub fn period_s(&self) -> f64 {
        1.0 / self.repetition_hz
    }

    pub fn period_ps(&self) -> u64 {
        (self.period_s() * 1e12).round() as u64
    }

    pub fn gate_ps(&self) -> u64 {
        (self.storage_time_us * 1e6).round() as u64
    }

    pub fn trial_length_ps(&self) -> u64 {
        2 * self.gate_ps()
    }

    pub fn block_start_ps(&self) -> u64 {
        ((self.polarization_ms + self.burn_ms) * 1e9).round() as u64
    }

    pub fn trials_per_block(&self) -> u64 {
        let block = (self.measurement_ms * 1e9).round() as u64;
        block.checked_div(self.trial_length_ps()).unwrap_or(0)
    }

    /// Fraction of wall time spent in detection gates.
    pub fn duty_cycle(&self) -> f64 {
        self.trials_per_block() as f64 * self.gate_ps() as f64 / self.period_ps() as f64
    }

    pub fn periods_in(&self, run_length_s: f64) -> u64 {
        ((run_length_s * self.repetition_hz + 1e-9).floor() as u64).max(1)
    }

    /// Total pump-on time in a run, s.
    pub fn pump_time_s(&self, run_length_s: f64) -> f64 {
        self.periods_in(run_length_s) as f64 * self.trials_per_block() as f64 * self.gate_ps() as f64 * 1e-12
    }
}

/// Pair-source prediction of the signal-idler cross-correlation for a
/// coincidence window containing `mu` pairs on average:
/// `1 + µη_sη_i / ((µη_s + n_s)(µη_i + n_i))`.
pub fn analytic_g2si(mu: f64, eta_s: f64, eta_i: f64, noise_s: f64, noise_i: f64) -> Result<f64> {
    for (name, v) in [("mu", mu), ("noise_s", noise_s), ("noise_i", noise_i)] {
        if !(v >= 0.0) {
            return Err(invalid(name, "must be non-negative"));
        }
    }
    if !(0.0..=1.0).contains(&eta_s) || !(0.0..=1.0).contains(&eta_i) {
        return Err(invalid("eta", "efficiencies must lie in [0, 1]"));
    }
    let ds = mu * eta_s + noise_s;
    let di = mu * eta_i + noise_i;
    if ds == 0.0 || di == 0.0 {
        return Err(invalid("mu", "a channel has no counts"));
    }
    Ok(1.0 + mu * eta_s * eta_i / (ds * di))
}

fn phi(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// CDF of a symmetric Laplace variable (scale `b`) plus an independent
/// Gaussian (σ = `s`).
pub fn laplace_gauss_cdf(x: f64, b: f64, s: f64) -> f64 {
    if s <= 0.0 {
        return if x < 0.0 {
            0.5 * (x / b).exp()
        } else {
            1.0 - 0.5 * (-x / b).exp()
        };
    }
    if b <= 0.0 {
        return phi(x / s);
    }
    let a = s / b;
    // Scaled complementary error function keeps the exponentials finite.
    let tail = |y: f64| -> f64 {
        // ½ e^{y·... } Φ(...) evaluated in log space
        let z = y / s + a;
        let log_phi = if z > 5.0 {
            (0.5 * libm::erfc(z / std::f64::consts::SQRT_2)).ln()
        } else {
            phi(-z).ln()
        };
        0.5 * (y / b + 0.5 * a * a + log_phi).exp()
    };
    phi(x / s) - tail(-x) + tail(x)
}

/// Probability that a Laplace(`b`)+Gauss(`s`) delay lands in a window of
/// `width` centred on zero.
pub fn window_fraction(width: f64, b: f64, s: f64) -> f64 {
    laplace_gauss_cdf(0.5 * width, b, s) - laplace_gauss_cdf(-0.5 * width, b, s)
}

/// Same for the difference of two independent Laplace delays plus Gaussian,
/// which shapes the cross term between photons of neighbouring pairs.
pub fn double_laplace_window_fraction(width: f64, b: f64, s: f64) -> f64 {
    let n = 4000;
    let lim = 40.0 * b;
    let h = 2.0 * lim / n as f64;
    let mut sum = 0.0;
    for k in 0..=n {
        let v = -lim + k as f64 * h;
        let wgt = if k == 0 || k == n {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let p = (-v.abs() / b).exp() / (2.0 * b);
        sum += wgt * p * (laplace_gauss_cdf(0.5 * width - v, b, s) - laplace_gauss_cdf(-0.5 * width - v, b, s));
    }
    sum * h / 3.0
}

/// Zero-delay autocorrelation of one channel of a single-mode thermal field
/// seen with Gaussian detector jitter, averaged over a bin of `bin_ns`
/// (0 for the point value). Equals 2 without jitter.
pub fn autocorrelation_model(coherence_time_ns: f64, jitter_fwhm_ns: f64, bin_ns: f64) -> f64 {
    let b = 0.5 * coherence_time_ns;
    // Two detections carry independent jitter.
    let s = std::f64::consts::SQRT_2 * jitter_fwhm_ns / FWHM_PER_SIGMA;
    if bin_ns <= 0.0 {
        if s <= 0.0 {
            return 2.0;
        }
        let h = 1e-4 * b.min(s);
        return 1.0 + coherence_time_ns * window_fraction(h, b, s) / h;
    }
    1.0 + coherence_time_ns * window_fraction(bin_ns, b, s) / bin_ns
}

/// Everything the generator needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationSetup {
    pub source: SourceParams,
    pub detectors: DetectorParams,
    pub link: IdlerLink,
    pub timing: SequenceTiming,
    pub memory: MemoryParams,
}

impl SimulationSetup {
    pub fn validate(&self) -> Result<()> {
        self.source.validate()?;
        self.detectors.validate()?;
        self.link.validate()?;
        self.timing.validate()?;
        self.memory.validate()?;
        Ok(())
    }

    pub fn eta_signal(&self) -> f64 {
        self.detectors.efficiency_signal * self.detectors.signal_path_transmission
    }

    pub fn eta_idler(&self) -> f64 {
        self.detectors.efficiency_idler * self.detectors.idler_path_transmission * self.link.transmission()
    }

    /// Expected signal-idler delay of echoes, µs.
    pub fn echo_delay_us(&self) -> f64 {
        self.memory.storage_time_us - self.link.delay_us()
    }

    /// Expected delay of photons transmitted through the memory, µs.
    pub fn transmission_delay_us(&self) -> f64 {
        -self.link.delay_us()
    }

    /// Closed-form prediction of the echo peak.
    pub fn echo_prediction(&self, bin_ns: f64) -> PeakPrediction {
        let r = self.source.pair_rate_hz();
        let tc = self.source.coherence_time_ns();
        let b = 0.5 * tc;
        let s = self.detectors.pair_jitter_sigma_ns().hypot(self.memory.echo_sigma_ns);
        let f = window_fraction(bin_ns, b, s);
        let f_cross = double_laplace_window_fraction(bin_ns, b, s);
        let w = bin_ns * 1e-9;
        let eta_s = self.eta_signal() * self.memory.p_echo;
        let eta_i = self.eta_idler();
        let x_s = if eta_s > 0.0 {
            self.detectors.dark_rate_signal_hz / (r * eta_s)
        } else {
            f64::INFINITY
        };
        let x_i = if eta_i > 0.0 && r > 0.0 {
            self.detectors.dark_rate_idler_hz / (r * eta_i)
        } else {
            f64::INFINITY
        };
        let direct = if r > 0.0 { f / (r * w) } else { f64::INFINITY };
        let cross = tc * f_cross / bin_ns;
        let g2 = 1.0 + (direct + cross) / ((1.0 + x_s) * (1.0 + x_i));
        PeakPrediction {
            g2,
            peak_fraction: f,
            direct,
            cross,
            signal_noise_ratio: x_s,
            idler_noise_ratio: x_i,
            coincidence_rate_hz: r * eta_s * eta_i * f,
        }
    }
}

/// Predicted peak-bin values; rates are per second of pump-on time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakPrediction {
    pub g2: f64,
    pub peak_fraction: f64,
    pub direct: f64,
    pub cross: f64,
    pub signal_noise_ratio: f64,
    pub idler_noise_ratio: f64,
    pub coincidence_rate_hz: f64,
}

const GENERATOR_DOMAIN: u64 = 0x5350_4443;

/// Monte-Carlo time-tag generator. Every sequence period draws from its own
/// random substream, so any subset of periods can be produced independently
/// and in any order.
#[derive(Debug, Clone)]
pub struct EventGenerator {
    setup: SimulationSetup,
    seed: u64,
    single_rate: f64,
    double_rate: f64,
    laplace: Exp<f64>,
    jitter_s: Option<Normal<f64>>,
    jitter_i: Option<Normal<f64>>,
    echo_spread: Option<Normal<f64>>,
}

fn gaussian(sigma: f64) -> Option<Normal<f64>> {
    (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("finite sigma"))
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> u64 {
    if mean <= 0.0 {
        0
    } else {
        Poisson::new(mean).map(|p| p.sample(rng) as u64).unwrap_or(0)
    }
}

impl EventGenerator {
    pub fn new(setup: SimulationSetup, seed: u64) -> Result<Self> {
        setup.validate()?;
        if (setup.memory.storage_time_us - setup.timing.storage_time_us).abs() > 1e-9 && setup.memory.p_echo > 0.0 {
            return Err(invalid(
                "storage_time_us",
                "memory storage time differs from the trial gate",
            ));
        }
        let r = setup.source.pair_rate_hz();
        let tc = setup.source.coherence_time_ns() * 1e-9;
        // Thermal bunching: pairs arrive singly or as close doubles.
        let mut double = 0.5 * r * r * tc;
        if 2.0 * double > r {
            return Err(invalid("mean_pairs_per_mode", "too large for the weak-source model"));
        }
        if r == 0.0 {
            double = 0.0;
        }
        let b_ps = 0.5 * setup.source.coherence_time_ns() * 1e3;
        Ok(Self {
            setup,
            seed,
            single_rate: r - 2.0 * double,
            double_rate: double,
            laplace: Exp::new(1.0 / b_ps).map_err(|e| invalid("signal_filter_fwhm_mhz", e.to_string()))?,
            jitter_s: gaussian(setup.detectors.jitter_fwhm_signal_ns * 1e3 / FWHM_PER_SIGMA),
            jitter_i: gaussian(setup.detectors.jitter_fwhm_idler_ns * 1e3 / FWHM_PER_SIGMA),
            echo_spread: gaussian(setup.memory.echo_sigma_ns * 1e3),
        })
    }

    pub fn setup(&self) -> &SimulationSetup {
        &self.setup
    }

    pub fn trial_length_ps(&self) -> u64 {
        self.setup.timing.trial_length_ps()
    }

    fn laplace_ps(&self, rng: &mut ChaCha8Rng) -> f64 {
        let x = self.laplace.sample(rng);
        if rng.random::<bool>() {
            x
        } else {
            -x
        }
    }

    fn emit_pair(&self, rng: &mut ChaCha8Rng, t_emit: f64, offset: f64, out: &mut Vec<(u8, u64)>) {
        let eta_i = self.setup.eta_idler();
        let eta_s = self.setup.eta_signal();
        let delay = self.setup.link.delay_us() * 1e6;
        if rng.random::<f64>() < eta_i {
            let j = self.jitter_i.map_or(0.0, |n| n.sample(rng));
            push(out, IDLER, t_emit + delay + j);
        }
        if rng.random::<f64>() < eta_s {
            let mut t = t_emit + offset;
            match self.setup.memory.fate(rng.random::<f64>()) {
                Fate::Echo => {
                    t += self.setup.memory.storage_time_us * 1e6 + self.echo_spread.map_or(0.0, |n| n.sample(rng));
                }
                Fate::Transmitted => {}
                Fate::Lost => return,
            }
            let j = self.jitter_s.map_or(0.0, |n| n.sample(rng));
            push(out, SIGNAL, t + j);
        }
    }

    /// All events of sequence period `p`, sorted, with global trial indices.
    pub fn period(&self, p: u64) -> Vec<Event> {
        let timing = &self.setup.timing;
        let mut rng = substream(self.seed, GENERATOR_DOMAIN, p);
        let period_ps = timing.period_ps();
        let t_period = p * period_ps;
        let gate = timing.gate_ps();
        let trials = timing.trials_per_block();
        let mut records: Vec<(u8, u64)> = Vec::new();
        let gate_s = gate as f64 * 1e-12;
        for j in 0..trials {
            let t0 = t_period + timing.block_start_ps() + j * timing.trial_length_ps();
            records.push((SYNC, t0));
            let t0f = t0 as f64;
            for _ in 0..poisson(&mut rng, self.single_rate * gate_s) {
                let te = t0f + rng.random::<f64>() * gate as f64;
                let off = self.laplace_ps(&mut rng);
                self.emit_pair(&mut rng, te, off, &mut records);
            }
            for _ in 0..poisson(&mut rng, self.double_rate * gate_s) {
                let te = t0f + rng.random::<f64>() * gate as f64;
                let off = self.laplace_ps(&mut rng);
                self.emit_pair(&mut rng, te, off, &mut records);
                let te2 = te + self.laplace_ps(&mut rng);
                if te2 >= t0f && te2 < t0f + gate as f64 {
                    self.emit_pair(&mut rng, te2, off, &mut records);
                }
            }
        }
        let det = &self.setup.detectors;
        for (ch, rate) in [(SIGNAL, det.dark_rate_signal_hz), (IDLER, det.dark_rate_idler_hz)] {
            for _ in 0..poisson(&mut rng, rate * timing.period_s()) {
                records.push((ch, t_period + rng.random_range(0..period_ps)));
            }
        }
        // Keep every record inside its own period so chunks concatenate sorted.
        let end = t_period + period_ps;
        records.retain(|&(_, t)| t >= t_period && t < end);
        records.sort_unstable_by_key(|&(c, t)| (t, c));
        let first_trial = p * trials;
        let tl = timing.trial_length_ps();
        let mut current: Option<(u64, u64)> = None;
        let mut k = 0;
        records
            .into_iter()
            .map(|(c, t)| {
                if c == SYNC {
                    current = Some((t, first_trial + k));
                    k += 1;
                }
                let trial = match current {
                    Some((t0, idx)) if t - t0 < tl && idx < NO_TRIAL as u64 => idx as u32,
                    _ => NO_TRIAL,
                };
                Event::new(c, t, trial)
            })
            .collect()
    }

    pub fn n_periods(&self, run_length_s: f64) -> u64 {
        self.setup.timing.periods_in(run_length_s)
    }

    /// Periods `range`, generated in parallel and concatenated in order.
    pub fn chunk(&self, range: std::ops::Range<u64>) -> Vec<Event> {
        let parts: Vec<Vec<Event>> = range.into_par_iter().map(|p| self.period(p)).collect();
        parts.concat()
    }

    /// Whole run in memory.
    pub fn generate(&self, run_length_s: f64) -> EventStream {
        let events = self.chunk(0..self.n_periods(run_length_s));
        EventStream::from_sorted(events, Some(self.trial_length_ps())).expect("periods are disjoint in time")
    }

    /// Feeds the run to `sink` in chunks of `batch` periods.
    pub fn stream<F: FnMut(&[Event]) -> Result<()>>(&self, run_length_s: f64, batch: u64, mut sink: F) -> Result<()> {
        let n = self.n_periods(run_length_s);
        let batch = batch.max(1);
        let mut p = 0;
        while p < n {
            let q = (p + batch).min(n);
            sink(&self.chunk(p..q))?;
            p = q;
        }
        Ok(())
    }
}

fn push(out: &mut Vec<(u8, u64)>, ch: u8, t: f64) {
    if t >= 0.0 {
        out.push((ch, t.round() as u64));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(storage_us: f64) -> SimulationSetup {
        SimulationSetup {
            source: SourceParams::default(),
            detectors: DetectorParams::default(),
            link: IdlerLink::default(),
            timing: SequenceTiming {
                storage_time_us: storage_us,
                ..Default::default()
            },
            memory: MemoryParams::new(storage_us, 2.72, 0.06, 0.3).unwrap(),
        }
    }

    #[test]
    fn nominal_duty_cycle() {
        for s in [1.0, 5.0, 10.0, 25.0] {
            let t = SequenceTiming {
                storage_time_us: s,
                ..Default::default()
            };
            t.validate().unwrap();
            assert!((t.duty_cycle() - 0.0575).abs() < 1e-4, "{s}: {}", t.duty_cycle());
        }
    }

    #[test]
    fn coherence_time_of_the_signal_filter() {
        let s = SourceParams::default();
        assert!((s.coherence_time_ns() - 4.9736).abs() < 1e-3);
        let doubled = SourceParams {
            pump_power_uw: 540.0,
            ..s
        };
        assert!((doubled.pair_rate_hz() / s.pair_rate_hz() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn analytic_limits() {
        let g = analytic_g2si(0.037, 1.0, 1.0, 0.0, 0.0).unwrap();
        assert!((g - (1.0 + 1.0 / 0.037)).abs() < 1e-12);
        assert!((g - 28.0).abs() < 0.1);
        assert!(analytic_g2si(1e6, 0.5, 0.5, 0.0, 0.0).unwrap() - 1.0 < 1e-5);
        assert!(analytic_g2si(0.01, 0.5, 0.5, 1e6, 0.0).unwrap() - 1.0 < 1e-4);
        assert!(analytic_g2si(0.0, 0.5, 0.5, 0.0, 0.0).is_err());
    }

    #[test]
    fn laplace_gauss_cdf_matches_quadrature() {
        let (b, s) = (2.5, 1.3);
        for x in [-20.0, -3.0, -0.4, 0.0, 0.7, 4.0, 30.0] {
            // Convolution by Simpson quadrature over the Gaussian.
            let n = 20_000;
            let lim = 12.0 * s;
            let h = 2.0 * lim / n as f64;
            let mut acc = 0.0;
            for k in 0..=n {
                let g = -lim + k as f64 * h;
                let w = if k == 0 || k == n {
                    1.0
                } else if k % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                let pdf = (-0.5 * (g / s).powi(2)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
                acc += w * pdf * laplace_gauss_cdf(x - g, b, 0.0);
            }
            let oracle = acc * h / 3.0;
            assert!((laplace_gauss_cdf(x, b, s) - oracle).abs() < 1e-9, "x={x}");
        }
        // Large jitter relative to the scale stays finite.
        let v = laplace_gauss_cdf(1.0, 0.01, 50.0);
        assert!(v.is_finite() && v > 0.5 && v < 0.52);
    }

    #[test]
    fn autocorrelation_limits() {
        assert_eq!(autocorrelation_model(5.0, 0.0, 0.0), 2.0);
        assert!(autocorrelation_model(5.0, 1e4, 2.0) - 1.0 < 1e-3);
        let tc = SourceParams::default().coherence_time_ns();
        let gs = autocorrelation_model(tc, 0.694, 2.0);
        let gi = autocorrelation_model(tc, 1.816, 2.0);
        assert!((gs - 1.80).abs() < 0.005 && (gi - 1.70).abs() < 0.005, "{gs} {gi}");
        assert!((1.7..=1.9).contains(&gs));
    }

    #[test]
    fn prediction_reduces_to_the_pair_formula_without_structure() {
        let mut s = setup(1.0);
        s.detectors.dark_rate_signal_hz = 3.0;
        let p = s.echo_prediction(2.0);
        let mu = s.source.pair_rate_hz() * 2e-9;
        let ns = 3.0 * 2e-9;
        let ni = s.detectors.dark_rate_idler_hz * 2e-9;
        let eta_s = s.eta_signal() * s.memory.p_echo;
        let g = analytic_g2si(mu, eta_s, s.eta_idler(), ns, ni).unwrap();
        let want =
            1.0 + p.peak_fraction * (g - 1.0) + p.cross / ((1.0 + p.signal_noise_ratio) * (1.0 + p.idler_noise_ratio));
        assert!((p.g2 - want).abs() < 1e-9 * want);
    }

    #[test]
    fn empty_source_without_darks_is_silent_apart_from_sync() {
        let mut s = setup(25.0);
        s.source.mean_pairs_per_mode = 0.0;
        s.detectors.dark_rate_signal_hz = 0.0;
        s.detectors.dark_rate_idler_hz = 0.0;
        let g = EventGenerator::new(s, 1).unwrap();
        let ev = g.generate(1.0);
        assert_eq!(ev.count(SIGNAL) + ev.count(IDLER), 0);
        assert_eq!(ev.count(SYNC) as u64, 2 * 1000);
    }

    #[test]
    fn correlated_photons_stay_inside_pump_and_detection_gates() {
        let mut s = setup(5.0);
        s.detectors.dark_rate_signal_hz = 0.0;
        s.detectors.dark_rate_idler_hz = 0.0;
        s.detectors.signal_path_transmission = 1.0;
        let g = EventGenerator::new(s, 3).unwrap();
        let ev = g.generate(0.5);
        let gate = s.timing.gate_ps();
        let margin = 40_000; // jitter, echo spread and pair offset
        for e in ev.events() {
            assert_ne!(e.trial, NO_TRIAL, "{e:?}");
            let t0 =
                s.timing.block_start_ps() + (e.trial as u64 % s.timing.trials_per_block()) * s.timing.trial_length_ps();
            let rel = e.time_ps as i64 - t0 as i64 - (e.time_ps / s.timing.period_ps() * s.timing.period_ps()) as i64;
            assert!(rel > -margin && rel < 2 * gate as i64 + margin, "{rel}");
            // An idler jittered before its sync belongs to the previous trial.
            let r = rel.rem_euclid(2 * gate as i64);
            if e.channel == IDLER {
                assert!(r < gate as i64 + margin || r > 2 * gate as i64 - margin, "{r}");
            }
        }
    }

    #[test]
    fn generation_is_reproducible_and_chunked_consistently() {
        let g = EventGenerator::new(setup(10.0), 42).unwrap();
        let a = g.generate(2.0);
        let b = g.generate(2.0);
        assert_eq!(a, b);
        let mut streamed = Vec::new();
        g.stream(2.0, 2, |c| {
            streamed.extend_from_slice(c);
            Ok(())
        })
        .unwrap();
        assert_eq!(streamed, a.events());
    }

    #[test]
    fn singles_scale_linearly_with_mu() {
        let mut rates = Vec::new();
        let mus = [0.002, 0.006, 0.02];
        for &mu in &mus {
            let mut s = setup(25.0);
            s.source.mean_pairs_per_mode = mu;
            s.detectors.dark_rate_idler_hz = 0.0;
            let g = EventGenerator::new(s, 5).unwrap();
            let ev = g.generate(0.5);
            rates.push(ev.count(IDLER) as f64 / s.timing.pump_time_s(0.5));
        }
        for (mu, r) in mus.iter().zip(&rates) {
            let s = setup(25.0);
            let expect = mu / (s.source.coherence_time_ns() * 1e-9) * s.eta_idler();
            let sd = (expect * s.timing.pump_time_s(0.5)).sqrt() / s.timing.pump_time_s(0.5);
            assert!((r - expect).abs() < 4.0 * sd, "{mu}: {r} vs {expect}");
        }
    }
}
