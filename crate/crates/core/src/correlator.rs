//! Coincidence counting and the analyses built on it.

use std::collections::VecDeque;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::events::{first_unsorted, Event, SYNC};

/// Equal-width delay bins `[lo + i·bin, lo + (i+1)·bin)`, in ps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinSpec {
    pub lo_ps: i64,
    pub bin_ps: i64,
    pub n_bins: usize,
}

impl BinSpec {
    pub fn new(lo_ps: i64, bin_ps: i64, n_bins: usize) -> Result<Self> {
        if bin_ps <= 0 {
            return Err(invalid("bin_ps", "must be positive"));
        }
        if n_bins == 0 {
            return Err(invalid("n_bins", "window holds no bins"));
        }
        Ok(Self { lo_ps, bin_ps, n_bins })
    }

    /// Bins covering `[tau_min, tau_max]` with `anchor` at a bin centre.
    pub fn anchored(tau_min_ps: i64, tau_max_ps: i64, bin_ps: i64, anchor_ps: i64) -> Result<Self> {
        if bin_ps <= 0 {
            return Err(invalid("bin_ps", "must be positive"));
        }
        if tau_max_ps <= tau_min_ps {
            return Err(invalid("window", "upper delay must exceed lower delay"));
        }
        let edge = anchor_ps - bin_ps / 2;
        let first = (tau_min_ps - edge).div_euclid(bin_ps);
        let last = (tau_max_ps - edge).div_euclid(bin_ps);
        Self::new(edge + first * bin_ps, bin_ps, (last - first + 1) as usize)
    }

    pub fn hi_ps(&self) -> i64 {
        self.lo_ps + self.bin_ps * self.n_bins as i64
    }

    #[inline]
    pub fn index(&self, tau_ps: i64) -> Option<usize> {
        if tau_ps < self.lo_ps {
            return None;
        }
        let i = ((tau_ps - self.lo_ps) / self.bin_ps) as usize;
        (i < self.n_bins).then_some(i)
    }

    pub fn center_ps(&self, i: usize) -> f64 {
        self.lo_ps as f64 + (i as f64 + 0.5) * self.bin_ps as f64
    }

    /// Bin containing `tau_ps`, clamped to the window.
    pub fn nearest(&self, tau_ps: f64) -> usize {
        let i = ((tau_ps - self.lo_ps as f64) / self.bin_ps as f64).floor();
        i.clamp(0.0, (self.n_bins - 1) as f64) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram {
    pub bins: BinSpec,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn empty(bins: BinSpec) -> Self {
        Self {
            bins,
            counts: vec![0; bins.n_bins],
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Full-pairwise histogram of `t_stop − t_start` by two pointers over the
/// stop list. Events must be sorted.
pub fn coincidence_histogram(events: &[Event], start_ch: u8, stop_ch: u8, bins: BinSpec) -> Result<Histogram> {
    if let Some(i) = first_unsorted(events) {
        return Err(Error::Unsorted(i));
    }
    let stops: Vec<(u64, usize)> = events
        .iter()
        .enumerate()
        .filter(|(_, e)| e.channel == stop_ch)
        .map(|(i, e)| (e.time_ps, i))
        .collect();
    let mut h = Histogram::empty(bins);
    let mut lo = 0;
    for (i, e) in events.iter().enumerate() {
        if e.channel != start_ch {
            continue;
        }
        let s = e.time_ps as i64;
        while lo < stops.len() && (stops[lo].0 as i64) - s < bins.lo_ps {
            lo += 1;
        }
        let mut j = lo;
        while j < stops.len() {
            let tau = stops[j].0 as i64 - s;
            if tau >= bins.hi_ps() {
                break;
            }
            if stops[j].1 != i {
                if let Some(b) = bins.index(tau) {
                    h.counts[b] += 1;
                }
            }
            j += 1;
        }
    }
    Ok(h)
}

/// Labels starts by the time-bin mode of the trial they fall in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeTagging {
    pub mode_ps: i64,
    pub n_modes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelatorConfig {
    pub start_channel: u8,
    pub stop_channel: u8,
    pub bins: BinSpec,
    /// Delay ranges `[lo, hi)` whose pair counts are kept separately.
    pub windows: Vec<(i64, i64)>,
    /// Trial period; with `shifts > 0` every window is also evaluated at
    /// `±k` periods to measure uncorrelated coincidences.
    pub trial_period_ps: Option<i64>,
    pub shifts: usize,
    pub tagging: Option<ModeTagging>,
    /// Tolerance when matching sync events of neighbouring trials.
    pub sync_tolerance_ps: i64,
}

impl CorrelatorConfig {
    pub fn plain(start_channel: u8, stop_channel: u8, bins: BinSpec) -> Self {
        Self {
            start_channel,
            stop_channel,
            bins,
            windows: Vec::new(),
            trial_period_ps: None,
            shifts: 0,
            tagging: None,
            sync_tolerance_ps: 1_000,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.shifts > 0 && self.trial_period_ps.is_none_or(|p| p <= 0) {
            return Err(invalid(
                "trial_period_ps",
                "shifted windows need a positive trial period",
            ));
        }
        if self.tagging.is_some() && self.trial_period_ps.is_none() {
            return Err(invalid("trial_period_ps", "mode tagging needs the trial period"));
        }
        if let Some(t) = self.tagging {
            if t.mode_ps <= 0 || t.n_modes == 0 {
                return Err(invalid("mode_ps", "modes must have positive duration"));
            }
        }
        for &(lo, hi) in &self.windows {
            if hi <= lo {
                return Err(invalid("windows", "empty delay range"));
            }
        }
        Ok(())
    }

    /// Offsets of the evaluated copies: `0, −P, +P, −2P, +2P, …`.
    pub fn offsets(&self) -> Vec<i64> {
        let p = self.trial_period_ps.unwrap_or(0);
        let mut v = vec![0];
        for k in 1..=self.shifts as i64 {
            v.push(-k * p);
            v.push(k * p);
        }
        v
    }

    fn n_tags(&self) -> usize {
        self.tagging.map_or(1, |t| t.n_modes)
    }
}

/// Everything the analyses need from one pass over a stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationData {
    pub config: CorrelatorConfig,
    pub offsets_ps: Vec<i64>,
    /// One histogram per offset, main first.
    pub histograms: Vec<Histogram>,
    /// Starts used (inside a trial when a trial period is set).
    pub starts: u64,
    pub stops: u64,
    pub syncs: u64,
    /// Starts whose neighbouring trial exists, per offset.
    pub valid: Vec<u64>,
    /// `window_counts[w][tag][offset]`.
    pub window_counts: Vec<Vec<Vec<u64>>>,
    /// `tag_starts[tag]` and `tag_valid[tag][offset]`.
    pub tag_starts: Vec<u64>,
    pub tag_valid: Vec<Vec<u64>>,
}

impl CorrelationData {
    pub fn main(&self) -> &Histogram {
        &self.histograms[0]
    }
}

#[derive(Debug, Clone, Copy)]
struct PendingStart {
    time: i64,
    seq: u64,
    tag: Option<usize>,
    sync: Option<i64>,
}

/// Single-pass correlator over a time-ordered stream delivered in chunks.
///
/// Starts are held until every stop that can pair with them has arrived,
/// and stops are dropped once no pending or future start can reach them.
pub struct StreamingCorrelator {
    cfg: CorrelatorConfig,
    offsets: Vec<i64>,
    reach_lo: i64,
    reach_hi: i64,
    stops: VecDeque<(i64, u64)>,
    pending: VecDeque<PendingStart>,
    syncs: VecDeque<i64>,
    last_key: Option<(u64, u8)>,
    seq: u64,
    out: CorrelationData,
}

impl StreamingCorrelator {
    pub fn new(cfg: CorrelatorConfig) -> Result<Self> {
        cfg.validate()?;
        let offsets = cfg.offsets();
        let mut lo = cfg.bins.lo_ps.min(0);
        let mut hi = cfg.bins.hi_ps().max(0);
        for &(a, b) in &cfg.windows {
            lo = lo.min(a);
            hi = hi.max(b);
        }
        let span = cfg.shifts as i64 * cfg.trial_period_ps.unwrap_or(0);
        let n_off = offsets.len();
        let n_tags = cfg.n_tags();
        let out = CorrelationData {
            offsets_ps: offsets.clone(),
            histograms: vec![Histogram::empty(cfg.bins); n_off],
            starts: 0,
            stops: 0,
            syncs: 0,
            valid: vec![0; n_off],
            window_counts: vec![vec![vec![0; n_off]; n_tags]; cfg.windows.len()],
            tag_starts: vec![0; n_tags],
            tag_valid: vec![vec![0; n_off]; n_tags],
            config: cfg.clone(),
        };
        Ok(Self {
            reach_lo: lo - span,
            reach_hi: hi + span,
            offsets,
            cfg,
            stops: VecDeque::new(),
            pending: VecDeque::new(),
            syncs: VecDeque::new(),
            last_key: None,
            seq: 0,
            out,
        })
    }

    fn trial_sync(&self, t: i64) -> Option<i64> {
        let period = self.cfg.trial_period_ps?;
        let &last = self.syncs.back()?;
        (t - last < period).then_some(last)
    }

    pub fn push(&mut self, events: &[Event]) -> Result<()> {
        for e in events {
            let key = e.key();
            if self.last_key.is_some_and(|k| key < k) {
                return Err(Error::Unsorted(self.seq as usize));
            }
            self.last_key = Some(key);
            let t = e.time_ps as i64;
            self.flush(t);
            if e.channel == SYNC {
                self.syncs.push_back(t);
                self.out.syncs += 1;
            }
            if e.channel == self.cfg.stop_channel {
                self.stops.push_back((t, self.seq));
                self.out.stops += 1;
            }
            if e.channel == self.cfg.start_channel {
                let sync = self.trial_sync(t);
                if self.cfg.trial_period_ps.is_none() || sync.is_some() {
                    let tag = match (self.cfg.tagging, sync) {
                        (Some(m), Some(s)) => {
                            let k = ((t - s) / m.mode_ps) as usize;
                            (k < m.n_modes).then_some(k)
                        }
                        (None, _) => Some(0),
                        _ => None,
                    };
                    self.pending.push_back(PendingStart {
                        time: t,
                        seq: self.seq,
                        tag,
                        sync,
                    });
                }
            }
            self.seq += 1;
        }
        Ok(())
    }

    /// Process starts whose reach ends before `now`; prune buffers.
    fn flush(&mut self, now: i64) {
        while let Some(&s) = self.pending.front() {
            if s.time + self.reach_hi >= now {
                break;
            }
            self.process(s);
            self.pending.pop_front();
        }
        let horizon = self.pending.front().map_or(now, |s| s.time) + self.reach_lo;
        while self.stops.front().is_some_and(|&(t, _)| t < horizon) {
            self.stops.pop_front();
        }
        if let Some(p) = self.cfg.trial_period_ps {
            let keep = self.pending.front().map_or(now, |s| s.time)
                - p
                - self.cfg.shifts as i64 * p
                - self.cfg.sync_tolerance_ps;
            // The latest sync is always kept for trial assignment.
            while self.syncs.len() > 1 && self.syncs.front().is_some_and(|&t| t < keep) {
                self.syncs.pop_front();
            }
        }
    }

    fn has_sync_near(&self, t: i64) -> bool {
        let tol = self.cfg.sync_tolerance_ps;
        let i = self.syncs.partition_point(|&x| x < t - tol);
        i < self.syncs.len() && self.syncs[i] <= t + tol
    }

    fn process(&mut self, s: PendingStart) {
        self.out.starts += 1;
        let bins = self.cfg.bins;
        if let Some(tag) = s.tag {
            self.out.tag_starts[tag] += 1;
        }
        for (k, &off) in self.offsets.iter().enumerate() {
            let valid = match (k, s.sync) {
                (0, _) => true,
                (_, Some(sync)) => self.has_sync_near(sync + off),
                (_, None) => false,
            };
            if !valid {
                continue;
            }
            self.out.valid[k] += 1;
            if let Some(tag) = s.tag {
                self.out.tag_valid[tag][k] += 1;
            }
            let base = s.time + off;
            let lo = base + bins.lo_ps;
            let hi = base + bins.hi_ps();
            let first = self.stops.partition_point(|&(t, _)| t < lo);
            let hist = &mut self.out.histograms[k];
            for &(t, seq) in self.stops.range(first..) {
                if t >= hi {
                    break;
                }
                if seq != s.seq {
                    hist.counts[((t - lo) / bins.bin_ps) as usize] += 1;
                }
            }
            if let Some(tag) = s.tag {
                for (w, &(a, b)) in self.cfg.windows.iter().enumerate() {
                    let first = self.stops.partition_point(|&(t, _)| t < base + a);
                    let n = self
                        .stops
                        .range(first..)
                        .take_while(|&&(t, _)| t < base + b)
                        .filter(|&&(_, q)| q != s.seq)
                        .count();
                    self.out.window_counts[w][tag][k] += n as u64;
                }
            }
        }
    }

    pub fn finish(mut self) -> CorrelationData {
        while let Some(s) = self.pending.pop_front() {
            self.process(s);
        }
        self.out
    }
}

/// One pass over an in-memory stream.
pub fn correlate(events: &[Event], cfg: CorrelatorConfig) -> Result<CorrelationData> {
    let mut c = StreamingCorrelator::new(cfg)?;
    c.push(events)?;
    Ok(c.finish())
}

/// How the uncorrelated coincidence level is estimated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AccidentalEstimator {
    /// Same delay, partner trials `±k` periods away; counts averaged over
    /// `±smoothing_bins` neighbouring bins.
    ShiftedTrials { smoothing_bins: usize },
    /// Mean of the main histogram outside the excluded delay ranges (ns).
    Sideband { exclude_ns: Vec<(f64, f64)> },
}

impl AccidentalEstimator {
    /// Sidebands away from the bunching peak and the echo.
    pub fn sideband_default(storage_time_us: f64) -> Self {
        let s = storage_time_us * 1e3;
        Self::Sideband {
            exclude_ns: vec![(-100.0, 100.0), (s - 100.0, s + 100.0)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct G2Result {
    pub tau_ns: Vec<f64>,
    pub counts: Vec<u64>,
    pub g2: Vec<f64>,
    pub sigma: Vec<f64>,
    /// Accidental level per bin.
    pub normalization: Vec<f64>,
    pub bins: BinSpec,
}

impl G2Result {
    pub fn index_of(&self, tau_ns: f64) -> usize {
        self.bins.nearest(tau_ns * 1e3)
    }

    pub fn at(&self, tau_ns: f64) -> (f64, f64) {
        let i = self.index_of(tau_ns);
        (self.g2[i], self.sigma[i])
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "tau_ns,counts,g2,sigma")?;
        for i in 0..self.tau_ns.len() {
            writeln!(
                w,
                "{:.3},{},{:.6},{:.6}",
                self.tau_ns[i], self.counts[i], self.g2[i], self.sigma[i]
            )?;
        }
        Ok(())
    }
}

fn shifted_level(data: &CorrelationData, smoothing: usize) -> Result<Vec<f64>> {
    let n = data.config.bins.n_bins;
    let valid: u64 = data.valid[1..].iter().sum();
    if data.offsets_ps.len() < 2 || valid == 0 {
        return Err(Error::NoSideband);
    }
    let mut pooled = vec![0u64; n];
    for h in &data.histograms[1..] {
        for (p, c) in pooled.iter_mut().zip(&h.counts) {
            *p += c;
        }
    }
    let scale = data.starts as f64 / valid as f64;
    // Sparse runs can leave a whole smoothing span empty; such bins take
    // the mean level of the full range.
    let flat = scale * pooled.iter().sum::<u64>() as f64 / n as f64;
    Ok((0..n)
        .map(|i| {
            let a = i.saturating_sub(smoothing);
            let b = (i + smoothing + 1).min(n);
            let sum: u64 = pooled[a..b].iter().sum();
            if sum == 0 {
                flat
            } else {
                scale * sum as f64 / (b - a) as f64
            }
        })
        .collect())
}

/// Normalised cross-correlation with Poisson errors `g2/√counts`.
pub fn normalize_g2(data: &CorrelationData, estimator: &AccidentalEstimator) -> Result<G2Result> {
    let bins = data.config.bins;
    let counts = data.main().counts.clone();
    let tau_ns: Vec<f64> = (0..bins.n_bins).map(|i| bins.center_ps(i) * 1e-3).collect();
    let normalization = match estimator {
        AccidentalEstimator::ShiftedTrials { smoothing_bins } => shifted_level(data, *smoothing_bins)?,
        AccidentalEstimator::Sideband { exclude_ns } => {
            let (mut sum, mut n) = (0u64, 0usize);
            for (i, &t) in tau_ns.iter().enumerate() {
                if !exclude_ns.iter().any(|&(a, b)| t >= a && t <= b) {
                    sum += counts[i];
                    n += 1;
                }
            }
            if n == 0 {
                return Err(Error::NoSideband);
            }
            vec![sum as f64 / n as f64; bins.n_bins]
        }
    };
    if normalization.iter().any(|&a| !(a > 0.0)) {
        return Err(Error::NoSideband);
    }
    let g2: Vec<f64> = counts.iter().zip(&normalization).map(|(&c, &a)| c as f64 / a).collect();
    // An empty bin gets the error of a single count.
    let sigma = counts
        .iter()
        .zip(&g2)
        .zip(&normalization)
        .map(|((&c, &g), &a)| if c > 0 { g / (c as f64).sqrt() } else { 1.0 / a })
        .collect();
    Ok(G2Result {
        tau_ns,
        counts,
        g2,
        sigma,
        normalization,
        bins,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CauchySchwarz {
    pub r: f64,
    pub nonclassical: bool,
    /// The stricter `g2si > 2` comparison.
    pub exceeds_thermal_bound: bool,
}

pub fn cauchy_schwarz(g2si: f64, g2ss: f64, g2ii: f64) -> Result<CauchySchwarz> {
    if !(g2si > 0.0 && g2ss > 0.0 && g2ii > 0.0) {
        return Err(invalid("g2", "correlation values must be positive"));
    }
    let r = g2si * g2si / (g2ss * g2ii);
    Ok(CauchySchwarz {
        r,
        nonclassical: r > 1.0,
        exceeds_thermal_bound: g2si > 2.0,
    })
}

/// Pair counts in one delay window with the uncorrelated part removed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowCount {
    pub raw: u64,
    pub accidental: f64,
    pub accidental_sigma: f64,
    pub starts: u64,
}

impl WindowCount {
    pub fn net(&self) -> f64 {
        self.raw as f64 - self.accidental
    }

    pub fn net_sigma(&self) -> f64 {
        (self.raw as f64 + self.accidental_sigma.powi(2)).sqrt()
    }

    /// Integrated cross-correlation over the window.
    pub fn g2(&self) -> f64 {
        self.raw as f64 / self.accidental
    }

    pub fn g2_sigma(&self) -> f64 {
        let g = self.g2();
        let rel_raw = if self.raw > 0 { 1.0 / self.raw as f64 } else { 0.0 };
        g * (rel_raw + (self.accidental_sigma / self.accidental).powi(2)).sqrt()
    }
}

/// Window `w` of `data` summed over tags `tags`, accidentals from the
/// shifted copies.
pub fn window_count(data: &CorrelationData, w: usize, tags: std::ops::Range<usize>) -> Result<WindowCount> {
    let counts = data
        .window_counts
        .get(w)
        .ok_or_else(|| invalid("window", "no such window"))?;
    let mut raw = 0;
    let mut shifted = 0;
    let mut starts = 0;
    let mut valid = 0;
    for tag in tags {
        raw += counts[tag][0];
        shifted += counts[tag][1..].iter().sum::<u64>();
        starts += data.tag_starts[tag];
        valid += data.tag_valid[tag][1..].iter().sum::<u64>();
    }
    if valid == 0 {
        return Err(Error::NoSideband);
    }
    let scale = starts as f64 / valid as f64;
    Ok(WindowCount {
        raw,
        accidental: scale * shifted as f64,
        accidental_sigma: scale * (shifted as f64).sqrt(),
        starts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyEstimate {
    pub eta: f64,
    pub sigma: f64,
    pub echo_counts: f64,
    pub reference_counts: f64,
    /// Reference after dividing out the background transmission.
    pub corrected_reference: f64,
}

/// `η = N_echo / (N_ref / e^{−d₀})` with Poisson errors from both counts.
pub fn efficiency_estimate(n_echo: f64, n_ref_raw: f64, d0: f64) -> Result<EfficiencyEstimate> {
    if !(d0 >= 0.0) {
        return Err(invalid("d0", "must be non-negative"));
    }
    let corrected = n_ref_raw / (-d0).exp();
    if !(corrected > 0.0) {
        return Err(Error::NonPositiveReference(corrected));
    }
    let eta = n_echo / corrected;
    let rel = if n_echo > 0.0 {
        (1.0 / n_echo + 1.0 / n_ref_raw).sqrt()
    } else {
        0.0
    };
    Ok(EfficiencyEstimate {
        eta,
        sigma: eta * rel,
        echo_counts: n_echo,
        reference_counts: n_ref_raw,
        corrected_reference: corrected,
    })
}

/// Efficiency from accidental-subtracted windows of two runs, the reference
/// rescaled to the echo run's number of trials.
pub fn efficiency_from_windows(
    echo: &WindowCount,
    echo_trials: u64,
    reference: &WindowCount,
    reference_trials: u64,
    d0: f64,
) -> Result<EfficiencyEstimate> {
    if echo_trials == 0 || reference_trials == 0 {
        return Err(invalid("trials", "both runs need trials"));
    }
    let scale = echo_trials as f64 / reference_trials as f64;
    let n_ref = reference.net() * scale;
    let mut e = efficiency_estimate(echo.net(), n_ref, d0)?;
    let rel_e = echo.net_sigma() / echo.net().abs().max(1e-300);
    let rel_r = reference.net_sigma() / reference.net().abs().max(1e-300);
    e.sigma = e.eta.abs() * (rel_e * rel_e + rel_r * rel_r).sqrt();
    Ok(e)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultimodeResult {
    pub mode_duration_ns: f64,
    pub n_modes_analyzed: usize,
    pub k: Vec<usize>,
    pub cumulative_coincidences: Vec<u64>,
    pub cumulative_net: Vec<f64>,
    pub g2_integrated: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl MultimodeResult {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "k,cum_counts,g2,sigma")?;
        for i in 0..self.k.len() {
            writeln!(
                w,
                "{},{},{:.6},{:.6}",
                self.k[i], self.cumulative_coincidences[i], self.g2_integrated[i], self.sigma[i]
            )?;
        }
        Ok(())
    }

    /// Coefficient of determination of a straight-line fit of cumulative
    /// counts against `k`.
    pub fn linearity_r2(&self) -> f64 {
        let x: Vec<f64> = self.k.iter().map(|&k| k as f64).collect();
        let y: Vec<f64> = self.cumulative_coincidences.iter().map(|&c| c as f64).collect();
        linear_r2(&x, &y)
    }

    /// Integrated g² of the full set of modes. Prefixes are nested, so it
    /// carries all the information of the plateau.
    pub fn plateau(&self) -> (f64, f64) {
        let last = self.k.len() - 1;
        (self.g2_integrated[last], self.sigma[last])
    }
}

pub fn linear_r2(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy * sxy / (sxx * syy)
}

/// Prefix analysis over modes `0..k` of the echo window `w`.
pub fn multimode_analysis(data: &CorrelationData, w: usize) -> Result<MultimodeResult> {
    let tagging = data
        .config
        .tagging
        .ok_or_else(|| invalid("tagging", "stream was not mode-tagged"))?;
    if data.syncs == 0 {
        return Err(Error::MissingSync);
    }
    let counts = data
        .window_counts
        .get(w)
        .ok_or_else(|| invalid("window", "no such window"))?;
    let n = tagging.n_modes;
    let mut res = MultimodeResult {
        mode_duration_ns: tagging.mode_ps as f64 * 1e-3,
        n_modes_analyzed: n,
        k: Vec::with_capacity(n),
        cumulative_coincidences: Vec::with_capacity(n),
        cumulative_net: Vec::with_capacity(n),
        g2_integrated: Vec::with_capacity(n),
        sigma: Vec::with_capacity(n),
    };
    let (mut raw, mut shifted, mut starts, mut valid) = (0u64, 0u64, 0u64, 0u64);
    for tag in 0..n {
        raw += counts[tag][0];
        shifted += counts[tag][1..].iter().sum::<u64>();
        starts += data.tag_starts[tag];
        valid += data.tag_valid[tag][1..].iter().sum::<u64>();
        let wc = WindowCount {
            raw,
            accidental: if valid > 0 {
                starts as f64 / valid as f64 * shifted as f64
            } else {
                0.0
            },
            accidental_sigma: if valid > 0 {
                starts as f64 / valid as f64 * (shifted as f64).sqrt()
            } else {
                0.0
            },
            starts,
        };
        res.k.push(tag + 1);
        res.cumulative_coincidences.push(raw);
        res.cumulative_net.push(wc.net());
        let (g, s) = if wc.accidental > 0.0 {
            (wc.g2(), wc.g2_sigma())
        } else {
            (f64::NAN, f64::NAN)
        };
        res.g2_integrated.push(g);
        res.sigma.push(s);
    }
    Ok(res)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub tau_ns: f64,
    pub g2: f64,
    pub sigma: f64,
    pub snr: f64,
}

/// Largest 3-bin-smoothed excess within `halfwidth_ns` of `expected_ns`.
pub fn find_peak(g2: &G2Result, expected_ns: f64, halfwidth_ns: f64) -> Result<Peak> {
    let a = g2.index_of(expected_ns - halfwidth_ns);
    let b = g2.index_of(expected_ns + halfwidth_ns);
    let n = g2.counts.len();
    let mut best: Option<(usize, f64, f64)> = None;
    for i in a..=b {
        let lo = i.saturating_sub(1);
        let hi = (i + 2).min(n);
        let c: u64 = g2.counts[lo..hi].iter().sum();
        let acc: f64 = g2.normalization[lo..hi].iter().sum();
        let excess = c as f64 - acc;
        if best.is_none_or(|(_, e, _)| excess > e) {
            best = Some((i, excess, acc));
        }
    }
    let (i, excess, acc) = best.ok_or(Error::NoSignificantPeak {
        tau_ns: expected_ns,
        snr: 0.0,
    })?;
    let snr = excess / acc.max(1.0).sqrt();
    if !(snr >= 3.0) {
        return Err(Error::NoSignificantPeak {
            tau_ns: g2.tau_ns[i],
            snr,
        });
    }
    Ok(Peak {
        tau_ns: g2.tau_ns[i],
        g2: g2.g2[i],
        sigma: g2.sigma[i],
        snr,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiberReport {
    pub transmission: Peak,
    pub echo: Peak,
    pub expected_transmission_ns: f64,
    pub expected_echo_ns: f64,
    /// Idler detected before the stored photon is released.
    pub heralded_before_release: bool,
}

/// Locates the transmitted and echo peaks of an idler-delayed stream.
pub fn fiber_scenario_analysis(g2: &G2Result, storage_time_us: f64, fiber_delay_us: f64) -> Result<FiberReport> {
    let t_trans = -fiber_delay_us * 1e3;
    let t_echo = (storage_time_us - fiber_delay_us) * 1e3;
    let transmission = find_peak(g2, t_trans, 50.0)?;
    let echo = find_peak(g2, t_echo, 50.0)?;
    Ok(FiberReport {
        transmission,
        echo,
        expected_transmission_ns: t_trans,
        expected_echo_ns: t_echo,
        heralded_before_release: echo.tau_ns > 0.0,
    })
}
