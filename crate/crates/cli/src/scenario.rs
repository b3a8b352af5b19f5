//! Experiment scenarios: simulation runs, analysis and report assembly.

use std::hash::{DefaultHasher, Hash, Hasher};
use std::path::PathBuf;

use afc_core::correlator::{
    cauchy_schwarz, efficiency_estimate, efficiency_from_windows, fiber_scenario_analysis, multimode_analysis,
    normalize_g2, window_count, AccidentalEstimator, BinSpec, CorrelationData, CorrelatorConfig, G2Result, ModeTagging,
    MultimodeResult, StreamingCorrelator,
};
use afc_core::events::{Event, IDLER, SIGNAL};
use afc_core::memory::echo_efficiency_from_profile;
use afc_core::pulse::{crest_factor, multi_tooth_pulse, pulse_spectrum, schroeder_phases, sech_chirp, tone_comb};
use afc_core::pumping::{simulate_preparation, HyperfineSystem, NominalSequence, PreparationSequence};
use afc_core::source::{autocorrelation_model, EventGenerator, SimulationSetup};

use crate::config::{MemoryMode, NodeConfig};
use crate::report::{write_file, Check, Report};
use crate::NodeError;

pub const SCENARIOS: [&str; 6] = [
    "g2-sweep",
    "efficiency",
    "multimode",
    "fiber",
    "pulse-design",
    "prep-sim",
];

#[derive(Debug, Clone, Default)]
pub struct ScenarioOptions {
    pub seed: u64,
    /// Replaces every acquisition time of the scenario, s.
    pub duration_s: Option<f64>,
    /// Output directory; nothing is written without one.
    pub out: Option<PathBuf>,
}

impl ScenarioOptions {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            ..Default::default()
        }
    }

    fn run_seconds(&self, minutes: f64) -> f64 {
        self.duration_s.unwrap_or(minutes * 60.0)
    }

    fn write(&self, rep: &mut Report, name: &str, bytes: &[u8]) -> Result<(), NodeError> {
        if let Some(dir) = &self.out {
            write_file(dir, name, bytes)?;
            rep.files.push(name.to_string());
        }
        Ok(())
    }

    fn write_g2(&self, rep: &mut Report, name: &str, g2: &G2Result) -> Result<(), NodeError> {
        let mut buf = Vec::new();
        g2.write_csv(&mut buf)?;
        self.write(rep, name, &buf)
    }
}

pub fn run_scenario(name: &str, cfg: &NodeConfig, opts: &ScenarioOptions) -> Result<Report, NodeError> {
    let mut rep = match name {
        "g2-sweep" => g2_sweep(cfg, opts)?,
        "efficiency" => efficiency(cfg, opts)?,
        "multimode" => multimode(cfg, opts)?,
        "fiber" => fiber(cfg, opts)?,
        "pulse-design" => pulse_design(cfg, opts)?,
        "prep-sim" => prep_sim(cfg, opts)?,
        "all" => {
            let mut all = Report::new("all");
            for s in SCENARIOS {
                let sub = ScenarioOptions {
                    out: opts.out.as_ref().map(|d| d.join(s)),
                    ..opts.clone()
                };
                all.merge(run_scenario(s, cfg, &sub)?);
            }
            all
        }
        other => return Err(NodeError::UnknownScenario(other.to_string())),
    };
    if let Some(dir) = &opts.out {
        rep.write(dir, cfg)?;
    }
    Ok(rep)
}

/// Independent seed for run `index` of a scenario.
pub fn sub_seed(seed: u64, scenario: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in scenario.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
    }
    seed ^ h ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

fn us_ps(us: f64) -> i64 {
    (us * 1e6).round() as i64
}

fn ns_ps(ns: f64) -> i64 {
    (ns * 1e3).round() as i64
}

fn label(storage_time_us: f64) -> String {
    format!("{storage_time_us}us")
}

fn estimator(cfg: &NodeConfig) -> AccidentalEstimator {
    AccidentalEstimator::ShiftedTrials {
        smoothing_bins: cfg.correlator.smoothing_bins,
    }
}

/// Histogram over `[lo, hi]` with `anchor` at a bin centre, shifted-trial
/// copies enabled.
pub fn correlator_config(
    cfg: &NodeConfig,
    start: u8,
    stop: u8,
    range_ps: (i64, i64),
    anchor_ps: i64,
    trial_ps: u64,
) -> Result<CorrelatorConfig, NodeError> {
    let bins = BinSpec::anchored(range_ps.0, range_ps.1, ns_ps(cfg.correlator.bin_ns), anchor_ps)?;
    Ok(CorrelatorConfig {
        trial_period_ps: Some(trial_ps as i64),
        shifts: cfg.correlator.shifts,
        sync_tolerance_ps: cfg.correlator.sync_tolerance_ps,
        ..CorrelatorConfig::plain(start, stop, bins)
    })
}

fn digest(events: &[Event]) -> u64 {
    let mut h = DefaultHasher::new();
    events.hash(&mut h);
    h.finish()
}

#[derive(Debug, Clone)]
pub struct StreamRun {
    pub data: Vec<CorrelationData>,
    pub events: u64,
    pub periods: u64,
}

/// Generates `run_s` seconds of detections and feeds every correlator in one
/// pass. The first batch is generated a second time and compared.
pub fn simulate_and_correlate(
    cfg: &NodeConfig,
    setup: &SimulationSetup,
    seed: u64,
    run_s: f64,
    configs: Vec<CorrelatorConfig>,
) -> Result<StreamRun, NodeError> {
    let gen = EventGenerator::new(*setup, seed)?;
    let mut corr = configs
        .into_iter()
        .map(StreamingCorrelator::new)
        .collect::<Result<Vec<_>, _>>()?;
    let batch = cfg.correlator.chunk_periods;
    let mut first = None;
    let mut events = 0u64;
    gen.stream(run_s, batch, |chunk| {
        first.get_or_insert_with(|| digest(chunk));
        events += chunk.len() as u64;
        corr.iter_mut().try_for_each(|c| c.push(chunk))
    })?;
    let periods = gen.n_periods(run_s);
    let again = digest(&gen.chunk(0..batch.min(periods)));
    if first != Some(again) {
        return Err(NodeError::Nondeterministic(format!(
            "seed {seed}: regenerated first batch differs"
        )));
    }
    Ok(StreamRun {
        data: corr.into_iter().map(StreamingCorrelator::finish).collect(),
        events,
        periods,
    })
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub storage_time_us: f64,
    pub minutes: f64,
    pub predicted: f64,
    pub g2: f64,
    pub sigma: f64,
    pub counts: u64,
    pub result: G2Result,
}

/// One storage time of the sweep: idler-start histogram out to the echo.
pub fn sweep_point(
    cfg: &NodeConfig,
    storage_time_us: f64,
    run_s: f64,
    seed: u64,
) -> Result<(SweepPoint, CorrelationData), NodeError> {
    let setup = cfg.setup(storage_time_us, 0.0, MemoryMode::Comb)?;
    let s = us_ps(storage_time_us);
    let m = ns_ps(cfg.correlator.margin_ns);
    let half = ns_ps(0.5 * cfg.correlator.echo_window_ns);
    let mut cc = correlator_config(cfg, IDLER, SIGNAL, (-m, s + m), s, setup.timing.trial_length_ps())?;
    cc.windows = vec![(s - half, s + half)];
    let run = simulate_and_correlate(cfg, &setup, seed, run_s, vec![cc])?;
    let data = run.data.into_iter().next().expect("one correlator");
    let g = normalize_g2(&data, &estimator(cfg))?;
    let i = g.index_of(storage_time_us * 1e3);
    Ok((
        SweepPoint {
            storage_time_us,
            minutes: run_s / 60.0,
            predicted: setup.echo_prediction(cfg.correlator.bin_ns).g2,
            g2: g.g2[i],
            sigma: g.sigma[i],
            counts: g.counts[i],
            result: g,
        },
        data,
    ))
}

#[derive(Debug, Clone, Copy)]
pub struct Autocorrelation {
    pub g2_ss: (f64, f64),
    pub g2_ii: (f64, f64),
}

/// Heralding-free autocorrelations of both arms, measured straight after
/// the source.
pub fn autocorrelation(
    cfg: &NodeConfig,
    opts: &ScenarioOptions,
    rep: &mut Report,
) -> Result<Autocorrelation, NodeError> {
    let sc = &cfg.scenarios;
    let s = cfg.run.storage_time_us;
    let mut setup = cfg.setup(s, 0.0, MemoryMode::Bypass)?;
    setup.source.mean_pairs_per_mode = sc.autocorrelation_mean_pairs;
    setup.detectors.signal_path_transmission = 1.0;
    let trial = setup.timing.trial_length_ps();
    let w = ns_ps(50.0);
    let ss = correlator_config(cfg, SIGNAL, SIGNAL, (-w, w), 0, trial)?;
    let ii = correlator_config(cfg, IDLER, IDLER, (-w, w), 0, trial)?;
    let seed = sub_seed(opts.seed, "autocorrelation", 0);
    let run = simulate_and_correlate(
        cfg,
        &setup,
        seed,
        opts.run_seconds(sc.autocorrelation_min),
        vec![ss, ii],
    )?;
    let est = estimator(cfg);
    let gss = normalize_g2(&run.data[0], &est)?;
    let gii = normalize_g2(&run.data[1], &est)?;
    opts.write_g2(rep, "g2_ss.csv", &gss)?;
    opts.write_g2(rep, "g2_ii.csv", &gii)?;
    let tc = cfg.source.coherence_time_ns();
    let bin = cfg.correlator.bin_ns;
    rep.number(
        "g2_ss_model",
        autocorrelation_model(tc, cfg.detectors.jitter_fwhm_signal_ns, bin),
    );
    rep.number(
        "g2_ii_model",
        autocorrelation_model(tc, cfg.detectors.jitter_fwhm_idler_ns, bin),
    );
    let a = Autocorrelation {
        g2_ss: gss.at(0.0),
        g2_ii: gii.at(0.0),
    };
    rep.measured("g2_ss", a.g2_ss.0, a.g2_ss.1);
    rep.measured("g2_ii", a.g2_ii.0, a.g2_ii.1);
    rep.check(Check::band(
        "g2_ss",
        a.g2_ss.0,
        a.g2_ss.1,
        sc.g2_ss_target.0,
        sc.g2_ss_target.1,
    ));
    rep.check(Check::band(
        "g2_ii",
        a.g2_ii.0,
        a.g2_ii.1,
        sc.g2_ii_target.0,
        sc.g2_ii_target.1,
    ));
    Ok(a)
}

pub fn g2_sweep(cfg: &NodeConfig, opts: &ScenarioOptions) -> Result<Report, NodeError> {
    let sc = &cfg.scenarios;
    let mut rep = Report::new("g2-sweep");
    rep.value("seed", opts.seed);
    rep.number("mean_pairs_per_mode", cfg.source.mean_pairs_per_mode);
    rep.number("mode_matching", cfg.memory.mode_matching);
    let mut points = Vec::new();
    for (i, &s) in sc.storage_times_us.iter().enumerate() {
        let run_s = opts.run_seconds(sc.acquisition_min[i]);
        let (p, data) = sweep_point(cfg, s, run_s, sub_seed(opts.seed, "g2-sweep", i as u64))?;
        let key = label(s);
        let w = window_count(&data, 0, 0..1)?;
        rep.number(&format!("acquisition_min_{key}"), p.minutes);
        rep.number(&format!("g2_predicted_{key}"), p.predicted);
        rep.measured(&format!("g2_peak_{key}"), p.g2, p.sigma);
        rep.value(&format!("peak_counts_{key}"), p.counts);
        rep.measured(&format!("g2_window_{key}"), w.g2(), w.g2_sigma());
        rep.number(&format!("g2_transmitted_{key}"), p.result.at(0.0).0);
        rep.check(Check::band(
            &format!("g2_peak_{key}"),
            p.g2,
            p.sigma,
            sc.g2_targets[i],
            sc.g2_target_sigmas[i],
        ));
        opts.write_g2(&mut rep, &format!("g2_{key}.csv"), &p.result)?;
        points.push(p);
    }

    let auto = autocorrelation(cfg, opts, &mut rep)?;
    for p in &points {
        let key = label(p.storage_time_us);
        let sim = cauchy_schwarz(p.g2, auto.g2_ss.0, auto.g2_ii.0)?;
        rep.number(&format!("cs_ratio_{key}"), sim.r);
        let reference = cauchy_schwarz(p.g2, sc.g2_ss_target.0, sc.g2_ii_target.0)?;
        rep.check(Check::flag(
            &format!("cauchy_schwarz_{key}"),
            reference.nonclassical && sim.nonclassical,
            format!(
                "R = {:.3} (reference autocorrelations), {:.3} (simulated)",
                reference.r, sim.r
            ),
        ));
    }
    Ok(rep)
}

pub fn efficiency(cfg: &NodeConfig, opts: &ScenarioOptions) -> Result<Report, NodeError> {
    let sc = &cfg.scenarios;
    let mut rep = Report::new("efficiency");
    rep.value("seed", opts.seed);
    let d0 = cfg.memory.transparency_depth;
    let arithmetic = efficiency_estimate(173.0, 2858.0, d0)?;
    rep.measured("efficiency_from_counts", arithmetic.eta, arithmetic.sigma);
    rep.check(Check::band(
        "efficiency_from_counts",
        arithmetic.eta,
        arithmetic.sigma,
        sc.efficiency_target.0,
        sc.efficiency_target.1,
    ));

    let st = sc.efficiency_storage_us;
    let s = us_ps(st);
    let m = ns_ps(cfg.correlator.margin_ns);
    let he = ns_ps(0.5 * cfg.correlator.echo_window_ns);
    let hr = ns_ps(0.5 * cfg.correlator.reference_window_ns);
    let echo_setup = cfg.setup(st, 0.0, MemoryMode::Comb)?;
    let ref_setup = cfg.setup(st, 0.0, MemoryMode::Transparency)?;
    let trial = echo_setup.timing.trial_length_ps();
    let mut ce = correlator_config(cfg, IDLER, SIGNAL, (-m, s + m), s, trial)?;
    ce.windows = vec![(s - he, s + he)];
    let mut cr = ce.clone();
    cr.windows = vec![(-hr, hr)];
    let echo = simulate_and_correlate(
        cfg,
        &echo_setup,
        sub_seed(opts.seed, "efficiency", 0),
        opts.run_seconds(sc.efficiency_echo_min),
        vec![ce],
    )?;
    let reference = simulate_and_correlate(
        cfg,
        &ref_setup,
        sub_seed(opts.seed, "efficiency", 1),
        opts.run_seconds(sc.efficiency_reference_min),
        vec![cr],
    )?;
    let (de, dr) = (&echo.data[0], &reference.data[0]);
    let we = window_count(de, 0, 0..1)?;
    let wr = window_count(dr, 0, 0..1)?;
    let est = efficiency_from_windows(&we, de.syncs, &wr, dr.syncs, d0)?;
    rep.number("p_echo", echo_setup.memory.p_echo);
    rep.number("p_trans_window", ref_setup.memory.p_trans);
    rep.number("echo_net_counts", we.net());
    rep.number("reference_net_counts", wr.net());
    rep.number("reference_rescaled", est.reference_counts);
    rep.measured("efficiency", est.eta, est.sigma);
    rep.number("efficiency_predicted", crate::calibrate::predicted_efficiency(cfg, st)?);
    rep.check(Check::band(
        "efficiency",
        est.eta,
        est.sigma,
        sc.efficiency_target.0,
        sc.efficiency_target.1,
    ));
    let est_e = estimator(cfg);
    opts.write_g2(&mut rep, "g2_echo.csv", &normalize_g2(de, &est_e)?)?;
    opts.write_g2(&mut rep, "g2_reference.csv", &normalize_g2(dr, &est_e)?)?;
    Ok(rep)
}

/// Mode-resolved analysis of one long run.
pub fn multimode_run(cfg: &NodeConfig, opts: &ScenarioOptions) -> Result<MultimodeResult, NodeError> {
    let sc = &cfg.scenarios;
    let st = sc.multimode_storage_us;
    let setup = cfg.setup(st, 0.0, MemoryMode::Comb)?;
    let s = us_ps(st);
    let half = ns_ps(0.5 * cfg.correlator.echo_window_ns);
    let mode = ns_ps(cfg.correlator.mode_duration_ns);
    let mut cc = correlator_config(
        cfg,
        IDLER,
        SIGNAL,
        (s - 50 * half, s + 50 * half),
        s,
        setup.timing.trial_length_ps(),
    )?;
    cc.windows = vec![(s - half, s + half)];
    cc.tagging = Some(ModeTagging {
        mode_ps: mode,
        n_modes: (s / mode) as usize,
    });
    let run = simulate_and_correlate(
        cfg,
        &setup,
        sub_seed(opts.seed, "multimode", 0),
        opts.run_seconds(sc.multimode_min),
        vec![cc],
    )?;
    Ok(multimode_analysis(&run.data[0], 0)?)
}

pub fn multimode(cfg: &NodeConfig, opts: &ScenarioOptions) -> Result<Report, NodeError> {
    let sc = &cfg.scenarios;
    let mut rep = Report::new("multimode");
    rep.value("seed", opts.seed);
    let mm = multimode_run(cfg, opts)?;
    let (g, s) = mm.plateau();
    let r2 = mm.linearity_r2();
    rep.value("modes", mm.n_modes_analyzed);
    rep.number("mode_duration_ns", mm.mode_duration_ns);
    rep.value("coincidences", mm.cumulative_coincidences.last().copied().unwrap_or(0));
    rep.number("linearity_r2", r2);
    rep.measured("g2_integrated", g, s);
    let expected = (sc.multimode_storage_us * 1e3 / cfg.correlator.mode_duration_ns).round() as usize;
    rep.check(Check::flag(
        "modes",
        mm.n_modes_analyzed == expected,
        format!("{} modes of {} ns", mm.n_modes_analyzed, mm.mode_duration_ns),
    ));
    rep.check(Check::at_least("linearity_r2", r2, 0.99));
    rep.check(Check::band(
        "g2_integrated",
        g,
        s,
        sc.multimode_target.0,
        sc.multimode_target.1,
    ));
    let mut buf = Vec::new();
    mm.write_csv(&mut buf)?;
    opts.write(&mut rep, "multimode.csv", &buf)?;
    Ok(rep)
}

pub fn fiber(cfg: &NodeConfig, opts: &ScenarioOptions) -> Result<Report, NodeError> {
    let sc = &cfg.scenarios;
    let mut rep = Report::new("fiber");
    rep.value("seed", opts.seed);
    let st = sc.fiber_storage_us;
    let setup = cfg.setup(st, sc.fiber_km, MemoryMode::Comb)?;
    let delay = setup.link.delay_us();
    let m = ns_ps(cfg.correlator.margin_ns);
    let echo_ps = us_ps(st - delay);
    let trans_ps = us_ps(-delay);
    let cc = correlator_config(
        cfg,
        IDLER,
        SIGNAL,
        (trans_ps - m, echo_ps + m),
        echo_ps,
        setup.timing.trial_length_ps(),
    )?;
    let run = simulate_and_correlate(
        cfg,
        &setup,
        sub_seed(opts.seed, "fiber", 0),
        opts.run_seconds(sc.fiber_min),
        vec![cc],
    )?;
    let g = normalize_g2(&run.data[0], &estimator(cfg))?;
    let f = fiber_scenario_analysis(&g, st, delay)?;
    let bin = cfg.correlator.bin_ns;
    let (ge, se) = g.at(f.expected_echo_ns);
    rep.number("fiber_km", sc.fiber_km);
    rep.number("fiber_delay_us", delay);
    rep.number("idler_transmission", setup.eta_idler());
    rep.number("transmitted_peak_ns", f.transmission.tau_ns);
    rep.number("echo_peak_ns", f.echo.tau_ns);
    rep.number("g2_transmitted", f.transmission.g2);
    rep.measured("g2_echo", ge, se);
    rep.number("g2_echo_predicted", setup.echo_prediction(bin).g2);
    rep.check(Check::flag(
        "transmitted_peak_position",
        (f.transmission.tau_ns - f.expected_transmission_ns).abs() <= bin,
        format!(
            "{:.1} ns vs {:.1} ns",
            f.transmission.tau_ns, f.expected_transmission_ns
        ),
    ));
    rep.check(Check::flag(
        "echo_peak_position",
        (f.echo.tau_ns - f.expected_echo_ns).abs() <= bin,
        format!("{:.1} ns vs {:.1} ns", f.echo.tau_ns, f.expected_echo_ns),
    ));
    rep.check(Check::band("g2_echo", ge, se, sc.fiber_target.0, sc.fiber_target.1));
    rep.check(Check::flag(
        "heralded_before_release",
        f.heralded_before_release,
        format!("echo at {:+.1} ns", f.echo.tau_ns),
    ));
    opts.write_g2(&mut rep, "g2_fiber.csv", &g)?;
    Ok(rep)
}

pub fn pulse_design(cfg: &NodeConfig, opts: &ScenarioOptions) -> Result<Report, NodeError> {
    let sc = &cfg.scenarios;
    let p = &cfg.pulse;
    let mut rep = Report::new("pulse-design");
    let base = cfg.comb_spec(sc.pulse_storage_us);
    let n_full = base.n_teeth();
    let mut csv = String::from("n,papr_schroeder,papr_zero,power_schroeder,power_zero\n");
    let mut full = None;
    for &n in &sc.pulse_components {
        let comb = afc_core::spectral::CombSpec {
            bandwidth_mhz: n as f64 * base.delta_mhz,
            ..base
        };
        let sch = multi_tooth_pulse(
            &comb,
            &schroeder_phases(n),
            p.comb_carrier_mhz,
            p.comb_duration_s,
            p.comb_sample_rate,
        )?;
        let zero = multi_tooth_pulse(
            &comb,
            &vec![0.0; n],
            p.comb_carrier_mhz,
            p.comb_duration_s,
            p.comb_sample_rate,
        )?;
        let (ps, pz) = (sch.average_power(), zero.average_power());
        csv.push_str(&format!(
            "{n},{:.6},{:.6},{ps:.6e},{pz:.6e}\n",
            crest_factor(&sch)?,
            crest_factor(&zero)?
        ));
        if n == n_full {
            full = Some((sch, ps / pz));
        }
    }
    opts.write(&mut rep, "power_scaling.csv", csv.as_bytes())?;

    let (sch, gain) = match full {
        Some(f) => f,
        None => {
            let phases = schroeder_phases(n_full);
            let sch = multi_tooth_pulse(
                &base,
                &phases,
                p.comb_carrier_mhz,
                p.comb_duration_s,
                p.comb_sample_rate,
            )?;
            let zero = multi_tooth_pulse(
                &base,
                &vec![0.0; n_full],
                p.comb_carrier_mhz,
                p.comb_duration_s,
                p.comb_sample_rate,
            )?;
            let g = sch.average_power() / zero.average_power();
            (sch, g)
        }
    };
    rep.value("components", n_full);
    rep.number("power_gain", gain);
    rep.check(Check::at_least("power_gain", gain, 10.0));

    let n = sc.papr_components;
    let papr = crest_factor(&tone_comb(&schroeder_phases(n), (8 * n).next_power_of_two())?)?;
    rep.number(&format!("papr_schroeder_{n}"), papr);
    rep.check(Check::at_most(&format!("papr_schroeder_{n}"), papr, 3.0));

    let sech = sech_chirp(&cfg.sech_params())?;
    let spec = pulse_spectrum(&sech)?;
    let (c, b) = (p.center_frequency_mhz, p.chirp_bandwidth_mhz);
    rep.number("sech_papr", crest_factor(&sech)?);
    rep.number(
        "sech_in_band_fraction",
        spec.band_power(c - 0.5 * b, c + 0.5 * b) / spec.total(),
    );

    if opts.out.is_some() {
        let mut bin = Vec::new();
        sch.write_binary(&mut bin)?;
        opts.write(&mut rep, "comb_pulse.bin", &bin)?;
        let mut side = Vec::new();
        sch.write_sidecar(&mut side)?;
        opts.write(&mut rep, "comb_pulse.txt", &side)?;
        let mut text = Vec::new();
        pulse_spectrum(&sch)?.write_text(&mut text)?;
        opts.write(&mut rep, "comb_spectrum.txt", &text)?;
    }
    Ok(rep)
}

pub fn prep_sim(cfg: &NodeConfig, opts: &ScenarioOptions) -> Result<Report, NodeError> {
    let mut rep = Report::new("prep-sim");
    let st = cfg.scenarios.prep_storage_us;
    let comb = cfg.comb_spec(st);
    let system = HyperfineSystem::default();
    let grid = cfg.pumping_grid()?;
    let nominal = cfg.nominal_sequence();
    let seq = PreparationSequence::nominal(&nominal, &comb);
    seq.validate_template()?;
    let res = simulate_preparation(&system, &cfg.line, &seq, &grid)?;

    let pol_only = PreparationSequence::nominal(
        &NominalSequence {
            burn_ms: 0.0,
            ..nominal.clone()
        },
        &comb,
    );
    let pol = simulate_preparation(&system, &cfg.line, &pol_only, &grid)?;
    let (lo, hi) = nominal.polarization_band_mhz;
    let inner = 2.0 * nominal.polarization_edge_mhz;
    let occupation = pol.mean_ground4(lo + inner, hi - inner, &system);

    let err = res.max_conservation_error().max(pol.max_conservation_error());
    let metrics = res.comb_metrics(&comb);
    let eta = echo_efficiency_from_profile(&res.profile, comb.delta_mhz, comb.band(), None)?;
    let mem = cfg.memory_spec(st).resolve_with_profile(&res.profile)?;
    rep.number("sequence_ms", seq.total_duration_s() * 1e3);
    rep.value("spectral_classes", res.distinct_classes());
    rep.value("conservation_error", format!("{err:.3e}"));
    rep.number("polarized_fraction", occupation);
    rep.number("tooth_depth", metrics.tooth_depth);
    rep.number("hole_depth", metrics.hole_depth);
    rep.number("contrast", metrics.contrast);
    rep.number("comb_efficiency", eta);
    rep.number("p_echo", mem.p_echo);
    rep.number("p_trans", mem.p_trans);
    rep.check(Check::at_most("conservation_error", err, 1e-9));
    rep.check(Check::at_least("polarized_fraction", occupation, 0.9));
    if opts.out.is_some() {
        let mut buf = Vec::new();
        res.profile.write_text(&mut buf)?;
        opts.write(&mut rep, "profile.txt", &buf)?;
    }
    Ok(rep)
}
