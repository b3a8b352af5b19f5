use std::hint::black_box;

use afc_core::correlator::{coincidence_histogram, correlate, StreamingCorrelator};
use afc_core::memory::echo_efficiency_from_profile;
use afc_core::pulse::{multi_tooth_pulse, schroeder_phases};
use afc_core::source::EventGenerator;
use afc_core::spectral::build_comb_profile;
use afc_core::{
    BinSpec, CombSpec, CorrelatorConfig, DetectorParams, FrequencyGrid, IdlerLink, MemoryParams, SequenceTiming,
    SimulationSetup, SourceParams, ToothShape, IDLER, SIGNAL,
};
use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};

const STORAGE_US: f64 = 25.0;

fn setup() -> SimulationSetup {
    SimulationSetup {
        source: SourceParams::default(),
        detectors: DetectorParams {
            signal_path_transmission: 0.05,
            ..Default::default()
        },
        link: IdlerLink::default(),
        timing: SequenceTiming {
            storage_time_us: STORAGE_US,
            ..Default::default()
        },
        memory: MemoryParams::new(STORAGE_US, 2.72, 0.05, 0.3).unwrap(),
    }
}

fn comb() -> CombSpec {
    CombSpec {
        center_mhz: 0.0,
        bandwidth_mhz: 100.0,
        delta_mhz: 1.0 / STORAGE_US,
        finesse: 2.0,
        tooth_shape: ToothShape::Square,
        peak_depth: 7.0,
        background_depth: 0.136,
    }
}

fn config(trial_ps: u64) -> CorrelatorConfig {
    let s = (STORAGE_US * 1e6) as i64;
    let bins = BinSpec::anchored(-1_000_000, s + 1_000_000, 2_000, s).unwrap();
    CorrelatorConfig {
        trial_period_ps: Some(trial_ps as i64),
        shifts: 4,
        windows: vec![(s - 10_000, s + 10_000)],
        ..CorrelatorConfig::plain(IDLER, SIGNAL, bins)
    }
}

fn events(c: &mut Criterion) {
    let gen = EventGenerator::new(setup(), 1).unwrap();
    let periods = 8;
    let n = gen.chunk(0..periods).len() as u64;
    let mut g = c.benchmark_group("events");
    g.sample_size(10);
    g.throughput(Throughput::Elements(n));
    g.bench_function("generate_8_periods", |b| b.iter(|| black_box(gen.chunk(0..periods))));
    g.finish();
}

fn correlation(c: &mut Criterion) {
    let gen = EventGenerator::new(setup(), 2).unwrap();
    let stream = gen.generate(4.0);
    let ev = stream.events();
    let cfg = config(gen.trial_length_ps());
    let mut g = c.benchmark_group("correlation");
    g.sample_size(10);
    g.throughput(Throughput::Elements(ev.len() as u64));
    g.bench_function("batch_histogram", |b| {
        b.iter(|| black_box(coincidence_histogram(ev, IDLER, SIGNAL, cfg.bins).unwrap()))
    });
    g.bench_function("one_pass", |b| {
        b.iter(|| black_box(correlate(ev, cfg.clone()).unwrap()))
    });
    g.bench_function("streaming_push", |b| {
        b.iter_batched(
            || StreamingCorrelator::new(cfg.clone()).unwrap(),
            |mut s| {
                for chunk in ev.chunks(4096) {
                    s.push(chunk).unwrap();
                }
                black_box(s.finish())
            },
            BatchSize::LargeInput,
        )
    });
    g.finish();
}

fn pulses(c: &mut Criterion) {
    let spec = comb();
    let phases = schroeder_phases(spec.n_teeth());
    let mut g = c.benchmark_group("pulse");
    g.sample_size(10);
    g.bench_function("multi_tooth_2500", |b| {
        b.iter(|| black_box(multi_tooth_pulse(&spec, &phases, 0.0, 1e-4, 8e8).unwrap()))
    });
    g.finish();
}

fn spectra(c: &mut Criterion) {
    let spec = comb();
    let grid = FrequencyGrid::new(0.0, 400.0, 1 << 20).unwrap();
    let mut g = c.benchmark_group("spectral");
    g.sample_size(10);
    g.bench_function("comb_profile_1m", |b| {
        b.iter(|| black_box(build_comb_profile(&spec, &grid).unwrap()))
    });
    let profile = build_comb_profile(&spec, &grid).unwrap();
    g.bench_function("echo_efficiency_1m", |b| {
        b.iter(|| black_box(echo_efficiency_from_profile(&profile, spec.delta_mhz, spec.band(), None).unwrap()))
    });
    g.finish();
}

criterion_group!(benches, events, correlation, pulses, spectra);
criterion_main!(benches);
