use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use afc_core::correlator::{correlate, find_peak, normalize_g2, AccidentalEstimator};
use afc_core::events::{write_binary_header, write_binary_records, EventStream, IDLER, SIGNAL};
use afc_core::pulse::{multi_tooth_pulse, pulse_spectrum, schroeder_phases, sech_chirp, PulseWaveform};
use afc_core::source::EventGenerator;
use afc_node::calibrate::{calibrate, targets_from_config, FreeParam};
use afc_node::report::write_file;
use afc_node::scenario::{self, correlator_config, ScenarioOptions};
use afc_node::{MemoryMode, NodeConfig, Report};
use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "afc-node", version, about = "Heralded quantum memory node simulator")]
struct Cli {
    /// Configuration file; the built-in nominal preset when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (output file for `simulate`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Acquisition time in seconds, replacing the configured value.
    #[arg(long, global = true)]
    duration: Option<f64>,
    /// Storage time in µs.
    #[arg(long = "storage-time", global = true)]
    storage_time: Option<f64>,
    #[arg(long = "fiber-km", global = true)]
    fiber_km: Option<f64>,
    /// Exit with status 2 when a check fails.
    #[arg(long, global = true)]
    strict: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a control pulse and its power spectrum.
    SynthPulse {
        #[arg(long, value_enum, default_value_t = PulseKind::Comb)]
        kind: PulseKind,
        #[arg(long, value_enum, default_value_t = Phases::Schroeder)]
        phases: Phases,
    },
    /// Simulate comb preparation by optical pumping.
    PrepSim,
    /// Stream simulated detection records to a file.
    Simulate {
        #[arg(long, value_enum, default_value_t = Format::Binary)]
        format: Format,
        #[arg(long, value_enum, default_value_t = Memory::Comb)]
        memory: Memory,
    },
    /// Idler-signal correlation of a recorded stream.
    Correlate { input: PathBuf },
    /// Mode-resolved analysis of the long-storage run.
    Multimode,
    /// Idler sent through a fiber link before detection.
    Fiber,
    /// Fit free parameters to the configured targets.
    Calibrate {
        #[arg(long, value_delimiter = ',', default_value = "mu,mode_matching")]
        free: Vec<String>,
    },
    /// Run a scenario and write its report.
    Report {
        #[arg(long, default_value = "all")]
        scenario: String,
    },
    /// Print the resolved configuration.
    Config,
}

#[derive(Clone, Copy, ValueEnum)]
enum PulseKind {
    Comb,
    Sech,
}

#[derive(Clone, Copy, ValueEnum)]
enum Phases {
    Schroeder,
    Zero,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Binary,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum Memory {
    Comb,
    Transparency,
    Bypass,
}

impl From<Memory> for MemoryMode {
    fn from(m: Memory) -> Self {
        match m {
            Memory::Comb => MemoryMode::Comb,
            Memory::Transparency => MemoryMode::Transparency,
            Memory::Bypass => MemoryMode::Bypass,
        }
    }
}

fn load_config(cli: &Cli) -> Result<NodeConfig> {
    let mut cfg = match &cli.config {
        Some(p) => NodeConfig::load(p)?,
        None => NodeConfig::nominal(),
    };
    if let Some(s) = cli.seed {
        cfg.run.seed = s;
    }
    if let Some(d) = cli.duration {
        cfg.run.duration_s = d;
    }
    if let Some(t) = cli.storage_time {
        cfg.run.storage_time_us = t;
        cfg.scenarios.multimode_storage_us = t;
        cfg.scenarios.fiber_storage_us = t;
        cfg.scenarios.efficiency_storage_us = t;
    }
    if let Some(k) = cli.fiber_km {
        cfg.run.fiber_length_km = k;
        cfg.scenarios.fiber_km = k;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cli: &Cli) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from("afc-out"))
}

fn finish(rep: &Report, strict: bool) -> ExitCode {
    print!("{}", rep.to_text());
    if strict && !rep.passed() {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    }
}

fn run_named(cli: &Cli, cfg: &NodeConfig, name: &str) -> Result<ExitCode> {
    let opts = ScenarioOptions {
        seed: cfg.run.seed,
        duration_s: cli.duration,
        out: Some(out_dir(cli)),
    };
    let t = Instant::now();
    let rep = scenario::run_scenario(name, cfg, &opts)?;
    eprintln!(
        "{name}: {:.1} s, output in {}",
        t.elapsed().as_secs_f64(),
        out_dir(cli).display()
    );
    Ok(finish(&rep, cli.strict))
}

fn synth_pulse(cli: &Cli, cfg: &NodeConfig, kind: PulseKind, phases: Phases) -> Result<ExitCode> {
    let p = &cfg.pulse;
    let w: PulseWaveform = match kind {
        PulseKind::Sech => sech_chirp(&cfg.sech_params())?,
        PulseKind::Comb => {
            let comb = cfg.comb_spec(cfg.run.storage_time_us);
            let n = comb.n_teeth();
            let ph = match phases {
                Phases::Schroeder => schroeder_phases(n),
                Phases::Zero => vec![0.0; n],
            };
            multi_tooth_pulse(&comb, &ph, p.comb_carrier_mhz, p.comb_duration_s, p.comb_sample_rate)?
        }
    };
    let dir = out_dir(cli);
    let mut bin = Vec::new();
    w.write_binary(&mut bin)?;
    write_file(&dir, "pulse.bin", &bin)?;
    let mut side = Vec::new();
    w.write_sidecar(&mut side)?;
    write_file(&dir, "pulse.txt", &side)?;
    let mut spec = Vec::new();
    pulse_spectrum(&w)?.write_text(&mut spec)?;
    write_file(&dir, "spectrum.txt", &spec)?;
    println!(
        "samples = {}\naverage_power = {:.6e}\npapr = {:.4}",
        w.len(),
        w.average_power(),
        afc_core::pulse::crest_factor(&w)?
    );
    Ok(ExitCode::SUCCESS)
}

fn simulate(cli: &Cli, cfg: &NodeConfig, format: Format, memory: Memory) -> Result<ExitCode> {
    let setup = cfg.setup(cfg.run.storage_time_us, cfg.run.fiber_length_km, memory.into())?;
    let gen = EventGenerator::new(setup, cfg.run.seed)?;
    let path = cli.out.clone().unwrap_or_else(|| {
        PathBuf::from(match format {
            Format::Binary => "events.bin",
            Format::Csv => "events.csv",
        })
    });
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    match format {
        Format::Binary => write_binary_header(&mut w, Some(gen.trial_length_ps()), None)?,
        Format::Csv => writeln!(w, "channel,time_ps")?,
    }
    let mut n = 0usize;
    gen.stream(cfg.run.duration_s, cfg.correlator.chunk_periods, |chunk| {
        n += chunk.len();
        match format {
            Format::Binary => write_binary_records(&mut w, chunk),
            Format::Csv => chunk
                .iter()
                .try_for_each(|e| writeln!(w, "{},{}", e.channel, e.time_ps).map_err(Into::into)),
        }
    })?;
    w.flush()?;
    eprintln!(
        "{n} records over {} periods written to {}",
        gen.n_periods(cfg.run.duration_s),
        path.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn correlate_file(cli: &Cli, cfg: &NodeConfig, input: &Path) -> Result<ExitCode> {
    let file = File::open(input).with_context(|| format!("opening {}", input.display()))?;
    let stream = EventStream::read(std::io::BufReader::new(file))?;
    let st = cfg.run.storage_time_us;
    let s = (st * 1e6).round() as i64;
    let m = (cfg.correlator.margin_ns * 1e3).round() as i64;
    let trial = stream.trial_length_ps().unwrap_or(2 * s as u64);
    let mut cc = correlator_config(cfg, IDLER, SIGNAL, (-m, s + m), s, trial)?;
    let est = if stream.trial_length_ps().is_some() {
        AccidentalEstimator::ShiftedTrials {
            smoothing_bins: cfg.correlator.smoothing_bins,
        }
    } else {
        cc.shifts = 0;
        cc.trial_period_ps = None;
        AccidentalEstimator::sideband_default(st)
    };
    let data = correlate(stream.events(), cc)?;
    let g = normalize_g2(&data, &est)?;
    let mut rep = Report::new("correlate");
    rep.value("input", input.display());
    rep.value("records", stream.len());
    rep.value("starts", data.starts);
    let (v, e) = g.at(st * 1e3);
    rep.measured("g2_echo", v, e);
    rep.number("g2_transmitted", g.at(0.0).0);
    match find_peak(&g, st * 1e3, 50.0) {
        Ok(p) => rep.number("echo_peak_snr", p.snr),
        Err(err) => rep.warn(err.to_string()),
    }
    let mut csv = Vec::new();
    g.write_csv(&mut csv)?;
    let dir = out_dir(cli);
    write_file(&dir, "g2.csv", &csv)?;
    rep.files.push("g2.csv".into());
    rep.write(&dir, cfg)?;
    Ok(finish(&rep, cli.strict))
}

fn run_calibration(cli: &Cli, cfg: &NodeConfig, free: &[String]) -> Result<ExitCode> {
    let params = free
        .iter()
        .filter(|s| !s.is_empty() && s.as_str() != "none")
        .map(|s| s.parse::<FreeParam>())
        .collect::<Result<Vec<_>, _>>()?;
    let cal = calibrate(cfg, &targets_from_config(cfg), &params)?;
    let dir = out_dir(cli);
    let target = dir.join("calibrated.toml");
    if let Some(input) = &cli.config {
        let same = match (input.canonicalize(), target.canonicalize()) {
            (Ok(a), Ok(b)) => a == b,
            _ => false,
        };
        if same {
            bail!(afc_node::NodeError::WouldOverwrite(input.display().to_string()));
        }
    }
    write_file(&dir, "calibrated.toml", cal.config.to_toml().as_bytes())?;
    let mut rep = cal.report();
    rep.files.push("calibrated.toml".into());
    write_file(&dir, "summary.txt", rep.to_text().as_bytes())?;
    Ok(finish(&rep, cli.strict))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = load_config(&cli).and_then(|cfg| match &cli.command {
        Command::SynthPulse { kind, phases } => synth_pulse(&cli, &cfg, *kind, *phases),
        Command::PrepSim => run_named(&cli, &cfg, "prep-sim"),
        Command::Simulate { format, memory } => simulate(&cli, &cfg, *format, *memory),
        Command::Correlate { input } => correlate_file(&cli, &cfg, input),
        Command::Multimode => run_named(&cli, &cfg, "multimode"),
        Command::Fiber => run_named(&cli, &cfg, "fiber"),
        Command::Calibrate { free } => run_calibration(&cli, &cfg, free),
        Command::Report { scenario } => run_named(&cli, &cfg, scenario),
        Command::Config => {
            print!("{}", cfg.to_toml());
            Ok(ExitCode::SUCCESS)
        }
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
