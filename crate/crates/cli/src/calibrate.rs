//! Deterministic grid-and-refine fit of the source brightness and the
//! memory mode matching to measured peak correlations and efficiencies.

use std::str::FromStr;

use afc_core::source::{window_fraction, PeakPrediction, SimulationSetup};

use crate::config::{MemoryMode, NodeConfig};
use crate::report::{Check, Report};
use crate::NodeError;

/// Pulls above this flag the fit.
pub const PULL_LIMIT: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FreeParam {
    /// `source.mean_pairs_per_mode`
    Mu,
    /// `memory.mode_matching`
    ModeMatching,
}

impl FromStr for FreeParam {
    type Err = NodeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mu" | "mean_pairs_per_mode" => Ok(Self::Mu),
            "kappa" | "mode_matching" => Ok(Self::ModeMatching),
            other => Err(NodeError::Config(format!("unknown free parameter '{other}'"))),
        }
    }
}

impl FreeParam {
    pub fn name(self) -> &'static str {
        match self {
            Self::Mu => "mean_pairs_per_mode",
            Self::ModeMatching => "mode_matching",
        }
    }

    /// Search interval and whether it is scanned logarithmically.
    fn range(self) -> (f64, f64, bool) {
        match self {
            Self::Mu => (1e-4, 0.5, true),
            Self::ModeMatching => (1e-3, 1.0, false),
        }
    }

    fn get(self, cfg: &NodeConfig) -> f64 {
        match self {
            Self::Mu => cfg.source.mean_pairs_per_mode,
            Self::ModeMatching => cfg.memory.mode_matching,
        }
    }

    fn set(self, cfg: &mut NodeConfig, v: f64) {
        match self {
            Self::Mu => cfg.source.mean_pairs_per_mode = v,
            Self::ModeMatching => cfg.memory.mode_matching = v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Observable {
    /// Peak cross-correlation at the echo delay.
    PeakG2 { storage_time_us: f64 },
    /// Echo over corrected transparency reference.
    Efficiency { storage_time_us: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Target {
    pub observable: Observable,
    pub value: f64,
    pub sigma: f64,
}

impl Target {
    fn name(&self) -> String {
        match self.observable {
            Observable::PeakG2 { storage_time_us } => format!("g2_peak_{storage_time_us}us"),
            Observable::Efficiency { storage_time_us } => format!("efficiency_{storage_time_us}us"),
        }
    }
}

/// Every target listed in the scenario section.
pub fn targets_from_config(cfg: &NodeConfig) -> Vec<Target> {
    let sc = &cfg.scenarios;
    let mut t: Vec<Target> = sc
        .storage_times_us
        .iter()
        .zip(sc.g2_targets.iter().zip(&sc.g2_target_sigmas))
        .map(|(&s, (&v, &e))| Target {
            observable: Observable::PeakG2 { storage_time_us: s },
            value: v,
            sigma: e,
        })
        .collect();
    t.push(Target {
        observable: Observable::Efficiency {
            storage_time_us: sc.efficiency_storage_us,
        },
        value: sc.efficiency_target.0,
        sigma: sc.efficiency_target.1,
    });
    t
}

/// Expected efficiency estimate: echo and reference window fractions
/// included, accidentals excluded.
pub fn predicted_efficiency(cfg: &NodeConfig, storage_time_us: f64) -> Result<f64, NodeError> {
    let echo = cfg.setup(storage_time_us, 0.0, MemoryMode::Comb)?;
    let reference = cfg.setup(storage_time_us, 0.0, MemoryMode::Transparency)?;
    Ok(efficiency_of(cfg, &echo, &reference))
}

fn efficiency_of(cfg: &NodeConfig, echo: &SimulationSetup, reference: &SimulationSetup) -> f64 {
    let b = 0.5 * cfg.source.coherence_time_ns();
    let sj = cfg.detectors.pair_jitter_sigma_ns();
    let fe = window_fraction(cfg.correlator.echo_window_ns, b, sj.hypot(echo.memory.echo_sigma_ns));
    let fr = window_fraction(cfg.correlator.reference_window_ns, b, sj);
    echo.memory.p_echo * fe / (reference.memory.p_trans * fr * cfg.memory.transparency_depth.exp())
}

/// Closed-form model with the expensive memory and timing quantities
/// resolved once at unit mode matching. The peak prediction scales
/// analytically with the pair rate and the echo probability.
struct Model {
    base: NodeConfig,
    /// Per target: unit setup, its peak prediction, and the reference.
    setups: Vec<(SimulationSetup, PeakPrediction, Option<SimulationSetup>)>,
}

impl Model {
    fn new(cfg: &NodeConfig, targets: &[Target]) -> Result<Self, NodeError> {
        let mut unit = cfg.clone();
        unit.memory.mode_matching = 1.0;
        if !(unit.source.mean_pairs_per_mode > 0.0) {
            unit.source.mean_pairs_per_mode = 0.01;
        }
        let bin = cfg.correlator.bin_ns;
        let setups = targets
            .iter()
            .map(|t| {
                let (st, with_reference) = match t.observable {
                    Observable::PeakG2 { storage_time_us } => (storage_time_us, false),
                    Observable::Efficiency { storage_time_us } => (storage_time_us, true),
                };
                let echo = unit.setup(st, 0.0, MemoryMode::Comb)?;
                let reference = if with_reference {
                    Some(unit.setup(st, 0.0, MemoryMode::Transparency)?)
                } else {
                    None
                };
                Ok((echo, echo.echo_prediction(bin), reference))
            })
            .collect::<Result<Vec<_>, NodeError>>()?;
        Ok(Self {
            base: cfg.clone(),
            setups,
        })
    }

    fn predict(&self, cfg: &NodeConfig, i: usize) -> f64 {
        let (unit, p, reference) = &self.setups[i];
        let kappa = cfg.memory.mode_matching;
        if let Some(r) = reference {
            let mut s = *unit;
            s.memory.p_echo = unit.memory.p_echo * kappa;
            return efficiency_of(cfg, &s, r);
        }
        // direct ∝ 1/r, x_s ∝ 1/(r·κ), x_i ∝ 1/r.
        let scale = unit.source.pair_rate_hz() / cfg.source.pair_rate_hz();
        let direct = p.direct * scale;
        let x_s = p.signal_noise_ratio * scale / kappa;
        let x_i = p.idler_noise_ratio * scale;
        1.0 + (direct + p.cross) / ((1.0 + x_s) * (1.0 + x_i))
    }

    fn pulls(&self, cfg: &NodeConfig, targets: &[Target]) -> Vec<f64> {
        targets
            .iter()
            .enumerate()
            .map(|(i, t)| (self.predict(cfg, i) - t.value) / t.sigma)
            .collect()
    }

    fn chi2(&self, params: &[FreeParam], x: &[f64], targets: &[Target]) -> f64 {
        let mut cfg = self.base.clone();
        for (p, v) in params.iter().zip(x) {
            p.set(&mut cfg, *v);
        }
        self.pulls(&cfg, targets).iter().map(|z| z * z).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    pub name: String,
    pub target: f64,
    pub sigma: f64,
    pub model: f64,
    pub pull: f64,
}

#[derive(Debug, Clone)]
pub struct Calibration {
    pub config: NodeConfig,
    pub fitted: Vec<(FreeParam, f64)>,
    pub residuals: Vec<Residual>,
    pub chi2: f64,
    pub warning: Option<String>,
}

impl Calibration {
    pub fn report(&self) -> Report {
        let mut rep = Report::new("calibrate");
        for (p, v) in &self.fitted {
            rep.number(p.name(), *v);
        }
        for r in &self.residuals {
            rep.value(
                &r.name,
                format!(
                    "model {:.6} target {} +- {} pull {:+.3}",
                    r.model, r.target, r.sigma, r.pull
                ),
            );
        }
        rep.number("chi2", self.chi2);
        rep.check(Check::flag(
            "residuals",
            self.warning.is_none(),
            format!("max |pull| <= {PULL_LIMIT}"),
        ));
        if let Some(w) = &self.warning {
            rep.warn(w.clone());
        }
        rep
    }
}

const GRID: usize = 41;
const REFINE_POINTS: usize = 21;
const REFINE_ROUNDS: usize = 6;

fn axis(lo: f64, hi: f64, log: bool, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let t = i as f64 / (n - 1) as f64;
            if log {
                (lo.ln() + t * (hi.ln() - lo.ln())).exp()
            } else {
                lo + t * (hi - lo)
            }
        })
        .collect()
}

/// Best point of the Cartesian grid spanned by `axes`.
fn grid_min(axes: &[Vec<f64>], f: &dyn Fn(&[f64]) -> f64) -> (Vec<f64>, f64) {
    let mut best = (Vec::new(), f64::INFINITY);
    let total: usize = axes.iter().map(Vec::len).product();
    for k in 0..total {
        let mut r = k;
        let x: Vec<f64> = axes
            .iter()
            .map(|a| {
                let v = a[r % a.len()];
                r /= a.len();
                v
            })
            .collect();
        let v = f(&x);
        if v < best.1 {
            best = (x, v);
        }
    }
    best
}

/// Fits `params` to `targets`, starting from `cfg`. The input is never
/// modified; with no free parameters the result equals the input.
pub fn calibrate(cfg: &NodeConfig, targets: &[Target], params: &[FreeParam]) -> Result<Calibration, NodeError> {
    if targets.is_empty() {
        return Err(NodeError::Config("calibration needs at least one target".into()));
    }
    for t in targets {
        if !(t.sigma > 0.0) {
            return Err(NodeError::Config(format!(
                "target {}: sigma must be positive",
                t.name()
            )));
        }
    }
    let model = Model::new(cfg, targets)?;
    let mut fitted_cfg = cfg.clone();
    if !params.is_empty() {
        let f = |x: &[f64]| model.chi2(params, x, targets);
        let ranges: Vec<(f64, f64, bool)> = params.iter().map(|p| p.range()).collect();
        let axes: Vec<Vec<f64>> = ranges.iter().map(|&(lo, hi, log)| axis(lo, hi, log, GRID)).collect();
        let (mut x, _) = grid_min(&axes, &f);
        // Half-widths of the current search box, in scan coordinates.
        let mut half: Vec<f64> = ranges
            .iter()
            .map(|&(lo, hi, log)| {
                let span = if log { hi.ln() - lo.ln() } else { hi - lo };
                span / (GRID - 1) as f64
            })
            .collect();
        for _ in 0..REFINE_ROUNDS {
            let axes: Vec<Vec<f64>> = ranges
                .iter()
                .zip(&x)
                .zip(&half)
                .map(|((&(lo, hi, log), &c), &h)| {
                    if log {
                        let a = (c.ln() - h).max(lo.ln());
                        let b = (c.ln() + h).min(hi.ln());
                        axis(a.exp(), b.exp(), true, REFINE_POINTS)
                    } else {
                        axis((c - h).max(lo), (c + h).min(hi), false, REFINE_POINTS)
                    }
                })
                .collect();
            x = grid_min(&axes, &f).0;
            half.iter_mut().for_each(|h| *h *= 4.0 / (REFINE_POINTS - 1) as f64);
        }
        for (p, v) in params.iter().zip(&x) {
            p.set(&mut fitted_cfg, *v);
        }
    }
    fitted_cfg.validate()?;
    let pulls = model.pulls(&fitted_cfg, targets);
    let residuals: Vec<Residual> = targets
        .iter()
        .zip(&pulls)
        .enumerate()
        .map(|(i, (t, &z))| Residual {
            name: t.name(),
            target: t.value,
            sigma: t.sigma,
            model: model.predict(&fitted_cfg, i),
            pull: z,
        })
        .collect();
    let chi2 = pulls.iter().map(|z| z * z).sum();
    let worst = residuals
        .iter()
        .max_by(|a, b| a.pull.abs().total_cmp(&b.pull.abs()))
        .expect("at least one target");
    let warning = (worst.pull.abs() > PULL_LIMIT).then(|| {
        format!(
            "fit residual above threshold: {} model {:.4} vs target {} +- {} ({:+.1} sigma)",
            worst.name, worst.model, worst.target, worst.sigma, worst.pull
        )
    });
    Ok(Calibration {
        fitted: params.iter().map(|p| (*p, p.get(&fitted_cfg))).collect(),
        config: fitted_cfg,
        residuals,
        chi2,
        warning,
    })
}
