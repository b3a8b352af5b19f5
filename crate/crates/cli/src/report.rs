//! Scenario reports: headline numbers, acceptance checks and the files
//! written alongside them.

use std::fmt::Display;
use std::fs;
use std::path::Path;

use crate::config::NodeConfig;
use crate::NodeError;

/// Half-width of an acceptance band in combined standard deviations.
pub const BAND_SIGMAS: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    /// `|value − target| ≤ 2·sqrt(σ² + σ_target²)`.
    pub fn band(name: &str, value: f64, sigma: f64, target: f64, target_sigma: f64) -> Self {
        let half = BAND_SIGMAS * sigma.hypot(target_sigma);
        Self {
            name: name.to_string(),
            pass: (value - target).abs() <= half,
            detail: format!(
                "{value:.4} +- {sigma:.4} vs {target} +- {target_sigma} (band {:.4}..{:.4})",
                target - half,
                target + half
            ),
        }
    }

    pub fn at_least(name: &str, value: f64, min: f64) -> Self {
        Self {
            name: name.to_string(),
            pass: value >= min,
            detail: format!("{} >= {}", num(value), num(min)),
        }
    }

    pub fn at_most(name: &str, value: f64, max: f64) -> Self {
        Self {
            name: name.to_string(),
            pass: value <= max,
            detail: format!("{} <= {}", num(value), num(max)),
        }
    }

    pub fn flag(name: &str, pass: bool, detail: impl Display) -> Self {
        Self {
            name: name.to_string(),
            pass,
            detail: detail.to_string(),
        }
    }

    pub fn line(&self) -> String {
        let tag = if self.pass { "PASS" } else { "FAIL" };
        format!("{tag} {}: {}", self.name, self.detail)
    }
}

fn num(v: f64) -> String {
    if v == 0.0 || (1e-3..1e6).contains(&v.abs()) {
        format!("{v:.6}")
    } else {
        format!("{v:.4e}")
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub scenario: String,
    pub values: Vec<(String, String)>,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
    /// Files written, relative to the output directory.
    pub files: Vec<String>,
}

impl Report {
    pub fn new(scenario: &str) -> Self {
        Self {
            scenario: scenario.to_string(),
            ..Default::default()
        }
    }

    pub fn value(&mut self, key: &str, v: impl Display) {
        self.values.push((key.to_string(), v.to_string()));
    }

    pub fn number(&mut self, key: &str, v: f64) {
        self.value(key, format!("{v:.6}"));
    }

    pub fn measured(&mut self, key: &str, v: f64, sigma: f64) {
        self.value(key, format!("{v:.6} +- {sigma:.6}"));
    }

    pub fn check(&mut self, c: Check) {
        self.checks.push(c);
    }

    pub fn warn(&mut self, msg: impl Into<String>) {
        self.warnings.push(msg.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn find_check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.pass).collect()
    }

    /// Appends another scenario's report under its name.
    pub fn merge(&mut self, other: Report) {
        let p = &other.scenario;
        self.values
            .extend(other.values.into_iter().map(|(k, v)| (format!("{p}.{k}"), v)));
        self.checks.extend(other.checks.into_iter().map(|mut c| {
            c.name = format!("{p}.{}", c.name);
            c
        }));
        self.warnings
            .extend(other.warnings.into_iter().map(|w| format!("{p}: {w}")));
        self.files.extend(other.files);
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("scenario = {}\n", self.scenario);
        for (k, v) in &self.values {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s.push_str("\n[checks]\n");
        for c in &self.checks {
            s.push_str(&c.line());
            s.push('\n');
        }
        if !self.warnings.is_empty() {
            s.push_str("\n[warnings]\n");
            for w in &self.warnings {
                s.push_str(&format!("WARN {w}\n"));
            }
        }
        s.push_str(&format!("\nresult = {}\n", if self.passed() { "PASS" } else { "FAIL" }));
        s
    }

    /// Writes `summary.txt` and the resolved `config.toml`.
    pub fn write(&mut self, dir: &Path, cfg: &NodeConfig) -> Result<(), NodeError> {
        write_file(dir, "config.toml", cfg.to_toml().as_bytes())?;
        self.files.push("config.toml".into());
        self.files.push("summary.txt".into());
        write_file(dir, "summary.txt", self.to_text().as_bytes())
    }
}

pub fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), NodeError> {
    fs::create_dir_all(dir).map_err(|e| NodeError::Io(dir.display().to_string(), e))?;
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| NodeError::Io(path.display().to_string(), e))
}
