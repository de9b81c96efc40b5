//! TOML run configuration with defaults and invariant checks.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::energy::LambdaProfile;
use crate::equation::{CoefficientSpec, SpecError};
use crate::spectral::{ConvolutionMethod, SimulationSettings};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Parse(#[from] toml::de::Error),
    #[error("missing field `{path}`")]
    MissingField { path: String },
    #[error("invalid `{path}`: {message}")]
    Invariant { path: String, message: String },
    #[error(transparent)]
    Spec(#[from] SpecError),
}

fn invariant(path: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invariant { path: path.to_string(), message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Convolution {
    #[default]
    Direct,
    Padded,
}

impl From<Convolution> for ConvolutionMethod {
    fn from(c: Convolution) -> Self {
        match c {
            Convolution::Direct => ConvolutionMethod::Direct,
            Convolution::Padded => ConvolutionMethod::Padded,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Diagnostics {
    pub energies: bool,
    pub super_energies: bool,
    pub radius: bool,
    pub master_check: bool,
    pub symmetrizer_certificate: bool,
}

impl Default for Diagnostics {
    fn default() -> Self {
        Self {
            energies: true,
            super_energies: true,
            radius: true,
            master_check: true,
            symmetrizer_certificate: false,
        }
    }
}

/// Optional overrides; `None` means "derive from the run".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Constants {
    pub c0: Option<f64>,
    #[serde(rename = "N")]
    pub n_loss: Option<u32>,
    #[serde(rename = "C")]
    pub c_linear: Option<f64>,
    /// Separation constant of the coefficient (discriminant) form.
    pub c: f64,
    pub r0: Option<f64>,
    pub j_max: usize,
    pub eta: f64,
    pub s: f64,
    pub k_gevrey: Option<u32>,
    pub lambda_k: Option<LambdaProfile>,
    pub tail_target: f64,
    /// Energies `𝓔_j` written to energies.csv.
    pub energy_columns: Vec<usize>,
    pub eps_set: Vec<f64>,
    pub samples: usize,
    /// Times (fractions of T) at which the symmetrizer is certified.
    pub certificate_times: usize,
}

impl Default for Constants {
    fn default() -> Self {
        Self {
            c0: None,
            n_loss: None,
            c_linear: None,
            c: 1e-8,
            r0: None,
            j_max: 24,
            eta: 1.0,
            s: 1.0,
            k_gevrey: None,
            lambda_k: None,
            tail_target: 1e-3,
            energy_columns: vec![1, 2, 4, 8],
            eps_set: vec![1.0, 0.1, 0.01],
            samples: 10_000,
            certificate_times: 11,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    order: Option<usize>,
    horizon: Option<f64>,
    coefficients: Option<Vec<String>>,
    #[serde(default)]
    nu: u32,
    initial: Option<Vec<String>>,
    #[serde(default = "default_modes")]
    modes: usize,
    grid: Option<usize>,
    #[serde(default = "default_dt")]
    dt: f64,
    snapshot_interval: Option<f64>,
    #[serde(default = "default_ceiling")]
    ceiling: f64,
    #[serde(default)]
    convolution: Convolution,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    threads: usize,
    #[serde(default = "default_output")]
    output: PathBuf,
    #[serde(default)]
    diagnostics: Diagnostics,
    #[serde(default)]
    constants: Constants,
}

fn default_modes() -> usize {
    64
}
fn default_dt() -> f64 {
    1e-3
}
fn default_ceiling() -> f64 {
    1e8
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}

/// Validated configuration with every default filled in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub order: usize,
    pub horizon: f64,
    pub coefficients: Vec<String>,
    pub nu: u32,
    pub initial: Vec<String>,
    pub modes: usize,
    pub grid: usize,
    pub dt: f64,
    pub snapshot_interval: f64,
    pub ceiling: f64,
    pub convolution: Convolution,
    pub seed: u64,
    /// Worker threads (`0`: one per core). Excluded from run metadata.
    #[serde(skip)]
    pub threads: usize,
    #[serde(skip)]
    pub output: PathBuf,
    pub diagnostics: Diagnostics,
    pub constants: Constants,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text)?;
        Self::validate(raw)
    }

    fn validate(raw: RawConfig) -> Result<Self, ConfigError> {
        let missing = |path: &str| ConfigError::MissingField { path: path.to_string() };
        let order = raw.order.ok_or_else(|| missing("order"))?;
        if order < 2 {
            return Err(invariant("order", format!("order m >= 2 (got {order})")));
        }
        let horizon = raw.horizon.ok_or_else(|| missing("horizon"))?;
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(invariant("horizon", "horizon T > 0"));
        }
        let coefficients = raw.coefficients.ok_or_else(|| missing("coefficients"))?;
        let initial = raw.initial.ok_or_else(|| missing("initial"))?;
        for (name, list) in [("coefficients", &coefficients), ("initial", &initial)] {
            if list.len() < order {
                return Err(missing(&format!("{name}[{}]", list.len())));
            }
            if list.len() > order {
                return Err(invariant(name, format!("expected {order} entries, got {}", list.len())));
            }
        }
        if raw.modes < 8 {
            return Err(invariant("modes", format!("modes K >= 8 (got {})", raw.modes)));
        }
        let grid = raw.grid.unwrap_or((4 * raw.modes).next_power_of_two());
        if grid < 4 * raw.modes || !grid.is_power_of_two() {
            return Err(invariant("grid", format!("grid G >= 4K and a power of two (got {grid})")));
        }
        if !(raw.dt > 0.0 && raw.dt < horizon) {
            return Err(invariant("dt", format!("0 < dt < T (got {})", raw.dt)));
        }
        let snapshot_interval = raw.snapshot_interval.unwrap_or(raw.dt);
        if !(snapshot_interval > 0.0) {
            return Err(invariant("snapshot_interval", "snapshot_interval > 0"));
        }
        if !(raw.ceiling > 0.0) {
            return Err(invariant("ceiling", "ceiling > 0"));
        }
        let k = &raw.constants;
        if k.c0.is_some_and(|c| !(c >= 1.0)) {
            return Err(invariant("constants.c0", "C0 >= 1"));
        }
        if k.n_loss.is_some_and(|n| (n as usize) + 1 < order) {
            return Err(invariant("constants.N", "N >= m - 1"));
        }
        if k.c_linear.is_some_and(|c| !(c > 0.0)) {
            return Err(invariant("constants.C", "C > 0"));
        }
        if k.r0.is_some_and(|r| !(r > 0.0)) {
            return Err(invariant("constants.r0", "r0 > 0"));
        }
        if (k.j_max as u32) < raw.nu {
            return Err(invariant("constants.j_max", "J_max >= nu"));
        }
        if !(k.eta > 0.0 && k.eta <= 1.0) {
            return Err(invariant("constants.eta", "0 < eta <= 1"));
        }
        if !(k.s >= 1.0) {
            return Err(invariant("constants.s", "s >= 1"));
        }
        if k.k_gevrey == Some(0) {
            return Err(invariant("constants.k_gevrey", "k >= 1"));
        }
        if k.eps_set.is_empty() || k.eps_set.iter().any(|&e| !(e > 0.0 && e <= 1.0)) {
            return Err(invariant("constants.eps_set", "values in (0, 1]"));
        }
        if let Some(&j) = k.energy_columns.iter().find(|&&j| j > k.j_max) {
            return Err(invariant("constants.energy_columns", format!("column {j} exceeds J_max")));
        }
        let cfg = Self {
            order,
            horizon,
            coefficients,
            nu: raw.nu,
            initial,
            modes: raw.modes,
            grid,
            dt: raw.dt,
            snapshot_interval,
            ceiling: raw.ceiling,
            convolution: raw.convolution,
            seed: raw.seed,
            threads: raw.threads,
            output: raw.output,
            diagnostics: raw.diagnostics,
            constants: raw.constants,
        };
        cfg.spec()?;
        Ok(cfg)
    }

    pub fn spec(&self) -> Result<CoefficientSpec, SpecError> {
        CoefficientSpec::from_sources(self.order, self.horizon, &self.coefficients, self.nu, &self.initial)
    }

    pub fn settings(&self, record_forcing: bool) -> SimulationSettings {
        SimulationSettings {
            modes: self.modes,
            grid: self.grid,
            dt: self.dt,
            stride: ((self.snapshot_interval / self.dt).round() as usize).max(1),
            ceiling: self.ceiling,
            record_forcing,
            method: self.convolution.into(),
        }
    }
}

/// Parsed configuration plus the SHA-256 of its source text.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub hash: String,
}

pub fn hash_text(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn load_config(path: &Path) -> Result<LoadedConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    Ok(LoadedConfig { config: RunConfig::from_toml(&text)?, hash: hash_text(&text) })
}

#[cfg(test)]
mod tests {
    use super::*;

    const WAVE: &str = r#"
order = 2
horizon = 1.0
coefficients = ["0", "-1"]
nu = 0
initial = ["cos(x)", "0"]
modes = 64
dt = 1e-3
"#;

    #[test]
    fn minimal_wave_config() {
        let c = RunConfig::from_toml(WAVE).unwrap();
        assert_eq!(c.grid, 256);
        assert_eq!(c.snapshot_interval, 1e-3);
        assert_eq!(c.constants.j_max, 24);
        assert_eq!(c.settings(false).stride, 1);
    }

    #[test]
    fn small_k_rejected() {
        let text = WAVE.replace("modes = 64", "modes = 4");
        let err = RunConfig::from_toml(&text).unwrap_err();
        assert!(err.to_string().contains("modes K >= 8"), "{err}");
        assert!(matches!(err, ConfigError::Invariant { ref path, .. } if path == "modes"));
    }

    #[test]
    fn arity_mismatch_is_missing_field() {
        let text = WAVE.replace(r#"["0", "-1"]"#, r#"["0"]"#);
        let err = RunConfig::from_toml(&text).unwrap_err();
        assert!(matches!(err, ConfigError::MissingField { ref path } if path == "coefficients[1]"));
    }

    #[test]
    fn other_violations() {
        for (from, to, path) in
            [("dt = 1e-3", "dt = 2.0", "dt"), ("modes = 64", "modes = 64\ngrid = 128", "grid")]
        {
            let err = RunConfig::from_toml(&WAVE.replace(from, to)).unwrap_err();
            assert!(matches!(err, ConfigError::Invariant { path: ref p, .. } if p == path), "{err}");
        }
        for (extra, path) in [
            ("[constants]\neta = 1.5", "constants.eta"),
            ("[constants]\nj_max = 0\n", "constants.energy_columns"),
        ] {
            let err = RunConfig::from_toml(&format!("{WAVE}{extra}")).unwrap_err();
            assert!(matches!(err, ConfigError::Invariant { path: ref p, .. } if p == path), "{err}");
        }
        let err = RunConfig::from_toml(&WAVE.replace("order = 2\n", "")).unwrap_err();
        assert!(matches!(err, ConfigError::MissingField { ref path } if path == "order"));
        assert!(matches!(RunConfig::from_toml(&format!("{WAVE}\nbogus = 1")), Err(ConfigError::Parse(_))));
        assert!(matches!(
            RunConfig::from_toml(&WAVE.replace("modes = 64", "modes = \"many\"")),
            Err(ConfigError::Parse(_))
        ));
        assert!(matches!(RunConfig::from_toml(&WAVE.replace("cos(x)", "cos(y)")), Err(ConfigError::Spec(_))));
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(hash_text(WAVE), hash_text(WAVE));
        assert_eq!(hash_text("").len(), 64);
    }
}
