//! Command-line arguments and resolved run settings.
//!
//! Precedence: command-line flags (or their `DIDES_*` environment variables)
//! override the JSON config file, which overrides the built-in defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "dides", version, about = "Occupational labor-supply model: incidence, counterfactuals and estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// First-order wage and employment incidence of an exposure shock.
    Incidence,
    /// Eigendecomposition of the elasticity matrix and exposure projections.
    Spectral,
    /// Exact share counterfactuals for every group given wage changes.
    CounterfactualStatic,
    /// Simulate a transition panel from the dynamic model.
    DynamicsSimulate,
    /// Dynamic counterfactual in changes on an observed transition panel.
    DynamicsCounterfactual,
    /// PPML estimation of the supply elasticity and skill correlations.
    EstimatePpml,
    /// Euler-equation regression for the short-run elasticity.
    EstimateEuler,
    /// Write a synthetic workspace generated by the model.
    Sample,
    /// Summary statistics of a workspace under the current parameters.
    Report,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Incidence => "incidence",
            Command::Spectral => "spectral",
            Command::CounterfactualStatic => "counterfactual-static",
            Command::DynamicsSimulate => "dynamics-simulate",
            Command::DynamicsCounterfactual => "dynamics-counterfactual",
            Command::EstimatePpml => "estimate-ppml",
            Command::EstimateEuler => "estimate-euler",
            Command::Sample => "sample",
            Command::Report => "report",
        }
    }
}

/// Flags shared by every command.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// JSON config file.
    #[arg(long, global = true, env = "DIDES_CONFIG")]
    pub config: Option<PathBuf>,
    /// Directory holding the input CSV files.
    #[arg(long, global = true, env = "DIDES_DATA")]
    pub data: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = "DIDES_OUT")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, env = "DIDES_SEED")]
    pub seed: Option<u64>,
    /// Solver tolerance.
    #[arg(long, global = true, env = "DIDES_TOL")]
    pub tol: Option<f64>,
    #[arg(long, global = true, env = "DIDES_MAX_ITER")]
    pub max_iter: Option<usize>,
    /// Labor demand elasticity.
    #[arg(long, global = true, env = "DIDES_SIGMA")]
    pub sigma: Option<f64>,
    /// Labor supply elasticity.
    #[arg(long, global = true, env = "DIDES_THETA")]
    pub theta: Option<f64>,
    /// Within-skill correlations, comma separated (cognitive, manual, interpersonal).
    #[arg(long, global = true, env = "DIDES_RHO", value_delimiter = ',')]
    pub rho: Option<Vec<f64>>,
    /// Weight of selected productivity in effective labor.
    #[arg(long, global = true, env = "DIDES_DELTA")]
    pub delta: Option<f64>,
    /// Discount factor.
    #[arg(long, global = true, env = "DIDES_BETA")]
    pub beta: Option<f64>,
    /// Short-run elasticity `θ/κ`.
    #[arg(long, global = true, env = "DIDES_KAPPA_RATIO")]
    pub kappa_ratio: Option<f64>,
    /// Number of periods after the base period.
    #[arg(long, global = true, env = "DIDES_HORIZON")]
    pub horizon: Option<usize>,
    /// Exposure measure driving the shock.
    #[arg(long, global = true, env = "DIDES_EXPOSURE")]
    pub exposure: Option<ExposureKind>,
    /// Log wage response per unit of exposure.
    #[arg(long, global = true, env = "DIDES_SHOCK", allow_hyphen_values = true)]
    pub shock: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExposureKind {
    Ai,
    Automation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FixedEffects {
    None,
    Pair,
    Origin,
    Destination,
    TwoWay,
}

/// Fully resolved settings; serialized into the run manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
    pub sigma: f64,
    pub theta: f64,
    pub rho: Vec<f64>,
    pub delta: f64,
    pub beta: f64,
    pub kappa_ratio: f64,
    pub horizon: usize,
    pub exposure: ExposureKind,
    pub shock: f64,
    /// Group used by single-group commands; the first group when unset.
    pub group: Option<String>,
    /// Base period; the first period when unset.
    pub period: Option<i64>,
    /// Explicit wage changes by occupation id.
    pub w_hat: Option<BTreeMap<String, f64>>,
    pub n_starts: usize,
    pub theta_init: f64,
    pub ces: bool,
    pub use_iv: bool,
    pub fixed_effects: FixedEffects,
    /// Switching cost per unit of L1 distance between skill profiles.
    pub tau_scale: f64,
    /// Periods over which a dynamic shock is phased in.
    pub phase_in: usize,
    pub draws: usize,
    pub sample_occupations: usize,
    pub sample_groups: usize,
    pub sample_noise: f64,
    pub sample_wage_spread: f64,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            data_dir: PathBuf::from("."),
            out_dir: PathBuf::from("out"),
            seed: 0,
            tol: 1e-12,
            max_iter: 10_000,
            damping: 0.5,
            sigma: 1.34,
            theta: 1.10,
            rho: vec![0.77, 0.48, 0.75],
            delta: 0.0,
            beta: 0.96,
            kappa_ratio: 0.071,
            horizon: 30,
            exposure: ExposureKind::Ai,
            shock: -0.1,
            group: None,
            period: None,
            w_hat: None,
            n_starts: 5,
            theta_init: 1.0,
            ces: false,
            use_iv: true,
            fixed_effects: FixedEffects::Pair,
            tau_scale: 1.0,
            phase_in: 1,
            draws: 100_000,
            sample_occupations: 12,
            sample_groups: 8,
            sample_noise: 0.0,
            sample_wage_spread: 0.15,
        }
    }
}

impl Settings {
    /// Defaults, then the config file, then flags.
    pub fn resolve(flags: &Flags) -> Result<Self, CliError> {
        let mut s = match &flags.config {
            Some(path) => Self::from_file(path)?,
            None => Settings::default(),
        };
        if let Some(v) = &flags.data {
            s.data_dir = v.clone();
        }
        if let Some(v) = &flags.out {
            s.out_dir = v.clone();
        }
        macro_rules! take {
            ($($field:ident),*) => { $(if let Some(v) = flags.$field.clone() { s.$field = v; })* };
        }
        take!(seed, tol, max_iter, sigma, theta, rho, delta, beta, kappa_ratio, horizon, exposure, shock);
        s.validate()?;
        Ok(s)
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut s: Settings = serde_json::from_str(&text)
            .map_err(|e| CliError::Input(format!("config {}: {e}", path.display())))?;
        // Relative paths in a config file are taken from the file's directory.
        let base = path.parent().unwrap_or(Path::new("."));
        if s.data_dir.is_relative() {
            s.data_dir = base.join(&s.data_dir);
        }
        if s.out_dir.is_relative() {
            s.out_dir = base.join(&s.out_dir);
        }
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Input(msg));
        if self.tol.is_nan() || self.tol <= 0.0 {
            return bad(format!("tol must be positive, got {}", self.tol));
        }
        if self.max_iter == 0 {
            return bad("max_iter must be positive".into());
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return bad(format!("damping must lie in (0, 1], got {}", self.damping));
        }
        if self.rho.len() != 3 {
            return bad(format!("rho needs one value per skill (3), got {}", self.rho.len()));
        }
        if self.n_starts == 0 {
            return bad("n_starts must be positive".into());
        }
        if self.phase_in == 0 {
            return bad("phase_in must be at least 1".into());
        }
        Ok(())
    }

    pub fn solver(&self) -> dides_core::SolverOptions {
        dides_core::SolverOptions { tol: self.tol, max_iter: self.max_iter, damping: self.damping }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_config_file() {
        let dir = std::env::temp_dir().join(format!("dides-config-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("cfg.json");
        std::fs::write(&path, r#"{"sigma": 2.0, "theta": 3.0, "seed": 9}"#).unwrap();
        let flags = Flags { config: Some(path), theta: Some(4.0), ..Default::default() };
        let s = Settings::resolve(&flags).unwrap();
        assert_eq!(s.sigma, 2.0);
        assert_eq!(s.theta, 4.0);
        assert_eq!(s.seed, 9);
        assert_eq!(s.beta, Settings::default().beta);
        std::fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn unknown_config_keys_rejected() {
        let dir = std::env::temp_dir().join(format!("dides-config-bad-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("cfg.json");
        std::fs::write(&path, r#"{"sigmaa": 2.0}"#).unwrap();
        assert!(Settings::from_file(&path).is_err());
        std::fs::remove_dir_all(dir).unwrap();
    }
}
