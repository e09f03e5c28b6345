//! Experiment configuration: one TOML document with the sections `grid`,
//! `potential`, `coefficients`, `solver`, `verify` and `output`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use svi_torus::simulator::SolverConfig;
use svi_torus::verify::{AprioriExponent, RateParameter};
use svi_torus::{CoefficientSet, ConvexPotential, PeriodicGrid, ScalarField};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: GridSection,
    pub potential: PotentialSection,
    pub coefficients: CoefficientSection,
    pub solver: SolverConfig,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub dim: usize,
    pub n: usize,
    /// Initial data preset (`sine`, `mode:k1,k2`, `random:<norm>[:<max mode>]`, ...).
    #[serde(default = "default_initial")]
    pub initial: String,
    /// Seed of random initial data.
    #[serde(default)]
    pub initial_seed: u64,
    /// Multiplies the initial data.
    #[serde(default = "one")]
    pub amplitude: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSection {
    /// `p-laplace:<p>`, `log-diffusion`, `minimal-surface` or `curve-shortening`.
    pub name: String,
}

/// Either a named preset or separate `a` / `b` keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    /// Reports run by `verify` when no names are given on the command line.
    #[serde(default = "default_inequalities")]
    pub inequalities: Vec<String>,
    /// Second initial datum for `contraction`: `x + perturbation_scale * perturbation`.
    #[serde(default = "default_perturbation")]
    pub perturbation: String,
    #[serde(default = "default_perturbation_scale")]
    pub perturbation_scale: f64,
    #[serde(default = "default_rate_parameter")]
    pub rate_parameter: RateParameter,
    #[serde(default = "default_rate_values")]
    pub rate_values: Vec<f64>,
    #[serde(default = "default_betas")]
    pub betas: Vec<f64>,
    /// Random test fields for `wdc`, `gradient-estimate` and `potential-contraction`.
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_test_seed")]
    pub test_seed: u64,
    #[serde(default = "default_gradient_times")]
    pub gradient_times: Vec<f64>,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    /// `delta` of the shifted resolvent in `potential-contraction`.
    #[serde(default = "default_contraction_delta")]
    pub contraction_delta: f64,
    #[serde(default)]
    pub apriori_exponent: AprioriExponent,
    /// Curvature constant; measured by the gradient estimate when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_hat: Option<f64>,
    /// Commutator constant; measured by the WDC estimate when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_hat: Option<f64>,
    /// `self`, `zero` or `heat`.
    #[serde(default = "default_svi_test")]
    pub svi_test: String,
    /// Initial datum of the `heat` test element.
    #[serde(default = "default_perturbation")]
    pub svi_z0: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub dir: String,
    /// Write a binary snapshot at every `solver.snapshot_times` entry.
    #[serde(default)]
    pub snapshots: bool,
}

fn one() -> f64 {
    1.0
}
fn default_initial() -> String {
    "sine".into()
}
fn default_inequalities() -> Vec<String> {
    vec!["energy".into()]
}
fn default_perturbation() -> String {
    "sine".into()
}
fn default_perturbation_scale() -> f64 {
    0.02
}
fn default_rate_parameter() -> RateParameter {
    RateParameter::Lambda
}
fn default_rate_values() -> Vec<f64> {
    vec![1e-1, 5e-2, 2.5e-2, 1.25e-2]
}
fn default_betas() -> Vec<f64> {
    vec![1.0, 10.0, 100.0, 1000.0]
}
fn default_samples() -> usize {
    8
}
fn default_test_seed() -> u64 {
    1
}
fn default_gradient_times() -> Vec<f64> {
    vec![1e-2, 5e-2]
}
fn default_substeps() -> usize {
    64
}
fn default_contraction_delta() -> f64 {
    1e-2
}
fn default_svi_test() -> String {
    "self".into()
}
fn default_dir() -> String {
    "out".into()
}

impl Default for VerifySection {
    fn default() -> Self {
        toml::from_str("").expect("every verify key has a default")
    }
}

impl Default for OutputSection {
    fn default() -> Self {
        toml::from_str("").expect("every output key has a default")
    }
}

/// Every object built from a validated configuration.
pub struct Resolved {
    pub grid: PeriodicGrid,
    pub coeffs: CoefficientSet,
    pub potential: ConvexPotential,
    pub initial: ScalarField,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.resolve()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// The configuration with every default written out.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Builds grid, coefficients, potential and initial data, validating every key.
    pub fn resolve(&self) -> Result<Resolved, CliError> {
        let bad = |section: &str, e: svi_torus::Error| CliError::Config(format!("[{section}] {e}"));
        let grid = PeriodicGrid::new(self.grid.dim, self.grid.n).map_err(|e| bad("grid", e))?;
        let c = &self.coefficients;
        let coeffs = match (&c.preset, &c.a, &c.b) {
            (Some(p), None, None) => CoefficientSet::preset(&grid, p),
            (None, Some(a), Some(b)) => CoefficientSet::from_keys(&grid, a, b),
            _ => {
                return Err(CliError::Config(
                    "[coefficients] give either `preset` or both `a` and `b`".into(),
                ))
            }
        }
        .map_err(|e| bad("coefficients", e))?;
        let potential: ConvexPotential = self.potential.name.parse().map_err(|e| bad("potential", e))?;
        self.solver.validate().map_err(|e| bad("solver", e))?;
        let initial = svi_torus::simulator::initial_condition(&grid, &self.grid.initial, self.grid.initial_seed)
            .map_err(|e| bad("grid", e))?;
        if !self.grid.amplitude.is_finite() {
            return Err(CliError::Config("[grid] amplitude must be finite".into()));
        }
        let v = &self.verify;
        for name in &v.inequalities {
            crate::commands::Inequality::from_name(name)?;
        }
        if !["self", "zero", "heat"].contains(&v.svi_test.as_str()) {
            return Err(CliError::Config(format!(
                "[verify] svi_test must be self, zero or heat, got `{}`",
                v.svi_test
            )));
        }
        for key in [&v.perturbation, &v.svi_z0] {
            svi_torus::simulator::initial_condition(&grid, key, 0).map_err(|e| bad("verify", e))?;
        }
        Ok(Resolved {
            grid,
            coeffs,
            potential,
            initial: initial.scale(self.grid.amplitude),
        })
    }
}
