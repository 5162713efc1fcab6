//! Problem definition files (TOML).
//!
//! ```toml
//! schema_version = 1
//! alpha = 1.0
//! pc_order = 1
//! method = "theorem2"        # theorem1 | theorem2 | lti | sampled_lpv
//! seed = 0
//!
//! [plant]                    # A(rho) = sum_k a[k] rho^k, likewise B
//! n = 2
//! m = 1
//! a = [[[0.0, 1.0], [-1.0, 0.0]], [[0.0, 0.0], [0.0, 1.0]]]
//! b = [[[0.0], [1.0]]]
//!
//! [distribution]
//! kind = "uniform"
//! lo = -24.0
//! hi = 1.0
//! ```
//!
//! Optional tables: `[method_options]` (`samples`, `sample_points`,
//! `lti_rho`), `[simulation]` (`model`, `x0`, `horizon`, `step`,
//! `mc_samples`, `rho`), `[solver]` and `[output]`.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::{Distribution, PolyBasis};
use crate::error::{Error, Result};
use crate::galerkin::{PhysicalPlant, StochasticPlant};
use crate::lmi::SolverOptions;
use crate::sim::MonteCarloOptions;
use crate::synthesis::Method;

pub const SCHEMA_VERSION: u32 = 1;

/// Row-major nested rows.
pub type Matrix = Vec<Vec<f64>>;

pub fn to_dmatrix(m: &Matrix) -> Result<DMatrix<f64>> {
    let rows = m.len();
    let cols = m.first().map_or(0, Vec::len);
    if m.iter().any(|r| r.len() != cols) {
        return Err(Error::Config("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(rows, cols, |i, j| m[i][j]))
}

pub fn from_dmatrix(m: &DMatrix<f64>) -> Matrix {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    pub n: usize,
    pub m: usize,
    pub a: Vec<Matrix>,
    pub b: Vec<Matrix>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodOptions {
    /// Number of seeded parameter draws for `sampled_lpv`.
    pub samples: Option<usize>,
    /// Explicit sample points; take precedence over `samples`.
    pub sample_points: Option<Vec<f64>>,
    /// Frozen parameter for `lti`; defaults to the distribution center.
    pub lti_rho: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimModel {
    /// Nonlinear oscillator scheduled on `rho = 1 - x1^2`.
    #[default]
    VanDerPol,
    /// Linear plant frozen at `simulation.rho`.
    Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub model: SimModel,
    pub x0: Option<Vec<f64>>,
    pub horizon: f64,
    pub step: f64,
    pub mc_samples: usize,
    pub rho: Option<f64>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            model: SimModel::VanDerPol,
            x0: None,
            horizon: 10.0,
            step: 1e-3,
            mc_samples: 2000,
            rho: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub margin_rel: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub radius: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let d = SolverOptions::default();
        SolverConfig {
            margin_rel: d.margin_rel,
            tol: d.tol,
            max_iter: d.max_iter,
            radius: d.radius,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub report: Option<PathBuf>,
    pub trajectory: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub schema_version: u32,
    pub plant: PlantConfig,
    pub distribution: Distribution,
    #[serde(default = "default_order")]
    pub pc_order: usize,
    pub alpha: f64,
    pub method: Method,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub method_options: MethodOptions,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_order() -> usize {
    1
}

fn check_shapes(name: &str, coeffs: &[Matrix], rows: usize, cols: usize) -> Result<()> {
    if coeffs.is_empty() {
        return Err(Error::Config(format!(
            "plant.{name} needs at least one coefficient"
        )));
    }
    for (k, c) in coeffs.iter().enumerate() {
        if c.len() != rows || c.iter().any(|r| r.len() != cols) {
            return Err(Error::Config(format!(
                "plant.{name}[{k}] must be {rows}x{cols}"
            )));
        }
        if c.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Config(format!(
                "plant.{name}[{k}] has non-finite entries"
            )));
        }
    }
    Ok(())
}

impl ProblemConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let config: ProblemConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let (n, m) = (self.plant.n, self.plant.m);
        if n == 0 || m == 0 {
            return Err(Error::Config("plant.n and plant.m must be positive".into()));
        }
        check_shapes("a", &self.plant.a, n, n)?;
        check_shapes("b", &self.plant.b, n, m)?;
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        self.distribution
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if let Some(x0) = &self.simulation.x0 {
            if x0.len() != n {
                return Err(Error::Config(format!(
                    "simulation.x0 must have {n} entries"
                )));
            }
        }
        let sim = &self.simulation;
        if !(sim.step > 0.0 && sim.horizon > sim.step) {
            return Err(Error::Config("simulation needs 0 < step < horizon".into()));
        }
        if sim.mc_samples < 100 {
            return Err(Error::Config(
                "simulation.mc_samples must be at least 100".into(),
            ));
        }
        if sim.model == SimModel::VanDerPol && (n, m) != (2, 1) {
            return Err(Error::Config(
                "the van_der_pol model needs n = 2, m = 1".into(),
            ));
        }
        if self.method == Method::SampledLpv {
            if self.distribution.bounds().is_none() {
                return Err(Error::Config(
                    "sampled_lpv needs a bounded distribution".into(),
                ));
            }
            if self.method_options.sample_points.is_none() && self.sample_count() == 0 {
                return Err(Error::Config(
                    "sampled_lpv needs at least one sample".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn sample_count(&self) -> usize {
        self.method_options.samples.unwrap_or(10)
    }

    pub fn physical_plant(&self) -> Result<PhysicalPlant> {
        let a = self.plant.a.iter().map(to_dmatrix).collect::<Result<_>>()?;
        let b = self.plant.b.iter().map(to_dmatrix).collect::<Result<_>>()?;
        PhysicalPlant::new(a, b)
    }

    pub fn basis(&self) -> Result<PolyBasis> {
        PolyBasis::new(self.distribution, self.pc_order)
    }

    pub fn stochastic_plant(&self) -> Result<StochasticPlant> {
        self.physical_plant()?.to_stochastic(&self.basis()?)
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            margin_rel: self.solver.margin_rel,
            tol: self.solver.tol,
            max_iter: self.solver.max_iter,
            radius: self.solver.radius,
        }
    }

    pub fn x0(&self) -> Vec<f64> {
        self.simulation
            .x0
            .clone()
            .unwrap_or_else(|| vec![1.0; self.plant.n])
    }

    pub fn monte_carlo(&self) -> MonteCarloOptions {
        MonteCarloOptions {
            x0: self.x0(),
            horizon: self.simulation.horizon,
            step: self.simulation.step,
            samples: self.simulation.mc_samples,
            seed: self.seed,
        }
    }

    /// Parameter value at the center of the distribution.
    pub fn center(&self) -> f64 {
        match self.distribution {
            Distribution::Uniform { lo, hi } => 0.5 * (lo + hi),
            Distribution::Gaussian { mean, .. } => mean,
            _ => 0.0,
        }
    }
}
