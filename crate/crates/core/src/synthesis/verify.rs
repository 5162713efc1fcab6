//! Certificate re-verification.
//!
//! The algebraic check rebuilds each design's stability matrix from the
//! solved `Y` and the recovered gain, pointwise in the parameter, using the
//! plain matrices in [`super::dense`]. For the chaos designs it forms
//! `E[Phi_n (A + B K) Phi_n^T]` directly from `K(xi)` on its own quadrature
//! grid rather than through `GB (I ⊗ V_K)`. The statistical check fits the
//! mean-square decay rate of sampled closed-loop trajectories.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::dense::Mat;
use super::{ControllerGain, Design, Method, SynthesisResult};
use crate::error::{Error, Result};
use crate::galerkin::{MatrixPolynomial, StochasticPlant};
use crate::sim::{self, MonteCarloOptions};

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyOptions {
    /// `None` skips the statistical check.
    pub monte_carlo: Option<MonteCarloOptions>,
    /// Required fitted rate as a fraction of `alpha`.
    pub rate_fraction: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            monte_carlo: Some(MonteCarloOptions::default()),
            rate_fraction: 0.9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgebraicCheck {
    /// Largest eigenvalue over all rebuilt stability matrices.
    pub max_eigenvalue: f64,
    /// Smallest eigenvalue over all Lyapunov matrices checked.
    pub min_lyapunov_eigenvalue: f64,
    pub margin: f64,
    /// Round-off allowance added to the margin test.
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatisticalCheck {
    pub fitted_rate: f64,
    pub required_rate: f64,
    pub samples: usize,
    pub diverged: usize,
    pub seed: u64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmsReport {
    pub method: Method,
    pub alpha: f64,
    pub algebraic: AlgebraicCheck,
    pub statistical: Option<StatisticalCheck>,
    /// Reason the statistical check could not be completed.
    pub statistical_error: Option<String>,
    pub passed: bool,
}

fn to_mat(m: &DMatrix<f64>) -> Mat {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// `sum_k C_k phi_k(xi)` evaluated on plain matrices.
fn eval_poly(coeffs: &[Mat], family_eval: &[f64]) -> Mat {
    let mut out = Mat::zeros(coeffs[0].rows, coeffs[0].cols);
    for (c, f) in coeffs.iter().zip(family_eval) {
        out.add_scaled(c, *f);
    }
    out
}

struct PolyData {
    coeffs: Vec<Mat>,
    poly: MatrixPolynomial,
}

impl PolyData {
    fn new(poly: &MatrixPolynomial) -> Self {
        PolyData {
            coeffs: poly.coeffs().iter().map(to_mat).collect(),
            poly: poly.clone(),
        }
    }

    fn at(&self, xi: f64) -> Mat {
        eval_poly(
            &self.coeffs,
            &self.poly.family().eval(xi, self.poly.degree()),
        )
    }
}

/// `Y A^T + A Y + alpha Y Gw` for the rebuilt closed loop.
fn stability_matrix(y_block: &Mat, drift: &Mat, weight: &Mat, alpha: f64) -> Mat {
    let ay = drift.mul(y_block);
    ay.transpose()
        .add(&ay)
        .add(&y_block.mul(weight).scale(alpha))
}

fn chaos_blocks(
    plant: &StochasticPlant,
    result: &SynthesisResult,
    second: bool,
) -> Result<(Vec<Mat>, Vec<Mat>)> {
    let ControllerGain::Expansion(gain) = &result.gain else {
        return Err(Error::Precondition(
            "chaos design without a gain expansion".into(),
        ));
    };
    if !gain.basis().same_expansion(plant.basis()) {
        return Err(Error::BasisMismatch(
            "gain and plant use different expansions".into(),
        ));
    }
    let basis = plant.basis();
    let family = basis.family();
    let p = basis.order();
    let terms = basis.len();
    let n = plant.n();
    let a = PolyData::new(plant.a());
    let b = PolyData::new(plant.b());
    let k_blocks: Vec<Mat> = gain.blocks().iter().map(to_mat).collect();
    let eye_n = Mat::identity(n);

    // a node set distinct from the projection's and still exact for the integrands
    let rule = family.gauss_rule(basis.quadrature().len() + 1);
    let dim = terms * n;
    let mut drift = Mat::zeros(dim, dim);
    let mut weight = Mat::zeros(dim, dim);
    for (&xi, &w) in rule.nodes.iter().zip(&rule.weights) {
        let phi = family.eval(xi, p);
        let pn = Mat::column(&phi).kron(&eye_n);
        let pn_t = pn.transpose();
        let k = eval_poly(&k_blocks, &phi);
        let closed = a.at(xi).add(&b.at(xi).mul(&k));
        let outer = pn.mul(&pn_t);
        let projected = pn.mul(&closed).mul(&pn_t);
        if second {
            drift.add_scaled(&outer.mul(&projected), w);
            weight.add_scaled(&outer.mul(&outer), w);
        } else {
            drift.add_scaled(&projected, w);
            weight.add_scaled(&outer, w);
        }
    }
    let y_block = Mat::identity(terms).kron(&to_mat(&result.y));
    Ok((
        vec![stability_matrix(&y_block, &drift, &weight, result.alpha)],
        vec![to_mat(&result.y)],
    ))
}

fn lti_blocks(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    result: &SynthesisResult,
) -> Result<(Vec<Mat>, Vec<Mat>)> {
    let ControllerGain::Constant(k) = &result.gain else {
        return Err(Error::Precondition(
            "LTI design without a constant gain".into(),
        ));
    };
    let closed = to_mat(a).add(&to_mat(b).mul(&to_mat(k)));
    let y = to_mat(&result.y);
    let eye = Mat::identity(y.rows);
    Ok((
        vec![stability_matrix(&y, &closed, &eye, result.alpha)],
        vec![y],
    ))
}

fn sampled_blocks(
    plant: &StochasticPlant,
    samples: &[f64],
    result: &SynthesisResult,
) -> Result<(Vec<Mat>, Vec<Mat>)> {
    let ControllerGain::AffineLpv(gain) = &result.gain else {
        return Err(Error::Precondition(
            "sampled design without an affine gain".into(),
        ));
    };
    let a = PolyData::new(plant.a());
    let b = PolyData::new(plant.b());
    let s = plant.basis().standardizer();
    let (y0, y1) = (to_mat(&gain.y0), to_mat(&gain.y1));
    let (w0, w1) = (to_mat(&gain.w0), to_mat(&gain.w1));
    let mut stability = Vec::new();
    for &rho in samples {
        let xi = s.to_standard(rho);
        let y = y0.add(&y1.scale(rho));
        let bw = b.at(xi).mul(&w0.add(&w1.scale(rho)));
        let ay = a.at(xi).mul(&y);
        stability.push(
            ay.transpose()
                .add(&ay)
                .add(&bw.transpose())
                .add(&bw)
                .add(&y.scale(result.alpha)),
        );
    }
    let (lo, hi) = gain.domain;
    let lyapunov = samples
        .iter()
        .chain([lo, hi].iter())
        .map(|&rho| y0.add(&y1.scale(rho)))
        .collect();
    Ok((stability, lyapunov))
}

pub(crate) fn algebraic_check(
    plant: &StochasticPlant,
    result: &SynthesisResult,
) -> Result<AlgebraicCheck> {
    let (stability, lyapunov) = match &result.design {
        Design::Theorem1 { .. } => chaos_blocks(plant, result, false)?,
        Design::Theorem2 { .. } => chaos_blocks(plant, result, true)?,
        Design::Lti { a, b } => lti_blocks(a, b, result)?,
        Design::SampledLpv { samples } => sampled_blocks(plant, samples, result)?,
    };
    let scale = stability
        .iter()
        .chain(&lyapunov)
        .map(Mat::max_abs)
        .fold(1.0, f64::max);
    let tolerance = 1e-3 * result.margin + 1e-10 * scale;
    let max_eigenvalue = stability
        .iter()
        .map(|m| *m.sym_eigenvalues().last().expect("nonempty"))
        .fold(f64::NEG_INFINITY, f64::max);
    let min_lyapunov_eigenvalue = lyapunov
        .iter()
        .map(|m| m.sym_eigenvalues()[0])
        .fold(f64::INFINITY, f64::min);
    let passed = max_eigenvalue <= -result.margin + tolerance
        && min_lyapunov_eigenvalue >= result.margin - tolerance;
    Ok(AlgebraicCheck {
        max_eigenvalue,
        min_lyapunov_eigenvalue,
        margin: result.margin,
        tolerance,
        passed,
    })
}

/// Re-checks a synthesis result against `plant`: algebraically through an
/// independent assembly, and statistically by Monte Carlo when configured.
pub fn verify_ems(
    plant: &StochasticPlant,
    result: &SynthesisResult,
    opts: &VerifyOptions,
) -> Result<EmsReport> {
    let algebraic = algebraic_check(plant, result)?;
    let mut statistical = None;
    let mut statistical_error = None;
    if let Some(mc) = &opts.monte_carlo {
        match sim::mc_ms_decay(plant, &result.gain, mc) {
            Ok(est) => {
                let required_rate = opts.rate_fraction * result.alpha;
                statistical = Some(StatisticalCheck {
                    fitted_rate: est.fitted_decay_rate,
                    required_rate,
                    samples: est.sample_count,
                    diverged: est.diverged,
                    seed: est.seed,
                    passed: est.fitted_decay_rate >= required_rate,
                });
            }
            Err(e @ (Error::TooManyDivergent { .. } | Error::NonFinite { .. })) => {
                statistical_error = Some(e.to_string());
            }
            Err(e) => return Err(e),
        }
    }
    let passed = algebraic.passed
        && statistical_error.is_none()
        && statistical.as_ref().is_none_or(|s| s.passed);
    Ok(EmsReport {
        method: result.method(),
        alpha: result.alpha,
        algebraic,
        statistical,
        statistical_error,
        passed,
    })
}
