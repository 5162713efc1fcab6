//! State-feedback synthesis: the two chaos-projected EMS conditions, plus the
//! LTI and sampled-LPV baselines.
//!
//! All designs solve for `Y > 0` and `W` with the gain recovered as
//! `K = W Y^{-1}`; the chaos designs use the block-replicated
//! `I_{N+1} ⊗ Y` and `I_{N+1} ⊗ W` against the projection matrices.

mod dense;
mod verify;

use std::time::Instant;

use nalgebra::{Cholesky, DMatrix};
use serde::{Deserialize, Serialize};

use crate::basis::PolyBasis;
use crate::error::{Error, Result};
use crate::galerkin::{self, PhysicalPlant, ProjectionMatrices, StochasticPlant};
use crate::lmi::{
    self, LmiConstraint, LmiProblem, LmiSolution, ProblemSize, Residual, Sense, SolveStatus,
    SolverOptions,
};

pub use verify::{verify_ems, AlgebraicCheck, EmsReport, StatisticalCheck, VerifyOptions};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Parameter-independent Lyapunov matrix.
    Theorem1,
    /// Parameter-dependent Lyapunov matrix `Phi_n^T (I ⊗ P0) Phi_n`.
    Theorem2,
    Lti,
    SampledLpv,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::Theorem1 => "theorem1",
            Method::Theorem2 => "theorem2",
            Method::Lti => "lti",
            Method::SampledLpv => "sampled_lpv",
        }
    }
}

/// Gain evaluated at one scheduling value.
#[derive(Clone, Debug, PartialEq)]
pub struct ScheduledGain {
    pub k: DMatrix<f64>,
    /// The requested `rho` was outside the design domain and was saturated.
    pub clamped: bool,
}

fn clamp_to(domain: Option<(f64, f64)>, rho: f64) -> (f64, bool) {
    match domain {
        Some((lo, _)) if rho < lo => (lo, true),
        Some((_, hi)) if rho > hi => (hi, true),
        _ => (rho, false),
    }
}

/// `K(xi) = sum_i K_i phi_i(xi)` stored as the vertical stack `V_K`.
#[derive(Clone, Debug, PartialEq)]
pub struct GainExpansion {
    vk: DMatrix<f64>,
    basis: PolyBasis,
}

impl GainExpansion {
    pub fn new(vk: DMatrix<f64>, basis: PolyBasis) -> Result<Self> {
        if vk.nrows() == 0 || !vk.nrows().is_multiple_of(basis.len()) {
            return Err(Error::DimensionMismatch(format!(
                "gain stack has {} rows, not a multiple of {}",
                vk.nrows(),
                basis.len()
            )));
        }
        Ok(GainExpansion { vk, basis })
    }

    pub fn from_blocks(blocks: &[DMatrix<f64>], basis: PolyBasis) -> Result<Self> {
        if blocks.len() != basis.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} gain blocks for a basis of {} terms",
                blocks.len(),
                basis.len()
            )));
        }
        let (m, n) = blocks[0].shape();
        if blocks.iter().any(|b| b.shape() != (m, n)) {
            return Err(Error::DimensionMismatch(
                "gain blocks differ in shape".into(),
            ));
        }
        let mut vk = DMatrix::zeros(m * blocks.len(), n);
        for (i, b) in blocks.iter().enumerate() {
            vk.view_mut((i * m, 0), (m, n)).copy_from(b);
        }
        Self::new(vk, basis)
    }

    pub fn vk(&self) -> &DMatrix<f64> {
        &self.vk
    }

    pub fn basis(&self) -> &PolyBasis {
        &self.basis
    }

    pub fn m(&self) -> usize {
        self.vk.nrows() / self.basis.len()
    }

    pub fn n(&self) -> usize {
        self.vk.ncols()
    }

    /// `K_0, ..., K_N`.
    pub fn blocks(&self) -> Vec<DMatrix<f64>> {
        let m = self.m();
        (0..self.basis.len())
            .map(|i| self.vk.rows(i * m, m).into_owned())
            .collect()
    }

    pub fn evaluate_standard(&self, xi: f64) -> DMatrix<f64> {
        let phi = self.basis.eval(xi);
        let m = self.m();
        let mut k = DMatrix::zeros(m, self.n());
        for (i, f) in phi.iter().enumerate() {
            k += self.vk.rows(i * m, m) * *f;
        }
        k
    }

    /// Gain at a physical scheduling value, saturated to the design domain.
    pub fn evaluate(&self, rho: f64) -> ScheduledGain {
        let (rho, clamped) = clamp_to(self.basis.distribution().bounds(), rho);
        ScheduledGain {
            k: self.evaluate_standard(self.basis.standardizer().to_standard(rho)),
            clamped,
        }
    }

    /// Same gain written on a higher-order basis of the same distribution.
    pub fn lift(&self, basis: &PolyBasis) -> Result<GainExpansion> {
        if basis.distribution() != self.basis.distribution() || basis.len() < self.basis.len() {
            return Err(Error::BasisMismatch(
                "can only lift onto a larger basis of the same distribution".into(),
            ));
        }
        let mut vk = DMatrix::zeros(self.m() * basis.len(), self.n());
        vk.rows_mut(0, self.vk.nrows()).copy_from(&self.vk);
        GainExpansion::new(vk, basis.clone())
    }
}

/// `K(rho) = (W0 + rho W1)(Y0 + rho Y1)^{-1}` from the sampled-LPV design.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineLpvGain {
    pub y0: DMatrix<f64>,
    pub y1: DMatrix<f64>,
    pub w0: DMatrix<f64>,
    pub w1: DMatrix<f64>,
    pub domain: (f64, f64),
}

impl AffineLpvGain {
    pub fn y_at(&self, rho: f64) -> DMatrix<f64> {
        &self.y0 + &self.y1 * rho
    }

    pub fn w_at(&self, rho: f64) -> DMatrix<f64> {
        &self.w0 + &self.w1 * rho
    }

    pub fn evaluate(&self, rho: f64) -> Result<ScheduledGain> {
        let (rho, clamped) = clamp_to(Some(self.domain), rho);
        let chol = Cholesky::new(self.y_at(rho)).ok_or(Error::SingularLyapunov(rho))?;
        let k = chol.solve(&self.w_at(rho).transpose()).transpose();
        Ok(ScheduledGain { k, clamped })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ControllerGain {
    Constant(DMatrix<f64>),
    Expansion(GainExpansion),
    AffineLpv(AffineLpvGain),
}

impl ControllerGain {
    pub fn evaluate(&self, rho: f64) -> Result<ScheduledGain> {
        match self {
            ControllerGain::Constant(k) => Ok(ScheduledGain {
                k: k.clone(),
                clamped: false,
            }),
            ControllerGain::Expansion(g) => Ok(g.evaluate(rho)),
            ControllerGain::AffineLpv(g) => g.evaluate(rho),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            ControllerGain::Constant(k) => k.shape(),
            ControllerGain::Expansion(g) => (g.m(), g.n()),
            ControllerGain::AffineLpv(g) => g.w0.shape(),
        }
    }
}

/// What the certificate was computed against.
#[derive(Clone, Debug, PartialEq)]
pub enum Design {
    Theorem1 { order: usize },
    Theorem2 { order: usize },
    Lti { a: DMatrix<f64>, b: DMatrix<f64> },
    SampledLpv { samples: Vec<f64> },
}

impl Design {
    pub fn method(&self) -> Method {
        match self {
            Design::Theorem1 { .. } => Method::Theorem1,
            Design::Theorem2 { .. } => Method::Theorem2,
            Design::Lti { .. } => Method::Lti,
            Design::SampledLpv { .. } => Method::SampledLpv,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthesisResult {
    pub design: Design,
    pub alpha: f64,
    pub gain: ControllerGain,
    /// `Y` (for the sampled-LPV design, `Y` at the domain midpoint).
    pub y: DMatrix<f64>,
    /// `P = Y^{-1}`.
    pub p: DMatrix<f64>,
    /// `W` (for the sampled-LPV design, `W` at the domain midpoint).
    pub w: DMatrix<f64>,
    pub certificates: Vec<Residual>,
    pub margin: f64,
    pub problem_size: ProblemSize,
    pub solve_seconds: f64,
}

impl SynthesisResult {
    pub fn method(&self) -> Method {
        self.design.method()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SynthesisOptions {
    pub solver: SolverOptions,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Precondition(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    Ok(())
}

/// `e_i ⊗ I_n`.
fn selector(terms: usize, i: usize, n: usize) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(terms * n, n);
    s.view_mut((i * n, 0), (n, n)).fill_with_identity();
    s
}

fn solve_checked(problem: &LmiProblem, opts: &SynthesisOptions) -> Result<(LmiSolution, f64)> {
    let start = Instant::now();
    let sol = lmi::solve_feasibility(problem, &opts.solver)?;
    let seconds = start.elapsed().as_secs_f64();
    if sol.status != SolveStatus::Feasible {
        let worst = sol
            .residuals
            .iter()
            .map(|r| r.satisfied_by(sol.margin))
            .fold(f64::INFINITY, f64::min);
        return Err(Error::NoCertificate {
            status: sol.status,
            worst,
            residuals: sol.residuals.iter().map(|r| r.extreme_eigenvalue).collect(),
        });
    }
    Ok((sol, seconds))
}

/// `(Y^{-1}, W Y^{-1})`.
fn recover(y: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let chol = Cholesky::new(y.clone()).ok_or(Error::SingularLyapunov(f64::NAN))?;
    let vk = chol.solve(&w.transpose()).transpose();
    Ok((chol.inverse(), vk))
}

/// The chaos LMI `Y~ A^T + A Y~ + W~^T B^T + B W~ + alpha Y~ Gw <= 0`, with
/// `Y~ = I ⊗ Y`, `W~ = I ⊗ W`, plus `Y > 0`.
pub fn chaos_problem(
    proj: &ProjectionMatrices,
    drift: &DMatrix<f64>,
    input: &DMatrix<f64>,
    weight: &DMatrix<f64>,
    alpha: f64,
) -> LmiProblem {
    let (n, m, terms) = (proj.n, proj.m, proj.terms());
    let mut problem = LmiProblem::new();
    let y = problem.symmetric("Y", n);
    let w = problem.rectangular("W", m * terms, n);
    let mut stab = LmiConstraint::new("ems", terms * n, Sense::NegativeDefinite);
    for i in 0..terms {
        let e = selector(terms, i, n);
        let f = selector(terms, i, m * terms);
        stab = stab
            .paired(drift * &e, y, e.transpose())
            .paired(input * f, w, e.transpose())
            .self_symmetric(&e * alpha, y, e.transpose() * weight);
    }
    problem.push(stab);
    problem.push(
        LmiConstraint::new("lyapunov", n, Sense::PositiveDefinite).self_symmetric(
            DMatrix::identity(n, n),
            y,
            DMatrix::identity(n, n),
        ),
    );
    problem
}

fn synthesize_chaos(
    plant: &StochasticPlant,
    alpha: f64,
    opts: &SynthesisOptions,
    second: bool,
) -> Result<SynthesisResult> {
    check_alpha(alpha)?;
    let start = Instant::now();
    let proj = galerkin::project(plant)?;
    let problem = if second {
        chaos_problem(&proj, &proj.m1, &proj.m2, &proj.m0, alpha)
    } else {
        chaos_problem(&proj, &proj.ga, &proj.gb, &proj.g, alpha)
    };
    let (sol, _) = solve_checked(&problem, opts)?;
    let y = sol.assignments[0].clone();
    let w = sol.assignments[1].clone();
    let (p, vk) = recover(&y, &w)?;
    let order = plant.basis().order();
    Ok(SynthesisResult {
        design: if second {
            Design::Theorem2 { order }
        } else {
            Design::Theorem1 { order }
        },
        alpha,
        gain: ControllerGain::Expansion(GainExpansion::new(vk, plant.basis().clone())?),
        y,
        p,
        w,
        certificates: sol.residuals,
        margin: sol.margin,
        problem_size: problem.size(),
        solve_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Chaos-projected EMS design with a parameter-independent Lyapunov matrix.
pub fn synthesize_theorem1(
    plant: &StochasticPlant,
    alpha: f64,
    opts: &SynthesisOptions,
) -> Result<SynthesisResult> {
    synthesize_chaos(plant, alpha, opts, false)
}

/// Chaos-projected EMS design with the parameter-dependent Lyapunov matrix
/// `P(xi) = Phi_n(xi)^T (I ⊗ P0) Phi_n(xi)`, using `M0`, `M1`, `M2`.
pub fn synthesize_theorem2(
    plant: &StochasticPlant,
    alpha: f64,
    opts: &SynthesisOptions,
) -> Result<SynthesisResult> {
    synthesize_chaos(plant, alpha, opts, true)
}

/// Single-point design `Y A^T + A Y + W^T B^T + B W + alpha Y <= 0`.
pub fn synthesize_lti(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    alpha: f64,
    opts: &SynthesisOptions,
) -> Result<SynthesisResult> {
    check_alpha(alpha)?;
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "A is {:?}, B is {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let start = Instant::now();
    let m = b.ncols();
    let eye = DMatrix::<f64>::identity(n, n);
    let mut problem = LmiProblem::new();
    let y = problem.symmetric("Y", n);
    let w = problem.rectangular("W", m, n);
    problem.push(
        LmiConstraint::new("stability", n, Sense::NegativeDefinite)
            .paired(a.clone(), y, eye.clone())
            .paired(b.clone(), w, eye.clone())
            .self_symmetric(&eye * alpha, y, eye.clone()),
    );
    problem.push(
        LmiConstraint::new("lyapunov", n, Sense::PositiveDefinite).self_symmetric(
            eye.clone(),
            y,
            eye,
        ),
    );
    let (sol, _) = solve_checked(&problem, opts)?;
    let y = sol.assignments[0].clone();
    let w = sol.assignments[1].clone();
    let (p, k) = recover(&y, &w)?;
    Ok(SynthesisResult {
        design: Design::Lti {
            a: a.clone(),
            b: b.clone(),
        },
        alpha,
        gain: ControllerGain::Constant(k),
        y,
        p,
        w,
        certificates: sol.residuals,
        margin: sol.margin,
        problem_size: problem.size(),
        solve_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Gridded LPV design with `Y(rho) = Y0 + rho Y1`, `W(rho) = W0 + rho W1`,
/// stability imposed at each sample and `Y(rho) > 0` at every sample and at
/// both ends of `domain`.
pub fn synthesize_sampled_lpv(
    plant: &PhysicalPlant,
    domain: (f64, f64),
    samples: &[f64],
    alpha: f64,
    opts: &SynthesisOptions,
) -> Result<SynthesisResult> {
    check_alpha(alpha)?;
    plant.validate()?;
    let (lo, hi) = domain;
    if !(lo < hi) {
        return Err(Error::Precondition(format!("empty domain [{lo}, {hi}]")));
    }
    if samples.is_empty() {
        return Err(Error::Precondition(
            "sampled LPV design needs at least one sample".into(),
        ));
    }
    if let Some(bad) = samples.iter().find(|&&r| !(lo..=hi).contains(&r)) {
        return Err(Error::Precondition(format!(
            "sample {bad} outside the design domain [{lo}, {hi}]"
        )));
    }
    let start = Instant::now();
    let (n, m) = (plant.n(), plant.m());
    let eye = DMatrix::<f64>::identity(n, n);
    let mut problem = LmiProblem::new();
    let y0 = problem.symmetric("Y0", n);
    let y1 = problem.symmetric("Y1", n);
    let w0 = problem.rectangular("W0", m, n);
    let w1 = problem.rectangular("W1", m, n);
    for (k, &rho) in samples.iter().enumerate() {
        let a = plant.a_at(rho);
        let b = plant.b_at(rho);
        problem.push(
            LmiConstraint::new(format!("stability[{k}]"), n, Sense::NegativeDefinite)
                .paired(a.clone(), y0, eye.clone())
                .paired(a * rho, y1, eye.clone())
                .paired(b.clone(), w0, eye.clone())
                .paired(b * rho, w1, eye.clone())
                .self_symmetric(&eye * alpha, y0, eye.clone())
                .self_symmetric(&eye * (alpha * rho), y1, eye.clone()),
        );
    }
    let mut positivity_points = samples.to_vec();
    positivity_points.extend([lo, hi]);
    for (k, &rho) in positivity_points.iter().enumerate() {
        problem.push(
            LmiConstraint::new(format!("lyapunov[{k}]"), n, Sense::PositiveDefinite)
                .self_symmetric(eye.clone(), y0, eye.clone())
                .self_symmetric(&eye * rho, y1, eye.clone()),
        );
    }
    let (sol, _) = solve_checked(&problem, opts)?;
    let gain = AffineLpvGain {
        y0: sol.get(y0).clone(),
        y1: sol.get(y1).clone(),
        w0: sol.get(w0).clone(),
        w1: sol.get(w1).clone(),
        domain,
    };
    let mid = 0.5 * (lo + hi);
    let (y, w) = (gain.y_at(mid), gain.w_at(mid));
    let (p, _) = recover(&y, &w).map_err(|_| Error::SingularLyapunov(mid))?;
    Ok(SynthesisResult {
        design: Design::SampledLpv {
            samples: samples.to_vec(),
        },
        alpha,
        y,
        p,
        w,
        gain: ControllerGain::AffineLpv(gain),
        certificates: sol.residuals,
        margin: sol.margin,
        problem_size: problem.size(),
        solve_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Largest real part of the eigenvalues.
pub fn spectral_abscissa(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|c| c.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

#[cfg(test)]
mod tests;
