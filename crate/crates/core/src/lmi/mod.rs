//! Block linear matrix inequalities over symmetric and rectangular decision
//! variables, scalarized into a standard conic form and solved for
//! feasibility with a strictness margin.
//!
//! A constraint is `sum_i L_i X_i R_i (+ transposes) + C` required to be
//! `<= -eps I` or `>= eps I`. Scalarization uses an orthonormal coordinate
//! system for each variable: symmetric `n x n` matrices get `n(n+1)/2`
//! coordinates with off-diagonal elements `(e_i e_j^T + e_j e_i^T)/sqrt(2)`.

mod backend;
mod barrier;
mod ellipsoid;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use backend::{CommandBackend, ConicSolution, SdpBackend, SolveRequest};
pub use barrier::BarrierSolver;
pub use ellipsoid::EllipsoidSolver;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VarId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarKind {
    Symmetric(usize),
    Rectangular(usize, usize),
}

impl VarKind {
    /// Number of scalar coordinates.
    pub fn scalar_count(&self) -> usize {
        match *self {
            VarKind::Symmetric(n) => n * (n + 1) / 2,
            VarKind::Rectangular(r, c) => r * c,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        match *self {
            VarKind::Symmetric(n) => (n, n),
            VarKind::Rectangular(r, c) => (r, c),
        }
    }

    /// Coordinate matrix `E_k`; the map `x -> sum x_k E_k` is an isometry.
    pub fn coordinate_matrix(&self, k: usize) -> DMatrix<f64> {
        let (r, c) = self.shape();
        let mut e = DMatrix::zeros(r, c);
        match *self {
            VarKind::Symmetric(n) => {
                let (i, j) = sym_index(n, k);
                if i == j {
                    e[(i, i)] = 1.0;
                } else {
                    let v = std::f64::consts::FRAC_1_SQRT_2;
                    e[(i, j)] = v;
                    e[(j, i)] = v;
                }
            }
            VarKind::Rectangular(_, cols) => {
                e[(k / cols, k % cols)] = 1.0;
            }
        }
        e
    }

    pub fn assemble(&self, coords: &[f64]) -> DMatrix<f64> {
        let (r, c) = self.shape();
        let mut out = DMatrix::zeros(r, c);
        for (k, &x) in coords.iter().enumerate() {
            out += self.coordinate_matrix(k) * x;
        }
        out
    }
}

/// Upper-triangular coordinate `k` of an `n x n` symmetric matrix, row major.
fn sym_index(n: usize, mut k: usize) -> (usize, usize) {
    for i in 0..n {
        let row = n - i;
        if k < row {
            return (i, i + k);
        }
        k -= row;
    }
    panic!("symmetric coordinate out of range");
}

#[derive(Clone, Debug, PartialEq)]
pub struct LmiVariable {
    pub id: VarId,
    pub name: String,
    pub kind: VarKind,
}

/// How a term `L X R` enters the symmetric constraint expression.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TermForm {
    /// Adds `L X R + (L X R)^T`.
    Paired,
    /// Adds `L X R`, which must already be symmetric for every symmetric `X`;
    /// the assembler checks this and symmetrizes.
    SelfSymmetric,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LmiTerm {
    pub left: DMatrix<f64>,
    pub var: VarId,
    pub right: DMatrix<f64>,
    pub form: TermForm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sense {
    /// `F(x) <= -eps I`
    NegativeDefinite,
    /// `F(x) >= eps I`
    PositiveDefinite,
}

impl Sense {
    fn sign(&self) -> f64 {
        match self {
            Sense::NegativeDefinite => -1.0,
            Sense::PositiveDefinite => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LmiConstraint {
    pub name: String,
    pub dim: usize,
    pub terms: Vec<LmiTerm>,
    pub constant: DMatrix<f64>,
    pub sense: Sense,
}

impl LmiConstraint {
    pub fn new(name: impl Into<String>, dim: usize, sense: Sense) -> Self {
        LmiConstraint {
            name: name.into(),
            dim,
            terms: Vec::new(),
            constant: DMatrix::zeros(dim, dim),
            sense,
        }
    }

    pub fn paired(mut self, left: DMatrix<f64>, var: VarId, right: DMatrix<f64>) -> Self {
        self.terms.push(LmiTerm {
            left,
            var,
            right,
            form: TermForm::Paired,
        });
        self
    }

    pub fn self_symmetric(mut self, left: DMatrix<f64>, var: VarId, right: DMatrix<f64>) -> Self {
        self.terms.push(LmiTerm {
            left,
            var,
            right,
            form: TermForm::SelfSymmetric,
        });
        self
    }

    pub fn with_constant(mut self, constant: DMatrix<f64>) -> Self {
        self.constant = constant;
        self
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LmiProblem {
    variables: Vec<LmiVariable>,
    constraints: Vec<LmiConstraint>,
}

/// Scalar decision variables and total constraint rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemSize {
    pub scalar_variables: usize,
    pub constraint_rows: usize,
}

impl ProblemSize {
    pub fn total(&self) -> usize {
        self.scalar_variables + self.constraint_rows
    }
}

impl LmiProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_variable(&mut self, name: impl Into<String>, kind: VarKind) -> VarId {
        let id = VarId(self.variables.len());
        self.variables.push(LmiVariable {
            id,
            name: name.into(),
            kind,
        });
        id
    }

    pub fn symmetric(&mut self, name: impl Into<String>, n: usize) -> VarId {
        self.add_variable(name, VarKind::Symmetric(n))
    }

    pub fn rectangular(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> VarId {
        self.add_variable(name, VarKind::Rectangular(rows, cols))
    }

    pub fn push(&mut self, constraint: LmiConstraint) {
        self.constraints.push(constraint);
    }

    pub fn variables(&self) -> &[LmiVariable] {
        &self.variables
    }

    pub fn constraints(&self) -> &[LmiConstraint] {
        &self.constraints
    }

    pub fn size(&self) -> ProblemSize {
        ProblemSize {
            scalar_variables: self.variables.iter().map(|v| v.kind.scalar_count()).sum(),
            constraint_rows: self.constraints.iter().map(|c| c.dim).sum(),
        }
    }

    fn offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.variables.len());
        let mut acc = 0;
        for v in &self.variables {
            offsets.push(acc);
            acc += v.kind.scalar_count();
        }
        offsets
    }

    /// Scalarize into `F_j(x) = F_j0 + sum_k x_k F_jk` blocks.
    pub fn to_conic(&self, margin_rel: f64) -> Result<ConicProblem> {
        if self.constraints.is_empty() {
            return Err(Error::BadProblem("no constraints".into()));
        }
        if !(margin_rel > 0.0) {
            return Err(Error::BadProblem("margin must be positive".into()));
        }
        let offsets = self.offsets();
        let num_vars = self.size().scalar_variables;
        let mut blocks = Vec::with_capacity(self.constraints.len());
        for c in &self.constraints {
            blocks.push(self.scalarize(c, &offsets)?);
        }
        let scale = blocks
            .iter()
            .flat_map(|b| {
                b.constant
                    .iter()
                    .chain(b.coeffs.iter().flat_map(|vc| vc.matrix.iter()))
            })
            .fold(0.0f64, |acc, v| acc.max(v.abs()))
            .max(1.0);
        Ok(ConicProblem {
            num_vars,
            margin: margin_rel * scale,
            blocks,
        })
    }

    fn scalarize(&self, c: &LmiConstraint, offsets: &[usize]) -> Result<ConicBlock> {
        let dim = c.dim;
        if dim == 0 || c.constant.shape() != (dim, dim) {
            return Err(Error::BadProblem(format!(
                "constraint {}: bad constant shape",
                c.name
            )));
        }
        let asym = (&c.constant - c.constant.transpose()).amax();
        if asym > 1e-12 * c.constant.amax().max(1.0) {
            return Err(Error::BadProblem(format!(
                "constraint {}: constant not symmetric",
                c.name
            )));
        }
        let mut per_var: Vec<Option<(DMatrix<f64>, DMatrix<f64>)>> =
            vec![None; self.variables.len()];
        let mut coeffs = Vec::new();
        for t in &c.terms {
            let var = self.variables.get(t.var.0).ok_or_else(|| {
                Error::BadProblem(format!("constraint {}: unknown variable", c.name))
            })?;
            let (r, cols) = var.kind.shape();
            if t.left.shape() != (dim, r) || t.right.shape() != (cols, dim) {
                return Err(Error::BadProblem(format!(
                    "constraint {}: term on {} has shapes {:?} * {:?} * {:?}, block is {dim}",
                    c.name,
                    var.name,
                    t.left.shape(),
                    (r, cols),
                    t.right.shape()
                )));
            }
            per_var[t.var.0]
                .get_or_insert_with(|| (DMatrix::zeros(dim, dim), DMatrix::zeros(dim, dim)));
        }
        for (vi, var) in self.variables.iter().enumerate() {
            if per_var[vi].is_none() {
                continue;
            }
            for k in 0..var.kind.scalar_count() {
                let e = var.kind.coordinate_matrix(k);
                let mut paired = DMatrix::<f64>::zeros(dim, dim);
                let mut selfsym = DMatrix::<f64>::zeros(dim, dim);
                for t in c.terms.iter().filter(|t| t.var.0 == vi) {
                    let prod = &t.left * &e * &t.right;
                    match t.form {
                        TermForm::Paired => {
                            paired += &prod + prod.transpose();
                        }
                        TermForm::SelfSymmetric => selfsym += prod,
                    }
                }
                let asym = (&selfsym - selfsym.transpose()).amax();
                if asym > 1e-12 * selfsym.amax().max(1.0) {
                    return Err(Error::BadProblem(format!(
                        "constraint {}: self-symmetric term on {} has asymmetry {asym:.2e}",
                        c.name, var.name
                    )));
                }
                let total = paired + (&selfsym + selfsym.transpose()) * 0.5;
                if total.amax() == 0.0 {
                    continue;
                }
                coeffs.push(VarCoeff {
                    var: offsets[vi] + k,
                    matrix: to_row_major(&total),
                });
            }
        }
        Ok(ConicBlock {
            name: c.name.clone(),
            dim,
            sense: c.sense,
            constant: to_row_major(&c.constant),
            coeffs,
        })
    }

    /// Split a scalar solution vector into variable matrices.
    pub fn assignments(&self, x: &[f64]) -> Vec<DMatrix<f64>> {
        let offsets = self.offsets();
        self.variables
            .iter()
            .zip(offsets)
            .map(|(v, off)| v.kind.assemble(&x[off..off + v.kind.scalar_count()]))
            .collect()
    }
}

fn to_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn from_row_major(dim: usize, data: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(dim, dim, data)
}

/// Coefficient matrix of one scalar variable in one block, row major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarCoeff {
    pub var: usize,
    pub matrix: Vec<f64>,
}

/// One constraint block `F(x) = F0 + sum_k x_k F_k`, symmetric `dim x dim`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConicBlock {
    pub name: String,
    pub dim: usize,
    pub sense: Sense,
    pub constant: Vec<f64>,
    /// Only variables with a nonzero coefficient appear.
    pub coeffs: Vec<VarCoeff>,
}

impl ConicBlock {
    pub fn value(&self, x: &[f64]) -> DMatrix<f64> {
        let mut f = from_row_major(self.dim, &self.constant);
        for vc in &self.coeffs {
            f += from_row_major(self.dim, &vc.matrix) * x[vc.var];
        }
        f
    }

    /// `sign * F(x) - margin * I`, required positive semidefinite.
    pub(crate) fn slack(&self, x: &[f64], margin: f64) -> DMatrix<f64> {
        let mut s = self.value(x) * self.sense.sign();
        for i in 0..self.dim {
            s[(i, i)] -= margin;
        }
        s
    }

    /// Largest coefficient magnitude; solvers compare blocks by
    /// `slack / scale` so that rescaling one constraint leaves the
    /// max-margin point unchanged.
    pub fn scale(&self) -> f64 {
        let s = self
            .coeffs
            .iter()
            .flat_map(|vc| vc.matrix.iter())
            .fold(0.0, |a: f64, b| a.max(b.abs()));
        if s > 0.0 {
            s
        } else {
            1.0
        }
    }

    /// `slack / scale`.
    pub(crate) fn scaled_slack(&self, x: &[f64], margin: f64) -> DMatrix<f64> {
        self.slack(x, margin) / self.scale()
    }

    /// Coefficient of `x_k` in [`Self::scaled_slack`].
    pub(crate) fn scaled_coeff(&self, vc: &VarCoeff) -> DMatrix<f64> {
        from_row_major(self.dim, &vc.matrix) * (self.sense.sign() / self.scale())
    }
}

/// Objective-free feasibility problem in standard conic form: find `x` with
/// `-F_j(x) >= margin I` or `F_j(x) >= margin I` for every block `j`.
///
/// This is the interchange structure handed to SDP backends.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConicProblem {
    pub num_vars: usize,
    pub margin: f64,
    pub blocks: Vec<ConicBlock>,
}

impl ConicProblem {
    /// Smallest eigenvalue over all scaled slack blocks at `x`; nonnegative
    /// exactly when every constraint holds with the margin.
    pub fn worst_slack(&self, x: &[f64]) -> f64 {
        self.blocks
            .iter()
            .map(|b| min_eigenvalue(&b.scaled_slack(x, self.margin)))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn barrier_degree(&self) -> usize {
        self.blocks.iter().map(|b| b.dim).sum()
    }
}

pub(crate) fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Feasible,
    Infeasible,
    MaxIterations,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    /// Strictness margin relative to the largest constraint coefficient.
    pub margin_rel: f64,
    /// Duality-gap target relative to the margin.
    pub tol: f64,
    /// Newton-step budget of the barrier method (cut budget is 50x this).
    pub max_iter: usize,
    /// Radius of the ball bounding the scalarized decision vector.
    pub radius: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            margin_rel: 1e-6,
            tol: 1e-3,
            max_iter: 1000,
            radius: 100.0,
        }
    }
}

/// Extreme eigenvalue of one assembled constraint at the returned point:
/// the largest for `<=` constraints, the smallest for `>=` constraints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub name: String,
    pub sense: Sense,
    pub extreme_eigenvalue: f64,
}

impl Residual {
    /// Signed distance past the margin; nonnegative means satisfied.
    pub fn satisfied_by(&self, margin: f64) -> f64 {
        match self.sense {
            Sense::NegativeDefinite => -margin - self.extreme_eigenvalue,
            Sense::PositiveDefinite => self.extreme_eigenvalue - margin,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LmiSolution {
    pub status: SolveStatus,
    pub assignments: Vec<DMatrix<f64>>,
    pub residuals: Vec<Residual>,
    /// Absolute strictness margin `eps` used.
    pub margin: f64,
    pub iterations: usize,
    pub backend: String,
}

impl LmiSolution {
    pub fn get(&self, id: VarId) -> &DMatrix<f64> {
        &self.assignments[id.0]
    }
}

/// Solve with the embedded barrier method.
pub fn solve_feasibility(problem: &LmiProblem, opts: &SolverOptions) -> Result<LmiSolution> {
    backend_adapter(&BarrierSolver, problem, opts)
}

/// Scalarize, delegate to `backend`, and map the answer back onto the
/// problem's variables with per-constraint residuals.
pub fn backend_adapter(
    backend: &dyn SdpBackend,
    problem: &LmiProblem,
    opts: &SolverOptions,
) -> Result<LmiSolution> {
    let conic = problem.to_conic(opts.margin_rel)?;
    let sol = backend.solve(&conic, opts)?;
    if sol.x.len() != conic.num_vars {
        return Err(Error::SolverBreakdown(format!(
            "backend {} returned {} coordinates, expected {}",
            backend.name(),
            sol.x.len(),
            conic.num_vars
        )));
    }
    let residuals = conic
        .blocks
        .iter()
        .map(|b| {
            let f = b.value(&sol.x);
            let extreme = match b.sense {
                Sense::NegativeDefinite => max_eigenvalue(&f),
                Sense::PositiveDefinite => min_eigenvalue(&f),
            };
            Residual {
                name: b.name.clone(),
                sense: b.sense,
                extreme_eigenvalue: extreme,
            }
        })
        .collect::<Vec<_>>();
    // a backend's claim of feasibility must hold on the returned point
    let mut status = sol.status;
    if status == SolveStatus::Feasible
        && residuals
            .iter()
            .any(|r| r.satisfied_by(conic.margin) < -1e-3 * conic.margin)
    {
        status = SolveStatus::Infeasible;
    }
    Ok(LmiSolution {
        status,
        assignments: problem.assignments(&sol.x),
        residuals,
        margin: conic.margin,
        iterations: sol.iterations,
        backend: backend.name().to_string(),
    })
}
