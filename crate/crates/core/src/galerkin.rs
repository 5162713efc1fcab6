//! Stochastic Galerkin projection of a parameter-dependent linear plant.
//!
//! With `Phi_n(xi) = Phi(xi) ⊗ I_n`, every expectation matrix used by the
//! expanded dynamics and by the two synthesis LMIs is formed by Gauss
//! quadrature of the full matrix integrand, node by node, in a fixed order.

use nalgebra::{DMatrix, DVector};

use crate::basis::{Family, PolyBasis, Standardizer};
use crate::error::{Error, Result};

/// `C(xi) = sum_k C_k phi_k(xi)` with coefficients in a polynomial family.
///
/// The number of coefficients is independent of the truncation order of the
/// chaos basis; quadrature exactness is checked when projecting.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixPolynomial {
    rows: usize,
    cols: usize,
    family: Family,
    coeffs: Vec<DMatrix<f64>>,
}

impl MatrixPolynomial {
    pub fn new(family: Family, coeffs: Vec<DMatrix<f64>>) -> Result<Self> {
        let first = coeffs.first().ok_or_else(|| {
            Error::DimensionMismatch("matrix polynomial needs a coefficient".into())
        })?;
        let (rows, cols) = first.shape();
        if rows == 0 || cols == 0 {
            return Err(Error::DimensionMismatch("empty coefficient matrix".into()));
        }
        if coeffs.iter().any(|c| c.shape() != (rows, cols)) {
            return Err(Error::DimensionMismatch(
                "matrix polynomial coefficients differ in shape".into(),
            ));
        }
        Ok(MatrixPolynomial {
            rows,
            cols,
            family,
            coeffs,
        })
    }

    pub fn constant(family: Family, c0: DMatrix<f64>) -> Result<Self> {
        Self::new(family, vec![c0])
    }

    /// Convert `C(rho) = sum_k M_k rho^k` in physical units into chaos
    /// coefficients in the standardized variable.
    pub fn from_physical_powers(
        family: Family,
        standardizer: Standardizer,
        powers: &[DMatrix<f64>],
    ) -> Result<Self> {
        let first = powers
            .first()
            .ok_or_else(|| Error::DimensionMismatch("need at least one coefficient".into()))?;
        let shape = first.shape();
        if powers.iter().any(|c| c.shape() != shape) {
            return Err(Error::DimensionMismatch(
                "power coefficients differ in shape".into(),
            ));
        }
        let degree = powers.len() - 1;
        // degree-2d integrands: d + 1 nodes are exact
        let rule = family.gauss_rule(degree + 1);
        let mut coeffs = vec![DMatrix::zeros(shape.0, shape.1); degree + 1];
        for (xi, w) in rule.iter() {
            let rho = standardizer.to_physical(xi);
            let value = eval_powers(powers, rho);
            let phi = family.eval(xi, degree);
            for (k, c) in coeffs.iter_mut().enumerate() {
                *c += &value * (w * phi[k] / family.norm_sq(k));
            }
        }
        Self::new(family, coeffs)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn coeffs(&self) -> &[DMatrix<f64>] {
        &self.coeffs
    }

    pub fn eval(&self, xi: f64) -> DMatrix<f64> {
        let phi = self.family.eval(xi, self.degree());
        let mut out = DMatrix::zeros(self.rows, self.cols);
        for (c, f) in self.coeffs.iter().zip(&phi) {
            out += c * *f;
        }
        out
    }
}

pub(crate) fn eval_powers(powers: &[DMatrix<f64>], rho: f64) -> DMatrix<f64> {
    let mut acc = powers[powers.len() - 1].clone();
    for c in powers.iter().rev().skip(1) {
        acc = acc * rho + c;
    }
    acc
}

/// Plant in physical form: `A(rho) = sum_k A_k rho^k`, `B(rho) = sum_k B_k rho^k`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhysicalPlant {
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DMatrix<f64>>,
}

impl PhysicalPlant {
    pub fn new(a: Vec<DMatrix<f64>>, b: Vec<DMatrix<f64>>) -> Result<Self> {
        let plant = PhysicalPlant { a, b };
        plant.validate()?;
        Ok(plant)
    }

    /// Controlled Van der Pol oscillator scheduled on `rho = 1 - x1^2`:
    /// `A(rho) = [[0, 1], [-1, rho]]`, `B = [0; 1]`.
    pub fn van_der_pol() -> Self {
        PhysicalPlant {
            a: vec![
                DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]),
                DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]),
            ],
            b: vec![DMatrix::from_row_slice(2, 1, &[0.0, 1.0])],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (Some(a0), Some(b0)) = (self.a.first(), self.b.first()) else {
            return Err(Error::DimensionMismatch(
                "plant needs A and B coefficients".into(),
            ));
        };
        let n = a0.nrows();
        if n == 0 || a0.ncols() != n {
            return Err(Error::DimensionMismatch(
                "A must be square and nonempty".into(),
            ));
        }
        if self.a.iter().any(|c| c.shape() != (n, n)) {
            return Err(Error::DimensionMismatch(
                "A coefficients differ in shape".into(),
            ));
        }
        let m = b0.ncols();
        if b0.nrows() != n || m == 0 {
            return Err(Error::DimensionMismatch(format!(
                "B must have {n} rows and at least one column"
            )));
        }
        if self.b.iter().any(|c| c.shape() != (n, m)) {
            return Err(Error::DimensionMismatch(
                "B coefficients differ in shape".into(),
            ));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.a[0].nrows()
    }

    pub fn m(&self) -> usize {
        self.b[0].ncols()
    }

    pub fn a_at(&self, rho: f64) -> DMatrix<f64> {
        eval_powers(&self.a, rho)
    }

    pub fn b_at(&self, rho: f64) -> DMatrix<f64> {
        eval_powers(&self.b, rho)
    }

    pub fn to_stochastic(&self, basis: &PolyBasis) -> Result<StochasticPlant> {
        let s = basis.standardizer();
        let a = MatrixPolynomial::from_physical_powers(basis.family(), s, &self.a)?;
        let b = MatrixPolynomial::from_physical_powers(basis.family(), s, &self.b)?;
        StochasticPlant::new(a, b, basis.clone())
    }
}

/// `xdot = A(xi) x + B(xi) u` with `xi` distributed as the basis density.
#[derive(Clone, Debug, PartialEq)]
pub struct StochasticPlant {
    a: MatrixPolynomial,
    b: MatrixPolynomial,
    basis: PolyBasis,
}

impl StochasticPlant {
    pub fn new(a: MatrixPolynomial, b: MatrixPolynomial, basis: PolyBasis) -> Result<Self> {
        if a.rows() != a.cols() || b.rows() != a.rows() {
            return Err(Error::DimensionMismatch(format!(
                "A is {}x{}, B is {}x{}",
                a.rows(),
                a.cols(),
                b.rows(),
                b.cols()
            )));
        }
        if a.family() != basis.family() || b.family() != basis.family() {
            return Err(Error::BasisMismatch(
                "plant coefficients use a different polynomial family".into(),
            ));
        }
        Ok(StochasticPlant { a, b, basis })
    }

    pub fn n(&self) -> usize {
        self.a.rows()
    }

    pub fn m(&self) -> usize {
        self.b.cols()
    }

    pub fn a(&self) -> &MatrixPolynomial {
        &self.a
    }

    pub fn b(&self) -> &MatrixPolynomial {
        &self.b
    }

    pub fn basis(&self) -> &PolyBasis {
        &self.basis
    }

    /// Same plant re-expanded on another basis of the same family.
    pub fn with_basis(&self, basis: PolyBasis) -> Result<Self> {
        StochasticPlant::new(self.a.clone(), self.b.clone(), basis)
    }

    pub fn a_at_physical(&self, rho: f64) -> DMatrix<f64> {
        self.a.eval(self.basis.standardizer().to_standard(rho))
    }

    pub fn b_at_physical(&self, rho: f64) -> DMatrix<f64> {
        self.b.eval(self.basis.standardizer().to_standard(rho))
    }
}

/// Expectation matrices of the projected system.
#[derive(Clone, Debug)]
pub struct ProjectionMatrices {
    pub n: usize,
    pub m: usize,
    /// `E[Phi Phi^T]`, (N+1)x(N+1).
    pub gram: DMatrix<f64>,
    /// `E[Phi_n Phi_n^T]`.
    pub g: DMatrix<f64>,
    /// `E[Phi_n A Phi_n^T]`.
    pub ga: DMatrix<f64>,
    /// `E[Phi_n B Phi_m^T Phi_{m(N+1)}^T]`, (N+1)n x (N+1)^2 m.
    pub gb: DMatrix<f64>,
    /// `E[(Phi_n Phi_n^T)^2]`.
    pub m0: DMatrix<f64>,
    /// `E[Phi_n Phi_n^T Phi_n A Phi_n^T]`.
    pub m1: DMatrix<f64>,
    /// `E[Phi_n Phi_n^T Phi_n B Phi_m^T Phi_{m(N+1)}^T]`.
    pub m2: DMatrix<f64>,
}

impl ProjectionMatrices {
    /// Number of basis functions `N + 1`.
    pub fn terms(&self) -> usize {
        self.gram.nrows()
    }

    /// Apply `G^{-1}` through the reciprocal of the gram diagonal.
    pub fn apply_g_inverse(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut out = rhs.clone();
        for i in 0..self.terms() {
            let h = self.gram[(i, i)];
            if !(h > 0.0) {
                return Err(Error::GramSingular(h));
            }
            out.rows_mut(i * self.n, self.n).scale_mut(1.0 / h);
        }
        Ok(out)
    }
}

/// `Phi(xi) ⊗ I_n`.
pub fn phi_n(basis: &PolyBasis, n: usize, xi: f64) -> DMatrix<f64> {
    let phi = DMatrix::from_column_slice(basis.len(), 1, &basis.eval(xi));
    phi.kronecker(&DMatrix::identity(n, n))
}

/// Both sides of `M (v^T ⊗ I_n) = (v^T ⊗ I_m)(I_{N+1} ⊗ M)`.
pub fn kron_shift(m: &DMatrix<f64>, v: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (rows, cols) = m.shape();
    let vt = v.transpose();
    let lhs = m * vt.kronecker(&DMatrix::<f64>::identity(cols, cols));
    let rhs = vt.kronecker(&DMatrix::<f64>::identity(rows, rows))
        * DMatrix::<f64>::identity(v.len(), v.len()).kronecker(m);
    (lhs, rhs)
}

/// Quadrature degree needed for the Galerkin and Lyapunov-weighted integrands.
pub fn required_degree(plant: &StochasticPlant) -> usize {
    let p = plant.basis().order();
    (4 * p + plant.a().degree()).max(5 * p + plant.b().degree())
}

pub fn project(plant: &StochasticPlant) -> Result<ProjectionMatrices> {
    let basis = plant.basis();
    basis.check_degree(required_degree(plant))?;
    let (n, m) = (plant.n(), plant.m());
    let terms = basis.len();
    let dim = terms * n;
    let wide = terms * terms * m;

    let eye_m = DMatrix::<f64>::identity(m, m);
    let eye_wide = DMatrix::<f64>::identity(m * terms, m * terms);

    let mut gram = DMatrix::zeros(terms, terms);
    let mut g = DMatrix::zeros(dim, dim);
    let mut ga = DMatrix::zeros(dim, dim);
    let mut gb = DMatrix::zeros(dim, wide);
    let mut m0 = DMatrix::zeros(dim, dim);
    let mut m1 = DMatrix::zeros(dim, dim);
    let mut m2 = DMatrix::zeros(dim, wide);

    for (xi, w) in basis.quadrature().iter() {
        let phi = DMatrix::from_column_slice(terms, 1, &basis.eval(xi));
        let phi_t = phi.transpose();
        let pn = phi_n(basis, n, xi);
        let pn_t = pn.transpose();
        let phi_m_t = phi_t.kronecker(&eye_m);
        let phi_wide_t = phi_t.kronecker(&eye_wide);

        let outer = &pn * &pn_t;
        let a_term = &pn * plant.a().eval(xi) * &pn_t;
        let b_term = &pn * plant.b().eval(xi) * phi_m_t * phi_wide_t;

        gram += &phi * &phi_t * w;
        m0 += &outer * &outer * w;
        m1 += &outer * &a_term * w;
        m2 += &outer * &b_term * w;
        g += outer * w;
        ga += a_term * w;
        gb += b_term * w;
    }

    Ok(ProjectionMatrices {
        n,
        m,
        gram,
        g,
        ga,
        gb,
        m0,
        m1,
        m2,
    })
}

/// Open-loop expanded dynamics `G^{-1} E[Phi_n A Phi_n^T]`.
pub fn expanded_dynamics(proj: &ProjectionMatrices) -> Result<DMatrix<f64>> {
    proj.apply_g_inverse(&proj.ga)
}

/// `I_{N+1} ⊗ V_K`.
pub fn block_gain(vk: &DMatrix<f64>, terms: usize) -> DMatrix<f64> {
    DMatrix::<f64>::identity(terms, terms).kronecker(vk)
}

/// Closed-loop expanded dynamics `G^{-1}(GA + GB (I_{N+1} ⊗ V_K))`.
pub fn closed_loop_dynamics(proj: &ProjectionMatrices, vk: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let terms = proj.terms();
    if vk.shape() != (proj.m * terms, proj.n) {
        return Err(Error::DimensionMismatch(format!(
            "gain stack is {}x{}, expected {}x{}",
            vk.nrows(),
            vk.ncols(),
            proj.m * terms,
            proj.n
        )));
    }
    let coupled = &proj.ga + &proj.gb * block_gain(vk, terms);
    proj.apply_g_inverse(&coupled)
}

/// `x_hat(xi) = Phi_n(xi)^T x_pc`.
pub fn reconstruct(xpc: &DVector<f64>, basis: &PolyBasis, xi: f64) -> Result<DVector<f64>> {
    let terms = basis.len();
    if !xpc.len().is_multiple_of(terms) {
        return Err(Error::DimensionMismatch(format!(
            "expanded state of length {} is not a multiple of {terms}",
            xpc.len()
        )));
    }
    let n = xpc.len() / terms;
    Ok(phi_n(basis, n, xi).transpose() * xpc)
}
