//! Orthogonal polynomial bases matched to the distribution of the scheduling
//! parameter, with Gauss quadrature rules for the expectation operator.
//!
//! Polynomials are kept in their classical (non-normalized) form: Legendre
//! `P_k` for a uniform parameter and probabilists' Hermite `He_k` for a
//! Gaussian one. The squared norms `h_k^2 = E[phi_k^2]` are carried
//! explicitly. All expectations are taken against the probability density of
//! the *standardized* variable, so quadrature weights sum to one.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probability law of the scheduling parameter in physical units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Distribution {
    Uniform {
        lo: f64,
        hi: f64,
    },
    Gaussian {
        mean: f64,
        stddev: f64,
    },
    /// Reserved; Laguerre chaos is not built.
    Gamma {
        shape: f64,
        scale: f64,
    },
    /// Reserved; Jacobi chaos is not built.
    Beta {
        alpha: f64,
        beta: f64,
    },
}

impl Distribution {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Distribution::Uniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(Error::InvalidDistribution(format!(
                        "uniform requires lo < hi, got [{lo}, {hi}]"
                    )));
                }
                Ok(())
            }
            Distribution::Gaussian { mean, stddev } => {
                if !(mean.is_finite() && stddev.is_finite() && stddev > 0.0) {
                    return Err(Error::InvalidDistribution(format!(
                        "gaussian requires stddev > 0, got {stddev}"
                    )));
                }
                Ok(())
            }
            Distribution::Gamma { .. } => Err(Error::UnsupportedDistribution("gamma".into())),
            Distribution::Beta { .. } => Err(Error::UnsupportedDistribution("beta".into())),
        }
    }

    /// Physical support, `None` when unbounded.
    pub fn bounds(&self) -> Option<(f64, f64)> {
        match *self {
            Distribution::Uniform { lo, hi } => Some((lo, hi)),
            _ => None,
        }
    }

    fn family(&self) -> Result<Family> {
        self.validate()?;
        match self {
            Distribution::Uniform { .. } => Ok(Family::Legendre),
            Distribution::Gaussian { .. } => Ok(Family::Hermite),
            _ => unreachable!("rejected by validate"),
        }
    }

    fn standardizer(&self) -> Standardizer {
        match *self {
            Distribution::Uniform { lo, hi } => Standardizer {
                center: 0.5 * (lo + hi),
                scale: 0.5 * (hi - lo),
            },
            Distribution::Gaussian { mean, stddev } => Standardizer {
                center: mean,
                scale: stddev,
            },
            _ => unreachable!("rejected by validate"),
        }
    }
}

/// Affine map between the physical parameter `rho` and the standardized
/// variable `xi = (rho - center) / scale`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub center: f64,
    pub scale: f64,
}

impl Standardizer {
    pub fn to_standard(&self, rho: f64) -> f64 {
        (rho - self.center) / self.scale
    }

    pub fn to_physical(&self, xi: f64) -> f64 {
        self.center + self.scale * xi
    }
}

/// Classical orthogonal polynomial family of the Wiener-Askey scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Legendre `P_k` under the density 1/2 on [-1, 1].
    Legendre,
    /// Probabilists' Hermite `He_k` under the standard normal density.
    Hermite,
}

impl Family {
    /// Coefficients `(a_k, c_k)` of `phi_{k+1} = a_k xi phi_k - c_k phi_{k-1}`.
    fn recurrence(&self, k: usize) -> (f64, f64) {
        let kf = k as f64;
        match self {
            Family::Legendre => ((2.0 * kf + 1.0) / (kf + 1.0), kf / (kf + 1.0)),
            Family::Hermite => (1.0, kf),
        }
    }

    /// `h_k^2 = E[phi_k^2]`.
    pub fn norm_sq(&self, k: usize) -> f64 {
        match self {
            Family::Legendre => 1.0 / (2.0 * k as f64 + 1.0),
            Family::Hermite => (1..=k).map(|j| j as f64).product(),
        }
    }

    /// `phi_0(xi), ..., phi_degree(xi)`.
    pub fn eval(&self, xi: f64, degree: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(degree + 1);
        out.push(1.0);
        if degree == 0 {
            return out;
        }
        let (a0, _) = self.recurrence(0);
        out.push(a0 * xi);
        for k in 1..degree {
            let (a, c) = self.recurrence(k);
            let next = a * xi * out[k] - c * out[k - 1];
            out.push(next);
        }
        out
    }

    /// Value and derivative of `phi_degree` at `xi`.
    fn eval_with_derivative(&self, xi: f64, degree: usize) -> (f64, f64) {
        let (mut p_prev, mut p) = (0.0, 1.0);
        let (mut d_prev, mut d) = (0.0, 0.0);
        for k in 0..degree {
            let (a, c) = self.recurrence(k);
            let p_next = a * xi * p - c * p_prev;
            let d_next = a * (p + xi * d) - c * d_prev;
            p_prev = p;
            p = p_next;
            d_prev = d;
            d = d_next;
        }
        (p, d)
    }

    /// Monomial coefficients (ascending powers) of `phi_0..phi_degree`.
    pub fn coefficients(&self, degree: usize) -> Vec<Vec<f64>> {
        let mut polys: Vec<Vec<f64>> = vec![vec![1.0]];
        for k in 0..degree {
            let (a, c) = self.recurrence(k);
            let mut next = vec![0.0; k + 2];
            for (j, &coef) in polys[k].iter().enumerate() {
                next[j + 1] += a * coef;
            }
            if k > 0 {
                for (j, &coef) in polys[k - 1].iter().enumerate() {
                    next[j] -= c * coef;
                }
            }
            polys.push(next);
        }
        polys
    }

    /// Gauss rule with `q` nodes for this family's (probability) weight.
    ///
    /// Nodes come from the Golub-Welsch eigenproblem and are polished with
    /// Newton steps on `phi_q`; weights use the Christoffel formula.
    pub fn gauss_rule(&self, q: usize) -> QuadratureRule {
        assert!(q >= 1, "quadrature needs at least one node");
        if q == 1 {
            return QuadratureRule {
                nodes: vec![0.0],
                weights: vec![1.0],
            };
        }
        let mut jacobi = DMatrix::<f64>::zeros(q, q);
        for k in 1..q {
            let (a, c) = self.recurrence(k);
            let (a_prev, _) = self.recurrence(k - 1);
            let beta = c / (a * a_prev);
            jacobi[(k, k - 1)] = beta.sqrt();
            jacobi[(k - 1, k)] = beta.sqrt();
        }
        let mut nodes: Vec<f64> = SymmetricEigen::new(jacobi)
            .eigenvalues
            .iter()
            .copied()
            .collect();
        nodes.sort_by(|a, b| a.total_cmp(b));
        for x in nodes.iter_mut() {
            for _ in 0..3 {
                let (p, d) = self.eval_with_derivative(*x, q);
                if d == 0.0 {
                    break;
                }
                let step = p / d;
                *x -= step;
                if step.abs() <= 1e-16 * x.abs().max(1.0) {
                    break;
                }
            }
        }
        let norms: Vec<f64> = (0..q).map(|k| self.norm_sq(k)).collect();
        let weights = nodes
            .iter()
            .map(|&x| {
                let phi = self.eval(x, q - 1);
                let s: f64 = phi.iter().zip(&norms).map(|(p, h)| p * p / h).sum();
                1.0 / s
            })
            .collect();
        QuadratureRule { nodes, weights }
    }
}

/// Nodes and positive weights of a Gauss rule for a probability density.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Highest polynomial degree integrated exactly, `2q - 1`.
    pub fn exact_degree(&self) -> usize {
        2 * self.nodes.len() - 1
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().copied().zip(self.weights.iter().copied())
    }
}

/// Truncated univariate chaos basis `phi_0..phi_N` (N = order) for one
/// scheduling parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct PolyBasis {
    distribution: Distribution,
    order: usize,
    family: Family,
    polynomials: Vec<Vec<f64>>,
    norms: Vec<f64>,
    standardizer: Standardizer,
    quadrature: QuadratureRule,
}

impl PolyBasis {
    /// Basis of order `p` with a `3p + 3` node Gauss rule, enough for every
    /// moment integral of the degree-6p integrands in the synthesis LMIs.
    pub fn new(distribution: Distribution, order: usize) -> Result<Self> {
        Self::with_nodes(distribution, order, 3 * order + 3)
    }

    pub fn with_nodes(distribution: Distribution, order: usize, nodes: usize) -> Result<Self> {
        let family = distribution.family()?;
        if nodes == 0 {
            return Err(Error::Precondition(
                "quadrature needs at least one node".into(),
            ));
        }
        Ok(PolyBasis {
            distribution,
            order,
            family,
            polynomials: family.coefficients(order),
            norms: (0..=order).map(|k| family.norm_sq(k)).collect(),
            standardizer: distribution.standardizer(),
            quadrature: family.gauss_rule(nodes),
        })
    }

    pub fn distribution(&self) -> Distribution {
        self.distribution
    }

    /// Truncation order `N` (= p for a single parameter).
    pub fn order(&self) -> usize {
        self.order
    }

    /// Number of basis functions, `N + 1`.
    pub fn len(&self) -> usize {
        self.order + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn polynomials(&self) -> &[Vec<f64>] {
        &self.polynomials
    }

    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    pub fn standardizer(&self) -> Standardizer {
        self.standardizer
    }

    pub fn quadrature(&self) -> &QuadratureRule {
        &self.quadrature
    }

    /// `Phi(xi) = (phi_0(xi), ..., phi_N(xi))`.
    pub fn eval(&self, xi: f64) -> Vec<f64> {
        self.family.eval(xi, self.order)
    }

    pub fn check_degree(&self, required: usize) -> Result<()> {
        let exact = self.quadrature.exact_degree();
        if required > exact {
            return Err(Error::QuadratureUnderResolved {
                nodes: self.quadrature.len(),
                exact,
                required,
            });
        }
        Ok(())
    }

    /// `E[f(xi)]` for a polynomial integrand of the declared degree.
    pub fn expect_scalar(&self, degree: usize, integrand: impl Fn(f64) -> f64) -> Result<f64> {
        self.check_degree(degree)?;
        Ok(self.quadrature.integrate(integrand))
    }

    /// `E[Phi Phi^T]`, computed by quadrature (diagonal up to rounding).
    pub fn gram(&self) -> DMatrix<f64> {
        let len = self.len();
        let mut g = DMatrix::zeros(len, len);
        for (x, w) in self.quadrature.iter() {
            let phi = self.eval(x);
            for i in 0..len {
                for j in 0..len {
                    g[(i, j)] += phi[i] * phi[j] * w;
                }
            }
        }
        g
    }

    /// Same distribution and truncation order.
    pub fn same_expansion(&self, other: &PolyBasis) -> bool {
        self.distribution == other.distribution && self.order == other.order
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit_uniform() -> Distribution {
        Distribution::Uniform { lo: -1.0, hi: 1.0 }
    }

    #[test]
    fn legendre_order_two() {
        let b = PolyBasis::new(unit_uniform(), 2).unwrap();
        assert_eq!(b.polynomials()[0], vec![1.0]);
        assert_eq!(b.polynomials()[1], vec![0.0, 1.0]);
        let p2 = &b.polynomials()[2];
        assert_abs_diff_eq!(p2[0], -0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(p2[1], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p2[2], 1.5, epsilon = 1e-15);
        for (k, expected) in [1.0, 1.0 / 3.0, 1.0 / 5.0].iter().enumerate() {
            let h = b.expect_scalar(4, |x| b.eval(x)[k].powi(2)).unwrap();
            assert_abs_diff_eq!(h, *expected, epsilon = 1e-14);
            assert_abs_diff_eq!(b.norms()[k], *expected, epsilon = 1e-15);
        }
    }

    #[test]
    fn order_zero_is_constant() {
        let b = PolyBasis::new(unit_uniform(), 0).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b.norms(), &[1.0]);
        assert_abs_diff_eq!(b.gram()[(0, 0)], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn vdp_standardizer() {
        let b = PolyBasis::new(Distribution::Uniform { lo: -24.0, hi: 1.0 }, 1).unwrap();
        let s = b.standardizer();
        for rho in [-24.0, -11.5, 0.0, 1.0, -3.7] {
            assert_abs_diff_eq!(
                s.to_standard(rho),
                (2.0 * rho + 23.0) / 25.0,
                epsilon = 1e-15
            );
        }
        let g = b.gram();
        assert_abs_diff_eq!(g[(0, 0)], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g[(1, 1)], 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g[(0, 1)], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn expectations() {
        let b = PolyBasis::new(unit_uniform(), 2).unwrap();
        assert_abs_diff_eq!(b.expect_scalar(0, |_| 1.0).unwrap(), 1.0, epsilon = 1e-15);
        let e11 = b.expect_scalar(2, |x| x * x).unwrap();
        assert_abs_diff_eq!(e11, 1.0 / 3.0, epsilon = 1e-15);
        let e12 = b.expect_scalar(3, |x| x * (1.5 * x * x - 0.5)).unwrap();
        assert_abs_diff_eq!(e12, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn under_resolved_degree_is_rejected() {
        let b = PolyBasis::new(unit_uniform(), 1).unwrap();
        // 6 nodes, exact to degree 11
        assert!(b.expect_scalar(11, |x| x.powi(11)).is_ok());
        match b.expect_scalar(12, |x| x.powi(12)) {
            Err(Error::QuadratureUnderResolved {
                exact: 11,
                required: 12,
                ..
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn hermite_norms_and_gram() {
        let b = PolyBasis::new(
            Distribution::Gaussian {
                mean: 2.0,
                stddev: 0.5,
            },
            3,
        )
        .unwrap();
        let g = b.gram();
        for (k, expected) in [1.0, 1.0, 2.0, 6.0].iter().enumerate() {
            assert_abs_diff_eq!(g[(k, k)], *expected, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(g[(1, 3)], 0.0, epsilon = 1e-12);
        // E[xi^4] = 3 for a standard normal
        assert_abs_diff_eq!(
            b.expect_scalar(4, |x| x.powi(4)).unwrap(),
            3.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn reserved_and_invalid_distributions() {
        assert!(matches!(
            PolyBasis::new(
                Distribution::Gamma {
                    shape: 2.0,
                    scale: 1.0
                },
                1
            ),
            Err(Error::UnsupportedDistribution(_))
        ));
        assert!(matches!(
            PolyBasis::new(
                Distribution::Beta {
                    alpha: 2.0,
                    beta: 2.0
                },
                1
            ),
            Err(Error::UnsupportedDistribution(_))
        ));
        assert!(matches!(
            PolyBasis::new(Distribution::Uniform { lo: 1.0, hi: 1.0 }, 1),
            Err(Error::InvalidDistribution(_))
        ));
        assert!(matches!(
            PolyBasis::new(
                Distribution::Gaussian {
                    mean: 0.0,
                    stddev: 0.0
                },
                1
            ),
            Err(Error::InvalidDistribution(_))
        ));
    }

    #[test]
    fn weights_are_a_probability() {
        for q in 1..30 {
            for fam in [Family::Legendre, Family::Hermite] {
                let rule = fam.gauss_rule(q);
                assert!(rule.weights.iter().all(|&w| w > 0.0));
                assert_abs_diff_eq!(rule.weights.iter().sum::<f64>(), 1.0, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn coefficients_agree_with_recurrence() {
        for fam in [Family::Legendre, Family::Hermite] {
            let coefs = fam.coefficients(6);
            for &x in &[-0.9, -0.2, 0.3, 0.77] {
                let vals = fam.eval(x, 6);
                for (k, c) in coefs.iter().enumerate() {
                    assert_eq!(c.len(), k + 1);
                    let horner = c.iter().rev().fold(0.0, |acc, &a| acc * x + a);
                    assert_abs_diff_eq!(horner, vals[k], epsilon = 1e-12);
                }
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        /// Closed-form `E[xi^k]` under the standardized density.
        fn monomial_moment(fam: Family, k: usize) -> f64 {
            if k % 2 == 1 {
                return 0.0;
            }
            match fam {
                Family::Legendre => 1.0 / (k as f64 + 1.0),
                Family::Hermite => (1..k).step_by(2).map(|j| j as f64).product(),
            }
        }

        proptest! {
            #[test]
            fn orthogonality(p in 1usize..8, i in 0usize..8, j in 0usize..8) {
                prop_assume!(i <= p && j <= p && i != j);
                let b = PolyBasis::new(unit_uniform(), p).unwrap();
                let e = b.expect_scalar(i + j, |x| { let f = b.eval(x); f[i] * f[j] }).unwrap();
                prop_assert!(e.abs() < 1e-12);
            }

            #[test]
            fn quadrature_exact_for_random_polynomials(
                q in 1usize..12,
                coefs in proptest::collection::vec(-1.0f64..1.0, 24),
                hermite in any::<bool>(),
            ) {
                let fam = if hermite { Family::Hermite } else { Family::Legendre };
                let rule = fam.gauss_rule(q);
                let deg = rule.exact_degree();
                let c = &coefs[..=deg.min(coefs.len() - 1)];
                let quad = rule.integrate(|x| c.iter().rev().fold(0.0, |acc, &a| acc * x + a));
                let exact: f64 = c.iter().enumerate().map(|(k, a)| a * monomial_moment(fam, k)).sum();
                let scale = c.iter().enumerate().map(|(k, a)| (a * monomial_moment(fam, k)).abs()).sum::<f64>().max(1.0);
                prop_assert!((quad - exact).abs() < 1e-12 * scale, "{quad} vs {exact}");
            }

            #[test]
            fn standardizer_round_trip(rho in -24.0f64..1.0, lo in -50.0f64..0.0, width in 0.1f64..50.0) {
                let b = PolyBasis::new(Distribution::Uniform { lo, hi: lo + width }, 1).unwrap();
                let s = b.standardizer();
                let back = s.to_physical(s.to_standard(rho));
                prop_assert!((back - rho).abs() <= 1e-14 * rho.abs().max(1.0));
            }

            #[test]
            fn gram_diagonal_positive(p in 0usize..9, hermite in any::<bool>()) {
                let dist = if hermite {
                    Distribution::Gaussian { mean: 0.0, stddev: 1.0 }
                } else {
                    unit_uniform()
                };
                let g = PolyBasis::new(dist, p).unwrap().gram();
                prop_assert!((0..=p).all(|i| g[(i, i)] > 0.0));
            }
        }
    }
}
