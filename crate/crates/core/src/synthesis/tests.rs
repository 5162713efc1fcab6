use super::*;
use crate::basis::Distribution;
use crate::galerkin::MatrixPolynomial;
use crate::sim::MonteCarloOptions;
use approx::assert_abs_diff_eq;
use proptest::prelude::*;

fn opts() -> SynthesisOptions {
    SynthesisOptions::default()
}

fn mat(rows: usize, cols: usize, v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, v)
}

fn vdp_plant(order: usize) -> StochasticPlant {
    let basis = PolyBasis::new(Distribution::Uniform { lo: -24.0, hi: 1.0 }, order).unwrap();
    PhysicalPlant::van_der_pol().to_stochastic(&basis).unwrap()
}

fn constant_plant(a: DMatrix<f64>, b: DMatrix<f64>, order: usize) -> StochasticPlant {
    let basis = PolyBasis::new(Distribution::Uniform { lo: -1.0, hi: 1.0 }, order).unwrap();
    PhysicalPlant::new(vec![a], vec![b])
        .unwrap()
        .to_stochastic(&basis)
        .unwrap()
}

fn expansion(result: &SynthesisResult) -> &GainExpansion {
    match &result.gain {
        ControllerGain::Expansion(g) => g,
        other => panic!("expected a gain expansion, got {other:?}"),
    }
}

fn algebraic_only() -> VerifyOptions {
    VerifyOptions {
        monte_carlo: None,
        ..VerifyOptions::default()
    }
}

fn mc_short() -> VerifyOptions {
    VerifyOptions {
        monte_carlo: Some(MonteCarloOptions {
            x0: vec![1.0, 1.0],
            horizon: 5.0,
            step: 1e-2,
            samples: 200,
            seed: 3,
        }),
        ..VerifyOptions::default()
    }
}

#[test]
fn lti_vdp_linearization_is_feasible() {
    let a = mat(2, 2, &[0.0, 1.0, -1.0, 1.0]);
    let b = mat(2, 1, &[0.0, 1.0]);
    let r = synthesize_lti(&a, &b, 1.0, &opts()).unwrap();
    let ControllerGain::Constant(k) = &r.gain else {
        panic!()
    };
    // Y A^T + A Y + alpha Y < 0 with Y > 0 puts the spectrum left of -alpha/2
    assert!(spectral_abscissa(&(&a + &b * k)) <= -0.5);
    let plant = constant_plant(a, b, 0);
    assert!(verify_ems(&plant, &r, &algebraic_only()).unwrap().passed);
}

#[test]
fn lti_without_input_keeps_zero_gain() {
    let r = synthesize_lti(
        &(-DMatrix::identity(2, 2)),
        &DMatrix::zeros(2, 1),
        1.0,
        &opts(),
    )
    .unwrap();
    let ControllerGain::Constant(k) = &r.gain else {
        panic!()
    };
    assert!(k.amax() < 1e-6, "{k}");
}

#[test]
fn unstable_uncontrollable_plant_has_no_certificate() {
    let err = synthesize_lti(
        &DMatrix::identity(2, 2),
        &DMatrix::zeros(2, 1),
        1.0,
        &opts(),
    )
    .unwrap_err();
    assert!(matches!(err, Error::NoCertificate { .. }), "{err:?}");
}

#[test]
fn alpha_must_be_positive() {
    let a = -DMatrix::<f64>::identity(1, 1);
    let b = DMatrix::zeros(1, 1);
    assert!(matches!(
        synthesize_lti(&a, &b, 0.0, &opts()),
        Err(Error::Precondition(_))
    ));
}

#[test]
fn vdp_chaos_designs_are_certified() {
    let plant = vdp_plant(1);
    for r in [
        synthesize_theorem1(&plant, 1.0, &opts()).unwrap(),
        synthesize_theorem2(&plant, 1.0, &opts()).unwrap(),
    ] {
        let g = expansion(&r);
        assert_eq!(g.blocks().len(), 2);
        assert_eq!(g.blocks()[0].shape(), (1, 2));
        // V_K Y recomposes W
        let recomposed = g.vk() * &r.y;
        assert!((&recomposed - &r.w).amax() <= 1e-10 * r.w.amax().max(1.0));
        assert_abs_diff_eq!(&r.p * &r.y, DMatrix::identity(2, 2), epsilon = 1e-10);
        let report = verify_ems(&plant, &r, &algebraic_only()).unwrap();
        assert!(report.passed, "{report:?}");
        assert!(report.algebraic.max_eigenvalue <= -r.margin);
    }
}

#[test]
fn galerkin_closed_loop_decays_at_half_alpha() {
    let plant = vdp_plant(1);
    let proj = galerkin::project(&plant).unwrap();
    for alpha in [0.5, 1.0] {
        for r in [
            synthesize_theorem1(&plant, alpha, &opts()).unwrap(),
            synthesize_theorem2(&plant, alpha, &opts()).unwrap(),
        ] {
            let closed = galerkin::closed_loop_dynamics(&proj, expansion(&r).vk()).unwrap();
            let abscissa = spectral_abscissa(&closed);
            assert!(
                abscissa <= -alpha / 2.0 + 1e-6,
                "{:?}: {abscissa}",
                r.method()
            );
        }
    }
}

#[test]
fn tampered_gain_fails_verification() {
    let plant = vdp_plant(1);
    let mut r = synthesize_theorem2(&plant, 1.0, &opts()).unwrap();
    assert!(verify_ems(&plant, &r, &algebraic_only()).unwrap().passed);
    let g = expansion(&r);
    let mut blocks = g.blocks();
    blocks[0] = -&blocks[0];
    r.gain =
        ControllerGain::Expansion(GainExpansion::from_blocks(&blocks, g.basis().clone()).unwrap());
    let report = verify_ems(&plant, &r, &algebraic_only()).unwrap();
    assert!(!report.passed);
    assert!(report.algebraic.max_eigenvalue > 0.0);
}

fn hand_result(a: DMatrix<f64>, b: DMatrix<f64>, alpha: f64) -> SynthesisResult {
    let n = a.nrows();
    let m = b.ncols();
    SynthesisResult {
        design: Design::Lti { a, b },
        alpha,
        gain: ControllerGain::Constant(DMatrix::zeros(m, n)),
        y: DMatrix::identity(n, n),
        p: DMatrix::identity(n, n),
        w: DMatrix::zeros(m, n),
        certificates: vec![],
        margin: 1e-6,
        problem_size: ProblemSize {
            scalar_variables: 0,
            constraint_rows: 0,
        },
        solve_seconds: 0.0,
    }
}

#[test]
fn zero_system_fails_verification() {
    let (a, b) = (DMatrix::zeros(2, 2), DMatrix::zeros(2, 1));
    let plant = constant_plant(a.clone(), b.clone(), 0);
    let report = verify_ems(&plant, &hand_result(a, b, 0.5), &mc_short()).unwrap();
    assert!(!report.algebraic.passed);
    assert_abs_diff_eq!(report.algebraic.max_eigenvalue, 0.5, epsilon = 1e-12);
    assert!(!report.statistical.unwrap().passed);
    assert!(!report.passed);
}

#[test]
fn stable_plant_with_zero_gain_passes_verification() {
    let (a, b) = (-DMatrix::identity(2, 2), DMatrix::zeros(2, 1));
    let plant = constant_plant(a.clone(), b.clone(), 0);
    let report = verify_ems(&plant, &hand_result(a, b, 0.5), &mc_short()).unwrap();
    // eigenvalues of -2I + 0.5I
    assert_abs_diff_eq!(report.algebraic.max_eigenvalue, -1.5, epsilon = 1e-12);
    let stat = report.statistical.as_ref().unwrap();
    assert!((stat.fitted_rate - 2.0).abs() < 0.01, "{stat:?}");
    assert!(report.passed);
}

#[test]
fn vdp_theorem2_passes_statistical_check() {
    let plant = vdp_plant(1);
    let r = synthesize_theorem2(&plant, 1.0, &opts()).unwrap();
    let report = verify_ems(&plant, &r, &VerifyOptions::default()).unwrap();
    let stat = report.statistical.as_ref().unwrap();
    assert!(stat.fitted_rate >= 0.9, "{stat:?}");
    assert!(report.passed);
}

#[test]
fn sampled_lpv_vdp_designs_are_feasible() {
    let vdp = PhysicalPlant::van_der_pol();
    let samples = [-23.0, -17.5, -9.0, -2.0, 0.5];
    let r = synthesize_sampled_lpv(&vdp, (-24.0, 1.0), &samples, 1.0, &opts()).unwrap();
    let ControllerGain::AffineLpv(g) = &r.gain else {
        panic!()
    };
    for &rho in &samples {
        let k = g.evaluate(rho).unwrap().k;
        let closed = vdp.a_at(rho) + vdp.b_at(rho) * k;
        assert!(spectral_abscissa(&closed) <= -0.5 + 1e-6);
    }
    let plant = vdp_plant(1);
    assert!(verify_ems(&plant, &r, &algebraic_only()).unwrap().passed);
    assert_eq!(r.problem_size.scalar_variables, 10);
    assert_eq!(r.problem_size.constraint_rows, 2 * (5 + 5 + 2));
}

#[test]
fn sampled_lpv_rejects_out_of_domain_samples() {
    let vdp = PhysicalPlant::van_der_pol();
    for samples in [vec![-30.0], vec![0.0, 1.5], vec![]] {
        let err = synthesize_sampled_lpv(&vdp, (-24.0, 1.0), &samples, 1.0, &opts()).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)), "{err:?}");
    }
}

#[test]
fn single_sample_on_constant_plant_matches_lti() {
    let a = mat(2, 2, &[0.0, 1.0, 2.0, -1.0]);
    let b = mat(2, 1, &[0.0, 1.0]);
    let plant = PhysicalPlant::new(vec![a.clone()], vec![b.clone()]).unwrap();
    let lpv = synthesize_sampled_lpv(&plant, (-1.0, 1.0), &[0.3], 1.0, &opts()).unwrap();
    let lti = synthesize_lti(&a, &b, 1.0, &opts()).unwrap();
    let k = lpv.gain.evaluate(0.3).unwrap().k;
    assert!(spectral_abscissa(&(&a + &b * &k)) <= -0.5 + 1e-6);
    let ControllerGain::Constant(k_lti) = &lti.gain else {
        panic!()
    };
    assert!(spectral_abscissa(&(&a + &b * k_lti)) <= -0.5 + 1e-6);

    let unstable =
        PhysicalPlant::new(vec![DMatrix::identity(2, 2)], vec![DMatrix::zeros(2, 1)]).unwrap();
    assert!(synthesize_sampled_lpv(&unstable, (-1.0, 1.0), &[0.3], 1.0, &opts()).is_err());
}

#[test]
fn affine_gain_clamps_outside_domain() {
    let vdp = PhysicalPlant::van_der_pol();
    let r = synthesize_sampled_lpv(&vdp, (-24.0, 1.0), &[-20.0, -5.0, 0.0], 1.0, &opts()).unwrap();
    let inside = r.gain.evaluate(1.0).unwrap();
    let outside = r.gain.evaluate(3.0).unwrap();
    assert!(!inside.clamped && outside.clamped);
    assert_eq!(inside.k, outside.k);
    assert!(r.gain.evaluate(-100.0).unwrap().clamped);
}

#[test]
fn expansion_evaluates_and_lifts() {
    let basis = PolyBasis::new(Distribution::Uniform { lo: -24.0, hi: 1.0 }, 1).unwrap();
    let g = GainExpansion::from_blocks(&[mat(1, 2, &[-3.0, -1.0]), mat(1, 2, &[2.0, 0.5])], basis)
        .unwrap();
    // rho = 1 is xi = 1 where phi = (1, 1); rho = -24 is xi = -1
    assert_eq!(g.evaluate(1.0).k, mat(1, 2, &[-1.0, -0.5]));
    assert_eq!(g.evaluate(-24.0).k, mat(1, 2, &[-5.0, -1.5]));
    assert!(g.evaluate(2.0).clamped);
    let higher = PolyBasis::new(g.basis().distribution(), 3).unwrap();
    let lifted = g.lift(&higher).unwrap();
    assert_eq!(lifted.blocks().len(), 4);
    for rho in [-24.0, -10.0, 0.3, 1.0] {
        assert_abs_diff_eq!(lifted.evaluate(rho).k, g.evaluate(rho).k, epsilon = 1e-12);
    }
    let other = PolyBasis::new(Distribution::Uniform { lo: -1.0, hi: 1.0 }, 3).unwrap();
    assert!(g.lift(&other).is_err());
    assert!(GainExpansion::new(DMatrix::zeros(3, 2), higher).is_err());
}

#[test]
fn theorem2_on_gaussian_parameter() {
    let basis = PolyBasis::new(
        Distribution::Gaussian {
            mean: -1.0,
            stddev: 0.5,
        },
        2,
    )
    .unwrap();
    let a = MatrixPolynomial::new(
        basis.family(),
        vec![
            mat(2, 2, &[0.0, 1.0, -1.0, -1.0]),
            mat(2, 2, &[0.0, 0.0, 0.0, 0.5]),
        ],
    )
    .unwrap();
    let b = MatrixPolynomial::constant(basis.family(), mat(2, 1, &[0.0, 1.0])).unwrap();
    let plant = StochasticPlant::new(a, b, basis).unwrap();
    let r = synthesize_theorem2(&plant, 1.0, &opts()).unwrap();
    assert!(verify_ems(&plant, &r, &algebraic_only()).unwrap().passed);
}

fn stable_margin(a: &DMatrix<f64>, alpha: f64) -> f64 {
    spectral_abscissa(&(a + DMatrix::identity(a.nrows(), a.nrows()) * (alpha / 2.0)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// Both chaos designs (at p = 0) and the LTI design agree on
    /// feasibility for constant plants, and every gain found is stabilizing.
    #[test]
    fn constant_plants_collapse(
        n in 1usize..=3,
        with_input in any::<bool>(),
        entries in proptest::collection::vec(-2.0f64..2.0, 12),
    ) {
        let a = DMatrix::from_fn(n, n, |i, j| entries[i * n + j]);
        let b = if with_input {
            DMatrix::from_fn(n, 1, |i, _| entries[9 + i])
        } else {
            DMatrix::zeros(n, 1)
        };
        // without input, feasibility is decided by the spectrum; skip near-ties
        prop_assume!(with_input || stable_margin(&a, 1.0).abs() > 0.05);
        let plant = constant_plant(a.clone(), b.clone(), 0);
        let outcomes = [
            synthesize_theorem1(&plant, 1.0, &opts()),
            synthesize_theorem2(&plant, 1.0, &opts()),
            synthesize_lti(&a, &b, 1.0, &opts()),
        ];
        let status: Vec<bool> = outcomes.iter().map(|r| r.is_ok()).collect();
        prop_assert!(status.iter().all(|&s| s == status[0]), "{:?}", status);
        for r in outcomes.iter().flatten() {
            let k = r.gain.evaluate(0.0).unwrap().k;
            prop_assert!(spectral_abscissa(&(&a + &b * k)) < 0.0);
        }
        if !with_input {
            prop_assert_eq!(status[0], stable_margin(&a, 1.0) < 0.0);
        }
    }

    /// Adding samples only adds constraints.
    #[test]
    fn sample_subsets_stay_feasible(
        samples in proptest::collection::vec(-24.0f64..1.0, 3..8),
        keep in 1usize..3,
    ) {
        let vdp = PhysicalPlant::van_der_pol();
        if synthesize_sampled_lpv(&vdp, (-24.0, 1.0), &samples, 1.0, &opts()).is_ok() {
            let subset = &samples[..keep];
            prop_assert!(synthesize_sampled_lpv(&vdp, (-24.0, 1.0), subset, 1.0, &opts()).is_ok());
        }
    }
}
