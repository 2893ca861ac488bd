use ddce_core::fading::FadingSpec;
use ddce_core::linalg::{cholesky, hermitian_solve, kron, logdet_hpd, CMatrix};
use ddce_core::modulation::{qam_demod_hard, qam_mod, stbc_encode, Constellation, StbcCode};
use ddce_core::predictors::{kalman_predict_update, wiener_mmse_cov, KalmanState, WienerContext};
use num_complex::Complex64;
use proptest::prelude::*;

type C = Complex64;

fn complex() -> impl Strategy<Value = C> {
    (-1.0..1.0f64, -1.0..1.0f64).prop_map(|(re, im)| C::new(re, im))
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = CMatrix> {
    prop::collection::vec(complex(), rows * cols).prop_map(move |d| CMatrix::from_vec(rows, cols, d).unwrap())
}

fn sized_matrix(max: usize) -> impl Strategy<Value = CMatrix> {
    (1..=max, 1..=max).prop_flat_map(|(r, c)| matrix(r, c))
}

/// `B·Bᴴ + I`, Hermitian positive definite.
fn hpd(n: usize) -> impl Strategy<Value = CMatrix> {
    matrix(n, n).prop_map(|b| {
        let mut a = &b * &b.adjoint();
        a.add_diagonal(1.0);
        a
    })
}

/// Eigenvalues of a 2×2 Hermitian matrix.
fn eig2(m: &CMatrix) -> (f64, f64) {
    let (a, d) = (m[(0, 0)].re, m[(1, 1)].re);
    let b = m[(0, 1)].norm_sqr();
    let mid = (a + d) / 2.0;
    let r = (((a - d) / 2.0).powi(2) + b).sqrt();
    (mid - r, mid + r)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hermitian_solve_inverts((a, y) in (1usize..6).prop_flat_map(|n| (hpd(n), matrix(n, 2)))) {
        let x = hermitian_solve(&a, &y).unwrap();
        prop_assert!((&(&a * &x) - &y).max_abs() < 1e-9);
    }

    #[test]
    fn hermitian_solve_of_itself_is_identity(a in (1usize..6).prop_flat_map(hpd)) {
        let x = hermitian_solve(&a, &a).unwrap();
        prop_assert!((&x - &CMatrix::identity(a.rows())).max_abs() < 1e-9);
    }

    #[test]
    fn cholesky_round_trips(a in (1usize..7).prop_flat_map(hpd), jitter in prop::sample::select(vec![0.0, 1e-10, 1e-6])) {
        let l = cholesky(&a, jitter).unwrap();
        let mut want = a.clone();
        want.add_diagonal(jitter);
        prop_assert!((&(&l * &l.adjoint()) - &want).max_abs() < 1e-10 * want.max_abs().max(1.0));
    }

    #[test]
    fn kron_mixed_product(
        (a, c) in (1usize..4, 1usize..4, 1usize..4).prop_flat_map(|(r, k, q)| (matrix(r, k), matrix(k, q))),
        (b, d) in (1usize..3, 1usize..3, 1usize..3).prop_flat_map(|(r, k, q)| (matrix(r, k), matrix(k, q))),
    ) {
        let left = &kron(&a, &b) * &kron(&c, &d);
        let right = kron(&(&a * &c), &(&b * &d));
        prop_assert!((&left - &right).max_abs() < 1e-12);
    }

    #[test]
    fn kron_logdet_splits(a in (1usize..4).prop_flat_map(hpd), b in (1usize..4).prop_flat_map(hpd)) {
        let (na, nb) = (a.rows() as f64, b.rows() as f64);
        let want = nb * logdet_hpd(&a).unwrap() + na * logdet_hpd(&b).unwrap();
        let got = logdet_hpd(&kron(&a, &b)).unwrap();
        prop_assert!((got - want).abs() < 1e-9 * want.abs().max(1.0));
    }

    #[test]
    fn adjoint_is_involutive(m in sized_matrix(5)) {
        prop_assert_eq!(m.adjoint().adjoint(), m);
    }

    #[test]
    fn wiener_prediction_is_linear(
        (decided, y1, y2) in (1usize..=2, 1usize..=5)
            .prop_flat_map(|(n_t, w)| (matrix(n_t, w), prop::collection::vec(complex(), w), prop::collection::vec(complex(), w))),
        alpha in complex(),
        beta in complex(),
        rho in 0.0..0.1f64,
        sigma in 0.01..1.0f64,
    ) {
        let ctx = WienerContext::new(&FadingSpec::rayleigh(rho), &decided, sigma, 2).unwrap();
        let mix: Vec<C> = y1.iter().zip(&y2).map(|(a, b)| alpha * a + beta * b).collect();
        let (p1, p2, pm) = (ctx.predict(&y1).unwrap(), ctx.predict(&y2).unwrap(), ctx.predict(&mix).unwrap());
        for i in 0..pm.len() {
            prop_assert!((pm[i] - (alpha * p1[i] + beta * p2[i])).norm() < 1e-9);
        }
    }

    #[test]
    fn wiener_error_covariance_stays_in_unit_band(
        decided in (1usize..=2, 1usize..=5).prop_flat_map(|(n_t, w)| matrix(n_t, w)),
        rho in 0.0..0.1f64,
        sigma in 0.001..2.0f64,
        steps in 1usize..=3,
    ) {
        let ctx = WienerContext::new(&FadingSpec::rayleigh(rho), &decided, sigma, steps).unwrap();
        let cov = wiener_mmse_cov(&ctx);
        prop_assert!(cov.is_hermitian(1e-10));
        let n = cov.rows();
        let mut lower = cov.clone();
        lower.add_diagonal(1e-10);
        let mut upper = &CMatrix::identity(n) - &cov;
        upper.add_diagonal(1e-10);
        prop_assert!(cholesky(&lower, 0.0).is_ok(), "eigenvalue below 0");
        prop_assert!(cholesky(&upper, 0.0).is_ok(), "eigenvalue above 1");
    }

    #[test]
    fn alamouti_is_orthogonal(s1 in complex(), s2 in complex()) {
        let c = stbc_encode(StbcCode::Alamouti, &[s1, s2]).unwrap();
        let g = &c * &c.adjoint();
        let e = s1.norm_sqr() + s2.norm_sqr();
        prop_assert!((&g - &CMatrix::identity(2).scale(C::new(e, 0.0))).max_abs() < 1e-12);
    }

    #[test]
    fn kalman_covariance_stays_in_unit_band(
        rho in 0.0..0.1f64,
        sigma in 0.001..2.0f64,
        steps in prop::collection::vec((complex(), complex(), complex()), 1..40),
    ) {
        let a = ddce_core::fading::bessel_j0(2.0 * std::f64::consts::PI * rho);
        let mut state = KalmanState::stationary(2, C::new(a, 0.0), 1.0, sigma);
        for (c1, c2, y) in steps {
            state = kalman_predict_update(&state, y, &[c1, c2]).unwrap();
            prop_assert!(state.sigma.is_hermitian(1e-12));
            let (lo, hi) = eig2(&state.sigma);
            prop_assert!(lo >= -1e-10 && hi <= 1.0 + 1e-10, "eigenvalues {lo} {hi}");
        }
    }

    #[test]
    fn qam_round_trips(order in prop::sample::select(vec![4usize, 16, 64]), seed in any::<u64>()) {
        let cons = Constellation::qam(order).unwrap();
        let k = cons.bits_per_symbol();
        let bits: Vec<u8> = (0..k * 8).map(|i| ((seed >> (i % 64)) & 1) as u8).collect();
        let symbols = qam_mod(&cons, &bits).unwrap();
        prop_assert_eq!(qam_demod_hard(&cons, &symbols), bits);
    }
}
