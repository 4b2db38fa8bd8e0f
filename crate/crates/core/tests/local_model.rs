use hololeaf::local_model::{log_star, LocalModel, ModelPoint};
use hololeaf::oracles::{curvature_form_residual, local_holonomy_residuals, local_model_exponent, verify_local_model};
use hololeaf::C64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_lambda<R: Rng>(rng: &mut R) -> C64 {
    C64::new(rng.random_range(-2.0..2.0), rng.random_range(0.2..2.0))
}

#[test]
fn holonomy_matches_closed_form_for_random_lambda() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for k in 0..25 {
        let m = LocalModel::new(random_lambda(&mut rng)).unwrap();
        let (var, fd) = local_holonomy_residuals(&m, 4, k).unwrap();
        assert!(var < 1e-6, "lambda {}: variational {var}", m.lambda);
        assert!(fd < 1e-6, "lambda {}: finite difference {fd}", m.lambda);
    }
}

#[test]
fn curvature_form_matches_second_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for k in 0..10 {
        let m = LocalModel::new(random_lambda(&mut rng)).unwrap();
        let r = curvature_form_residual(&m, 10, k).unwrap();
        assert!(r < 1e-4, "lambda {}: {r}", m.lambda);
    }
}

#[test]
fn phi_at_zero_time_is_one() {
    let m = LocalModel::new(C64::new(0.5, 1.0)).unwrap();
    let x = ModelPoint::new(C64::new(0.3, 0.1), C64::new(-0.2, 0.4));
    assert!((m.holonomy_phi(&x, C64::new(0.0, 0.0)).unwrap() - 1.0).abs() < 1e-15);
}

#[test]
fn verify_accepts_hyperbolic_and_rejects_real_ratio() {
    let t = verify_local_model(C64::new(0.0, 1.0), 200, 3).unwrap();
    assert!(t.pass(), "{}", t.to_text());
    // Lower half-plane ratios are flipped to the oriented model.
    let t = verify_local_model(C64::new(1.0, -1.0), 200, 3).unwrap();
    assert!(t.pass(), "{}", t.to_text());
    assert!(verify_local_model(C64::new(2.0, 0.0), 10, 3).is_err());
}

#[test]
fn flip_is_an_involution_and_orients() {
    let m = LocalModel::new(C64::new(0.4, -0.9)).unwrap();
    assert!(!m.is_oriented());
    let (o, flipped) = m.oriented();
    assert!(flipped && o.is_oriented());
    assert!((o.lambda * m.lambda - 1.0).norm() < 1e-15);
    assert!((m.flipped().flipped().lambda - m.lambda).norm() < 1e-15);
}

proptest! {
    #[test]
    fn log_star_is_at_least_one_and_monotone(a in 1e-12f64..1.0, b in 1e-12f64..1.0) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(log_star(lo) >= 1.0);
        prop_assert!(log_star(lo) >= log_star(hi) - 1e-12);
    }

    #[test]
    fn sector_agrees_with_psi(
        lr in -2.0f64..2.0, li in 0.1f64..2.0,
        zr in -0.6f64..0.6, zi in -0.6f64..0.6, wr in -0.6f64..0.6, wi in -0.6f64..0.6,
        tr in -3.0f64..3.0, ti in -3.0f64..3.0,
    ) {
        let m = LocalModel::new(C64::new(lr, li)).unwrap();
        let x = ModelPoint::new(C64::new(zr, zi), C64::new(wr, wi));
        prop_assume!(x.in_bidisc() && x.z.norm() > 1e-3 && x.w.norm() > 1e-3);
        let zeta = C64::new(tr, ti);
        let s = m.sector(&x);
        let (end, inside) = m.psi(&x, zeta);
        // Boundary cases are measure zero but guard against rounding.
        prop_assume!((end.z.norm() - 1.0).abs() > 1e-9 && (end.w.norm() - 1.0).abs() > 1e-9);
        prop_assert_eq!(s.contains(zeta), inside);
    }
}

#[test]
fn pure_local_model_contracts() {
    let x = ModelPoint::new(C64::new(0.5, 0.0), C64::new(0.0, 0.5));
    let r = local_model_exponent(C64::new(0.0, 1.0), x, 256, 100.0, 1e-3, 12).unwrap();
    assert!(r.chi.hi() < 0.0, "{:?}", r.chi);
    assert!(r.chi_kappa.hi() < 0.0, "{:?}", r.chi_kappa);
    // Dynkin: both channels estimate E[log Phi(zeta_T)] / T.
    assert!(r.chi.discrepancy(&r.chi_kappa) <= 2.0, "{r:?}");
}
