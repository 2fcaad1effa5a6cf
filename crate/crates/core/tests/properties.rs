
use proptest::prelude::*;

use benign_adv::data::{generate, sample_point, MixtureSpec, NoiseDist};
use benign_adv::linear::adversarial_loss;
use benign_adv::margin::adversarial_margin;
use benign_adv::neural::{pgd_attack, PgdConfig, TwoLayerNet};
use benign_adv::norms::{
    dot, dual_exponent, l2_norm, lp_norm, project_onto_ball, q_norm_subgradient, worst_case_perturbation, Exponent,
    PerturbationModel,
};

fn exponent() -> impl Strategy<Value = Exponent> {
    prop_oneof![
        Just(Exponent::ONE),
        Just(Exponent::Finite(1.5)),
        Just(Exponent::TWO),
        Just(Exponent::Finite(3.0)),
        Just(Exponent::Finite(4.0)),
        Just(Exponent::Infinity),
        (1.05f64..8.0).prop_map(Exponent::Finite),
    ]
}

fn vector(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, 1..=max_len)
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn subgradient_identities(theta in vector(30), q in exponent()) {
        prop_assume!(theta.iter().any(|&v| v != 0.0));
        let g = q_norm_subgradient(&theta, q);
        let p = q.dual();
        prop_assert!(close(lp_norm(&g, p), 1.0, 1e-12));
        prop_assert!(close(dot(&theta, &g), lp_norm(&theta, q), 1e-12));
        prop_assert!(l2_norm(&g) <= (theta.len() as f64).sqrt() * (1.0 + 1e-12));
    }

    #[test]
    fn dual_exponents_are_conjugate(p in 1.0001f64..50.0) {
        let q = dual_exponent(p).unwrap();
        prop_assert!(close(1.0 / p + 1.0 / q.as_f64(), 1.0, 1e-12));
        prop_assert!(close(q.dual().as_f64(), p, 1e-9));
    }

    #[test]
    fn closed_form_dominates_random_perturbations(
        theta in vector(12),
        x in vector(12),
        y in prop_oneof![Just(1.0), Just(-1.0)],
        p in exponent(),
        eps in 0.0f64..1.0,
        dirs in prop::collection::vec(vector(12), 20),
    ) {
        let d = theta.len().min(x.len());
        let (theta, x) = (&theta[..d], &x[..d]);
        let model = PerturbationModel::new(p, eps).unwrap();
        let worst = y * dot(theta, x) - eps * lp_norm(theta, model.q);
        let u = worst_case_perturbation(theta, y, &model);
        prop_assert!(lp_norm(&u, p) <= eps * (1.0 + 1e-12));
        let xs: Vec<f64> = x.iter().zip(&u).map(|(a, b)| a + b).collect();
        prop_assert!(close(y * dot(theta, &xs), worst, 1e-12));
        for dir in dirs {
            let mut v: Vec<f64> = dir.iter().cycle().take(d).copied().collect();
            let n = lp_norm(&v, p);
            if n > 0.0 {
                v.iter_mut().for_each(|c| *c *= eps / n);
            }
            let xp: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + b).collect();
            prop_assert!(y * dot(theta, &xp) >= worst - 1e-9 * (1.0 + worst.abs()));
        }
    }

    #[test]
    fn projection_is_feasible_and_idempotent(v in vector(20), p in exponent(), radius in 0.01f64..5.0) {
        let u = project_onto_ball(&v, p, radius);
        prop_assert!(lp_norm(&u, p) <= radius * (1.0 + 1e-10));
        if lp_norm(&v, p) <= radius {
            prop_assert_eq!(&u, &v);
        }
        let w = project_onto_ball(&u, p, radius);
        for (a, b) in u.iter().zip(&w) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn loss_grows_with_radius(seed in 0u64..1000, e1 in 0.0f64..0.5, e2 in 0.0f64..0.5) {
        let spec = MixtureSpec::scaled(15, 0.3, NoiseDist::Gaussian, 0.1, seed).unwrap();
        let ds = generate(&spec, 10).unwrap();
        let theta: Vec<f64> = spec.mu.iter().map(|m| m * 0.2).collect();
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        for p in [Exponent::TWO, Exponent::Infinity] {
            let a = adversarial_loss(&theta, &ds, &PerturbationModel::new(p, lo).unwrap());
            let b = adversarial_loss(&theta, &ds, &PerturbationModel::new(p, hi).unwrap());
            prop_assert!(a.value <= b.value);
        }
    }

    #[test]
    fn samples_are_reproducible(seed in any::<u64>(), index in 0u64..1_000_000) {
        let spec = MixtureSpec::scaled(8, 0.3, NoiseDist::Rademacher, 0.2, 0).unwrap();
        let mut a = vec![0.0; 8];
        let mut b = vec![0.0; 8];
        let ya = sample_point(&spec, seed, index, &mut a);
        let yb = sample_point(&spec, seed, index, &mut b);
        prop_assert_eq!(ya, yb);
        prop_assert_eq!(a, b);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pgd_stays_in_ball(seed in 0u64..10_000, x in prop::collection::vec(-3.0f64..3.0, 6), p in prop_oneof![Just(Exponent::TWO), Just(Exponent::Infinity), Just(Exponent::Finite(3.0))], eps in 0.0f64..0.5) {
        let net = TwoLayerNet::xavier(8, 6, seed).unwrap();
        let model = PerturbationModel::new(p, eps).unwrap();
        let out = pgd_attack(&net, &x, 1.0, &PgdConfig::new(model)).unwrap();
        let delta: Vec<f64> = out.x_adv.iter().zip(&x).map(|(a, b)| a - b).collect();
        prop_assert!(lp_norm(&delta, p) <= eps * (1.0 + 1e-12) + 1e-15);
        prop_assert!(out.trace.iter().all(|&l| l <= out.loss));
        prop_assert!(out.loss >= out.trace[0]);
    }

    #[test]
    fn adversarial_margin_shrinks_with_radius(seed in 0u64..10_000) {
        let spec = MixtureSpec::scaled(2, 0.8, NoiseDist::Gaussian, 0.0, seed).unwrap();
        let ds = generate(&spec, 3).unwrap();
        let mut prev = f64::INFINITY;
        for eps in [0.0, 0.05, 0.1, 0.2, 0.4] {
            let m = adversarial_margin(&ds, &PerturbationModel::new(Exponent::TWO, eps).unwrap()).value;
            prop_assert!(m <= prev + 1e-6, "eps {} margin {} after {}", eps, m, prev);
            prev = m;
        }
    }
}
