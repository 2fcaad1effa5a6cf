mod common;

use benign_adv::data::{generate, MixtureSpec, NoiseDist};
use benign_adv::linear::{adversarial_loss, adversarial_loss_gradient};
use benign_adv::norms::{Exponent, PerturbationModel};
use common::{away_from_kinks, finite_difference, network_gradient_error, random_net, rel_err, Fixture};

#[test]
fn linear_gradient_matches_central_differences() {
    let mut rng = Fixture::new(5);
    let spec = MixtureSpec::scaled(12, 0.3, NoiseDist::Gaussian, 0.1, 2).unwrap();
    let ds = generate(&spec, 20).unwrap();
    for (p, tol) in [(Exponent::TWO, 1e-6), (Exponent::Infinity, 1e-4), (Exponent::ONE, 1e-4)] {
        let model = PerturbationModel::new(p, 0.2).unwrap();
        let mut checked = 0;
        while checked < 50 {
            let theta: Vec<f64> = rng.normal_vec(12).iter().map(|v| 0.3 * v).collect();
            if !away_from_kinks(&theta, model.q) {
                continue;
            }
            let g = adversarial_loss_gradient(&theta, &ds, &model).unwrap();
            let fd = finite_difference(|t| adversarial_loss(t, &ds, &model).value, &theta, 1e-5);
            let e = rel_err(&g, &fd);
            assert!(e <= tol, "q={}: relative error {e:e}", model.q);
            checked += 1;
        }
    }
}

#[test]
fn network_gradients_match_central_differences() {
    let mut rng = Fixture::new(9);
    let mut checked = 0;
    while checked < 100 {
        if let Some(e) = network_gradient_error(&mut rng, 8, 10, 6, 1e-5) {
            assert!(e <= 1e-4, "relative error {e:e}");
            checked += 1;
        }
    }
}

#[test]
fn input_gradient_matches_central_differences() {
    let mut rng = Fixture::new(10);
    for _ in 0..20 {
        let net = random_net(&mut rng, 8, 10);
        let x = rng.normal_vec(10);
        let (_, g) = net.input_gradient(&x).unwrap();
        let fd = finite_difference(|v| net.forward(v).unwrap(), &x, 1e-6);
        assert!(rel_err(&g, &fd) < 1e-5);
    }
}
