mod common;

use benign_adv::margin::{adversarial_margin, standard_margin};
use benign_adv::norms::{Exponent, PerturbationModel};
use common::{dataset_from, grid_margin_2d, Fixture};

fn random_instance(rng: &mut Fixture) -> (Vec<Vec<f64>>, Vec<f64>, Vec<[f64; 2]>) {
    let rows: Vec<Vec<f64>> = (0..3).map(|_| vec![rng.normal() + 1.5, rng.normal()]).collect();
    let labels: Vec<f64> = (0..3).map(|_| rng.sign()).collect();
    let z = rows.iter().zip(&labels).map(|(r, y)| [y * r[0], y * r[1]]).collect();
    (rows, labels, z)
}

#[test]
fn standard_margin_matches_grid() {
    let mut rng = Fixture::new(1);
    let mut worst: f64 = 0.0;
    for _ in 0..30 {
        let (rows, labels, z) = random_instance(&mut rng);
        let ds = dataset_from(rows, labels);
        for q in [Exponent::ONE, Exponent::TWO, Exponent::Finite(3.0), Exponent::Infinity] {
            let got = standard_margin(&ds, q);
            let oracle = grid_margin_2d(&z, 0.0, q, q, 1_000_000);
            worst = worst.max((got.value - oracle).abs());
            assert!((got.value - oracle).abs() < 1e-3, "q={q} got {} oracle {oracle}", got.value);
        }
    }
    eprintln!("worst standard deviation {worst:e}");
}

#[test]
fn adversarial_margin_matches_grid() {
    let mut rng = Fixture::new(2);
    let mut worst: f64 = 0.0;
    for _ in 0..30 {
        let (rows, labels, z) = random_instance(&mut rng);
        let ds = dataset_from(rows, labels);
        for (p, eps) in [(Exponent::TWO, 0.1), (Exponent::Infinity, 0.05), (Exponent::ONE, 0.2)] {
            let m = PerturbationModel::new(p, eps).unwrap();
            let got = adversarial_margin(&ds, &m);
            let oracle = grid_margin_2d(&z, eps, m.q, Exponent::TWO, 1_000_000);
            worst = worst.max((got.value - oracle).abs());
            assert!((got.value - oracle).abs() < 1e-3, "p={p} got {} oracle {oracle}", got.value);
        }
    }
    eprintln!("worst adversarial deviation {worst:e}");
}
