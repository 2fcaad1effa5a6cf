use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use benign_adv::linear::{adversarial_loss, adversarial_loss_gradient, train, TrainConfig};
use benign_adv::neural::{pgd_attack, PgdConfig, TwoLayerNet};
use benign_adv::risk::monte_carlo_risk;
use benign_adv::{generate, margin, Exponent, MixtureSpec, NoiseDist, PerturbationModel};

fn spec(d: usize) -> MixtureSpec {
    MixtureSpec::scaled(d, 0.3, NoiseDist::Gaussian, 0.1, 7).unwrap()
}

fn loss_and_gradient(c: &mut Criterion) {
    let mut group = c.benchmark_group("loss_gradient");
    for d in [200, 1000, 5000] {
        let ds = generate(&spec(d), 50).unwrap();
        let theta: Vec<f64> = ds.spec.mu.iter().map(|m| m * 1e-3).collect();
        for (name, p) in [("l2", Exponent::TWO), ("linf", Exponent::Infinity)] {
            let model = PerturbationModel::new(p, 0.05).unwrap();
            group.bench_with_input(BenchmarkId::new(name, d), &d, |b, _| {
                b.iter(|| {
                    let l = adversarial_loss(black_box(&theta), &ds, &model);
                    let g = adversarial_loss_gradient(black_box(&theta), &ds, &model).unwrap();
                    (l, g)
                })
            });
        }
    }
    group.finish();
}

fn margins(c: &mut Criterion) {
    let mut group = c.benchmark_group("margin");
    group.sample_size(10);
    for d in [200, 1000] {
        let ds = generate(&spec(d), 50).unwrap();
        let model = PerturbationModel::new(Exponent::TWO, 0.1).unwrap();
        group.bench_with_input(BenchmarkId::new("adversarial_l2", d), &d, |b, _| {
            b.iter(|| margin::adversarial_margin(black_box(&ds), &model))
        });
    }
    group.finish();
}

fn training(c: &mut Criterion) {
    let mut group = c.benchmark_group("train");
    group.sample_size(10);
    let ds = generate(&spec(1000), 50).unwrap();
    let model = PerturbationModel::new(Exponent::TWO, 0.1).unwrap();
    let cfg = TrainConfig {
        iterations: 200,
        ..TrainConfig::practical(model)
    };
    group.bench_function("constant_step_d1000_t200", |b| b.iter(|| train(black_box(&ds), &cfg).unwrap()));
    group.finish();
}

fn generation(c: &mut Criterion) {
    let mut group = c.benchmark_group("generate");
    for d in [200, 5000] {
        let s = spec(d);
        group.bench_with_input(BenchmarkId::new("n50", d), &d, |b, _| b.iter(|| generate(black_box(&s), 50).unwrap()));
    }
    group.finish();
}

fn evaluation(c: &mut Criterion) {
    let mut group = c.benchmark_group("evaluate");
    group.sample_size(10);
    let s = spec(1000);
    let theta = s.mu.clone();
    let model = PerturbationModel::new(Exponent::Infinity, 0.01).unwrap();
    group.bench_function("monte_carlo_m20000_d1000", |b| {
        b.iter(|| monte_carlo_risk(black_box(&theta), &s, &model, 20_000, 1).unwrap())
    });
    let net = TwoLayerNet::xavier(32, 1000, 1).unwrap();
    let x = s.mu.clone();
    let pgd = PgdConfig::new(PerturbationModel::new(Exponent::TWO, 0.1).unwrap());
    group.bench_function("pgd10_h32_d1000", |b| b.iter(|| pgd_attack(&net, black_box(&x), 1.0, &pgd).unwrap()));
    group.finish();
}

criterion_group!(benches, loss_and_gradient, margins, training, generation, evaluation);
criterion_main!(benches);
