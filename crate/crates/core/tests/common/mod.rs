//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use benign_adv::data::{Dataset, Matrix, MixtureSpec, NoiseDist};
use benign_adv::neural::{loss_and_gradients, TwoLayerNet};
use benign_adv::norms::{lp_norm, Exponent};

/// Tiny deterministic generator for test fixtures (xorshift64*), kept apart
/// from the library RNG.
pub struct Fixture(u64);

impl Fixture {
    pub fn new(seed: u64) -> Self {
        Self(seed.wrapping_mul(0x2545_F491_4F6C_DD1D) | 1)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 ^= self.0 >> 12;
        self.0 ^= self.0 << 25;
        self.0 ^= self.0 >> 27;
        self.0.wrapping_mul(0x2545_F491_4F6C_DD1D)
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn sign(&mut self) -> f64 {
        if self.uniform() < 0.5 { -1.0 } else { 1.0 }
    }

    pub fn normal_vec(&mut self, d: usize) -> Vec<f64> {
        (0..d).map(|_| self.normal()).collect()
    }
}

pub fn dataset_from(rows: Vec<Vec<f64>>, labels: Vec<f64>) -> Dataset {
    let d = rows[0].len();
    let spec = MixtureSpec::new(vec![0.0; d], NoiseDist::Gaussian, 0.0, 0).unwrap();
    Dataset::new(Matrix::from_rows(&rows).unwrap(), labels.clone(), labels, spec).unwrap()
}

/// Dense scan of `directions` unit vectors in d = 2.
///
/// Each direction `(cos a, sin a)` is rescaled to unit `‖·‖_sphere`, and the
/// best value of `min_i z_iᵀθ − ε‖θ‖_q` is returned.
pub fn grid_margin_2d(z: &[[f64; 2]], epsilon: f64, q: Exponent, sphere: Exponent, directions: usize) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for k in 0..directions {
        let a = k as f64 / directions as f64 * std::f64::consts::TAU;
        let raw = [a.cos(), a.sin()];
        let s = lp_norm(&raw, sphere);
        let t = [raw[0] / s, raw[1] / s];
        let pen = epsilon * lp_norm(&t, q);
        let m = z
            .iter()
            .map(|r| r[0] * t[0] + r[1] * t[1])
            .fold(f64::INFINITY, f64::min);
        best = best.max(m - pen);
    }
    best
}

/// Central finite-difference gradient.
pub fn finite_difference<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let orig = xp[i];
        xp[i] = orig + h;
        let fp = f(&xp);
        xp[i] = orig - h;
        let fm = f(&xp);
        xp[i] = orig;
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Φ from a rational erfc approximation, independent of the library's.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc_approx(-x / std::f64::consts::SQRT_2)
}

// W. J. Cody's rational Chebyshev approximation as given in Numerical
// Recipes (erfcc), relative error < 1.2e-7 everywhere.
fn erfc_approx(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let ans = t * (-z * z - 1.26551223
        + t * (1.00002368
            + t * (0.37409196
                + t * (0.09678418
                    + t * (-0.18628806
                        + t * (0.27886807
                            + t * (-1.13520398 + t * (1.48851587 + t * (-0.82215223 + t * 0.17087277)))))))))
        .exp();
    if x >= 0.0 { ans } else { 2.0 - ans }
}

/// `‖v‖_p` straight from the definition.
pub fn p_norm(v: &[f64], p: Exponent) -> f64 {
    match p {
        Exponent::Infinity => v.iter().fold(0.0, |m, x| m.max(x.abs())),
        Exponent::Finite(p) => v.iter().map(|x| x.abs().powf(p)).sum::<f64>().powf(1.0 / p),
    }
}

/// `‖a − b‖₂ / ‖b‖₂`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let base: f64 = b.iter().map(|x| x * x).sum();
    (diff / base.max(1e-300)).sqrt()
}

/// True when `‖·‖_q` is differentiable at `theta` with room for a finite
/// difference step well below `1e-3`.
pub fn away_from_kinks(theta: &[f64], q: Exponent) -> bool {
    match q {
        Exponent::Finite(v) if v == 1.0 => theta.iter().all(|t| t.abs() > 1e-3),
        Exponent::Infinity => {
            let mut m: Vec<f64> = theta.iter().map(|t| t.abs()).collect();
            m.sort_by(|a, b| b.total_cmp(a));
            m.len() < 2 || m[0] - m[1] > 1e-3
        }
        _ => true,
    }
}

/// Plain gradient descent on `Σ exp(−y_i θᵀx_i)` from zero, every iterate.
pub fn reference_gd(ds: &Dataset, step: f64, iters: usize) -> Vec<Vec<f64>> {
    let n = ds.len();
    let d = ds.dim();
    let z: Vec<Vec<f64>> = (0..n).map(|i| ds.x(i).iter().map(|v| v * ds.labels[i]).collect()).collect();
    let mut theta = vec![0.0; d];
    let mut out = vec![theta.clone()];
    for _ in 0..iters {
        let mut grad = vec![0.0; d];
        for row in &z {
            let mut m = 0.0;
            for j in 0..d {
                m += row[j] * theta[j];
            }
            let w = (-m).exp();
            for j in 0..d {
                grad[j] += w * row[j];
            }
        }
        for j in 0..d {
            theta[j] -= step * -grad[j];
        }
        out.push(theta.clone());
    }
    out
}

pub fn random_net(rng: &mut Fixture, h: usize, d: usize) -> TwoLayerNet {
    let rows: Vec<Vec<f64>> = (0..h)
        .map(|_| rng.normal_vec(d).iter().map(|v| v / (d as f64).sqrt()).collect())
        .collect();
    TwoLayerNet::new(
        Matrix::from_rows(&rows).unwrap(),
        rng.normal_vec(h).iter().map(|v| 0.1 * v).collect(),
        rng.normal_vec(h).iter().map(|v| v / (h as f64).sqrt()).collect(),
        0.1 * rng.normal(),
    )
    .unwrap()
}

/// Finite-difference check of the network loss gradient on a random batch.
/// `None` when a pre-activation sits close enough to zero that the
/// difference step could cross the ReLU kink.
pub fn network_gradient_error(rng: &mut Fixture, h: usize, d: usize, n: usize, step: f64) -> Option<f64> {
    let net = random_net(rng, h, d);
    let xs: Vec<Vec<f64>> = (0..n).map(|_| rng.normal_vec(d)).collect();
    let ys: Vec<f64> = (0..n).map(|_| rng.sign()).collect();
    let reach = xs.iter().map(|x| x.iter().map(|v| v.abs()).sum::<f64>() + 1.0).fold(0.0, f64::max) * step * 10.0;
    let near_kink = xs.iter().any(|x| {
        (0..h).any(|j| {
            let a: f64 = net.w1.row(j).iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + net.b1[j];
            a.abs() < reach
        })
    });
    if near_kink {
        return None;
    }
    let (_, grad) = loss_and_gradients(&net, &xs, &ys).unwrap();
    let theta: Vec<f64> = net.params().collect();
    let fd = finite_difference(
        |t| {
            let mut probe = net.clone();
            for (p, v) in probe.params_mut().zip(t) {
                *p = *v;
            }
            loss_and_gradients(&probe, &xs, &ys).unwrap().0
        },
        &theta,
        step,
    );
    Some(rel_err(&grad.params().collect::<Vec<_>>(), &fd))
}
