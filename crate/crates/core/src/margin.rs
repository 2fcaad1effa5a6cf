//! Standard and adversarial margins of a labelled sample.
//!
//! Both are instances of
//!
//! ```text
//! max_{‖θ‖_b ≤ 1}  F(θ),   F(θ) = min_i y_i θᵀx_i − ε‖θ‖_q
//! ```
//!
//! with `b = q, ε = 0` for the standard margin γ̄ and `b = 2` for the
//! adversarial margin γ. `F` is concave, so the solver is projected
//! supergradient ascent with target-level Polyak steps and iterate averaging,
//! started from the normalised `Σ y_i x_i`.
//!
//! Any simplex weights `λ` give the upper bound
//! `min_{‖u‖_p ≤ ε} ‖Zᵀλ − u‖_{b*} ≥ max F`. The solver builds `λ` from the
//! step-weighted frequencies of the active constraint and reports the
//! difference to the achieved value as `certificate_gap`.

use crate::data::{Dataset, Matrix};
use crate::rng::{derive, CounterRng};
use crate::norms::{dot, l2_norm, lp_norm, project_onto_ball, q_norm_subgradient, Exponent, PerturbationModel};

#[derive(Clone, Debug, PartialEq)]
pub struct MarginResult {
    /// Unit vector: in `‖·‖_q` for the standard margin, in `‖·‖₂` for the adversarial one.
    pub direction: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    /// Upper bound on `optimum − value`.
    pub certificate_gap: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct SolverOptions {
    pub max_iters: usize,
    pub gap_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iters: 5000,
            gap_tol: 1e-7,
        }
    }
}

/// γ̄ = max over `‖θ‖_q = 1` of `min_i y_i θᵀx_i`. Negative iff the sample is
/// not linearly separable.
pub fn standard_margin(ds: &Dataset, q: Exponent) -> MarginResult {
    solve(&ds.signed_features(), 0.0, q, q, SolverOptions::default())
}

/// γ = max over `‖θ‖₂ = 1` of `min_i (y_i θᵀx_i − ε‖θ‖_q)`.
pub fn adversarial_margin(ds: &Dataset, model: &PerturbationModel) -> MarginResult {
    solve(
        &ds.signed_features(),
        model.epsilon,
        model.q,
        Exponent::TWO,
        SolverOptions::default(),
    )
}

/// `min_i z_iᵀθ − ε‖θ‖_q` evaluated directly from the rows of `z`.
pub fn margin_value(z: &Matrix, theta: &[f64], epsilon: f64, q: Exponent) -> f64 {
    evaluate(z, theta, epsilon, q).0
}

fn evaluate(z: &Matrix, theta: &[f64], epsilon: f64, q: Exponent) -> (f64, usize) {
    let penalty = if epsilon > 0.0 { epsilon * lp_norm(theta, q) } else { 0.0 };
    let mut best = (f64::INFINITY, 0);
    for (i, row) in z.iter_rows().enumerate() {
        let m = dot(row, theta);
        if m < best.0 {
            best = (m, i);
        }
    }
    (best.0 - penalty, best.1)
}

struct Problem<'a> {
    z: &'a Matrix,
    epsilon: f64,
    q: Exponent,
    ball: Exponent,
}

impl Problem<'_> {
    fn eval(&self, theta: &[f64]) -> (f64, usize) {
        evaluate(self.z, theta, self.epsilon, self.q)
    }

    fn supergradient(&self, theta: &[f64], active: usize) -> Vec<f64> {
        let mut g = self.z.row(active).to_vec();
        if self.epsilon > 0.0 {
            let s = q_norm_subgradient(theta, self.q);
            g.iter_mut().zip(&s).for_each(|(gi, si)| *gi -= self.epsilon * si);
        }
        g
    }

    fn project(&self, v: &[f64]) -> Vec<f64> {
        project_onto_ball(v, self.ball, 1.0)
    }

    fn normalize(&self, v: &[f64]) -> Option<Vec<f64>> {
        let n = lp_norm(v, self.ball);
        (n > 0.0 && n.is_finite()).then(|| v.iter().map(|x| x / n).collect())
    }

    /// Dual bound for simplex weights `lambda`.
    fn upper_bound(&self, lambda: &[f64]) -> f64 {
        let v = self.z.tr_mul_vec(lambda);
        if self.epsilon == 0.0 {
            return lp_norm(&v, self.ball.dual());
        }
        if self.ball == Exponent::TWO {
            let u = project_onto_ball(&v, self.q.dual(), self.epsilon);
            let diff: Vec<f64> = v.iter().zip(&u).map(|(a, b)| a - b).collect();
            return l2_norm(&diff);
        }
        // loose but valid: ε‖θ‖_q ≥ 0
        lp_norm(&v, self.ball.dual())
    }

    // Euclidean radius of the unit `ball`, used as the path budget of the level method.
    fn l2_radius(&self) -> f64 {
        let d = self.z.cols() as f64;
        match self.ball {
            Exponent::Infinity => d.sqrt(),
            Exponent::Finite(b) if b <= 2.0 => 1.0,
            Exponent::Finite(b) => d.powf(0.5 - 1.0 / b),
        }
    }
}

/// Core solver; see the module documentation.
pub fn solve(z: &Matrix, epsilon: f64, q: Exponent, ball: Exponent, opts: SolverOptions) -> MarginResult {
    let prob = Problem { z, epsilon, q, ball };
    let n = z.rows();
    let d = z.cols();

    let sum = z.tr_mul_vec(&vec![1.0; n]);
    let mut theta = prob.normalize(&sum).unwrap_or_else(|| {
        let mut e = vec![0.0; d];
        e[0] = 1.0;
        e
    });

    let (mut f, mut active) = prob.eval(&theta);
    let mut best_f = f;
    let mut best_theta = theta.clone();

    let mut upper = prob.upper_bound(&vec![1.0 / n as f64; n]);
    let mut total_w = vec![0.0; n];
    let mut window_w = vec![0.0; n];
    let mut avg = vec![0.0; d];
    let mut avg_weight = 0.0;

    let budget = 2.0 * prob.l2_radius();
    let mut delta = ((upper - best_f) / 2.0).max(1e-12 * (1.0 + best_f.abs()));
    let mut path = 0.0;
    let mut level_base = best_f;
    let mut iterations = 0;

    while iterations < opts.max_iters && upper - best_f > opts.gap_tol {
        iterations += 1;
        let g = prob.supergradient(&theta, active);
        let gn2 = dot(&g, &g);
        if gn2 == 0.0 {
            break;
        }
        let level = (best_f + delta).min(upper);
        let step = ((level - f) / gn2).max(0.0);
        total_w[active] += step;
        window_w[active] += step;

        let moved: Vec<f64> = theta.iter().zip(&g).map(|(t, gi)| t + step * gi).collect();
        theta = prob.project(&moved);
        path += step * gn2.sqrt();

        (f, active) = prob.eval(&theta);
        avg.iter_mut().zip(&theta).for_each(|(a, t)| *a += step * t);
        avg_weight += step;
        if f > best_f {
            best_f = f;
            best_theta.clone_from(&theta);
        }

        if best_f >= level_base + delta / 2.0 {
            level_base = best_f;
            path = 0.0;
        } else if path > budget {
            delta /= 2.0;
            path = 0.0;
            level_base = best_f;
            theta.clone_from(&best_theta);
            (f, active) = prob.eval(&theta);
        }

        if iterations % 50 == 0 {
            if avg_weight > 0.0 {
                let a: Vec<f64> = avg.iter().map(|x| x / avg_weight).collect();
                let fa = prob.eval(&a).0;
                if fa > best_f {
                    best_f = fa;
                    best_theta = a;
                }
            }
            avg.iter_mut().for_each(|x| *x = 0.0);
            avg_weight = 0.0;
            for w in [&mut total_w, &mut window_w] {
                let s: f64 = w.iter().sum();
                if s > 0.0 {
                    let lambda: Vec<f64> = w.iter().map(|x| x / s).collect();
                    upper = upper.min(prob.upper_bound(&lambda));
                }
            }
            window_w.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    if best_f > 0.0 {
        // positive homogeneity: rescaling onto the unit sphere can only help
        let mut direction = prob.normalize(&best_theta).unwrap_or(best_theta);
        let mut value = prob.eval(&direction).0;
        if upper - value > opts.gap_tol {
            let (polished, f) = sphere_ascent(&prob, direction.clone(), opts.max_iters);
            if f > value {
                (direction, value) = (polished, f);
            }
            iterations += opts.max_iters;
        }
        return MarginResult {
            direction,
            value,
            iterations,
            certificate_gap: (upper - value).max(0.0),
        };
    }

    // Not separable: the ball optimum is 0 at θ = 0, so search the sphere.
    let (direction, value, extra) = sphere_search(&prob, &sum, opts.max_iters);
    MarginResult {
        direction,
        value,
        iterations: iterations + extra,
        certificate_gap: (upper.max(0.0) - value).max(0.0),
    }
}

fn sphere_search(prob: &Problem<'_>, start: &[f64], iters: usize) -> (Vec<f64>, f64, usize) {
    const STARTS: usize = 8;
    const RANDOM_CANDIDATES: usize = 32;
    let d = prob.z.cols();
    let first = prob.normalize(start);
    let mut candidates: Vec<Vec<f64>> = Vec::new();
    candidates.extend(prob.z.iter_rows().filter_map(|row| prob.normalize(row)));
    let mut rng = CounterRng::new(derive(d as u64, prob.z.rows() as u64));
    for _ in 0..RANDOM_CANDIDATES {
        let v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        candidates.extend(prob.normalize(&v));
    }
    if candidates.is_empty() {
        let mut e = vec![0.0; d];
        e[0] = 1.0;
        candidates.push(e);
    }
    let mut scored: Vec<(f64, Vec<f64>)> = candidates.into_iter().map(|c| (prob.eval(&c).0, c)).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));

    let small = prob.z.rows() * d <= 4096;
    let keep = if small { scored.len() } else { STARTS };
    let starts = first.into_iter().chain(scored.into_iter().take(keep).map(|(_, c)| c));

    let mut best = (Vec::new(), f64::NEG_INFINITY);
    let mut used = 0;
    for theta in starts {
        let (t, f) = sphere_ascent(prob, theta, iters);
        used += iters;
        if f > best.1 {
            best = (t, f);
        }
    }
    (best.0, best.1, used)
}

/// Normalised supergradient ascent on the unit sphere of `prob.ball`.
fn sphere_ascent(prob: &Problem<'_>, mut theta: Vec<f64>, iters: usize) -> (Vec<f64>, f64) {
    let (mut f, mut active) = prob.eval(&theta);
    let mut best = (theta.clone(), f);
    let decay = (1e-6f64).powf(1.0 / iters.max(1) as f64);
    let mut radius = 0.5;
    for _ in 0..iters {
        let g = prob.supergradient(&theta, active);
        let gn = l2_norm(&g);
        if gn == 0.0 {
            break;
        }
        let step = radius / gn;
        radius *= decay;
        let moved: Vec<f64> = theta.iter().zip(&g).map(|(t, gi)| t + step * gi).collect();
        let Some(next) = prob.normalize(&moved) else { break };
        theta = next;
        (f, active) = prob.eval(&theta);
        if f > best.1 {
            best = (theta.clone(), f);
        }
    }
    best
}
