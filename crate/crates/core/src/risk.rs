//! Standard and adversarial population risk of a linear classifier.
//!
//! A point is adversarially misclassified iff `y θᵀx − ε‖θ‖_q < 0`; with
//! `ε = 0` this is ordinary misclassification. Equality counts as correct.

use std::fmt;

use rayon::prelude::*;
use libm::erfc;

use crate::data::{sample_point, MixtureSpec, NoiseDist};
use crate::error::{Error, Result};
use crate::norms::{dot, l2_norm, lp_norm, PerturbationModel};
use crate::rng::{derive, namespace};

const BLOCK: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RiskMethod {
    MonteCarlo,
    Analytic,
}

impl fmt::Display for RiskMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RiskMethod::MonteCarlo => "monte_carlo",
            RiskMethod::Analytic => "analytic",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RiskReport {
    pub std_risk: f64,
    pub adv_risk: f64,
    pub method: RiskMethod,
    /// 0 for analytic reports.
    pub mc_samples: usize,
    /// Binomial standard error of `std_risk`.
    pub mc_stderr: f64,
    /// Binomial standard error of `adv_risk`.
    pub adv_mc_stderr: f64,
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

pub fn misclassified_adversarially(theta: &[f64], x: &[f64], y: f64, model: &PerturbationModel) -> bool {
    let penalty = if model.epsilon > 0.0 {
        model.epsilon * lp_norm(theta, model.q)
    } else {
        0.0
    };
    y * dot(theta, x) - penalty < 0.0
}

/// Fraction of `m` fresh draws misclassified, with and without perturbation.
///
/// Draws come from the evaluation namespace of `seed`, disjoint from the
/// streams used to build training sets.
pub fn monte_carlo_risk(theta: &[f64], spec: &MixtureSpec, model: &PerturbationModel, m: usize, seed: u64) -> Result<RiskReport> {
    if m == 0 {
        return Err(Error::domain("monte carlo sample count must be at least 1"));
    }
    if theta.len() != spec.dim() {
        return Err(Error::Shape(format!("θ has length {}, spec dimension {}", theta.len(), spec.dim())));
    }
    let stream = derive(seed, namespace::EVAL);
    let penalty = model.epsilon * lp_norm(theta, model.q);
    let blocks = m.div_ceil(BLOCK);
    let (std_err, adv_err) = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut x = vec![0.0; spec.dim()];
            let (mut s, mut a) = (0usize, 0usize);
            for k in b * BLOCK..((b + 1) * BLOCK).min(m) {
                let (y, _) = sample_point(spec, stream, k as u64, &mut x);
                let margin = y * dot(theta, &x);
                s += (margin < 0.0) as usize;
                a += (margin - penalty < 0.0) as usize;
            }
            (s, a)
        })
        .reduce(|| (0, 0), |l, r| (l.0 + r.0, l.1 + r.1));
    Ok(binomial_report(std_err, adv_err, m))
}

pub(crate) fn binomial_report(std_err: usize, adv_err: usize, m: usize) -> RiskReport {
    let mf = m as f64;
    let sr = std_err as f64 / mf;
    let ar = adv_err as f64 / mf;
    RiskReport {
        std_risk: sr,
        adv_risk: ar,
        method: RiskMethod::MonteCarlo,
        mc_samples: m,
        mc_stderr: (sr * (1.0 - sr) / mf).sqrt(),
        adv_mc_stderr: (ar * (1.0 - ar) / mf).sqrt(),
    }
}

/// Exact risk under Gaussian noise.
///
/// With `ỹx ~ N(μ, I)` the signed clean score `ỹθᵀx` is
/// `N(θᵀμ, ‖θ‖₂²)`. A clean-labelled point is adversarially wrong when that
/// score falls below `ε‖θ‖_q`, probability `Φ(−a)` with
/// `a = (θᵀμ − ε‖θ‖_q)/‖θ‖₂`. A flipped label negates the score, so the point
/// is wrong when the clean score exceeds `−ε‖θ‖_q`, probability `Φ(a′)` with
/// `a′ = (θᵀμ + ε‖θ‖_q)/‖θ‖₂`. Mixing over the flip gives
/// `(1−η)Φ(−a) + ηΦ(a′)`; the standard risk is the `ε = 0` case.
pub fn analytic_risk(theta: &[f64], spec: &MixtureSpec, model: &PerturbationModel) -> Result<RiskReport> {
    if spec.noise != NoiseDist::Gaussian {
        return Err(Error::Unsupported(format!(
            "analytic risk needs gaussian noise, spec has {}",
            spec.noise
        )));
    }
    if theta.len() != spec.dim() {
        return Err(Error::Shape(format!("θ has length {}, spec dimension {}", theta.len(), spec.dim())));
    }
    let norm = l2_norm(theta);
    if norm == 0.0 {
        return Err(Error::domain("analytic risk is undefined at θ = 0"));
    }
    let eta = spec.eta;
    let signal = dot(theta, &spec.mu);
    let shift = model.epsilon * lp_norm(theta, model.q);
    let b = signal / norm;
    let a = (signal - shift) / norm;
    let a_flip = (signal + shift) / norm;
    Ok(RiskReport {
        std_risk: (1.0 - eta) * normal_cdf(-b) + eta * normal_cdf(b),
        adv_risk: (1.0 - eta) * normal_cdf(-a) + eta * normal_cdf(a_flip),
        method: RiskMethod::Analytic,
        mc_samples: 0,
        mc_stderr: 0.0,
        adv_mc_stderr: 0.0,
    })
}

/// Smallest achievable standard risk for the mixture, `η + (1−2η)Φ(−‖μ‖₂)`,
/// attained by `θ ∝ μ`.
pub fn bayes_linear_risk(spec: &MixtureSpec) -> f64 {
    spec.eta + (1.0 - 2.0 * spec.eta) * normal_cdf(-l2_norm(&spec.mu))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::norms::Exponent;

    fn model(p: Exponent, eps: f64) -> PerturbationModel {
        PerturbationModel::new(p, eps).unwrap()
    }

    #[test]
    fn exact_condition_examples() {
        let m1 = model(Exponent::TWO, 1.0);
        assert!(!misclassified_adversarially(&[1.0, 0.0], &[2.0, 0.0], 1.0, &m1));
        let m3 = model(Exponent::TWO, 3.0);
        assert!(misclassified_adversarially(&[1.0, 0.0], &[2.0, 0.0], 1.0, &m3));
        let m0 = model(Exponent::TWO, 0.0);
        assert!(!misclassified_adversarially(&[1.0, 0.0], &[0.0, 5.0], 1.0, &m0));
    }

    #[test]
    fn normal_cdf_values() {
        assert_eq!(normal_cdf(0.0), 0.5);
        // reference values from 30-digit arithmetic
        let rel = |a: f64, b: f64| ((a - b) / b).abs();
        assert!(rel(normal_cdf(-2.0), 0.0227501319481792072) < 1e-12);
        assert!(rel(normal_cdf(2.0), 0.977249868051820793) < 1e-12);
        assert!(rel(normal_cdf(-8.0), 6.22096057427178412e-16) < 1e-12);
    }

    #[test]
    fn analytic_examples() {
        let mu = vec![2.0, 0.0];
        let spec = MixtureSpec::new(mu.clone(), NoiseDist::Gaussian, 0.1, 0).unwrap();
        let r = analytic_risk(&mu, &spec, &model(Exponent::TWO, 0.0)).unwrap();
        assert!((r.std_risk - 0.118200).abs() < 1e-6);
        assert!((r.std_risk - (0.9 * normal_cdf(-2.0) + 0.1 * normal_cdf(2.0))).abs() < 1e-15);

        let zero = MixtureSpec::new(vec![0.0, 0.0], NoiseDist::Gaussian, 0.0, 0).unwrap();
        let r = analytic_risk(&[1.0, 1.0], &zero, &model(Exponent::TWO, 0.0)).unwrap();
        assert_eq!(r.std_risk, 0.5);

        let clean = MixtureSpec::new(mu.clone(), NoiseDist::Gaussian, 0.0, 0).unwrap();
        let r = analytic_risk(&mu, &clean, &model(Exponent::TWO, 0.5)).unwrap();
        assert!((r.adv_risk - normal_cdf(-(2.0 - 0.5))).abs() < 1e-15);
    }

    #[test]
    fn analytic_errors() {
        let spec = MixtureSpec::new(vec![1.0], NoiseDist::Rademacher, 0.1, 0).unwrap();
        assert!(matches!(
            analytic_risk(&[1.0], &spec, &PerturbationModel::clean()),
            Err(Error::Unsupported(_))
        ));
        let spec = MixtureSpec::new(vec![1.0], NoiseDist::Gaussian, 0.1, 0).unwrap();
        assert!(matches!(analytic_risk(&[0.0], &spec, &PerturbationModel::clean()), Err(Error::Domain(_))));
    }

    #[test]
    fn analytic_adv_risk_monotone_in_epsilon() {
        let spec = MixtureSpec::new(vec![1.0, 0.5, -0.2], NoiseDist::Gaussian, 0.15, 0).unwrap();
        let theta = [0.7, 0.1, 0.3];
        let mut last = 0.0;
        for k in 0..50 {
            let r = analytic_risk(&theta, &spec, &model(Exponent::Infinity, k as f64 * 0.05)).unwrap();
            assert!(r.adv_risk >= last);
            assert!(r.adv_risk >= r.std_risk);
            last = r.adv_risk;
        }
    }

    #[test]
    fn monte_carlo_large_signal() {
        let spec = MixtureSpec::scaled(16, 0.75, NoiseDist::Gaussian, 0.0, 0).unwrap();
        assert!(l2_norm(&spec.mu) >= 8.0);
        let r = monte_carlo_risk(&spec.mu.clone(), &spec, &PerturbationModel::clean(), 100_000, 3).unwrap();
        assert!(r.std_risk <= 0.001);
        assert_eq!(r.mc_samples, 100_000);
    }

    #[test]
    fn monte_carlo_zero_classifier_counts_boundary_as_correct() {
        let spec = MixtureSpec::scaled(4, 0.3, NoiseDist::Gaussian, 0.2, 0).unwrap();
        let r = monte_carlo_risk(&[0.0; 4], &spec, &model(Exponent::TWO, 0.1), 5000, 1).unwrap();
        assert_eq!(r.std_risk, 0.0);
        assert_eq!(r.adv_risk, 0.0);
    }

    #[test]
    fn monte_carlo_is_deterministic_and_dominated() {
        let spec = MixtureSpec::scaled(10, 0.2, NoiseDist::UniformPm, 0.1, 0).unwrap();
        let theta: Vec<f64> = (0..10).map(|i| 1.0 + 0.1 * i as f64).collect();
        let m = model(Exponent::TWO, 0.3);
        let a = monte_carlo_risk(&theta, &spec, &m, 20_000, 9).unwrap();
        let b = monte_carlo_risk(&theta, &spec, &m, 20_000, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.adv_risk >= a.std_risk);
        assert!(monte_carlo_risk(&theta, &spec, &m, 0, 9).is_err());
    }
}
