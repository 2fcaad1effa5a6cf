//! Adversarial exponential loss and gradient-descent adversarial training of
//! linear classifiers.
//!
//! For a linear score the inner maximisation has a closed form, so the loss is
//! `L(θ) = Σ_i exp(−y_i θᵀx_i + ε‖θ‖_q)` and training is plain full-batch
//! gradient descent on it from `θ₀ = 0`.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::data::{format_f64, Dataset, Matrix};
use crate::error::{Error, Result};
use crate::margin::{self, MarginResult};
use crate::norms::{dot, l2_norm, lp_norm, q_norm_subgradient, Exponent, PerturbationModel};
use crate::rng::{derive, namespace, CounterRng};

/// Exponents above this switch the loss to log-sum-exp accumulation.
const EXP_SWITCH: f64 = 700.0;

/// A loss value kept in both linear and log space; `value` may be `+∞`
/// when only `log` is representable.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub log: f64,
}

/// Per-sample adversarial exponents `s_i = −z_iᵀθ + ε‖θ‖_q`.
fn exponents(z: &Matrix, theta: &[f64], model: &PerturbationModel) -> Vec<f64> {
    let penalty = model.epsilon * lp_norm(theta, model.q);
    z.iter_rows().map(|row| -dot(row, theta) + penalty).collect()
}

pub(crate) fn accumulate(s: &[f64]) -> LossValue {
    let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max <= EXP_SWITCH {
        let value: f64 = s.iter().map(|v| v.exp()).sum();
        LossValue { value, log: value.ln() }
    } else {
        let log = max + s.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        LossValue { value: log.exp(), log }
    }
}

/// `Σ exp(−y_i θᵀx_i + ε‖θ‖_q)`, which equals the inner-maximised loss exactly.
pub fn adversarial_loss(theta: &[f64], ds: &Dataset, model: &PerturbationModel) -> LossValue {
    accumulate(&exponents(&ds.signed_features(), theta, model))
}

/// `−Σ (y_i x_i − ε ∂‖θ‖_q) exp(−y_i θᵀx_i + ε‖θ‖_q)`.
pub fn adversarial_loss_gradient(theta: &[f64], ds: &Dataset, model: &PerturbationModel) -> Result<Vec<f64>> {
    let z = ds.signed_features();
    let s = exponents(&z, theta, model);
    gradient_from_exponents(&z, theta, &s, model).ok_or_else(|| Error::NonFinite {
        quantity: "gradient",
        iteration: 0,
        last_theta: theta.to_vec(),
    })
}

fn gradient_from_exponents(z: &Matrix, theta: &[f64], s: &[f64], model: &PerturbationModel) -> Option<Vec<f64>> {
    let weights: Vec<f64> = s.iter().map(|v| v.exp()).collect();
    let mut grad = z.tr_mul_vec(&weights);
    let total: f64 = weights.iter().sum();
    let sub = q_norm_subgradient(theta, model.q);
    for (gj, sj) in grad.iter_mut().zip(&sub) {
        *gj = -*gj + model.epsilon * sj * total;
    }
    grad.iter().all(|g| g.is_finite()).then_some(grad)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    /// Step on `L` itself.
    Sum,
    /// Step on `L / n`, i.e. an effective step `α / n` on `L`.
    Mean,
}

impl FromStr for Reduction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "sum" => Ok(Reduction::Sum),
            "mean" => Ok(Reduction::Mean),
            other => Err(Error::Parse(format!("unknown reduction `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepRule {
    /// `α₀ = 1/(Gdn)` and `α_t = 1/(GdnM)` afterwards, with `M` built from
    /// the adversarial margin γ.
    PaperSchedule { g: f64 },
    Constant { alpha: f64, reduction: Reduction },
}

impl StepRule {
    pub fn name(&self) -> &'static str {
        match self {
            StepRule::PaperSchedule { .. } => "paper_schedule",
            StepRule::Constant { .. } => "constant",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zero,
    /// i.i.d. `N(0, 1/d)` entries drawn from the given seed.
    Xavier { seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: PerturbationModel,
    pub step: StepRule,
    pub iterations: usize,
    pub record_every: usize,
    pub init: Init,
}

impl TrainConfig {
    /// Constant `α = 0.001` on the mean loss for 1000 iterations.
    pub fn practical(model: PerturbationModel) -> Self {
        Self {
            model,
            step: StepRule::Constant {
                alpha: 0.001,
                reduction: Reduction::Mean,
            },
            iterations: 1000,
            record_every: 10,
            init: Init::Zero,
        }
    }

    pub fn paper_schedule(model: PerturbationModel, g: f64, iterations: usize) -> Self {
        Self {
            model,
            step: StepRule::PaperSchedule { g },
            iterations,
            record_every: 10,
            init: Init::Zero,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::config("iterations must be at least 1"));
        }
        if self.record_every == 0 {
            return Err(Error::config("record_every must be at least 1"));
        }
        match self.step {
            StepRule::Constant { alpha, .. } if !(alpha > 0.0) || !alpha.is_finite() => {
                Err(Error::config(format!("alpha must be positive, got {alpha}")))
            }
            StepRule::PaperSchedule { g } if !(g > 0.0) || !g.is_finite() => {
                Err(Error::config(format!("G must be positive, got {g}")))
            }
            _ => Ok(()),
        }
    }
}

/// Quantities recorded at every iterate `θ_t`, `t = 0..=T`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterStats {
    pub t: usize,
    /// Step taken from `θ_t` to `θ_{t+1}`; zero at `t = T`.
    pub step: f64,
    pub loss: f64,
    pub log_loss: f64,
    pub theta_l2: f64,
    pub theta_q: f64,
    /// `μᵀθ/‖θ‖₂`, NaN at `θ = 0`.
    pub alignment: f64,
    /// `max_k(−θᵀz_k) − min_k(−θᵀz_k)`, the log of the per-sample loss ratio.
    pub log_loss_ratio: f64,
    pub train_err: f64,
    pub adv_train_err: f64,
}

#[derive(Clone, Debug)]
pub struct TrainRecord {
    pub config: TrainConfig,
    /// `(t, θ_t)` at `t ∈ {0, 1, T}` and every `record_every` iterations.
    pub thetas: Vec<(usize, Vec<f64>)>,
    /// `(t, [y_k θ_tᵀx_k]_k)` at the same snapshots.
    pub per_sample_margins: Vec<(usize, Vec<f64>)>,
    /// One entry per iterate, length `T + 1`.
    pub stats: Vec<IterStats>,
    /// Adversarial margin used by the paper schedule.
    pub margin: Option<MarginResult>,
    /// The schedule constant `M`, when the paper schedule is active.
    pub schedule_m: Option<f64>,
    pub warnings: Vec<String>,
}

impl TrainRecord {
    pub fn final_theta(&self) -> &[f64] {
        &self.thetas.last().expect("record always holds θ_T").1
    }

    pub fn losses(&self) -> impl Iterator<Item = f64> + '_ {
        self.stats.iter().map(|s| s.loss)
    }

    pub fn theta_at(&self, t: usize) -> Option<&[f64]> {
        self.thetas.iter().find(|(s, _)| *s == t).map(|(_, th)| th.as_slice())
    }

    pub fn last(&self) -> &IterStats {
        self.stats.last().expect("stats hold at least θ₀")
    }

    /// CSV with columns `t,loss,log_loss,theta_l2,theta_q,alignment,train_err,adv_train_err`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_trajectory_csv(out, &self.stats, None)
    }
}

pub(crate) fn write_trajectory_csv<W: Write>(out: W, stats: &[IterStats], hidden: Option<usize>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t", "loss", "log_loss", "theta_l2", "theta_q", "alignment", "train_err", "adv_train_err"];
    if hidden.is_some() {
        header.push("h");
    }
    w.write_record(&header)?;
    for s in stats {
        let mut rec = vec![
            s.t.to_string(),
            format_f64(s.loss),
            format_f64(s.log_loss),
            format_f64(s.theta_l2),
            format_f64(s.theta_q),
            format_f64(s.alignment),
            format_f64(s.train_err),
            format_f64(s.adv_train_err),
        ];
        if let Some(h) = hidden {
            rec.push(h.to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// `μᵀθ / ‖θ‖₂`.
pub fn alignment(theta: &[f64], mu: &[f64]) -> Result<f64> {
    let n = l2_norm(theta);
    if n == 0.0 {
        return Err(Error::domain("alignment is undefined at θ = 0"));
    }
    Ok(dot(mu, theta) / n)
}

/// `M = max{[2d + ε(q−1)d^{(3q−2)/(2q−2)}/γ] exp(−γ²/(Gd) + ε/G), 1}`.
///
/// The middle term vanishes when `ε = 0` or `q = 1`; for `q = ∞` with
/// `ε > 0` it is infinite and the schedule is rejected.
pub fn schedule_m(d: usize, model: &PerturbationModel, gamma: f64, g: f64) -> Result<f64> {
    let df = d as f64;
    let eps = model.epsilon;
    let middle = match model.q {
        _ if eps == 0.0 => 0.0,
        Exponent::Finite(q) if q == 1.0 => 0.0,
        Exponent::Finite(q) => eps * (q - 1.0) * df.powf((3.0 * q - 2.0) / (2.0 * q - 2.0)) / gamma,
        Exponent::Infinity => {
            return Err(Error::config("paper schedule is undefined for q = ∞ (p = 1) with ε > 0"))
        }
    };
    let m = (2.0 * df + middle) * (-gamma * gamma / (g * df) + eps / g).exp();
    Ok(m.max(1.0))
}

struct StepPlan {
    first: f64,
    rest: f64,
}

fn plan_steps(ds: &Dataset, cfg: &TrainConfig, warnings: &mut Vec<String>) -> Result<(StepPlan, Option<MarginResult>, Option<f64>)> {
    let n = ds.len() as f64;
    let d = ds.dim();
    match cfg.step {
        StepRule::Constant { alpha, reduction } => {
            let a = match reduction {
                Reduction::Sum => alpha,
                Reduction::Mean => alpha / n,
            };
            Ok((StepPlan { first: a, rest: a }, None, None))
        }
        StepRule::PaperSchedule { g } => {
            let base = 1.0 / (g * d as f64 * n);
            let m_result = margin::adversarial_margin(ds, &cfg.model);
            let m = if m_result.value > 0.0 {
                schedule_m(d, &cfg.model, m_result.value, g)?
            } else {
                warnings.push(format!(
                    "adversarial margin {:.3e} <= 0: sample is not adversarially separable, using M = 1",
                    m_result.value
                ));
                1.0
            };
            Ok((
                StepPlan {
                    first: base,
                    rest: base / m,
                },
                Some(m_result),
                Some(m),
            ))
        }
    }
}

/// Full-batch gradient descent on the adversarial loss.
///
/// Fails with [`Error::NonFinite`] (carrying the last finite iterate) if the
/// loss or its gradient overflows.
pub fn train(ds: &Dataset, cfg: &TrainConfig) -> Result<TrainRecord> {
    cfg.validate()?;
    let n = ds.len();
    let d = ds.dim();
    let model = cfg.model;
    let z = ds.signed_features();
    let mu = &ds.spec.mu;

    let mut warnings = Vec::new();
    let (plan, margin, m) = plan_steps(ds, cfg, &mut warnings)?;

    let mut theta = match cfg.init {
        Init::Zero => vec![0.0; d],
        Init::Xavier { seed } => {
            let mut rng = CounterRng::new(derive(seed, namespace::INIT));
            let s = 1.0 / (d as f64).sqrt();
            (0..d).map(|_| s * rng.normal()).collect()
        }
    };

    let big_t = cfg.iterations;
    let mut thetas = Vec::new();
    let mut margins_rec = Vec::new();
    let mut stats = Vec::with_capacity(big_t + 1);
    let mut prev = theta.clone();

    for t in 0..=big_t {
        let theta_q = lp_norm(&theta, model.q);
        let raw: Vec<f64> = z.iter_rows().map(|row| dot(row, &theta)).collect();
        let penalty = model.epsilon * theta_q;
        let s: Vec<f64> = raw.iter().map(|m| -m + penalty).collect();
        let loss = accumulate(&s);
        if !loss.log.is_finite() {
            return Err(Error::NonFinite {
                quantity: "loss",
                iteration: t,
                last_theta: prev,
            });
        }

        let (lo, hi) = raw
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &m| (lo.min(m), hi.max(m)));
        let theta_l2 = l2_norm(&theta);
        let errs = raw.iter().filter(|&&m| m < 0.0).count();
        let adv_errs = raw.iter().filter(|&&m| m - penalty < 0.0).count();
        let step = if t < big_t {
            if t == 0 { plan.first } else { plan.rest }
        } else {
            0.0
        };
        stats.push(IterStats {
            t,
            step,
            loss: loss.value,
            log_loss: loss.log,
            theta_l2,
            theta_q,
            alignment: if theta_l2 > 0.0 { dot(mu, &theta) / theta_l2 } else { f64::NAN },
            log_loss_ratio: hi - lo,
            train_err: errs as f64 / n as f64,
            adv_train_err: adv_errs as f64 / n as f64,
        });

        if t == 0 || t == 1 || t == big_t || t % cfg.record_every == 0 {
            thetas.push((t, theta.clone()));
            margins_rec.push((t, raw.clone()));
        }
        if t == big_t {
            break;
        }

        let Some(grad) = gradient_from_exponents(&z, &theta, &s, &model) else {
            return Err(Error::NonFinite {
                quantity: "gradient",
                iteration: t,
                last_theta: theta,
            });
        };
        prev.clone_from(&theta);
        for (th, g) in theta.iter_mut().zip(&grad) {
            *th -= step * g;
        }
    }

    Ok(TrainRecord {
        config: *cfg,
        thetas,
        per_sample_margins: margins_rec,
        stats,
        margin,
        schedule_m: m,
        warnings,
    })
}

impl fmt::Display for IterStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "t={} loss={:.6e} theta_l2={:.6} alignment={:.6} train_err={} adv_train_err={}",
            self.t, self.loss, self.theta_l2, self.alignment, self.train_err, self.adv_train_err
        )
    }
}
