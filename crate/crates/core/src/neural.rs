//! Two-layer ReLU networks trained adversarially with a PGD inner loop.

use std::io::Write;

use rayon::prelude::*;

use crate::data::{sample_point, Dataset, Matrix, MixtureSpec};
use crate::error::{Error, Result};
use crate::linear::{accumulate, write_trajectory_csv, IterStats, Reduction};
use crate::norms::{dot, l2_norm, lp_norm, project_onto_ball, q_norm_subgradient, Exponent, PerturbationModel};
use crate::risk::{binomial_report, RiskReport};
use crate::rng::{derive, namespace, CounterRng};

pub const DEFAULT_HIDDEN: usize = 32;

/// `f(x) = w2ᵀ ReLU(W1 x + b1) + b2`.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoLayerNet {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl TwoLayerNet {
    pub fn new(w1: Matrix, b1: Vec<f64>, w2: Vec<f64>, b2: f64) -> Result<Self> {
        let h = w1.rows();
        if b1.len() != h || w2.len() != h {
            return Err(Error::Shape(format!(
                "hidden width {h} but b1 has {} and w2 has {} entries",
                b1.len(),
                w2.len()
            )));
        }
        let net = Self { w1, b1, w2, b2 };
        if !net.params().all(f64::is_finite) {
            return Err(Error::domain("network parameters must be finite"));
        }
        Ok(net)
    }

    pub fn zeros(h: usize, d: usize) -> Self {
        Self {
            w1: Matrix::zeros(h, d),
            b1: vec![0.0; h],
            w2: vec![0.0; h],
            b2: 0.0,
        }
    }

    /// Weights drawn i.i.d. normal with variance `1/fan_in`, zero biases.
    pub fn xavier(h: usize, d: usize, seed: u64) -> Result<Self> {
        if h == 0 || d == 0 {
            return Err(Error::config("hidden width and input dimension must be positive"));
        }
        let mut rng = CounterRng::new(derive(seed, namespace::NET));
        let mut net = Self::zeros(h, d);
        let s1 = 1.0 / (d as f64).sqrt();
        for v in net.w1.as_mut_slice().iter_mut() {
            *v = s1 * rng.normal();
        }
        let s2 = 1.0 / (h as f64).sqrt();
        for v in net.w2.iter_mut() {
            *v = s2 * rng.normal();
        }
        Ok(net)
    }

    /// The network computing `wᵀx + b` exactly: `W1 = [I; −I]`, `w2 = [w; −w]`.
    pub fn induced_linear(w: &[f64], b: f64) -> Self {
        let d = w.len();
        let mut net = Self::zeros(2 * d, d);
        for j in 0..d {
            net.w1.row_mut(j)[j] = 1.0;
            net.w1.row_mut(d + j)[j] = -1.0;
            net.w2[j] = w[j];
            net.w2[d + j] = -w[j];
        }
        net.b2 = b;
        net
    }

    pub fn hidden(&self) -> usize {
        self.w1.rows()
    }

    pub fn dim(&self) -> usize {
        self.w1.cols()
    }

    /// All parameters in the order `W1` (row-major), `b1`, `w2`, `b2`.
    pub fn params(&self) -> impl Iterator<Item = f64> + '_ {
        self.w1
            .as_slice()
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .copied()
            .chain(std::iter::once(self.b2))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.w1
            .as_mut_slice()
            .iter_mut()
            .chain(self.b1.iter_mut())
            .chain(self.w2.iter_mut())
            .chain(std::iter::once(&mut self.b2))
    }

    pub fn num_params(&self) -> usize {
        self.w1.as_slice().len() + 2 * self.hidden() + 1
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Shape(format!("input has length {}, network expects {}", x.len(), self.dim())));
        }
        Ok(())
    }

    fn pre_activations(&self, x: &[f64]) -> Vec<f64> {
        self.w1.iter_rows().zip(&self.b1).map(|(row, b)| dot(row, x) + b).collect()
    }

    fn score_unchecked(&self, x: &[f64]) -> f64 {
        self.pre_activations(x)
            .iter()
            .zip(&self.w2)
            .map(|(a, w)| w * a.max(0.0))
            .sum::<f64>()
            + self.b2
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.score_unchecked(x))
    }

    /// `(f(x), ∇ₓf(x))`, with the ReLU derivative at zero taken as zero.
    pub fn input_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_input(x)?;
        let pre = self.pre_activations(x);
        let mut score = self.b2;
        let mut grad = vec![0.0; self.dim()];
        for ((a, w), row) in pre.iter().zip(&self.w2).zip(self.w1.iter_rows()) {
            if *a > 0.0 {
                score += w * a;
                for (g, r) in grad.iter_mut().zip(row) {
                    *g += w * r;
                }
            }
        }
        Ok((score, grad))
    }
}

/// Exponential loss `Σ exp(−y_i f(x_i))` over `(xs[i], ys[i])` and its exact
/// gradient with respect to every parameter, laid out as a [`TwoLayerNet`].
pub fn loss_and_gradients(net: &TwoLayerNet, xs: &[Vec<f64>], ys: &[f64]) -> Result<(f64, TwoLayerNet)> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::Shape(format!("batch has {} inputs and {} labels", xs.len(), ys.len())));
    }
    let mut grad = TwoLayerNet::zeros(net.hidden(), net.dim());
    let mut loss = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        net.check_input(x)?;
        let pre = net.pre_activations(x);
        let score = pre.iter().zip(&net.w2).map(|(a, w)| w * a.max(0.0)).sum::<f64>() + net.b2;
        let e = (-y * score).exp();
        let df = -y * e;
        loss += e;
        grad.b2 += df;
        for (j, a) in pre.iter().enumerate() {
            if *a > 0.0 {
                grad.w2[j] += df * a;
                let back = df * net.w2[j];
                grad.b1[j] += back;
                for (g, xi) in grad.w1.row_mut(j).iter_mut().zip(x) {
                    *g += back * xi;
                }
            }
        }
    }
    if !loss.is_finite() || !grad.params().all(f64::is_finite) {
        return Err(Error::NonFinite {
            quantity: "loss",
            iteration: 0,
            last_theta: net.params().collect(),
        });
    }
    Ok((loss, grad))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PgdConfig {
    pub steps: usize,
    pub step_size: f64,
    pub model: PerturbationModel,
    /// Start from a uniformly random point of the ℓ∞ box of radius ε,
    /// projected onto the ℓp ball.
    pub random_start: bool,
    pub seed: u64,
}

impl PgdConfig {
    /// Ten steps of size `2.5ε/10` from the clean point.
    pub fn new(model: PerturbationModel) -> Self {
        Self::with_steps(model, 10)
    }

    pub fn with_steps(model: PerturbationModel, steps: usize) -> Self {
        Self {
            steps,
            step_size: 2.5 * model.epsilon / steps.max(1) as f64,
            model,
            random_start: false,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("pgd needs at least one step"));
        }
        if !(self.step_size >= 0.0) || !self.step_size.is_finite() {
            return Err(Error::config(format!("pgd step size must be finite and non-negative, got {}", self.step_size)));
        }
        Ok(())
    }
}

/// Result of one attack: the returned point and the per-iterate losses.
#[derive(Clone, Debug, PartialEq)]
pub struct PgdOutcome {
    pub x_adv: Vec<f64>,
    pub loss: f64,
    /// `exp(−y f)` at every visited iterate, the start included.
    pub trace: Vec<f64>,
}

/// Projected steepest ascent on `exp(−y f(x′))` over `‖x′ − x‖_p ≤ ε`.
///
/// Each step moves along the dual-norm direction of the input gradient and
/// projects back onto the ball. The best iterate seen is returned.
pub fn pgd_attack(net: &TwoLayerNet, x: &[f64], y: f64, cfg: &PgdConfig) -> Result<PgdOutcome> {
    pgd_attack_indexed(net, x, y, cfg, 0)
}

fn pgd_attack_indexed(net: &TwoLayerNet, x: &[f64], y: f64, cfg: &PgdConfig, index: u64) -> Result<PgdOutcome> {
    cfg.validate()?;
    net.check_input(x)?;
    let eps = cfg.model.epsilon;
    let p = cfg.model.p;
    let q = cfg.model.q;
    let mut delta = vec![0.0; x.len()];
    if cfg.random_start && eps > 0.0 {
        let mut rng = CounterRng::new(derive(derive(cfg.seed, namespace::PGD), index));
        for v in delta.iter_mut() {
            *v = eps * (2.0 * rng.uniform() - 1.0);
        }
        delta = project_onto_ball(&delta, p, eps);
    }

    let mut point: Vec<f64> = x.iter().zip(&delta).map(|(a, b)| a + b).collect();
    let (score, mut grad) = net.input_gradient(&point)?;
    let mut value = (-y * score).exp();
    let mut best = (value, point.clone());
    let mut trace = vec![value];
    if eps == 0.0 {
        return Ok(PgdOutcome { x_adv: x.to_vec(), loss: value, trace });
    }

    for _ in 0..cfg.steps {
        // ascent direction of −y f is −y ∇f
        for g in grad.iter_mut() {
            *g *= -y;
        }
        let dir = q_norm_subgradient(&grad, q);
        for (dj, sj) in delta.iter_mut().zip(&dir) {
            *dj += cfg.step_size * sj;
        }
        delta = project_onto_ball(&delta, p, eps);
        for ((pt, xi), dj) in point.iter_mut().zip(x).zip(&delta) {
            *pt = xi + dj;
        }
        let (score, g) = net.input_gradient(&point)?;
        grad = g;
        value = (-y * score).exp();
        trace.push(value);
        if value > best.0 {
            best = (value, point.clone());
        }
    }
    Ok(PgdOutcome { x_adv: best.1, loss: best.0, trace })
}

/// PGD points for every sample of `ds`, computed in parallel.
pub fn attack_dataset(net: &TwoLayerNet, ds: &Dataset, cfg: &PgdConfig) -> Result<Vec<Vec<f64>>> {
    (0..ds.len())
        .into_par_iter()
        .map(|k| pgd_attack_indexed(net, ds.x(k), ds.labels[k], cfg, k as u64).map(|o| o.x_adv))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NnTrainConfig {
    pub pgd: PgdConfig,
    pub epochs: usize,
    pub lr: f64,
    pub reduction: Reduction,
}

impl NnTrainConfig {
    /// 500 epochs of full-batch descent with rate 0.03 on the mean loss.
    pub fn new(model: PerturbationModel) -> Self {
        Self {
            pgd: PgdConfig::new(model),
            epochs: 500,
            lr: 0.03,
            reduction: Reduction::Mean,
        }
    }
}

#[derive(Clone, Debug)]
pub struct NnTrainRecord {
    pub net: TwoLayerNet,
    /// One entry per epoch boundary, `t = 0..=epochs`. `theta_l2` and
    /// `theta_q` are norms of the flattened parameters; alignment is
    /// `μᵀ∇ₓf(0)/‖∇ₓf(0)‖₂`.
    pub stats: Vec<IterStats>,
}

impl NnTrainRecord {
    pub fn last(&self) -> &IterStats {
        self.stats.last().expect("stats hold the initial network")
    }

    /// Same columns as the linear trajectory plus the hidden width `h`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_trajectory_csv(out, &self.stats, Some(self.net.hidden()))
    }
}

fn epoch_stats(net: &TwoLayerNet, ds: &Dataset, adv: &[Vec<f64>], t: usize, step: f64, q: Exponent) -> Result<IterStats> {
    let n = ds.len() as f64;
    let mut s = Vec::with_capacity(ds.len());
    let mut errs = 0usize;
    let mut adv_errs = 0usize;
    for (k, xa) in adv.iter().enumerate() {
        let y = ds.labels[k];
        let clean = y * net.score_unchecked(ds.x(k));
        let m = y * net.score_unchecked(xa);
        errs += (clean < 0.0) as usize;
        adv_errs += (m < 0.0) as usize;
        s.push(-m);
    }
    let loss = accumulate(&s);
    if !loss.log.is_finite() {
        return Err(Error::NonFinite {
            quantity: "loss",
            iteration: t,
            last_theta: net.params().collect(),
        });
    }
    let (lo, hi) = s
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let flat: Vec<f64> = net.params().collect();
    let (_, g0) = net.input_gradient(&vec![0.0; net.dim()])?;
    let g0n = l2_norm(&g0);
    Ok(IterStats {
        t,
        step,
        loss: loss.value,
        log_loss: loss.log,
        theta_l2: l2_norm(&flat),
        theta_q: lp_norm(&flat, q),
        alignment: if g0n > 0.0 { dot(&ds.spec.mu, &g0) / g0n } else { f64::NAN },
        log_loss_ratio: hi - lo,
        train_err: errs as f64 / n,
        adv_train_err: adv_errs as f64 / n,
    })
}

/// Alternates a PGD attack on every sample with one full-batch descent step
/// on the exponential loss at the attacked points.
pub fn adv_train_nn(ds: &Dataset, net0: &TwoLayerNet, cfg: &NnTrainConfig) -> Result<NnTrainRecord> {
    cfg.pgd.validate()?;
    if !(cfg.lr >= 0.0) || !cfg.lr.is_finite() {
        return Err(Error::config(format!("learning rate must be finite and non-negative, got {}", cfg.lr)));
    }
    if net0.dim() != ds.dim() {
        return Err(Error::Shape(format!("network expects d = {}, dataset has d = {}", net0.dim(), ds.dim())));
    }
    let step = match cfg.reduction {
        Reduction::Sum => cfg.lr,
        Reduction::Mean => cfg.lr / ds.len() as f64,
    };
    let mut net = net0.clone();
    let mut stats = Vec::with_capacity(cfg.epochs + 1);
    for t in 0..=cfg.epochs {
        let adv = attack_dataset(&net, ds, &cfg.pgd)?;
        let last = t == cfg.epochs;
        stats.push(epoch_stats(&net, ds, &adv, t, if last { 0.0 } else { step }, cfg.pgd.model.q)?);
        if last {
            break;
        }
        let (_, grad) = loss_and_gradients(&net, &adv, &ds.labels).map_err(|e| match e {
            Error::NonFinite { quantity, last_theta, .. } => Error::NonFinite {
                quantity,
                iteration: t,
                last_theta,
            },
            other => other,
        })?;
        for (p, g) in net.params_mut().zip(grad.params()) {
            *p -= step * g;
        }
    }
    Ok(NnTrainRecord { net, stats })
}

/// Monte Carlo standard and adversarial risk of a network; the adversarial
/// part uses PGD from each clean draw.
pub fn nn_monte_carlo_risk(net: &TwoLayerNet, spec: &MixtureSpec, pgd: &PgdConfig, m: usize, seed: u64) -> Result<RiskReport> {
    if m == 0 {
        return Err(Error::domain("monte carlo sample count must be at least 1"));
    }
    if net.dim() != spec.dim() {
        return Err(Error::Shape(format!("network expects d = {}, spec has d = {}", net.dim(), spec.dim())));
    }
    pgd.validate()?;
    let stream = derive(seed, namespace::EVAL);
    let (std_err, adv_err) = (0..m)
        .into_par_iter()
        .map(|k| {
            let mut x = vec![0.0; spec.dim()];
            let (y, _) = sample_point(spec, stream, k as u64, &mut x);
            let clean = y * net.score_unchecked(&x) < 0.0;
            let out = pgd_attack_indexed(net, &x, y, pgd, k as u64)?;
            let adv = clean || y * net.score_unchecked(&out.x_adv) < 0.0;
            Ok::<_, Error>((clean as usize, adv as usize))
        })
        .try_reduce(|| (0, 0), |l, r| Ok((l.0 + r.0, l.1 + r.1)))?;
    Ok(binomial_report(std_err, adv_err, m))
}
