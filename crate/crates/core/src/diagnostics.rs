//! Trajectory checks for the proof pipeline of adversarial training.
//!
//! Each check is a deterministic inequality on a dataset and a recorded
//! trajectory. High-probability statements become seed-batch statistics via
//! [`run_seed_batch`]: a lemma is accepted when it passes on at least 9 of 10
//! seeds.

use std::fmt;
use std::io::Write;

use rayon::prelude::*;

use crate::data::{generate, squared_row_norms, Dataset, MixtureSpec, NoiseDist, REPORT_DELTA};
use crate::error::{Error, Result};
use crate::linear::{train, StepRule, TrainConfig, TrainRecord};
use crate::margin;
use crate::norms::{dot, l2_norm, lp_norm, q_norm_subgradient, Exponent, PerturbationModel};

/// Pass threshold for the measured `c₀` of the geometry check.
pub const C0_THRESHOLD: f64 = 2.0;
/// Allowed excess noise fraction `c₁` in `|𝒩| ≤ (η + c₁)n`.
pub const C1_THRESHOLD: f64 = 0.1;
const DESCENT_TOL: f64 = 1e-12;
const SUBGRADIENT_TOL: f64 = 1e-12;
const ALIGNMENT_EARLY_T: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LemmaId {
    L1Geometry,
    L2Loss,
    L3Norm,
    L4Ratio,
    L5Alignment,
    CSubgradient,
}

impl LemmaId {
    pub const ALL: [LemmaId; 6] = [
        LemmaId::L1Geometry,
        LemmaId::L2Loss,
        LemmaId::L3Norm,
        LemmaId::L4Ratio,
        LemmaId::L5Alignment,
        LemmaId::CSubgradient,
    ];
}

impl fmt::Display for LemmaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LemmaId::L1Geometry => "L1_geometry",
            LemmaId::L2Loss => "L2_loss",
            LemmaId::L3Norm => "L3_norm",
            LemmaId::L4Ratio => "L4_ratio",
            LemmaId::L5Alignment => "L5_alignment",
            LemmaId::CSubgradient => "C_subgradient",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LemmaReport {
    pub lemma: LemmaId,
    pub passed: bool,
    /// Measured constants in a stable order.
    pub measured: Vec<(String, f64)>,
    pub worst_iteration: usize,
    pub details: String,
}

impl LemmaReport {
    pub fn constant(&self, name: &str) -> Option<f64> {
        self.measured.iter().find(|(k, _)| k == name).map(|(_, v)| *v)
    }
}

impl fmt::Display for LemmaReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} worst_iteration={}",
            self.lemma,
            if self.passed { "PASS" } else { "FAIL" },
            self.worst_iteration
        )?;
        for (k, v) in &self.measured {
            write!(f, " {k}={v:.6e}")?;
        }
        if !self.details.is_empty() {
            write!(f, " | {}", self.details)?;
        }
        Ok(())
    }
}

/// Smallest `c₀ ≥ 1` with `d/c₀ ≤ ‖z_k‖₂² ≤ c₀d` for every sample.
pub fn measure_c0(ds: &Dataset) -> f64 {
    let d = ds.dim() as f64;
    let sq = squared_row_norms(&ds.features);
    let max = sq.iter().copied().fold(0.0, f64::max);
    let min = sq.iter().copied().fold(f64::INFINITY, f64::min);
    (max / d).max(d / min).max(1.0)
}

/// Runs every check on a trajectory produced by [`train`] on `ds`.
pub fn run_suite(ds: &Dataset, rec: &TrainRecord, model: &PerturbationModel) -> Result<Vec<LemmaReport>> {
    let d = ds.dim();
    let n = ds.len();
    if rec.stats.is_empty() {
        return Err(Error::Shape("training record holds no iterates".into()));
    }
    if let Some((t, th)) = rec.thetas.iter().find(|(_, th)| th.len() != d) {
        return Err(Error::Shape(format!("θ_{t} has length {}, dataset dimension {d}", th.len())));
    }
    if let Some((t, m)) = rec.per_sample_margins.iter().find(|(_, m)| m.len() != n) {
        return Err(Error::Shape(format!("margins at t={t} have length {}, dataset has {n} samples", m.len())));
    }

    let c0 = measure_c0(ds);
    Ok(vec![
        geometry(ds, rec, c0),
        loss_descent(rec, n),
        iterate_norm(rec, model, c0, d),
        loss_ratio(rec, c0),
        alignment_growth(ds, rec, model, c0),
        subgradient(rec, model, d),
    ])
}

fn geometry(ds: &Dataset, rec: &TrainRecord, c0: f64) -> LemmaReport {
    let n = ds.len();
    let d = ds.dim() as f64;
    let z = ds.signed_features();
    let mu = &ds.spec.mu;
    let mu_sq = dot(mu, mu);

    let mut cross: f64 = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            cross = cross.max(dot(z.row(i), z.row(j)).abs());
        }
    }
    let cross_scale = mu_sq + (d * (n as f64 / REPORT_DELTA).ln()).sqrt();
    let cross_ratio = cross / cross_scale;

    // signed deviation of μᵀz_k from ±‖μ‖², relative to ‖μ‖²
    let mut mean_dev: f64 = 0.0;
    let mut worst_k = 0;
    for k in 0..n {
        let target = if ds.is_noisy(k) { -mu_sq } else { mu_sq };
        let dev = if mu_sq > 0.0 {
            (dot(mu, z.row(k)) - target).abs() / mu_sq
        } else {
            0.0
        };
        if dev > mean_dev {
            mean_dev = dev;
            worst_k = k;
        }
    }

    let noise_fraction = ds.noise_indices.len() as f64 / n as f64;
    let c1 = noise_fraction - ds.spec.eta;

    // zero training error at any iterate certifies separability
    let separable = rec.stats.iter().any(|s| s.train_err == 0.0)
        || margin::standard_margin(ds, Exponent::TWO).value > 0.0;

    let checks = [
        ("c0", c0 <= C0_THRESHOLD),
        ("cross", cross_ratio <= C0_THRESHOLD),
        ("mean", mean_dev <= 0.5),
        ("noise", c1 <= C1_THRESHOLD),
        ("separable", separable),
    ];
    let failed: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(k, _)| *k).collect();
    LemmaReport {
        lemma: LemmaId::L1Geometry,
        passed: failed.is_empty(),
        measured: vec![
            ("c0".into(), c0),
            ("cross_ratio".into(), cross_ratio),
            ("mean_deviation".into(), mean_dev),
            ("noise_fraction".into(), noise_fraction),
            ("c1".into(), c1),
            ("separable".into(), separable as u8 as f64),
        ],
        worst_iteration: 0,
        details: if failed.is_empty() {
            String::new()
        } else {
            format!("failed: {} (worst mean sample {worst_k})", failed.join(","))
        },
    }
}

fn loss_descent(rec: &TrainRecord, n: usize) -> LemmaReport {
    let stats = &rec.stats;
    let first = stats.get(1).map(|s| s.loss).unwrap_or(stats[0].loss);
    let first_ok = first <= 2.0 * n as f64;
    let mut worst = (f64::NEG_INFINITY, 0);
    for w in stats.windows(2) {
        let inc = if w[0].loss.is_finite() && w[1].loss.is_finite() {
            w[1].loss - w[0].loss
        } else {
            w[1].log_loss - w[0].log_loss
        };
        if inc > worst.0 {
            worst = (inc, w[0].t);
        }
    }
    let monotone = worst.0 <= DESCENT_TOL;
    let mut details = Vec::new();
    if !first_ok {
        details.push(format!("L(θ₁)={first:.4e} > 2n"));
    }
    if !monotone {
        details.push(format!("loss increased by {:.3e} at t={}", worst.0, worst.1));
    }
    details.push(format!("step_mode={}", rec.config.step.name()));
    LemmaReport {
        lemma: LemmaId::L2Loss,
        passed: first_ok && monotone,
        measured: vec![
            ("loss1_over_n".into(), first / n as f64),
            ("max_increase".into(), if stats.len() > 1 { worst.0 } else { 0.0 }),
        ],
        worst_iteration: if stats.len() > 1 { worst.1 } else { 0 },
        details: details.join("; "),
    }
}

fn iterate_norm(rec: &TrainRecord, model: &PerturbationModel, c0: f64, d: usize) -> LemmaReport {
    let coef = (c0.sqrt() + model.epsilon) * (d as f64).sqrt();
    let mut cum = 0.0;
    let mut worst = (0.0_f64, 0);
    for w in rec.stats.windows(2) {
        cum += w[0].step * w[0].loss;
        let bound = coef * cum;
        let ratio = if bound > 0.0 { w[1].theta_l2 / bound } else if w[1].theta_l2 == 0.0 { 0.0 } else { f64::INFINITY };
        if ratio > worst.0 {
            worst = (ratio, w[1].t);
        }
    }
    LemmaReport {
        lemma: LemmaId::L3Norm,
        passed: worst.0 <= 1.0 + 1e-12,
        measured: vec![("coefficient".into(), coef), ("worst_ratio".into(), worst.0)],
        worst_iteration: worst.1,
        details: String::new(),
    }
}

fn loss_ratio(rec: &TrainRecord, c0: f64) -> LemmaReport {
    let bound = (5.0 * c0 * c0).ln();
    let (worst, t) = rec
        .stats
        .iter()
        .map(|s| (s.log_loss_ratio, s.t))
        .fold((f64::NEG_INFINITY, 0), |a, b| if b.0 > a.0 { b } else { a });
    LemmaReport {
        lemma: LemmaId::L4Ratio,
        passed: worst <= bound,
        measured: vec![
            ("bound".into(), 5.0 * c0 * c0),
            ("max_ratio".into(), worst.exp()),
            ("max_log_ratio".into(), worst),
        ],
        worst_iteration: t,
        details: format!("step_mode={}", rec.config.step.name()),
    }
}

fn alignment_growth(ds: &Dataset, rec: &TrainRecord, model: &PerturbationModel, c0: f64) -> LemmaReport {
    let mu = &ds.spec.mu;
    let mu_sq = dot(mu, mu);
    let mu_norm = mu_sq.sqrt();
    let d = ds.dim() as f64;
    let n = ds.len() as f64;
    let lead = (mu_sq / 4.0 - model.epsilon * lp_norm(mu, model.q)) / ((c0.sqrt() + model.epsilon) * d.sqrt());
    let big_t = rec.stats.len() - 1;

    let c3_at = |t: usize, align: f64| -> f64 {
        if t < 2 || n < 2.0 || mu_norm == 0.0 {
            return 0.0;
        }
        ((lead - align) * (t as f64).ln() / (mu_norm * n.ln())).max(0.0)
    };
    let final_align = rec.stats[big_t].alignment;
    let c3_final = c3_at(big_t, final_align);
    let c3_all = rec
        .stats
        .iter()
        .filter(|s| s.alignment.is_finite())
        .map(|s| c3_at(s.t, s.alignment))
        .fold(0.0, f64::max);

    let mut details = vec![format!("step_mode={}", rec.config.step.name())];
    let mut measured = vec![
        ("lead_term".into(), lead),
        ("alignment_final".into(), final_align),
        ("c3_fit_final".into(), c3_final),
        ("c3_fit_all".into(), c3_all),
    ];
    let passed = if big_t > ALIGNMENT_EARLY_T {
        let early = rec.stats[ALIGNMENT_EARLY_T].alignment;
        measured.insert(1, ("alignment_early".into(), early));
        if final_align <= early {
            details.push(format!(
                "alignment fell from {early:.9} at t={ALIGNMENT_EARLY_T} to {final_align:.9} at t={big_t}"
            ));
        }
        final_align > early
    } else {
        details.push(format!("needs T > {ALIGNMENT_EARLY_T}"));
        false
    };
    if let Some(m) = &rec.margin {
        if m.value <= 0.0 {
            details.push(format!("assumption violated: adversarial margin {:.3e} <= 0", m.value));
        }
    }
    if lead <= 0.0 {
        details.push("lead term non-positive: ‖μ‖₂²/4 <= ε‖μ‖_q".into());
    }
    LemmaReport {
        lemma: LemmaId::L5Alignment,
        passed,
        measured,
        worst_iteration: big_t,
        details: details.join("; "),
    }
}

fn subgradient(rec: &TrainRecord, model: &PerturbationModel, d: usize) -> LemmaReport {
    let p = model.q.dual();
    let sqrt_d = (d as f64).sqrt();
    let mut worst_unit: f64 = 0.0;
    let mut worst_holder: f64 = 0.0;
    let mut worst_l2: f64 = 0.0;
    let mut worst_t = 0;
    for (t, theta) in &rec.thetas {
        if theta.iter().all(|&x| x == 0.0) {
            continue;
        }
        let g = q_norm_subgradient(theta, model.q);
        let unit = (lp_norm(&g, p) - 1.0).abs();
        let qn = lp_norm(theta, model.q);
        let holder = (dot(theta, &g) - qn).abs() / qn.max(1.0);
        let l2 = l2_norm(&g) / sqrt_d;
        if unit.max(holder) > worst_unit.max(worst_holder) {
            worst_t = *t;
        }
        worst_unit = worst_unit.max(unit);
        worst_holder = worst_holder.max(holder);
        worst_l2 = worst_l2.max(l2);
    }
    LemmaReport {
        lemma: LemmaId::CSubgradient,
        passed: worst_unit <= SUBGRADIENT_TOL && worst_holder <= SUBGRADIENT_TOL && worst_l2 <= 1.0,
        measured: vec![
            ("max_unit_error".into(), worst_unit),
            ("max_holder_error".into(), worst_holder),
            ("max_l2_over_sqrt_d".into(), worst_l2),
        ],
        worst_iteration: worst_t,
        details: String::new(),
    }
}

/// Line-oriented text, one report per line.
pub fn write_text<W: Write>(mut out: W, reports: &[LemmaReport]) -> Result<()> {
    for r in reports {
        writeln!(out, "{r}")?;
    }
    Ok(())
}

/// CSV `lemma_id,passed,constant_name,constant_value,worst_iteration`, one row
/// per measured constant.
pub fn write_csv<W: Write>(out: W, reports: &[LemmaReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["lemma_id", "passed", "constant_name", "constant_value", "worst_iteration"])?;
    for r in reports {
        for (k, v) in &r.measured {
            w.write_record([
                r.lemma.to_string(),
                r.passed.to_string(),
                k.clone(),
                format!("{v:.16e}"),
                r.worst_iteration.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// A batch of independent seeds run through data generation, training and
/// the lemma suite.
#[derive(Clone, Debug)]
pub struct SuiteConfig {
    pub n: usize,
    pub d: usize,
    pub r: f64,
    pub eta: f64,
    pub noise: NoiseDist,
    pub train: TrainConfig,
    pub seeds: usize,
    pub base_seed: u64,
}

impl SuiteConfig {
    /// n = 50, d = 5000, ‖μ‖₂ = d^0.3, η = 0.1, gaussian noise, paper schedule
    /// with G = 10 for 2000 iterations, ten seeds.
    pub fn theorem_regime(model: PerturbationModel) -> Self {
        Self {
            n: 50,
            d: 5000,
            r: 0.3,
            eta: 0.1,
            noise: NoiseDist::Gaussian,
            train: TrainConfig {
                record_every: 100,
                ..TrainConfig::paper_schedule(model, 10.0, 2000)
            },
            seeds: 10,
            base_seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub reports: Vec<LemmaReport>,
}

#[derive(Clone, Debug)]
pub struct BatchOutcome {
    pub runs: Vec<SeedRun>,
}

impl BatchOutcome {
    pub fn pass_count(&self, lemma: LemmaId) -> usize {
        self.runs
            .iter()
            .filter(|r| r.reports.iter().any(|l| l.lemma == lemma && l.passed))
            .count()
    }

    /// Passes needed for acceptance: nine in ten, rounded up.
    pub fn required(&self) -> usize {
        (self.runs.len() * 9).div_ceil(10)
    }

    pub fn accepted(&self, lemma: LemmaId) -> bool {
        self.pass_count(lemma) >= self.required()
    }

    pub fn summary_lines(&self) -> Vec<String> {
        LemmaId::ALL
            .iter()
            .map(|&l| {
                format!(
                    "{l}: {}/{} seeds passed ({})",
                    self.pass_count(l),
                    self.runs.len(),
                    if self.accepted(l) { "accepted" } else { "rejected" }
                )
            })
            .collect()
    }
}

/// Seed `i` uses data seed `base_seed + i`; seeds run in parallel.
pub fn run_seed_batch(cfg: &SuiteConfig) -> Result<BatchOutcome> {
    if cfg.seeds == 0 {
        return Err(Error::config("seeds must be at least 1"));
    }
    let mut runs: Vec<SeedRun> = (0..cfg.seeds as u64)
        .into_par_iter()
        .map(|i| {
            let seed = cfg.base_seed + i;
            let spec = MixtureSpec::scaled(cfg.d, cfg.r, cfg.noise, cfg.eta, seed)?;
            let ds = generate(&spec, cfg.n)?;
            let rec = train(&ds, &cfg.train)?;
            let reports = run_suite(&ds, &rec, &cfg.train.model)?;
            Ok(SeedRun { seed, reports })
        })
        .collect::<Result<_>>()?;
    runs.sort_by_key(|r| r.seed);
    Ok(BatchOutcome { runs })
}

/// Whether a step rule is the schedule the lemmas are stated for.
pub fn is_paper_schedule(step: &StepRule) -> bool {
    matches!(step, StepRule::PaperSchedule { .. })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Matrix;
    use crate::linear::Reduction;

    fn dataset(rows: Vec<Vec<f64>>, labels: Vec<f64>) -> Dataset {
        let d = rows[0].len();
        let spec = MixtureSpec::new(vec![0.5; d], NoiseDist::Gaussian, 0.0, 0).unwrap();
        Dataset::new(Matrix::from_rows(&rows).unwrap(), labels.clone(), labels, spec).unwrap()
    }

    #[test]
    fn c0_examples() {
        let ds = dataset(vec![vec![1.0, 1.0], vec![-1.0, 1.0]], vec![1.0, 1.0]);
        assert!((measure_c0(&ds) - 1.0).abs() < 1e-15);
        let ds = dataset(vec![vec![2.0, 0.0], vec![1.0, 1.0]], vec![1.0, -1.0]);
        assert!((measure_c0(&ds) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn c0_gaussian_concentrates() {
        let mut ok = 0;
        for seed in 0..10 {
            let spec = MixtureSpec::scaled(5000, 0.3, NoiseDist::Gaussian, 0.1, seed).unwrap();
            let ds = generate(&spec, 50).unwrap();
            ok += (measure_c0(&ds) <= 1.5) as usize;
        }
        assert!(ok >= 9, "{ok}");
    }

    fn small_run(eps: f64, t: usize) -> (Dataset, TrainRecord, PerturbationModel) {
        let spec = MixtureSpec::scaled(400, 0.3, NoiseDist::Gaussian, 0.1, 3).unwrap();
        let ds = generate(&spec, 20).unwrap();
        let model = PerturbationModel::new(Exponent::TWO, eps).unwrap();
        let cfg = TrainConfig {
            iterations: t,
            step: StepRule::Constant {
                alpha: 1e-4,
                reduction: Reduction::Sum,
            },
            ..TrainConfig::practical(model)
        };
        let rec = train(&ds, &cfg).unwrap();
        (ds, rec, model)
    }

    #[test]
    fn suite_reports_every_lemma() {
        let (ds, rec, model) = small_run(0.05, 40);
        let reports = run_suite(&ds, &rec, &model).unwrap();
        let ids: Vec<LemmaId> = reports.iter().map(|r| r.lemma).collect();
        assert_eq!(ids, LemmaId::ALL.to_vec());
        let sub = &reports[5];
        assert!(sub.passed, "{sub}");
        let l3 = &reports[2];
        assert!(l3.passed, "{l3}");
    }

    #[test]
    fn zero_radius_norm_bound_uses_sqrt_c0() {
        let (ds, rec, model) = small_run(0.0, 30);
        let reports = run_suite(&ds, &rec, &model).unwrap();
        let l3 = &reports[2];
        let c0 = measure_c0(&ds);
        assert!((l3.constant("coefficient").unwrap() - c0.sqrt() * 20.0).abs() < 1e-12);
        assert!(l3.passed);
    }

    #[test]
    fn suite_is_read_only_and_rejects_mismatch() {
        let (ds, rec, model) = small_run(0.05, 15);
        let (ds0, rec0) = (ds.clone(), rec.thetas.clone());
        run_suite(&ds, &rec, &model).unwrap();
        assert_eq!(ds, ds0);
        assert_eq!(rec.thetas, rec0);

        let other = generate(&MixtureSpec::scaled(10, 0.3, NoiseDist::Gaussian, 0.1, 1).unwrap(), 20).unwrap();
        assert!(matches!(run_suite(&other, &rec, &model), Err(Error::Shape(_))));
    }

    #[test]
    fn non_separable_input_is_reported() {
        let ds = dataset(vec![vec![1.0, 0.2], vec![1.0, 0.2]], vec![1.0, -1.0]);
        let model = PerturbationModel::new(Exponent::TWO, 0.1).unwrap();
        let cfg = TrainConfig::paper_schedule(model, 10.0, 20);
        let rec = train(&ds, &cfg).unwrap();
        assert!(!rec.warnings.is_empty());
        let reports = run_suite(&ds, &rec, &model).unwrap();
        assert!(reports[4].details.contains("assumption violated"), "{}", reports[4]);
        assert!(!reports[0].passed);
    }

    #[test]
    fn exports() {
        let (ds, rec, model) = small_run(0.05, 12);
        let reports = run_suite(&ds, &rec, &model).unwrap();
        let mut text = Vec::new();
        write_text(&mut text, &reports).unwrap();
        assert_eq!(String::from_utf8(text).unwrap().lines().count(), 6);
        let mut csv = Vec::new();
        write_csv(&mut csv, &reports).unwrap();
        let csv = String::from_utf8(csv).unwrap();
        assert!(csv.starts_with("lemma_id,passed,constant_name,constant_value,worst_iteration\n"));
        let rows = reports.iter().map(|r| r.measured.len()).sum::<usize>();
        assert_eq!(csv.lines().count(), rows + 1);
    }
}
