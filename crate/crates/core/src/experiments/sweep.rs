use std::fs;
use std::io::{Read, Write};
use std::path::PathBuf;

use rayon::prelude::*;

use super::config::{Eval, ExperimentConfig, FigureId, StepMode};
use super::svg::{self, Panel};
use crate::data::{format_f64, generate, MixtureSpec, NoiseDist};
use crate::error::{Error, Result};
use crate::linear::{adversarial_loss, alignment, train, Init, StepRule, TrainConfig};
use crate::margin;
use crate::neural::{adv_train_nn, nn_monte_carlo_risk, NnTrainConfig, PgdConfig, TwoLayerNet};
use crate::norms::{l2_norm, Exponent, PerturbationModel};
use crate::risk::{analytic_risk, bayes_linear_risk, monte_carlo_risk};
use crate::rng::{derive, namespace};

/// One run of the sweep evaluated at one recorded iterate.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub seed: u64,
    pub d: usize,
    pub n: usize,
    pub eta: f64,
    pub p: Exponent,
    pub epsilon: f64,
    pub r: f64,
    pub t: usize,
    pub train_err: f64,
    pub adv_train_err: f64,
    pub std_risk: f64,
    pub adv_risk: f64,
    pub risk_method: String,
    pub loss: f64,
    pub alignment: f64,
    pub theta_l2: f64,
    pub margin_std: f64,
    pub margin_adv: f64,
}

pub const RAW_HEADER: [&str; 18] = [
    "seed",
    "d",
    "n",
    "eta",
    "p",
    "epsilon",
    "r",
    "t",
    "train_err",
    "adv_train_err",
    "std_risk",
    "adv_risk",
    "risk_method",
    "loss",
    "alignment",
    "theta_l2",
    "margin_std",
    "margin_adv",
];

/// Columns averaged into the aggregated CSV.
pub const METRICS: [&str; 9] = [
    "train_err",
    "adv_train_err",
    "std_risk",
    "adv_risk",
    "loss",
    "alignment",
    "theta_l2",
    "margin_std",
    "margin_adv",
];

impl SweepRow {
    fn metric(&self, i: usize) -> f64 {
        [
            self.train_err,
            self.adv_train_err,
            self.std_risk,
            self.adv_risk,
            self.loss,
            self.alignment,
            self.theta_l2,
            self.margin_std,
            self.margin_adv,
        ][i]
    }

    fn record(&self) -> Vec<String> {
        vec![
            self.seed.to_string(),
            self.d.to_string(),
            self.n.to_string(),
            format_f64(self.eta),
            self.p.to_string(),
            format_f64(self.epsilon),
            format_f64(self.r),
            self.t.to_string(),
            format_f64(self.train_err),
            format_f64(self.adv_train_err),
            format_f64(self.std_risk),
            format_f64(self.adv_risk),
            self.risk_method.clone(),
            format_f64(self.loss),
            format_f64(self.alignment),
            format_f64(self.theta_l2),
            format_f64(self.margin_std),
            format_f64(self.margin_adv),
        ]
    }
}

pub fn write_raw_csv<W: Write>(out: W, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RAW_HEADER)?;
    for row in rows {
        w.write_record(row.record())?;
    }
    w.flush()?;
    Ok(())
}

/// Mean and standard error of every metric at one configuration point and
/// recorded iterate.
#[derive(Clone, Debug, PartialEq)]
pub struct AggRow {
    pub d: usize,
    pub n: usize,
    pub eta: f64,
    pub p: Exponent,
    pub epsilon: f64,
    pub r: f64,
    pub t: usize,
    pub runs: usize,
    pub mean: [f64; METRICS.len()],
    pub stderr: [f64; METRICS.len()],
    pub baseline_bayes: f64,
}

impl AggRow {
    pub fn mean_of(&self, metric: &str) -> Option<f64> {
        METRICS.iter().position(|m| *m == metric).map(|i| self.mean[i])
    }

    pub fn stderr_of(&self, metric: &str) -> Option<f64> {
        METRICS.iter().position(|m| *m == metric).map(|i| self.stderr[i])
    }
}

/// Groups rows by `(d, epsilon, r, t)` in first-seen order.
pub fn aggregate(rows: &[SweepRow]) -> Vec<AggRow> {
    let mut keys: Vec<(usize, u64, u64, usize)> = Vec::new();
    let mut groups: Vec<Vec<&SweepRow>> = Vec::new();
    for row in rows {
        let key = (row.d, row.epsilon.to_bits(), row.r.to_bits(), row.t);
        match keys.iter().position(|k| *k == key) {
            Some(i) => groups[i].push(row),
            None => {
                keys.push(key);
                groups.push(vec![row]);
            }
        }
    }
    groups
        .into_iter()
        .map(|g| {
            let first = g[0];
            let k = g.len() as f64;
            let mut mean = [0.0; METRICS.len()];
            let mut stderr = [0.0; METRICS.len()];
            for i in 0..METRICS.len() {
                let m = g.iter().map(|r| r.metric(i)).sum::<f64>() / k;
                mean[i] = m;
                stderr[i] = if g.len() > 1 {
                    let var = g.iter().map(|r| (r.metric(i) - m).powi(2)).sum::<f64>() / (k - 1.0);
                    (var / k).sqrt()
                } else {
                    0.0
                };
            }
            let spec = MixtureSpec::scaled(first.d, first.r, NoiseDist::Gaussian, first.eta, 0);
            AggRow {
                d: first.d,
                n: first.n,
                eta: first.eta,
                p: first.p,
                epsilon: first.epsilon,
                r: first.r,
                t: first.t,
                runs: g.len(),
                mean,
                stderr,
                baseline_bayes: spec.map(|s| bayes_linear_risk(&s)).unwrap_or(f64::NAN),
            }
        })
        .collect()
}

pub fn write_agg_csv<W: Write>(out: W, rows: &[AggRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["d", "n", "eta", "p", "epsilon", "r", "t", "runs"].map(String::from).to_vec();
    for m in METRICS {
        header.push(format!("{m}_mean"));
        header.push(format!("{m}_stderr"));
    }
    header.push("baseline_eta".into());
    header.push("baseline_bayes".into());
    w.write_record(&header)?;
    for row in rows {
        let mut rec = vec![
            row.d.to_string(),
            row.n.to_string(),
            format_f64(row.eta),
            row.p.to_string(),
            format_f64(row.epsilon),
            format_f64(row.r),
            row.t.to_string(),
            row.runs.to_string(),
        ];
        for i in 0..METRICS.len() {
            rec.push(format_f64(row.mean[i]));
            rec.push(format_f64(row.stderr[i]));
        }
        rec.push(format_f64(row.eta));
        rec.push(format_f64(row.baseline_bayes));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an aggregated CSV back as header-keyed records.
pub fn read_agg_csv<R: Read>(input: R) -> Result<Vec<Vec<(String, String)>>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    r.records()
        .map(|rec| {
            let rec = rec?;
            Ok(header.iter().cloned().zip(rec.iter().map(String::from)).collect())
        })
        .collect()
}

#[derive(Clone, Copy, Debug)]
struct GridPoint {
    d: usize,
    r: f64,
    epsilon: f64,
}

fn grid(cfg: &ExperimentConfig) -> Vec<GridPoint> {
    let mut pts = Vec::new();
    for &r in &cfg.mu_scaling_r {
        for &epsilon in &cfg.epsilon {
            for &d in &cfg.d_grid {
                pts.push(GridPoint { d, r, epsilon });
            }
        }
    }
    pts
}

/// Runs every grid point for every seed and returns the raw rows ordered by
/// grid index, seed and iterate.
///
/// Run `i` trains on data seed `base_seed + i`; its Monte Carlo draws come
/// from a stream keyed by `base_seed` and `i`, disjoint from every data seed.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let tasks: Vec<(GridPoint, u64)> = grid(cfg)
        .into_iter()
        .flat_map(|g| (0..cfg.seeds as u64).map(move |i| (g, i)))
        .collect();
    let chunks: Vec<Vec<SweepRow>> = tasks
        .into_par_iter()
        .map(|(g, i)| run_point(cfg, g, i))
        .collect::<Result<_>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

fn run_point(cfg: &ExperimentConfig, g: GridPoint, i: u64) -> Result<Vec<SweepRow>> {
    let seed = cfg.base_seed + i;
    let eval_seed = derive(derive(cfg.base_seed, namespace::EVAL), i);
    let model = PerturbationModel::new(cfg.p, g.epsilon)?;
    let spec = MixtureSpec::scaled(g.d, g.r, cfg.noise, cfg.eta, seed)?;
    let ds = generate(&spec, cfg.n)?;
    let (margin_std, margin_adv) = if cfg.margins {
        (
            margin::standard_margin(&ds, model.q).value,
            margin::adversarial_margin(&ds, &model).value,
        )
    } else {
        (f64::NAN, f64::NAN)
    };
    let row = |t: usize| SweepRow {
        seed,
        d: g.d,
        n: cfg.n,
        eta: cfg.eta,
        p: cfg.p,
        epsilon: g.epsilon,
        r: g.r,
        t,
        train_err: f64::NAN,
        adv_train_err: f64::NAN,
        std_risk: f64::NAN,
        adv_risk: f64::NAN,
        risk_method: cfg.eval.to_string(),
        loss: f64::NAN,
        alignment: f64::NAN,
        theta_l2: f64::NAN,
        margin_std,
        margin_adv,
    };

    if cfg.figure == FigureId::NnRiskVsD {
        let Eval::MonteCarlo(m) = cfg.eval else {
            return Err(Error::config("network risk needs monte carlo evaluation"));
        };
        let net0 = TwoLayerNet::xavier(cfg.hidden, g.d, seed)?;
        let pgd = PgdConfig::with_steps(model, cfg.pgd_steps);
        let tc = NnTrainConfig {
            pgd,
            epochs: cfg.t,
            lr: cfg.alpha,
            reduction: cfg.reduction,
        };
        let rec = adv_train_nn(&ds, &net0, &tc)?;
        let last = rec.last();
        let risk = nn_monte_carlo_risk(&rec.net, &spec, &pgd, m, eval_seed)?;
        return Ok(vec![SweepRow {
            train_err: last.train_err,
            adv_train_err: last.adv_train_err,
            std_risk: risk.std_risk,
            adv_risk: risk.adv_risk,
            loss: last.loss,
            alignment: last.alignment,
            theta_l2: last.theta_l2,
            ..row(last.t)
        }]);
    }

    let step = match cfg.step {
        StepMode::Constant => StepRule::Constant {
            alpha: cfg.alpha,
            reduction: cfg.reduction,
        },
        StepMode::Paper { g } => StepRule::PaperSchedule { g },
    };
    let init = match cfg.init {
        Init::Zero => Init::Zero,
        Init::Xavier { .. } => Init::Xavier { seed },
    };
    let tc = TrainConfig {
        model,
        step,
        iterations: cfg.t,
        record_every: cfg.record_every,
        init,
    };
    let rec = train(&ds, &tc)?;
    rec.thetas
        .iter()
        .map(|(t, theta)| {
            let s = &rec.stats[*t];
            let (std_risk, adv_risk) = evaluate(theta, &spec, &model, cfg.eval, eval_seed)?;
            Ok(SweepRow {
                train_err: s.train_err,
                adv_train_err: s.adv_train_err,
                std_risk,
                adv_risk,
                loss: adversarial_loss(theta, &ds, &model).value,
                alignment: alignment(theta, &spec.mu).unwrap_or(f64::NAN),
                theta_l2: l2_norm(theta),
                ..row(*t)
            })
        })
        .collect()
}

/// Risk is undefined at `θ = 0`, reported as NaN.
fn evaluate(theta: &[f64], spec: &MixtureSpec, model: &PerturbationModel, eval: Eval, seed: u64) -> Result<(f64, f64)> {
    if theta.iter().all(|&v| v == 0.0) {
        return Ok((f64::NAN, f64::NAN));
    }
    let rep = match eval {
        Eval::Analytic => analytic_risk(theta, spec, model)?,
        Eval::MonteCarlo(m) => monte_carlo_risk(theta, spec, model, m, seed)?,
    };
    Ok((rep.std_risk, rep.adv_risk))
}

/// Paths written by [`run_figure`].
#[derive(Clone, Debug)]
pub struct FigureOutput {
    pub raw_csv: PathBuf,
    pub agg_csv: PathBuf,
    pub svgs: Vec<PathBuf>,
    pub rows: Vec<SweepRow>,
    pub aggregated: Vec<AggRow>,
}

/// Runs the sweep and writes `{name}_raw.csv`, `{name}_agg.csv` and one SVG
/// per panel, `{name}_a.svg` and `{name}_b.svg`, into `output_dir`.
pub fn run_figure(cfg: &ExperimentConfig) -> Result<FigureOutput> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.output_dir)?;
    let rows = run_sweep(cfg)?;
    let aggregated = aggregate(&rows);

    let raw_csv = cfg.output_dir.join(format!("{}_raw.csv", cfg.name));
    write_raw_csv(fs::File::create(&raw_csv)?, &rows)?;
    let agg_csv = cfg.output_dir.join(format!("{}_agg.csv", cfg.name));
    write_agg_csv(fs::File::create(&agg_csv)?, &aggregated)?;

    let svgs = render_figure(cfg, &agg_csv)?;
    Ok(FigureOutput {
        raw_csv,
        agg_csv,
        svgs,
        rows,
        aggregated,
    })
}

/// Draws the panels of a figure from its aggregated CSV alone.
pub fn render_figure(cfg: &ExperimentConfig, agg_csv: &std::path::Path) -> Result<Vec<PathBuf>> {
    let records = read_agg_csv(fs::File::open(agg_csv)?)?;
    let vs_t = cfg.figure == FigureId::AdvRiskVsT || (cfg.figure == FigureId::Custom && cfg.d_grid.len() == 1);
    let panels = if vs_t {
        [Panel::over_t("adv_risk", "adversarial risk"), Panel::over_t("std_risk", "standard risk")]
    } else {
        [Panel::over_d("std_risk", "standard risk", cfg.log_x), Panel::over_d("adv_risk", "adversarial risk", cfg.log_x)]
    };
    let mut out = Vec::new();
    for (panel, suffix) in panels.iter().zip(["a", "b"]) {
        let path = cfg.output_dir.join(format!("{}_{suffix}.svg", cfg.name));
        fs::write(&path, svg::render(&records, panel)?)?;
        out.push(path);
    }
    Ok(out)
}
