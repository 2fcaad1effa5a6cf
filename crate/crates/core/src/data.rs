//! Sub-Gaussian mixture data with label-flip noise.
//!
//! A clean sample is `x = ỹ μ + ξ` with `ỹ` uniform on `{±1}` and `ξ` having
//! i.i.d. zero-mean, unit-variance entries. The observed label is `ỹ` flipped
//! independently with probability `η`.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::margin;
use crate::norms::{dot, l2_norm, lp_norm, PerturbationModel};
use crate::rng::{derive, CounterRng};

/// Confidence level used only for reporting thresholds.
pub const REPORT_DELTA: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseDist {
    Gaussian,
    Rademacher,
    /// Uniform on `[−√3, √3]`.
    UniformPm,
}

impl NoiseDist {
    fn draw(self, rng: &mut CounterRng) -> f64 {
        match self {
            NoiseDist::Gaussian => rng.normal(),
            NoiseDist::Rademacher => rng.sign(),
            NoiseDist::UniformPm => 3f64.sqrt() * (2.0 * rng.uniform() - 1.0),
        }
    }
}

impl fmt::Display for NoiseDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseDist::Gaussian => "gaussian",
            NoiseDist::Rademacher => "rademacher",
            NoiseDist::UniformPm => "uniform_pm",
        })
    }
}

impl FromStr for NoiseDist {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "gaussian" => Ok(NoiseDist::Gaussian),
            "rademacher" => Ok(NoiseDist::Rademacher),
            "uniform_pm" => Ok(NoiseDist::UniformPm),
            other => Err(Error::Parse(format!("unknown noise distribution `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixtureSpec {
    pub mu: Vec<f64>,
    pub noise: NoiseDist,
    pub eta: f64,
    pub seed: u64,
}

impl MixtureSpec {
    pub fn new(mu: Vec<f64>, noise: NoiseDist, eta: f64, seed: u64) -> Result<Self> {
        if mu.is_empty() {
            return Err(Error::domain("dimension must be at least 1"));
        }
        if !(0.0..0.5).contains(&eta) {
            return Err(Error::domain(format!("eta must lie in [0, 0.5), got {eta}")));
        }
        Ok(Self { mu, noise, eta, seed })
    }

    /// The mixture used throughout the experiments: `μ ∝ 1` with `‖μ‖₂ = d^r`.
    pub fn scaled(d: usize, r: f64, noise: NoiseDist, eta: f64, seed: u64) -> Result<Self> {
        Self::new(mu_from_scaling(d, r)?, noise, eta, seed)
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

/// All-ones direction scaled to `‖μ‖₂ = d^r`.
pub fn mu_from_scaling(d: usize, r: f64) -> Result<Vec<f64>> {
    if d == 0 {
        return Err(Error::domain("dimension must be at least 1"));
    }
    let df = d as f64;
    Ok(vec![df.powf(r) / df.sqrt(); d])
}

/// One draw from the mixture: `(observed label, clean label, features)`.
///
/// Sample `index` of stream `stream_seed` consumes its own counter stream
/// `derive(stream_seed, index)`: first the clean-label sign, then the flip
/// uniform, then `d` noise entries.
pub fn sample_point(spec: &MixtureSpec, stream_seed: u64, index: u64, x: &mut [f64]) -> (f64, f64) {
    let mut rng = CounterRng::new(derive(stream_seed, index));
    let clean = rng.sign();
    let flip = rng.uniform() < spec.eta;
    for (xi, &mi) in x.iter_mut().zip(&spec.mu) {
        *xi = clean * mi + spec.noise.draw(&mut rng);
    }
    (if flip { -clean } else { clean }, clean)
}

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Row-major entries.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    /// `M v`.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        self.iter_rows().map(|r| dot(r, v)).collect()
    }

    /// `Mᵀ w`, accumulated row by row in index order.
    pub fn tr_mul_vec(&self, w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (row, &wi) in self.iter_rows().zip(w) {
            for (o, &r) in out.iter_mut().zip(row) {
                *o += wi * r;
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    /// Observed (possibly flipped) labels, each `±1.0`.
    pub labels: Vec<f64>,
    pub clean_labels: Vec<f64>,
    /// Indices where the observed label differs from the clean one.
    pub noise_indices: Vec<usize>,
    pub spec: MixtureSpec,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<f64>, clean_labels: Vec<f64>, spec: MixtureSpec) -> Result<Self> {
        let n = features.rows();
        if n == 0 {
            return Err(Error::Shape("dataset must contain at least one sample".into()));
        }
        if labels.len() != n || clean_labels.len() != n {
            return Err(Error::Shape(format!(
                "{} rows but {} labels / {} clean labels",
                n,
                labels.len(),
                clean_labels.len()
            )));
        }
        if features.cols() != spec.dim() {
            return Err(Error::Shape(format!(
                "features have {} columns, spec has dimension {}",
                features.cols(),
                spec.dim()
            )));
        }
        if labels.iter().chain(&clean_labels).any(|&y| y != 1.0 && y != -1.0) {
            return Err(Error::domain("labels must be +1 or -1"));
        }
        let noise_indices = (0..n).filter(|&k| labels[k] != clean_labels[k]).collect();
        Ok(Self {
            features,
            labels,
            clean_labels,
            noise_indices,
            spec,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn x(&self, k: usize) -> &[f64] {
        self.features.row(k)
    }

    /// Rows `z_k = y_k x_k`.
    pub fn signed_features(&self) -> Matrix {
        let mut z = self.features.clone();
        for k in 0..self.len() {
            let y = self.labels[k];
            z.row_mut(k).iter_mut().for_each(|v| *v *= y);
        }
        z
    }

    pub fn is_noisy(&self, k: usize) -> bool {
        self.labels[k] != self.clean_labels[k]
    }

    /// CSV with header `y,clean_y,x_0,...,x_{d-1}`; floats carry 17
    /// significant digits so they round-trip exactly.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["y".to_string(), "clean_y".to_string()];
        header.extend((0..self.dim()).map(|j| format!("x_{j}")));
        w.write_record(&header)?;
        for k in 0..self.len() {
            let mut rec = vec![format_label(self.labels[k]), format_label(self.clean_labels[k])];
            rec.extend(self.x(k).iter().map(|v| format_f64(*v)));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the format written by [`Dataset::write_csv`]. The mixture that
    /// produced the data is not stored in the file and must be supplied.
    pub fn read_csv<R: Read>(input: R, spec: MixtureSpec) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        if header.len() < 3 || &header[0] != "y" || &header[1] != "clean_y" {
            return Err(Error::Parse("expected header `y,clean_y,x_0,...`".into()));
        }
        let mut rows = Vec::new();
        let (mut labels, mut clean) = (Vec::new(), Vec::new());
        for rec in r.records() {
            let rec = rec?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|s| s.trim().parse::<f64>().map_err(|_| Error::Parse(format!("bad number `{s}`"))))
                .collect::<Result<_>>()?;
            labels.push(vals[0]);
            clean.push(vals[1]);
            rows.push(vals[2..].to_vec());
        }
        Dataset::new(Matrix::from_rows(&rows)?, labels, clean, spec)
    }
}

fn format_label(y: f64) -> String {
    if y > 0.0 { "1" } else { "-1" }.to_string()
}

pub(crate) fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// `n` i.i.d. samples; deterministic given `spec.seed`.
pub fn generate(spec: &MixtureSpec, n: usize) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::domain("n must be at least 1"));
    }
    let d = spec.dim();
    let mut features = Matrix::zeros(n, d);
    let mut labels = Vec::with_capacity(n);
    let mut clean = Vec::with_capacity(n);
    for k in 0..n {
        let (y, c) = sample_point(spec, spec.seed, k as u64, features.row_mut(k));
        labels.push(y);
        clean.push(c);
    }
    Dataset::new(features, labels, clean, spec.clone())
}

/// Which hypotheses of the risk theorem hold for a sample. Nothing here fails;
/// every comparison is reported.
#[derive(Clone, Debug, PartialEq)]
pub struct AssumptionReport {
    pub n: usize,
    pub d: usize,
    /// `d / max{n‖μ‖₂², n² log(n/δ)}` with `δ = 0.1`.
    pub dimension_ratio: f64,
    /// `dimension_ratio ≥ 1`, i.e. the dimension condition with its constant set to 1.
    pub dimension_ok: bool,
    pub mu_sq: f64,
    /// `‖μ‖₂² ≥ max{log(n/δ), ε‖μ‖_q}`.
    pub signal_ok: bool,
    /// Standard margin γ̄ in the dual norm of the threat model.
    pub standard_margin: f64,
    /// `ε ≤ γ̄`.
    pub radius_ok: bool,
    pub separable: bool,
}

pub fn check_assumptions(ds: &Dataset, model: &PerturbationModel) -> AssumptionReport {
    let n = ds.len();
    let d = ds.dim();
    let nf = n as f64;
    let mu_sq = dot(&ds.spec.mu, &ds.spec.mu);
    let log_term = (nf / REPORT_DELTA).ln();
    let dimension_ratio = d as f64 / (nf * mu_sq).max(nf * nf * log_term);
    let signal_ok = mu_sq >= log_term.max(model.epsilon * lp_norm(&ds.spec.mu, model.q));
    let gamma_bar = margin::standard_margin(ds, model.q).value;
    AssumptionReport {
        n,
        d,
        dimension_ratio,
        dimension_ok: dimension_ratio >= 1.0,
        mu_sq,
        signal_ok,
        standard_margin: gamma_bar,
        radius_ok: model.epsilon <= gamma_bar,
        separable: gamma_bar > 0.0,
    }
}

impl fmt::Display for AssumptionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "n={} d={} |mu|^2={:.6}", self.n, self.d, self.mu_sq)?;
        writeln!(f, "dimension_ratio={:.6} dimension_ok={}", self.dimension_ratio, self.dimension_ok)?;
        writeln!(f, "signal_ok={}", self.signal_ok)?;
        writeln!(f, "standard_margin={:.6} radius_ok={}", self.standard_margin, self.radius_ok)?;
        write!(f, "separable={}", self.separable)
    }
}

/// Squared norms of the rows `z_k`, used by several geometric checks.
pub fn squared_row_norms(z: &Matrix) -> Vec<f64> {
    z.iter_rows().map(|r| {
        let n = l2_norm(r);
        n * n
    }).collect()
}
