use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::NoiseDist;
use crate::error::{Error, Result};
use crate::linear::{Init, Reduction};
use crate::norms::Exponent;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FigureId {
    RiskVsD,
    AdvRiskVsT,
    NnRiskVsD,
    Custom,
}

impl fmt::Display for FigureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FigureId::RiskVsD => "risk_vs_d",
            FigureId::AdvRiskVsT => "adv_risk_vs_t",
            FigureId::NnRiskVsD => "nn_risk_vs_d",
            FigureId::Custom => "custom",
        })
    }
}

impl FromStr for FigureId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "risk_vs_d" => Ok(FigureId::RiskVsD),
            "adv_risk_vs_t" => Ok(FigureId::AdvRiskVsT),
            "nn_risk_vs_d" => Ok(FigureId::NnRiskVsD),
            "custom" => Ok(FigureId::Custom),
            _ => Err(Error::Parse(format!("unknown figure_id `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Eval {
    Analytic,
    MonteCarlo(usize),
}

impl fmt::Display for Eval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Eval::Analytic => f.write_str("analytic"),
            Eval::MonteCarlo(m) => write!(f, "monte_carlo({m})"),
        }
    }
}

impl FromStr for Eval {
    type Err = Error;

    /// `analytic`, `monte_carlo` (2000 draws) or `monte_carlo(m)`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "analytic" {
            return Ok(Eval::Analytic);
        }
        if s == "monte_carlo" {
            return Ok(Eval::MonteCarlo(2000));
        }
        if let Some(inner) = s.strip_prefix("monte_carlo(").and_then(|r| r.strip_suffix(')')) {
            let m = parse_num::<usize>("eval", inner)?;
            return Ok(Eval::MonteCarlo(m));
        }
        Err(Error::Parse(format!("unknown eval `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepMode {
    Constant,
    /// The decreasing schedule with gradient bound `g`.
    Paper { g: f64 },
}

/// Settings of a sweep. Grid fields hold every value swept over.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    /// Prefix of the output files.
    pub name: String,
    pub figure: FigureId,
    pub n: usize,
    pub eta: f64,
    pub p: Exponent,
    pub epsilon: Vec<f64>,
    pub mu_scaling_r: Vec<f64>,
    pub d_grid: Vec<usize>,
    pub noise: NoiseDist,
    /// Iterations for linear models, epochs for networks.
    pub t: usize,
    pub alpha: f64,
    pub reduction: Reduction,
    pub step: StepMode,
    pub init: Init,
    pub record_every: usize,
    pub seeds: usize,
    pub base_seed: u64,
    pub eval: Eval,
    pub margins: bool,
    pub hidden: usize,
    pub pgd_steps: usize,
    pub log_x: bool,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn preset(figure: FigureId) -> Self {
        let base = Self {
            name: figure.to_string(),
            figure,
            n: 50,
            eta: 0.1,
            p: Exponent::TWO,
            epsilon: vec![0.1],
            mu_scaling_r: vec![0.2, 0.3, 0.4],
            d_grid: vec![50, 100, 200, 500, 1000],
            noise: NoiseDist::Gaussian,
            t: 1000,
            alpha: 0.001,
            reduction: Reduction::Mean,
            step: StepMode::Constant,
            init: Init::Zero,
            record_every: 1000,
            seeds: 10,
            base_seed: 0,
            eval: Eval::Analytic,
            margins: true,
            hidden: crate::neural::DEFAULT_HIDDEN,
            pgd_steps: 10,
            log_x: true,
            output_dir: PathBuf::from("."),
        };
        match figure {
            FigureId::RiskVsD | FigureId::Custom => base,
            FigureId::AdvRiskVsT => Self {
                epsilon: vec![0.0, 0.05, 0.1, 0.2],
                mu_scaling_r: vec![0.3],
                d_grid: vec![200],
                record_every: 10,
                log_x: false,
                ..base
            },
            FigureId::NnRiskVsD => Self {
                mu_scaling_r: vec![0.3, 0.4],
                t: 500,
                alpha: 0.03,
                record_every: 500,
                eval: Eval::MonteCarlo(2000),
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let grids = [
            ("epsilon", self.epsilon.is_empty()),
            ("mu_scaling_r", self.mu_scaling_r.is_empty()),
            ("d_grid", self.d_grid.is_empty()),
        ];
        if let Some((name, _)) = grids.iter().find(|(_, empty)| *empty) {
            return Err(Error::config(format!("{name} grid is empty")));
        }
        if self.seeds == 0 {
            return Err(Error::config("seeds must be at least 1"));
        }
        if self.n == 0 || self.d_grid.contains(&0) {
            return Err(Error::config("n and every d must be positive"));
        }
        if self.epsilon.iter().any(|e| !(*e >= 0.0) || !e.is_finite()) {
            return Err(Error::config("every epsilon must be finite and non-negative"));
        }
        if !(0.0..0.5).contains(&self.eta) {
            return Err(Error::config(format!("eta must lie in [0, 0.5), got {}", self.eta)));
        }
        if self.record_every == 0 {
            return Err(Error::config("record_every must be at least 1"));
        }
        if let Eval::MonteCarlo(0) = self.eval {
            return Err(Error::config("monte carlo evaluation needs at least one draw"));
        }
        if self.figure == FigureId::NnRiskVsD && self.eval == Eval::Analytic {
            return Err(Error::config("network risk has no closed form; use eval = monte_carlo(m)"));
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::config(format!("invalid name `{}`", self.name)));
        }
        Ok(())
    }

    /// Parses `key = value` lines on top of the preset named by `figure_id`
    /// (or `custom`). `#` starts a comment; grids are comma-separated.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Parse(format!("line {}: expected `key = value`", lineno + 1)));
            };
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let figure = match pairs.iter().rev().find(|(k, _)| k == "figure_id") {
            Some((_, v)) => v.parse()?,
            None => FigureId::Custom,
        };
        let mut cfg = Self::preset(figure);
        for (k, v) in &pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; `name` defaults to the file stem.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::parse(&text)?;
        if !text.lines().any(|l| l.split('#').next().unwrap_or("").trim_start().starts_with("name")) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                cfg.name = stem.to_string();
            }
        }
        Ok(cfg)
    }

    /// Applies one `key = value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "name" => self.name = value.to_string(),
            "figure_id" => self.figure = value.parse()?,
            "n" => self.n = parse_num(key, value)?,
            "eta" => self.eta = parse_num(key, value)?,
            "p" => self.p = value.parse().map_err(|e: Error| Error::Parse(format!("p: {e}")))?,
            "epsilon" | "eps" => self.epsilon = parse_grid(key, value)?,
            "mu_scaling_r" | "r" => self.mu_scaling_r = parse_grid(key, value)?,
            "d_grid" | "d" => self.d_grid = parse_grid(key, value)?,
            "noise" => self.noise = value.parse()?,
            "T" | "t" | "iterations" | "epochs" => self.t = parse_num(key, value)?,
            "alpha" | "lr" => self.alpha = parse_num(key, value)?,
            "reduction" => self.reduction = value.parse()?,
            "step" => {
                self.step = match value {
                    "constant" => StepMode::Constant,
                    "paper" => StepMode::Paper { g: 10.0 },
                    _ => return Err(Error::Parse(format!("step: expected constant or paper, got `{value}`"))),
                }
            }
            "g" => self.step = StepMode::Paper { g: parse_num(key, value)? },
            "init" => {
                self.init = match value {
                    "zero" => Init::Zero,
                    "xavier" => Init::Xavier { seed: self.base_seed },
                    _ => return Err(Error::Parse(format!("init: expected zero or xavier, got `{value}`"))),
                }
            }
            "record_every" => self.record_every = parse_num(key, value)?,
            "seeds" => self.seeds = parse_num(key, value)?,
            "base_seed" | "seed" => self.base_seed = parse_num(key, value)?,
            "eval" => self.eval = value.parse()?,
            "margins" => self.margins = parse_bool(key, value)?,
            "hidden" | "h" => self.hidden = parse_num(key, value)?,
            "pgd_steps" => self.pgd_steps = parse_num(key, value)?,
            "log_x" => self.log_x = parse_bool(key, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            _ => return Err(Error::Parse(format!("unknown key `{key}`"))),
        }
        Ok(())
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("{key}: cannot parse `{value}`")))
}

fn parse_grid<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Parse(format!("{key}: expected a boolean, got `{value}`"))),
    }
}
