use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use benign_adv::data::{check_assumptions, generate, Dataset, MixtureSpec, NoiseDist};
use benign_adv::diagnostics::{self, SuiteConfig};
use benign_adv::experiments::{run_figure, ExperimentConfig, FigureId};
use benign_adv::linear::{train, Reduction, StepRule, TrainConfig};
use benign_adv::margin;
use benign_adv::norms::{Exponent, PerturbationModel};
use benign_adv::risk::{analytic_risk, monte_carlo_risk};
use benign_adv::Error;

#[derive(Parser, Debug)]
#[command(name = "benign-adv", version, about = "Adversarial training experiments on noisy Gaussian mixtures")]
struct Cli {
    /// Base random seed [default: 0, or the config file's `base_seed`].
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output path (file or directory, depending on the command).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[arg(long, global = true, value_enum, default_value_t = Format::Svg)]
    format: Format,

    /// Flat `key = value` experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    /// CSV files only.
    Csv,
    /// CSV files plus SVG plots.
    Svg,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one linear classifier and print a summary.
    Train(TrainArgs),
    /// Run a figure sweep.
    Sweep(SweepArgs),
    /// Evaluate a saved parameter vector.
    Risk(RiskArgs),
    /// Standard and adversarial margins of a sample, with an assumption report.
    Margins(MarginArgs),
    /// Run the proof-diagnostics suite over several seeds.
    Lemmas(LemmaArgs),
    /// Export a generated dataset as CSV.
    Gen(GenArgs),
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    #[arg(long, default_value_t = 50)]
    n: usize,
    #[arg(long, default_value_t = 200)]
    d: usize,
    /// Signal scaling, ‖μ‖₂ = d^r.
    #[arg(long, default_value_t = 0.3)]
    r: f64,
    #[arg(long, default_value_t = 0.1)]
    eta: f64,
    #[arg(long, default_value = "gaussian")]
    noise: NoiseDist,
}

impl DataArgs {
    fn spec(&self, seed: u64) -> benign_adv::Result<MixtureSpec> {
        MixtureSpec::scaled(self.d, self.r, self.noise, self.eta, seed)
    }
}

#[derive(Args, Debug, Clone, Copy)]
struct ModelArgs {
    /// Perturbation norm exponent (`inf` for ℓ∞).
    #[arg(long, default_value = "2")]
    p: Exponent,
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
}

impl ModelArgs {
    fn model(&self) -> benign_adv::Result<PerturbationModel> {
        PerturbationModel::new(self.p, self.eps)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum StepKind {
    Constant,
    Paper,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Read the training set from a CSV written by `gen` instead of sampling.
    #[arg(long)]
    data_csv: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    t: usize,
    #[arg(long, default_value_t = 0.001)]
    alpha: f64,
    #[arg(long, default_value = "mean")]
    reduction: Reduction,
    #[arg(long, value_enum, default_value_t = StepKind::Constant)]
    step: StepKind,
    /// Gradient bound of the decreasing schedule.
    #[arg(long, default_value_t = 10.0)]
    g: f64,
    #[arg(long, default_value_t = 10)]
    record_every: usize,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Preset used when no config file is given.
    #[arg(long, default_value = "risk_vs_d")]
    figure: String,
    /// Extra `key=value` overrides applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Method {
    Analytic,
    Mc,
}

#[derive(Args, Debug)]
struct RiskArgs {
    /// Parameter file written by `train --out`.
    #[arg(long)]
    theta: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_enum, default_value_t = Method::Analytic)]
    method: Method,
    /// Monte Carlo draws.
    #[arg(long, default_value_t = 2000)]
    m: usize,
}

#[derive(Args, Debug)]
struct MarginArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    data_csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct LemmaArgs {
    #[arg(long, default_value_t = 50)]
    n: usize,
    #[arg(long, default_value_t = 5000)]
    d: usize,
    #[arg(long, default_value_t = 0.3)]
    r: f64,
    #[arg(long, default_value_t = 0.1)]
    eta: f64,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 10)]
    seeds: usize,
    #[arg(long, default_value_t = 2000)]
    t: usize,
    #[arg(long, default_value_t = 10.0)]
    g: f64,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[command(flatten)]
    data: DataArgs,
}

/// `println!` that exits quietly when stdout is closed.
macro_rules! say {
    ($($arg:tt)*) => {
        emit(format_args!($($arg)*))
    };
}

fn emit(args: std::fmt::Arguments<'_>) {
    let mut out = io::stdout().lock();
    if let Err(e) = out.write_fmt(args).and_then(|()| out.write_all(b"\n")) {
        if e.kind() == io::ErrorKind::BrokenPipe {
            std::process::exit(0);
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("\nFor more information, try '--help'.");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

type CliResult = std::result::Result<(), CliError>;

fn run(cli: Cli) -> CliResult {
    if cli.config.is_some() && !matches!(cli.command, Command::Sweep(_)) {
        return Err(CliError::Usage("--config applies to `sweep` only".into()));
    }
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::Train(a) => cmd_train(&cli, a, seed),
        Command::Sweep(a) => cmd_sweep(&cli, a),
        Command::Risk(a) => cmd_risk(a, seed),
        Command::Margins(a) => cmd_margins(a, seed),
        Command::Lemmas(a) => cmd_lemmas(&cli, a, seed),
        Command::Gen(a) => cmd_gen(&cli, a, seed),
    }
}

fn load_or_generate(data: &DataArgs, csv: Option<&Path>, seed: u64) -> benign_adv::Result<Dataset> {
    let spec = data.spec(seed)?;
    match csv {
        Some(path) => Dataset::read_csv(File::open(path)?, spec),
        None => generate(&spec, data.n),
    }
}

fn cmd_train(cli: &Cli, a: &TrainArgs, seed: u64) -> CliResult {
    let model = a.model.model()?;
    let ds = load_or_generate(&a.data, a.data_csv.as_deref(), seed)?;
    let step = match a.step {
        StepKind::Constant => StepRule::Constant {
            alpha: a.alpha,
            reduction: a.reduction,
        },
        StepKind::Paper => StepRule::PaperSchedule { g: a.g },
    };
    let cfg = TrainConfig {
        model,
        step,
        iterations: a.t,
        record_every: a.record_every,
        ..TrainConfig::practical(model)
    };
    let rec = train(&ds, &cfg)?;
    for w in &rec.warnings {
        eprintln!("warning: {w}");
    }
    let last = rec.last();
    let theta = rec.final_theta();
    let risk = if theta.iter().all(|&v| v == 0.0) {
        None
    } else {
        analytic_risk(theta, &ds.spec, &model).ok()
    };
    let (std_risk, adv_risk) = risk.map_or((f64::NAN, f64::NAN), |r| (r.std_risk, r.adv_risk));
    say!(
        "n={} d={} p={} eps={} t={} train_err={} adv_train_err={} loss={:.6e} alignment={:.6} std_risk={:.6} adv_risk={:.6}",
        ds.len(),
        ds.dim(),
        model.p,
        model.epsilon,
        last.t,
        last.train_err,
        last.adv_train_err,
        last.loss,
        last.alignment,
        std_risk,
        adv_risk
    );
    if let Some(out) = &cli.out {
        fs::create_dir_all(out)?;
        rec.write_csv(File::create(out.join("trajectory.csv"))?)?;
        write_theta(&out.join("theta.csv"), theta)?;
    }
    Ok(())
}

fn write_theta(path: &Path, theta: &[f64]) -> io::Result<()> {
    let mut f = io::BufWriter::new(File::create(path)?);
    writeln!(f, "theta")?;
    for v in theta {
        writeln!(f, "{v:.16e}")?;
    }
    f.flush()
}

fn read_theta(path: &Path) -> std::result::Result<Vec<f64>, CliError> {
    let f = BufReader::new(File::open(path)?);
    let mut theta = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || (i == 0 && line == "theta") {
            continue;
        }
        let v = line
            .parse()
            .map_err(|_| CliError::Runtime(Error::Parse(format!("{}:{}: bad value `{line}`", path.display(), i + 1))))?;
        theta.push(v);
    }
    Ok(theta)
}

fn cmd_sweep(cli: &Cli, a: &SweepArgs) -> CliResult {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => {
            let figure: FigureId = a.figure.parse().map_err(|e: Error| CliError::Usage(e.to_string()))?;
            ExperimentConfig::preset(figure)
        }
    };
    for kv in &a.overrides {
        let Some((k, v)) = kv.split_once('=') else {
            return Err(CliError::Usage(format!("--set expects KEY=VALUE, got `{kv}`")));
        };
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = cli.seed {
        cfg.base_seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    let out = if cli.format == Format::Csv {
        csv_only(&cfg)?
    } else {
        run_figure(&cfg)?
    };
    say!("raw: {}", out.raw_csv.display());
    say!("aggregated: {}", out.agg_csv.display());
    for s in &out.svgs {
        say!("plot: {}", s.display());
    }
    Ok(())
}

fn csv_only(cfg: &ExperimentConfig) -> benign_adv::Result<benign_adv::experiments::FigureOutput> {
    use benign_adv::experiments::sweep::{aggregate, run_sweep, write_agg_csv, write_raw_csv};
    fs::create_dir_all(&cfg.output_dir)?;
    let rows = run_sweep(cfg)?;
    let aggregated = aggregate(&rows);
    let raw_csv = cfg.output_dir.join(format!("{}_raw.csv", cfg.name));
    write_raw_csv(File::create(&raw_csv)?, &rows)?;
    let agg_csv = cfg.output_dir.join(format!("{}_agg.csv", cfg.name));
    write_agg_csv(File::create(&agg_csv)?, &aggregated)?;
    Ok(benign_adv::experiments::FigureOutput {
        raw_csv,
        agg_csv,
        svgs: Vec::new(),
        rows,
        aggregated,
    })
}

fn cmd_risk(a: &RiskArgs, seed: u64) -> CliResult {
    let theta = read_theta(&a.theta)?;
    let model = a.model.model()?;
    let spec = a.data.spec(seed)?;
    let rep = match a.method {
        Method::Analytic => analytic_risk(&theta, &spec, &model)?,
        Method::Mc => monte_carlo_risk(&theta, &spec, &model, a.m, seed)?,
    };
    let mut line = format!("method={} std_risk={:.6} adv_risk={:.6}", rep.method, rep.std_risk, rep.adv_risk);
    if a.method == Method::Mc {
        line += &format!(" std_stderr={:.6} adv_stderr={:.6} m={}", rep.mc_stderr, rep.adv_mc_stderr, rep.mc_samples);
    }
    say!("{line}");
    Ok(())
}

fn cmd_margins(a: &MarginArgs, seed: u64) -> CliResult {
    let model = a.model.model()?;
    let ds = load_or_generate(&a.data, a.data_csv.as_deref(), seed)?;
    let std = margin::standard_margin(&ds, model.q);
    let adv = margin::adversarial_margin(&ds, &model);
    say!(
        "standard_margin={:.9} (gap {:.2e}) adversarial_margin={:.9} (gap {:.2e})",
        std.value, std.certificate_gap, adv.value, adv.certificate_gap
    );
    say!("{}", check_assumptions(&ds, &model));
    Ok(())
}

fn cmd_lemmas(cli: &Cli, a: &LemmaArgs, seed: u64) -> CliResult {
    let model = a.model.model()?;
    let mut cfg = SuiteConfig::theorem_regime(model);
    cfg.n = a.n;
    cfg.d = a.d;
    cfg.r = a.r;
    cfg.eta = a.eta;
    cfg.seeds = a.seeds;
    cfg.base_seed = seed;
    cfg.train.iterations = a.t;
    cfg.train.step = StepRule::PaperSchedule { g: a.g };
    let outcome = diagnostics::run_seed_batch(&cfg)?;
    for line in outcome.summary_lines() {
        say!("{line}");
    }
    if let Some(out) = &cli.out {
        fs::create_dir_all(out)?;
        for run in &outcome.runs {
            diagnostics::write_csv(File::create(out.join(format!("lemmas_seed{}.csv", run.seed)))?, &run.reports)?;
        }
    }
    Ok(())
}

fn cmd_gen(cli: &Cli, a: &GenArgs, seed: u64) -> CliResult {
    let ds = generate(&a.data.spec(seed)?, a.data.n)?;
    match &cli.out {
        Some(path) => ds.write_csv(File::create(path)?)?,
        None => ds.write_csv(io::stdout().lock())?,
    }
    Ok(())
}
