//! `latentsp` command line.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use latentsp_core::{CountingNumbers, HyperParams, TrainOptions, Trainer};

use crate::dataset::Split;
use crate::error::{Error, Result};
use crate::harness::{self, GridSpec, SweepConfig};
use crate::io::{self, ModelFile};
use crate::verify;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "latentsp", version, about = "Structured prediction with latent variables on factor graphs")]
pub struct Cli {
    /// More progress output on stderr (repeat for per-iteration lines).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic "ICML" tag segmentation dataset.
    Gen(GenArgs),
    /// Train a model; writes the model file and a per-iteration CSV log.
    Train(TrainArgs),
    /// Write MAP labels for every variable of the chosen examples.
    Predict(PredictArgs),
    /// Pixel accuracy on the test examples.
    Eval(EvalArgs),
    /// Latent-fraction × temperature sweep on synthetic data.
    Sweep(SweepArgs),
    /// Run the oracle checks on built-in tiny instances.
    Verify(VerifyArgs),
}

#[derive(Args, Debug, Clone)]
pub struct GridArgs {
    #[arg(long, default_value_t = 14)]
    pub height: usize,
    #[arg(long, default_value_t = 40)]
    pub width: usize,
    #[arg(long, default_value_t = 5)]
    pub labels: usize,
    /// Half-width of the uniform observation noise.
    #[arg(long, default_value_t = 2.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 10)]
    pub n_train: usize,
    #[arg(long, default_value_t = 10)]
    pub n_test: usize,
}

impl GridArgs {
    fn spec(&self, latent_fraction: f64, seed: u64) -> GridSpec {
        GridSpec {
            height: self.height,
            width: self.width,
            num_labels: self.labels,
            noise_amplitude: self.noise,
            latent_fraction,
            n_train: self.n_train,
            n_test: self.n_test,
            seed,
        }
    }
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of training pixels whose labels are hidden.
    #[arg(long, default_value_t = 0.0)]
    pub latent_frac: f64,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct HyperArgs {
    /// Temperature ε (> 0): 1 gives hidden CRFs, small values approach
    /// latent max-margin learning.
    #[arg(long, default_value_t = 1.0)]
    pub epsilon: f64,
    /// Regularization constant C.
    #[arg(long, default_value_t = 1.0)]
    pub c_reg: f64,
    /// Sets all four counting numbers.
    #[arg(long)]
    pub counting: Option<f64>,
    #[arg(long)]
    pub counting_node: Option<f64>,
    #[arg(long)]
    pub counting_factor: Option<f64>,
    #[arg(long)]
    pub latent_counting_node: Option<f64>,
    #[arg(long)]
    pub latent_counting_factor: Option<f64>,
    #[arg(long, default_value_t = 200)]
    pub outer_iters: usize,
    /// Sweep cap of each latent completion solve.
    #[arg(long, default_value_t = 1000)]
    pub inner_iters: usize,
    /// Message sweeps per outer iteration.
    #[arg(long, default_value_t = 1)]
    pub message_sweeps: usize,
    /// Stop when the objective changes by less than this.
    #[arg(long, default_value_t = 1e-6)]
    pub tolerance: f64,
    /// Marginalization residual at which a latent solve stops.
    #[arg(long, default_value_t = 1e-6)]
    pub latent_tolerance: f64,
}

impl HyperArgs {
    fn hyper(&self, seed: u64) -> Result<HyperParams> {
        let all = self.counting.unwrap_or(1.0);
        let h = HyperParams {
            epsilon: self.epsilon,
            c_reg: self.c_reg,
            counting: CountingNumbers {
                node: self.counting_node.unwrap_or(all),
                factor: self.counting_factor.unwrap_or(all),
            },
            latent_counting: CountingNumbers {
                node: self.latent_counting_node.unwrap_or(all),
                factor: self.latent_counting_factor.unwrap_or(all),
            },
            outer_iters: self.outer_iters,
            inner_iters: self.inner_iters,
            message_sweeps: self.message_sweeps,
            tolerance: self.tolerance,
            latent_tolerance: self.latent_tolerance,
            seed,
        };
        h.validate()?;
        Ok(h)
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Training log CSV; defaults to the model path with `.log.csv`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fail if the objective rises between stages.
    #[arg(long)]
    pub verify_descent: bool,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
    All,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// CSV with columns example, variable, label.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Also write the accuracy to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")]
    pub fractions: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "1,0.1,0.01")]
    pub epsilons: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    pub runs: usize,
    #[arg(long, default_value_t = 0)]
    pub base_seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Write 0 in the wall_ms column so reruns are byte-identical.
    #[arg(long)]
    pub no_timing: bool,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Fewer instances per check.
    #[arg(long)]
    pub quick: bool,
}

/// Errors that mean the invocation itself was wrong.
fn is_usage(e: &Error) -> bool {
    matches!(e, Error::Model(latentsp_core::Error::InvalidHyperParams(_)))
}

/// Parses `argv`, runs the command, prints diagnostics, returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if is_usage(&e) {
                EXIT_USAGE
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

fn dispatch(cli: &Cli) -> Result<i32> {
    let v = cli.verbose;
    match &cli.command {
        Command::Gen(a) => gen(a, v),
        Command::Train(a) => train(a, v),
        Command::Predict(a) => predict(a),
        Command::Eval(a) => eval(a),
        Command::Sweep(a) => sweep(a, v),
        Command::Verify(a) => verify_cmd(a),
    }
}

fn gen(a: &GenArgs, v: u8) -> Result<i32> {
    let spec = a.grid.spec(a.latent_frac, a.seed);
    spec.validate().map_err(usage)?;
    let data = harness::synthesize_dataset(&spec)?;
    io::save_dataset(&a.out, &data)?;
    if v > 0 {
        eprintln!("wrote {} examples to {}", data.records.len(), a.out.display());
    }
    Ok(EXIT_OK)
}

/// Re-labels a validation failure as a usage error.
fn usage(e: Error) -> Error {
    Error::Model(latentsp_core::Error::InvalidHyperParams(e.to_string()))
}

fn default_log_path(out: &Path) -> PathBuf {
    out.with_extension("log.csv")
}

fn train(a: &TrainArgs, v: u8) -> Result<i32> {
    let hyper = a.hyper.hyper(a.seed)?;
    let data = io::load_dataset(&a.data)?;
    let examples = data.examples(Split::Train)?;
    if examples.is_empty() {
        return Err(Error::Invalid(format!("{}: no training examples", a.data.display())));
    }
    let options = TrainOptions { verify_descent: a.verify_descent, ..TrainOptions::default() };
    let trainer = Trainer::new(&examples, data.num_features(), hyper.clone(), options)?;
    let state = trainer.run()?;
    if v > 1 {
        for l in &state.log {
            eprintln!("iter {:4}  F {:.10e}  |g| {:.3e}  eta {:.3e}", l.iteration, l.parts.total, l.grad_norm, l.eta);
        }
    }
    let mut log = csv::Writer::from_writer(Vec::new());
    log.write_record(["iter", "F", "f1", "f2", "f3", "grad_norm", "eta", "latent_residual"])?;
    for l in &state.log {
        log.write_record(&[
            l.iteration.to_string(),
            l.parts.total.to_string(),
            l.parts.f1.to_string(),
            l.parts.f2.to_string(),
            l.parts.f3.to_string(),
            l.grad_norm.to_string(),
            l.eta.to_string(),
            l.latent_residual.to_string(),
        ])?;
    }
    let log = log.into_inner().map_err(|e| Error::Invalid(e.to_string()))?;
    let model = ModelFile { params: state.params.clone(), hyper, data_digest: io::dataset_digest(&data)? };
    let log_path = a.log.clone().unwrap_or_else(|| default_log_path(&a.out));
    io::write_atomic(&log_path, &log)?;
    io::save_model(&a.out, &model)?;
    if v > 0 {
        eprintln!(
            "{:?} after {} iterations, F = {:.10e}, w = {:?}",
            state.status,
            state.log.len(),
            state.history.last().map_or(f64::NAN, |r| r.parts.total),
            state.params.weights
        );
        if state.unconverged_latent > 0 {
            eprintln!("warning: {} latent solves stopped at the sweep cap", state.unconverged_latent);
        }
    }
    Ok(EXIT_OK)
}

fn load_pair(data: &Path, model: &Path) -> Result<(crate::dataset::Dataset, ModelFile)> {
    let d = io::load_dataset(data)?;
    let m = io::load_model(model)?;
    if m.params.num_features() != d.num_features() {
        return Err(Error::Invalid(format!(
            "model has {} weights, dataset has {} features",
            m.params.num_features(),
            d.num_features()
        )));
    }
    Ok((d, m))
}

fn predict(a: &PredictArgs) -> Result<i32> {
    let (data, model) = load_pair(&a.data, &a.model)?;
    let splits: &[Split] = match a.split {
        SplitArg::Train => &[Split::Train],
        SplitArg::Test => &[Split::Test],
        SplitArg::All => &[Split::Train, Split::Test],
    };
    let mut rows: Vec<(usize, Vec<usize>)> = Vec::new();
    for &s in splits {
        let labels = harness::predict(&model.params, &data, s)?;
        rows.extend(data.indices(s).into_iter().zip(labels));
    }
    rows.sort_by_key(|r| r.0);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["example", "variable", "label"])?;
    for (k, labels) in &rows {
        for (i, y) in labels.iter().enumerate() {
            w.write_record(&[k.to_string(), i.to_string(), y.to_string()])?;
        }
    }
    io::write_atomic(&a.out, &w.into_inner().map_err(|e| Error::Invalid(e.to_string()))?)?;
    Ok(EXIT_OK)
}

fn eval(a: &EvalArgs) -> Result<i32> {
    let (data, model) = load_pair(&a.data, &a.model)?;
    let acc = harness::evaluate_accuracy(&model.params, &data)?;
    println!("accuracy {acc}");
    if let Some(out) = &a.out {
        io::write_atomic(out, format!("{acc}\n").as_bytes())?;
    }
    Ok(EXIT_OK)
}

fn sweep(a: &SweepArgs, v: u8) -> Result<i32> {
    let hyper = a.hyper.hyper(a.base_seed)?;
    let cfg = SweepConfig {
        latent_fractions: a.fractions.clone(),
        epsilons: a.epsilons.clone(),
        runs: a.runs,
        base_seed: a.base_seed,
        grid: a.grid.spec(0.0, a.base_seed),
        hyper,
        record_timing: !a.no_timing,
    };
    for &f in &cfg.latent_fractions {
        GridSpec { latent_fraction: f, ..cfg.grid.clone() }.validate().map_err(usage)?;
    }
    for &e in &cfg.epsilons {
        HyperParams { epsilon: e, ..cfg.hyper.clone() }.validate()?;
    }
    let rows = match a.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Invalid(e.to_string()))?
            .install(|| harness::sweep(&cfg))?,
        None => harness::sweep(&cfg)?,
    };
    let mut buf = Vec::new();
    harness::write_sweep_csv(&rows, &mut buf)?;
    io::write_atomic(&a.out, &buf)?;
    if v > 0 {
        eprintln!("wrote {} rows to {}", rows.len(), a.out.display());
    }
    Ok(EXIT_OK)
}

fn verify_cmd(a: &VerifyArgs) -> Result<i32> {
    let checks = verify::run_suite(a.seed, a.quick)?;
    let mut report = String::new();
    for c in &checks {
        let _ = writeln!(report, "{:<6} {:<40} {}", if c.passed { "pass" } else { "FAIL" }, c.name, c.detail);
    }
    print!("{report}");
    Ok(if checks.iter().all(|c| c.passed) { EXIT_OK } else { EXIT_VERIFY })
}
