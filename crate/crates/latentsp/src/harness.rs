//! Weakly labeled segmentation of a noisy "ICML" tag: data synthesis,
//! accuracy, and the latent-fraction × temperature sweep.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use latentsp_core::inference::{decode_map, DecodeConfig};
use latentsp_core::learning::TrainStatus;
use latentsp_core::{model, FactorGraph, HyperParams, ModelParams, TrainOptions, Trainer};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::{Dataset, Features, Record, Split};
use crate::error::{Error, Result};

const ICML_TAG: &str = include_str!("../data/icml_tag.txt");

/// Row-major label image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelGrid {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<usize>,
}

impl LabelGrid {
    pub fn get(&self, row: usize, col: usize) -> usize {
        self.labels[row * self.width + col]
    }
}

/// The committed 14×40 tag: background 0, letters I, C, M, L as 1..=4.
pub fn generate_icml_tag() -> LabelGrid {
    let rows: Vec<&str> = ICML_TAG.lines().filter(|l| !l.is_empty()).collect();
    let width = rows[0].len();
    let labels = rows
        .iter()
        .flat_map(|r| r.bytes().map(|b| usize::from(b - b'0')))
        .collect();
    LabelGrid { height: rows.len(), width, labels }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    pub height: usize,
    pub width: usize,
    pub num_labels: usize,
    pub noise_amplitude: f64,
    pub latent_fraction: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            height: 14,
            width: 40,
            num_labels: 5,
            noise_amplitude: 2.0,
            latent_fraction: 0.0,
            n_train: 10,
            n_test: 10,
            seed: 0,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Invalid("grid dimensions must be positive".into()));
        }
        if self.num_labels < 5 {
            return Err(Error::Invalid(format!("the tag uses 5 labels, got num_labels = {}", self.num_labels)));
        }
        if !(0.0..=1.0).contains(&self.latent_fraction) {
            return Err(Error::Invalid(format!("latent fraction {} is outside [0, 1]", self.latent_fraction)));
        }
        if !(self.noise_amplitude >= 0.0 && self.noise_amplitude.is_finite()) {
            return Err(Error::Invalid(format!("noise amplitude {} must be finite and >= 0", self.noise_amplitude)));
        }
        Ok(())
    }

    /// Ground truth at this size; the tag is tiled when the grid is larger.
    pub fn ground_truth(&self) -> LabelGrid {
        let tag = generate_icml_tag();
        let labels = (0..self.height)
            .flat_map(|r| (0..self.width).map(move |c| (r, c)))
            .map(|(r, c)| tag.get(r % tag.height, c % tag.width))
            .collect();
        LabelGrid { height: self.height, width: self.width, labels }
    }

    pub fn latent_count(&self) -> usize {
        (self.latent_fraction * (self.height * self.width) as f64).round() as usize
    }
}

fn noisy(truth: &[usize], amplitude: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    truth
        .iter()
        .map(|&y| {
            let u = if amplitude > 0.0 { rng.random_range(-amplitude..amplitude) } else { 0.0 };
            y as f64 + 1.0 + u
        })
        .collect()
}

/// Training instances first, then test instances. Training instances hide
/// a fresh uniformly drawn subset of pixels; test instances keep every label.
pub fn synthesize_dataset(spec: &GridSpec) -> Result<Dataset> {
    spec.validate()?;
    let truth = spec.ground_truth();
    let n = spec.height * spec.width;
    let graph = Arc::new(FactorGraph::grid(spec.height, spec.width, spec.num_labels)?);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut records = Vec::with_capacity(spec.n_train + spec.n_test);
    for _ in 0..spec.n_train {
        let observation = noisy(&truth.labels, spec.noise_amplitude, &mut rng);
        let mut hidden = index::sample(&mut rng, n, spec.latent_count()).into_vec();
        hidden.sort_unstable();
        let mut labels: BTreeMap<usize, usize> = truth.labels.iter().copied().enumerate().collect();
        for i in &hidden {
            labels.remove(i);
        }
        records.push(Record { split: Split::Train, observation, labels, hidden, tables: None });
    }
    for _ in 0..spec.n_test {
        let observation = noisy(&truth.labels, spec.noise_amplitude, &mut rng);
        let labels = truth.labels.iter().copied().enumerate().collect();
        records.push(Record { split: Split::Test, observation, labels, hidden: Vec::new(), tables: None });
    }
    Ok(Dataset { graph, features: Features::Grid { height: spec.height, width: spec.width }, records })
}

/// Loss-free MAP labeling of every record in `split`.
pub fn predict(params: &ModelParams, data: &Dataset, split: Split) -> Result<Vec<Vec<usize>>> {
    let idx = data.indices(split);
    idx.par_iter()
        .map(|&k| {
            let ex = data.example(k)?;
            let theta = model::score_potentials(&ex, params)?;
            Ok(decode_map(ex.graph(), &theta, None, DecodeConfig::default()))
        })
        .collect()
}

/// Fraction of correctly labeled pixels over the test records.
pub fn evaluate_accuracy(params: &ModelParams, data: &Dataset) -> Result<f64> {
    let predictions = predict(params, data, Split::Test)?;
    let n = data.graph.num_vars();
    let mut correct = 0usize;
    let mut total = 0usize;
    for (k, pred) in data.indices(Split::Test).into_iter().zip(&predictions) {
        let truth = data.records[k]
            .full_labels(n)
            .ok_or_else(|| Error::Invalid(format!("test example {k} is not fully labeled")))?;
        correct += pred.iter().zip(&truth).filter(|(p, t)| p == t).count();
        total += n;
    }
    if total == 0 {
        return Err(Error::Invalid("dataset has no test examples".into()));
    }
    Ok(correct as f64 / total as f64)
}

/// Outcome of one synthesize/train/evaluate run.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub accuracy: f64,
    pub objective_final: f64,
    pub outer_iters_used: usize,
    pub weights: Vec<f64>,
    pub status: TrainStatus,
    pub wall_ms: u128,
}

pub fn run_experiment(spec: &GridSpec, hyper: &HyperParams) -> Result<RunOutcome> {
    let start = Instant::now();
    let data = synthesize_dataset(spec)?;
    let train = data.examples(Split::Train)?;
    let state = Trainer::new(&train, data.num_features(), hyper.clone(), TrainOptions::default())?.run()?;
    let accuracy = evaluate_accuracy(&state.params, &data)?;
    let last = state.history.last().map_or(f64::NAN, |r| r.parts.total);
    Ok(RunOutcome {
        accuracy,
        objective_final: last,
        outer_iters_used: state.log.len(),
        weights: state.params.weights.clone(),
        status: state.status,
        wall_ms: start.elapsed().as_millis(),
    })
}

#[derive(Clone, Debug)]
pub struct SweepConfig {
    pub latent_fractions: Vec<f64>,
    pub epsilons: Vec<f64>,
    pub runs: usize,
    pub base_seed: u64,
    /// Template for every run; its fraction and seed are overwritten.
    pub grid: GridSpec,
    /// Template for every run; its temperature and seed are overwritten.
    pub hyper: HyperParams,
    /// Write measured wall time; off gives byte-reproducible output.
    pub record_timing: bool,
}

/// One line of the sweep CSV. Summary rows carry `run_id = "mean"`, means in
/// the numeric columns and the accuracy standard deviation in `status`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub run_id: String,
    pub latent_fraction: f64,
    pub epsilon: f64,
    pub seed: Option<u64>,
    pub accuracy: f64,
    pub objective_final: f64,
    pub outer_iters_used: f64,
    pub wall_ms: f64,
    pub w_unary: f64,
    pub w_pair: f64,
    pub status: String,
}

fn status_name(s: TrainStatus) -> &'static str {
    match s {
        TrainStatus::Converged => "ok",
        TrainStatus::MaxIterations => "ok-max-iters",
        TrainStatus::Stalled => "ok-stalled",
        TrainStatus::Running => "running",
    }
}

/// Trains and scores every (fraction, ε, run) cell. Run `k` (counted over
/// fractions, then temperatures, then repetitions) uses seed `base ^ k`, so
/// the result does not depend on scheduling.
pub fn sweep(cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    cfg.grid.validate()?;
    let mut jobs = Vec::new();
    for &f in &cfg.latent_fractions {
        for &eps in &cfg.epsilons {
            for _ in 0..cfg.runs {
                jobs.push((f, eps));
            }
        }
    }
    let rows: Vec<SweepRow> = jobs
        .par_iter()
        .enumerate()
        .map(|(k, &(f, eps))| {
            let seed = cfg.base_seed ^ k as u64;
            let spec = GridSpec { latent_fraction: f, seed, ..cfg.grid.clone() };
            let hyper = HyperParams { epsilon: eps, seed, ..cfg.hyper.clone() };
            let base = SweepRow {
                run_id: k.to_string(),
                latent_fraction: f,
                epsilon: eps,
                seed: Some(seed),
                accuracy: f64::NAN,
                objective_final: f64::NAN,
                outer_iters_used: 0.0,
                wall_ms: 0.0,
                w_unary: f64::NAN,
                w_pair: f64::NAN,
                status: String::new(),
            };
            match run_experiment(&spec, &hyper) {
                Ok(o) => SweepRow {
                    accuracy: o.accuracy,
                    objective_final: o.objective_final,
                    outer_iters_used: o.outer_iters_used as f64,
                    wall_ms: if cfg.record_timing { o.wall_ms as f64 } else { 0.0 },
                    w_unary: o.weights[0],
                    w_pair: o.weights[1],
                    status: status_name(o.status).into(),
                    ..base
                },
                Err(e) => SweepRow { status: format!("error: {e}"), ..base },
            }
        })
        .collect();

    let mut out = Vec::with_capacity(rows.len() + rows.len() / cfg.runs.max(1));
    for cell in rows.chunks(cfg.runs.max(1)) {
        out.extend_from_slice(cell);
        if cfg.runs > 0 {
            out.push(summary(cell));
        }
    }
    Ok(out)
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn summary(cell: &[SweepRow]) -> SweepRow {
    let m = |f: fn(&SweepRow) -> f64| mean_std(cell.iter().map(f)).0;
    let (acc, sd) = mean_std(cell.iter().map(|r| r.accuracy));
    SweepRow {
        run_id: "mean".into(),
        latent_fraction: cell[0].latent_fraction,
        epsilon: cell[0].epsilon,
        seed: None,
        accuracy: acc,
        objective_final: m(|r| r.objective_final),
        outer_iters_used: m(|r| r.outer_iters_used),
        wall_ms: m(|r| r.wall_ms),
        w_unary: m(|r| r.w_unary),
        w_pair: m(|r| r.w_pair),
        status: format!("sd={sd}"),
    }
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::Invalid(format!("csv: {e}")))?;
    Ok(())
}
