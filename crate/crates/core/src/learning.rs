//! The alternating minimization of the approximate latent objective.
//!
//! The objective is split into
//!
//! * `f1(w, λ) = C/2 |w|² + Σ_ex D_ex(λ_ex; θ_ex(w))` (loss-augmented dual),
//! * `f2(w, d) = −Σ_r w_r Σ_ex E_d[φ_r]` (bilinear coupling),
//! * `f3(d) = −Σ_ex (⟨ℓ^c, d⟩ + ε Σ ĉ H(d))` (latent entropy and loss).
//!
//! Every outer iteration (a) re-solves each example's latent beliefs `d`,
//! (b) runs block updates of `λ`, and (c) takes one line-searched gradient
//! step in `w`. Each stage minimizes or decreases the total with the other
//! blocks fixed, so the objective never goes up.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::inference::{self, BeliefSet, MessageSet};
use crate::math::Accumulator;
use crate::model::{self, Example, HyperParams, LatentView, ModelParams};
use crate::par;

/// Backtracking (Armijo) line search settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineSearchConfig {
    pub initial_step: f64,
    pub shrink: f64,
    pub sufficient_decrease: f64,
    pub max_halvings: usize,
}

impl Default for LineSearchConfig {
    fn default() -> Self {
        LineSearchConfig { initial_step: 1.0, shrink: 0.5, sufficient_decrease: 1e-4, max_halvings: 40 }
    }
}

impl LineSearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_step > 0.0 && self.initial_step.is_finite()) {
            return Err(Error::InvalidHyperParams(format!("initial step must be > 0, got {}", self.initial_step)));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::InvalidHyperParams(format!("shrink factor must lie in (0, 1), got {}", self.shrink)));
        }
        if !(self.sufficient_decrease > 0.0 && self.sufficient_decrease < 1.0) {
            return Err(Error::InvalidHyperParams(format!(
                "sufficient-decrease coefficient must lie in (0, 1), got {}",
                self.sufficient_decrease
            )));
        }
        Ok(())
    }
}

/// Switches that do not change the objective being minimized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainOptions {
    pub line_search: LineSearchConfig,
    /// Fail with [`Error::DescentViolation`] if any stage raises the
    /// objective by more than `descent_slack`.
    pub verify_descent: bool,
    pub descent_slack: f64,
    /// Run the latent-completion stage. Turning it off is only valid when
    /// every example is fully observed.
    pub latent: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions { line_search: LineSearchConfig::default(), verify_descent: false, descent_slack: 1e-8, latent: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveParts {
    pub total: f64,
    pub f1: f64,
    pub f2: f64,
    pub f3: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveRecord {
    pub iteration: usize,
    pub parts: ObjectiveParts,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Init,
    Latent,
    Messages,
    Weights,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Init => "init",
            Stage::Latent => "latent",
            Stage::Messages => "messages",
            Stage::Weights => "weights",
        }
    }
}

/// Objective value after one stage of one outer iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StageRecord {
    pub iteration: usize,
    pub stage: Stage,
    pub total: f64,
}

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationLog {
    pub iteration: usize,
    pub parts: ObjectiveParts,
    pub grad_norm: f64,
    pub eta: f64,
    /// Largest marginalization residual among the latent beliefs.
    pub latent_residual: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainStatus {
    Running,
    /// Objective change fell below the tolerance.
    Converged,
    MaxIterations,
    /// The line search found no admissible step twice in a row.
    Stalled,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineSearchResult {
    pub eta: f64,
    pub stalled: bool,
    /// `f1 + f2` at the accepted point.
    pub value: f64,
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub params: ModelParams,
    pub messages: Vec<MessageSet>,
    pub latent_messages: Vec<MessageSet>,
    pub latent_beliefs: Vec<BeliefSet>,
    /// Objective after every outer iteration; entry 0 is the starting point.
    pub history: Vec<ObjectiveRecord>,
    pub stages: Vec<StageRecord>,
    pub log: Vec<IterationLog>,
    pub eta: f64,
    pub status: TrainStatus,
    /// Latent solves that hit the sweep cap before reaching tolerance.
    pub unconverged_latent: usize,
}

/// Per-example state handed to the parallel latent stage.
struct LatentSlot<'s> {
    msgs: &'s mut MessageSet,
    beliefs: &'s mut BeliefSet,
}

/// Training problem: a dataset with its precomputed latent views.
#[derive(Debug)]
pub struct Trainer<'a> {
    examples: &'a [Example],
    views: Vec<LatentView>,
    observed: Vec<Vec<f64>>,
    num_features: usize,
    hyper: HyperParams,
    options: TrainOptions,
}

impl<'a> Trainer<'a> {
    pub fn new(examples: &'a [Example], num_features: usize, hyper: HyperParams, options: TrainOptions) -> Result<Self> {
        hyper.validate()?;
        options.line_search.validate()?;
        for (k, ex) in examples.iter().enumerate() {
            if ex.num_features() != num_features {
                return Err(Error::Dimension {
                    what: format!("feature count of example {k}"),
                    expected: num_features,
                    found: ex.num_features(),
                });
            }
        }
        let (views, observed) = if options.latent {
            (examples.iter().map(LatentView::new).collect::<Result<Vec<_>>>()?, Vec::new())
        } else {
            let mut observed = Vec::with_capacity(examples.len());
            for (k, ex) in examples.iter().enumerate() {
                let labels: Option<Vec<usize>> = ex.labels().iter().copied().collect();
                let labels = labels.ok_or_else(|| Error::InvalidHyperParams(format!(
                    "example {k} has hidden variables; the latent stage cannot be disabled"
                )))?;
                observed.push(model::joint_features(ex, &labels)?);
            }
            (Vec::new(), observed)
        };
        Ok(Trainer { examples, views, observed, num_features, hyper, options })
    }

    pub fn hyper(&self) -> &HyperParams {
        &self.hyper
    }

    pub fn initial_state(&self) -> TrainState {
        TrainState {
            params: ModelParams::zeros(self.num_features),
            messages: self.examples.iter().map(|ex| MessageSet::zeros(ex.graph())).collect(),
            latent_messages: self.views.iter().map(|v| MessageSet::zeros(v.subgraph().reduced())).collect(),
            latent_beliefs: self.views.iter().map(LatentView::uniform_beliefs).collect(),
            history: Vec::new(),
            stages: Vec::new(),
            log: Vec::new(),
            eta: 0.0,
            status: TrainStatus::Running,
            unconverged_latent: 0,
        }
    }

    fn check_weights(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.num_features {
            return Err(Error::Dimension { what: "weight vector".into(), expected: self.num_features, found: w.len() });
        }
        Ok(())
    }

    /// Feature expectations per example under the current latent beliefs.
    fn expectations(&self, state: &TrainState) -> Result<Vec<Vec<f64>>> {
        if !self.options.latent {
            return Ok(self.observed.clone());
        }
        par::map_indexed(self.examples.len(), |k| self.views[k].expectations(&state.latent_beliefs[k]))
            .into_iter()
            .collect()
    }

    fn summed(&self, per_example: &[Vec<f64>]) -> Vec<f64> {
        (0..self.num_features)
            .map(|r| {
                let mut acc = Accumulator::default();
                for e in per_example {
                    acc.add(e[r]);
                }
                acc.value()
            })
            .collect()
    }

    fn regularizer(&self, w: &[f64]) -> f64 {
        0.5 * self.hyper.c_reg * w.iter().map(|v| v * v).sum::<f64>()
    }

    /// `Σ_ex D_ex` at weights `w` with the messages of `state`.
    fn dual_sum(&self, w: &ModelParams, state: &TrainState) -> Result<f64> {
        let eps = self.hyper.epsilon;
        let c = self.hyper.counting;
        let parts: Vec<Result<f64>> = par::map_indexed(self.examples.len(), |k| {
            let ex = &self.examples[k];
            let theta = model::reparameterize(ex, w)?;
            inference::dual_value(ex.graph(), &theta, &state.messages[k], eps, c)
        });
        let mut acc = Accumulator::default();
        for p in parts {
            acc.add(p?);
        }
        Ok(acc.value())
    }

    /// `f1 + f2 + f3` and its parts.
    pub fn objective(&self, state: &TrainState) -> Result<ObjectiveParts> {
        let w = &state.params;
        self.check_weights(&w.weights)?;
        let f1 = self.regularizer(&w.weights) + self.dual_sum(w, state)?;
        let e = self.summed(&self.expectations(state)?);
        let f2 = -w.weights.iter().zip(&e).map(|(a, b)| a * b).sum::<f64>();
        let f3 = if self.options.latent {
            let eps = self.hyper.epsilon;
            let c = self.hyper.latent_counting;
            let mut acc = Accumulator::default();
            for (view, d) in self.views.iter().zip(&state.latent_beliefs) {
                acc.add(-model::latent_entropy_term(view, d, eps, c));
            }
            acc.value()
        } else {
            0.0
        };
        let total = f1 + f2 + f3;
        if !total.is_finite() {
            return Err(Error::NonFinite { what: format!("objective (f1 {f1}, f2 {f2}, f3 {f3})") });
        }
        Ok(ObjectiveParts { total, f1, f2, f3 })
    }

    /// `f1 + f2` at weights `w`, messages and beliefs of `state` held fixed;
    /// `expect` is the summed feature expectation.
    fn smooth_value(&self, w: &ModelParams, state: &TrainState, expect: &[f64]) -> Result<f64> {
        let f2 = -w.weights.iter().zip(expect).map(|(a, b)| a * b).sum::<f64>();
        Ok(self.regularizer(&w.weights) + self.dual_sum(w, state)? + f2)
    }

    /// `f1 + f2` at arbitrary weights with `state`'s messages and beliefs.
    pub fn smooth_objective(&self, w: &ModelParams, state: &TrainState) -> Result<f64> {
        self.check_weights(&w.weights)?;
        let e = self.summed(&self.expectations(state)?);
        self.smooth_value(w, state, &e)
    }

    /// `∇_w (f1 + f2)`: regularizer plus loss-augmented belief moments minus
    /// latent feature expectations.
    pub fn weight_gradient(&self, state: &TrainState) -> Result<Vec<f64>> {
        let w = &state.params;
        self.check_weights(&w.weights)?;
        let eps = self.hyper.epsilon;
        let c = self.hyper.counting;
        let moments: Vec<Result<Vec<f64>>> = par::map_indexed(self.examples.len(), |k| {
            let ex = &self.examples[k];
            let theta = model::reparameterize(ex, w)?;
            let b = inference::local_beliefs(ex.graph(), &theta, &state.messages[k], eps, c);
            Ok((0..self.num_features)
                .map(|r| b.nodes.dot(ex.node_features(r)) + b.factors.dot(ex.factor_features(r)))
                .collect())
        });
        let moments = moments.into_iter().collect::<Result<Vec<_>>>()?;
        let model_side = self.summed(&moments);
        let data_side = self.summed(&self.expectations(state)?);
        Ok((0..self.num_features)
            .map(|r| self.hyper.c_reg * w.weights[r] + model_side[r] - data_side[r])
            .collect())
    }

    /// Largest `η = initial · shrink^k` satisfying the Armijo condition on
    /// `f1 + f2` along `−grad`.
    pub fn line_search(&self, state: &TrainState, grad: &[f64]) -> Result<LineSearchResult> {
        self.check_weights(grad)?;
        let cfg = self.options.line_search;
        let e = self.summed(&self.expectations(state)?);
        let f0 = self.smooth_value(&state.params, state, &e)?;
        let g2: f64 = grad.iter().map(|g| g * g).sum();
        let mut eta = cfg.initial_step;
        for _ in 0..=cfg.max_halvings {
            let trial = ModelParams {
                weights: state.params.weights.iter().zip(grad).map(|(w, g)| w - eta * g).collect(),
            };
            match self.smooth_value(&trial, state, &e) {
                Ok(f) if f <= f0 - cfg.sufficient_decrease * eta * g2 => {
                    return Ok(LineSearchResult { eta, stalled: false, value: f });
                }
                Ok(_) | Err(Error::NonFinite { .. }) => {}
                Err(err) => return Err(err),
            }
            eta *= cfg.shrink;
        }
        Ok(LineSearchResult { eta: 0.0, stalled: true, value: f0 })
    }

    /// Stage (a): re-solve every example's latent beliefs at the current
    /// weights. A solve is kept only if it does not raise that example's
    /// `f2 + f3`. Returns the largest residual and the number of solves that
    /// hit the sweep cap.
    pub fn latent_step(&self, state: &mut TrainState) -> Result<(f64, usize)> {
        if !self.options.latent {
            return Ok((0.0, 0));
        }
        let h = &self.hyper;
        let w = state.params.clone();
        let mut slots: Vec<LatentSlot<'_>> = state
            .latent_messages
            .iter_mut()
            .zip(state.latent_beliefs.iter_mut())
            .map(|(msgs, beliefs)| LatentSlot { msgs, beliefs })
            .collect();
        let out: Vec<Result<(f64, bool)>> = par::map_mut(&mut slots, |k, slot| {
            let view = &self.views[k];
            let theta = view.potentials(&w)?;
            let mut trial = slot.msgs.clone();
            let sol = inference::solve_latent_subproblem(
                &theta,
                view.subgraph(),
                h.epsilon,
                h.latent_counting,
                h.latent_tolerance,
                h.inner_iters,
                &mut trial,
            );
            let old = inference::primal_value(&theta, slot.beliefs, h.epsilon, h.latent_counting);
            if sol.value <= old {
                *slot.msgs = trial;
                *slot.beliefs = sol.beliefs;
                Ok((sol.residual, sol.converged))
            } else {
                Ok((inference::marginalization_residual(view.subgraph().reduced(), slot.beliefs), sol.converged))
            }
        });
        let mut residual: f64 = 0.0;
        let mut unconverged = 0;
        for o in out {
            let (r, ok) = o?;
            residual = residual.max(r);
            unconverged += usize::from(!ok);
        }
        Ok((residual, unconverged))
    }

    /// Stage (b): block-coordinate sweeps over every example's messages.
    pub fn message_step(&self, state: &mut TrainState) -> Result<()> {
        let h = &self.hyper;
        let w = state.params.clone();
        let out: Vec<Result<()>> = par::map_mut(&mut state.messages, |k, msgs| {
            let ex = &self.examples[k];
            let theta = model::reparameterize(ex, &w)?;
            for _ in 0..h.message_sweeps {
                inference::sweep_messages(ex.graph(), &theta, msgs, h.epsilon, h.counting);
            }
            if !msgs.all_finite() {
                return Err(Error::NonFinite { what: format!("messages of example {k}") });
            }
            Ok(())
        });
        out.into_iter().collect()
    }

    /// Stage (c): one gradient step on `w`; returns the gradient norm and
    /// the line search outcome.
    pub fn weight_step(&self, state: &mut TrainState) -> Result<(f64, LineSearchResult)> {
        let grad = self.weight_gradient(state)?;
        let ls = self.line_search(state, &grad)?;
        if !ls.stalled {
            for (w, g) in state.params.weights.iter_mut().zip(&grad) {
                *w -= ls.eta * g;
            }
        }
        state.eta = ls.eta;
        Ok((libm::sqrt(grad.iter().map(|g| g * g).sum()), ls))
    }

    fn record(&self, state: &mut TrainState, iteration: usize, stage: Stage, prev: f64) -> Result<ObjectiveParts> {
        let parts = self.objective(state)?;
        state.stages.push(StageRecord { iteration, stage, total: parts.total });
        if self.options.verify_descent && parts.total > prev + self.options.descent_slack {
            return Err(Error::DescentViolation { iteration, stage: stage.name(), before: prev, after: parts.total });
        }
        Ok(parts)
    }

    /// Runs the alternating scheme from zero weights and zero messages.
    pub fn run(&self) -> Result<TrainState> {
        let mut state = self.initial_state();
        let init = self.record(&mut state, 0, Stage::Init, f64::INFINITY)?;
        state.history.push(ObjectiveRecord { iteration: 0, parts: init });
        let mut prev = init.total;
        let mut stalled_in_row = 0;
        for it in 1..=self.hyper.outer_iters {
            let (residual, unconverged) = self.latent_step(&mut state)?;
            state.unconverged_latent += unconverged;
            let after_a = self.record(&mut state, it, Stage::Latent, prev)?;
            self.message_step(&mut state)?;
            let after_b = self.record(&mut state, it, Stage::Messages, after_a.total)?;
            let (grad_norm, ls) = self.weight_step(&mut state)?;
            let after_c = self.record(&mut state, it, Stage::Weights, after_b.total)?;
            state.history.push(ObjectiveRecord { iteration: it, parts: after_c });
            state.log.push(IterationLog { iteration: it, parts: after_c, grad_norm, eta: ls.eta, latent_residual: residual });

            stalled_in_row = if ls.stalled { stalled_in_row + 1 } else { 0 };
            if stalled_in_row >= 2 {
                state.status = TrainStatus::Stalled;
                return Ok(state);
            }
            if libm::fabs(after_c.total - prev) < self.hyper.tolerance {
                state.status = TrainStatus::Converged;
                return Ok(state);
            }
            prev = after_c.total;
        }
        state.status = TrainStatus::MaxIterations;
        Ok(state)
    }
}

/// Trains with default options; the feature count is taken from the first
/// example.
pub fn train(examples: &[Example], hyper: &HyperParams) -> Result<(ModelParams, TrainState)> {
    let f = examples.first().map_or(0, Example::num_features);
    let state = Trainer::new(examples, f, hyper.clone(), TrainOptions::default())?.run()?;
    Ok((state.params.clone(), state))
}
