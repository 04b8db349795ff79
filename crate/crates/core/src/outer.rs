//! ε-continuation penalty method, the relax-and-round baseline, and the
//! λ cross-validation harness around them.

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{substream, Stream, TaskBundle};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::lowerlevel::SolverSettings;
use crate::penalty::GroupAssignment;
use crate::upper::{
    initial_theta, solve_stage, validation_loss, AdamConfig, AdamState, EpochStat,
    GroupLassoObjective, StageConfig, UpperEval,
};

pub const RECORD_SCHEMA_VERSION: u32 = 1;

/// `G(θ) + φ(θ)/ε` where `G` is a mean of `terms()` smooth summands.
pub trait PenalizedObjective {
    fn features(&self) -> usize;
    fn groups(&self) -> usize;
    /// Number of summands available for minibatching.
    fn terms(&self) -> usize;
    /// Mean over `batch` plus the penalty, with gradient. `eps = ∞` drops the
    /// penalty.
    fn evaluate(&mut self, batch: &[usize], theta: &DenseMatrix, eps: f64) -> Result<UpperEval>;
    /// Full-batch `G(θ)`, deterministic in `θ`.
    fn value(&mut self, theta: &DenseMatrix) -> Result<f64>;
    /// Drops any state carried between evaluations.
    fn reset(&mut self) {}
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Penalty continuation.
    Mib,
    /// Relax, optimize without penalty, round.
    Bilevel,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Mib => "MIB",
            Method::Bilevel => "Bilevel",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Mib => "mib",
            Method::Bilevel => "bilevel",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mib" => Ok(Method::Mib),
            "bilevel" => Ok(Method::Bilevel),
            other => Err(Error::Config(format!("unknown method {other:?}"))),
        }
    }
}

/// Penalty schedule and per-stage budget.
///
/// Stage 0 runs at `eps0` (`None` means ∞, i.e. no penalty); stage
/// `k ≥ 1` runs at `eps1 · beta^(k−1)`, for `k = 1..=stages`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuationConfig {
    pub eps0: Option<f64>,
    pub eps1: f64,
    pub beta: f64,
    pub stages: usize,
    pub stage: StageConfig,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default = "default_tau")]
    pub tau_bin: f64,
    /// Keep Adam moments across stage boundaries instead of resetting them.
    #[serde(default)]
    pub carry_moments: bool,
}

fn default_tau() -> f64 {
    1e-3
}

impl Default for ContinuationConfig {
    fn default() -> Self {
        ContinuationConfig {
            eps0: None,
            eps1: 1e3,
            beta: 0.5,
            stages: 10,
            stage: StageConfig::default(),
            adam: AdamConfig::default(),
            tau_bin: default_tau(),
            carry_moments: false,
        }
    }
}

impl ContinuationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::Config(format!(
                "beta must be in (0, 1), got {}",
                self.beta
            )));
        }
        if !(self.eps1 > 0.0) || !self.eps1.is_finite() {
            return Err(Error::Config(format!(
                "eps1 must be positive, got {}",
                self.eps1
            )));
        }
        if let Some(e) = self.eps0 {
            if !(e > 0.0) {
                return Err(Error::Config(format!("eps0 must be positive, got {e}")));
            }
        }
        if self.stages == 0 {
            return Err(Error::Config("stages (K) must be >= 1".into()));
        }
        if !(self.tau_bin >= 0.0 && self.tau_bin < 0.5) {
            return Err(Error::Config("tau_bin must be in [0, 0.5)".into()));
        }
        Ok(())
    }

    /// `ε_0, …, ε_K`.
    pub fn schedule(&self) -> Vec<f64> {
        let mut eps = Vec::with_capacity(self.stages + 1);
        eps.push(self.eps0.unwrap_or(f64::INFINITY));
        let mut e = self.eps1;
        for _ in 0..self.stages {
            eps.push(e);
            e *= self.beta;
        }
        eps
    }

    /// Epoch budget of the baseline, matched to the continuation's maximum.
    pub fn baseline_epochs(&self) -> usize {
        self.stage.epochs * (self.stages + 1)
    }
}

fn finite_or_none(eps: f64) -> Option<f64> {
    eps.is_finite().then_some(eps)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    /// `null` for ε = ∞.
    pub eps: Option<f64>,
    pub steps: u64,
    pub trace: Vec<EpochStat>,
    pub final_dist_inf: f64,
}

impl StageRecord {
    pub fn epochs_run(&self) -> usize {
        self.trace.len()
    }
}

#[derive(Clone, Debug)]
pub struct ContinuationOutcome {
    /// Exactly binary.
    pub theta: GroupAssignment,
    /// The last iterate before snapping.
    pub relaxed: GroupAssignment,
    pub stages: Vec<StageRecord>,
    /// Budget ran out with the iterate farther than `tau_bin` from the
    /// binary set, so the final snap was a rounding.
    pub forced_snap: bool,
}

impl ContinuationOutcome {
    pub fn total_epochs(&self) -> usize {
        self.stages.iter().map(StageRecord::epochs_run).sum()
    }

    /// Every stage's `dist∞` after each epoch, concatenated.
    pub fn dist_trace(&self) -> Vec<f64> {
        self.stages
            .iter()
            .flat_map(|s| s.trace.iter().map(|e| e.dist_inf))
            .collect()
    }
}

fn stage_record(eps: f64, out: &crate::upper::StageOutcome) -> StageRecord {
    StageRecord {
        eps: finite_or_none(eps),
        steps: out.steps,
        trace: out.epochs.clone(),
        final_dist_inf: out.theta.dist_inf_to_bin(),
    }
}

/// Solves the penalized problems at `ε_0, ε_1, …` in sequence, each
/// warm-started from the previous solution, and returns as soon as a
/// stage ends within `tau_bin` of the binary set. The result is snapped
/// to the nearest vertex in either case.
pub fn penalty_loop<O, R>(
    obj: &mut O,
    cfg: &ContinuationConfig,
    theta0: GroupAssignment,
    rng: &mut R,
) -> Result<ContinuationOutcome>
where
    O: PenalizedObjective + ?Sized,
    R: Rng,
{
    cfg.validate()?;
    let mut state = AdamState::new(obj.features(), obj.groups());
    let mut theta = theta0;
    let mut stages = Vec::new();
    for (k, eps) in cfg.schedule().into_iter().enumerate() {
        if !cfg.carry_moments {
            state.reset();
        }
        let out = solve_stage(obj, theta, eps, &cfg.stage, &cfg.adam, &mut state, rng, k)?;
        let record = stage_record(eps, &out);
        theta = out.theta;
        stages.push(record);
        if theta.dist_inf_to_bin() <= cfg.tau_bin {
            return Ok(ContinuationOutcome {
                theta: theta.snap_to_bin(),
                relaxed: theta,
                stages,
                forced_snap: false,
            });
        }
    }
    Ok(ContinuationOutcome {
        theta: theta.snap_to_bin(),
        relaxed: theta,
        stages,
        forced_snap: true,
    })
}

/// Runs the unpenalized relaxation for the same epoch budget the
/// continuation could use, then rounds.
pub fn relax_round_baseline<O, R>(
    obj: &mut O,
    cfg: &ContinuationConfig,
    theta0: GroupAssignment,
    rng: &mut R,
) -> Result<ContinuationOutcome>
where
    O: PenalizedObjective + ?Sized,
    R: Rng,
{
    cfg.validate()?;
    let stage_cfg = StageConfig {
        epochs: cfg.baseline_epochs(),
        ..cfg.stage
    };
    let mut state = AdamState::new(obj.features(), obj.groups());
    let out = solve_stage(
        obj,
        theta0,
        f64::INFINITY,
        &stage_cfg,
        &cfg.adam,
        &mut state,
        rng,
        0,
    )?;
    let record = stage_record(f64::INFINITY, &out);
    let forced_snap = record.final_dist_inf > cfg.tau_bin;
    Ok(ContinuationOutcome {
        theta: out.theta.snap_to_bin(),
        relaxed: out.theta,
        stages: vec![record],
        forced_snap,
    })
}

/// Errors of a fitted assignment on the validation and test splits, and
/// how well the oracle regressors are recovered.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub validation_error: f64,
    pub test_error: f64,
    pub reconstruction_error: f64,
}

/// Metrics for per-task regressors `ws`: mean test loss and
/// `(1/d)·mean_t ‖w_t − w*_t‖²`.
pub fn metrics_from_solutions(bundle: &TaskBundle, ws: &[Vec<f64>]) -> Metrics {
    let t = bundle.len() as f64;
    let d = bundle.d() as f64;
    let mut val = 0.0;
    let mut test = 0.0;
    let mut recon = 0.0;
    for (task, w) in bundle.tasks.iter().zip(ws) {
        val += validation_loss(&task.validation, w);
        test += validation_loss(&task.test, w);
        recon += w
            .iter()
            .zip(&task.w_star)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    Metrics {
        validation_error: val / t,
        test_error: test / t,
        reconstruction_error: recon / (d * t),
    }
}

pub fn metrics(
    bundle: &TaskBundle,
    theta: &GroupAssignment,
    lambda: f64,
    eta: f64,
    solver: SolverSettings,
) -> Result<Metrics> {
    let obj = GroupLassoObjective::new(bundle, lambda, eta, solver)?;
    Ok(metrics_from_solutions(
        bundle,
        &obj.solutions(theta.as_matrix())?,
    ))
}

/// Everything a single (method, λ, seed) cell needs besides the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSettings {
    pub eta: f64,
    pub solver: SolverSettings,
    pub continuation: ContinuationConfig,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
}

fn default_restarts() -> usize {
    1
}

/// Persisted outcome of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub method: Method,
    pub seed: u64,
    pub restart: usize,
    pub lambda: f64,
    /// Final group of every feature.
    pub labels: Vec<usize>,
    pub theta: DenseMatrix,
    pub theta_relaxed: DenseMatrix,
    pub stages: Vec<StageRecord>,
    pub forced_snap: bool,
    /// `G` of the relaxed iterate and of its rounding.
    pub pre_round_loss: f64,
    pub post_round_loss: f64,
    pub validation_error: f64,
    pub test_error: f64,
    pub reconstruction_error: f64,
    pub total_epochs: usize,
    pub wall_clock_secs: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

impl RunRecord {
    pub fn dist_trace(&self) -> Vec<f64> {
        self.stages
            .iter()
            .flat_map(|s| s.trace.iter().map(|e| e.dist_inf))
            .collect()
    }

    pub fn eps_trace(&self) -> Vec<Option<f64>> {
        self.stages.iter().map(|s| s.eps).collect()
    }
}

/// Runs one cell: `restarts` independent starts, keeping the one with the
/// lowest validation error of the rounded solution.
pub fn run_cell(
    bundle: &TaskBundle,
    method: Method,
    lambda: f64,
    seed: u64,
    settings: &RunSettings,
) -> Result<RunRecord> {
    let mut best: Option<RunRecord> = None;
    for restart in 0..settings.restarts.max(1) {
        let started = Instant::now();
        let mut obj = GroupLassoObjective::new(bundle, lambda, settings.eta, settings.solver)?;
        let theta0 = initial_theta(
            bundle.d(),
            bundle.groups(),
            &mut substream(seed, Stream::ThetaInit, restart as u64),
        );
        let mut rng = substream(seed, Stream::Minibatch, restart as u64);
        let out = match method {
            Method::Mib => penalty_loop(&mut obj, &settings.continuation, theta0, &mut rng)?,
            Method::Bilevel => {
                relax_round_baseline(&mut obj, &settings.continuation, theta0, &mut rng)?
            }
        };
        let pre_round_loss = obj.value(out.relaxed.as_matrix())?;
        let m = metrics_from_solutions(bundle, &obj.solutions(out.theta.as_matrix())?);
        let record = RunRecord {
            schema_version: RECORD_SCHEMA_VERSION,
            method,
            seed,
            restart,
            lambda,
            labels: out.theta.labels(),
            theta: out.theta.as_matrix().clone(),
            theta_relaxed: out.relaxed.as_matrix().clone(),
            total_epochs: out.total_epochs(),
            stages: out.stages,
            forced_snap: out.forced_snap,
            pre_round_loss,
            post_round_loss: m.validation_error,
            validation_error: m.validation_error,
            test_error: m.test_error,
            reconstruction_error: m.reconstruction_error,
            wall_clock_secs: started.elapsed().as_secs_f64(),
            config: None,
        };
        if best
            .as_ref()
            .is_none_or(|b| record.validation_error < b.validation_error)
        {
            best = Some(record);
        }
    }
    Ok(best.expect("at least one restart"))
}

#[derive(Clone, Debug)]
pub struct CvCell {
    pub lambda: f64,
    pub seed: u64,
    pub outcome: std::result::Result<RunRecord, String>,
}

/// Per-λ aggregate of validation errors over the successful seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaSummary {
    pub lambda: f64,
    pub mean: f64,
    pub std: f64,
    pub ok: usize,
    pub failed: usize,
}

#[derive(Clone, Debug)]
pub struct CvResult {
    pub method: Method,
    pub cells: Vec<CvCell>,
    pub summary: Vec<LambdaSummary>,
    pub selected_lambda: f64,
}

impl CvResult {
    pub fn records_at(&self, lambda: f64) -> Vec<&RunRecord> {
        self.cells
            .iter()
            .filter(|c| c.lambda == lambda)
            .filter_map(|c| c.outcome.as_ref().ok())
            .collect()
    }
}

/// Mean and sample standard deviation (zero for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Picks the λ with the lowest mean validation error. A λ with no
/// successful cell makes the whole selection fail.
pub fn summarize(cells: &[CvCell], grid: &[f64]) -> Result<(Vec<LambdaSummary>, f64)> {
    let mut summary = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let column: Vec<&CvCell> = cells.iter().filter(|c| c.lambda == lambda).collect();
        let errs: Vec<f64> = column
            .iter()
            .filter_map(|c| c.outcome.as_ref().ok().map(|r| r.validation_error))
            .collect();
        if errs.is_empty() {
            return Err(Error::LambdaColumnFailed(lambda));
        }
        let (mean, std) = mean_std(&errs);
        summary.push(LambdaSummary {
            lambda,
            mean,
            std,
            ok: errs.len(),
            failed: column.len() - errs.len(),
        });
    }
    let selected = summary
        .iter()
        .fold(None::<&LambdaSummary>, |best, s| match best {
            Some(b) if b.mean <= s.mean => Some(b),
            _ => Some(s),
        })
        .map(|s| s.lambda)
        .ok_or_else(|| Error::Config("empty lambda grid".into()))?;
    Ok((summary, selected))
}

/// Runs every `(λ, seed)` cell of `method` and selects `λ*`. `bundles[i]`
/// is the data realization for `seeds[i]`. Cells run in parallel and are
/// collected in grid order.
pub fn cross_validate(
    bundles: &[TaskBundle],
    seeds: &[u64],
    grid: &[f64],
    method: Method,
    settings: &RunSettings,
) -> Result<CvResult> {
    if grid.is_empty() || seeds.is_empty() {
        return Err(Error::Config(
            "lambda grid and seeds must be nonempty".into(),
        ));
    }
    if bundles.len() != seeds.len() {
        return Err(Error::DimensionMismatch {
            expected: seeds.len(),
            got: bundles.len(),
        });
    }
    let jobs: Vec<(f64, usize)> = grid
        .iter()
        .flat_map(|&l| (0..seeds.len()).map(move |i| (l, i)))
        .collect();
    let cells: Vec<CvCell> = jobs
        .par_iter()
        .map(|&(lambda, i)| CvCell {
            lambda,
            seed: seeds[i],
            outcome: run_cell(&bundles[i], method, lambda, seeds[i], settings)
                .map_err(|e| e.to_string()),
        })
        .collect();
    let (summary, selected_lambda) = summarize(&cells, grid)?;
    Ok(CvResult {
        method,
        cells,
        summary,
        selected_lambda,
    })
}

/// `count` values log-spaced over `[min, max]`.
pub fn log_grid(min: f64, max: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![min],
        _ => {
            let (a, b) = (min.ln(), max.ln());
            (0..count)
                .map(|i| {
                    if i == count - 1 {
                        max
                    } else {
                        (a + (b - a) * i as f64 / (count - 1) as f64).exp()
                    }
                })
                .collect()
        }
    }
}
