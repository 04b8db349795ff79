//! Upper level: validation loss, the penalized multi-task objective with its
//! hypergradient, and projected Adam on the product of simplices.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{epoch_permutation, TaskBundle};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, DenseMatrix};
use crate::lowerlevel::{
    lower_forward, lower_solve, lower_vjp, precompute, SolverSettings, TaskData, TaskFactor,
};
use crate::outer::PenalizedObjective;
use crate::penalty::{dist_inf_to_bin, grad_phi, phi, GroupAssignment};

/// `½‖X w − y‖² / n`
pub fn validation_loss(task: &TaskData, w: &[f64]) -> f64 {
    let r = task.residual(w);
    0.5 * dot(&r, &r) / task.samples() as f64
}

/// Gradient of [`validation_loss`] in `w`: `Xᵀ(Xw − y) / n`.
pub fn validation_loss_grad(task: &TaskData, w: &[f64]) -> Vec<f64> {
    let r = task.residual(w);
    let mut g = task.x.tr_matvec(&r);
    let n = task.samples() as f64;
    g.iter_mut().for_each(|v| *v /= n);
    g
}

/// Value and gradient of `mean_t C_t(w⁽q⁾) + φ(θ)/ε` on a batch.
#[derive(Clone, Debug)]
pub struct UpperEval {
    /// Mean validation loss over the batch.
    pub loss: f64,
    /// `φ(θ)`, unscaled.
    pub penalty: f64,
    /// `loss + penalty / ε`.
    pub objective: f64,
    pub grad: DenseMatrix,
}

/// `1/ε`, with `ε = ∞` switching the penalty off exactly.
pub fn penalty_weight(eps: f64) -> f64 {
    if eps.is_infinite() {
        0.0
    } else {
        1.0 / eps
    }
}

/// Adds the penalty part to a smooth value/gradient pair.
pub fn with_penalty(loss: f64, mut grad: DenseMatrix, theta: &DenseMatrix, eps: f64) -> UpperEval {
    let weight = penalty_weight(eps);
    let penalty = phi(theta);
    if weight != 0.0 {
        axpy(weight, grad_phi(theta).as_slice(), grad.as_mut_slice());
    }
    UpperEval {
        loss,
        penalty,
        objective: loss + weight * penalty,
        grad,
    }
}

/// The multi-task group-lasso bilevel objective for a fixed `λ`.
///
/// Gradient evaluations warm-start each task's duals from the previous
/// evaluation of that task (when enabled); [`PenalizedObjective::value`]
/// always solves from zero duals so it is a pure function of `θ`.
pub struct GroupLassoObjective<'a> {
    bundle: &'a TaskBundle,
    factors: Vec<TaskFactor>,
    lambda: f64,
    solver: SolverSettings,
    warm_start: bool,
    warm: Vec<Option<Vec<f64>>>,
}

impl<'a> GroupLassoObjective<'a> {
    pub fn new(
        bundle: &'a TaskBundle,
        lambda: f64,
        eta: f64,
        solver: SolverSettings,
    ) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::Config(format!(
                "lambda must be positive, got {lambda}"
            )));
        }
        let factors = bundle
            .tasks
            .iter()
            .map(|t| precompute(&t.train, eta))
            .collect::<Result<Vec<_>>>()?;
        Ok(GroupLassoObjective {
            bundle,
            warm: vec![None; factors.len()],
            factors,
            lambda,
            solver,
            warm_start: true,
        })
    }

    pub fn with_warm_start(mut self, on: bool) -> Self {
        self.warm_start = on;
        self
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn solver(&self) -> SolverSettings {
        self.solver
    }

    pub fn bundle(&self) -> &TaskBundle {
        self.bundle
    }

    /// Cold-start `w⁽q⁾` of every task.
    pub fn solutions(&self, theta: &DenseMatrix) -> Result<Vec<Vec<f64>>> {
        let per_task: Vec<Result<Vec<f64>>> = self
            .factors
            .par_iter()
            .map(|f| lower_forward(f, theta, self.lambda, self.solver, None).map(|(w, _)| w))
            .collect();
        per_task.into_iter().collect()
    }

    fn task_term(&self, t: usize, theta: &DenseMatrix) -> Result<(f64, DenseMatrix, Vec<f64>)> {
        let factor = &self.factors[t];
        let init = if self.warm_start {
            self.warm[t].as_deref()
        } else {
            None
        };
        let tape = lower_solve(factor, theta, self.lambda, self.solver, init)?;
        let val = &self.bundle.tasks[t].validation;
        let loss = validation_loss(val, &tape.w);
        let gbar = validation_loss_grad(val, &tape.w);
        let grad = lower_vjp(factor, &tape, &gbar)?;
        Ok((loss, grad, tape.final_duals().to_vec()))
    }
}

impl PenalizedObjective for GroupLassoObjective<'_> {
    fn features(&self) -> usize {
        self.bundle.d()
    }

    fn groups(&self) -> usize {
        self.bundle.groups()
    }

    fn terms(&self) -> usize {
        self.bundle.len()
    }

    fn evaluate(&mut self, batch: &[usize], theta: &DenseMatrix, eps: f64) -> Result<UpperEval> {
        if batch.is_empty() {
            return Err(Error::Config("empty batch".into()));
        }
        if let Some(&t) = batch.iter().find(|&&t| t >= self.terms()) {
            return Err(Error::Config(format!("task index {t} out of range")));
        }
        let this = &*self;
        let terms: Vec<Result<(f64, DenseMatrix, Vec<f64>)>> = batch
            .par_iter()
            .map(|&t| this.task_term(t, theta))
            .collect();
        // reduce in batch order so the sum does not depend on thread count
        let mut loss = 0.0;
        let mut grad = DenseMatrix::zeros(theta.rows(), theta.cols());
        let mut duals = Vec::with_capacity(batch.len());
        for (&t, term) in batch.iter().zip(terms) {
            let (l, g, u) = term?;
            loss += l;
            axpy(1.0, g.as_slice(), grad.as_mut_slice());
            duals.push((t, u));
        }
        if self.warm_start {
            for (t, u) in duals {
                self.warm[t] = Some(u);
            }
        }
        let scale = 1.0 / batch.len() as f64;
        grad.as_mut_slice().iter_mut().for_each(|v| *v *= scale);
        Ok(with_penalty(loss * scale, grad, theta, eps))
    }

    fn value(&mut self, theta: &DenseMatrix) -> Result<f64> {
        let ws = self.solutions(theta)?;
        let total: f64 = self
            .bundle
            .tasks
            .iter()
            .zip(&ws)
            .map(|(t, w)| validation_loss(&t.validation, w))
            .sum();
        Ok(total / ws.len() as f64)
    }

    fn reset(&mut self) {
        self.warm.iter_mut().for_each(|w| *w = None);
    }
}

/// Adam hyperparameters. Weight decay is fixed at zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub stability: f64,
    /// Replace each row of the gradient by its projection onto the
    /// simplex's tangent cone at θ before the moment updates. Without it,
    /// per-coordinate normalization erases differences between entries
    /// and the projection cancels what is left.
    #[serde(default)]
    pub tangent_rows: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            step_size: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            stability: 1e-8,
            tangent_rows: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub first: DenseMatrix,
    pub second: DenseMatrix,
}

impl AdamState {
    pub fn new(d: usize, groups: usize) -> Self {
        AdamState {
            step: 0,
            first: DenseMatrix::zeros(d, groups),
            second: DenseMatrix::zeros(d, groups),
        }
    }

    pub fn reset(&mut self) {
        *self = AdamState::new(self.first.rows(), self.first.cols());
    }
}

/// One bias-corrected Adam step followed by row-wise projection onto the
/// simplex.
pub fn adam_step(
    state: &mut AdamState,
    cfg: &AdamConfig,
    theta: &GroupAssignment,
    grad: &DenseMatrix,
) -> Result<GroupAssignment> {
    let m = theta.as_matrix();
    if grad.rows() != m.rows()
        || grad.cols() != m.cols()
        || state.first.rows() != m.rows()
        || state.first.cols() != m.cols()
    {
        return Err(Error::DimensionMismatch {
            expected: m.rows() * m.cols(),
            got: grad.rows() * grad.cols(),
        });
    }
    state.step += 1;
    let t = state.step.min(i32::MAX as u64) as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let mut next = m.clone();
    let tangent;
    let grad = if cfg.tangent_rows {
        let mut c = grad.clone();
        for i in 0..c.rows() {
            tangent_row(m.row(i), c.row_mut(i));
        }
        tangent = c;
        &tangent
    } else {
        grad
    };
    let moments = state
        .first
        .as_mut_slice()
        .iter_mut()
        .zip(state.second.as_mut_slice());
    for ((x, &g), (mo, so)) in next
        .as_mut_slice()
        .iter_mut()
        .zip(grad.as_slice())
        .zip(moments)
    {
        *mo = cfg.beta1 * *mo + (1.0 - cfg.beta1) * g;
        *so = cfg.beta2 * *so + (1.0 - cfg.beta2) * g * g;
        let mhat = *mo / c1;
        let shat = *so / c2;
        *x -= cfg.step_size * mhat / (shat.sqrt() + cfg.stability);
    }
    Ok(GroupAssignment::project(next))
}

/// Overwrites `grad` with `−P_T(−grad)`, where `T` is the tangent cone of
/// the simplex at `theta`: zero-sum, and nonnegative on the coordinates
/// where `theta` is zero.
pub fn tangent_row(theta: &[f64], grad: &mut [f64]) {
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut bound = Vec::new();
    for (&t, &g) in theta.iter().zip(grad.iter()) {
        if t > 0.0 {
            sum -= g;
            count += 1;
        } else {
            bound.push(-g);
        }
    }
    if count == 0 {
        return;
    }
    // Bound coordinates join the active set in decreasing order while
    // they sit above the running shift.
    bound.sort_by(|a, b| b.total_cmp(a));
    let mut shift = sum / count as f64;
    for v in bound {
        if v <= shift {
            break;
        }
        sum += v;
        count += 1;
        shift = sum / count as f64;
    }
    for (&t, g) in theta.iter().zip(grad.iter_mut()) {
        let s = -*g - shift;
        *g = if t > 0.0 { -s } else { -s.max(0.0) };
    }
}

/// Per-stage inner optimizer budget.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Stop when the best full-batch objective of the last this-many
    /// epochs is less than `early_stop_tol` below the best before them.
    /// Zero disables.
    #[serde(default = "default_window")]
    pub early_stop_window: usize,
    #[serde(default = "default_tol")]
    pub early_stop_tol: f64,
}

fn default_window() -> usize {
    20
}

fn default_tol() -> f64 {
    1e-9
}

impl Default for StageConfig {
    fn default() -> Self {
        StageConfig {
            epochs: 500,
            batch_size: 10,
            early_stop_window: default_window(),
            early_stop_tol: default_tol(),
        }
    }
}

/// Full-batch statistics after one epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStat {
    pub loss: f64,
    pub objective: f64,
    pub dist_inf: f64,
}

#[derive(Clone, Debug)]
pub struct StageOutcome {
    pub theta: GroupAssignment,
    pub epochs: Vec<EpochStat>,
    pub steps: u64,
}

/// Minibatch projected Adam on `G(θ) + φ(θ)/ε` for up to `cfg.epochs`
/// epochs. Tasks are visited in a fresh random order every epoch.
#[allow(clippy::too_many_arguments)]
pub fn solve_stage<O, R>(
    obj: &mut O,
    theta0: GroupAssignment,
    eps: f64,
    cfg: &StageConfig,
    adam: &AdamConfig,
    state: &mut AdamState,
    rng: &mut R,
    stage: usize,
) -> Result<StageOutcome>
where
    O: PenalizedObjective + ?Sized,
    R: Rng,
{
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    let mut theta = theta0;
    let mut epochs: Vec<EpochStat> = Vec::with_capacity(cfg.epochs);
    let mut steps = 0;
    let weight = penalty_weight(eps);
    for _ in 0..cfg.epochs {
        let order = epoch_permutation(rng, obj.terms());
        for batch in order.chunks(cfg.batch_size) {
            let eval = obj.evaluate(batch, theta.as_matrix(), eps)?;
            if !eval.objective.is_finite() || !eval.grad.is_finite() {
                return Err(Error::StageDiverged { stage });
            }
            theta = adam_step(state, adam, &theta, &eval.grad)?;
            steps += 1;
        }
        let loss = obj.value(theta.as_matrix())?;
        if !loss.is_finite() {
            return Err(Error::StageDiverged { stage });
        }
        let objective = loss + weight * theta.phi();
        epochs.push(EpochStat {
            loss,
            objective,
            dist_inf: dist_inf_to_bin(theta.as_matrix()),
        });
        let w = cfg.early_stop_window;
        if w > 0 && epochs.len() > w {
            let (before, recent) = epochs.split_at(epochs.len() - w);
            let best =
                |e: &[EpochStat]| e.iter().map(|s| s.objective).fold(f64::INFINITY, f64::min);
            if best(before) - best(recent) < cfg.early_stop_tol {
                break;
            }
        }
    }
    Ok(StageOutcome {
        theta,
        epochs,
        steps,
    })
}

/// Uniform `1/L` plus `U[−1/(100L), 1/(100L)]` noise, re-projected.
pub fn initial_theta<R: Rng>(d: usize, groups: usize, rng: &mut R) -> GroupAssignment {
    let base = 1.0 / groups as f64;
    let spread = base / 100.0;
    let data = (0..d * groups)
        .map(|_| base + rng.random_range(-spread..=spread))
        .collect();
    GroupAssignment::project(DenseMatrix::from_vec(d, groups, data).unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, substream, GenConfig, Stream};
    use crate::lowerlevel::DualScheme;

    fn tiny_bundle(seed: u64) -> TaskBundle {
        generate(&GenConfig {
            d: 2,
            groups: 2,
            tasks: 2,
            n: 4,
            noise_variance: 0.1,
            seed,
        })
        .unwrap()
    }

    fn settings(q: usize) -> SolverSettings {
        SolverSettings::new(q, DualScheme::Projected)
    }

    #[test]
    fn validation_loss_examples() {
        let x = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let task = TaskData::new(x, vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(validation_loss(&task, &[1.0, 2.0]), 0.0);
        assert_eq!(validation_loss(&task, &[0.0, 0.0]), 0.5 * 14.0 / 3.0);
        let base = validation_loss(&task, &[0.5, 0.5]);
        // scaling the residual by two quadruples the loss
        let doubled =
            TaskData::new(task.x.clone(), task.y.iter().map(|v| 2.0 * v).collect()).unwrap();
        assert!((validation_loss(&doubled, &[1.0, 1.0]) - 4.0 * base).abs() < 1e-14);
    }

    #[test]
    fn infinite_eps_has_no_penalty() {
        let b = tiny_bundle(1);
        let mut obj = GroupLassoObjective::new(&b, 0.1, 1e-3, settings(20))
            .unwrap()
            .with_warm_start(false);
        let theta = GroupAssignment::uniform(2, 2);
        let free = obj
            .evaluate(&[0, 1], theta.as_matrix(), f64::INFINITY)
            .unwrap();
        assert_eq!(free.objective, free.loss);
        let pen = obj.evaluate(&[0, 1], theta.as_matrix(), 0.5).unwrap();
        assert_eq!(pen.objective, free.loss + 2.0 * theta.phi());
        // at the centre grad φ vanishes, so gradients agree
        assert_eq!(pen.grad, free.grad);
    }

    #[test]
    fn batch_mean_is_invariant_to_duplication() {
        let b = tiny_bundle(2);
        let mut obj = GroupLassoObjective::new(&b, 0.1, 1e-3, settings(20))
            .unwrap()
            .with_warm_start(false);
        let theta = initial_theta(2, 2, &mut substream(0, Stream::ThetaInit, 0));
        let once = obj.evaluate(&[0, 1], theta.as_matrix(), 3.0).unwrap();
        let twice = obj.evaluate(&[0, 1, 0, 1], theta.as_matrix(), 3.0).unwrap();
        assert!((once.loss - twice.loss).abs() < 1e-15);
        assert!(once.grad.max_abs_diff(&twice.grad) < 1e-15);
    }

    #[test]
    fn adam_first_step_moves_by_step_size() {
        let cfg = AdamConfig::default();
        let mut st = AdamState::new(1, 2);
        let theta =
            GroupAssignment::new(DenseMatrix::from_rows(&[vec![0.5, 0.5]]).unwrap()).unwrap();
        // opposite signs keep the row sum, so the projection is inactive and
        // the raw first step (≈ α per entry) is visible
        let g = DenseMatrix::from_rows(&[vec![0.3, -0.3]]).unwrap();
        let next = adam_step(&mut st, &cfg, &theta, &g).unwrap();
        assert!((next.as_matrix()[(0, 0)] - 0.49).abs() < 1e-9);
        assert!((next.as_matrix()[(0, 1)] - 0.51).abs() < 1e-9);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn adam_zero_gradient_keeps_theta() {
        let cfg = AdamConfig::default();
        let theta =
            GroupAssignment::new(DenseMatrix::from_rows(&[vec![0.25, 0.75]]).unwrap()).unwrap();
        let g = DenseMatrix::zeros(1, 2);
        let mut fresh = AdamState::new(1, 2);
        let next = adam_step(&mut fresh, &cfg, &theta, &g).unwrap();
        assert_eq!(next, theta);
        assert_eq!(fresh.first, DenseMatrix::zeros(1, 2));

        // existing moments only decay
        let mut st = AdamState::new(1, 2);
        st.first[(0, 0)] = 0.5;
        st.second[(0, 0)] = 0.2;
        adam_step(&mut st, &cfg, &theta, &g).unwrap();
        assert!((st.first[(0, 0)] - 0.45).abs() < 1e-15);
        assert!((st.second[(0, 0)] - 0.2 * 0.999).abs() < 1e-15);
    }

    #[test]
    fn adam_output_is_feasible() {
        let cfg = AdamConfig {
            step_size: 0.5,
            ..AdamConfig::default()
        };
        let mut rng = substream(1, Stream::Instance, 0);
        let mut st = AdamState::new(4, 3);
        let mut theta = initial_theta(4, 3, &mut rng);
        for _ in 0..50 {
            let g =
                DenseMatrix::from_vec(4, 3, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect())
                    .unwrap();
            theta = adam_step(&mut st, &cfg, &theta, &g).unwrap();
            assert!(GroupAssignment::new(theta.as_matrix().clone()).is_ok());
        }
    }

    #[test]
    fn zero_epochs_returns_start() {
        let b = tiny_bundle(3);
        let mut obj = GroupLassoObjective::new(&b, 0.1, 1e-3, settings(10)).unwrap();
        let theta0 = initial_theta(2, 2, &mut substream(3, Stream::ThetaInit, 0));
        let cfg = StageConfig {
            epochs: 0,
            ..StageConfig::default()
        };
        let mut st = AdamState::new(2, 2);
        let mut rng = substream(0, Stream::Minibatch, 0);
        let out = solve_stage(
            &mut obj,
            theta0.clone(),
            1.0,
            &cfg,
            &AdamConfig::default(),
            &mut st,
            &mut rng,
            0,
        )
        .unwrap();
        assert_eq!(out.theta, theta0);
        assert!(out.epochs.is_empty());
    }

    #[test]
    fn stage_records_every_epoch() {
        let b = tiny_bundle(4);
        let mut obj = GroupLassoObjective::new(&b, 0.1, 1e-3, settings(10)).unwrap();
        let theta0 = initial_theta(2, 2, &mut substream(4, Stream::ThetaInit, 0));
        let cfg = StageConfig {
            epochs: 7,
            batch_size: 1,
            early_stop_window: 0,
            early_stop_tol: 0.0,
        };
        let mut st = AdamState::new(2, 2);
        let mut rng = substream(0, Stream::Minibatch, 0);
        let out = solve_stage(
            &mut obj,
            theta0,
            10.0,
            &cfg,
            &AdamConfig::default(),
            &mut st,
            &mut rng,
            0,
        )
        .unwrap();
        assert_eq!(out.epochs.len(), 7);
        assert_eq!(out.steps, 14);
        assert!(out
            .epochs
            .iter()
            .all(|e| e.loss.is_finite() && e.objective.is_finite()));
    }

    #[test]
    fn tangent_row_examples() {
        let mut g = [0.3, -0.1, 0.4];
        tangent_row(&[0.2, 0.5, 0.3], &mut g);
        for (a, b) in g.iter().zip([0.1, -0.3, 0.2]) {
            assert!((a - b).abs() < 1e-15);
        }
        // Pushing a pinned coordinate further out is dropped.
        let mut g = [0.0, 0.0, 1.0];
        tangent_row(&[0.5, 0.5, 0.0], &mut g);
        assert_eq!(g, [0.0, 0.0, 0.0]);
        let mut g = [1.0, 0.0, -1.0];
        tangent_row(&[0.5, 0.5, 0.0], &mut g);
        assert_eq!(g, [1.0, 0.0, -1.0]);
        // A split row keeps the difference between its two entries.
        let mut g = [-0.01, 0.01, 1.0, 1.0];
        tangent_row(&[0.5, 0.5, 0.0, 0.0], &mut g);
        assert_eq!(g, [-0.01, 0.01, 0.0, 0.0]);
    }

    proptest::proptest! {
        #[test]
        fn tangent_row_is_the_cone_projection(
            raw in proptest::collection::vec(0.0f64..1.0, 4),
            zeros in proptest::collection::vec(proptest::bool::ANY, 4),
            grad in proptest::collection::vec(-2.0f64..2.0, 4),
            probe in proptest::collection::vec(-2.0f64..2.0, 4),
        ) {
            let mut theta: Vec<f64> = raw.iter().zip(&zeros).map(|(&r, &z)| if z { 0.0 } else { r + 0.01 }).collect();
            if theta.iter().all(|&t| t == 0.0) {
                theta[0] = 1.0;
            }
            let total: f64 = theta.iter().sum();
            theta.iter_mut().for_each(|t| *t /= total);
            let mut g = grad.clone();
            tangent_row(&theta, &mut g);
            let s: Vec<f64> = g.iter().map(|v| -v).collect();
            proptest::prop_assert!(s.iter().sum::<f64>().abs() < 1e-12);
            for (&t, &si) in theta.iter().zip(&s) {
                if t == 0.0 {
                    proptest::prop_assert!(si >= 0.0);
                }
            }
            // No cone element is closer to −grad.
            let pm: f64 = probe.iter().sum::<f64>() / 4.0;
            let mut t: Vec<f64> = probe.iter().map(|p| p - pm).collect();
            let lift = theta.iter().zip(&t).filter(|(&th, _)| th == 0.0).map(|(_, &v)| -v).fold(0.0, f64::max);
            if lift > 0.0 {
                // shift mass so pinned entries become nonnegative
                let free = theta.iter().filter(|&&th| th > 0.0).count() as f64;
                let pinned = 4.0 - free;
                for (ti, &th) in t.iter_mut().zip(&theta) {
                    *ti += if th == 0.0 { lift } else { -lift * pinned / free };
                }
            }
            let dist = |x: &[f64]| x.iter().zip(&grad).map(|(a, b)| (a + b).powi(2)).sum::<f64>();
            proptest::prop_assert!(dist(&s) <= dist(&t) + 1e-12);
        }
    }
}
