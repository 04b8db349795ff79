//! Differentiable lower-level solver for the regularized group lasso
//!
//! ```text
//! min_w ½‖Xw − y‖² + λ Σ_l ‖θ_l ⊙ w‖₂ + (η/2)‖w‖²
//! ```
//!
//! solved through its dual. Writing each group norm as a support function,
//! `λ‖θ_l ⊙ w‖ = max_{‖u_l‖ ≤ λ} ⟨θ_l ⊙ u_l, w⟩`, the inner minimization in
//! `w` is the ridge system `w(u) = (XᵀX + ηI)⁻¹ (Xᵀy − Σ_l θ_l ⊙ u_l)` and the
//! dual is maximized by projected gradient ascent
//! `u_l ← Proj_{‖·‖ ≤ λ}(u_l + γ θ_l ⊙ w(u))`, optionally with Nesterov
//! momentum. Every step is smooth in `θ` away from the ball boundary, so
//! the `q`-step map `θ ↦ w⁽q⁾` can be differentiated exactly by replaying
//! a tape in reverse.
//!
//! Duals are stored group-major: `u[l * d + j]` is the `j`-th coordinate of
//! the dual vector of group `l`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm2, spd_factor, DenseMatrix, SpdFactor};

/// One regression problem: design `x` (`n × d`) and response `y`.
///
/// Generated data has unit-norm columns; the solver itself does not
/// require it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskData {
    pub x: DenseMatrix,
    pub y: Vec<f64>,
}

impl TaskData {
    pub fn new(x: DenseMatrix, y: Vec<f64>) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.rows(),
                got: y.len(),
            });
        }
        if x.rows() == 0 || x.cols() == 0 {
            return Err(Error::Config("task needs n, d >= 1".into()));
        }
        Ok(TaskData { x, y })
    }

    pub fn samples(&self) -> usize {
        self.x.rows()
    }

    pub fn features(&self) -> usize {
        self.x.cols()
    }

    /// `Xw − y`
    pub fn residual(&self, w: &[f64]) -> Vec<f64> {
        let mut r = self.x.matvec(w);
        axpy(-1.0, &self.y, &mut r);
        r
    }
}

/// Dual iteration variant.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DualScheme {
    /// Plain projected gradient ascent; the dual objective is monotone.
    #[default]
    Projected,
    /// Projected ascent with FISTA momentum (restarted at every solve).
    Accelerated,
}

/// Number of unrolled iterations plus the iteration variant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSettings {
    pub q: usize,
    #[serde(default)]
    pub scheme: DualScheme,
}

impl SolverSettings {
    pub fn new(q: usize, scheme: DualScheme) -> Self {
        SolverSettings { q, scheme }
    }
}

/// θ-independent data of one task, computed once: Cholesky factor of
/// `XᵀX + ηI`, `Xᵀy` and `‖y‖²`.
#[derive(Clone, Debug)]
pub struct TaskFactor {
    pub chol: SpdFactor,
    pub xty: Vec<f64>,
    pub yty: f64,
    pub eta: f64,
    /// Smallest eigenvalue of `XᵀX + ηI`; the dual gradient is
    /// `1/min_eig`-Lipschitz for any feasible θ.
    pub min_eig: f64,
}

impl TaskFactor {
    pub fn dim(&self) -> usize {
        self.chol.dim()
    }

    /// Dual step size, `0.9 / Lip`.
    pub fn step_size(&self) -> f64 {
        0.9 * self.min_eig
    }

    /// Ridge solution `(XᵀX + ηI)⁻¹ Xᵀy`.
    pub fn ridge(&self) -> Vec<f64> {
        let mut w = self.xty.clone();
        self.chol.solve_in_place(&mut w);
        w
    }
}

pub fn precompute(task: &TaskData, eta: f64) -> Result<TaskFactor> {
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::Config(format!("eta must be positive, got {eta}")));
    }
    let mut m = task.x.gram();
    for i in 0..m.rows() {
        m[(i, i)] += eta;
    }
    let chol = spd_factor(&m)?;
    // bottom of the spectrum can never be below eta
    let min_eig = chol.min_eigenvalue(300).max(eta);
    Ok(TaskFactor {
        chol,
        xty: task.x.tr_matvec(&task.y),
        yty: dot(&task.y, &task.y),
        eta,
        min_eig,
    })
}

/// Record of `q` unrolled dual iterations, enough to replay the
/// reverse pass.
#[derive(Clone, Debug)]
pub struct LowerTape {
    pub q: usize,
    pub d: usize,
    pub groups: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub scheme: DualScheme,
    pub theta: DenseMatrix,
    /// `u⁽⁰⁾ … u⁽q⁾`, group-major.
    pub duals: Vec<Vec<f64>>,
    /// `w(y⁽ʲ⁾)` used inside step `j`.
    pub inner_primal: Vec<Vec<f64>>,
    /// `‖v_l⁽ʲ⁾‖` before projection, `q × L`.
    pub pre_projection_norms: Vec<f64>,
    /// `w⁽q⁾ = w(u⁽q⁾)`.
    pub w: Vec<f64>,
}

impl LowerTape {
    pub fn final_duals(&self) -> &[f64] {
        self.duals.last().expect("tape always holds u0")
    }

    /// Smallest `|‖v_l⁽ʲ⁾‖ − λ|` over the run: how close any step came to
    /// the kink of the ball projection.
    pub fn boundary_gap(&self) -> f64 {
        self.pre_projection_norms
            .iter()
            .map(|n| (n - self.lambda).abs())
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest `‖u_l⁽ʲ⁾‖` over `j ≥ 1`.
    pub fn max_dual_norm(&self) -> f64 {
        self.duals
            .iter()
            .skip(1)
            .flat_map(|u| u.chunks(self.d).map(norm2))
            .fold(0.0, f64::max)
    }
}

fn momentum_schedule(q: usize, scheme: DualScheme) -> Vec<f64> {
    match scheme {
        DualScheme::Projected => vec![0.0; q],
        DualScheme::Accelerated => {
            let mut t = 1.0_f64;
            (0..q)
                .map(|_| {
                    let next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
                    let beta = (t - 1.0) / next;
                    t = next;
                    beta
                })
                .collect()
        }
    }
}

/// Group-major copy of `θ`.
fn theta_group_major(theta: &DenseMatrix) -> Vec<f64> {
    let (d, groups) = (theta.rows(), theta.cols());
    let mut out = vec![0.0; d * groups];
    for j in 0..d {
        for l in 0..groups {
            out[l * d + j] = theta[(j, l)];
        }
    }
    out
}

/// `s = Σ_l θ_l ⊙ u_l`
fn combine(tg: &[f64], u: &[f64], d: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for (tl, ul) in tg.chunks(d).zip(u.chunks(d)) {
        for ((o, t), x) in out.iter_mut().zip(tl).zip(ul) {
            *o += t * x;
        }
    }
}

/// `w = M⁻¹ (Xᵀy − s)`
fn primal_from(factor: &TaskFactor, s: &[f64], w: &mut [f64]) {
    for ((wi, b), si) in w.iter_mut().zip(&factor.xty).zip(s) {
        *wi = b - si;
    }
    factor.chol.solve_in_place(w);
}

fn project_ball(v: &mut [f64], radius: f64) -> f64 {
    let n = norm2(v);
    if n > radius {
        let s = radius / n;
        v.iter_mut().for_each(|x| *x *= s);
    }
    n
}

struct Trace {
    duals: Vec<Vec<f64>>,
    inner_primal: Vec<Vec<f64>>,
    norms: Vec<f64>,
}

fn validate(
    factor: &TaskFactor,
    theta: &DenseMatrix,
    lambda: f64,
    q: usize,
    init: Option<&[f64]>,
) -> Result<()> {
    let d = factor.dim();
    if theta.rows() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: theta.rows(),
        });
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::Config(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    if q == 0 {
        return Err(Error::Config("q must be >= 1".into()));
    }
    if let Some(u) = init {
        if u.len() != d * theta.cols() {
            return Err(Error::DimensionMismatch {
                expected: d * theta.cols(),
                got: u.len(),
            });
        }
    }
    Ok(())
}

fn run_dual(
    factor: &TaskFactor,
    theta: &DenseMatrix,
    lambda: f64,
    settings: SolverSettings,
    init: Option<&[f64]>,
    mut trace: Option<&mut Trace>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    validate(factor, theta, lambda, settings.q, init)?;
    let d = factor.dim();
    let groups = theta.cols();
    let gamma = factor.step_size();
    let tg = theta_group_major(theta);
    let betas = momentum_schedule(settings.q, settings.scheme);

    let mut u = init.map_or_else(|| vec![0.0; d * groups], <[f64]>::to_vec);
    let mut u_prev = u.clone();
    let mut y = u.clone();
    let mut s = vec![0.0; d];
    let mut w = vec![0.0; d];
    if let Some(t) = trace.as_deref_mut() {
        t.duals.push(u.clone());
    }

    for (it, &beta) in betas.iter().enumerate() {
        for ((yi, ui), pi) in y.iter_mut().zip(&u).zip(&u_prev) {
            *yi = ui + beta * (ui - pi);
        }
        combine(&tg, &y, d, &mut s);
        primal_from(factor, &s, &mut w);
        if !w.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteIterate(it));
        }
        std::mem::swap(&mut u_prev, &mut u);
        u.copy_from_slice(&y);
        for (l, ul) in u.chunks_mut(d).enumerate() {
            let tl = &tg[l * d..(l + 1) * d];
            for ((x, t), wi) in ul.iter_mut().zip(tl).zip(&w) {
                *x += gamma * t * wi;
            }
            let n = project_ball(ul, lambda);
            if let Some(t) = trace.as_deref_mut() {
                t.norms.push(n);
            }
        }
        if let Some(t) = trace.as_deref_mut() {
            t.inner_primal.push(w.clone());
            t.duals.push(u.clone());
        }
    }
    combine(&tg, &u, d, &mut s);
    primal_from(factor, &s, &mut w);
    if !w.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFiniteIterate(settings.q));
    }
    Ok((w, u))
}

/// Runs `q` dual iterations from `init` (zero when `None`) and records the
/// tape needed by [`lower_vjp`].
pub fn lower_solve(
    factor: &TaskFactor,
    theta: &DenseMatrix,
    lambda: f64,
    settings: SolverSettings,
    init: Option<&[f64]>,
) -> Result<LowerTape> {
    let mut trace = Trace {
        duals: Vec::with_capacity(settings.q + 1),
        inner_primal: Vec::with_capacity(settings.q),
        norms: Vec::with_capacity(settings.q * theta.cols()),
    };
    let (w, _) = run_dual(factor, theta, lambda, settings, init, Some(&mut trace))?;
    Ok(LowerTape {
        q: settings.q,
        d: factor.dim(),
        groups: theta.cols(),
        gamma: factor.step_size(),
        lambda,
        scheme: settings.scheme,
        theta: theta.clone(),
        duals: trace.duals,
        inner_primal: trace.inner_primal,
        pre_projection_norms: trace.norms,
        w,
    })
}

/// Forward pass only. Returns `(w⁽q⁾, u⁽q⁾)`.
pub fn lower_forward(
    factor: &TaskFactor,
    theta: &DenseMatrix,
    lambda: f64,
    settings: SolverSettings,
    init: Option<&[f64]>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    run_dual(factor, theta, lambda, settings, init, None)
}

/// `∂(gbarᵀ w⁽q⁾)/∂θ` as a `d × L` matrix, by reverse replay of the tape.
///
/// The ball projection is differentiated with the identity inside the ball
/// (boundary included) and with the Jacobian of `v ↦ λv/‖v‖` outside.
pub fn lower_vjp(factor: &TaskFactor, tape: &LowerTape, gbar: &[f64]) -> Result<DenseMatrix> {
    let d = tape.d;
    let groups = tape.groups;
    if factor.dim() != d
        || tape.duals.len() != tape.q + 1
        || tape.inner_primal.len() != tape.q
        || tape.theta.rows() != d
        || tape.theta.cols() != groups
    {
        return Err(Error::TapeMismatch);
    }
    if gbar.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: gbar.len(),
        });
    }
    let tg = theta_group_major(&tape.theta);
    let betas = momentum_schedule(tape.q, tape.scheme);
    let gamma = tape.gamma;
    let lambda = tape.lambda;
    // group-major gradient, transposed at the end
    let mut gtheta = vec![0.0; d * groups];

    // output: w = M⁻¹(b − Σ θ_l ⊙ u_l⁽q⁾)
    let mut z = gbar.to_vec();
    factor.chol.solve_in_place(&mut z);
    let uq = &tape.duals[tape.q];
    let mut adj_next = vec![0.0; d * groups];
    for l in 0..groups {
        for j in 0..d {
            let k = l * d + j;
            gtheta[k] -= z[j] * uq[k];
            adj_next[k] = -tg[k] * z[j];
        }
    }
    let mut adj_cur = vec![0.0; d * groups];
    let mut adj_prev = vec![0.0; d * groups];
    let mut y = vec![0.0; d * groups];
    let mut vbar = vec![0.0; d * groups];
    let mut wbar = vec![0.0; d];

    for it in (0..tape.q).rev() {
        let beta = betas[it];
        let u = &tape.duals[it];
        let u_prev = if it > 0 { &tape.duals[it - 1] } else { u };
        for ((yi, ui), pi) in y.iter_mut().zip(u).zip(u_prev) {
            *yi = ui + beta * (ui - pi);
        }
        let w = &tape.inner_primal[it];

        // through the projection of v_l = y_l + γ θ_l ⊙ w
        for l in 0..groups {
            let r = l * d..(l + 1) * d;
            let vnorm = tape.pre_projection_norms[it * groups + l];
            let a = &adj_next[r.clone()];
            let vb = &mut vbar[r.clone()];
            if vnorm > lambda {
                let v: Vec<f64> = (0..d)
                    .map(|j| y[l * d + j] + gamma * tg[l * d + j] * w[j])
                    .collect();
                let va = dot(&v, a) / (vnorm * vnorm);
                let s = lambda / vnorm;
                for j in 0..d {
                    vb[j] = s * (a[j] - v[j] * va);
                }
            } else {
                vb.copy_from_slice(a);
            }
        }

        // v = y + γ θ ⊙ w
        wbar.iter_mut().for_each(|x| *x = 0.0);
        for l in 0..groups {
            for j in 0..d {
                let k = l * d + j;
                gtheta[k] += gamma * vbar[k] * w[j];
                wbar[j] += gamma * tg[k] * vbar[k];
            }
        }
        // w = M⁻¹(b − Σ θ ⊙ y)
        factor.chol.solve_in_place(&mut wbar);
        for l in 0..groups {
            for j in 0..d {
                let k = l * d + j;
                gtheta[k] -= wbar[j] * y[k];
                vbar[k] -= tg[k] * wbar[j];
            }
        }
        // y = (1 + β) u⁽ⁱᵗ⁾ − β u⁽ⁱᵗ⁻¹⁾
        axpy(1.0 + beta, &vbar, &mut adj_cur);
        if it > 0 && beta != 0.0 {
            axpy(-beta, &vbar, &mut adj_prev);
        }
        std::mem::swap(&mut adj_next, &mut adj_cur);
        std::mem::swap(&mut adj_cur, &mut adj_prev);
        adj_prev.iter_mut().for_each(|x| *x = 0.0);
    }

    let mut out = DenseMatrix::zeros(d, groups);
    for j in 0..d {
        for l in 0..groups {
            out[(j, l)] = gtheta[l * d + j];
        }
    }
    Ok(out)
}

/// `½‖Xw − y‖² + λ Σ_l ‖θ_l ⊙ w‖ + (η/2)‖w‖²`
pub fn primal_objective(
    task: &TaskData,
    theta: &DenseMatrix,
    lambda: f64,
    eta: f64,
    w: &[f64],
) -> f64 {
    let r = task.residual(w);
    let mut penalty = 0.0;
    for l in 0..theta.cols() {
        let sq: f64 = w
            .iter()
            .enumerate()
            .map(|(j, wj)| {
                let v = theta[(j, l)] * wj;
                v * v
            })
            .sum();
        penalty += sq.sqrt();
    }
    0.5 * dot(&r, &r) + lambda * penalty + 0.5 * eta * dot(w, w)
}

/// Dual objective `½‖y‖² − ½ (Xᵀy − s)ᵀ M⁻¹ (Xᵀy − s)` with `s = Σ θ_l ⊙ u_l`.
pub fn dual_objective(factor: &TaskFactor, theta: &DenseMatrix, u: &[f64]) -> f64 {
    let d = factor.dim();
    let tg = theta_group_major(theta);
    let mut s = vec![0.0; d];
    combine(&tg, u, d, &mut s);
    let rhs: Vec<f64> = factor.xty.iter().zip(&s).map(|(b, si)| b - si).collect();
    let mut sol = rhs.clone();
    factor.chol.solve_in_place(&mut sol);
    0.5 * factor.yty - 0.5 * dot(&rhs, &sol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::penalty::GroupAssignment;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_task(rng: &mut ChaCha8Rng, n: usize, d: usize) -> TaskData {
        let mut x = DenseMatrix::from_vec(
            n,
            d,
            (0..n * d).map(|_| rng.sample(StandardNormal)).collect(),
        )
        .unwrap();
        x.normalize_columns();
        let y = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        TaskData::new(x, y).unwrap()
    }

    fn random_theta(rng: &mut ChaCha8Rng, d: usize, l: usize) -> DenseMatrix {
        let raw: Vec<f64> = (0..d * l).map(|_| rng.random_range(0.0..1.0)).collect();
        GroupAssignment::project(DenseMatrix::from_vec(d, l, raw).unwrap()).into_matrix()
    }

    #[test]
    fn precompute_identity() {
        let task = TaskData::new(DenseMatrix::identity(2), vec![0.0, 0.0]).unwrap();
        let f = precompute(&task, 1.0).unwrap();
        let z = f.chol.solve(&[2.0, 4.0]).unwrap();
        assert!((z[0] - 1.0).abs() < 1e-15 && (z[1] - 2.0).abs() < 1e-15);
        assert_eq!(f.xty, vec![0.0, 0.0]);
        assert!((f.min_eig - 2.0).abs() < 1e-12);
        assert!(precompute(&task, 0.0).is_err());
    }

    #[test]
    fn precompute_residual_at_default_eta() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let task = random_task(&mut rng, 20, 30);
        let f = precompute(&task, 1e-3).unwrap();
        let b: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
        let z = f.chol.solve(&b).unwrap();
        let mut az = task.x.gram().matvec(&z);
        axpy(1e-3, &z, &mut az);
        let r: Vec<f64> = az.iter().zip(&b).map(|(a, c)| a - c).collect();
        assert!(norm2(&r) <= 1e-8 * norm2(&b));
        // n < d: the spectrum bottoms out at eta
        assert!((f.min_eig - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn vanishing_lambda_gives_ridge() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let task = random_task(&mut rng, 8, 4);
        let f = precompute(&task, 1e-3).unwrap();
        let theta = random_theta(&mut rng, 4, 2);
        for scheme in [DualScheme::Projected, DualScheme::Accelerated] {
            let tape =
                lower_solve(&f, &theta, 1e-12, SolverSettings::new(50, scheme), None).unwrap();
            let ridge = f.ridge();
            for (a, b) in tape.w.iter().zip(&ridge) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn huge_lambda_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let task = random_task(&mut rng, 6, 3);
        let f = precompute(&task, 1e-3).unwrap();
        let theta = GroupAssignment::from_labels(&[0, 0, 0], 1)
            .unwrap()
            .into_matrix();
        let lambda = 2.0 * norm2(&f.xty);
        let (w, _) = lower_forward(
            &f,
            &theta,
            lambda,
            SolverSettings::new(5000, DualScheme::Accelerated),
            None,
        )
        .unwrap();
        assert!(w.iter().all(|v| v.abs() < 1e-6), "{w:?}");
    }

    #[test]
    fn projected_dual_is_monotone_and_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let task = random_task(&mut rng, 10, 6);
            let f = precompute(&task, 1e-2).unwrap();
            let theta = random_theta(&mut rng, 6, 3);
            let lambda = 0.3;
            let tape = lower_solve(
                &f,
                &theta,
                lambda,
                SolverSettings::new(200, DualScheme::Projected),
                None,
            )
            .unwrap();
            let vals: Vec<f64> = tape
                .duals
                .iter()
                .map(|u| dual_objective(&f, &theta, u))
                .collect();
            for pair in vals.windows(2) {
                assert!(pair[1] >= pair[0] - 1e-12, "{} < {}", pair[1], pair[0]);
            }
            assert!(tape.max_dual_norm() <= lambda * (1.0 + 1e-12));
        }
    }

    #[test]
    fn accelerated_duals_stay_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let task = random_task(&mut rng, 10, 6);
        let f = precompute(&task, 1e-3).unwrap();
        let theta = random_theta(&mut rng, 6, 3);
        let tape = lower_solve(
            &f,
            &theta,
            0.2,
            SolverSettings::new(300, DualScheme::Accelerated),
            None,
        )
        .unwrap();
        assert!(tape.max_dual_norm() <= 0.2 * (1.0 + 1e-12));
        assert!(tape.w.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn primal_objective_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let task = random_task(&mut rng, 7, 3);
        let theta = random_theta(&mut rng, 3, 2);
        let zero = primal_objective(&task, &theta, 0.5, 1e-3, &[0.0; 3]);
        assert!((zero - 0.5 * dot(&task.y, &task.y)).abs() < 1e-14);

        let f = precompute(&task, 1e-3).unwrap();
        let ridge = f.ridge();
        let best = primal_objective(&task, &theta, 0.0, 1e-3, &ridge);
        for _ in 0..10 {
            let w: Vec<f64> = ridge
                .iter()
                .map(|v| v + rng.random_range(-0.1..0.1))
                .collect();
            assert!(primal_objective(&task, &theta, 0.0, 1e-3, &w) > best);
        }

        // θ_l ⊙ w = 0 for every group: only the data and ridge terms remain
        let theta = GroupAssignment::from_labels(&[0, 1, 1], 2)
            .unwrap()
            .into_matrix();
        let w = [0.0, 0.0, 0.0];
        assert_eq!(
            primal_objective(&task, &theta, 3.0, 0.0, &w),
            primal_objective(&task, &theta, 0.0, 0.0, &w)
        );
    }

    #[test]
    fn primal_converges_and_is_unique() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..3 {
            let d = rng.random_range(4..=12);
            let task = random_task(&mut rng, 10, d);
            let f = precompute(&task, 1e-3).unwrap();
            let theta = random_theta(&mut rng, d, 3);
            let lambda = 0.1;
            let s = |q| SolverSettings::new(q, DualScheme::Accelerated);
            let (w1, _) = lower_forward(&f, &theta, lambda, s(2000), None).unwrap();
            let (w4, _) = lower_forward(&f, &theta, lambda, s(8000), None).unwrap();
            let p1 = primal_objective(&task, &theta, lambda, 1e-3, &w1);
            let p4 = primal_objective(&task, &theta, lambda, 1e-3, &w4);
            assert!((p1 - p4).abs() < 1e-5, "{p1} vs {p4}");

            // start from a random feasible dual
            let mut init: Vec<f64> = (0..3 * d).map(|_| rng.random_range(-1.0..1.0)).collect();
            for ul in init.chunks_mut(d) {
                project_ball(ul, lambda);
            }
            let (w0, _) = lower_forward(&f, &theta, lambda, s(8000), None).unwrap();
            let (wr, _) = lower_forward(&f, &theta, lambda, s(8000), Some(&init)).unwrap();
            for (a, b) in w0.iter().zip(&wr) {
                assert!((a - b).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn vjp_of_zero_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let task = random_task(&mut rng, 5, 3);
        let f = precompute(&task, 1e-3).unwrap();
        let theta = random_theta(&mut rng, 3, 2);
        let tape = lower_solve(
            &f,
            &theta,
            0.1,
            SolverSettings::new(20, DualScheme::Projected),
            None,
        )
        .unwrap();
        let g = lower_vjp(&f, &tape, &[0.0; 3]).unwrap();
        assert!(g.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn vjp_rejects_mismatched_factor() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f3 = precompute(&random_task(&mut rng, 5, 3), 1e-3).unwrap();
        let f4 = precompute(&random_task(&mut rng, 5, 4), 1e-3).unwrap();
        let theta = random_theta(&mut rng, 3, 2);
        let tape = lower_solve(
            &f3,
            &theta,
            0.1,
            SolverSettings::new(5, DualScheme::Projected),
            None,
        )
        .unwrap();
        assert!(matches!(
            lower_vjp(&f4, &tape, &[1.0; 4]),
            Err(Error::TapeMismatch)
        ));
        assert!(matches!(
            lower_vjp(&f3, &tape, &[1.0; 2]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn vjp_at_vanishing_lambda_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let task = random_task(&mut rng, 5, 3);
        let f = precompute(&task, 1e-3).unwrap();
        let theta = GroupAssignment::from_labels(&[0, 1, 0], 2)
            .unwrap()
            .into_matrix();
        let tape = lower_solve(
            &f,
            &theta,
            1e-12,
            SolverSettings::new(30, DualScheme::Projected),
            None,
        )
        .unwrap();
        let g = lower_vjp(&f, &tape, &[1.0, -2.0, 0.5]).unwrap();
        assert!(g.as_slice().iter().all(|v| v.abs() < 1e-6));
    }

    fn fd_check(scheme: DualScheme, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut checked = 0;
        while checked < 5 {
            let task = random_task(&mut rng, 3, 2);
            let f = precompute(&task, 1e-3).unwrap();
            let theta = random_theta(&mut rng, 2, 2);
            let lambda = rng.random_range(0.05..0.5);
            let settings = SolverSettings::new(20, scheme);
            let tape = lower_solve(&f, &theta, lambda, settings, None).unwrap();
            if tape.boundary_gap() < 1e-6 {
                continue;
            }
            let gbar: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
            let g = lower_vjp(&f, &tape, &gbar).unwrap();
            let h = 1e-5;
            let mut fd = DenseMatrix::zeros(2, 2);
            for k in 0..4 {
                let mut p = theta.clone();
                let mut m = theta.clone();
                p.as_mut_slice()[k] += h;
                m.as_mut_slice()[k] -= h;
                let (wp, _) = lower_forward(&f, &p, lambda, settings, None).unwrap();
                let (wm, _) = lower_forward(&f, &m, lambda, settings, None).unwrap();
                fd.as_mut_slice()[k] = (dot(&gbar, &wp) - dot(&gbar, &wm)) / (2.0 * h);
            }
            let scale = crate::linalg::norm_inf(fd.as_slice()).max(1e-8);
            assert!(g.max_abs_diff(&fd) <= 1e-4 * scale, "{g:?} vs {fd:?}");
            checked += 1;
        }
    }

    #[test]
    fn vjp_matches_finite_differences_projected() {
        fd_check(DualScheme::Projected, 11);
    }

    #[test]
    fn vjp_matches_finite_differences_accelerated() {
        fd_check(DualScheme::Accelerated, 12);
    }
}
