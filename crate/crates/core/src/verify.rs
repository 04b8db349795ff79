//! Independent oracles: penalty inequalities, finite differences, exhaustive
//! binary search, a primal group-lasso solver, and the two-feature toy
//! landscape.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{generate, substream, GenConfig, Stream, TaskBundle};
use crate::error::{Error, Result};
use crate::linalg::{norm2, DenseMatrix};
use crate::lowerlevel::{lower_forward, precompute, DualScheme, SolverSettings, TaskData};
use crate::outer::{penalty_loop, ContinuationConfig, PenalizedObjective};
use crate::penalty::{phi, GroupAssignment};
use crate::upper::{initial_theta, AdamConfig, GroupLassoObjective, StageConfig};

/// Largest `L^d` [`brute_force_binary`] accepts.
pub const MAX_ENUMERATION: u128 = 4096;

/// Outcome of one oracle check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Check {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Quick,
    Full,
}

impl std::str::FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quick" => Ok(Level::Quick),
            "full" => Ok(Level::Full),
            other => Err(Error::Config(format!(
                "unknown verification level {other:?}"
            ))),
        }
    }
}

// ---------------------------------------------------------------- lemmas

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub name: String,
    pub samples: usize,
    pub violations: usize,
    /// Smallest `lhs − rhs` seen.
    pub worst_margin: f64,
}

impl LemmaReport {
    fn new(name: &str) -> Self {
        LemmaReport {
            name: name.to_string(),
            samples: 0,
            violations: 0,
            worst_margin: f64::INFINITY,
        }
    }

    fn record(&mut self, lhs: f64, rhs: f64, slack: f64) {
        self.samples += 1;
        let margin = lhs - rhs;
        self.worst_margin = self.worst_margin.min(margin);
        if margin < -slack {
            self.violations += 1;
        }
    }
}

fn psi(t: f64) -> f64 {
    t * (1.0 - t)
}

fn phi_vec(v: &[f64]) -> f64 {
    v.iter().map(|&t| psi(t)).sum()
}

fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn open_unit<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let v: f64 = rng.random();
        if v > 0.0 {
            return v;
        }
    }
}

fn random_binary<R: Rng>(rng: &mut R, p: usize) -> Vec<f64> {
    (0..p)
        .map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 })
        .collect()
}

/// Checks the four lower bounds on `φ` from the identification analysis,
/// each on `samples` random inputs satisfying its hypotheses, with
/// absolute slack `slack`.
pub fn lemma_suite(seed: u64, samples: usize, slack: f64) -> Vec<LemmaReport> {
    let mut rng = substream(seed, Stream::Verify, 0);
    let mut reports = Vec::with_capacity(4);

    // ψ difference bound for midpoints away from 1/2
    let mut r = LemmaReport::new("psi-midpoint");
    while r.samples < samples {
        let t1: f64 = rng.random();
        let t2: f64 = rng.random();
        let gap = ((t1 + t2) / 2.0 - 0.5).abs().min(0.5);
        if gap == 0.0 {
            continue;
        }
        let sigma = gap * open_unit(&mut rng);
        r.record(
            (psi(t2) - psi(t1)).abs(),
            2.0 * sigma * (t2 - t1).abs(),
            slack,
        );
    }
    reports.push(r);

    // φ increase toward 1/2, hypotheses drawn through the sign/ordering
    // sufficient condition
    let mut r = LemmaReport::new("phi-toward-center");
    while r.samples < samples {
        let p = rng.random_range(1..=40);
        let sigma = 0.25 * open_unit(&mut rng);
        let mut th = Vec::with_capacity(p);
        let mut tp = Vec::with_capacity(p);
        for _ in 0..p {
            if rng.random_bool(0.5) {
                let v: f64 = rng.random();
                th.push(v);
                tp.push(v);
            } else {
                // |θ − 1/2| ≥ 2σ, θ′ between θ and 1/2
                let dist = 2.0 * sigma + (0.5 - 2.0 * sigma) * rng.random::<f64>();
                let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let t = 0.5 + side * dist;
                let s: f64 = rng.random();
                th.push(t);
                tp.push(0.5 + s * (t - 0.5));
            }
        }
        let hyp = th.iter().zip(&tp).all(|(&a, &b)| {
            a == b || (((a + b) / 2.0 - 0.5).abs() >= sigma && (b - 0.5).abs() <= (a - 0.5).abs())
        });
        if !hyp {
            continue;
        }
        r.record(
            phi_vec(&tp) - phi_vec(&th),
            2.0 * sigma * diff_norm(&tp, &th),
            slack,
        );
    }
    reports.push(r);

    // growth of φ around a binary point, ∞-norm neighborhood
    let mut r = LemmaReport::new("phi-binary-neighborhood");
    while r.samples < samples {
        let p = rng.random_range(1..=40);
        let sigma = 0.5 * open_unit(&mut rng);
        let th = random_binary(&mut rng, p);
        let reach = 1.0 - 2.0 * sigma;
        let tp: Vec<f64> = th
            .iter()
            .map(|&b| (b - reach * rng.random::<f64>()).abs())
            .collect();
        r.record(phi_vec(&tp), 2.0 * sigma * diff_norm(&tp, &th), slack);
    }
    reports.push(r);

    // decrease of φ along the segment toward a close binary point
    let mut r = LemmaReport::new("phi-segment-decrease");
    while r.samples < samples {
        let p = rng.random_range(1..=40);
        let c = 0.5 * open_unit(&mut rng);
        if c >= 0.5 {
            continue;
        }
        let th = random_binary(&mut rng, p);
        // ‖θ − θ̄‖∞ < c
        let bar: Vec<f64> = th
            .iter()
            .map(|&b| (b - c * rng.random::<f64>()).abs())
            .collect();
        let t: f64 = rng.random();
        let seg: Vec<f64> = bar
            .iter()
            .zip(&th)
            .map(|(&a, &b)| (1.0 - t) * a + t * b)
            .collect();
        r.record(
            phi_vec(&bar) - phi_vec(&seg),
            (1.0 - 2.0 * c) * diff_norm(&seg, &bar),
            slack,
        );
    }
    reports.push(r);

    reports
}

// ------------------------------------------------------ finite differences

/// Central differences of `f` in every entry of `theta`, taken in the
/// ambient space (perturbed points are not re-projected).
pub fn finite_diff<F>(mut f: F, theta: &DenseMatrix, h: f64) -> DenseMatrix
where
    F: FnMut(&DenseMatrix) -> f64,
{
    let mut out = DenseMatrix::zeros(theta.rows(), theta.cols());
    let mut probe = theta.clone();
    for k in 0..theta.as_slice().len() {
        let base = probe.as_slice()[k];
        probe.as_mut_slice()[k] = base + h;
        let up = f(&probe);
        probe.as_mut_slice()[k] = base - h;
        let down = f(&probe);
        probe.as_mut_slice()[k] = base;
        out.as_mut_slice()[k] = (up - down) / (2.0 * h);
    }
    out
}

// ------------------------------------------------------ brute force

fn next_labels(labels: &mut [usize], groups: usize) -> bool {
    for v in labels.iter_mut().rev() {
        *v += 1;
        if *v < groups {
            return true;
        }
        *v = 0;
    }
    false
}

/// Evaluates `obj.value` on every binary assignment and returns the
/// lexicographically first minimizer (labels ordered by feature).
pub fn brute_force_binary<O>(obj: &mut O) -> Result<(GroupAssignment, f64)>
where
    O: PenalizedObjective + ?Sized,
{
    let (d, l) = (obj.features(), obj.groups());
    let count = (l as u128).checked_pow(d as u32).unwrap_or(u128::MAX);
    if count > MAX_ENUMERATION {
        return Err(Error::TooLarge(count));
    }
    let mut labels = vec![0usize; d];
    let mut best: Option<(GroupAssignment, f64)> = None;
    loop {
        let theta = GroupAssignment::from_labels(&labels, l)?;
        let value = obj.value(theta.as_matrix())?;
        if best.as_ref().is_none_or(|(_, b)| value < *b) {
            best = Some((theta, value));
        }
        if !next_labels(&mut labels, l) {
            break;
        }
    }
    Ok(best.expect("at least one assignment"))
}

// ------------------------------------------------------ primal oracle

/// Solves `min ½‖Xw − y‖² + (η/2)‖w‖² + λ Σ_l ‖w_{G_l}‖` for the hard
/// grouping `labels` by accelerated proximal gradient with adaptive
/// restart, stopping once an iterate moves less than `tol` in ℓ∞.
pub fn group_lasso_primal(
    task: &TaskData,
    labels: &[usize],
    lambda: f64,
    eta: f64,
    tol: f64,
    max_iter: usize,
) -> Vec<f64> {
    let d = task.features();
    let gram = task.x.gram();
    let xty = task.x.tr_matvec(&task.y);
    // power iteration for the largest eigenvalue of XᵀX + ηI
    let mut v = vec![1.0 / (d as f64).sqrt(); d];
    let mut top = 0.0;
    for _ in 0..500 {
        let mut mv = gram.matvec(&v);
        mv.iter_mut().zip(&v).for_each(|(a, b)| *a += eta * b);
        let n = norm2(&mv);
        if n == 0.0 {
            break;
        }
        top = n;
        v = mv.into_iter().map(|a| a / n).collect();
    }
    let step = 1.0 / (top * 1.01 + eta);
    let groups = labels.iter().copied().max().map_or(0, |m| m + 1);

    let grad = |w: &[f64]| -> Vec<f64> {
        let mut g = gram.matvec(w);
        for i in 0..d {
            g[i] += eta * w[i] - xty[i];
        }
        g
    };
    let prox = |z: &mut [f64]| {
        for l in 0..groups {
            let n = labels
                .iter()
                .zip(z.iter())
                .filter(|(&g, _)| g == l)
                .map(|(_, v)| v * v)
                .sum::<f64>()
                .sqrt();
            let scale = if n > step * lambda {
                1.0 - step * lambda / n
            } else {
                0.0
            };
            for (zi, _) in z.iter_mut().zip(labels).filter(|(_, &g)| g == l) {
                *zi *= scale;
            }
        }
    };

    let mut w = vec![0.0; d];
    let mut y = w.clone();
    let mut t = 1.0f64;
    for _ in 0..max_iter {
        let g = grad(&y);
        let mut next: Vec<f64> = y.iter().zip(&g).map(|(a, b)| a - step * b).collect();
        prox(&mut next);
        let moved = next
            .iter()
            .zip(&w)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        // restart momentum when it points uphill
        let uphill: f64 = y
            .iter()
            .zip(&next)
            .zip(&w)
            .map(|((yi, ni), wi)| (yi - ni) * (ni - wi))
            .sum();
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        if uphill > 0.0 {
            t = 1.0;
            y = next.clone();
        } else {
            let beta = (t - 1.0) / t_next;
            y = next
                .iter()
                .zip(&w)
                .map(|(a, b)| a + beta * (a - b))
                .collect();
            t = t_next;
        }
        w = next;
        if moved < tol {
            break;
        }
    }
    w
}

// ------------------------------------------------------ toy landscape

/// Fixed seed of the toy bundle.
pub const TOY_SEED: u64 = 4;
/// Regularization weight of the toy objective.
pub const TOY_LAMBDA: f64 = 0.05;

/// Two features, two groups: every feasible θ is `[[t11, 1−t11],
/// [t21, 1−t21]]`, so the relaxed problem lives on `[0,1]²`.
pub struct ToyObjective {
    pub bundle: TaskBundle,
    pub lambda: f64,
    pub eta: f64,
    pub solver: SolverSettings,
}

impl ToyObjective {
    pub fn new(seed: u64, lambda: f64) -> Result<Self> {
        let bundle = generate(&GenConfig {
            d: 2,
            groups: 2,
            tasks: 10,
            n: 5,
            noise_variance: 0.1,
            seed,
        })?;
        Ok(ToyObjective {
            bundle,
            lambda,
            eta: 1e-3,
            solver: SolverSettings::new(500, DualScheme::Projected),
        })
    }

    pub fn standard() -> Result<Self> {
        Self::new(TOY_SEED, TOY_LAMBDA)
    }

    pub fn theta(t11: f64, t21: f64) -> DenseMatrix {
        DenseMatrix::from_vec(2, 2, vec![t11, 1.0 - t11, t21, 1.0 - t21]).expect("2x2")
    }

    pub fn objective(&self) -> Result<GroupLassoObjective<'_>> {
        Ok(
            GroupLassoObjective::new(&self.bundle, self.lambda, self.eta, self.solver)?
                .with_warm_start(false),
        )
    }

    /// `G` at `(t11, t21)`.
    pub fn g(&self, t11: f64, t21: f64) -> Result<f64> {
        self.objective()?.value(&Self::theta(t11, t21))
    }

    /// The oracle grouping and its label swap, as `(t11, t21)`.
    pub fn oracle_vertices(&self) -> [(f64, f64); 2] {
        let labels = self.bundle.labels.clone();
        let t = |f: usize| if labels[f] == 0 { 1.0 } else { 0.0 };
        [(t(0), t(1)), (1.0 - t(0), 1.0 - t(1))]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandscapePoint {
    pub t11: f64,
    pub t21: f64,
    pub g: f64,
    pub gpen: f64,
}

/// `G` and `G + φ/ε` on a uniform `resolution × resolution` grid,
/// row-major with `t11` outer.
#[derive(Clone, Debug)]
pub struct Landscape {
    pub resolution: usize,
    pub eps: f64,
    pub points: Vec<LandscapePoint>,
}

pub fn landscape_grid(toy: &ToyObjective, eps: f64, resolution: usize) -> Result<Landscape> {
    if resolution < 2 {
        return Err(Error::Config("landscape resolution must be >= 2".into()));
    }
    let step = 1.0 / (resolution - 1) as f64;
    let cells: Vec<(f64, f64)> = (0..resolution)
        .flat_map(|i| (0..resolution).map(move |j| (i as f64 * step, j as f64 * step)))
        .collect();
    let factors = toy
        .bundle
        .tasks
        .iter()
        .map(|t| precompute(&t.train, toy.eta))
        .collect::<Result<Vec<_>>>()?;
    let values: Vec<Result<f64>> = cells
        .par_iter()
        .map(|&(a, b)| {
            let theta = ToyObjective::theta(a, b);
            let mut total = 0.0;
            for (f, task) in factors.iter().zip(&toy.bundle.tasks) {
                let (w, _) = lower_forward(f, &theta, toy.lambda, toy.solver, None)?;
                total += crate::upper::validation_loss(&task.validation, &w);
            }
            Ok(total / factors.len() as f64)
        })
        .collect();
    let mut land = Landscape {
        resolution,
        eps,
        points: Vec::with_capacity(cells.len()),
    };
    for ((t11, t21), g) in cells.into_iter().zip(values) {
        let g = g?;
        land.points.push(LandscapePoint {
            t11,
            t21,
            g,
            gpen: g,
        });
    }
    land.set_eps(eps);
    Ok(land)
}

impl Landscape {
    fn at(&self, i: usize, j: usize) -> &LandscapePoint {
        &self.points[i * self.resolution + j]
    }

    /// Recomputes the penalized surface for another `ε`.
    pub fn set_eps(&mut self, eps: f64) {
        self.eps = eps;
        let w = crate::upper::penalty_weight(eps);
        for p in &mut self.points {
            p.gpen = p.g + w * phi(&ToyObjective::theta(p.t11, p.t21));
        }
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t11,t21,G,Gpen")?;
        for p in &self.points {
            writeln!(out, "{},{},{},{}", p.t11, p.t21, p.g, p.gpen)?;
        }
        Ok(())
    }

    pub fn argmin_g(&self) -> LandscapePoint {
        *self
            .points
            .iter()
            .min_by(|a, b| a.g.total_cmp(&b.g))
            .expect("nonempty grid")
    }

    pub fn argmin_pen(&self) -> LandscapePoint {
        *self
            .points
            .iter()
            .min_by(|a, b| a.gpen.total_cmp(&b.gpen))
            .expect("nonempty grid")
    }

    /// Largest forward-difference slope of `G` on the grid, measured in
    /// the Euclidean norm of the `(t11, t21)` coordinates.
    pub fn lipschitz_estimate(&self) -> f64 {
        let r = self.resolution;
        let h = 1.0 / (r - 1) as f64;
        let mut best: f64 = 0.0;
        for i in 0..r - 1 {
            for j in 0..r - 1 {
                let g0 = self.at(i, j).g;
                let di = (self.at(i + 1, j).g - g0) / h;
                let dj = (self.at(i, j + 1).g - g0) / h;
                best = best.max((di * di + dj * dj).sqrt());
            }
        }
        best
    }

    /// Cells whose penalized value is no larger than any of their (up to
    /// eight) neighbors.
    pub fn local_minima(&self) -> Vec<LandscapePoint> {
        let r = self.resolution as isize;
        let mut out = Vec::new();
        for i in 0..r {
            for j in 0..r {
                let v = self.at(i as usize, j as usize).gpen;
                let mut is_min = true;
                for di in -1..=1 {
                    for dj in -1..=1 {
                        let (a, b) = (i + di, j + dj);
                        if (di, dj) == (0, 0) || a < 0 || b < 0 || a >= r || b >= r {
                            continue;
                        }
                        if self.at(a as usize, b as usize).gpen < v {
                            is_min = false;
                        }
                    }
                }
                if is_min {
                    out.push(*self.at(i as usize, j as usize));
                }
            }
        }
        out
    }
}

fn toy_dist(p: &LandscapePoint) -> f64 {
    p.t11.min(1.0 - p.t11).max(p.t21.min(1.0 - p.t21))
}

// ------------------------------------------------------ suites

/// Random interior θ for a `d × L` problem, entries bounded away from 0.
fn interior_theta<R: Rng>(rng: &mut R, d: usize, l: usize) -> DenseMatrix {
    let mut data = Vec::with_capacity(d * l);
    for _ in 0..d {
        let raw: Vec<f64> = (0..l).map(|_| rng.random_range(0.2..1.0)).collect();
        let s: f64 = raw.iter().sum();
        data.extend(raw.into_iter().map(|v| v / s));
    }
    DenseMatrix::from_vec(d, l, data).expect("shape")
}

#[derive(Clone, Debug)]
pub struct GradientCase {
    pub rel_error: f64,
    pub skipped_boundary: usize,
}

/// Compares the batch hypergradient with central differences on `count`
/// random tiny problems. Instances whose unrolled duals come within
/// `1e−6` of the ball boundary are redrawn.
pub fn gradient_oracle(seed: u64, count: usize, scheme: DualScheme) -> Result<Vec<GradientCase>> {
    let mut rng = substream(seed, Stream::Verify, 1);
    let mut cases = Vec::with_capacity(count);
    let mut skipped = 0;
    let mut draw = 0u64;
    while cases.len() < count {
        draw += 1;
        let d = rng.random_range(2..=4);
        let tasks = rng.random_range(1..=3);
        let q = rng.random_range(10..=30);
        let bundle = generate(&GenConfig {
            d,
            groups: 2,
            tasks,
            n: rng.random_range(3..=6),
            noise_variance: 0.1,
            seed: seed.wrapping_mul(1000).wrapping_add(draw),
        })?;
        let lambda = rng.random_range(0.05..0.5);
        let eps = rng.random_range(0.5..5.0);
        let solver = SolverSettings::new(q, scheme);
        let theta = interior_theta(&mut rng, d, 2);

        let near_kink = bundle
            .tasks
            .iter()
            .try_fold(false, |acc, t| -> Result<bool> {
                let f = precompute(&t.train, 1e-3)?;
                let tape = crate::lowerlevel::lower_solve(&f, &theta, lambda, solver, None)?;
                Ok(acc || tape.boundary_gap() < 1e-6)
            })?;
        if near_kink {
            skipped += 1;
            continue;
        }

        let mut obj =
            GroupLassoObjective::new(&bundle, lambda, 1e-3, solver)?.with_warm_start(false);
        let batch: Vec<usize> = (0..tasks).collect();
        let eval = obj.evaluate(&batch, &theta, eps)?;
        let fd = finite_diff(
            |th| {
                obj.evaluate(&batch, th, eps)
                    .map(|e| e.objective)
                    .unwrap_or(f64::NAN)
            },
            &theta,
            1e-5,
        );
        let num: f64 = diff_norm(eval.grad.as_slice(), fd.as_slice());
        let den = norm2(fd.as_slice()).max(1e-12);
        cases.push(GradientCase {
            rel_error: num / den,
            skipped_boundary: skipped,
        });
    }
    Ok(cases)
}

/// ℓ∞ gap between the unrolled lower-level solution with `q` iterations
/// and the primal oracle, on `count` random binary-θ problems.
pub fn lower_level_oracle(seed: u64, count: usize, solver: SolverSettings) -> Result<Vec<f64>> {
    let mut rng = substream(seed, Stream::Verify, 2);
    let mut gaps = Vec::with_capacity(count);
    for k in 0..count {
        let d = rng.random_range(3..=8);
        let groups = rng.random_range(2..=3.min(d));
        let bundle = generate(&GenConfig {
            d,
            groups,
            tasks: 1,
            n: rng.random_range(d + 1..=4 * d),
            noise_variance: 0.1,
            seed: seed.wrapping_mul(1000).wrapping_add(k as u64),
        })?;
        let labels: Vec<usize> = (0..d).map(|_| rng.random_range(0..groups)).collect();
        let theta = GroupAssignment::from_labels(&labels, groups)?;
        let lambda = rng.random_range(0.05..1.0);
        let task = &bundle.tasks[0].train;
        let f = precompute(task, 1e-3)?;
        let (w, _) = lower_forward(&f, theta.as_matrix(), lambda, solver, None)?;
        let oracle = group_lasso_primal(task, &labels, lambda, 1e-3, 1e-15, 1_000_000);
        gaps.push(
            w.iter()
                .zip(&oracle)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
        );
    }
    Ok(gaps)
}

/// Settings of the small-scale exhaustive comparison.
#[derive(Clone, Debug)]
pub struct SmallScaleSettings {
    pub d: usize,
    pub tasks: usize,
    pub n: usize,
    pub lambda: f64,
    pub solver: SolverSettings,
    /// Accuracy used by the exhaustive search and for comparing values.
    pub reference_q: usize,
    pub continuation: ContinuationConfig,
    /// Independent starts; the one with the lowest `G` is kept.
    pub restarts: usize,
}

impl Default for SmallScaleSettings {
    fn default() -> Self {
        SmallScaleSettings {
            d: 4,
            tasks: 6,
            n: 8,
            lambda: 0.2,
            solver: SolverSettings::new(200, DualScheme::Projected),
            reference_q: 5000,
            restarts: 1,
            continuation: ContinuationConfig {
                stages: 10,
                stage: StageConfig {
                    epochs: 100,
                    batch_size: 10,
                    ..StageConfig::default()
                },
                adam: AdamConfig {
                    tangent_rows: true,
                    ..AdamConfig::default()
                },
                ..ContinuationConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmallScaleCase {
    pub brute_labels: Vec<usize>,
    pub brute_value: f64,
    pub mib_labels: Vec<usize>,
    pub mib_value: f64,
    pub forced_snap: bool,
    pub agree: bool,
}

/// Runs the continuation on `count` random `L = 2` instances and
/// compares the value of its answer with the exhaustive binary optimum,
/// both evaluated at `reference_q` iterations.
pub fn small_scale_equivalence(
    seed: u64,
    count: usize,
    s: &SmallScaleSettings,
) -> Result<Vec<SmallScaleCase>> {
    let jobs: Vec<u64> = (0..count as u64).collect();
    jobs.par_iter()
        .map(|&k| {
            let bundle = generate(&GenConfig {
                d: s.d,
                groups: 2,
                tasks: s.tasks,
                n: s.n,
                noise_variance: 0.1,
                seed: seed.wrapping_mul(1000).wrapping_add(k),
            })?;
            let reference = SolverSettings::new(s.reference_q, s.solver.scheme);
            let mut exact = GroupLassoObjective::new(&bundle, s.lambda, 1e-3, reference)?;
            let (brute, brute_value) = brute_force_binary(&mut exact)?;

            let mut obj = GroupLassoObjective::new(&bundle, s.lambda, 1e-3, s.solver)?;
            let mut best: Option<(f64, crate::outer::ContinuationOutcome)> = None;
            for r in 0..s.restarts.max(1) as u64 {
                let index = k * 1000 + r;
                obj.reset();
                let theta0 = initial_theta(s.d, 2, &mut substream(seed, Stream::ThetaInit, index));
                let mut rng = substream(seed, Stream::Minibatch, index);
                let out = penalty_loop(&mut obj, &s.continuation, theta0, &mut rng)?;
                let v = obj.value(out.theta.as_matrix())?;
                if best.as_ref().is_none_or(|(b, _)| v < *b) {
                    best = Some((v, out));
                }
            }
            let (_, out) = best.expect("at least one start");
            let mib_value = exact.value(out.theta.as_matrix())?;
            let agree = (mib_value - brute_value).abs() <= 1e-9 * brute_value.abs().max(1.0);
            Ok(SmallScaleCase {
                brute_labels: brute.labels(),
                brute_value,
                mib_labels: out.theta.labels(),
                mib_value,
                forced_snap: out.forced_snap,
                agree,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCase {
    pub brute_labels: Vec<usize>,
    pub brute_value: f64,
    pub grid_argmin: (f64, f64),
    pub eps: f64,
    pub agree: bool,
}

/// On `count` random two-feature, two-group instances, locates the
/// minimum of `G + φ/ε` over a `resolution²` grid with `ε` at `1e−3`
/// times the mean of `G`, and checks it lies within one cell of an
/// exhaustive binary minimizer (either labeling, as `G` is invariant
/// under swapping the groups).
pub fn penalized_grid_vs_exhaustive(
    seed: u64,
    count: usize,
    resolution: usize,
) -> Result<Vec<GridCase>> {
    let mut rng = substream(seed, Stream::Verify, 3);
    let mut cases = Vec::with_capacity(count);
    for k in 0..count as u64 {
        let lambda = rng.random_range(0.02..0.5);
        let toy = ToyObjective {
            bundle: generate(&GenConfig {
                d: 2,
                groups: 2,
                tasks: 3,
                n: 5,
                noise_variance: 0.1,
                seed: seed.wrapping_mul(1000).wrapping_add(k),
            })?,
            lambda,
            eta: 1e-3,
            solver: SolverSettings::new(500, DualScheme::Projected),
        };
        let reference = SolverSettings::new(5000, DualScheme::Projected);
        let mut exact = GroupLassoObjective::new(&toy.bundle, lambda, 1e-3, reference)?;
        let (brute, brute_value) = brute_force_binary(&mut exact)?;
        let mut land = landscape_grid(&toy, f64::INFINITY, resolution)?;
        let scale = land.points.iter().map(|p| p.g.abs()).sum::<f64>() / land.points.len() as f64;
        let eps = 1e-3 * scale;
        land.set_eps(eps);
        let m = land.argmin_pen();
        let labels = brute.labels();
        let t = |l: usize| if l == 0 { 1.0 } else { 0.0 };
        let cell = 1.0 / (resolution - 1) as f64;
        let agree = [
            (t(labels[0]), t(labels[1])),
            (1.0 - t(labels[0]), 1.0 - t(labels[1])),
        ]
        .iter()
        .any(|&(a, b)| (m.t11 - a).abs() <= cell && (m.t21 - b).abs() <= cell);
        cases.push(GridCase {
            brute_labels: labels,
            brute_value,
            grid_argmin: (m.t11, m.t21),
            eps,
            agree,
        });
    }
    Ok(cases)
}

/// Toy-landscape facts: the penalized grid minimum sits at an oracle
/// vertex, and below the identification threshold every grid local
/// minimum closer than `c` to the binary set is a vertex.
#[derive(Clone, Debug)]
pub struct ToyReport {
    pub resolution: usize,
    pub eps: f64,
    pub argmin_pen: LandscapePoint,
    pub argmin_at_oracle: bool,
    pub lip_g: f64,
    pub c: f64,
    pub identification_eps: f64,
    pub near_minima: usize,
    pub near_minima_binary: usize,
}

pub fn toy_report(toy: &ToyObjective, resolution: usize, eps: f64, c: f64) -> Result<ToyReport> {
    let mut land = landscape_grid(toy, eps, resolution)?;
    let argmin_pen = land.argmin_pen();
    let cell = 1.0 / (resolution - 1) as f64;
    let argmin_at_oracle = toy
        .oracle_vertices()
        .iter()
        .any(|&(a, b)| (argmin_pen.t11 - a).abs() <= cell && (argmin_pen.t21 - b).abs() <= cell);

    let lip_g = land.lipschitz_estimate();
    let identification_eps = 0.5 * (1.0 - 2.0 * c) / lip_g;
    land.set_eps(identification_eps);
    let near: Vec<LandscapePoint> = land
        .local_minima()
        .into_iter()
        .filter(|p| toy_dist(p) < c)
        .collect();
    let near_binary = near.iter().filter(|p| toy_dist(p) <= cell).count();
    Ok(ToyReport {
        resolution,
        eps,
        argmin_pen,
        argmin_at_oracle,
        lip_g,
        c,
        identification_eps,
        near_minima: near.len(),
        near_minima_binary: near_binary,
    })
}

/// Runs every oracle suite. `Quick` uses coarser grids and fewer
/// lemma samples.
pub fn run_suite(level: Level, seed: u64) -> Result<Vec<Check>> {
    let (lemma_samples, resolution) = match level {
        Level::Quick => (1000, 51),
        Level::Full => (20_000, 201),
    };
    let mut checks = Vec::new();

    for r in lemma_suite(seed, lemma_samples, 1e-12) {
        checks.push(Check::new(
            &format!("lemma {}", r.name),
            r.violations == 0,
            format!(
                "{} samples, {} violations, worst margin {:.3e}",
                r.samples, r.violations, r.worst_margin
            ),
        ));
    }

    let grads = gradient_oracle(seed, 20, DualScheme::Projected)?;
    let worst = grads.iter().map(|c| c.rel_error).fold(0.0, f64::max);
    checks.push(Check::new(
        "hypergradient vs finite differences",
        worst <= 1e-4,
        format!("20 instances, worst relative error {worst:.3e}"),
    ));

    let gaps = lower_level_oracle(seed, 10, SolverSettings::new(5000, DualScheme::Projected))?;
    let worst = gaps.iter().copied().fold(0.0, f64::max);
    checks.push(Check::new(
        "lower level vs primal oracle",
        worst <= 1e-6,
        format!("10 instances, worst l-inf gap {worst:.3e}"),
    ));

    let toy = ToyObjective::standard()?;
    let rep = toy_report(&toy, resolution, 1e-3, 0.4)?;
    checks.push(Check::new(
        "toy penalized minimum at oracle vertex",
        rep.argmin_at_oracle,
        format!(
            "{}x{} grid, eps {:e}, argmin ({}, {})",
            rep.resolution, rep.resolution, rep.eps, rep.argmin_pen.t11, rep.argmin_pen.t21
        ),
    ));
    checks.push(Check::new(
        "toy local minima near the binary set are binary",
        rep.near_minima == rep.near_minima_binary,
        format!(
            "lip_G {:.4}, eps {:.3e}, {}/{} minima within {} are vertices",
            rep.lip_g, rep.identification_eps, rep.near_minima_binary, rep.near_minima, rep.c
        ),
    ));

    let grid = penalized_grid_vs_exhaustive(seed, 10, resolution)?;
    let agree = grid.iter().filter(|c| c.agree).count();
    checks.push(Check::new(
        "penalized grid minimum matches exhaustive search",
        agree >= 8,
        format!("{agree}/10 two-feature instances, {resolution}x{resolution} grid"),
    ));

    if level == Level::Full {
        let cases = small_scale_equivalence(seed, 10, &SmallScaleSettings::default())?;
        let agree = cases.iter().filter(|c| c.agree).count();
        checks.push(Check::new(
            "continuation matches exhaustive search",
            agree >= 8,
            format!("{agree}/10 instances"),
        ));
    }
    Ok(checks)
}
