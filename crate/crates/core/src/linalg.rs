//! Dense kernels: row-major matrices, Cholesky factorization and the
//! Euclidean projection onto the probability simplex.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix of `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(DenseMatrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols;
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut t = DenseMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    /// `self * x`
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matvec dimension mismatch");
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `selfᵀ * x`
    pub fn tr_matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows, "tr_matvec dimension mismatch");
        let mut out = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            axpy(xi, self.row(i), &mut out);
        }
        out
    }

    /// `selfᵀ * self`
    pub fn gram(&self) -> DenseMatrix {
        let mut g = DenseMatrix::zeros(self.cols, self.cols);
        for i in 0..self.rows {
            let r = self.row(i);
            for a in 0..self.cols {
                let ra = r[a];
                if ra == 0.0 {
                    continue;
                }
                let grow = g.row_mut(a);
                for b in 0..r.len() {
                    grow[b] += ra * r[b];
                }
            }
        }
        g
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                got: other.rows,
            });
        }
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                axpy(a, other.row(k), out.row_mut(i));
            }
        }
        Ok(out)
    }

    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Rescales every column to unit Euclidean norm. Zero columns are left alone.
    pub fn normalize_columns(&mut self) {
        let mut norms = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (n, v) in norms.iter_mut().zip(self.row(i)) {
                *n += v * v;
            }
        }
        for n in norms.iter_mut() {
            *n = n.sqrt();
        }
        for i in 0..self.rows {
            for (v, n) in self.row_mut(i).iter_mut().zip(&norms) {
                if *n > 0.0 {
                    *v /= n;
                }
            }
        }
    }

    pub fn column_norms(&self) -> Vec<f64> {
        let mut norms = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (n, v) in norms.iter_mut().zip(self.row(i)) {
                *n += v * v;
            }
        }
        norms.into_iter().map(f64::sqrt).collect()
    }
}

impl std::ops::Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| f64::max(m, v.abs()))
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

const SYMMETRY_TOL: f64 = 1e-10;

/// Lower-triangular Cholesky factor `A = C Cᵀ` of a symmetric positive
/// definite matrix.
#[derive(Clone, Debug)]
pub struct SpdFactor {
    dim: usize,
    // packed row-major lower triangle, full square storage for simplicity
    lower: Vec<f64>,
}

/// Cholesky factorization. Symmetry is checked relative to the largest
/// entry magnitude.
pub fn spd_factor(a: &DenseMatrix) -> Result<SpdFactor> {
    if a.rows() != a.cols() {
        return Err(Error::DimensionMismatch {
            expected: a.rows(),
            got: a.cols(),
        });
    }
    let n = a.rows();
    let scale = norm_inf(a.as_slice()).max(1.0);
    let mut asym = 0.0_f64;
    for i in 0..n {
        for j in 0..i {
            asym = asym.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::NotSymmetric(asym));
    }

    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut diag = a[(j, j)];
        for k in 0..j {
            diag -= l[j * n + k] * l[j * n + k];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return Err(Error::NotPositiveDefinite {
                index: j,
                pivot: diag,
            });
        }
        let ljj = diag.sqrt();
        l[j * n + j] = ljj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / ljj;
        }
    }
    Ok(SpdFactor { dim: n, lower: l })
}

impl SpdFactor {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Solves `A z = b`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: b.len(),
            });
        }
        let mut z = b.to_vec();
        self.solve_in_place(&mut z);
        Ok(z)
    }

    /// Solves in place. Panics on length mismatch; hot-loop variant of [`solve`](Self::solve).
    pub fn solve_in_place(&self, z: &mut [f64]) {
        let n = self.dim;
        assert_eq!(z.len(), n);
        let l = &self.lower;
        // forward: C x = b
        for i in 0..n {
            let row = &l[i * n..i * n + i];
            let s = z[i] - dot(row, &z[..i]);
            z[i] = s / l[i * n + i];
        }
        // backward: Cᵀ z = x
        for i in (0..n).rev() {
            let mut s = z[i];
            for k in (i + 1)..n {
                s -= l[k * n + i] * z[k];
            }
            z[i] = s / l[i * n + i];
        }
    }

    /// Solves several right-hand sides given as matrix columns.
    pub fn solve_columns(&self, b: &DenseMatrix) -> Result<DenseMatrix> {
        if b.rows() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: b.rows(),
            });
        }
        let bt = b.transpose();
        let mut out = DenseMatrix::zeros(bt.rows(), bt.cols());
        for c in 0..bt.rows() {
            let z = self.solve(bt.row(c))?;
            out.row_mut(c).copy_from_slice(&z);
        }
        Ok(out.transpose())
    }

    /// `C Cᵀ`, the factored matrix.
    pub fn reconstruct(&self) -> DenseMatrix {
        let n = self.dim;
        let mut a = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let s: f64 = (0..=j)
                    .map(|k| self.lower[i * n + k] * self.lower[j * n + k])
                    .sum();
                a[(i, j)] = s;
                a[(j, i)] = s;
            }
        }
        a
    }

    /// Smallest eigenvalue of the factored matrix by inverse power iteration.
    ///
    /// The Rayleigh quotient approaches the largest eigenvalue of `A⁻¹` from
    /// below, so the returned value can overshoot the true minimum slightly
    /// when the bottom of the spectrum is clustered.
    pub fn min_eigenvalue(&self, iters: usize) -> f64 {
        let n = self.dim;
        if n == 0 {
            return f64::INFINITY;
        }
        // deterministic, non-degenerate start vector
        let mut x: Vec<f64> = (0..n)
            .map(|i| 1.0 + (i as f64 * 0.618_034).fract())
            .collect();
        let nx = norm2(&x);
        x.iter_mut().for_each(|v| *v /= nx);
        let mut rq = 0.0;
        for _ in 0..iters.max(1) {
            let mut y = x.clone();
            self.solve_in_place(&mut y);
            rq = dot(&x, &y);
            let ny = norm2(&y);
            if !(ny > 0.0) {
                break;
            }
            x = y.into_iter().map(|v| v / ny).collect();
        }
        1.0 / rq
    }
}

/// Euclidean projection onto the probability simplex by sort-and-threshold.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    project_simplex_in_place(&mut out);
    out
}

pub fn project_simplex_in_place(v: &mut [f64]) {
    let n = v.len();
    if n == 0 {
        return;
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (k, &s) in sorted.iter().enumerate() {
        cumsum += s;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if s - t > 0.0 {
            tau = t;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - tau).max(0.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> DenseMatrix {
        let m = DenseMatrix::from_vec(
            d,
            d,
            (0..d * d).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let mut a = m.gram();
        for i in 0..d {
            a[(i, i)] += 1.0;
        }
        a
    }

    #[test]
    fn identity_solve_is_identity() {
        let f = spd_factor(&DenseMatrix::identity(3)).unwrap();
        assert_eq!(f.solve(&[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(f.solve(&[0.0; 3]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn diagonal_solve() {
        let mut a = DenseMatrix::identity(2);
        a[(0, 0)] = 2.0;
        a[(1, 1)] = 2.0;
        let z = spd_factor(&a).unwrap().solve(&[4.0, 6.0]).unwrap();
        assert!((z[0] - 2.0).abs() < 1e-15 && (z[1] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_inputs() {
        let a = DenseMatrix::from_rows(&[vec![1.0, 0.5], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(spd_factor(&a), Err(Error::NotSymmetric(_))));
        let b = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(matches!(
            spd_factor(&b),
            Err(Error::NotPositiveDefinite { index: 1, .. })
        ));
        let f = spd_factor(&DenseMatrix::identity(2)).unwrap();
        assert!(matches!(
            f.solve(&[1.0]),
            Err(Error::DimensionMismatch {
                expected: 2,
                got: 1
            })
        ));
    }

    #[test]
    fn random_spd_residuals_and_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..100 {
            let d = 2 + trial % 49;
            let a = random_spd(&mut rng, d);
            let f = spd_factor(&a).unwrap();
            let scale = norm_inf(a.as_slice());
            assert!(f.reconstruct().max_abs_diff(&a) <= 1e-10 * scale);
            let b: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let z = f.solve(&b).unwrap();
            let r: Vec<f64> = a.matvec(&z).iter().zip(&b).map(|(x, y)| x - y).collect();
            assert!(norm2(&r) <= 1e-8 * norm2(&b), "d={d}");
        }
    }

    #[test]
    fn batched_solve_matches_single() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_spd(&mut rng, 6);
        let f = spd_factor(&a).unwrap();
        let b1: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b2: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b = DenseMatrix::from_vec(
            6,
            2,
            b1.iter().zip(&b2).flat_map(|(x, y)| [*x, *y]).collect(),
        )
        .unwrap();
        let z = f.solve_columns(&b).unwrap();
        let z1 = f.solve(&b1).unwrap();
        let z2 = f.solve(&b2).unwrap();
        for i in 0..6 {
            assert_eq!(z[(i, 0)], z1[i]);
            assert_eq!(z[(i, 1)], z2[i]);
        }
    }

    #[test]
    fn min_eigenvalue_of_diagonal() {
        let mut a = DenseMatrix::identity(4);
        for (i, v) in [3.0, 0.5, 7.0, 2.0].iter().enumerate() {
            a[(i, i)] = *v;
        }
        let f = spd_factor(&a).unwrap();
        assert!((f.min_eigenvalue(200) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn simplex_examples() {
        assert_eq!(project_simplex(&[0.5, 0.5]), vec![0.5, 0.5]);
        assert_eq!(project_simplex(&[2.0, 0.0]), vec![1.0, 0.0]);
        let p = project_simplex(&[0.4, 0.2, 0.1]);
        for (a, b) in p.iter().zip([0.5, 0.3, 0.2]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(project_simplex(&[5.0]), vec![1.0]);
    }

    /// Active-set enumeration: for each nonempty support S the projection
    /// restricted to S is `v_S - (sum v_S - 1)/|S|`; keep the feasible one
    /// closest to `v`.
    fn simplex_oracle(v: &[f64]) -> Vec<f64> {
        let n = v.len();
        let mut best: Option<(f64, Vec<f64>)> = None;
        for mask in 1u32..(1 << n) {
            let idx: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            let shift = (idx.iter().map(|&i| v[i]).sum::<f64>() - 1.0) / idx.len() as f64;
            let mut z = vec![0.0; n];
            let mut ok = true;
            for &i in &idx {
                z[i] = v[i] - shift;
                if z[i] < -1e-14 {
                    ok = false;
                }
            }
            if !ok {
                continue;
            }
            let dist: f64 = z.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
            if best.as_ref().is_none_or(|(d, _)| dist < *d) {
                best = Some((dist, z));
            }
        }
        best.unwrap().1
    }

    proptest::proptest! {
        #[test]
        fn simplex_matches_enumeration(v in proptest::collection::vec(-2.0f64..2.0, 1..=4)) {
            let p = project_simplex(&v);
            let o = simplex_oracle(&v);
            for (a, b) in p.iter().zip(&o) {
                proptest::prop_assert!((a - b).abs() < 1e-12);
            }
            proptest::prop_assert!(p.iter().all(|x| *x >= 0.0));
            proptest::prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn simplex_is_idempotent(v in proptest::collection::vec(-5.0f64..5.0, 1..=16)) {
            let p = project_simplex(&v);
            let pp = project_simplex(&p);
            for (a, b) in p.iter().zip(&pp) {
                proptest::prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
