//! The concave binarity penalty `φ(θ) = Σ θᵢ(1 − θᵢ)` and the geometry of
//! binary group assignments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{project_simplex_in_place, DenseMatrix};

const ENTRY_TOL: f64 = 1e-12;
const ROW_SUM_TOL: f64 = 1e-9;

/// Relaxed group membership: a `d × L` matrix whose rows lie on the
/// probability simplex. Row `j` holds the membership weights of feature `j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DenseMatrix", into = "DenseMatrix")]
pub struct GroupAssignment(DenseMatrix);

impl GroupAssignment {
    pub fn new(theta: DenseMatrix) -> Result<Self> {
        check_feasible(&theta)?;
        Ok(GroupAssignment(theta))
    }

    /// Every feature spread evenly over all groups.
    pub fn uniform(d: usize, groups: usize) -> Self {
        let v = 1.0 / groups as f64;
        GroupAssignment(DenseMatrix::from_vec(d, groups, vec![v; d * groups]).unwrap())
    }

    /// Binary assignment putting feature `j` in group `labels[j]`.
    pub fn from_labels(labels: &[usize], groups: usize) -> Result<Self> {
        let mut m = DenseMatrix::zeros(labels.len(), groups);
        for (j, &l) in labels.iter().enumerate() {
            if l >= groups {
                return Err(Error::InfeasibleAssignment(format!(
                    "label {l} of feature {j} out of range for {groups} groups"
                )));
            }
            m[(j, l)] = 1.0;
        }
        Ok(GroupAssignment(m))
    }

    /// Projects each row of an arbitrary finite matrix onto the simplex.
    pub fn project(mut theta: DenseMatrix) -> Self {
        for j in 0..theta.rows() {
            project_simplex_in_place(theta.row_mut(j));
        }
        GroupAssignment(theta)
    }

    pub fn features(&self) -> usize {
        self.0.rows()
    }

    pub fn groups(&self) -> usize {
        self.0.cols()
    }

    pub fn as_matrix(&self) -> &DenseMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> DenseMatrix {
        self.0
    }

    /// Group index of the largest entry in each row (lowest index on ties).
    pub fn labels(&self) -> Vec<usize> {
        (0..self.features())
            .map(|j| argmax_lowest(self.0.row(j)))
            .collect()
    }

    pub fn is_binary(&self) -> bool {
        self.0.as_slice().iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn phi(&self) -> f64 {
        phi(&self.0)
    }

    pub fn dist_inf_to_bin(&self) -> f64 {
        dist_inf_to_bin(&self.0)
    }

    pub fn snap_to_bin(&self) -> GroupAssignment {
        snap_to_bin(self)
    }
}

impl TryFrom<DenseMatrix> for GroupAssignment {
    type Error = Error;

    fn try_from(m: DenseMatrix) -> Result<Self> {
        GroupAssignment::new(m)
    }
}

impl From<GroupAssignment> for DenseMatrix {
    fn from(g: GroupAssignment) -> DenseMatrix {
        g.0
    }
}

fn check_feasible(theta: &DenseMatrix) -> Result<()> {
    if theta.cols() == 0 {
        return Err(Error::InfeasibleAssignment("no groups".into()));
    }
    for j in 0..theta.rows() {
        let row = theta.row(j);
        if let Some(v) = row
            .iter()
            .find(|v| !v.is_finite() || **v < -ENTRY_TOL || **v > 1.0 + ENTRY_TOL)
        {
            return Err(Error::InfeasibleAssignment(format!(
                "entry {v} in row {j} outside [0, 1]"
            )));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::InfeasibleAssignment(format!("row {j} sums to {s}")));
        }
    }
    Ok(())
}

fn argmax_lowest(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// `Σ θᵢ(1 − θᵢ)` over all entries. Defined on any matrix so that finite
/// differences may leave the feasible set.
pub fn phi(theta: &DenseMatrix) -> f64 {
    theta.as_slice().iter().map(|t| t * (1.0 - t)).sum()
}

/// Entrywise `1 − 2θᵢ`.
pub fn grad_phi(theta: &DenseMatrix) -> DenseMatrix {
    let data = theta.as_slice().iter().map(|t| 1.0 - 2.0 * t).collect();
    DenseMatrix::from_vec(theta.rows(), theta.cols(), data).unwrap()
}

/// Infinity-norm distance to the nearest binary assignment. The binary set
/// is a product over rows, so the distance is the worst row's distance to
/// its nearest simplex vertex.
pub fn dist_inf_to_bin(theta: &DenseMatrix) -> f64 {
    (0..theta.rows())
        .map(|j| row_dist_to_vertices(theta.row(j)))
        .fold(0.0, f64::max)
}

fn row_dist_to_vertices(row: &[f64]) -> f64 {
    (0..row.len())
        .map(|k| {
            row.iter()
                .enumerate()
                .map(|(i, &v)| if i == k { (1.0 - v).abs() } else { v.abs() })
                .fold(0.0, f64::max)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Replaces every row by the vertex of its largest entry.
pub fn snap_to_bin(theta: &GroupAssignment) -> GroupAssignment {
    GroupAssignment::from_labels(&theta.labels(), theta.groups()).unwrap()
}
