//! Communication topology and the matrix quantities derived from it.
//!
//! A [`Graph`] holds a symmetric, zero-diagonal weight matrix `A` whose row
//! sums `d_i` stay strictly below one and whose positive-weight support is
//! connected. From it we derive the self-weights `alpha_i = 1 - d_i`, the
//! consensus matrix `W = I - D + A`, the primitivity horizon `L`, and the
//! block matrices `M(Gamma)` that drive the augmented state `(x, x_tilde)`.

use std::collections::VecDeque;
use std::fmt;

use nalgebra::DMatrix;
use thiserror::Error;

/// Absolute tolerance for symmetry and row-stochasticity checks.
pub const TOLERANCE: f64 = 1e-12;

/// Row sums of a matrix passed to [`tau_ergodicity`] must be within this of 1.
pub const STOCHASTIC_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("weight matrix is empty")]
    Empty,
    #[error("weight matrix is not square: row {row} has {len} entries, expected {expected}")]
    NotSquare { row: usize, len: usize, expected: usize },
    #[error("non-finite weight at ({i}, {j})")]
    NonFinite { i: usize, j: usize },
    #[error("asymmetric weights: a[{i}][{j}] = {a_ij} but a[{j}][{i}] = {a_ji}")]
    Asymmetric { i: usize, j: usize, a_ij: f64, a_ji: f64 },
    #[error("self-loop at node {i}: a[{i}][{i}] = {weight}")]
    SelfLoop { i: usize, weight: f64 },
    #[error("negative weight {weight} at ({i}, {j})")]
    NegativeWeight { i: usize, j: usize, weight: f64 },
    #[error("row sum >= 1 at node {i}: d = {sum}")]
    RowSumTooLarge { i: usize, sum: f64 },
    #[error("graph is disconnected: node {unreachable} is not reachable from node 0")]
    Disconnected { unreachable: usize },
    #[error("W is not primitive within {cap} matrix powers")]
    NotPrimitive { cap: usize },
    #[error("matrix is not row-stochastic: row {row} sums to {sum}")]
    NotStochastic { row: usize, sum: f64 },
    #[error("matrix has a negative entry at ({i}, {j})")]
    NegativeEntry { i: usize, j: usize },
}

/// A validated, undirected, weighted communication graph.
#[derive(Clone, PartialEq)]
pub struct Graph {
    weights: DMatrix<f64>,
    degrees: Vec<f64>,
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph")
            .field("n", &self.n())
            .field("degrees", &self.degrees)
            .finish()
    }
}

impl Graph {
    /// Validates `rows` and returns the graph, or the first violation found.
    ///
    /// Use [`Graph::violations`] to collect every problem at once.
    pub fn new(rows: &[Vec<f64>]) -> Result<Self, GraphError> {
        match Self::violations(rows).into_iter().next() {
            Some(err) => Err(err),
            None => Ok(Self::from_rows_unchecked(rows)),
        }
    }

    /// Every admissibility violation in `rows`, in a stable order.
    ///
    /// Shape problems (empty, ragged, non-finite) short-circuit the remaining
    /// checks since those cannot be evaluated meaningfully.
    pub fn violations(rows: &[Vec<f64>]) -> Vec<GraphError> {
        let n = rows.len();
        if n == 0 {
            return vec![GraphError::Empty];
        }
        let mut out = Vec::new();
        for (row, r) in rows.iter().enumerate() {
            if r.len() != n {
                out.push(GraphError::NotSquare { row, len: r.len(), expected: n });
            }
        }
        if !out.is_empty() {
            return out;
        }
        for (i, r) in rows.iter().enumerate() {
            for (j, &w) in r.iter().enumerate() {
                if !w.is_finite() {
                    out.push(GraphError::NonFinite { i, j });
                }
            }
        }
        if !out.is_empty() {
            return out;
        }

        for i in 0..n {
            for j in (i + 1)..n {
                let (a_ij, a_ji) = (rows[i][j], rows[j][i]);
                if (a_ij - a_ji).abs() > TOLERANCE {
                    out.push(GraphError::Asymmetric { i, j, a_ij, a_ji });
                }
            }
        }
        for (i, r) in rows.iter().enumerate() {
            if r[i] != 0.0 {
                out.push(GraphError::SelfLoop { i, weight: r[i] });
            }
        }
        for (i, r) in rows.iter().enumerate() {
            for (j, &w) in r.iter().enumerate() {
                if w < 0.0 {
                    out.push(GraphError::NegativeWeight { i, j, weight: w });
                }
            }
        }
        for (i, r) in rows.iter().enumerate() {
            let sum: f64 = r.iter().sum();
            if sum >= 1.0 {
                out.push(GraphError::RowSumTooLarge { i, sum });
            }
        }
        if let Some(unreachable) = first_unreachable(rows) {
            out.push(GraphError::Disconnected { unreachable });
        }
        out
    }

    fn from_rows_unchecked(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let weights = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        let degrees = rows.iter().map(|r| r.iter().sum()).collect();
        Self { weights, degrees }
    }

    pub fn n(&self) -> usize {
        self.degrees.len()
    }

    /// Link weight `a_ij`.
    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[(i, j)]
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    /// Weighted degrees `d_i = sum_j a_ij`.
    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    /// Weight rows as nested vectors, the inverse of [`Graph::new`].
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n())
            .map(|i| (0..self.n()).map(|j| self.weight(i, j)).collect())
            .collect()
    }

    /// Self-weights `alpha_i = 1 - d_i`.
    pub fn alpha(&self) -> Vec<f64> {
        self.degrees.iter().map(|d| 1.0 - d).collect()
    }

    /// The consensus matrix `W = I - D + A`.
    pub fn consensus_matrix(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut w = self.weights.clone();
        for i in 0..n {
            w[(i, i)] = 1.0 - self.degrees[i];
        }
        w
    }

    pub fn derive_quantities(&self) -> Result<DerivedGraphQuantities, GraphError> {
        derive_quantities(self)
    }
}

fn first_unreachable(rows: &[Vec<f64>]) -> Option<usize> {
    let n = rows.len();
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(u) = queue.pop_front() {
        for (v, &w) in rows[u].iter().enumerate() {
            if w > 0.0 && !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    seen.iter().position(|s| !s)
}

/// Spectral and combinatorial quantities used by calibration and the
/// contraction analysis.
#[derive(Debug, Clone)]
pub struct DerivedGraphQuantities {
    pub alpha: Vec<f64>,
    pub w: DMatrix<f64>,
    /// Smallest `L >= 1` such that `W^(L-1)` is entrywise positive.
    pub primitivity_horizon: usize,
    /// Minimum entry of `W^(L-1) (I - D)`.
    pub epsilon_floor: f64,
}

pub fn derive_quantities(g: &Graph) -> Result<DerivedGraphQuantities, GraphError> {
    let n = g.n();
    let w = g.consensus_matrix();
    let cap = n * n;

    let mut power = DMatrix::<f64>::identity(n, n);
    let mut exponent = 0;
    while !power.iter().all(|&v| v > 0.0) {
        if exponent >= cap {
            return Err(GraphError::NotPrimitive { cap });
        }
        power = &power * &w;
        exponent += 1;
    }

    let alpha = g.alpha();
    let mut scaled = power;
    for j in 0..n {
        for i in 0..n {
            scaled[(i, j)] *= alpha[j];
        }
    }
    let epsilon_floor = scaled.iter().copied().fold(f64::INFINITY, f64::min);

    Ok(DerivedGraphQuantities {
        alpha,
        w,
        primitivity_horizon: exponent + 1,
        epsilon_floor,
    })
}

/// Closed-loop matrix of the augmented state `(x, x_tilde)` for a scheduling
/// pattern `gamma`:
///
/// ```text
/// M(Gamma) = [ I - D            A                  ]
///            [ Gamma (I - D)    Gamma A + (I - Gamma) ]
/// ```
pub fn build_m(g: &Graph, gamma: &[bool]) -> DMatrix<f64> {
    let n = g.n();
    assert_eq!(gamma.len(), n, "gamma length must match the graph");
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        let self_weight = 1.0 - g.degrees[i];
        m[(i, i)] = self_weight;
        for j in 0..n {
            m[(i, n + j)] = g.weight(i, j);
        }
        if gamma[i] {
            m[(n + i, i)] = self_weight;
            for j in 0..n {
                m[(n + i, n + j)] = g.weight(i, j);
            }
        } else {
            m[(n + i, n + i)] = 1.0;
        }
    }
    m
}

/// Coefficient of ergodicity `tau(M) = 1 - min_{r,s} sum_j min(M_rj, M_sj)`.
pub fn tau_ergodicity(m: &DMatrix<f64>) -> Result<f64, GraphError> {
    let (rows, cols) = m.shape();
    for r in 0..rows {
        for c in 0..cols {
            if m[(r, c)] < 0.0 {
                return Err(GraphError::NegativeEntry { i: r, j: c });
            }
        }
        let sum: f64 = m.row(r).iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOLERANCE {
            return Err(GraphError::NotStochastic { row: r, sum });
        }
    }

    let mut min_overlap = f64::INFINITY;
    for r in 0..rows {
        for s in (r + 1)..rows {
            let overlap: f64 = (0..cols).map(|j| m[(r, j)].min(m[(s, j)])).sum();
            min_overlap = min_overlap.min(overlap);
        }
    }
    if !min_overlap.is_finite() {
        // a single row always overlaps itself completely
        return Ok(0.0);
    }
    Ok((1.0 - min_overlap).clamp(0.0, 1.0))
}
