//! Halfspace-represented convex polyhedra `{x : A x ≤ b}`.
//!
//! Rows are normalized to unit Euclidean norm on construction so that every
//! tolerance below is a geometric distance. Operations that would be unbounded
//! on unbounded sets (Chebyshev ball, bounding box) are taken inside a world
//! box, `[-1e6, 1e6]ⁿ` unless another box is passed.

mod boxset;

pub use boxset::{BoxSet, WORLD_BOUND};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lp::{solve_lp, LinearProgram, LpError, LpStatus, SolverConfig};

/// Feasibility tolerance for emptiness tests.
pub const EMPTY_TOL: f64 = 1e-9;
/// A row is redundant when dropping it cannot move its lhs more than this past its rhs.
pub const REDUNDANCY_TOL: f64 = 1e-9;
/// Vertices closer than this are merged.
pub const VERTEX_TOL: f64 = 1e-7;
/// Vertex enumeration is refused above this dimension.
pub const VERTEX_DIM_LIMIT: usize = 4;

const ZERO_ROW: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolyError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("operation requires a nonempty polyhedron")]
    EmptyInput,
    #[error("polyhedron is empty")]
    EmptySet,
    #[error("vertex enumeration limited to dimension {limit}, got {dim}")]
    DimensionTooHigh { dim: usize, limit: usize },
    #[error("invalid dimension list: {0}")]
    BadDims(String),
    #[error("unbounded: {0}")]
    Unbounded(String),
    #[error(transparent)]
    Lp(#[from] LpError),
}

/// Largest inscribed ball. `radius < 0` means the set is empty.
#[derive(Debug, Clone, PartialEq)]
pub struct ChebyshevBall {
    pub center: DVector<f64>,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolyJson", into = "PolyJson")]
pub struct Polyhedron {
    dim: usize,
    a: DMatrix<f64>,
    b: DVector<f64>,
}

#[derive(Serialize, Deserialize)]
struct PolyJson {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
}

impl TryFrom<PolyJson> for Polyhedron {
    type Error = PolyError;
    fn try_from(j: PolyJson) -> Result<Self, PolyError> {
        Polyhedron::from_rows(&j.a, &j.b)
    }
}

impl From<Polyhedron> for PolyJson {
    fn from(p: Polyhedron) -> Self {
        PolyJson {
            a: (0..p.a.nrows())
                .map(|i| p.a.row(i).iter().copied().collect())
                .collect(),
            b: p.b.iter().copied().collect(),
        }
    }
}

impl Polyhedron {
    /// Normalizes rows; vacuous zero rows are dropped and an infeasible zero
    /// row collapses the set to the canonical empty polyhedron.
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self, PolyError> {
        if a.nrows() != b.len() {
            return Err(PolyError::DimensionMismatch(a.nrows(), b.len()));
        }
        let dim = a.ncols();
        let mut rows: Vec<(DVector<f64>, f64)> = Vec::with_capacity(a.nrows());
        for i in 0..a.nrows() {
            let row = a.row(i).transpose();
            let norm = row.norm();
            if !norm.is_finite() || !b[i].is_finite() {
                return Err(PolyError::InvalidBox(format!("non-finite row {i}")));
            }
            if norm <= ZERO_ROW {
                if b[i] < -ZERO_ROW {
                    return Ok(Self::empty(dim));
                }
                continue;
            }
            rows.push((row / norm, b[i] / norm));
        }
        Ok(Self::from_normalized(dim, rows))
    }

    pub fn from_rows(a: &[Vec<f64>], b: &[f64]) -> Result<Self, PolyError> {
        let dim = a.first().map_or(0, |r| r.len());
        if let Some(r) = a.iter().find(|r| r.len() != dim) {
            return Err(PolyError::DimensionMismatch(r.len(), dim));
        }
        let flat: Vec<f64> = a.iter().flatten().copied().collect();
        Self::new(DMatrix::from_row_slice(a.len(), dim, &flat), DVector::from_row_slice(b))
    }

    fn from_normalized(dim: usize, rows: Vec<(DVector<f64>, f64)>) -> Self {
        let a = DMatrix::from_fn(rows.len(), dim, |i, j| rows[i].0[j]);
        let b = DVector::from_fn(rows.len(), |i, _| rows[i].1);
        Self { dim, a, b }
    }

    /// All of ℝⁿ.
    pub fn universe(dim: usize) -> Self {
        Self {
            dim,
            a: DMatrix::zeros(0, dim),
            b: DVector::zeros(0),
        }
    }

    /// Canonical empty set: the single row `0·x ≤ -1`.
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            a: DMatrix::zeros(1, dim),
            b: DVector::from_element(1, -1.0),
        }
    }

    pub fn from_box(bx: &BoxSet) -> Self {
        let n = bx.dim();
        let mut a = DMatrix::zeros(2 * n, n);
        let mut b = DVector::zeros(2 * n);
        for i in 0..n {
            a[(2 * i, i)] = 1.0;
            b[2 * i] = bx.hi()[i];
            a[(2 * i + 1, i)] = -1.0;
            b[2 * i + 1] = -bx.lo()[i];
        }
        Self { dim: n, a, b }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    fn is_trivially_empty(&self) -> bool {
        (0..self.num_rows()).any(|i| self.b[i] < 0.0 && self.a.row(i).norm() <= ZERO_ROW)
    }

    fn check_dim(&self, n: usize) -> Result<(), PolyError> {
        if n != self.dim {
            return Err(PolyError::DimensionMismatch(self.dim, n));
        }
        Ok(())
    }

    /// Decided by a phase-one LP with tolerance [`EMPTY_TOL`].
    pub fn is_empty(&self) -> bool {
        if self.is_trivially_empty() {
            return true;
        }
        if self.num_rows() == 0 {
            return false;
        }
        feasible_point(&self.a, &self.b).is_none()
    }

    /// `A x ≤ b + tol·1`.
    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> Result<bool, PolyError> {
        self.check_dim(x.len())?;
        Ok(self.contains_unchecked(x, tol))
    }

    pub(crate) fn contains_unchecked(&self, x: &DVector<f64>, tol: f64) -> bool {
        (0..self.num_rows()).all(|i| self.a.row(i).transpose().dot(x) <= self.b[i] + tol)
    }

    /// Most violated row value `max_i (a_i·x − b_i)`; ≤ 0 inside.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        (0..self.num_rows())
            .map(|i| self.a.row(i).transpose().dot(x) - self.b[i])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Exact box containment via each row's support over the box.
    pub fn contains_box(&self, bx: &BoxSet, tol: f64) -> bool {
        (0..self.num_rows()).all(|i| {
            let support: f64 = (0..self.dim)
                .map(|j| {
                    let a = self.a[(i, j)];
                    (a * bx.lo()[j]).max(a * bx.hi()[j])
                })
                .sum();
            support <= self.b[i] + tol
        })
    }

    /// Whether `self ∩ bx` is nonempty (closed sets: touching counts).
    pub fn intersects_box(&self, bx: &BoxSet) -> bool {
        if self.is_trivially_empty() {
            return false;
        }
        // cheap rejection by a single separating row
        for i in 0..self.num_rows() {
            let lowest: f64 = (0..self.dim)
                .map(|j| {
                    let a = self.a[(i, j)];
                    (a * bx.lo()[j]).min(a * bx.hi()[j])
                })
                .sum();
            if lowest > self.b[i] + EMPTY_TOL {
                return false;
            }
        }
        !self.intersect_box_rows(bx).is_empty()
    }

    fn intersect_box_rows(&self, bx: &BoxSet) -> Polyhedron {
        let boxed = Polyhedron::from_box(bx);
        self.concat(&boxed)
    }

    fn concat(&self, other: &Polyhedron) -> Polyhedron {
        let rows = self.num_rows() + other.num_rows();
        let mut a = DMatrix::zeros(rows, self.dim);
        a.rows_mut(0, self.num_rows()).copy_from(&self.a);
        a.rows_mut(self.num_rows(), other.num_rows()).copy_from(&other.a);
        let mut b = DVector::zeros(rows);
        b.rows_mut(0, self.num_rows()).copy_from(&self.b);
        b.rows_mut(self.num_rows(), other.num_rows()).copy_from(&other.b);
        Polyhedron { dim: self.dim, a, b }
    }

    /// `P ∩ Q`, irredundant. Returns [`Polyhedron::empty`] when disjoint.
    pub fn intersect(&self, other: &Polyhedron) -> Result<Polyhedron, PolyError> {
        self.check_dim(other.dim)?;
        let joined = self.concat(other);
        if joined.is_empty() {
            return Ok(Polyhedron::empty(self.dim));
        }
        joined.remove_redundant()
    }

    /// Intersection without redundancy removal.
    pub fn intersect_raw(&self, other: &Polyhedron) -> Result<Polyhedron, PolyError> {
        self.check_dim(other.dim)?;
        Ok(self.concat(other))
    }

    /// Drops every row whose removal does not change the set.
    pub fn remove_redundant(&self) -> Result<Polyhedron, PolyError> {
        if self.is_empty() {
            return Err(PolyError::EmptyInput);
        }
        let m = self.num_rows();
        let mut keep = vec![true; m];
        // exact duplicates first; they would otherwise cost one LP each
        for i in 0..m {
            for j in 0..i {
                if keep[j]
                    && (self.b[i] - self.b[j]).abs() <= REDUNDANCY_TOL
                    && (self.a.row(i) - self.a.row(j)).amax() <= 1e-12
                {
                    keep[i] = false;
                    break;
                }
            }
        }
        let cfg = SolverConfig::default();
        for i in 0..m {
            if !keep[i] {
                continue;
            }
            let others: Vec<usize> = (0..m).filter(|&j| j != i && keep[j]).collect();
            let mut a = DMatrix::zeros(others.len() + 1, self.dim);
            let mut b = DVector::zeros(others.len() + 1);
            for (r, &j) in others.iter().enumerate() {
                a.set_row(r, &self.a.row(j));
                b[r] = self.b[j];
            }
            a.set_row(others.len(), &self.a.row(i));
            b[others.len()] = self.b[i] + 1.0;
            let c = -self.a.row(i).transpose();
            let sol = solve_lp(&LinearProgram::new(c, a, b), &cfg)?;
            if sol.status == LpStatus::Optimal && -sol.objective <= self.b[i] + REDUNDANCY_TOL {
                keep[i] = false;
            }
        }
        let rows = (0..m)
            .filter(|&i| keep[i])
            .map(|i| (self.a.row(i).transpose(), self.b[i]))
            .collect();
        Ok(Polyhedron::from_normalized(self.dim, rows))
    }

    pub fn chebyshev_center(&self) -> Result<ChebyshevBall, PolyError> {
        self.chebyshev_center_within(&BoxSet::world(self.dim))
    }

    /// One LP: `max r  s.t.  a_i·x + r‖a_i‖ ≤ b_i`, over the set clipped to `world`.
    /// `r` is left free so an empty set yields a negative radius.
    pub fn chebyshev_center_within(&self, world: &BoxSet) -> Result<ChebyshevBall, PolyError> {
        self.check_dim(world.dim())?;
        let n = self.dim;
        if self.is_trivially_empty() {
            return Ok(ChebyshevBall {
                center: DVector::zeros(n),
                radius: -1.0,
            });
        }
        let clipped = self.concat(&Polyhedron::from_box(world));
        let m = clipped.num_rows();
        let mut a = DMatrix::zeros(m + 1, n + 1);
        let mut b = DVector::zeros(m + 1);
        for i in 0..m {
            for j in 0..n {
                a[(i, j)] = clipped.a[(i, j)];
            }
            a[(i, n)] = clipped.a.row(i).norm();
            b[i] = clipped.b[i];
        }
        // radius cannot exceed the world box half-width; keeps the LP bounded
        a[(m, n)] = 1.0;
        b[m] = world.max_width();
        let mut c = DVector::zeros(n + 1);
        c[n] = -1.0;
        let sol = solve_lp(&LinearProgram::new(c, a, b), &SolverConfig::default())?;
        match sol.status {
            LpStatus::Optimal => Ok(ChebyshevBall {
                center: sol.x.rows(0, n).into_owned(),
                radius: sol.x[n],
            }),
            _ => Err(PolyError::Unbounded("Chebyshev LP did not close".into())),
        }
    }

    /// Largest ball inside facet `row` (within the facet's hyperplane), if the
    /// facet is at least `(n−1)`-dimensional.
    pub fn facet_center(&self, row: usize) -> Result<Option<ChebyshevBall>, PolyError> {
        let n = self.dim;
        let normal = self.a.row(row).transpose();
        let world = Polyhedron::from_box(&BoxSet::world(n));
        let clipped = self.concat(&world);
        let mut a_in = Vec::new();
        let mut b_in = Vec::new();
        for i in 0..clipped.num_rows() {
            if i == row {
                continue;
            }
            let ai = clipped.a.row(i).transpose();
            let tangential = &ai - &normal * ai.dot(&normal);
            let mut r = ai.iter().copied().collect::<Vec<_>>();
            r.push(tangential.norm());
            a_in.push(r);
            b_in.push(clipped.b[i]);
        }
        let mut cap = vec![0.0; n + 1];
        cap[n] = 1.0;
        a_in.push(cap);
        b_in.push(WORLD_BOUND);
        let flat: Vec<f64> = a_in.iter().flatten().copied().collect();
        let a = DMatrix::from_row_slice(a_in.len(), n + 1, &flat);
        let mut a_eq = DMatrix::zeros(1, n + 1);
        for j in 0..n {
            a_eq[(0, j)] = normal[j];
        }
        let mut c = DVector::zeros(n + 1);
        c[n] = -1.0;
        let lp = LinearProgram::new(c, a, DVector::from_vec(b_in))
            .with_equalities(a_eq, DVector::from_element(1, self.b[row]));
        let sol = solve_lp(&lp, &SolverConfig::default())?;
        Ok(match sol.status {
            LpStatus::Optimal => Some(ChebyshevBall {
                center: sol.x.rows(0, n).into_owned(),
                radius: sol.x[n],
            }),
            _ => None,
        })
    }

    /// `max dir·x` over the set; `None` if empty, `Err(Unbounded)` if unbounded.
    pub fn support(&self, dir: &DVector<f64>) -> Result<Option<(f64, DVector<f64>)>, PolyError> {
        self.check_dim(dir.len())?;
        let lp = LinearProgram::new(-dir.clone(), self.a.clone(), self.b.clone());
        let sol = solve_lp(&lp, &SolverConfig::default())?;
        match sol.status {
            LpStatus::Optimal => Ok(Some((-sol.objective, sol.x))),
            LpStatus::Infeasible => Ok(None),
            LpStatus::Unbounded => Err(PolyError::Unbounded("support function".into())),
        }
    }

    pub fn bounding_box(&self) -> Result<BoxSet, PolyError> {
        self.bounding_box_within(&BoxSet::world(self.dim))
    }

    /// Per-dimension extent via `2n` LPs, inside `world`.
    pub fn bounding_box_within(&self, world: &BoxSet) -> Result<BoxSet, PolyError> {
        self.check_dim(world.dim())?;
        if self.is_trivially_empty() {
            return Err(PolyError::EmptySet);
        }
        let n = self.dim;
        let cfg = SolverConfig::default();
        let mut lo = DVector::zeros(n);
        let mut hi = DVector::zeros(n);
        for j in 0..n {
            for sense in [1.0, -1.0] {
                let mut c = DVector::zeros(n);
                c[j] = sense;
                let lp = LinearProgram::new(c, self.a.clone(), self.b.clone())
                    .with_bounds(world.lo().clone(), world.hi().clone());
                let sol = solve_lp(&lp, &cfg)?;
                if sol.status != LpStatus::Optimal {
                    return Err(PolyError::EmptySet);
                }
                if sense > 0.0 {
                    lo[j] = sol.x[j];
                } else {
                    hi[j] = sol.x[j];
                }
            }
        }
        // LP round-off can cross over on degenerate extents
        for j in 0..n {
            if lo[j] > hi[j] {
                let m = 0.5 * (lo[j] + hi[j]);
                lo[j] = m;
                hi[j] = m;
            }
        }
        BoxSet::new(lo, hi)
    }

    /// Orthogonal projection onto `keep` (in that order) by Fourier–Motzkin
    /// elimination, pruning redundant rows after every eliminated dimension.
    pub fn project(&self, keep: &[usize]) -> Result<Polyhedron, PolyError> {
        let n = self.dim;
        let mut seen = vec![false; n];
        for &d in keep {
            if d >= n {
                return Err(PolyError::BadDims(format!("index {d} out of range for dimension {n}")));
            }
            if seen[d] {
                return Err(PolyError::BadDims(format!("index {d} repeated")));
            }
            seen[d] = true;
        }
        if self.is_empty() {
            return Ok(Polyhedron::empty(keep.len()));
        }
        // columns still present, in current column order
        let mut cols: Vec<usize> = (0..n).collect();
        let mut current = self.remove_redundant()?;
        for d in (0..n).rev() {
            if seen[d] {
                continue;
            }
            let k = cols.iter().position(|&c| c == d).unwrap();
            current = fm_eliminate(&current, k);
            cols.remove(k);
            if current.num_rows() > 0 {
                current = current.remove_redundant()?;
            }
        }
        let order: Vec<usize> = keep
            .iter()
            .map(|d| cols.iter().position(|c| c == d).unwrap())
            .collect();
        let a = DMatrix::from_fn(current.num_rows(), keep.len(), |i, j| current.a[(i, order[j])]);
        Polyhedron::new(a, current.b.clone())
    }

    pub fn vertices(&self) -> Result<Vec<DVector<f64>>, PolyError> {
        self.vertices_with_limit(VERTEX_DIM_LIMIT)
    }

    /// Every basic feasible point: all `n`-subsets of rows whose solution is
    /// feasible, deduplicated within [`VERTEX_TOL`].
    pub fn vertices_with_limit(&self, limit: usize) -> Result<Vec<DVector<f64>>, PolyError> {
        let n = self.dim;
        if n > limit {
            return Err(PolyError::DimensionTooHigh { dim: n, limit });
        }
        let m = self.num_rows();
        let mut out: Vec<DVector<f64>> = Vec::new();
        if n == 0 || m < n || self.is_trivially_empty() {
            return Ok(out);
        }
        for_each_combination(m, n, |idx| {
            let a = DMatrix::from_fn(n, n, |r, c| self.a[(idx[r], c)]);
            if a.determinant().abs() < 1e-12 {
                return;
            }
            let b = DVector::from_fn(n, |r, _| self.b[idx[r]]);
            if let Some(x) = a.lu().solve(&b) {
                if self.contains_unchecked(&x, 1e-9)
                    && !out.iter().any(|v| (v - &x).amax() <= VERTEX_TOL)
                {
                    out.push(x);
                }
            }
        });
        Ok(out)
    }
}

/// A point of `{A x ≤ b}` within [`EMPTY_TOL`], if any.
pub(crate) fn feasible_point(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let lp = LinearProgram::new(DVector::zeros(a.ncols()), a.clone(), b.clone());
    let cfg = SolverConfig {
        feas_tol: EMPTY_TOL,
        ..SolverConfig::default()
    };
    match solve_lp(&lp, &cfg) {
        Ok(sol) if sol.status == LpStatus::Optimal => Some(sol.x),
        _ => None,
    }
}

fn fm_eliminate(p: &Polyhedron, k: usize) -> Polyhedron {
    let n = p.dim;
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    let mut rows: Vec<(DVector<f64>, f64)> = Vec::new();
    let drop_k = |v: &DVector<f64>| DVector::from_iterator(n - 1, (0..n).filter(|&j| j != k).map(|j| v[j]));
    for i in 0..p.num_rows() {
        let coef = p.a[(i, k)];
        if coef > ZERO_ROW {
            pos.push(i);
        } else if coef < -ZERO_ROW {
            neg.push(i);
        } else {
            rows.push((drop_k(&p.a.row(i).transpose()), p.b[i]));
        }
    }
    for &i in &pos {
        for &j in &neg {
            let (ci, cj) = (p.a[(i, k)], -p.a[(j, k)]);
            let combo = p.a.row(i).transpose() * cj + p.a.row(j).transpose() * ci;
            let rhs = p.b[i] * cj + p.b[j] * ci;
            rows.push((drop_k(&combo), rhs));
        }
    }
    let a = DMatrix::from_fn(rows.len(), n - 1, |i, j| rows[i].0[j]);
    let b = DVector::from_fn(rows.len(), |i, _| rows[i].1);
    Polyhedron::new(a, b).expect("finite rows")
}

/// Calls `f` with every ascending `k`-subset of `0..m`.
pub(crate) fn for_each_combination(m: usize, k: usize, mut f: impl FnMut(&[usize])) {
    if k > m {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        let mut i = k;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if idx[i] != i + m - k {
                break;
            }
            if i == 0 {
                return;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}
