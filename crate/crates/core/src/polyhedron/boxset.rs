use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::PolyError;

/// Default half-width of the world box that bounds otherwise unbounded queries.
pub const WORLD_BOUND: f64 = 1e6;

/// Axis-aligned box `{x : lo ≤ x ≤ hi}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BoxJson", into = "BoxJson")]
pub struct BoxSet {
    lo: DVector<f64>,
    hi: DVector<f64>,
}

#[derive(Serialize, Deserialize)]
struct BoxJson {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl TryFrom<BoxJson> for BoxSet {
    type Error = PolyError;
    fn try_from(j: BoxJson) -> Result<Self, PolyError> {
        BoxSet::new(DVector::from_vec(j.lo), DVector::from_vec(j.hi))
    }
}

impl From<BoxSet> for BoxJson {
    fn from(b: BoxSet) -> Self {
        BoxJson {
            lo: b.lo.iter().copied().collect(),
            hi: b.hi.iter().copied().collect(),
        }
    }
}

impl BoxSet {
    pub fn new(lo: DVector<f64>, hi: DVector<f64>) -> Result<Self, PolyError> {
        if lo.len() != hi.len() {
            return Err(PolyError::DimensionMismatch(lo.len(), hi.len()));
        }
        if lo.iter().chain(hi.iter()).any(|v| v.is_nan()) {
            return Err(PolyError::InvalidBox("NaN bound".into()));
        }
        if let Some(i) = (0..lo.len()).find(|&i| lo[i] > hi[i]) {
            return Err(PolyError::InvalidBox(format!(
                "lo[{i}] = {} exceeds hi[{i}] = {}",
                lo[i], hi[i]
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn from_slices(lo: &[f64], hi: &[f64]) -> Result<Self, PolyError> {
        Self::new(DVector::from_row_slice(lo), DVector::from_row_slice(hi))
    }

    /// Degenerate box at a single point.
    pub fn point(x: &DVector<f64>) -> Self {
        Self {
            lo: x.clone(),
            hi: x.clone(),
        }
    }

    /// `[-bound, bound]ⁿ`.
    pub fn cube(n: usize, bound: f64) -> Self {
        Self {
            lo: DVector::from_element(n, -bound),
            hi: DVector::from_element(n, bound),
        }
    }

    pub fn world(n: usize) -> Self {
        Self::cube(n, WORLD_BOUND)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &DVector<f64> {
        &self.lo
    }

    pub fn hi(&self) -> &DVector<f64> {
        &self.hi
    }

    pub fn center(&self) -> DVector<f64> {
        (&self.lo + &self.hi) * 0.5
    }

    pub fn widths(&self) -> DVector<f64> {
        &self.hi - &self.lo
    }

    pub fn max_width(&self) -> f64 {
        self.widths().max()
    }

    /// Half the Euclidean diagonal: radius of the smallest ball around the center.
    pub fn half_diagonal(&self) -> f64 {
        self.widths().norm() * 0.5
    }

    pub fn widest_dim(&self) -> usize {
        self.widths().argmax().0
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        x.len() == self.dim()
            && (0..self.dim()).all(|i| x[i] >= self.lo[i] - tol && x[i] <= self.hi[i] + tol)
    }

    pub fn contains_box(&self, other: &BoxSet, tol: f64) -> bool {
        (0..self.dim()).all(|i| other.lo[i] >= self.lo[i] - tol && other.hi[i] <= self.hi[i] + tol)
    }

    /// Closed boxes: touching counts as intersecting.
    pub fn intersects(&self, other: &BoxSet) -> bool {
        (0..self.dim()).all(|i| self.lo[i] <= other.hi[i] && other.lo[i] <= self.hi[i])
    }

    pub fn intersection(&self, other: &BoxSet) -> Option<BoxSet> {
        if !self.intersects(other) {
            return None;
        }
        Some(Self {
            lo: self.lo.zip_map(&other.lo, f64::max),
            hi: self.hi.zip_map(&other.hi, f64::min),
        })
    }

    pub fn hull(&self, other: &BoxSet) -> BoxSet {
        Self {
            lo: self.lo.zip_map(&other.lo, f64::min),
            hi: self.hi.zip_map(&other.hi, f64::max),
        }
    }

    pub fn hull_point(&self, x: &DVector<f64>) -> BoxSet {
        self.hull(&BoxSet::point(x))
    }

    /// Grow every side by `r ≥ 0`.
    pub fn inflate(&self, r: f64) -> BoxSet {
        Self {
            lo: self.lo.add_scalar(-r),
            hi: self.hi.add_scalar(r),
        }
    }

    pub fn inflate_by(&self, r: &DVector<f64>) -> BoxSet {
        Self {
            lo: &self.lo - r,
            hi: &self.hi + r,
        }
    }

    /// Split at the midpoint of dimension `d`.
    pub fn bisect(&self, d: usize) -> (BoxSet, BoxSet) {
        let mid = 0.5 * (self.lo[d] + self.hi[d]);
        let mut left = self.clone();
        let mut right = self.clone();
        left.hi[d] = mid;
        right.lo[d] = mid;
        (left, right)
    }

    /// Keep the listed coordinates, in the given order.
    pub fn project(&self, dims: &[usize]) -> BoxSet {
        Self {
            lo: DVector::from_iterator(dims.len(), dims.iter().map(|&d| self.lo[d])),
            hi: DVector::from_iterator(dims.len(), dims.iter().map(|&d| self.hi[d])),
        }
    }

    /// All `2ⁿ` corners, in binary counting order over the dimensions.
    pub fn corners(&self) -> Vec<DVector<f64>> {
        let n = self.dim();
        (0..1usize << n)
            .map(|mask| {
                DVector::from_fn(n, |i, _| {
                    if mask >> i & 1 == 1 {
                        self.hi[i]
                    } else {
                        self.lo[i]
                    }
                })
            })
            .collect()
    }

    /// Corners, face centers and center; `subdivisions > 1` adds a regular
    /// interior lattice with that many cells per side.
    pub fn sample_grid(&self, subdivisions: usize) -> Vec<DVector<f64>> {
        let n = self.dim();
        let c = self.center();
        let mut pts = self.corners();
        for i in 0..n {
            for v in [self.lo[i], self.hi[i]] {
                let mut p = c.clone();
                p[i] = v;
                pts.push(p);
            }
        }
        pts.push(c);
        if subdivisions > 1 {
            let k = subdivisions + 1;
            let total = k.pow(n as u32);
            for idx in 0..total {
                let mut rem = idx;
                let p = DVector::from_fn(n, |i, _| {
                    let step = rem % k;
                    rem /= k;
                    self.lo[i] + (self.hi[i] - self.lo[i]) * step as f64 / subdivisions as f64
                });
                pts.push(p);
            }
        }
        pts
    }
}
