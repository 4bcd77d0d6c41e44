use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::MpcError;
use crate::polyhedron::{BoxSet, Polyhedron};

/// Point-location slack: a state this far outside a region still belongs to it.
pub const LOCATE_TOL: f64 = 1e-8;

/// `u = F x + G`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineLaw {
    pub f: DMatrix<f64>,
    pub g: DVector<f64>,
}

impl AffineLaw {
    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.f * x + &self.g
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticalRegion {
    pub region: Polyhedron,
    pub law: AffineLaw,
    /// Constraint rows of the parametric LP that define this region's basis.
    pub active_set: Vec<usize>,
}

/// Piecewise-affine law over a union of polyhedral regions. Region `i` is
/// mode `i` of the closed loop (0-based).
#[derive(Debug, Clone, PartialEq)]
pub struct ExplicitSolution {
    state_dim: usize,
    input_dim: usize,
    regions: Vec<CriticalRegion>,
    boxes: Vec<BoxSet>,
}

impl ExplicitSolution {
    pub fn new(state_dim: usize, input_dim: usize, regions: Vec<CriticalRegion>) -> Result<Self, MpcError> {
        if regions.is_empty() {
            return Err(MpcError::BadSolution("no regions".into()));
        }
        let mut boxes = Vec::with_capacity(regions.len());
        for (i, r) in regions.iter().enumerate() {
            if r.region.dim() != state_dim
                || r.law.f.shape() != (input_dim, state_dim)
                || r.law.g.len() != input_dim
            {
                return Err(MpcError::BadSolution(format!("region {i} has inconsistent dimensions")));
            }
            if r.law.f.iter().chain(r.law.g.iter()).any(|v| !v.is_finite()) {
                return Err(MpcError::BadSolution(format!("region {i} has a non-finite law")));
            }
            let bx = r
                .region
                .bounding_box()
                .map_err(|e| MpcError::BadSolution(format!("region {i}: {e}")))?;
            boxes.push(bx.inflate(LOCATE_TOL));
        }
        Ok(Self { state_dim, input_dim, regions, boxes })
    }

    pub fn k(&self) -> usize {
        self.regions.len()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn regions(&self) -> &[CriticalRegion] {
        &self.regions
    }

    pub fn region(&self, i: usize) -> &CriticalRegion {
        &self.regions[i]
    }

    /// Bounding box of region `i`, padded by [`LOCATE_TOL`].
    pub fn region_box(&self, i: usize) -> &BoxSet {
        &self.boxes[i]
    }

    pub fn contains(&self, i: usize, x: &DVector<f64>) -> bool {
        self.boxes[i].contains(x, 0.0) && self.regions[i].region.max_violation(x) <= LOCATE_TOL
    }

    /// Lowest-index region containing `x`.
    pub fn locate(&self, x: &DVector<f64>) -> Option<usize> {
        if x.len() != self.state_dim {
            return None;
        }
        (0..self.k()).find(|&i| self.contains(i, x))
    }

    /// Control and region index, or `None` outside the feasible union.
    pub fn eval_control(&self, x: &DVector<f64>) -> Option<(DVector<f64>, usize)> {
        self.locate(x).map(|i| (self.regions[i].law.eval(x), i))
    }

    pub fn to_json(&self) -> SolutionJson {
        SolutionJson {
            k: self.k(),
            regions: self
                .regions
                .iter()
                .map(|r| RegionJson {
                    a: rows_of(r.region.a()),
                    b: r.region.b().iter().copied().collect(),
                    f: rows_of(&r.law.f),
                    g: r.law.g.iter().copied().collect(),
                    active_set: r.active_set.clone(),
                })
                .collect(),
        }
    }

    pub fn from_json(j: &SolutionJson) -> Result<Self, MpcError> {
        if j.k != j.regions.len() {
            return Err(MpcError::BadSolution(format!(
                "k = {} but {} regions listed",
                j.k,
                j.regions.len()
            )));
        }
        let first = j.regions.first().ok_or_else(|| MpcError::BadSolution("no regions".into()))?;
        let m = first.f.len();
        let n = first.f.first().map_or(0, |r| r.len());
        let regions = j
            .regions
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let bad = |what: &str| MpcError::BadSolution(format!("region {i}: {what}"));
                if r.f.len() != m || r.f.iter().any(|row| row.len() != n) || r.g.len() != m {
                    return Err(bad("law dimensions"));
                }
                if r.a.iter().any(|row| row.len() != n) {
                    return Err(bad("halfspace dimensions"));
                }
                let region = if r.a.is_empty() {
                    Polyhedron::universe(n)
                } else {
                    Polyhedron::from_rows(&r.a, &r.b).map_err(|e| bad(&e.to_string()))?
                };
                let flat: Vec<f64> = r.f.iter().flatten().copied().collect();
                Ok(CriticalRegion {
                    region,
                    law: AffineLaw {
                        f: DMatrix::from_row_slice(m, n, &flat),
                        g: DVector::from_row_slice(&r.g),
                    },
                    active_set: r.active_set.clone(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(n, m, regions)
    }
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// On-disk form: `{k, regions: [{A, b, F, G, active_set}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionJson {
    pub k: usize,
    pub regions: Vec<RegionJson>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionJson {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    #[serde(rename = "F")]
    pub f: Vec<Vec<f64>>,
    #[serde(rename = "G")]
    pub g: Vec<f64>,
    pub active_set: Vec<usize>,
}

impl Serialize for ExplicitSolution {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

impl<'de> Deserialize<'de> for ExplicitSolution {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let j = SolutionJson::deserialize(d)?;
        Self::from_json(&j).map_err(serde::de::Error::custom)
    }
}
