//! Geometric exploration of the parameter space of a parametric LP.
//!
//! Each critical region is described by an optimal basis `B` (a set of
//! `dim z` linearly independent constraint rows, dual feasible for the fixed
//! cost). Its vertex `z_B(x) = G_B⁻¹ (w_B + S_B x)` is affine in `x`, and the
//! region is the set of parameters where that vertex satisfies every other row.

use std::collections::{HashSet, VecDeque};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AffineLaw, CriticalRegion, ExplicitSolution, MpcError, ParametricLp};
use crate::lp::{solve_lp, LinearProgram, LpStatus, SolverConfig, INFINITY_BOUND};
use crate::polyhedron::{BoxSet, Polyhedron};

#[derive(Debug, Clone, PartialEq)]
pub struct MplpConfig {
    /// Distance stepped across a facet to seed the neighbouring region.
    pub step_eps: f64,
    /// Regions whose Chebyshev radius is at most this are dropped.
    pub region_tol: f64,
    pub max_regions: usize,
    /// Random domain points checked for coverage after the facet walk.
    pub coverage_samples: usize,
    pub seed: u64,
    pub lp: SolverConfig,
}

impl Default for MplpConfig {
    fn default() -> Self {
        Self {
            step_eps: 1e-6,
            region_tol: 1e-7,
            max_regions: 20_000,
            coverage_samples: 4000,
            seed: 1,
            lp: SolverConfig::default(),
        }
    }
}

/// Relative size below which a derived region row is treated as zero.
const ROW_ZERO: f64 = 1e-9;
/// Slack used when testing whether a seed is already covered.
const COVER_TOL: f64 = 1e-9;

struct Explorer<'a> {
    plp: &'a ParametricLp,
    domain: &'a BoxSet,
    domain_poly: Polyhedron,
    cfg: &'a MplpConfig,
    regions: Vec<CriticalRegion>,
    boxes: Vec<BoxSet>,
    bases: HashSet<Vec<usize>>,
    queue: VecDeque<DVector<f64>>,
}

impl Explorer<'_> {
    fn covered(&self, x: &DVector<f64>) -> bool {
        self.regions
            .iter()
            .zip(&self.boxes)
            .any(|(r, b)| b.contains(x, COVER_TOL) && r.region.max_violation(x) <= COVER_TOL)
    }

    /// Solves the LP at `x`; `None` when infeasible.
    fn solve_at(&self, x: &DVector<f64>) -> Result<Option<Vec<usize>>, MpcError> {
        let sol = solve_lp(&self.plp.at(x), &self.cfg.lp)?;
        Ok(match sol.status {
            LpStatus::Optimal => Some(sol.active_set),
            _ => None,
        })
    }

    /// An optimal basis inside `active`: a vertex of the dual polyhedron
    /// `{λ ≥ 0 : G_Aᵀλ = −c}` gives independent rows with the right signs, then
    /// further active rows are added until the basis is square.
    fn find_basis(&self, active: &[usize]) -> Result<Option<Vec<usize>>, MpcError> {
        let p = self.plp.num_vars();
        let g = &self.plp.g;
        if active.len() < p {
            return Ok(None);
        }
        let ga_t = DMatrix::from_fn(p, active.len(), |j, i| g[(active[i], j)]);
        let lp = LinearProgram::new(
            DVector::zeros(active.len()),
            DMatrix::zeros(0, active.len()),
            DVector::zeros(0),
        )
        .with_equalities(ga_t, -&self.plp.c)
        .with_bounds(
            DVector::zeros(active.len()),
            DVector::from_element(active.len(), INFINITY_BOUND),
        );
        let sol = solve_lp(&lp, &self.cfg.lp)?;
        if sol.status != LpStatus::Optimal {
            return Ok(None);
        }
        let mut order: Vec<usize> = (0..active.len()).filter(|&i| sol.x[i] > 1e-10).collect();
        order.extend((0..active.len()).filter(|&i| sol.x[i] <= 1e-10));

        let mut ortho: Vec<DVector<f64>> = Vec::with_capacity(p);
        let mut basis = Vec::with_capacity(p);
        for i in order {
            if basis.len() == p {
                break;
            }
            let row = g.row(active[i]).transpose();
            let mut res = row.clone();
            for _ in 0..2 {
                for q in &ortho {
                    res -= q * q.dot(&res);
                }
            }
            let norm = res.norm();
            if norm > 1e-8 * row.norm().max(1.0) {
                ortho.push(res / norm);
                basis.push(active[i]);
            }
        }
        if basis.len() < p {
            return Ok(None);
        }
        basis.sort_unstable();
        Ok(Some(basis))
    }

    /// Region and law of basis `basis`, or `None` if singular, not dual
    /// feasible, or not full-dimensional.
    fn region_for(&self, basis: &[usize]) -> Result<Option<(Polyhedron, AffineLaw)>, MpcError> {
        let plp = self.plp;
        let p = plp.num_vars();
        let n = plp.param_dim();
        let m = plp.input_dim;
        let gb = DMatrix::from_fn(p, p, |i, j| plp.g[(basis[i], j)]);
        let Some(gb_inv) = gb.clone().lu().try_inverse() else {
            return Ok(None);
        };
        if gb_inv.iter().any(|v| !v.is_finite()) {
            return Ok(None);
        }
        let lambda = -(gb_inv.transpose() * &plp.c);
        let scale = plp.c.amax().max(1.0);
        if lambda.iter().any(|&l| l < -1e-9 * scale) {
            return Ok(None);
        }
        let sb = DMatrix::from_fn(p, n, |i, j| plp.s[(basis[i], j)]);
        let wb = DVector::from_fn(p, |i, _| plp.w[basis[i]]);
        let lin = &gb_inv * sb;
        let off = &gb_inv * wb;

        let in_basis: HashSet<usize> = basis.iter().copied().collect();
        let mut a_rows: Vec<f64> = Vec::new();
        let mut b_rows: Vec<f64> = Vec::new();
        for i in 0..plp.num_rows() {
            if in_basis.contains(&i) {
                continue;
            }
            let gi = plp.g.row(i);
            let row = gi * &lin - plp.s.row(i);
            let rhs = plp.w[i] - (gi * &off)[0];
            let mag = gi.norm() * (lin.amax() + off.amax()) + plp.s.row(i).norm() + plp.w[i].abs();
            if row.norm() <= ROW_ZERO * mag.max(1.0) {
                if rhs < -ROW_ZERO * mag.max(1.0) {
                    return Ok(None);
                }
                continue;
            }
            a_rows.extend(row.iter());
            b_rows.push(rhs);
        }
        for i in 0..self.domain_poly.num_rows() {
            a_rows.extend(self.domain_poly.a().row(i).iter());
            b_rows.push(self.domain_poly.b()[i]);
        }
        let count = b_rows.len();
        let raw = Polyhedron::new(
            DMatrix::from_row_slice(count, n, &a_rows),
            DVector::from_vec(b_rows),
        )?;
        let ball = raw.chebyshev_center_within(self.domain)?;
        if ball.radius <= self.cfg.region_tol {
            return Ok(None);
        }
        let region = raw.remove_redundant()?;
        let law = AffineLaw {
            f: lin.rows(0, m).into_owned(),
            g: off.rows(0, m).into_owned(),
        };
        Ok(Some((region, law)))
    }

    fn explore_from(&mut self, seed: DVector<f64>) -> Result<(), MpcError> {
        self.queue.push_back(seed);
        while let Some(x) = self.queue.pop_front() {
            if !self.domain.contains(&x, 0.0) || self.covered(&x) {
                continue;
            }
            let Some(active) = self.solve_at(&x)? else {
                continue;
            };
            let Some(basis) = self.find_basis(&active)? else {
                continue;
            };
            if !self.bases.insert(basis.clone()) {
                continue;
            }
            let Some((region, law)) = self.region_for(&basis)? else {
                continue;
            };
            let center = region.chebyshev_center_within(self.domain)?.center;
            if self.covered(&center) {
                continue;
            }
            for row in 0..region.num_rows() {
                let Some(ball) = region.facet_center(row)? else {
                    continue;
                };
                if ball.radius <= 0.0 {
                    continue;
                }
                let normal = region.a().row(row).transpose();
                let next = ball.center + normal * self.cfg.step_eps;
                if self.domain.contains(&next, 0.0) {
                    self.queue.push_back(next);
                }
            }
            let bx = region.bounding_box_within(self.domain)?;
            self.regions.push(CriticalRegion { region, law, active_set: basis });
            self.boxes.push(bx);
            if self.regions.len() > self.cfg.max_regions {
                return Err(MpcError::ExplorationOverflow(self.cfg.max_regions));
            }
        }
        Ok(())
    }

    fn initial_seed(&self) -> Result<Option<DVector<f64>>, MpcError> {
        let c = self.domain.center();
        if self.solve_at(&c)?.is_some() {
            return Ok(Some(c));
        }
        let corners = self.domain.corners();
        let mut frac = 0.5;
        for _ in 0..8 {
            for corner in &corners {
                let x = &c + (corner - &c) * frac;
                if self.solve_at(&x)?.is_some() {
                    return Ok(Some(x));
                }
            }
            frac = 0.5 + frac / 2.0;
        }
        Ok(None)
    }
}

/// Explicit solution of `plp` over `domain`.
pub fn solve_mplp(plp: &ParametricLp, domain: &BoxSet, cfg: &MplpConfig) -> Result<ExplicitSolution, MpcError> {
    let n = plp.param_dim();
    if domain.dim() != n {
        return Err(MpcError::DimensionMismatch(format!(
            "domain has dimension {}, parameter has {n}",
            domain.dim()
        )));
    }
    let mut ex = Explorer {
        plp,
        domain,
        domain_poly: Polyhedron::from_box(domain),
        cfg,
        regions: Vec::new(),
        boxes: Vec::new(),
        bases: HashSet::new(),
        queue: VecDeque::new(),
    };
    if let Some(seed) = ex.initial_seed()? {
        ex.explore_from(seed)?;
    }
    // facet stepping reaches only one neighbour per facet; sweep for holes
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 0..cfg.coverage_samples {
        let x = DVector::from_fn(n, |i, _| {
            let (lo, hi) = (domain.lo()[i], domain.hi()[i]);
            if hi > lo {
                rng.gen_range(lo..hi)
            } else {
                lo
            }
        });
        if ex.covered(&x) {
            continue;
        }
        if ex.solve_at(&x)?.is_some() {
            ex.explore_from(x)?;
        }
    }
    if ex.regions.is_empty() {
        return Err(MpcError::SeedInfeasible);
    }
    ExplicitSolution::new(n, plp.input_dim, ex.regions)
}
