//! Dense two-phase simplex for small linear programs.
//!
//! Problems have the form
//!
//! ```text
//! minimize    cᵀx
//! subject to  A_in x ≤ b_in
//!             A_eq x = b_eq
//!             lb ≤ x ≤ ub
//! ```
//!
//! Variables are free unless bounded. Bounds with magnitude at or above
//! [`INFINITY_BOUND`] (or non-finite) are treated as absent.
//!
//! Pricing is Dantzig's rule until a run of degenerate pivots exceeds
//! [`SolverConfig::bland_after`]; from then on Bland's rule is used, which
//! cannot cycle. The solver is a pure function of its input.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Sentinel magnitude for "no bound".
pub const INFINITY_BOUND: f64 = 1e30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
}

/// Tolerances and pivoting limits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Phase-1 infeasibility threshold (relative to `max(1, ‖b‖∞)`).
    pub feas_tol: f64,
    /// Reduced-cost threshold for optimality.
    pub opt_tol: f64,
    /// Residual below which an inequality row is reported as active.
    pub active_tol: f64,
    /// Smallest admissible pivot magnitude.
    pub pivot_tol: f64,
    /// Consecutive degenerate pivots tolerated before switching to Bland's rule.
    pub bland_after: usize,
    pub max_iterations: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            feas_tol: 1e-9,
            opt_tol: 1e-9,
            active_tol: 1e-7,
            pivot_tol: 1e-11,
            bland_after: 50,
            max_iterations: 50_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub c: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
}

impl LinearProgram {
    /// `min cᵀx  s.t.  a_in x ≤ b_in` over free variables.
    pub fn new(c: DVector<f64>, a_in: DMatrix<f64>, b_in: DVector<f64>) -> Self {
        let n = c.len();
        Self {
            c,
            a_in,
            b_in,
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            lb: DVector::from_element(n, -INFINITY_BOUND),
            ub: DVector::from_element(n, INFINITY_BOUND),
        }
    }

    pub fn with_equalities(mut self, a_eq: DMatrix<f64>, b_eq: DVector<f64>) -> Self {
        self.a_eq = a_eq;
        self.b_eq = b_eq;
        self
    }

    pub fn with_bounds(mut self, lb: DVector<f64>, ub: DVector<f64>) -> Self {
        self.lb = lb;
        self.ub = ub;
        self
    }

    pub fn num_vars(&self) -> usize {
        self.c.len()
    }

    pub fn validate(&self) -> Result<(), LpError> {
        let n = self.c.len();
        if self.a_in.ncols() != n || self.a_eq.ncols() != n {
            return Err(LpError::DimensionMismatch(format!(
                "cost has {n} entries but constraint matrices have {} and {} columns",
                self.a_in.ncols(),
                self.a_eq.ncols()
            )));
        }
        if self.a_in.nrows() != self.b_in.len() {
            return Err(LpError::DimensionMismatch(format!(
                "inequality matrix has {} rows, rhs has {}",
                self.a_in.nrows(),
                self.b_in.len()
            )));
        }
        if self.a_eq.nrows() != self.b_eq.len() {
            return Err(LpError::DimensionMismatch(format!(
                "equality matrix has {} rows, rhs has {}",
                self.a_eq.nrows(),
                self.b_eq.len()
            )));
        }
        if self.lb.len() != n || self.ub.len() != n {
            return Err(LpError::DimensionMismatch("bound vectors".into()));
        }
        let finite = |s: &[f64]| s.iter().all(|v| v.is_finite());
        if !finite(self.c.as_slice()) {
            return Err(LpError::NonFinite("cost"));
        }
        if !finite(self.a_in.as_slice()) || !finite(self.b_in.as_slice()) {
            return Err(LpError::NonFinite("inequality constraints"));
        }
        if !finite(self.a_eq.as_slice()) || !finite(self.b_eq.as_slice()) {
            return Err(LpError::NonFinite("equality constraints"));
        }
        if self.lb.iter().any(|v| v.is_nan()) || self.ub.iter().any(|v| v.is_nan()) {
            return Err(LpError::NonFinite("bounds"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Optimizer; empty unless `status == Optimal`.
    pub x: DVector<f64>,
    pub objective: f64,
    /// Inequality rows tight at `x` within `active_tol`, ascending.
    pub active_set: Vec<usize>,
    /// Multipliers: one per inequality row (≥ 0) followed by one per equality
    /// row, with `c + A_inᵀλ + A_eqᵀμ = 0` on free variables.
    pub dual: DVector<f64>,
}

impl LpSolution {
    fn non_optimal(status: LpStatus) -> Self {
        Self {
            status,
            x: DVector::zeros(0),
            objective: match status {
                LpStatus::Unbounded => f64::NEG_INFINITY,
                _ => f64::INFINITY,
            },
            active_set: Vec::new(),
            dual: DVector::zeros(0),
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

pub fn solve_lp(lp: &LinearProgram, cfg: &SolverConfig) -> Result<LpSolution, LpError> {
    lp.validate()?;
    let std = StandardForm::build(lp);
    let mut tab = Tableau::new(&std);

    if std.num_art > 0 {
        tab.set_phase_one_objective();
        match tab.iterate(cfg, true)? {
            IterOutcome::Optimal => {}
            // Phase one is bounded below by zero.
            IterOutcome::Unbounded => {
                return Err(LpError::NumericalFailure("unbounded phase one".into()))
            }
        }
        let scale = std.rhs.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        if -tab.obj[tab.width - 1] > cfg.feas_tol * scale {
            return Ok(LpSolution::non_optimal(LpStatus::Infeasible));
        }
        tab.drive_out_artificials(cfg);
    }

    tab.set_phase_two_objective(&std.cost);
    match tab.iterate(cfg, false)? {
        IterOutcome::Optimal => {}
        IterOutcome::Unbounded => return Ok(LpSolution::non_optimal(LpStatus::Unbounded)),
    }

    let y = tab.primal(std.num_struct);
    let mut x = DVector::from_iterator(lp.num_vars(), std.offset.iter().copied());
    for (col, map) in std.col_map.iter().enumerate() {
        x[map.var] += map.sign * y[col];
    }
    let objective = lp.c.dot(&x);

    let residual = &lp.a_in * &x - &lp.b_in;
    let active_set = (0..lp.a_in.nrows())
        .filter(|&i| residual[i].abs() <= cfg.active_tol)
        .collect();

    let m_in = lp.a_in.nrows();
    let mut dual = DVector::zeros(m_in + lp.a_eq.nrows());
    for (row, info) in std.rows.iter().enumerate() {
        let value = match info.origin {
            RowOrigin::Inequality(i) => Some((i, tab.obj[info.slack.unwrap()])),
            RowOrigin::Equality(i) => info
                .artificial
                .map(|a| (m_in + i, info.sign * tab.obj[a])),
            RowOrigin::Bound => None,
        };
        if let Some((k, v)) = value {
            if tab.row_alive[row] {
                dual[k] = v;
            }
        }
    }

    Ok(LpSolution {
        status: LpStatus::Optimal,
        x,
        objective,
        active_set,
        dual,
    })
}

#[derive(Debug, Clone, Copy)]
struct ColumnMap {
    var: usize,
    sign: f64,
}

#[derive(Debug, Clone, Copy)]
enum RowOrigin {
    Inequality(usize),
    Equality(usize),
    Bound,
}

#[derive(Debug, Clone)]
struct RowInfo {
    origin: RowOrigin,
    /// +1 or -1: the factor the row was multiplied by to make its rhs ≥ 0.
    sign: f64,
    slack: Option<usize>,
    artificial: Option<usize>,
}

/// `min c̃ᵀy  s.t.  Ã y (+ slack) = b̃,  y ≥ 0`, with `x = offset + Σ sign·y`.
struct StandardForm {
    num_struct: usize,
    num_slack: usize,
    num_art: usize,
    col_map: Vec<ColumnMap>,
    offset: Vec<f64>,
    cost: Vec<f64>,
    /// Structural coefficients, one row per constraint, already sign-adjusted.
    coeffs: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    rows: Vec<RowInfo>,
}

fn has_bound(v: f64) -> bool {
    v.is_finite() && v.abs() < INFINITY_BOUND
}

impl StandardForm {
    fn build(lp: &LinearProgram) -> Self {
        let n = lp.num_vars();
        let mut col_map = Vec::with_capacity(2 * n);
        let mut offset = vec![0.0; n];
        // Extra rows y_j ≤ ub_j − lb_j for doubly bounded variables.
        let mut bound_rows: Vec<(usize, f64)> = Vec::new();
        for (j, off) in offset.iter_mut().enumerate() {
            let (lo, hi) = (lp.lb[j], lp.ub[j]);
            match (has_bound(lo), has_bound(hi)) {
                (true, hi_b) => {
                    *off = lo;
                    col_map.push(ColumnMap { var: j, sign: 1.0 });
                    if hi_b {
                        bound_rows.push((col_map.len() - 1, hi - lo));
                    }
                }
                (false, true) => {
                    *off = hi;
                    col_map.push(ColumnMap { var: j, sign: -1.0 });
                }
                (false, false) => {
                    col_map.push(ColumnMap { var: j, sign: 1.0 });
                    col_map.push(ColumnMap { var: j, sign: -1.0 });
                }
            }
        }
        let num_struct = col_map.len();
        let cost: Vec<f64> = col_map.iter().map(|m| m.sign * lp.c[m.var]).collect();
        let off = DVector::from_vec(offset.clone());

        let mut coeffs = Vec::new();
        let mut rhs = Vec::new();
        let mut origins = Vec::new();
        let mut push_row = |a: &dyn Fn(usize) -> f64, b: f64, origin: RowOrigin| {
            let row: Vec<f64> = col_map.iter().map(|m| m.sign * a(m.var)).collect();
            coeffs.push(row);
            rhs.push(b);
            origins.push(origin);
        };
        for i in 0..lp.a_in.nrows() {
            let b = lp.b_in[i] - lp.a_in.row(i).transpose().dot(&off);
            push_row(&|j| lp.a_in[(i, j)], b, RowOrigin::Inequality(i));
        }
        for &(col, width) in &bound_rows {
            let var = col_map[col].var;
            push_row(&|j| if j == var { 1.0 } else { 0.0 }, width, RowOrigin::Bound);
        }
        for i in 0..lp.a_eq.nrows() {
            let b = lp.b_eq[i] - lp.a_eq.row(i).transpose().dot(&off);
            push_row(&|j| lp.a_eq[(i, j)], b, RowOrigin::Equality(i));
        }

        let mut rows = Vec::with_capacity(origins.len());
        let mut num_slack = 0;
        for origin in &origins {
            if !matches!(origin, RowOrigin::Equality(_)) {
                num_slack += 1;
            }
        }
        let mut next_slack = num_struct;
        let mut next_art = num_struct + num_slack;
        for (r, origin) in origins.into_iter().enumerate() {
            let sign = if rhs[r] < 0.0 { -1.0 } else { 1.0 };
            if sign < 0.0 {
                rhs[r] = -rhs[r];
                coeffs[r].iter_mut().for_each(|v| *v = -*v);
            }
            let slack = match origin {
                RowOrigin::Equality(_) => None,
                _ => {
                    next_slack += 1;
                    Some(next_slack - 1)
                }
            };
            // A slack with coefficient +1 can start in the basis; otherwise the
            // row needs an artificial.
            let artificial = if slack.is_some() && sign > 0.0 {
                None
            } else {
                next_art += 1;
                Some(next_art - 1)
            };
            rows.push(RowInfo {
                origin,
                sign,
                slack,
                artificial,
            });
        }
        let num_art = next_art - num_struct - num_slack;

        Self {
            num_struct,
            num_slack,
            num_art,
            col_map,
            offset,
            cost,
            coeffs,
            rhs,
            rows,
        }
    }
}

enum IterOutcome {
    Optimal,
    Unbounded,
}

struct Tableau {
    rows: usize,
    width: usize,
    data: Vec<f64>,
    obj: Vec<f64>,
    basis: Vec<usize>,
    row_alive: Vec<bool>,
    first_art: usize,
}

impl Tableau {
    fn new(std: &StandardForm) -> Self {
        let rows = std.rhs.len();
        let ncols = std.num_struct + std.num_slack + std.num_art;
        let width = ncols + 1;
        let mut data = vec![0.0; rows * width];
        let mut basis = vec![0; rows];
        for (r, info) in std.rows.iter().enumerate() {
            let row = &mut data[r * width..(r + 1) * width];
            row[..std.num_struct].copy_from_slice(&std.coeffs[r]);
            if let Some(s) = info.slack {
                row[s] = info.sign;
            }
            if let Some(a) = info.artificial {
                row[a] = 1.0;
                basis[r] = a;
            } else {
                basis[r] = info.slack.unwrap();
            }
            row[width - 1] = std.rhs[r];
        }
        Self {
            rows,
            width,
            data,
            obj: vec![0.0; width],
            basis,
            row_alive: vec![true; rows],
            first_art: std.num_struct + std.num_slack,
        }
    }

    #[inline]
    fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.width + c]
    }

    fn set_phase_one_objective(&mut self) {
        self.obj.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..self.rows {
            if self.basis[r] >= self.first_art {
                for c in 0..self.width {
                    if c < self.first_art || c == self.width - 1 {
                        self.obj[c] -= self.at(r, c);
                    }
                }
            }
        }
    }

    fn set_phase_two_objective(&mut self, cost: &[f64]) {
        let cost_of = |c: usize| cost.get(c).copied().unwrap_or(0.0);
        self.obj.iter_mut().for_each(|v| *v = 0.0);
        self.obj[..cost.len()].copy_from_slice(cost);
        for r in 0..self.rows {
            if !self.row_alive[r] {
                continue;
            }
            let cb = cost_of(self.basis[r]);
            if cb != 0.0 {
                for c in 0..self.width {
                    self.obj[c] -= cb * self.at(r, c);
                }
            }
        }
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let w = self.width;
        let inv = 1.0 / self.at(pr, pc);
        for c in 0..w {
            self.data[pr * w + c] *= inv;
        }
        self.data[pr * w + pc] = 1.0;
        let pivot_row: Vec<f64> = self.data[pr * w..(pr + 1) * w].to_vec();
        for r in 0..self.rows {
            if r == pr || !self.row_alive[r] {
                continue;
            }
            let factor = self.data[r * w + pc];
            if factor != 0.0 {
                let row = &mut self.data[r * w..(r + 1) * w];
                for (v, p) in row.iter_mut().zip(&pivot_row) {
                    *v -= factor * p;
                }
                row[pc] = 0.0;
                if row[w - 1] < 0.0 && row[w - 1] > -1e-12 {
                    row[w - 1] = 0.0;
                }
            }
        }
        let factor = self.obj[pc];
        if factor != 0.0 {
            for (v, p) in self.obj.iter_mut().zip(&pivot_row) {
                *v -= factor * p;
            }
            self.obj[pc] = 0.0;
        }
        self.basis[pr] = pc;
    }

    fn iterate(&mut self, cfg: &SolverConfig, phase_one: bool) -> Result<IterOutcome, LpError> {
        let ncols = self.width - 1;
        let entering_limit = if phase_one { ncols } else { self.first_art };
        let mut degenerate_run = 0usize;
        let mut bland = false;
        for _ in 0..cfg.max_iterations {
            let entering = if bland {
                (0..entering_limit).find(|&c| self.obj[c] < -cfg.opt_tol)
            } else {
                let mut best: Option<(usize, f64)> = None;
                for c in 0..entering_limit {
                    let rc = self.obj[c];
                    if rc < -cfg.opt_tol && best.is_none_or(|(_, b)| rc < b) {
                        best = Some((c, rc));
                    }
                }
                best.map(|(c, _)| c)
            };
            let Some(pc) = entering else {
                return Ok(IterOutcome::Optimal);
            };

            let mut leave: Option<(usize, f64, f64)> = None;
            for r in 0..self.rows {
                if !self.row_alive[r] {
                    continue;
                }
                let a = self.at(r, pc);
                if a <= cfg.pivot_tol {
                    continue;
                }
                let ratio = self.at(r, ncols).max(0.0) / a;
                leave = match leave {
                    None => Some((r, ratio, a)),
                    Some((br, bratio, ba)) => {
                        let tie = (ratio - bratio).abs() <= 1e-12 * (1.0 + bratio.abs());
                        let better = if tie {
                            if bland {
                                self.basis[r] < self.basis[br]
                            } else {
                                a > ba
                            }
                        } else {
                            ratio < bratio
                        };
                        if better {
                            Some((r, ratio, a))
                        } else {
                            Some((br, bratio, ba))
                        }
                    }
                };
            }
            let Some((pr, ratio, _)) = leave else {
                return Ok(IterOutcome::Unbounded);
            };
            if ratio <= 1e-12 {
                degenerate_run += 1;
                if degenerate_run > cfg.bland_after {
                    bland = true;
                }
            } else {
                degenerate_run = 0;
            }
            self.pivot(pr, pc);
        }
        Err(LpError::NumericalFailure(format!(
            "no convergence after {} pivots",
            cfg.max_iterations
        )))
    }

    /// Pivot zero-level artificials out of the basis; drop rows where that is
    /// impossible (they are linearly dependent on the others).
    fn drive_out_artificials(&mut self, cfg: &SolverConfig) {
        for r in 0..self.rows {
            if self.basis[r] < self.first_art {
                continue;
            }
            let mut best: Option<(usize, f64)> = None;
            for c in 0..self.first_art {
                let a = self.at(r, c).abs();
                if a > cfg.pivot_tol.max(1e-9) && best.is_none_or(|(_, b)| a > b) {
                    best = Some((c, a));
                }
            }
            match best {
                Some((c, _)) => self.pivot(r, c),
                None => self.row_alive[r] = false,
            }
        }
    }

    fn primal(&self, num_struct: usize) -> Vec<f64> {
        let mut y = vec![0.0; num_struct];
        for r in 0..self.rows {
            if self.row_alive[r] && self.basis[r] < num_struct {
                y[self.basis[r]] = self.at(r, self.width - 1).max(0.0);
            }
        }
        y
    }
}
