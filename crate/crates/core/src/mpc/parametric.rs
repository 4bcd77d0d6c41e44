use nalgebra::{DMatrix, DVector};

use super::{MpcError, MpcProblem, NormKind};
use crate::lp::{solve_lp, LinearProgram, LpStatus, SolverConfig};

/// Weight of the `‖U‖₁` term that picks one minimizer among ties.
pub const TIE_BREAK_U: f64 = 1e-6;
/// Relative bump on the state-cost epigraph variables. It must exceed
/// [`TIE_BREAK_U`] so that, between equal-cost plans, the one reaching the
/// origin sooner wins over the one using less input.
pub const TIE_BREAK_STATE: f64 = 1e-5;

/// `min cᵀz  s.t.  G z ≤ w + S x`, with `z = (U, ε, t)`. The first
/// `input_dim` entries of `z` are `u(k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParametricLp {
    pub c: DVector<f64>,
    pub g: DMatrix<f64>,
    pub w: DVector<f64>,
    pub s: DMatrix<f64>,
    pub input_dim: usize,
    pub horizon: usize,
}

impl ParametricLp {
    pub fn num_vars(&self) -> usize {
        self.c.len()
    }

    pub fn num_rows(&self) -> usize {
        self.g.nrows()
    }

    pub fn param_dim(&self) -> usize {
        self.s.ncols()
    }

    /// The LP with the parameter fixed.
    pub fn at(&self, x: &DVector<f64>) -> LinearProgram {
        LinearProgram::new(self.c.clone(), self.g.clone(), &self.w + &self.s * x)
    }
}

struct Rows {
    g: Vec<Vec<f64>>,
    w: Vec<f64>,
    s: Vec<Vec<f64>>,
}

impl Rows {
    fn push(&mut self, g: Vec<f64>, w: f64, s: Vec<f64>) {
        self.g.push(g);
        self.w.push(w);
        self.s.push(s);
    }
}

/// Epigraph reformulation with the predictions substituted out.
pub fn build_parametric_lp(prob: &MpcProblem) -> Result<ParametricLp, MpcError> {
    prob.validate()?;
    let n = prob.state_dim();
    let m = prob.input_dim();
    let big_n = prob.horizon;
    let nu = big_n * m;
    let (qr, rr) = (prob.q.nrows(), prob.r.nrows());
    let (eps_x_per, eps_u_per) = match prob.norm {
        NormKind::Inf => (1, 1),
        NormKind::One => (qr, rr),
    };
    let ex0 = nu;
    let eu0 = ex0 + big_n * eps_x_per;
    let t0 = eu0 + big_n * eps_u_per;
    let p = t0 + nu;

    // x(k+i) = Φ_i x(k) + Γ_i U for i = 1..N
    let mut phi = Vec::with_capacity(big_n);
    let mut gamma = Vec::with_capacity(big_n);
    let mut phi_i = DMatrix::<f64>::identity(n, n);
    let mut gamma_i = DMatrix::<f64>::zeros(n, nu);
    for i in 0..big_n {
        gamma_i = &prob.a_d * &gamma_i;
        gamma_i.view_mut((0, i * m), (n, m)).copy_from(&prob.b_d);
        phi_i = &prob.a_d * &phi_i;
        phi.push(phi_i.clone());
        gamma.push(gamma_i.clone());
    }

    let mut rows = Rows { g: Vec::new(), w: Vec::new(), s: Vec::new() };
    let zeros_p = || vec![0.0; p];
    let zeros_n = || vec![0.0; n];

    // state cost: ±(Q x_i)_r ≤ ε
    for i in 0..big_n {
        let qg = &prob.q * &gamma[i];
        let qp = &prob.q * &phi[i];
        for r in 0..qr {
            let eps = ex0 + i * eps_x_per + if eps_x_per == 1 { 0 } else { r };
            for sign in [1.0, -1.0] {
                let mut g = zeros_p();
                for j in 0..nu {
                    g[j] = sign * qg[(r, j)];
                }
                g[eps] = -1.0;
                let s = (0..n).map(|j| -sign * qp[(r, j)]).collect();
                rows.push(g, 0.0, s);
            }
        }
    }
    // input cost: ±(R u_j)_r ≤ ε
    for j in 0..big_n {
        for r in 0..rr {
            let eps = eu0 + j * eps_u_per + if eps_u_per == 1 { 0 } else { r };
            for sign in [1.0, -1.0] {
                let mut g = zeros_p();
                for c in 0..m {
                    g[j * m + c] = sign * prob.r[(r, c)];
                }
                g[eps] = -1.0;
                rows.push(g, 0.0, zeros_n());
            }
        }
    }
    // input bounds
    for j in 0..big_n {
        for c in 0..m {
            let mut g = zeros_p();
            g[j * m + c] = 1.0;
            rows.push(g, prob.u_max[c], zeros_n());
            let mut g = zeros_p();
            g[j * m + c] = -1.0;
            rows.push(g, -prob.u_min[c], zeros_n());
        }
    }
    // predicted state bounds
    for i in 0..big_n {
        for r in 0..n {
            for sign in [1.0, -1.0] {
                let mut g = zeros_p();
                for j in 0..nu {
                    g[j] = sign * gamma[i][(r, j)];
                }
                let w = if sign > 0.0 { prob.x_max[r] } else { -prob.x_min[r] };
                let s = (0..n).map(|j| -sign * phi[i][(r, j)]).collect();
                rows.push(g, w, s);
            }
        }
    }
    // current state bounds; no decision variable enters
    for r in 0..n {
        let mut s = zeros_n();
        s[r] = -1.0;
        rows.push(zeros_p(), prob.x_max[r], s);
        let mut s = zeros_n();
        s[r] = 1.0;
        rows.push(zeros_p(), -prob.x_min[r], s);
    }
    // tie-break epigraph: |u| ≤ t
    for j in 0..nu {
        for sign in [1.0, -1.0] {
            let mut g = zeros_p();
            g[j] = sign;
            g[t0 + j] = -1.0;
            rows.push(g, 0.0, zeros_n());
        }
    }

    // unit-norm rows so active-set tolerances are distances in z
    let count = rows.g.len();
    let mut g = DMatrix::zeros(count, p);
    let mut w = DVector::zeros(count);
    let mut s = DMatrix::zeros(count, n);
    for i in 0..count {
        let norm = rows.g[i].iter().map(|v| v * v).sum::<f64>().sqrt();
        let scale = if norm > 0.0 { 1.0 / norm } else { 1.0 };
        for j in 0..p {
            g[(i, j)] = rows.g[i][j] * scale;
        }
        for j in 0..n {
            s[(i, j)] = rows.s[i][j] * scale;
        }
        w[i] = rows.w[i] * scale;
    }

    let mut c = DVector::zeros(p);
    for k in ex0..eu0 {
        c[k] = 1.0 + TIE_BREAK_STATE;
    }
    for k in eu0..t0 {
        c[k] = 1.0;
    }
    for k in t0..p {
        c[k] = TIE_BREAK_U;
    }
    Ok(ParametricLp { c, g, w, s, input_dim: m, horizon: big_n })
}

/// Optimal input sequence `U*` at `x`, or `None` when the LP is infeasible.
pub fn pointwise_plan(plp: &ParametricLp, x: &DVector<f64>) -> Result<Option<DVector<f64>>, MpcError> {
    if x.len() != plp.param_dim() {
        return Err(MpcError::DimensionMismatch(format!(
            "parameter has {} entries, expected {}",
            x.len(),
            plp.param_dim()
        )));
    }
    let sol = solve_lp(&plp.at(x), &SolverConfig::default())?;
    Ok(match sol.status {
        LpStatus::Optimal => Some(sol.x.rows(0, plp.horizon * plp.input_dim).into_owned()),
        _ => None,
    })
}

/// First input block of the optimal plan: the implicit MPC law.
pub fn pointwise_oracle(plp: &ParametricLp, x: &DVector<f64>) -> Result<Option<DVector<f64>>, MpcError> {
    Ok(pointwise_plan(plp, x)?.map(|u| u.rows(0, plp.input_dim).into_owned()))
}
