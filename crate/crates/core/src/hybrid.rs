//! Closed loop of a nonlinear plant and an explicit MPC law, as a hybrid
//! automaton with one mode per region and transitions only at multiples of
//! the sampling period.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{EvalError, ExprError, Jacobian, VectorField};
use crate::mpc::{AffineLaw, ExplicitSolution};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HybridError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid step: {0}")]
    BadStep(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// How the input evolves between sampling instants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HoldMode {
    /// `u(t) = F_i x(t) + G_i` with `i` frozen for the period.
    #[default]
    StateFeedback,
    /// `u(t) = F_i x(jTs) + G_i`, constant over the period.
    Zoh,
}

#[derive(Debug, Clone)]
pub struct HybridAutomaton {
    field: VectorField,
    jacobian: Jacobian,
    solution: ExplicitSolution,
    ts: f64,
    hold: HoldMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub x: DVector<f64>,
    /// `None` once the state has left every region.
    pub mode: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub h: f64,
    /// Set when a sampling instant found the state outside the feasible union.
    pub infeasible: bool,
}

impl Trajectory {
    pub fn last(&self) -> &Sample {
        self.samples.last().expect("trajectory has at least the initial sample")
    }

    /// `t,x1..xn,mode` with one row per sample.
    pub fn to_csv(&self) -> String {
        let n = self.samples.first().map_or(0, |s| s.x.len());
        let mut out = String::from("t");
        for i in 1..=n {
            let _ = write!(out, ",x{i}");
        }
        out.push_str(",mode\n");
        for s in &self.samples {
            let _ = write!(out, "{}", s.t);
            for v in s.x.iter() {
                let _ = write!(out, ",{v}");
            }
            match s.mode {
                Some(m) => {
                    let _ = writeln!(out, ",{m}");
                }
                None => out.push_str(",infeasible\n"),
            }
        }
        out
    }
}

/// One classic Runge–Kutta step.
pub fn rk4_step<F>(f: &F, x: &DVector<f64>, h: f64) -> Result<DVector<f64>, EvalError>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>, EvalError>,
{
    let k1 = f(x)?;
    let k2 = f(&(x + &k1 * (h / 2.0)))?;
    let k3 = f(&(x + &k2 * (h / 2.0)))?;
    let k4 = f(&(x + &k3 * h))?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

/// What the input does over one period.
enum PeriodInput<'a> {
    Law(&'a AffineLaw),
    Constant(DVector<f64>),
}

impl HybridAutomaton {
    pub fn new(
        field: VectorField,
        jacobian: Jacobian,
        solution: ExplicitSolution,
        ts: f64,
        hold: HoldMode,
    ) -> Result<Self, HybridError> {
        let n = field.state_dim();
        let m = field.input_dim();
        if solution.state_dim() != n || solution.input_dim() != m {
            return Err(HybridError::DimensionMismatch(format!(
                "plant is {n} states / {m} inputs, control law is {} / {}",
                solution.state_dim(),
                solution.input_dim()
            )));
        }
        if jacobian.jx.len() != n || jacobian.ju.len() != n {
            return Err(HybridError::DimensionMismatch("Jacobian rows".into()));
        }
        if !(ts.is_finite() && ts > 0.0) {
            return Err(HybridError::BadStep(format!("sampling period {ts}")));
        }
        Ok(Self { field, jacobian, solution, ts, hold })
    }

    /// Uses the symbolic Jacobian of `field`.
    pub fn build(field: VectorField, solution: ExplicitSolution, ts: f64, hold: HoldMode) -> Result<Self, HybridError> {
        let jac = field.jacobian()?;
        Self::new(field, jac, solution, ts, hold)
    }

    pub fn state_dim(&self) -> usize {
        self.field.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.field.input_dim()
    }

    pub fn ts(&self) -> f64 {
        self.ts
    }

    pub fn hold(&self) -> HoldMode {
        self.hold
    }

    pub fn field(&self) -> &VectorField {
        &self.field
    }

    pub fn solution(&self) -> &ExplicitSolution {
        &self.solution
    }

    pub fn mode_count(&self) -> usize {
        self.solution.k()
    }

    pub fn law(&self, mode: usize) -> &AffineLaw {
        &self.solution.region(mode).law
    }

    pub fn locate_mode(&self, x: &DVector<f64>) -> Option<usize> {
        self.solution.locate(x)
    }

    /// `f(x, F_i x + G_i)`.
    pub fn closed_loop(&self, mode: usize, x: &DVector<f64>) -> Result<DVector<f64>, EvalError> {
        let u = self.law(mode).eval(x);
        self.field.eval(x.as_slice(), u.as_slice())
    }

    /// Plant Jacobians at `(x, u)`.
    pub fn jacobians(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>), EvalError> {
        self.jacobian.eval(x.as_slice(), u.as_slice())
    }

    /// `Jx + Ju·F_i` at `(x, F_i x + G_i)`.
    pub fn closed_loop_jacobian(&self, mode: usize, x: &DVector<f64>) -> Result<DMatrix<f64>, EvalError> {
        let law = self.law(mode);
        let u = law.eval(x);
        let (jx, ju) = self.jacobians(x, &u)?;
        Ok(jx + ju * &law.f)
    }

    /// States after each of `steps` equal RK4 steps over `span` seconds in
    /// `mode`, starting at a sampling instant. Index 0 is `x0`.
    pub fn flow(&self, mode: usize, x0: &DVector<f64>, span: f64, steps: usize) -> Result<Vec<DVector<f64>>, EvalError> {
        let h = span / steps as f64;
        let input = self.period_input(mode, x0);
        let mut xs = Vec::with_capacity(steps + 1);
        xs.push(x0.clone());
        let mut x = x0.clone();
        for _ in 0..steps {
            x = self.step(&input, &x, h)?;
            xs.push(x.clone());
        }
        Ok(xs)
    }

    fn period_input(&self, mode: usize, x_hold: &DVector<f64>) -> PeriodInput<'_> {
        match self.hold {
            HoldMode::StateFeedback => PeriodInput::Law(self.law(mode)),
            HoldMode::Zoh => PeriodInput::Constant(self.law(mode).eval(x_hold)),
        }
    }

    fn step(&self, input: &PeriodInput<'_>, x: &DVector<f64>, h: f64) -> Result<DVector<f64>, EvalError> {
        match input {
            PeriodInput::Law(law) => rk4_step(
                &|y: &DVector<f64>| self.field.eval(y.as_slice(), law.eval(y).as_slice()),
                x,
                h,
            ),
            PeriodInput::Constant(u) => rk4_step(&|y: &DVector<f64>| self.field.eval(y.as_slice(), u.as_slice()), x, h),
        }
    }

    /// Steps per period for step `h`, which must divide `Ts`.
    pub fn steps_per_period(&self, h: f64) -> Result<usize, HybridError> {
        if !(h.is_finite() && h > 0.0) {
            return Err(HybridError::BadStep(format!("step {h}")));
        }
        let k = (self.ts / h).round();
        if k < 1.0 || (k * h - self.ts).abs() > 1e-12 * self.ts.max(1.0) {
            return Err(HybridError::BadStep(format!(
                "step {h} does not divide the sampling period {}",
                self.ts
            )));
        }
        Ok(k as usize)
    }

    /// Fixed-step simulation over `[0, tv]` with the mode re-located at every
    /// sampling instant. Stops early, flagged, when a sampling instant finds
    /// the state outside every region.
    pub fn simulate(&self, x0: &DVector<f64>, tv: f64, h: f64) -> Result<Trajectory, HybridError> {
        self.run(x0, tv, h, |x| {
            let mode = self.locate_mode(x)?;
            Some((mode, self.period_input(mode, x)))
        })
    }

    /// Like [`simulate`](Self::simulate) with the input held constant over
    /// each period at whatever `controller` returns for the sampled state.
    /// Modes are still reported by region lookup.
    pub fn simulate_with_controller<C>(&self, x0: &DVector<f64>, tv: f64, h: f64, controller: C) -> Result<Trajectory, HybridError>
    where
        C: Fn(&DVector<f64>) -> Option<DVector<f64>>,
    {
        self.run(x0, tv, h, |x| {
            let mode = self.locate_mode(x)?;
            Some((mode, PeriodInput::Constant(controller(x)?)))
        })
    }

    fn run<'s, L>(&'s self, x0: &DVector<f64>, tv: f64, h: f64, locate: L) -> Result<Trajectory, HybridError>
    where
        L: Fn(&DVector<f64>) -> Option<(usize, PeriodInput<'s>)>,
    {
        if x0.len() != self.state_dim() {
            return Err(HybridError::DimensionMismatch(format!(
                "initial state has {} entries, expected {}",
                x0.len(),
                self.state_dim()
            )));
        }
        if !(tv.is_finite() && tv > 0.0) {
            return Err(HybridError::BadStep(format!("horizon {tv}")));
        }
        let spp = self.steps_per_period(h)?;
        let total = ((tv / h) - 1e-9).ceil().max(1.0) as usize;
        let mut samples = vec![Sample { t: 0.0, x: x0.clone(), mode: None }];
        let mut x = x0.clone();
        let mut period = 0;
        loop {
            let start = period * spp;
            if start >= total {
                break;
            }
            let Some((mode, input)) = locate(&x) else {
                samples.last_mut().expect("nonempty").mode = None;
                return Ok(Trajectory { samples, h, infeasible: true });
            };
            samples.last_mut().expect("nonempty").mode = Some(mode);
            for k in start..(start + spp).min(total) {
                let t0 = k as f64 * h;
                let t1 = if k + 1 == total { tv } else { (k + 1) as f64 * h };
                x = self.step(&input, &x, t1 - t0)?;
                samples.push(Sample { t: t1, x: x.clone(), mode: Some(mode) });
            }
            period += 1;
        }
        Ok(Trajectory { samples, h, infeasible: false })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::SymbolTable;
    use crate::mpc::CriticalRegion;
    use crate::polyhedron::{BoxSet, Polyhedron};

    fn single_region(n: usize, f: DMatrix<f64>, g: DVector<f64>) -> ExplicitSolution {
        let m = g.len();
        ExplicitSolution::new(
            n,
            m,
            vec![CriticalRegion {
                region: Polyhedron::from_box(&BoxSet::cube(n, 10.0)),
                law: AffineLaw { f, g },
                active_set: vec![],
            }],
        )
        .unwrap()
    }

    fn automaton(dynamics: &[&str], n: usize, sol: ExplicitSolution, hold: HoldMode) -> HybridAutomaton {
        let sym = SymbolTable::new(n, 1);
        let field = VectorField::parse(dynamics, &sym).unwrap();
        HybridAutomaton::build(field, sol, 1.0, hold).unwrap()
    }

    #[test]
    fn zero_field_is_constant() {
        let ha = automaton(&["0"], 1, single_region(1, DMatrix::zeros(1, 1), DVector::zeros(1)), HoldMode::StateFeedback);
        let x0 = DVector::from_element(1, 0.7);
        let tr = ha.simulate(&x0, 3.0, 0.1).unwrap();
        assert!(tr.samples.iter().all(|s| s.x == x0 && s.mode == Some(0)));
        assert_eq!(tr.samples.len(), 31);
        assert_eq!(tr.last().t, 3.0);
    }

    #[test]
    fn linear_decay_matches_exponential() {
        // ẋ = u with u = -x
        let ha = automaton(
            &["u1"],
            1,
            single_region(1, DMatrix::from_element(1, 1, -1.0), DVector::zeros(1)),
            HoldMode::StateFeedback,
        );
        let tr = ha.simulate(&DVector::from_element(1, 1.0), 1.0, 0.01).unwrap();
        assert!((tr.last().x[0] - (-1.0f64).exp()).abs() < 1e-9);
        let j = ha.closed_loop_jacobian(0, &DVector::from_element(1, 3.0)).unwrap();
        assert_eq!(j[(0, 0)], -1.0);
    }

    #[test]
    fn zoh_holds_input() {
        // ẋ = u, u = -x held: x(1) = x0 - x0 = 0 exactly over one period
        let ha = automaton(
            &["u1"],
            1,
            single_region(1, DMatrix::from_element(1, 1, -1.0), DVector::zeros(1)),
            HoldMode::Zoh,
        );
        let tr = ha.simulate(&DVector::from_element(1, 1.0), 1.0, 0.1).unwrap();
        assert!(tr.last().x[0].abs() < 1e-12);
    }

    #[test]
    fn leaving_the_regions_is_flagged() {
        // ẋ = 1 drifts out of [-10, 10] after the first period from 9.5
        let ha = automaton(&["1"], 1, single_region(1, DMatrix::zeros(1, 1), DVector::zeros(1)), HoldMode::StateFeedback);
        let tr = ha.simulate(&DVector::from_element(1, 9.5), 5.0, 0.5).unwrap();
        assert!(tr.infeasible);
        assert_eq!(tr.last().t, 1.0);
        assert_eq!(tr.last().mode, None);
    }

    #[test]
    fn step_must_divide_period() {
        let ha = automaton(&["0"], 1, single_region(1, DMatrix::zeros(1, 1), DVector::zeros(1)), HoldMode::StateFeedback);
        assert!(matches!(ha.simulate(&DVector::zeros(1), 1.0, 0.3), Err(HybridError::BadStep(_))));
    }

    #[test]
    fn csv_layout() {
        let ha = automaton(&["0", "0"], 2, single_region(2, DMatrix::zeros(1, 2), DVector::zeros(1)), HoldMode::StateFeedback);
        let tr = ha.simulate(&DVector::from_row_slice(&[1.0, 2.0]), 1.0, 0.5).unwrap();
        assert_eq!(tr.to_csv(), "t,x1,x2,mode\n0,1,2,0\n0.5,1,2,0\n1,1,2,0\n");
    }
}
