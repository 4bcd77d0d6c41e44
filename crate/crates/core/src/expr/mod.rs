//! Expression language for plant dynamics `ẋ = f(x, u)`.
//!
//! Variables are `x1..xn` (states), `u1..um` (inputs) and named parameters
//! declared in a [`SymbolTable`]. Supported operations are `+ - * / ^`, unary
//! minus and the functions `sin cos tan exp log sqrt abs`. Exponents must be
//! constant. Precedence, tightest first: `^`, unary `-`, `* /`, `+ -`.

mod diff;
mod parse;

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::polyhedron::BoxSet;

pub use parse::parse;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("syntax error at {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),
    #[error("cannot differentiate `{0}`: dynamics must be continuously differentiable")]
    UnsupportedOp(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("expected {expected} components, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("supplied Jacobian entry {matrix}[{row}][{col}] = {supplied} disagrees with derived {derived} at {point:?}")]
    JacobianMismatch {
        matrix: &'static str,
        row: usize,
        col: usize,
        supplied: f64,
        derived: f64,
        point: Vec<f64>,
    },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("domain violation: {0}")]
    DomainViolation(String),
    #[error("no value bound for `{0}`")]
    MissingVar(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Var {
    /// 0-based; printed as `x{i+1}`.
    State(usize),
    /// 0-based; printed as `u{i+1}`.
    Input(usize),
    Param(String),
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::State(i) => write!(f, "x{}", i + 1),
            Var::Input(i) => write!(f, "u{}", i + 1),
            Var::Param(name) => f.write_str(name),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
    Abs,
}

impl UnaryOp {
    pub fn name(self) -> &'static str {
        match self {
            UnaryOp::Neg => "-",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Tan => "tan",
            UnaryOp::Exp => "exp",
            UnaryOp::Log => "log",
            UnaryOp::Sqrt => "sqrt",
            UnaryOp::Abs => "abs",
        }
    }

    pub(crate) fn function(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => UnaryOp::Sin,
            "cos" => UnaryOp::Cos,
            "tan" => UnaryOp::Tan,
            "exp" => UnaryOp::Exp,
            "log" => UnaryOp::Log,
            "sqrt" => UnaryOp::Sqrt,
            "abs" => UnaryOp::Abs,
            _ => return None,
        })
    }

    fn apply(self, v: f64) -> Result<f64, EvalError> {
        let out = match self {
            UnaryOp::Neg => -v,
            UnaryOp::Sin => v.sin(),
            UnaryOp::Cos => v.cos(),
            UnaryOp::Tan => v.tan(),
            UnaryOp::Exp => v.exp(),
            UnaryOp::Log => {
                if v <= 0.0 {
                    return Err(EvalError::DomainViolation(format!("log({v})")));
                }
                v.ln()
            }
            UnaryOp::Sqrt => {
                if v < 0.0 {
                    return Err(EvalError::DomainViolation(format!("sqrt({v})")));
                }
                v.sqrt()
            }
            UnaryOp::Abs => v.abs(),
        };
        finite(out, || format!("{}({v})", self.name()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinaryOp {
    fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Pow => "^",
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinaryOp::Add | BinaryOp::Sub => 1,
            BinaryOp::Mul | BinaryOp::Div => 2,
            BinaryOp::Pow => 4,
        }
    }

    fn apply(self, l: f64, r: f64) -> Result<f64, EvalError> {
        let out = match self {
            BinaryOp::Add => l + r,
            BinaryOp::Sub => l - r,
            BinaryOp::Mul => l * r,
            BinaryOp::Div => l / r,
            BinaryOp::Pow => l.powf(r),
        };
        finite(out, || format!("{l} {} {r}", self.symbol()))
    }
}

fn finite(v: f64, what: impl FnOnce() -> String) -> Result<f64, EvalError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(EvalError::DomainViolation(what()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(Var),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
}

/// Source of variable values during evaluation.
pub trait Bindings {
    fn value(&self, var: &Var) -> Option<f64>;
}

impl Bindings for HashMap<String, f64> {
    fn value(&self, var: &Var) -> Option<f64> {
        self.get(&var.to_string()).copied()
    }
}

impl Bindings for BTreeMap<String, f64> {
    fn value(&self, var: &Var) -> Option<f64> {
        self.get(&var.to_string()).copied()
    }
}

/// State and input vectors; parameters are expected to be substituted already.
#[derive(Debug, Clone, Copy)]
pub struct Point<'a> {
    pub x: &'a [f64],
    pub u: &'a [f64],
}

impl Bindings for Point<'_> {
    fn value(&self, var: &Var) -> Option<f64> {
        match var {
            Var::State(i) => self.x.get(*i).copied(),
            Var::Input(i) => self.u.get(*i).copied(),
            Var::Param(_) => None,
        }
    }
}

impl Expr {
    pub fn constant(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn evaluate(&self, env: &impl Bindings) -> Result<f64, EvalError> {
        match self {
            Expr::Const(c) => Ok(*c),
            Expr::Var(v) => env
                .value(v)
                .ok_or_else(|| EvalError::MissingVar(v.to_string())),
            Expr::Unary(op, e) => op.apply(e.evaluate(env)?),
            Expr::Binary(op, l, r) => op.apply(l.evaluate(env)?, r.evaluate(env)?),
        }
    }

    pub fn eval_at(&self, x: &[f64], u: &[f64]) -> Result<f64, EvalError> {
        self.evaluate(&Point { x, u })
    }

    /// True if the expression mentions no state or input variable.
    pub fn is_constant_expr(&self) -> bool {
        match self {
            Expr::Const(_) => true,
            Expr::Var(Var::Param(_)) => true,
            Expr::Var(_) => false,
            Expr::Unary(_, e) => e.is_constant_expr(),
            Expr::Binary(_, l, r) => l.is_constant_expr() && r.is_constant_expr(),
        }
    }

    /// Replaces parameters by their values and folds constants.
    pub fn substitute_params(&self, params: &BTreeMap<String, f64>) -> Result<Expr, ExprError> {
        Ok(match self {
            Expr::Var(Var::Param(name)) => Expr::Const(
                *params
                    .get(name)
                    .ok_or_else(|| ExprError::UnknownSymbol(name.clone()))?,
            ),
            Expr::Const(_) | Expr::Var(_) => self.clone(),
            Expr::Unary(op, e) => diff::unary(*op, e.substitute_params(params)?),
            Expr::Binary(op, l, r) => {
                diff::binary(*op, l.substitute_params(params)?, r.substitute_params(params)?)
            }
        })
    }

    pub fn differentiate(&self, var: &Var) -> Result<Expr, ExprError> {
        diff::differentiate(self, var)
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Const(c) if *c < 0.0 => 0,
            Expr::Const(_) | Expr::Var(_) => 5,
            Expr::Unary(UnaryOp::Neg, _) => 3,
            Expr::Unary(..) => 5,
            Expr::Binary(op, ..) => op.precedence(),
        }
    }
}

fn write_operand(f: &mut fmt::Formatter<'_>, e: &Expr, parens: bool) -> fmt::Result {
    if parens {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) if *c < 0.0 => write!(f, "({c:?})"),
            Expr::Const(c) => write!(f, "{c:?}"),
            Expr::Var(v) => write!(f, "{v}"),
            Expr::Unary(UnaryOp::Neg, e) => {
                f.write_str("-")?;
                write_operand(f, e, e.precedence() < 3)
            }
            Expr::Unary(op, e) => write!(f, "{}({e})", op.name()),
            Expr::Binary(op, l, r) => {
                let p = op.precedence();
                let left_parens = if *op == BinaryOp::Pow {
                    l.precedence() <= p
                } else {
                    l.precedence() < p
                };
                write_operand(f, l, left_parens)?;
                write!(f, " {} ", op.symbol())?;
                write_operand(f, r, r.precedence() <= p)
            }
        }
    }
}

/// Names that may appear in an expression.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SymbolTable {
    pub state_dim: usize,
    pub input_dim: usize,
    pub params: BTreeMap<String, f64>,
}

impl SymbolTable {
    pub fn new(state_dim: usize, input_dim: usize) -> Self {
        Self {
            state_dim,
            input_dim,
            params: BTreeMap::new(),
        }
    }

    pub fn with_params(mut self, params: BTreeMap<String, f64>) -> Self {
        self.params = params;
        self
    }

    pub fn resolve(&self, name: &str) -> Option<Var> {
        let indexed = |prefix: char, dim: usize| -> Option<usize> {
            let rest = name.strip_prefix(prefix)?;
            if rest.is_empty() || rest.starts_with('0') || !rest.bytes().all(|b| b.is_ascii_digit()) {
                return None;
            }
            let i: usize = rest.parse().ok()?;
            (1..=dim).contains(&i).then_some(i - 1)
        };
        if let Some(i) = indexed('x', self.state_dim) {
            return Some(Var::State(i));
        }
        if let Some(i) = indexed('u', self.input_dim) {
            return Some(Var::Input(i));
        }
        self.params.contains_key(name).then(|| Var::Param(name.to_string()))
    }
}

/// `ẋ = f(x, u)`, one expression per state, parameters already substituted.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    components: Vec<Expr>,
    state_dim: usize,
    input_dim: usize,
}

/// Symbolic Jacobians `∂f/∂x` (n×n) and `∂f/∂u` (n×m).
#[derive(Debug, Clone, PartialEq)]
pub struct Jacobian {
    pub jx: Vec<Vec<Expr>>,
    pub ju: Vec<Vec<Expr>>,
}

impl VectorField {
    pub fn new(components: Vec<Expr>, symbols: &SymbolTable) -> Result<Self, ExprError> {
        if components.len() != symbols.state_dim {
            return Err(ExprError::Arity {
                expected: symbols.state_dim,
                got: components.len(),
            });
        }
        let components = components
            .iter()
            .map(|e| e.substitute_params(&symbols.params))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            components,
            state_dim: symbols.state_dim,
            input_dim: symbols.input_dim,
        })
    }

    pub fn parse(texts: &[impl AsRef<str>], symbols: &SymbolTable) -> Result<Self, ExprError> {
        let exprs = texts
            .iter()
            .map(|t| parse(t.as_ref(), symbols))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(exprs, symbols)
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn components(&self) -> &[Expr] {
        &self.components
    }

    pub fn eval(&self, x: &[f64], u: &[f64]) -> Result<DVector<f64>, EvalError> {
        let p = Point { x, u };
        let mut out = DVector::zeros(self.state_dim);
        for (i, e) in self.components.iter().enumerate() {
            out[i] = e.evaluate(&p)?;
        }
        Ok(out)
    }

    pub fn jacobian(&self) -> Result<Jacobian, ExprError> {
        let mut jx = Vec::with_capacity(self.state_dim);
        let mut ju = Vec::with_capacity(self.state_dim);
        for f in &self.components {
            jx.push(
                (0..self.state_dim)
                    .map(|j| f.differentiate(&Var::State(j)))
                    .collect::<Result<Vec<_>, _>>()?,
            );
            ju.push(
                (0..self.input_dim)
                    .map(|j| f.differentiate(&Var::Input(j)))
                    .collect::<Result<Vec<_>, _>>()?,
            );
        }
        Ok(Jacobian { jx, ju })
    }
}

impl Jacobian {
    pub fn parse(
        jx: &[Vec<String>],
        ju: &[Vec<String>],
        symbols: &SymbolTable,
    ) -> Result<Self, ExprError> {
        let (n, m) = (symbols.state_dim, symbols.input_dim);
        let grid = |rows: &[Vec<String>], cols: usize| -> Result<Vec<Vec<Expr>>, ExprError> {
            if rows.len() != n {
                return Err(ExprError::Arity { expected: n, got: rows.len() });
            }
            rows.iter()
                .map(|r| {
                    if r.len() != cols {
                        return Err(ExprError::Arity { expected: cols, got: r.len() });
                    }
                    r.iter()
                        .map(|t| parse(t, symbols)?.substitute_params(&symbols.params))
                        .collect()
                })
                .collect()
        };
        Ok(Self {
            jx: grid(jx, n)?,
            ju: grid(ju, m)?,
        })
    }

    pub fn eval(&self, x: &[f64], u: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>), EvalError> {
        let p = Point { x, u };
        let n = self.jx.len();
        let m = self.ju.first().map_or(0, |r| r.len());
        let mut jx = DMatrix::zeros(n, n);
        let mut ju = DMatrix::zeros(n, m);
        for i in 0..n {
            for j in 0..n {
                jx[(i, j)] = self.jx[i][j].evaluate(&p)?;
            }
            for j in 0..m {
                ju[(i, j)] = self.ju[i][j].evaluate(&p)?;
            }
        }
        Ok((jx, ju))
    }

    /// Compares against `other` at `points` pseudo-random points of
    /// `x_box × u_box` (seeded, so repeatable). Points where either side fails
    /// to evaluate are skipped.
    pub fn cross_check(
        &self,
        other: &Jacobian,
        x_box: &BoxSet,
        u_box: &BoxSet,
        points: usize,
        tol: f64,
    ) -> Result<(), ExprError> {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let sample = |rng: &mut ChaCha8Rng, b: &BoxSet| -> Vec<f64> {
            (0..b.dim())
                .map(|i| {
                    let (lo, hi) = (b.lo()[i], b.hi()[i]);
                    if hi > lo {
                        rng.gen_range(lo..=hi)
                    } else {
                        lo
                    }
                })
                .collect()
        };
        for _ in 0..points {
            let x = sample(&mut rng, x_box);
            let u = sample(&mut rng, u_box);
            let (Ok((ax, au)), Ok((bx, bu))) = (self.eval(&x, &u), other.eval(&x, &u)) else {
                continue;
            };
            for (name, a, b) in [("jacobian_x", &ax, &bx), ("jacobian_u", &au, &bu)] {
                for i in 0..a.nrows() {
                    for j in 0..a.ncols() {
                        let (s, d) = (a[(i, j)], b[(i, j)]);
                        if (s - d).abs() > tol * d.abs().max(1.0) {
                            let mut point = x.clone();
                            point.extend(&u);
                            return Err(ExprError::JacobianMismatch {
                                matrix: name,
                                row: i,
                                col: j,
                                supplied: s,
                                derived: d,
                                point,
                            });
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sym() -> SymbolTable {
        SymbolTable::new(2, 1)
    }

    fn env(pairs: &[(&str, f64)]) -> HashMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn evaluation_basics() {
        let e = parse("x1+1", &sym()).unwrap();
        assert_eq!(e.evaluate(&env(&[("x1", 2.0)])).unwrap(), 3.0);
        assert_eq!(parse("sin(0)", &sym()).unwrap().evaluate(&env(&[])).unwrap(), 0.0);
        let log = parse("log(x1)", &sym()).unwrap();
        assert!(matches!(log.evaluate(&env(&[("x1", -1.0)])), Err(EvalError::DomainViolation(_))));
        assert!(matches!(e.evaluate(&env(&[])), Err(EvalError::MissingVar(_))));
        let div = parse("1/x1", &sym()).unwrap();
        assert!(div.evaluate(&env(&[("x1", 0.0)])).is_err());
    }

    #[test]
    fn params_resolve_and_substitute() {
        let mut params = BTreeMap::new();
        params.insert("k".to_string(), 2.5);
        let s = sym().with_params(params);
        let f = VectorField::parse(&["k*x2", "-k*x1 + u1"], &s).unwrap();
        let v = f.eval(&[1.0, 2.0], &[0.5]).unwrap();
        assert_eq!(v[0], 5.0);
        assert_eq!(v[1], -2.0);
    }

    #[test]
    fn symbol_table_bounds() {
        let s = sym();
        assert_eq!(s.resolve("x2"), Some(Var::State(1)));
        assert_eq!(s.resolve("x3"), None);
        assert_eq!(s.resolve("x0"), None);
        assert_eq!(s.resolve("x01"), None);
        assert_eq!(s.resolve("u1"), Some(Var::Input(0)));
    }

    #[test]
    fn arity_is_checked() {
        assert!(matches!(
            VectorField::parse(&["x2"], &sym()),
            Err(ExprError::Arity { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn double_integrator_jacobian() {
        let f = VectorField::parse(&["x2", "u1"], &sym()).unwrap();
        let j = f.jacobian().unwrap();
        let (jx, ju) = j.eval(&[0.3, -0.2], &[0.1]).unwrap();
        assert_eq!(jx, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]));
        assert_eq!(ju, DMatrix::from_row_slice(2, 1, &[0.0, 1.0]));
        assert_eq!(j.jx[0][1], Expr::Const(1.0));
        assert_eq!(j.jx[1][1], Expr::Const(0.0));
    }

    #[test]
    fn linear_field_jacobian_is_constant() {
        let f = VectorField::parse(&["-2*x1 + 0.5*x2 + 3*u1", "x1 - x2"], &sym()).unwrap();
        let j = f.jacobian().unwrap();
        for p in [[0.0, 0.0], [1.0, -4.0], [100.0, 3.0]] {
            let (jx, ju) = j.eval(&p, &[7.0]).unwrap();
            assert_eq!(jx, DMatrix::from_row_slice(2, 2, &[-2.0, 0.5, 1.0, -1.0]));
            assert_eq!(ju, DMatrix::from_row_slice(2, 1, &[3.0, 0.0]));
        }
    }

    #[test]
    fn cross_check_catches_transcription_error() {
        let s = sym();
        let f = VectorField::parse(&["x2", "-sin(x1) + u1"], &s).unwrap();
        let derived = f.jacobian().unwrap();
        let good = Jacobian::parse(
            &[vec!["0".into(), "1".into()], vec!["-cos(x1)".into(), "0".into()]],
            &[vec!["0".into()], vec!["1".into()]],
            &s,
        )
        .unwrap();
        let bad = Jacobian::parse(
            &[vec!["0".into(), "1".into()], vec!["cos(x1)".into(), "0".into()]],
            &[vec!["0".into()], vec!["1".into()]],
            &s,
        )
        .unwrap();
        let xb = BoxSet::cube(2, 2.0);
        let ub = BoxSet::cube(1, 1.0);
        assert!(good.cross_check(&derived, &xb, &ub, 10, 1e-6).is_ok());
        assert!(matches!(
            bad.cross_check(&derived, &xb, &ub, 10, 1e-6),
            Err(ExprError::JacobianMismatch { row: 1, col: 0, .. })
        ));
    }
}
