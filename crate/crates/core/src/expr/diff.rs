//! Symbolic differentiation with constant folding.

use super::{BinaryOp, Expr, ExprError, UnaryOp, Var};

fn c(v: f64) -> Expr {
    Expr::Const(v)
}

pub(crate) fn unary(op: UnaryOp, e: Expr) -> Expr {
    if let Expr::Const(v) = e {
        if let Ok(r) = op.apply(v) {
            return c(r);
        }
    }
    if op == UnaryOp::Neg {
        if let Expr::Unary(UnaryOp::Neg, inner) = e {
            return *inner;
        }
    }
    Expr::Unary(op, Box::new(e))
}

pub(crate) fn binary(op: BinaryOp, l: Expr, r: Expr) -> Expr {
    match op {
        BinaryOp::Add => add(l, r),
        BinaryOp::Sub => sub(l, r),
        BinaryOp::Mul => mul(l, r),
        BinaryOp::Div => div(l, r),
        BinaryOp::Pow => pow(l, r),
    }
}

fn fold(op: BinaryOp, l: &Expr, r: &Expr) -> Option<Expr> {
    match (l, r) {
        (Expr::Const(a), Expr::Const(b)) => op.apply(*a, *b).ok().map(c),
        _ => None,
    }
}

fn add(l: Expr, r: Expr) -> Expr {
    if let Some(v) = fold(BinaryOp::Add, &l, &r) {
        return v;
    }
    match (l.constant(), r.constant()) {
        (Some(0.0), _) => r,
        (_, Some(0.0)) => l,
        _ => Expr::Binary(BinaryOp::Add, Box::new(l), Box::new(r)),
    }
}

fn sub(l: Expr, r: Expr) -> Expr {
    if let Some(v) = fold(BinaryOp::Sub, &l, &r) {
        return v;
    }
    match (l.constant(), r.constant()) {
        (_, Some(0.0)) => l,
        (Some(0.0), _) => neg(r),
        _ => Expr::Binary(BinaryOp::Sub, Box::new(l), Box::new(r)),
    }
}

fn mul(l: Expr, r: Expr) -> Expr {
    if let Some(v) = fold(BinaryOp::Mul, &l, &r) {
        return v;
    }
    match (l.constant(), r.constant()) {
        (Some(0.0), _) | (_, Some(0.0)) => c(0.0),
        (Some(1.0), _) => r,
        (_, Some(1.0)) => l,
        (Some(-1.0), _) => neg(r),
        (_, Some(-1.0)) => neg(l),
        _ => Expr::Binary(BinaryOp::Mul, Box::new(l), Box::new(r)),
    }
}

fn div(l: Expr, r: Expr) -> Expr {
    if let Some(v) = fold(BinaryOp::Div, &l, &r) {
        return v;
    }
    match (l.constant(), r.constant()) {
        (Some(0.0), _) => c(0.0),
        (_, Some(1.0)) => l,
        _ => Expr::Binary(BinaryOp::Div, Box::new(l), Box::new(r)),
    }
}

fn pow(l: Expr, r: Expr) -> Expr {
    if let Some(v) = fold(BinaryOp::Pow, &l, &r) {
        return v;
    }
    match r.constant() {
        Some(0.0) => c(1.0),
        Some(1.0) => l,
        _ => Expr::Binary(BinaryOp::Pow, Box::new(l), Box::new(r)),
    }
}

fn neg(e: Expr) -> Expr {
    unary(UnaryOp::Neg, e)
}

pub(crate) fn differentiate(e: &Expr, var: &Var) -> Result<Expr, ExprError> {
    Ok(match e {
        Expr::Const(_) => c(0.0),
        Expr::Var(v) => c(if v == var { 1.0 } else { 0.0 }),
        Expr::Unary(op, inner) => {
            let d = differentiate(inner, var)?;
            if d.constant() == Some(0.0) {
                return Ok(c(0.0));
            }
            let g = (**inner).clone();
            let outer = match op {
                UnaryOp::Neg => return Ok(neg(d)),
                UnaryOp::Sin => unary(UnaryOp::Cos, g),
                UnaryOp::Cos => neg(unary(UnaryOp::Sin, g)),
                // 1 + tan²
                UnaryOp::Tan => add(c(1.0), pow(unary(UnaryOp::Tan, g), c(2.0))),
                UnaryOp::Exp => unary(UnaryOp::Exp, g),
                UnaryOp::Log => return Ok(div(d, g)),
                UnaryOp::Sqrt => {
                    return Ok(div(d, mul(c(2.0), unary(UnaryOp::Sqrt, g))));
                }
                UnaryOp::Abs => return Err(ExprError::UnsupportedOp(format!("{e}"))),
            };
            mul(outer, d)
        }
        Expr::Binary(op, l, r) => {
            let dl = differentiate(l, var)?;
            let dr = differentiate(r, var)?;
            let (l, r) = ((**l).clone(), (**r).clone());
            match op {
                BinaryOp::Add => add(dl, dr),
                BinaryOp::Sub => sub(dl, dr),
                BinaryOp::Mul => add(mul(dl, r), mul(l, dr)),
                BinaryOp::Div => div(sub(mul(dl, r.clone()), mul(l, dr)), pow(r, c(2.0))),
                // exponent is constant by construction
                BinaryOp::Pow => {
                    let lowered = sub(r.clone(), c(1.0));
                    mul(mul(r, pow(l, lowered)), dl)
                }
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse, SymbolTable};

    fn sym() -> SymbolTable {
        SymbolTable::new(2, 1)
    }

    fn d(text: &str, v: Var) -> Expr {
        parse(text, &sym()).unwrap().differentiate(&v).unwrap()
    }

    #[test]
    fn product_rule_folds() {
        assert_eq!(d("x1*x2", Var::State(0)), Expr::Var(Var::State(1)));
    }

    #[test]
    fn sine_to_cosine() {
        assert_eq!(d("sin(x1)", Var::State(0)).to_string(), "cos(x1)");
    }

    #[test]
    fn constants_vanish() {
        assert_eq!(d("3 + sin(x2)", Var::State(0)), Expr::Const(0.0));
        assert_eq!(d("x1 + 0", Var::State(0)), Expr::Const(1.0));
    }

    #[test]
    fn abs_rejected() {
        let e = parse("abs(x1)", &sym()).unwrap();
        assert!(matches!(e.differentiate(&Var::State(0)), Err(ExprError::UnsupportedOp(_))));
        // abs of something constant in the variable is fine
        assert_eq!(e.differentiate(&Var::State(1)).unwrap(), Expr::Const(0.0));
    }

    #[test]
    fn power_rule() {
        let e = d("x1^3", Var::State(0));
        assert!((e.eval_at(&[2.0, 0.0], &[0.0]).unwrap() - 12.0).abs() < 1e-12);
    }
}
