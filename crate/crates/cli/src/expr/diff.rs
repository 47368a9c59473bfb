//! Symbolic differentiation in `x`, with light constant folding.

use super::{BinOp, EvalError, Expr, Func, Node, Var};

fn num(v: f64) -> Expr {
    Expr::num(v)
}

fn as_num(e: &Expr) -> Option<f64> {
    match e.node {
        Node::Num(v) => Some(v),
        _ => None,
    }
}

fn bin(op: BinOp, a: Expr, b: Expr) -> Expr {
    let pos = a.pos;
    Expr::new(Node::Bin(op, Box::new(a), Box::new(b)), pos)
}

fn add(a: Expr, b: Expr) -> Expr {
    match (as_num(&a), as_num(&b)) {
        (Some(x), Some(y)) => num(x + y),
        (Some(0.0), _) => b,
        (_, Some(0.0)) => a,
        _ => bin(BinOp::Add, a, b),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (as_num(&a), as_num(&b)) {
        (Some(x), Some(y)) => num(x - y),
        (Some(0.0), _) => neg(b),
        (_, Some(0.0)) => a,
        _ => bin(BinOp::Sub, a, b),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (as_num(&a), as_num(&b)) {
        (Some(x), Some(y)) => num(x * y),
        (Some(0.0), _) | (_, Some(0.0)) => num(0.0),
        (Some(1.0), _) => b,
        (_, Some(1.0)) => a,
        _ => bin(BinOp::Mul, a, b),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    match (as_num(&a), as_num(&b)) {
        (Some(0.0), _) => num(0.0),
        (_, Some(1.0)) => a,
        _ => bin(BinOp::Div, a, b),
    }
}

fn neg(a: Expr) -> Expr {
    match as_num(&a) {
        Some(v) => num(-v),
        None => {
            let pos = a.pos;
            Expr::new(Node::Neg(Box::new(a)), pos)
        }
    }
}

fn call(f: Func, args: Vec<Expr>) -> Expr {
    let pos = args[0].pos;
    Expr::new(Node::Call(f, args), pos)
}

/// `d/dx` of `e`. `sgn` and `indicator` differentiate to 0 (almost
/// everywhere); `min`/`max` through `sgn` of the difference. Powers need a
/// constant exponent or a constant positive numeric base.
pub(super) fn derivative(e: &Expr) -> Result<Expr, EvalError> {
    let fail = |m: &str| EvalError {
        pos: e.pos,
        message: m.to_string(),
    };
    Ok(match &e.node {
        Node::Num(_) | Node::Param(_) | Node::Var(Var::Eps) => num(0.0),
        Node::Var(Var::X) => num(1.0),
        Node::Neg(a) => neg(derivative(a)?),
        Node::Bin(op, a, b) => {
            let (a, b) = (a.as_ref().clone(), b.as_ref().clone());
            match op {
                BinOp::Add => add(derivative(&a)?, derivative(&b)?),
                BinOp::Sub => sub(derivative(&a)?, derivative(&b)?),
                BinOp::Mul => {
                    let (da, db) = (derivative(&a)?, derivative(&b)?);
                    add(mul(da, b.clone()), mul(a, db))
                }
                BinOp::Div => {
                    let (da, db) = (derivative(&a)?, derivative(&b)?);
                    let top = sub(mul(da, b.clone()), mul(a, db));
                    div(top, bin(BinOp::Pow, b, num(2.0)))
                }
                BinOp::Pow => {
                    if !b.references_x() {
                        // n·a^(n-1)·a'
                        let da = derivative(&a)?;
                        let lowered = bin(BinOp::Pow, a, sub(b.clone(), num(1.0)));
                        mul(mul(b, lowered), da)
                    } else if !a.references_x() {
                        let base = as_num(&a).filter(|v| *v > 0.0).ok_or_else(|| {
                            fail("cannot differentiate a power with a non-constant base and x in the exponent")
                        })?;
                        let db = derivative(&b)?;
                        mul(mul(e.clone(), num(base.ln())), db)
                    } else {
                        return Err(fail("cannot differentiate a power with x in both base and exponent"));
                    }
                }
            }
        }
        Node::Call(f, args) => match f {
            Func::Sgn | Func::Indicator => num(0.0),
            Func::Exp => mul(e.clone(), derivative(&args[0])?),
            Func::Tanh => {
                let t2 = bin(BinOp::Pow, e.clone(), num(2.0));
                mul(sub(num(1.0), t2), derivative(&args[0])?)
            }
            Func::Abs => mul(call(Func::Sgn, vec![args[0].clone()]), derivative(&args[0])?),
            Func::Min | Func::Max => {
                let (a, b) = (&args[0], &args[1]);
                let (da, db) = (derivative(a)?, derivative(b)?);
                let s = call(Func::Sgn, vec![sub(a.clone(), b.clone())]);
                let spread = mul(s, sub(da.clone(), db.clone()));
                let sum = add(da, db);
                let both = if *f == Func::Max {
                    add(sum, spread)
                } else {
                    sub(sum, spread)
                };
                mul(num(0.5), both)
            }
        },
    })
}
