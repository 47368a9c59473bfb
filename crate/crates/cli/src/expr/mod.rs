//! A small expression language for coefficient functions of `x` and `eps`.
//!
//! ```text
//! expr  := term (('+'|'-') term)*
//! term  := unary (('*'|'/') unary)*
//! unary := '-' unary | power
//! power := atom ('^' unary)?
//! atom  := number | ident | ident '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! `^` binds tighter than unary minus (`-x^2` is `-(x^2)`) and is
//! right-associative. Identifiers other than `x` and `eps` are parameters,
//! substituted by [`Expr::bind`].

mod diff;
mod parse;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use skewlab_core::transforms::ScalarCoefficient;

pub use parse::{parse_expr, SyntaxError};

/// 1-based source position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Pos {
    pub line: usize,
    pub column: usize,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}, column {}", self.line, self.column)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    X,
    Eps,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Abs,
    Tanh,
    Min,
    Max,
    Sgn,
    Indicator,
}

impl Func {
    pub fn lookup(name: &str) -> Option<Func> {
        Some(match name {
            "exp" => Func::Exp,
            "abs" => Func::Abs,
            "tanh" => Func::Tanh,
            "min" => Func::Min,
            "max" => Func::Max,
            "sgn" => Func::Sgn,
            "indicator" => Func::Indicator,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Abs => "abs",
            Func::Tanh => "tanh",
            Func::Min => "min",
            Func::Max => "max",
            Func::Sgn => "sgn",
            Func::Indicator => "indicator",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Exp | Func::Abs | Func::Tanh | Func::Sgn => 1,
            Func::Min | Func::Max => 2,
            Func::Indicator => 3,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Node {
    Num(f64),
    Var(Var),
    /// A parameter not yet substituted.
    Param(String),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

/// Expression tree; every node remembers where it started in the source.
#[derive(Debug, Clone)]
pub struct Expr {
    pub node: Node,
    pub pos: Pos,
}

/// Structural equality; positions are ignored.
impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        match (&self.node, &other.node) {
            (Node::Num(a), Node::Num(b)) => a == b,
            (Node::Var(a), Node::Var(b)) => a == b,
            (Node::Param(a), Node::Param(b)) => a == b,
            (Node::Neg(a), Node::Neg(b)) => a == b,
            (Node::Bin(o, a, b), Node::Bin(p, c, d)) => o == p && a == c && b == d,
            (Node::Call(f, a), Node::Call(g, b)) => f == g && a == b,
            _ => false,
        }
    }
}

/// A compiled expression: `(x, eps) ↦ value`.
pub type Compiled = Box<dyn Fn(f64, f64) -> f64 + Send + Sync>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{message} at {pos}")]
pub struct EvalError {
    pub pos: Pos,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{message} at {pos}")]
pub struct BindError {
    pub pos: Pos,
    pub message: String,
}

impl Expr {
    pub fn new(node: Node, pos: Pos) -> Self {
        Expr { node, pos }
    }

    pub fn num(v: f64) -> Self {
        Expr::new(Node::Num(v), Pos::default())
    }

    fn precedence(&self) -> u8 {
        match &self.node {
            Node::Bin(BinOp::Add | BinOp::Sub, ..) => 1,
            Node::Bin(BinOp::Mul | BinOp::Div, ..) => 2,
            Node::Neg(_) => 3,
            Node::Bin(BinOp::Pow, ..) => 4,
            Node::Num(v) if *v < 0.0 || (*v == 0.0 && v.is_sign_negative()) => 3,
            _ => 5,
        }
    }

    /// Whether the expression mentions `eps`.
    pub fn references_eps(&self) -> bool {
        self.any(&|n| matches!(n, Node::Var(Var::Eps)))
    }

    /// Whether the expression mentions `x`.
    pub fn references_x(&self) -> bool {
        self.any(&|n| matches!(n, Node::Var(Var::X)))
    }

    fn any(&self, pred: &dyn Fn(&Node) -> bool) -> bool {
        if pred(&self.node) {
            return true;
        }
        match &self.node {
            Node::Neg(a) => a.any(pred),
            Node::Bin(_, a, b) => a.any(pred) || b.any(pred),
            Node::Call(_, args) => args.iter().any(|a| a.any(pred)),
            _ => false,
        }
    }

    /// Substitutes parameter values; unknown names are errors.
    pub fn bind(&self, params: &BTreeMap<String, f64>) -> Result<Expr, BindError> {
        let node = match &self.node {
            Node::Param(name) => match params.get(name) {
                Some(&v) => Node::Num(v),
                None => {
                    return Err(BindError {
                        pos: self.pos,
                        message: format!("unknown identifier `{name}`"),
                    })
                }
            },
            Node::Neg(a) => Node::Neg(Box::new(a.bind(params)?)),
            Node::Bin(op, a, b) => Node::Bin(*op, Box::new(a.bind(params)?), Box::new(b.bind(params)?)),
            Node::Call(f, args) => Node::Call(*f, args.iter().map(|a| a.bind(params)).collect::<Result<_, _>>()?),
            other => other.clone(),
        };
        Ok(Expr::new(node, self.pos))
    }

    /// Evaluates a bound expression.
    pub fn eval(&self, x: f64, eps: f64) -> Result<f64, EvalError> {
        let fail = |message: String| EvalError { pos: self.pos, message };
        let v = match &self.node {
            Node::Num(v) => *v,
            Node::Var(Var::X) => x,
            Node::Var(Var::Eps) => eps,
            Node::Param(name) => return Err(fail(format!("unbound parameter `{name}`"))),
            Node::Neg(a) => -a.eval(x, eps)?,
            Node::Bin(op, a, b) => {
                let (l, r) = (a.eval(x, eps)?, b.eval(x, eps)?);
                match op {
                    BinOp::Add => l + r,
                    BinOp::Sub => l - r,
                    BinOp::Mul => l * r,
                    BinOp::Div => {
                        if r == 0.0 {
                            return Err(fail("division by zero".into()));
                        }
                        l / r
                    }
                    BinOp::Pow => {
                        if l == 0.0 && r < 0.0 {
                            return Err(fail("zero raised to a negative power".into()));
                        }
                        l.powf(r)
                    }
                }
            }
            Node::Call(f, args) => {
                let a = |i: usize| args[i].eval(x, eps);
                match f {
                    Func::Exp => a(0)?.exp(),
                    Func::Abs => a(0)?.abs(),
                    Func::Tanh => a(0)?.tanh(),
                    Func::Sgn => skewlab_core::piecewise::sgn(a(0)?),
                    Func::Min => a(0)?.min(a(1)?),
                    Func::Max => a(0)?.max(a(1)?),
                    Func::Indicator => {
                        let (lo, hi, v) = (a(0)?, a(1)?, a(2)?);
                        if lo <= v && v <= hi {
                            1.0
                        } else {
                            0.0
                        }
                    }
                }
            }
        };
        if v.is_finite() || !x.is_finite() {
            Ok(v)
        } else {
            Err(fail(format!("non-finite result {v}")))
        }
    }

    /// Compiles a bound expression into a closure for repeated evaluation.
    /// Wherever [`Expr::eval`] would fail the closure returns NaN.
    pub fn compile(&self) -> Compiled {
        let fail_nan = |v: f64| if v.is_finite() { v } else { f64::NAN };
        match &self.node {
            Node::Num(v) => {
                let v = *v;
                Box::new(move |_, _| v)
            }
            Node::Var(Var::X) => Box::new(|x, _| x),
            Node::Var(Var::Eps) => Box::new(|_, eps| eps),
            Node::Param(_) => Box::new(|_, _| f64::NAN),
            Node::Neg(a) => {
                let a = a.compile();
                Box::new(move |x, e| -a(x, e))
            }
            Node::Bin(op, a, b) => {
                let (a, b) = (a.compile(), b.compile());
                match op {
                    BinOp::Add => Box::new(move |x, e| fail_nan(a(x, e) + b(x, e))),
                    BinOp::Sub => Box::new(move |x, e| fail_nan(a(x, e) - b(x, e))),
                    BinOp::Mul => Box::new(move |x, e| fail_nan(a(x, e) * b(x, e))),
                    BinOp::Div => Box::new(move |x, e| {
                        let r = b(x, e);
                        if r == 0.0 {
                            f64::NAN
                        } else {
                            fail_nan(a(x, e) / r)
                        }
                    }),
                    BinOp::Pow => Box::new(move |x, e| {
                        let (l, r) = (a(x, e), b(x, e));
                        // powf(1, NaN) and powf(NaN, 0) are 1
                        if l.is_nan() || r.is_nan() || (l == 0.0 && r < 0.0) {
                            f64::NAN
                        } else {
                            fail_nan(l.powf(r))
                        }
                    }),
                }
            }
            Node::Call(f, args) => {
                let mut c: Vec<Compiled> = args.iter().map(Expr::compile).collect();
                match f {
                    Func::Exp => {
                        let a = c.remove(0);
                        Box::new(move |x, e| fail_nan(a(x, e).exp()))
                    }
                    Func::Abs => {
                        let a = c.remove(0);
                        Box::new(move |x, e| a(x, e).abs())
                    }
                    Func::Tanh => {
                        let a = c.remove(0);
                        Box::new(move |x, e| a(x, e).tanh())
                    }
                    Func::Sgn => {
                        let a = c.remove(0);
                        // NaN stands for an evaluation error and must survive sgn
                        Box::new(move |x, e| {
                            let v = a(x, e);
                            if v.is_nan() {
                                v
                            } else {
                                skewlab_core::piecewise::sgn(v)
                            }
                        })
                    }
                    Func::Min | Func::Max => {
                        let (a, b) = (c.remove(0), c.remove(0));
                        let is_max = *f == Func::Max;
                        Box::new(move |x, e| {
                            let (l, r) = (a(x, e), b(x, e));
                            if l.is_nan() || r.is_nan() {
                                f64::NAN
                            } else if is_max {
                                l.max(r)
                            } else {
                                l.min(r)
                            }
                        })
                    }
                    Func::Indicator => {
                        let (lo, hi, v) = (c.remove(0), c.remove(0), c.remove(0));
                        Box::new(move |x, e| {
                            let (lo, hi, v) = (lo(x, e), hi(x, e), v(x, e));
                            if lo.is_nan() || hi.is_nan() || v.is_nan() {
                                f64::NAN
                            } else if lo <= v && v <= hi {
                                1.0
                            } else {
                                0.0
                            }
                        })
                    }
                }
            }
        }
    }

    /// Symbolic derivative with respect to `x`.
    pub fn derivative(&self) -> Result<Expr, EvalError> {
        diff::derivative(self)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.node {
            Node::Num(v) => write!(f, "{v}"),
            Node::Var(Var::X) => write!(f, "x"),
            Node::Var(Var::Eps) => write!(f, "eps"),
            Node::Param(name) => write!(f, "{name}"),
            Node::Neg(a) => {
                if a.precedence() < 3 {
                    write!(f, "-({a})")
                } else {
                    write!(f, "-{a}")
                }
            }
            Node::Bin(op, a, b) => {
                let p = self.precedence();
                let (left_parens, right_parens) = match op {
                    BinOp::Pow => (a.precedence() < 5, b.precedence() < 3),
                    _ => (a.precedence() < p, b.precedence() <= p),
                };
                let wrap = |e: &Expr, parens: bool| {
                    if parens {
                        format!("({e})")
                    } else {
                        e.to_string()
                    }
                };
                write!(f, "{}{}{}", wrap(a, left_parens), op.symbol(), wrap(b, right_parens))
            }
            Node::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
        }
    }
}

/// Wraps a bound expression as a coefficient. Evaluation errors become NaN,
/// which the simulators report as non-finite states.
pub fn to_coefficient(label: &str, expr: Expr, breakpoints: Vec<Expr>) -> ScalarCoefficient {
    let f = expr.compile();
    let coeff = if expr.references_eps() {
        ScalarCoefficient::family(label, f)
    } else {
        ScalarCoefficient::state(label, move |x| f(x, f64::NAN))
    };
    if breakpoints.is_empty() {
        return coeff;
    }
    let bps = Arc::new(breakpoints);
    coeff.with_breakpoints(move |eps| bps.iter().map(|b| b.eval(0.0, eps).unwrap_or(f64::NAN)).collect())
}

#[cfg(test)]
mod tests;
