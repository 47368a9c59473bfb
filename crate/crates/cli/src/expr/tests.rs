use std::collections::BTreeMap;

use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn parse(s: &str) -> Expr {
    parse_expr(s).unwrap_or_else(|e| panic!("{s}: {e}"))
}

fn bound(s: &str, params: &[(&str, f64)]) -> Expr {
    let p: BTreeMap<String, f64> = params.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    parse(s).bind(&p).unwrap()
}

fn x() -> Expr {
    Expr::new(Node::Var(Var::X), Pos::default())
}

fn bin(op: BinOp, a: Expr, b: Expr) -> Expr {
    Expr::new(Node::Bin(op, Box::new(a), Box::new(b)), Pos::default())
}

#[test]
fn zero_is_a_constant() {
    let e = parse("0");
    assert_eq!(e, Expr::num(0.0));
    assert_eq!(e.eval(3.0, 0.1).unwrap(), 0.0);
}

#[test]
fn canonical_drift_matches_closure() {
    let e = bound("(c/(2*eps))*indicator(-eps, eps, x)", &[("c", 1.0)]);
    let closure = |x: f64, eps: f64| {
        if x.abs() <= eps {
            1.0 / (2.0 * eps)
        } else {
            0.0
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let eps = rng.random_range(0.01..1.0);
        let x = rng.random_range(-2.0 * eps..2.0 * eps);
        assert_eq!(e.eval(x, eps).unwrap(), closure(x, eps), "x = {x}, eps = {eps}");
    }
    // edges of the indicator are closed
    assert_eq!(e.eval(0.1, 0.1).unwrap(), 5.0);
}

#[test]
fn dangling_operator_reports_column_four() {
    let err = parse_expr("x +").unwrap_err();
    assert_eq!(err.pos, Pos { line: 1, column: 4 });
    assert_eq!(err.found, "end of input");
    assert!(err.expected.iter().any(|t| t == "number"));
}

#[test]
fn positions_count_lines() {
    let err = parse_expr("x +\n  * 2").unwrap_err();
    assert_eq!(err.pos, Pos { line: 2, column: 3 });
}

#[test]
fn precedence_and_associativity() {
    // ^ above unary minus
    assert_eq!(
        parse("-x^2"),
        Expr::new(
            Node::Neg(Box::new(bin(BinOp::Pow, x(), Expr::num(2.0)))),
            Pos::default()
        )
    );
    assert_eq!(parse("-x^2").eval(3.0, 0.0).unwrap(), -9.0);
    assert_eq!(parse("2^3^2").eval(0.0, 0.0).unwrap(), 512.0);
    assert_eq!(parse("2^-1").eval(0.0, 0.0).unwrap(), 0.5);
    assert_eq!(parse("8-3-2").eval(0.0, 0.0).unwrap(), 3.0);
    assert_eq!(parse("8/4/2").eval(0.0, 0.0).unwrap(), 1.0);
    assert_eq!(parse("1+2*3").eval(0.0, 0.0).unwrap(), 7.0);
    assert_eq!(parse("-2*3").eval(0.0, 0.0).unwrap(), -6.0);
}

#[test]
fn number_literals() {
    assert_eq!(parse("1.5e-3").eval(0.0, 0.0).unwrap(), 1.5e-3);
    assert_eq!(parse("2E2").eval(0.0, 0.0).unwrap(), 200.0);
    assert_eq!(parse(".25").eval(0.0, 0.0).unwrap(), 0.25);
    assert!(parse_expr("1e999").is_err());
    assert!(parse_expr("1.2.3").is_err());
}

#[test]
fn functions() {
    let cases = [
        ("exp(x)", 1.0, 1f64.exp()),
        ("abs(x)", -2.0, 2.0),
        ("tanh(x)", 1.0, 1f64.tanh()),
        ("min(x, 1)", 3.0, 1.0),
        ("max(x, 1)", 3.0, 3.0),
        ("sgn(x)", -0.5, -1.0),
        ("sgn(x)", 0.0, 0.0),
        ("indicator(0, 1, x)", 1.0, 1.0),
        ("indicator(0, 1, x)", 1.5, 0.0),
    ];
    for (s, x, want) in cases {
        assert_eq!(parse(s).eval(x, f64::NAN).unwrap(), want, "{s} at {x}");
    }
}

#[test]
fn unknown_function_and_arity() {
    let err = parse_expr("1 + foo(x)").unwrap_err();
    assert_eq!(err.pos.column, 5);
    assert!(err.found.contains("foo"));
    let err = parse_expr("min(x)").unwrap_err();
    assert_eq!(err.pos.column, 1);
    assert_eq!(err.found, "1");
    assert!(parse_expr("exp(x, 1)").is_err());
    assert!(parse_expr("(x").is_err());
    assert!(parse_expr("x)").is_err());
    assert!(parse_expr("x $ 1").is_err());
    assert!(parse_expr("").is_err());
}

#[test]
fn eval_errors_are_positioned() {
    let e = parse("2 + 1/(x-1)");
    let err = e.eval(1.0, 0.0).unwrap_err();
    assert_eq!(err.pos, Pos { line: 1, column: 5 });
    assert!(err.message.contains("division by zero"));
    assert_abs_diff_eq!(e.eval(2.0, 0.0).unwrap(), 3.0);

    let err = parse("x^-1").eval(0.0, 0.0).unwrap_err();
    assert!(err.message.contains("negative power"));
    assert_eq!(err.pos.column, 1);
}

#[test]
fn binding_parameters() {
    let e = parse("c*x + k");
    let err = e.bind(&BTreeMap::from([("c".to_string(), 2.0)])).unwrap_err();
    assert_eq!(err.pos.column, 7);
    assert!(err.message.contains("`k`"));
    let b = bound("c*x + k", &[("c", 2.0), ("k", 1.0)]);
    assert_eq!(b.eval(3.0, 0.0).unwrap(), 7.0);
    // unbound parameters cannot be evaluated
    assert!(e.eval(1.0, 0.0).is_err());
}

#[test]
fn variable_references() {
    assert!(parse("eps*x").references_eps());
    assert!(!parse("2*x").references_eps());
    assert!(!parse("eps").references_x());
}

#[test]
fn printing_is_minimal_and_reparses() {
    let cases = [
        ("(x+1)*2", "(x+1)*2"),
        ("x-(1-x)", "x-(1-x)"),
        ("(x-1)-x", "x-1-x"),
        ("(-x)^2", "(-x)^2"),
        ("-(x^2)", "-x^2"),
        ("(2^3)^2", "(2^3)^2"),
        ("2^(3^2)", "2^3^2"),
        ("2^(-x)", "2^-x"),
        ("min(x,  eps )", "min(x, eps)"),
        ("x/(2*eps)", "x/(2*eps)"),
        ("-(-x)", "--x"),
    ];
    for (src, printed) in cases {
        let e = parse(src);
        assert_eq!(e.to_string(), printed, "{src}");
        assert_eq!(parse(printed), e, "{src}");
    }
}

fn check_derivative(s: &str, points: &[f64]) {
    let e = parse(s);
    let d = e.derivative().unwrap();
    for &x in points {
        let h = 1e-6;
        let fd = (e.eval(x + h, 0.3).unwrap() - e.eval(x - h, 0.3).unwrap()) / (2.0 * h);
        let got = d.eval(x, 0.3).unwrap();
        assert!(
            (got - fd).abs() < 1e-6 * (1.0 + fd.abs()),
            "{s}' at {x}: {got} vs {fd} ({d})"
        );
    }
}

#[test]
fn derivatives_match_finite_differences() {
    let pts = [-1.3, -0.4, 0.7, 1.9];
    for s in [
        "3*x + 2",
        "x + x^2",
        "x^3 - 2*x",
        "exp(2*x)",
        "exp(-x)*x",
        "tanh(x)",
        "abs(x)*x",
        "min(x, 2*x)",
        "max(x^2, 1)",
        "x/(1 + x^2)",
        "2^x",
        "(x^2 + 1)^0.5",
        "eps*x",
        "sgn(x) + 3*x",
    ] {
        check_derivative(s, &pts);
    }
}

#[test]
fn derivative_folds_constants() {
    assert_eq!(parse("5*x").derivative().unwrap(), Expr::num(5.0));
    assert_eq!(
        parse("x + x^2")
            .derivative()
            .unwrap()
            .derivative()
            .unwrap()
            .eval(0.4, 0.0)
            .unwrap(),
        2.0
    );
    assert_eq!(
        parse("exp(1)*x").derivative().unwrap().eval(0.0, 0.0).unwrap(),
        1f64.exp()
    );
    assert!(parse("x^x").derivative().is_err());
}

fn arb_expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (0u32..1000).prop_map(|n| Expr::num(n as f64 / 8.0)),
        Just(x()),
        Just(Expr::new(Node::Var(Var::Eps), Pos::default())),
        prop::sample::select(vec!["c", "k", "beta_1"])
            .prop_map(|s| Expr::new(Node::Param(s.to_string()), Pos::default())),
    ];
    leaf.prop_recursive(5, 48, 3, |inner| {
        let op = prop::sample::select(vec![BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Div, BinOp::Pow]);
        let func = prop::sample::select(vec![
            Func::Exp,
            Func::Abs,
            Func::Tanh,
            Func::Min,
            Func::Max,
            Func::Sgn,
            Func::Indicator,
        ]);
        prop_oneof![
            inner
                .clone()
                .prop_map(|a| Expr::new(Node::Neg(Box::new(a)), Pos::default())),
            (op, inner.clone(), inner.clone()).prop_map(|(o, a, b)| bin(o, a, b)),
            (func, prop::collection::vec(inner, 3)).prop_map(|(f, mut args)| {
                args.truncate(f.arity());
                Expr::new(Node::Call(f, args), Pos::default())
            }),
        ]
    })
}

proptest! {
    #[test]
    fn print_then_parse_recovers_the_tree(e in arb_expr()) {
        let printed = e.to_string();
        let back = parse_expr(&printed).map_err(|err| TestCaseError::fail(format!("{printed}: {err}")))?;
        prop_assert_eq!(&back, &e, "{}", printed);
        // and printing is then a fixed point
        prop_assert_eq!(back.to_string(), printed);
    }

    #[test]
    fn compiled_agrees_with_eval(e in arb_expr(), x in -3.0f64..3.0, eps in 0.01f64..1.0) {
        let p = BTreeMap::from([("c".to_string(), 1.5), ("k".to_string(), 0.0), ("beta_1".to_string(), -2.0)]);
        let e = e.bind(&p).unwrap();
        let f = e.compile();
        match e.eval(x, eps) {
            Ok(v) => prop_assert_eq!(f(x, eps).to_bits(), v.to_bits()),
            Err(_) => prop_assert!(f(x, eps).is_nan()),
        }
    }
}
