//! Property tests for the coefficient expression language: printing
//! round-trips through the parser, and the tree-walking evaluator agrees
//! with an independent stack-machine evaluator.

use proptest::prelude::*;

use orthant_core::expr::{parse, BinOp, Expr, ExprError, Func};

// ---------------------------------------------------------------------------
// reference evaluator: compile to postfix, evaluate with an explicit stack
// ---------------------------------------------------------------------------

enum Op {
    Push(f64),
    Load(usize),
    Neg,
    Bin(BinOp),
    Call(Func, usize),
}

fn compile(e: &Expr, out: &mut Vec<Op>) {
    match e {
        Expr::Lit(v) => out.push(Op::Push(*v)),
        Expr::Var(i) => out.push(Op::Load(*i - 1)),
        Expr::Neg(inner) => {
            compile(inner, out);
            out.push(Op::Neg);
        }
        Expr::Bin(op, l, r) => {
            compile(l, out);
            compile(r, out);
            out.push(Op::Bin(*op));
        }
        Expr::Call(f, args) => {
            for a in args {
                compile(a, out);
            }
            out.push(Op::Call(*f, args.len()));
        }
    }
}

fn stack_eval(e: &Expr, x: &[f64]) -> Result<f64, String> {
    let mut ops = Vec::new();
    compile(e, &mut ops);
    let mut stack: Vec<f64> = Vec::new();
    let real_pow = |base: f64, exp: f64| -> Result<f64, String> {
        if base < 0.0 && exp.fract() != 0.0 {
            return Err("neg base".into());
        }
        if base == 0.0 && exp < 0.0 {
            return Err("zero base".into());
        }
        Ok(base.powf(exp))
    };
    for op in ops {
        match op {
            Op::Push(v) => stack.push(v),
            Op::Load(i) => stack.push(x[i]),
            Op::Neg => {
                let v = stack.pop().unwrap();
                stack.push(-v);
            }
            Op::Bin(b) => {
                let rhs = stack.pop().unwrap();
                let lhs = stack.pop().unwrap();
                let v = match b {
                    BinOp::Add => lhs + rhs,
                    BinOp::Sub => lhs - rhs,
                    BinOp::Mul => lhs * rhs,
                    BinOp::Div => {
                        if rhs == 0.0 {
                            return Err("div by zero".into());
                        }
                        lhs / rhs
                    }
                    BinOp::Pow => real_pow(lhs, rhs)?,
                };
                stack.push(v);
            }
            Op::Call(f, argc) => {
                let args: Vec<f64> = stack.split_off(stack.len() - argc);
                let v = match f {
                    Func::Sqrt => {
                        if args[0] < 0.0 {
                            return Err("sqrt neg".into());
                        }
                        args[0].sqrt()
                    }
                    Func::Abs => args[0].abs(),
                    Func::Exp => args[0].exp(),
                    Func::Log => {
                        if args[0] <= 0.0 {
                            return Err("log nonpos".into());
                        }
                        args[0].ln()
                    }
                    Func::Min => args[0].min(args[1]),
                    Func::Max => args[0].max(args[1]),
                    Func::Pow => real_pow(args[0], args[1])?,
                };
                stack.push(v);
            }
        }
    }
    let v = stack.pop().unwrap();
    if v.is_finite() {
        Ok(v)
    } else {
        Err("non-finite".into())
    }
}

// ---------------------------------------------------------------------------
// generators
// ---------------------------------------------------------------------------

fn arb_expr(vars: usize) -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (0.0..10.0f64).prop_map(Expr::Lit),
        (1..=vars).prop_map(Expr::Var),
    ];
    leaf.prop_recursive(5, 48, 4, move |inner| {
        prop_oneof![
            inner.clone().prop_map(|e| Expr::Neg(Box::new(e))),
            (inner.clone(), inner.clone(), 0..5usize).prop_map(|(l, r, op)| {
                let op = [BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Div, BinOp::Pow][op];
                Expr::Bin(op, Box::new(l), Box::new(r))
            }),
            (inner.clone(), 0..4usize).prop_map(|(a, f)| {
                let f = [Func::Sqrt, Func::Abs, Func::Exp, Func::Log][f];
                Expr::Call(f, vec![a])
            }),
            (inner.clone(), inner, 0..3usize).prop_map(|(a, b, f)| {
                let f = [Func::Min, Func::Max, Func::Pow][f];
                Expr::Call(f, vec![a, b])
            }),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 300, ..ProptestConfig::default() })]

    /// print . parse . print is the identity on printed forms, and the
    /// reparsed tree is structurally identical.
    #[test]
    fn print_parse_round_trip(e in arb_expr(3)) {
        let printed = e.to_string();
        let reparsed = parse(&printed, 3).expect("printed form must parse");
        prop_assert_eq!(&reparsed, &e);
        prop_assert_eq!(reparsed.to_string(), printed);
    }

    /// The recursive evaluator agrees with the stack machine wherever both
    /// produce finite values, and they error together.
    #[test]
    fn evaluator_agrees_with_stack_machine(e in arb_expr(3), x in prop::array::uniform3(-5.0..5.0f64)) {
        match (e.evaluate(&x), stack_eval(&e, &x)) {
            (Ok(a), Ok(b)) => {
                let scale = a.abs().max(b.abs()).max(1.0);
                prop_assert!((a - b).abs() <= 1e-12 * scale, "{a} vs {b} for {e}");
            }
            (Err(ExprError::Domain { .. }), Err(_)) => {}
            (lhs, rhs) => prop_assert!(false, "divergent outcomes {lhs:?} vs {rhs:?} for {e}"),
        }
    }
}

/// Fixed-seed sweep: ten thousand (expression, input) pairs compared against
/// the stack machine within 1e-12 relative error.
#[test]
fn evaluator_agreement_bulk() {
    let mut state = 0x9E3779B97F4A7C15u64;
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state
    };
    let mut rand_f = |lo: f64, hi: f64| lo + (hi - lo) * (next() >> 11) as f64 / (1u64 << 53) as f64;

    fn gen_expr(rand_f: &mut dyn FnMut(f64, f64) -> f64, depth: usize, vars: usize) -> Expr {
        let pick = rand_f(0.0, 1.0);
        if depth == 0 || pick < 0.3 {
            if pick < 0.15 {
                Expr::Var(1 + (rand_f(0.0, vars as f64) as usize).min(vars - 1))
            } else {
                Expr::Lit((rand_f(-8.0, 8.0) * 16.0).round() / 16.0)
            }
        } else if pick < 0.45 {
            Expr::Neg(Box::new(gen_expr(rand_f, depth - 1, vars)))
        } else if pick < 0.8 {
            let op = [BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Div, BinOp::Pow]
                [(rand_f(0.0, 5.0) as usize).min(4)];
            Expr::Bin(
                op,
                Box::new(gen_expr(rand_f, depth - 1, vars)),
                Box::new(gen_expr(rand_f, depth - 1, vars)),
            )
        } else {
            let f = [Func::Sqrt, Func::Abs, Func::Exp, Func::Log, Func::Min, Func::Max, Func::Pow]
                [(rand_f(0.0, 7.0) as usize).min(6)];
            let mut args = vec![gen_expr(rand_f, depth - 1, vars)];
            if matches!(f, Func::Min | Func::Max | Func::Pow) {
                args.push(gen_expr(rand_f, depth - 1, vars));
            }
            Expr::Call(f, args)
        }
    }

    let mut checked = 0usize;
    for _ in 0..10_000 {
        let e = gen_expr(&mut rand_f, 4, 2);
        let x = [rand_f(-4.0, 4.0), rand_f(-4.0, 4.0)];
        match (e.evaluate(&x), stack_eval(&e, &x)) {
            (Ok(a), Ok(b)) => {
                let scale = a.abs().max(b.abs()).max(1.0);
                assert!((a - b).abs() <= 1e-12 * scale, "{a} vs {b} for {e}");
                checked += 1;
            }
            (Err(ExprError::Domain { .. }), Err(_)) => {}
            (lhs, rhs) => panic!("divergent outcomes {lhs:?} vs {rhs:?} for {e}"),
        }
    }
    // most draws must actually exercise the finite path
    assert!(checked > 4_000, "only {checked} finite evaluations");
}
