use std::fmt::Write;

use crate::ast::{BoolExpr, CmpOp, Expr, Process, Real};
use crate::linalg::{format_complex, Matrix};

// Binding levels, loosest first.
const SUM: u8 = 0;
const PAR: u8 = 1;
const POSTFIX: u8 = 2;
const PRIMARY: u8 = 3;

fn level(p: &Process) -> u8 {
    match p {
        Process::Sum(..) => SUM,
        Process::Parallel(..) => PAR,
        Process::Relabel { .. } | Process::Restrict { .. } => POSTFIX,
        _ => PRIMARY,
    }
}

/// Concrete syntax accepted by the parser; parsing the result gives back
/// the same term.
pub fn pretty(p: &Process) -> String {
    let mut out = String::new();
    process(p, SUM, &mut out);
    out
}

fn process(p: &Process, need: u8, out: &mut String) {
    if level(p) < need {
        out.push('(');
        process(p, SUM, out);
        out.push(')');
        return;
    }
    match p {
        Process::Nil => out.push_str("nil"),
        Process::CInput { chan, var, body } => {
            let _ = write!(out, "{chan}?{var}.");
            process(body, PRIMARY, out);
        }
        Process::COutput { chan, value, body } => {
            let _ = write!(out, "{chan}!");
            if matches!(value, Expr::Num(_) | Expr::Var(_)) {
                expr(value, 0, out);
            } else {
                out.push('(');
                expr(value, 0, out);
                out.push(')');
            }
            out.push('.');
            process(body, PRIMARY, out);
        }
        Process::QbitNew { var, body } => {
            let _ = write!(out, "qbit {var}.");
            process(body, PRIMARY, out);
        }
        Process::QInput { chan, var, body } => {
            let _ = write!(out, "qc {chan}?{var}.");
            process(body, PRIMARY, out);
        }
        Process::QOutput { chan, var, body } => {
            let _ = write!(out, "qc {chan}!{var}.");
            process(body, PRIMARY, out);
        }
        Process::Unitary { gate, qvars, body } => {
            let _ = write!(out, "{gate}[{}].", qvars.join(", "));
            process(body, PRIMARY, out);
        }
        Process::Measure { observable, qvars, var, body } => {
            let _ = write!(out, "{observable}[{}; {var}].", qvars.join(", "));
            process(body, PRIMARY, out);
        }
        Process::Sum(a, b) => {
            process(a, SUM, out);
            out.push_str(" + ");
            process(b, PAR, out);
        }
        Process::Parallel(a, b) => {
            process(a, PAR, out);
            out.push_str(" || ");
            process(b, POSTFIX, out);
        }
        Process::Relabel { body, relabeling } => {
            process(body, POSTFIX, out);
            let pairs: Vec<String> = relabeling.pairs().map(|(a, b)| format!("{a}->{b}")).collect();
            let _ = write!(out, "[{}]", pairs.join(", "));
        }
        Process::Restrict { body, chans } => {
            process(body, POSTFIX, out);
            let cs: Vec<String> = chans.iter().map(|c| c.to_string()).collect();
            let _ = write!(out, " \\ {{{}}}", cs.join(", "));
        }
        Process::If { cond, body } => {
            out.push_str("if ");
            boolean(cond, 0, out);
            out.push_str(" then ");
            process(body, PRIMARY, out);
        }
    }
}

fn num(v: Real, out: &mut String) {
    let _ = write!(out, "{v}");
}

fn expr(e: &Expr, need: u8, out: &mut String) {
    let lvl = match e {
        Expr::Add(..) | Expr::Sub(..) => 0,
        Expr::Mul(..) => 1,
        _ => 2,
    };
    if lvl < need {
        out.push('(');
        expr(e, 0, out);
        out.push(')');
        return;
    }
    match e {
        Expr::Num(v) => num(*v, out),
        Expr::Var(x) => out.push_str(x),
        Expr::Add(a, b) | Expr::Sub(a, b) => {
            expr(a, 0, out);
            out.push_str(if matches!(e, Expr::Add(..)) { " + " } else { " - " });
            expr(b, 1, out);
        }
        Expr::Mul(a, b) => {
            expr(a, 1, out);
            out.push_str(" * ");
            expr(b, 2, out);
        }
    }
}

fn boolean(b: &BoolExpr, need: u8, out: &mut String) {
    let lvl = match b {
        BoolExpr::Or(..) => 0,
        BoolExpr::And(..) => 1,
        _ => 2,
    };
    if lvl < need {
        out.push('(');
        boolean(b, 0, out);
        out.push(')');
        return;
    }
    match b {
        BoolExpr::Const(v) => out.push_str(if *v { "true" } else { "false" }),
        BoolExpr::Cmp(op, l, r) => {
            expr(l, 0, out);
            out.push_str(match op {
                CmpOp::Eq => " = ",
                CmpOp::Lt => " < ",
                CmpOp::Le => " <= ",
            });
            expr(r, 0, out);
        }
        BoolExpr::And(a, c) => {
            boolean(a, 1, out);
            out.push_str(" and ");
            boolean(c, 2, out);
        }
        BoolExpr::Or(a, c) => {
            boolean(a, 0, out);
            out.push_str(" or ");
            boolean(c, 1, out);
        }
        BoolExpr::Not(a) => {
            out.push_str("not ");
            boolean(a, 2, out);
        }
    }
}

/// A matrix literal in the source syntax.
pub fn matrix_literal(m: &Matrix) -> String {
    let rows: Vec<String> = m
        .to_rows()
        .iter()
        .map(|r| format!("[{}]", r.iter().map(|z| format_complex(*z)).collect::<Vec<_>>().join(", ")))
        .collect();
    format!("[{}]", rows.join(", "))
}
