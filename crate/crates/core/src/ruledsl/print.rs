use alloc::string::String;
use core::fmt::Write;

use super::{Expr, Op, RuleProgram};
use crate::filters::StepOrder;

fn number(out: &mut String, v: f64) {
    // 17 significant digits round-trip every f64
    let _ = write!(out, "{:.16e}", v);
}

fn expr(out: &mut String, e: &Expr) {
    match e {
        Expr::Const(v) => number(out, *v),
        Expr::Input(i) => out.push_str(i.name()),
        Expr::Var(n) => out.push_str(n),
        Expr::Call(Op::Pow(k), args) => {
            out.push_str("(pow ");
            expr(out, &args[0]);
            let _ = write!(out, " {})", k);
        }
        Expr::Call(Op::Clip, args) => {
            out.push_str("(clip ");
            expr(out, &args[0]);
            out.push_str(" :hi ");
            expr(out, &args[1]);
            out.push_str(" :lo ");
            expr(out, &args[2]);
            out.push(')');
        }
        Expr::Call(op, args) => {
            out.push('(');
            out.push_str(op.name());
            for a in args {
                out.push(' ');
                expr(out, a);
            }
            out.push(')');
        }
    }
}

pub fn serialize_expr(e: &Expr) -> String {
    let mut s = String::new();
    expr(&mut s, e);
    s
}

/// Canonical text form: one binding per line, outputs in byte order of
/// their keywords.
pub fn serialize(p: &RuleProgram) -> String {
    let mut out = String::new();
    out.push_str("(rule :order ");
    out.push_str(match p.order {
        StepOrder::UpdatePredict => "update-predict",
        StepOrder::PredictUpdate => "predict-update",
    });
    for (name, e) in &p.bindings {
        out.push_str("\n  (let ");
        out.push_str(name);
        out.push(' ');
        expr(&mut out, e);
        out.push(')');
    }
    out.push_str("\n  (out");
    for (kw, e) in p.outputs.iter() {
        out.push_str("\n    :");
        out.push_str(kw);
        out.push(' ');
        expr(&mut out, e);
    }
    out.push_str("))\n");
    out
}
