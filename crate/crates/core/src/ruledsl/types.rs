use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::{Expr, Input, Op, RuleProgram, MAX_CONST, MAX_DEPTH, MAX_NODES};

/// Symbolic dimension: state size `N` or observation size `M`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dim {
    N,
    M,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Type {
    Scalar,
    Vec(Dim),
    Mat(Dim, Dim),
}

impl core::fmt::Display for Type {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Type::Scalar => f.write_str("scalar"),
            Type::Vec(d) => write!(f, "vec[{d:?}]"),
            Type::Mat(a, b) => write!(f, "mat[{a:?}x{b:?}]"),
        }
    }
}

pub fn input_type(i: Input) -> Type {
    use Dim::*;
    match i {
        Input::X => Type::Vec(N),
        Input::Z => Type::Vec(M),
        Input::P | Input::F | Input::Q | Input::I => Type::Mat(N, N),
        Input::H => Type::Mat(M, N),
        Input::R | Input::Im => Type::Mat(M, M),
        Input::Inm => Type::Mat(N, M),
    }
}

fn elementwise(a: Type, b: Type) -> Option<Type> {
    match (a, b) {
        (Type::Scalar, t) | (t, Type::Scalar) => Some(t),
        (x, y) if x == y => Some(x),
        _ => None,
    }
}

/// Result type of `op` applied to operands of the given types.
pub fn infer(op: Op, args: &[Type]) -> Result<Type, String> {
    let bad = || {
        let shown: Vec<String> = args.iter().map(|t| t.to_string()).collect();
        format!("`{}` cannot take ({})", op.name(), shown.join(", "))
    };
    match op {
        Op::Add | Op::Mul => {
            let mut acc = args[0];
            for t in &args[1..] {
                acc = elementwise(acc, *t).ok_or_else(bad)?;
            }
            Ok(acc)
        }
        Op::Sub | Op::Div | Op::Maximum | Op::Minimum => elementwise(args[0], args[1]).ok_or_else(bad),
        Op::Neg | Op::Tanh | Op::Abs | Op::Sign | Op::Exp | Op::Sqrt | Op::Pow(_) => Ok(args[0]),
        Op::Clip => {
            if args[1] == Type::Scalar && args[2] == Type::Scalar {
                Ok(args[0])
            } else {
                Err(bad())
            }
        }
        Op::MatMul => match (args[0], args[1]) {
            (Type::Mat(a, b), Type::Mat(c, d)) if b == c => Ok(Type::Mat(a, d)),
            (Type::Mat(a, b), Type::Vec(c)) if b == c => Ok(Type::Vec(a)),
            _ => Err(bad()),
        },
        Op::Transpose => match args[0] {
            Type::Mat(a, b) => Ok(Type::Mat(b, a)),
            _ => Err(bad()),
        },
        Op::Inv | Op::Spd => match args[0] {
            Type::Mat(a, b) if a == b => Ok(args[0]),
            _ => Err(bad()),
        },
        Op::Mrdiv => match (args[0], args[1]) {
            (Type::Mat(a, b), Type::Mat(c, d)) if b == c && c == d => Ok(Type::Mat(a, b)),
            _ => Err(bad()),
        },
        Op::Mean | Op::Std | Op::Norm | Op::Max => Ok(Type::Scalar),
        Op::Dot => match (args[0], args[1]) {
            (Type::Vec(a), Type::Vec(b)) if a == b => Ok(Type::Scalar),
            _ => Err(bad()),
        },
        Op::Outer => match (args[0], args[1]) {
            (Type::Vec(a), Type::Vec(b)) => Ok(Type::Mat(a, b)),
            _ => Err(bad()),
        },
        Op::Trace => match args[0] {
            Type::Mat(a, b) if a == b => Ok(Type::Scalar),
            _ => Err(bad()),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub node: usize,
    pub rule: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationReport {
    pub ok: bool,
    pub violations: Vec<Violation>,
}

struct Checker<'a> {
    env: Vec<(&'a str, Type)>,
    next_id: usize,
    check_consts: bool,
    out: Vec<Violation>,
}

impl<'a> Checker<'a> {
    fn push(&mut self, node: usize, rule: String) {
        self.out.push(Violation { node, rule });
    }

    /// `None` means the subtree already produced a violation.
    fn expr(&mut self, e: &'a Expr) -> Option<Type> {
        let id = self.next_id;
        self.next_id += 1;
        match e {
            Expr::Const(v) => {
                if self.check_consts && !(v.is_finite() && v.abs() <= MAX_CONST) {
                    self.push(id, format!("constant {v} outside [-1e3, 1e3]"));
                }
                Some(Type::Scalar)
            }
            Expr::Input(i) => Some(input_type(*i)),
            Expr::Var(name) => match self.env.iter().rev().find(|(n, _)| *n == name.as_str()) {
                Some((_, t)) => Some(*t),
                None => {
                    self.push(id, format!("unbound name `{name}`"));
                    None
                }
            },
            Expr::Call(op, args) => {
                let arity_ok = match op.arity() {
                    super::Arity::Unary => args.len() == 1,
                    super::Arity::Binary => args.len() == 2,
                    super::Arity::Variadic => args.len() >= 2,
                    super::Arity::Clip => args.len() == 3,
                };
                if let Op::Pow(k) = op {
                    if !(2..=4).contains(k) {
                        self.push(id, format!("pow exponent {k} not in 2..=4"));
                    }
                }
                let mut tys = Vec::with_capacity(args.len());
                let mut failed = false;
                for a in args {
                    match self.expr(a) {
                        Some(t) => tys.push(t),
                        None => failed = true,
                    }
                }
                if !arity_ok {
                    self.push(id, format!("wrong operand count for `{}`", op.name()));
                    return None;
                }
                if failed {
                    return None;
                }
                match infer(*op, &tys) {
                    Ok(t) => Some(t),
                    Err(msg) => {
                        self.push(id, msg);
                        None
                    }
                }
            }
        }
    }

    fn program(&mut self, p: &'a RuleProgram) {
        for (name, e) in &p.bindings {
            let root = self.next_id;
            if self.env.iter().any(|(n, _)| *n == name.as_str()) || super::Input::from_name(name).is_some() {
                self.push(root, format!("name `{name}` bound twice or shadows an input"));
            }
            if let Some(t) = self.expr(e) {
                self.env.push((name.as_str(), t));
            }
        }
        let want_p = Type::Mat(Dim::N, Dim::N);
        let want_x = Type::Vec(Dim::N);
        for (kw, e) in p.outputs.iter() {
            let root = self.next_id;
            let want = if kw.starts_with('P') { want_p } else { want_x };
            if let Some(t) = self.expr(e) {
                if t != want {
                    self.push(root, format!("output :{kw} must be {want}, found {t}"));
                }
            }
        }
    }
}

fn check(p: &RuleProgram, check_consts: bool) -> Vec<Violation> {
    let mut c = Checker { env: Vec::new(), next_id: 0, check_consts, out: Vec::new() };
    c.program(p);
    c.out
}

/// Dimension and name checks only; the first violation is returned.
pub fn typecheck(p: &RuleProgram) -> Result<(), Violation> {
    match check(p, false).into_iter().next() {
        Some(v) => Err(v),
        None => Ok(()),
    }
}

/// Full check: limits, constant range, names and dimensions.
pub fn validate(p: &RuleProgram) -> ValidationReport {
    let mut violations = Vec::new();
    let count = p.node_count();
    if count > MAX_NODES {
        violations.push(Violation { node: 0, rule: format!("node count {count} exceeds {MAX_NODES}") });
    }
    let mut id = 0;
    for root in p.roots() {
        let d = root.depth();
        if d > MAX_DEPTH {
            violations.push(Violation { node: id, rule: format!("depth {d} exceeds {MAX_DEPTH}") });
        }
        id += root.node_count();
    }
    violations.extend(check(p, true));
    violations.sort_by_key(|v| v.node);
    ValidationReport { ok: violations.is_empty(), violations }
}

/// Type of each binding, in order; `None` if the program does not check.
pub fn binding_types(p: &RuleProgram) -> Option<Vec<(String, Type)>> {
    let mut c = Checker { env: Vec::new(), next_id: 0, check_consts: false, out: Vec::new() };
    c.program(p);
    if !c.out.is_empty() {
        return None;
    }
    Some(c.env.into_iter().map(|(n, t)| (n.to_string(), t)).collect())
}

/// Type of an expression under the bindings of `p` preceding index `upto`.
pub fn expr_type(p: &RuleProgram, upto: usize, e: &Expr) -> Option<Type> {
    let mut c = Checker { env: Vec::new(), next_id: 0, check_consts: false, out: Vec::new() };
    for (name, b) in p.bindings.iter().take(upto) {
        let t = c.expr(b)?;
        c.env.push((name.as_str(), t));
    }
    let t = c.expr(e);
    if c.out.is_empty() {
        t
    } else {
        None
    }
}
