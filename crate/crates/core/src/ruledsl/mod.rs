//! A closed expression language for filter-step programs.
//!
//! ```text
//! (rule :order update-predict
//!   (let y (- z (@ H x)))
//!   ...
//!   (out :P-post e :P-pred e :x-post e :x-pred e))
//! ```

use alloc::string::String;
use alloc::vec::Vec;

use crate::filters::StepOrder;

mod builtins;
mod exec;
mod parse;
mod print;
mod types;

pub use builtins::{builtin, builtin_library, builtin_pinned, canonical_kf_program, BUILTIN_NAMES};
pub use exec::{execute, ExecError};
pub use parse::{parse, ParseError, MAX_SOURCE_BYTES};
pub use print::{serialize, serialize_expr};
pub use types::{binding_types, expr_type, infer, input_type, typecheck, validate, Dim, Type, ValidationReport, Violation};

pub const MAX_NODES: usize = 256;
pub const MAX_DEPTH: usize = 16;
pub const MAX_CONST: f64 = 1e3;
/// Smallest denominator magnitude `/` will divide by.
pub const DIV_FLOOR: f64 = 1e-10;
/// `exp` clamps its argument to `[-EXP_CLAMP, EXP_CLAMP]`.
pub const EXP_CLAMP: f64 = 50.0;

/// Values every program may read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Input {
    X,
    P,
    Z,
    H,
    F,
    Q,
    R,
    /// `n x n` identity.
    I,
    /// `m x m` identity.
    Im,
    /// `n x m` identity (ones on the leading diagonal).
    Inm,
}

impl Input {
    pub const ALL: [Input; 10] = [
        Input::X,
        Input::P,
        Input::Z,
        Input::H,
        Input::F,
        Input::Q,
        Input::R,
        Input::I,
        Input::Im,
        Input::Inm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Input::X => "x",
            Input::P => "P",
            Input::Z => "z",
            Input::H => "H",
            Input::F => "F",
            Input::Q => "Q",
            Input::R => "R",
            Input::I => "I",
            Input::Im => "Im",
            Input::Inm => "Inm",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Input::ALL.iter().copied().find(|i| i.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    MatMul,
    Transpose,
    Inv,
    Mrdiv,
    Spd,
    Maximum,
    Minimum,
    Tanh,
    Abs,
    Sign,
    Exp,
    Sqrt,
    /// Elementwise integer power, exponent in `2..=4`.
    Pow(u8),
    /// `(clip e :hi h :lo l)`; args are `[e, hi, lo]`.
    Clip,
    Mean,
    Std,
    Norm,
    Max,
    Dot,
    Outer,
    Trace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arity {
    Unary,
    Binary,
    /// `+` and `*` accept two or more operands, folded left.
    Variadic,
    Clip,
}

impl Op {
    pub const NAMED: [Op; 26] = [
        Op::Add,
        Op::Sub,
        Op::Mul,
        Op::Div,
        Op::Neg,
        Op::MatMul,
        Op::Transpose,
        Op::Inv,
        Op::Mrdiv,
        Op::Spd,
        Op::Maximum,
        Op::Minimum,
        Op::Tanh,
        Op::Abs,
        Op::Sign,
        Op::Exp,
        Op::Sqrt,
        Op::Pow(2),
        Op::Clip,
        Op::Mean,
        Op::Std,
        Op::Norm,
        Op::Max,
        Op::Dot,
        Op::Outer,
        Op::Trace,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Op::Add => "+",
            Op::Sub => "-",
            Op::Mul => "*",
            Op::Div => "/",
            Op::Neg => "neg",
            Op::MatMul => "@",
            Op::Transpose => "T",
            Op::Inv => "inv",
            Op::Mrdiv => "mrdiv",
            Op::Spd => "spd",
            Op::Maximum => "maximum",
            Op::Minimum => "minimum",
            Op::Tanh => "tanh",
            Op::Abs => "abs",
            Op::Sign => "sign",
            Op::Exp => "exp",
            Op::Sqrt => "sqrt",
            Op::Pow(_) => "pow",
            Op::Clip => "clip",
            Op::Mean => "mean",
            Op::Std => "std",
            Op::Norm => "norm",
            Op::Max => "max",
            Op::Dot => "dot",
            Op::Outer => "outer",
            Op::Trace => "trace",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Op::NAMED.iter().copied().find(|o| o.name() == s)
    }

    pub fn arity(self) -> Arity {
        match self {
            Op::Add | Op::Mul => Arity::Variadic,
            Op::Sub | Op::Div | Op::MatMul | Op::Mrdiv | Op::Maximum | Op::Minimum | Op::Dot | Op::Outer => {
                Arity::Binary
            }
            Op::Clip => Arity::Clip,
            _ => Arity::Unary,
        }
    }

    /// Ops that can replace each other without changing the operand shapes.
    pub fn substitution_class(self) -> &'static [Op] {
        const ELEM_UNARY: &[Op] = &[Op::Tanh, Op::Abs, Op::Sign, Op::Sqrt, Op::Neg, Op::Exp];
        const ELEM_BINARY: &[Op] = &[Op::Add, Op::Sub, Op::Mul, Op::Div, Op::Maximum, Op::Minimum];
        const REDUCE: &[Op] = &[Op::Mean, Op::Std, Op::Norm, Op::Max];
        const POW: &[Op] = &[Op::Pow(2), Op::Pow(3), Op::Pow(4)];
        match self {
            Op::Tanh | Op::Abs | Op::Sign | Op::Sqrt | Op::Neg | Op::Exp => ELEM_UNARY,
            Op::Add | Op::Sub | Op::Mul | Op::Div | Op::Maximum | Op::Minimum => ELEM_BINARY,
            Op::Mean | Op::Std | Op::Norm | Op::Max => REDUCE,
            Op::Pow(_) => POW,
            _ => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Input(Input),
    Var(String),
    Call(Op, Vec<Expr>),
}

impl Expr {
    pub fn call(op: Op, args: Vec<Expr>) -> Expr {
        Expr::Call(op, args)
    }

    pub fn var(name: &str) -> Expr {
        Expr::Var(String::from(name))
    }

    pub fn node_count(&self) -> usize {
        match self {
            Expr::Call(_, args) => 1 + args.iter().map(Expr::node_count).sum::<usize>(),
            _ => 1,
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Expr::Call(_, args) => 1 + args.iter().map(Expr::depth).max().unwrap_or(0),
            _ => 1,
        }
    }

    /// Visits every node in preorder.
    pub fn walk<'a>(&'a self, f: &mut dyn FnMut(&'a Expr)) {
        f(self);
        if let Expr::Call(_, args) = self {
            for a in args {
                a.walk(f);
            }
        }
    }

    pub fn walk_mut(&mut self, f: &mut dyn FnMut(&mut Expr)) {
        f(self);
        if let Expr::Call(_, args) = self {
            for a in args {
                a.walk_mut(f);
            }
        }
    }

    pub fn mentions(&self, name: &str) -> bool {
        let mut hit = false;
        self.walk(&mut |e| {
            if let Expr::Var(v) = e {
                if v == name {
                    hit = true;
                }
            }
        });
        hit
    }
}

/// Shorthand constructors used by the builtins and the mutator.
pub mod build {
    use super::*;
    use alloc::vec;

    pub fn c(v: f64) -> Expr {
        Expr::Const(v)
    }
    pub fn i(inp: Input) -> Expr {
        Expr::Input(inp)
    }
    pub fn v(name: &str) -> Expr {
        Expr::var(name)
    }
    pub fn un(op: Op, a: Expr) -> Expr {
        Expr::Call(op, vec![a])
    }
    pub fn bin(op: Op, a: Expr, b: Expr) -> Expr {
        Expr::Call(op, vec![a, b])
    }
    pub fn add(a: Expr, b: Expr) -> Expr {
        bin(Op::Add, a, b)
    }
    pub fn sub(a: Expr, b: Expr) -> Expr {
        bin(Op::Sub, a, b)
    }
    pub fn mul(a: Expr, b: Expr) -> Expr {
        bin(Op::Mul, a, b)
    }
    pub fn mm(a: Expr, b: Expr) -> Expr {
        bin(Op::MatMul, a, b)
    }
    pub fn t(a: Expr) -> Expr {
        un(Op::Transpose, a)
    }
    pub fn clip(a: Expr, lo: f64, hi: f64) -> Expr {
        Expr::Call(Op::Clip, vec![a, c(hi), c(lo)])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outputs {
    pub p_post: Expr,
    pub p_pred: Expr,
    pub x_post: Expr,
    pub x_pred: Expr,
}

impl Outputs {
    /// In serialization (byte-sorted keyword) order.
    pub fn iter(&self) -> [(&'static str, &Expr); 4] {
        [
            ("P-post", &self.p_post),
            ("P-pred", &self.p_pred),
            ("x-post", &self.x_post),
            ("x-pred", &self.x_pred),
        ]
    }

    pub fn iter_mut(&mut self) -> [&mut Expr; 4] {
        [&mut self.p_post, &mut self.p_pred, &mut self.x_post, &mut self.x_pred]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleProgram {
    pub order: StepOrder,
    pub bindings: Vec<(String, Expr)>,
    pub outputs: Outputs,
}

impl RuleProgram {
    pub fn node_count(&self) -> usize {
        self.bindings.iter().map(|(_, e)| e.node_count()).sum::<usize>()
            + self.outputs.iter().iter().map(|(_, e)| e.node_count()).sum::<usize>()
    }

    pub fn depth(&self) -> usize {
        self.bindings
            .iter()
            .map(|(_, e)| e.depth())
            .chain(self.outputs.iter().iter().map(|(_, e)| e.depth()))
            .max()
            .unwrap_or(0)
    }

    /// Every expression root in node-id order: bindings first, then outputs.
    pub fn roots(&self) -> Vec<&Expr> {
        let mut v: Vec<&Expr> = self.bindings.iter().map(|(_, e)| e).collect();
        v.extend(self.outputs.iter().iter().map(|(_, e)| *e));
        v
    }

    pub fn roots_mut(&mut self) -> Vec<&mut Expr> {
        let mut v: Vec<&mut Expr> = self.bindings.iter_mut().map(|(_, e)| e).collect();
        v.extend(self.outputs.iter_mut());
        v
    }

    pub fn binding(&self, name: &str) -> Option<&Expr> {
        self.bindings.iter().find(|(n, _)| n == name).map(|(_, e)| e)
    }

    /// Drops bindings no output depends on.
    pub fn prune_unused(&mut self) {
        loop {
            let mut removed = false;
            let mut idx = self.bindings.len();
            while idx > 0 {
                idx -= 1;
                let name = self.bindings[idx].0.clone();
                let used = self.bindings[idx + 1..].iter().any(|(_, e)| e.mentions(&name))
                    || self.outputs.iter().iter().any(|(_, e)| e.mentions(&name));
                if !used {
                    self.bindings.remove(idx);
                    removed = true;
                }
            }
            if !removed {
                break;
            }
        }
    }
}

impl core::fmt::Display for RuleProgram {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(&serialize(self))
    }
}

impl core::str::FromStr for RuleProgram {
    type Err = ParseError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s)
    }
}

impl crate::filters::StepRule for RuleProgram {
    fn order(&self) -> StepOrder {
        self.order
    }

    fn step(
        &self,
        ctx: &crate::filters::FilterContext<'_>,
    ) -> Result<crate::filters::StepOutput, crate::filters::FilterError> {
        execute(self, ctx).map_err(Into::into)
    }
}
