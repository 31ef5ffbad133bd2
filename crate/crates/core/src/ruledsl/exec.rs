use alloc::vec::Vec;

use super::{Expr, Input, Op, RuleProgram, DIV_FLOOR, EXP_CLAMP};
use crate::filters::{FilterContext, FilterError, StepOrder, StepOutput};
use crate::linalg::{self, Matrix, Vector};
use crate::statespace::{BeliefState, CovMat};

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum ExecError {
    #[error("non-finite value at node {node}")]
    NumericalFault { node: usize },
    #[error("operand shapes do not match at node {node}")]
    Shape { node: usize },
    #[error("unbound name at node {node}")]
    Unbound { node: usize },
}

impl From<ExecError> for FilterError {
    fn from(e: ExecError) -> Self {
        match e {
            ExecError::NumericalFault { node } => FilterError::NumericalFault { node },
            ExecError::Shape { .. } => FilterError::DimensionMismatch("rule operand shapes"),
            ExecError::Unbound { .. } => FilterError::DimensionMismatch("rule references an unbound name"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Value {
    S(f64),
    V(Vector),
    M(Matrix),
}

impl Value {
    fn finite(&self) -> bool {
        match self {
            Value::S(s) => s.is_finite(),
            Value::V(v) => v.iter().all(|x| x.is_finite()),
            Value::M(m) => m.iter().all(|x| x.is_finite()),
        }
    }

    fn map(self, f: impl Fn(f64) -> f64) -> Value {
        match self {
            Value::S(s) => Value::S(f(s)),
            Value::V(v) => Value::V(v.map(f)),
            Value::M(m) => Value::M(m.map(f)),
        }
    }

    fn elements(&self) -> &[f64] {
        match self {
            Value::S(s) => core::slice::from_ref(s),
            Value::V(v) => v.as_slice(),
            Value::M(m) => m.as_slice(),
        }
    }
}

fn zip(a: Value, b: Value, f: impl Fn(f64, f64) -> f64, node: usize) -> Result<Value, ExecError> {
    Ok(match (a, b) {
        (Value::S(x), Value::S(y)) => Value::S(f(x, y)),
        (Value::S(x), Value::V(v)) => Value::V(v.map(|y| f(x, y))),
        (Value::V(v), Value::S(y)) => Value::V(v.map(|x| f(x, y))),
        (Value::S(x), Value::M(m)) => Value::M(m.map(|y| f(x, y))),
        (Value::M(m), Value::S(y)) => Value::M(m.map(|x| f(x, y))),
        (Value::V(mut u), Value::V(v)) if u.len() == v.len() => {
            for (a, b) in u.iter_mut().zip(v.iter()) {
                *a = f(*a, *b);
            }
            Value::V(u)
        }
        (Value::M(mut u), Value::M(v)) if u.shape() == v.shape() => {
            for (a, b) in u.iter_mut().zip(v.iter()) {
                *a = f(*a, *b);
            }
            Value::M(u)
        }
        _ => return Err(ExecError::Shape { node }),
    })
}

fn guard_den(d: f64) -> f64 {
    if d.abs() >= DIV_FLOOR {
        d
    } else if d < 0.0 {
        -DIV_FLOOR
    } else {
        DIV_FLOOR
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation.
fn std(xs: &[f64]) -> f64 {
    let mu = mean(xs);
    let var = xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / xs.len() as f64;
    libm::sqrt(var)
}

struct Machine<'c, 'p> {
    ctx: &'c FilterContext<'c>,
    names: Vec<&'p str>,
    values: Vec<Value>,
    next_id: usize,
}

impl<'c, 'p> Machine<'c, 'p> {
    fn input(&self, i: Input) -> Value {
        let n = self.ctx.model.state_dim();
        let m = self.ctx.model.obs_dim();
        match i {
            Input::X => Value::V(self.ctx.belief.mean.clone()),
            Input::P => Value::M(self.ctx.belief.cov.matrix().clone()),
            Input::Z => Value::V(self.ctx.observation.clone()),
            Input::H => Value::M(self.ctx.h.clone()),
            Input::F => Value::M(self.ctx.model.transition().clone()),
            Input::Q => Value::M(self.ctx.model.process_noise().matrix().clone()),
            Input::R => Value::M(self.ctx.model.obs_noise().matrix().clone()),
            Input::I => Value::M(Matrix::identity(n, n)),
            Input::Im => Value::M(Matrix::identity(m, m)),
            Input::Inm => Value::M(Matrix::identity(n, m)),
        }
    }

    fn eval(&mut self, e: &Expr) -> Result<Value, ExecError> {
        let id = self.next_id;
        self.next_id += 1;
        let v = match e {
            Expr::Const(c) => Value::S(*c),
            Expr::Input(i) => self.input(*i),
            Expr::Var(name) => {
                let idx = self
                    .names
                    .iter()
                    .rposition(|n| *n == name.as_str())
                    .ok_or(ExecError::Unbound { node: id })?;
                self.values[idx].clone()
            }
            Expr::Call(op, args) => {
                let mut vals = Vec::with_capacity(args.len());
                for a in args {
                    vals.push(self.eval(a)?);
                }
                apply(*op, vals, id)?
            }
        };
        if !v.finite() {
            return Err(ExecError::NumericalFault { node: id });
        }
        Ok(v)
    }
}

fn apply(op: Op, mut vals: Vec<Value>, id: usize) -> Result<Value, ExecError> {
    let shape = ExecError::Shape { node: id };
    let fault = ExecError::NumericalFault { node: id };
    let second = |vals: &mut Vec<Value>| vals.pop().ok_or(ExecError::Shape { node: id });
    Ok(match op {
        Op::Add | Op::Mul => {
            let f = if op == Op::Add { |a: f64, b: f64| a + b } else { |a: f64, b: f64| a * b };
            let mut it = vals.into_iter();
            let mut acc = it.next().ok_or(shape)?;
            for v in it {
                acc = zip(acc, v, f, id)?;
            }
            acc
        }
        Op::Sub => {
            let b = second(&mut vals)?;
            zip(vals.pop().ok_or(shape)?, b, |a, b| a - b, id)?
        }
        Op::Div => {
            let b = second(&mut vals)?;
            zip(vals.pop().ok_or(shape)?, b, |a, b| a / guard_den(b), id)?
        }
        Op::Maximum => {
            let b = second(&mut vals)?;
            zip(vals.pop().ok_or(shape)?, b, f64::max, id)?
        }
        Op::Minimum => {
            let b = second(&mut vals)?;
            zip(vals.pop().ok_or(shape)?, b, f64::min, id)?
        }
        Op::Neg => vals.pop().ok_or(shape)?.map(|a| -a),
        Op::Tanh => vals.pop().ok_or(shape)?.map(libm::tanh),
        Op::Abs => vals.pop().ok_or(shape)?.map(|a| a.abs()),
        Op::Sign => vals.pop().ok_or(shape)?.map(sign),
        Op::Exp => vals.pop().ok_or(shape)?.map(|a| libm::exp(a.clamp(-EXP_CLAMP, EXP_CLAMP))),
        Op::Sqrt => vals.pop().ok_or(shape)?.map(|a| libm::sqrt(a.max(0.0))),
        Op::Pow(k) => vals.pop().ok_or(shape)?.map(|a| match k {
            2 => a * a,
            3 => a * a * a,
            _ => (a * a) * (a * a),
        }),
        Op::Clip => {
            let lo = match vals.pop() {
                Some(Value::S(s)) => s,
                _ => return Err(shape),
            };
            let hi = match vals.pop() {
                Some(Value::S(s)) => s,
                _ => return Err(shape),
            };
            vals.pop().ok_or(shape)?.map(|a| a.max(lo).min(hi))
        }
        Op::MatMul => {
            let b = second(&mut vals)?;
            match (vals.pop().ok_or(shape)?, b) {
                (Value::M(a), Value::M(b)) if a.ncols() == b.nrows() => Value::M(a * b),
                (Value::M(a), Value::V(b)) if a.ncols() == b.len() => Value::V(a * b),
                _ => return Err(shape),
            }
        }
        Op::Transpose => match vals.pop().ok_or(shape)? {
            Value::M(a) => Value::M(a.transpose()),
            _ => return Err(shape),
        },
        Op::Inv => match vals.pop().ok_or(shape)? {
            Value::M(a) if a.is_square() => Value::M(linalg::inverse(&a).map_err(|_| fault)?),
            _ => return Err(shape),
        },
        Op::Mrdiv => {
            let s = second(&mut vals)?;
            match (vals.pop().ok_or(shape)?, s) {
                (Value::M(a), Value::M(s)) if s.is_square() && a.ncols() == s.nrows() => {
                    Value::M(linalg::mrdiv(&a, &s).map_err(|_| fault)?)
                }
                _ => return Err(shape),
            }
        }
        Op::Spd => match vals.pop().ok_or(shape)? {
            Value::M(a) if a.is_square() => Value::M(linalg::nearest_spd(&a).map_err(|_| fault)?),
            _ => return Err(shape),
        },
        Op::Mean => Value::S(mean(vals.pop().ok_or(shape)?.elements())),
        Op::Std => Value::S(std(vals.pop().ok_or(shape)?.elements())),
        Op::Norm => Value::S(libm::sqrt(vals.pop().ok_or(shape)?.elements().iter().map(|x| x * x).sum::<f64>())),
        Op::Max => Value::S(
            vals.pop()
                .ok_or(shape)?
                .elements()
                .iter()
                .fold(f64::NEG_INFINITY, |a, b| a.max(*b)),
        ),
        Op::Dot => {
            let b = second(&mut vals)?;
            match (vals.pop().ok_or(shape)?, b) {
                (Value::V(a), Value::V(b)) if a.len() == b.len() => Value::S(a.dot(&b)),
                _ => return Err(shape),
            }
        }
        Op::Outer => {
            let b = second(&mut vals)?;
            match (vals.pop().ok_or(shape)?, b) {
                (Value::V(a), Value::V(b)) => Value::M(&a * b.transpose()),
                _ => return Err(shape),
            }
        }
        Op::Trace => match vals.pop().ok_or(shape)? {
            Value::M(a) if a.is_square() => Value::S(a.trace()),
            _ => return Err(shape),
        },
    })
}

/// Evaluates every binding once, then the four outputs. Output covariances
/// are repaired to the nearest SPD matrix.
pub fn execute(p: &RuleProgram, ctx: &FilterContext<'_>) -> Result<StepOutput, ExecError> {
    let mut m = Machine {
        ctx,
        names: Vec::with_capacity(p.bindings.len()),
        values: Vec::with_capacity(p.bindings.len()),
        next_id: 0,
    };
    for (name, e) in &p.bindings {
        let v = m.eval(e)?;
        m.names.push(name.as_str());
        m.values.push(v);
    }
    let n = ctx.model.state_dim();
    let cov = |m: &mut Machine<'_, '_>, e: &Expr| -> Result<CovMat, ExecError> {
        let root = m.next_id;
        match m.eval(e)? {
            Value::M(a) if a.shape() == (n, n) => {
                CovMat::repaired(&a).map_err(|_| ExecError::NumericalFault { node: root })
            }
            _ => Err(ExecError::Shape { node: root }),
        }
    };
    let p_post = cov(&mut m, &p.outputs.p_post)?;
    let p_pred = cov(&mut m, &p.outputs.p_pred)?;
    let vec = |m: &mut Machine<'_, '_>, e: &Expr| -> Result<Vector, ExecError> {
        let root = m.next_id;
        match m.eval(e)? {
            Value::V(v) if v.len() == n => Ok(v),
            _ => Err(ExecError::Shape { node: root }),
        }
    };
    let x_post = vec(&mut m, &p.outputs.x_post)?;
    let x_pred = vec(&mut m, &p.outputs.x_pred)?;
    let t = ctx.belief.time_index;
    let (post_t, pred_t) = match p.order {
        StepOrder::UpdatePredict => (t, t + 1),
        StepOrder::PredictUpdate => (t + 1, t + 1),
    };
    Ok(StepOutput {
        posterior: BeliefState { mean: x_post, cov: p_post, time_index: post_t },
        prediction: BeliefState { mean: x_pred, cov: p_pred, time_index: pred_t },
    })
}
