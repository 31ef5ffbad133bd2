//! Offline mutation operators on rule ASTs.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::rng::Rng;
use crate::ruledsl::build::{add, bin, c, i, mm, mul, sub, t, un};
use crate::ruledsl::{binding_types, infer, input_type, validate, Arity, Expr, Input, Op, RuleProgram, Type};

/// Retries per requested candidate before it is dropped.
pub const MAX_RETRIES: usize = 10;

/// A node location: root index (bindings first, then the four outputs)
/// and child path.
#[derive(Debug, Clone, PartialEq)]
struct Site {
    root: usize,
    path: Vec<usize>,
    ty: Type,
}

fn type_of(env: &[(String, Type)], e: &Expr) -> Option<Type> {
    match e {
        Expr::Const(_) => Some(Type::Scalar),
        Expr::Input(inp) => Some(input_type(*inp)),
        Expr::Var(n) => env.iter().rev().find(|(m, _)| m == n).map(|(_, t)| *t),
        Expr::Call(op, args) => {
            let ts: Option<Vec<Type>> = args.iter().map(|a| type_of(env, a)).collect();
            infer(*op, &ts?).ok()
        }
    }
}

fn root(p: &RuleProgram, r: usize) -> &Expr {
    let b = p.bindings.len();
    if r < b {
        &p.bindings[r].1
    } else {
        p.outputs.iter()[r - b].1
    }
}

fn root_mut(p: &mut RuleProgram, r: usize) -> &mut Expr {
    let b = p.bindings.len();
    if r < b {
        &mut p.bindings[r].1
    } else {
        let [a, bb, cc, d] = p.outputs.iter_mut();
        [a, bb, cc, d].into_iter().nth(r - b).unwrap()
    }
}

fn at_path<'a>(mut e: &'a Expr, path: &[usize]) -> &'a Expr {
    for &k in path {
        match e {
            Expr::Call(_, args) => e = &args[k],
            _ => unreachable!("path leaves the tree"),
        }
    }
    e
}

fn at_path_mut<'a>(mut e: &'a mut Expr, path: &[usize]) -> &'a mut Expr {
    for &k in path {
        match e {
            Expr::Call(_, args) => e = &mut args[k],
            _ => unreachable!("path leaves the tree"),
        }
    }
    e
}

fn sites(p: &RuleProgram) -> Vec<Site> {
    let Some(env) = binding_types(p) else { return Vec::new() };
    let b = p.bindings.len();
    let mut out = Vec::new();
    for r in 0..b + 4 {
        let scope = &env[..r.min(b)];
        let mut stack = vec![Vec::new()];
        while let Some(path) = stack.pop() {
            let e = at_path(root(p, r), &path);
            if let Some(ty) = type_of(scope, e) {
                out.push(Site { root: r, path: path.clone(), ty });
            }
            if let Expr::Call(_, args) = e {
                for k in (0..args.len()).rev() {
                    let mut q = path.clone();
                    q.push(k);
                    stack.push(q);
                }
            }
        }
    }
    out
}

fn pick<'a, T>(rng: &mut Rng, v: &'a [T]) -> Option<&'a T> {
    if v.is_empty() {
        None
    } else {
        Some(&v[rng.random_range(0..v.len())])
    }
}

fn log_uniform(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    libm::exp(rng.random_range(libm::log(lo)..libm::log(hi)))
}

fn innovation() -> Expr {
    sub(i(Input::Z), mm(i(Input::H), i(Input::X)))
}

fn perturb_constant(p: &mut RuleProgram, rng: &mut Rng) -> bool {
    let consts: Vec<Site> = sites(p)
        .into_iter()
        .filter(|s| matches!(at_path(root(p, s.root), &s.path), Expr::Const(_)))
        .collect();
    let Some(s) = pick(rng, &consts).cloned() else { return false };
    let node = at_path_mut(root_mut(p, s.root), &s.path);
    if let Expr::Const(v) = node {
        if rng.random_bool(0.5) {
            *v *= rng.random_range(0.5..2.0);
        } else {
            let g: f64 = StandardNormal.sample(rng);
            *v += 0.1 * g;
        }
    }
    true
}

/// Which root of `other` corresponds to root `r` of `p`.
fn homologous_root(p: &RuleProgram, r: usize, other: &RuleProgram) -> Option<usize> {
    let b = p.bindings.len();
    if r < b {
        other.bindings.iter().position(|(n, _)| *n == p.bindings[r].0)
    } else {
        Some(other.bindings.len() + (r - b))
    }
}

/// Swaps in the subtree of `donor` found at the same place and of the same
/// type. Identical parents therefore produce the parent.
pub fn crossover(p: &mut RuleProgram, donor: &RuleProgram, rng: &mut Rng) -> bool {
    let ds = sites(donor);
    let candidates: Vec<(Site, usize)> = sites(p)
        .into_iter()
        .filter_map(|s| {
            let dr = homologous_root(p, s.root, donor)?;
            ds.iter().any(|d| d.root == dr && d.path == s.path && d.ty == s.ty).then_some((s, dr))
        })
        .collect();
    let Some((s, dr)) = pick(rng, &candidates).cloned() else { return false };
    let sub_tree = at_path(root(donor, dr), &s.path).clone();
    *at_path_mut(root_mut(p, s.root), &s.path) = sub_tree;
    true
}

fn substitute(p: &mut RuleProgram, rng: &mut Rng) -> bool {
    let calls: Vec<(Site, Vec<Op>)> = sites(p)
        .into_iter()
        .filter_map(|s| match at_path(root(p, s.root), &s.path) {
            Expr::Call(op, args) => {
                let alts: Vec<Op> = op
                    .substitution_class()
                    .iter()
                    .copied()
                    .filter(|o| o != op)
                    .filter(|o| args.len() == 2 || o.arity() == Arity::Variadic || args.len() == 1)
                    .collect();
                (!alts.is_empty()).then_some((s, alts))
            }
            _ => None,
        })
        .collect();
    let Some((s, alts)) = pick(rng, &calls).cloned() else { return false };
    let new_op = *pick(rng, &alts).unwrap();
    if let Expr::Call(op, _) = at_path_mut(root_mut(p, s.root), &s.path) {
        *op = new_op;
    }
    true
}

fn fresh_name(p: &RuleProgram, stem: &str) -> String {
    (0..)
        .map(|k| format!("{stem}{k}"))
        .find(|n| p.bindings.iter().all(|(m, _)| m != n))
        .unwrap()
}

fn replace_input(e: &mut Expr, target: Input, with: &Expr) {
    e.walk_mut(&mut |n| {
        if *n == Expr::Input(target) {
            *n = with.clone();
        }
    });
}

/// Rebinds every use of `target` to a new leading binding.
fn rebind_input(p: &mut RuleProgram, target: Input, stem: &str, def: Expr) -> bool {
    if !p.roots().iter().any(|r| mentions_input(r, target)) {
        return false;
    }
    let name = fresh_name(p, stem);
    let var = Expr::var(&name);
    for r in p.roots_mut() {
        replace_input(r, target, &var);
    }
    p.bindings.insert(0, (name, def));
    true
}

fn mentions_input(e: &Expr, target: Input) -> bool {
    let mut hit = false;
    e.walk(&mut |n| hit |= *n == Expr::Input(target));
    hit
}

fn wrap_site(p: &mut RuleProgram, rng: &mut Rng, want: impl Fn(Type) -> bool, f: impl FnOnce(Expr, &mut Rng) -> Expr) -> bool {
    let cands: Vec<Site> = sites(p).into_iter().filter(|s| want(s.ty)).collect();
    let Some(s) = pick(rng, &cands).cloned() else { return false };
    let node = at_path_mut(root_mut(p, s.root), &s.path);
    let old = core::mem::replace(node, Expr::Const(0.0));
    *node = f(old, rng);
    true
}

fn insert_template(p: &mut RuleProgram, rng: &mut Rng) -> bool {
    use crate::ruledsl::Dim::{M, N};
    match rng.random_range(0..6u8) {
        // gate on the gain
        0 => wrap_site(p, rng, |t| t == Type::Mat(N, M), |e, rng| {
            let c0 = rng.random_range(-1.0..2.0);
            let c1 = log_uniform(rng, 1e-4, 1.0);
            let g = mul(
                c(0.5),
                add(c(1.0), un(Op::Tanh, add(c(c0), mul(c(c1), un(Op::Mean, un(Op::Pow(2), innovation())))))),
            );
            mul(g, e)
        }),
        // process noise scale
        1 => {
            let c0 = rng.random_range(0.5..1.5);
            let def = if rng.random_bool(0.5) {
                mul(c(c0), i(Input::Q))
            } else {
                let c1 = log_uniform(rng, 1e-4, 1e-1);
                mul(add(c(c0), mul(c(c1), un(Op::Mean, un(Op::Pow(2), innovation())))), i(Input::Q))
            };
            rebind_input(p, Input::Q, "qs", def)
        }
        // observation noise scale, possibly range dependent
        2 => {
            let zz = || bin(Op::Dot, i(Input::Z), i(Input::Z));
            let def = match rng.random_range(0..3u8) {
                0 => mul(c(rng.random_range(0.3..1.5)), i(Input::R)),
                1 => {
                    let c1 = log_uniform(rng, 1e-7, 1e-2);
                    mul(add(c(rng.random_range(0.1..1.0)), mul(c(c1), zz())), i(Input::R))
                }
                _ => {
                    let c1 = log_uniform(rng, 1e-4, 1e-1);
                    let tangential = sub(mul(zz(), i(Input::Im)), bin(Op::Outer, i(Input::Z), i(Input::Z)));
                    add(mul(c(rng.random_range(0.1..1.5)), i(Input::R)), mul(c(c1), tangential))
                }
            };
            rebind_input(p, Input::R, "rs", def)
        }
        // clip a residual-like vector
        3 => wrap_site(p, rng, |t| t == Type::Vec(M), |e, rng| {
            let h = log_uniform(rng, 0.5, 500.0);
            Expr::call(Op::Clip, vec![e, c(h), c(-h)])
        }),
        // blend the posterior towards the lifted observation
        4 => {
            let r = p.bindings.len() + 2;
            let w = rng.random_range(0.7..1.0);
            let e = core::mem::replace(root_mut(p, r), Expr::Const(0.0));
            *root_mut(p, r) = add(mul(c(w), e), mul(c(1.0 - w), mm(t(i(Input::H)), i(Input::Z))));
            true
        }
        // damp or inflate the predicted covariance
        _ => {
            let r = p.bindings.len() + 1;
            let e = core::mem::replace(root_mut(p, r), Expr::Const(0.0));
            *root_mut(p, r) = mul(c(rng.random_range(0.8..1.25)), e);
            true
        }
    }
}

/// Replaces a node by one of its children of the same type; this undoes
/// any wrapping template.
fn remove_wrapper(p: &mut RuleProgram, rng: &mut Rng) -> bool {
    let all = sites(p);
    let cands: Vec<(Site, usize)> = all
        .iter()
        .flat_map(|s| {
            all.iter()
                .filter(move |d| d.root == s.root && d.path.len() == s.path.len() + 1 && d.path.starts_with(&s.path) && d.ty == s.ty)
                .map(move |d| (s.clone(), *d.path.last().unwrap()))
        })
        .filter(|(s, k)| !matches!(at_path(root(p, s.root), &s.path), Expr::Call(_, a) if matches!(a[*k], Expr::Const(_))))
        .collect();
    let Some((s, k)) = pick(rng, &cands).cloned() else { return false };
    let node = at_path_mut(root_mut(p, s.root), &s.path);
    if let Expr::Call(_, args) = node {
        let child = args.swap_remove(k);
        *node = child;
    }
    true
}

fn edit(p: &mut RuleProgram, parents: &[RuleProgram], rng: &mut Rng) -> bool {
    match rng.random_range(0..100u32) {
        0..=29 => perturb_constant(p, rng),
        30..=44 => {
            let donor = &parents[rng.random_range(0..parents.len())];
            crossover(p, donor, rng)
        }
        45..=59 => substitute(p, rng),
        60..=89 => insert_template(p, rng),
        _ => remove_wrapper(p, rng),
    }
}

/// Up to `count` validated mutants of `parents`, each from one to three
/// edits.
pub fn rule_based_mutate(parents: &[RuleProgram], count: usize, rng: &mut Rng) -> Vec<RuleProgram> {
    let mut out = Vec::with_capacity(count);
    if parents.is_empty() {
        return out;
    }
    for _ in 0..count {
        for _ in 0..=MAX_RETRIES {
            let mut p = parents[rng.random_range(0..parents.len())].clone();
            let edits = rng.random_range(1..=3);
            let mut any = false;
            for _ in 0..edits {
                any |= edit(&mut p, parents, rng);
            }
            p.prune_unused();
            if any && validate(&p).ok {
                out.push(p);
                break;
            }
        }
    }
    out
}
