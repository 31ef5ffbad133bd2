//! Straight transcriptions of the three built-in discovered rules, written
//! against nalgebra directly.

use super::rel_diff;
use super::rel_diff_v;
use kerule_core::filters::StepOutput;
use kerule_core::linalg::{nearest_spd, Matrix, Vector};

pub struct Ref {
    pub x_post: Vector,
    pub p_post: Matrix,
    pub x_pred: Vector,
    pub p_pred: Matrix,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn std(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / v.len() as f64).sqrt()
}

fn inv(m: &Matrix) -> Matrix {
    m.clone().try_inverse().unwrap()
}

pub fn gated_mot(x: &Vector, f: &Matrix, p: &Matrix, q: &Matrix, z: &Vector, r: &Matrix, h: &Matrix) -> Ref {
    let m = z.len();
    let n = x.len();
    let y = z - h * x;
    let s = (h * p) * h.transpose() + r + Matrix::identity(m, m) * 1e-10;
    let k = (p * h.transpose()) * inv(&s);
    let y2: Vec<f64> = y.iter().map(|a| a * a).collect();
    let y4: Vec<f64> = y.iter().map(|a| (a * a) * (a * a)).collect();
    let sd = std(&y2);
    let gate_input = mean(&y4) + sd * sd;
    let gate = 0.5 * (1.0 + gate_input.tanh());
    let x_upd = x + (&k * gate) * &y;
    let p_upd = (Matrix::identity(n, n) - (&k * gate) * h) * p;
    let alpha = (mean(&y2) + std(&y2)).tanh();
    let p_next = (f * &p_upd) * f.transpose() + q * alpha;
    Ref { x_pred: f * &x_upd, p_pred: p_next, x_post: x_upd, p_post: p_upd }
}

pub fn free_nsp(x: &Vector, f: &Matrix, p: &Matrix, q: &Matrix, z: &Vector, r: &Matrix, h: &Matrix) -> Ref {
    let m = z.len();
    let n = x.len();
    let y0 = z - h * x;
    let y = y0.map(|a| a.max(-10.0) + a.min(10.0));
    let s = (h * p) * h.transpose() + r;
    let s_inv = inv(&(s + Matrix::identity(m, m) * 1e-8));
    let k = (p * h.transpose()) * s_inv;
    let x_upd = x + &k * y;
    let x_upd = x_upd * 0.9 + (h.transpose() * z) * 0.1;
    let i = Matrix::identity(n, n);
    let a = &i - &k * h;
    let p_upd = (&a * p) * a.transpose() + (&k * r) * k.transpose();
    let p_upd = p_upd * 0.8;
    Ref { x_pred: f * &x_upd, p_pred: (f * &p_upd) * f.transpose() + q, x_post: x_upd, p_post: p_upd }
}

pub fn free_se(x: &Vector, f: &Matrix, p: &Matrix, q: &Matrix, z: &Vector, r: &Matrix, h: &Matrix) -> Ref {
    let m = z.len();
    let n = x.len();
    let x_pred = f * x;
    let p_pred = (f * p) * f.transpose() + q * 0.95;
    let y = z - h * &x_pred;
    let s = (h * &p_pred) * h.transpose() + r * 0.8 + Matrix::identity(m, m) * 1e-12;
    let s = s.map(|a| a.max(1e-14));
    let k = (&p_pred * h.transpose()) * inv(&s);
    let kmax = k.iter().fold(f64::NEG_INFINITY, |acc, a| acc.max(a.abs()));
    let eye = Matrix::identity(n, m);
    let mut k2 = &k * 0.65;
    for idx in 0..k.len() {
        let sign = if k[idx] > 0.0 { 1.0 } else if k[idx] < 0.0 { -1.0 } else { 0.0 };
        k2[idx] += ((0.35 * sign) * kmax) * eye[idx];
    }
    let x_new = &x_pred + &k2 * y;
    let p_new = (Matrix::identity(n, n) - &k2 * h) * &p_pred;
    let p_new = (p_new * 0.85).map(|a| a.max(1e-20).min(250.0));
    Ref { x_post: x_new, p_post: p_new, x_pred, p_pred }
}

pub type RefFn = fn(&Vector, &Matrix, &Matrix, &Matrix, &Vector, &Matrix, &Matrix) -> Ref;

pub fn compare(out: &StepOutput, want: &Ref) -> f64 {
    let pp = nearest_spd(&want.p_post).unwrap();
    let pd = nearest_spd(&want.p_pred).unwrap();
    [
        rel_diff_v(&out.posterior.mean, &want.x_post),
        rel_diff_v(&out.prediction.mean, &want.x_pred),
        rel_diff(out.posterior.cov.matrix(), &pp),
        rel_diff(out.prediction.cov.matrix(), &pd),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

pub const CASES: [(&str, RefFn); 3] = [("gated-mot", gated_mot), ("free-nsp", free_nsp), ("free-se", free_se)];
