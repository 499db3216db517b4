//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use num_complex::Complex64;
use phasenet::estimate::{loss_and_gradient, LossKind};
use phasenet::{intensities, ComplexField, MeasurementDesign};

/// Definitional Poisson Fisher information over `(Re x, Im x)`:
/// `sum_m grad(I_m) grad(I_m)^T / I_m`, with gradients by central differences.
/// Rows with zero intensity carry no information and are left out.
pub fn fisher_by_differences(design: &MeasurementDesign, x: &ComplexField, h: f64) -> DMatrix<f64> {
    let n = x.n_modes();
    let base = intensities(design, x).unwrap();
    let mut grads = DMatrix::<f64>::zeros(base.len(), 2 * n);
    for p in 0..2 * n {
        let step = if p < n { Complex64::new(h, 0.0) } else { Complex64::new(0.0, h) };
        let mut plus = x.values().to_vec();
        let mut minus = x.values().to_vec();
        plus[p % n] += step;
        minus[p % n] -= step;
        let ip = intensities(design, &ComplexField::new(plus).unwrap()).unwrap();
        let im = intensities(design, &ComplexField::new(minus).unwrap()).unwrap();
        for m in 0..base.len() {
            grads[(m, p)] = (ip[m] - im[m]) / (2.0 * h);
        }
    }
    let mut j = DMatrix::<f64>::zeros(2 * n, 2 * n);
    for (m, &i) in base.iter().enumerate() {
        if i == 0.0 {
            continue;
        }
        let g = grads.row(m).transpose();
        j += &g * g.transpose() / i;
    }
    j
}

/// Central-difference gradient in the `dL/dr + j dL/di` convention.
pub fn gradient_by_differences(
    design: &MeasurementDesign,
    counts: &[f64],
    x: &[Complex64],
    kind: LossKind,
    h: f64,
) -> Vec<Complex64> {
    let loss = |v: &[Complex64]| loss_and_gradient(design, counts, v, kind).unwrap().0;
    let mut out = Vec::with_capacity(x.len());
    for k in 0..x.len() {
        let mut part = [0.0; 2];
        for (c, dir) in [Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)].iter().enumerate() {
            let mut p = x.to_vec();
            let mut m = x.to_vec();
            p[k] += dir * h;
            m[k] -= dir * h;
            part[c] = (loss(&p) - loss(&m)) / (2.0 * h);
        }
        out.push(Complex64::new(part[0], part[1]));
    }
    out
}

/// `A^H A` accumulated entry by entry from the group structure.
pub fn dense_gram(design: &MeasurementDesign) -> DMatrix<Complex64> {
    let n = design.n_modes();
    let mut g = DMatrix::<Complex64>::zeros(n, n);
    for members in design.groups() {
        for q in 0..design.outputs_per_group() {
            for (la, &a) in members.iter().enumerate() {
                let ea = design.entry(q, la, a);
                for (lb, &b) in members.iter().enumerate() {
                    g[(a, b)] += ea.conj() * design.entry(q, lb, b);
                }
            }
        }
    }
    g
}

pub fn max_identity_deviation(g: &DMatrix<Complex64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).norm());
        }
    }
    worst
}

pub fn relative_error(a: &[Complex64], b: &[Complex64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(u, v)| (u - v).norm_sqr()).sum();
    let den: f64 = b.iter().map(|v| v.norm_sqr()).sum();
    (num / den.max(f64::MIN_POSITIVE)).sqrt()
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}
