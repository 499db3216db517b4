//! Exact Fisher information of Poisson intensity measurements and the
//! associated Cramer-Rao bound on total field MSE.
//!
//! Parameters are ordered `(r_0..r_{N-1}, i_0..i_{N-1})` with `x = r + j i`.
//! With `a_m` the conjugate of row `m` of `A` and `y = rho + A x`,
//!
//! ```text
//! C   = sum_m a_m a_m^T y_m^2 / |y_m|^2
//! J   = 2 I + [[C_R, C_I], [C_I, -C_R]],   C_R = 2 Re C,  C_I = 2 Im C
//! ```
//!
//! The eigenvalues of `J` come in pairs `2 +- gamma`, so `Tr(J^-1) >= N`.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::Serialize;

use crate::design::MeasurementDesign;
use crate::error::{invalid, Error, Result};
use crate::field::ComplexField;

/// Largest mode count for which dense `2N x 2N` information is formed.
pub const MAX_DENSE_MODES: usize = 1 << 12;

/// Eigenvalues below this fraction of the largest are treated as zero.
const SINGULAR_RTOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct FisherBundle {
    pub c_matrix: DMatrix<Complex64>,
    pub j_matrix: DMatrix<f64>,
    /// Eigenvalues of `J`, ascending.
    pub eigenvalues: Vec<f64>,
    /// `Tr(J^-1)`; infinite when `J` is singular.
    pub crlb_trace_full: f64,
    /// Trace of the inverse with `Im(x_0)` pinned to zero (`2N - 1` parameters),
    /// in the gauge where `x_0` is real.
    pub crlb_trace_gauge_reduced: f64,
    /// Pseudo-inverse trace: the bound for errors measured after removing
    /// the global phase by alignment. Equals the full trace when `J` is
    /// invertible.
    pub crlb_trace_pinv: f64,
    pub singular: bool,
    pub reduced_singular: bool,
    /// Rows skipped because their expected intensity is zero.
    pub skipped_rows: usize,
}

impl FisherBundle {
    pub fn n_modes(&self) -> usize {
        self.c_matrix.nrows()
    }

    pub fn summary(&self) -> FisherSummary {
        let n = self.n_modes();
        let mut diag_max = 0.0f64;
        let mut diag_sum = 0.0;
        let mut off_max = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let v = self.c_matrix[(i, j)].norm();
                if i == j {
                    diag_max = diag_max.max(v);
                    diag_sum += v;
                } else {
                    off_max = off_max.max(v);
                }
            }
        }
        FisherSummary {
            n_modes: n,
            crlb_trace_full: finite_or_none(self.crlb_trace_full),
            crlb_trace_gauge_reduced: finite_or_none(self.crlb_trace_gauge_reduced),
            crlb_full_per_mode: finite_or_none(self.crlb_trace_full / n as f64),
            crlb_gauge_reduced_per_mode: finite_or_none(self.crlb_trace_gauge_reduced / n as f64),
            crlb_trace_pinv: finite_or_none(self.crlb_trace_pinv),
            crlb_pinv_per_mode: finite_or_none(self.crlb_trace_pinv / n as f64),
            min_eigenvalue: self.eigenvalues.first().copied().unwrap_or(f64::NAN),
            max_eigenvalue: self.eigenvalues.last().copied().unwrap_or(f64::NAN),
            c_diag_mean_abs: diag_sum / n as f64,
            c_diag_max_abs: diag_max,
            c_offdiag_max_abs: off_max,
            singular: self.singular,
            reduced_singular: self.reduced_singular,
            skipped_rows: self.skipped_rows,
        }
    }
}

fn finite_or_none(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// JSON report of a [`FisherBundle`]; infinite bounds serialize as `null`.
#[derive(Debug, Clone, Serialize)]
pub struct FisherSummary {
    pub n_modes: usize,
    pub crlb_trace_full: Option<f64>,
    pub crlb_trace_gauge_reduced: Option<f64>,
    pub crlb_full_per_mode: Option<f64>,
    pub crlb_gauge_reduced_per_mode: Option<f64>,
    pub crlb_trace_pinv: Option<f64>,
    pub crlb_pinv_per_mode: Option<f64>,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub c_diag_mean_abs: f64,
    pub c_diag_max_abs: f64,
    pub c_offdiag_max_abs: f64,
    pub singular: bool,
    pub reduced_singular: bool,
    pub skipped_rows: usize,
}

fn guard(design: &MeasurementDesign, x: &ComplexField) -> Result<()> {
    if design.n_modes() != x.n_modes() {
        return invalid("design and field dimensions differ");
    }
    if design.n_modes() > MAX_DENSE_MODES {
        return Err(Error::SizeGuard {
            what: "dense Fisher information modes",
            size: design.n_modes(),
            limit: MAX_DENSE_MODES,
        });
    }
    Ok(())
}

/// `C` together with `G = sum a_m a_m^H` over the rows that contributed.
struct Accumulated {
    c: DMatrix<Complex64>,
    gram: Option<DMatrix<Complex64>>,
    skipped: usize,
}

fn accumulate(design: &MeasurementDesign, x: &ComplexField, want_gram: bool) -> Result<Accumulated> {
    guard(design, x)?;
    let n = design.n_modes();
    let qn = design.outputs_per_group();
    let y = design.apply(x.values());
    let zero = Complex64::new(0.0, 0.0);
    let mut c = DMatrix::from_element(n, n, zero);
    let mut gram = want_gram.then(|| DMatrix::from_element(n, n, zero));
    let mut skipped = 0usize;
    let mut a = Vec::with_capacity(design.group_size());
    for (g, members) in design.groups().iter().enumerate() {
        for q in 0..qn {
            let ym = y[g * qn + q];
            let power = ym.norm_sqr();
            if power == 0.0 {
                skipped += 1;
                continue;
            }
            let phase2 = ym * ym / power;
            a.clear();
            a.extend(
                members
                    .iter()
                    .enumerate()
                    .map(|(l, &m)| design.entry(q, l, m).conj()),
            );
            for (ia, &ma) in members.iter().enumerate() {
                for (ib, &mb) in members.iter().enumerate() {
                    c[(ma, mb)] += a[ia] * a[ib] * phase2;
                    if let Some(gm) = gram.as_mut() {
                        gm[(ma, mb)] += a[ia] * a[ib].conj();
                    }
                }
            }
        }
    }
    if skipped == design.m_rows() {
        return Err(Error::UndefinedInformation(
            "every measurement has zero expected intensity".into(),
        ));
    }
    Ok(Accumulated { c, gram, skipped })
}

/// `C = sum_m a_m a_m^T y_m^2 / |y_m|^2`, skipping zero-intensity rows.
pub fn c_matrix(design: &MeasurementDesign, x: &ComplexField) -> Result<DMatrix<Complex64>> {
    Ok(accumulate(design, x, false)?.c)
}

/// `J = 2 I + [[C_R, C_I], [C_I, -C_R]]` from a given `C`.
pub fn assemble_fisher(c: &DMatrix<Complex64>) -> DMatrix<f64> {
    let n = c.nrows();
    let mut j = DMatrix::<f64>::identity(2 * n, 2 * n) * 2.0;
    for a in 0..n {
        for b in 0..n {
            let cr = 2.0 * c[(a, b)].re;
            let ci = 2.0 * c[(a, b)].im;
            j[(a, b)] += cr;
            j[(n + a, n + b)] -= cr;
            j[(a, n + b)] += ci;
            j[(n + a, b)] += ci;
        }
    }
    j
}

/// General form used when some rows are skipped, so that `G != I`:
/// `J = [[2 Re G + C_R, C_I - 2 Im G], [C_I + 2 Im G, 2 Re G - C_R]]`.
fn assemble_with_gram(c: &DMatrix<Complex64>, gram: &DMatrix<Complex64>) -> DMatrix<f64> {
    let n = c.nrows();
    let mut j = DMatrix::<f64>::zeros(2 * n, 2 * n);
    for a in 0..n {
        for b in 0..n {
            let cr = 2.0 * c[(a, b)].re;
            let ci = 2.0 * c[(a, b)].im;
            let gr = 2.0 * gram[(a, b)].re;
            let gi = 2.0 * gram[(a, b)].im;
            j[(a, b)] = gr + cr;
            j[(n + a, n + b)] = gr - cr;
            j[(a, n + b)] = ci - gi;
            j[(n + a, b)] = ci + gi;
        }
    }
    j
}

/// Symmetric eigenvalues (ascending) and the trace of the inverse, or
/// infinity when the matrix is numerically singular.
fn inverse_trace(m: DMatrix<f64>) -> (Vec<f64>, f64, bool) {
    let mut eig: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
    eig.sort_by(f64::total_cmp);
    let top = eig.last().copied().unwrap_or(0.0).abs().max(f64::MIN_POSITIVE);
    let singular = eig.first().is_some_and(|&l| l <= SINGULAR_RTOL * top);
    let trace = if singular {
        f64::INFINITY
    } else {
        eig.iter().map(|l| 1.0 / l).sum()
    };
    (eig, trace, singular)
}

/// Deletes row and column `k`.
fn without_index(m: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    m.clone().remove_row(k).remove_column(k)
}

/// Fisher bundle for a given `C`, assuming every row contributed.
pub fn fisher_from_c(c: DMatrix<Complex64>) -> FisherBundle {
    let j = assemble_fisher(&c);
    bundle(c, j, None, 0)
}

/// `pinned` is `J` in the gauge where `x_0` is real, when that differs from
/// `j`; the gauge-reduced trace is taken there.
fn bundle(c: DMatrix<Complex64>, j: DMatrix<f64>, pinned: Option<DMatrix<f64>>, skipped: usize) -> FisherBundle {
    let n = c.nrows();
    let (eigenvalues, crlb_trace_full, singular) = inverse_trace(j.clone());
    let (_, crlb_trace_gauge_reduced, reduced_singular) =
        inverse_trace(without_index(pinned.as_ref().unwrap_or(&j), n));
    let top = eigenvalues.last().copied().unwrap_or(0.0).abs();
    let crlb_trace_pinv = eigenvalues
        .iter()
        .filter(|&&l| l > SINGULAR_RTOL * top)
        .map(|l| 1.0 / l)
        .sum();
    FisherBundle {
        c_matrix: c,
        j_matrix: j,
        eigenvalues,
        crlb_trace_full,
        crlb_trace_gauge_reduced,
        crlb_trace_pinv,
        singular,
        reduced_singular,
        skipped_rows: skipped,
    }
}

/// Exact Fisher information of `x` under `design`.
///
/// Without a reference the likelihood is invariant to a global phase, so the
/// gauge-reduced trace is evaluated at `x` rotated to make `x_0` real and
/// positive. Rotating `x` by `phi` multiplies `C` by `e^{2j phi}`.
pub fn fisher(design: &MeasurementDesign, x: &ComplexField) -> Result<FisherBundle> {
    let acc = accumulate(design, x, true)?;
    let gram = acc.gram.as_ref().expect("requested");
    let assemble = |c: &DMatrix<Complex64>| {
        if acc.skipped == 0 {
            assemble_fisher(c)
        } else {
            assemble_with_gram(c, gram)
        }
    };
    let j = assemble(&acc.c);
    let x0 = x.values()[0];
    let pinned = (design.reference().is_none() && x0.norm() > 0.0 && x0.im != 0.0).then(|| {
        let turn = (x0.conj() * x0.conj()) / x0.norm_sqr();
        assemble(&acc.c.map(|v| v * turn))
    });
    Ok(bundle(acc.c, j, pinned, acc.skipped))
}

/// CRLB trace when `C` is diagonal and `Im(x_0) = 0`:
/// `1 / (2 + u_0) + sum_{n >= 1} 4 / (4 - u_n^2 - v_n^2)` with
/// `u = 2 Re C_nn`, `v = 2 Im C_nn`. Infinite when any term is unbounded.
pub fn diagonal_crlb_approx(c_diag: &[Complex64]) -> Result<f64> {
    let Some((first, rest)) = c_diag.split_first() else {
        return invalid("need at least one mode");
    };
    let u0 = 2.0 * first.re;
    if 2.0 + u0 <= 0.0 {
        return Ok(f64::INFINITY);
    }
    let mut total = 1.0 / (2.0 + u0);
    for c in rest {
        let u = 2.0 * c.re;
        let v = 2.0 * c.im;
        let denom = 4.0 - u * u - v * v;
        if denom <= 0.0 {
            return Ok(f64::INFINITY);
        }
        total += 4.0 / denom;
    }
    Ok(total)
}
