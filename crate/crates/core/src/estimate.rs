//! Field reconstruction from photon counts.
//!
//! Phase retrieval runs Adam on the real and imaginary parts of `x` against
//! either the Poisson negative log-likelihood or an intensity least-squares
//! loss. Quadrature holography has a closed-form linear estimator.

use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::design::{DesignKind, MeasurementDesign};
use crate::error::{invalid, Error, Result};
use crate::field::ComplexField;
use crate::seed;

/// Floor on modelled rates inside the log-likelihood.
pub const EPS_RATE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `sum_m I_m - d_m ln I_m`
    PoissonNll,
    /// `sum_m (I_m - d_m)^2`
    IntensityLsq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    /// i.i.d. complex Gaussian modes.
    RandomGaussian,
    /// Equal amplitudes with uniformly random phases.
    RandomPhase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Initial step, in units of the rms mode amplitude implied by the counts.
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_iters: usize,
    /// Stop once the loss change falls below `tol` times the deviance.
    pub tol: f64,
    pub loss: LossKind,
    pub init: InitKind,
    pub restarts: usize,
    /// Step at the last iteration relative to the first (geometric decay).
    pub final_step_ratio: f64,
    /// Iterations of intensity least-squares run before the main loss.
    pub warmup_iters: usize,
    /// First step of the main stage relative to `step_size` when a warm-up ran.
    pub refine_step_ratio: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            step_size: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_iters: 2000,
            tol: 1e-12,
            loss: LossKind::PoissonNll,
            init: InitKind::RandomGaussian,
            restarts: 3,
            final_step_ratio: 1e-3,
            warmup_iters: 1000,
            refine_step_ratio: 0.1,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return invalid("step_size must be positive");
        }
        if !open_unit(self.beta1) || !open_unit(self.beta2) {
            return invalid("beta1 and beta2 must lie in (0, 1)");
        }
        if !(self.epsilon > 0.0) || !(self.tol > 0.0) {
            return invalid("epsilon and tol must be positive");
        }
        if self.max_iters == 0 || self.restarts == 0 {
            return invalid("max_iters and restarts must be at least 1");
        }
        if !(self.final_step_ratio > 0.0 && self.final_step_ratio <= 1.0) {
            return invalid("final_step_ratio must lie in (0, 1]");
        }
        if !(self.refine_step_ratio > 0.0 && self.refine_step_ratio <= 1.0) {
            return invalid("refine_step_ratio must lie in (0, 1]");
        }
        Ok(())
    }
}

fn check_counts(design: &MeasurementDesign, counts: &[f64]) -> Result<()> {
    if counts.len() != design.m_rows() {
        return invalid(format!(
            "expected {} counts, got {}",
            design.m_rows(),
            counts.len()
        ));
    }
    if counts.iter().any(|d| !(*d >= 0.0) || !d.is_finite()) {
        return invalid("counts must be finite and non-negative");
    }
    Ok(())
}

/// Loss and its gradient `dL/dr + j dL/di`.
///
/// With `w_m = dL/dI_m`, the gradient is `2 A^H (w . y)`.
pub fn loss_and_gradient(
    design: &MeasurementDesign,
    counts: &[f64],
    x: &[Complex64],
    kind: LossKind,
) -> Result<(f64, Vec<Complex64>)> {
    check_counts(design, counts)?;
    if x.len() != design.n_modes() {
        return invalid("field length does not match design");
    }
    let mut y = design.apply(x);
    let loss = weight_in_place(&mut y, counts, kind);
    let mut g = design.apply_adjoint(&y);
    for v in &mut g {
        *v *= 2.0;
    }
    Ok((loss, g))
}

/// Overwrites `y` with `w . y` and returns the loss.
fn weight_in_place(y: &mut [Complex64], counts: &[f64], kind: LossKind) -> f64 {
    let mut loss = 0.0;
    match kind {
        LossKind::PoissonNll => {
            for (v, &d) in y.iter_mut().zip(counts) {
                let rate = v.norm_sqr().max(EPS_RATE);
                loss += rate - d * rate.ln();
                *v *= 1.0 - d / rate;
            }
        }
        LossKind::IntensityLsq => {
            for (v, &d) in y.iter_mut().zip(counts) {
                let r = v.norm_sqr() - d;
                loss += r * r;
                *v *= 2.0 * r;
            }
        }
    }
    loss
}

/// Loss at a perfect fit `I = d`; the deviance is `loss - saturated_loss`.
fn saturated_loss(counts: &[f64], kind: LossKind) -> f64 {
    match kind {
        LossKind::PoissonNll => counts
            .iter()
            .map(|&d| {
                let rate = d.max(EPS_RATE);
                rate - d * rate.ln()
            })
            .sum(),
        LossKind::IntensityLsq => 0.0,
    }
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub field: ComplexField,
    /// Best-so-far loss per iteration of the winning restart.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub final_loss: f64,
    pub restart: usize,
    pub diverged_attempts: usize,
}

impl Reconstruction {
    /// `iter,loss` CSV of the loss trace.
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("iter,loss\n");
        for (i, l) in self.trace.iter().enumerate() {
            s.push_str(&format!("{i},{l}\n"));
        }
        s
    }
}

struct Run {
    x: Vec<Complex64>,
    trace: Vec<f64>,
    loss: f64,
    iterations: usize,
}

/// Energy estimate `||x||^2` from the counts, discounting the reference.
fn observed_energy(design: &MeasurementDesign, counts: &[f64]) -> f64 {
    let total: f64 = counts.iter().sum();
    let reference: f64 = design
        .reference()
        .map_or(0.0, |r| r.iter().map(|v| v * v).sum());
    let e = total - reference;
    if e > 0.0 {
        e
    } else {
        total.max(EPS_RATE)
    }
}

fn initial_point(n: usize, energy: f64, init: InitKind, seed: u64) -> Vec<Complex64> {
    let mut rng = seed::rng(seed);
    let mut x: Vec<Complex64> = match init {
        InitKind::RandomGaussian => (0..n)
            .map(|_| {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                Complex64::new(re, im)
            })
            .collect(),
        InitKind::RandomPhase => (0..n)
            .map(|_| {
                let u: f64 = rand::Rng::random(&mut rng);
                Complex64::from_polar(1.0, std::f64::consts::TAU * u)
            })
            .collect(),
    };
    let norm: f64 = x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let s = if norm > 0.0 { energy.sqrt() / norm } else { 0.0 };
    for v in &mut x {
        *v *= s;
    }
    x
}

/// One Adam stage with a geometrically decaying step.
struct Stage {
    loss: LossKind,
    iters: usize,
    first_step: f64,
    last_step: f64,
}

fn adam_run(
    design: &MeasurementDesign,
    counts: &[f64],
    cfg: &OptimizerConfig,
    x0: Vec<Complex64>,
    stage: &Stage,
) -> Option<Run> {
    let n = x0.len();
    let mut x = x0;
    let mut m = vec![Complex64::new(0.0, 0.0); n];
    let mut v = vec![Complex64::new(0.0, 0.0); n];
    let saturated = saturated_loss(counts, stage.loss);
    let decay = if stage.iters > 1 {
        (stage.last_step / stage.first_step).ln() / (stage.iters - 1) as f64
    } else {
        0.0
    };

    let mut trace = Vec::with_capacity(stage.iters);
    let mut best = f64::INFINITY;
    let mut best_x = x.clone();
    let mut prev = f64::INFINITY;
    let mut b1t = 1.0;
    let mut b2t = 1.0;
    let mut iterations = 0;

    for t in 0..stage.iters {
        let mut y = design.apply(&x);
        let loss = weight_in_place(&mut y, counts, stage.loss);
        if !loss.is_finite() {
            return None;
        }
        if loss < best {
            best = loss;
            best_x.clone_from(&x);
        }
        trace.push(best);
        iterations = t + 1;
        let deviance = (loss - saturated).abs();
        if (prev - loss).abs() <= cfg.tol * deviance.max(1e-300) {
            break;
        }
        prev = loss;

        let g = design.apply_adjoint(&y);
        b1t *= cfg.beta1;
        b2t *= cfg.beta2;
        let lr = stage.first_step * (decay * t as f64).exp();
        for i in 0..n {
            let gi = g[i] * 2.0;
            m[i] = m[i] * cfg.beta1 + gi * (1.0 - cfg.beta1);
            v[i] = Complex64::new(
                v[i].re * cfg.beta2 + gi.re * gi.re * (1.0 - cfg.beta2),
                v[i].im * cfg.beta2 + gi.im * gi.im * (1.0 - cfg.beta2),
            );
            let mh = m[i] / (1.0 - b1t);
            let vh = v[i] / (1.0 - b2t);
            x[i] -= Complex64::new(
                lr * mh.re / (vh.re.sqrt() + cfg.epsilon),
                lr * mh.im / (vh.im.sqrt() + cfg.epsilon),
            );
        }
    }
    // The last iterate is evaluated too.
    let mut y = design.apply(&x);
    let last = weight_in_place(&mut y, counts, stage.loss);
    if !last.is_finite() {
        return None;
    }
    if last < best {
        best = last;
        best_x = x;
        if let Some(t) = trace.last_mut() {
            *t = best;
        }
    }
    Some(Run {
        x: best_x,
        trace,
        loss: best,
        iterations,
    })
}

/// Optional least-squares warm-up followed by the main loss.
fn staged_run(
    design: &MeasurementDesign,
    counts: &[f64],
    cfg: &OptimizerConfig,
    x0: Vec<Complex64>,
    step: f64,
) -> Option<Run> {
    let warm = cfg.warmup_iters > 0 && cfg.loss != LossKind::IntensityLsq;
    let (x0, first_step) = if warm {
        let stage = Stage {
            loss: LossKind::IntensityLsq,
            iters: cfg.warmup_iters,
            first_step: step,
            last_step: step * cfg.refine_step_ratio,
        };
        let run = adam_run(design, counts, cfg, x0, &stage)?;
        (run.x, step * cfg.refine_step_ratio)
    } else {
        (x0, step)
    };
    let stage = Stage {
        loss: cfg.loss,
        iters: cfg.max_iters,
        first_step,
        last_step: step * cfg.final_step_ratio,
    };
    let mut run = adam_run(design, counts, cfg, x0, &stage)?;
    if warm {
        run.iterations += cfg.warmup_iters;
    }
    Some(run)
}

/// Reconstructs `x` from counts with restarted Adam; returns the restart with
/// the lowest final loss.
pub fn reconstruct(
    design: &MeasurementDesign,
    counts: &[f64],
    cfg: &OptimizerConfig,
    seed: u64,
) -> Result<Reconstruction> {
    cfg.validate()?;
    check_counts(design, counts)?;
    let n = design.n_modes();
    let energy = observed_energy(design, counts);
    let amplitude = (energy / n as f64).sqrt().max(1e-12);

    let mut best: Option<(usize, Run)> = None;
    let mut diverged = 0usize;
    for restart in 0..cfg.restarts {
        let mut step = cfg.step_size * amplitude;
        let x0 = initial_point(n, energy, cfg.init, seed::derive(seed, restart as u64));
        let mut run = None;
        for _ in 0..4 {
            run = staged_run(design, counts, cfg, x0.clone(), step);
            if run.is_some() {
                break;
            }
            diverged += 1;
            step *= 0.5;
        }
        let Some(run) = run else { continue };
        if best.as_ref().is_none_or(|(_, b)| run.loss < b.loss) {
            best = Some((restart, run));
        }
    }
    let Some((restart, run)) = best else {
        return Err(Error::OptimizationFailure(format!(
            "all {} restarts diverged",
            cfg.restarts
        )));
    };
    Ok(Reconstruction {
        field: ComplexField::new(run.x)?,
        trace: run.trace,
        iterations: run.iterations,
        final_loss: run.loss,
        restart,
        diverged_attempts: diverged,
    })
}

/// Linear quadrature-holography estimate: with counts `(d_0, d_1, d_2, d_3)`
/// at reference phases `(0, pi/2, pi, 3pi/2)`,
/// `Re x = (d_0 - d_2) / (2 rho)` and `Im x = (d_3 - d_1) / (2 rho)`.
pub fn holographic_estimate(design: &MeasurementDesign, counts: &[f64]) -> Result<ComplexField> {
    if design.kind() != DesignKind::Holographic {
        return invalid("holographic_estimate needs a holographic design");
    }
    check_counts(design, counts)?;
    let reference = design.reference().expect("holographic designs carry a reference");
    let mut values = Vec::with_capacity(design.n_modes());
    for (g, members) in design.groups().iter().enumerate() {
        let rho = reference[4 * g];
        if !(rho > 0.0) {
            return invalid("reference amplitude must be positive for linear inversion");
        }
        if reference[4 * g..4 * g + 4].iter().any(|&r| r != rho) {
            return invalid("quadrature rows of a mode must share one reference amplitude");
        }
        let d = &counts[4 * g..4 * g + 4];
        // Undo the column scale so the estimate is of x itself.
        let s = design.column_scale()[members[0]];
        values.push(Complex64::new(
            (d[0] - d[2]) / (2.0 * rho * s),
            (d[3] - d[1]) / (2.0 * rho * s),
        ));
    }
    let mut out = vec![Complex64::new(0.0, 0.0); design.n_modes()];
    for (members, v) in design.groups().iter().zip(values) {
        out[members[0]] = v;
    }
    ComplexField::new(out)
}
