//! Semiclassical forward model: expected intensities `|rho + A x|^2` and
//! independent Poisson photon counts per detector.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::design::MeasurementDesign;
use crate::error::{invalid, Result};
use crate::field::ComplexField;
use crate::seed;

/// Rates below this use sequential-search inversion; above it, PTRS.
const INVERSION_LIMIT: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub counts: Vec<u64>,
    pub expected_intensity: Vec<f64>,
    pub seed: u64,
}

impl DetectionRecord {
    pub fn total_counts(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Counts as reals, the form consumed by the estimators.
    pub fn counts_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }
}

/// Expected photon counts `|y_m|^2` with `y = rho + A x`.
pub fn intensities(design: &MeasurementDesign, x: &ComplexField) -> Result<Vec<f64>> {
    if design.n_modes() != x.n_modes() {
        return invalid(format!(
            "design has {} modes, field has {}",
            design.n_modes(),
            x.n_modes()
        ));
    }
    Ok(design.apply(x.values()).iter().map(|y| y.norm_sqr()).collect())
}

/// Independent Poisson draws with the given rates.
pub fn sample_counts(intensity: &[f64], seed: u64) -> Result<DetectionRecord> {
    if let Some(i) = intensity.iter().position(|v| !(*v >= 0.0) || !v.is_finite()) {
        return invalid(format!("intensity {i} is negative or not finite"));
    }
    let mut rng = seed::rng(seed);
    let counts = intensity.iter().map(|&rate| poisson(&mut rng, rate)).collect();
    Ok(DetectionRecord {
        counts,
        expected_intensity: intensity.to_vec(),
        seed,
    })
}

/// Exact Poisson variate for `rate >= 0`.
pub fn poisson<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> u64 {
    if rate <= 0.0 {
        0
    } else if rate < INVERSION_LIMIT {
        poisson_inversion(rng, rate)
    } else {
        poisson_ptrs(rng, rate)
    }
}

fn poisson_inversion<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> u64 {
    let u: f64 = rng.random();
    let mut k = 0u64;
    let mut p = (-rate).exp();
    let mut cdf = p;
    // Floating-point tail: stop when the pmf underflows relative to the cdf.
    while u > cdf && p > 0.0 {
        k += 1;
        p *= rate / k as f64;
        cdf += p;
    }
    k
}

/// Hormann's transformed rejection with squeeze (PTRS).
fn poisson_ptrs<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> u64 {
    let slam = rate.sqrt();
    let loglam = rate.ln();
    let b = 0.931 + 2.53 * slam;
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let v_r = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u: f64 = rng.random::<f64>() - 0.5;
        let v: f64 = rng.random();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + rate + 0.43).floor();
        if us >= 0.07 && v <= v_r {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        let lhs = v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln();
        let rhs = -rate + k * loglam - ln_gamma(k + 1.0);
        if lhs <= rhs {
            return k as u64;
        }
    }
}

const COUNTS_MAGIC: &[u8; 4] = b"PNCT";
const COUNTS_VERSION: u32 = 1;

/// Writes counts as `PNCT`, version `u32`, length `u64`, then `u64` counts,
/// all little-endian.
pub fn write_counts_binary<W: Write>(mut w: W, counts: &[u64]) -> Result<()> {
    w.write_all(COUNTS_MAGIC)?;
    w.write_all(&COUNTS_VERSION.to_le_bytes())?;
    w.write_all(&(counts.len() as u64).to_le_bytes())?;
    for c in counts {
        w.write_all(&c.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_counts_binary<R: Read>(mut r: R) -> Result<Vec<u64>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != COUNTS_MAGIC {
        return invalid("not a counts file (bad magic)");
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != COUNTS_VERSION {
        return invalid(format!("unsupported counts version {version}"));
    }
    let mut long = [0u8; 8];
    r.read_exact(&mut long)?;
    let len = u64::from_le_bytes(long) as usize;
    let mut counts = Vec::with_capacity(len.min(1 << 24));
    for _ in 0..len {
        r.read_exact(&mut long)?;
        counts.push(u64::from_le_bytes(long));
    }
    Ok(counts)
}
