//! Complex mode-amplitude vectors with global-phase alignment and error metrics.
//!
//! Amplitudes are in square-root-photon units, so `|x_n|^2` is directly the
//! expected photon count carried by mode `n`.

use std::f64::consts::FRAC_1_SQRT_2;

use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{invalid, Result};
use crate::seed;

/// Complex field over `N` modes.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    values: Vec<Complex64>,
}

impl ComplexField {
    pub fn new(values: Vec<Complex64>) -> Result<Self> {
        if values.is_empty() {
            return invalid("field must have at least one mode");
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return invalid("field values must be finite");
        }
        Ok(Self { values })
    }

    pub fn zeros(n: usize) -> Result<Self> {
        Self::new(vec![Complex64::new(0.0, 0.0); n])
    }

    pub fn n_modes(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    /// Total intensity `||x||^2`, the expected photon count of the field.
    pub fn energy(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Multiplies every mode by `e^{j phase}`.
    pub fn rotated(&self, phase: f64) -> Self {
        let p = Complex64::from_polar(1.0, phase);
        Self {
            values: self.values.iter().map(|v| v * p).collect(),
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }

    /// `<self, other> = sum_n conj(self_n) other_n`.
    pub fn inner(&self, other: &ComplexField) -> Complex64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }
}

impl Serialize for ComplexField {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.values.iter().map(|v| [v.re, v.im]))
    }
}

impl<'de> Deserialize<'de> for ComplexField {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let pairs: Vec<[f64; 2]> = Vec::deserialize(d)?;
        let values = pairs.into_iter().map(|[re, im]| Complex64::new(re, im)).collect();
        ComplexField::new(values).map_err(serde::de::Error::custom)
    }
}

/// Draws `n` i.i.d. modes from `CN(0, photons_per_mode)`.
pub fn random_field(n: usize, photons_per_mode: f64, seed: u64) -> Result<ComplexField> {
    if n == 0 {
        return invalid("n must be positive");
    }
    if !(photons_per_mode > 0.0) || !photons_per_mode.is_finite() {
        return invalid("photons_per_mode must be positive and finite");
    }
    let mut rng = seed::rng(seed);
    let sigma = photons_per_mode.sqrt() * FRAC_1_SQRT_2;
    let values = (0..n)
        .map(|_| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            Complex64::new(sigma * re, sigma * im)
        })
        .collect();
    ComplexField::new(values)
}

/// Result of removing the global phase of an estimate against a reference.
#[derive(Debug, Clone, PartialEq)]
pub struct GaugeAlignment {
    pub aligned: ComplexField,
    /// Rotation applied to the estimate, in (-pi, pi].
    pub phase: f64,
    /// Set when `<estimate, truth> = 0` and no rotation is identifiable.
    pub degenerate: bool,
}

pub fn gauge_align(estimate: &ComplexField, truth: &ComplexField) -> Result<GaugeAlignment> {
    check_lengths(estimate, truth)?;
    let overlap = estimate.inner(truth);
    let scale = estimate.energy().sqrt() * truth.energy().sqrt();
    if overlap.norm() <= 1e-300 || overlap.norm() <= 1e-15 * scale {
        return Ok(GaugeAlignment {
            aligned: estimate.clone(),
            phase: 0.0,
            degenerate: true,
        });
    }
    // Re<e^{j phi} est, truth> is maximal at phi = arg<est, truth>.
    let phase = wrap_phase(overlap.arg());
    Ok(GaugeAlignment {
        aligned: estimate.rotated(phase),
        phase,
        degenerate: false,
    })
}

/// Maps an angle into (-pi, pi].
pub fn wrap_phase(phase: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut p = phase % TAU;
    if p <= -PI {
        p += TAU;
    } else if p > PI {
        p -= TAU;
    }
    p
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gauge {
    Fixed,
    Aligned,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub mse_total: f64,
    pub mse_per_mode: f64,
    pub gauge_phase: f64,
}

/// Squared error `sum_n |est_n - truth_n|^2`, optionally after alignment.
pub fn mse(estimate: &ComplexField, truth: &ComplexField, gauge: Gauge) -> Result<ErrorReport> {
    check_lengths(estimate, truth)?;
    let (est, gauge_phase) = match gauge {
        Gauge::Fixed => (estimate.clone(), 0.0),
        Gauge::Aligned => {
            let a = gauge_align(estimate, truth)?;
            (a.aligned, a.phase)
        }
    };
    let mse_total: f64 = est
        .values
        .iter()
        .zip(&truth.values)
        .map(|(a, b)| (a - b).norm_sqr())
        .sum();
    Ok(ErrorReport {
        mse_total,
        mse_per_mode: mse_total / truth.n_modes() as f64,
        gauge_phase,
    })
}

fn check_lengths(a: &ComplexField, b: &ComplexField) -> Result<()> {
    if a.n_modes() != b.n_modes() {
        return invalid(format!(
            "length mismatch: {} vs {}",
            a.n_modes(),
            b.n_modes()
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn random_field_rejects_bad_arguments() {
        assert!(random_field(0, 1.0, 1).is_err());
        assert!(random_field(3, 0.0, 1).is_err());
        assert!(random_field(3, -2.0, 1).is_err());
    }

    #[test]
    fn random_field_is_deterministic() {
        let a = random_field(16, 1e4, 99).unwrap();
        let b = random_field(16, 1e4, 99).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, random_field(16, 1e4, 100).unwrap());
    }

    #[test]
    fn random_field_vanishes_with_photon_budget() {
        let x = random_field(1, 1e-300, 3).unwrap();
        assert!(x.energy() < 1e-290);
    }

    #[test]
    fn random_field_mean_intensity() {
        // 10^5 draws of |x_n|^2 for n = 4, i.e. 25_000 fields.
        let mut sum = 0.0;
        let mut count = 0usize;
        for s in 0..25_000u64 {
            let x = random_field(4, 1e4, seed::derive(7, s)).unwrap();
            sum += x.values().iter().map(|v| v.norm_sqr()).sum::<f64>();
            count += 4;
        }
        let mean = sum / count as f64;
        assert!((mean - 1e4).abs() < 1e2, "mean {mean}");
    }

    #[test]
    fn align_pure_rotation() {
        let truth = random_field(8, 100.0, 5).unwrap();
        let est = truth.rotated(1.3);
        let a = gauge_align(&est, &truth).unwrap();
        assert!(!a.degenerate);
        assert!((a.phase + 1.3).abs() < 1e-12);
        for (u, v) in a.aligned.values().iter().zip(truth.values()) {
            assert!((u - v).norm() < 1e-12);
        }
    }

    #[test]
    fn align_identity_and_orthogonal() {
        let truth = ComplexField::new(vec![c(1.0, 0.0), c(0.0, 0.0)]).unwrap();
        let a = gauge_align(&truth, &truth).unwrap();
        assert_eq!(a.phase, 0.0);
        assert_eq!(a.aligned, truth);

        let orth = ComplexField::new(vec![c(0.0, 0.0), c(0.0, 2.0)]).unwrap();
        let a = gauge_align(&orth, &truth).unwrap();
        assert!(a.degenerate);
        assert_eq!(a.phase, 0.0);
    }

    #[test]
    fn mse_examples() {
        let truth = ComplexField::new(vec![c(1.0, 0.0), c(0.0, 1.0)]).unwrap();
        let est = ComplexField::new(vec![c(1.0, 0.0), c(0.0, -1.0)]).unwrap();
        let r = mse(&est, &truth, Gauge::Fixed).unwrap();
        assert!((r.mse_total - 4.0).abs() < 1e-15);
        assert!((r.mse_per_mode - 2.0).abs() < 1e-15);
        assert_eq!(mse(&truth, &truth, Gauge::Fixed).unwrap().mse_total, 0.0);

        for phi in [-3.0, -0.4, 0.0, 1.0, 3.1] {
            let r = mse(&truth.rotated(phi), &truth, Gauge::Aligned).unwrap();
            assert!(r.mse_total < 1e-20);
        }
        let short = ComplexField::new(vec![c(1.0, 0.0)]).unwrap();
        assert!(mse(&short, &truth, Gauge::Fixed).is_err());
    }

    #[test]
    fn json_is_array_of_pairs() {
        let x = ComplexField::new(vec![c(1.5, -2.0), c(0.0, 3.0)]).unwrap();
        let s = serde_json::to_string(&x).unwrap();
        assert_eq!(s, "[[1.5,-2.0],[0.0,3.0]]");
        let back: ComplexField = serde_json::from_str(&s).unwrap();
        assert_eq!(back, x);
    }

    fn field_strategy(n: usize) -> impl Strategy<Value = ComplexField> {
        prop::collection::vec((-10.0..10.0f64, -10.0..10.0f64), n)
            .prop_map(|v| ComplexField::new(v.into_iter().map(|(a, b)| c(a, b)).collect()).unwrap())
    }

    proptest! {
        #[test]
        fn align_is_idempotent(t in field_strategy(6), e in field_strategy(6)) {
            let a = gauge_align(&e, &t).unwrap();
            prop_assume!(!a.degenerate);
            let again = gauge_align(&a.aligned, &t).unwrap();
            prop_assert!(again.phase.abs() < 1e-12);
        }

        #[test]
        fn aligned_never_worse_than_fixed(t in field_strategy(5), e in field_strategy(5)) {
            let fixed = mse(&e, &t, Gauge::Fixed).unwrap().mse_total;
            let aligned = mse(&e, &t, Gauge::Aligned).unwrap().mse_total;
            prop_assert!(aligned <= fixed * (1.0 + 1e-12) + 1e-12);
        }

        #[test]
        fn mse_invariant_under_common_rotation(
            t in field_strategy(5), e in field_strategy(5), phi in -3.2..3.2f64
        ) {
            for g in [Gauge::Fixed, Gauge::Aligned] {
                let a = mse(&e, &t, g).unwrap().mse_total;
                let b = mse(&e.rotated(phi), &t.rotated(phi), g).unwrap().mse_total;
                prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a));
            }
        }
    }
}
