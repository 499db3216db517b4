//! Block-based phase retrieval.
//!
//! The field is split into `2^(k-q)` rank-0 blocks of `2^q` modes. Each block
//! is measured by its own random pair design and reconstructed on its own,
//! leaving one unknown phase per block. A complete binary tree over the blocks
//! then resolves those phases bottom-up: at level `k`, every rank-0 block of a
//! left subtree is paired mode-for-mode with the corresponding rank-0 block of
//! its right sibling, and the right subtree is rotated by the circular mean of
//! the relative phases read off those cross connections.

use std::ops::Range;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{dft_code, random_group_design, MeasurementDesign};
use crate::error::{invalid, Error, Result};
use crate::estimate::{reconstruct, OptimizerConfig};
use crate::field::ComplexField;
use crate::forward::{intensities, sample_counts, DetectionRecord};
use crate::seed::{self, stream};

pub const DEFAULT_CROSS_ENERGY_FRACTION: f64 = 0.05;

/// Outputs per cross connection.
const CROSS_Q: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiscalePlan {
    pub n: usize,
    /// `log2` of the rank-0 block size.
    pub q: u32,
    pub seed: u64,
    pub cross_energy_fraction: f64,
    /// Mode range of each rank-0 block.
    pub blocks: Vec<Range<usize>>,
    /// Per-block pair designs over local indices `0..2^q`.
    pub intra_designs: Vec<MeasurementDesign>,
    /// One design over all `n` modes per tree level, level 1 first.
    pub cross_designs: Vec<MeasurementDesign>,
}

/// Sibling subtrees joined at one tree level, as rank-0 block index ranges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SiblingPair {
    pub level: usize,
    pub left: Range<usize>,
    pub right: Range<usize>,
}

impl MultiscalePlan {
    pub fn block_size(&self) -> usize {
        1 << self.q
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn levels(&self) -> usize {
        self.cross_designs.len()
    }

    /// Fraction of `||x||^2` sent to the intra-block designs.
    pub fn intra_fraction(&self) -> f64 {
        if self.levels() == 0 {
            1.0
        } else {
            1.0 - self.cross_energy_fraction
        }
    }

    /// Fraction of `||x||^2` sent to each level's cross design.
    pub fn cross_fraction_per_level(&self) -> f64 {
        if self.levels() == 0 {
            0.0
        } else {
            self.cross_energy_fraction / self.levels() as f64
        }
    }

    /// Sibling pairs of the pairing tree at `level` (1-based).
    pub fn pairs(&self, level: usize) -> Vec<SiblingPair> {
        let span = 1usize << level;
        let half = span / 2;
        (0..self.n_blocks())
            .step_by(span)
            .map(|start| SiblingPair {
                level,
                left: start..start + half,
                right: start + half..start + span,
            })
            .collect()
    }

    fn modes_of(&self, blocks: &Range<usize>) -> Range<usize> {
        self.blocks[blocks.start].start..self.blocks[blocks.end - 1].end
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Builds the block hierarchy for `n = 2^k` modes with `2^q`-mode blocks.
pub fn build_plan(n: usize, q: u32, seed: u64) -> Result<MultiscalePlan> {
    build_plan_with_fraction(n, q, seed, DEFAULT_CROSS_ENERGY_FRACTION)
}

pub fn build_plan_with_fraction(
    n: usize,
    q: u32,
    seed: u64,
    cross_energy_fraction: f64,
) -> Result<MultiscalePlan> {
    if n < 2 || !n.is_power_of_two() {
        return invalid(format!("n = {n} must be a power of two >= 2"));
    }
    let k = n.trailing_zeros();
    if q > k {
        return invalid(format!("block exponent q = {q} exceeds log2 n = {k}"));
    }
    if q == 0 {
        return invalid("blocks need at least two modes (q >= 1)");
    }
    if !(cross_energy_fraction > 0.0 && cross_energy_fraction < 1.0) {
        return invalid("cross_energy_fraction must lie in (0, 1)");
    }
    let size = 1usize << q;
    let n_blocks = n / size;
    let blocks: Vec<Range<usize>> = (0..n_blocks).map(|b| b * size..(b + 1) * size).collect();
    let intra_designs = (0..n_blocks)
        .map(|b| {
            random_group_design(size, 2, 3, seed::derive(seed::derive(seed, stream::DESIGN), b as u64))
        })
        .collect::<Result<Vec<_>>>()?;

    let levels = (k - q) as usize;
    let mut cross_designs = Vec::with_capacity(levels);
    for level in 1..=levels {
        let span = 1usize << level;
        let half = span / 2;
        let mut groups = Vec::with_capacity(2 * n);
        for start in (0..n_blocks).step_by(span) {
            for j in 0..half {
                let a = &blocks[start + j];
                let b = &blocks[start + half + j];
                for i in 0..size {
                    groups.push(vec![a.start + i, b.start + i]);
                    groups.push(vec![a.start + i, b.start + (i + 1) % size]);
                }
            }
        }
        cross_designs.push(MeasurementDesign::from_groups(
            n,
            dft_code(CROSS_Q, 2)?,
            groups,
            Some(seed),
        )?);
    }
    Ok(MultiscalePlan {
        n,
        q,
        seed,
        cross_energy_fraction,
        blocks,
        intra_designs,
        cross_designs,
    })
}

/// Counts from every sub-design of a plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiscaleRecord {
    pub intra: Vec<DetectionRecord>,
    pub cross: Vec<DetectionRecord>,
}

/// Expected intensities per sub-design: intra blocks, then cross levels.
pub type PlanIntensities = (Vec<Vec<f64>>, Vec<Vec<f64>>);

/// Expected intensities of every sub-design. The field is amplitude-scaled by
/// the square root of each design's energy fraction.
pub fn plan_intensities(plan: &MultiscalePlan, x: &ComplexField) -> Result<PlanIntensities> {
    if x.n_modes() != plan.n {
        return invalid("field and plan dimensions differ");
    }
    let intra_amp = plan.intra_fraction().sqrt();
    let intra = plan
        .blocks
        .iter()
        .zip(&plan.intra_designs)
        .map(|(range, d)| {
            let local = ComplexField::new(x.values()[range.clone()].iter().map(|v| v * intra_amp).collect())?;
            intensities(d, &local)
        })
        .collect::<Result<Vec<_>>>()?;
    let cross_field = x.scaled(plan.cross_fraction_per_level().sqrt());
    let cross = plan
        .cross_designs
        .iter()
        .map(|d| intensities(d, &cross_field))
        .collect::<Result<Vec<_>>>()?;
    Ok((intra, cross))
}

pub fn simulate(plan: &MultiscalePlan, x: &ComplexField, seed: u64) -> Result<MultiscaleRecord> {
    let (intra, cross) = plan_intensities(plan, x)?;
    let intra_seed = seed::derive(seed, stream::COUNTS);
    let cross_seed = seed::derive(seed, stream::CROSS_COUNTS);
    Ok(MultiscaleRecord {
        intra: intra
            .iter()
            .enumerate()
            .map(|(b, i)| sample_counts(i, seed::derive(intra_seed, b as u64)))
            .collect::<Result<_>>()?,
        cross: cross
            .iter()
            .enumerate()
            .map(|(l, i)| sample_counts(i, seed::derive(cross_seed, l as u64)))
            .collect::<Result<_>>()?,
    })
}

/// Independent rank-0 reconstructions, rescaled to full-field units.
pub fn reconstruct_blocks(
    plan: &MultiscalePlan,
    record: &MultiscaleRecord,
    cfg: &OptimizerConfig,
    seed: u64,
) -> Result<Vec<ComplexField>> {
    if record.intra.len() != plan.n_blocks() {
        return invalid("record does not match the plan's blocks");
    }
    let inv_amp = 1.0 / plan.intra_fraction().sqrt();
    let rec_seed = seed::derive(seed, stream::RECONSTRUCT);
    plan.intra_designs
        .par_iter()
        .zip(&record.intra)
        .enumerate()
        .map(|(b, (d, r))| {
            let est = reconstruct(d, &r.counts_f64(), cfg, seed::derive(rec_seed, b as u64))?;
            Ok(est.field.scaled(inv_amp))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhaseEstimate {
    /// Phase that rotates the right-hand estimate into the left-hand gauge.
    pub phase: f64,
    pub n_connections: usize,
    /// Length of the mean unit phasor, in [0, 1].
    pub coherence: f64,
}

/// Relative phase between two mode sets from the cross connections that join
/// them.
///
/// For a connection with modes `a` (left) and `b` (right) at code columns
/// `la`, `lb`, `Q sum_q d_q conj(W[q, lb]) W[q, la]` estimates
/// `s_a s_b x_b conj(x_a)` up to the energy split. Given `x_b = e^{j phi} b_hat`
/// and `x_a = a_hat`, each connection votes for `phi`; the votes are combined
/// by their circular mean.
pub fn relative_phase(
    estimate: &[Complex64],
    left: Range<usize>,
    right: Range<usize>,
    cross_design: &MeasurementDesign,
    cross_counts: &[f64],
) -> Result<PhaseEstimate> {
    if estimate.len() != cross_design.n_modes() || cross_counts.len() != cross_design.m_rows() {
        return invalid("estimate, design and counts dimensions differ");
    }
    let code = cross_design.code();
    let qn = code.q_rows();
    if code.l_cols() != 2 || qn < 3 {
        return invalid("cross connections must be pairs with Q >= 3");
    }
    let mut sum = Complex64::new(0.0, 0.0);
    let mut n_connections = 0usize;
    let mut total_counts = 0.0;
    for (g, members) in cross_design.groups().iter().enumerate() {
        let (la, lb) = match (left.contains(&members[0]), right.contains(&members[1])) {
            (true, true) => (0, 1),
            _ if left.contains(&members[1]) && right.contains(&members[0]) => (1, 0),
            _ => continue,
        };
        let d = &cross_counts[g * qn..(g + 1) * qn];
        total_counts += d.iter().sum::<f64>();
        let z: Complex64 = d
            .iter()
            .enumerate()
            .map(|(q, &c)| code.get(q, lb).conj() * code.get(q, la) * c)
            .sum::<Complex64>()
            * qn as f64;
        let vote = z * estimate[members[la]] * estimate[members[lb]].conj();
        n_connections += 1;
        if vote.norm() > 0.0 {
            sum += vote / vote.norm();
        }
    }
    let coherence = if n_connections > 0 {
        sum.norm() / n_connections as f64
    } else {
        0.0
    };
    if n_connections == 0 || total_counts <= 0.0 || coherence < 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "no usable cross connections ({n_connections} found, {total_counts} counts)"
        )));
    }
    Ok(PhaseEstimate {
        phase: sum.arg(),
        n_connections,
        coherence,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseLogEntry {
    pub level: usize,
    /// First rank-0 block of the left and right subtrees.
    pub left_block: usize,
    pub right_block: usize,
    pub phase: f64,
    pub n_connections: usize,
}

#[derive(Debug, Clone)]
pub struct Stitched {
    pub field: ComplexField,
    pub log: Vec<PhaseLogEntry>,
}

impl Stitched {
    /// `level,block_pair,phase,n_connections` CSV.
    pub fn log_csv(&self) -> String {
        let mut s = String::from("level,block_pair,phase,n_connections\n");
        for e in &self.log {
            s.push_str(&format!(
                "{},{}-{},{},{}\n",
                e.level, e.left_block, e.right_block, e.phase, e.n_connections
            ));
        }
        s
    }
}

/// Merges block estimates bottom-up over the pairing tree.
pub fn stitch(
    plan: &MultiscalePlan,
    block_estimates: &[ComplexField],
    record: &MultiscaleRecord,
) -> Result<Stitched> {
    if block_estimates.len() != plan.n_blocks() || record.cross.len() != plan.levels() {
        return invalid("block estimates or cross records do not match the plan");
    }
    let mut est: Vec<Complex64> = Vec::with_capacity(plan.n);
    for (range, b) in plan.blocks.iter().zip(block_estimates) {
        if b.n_modes() != range.len() {
            return invalid("block estimate has the wrong length");
        }
        est.extend_from_slice(b.values());
    }
    let mut log = Vec::new();
    for level in 1..=plan.levels() {
        let design = &plan.cross_designs[level - 1];
        let counts = record.cross[level - 1].counts_f64();
        // Sibling pairs at one level touch disjoint modes.
        let phases = plan
            .pairs(level)
            .into_par_iter()
            .map(|pair| {
                let left = plan.modes_of(&pair.left);
                let right = plan.modes_of(&pair.right);
                match relative_phase(&est, left, right.clone(), design, &counts) {
                    Ok(p) => Ok((pair, right, p)),
                    Err(_) => Err(Error::UnreliablePhase {
                        level,
                        left: pair.left.start,
                        right: pair.right.start,
                    }),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        for (pair, right, p) in phases {
            let rot = Complex64::from_polar(1.0, p.phase);
            for v in &mut est[right] {
                *v *= rot;
            }
            log.push(PhaseLogEntry {
                level,
                left_block: pair.left.start,
                right_block: pair.right.start,
                phase: p.phase,
                n_connections: p.n_connections,
            });
        }
    }
    Ok(Stitched {
        field: ComplexField::new(est)?,
        log,
    })
}

/// Full run on one field: block reconstructions followed by stitching.
pub fn run_pipeline(
    plan: &MultiscalePlan,
    x: &ComplexField,
    cfg: &OptimizerConfig,
    seed: u64,
) -> Result<Stitched> {
    let record = simulate(plan, x, seed)?;
    let blocks = reconstruct_blocks(plan, &record, cfg, seed)?;
    stitch(plan, &blocks, &record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{mse, random_field, Gauge};

    #[test]
    fn plan_shapes() {
        let p = build_plan(64, 5, 1).unwrap();
        assert_eq!(p.n_blocks(), 2);
        assert_eq!(p.levels(), 1);
        let p = build_plan(256, 5, 1).unwrap();
        assert_eq!(p.n_blocks(), 8);
        assert_eq!(p.levels(), 3);
        assert_eq!(p.pairs(1).len(), 4);
        assert_eq!(p.pairs(3), vec![SiblingPair { level: 3, left: 0..4, right: 4..8 }]);
        for d in &p.intra_designs {
            assert!(d.degrees().iter().all(|&k| k == 10));
            assert!(d.is_connected());
        }
        for d in &p.cross_designs {
            assert!(d.degrees().iter().all(|&k| k == 2));
            assert!(d.orthonormality_error() < 1e-12);
        }
        assert!(build_plan(64, 7, 1).is_err());
        assert!(build_plan(48, 3, 1).is_err());
    }

    #[test]
    fn cross_connections_stay_within_siblings() {
        let p = build_plan(128, 3, 4).unwrap();
        for level in 1..=p.levels() {
            let pairs = p.pairs(level);
            for g in p.cross_designs[level - 1].groups() {
                let (a, b) = (g[0] >> 3, g[1] >> 3);
                let pair = pairs.iter().find(|s| s.left.contains(&a)).unwrap();
                assert!(pair.right.contains(&b));
                // Corresponding rank-0 blocks.
                assert_eq!(b - pair.right.start, a - pair.left.start);
            }
        }
    }

    #[test]
    fn energy_audit() {
        let p = build_plan(256, 5, 2).unwrap();
        let x = random_field(256, 1e4, 3).unwrap();
        let (intra, cross) = plan_intensities(&p, &x).unwrap();
        let total: f64 = intra.iter().chain(&cross).flatten().sum();
        assert!((total - x.energy()).abs() < 1e-9 * x.energy());
    }

    fn exact_record(p: &MultiscalePlan, x: &ComplexField) -> MultiscaleRecord {
        let (intra, cross) = plan_intensities(p, x).unwrap();
        let wrap = |v: Vec<f64>| DetectionRecord {
            counts: vec![0; v.len()],
            expected_intensity: v,
            seed: 0,
        };
        MultiscaleRecord {
            intra: intra.into_iter().map(wrap).collect(),
            cross: cross.into_iter().map(wrap).collect(),
        }
    }

    #[test]
    fn relative_phase_recovers_rotation() {
        let p = build_plan(4, 1, 0).unwrap();
        let x = random_field(4, 100.0, 8).unwrap();
        let (_, cross) = plan_intensities(&p, &x).unwrap();
        for phi in [0.0, 0.7, -2.0, 3.1, -3.1] {
            // Right block carries an unknown rotation relative to the truth.
            let mut est = x.values().to_vec();
            for v in &mut est[2..] {
                *v *= Complex64::from_polar(1.0, -phi);
            }
            let r = relative_phase(&est, 0..2, 2..4, &p.cross_designs[0], &cross[0]).unwrap();
            let err = crate::field::wrap_phase(r.phase - phi);
            assert!(err.abs() < 1e-9, "phi {phi}: got {}", r.phase);
            assert_eq!(r.n_connections, 4);
        }
    }

    #[test]
    fn relative_phase_flags_empty_counts() {
        let p = build_plan(4, 1, 0).unwrap();
        let est = random_field(4, 1.0, 1).unwrap();
        let zeros = vec![0.0; p.cross_designs[0].m_rows()];
        assert!(relative_phase(est.values(), 0..2, 2..4, &p.cross_designs[0], &zeros).is_err());
    }

    #[test]
    fn exact_inputs_stitch_exactly() {
        let p = build_plan(64, 4, 5).unwrap();
        let x = random_field(64, 1e4, 6).unwrap();
        let rec = exact_record(&p, &x);
        let blocks: Vec<ComplexField> = p
            .blocks
            .iter()
            .enumerate()
            .map(|(b, r)| ComplexField::new(x.values()[r.clone()].to_vec()).unwrap().rotated(b as f64 * 0.9 - 1.0))
            .collect();
        let est = stitch_exact(&p, &blocks, &rec);
        assert!(mse(&est, &x, Gauge::Aligned).unwrap().mse_total < 1e-16 * x.energy());
    }

    /// Stitch using expected intensities in place of counts.
    fn stitch_exact(p: &MultiscalePlan, blocks: &[ComplexField], rec: &MultiscaleRecord) -> ComplexField {
        let mut est: Vec<Complex64> = blocks.iter().flat_map(|b| b.values().to_vec()).collect();
        for level in 1..=p.levels() {
            for pair in p.pairs(level) {
                let left = p.modes_of(&pair.left);
                let right = p.modes_of(&pair.right);
                let ph = relative_phase(
                    &est,
                    left,
                    right.clone(),
                    &p.cross_designs[level - 1],
                    &rec.cross[level - 1].expected_intensity,
                )
                .unwrap();
                for v in &mut est[right] {
                    *v *= Complex64::from_polar(1.0, ph.phase);
                }
            }
        }
        ComplexField::new(est).unwrap()
    }

    #[test]
    fn stitching_preserves_block_shape_and_is_order_independent() {
        let p = build_plan(128, 4, 9).unwrap();
        let x = random_field(128, 1e4, 10).unwrap();
        let rec = simulate(&p, &x, 11).unwrap();
        let blocks: Vec<ComplexField> = p
            .blocks
            .iter()
            .enumerate()
            .map(|(b, r)| ComplexField::new(x.values()[r.clone()].to_vec()).unwrap().rotated(b as f64))
            .collect();
        let out = stitch(&p, &blocks, &rec).unwrap();
        for (r, b) in p.blocks.iter().zip(&blocks) {
            let part = &out.field.values()[r.clone()];
            let rot = part[0] / b.values()[0];
            assert!((rot.norm() - 1.0).abs() < 1e-12);
            for (u, v) in part.iter().zip(b.values()) {
                assert!((u - v * rot).norm() < 1e-12 * v.norm().max(1.0));
            }
        }

        // Reverse the pair order within every level.
        let mut est: Vec<Complex64> = blocks.iter().flat_map(|b| b.values().to_vec()).collect();
        for level in 1..=p.levels() {
            let counts = rec.cross[level - 1].counts_f64();
            let mut pairs = p.pairs(level);
            pairs.reverse();
            for pair in pairs {
                let right = p.modes_of(&pair.right);
                let ph = relative_phase(&est, p.modes_of(&pair.left), right.clone(), &p.cross_designs[level - 1], &counts).unwrap();
                for v in &mut est[right] {
                    *v *= Complex64::from_polar(1.0, ph.phase);
                }
            }
        }
        assert_eq!(est, out.field.values());
        assert_eq!(out.log.len(), p.n_blocks() - 1);
        assert!(out.log_csv().starts_with("level,block_pair,phase,n_connections\n1,0-1,"));
    }

    #[test]
    fn plan_json_round_trip() {
        let p = build_plan(32, 3, 1).unwrap();
        let back: MultiscalePlan = serde_json::from_str(&p.to_json().unwrap()).unwrap();
        assert_eq!(back, p);
    }
}
