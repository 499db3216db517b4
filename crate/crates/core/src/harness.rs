//! Experiment driver: TOML configuration and CSV result tables for sweeps.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{self, MAX_DENSE_MODES};
use crate::design::{holographic_design, random_group_design, MeasurementDesign};
use crate::error::{Error, Result};
use crate::estimate::{holographic_estimate, reconstruct, OptimizerConfig};
use crate::field::{mse, random_field, ComplexField, Gauge};
use crate::forward::{intensities, sample_counts};
use crate::multiscale::{build_plan_with_fraction, run_pipeline};
use crate::seed::{self, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Design,
    Simulate,
    Reconstruct,
    Bound,
    #[default]
    Sweep,
    Multiscale,
}

/// How the number of interferometer outputs follows from the group size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QPolicy {
    /// `Q = 3` for pairs, `Q = L` otherwise.
    #[default]
    ThreeForPairs,
    QEqualsL,
    /// `Q` taken from the `Q` field.
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub n_list: Vec<usize>,
    #[serde(rename = "L_list")]
    pub l_list: Vec<usize>,
    #[serde(rename = "Q_policy")]
    pub q_policy: QPolicy,
    #[serde(rename = "Q", skip_serializing_if = "Option::is_none")]
    pub q_explicit: Option<usize>,
    pub photons_per_mode: f64,
    pub trials: usize,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
    /// Adds holography rows with `rho = factor * max|x|` when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub holography_rho_factor: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_path: Option<PathBuf>,
    /// Worker threads; all cores when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    /// Largest `n` for which the dense Fisher bound is computed.
    pub crlb_max_n: usize,
    /// Block exponents `q` for multiscale runs.
    pub block_log2: Vec<u32>,
    pub cross_energy_fraction: f64,
    /// Largest `n` for which the multiscale table includes a global baseline.
    pub global_max_n: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Sweep,
            n_list: vec![64],
            l_list: vec![2],
            q_policy: QPolicy::ThreeForPairs,
            q_explicit: None,
            photons_per_mode: 1e4,
            trials: 1,
            seed: 0,
            optimizer: OptimizerConfig::default(),
            holography_rho_factor: None,
            output_path: None,
            threads: None,
            crlb_max_n: MAX_DENSE_MODES,
            block_log2: vec![5],
            cross_energy_fraction: crate::multiscale::DEFAULT_CROSS_ENERGY_FRACTION,
            global_max_n: 1 << 14,
        }
    }
}

fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return config_err("trials must be >= 1");
        }
        if self.n_list.is_empty() || self.n_list.iter().any(|&n| n < 2) {
            return config_err("n_list must be non-empty with entries >= 2");
        }
        if self.l_list.iter().any(|&l| l < 2) {
            return config_err("L_list entries must be >= 2");
        }
        if !(self.photons_per_mode > 0.0 && self.photons_per_mode.is_finite()) {
            return config_err("photons_per_mode must be positive");
        }
        if let Some(f) = self.holography_rho_factor {
            if !(f > 0.0 && f.is_finite()) {
                return config_err("holography_rho_factor must be positive");
            }
        }
        if self.threads == Some(0) {
            return config_err("threads must be >= 1");
        }
        match (self.q_policy, self.q_explicit) {
            (QPolicy::Explicit, None) => return config_err("Q_policy = \"explicit\" needs Q"),
            (QPolicy::Explicit, Some(q)) if self.l_list.iter().any(|&l| q < l) => {
                return config_err("explicit Q must be >= every L")
            }
            _ => {}
        }
        if !(self.cross_energy_fraction > 0.0 && self.cross_energy_fraction < 1.0) {
            return config_err("cross_energy_fraction must lie in (0, 1)");
        }
        self.optimizer.validate().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn q_for(&self, l: usize) -> usize {
        match self.q_policy {
            QPolicy::ThreeForPairs if l == 2 => 3,
            QPolicy::ThreeForPairs | QPolicy::QEqualsL => l,
            QPolicy::Explicit => self.q_explicit.unwrap_or(l),
        }
    }

    /// Runs `f` on a pool sized by `threads`.
    pub fn install<T: Send>(&self, f: impl FnOnce() -> T + Send) -> Result<T> {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(t) = self.threads {
            builder = builder.num_threads(t);
        }
        let pool = builder
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        Ok(pool.install(f))
    }
}

/// Seed of one table row. Every random draw made for that row derives
/// from it.
pub fn trial_seed(base: u64, n: usize, l: usize, trial: usize) -> u64 {
    let s = seed::derive(base, stream::TRIAL);
    seed::derive(seed::derive(seed::derive(s, n as u64), l as u64), trial as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    PhaseRetrieval,
    Holography,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "Q")]
    pub q: usize,
    pub trial: usize,
    pub seed: u64,
    pub mse_per_mode: f64,
    pub crlb_per_mode: Option<f64>,
    pub time_per_mode_us: f64,
    pub iters: usize,
    pub final_loss: Option<f64>,
    pub method: Method,
}

/// One phase-retrieval row, fully determined by `(n, L, Q, seed)` and the
/// optimizer settings.
pub fn phase_retrieval_trial(
    n: usize,
    l: usize,
    q: usize,
    seed: u64,
    photons_per_mode: f64,
    optimizer: &OptimizerConfig,
    crlb_max_n: usize,
) -> Result<SweepRow> {
    let design = random_group_design(n, l, q, seed::derive(seed, stream::DESIGN))?;
    let x = random_field(n, photons_per_mode, seed::derive(seed, stream::FIELD))?;
    let record = sample_counts(&intensities(&design, &x)?, seed::derive(seed, stream::COUNTS))?;
    let start = Instant::now();
    let rec = reconstruct(
        &design,
        &record.counts_f64(),
        optimizer,
        seed::derive(seed, stream::RECONSTRUCT),
    )?;
    let elapsed = start.elapsed();
    let err = mse(&rec.field, &x, Gauge::Aligned)?;
    Ok(SweepRow {
        n,
        l,
        q,
        trial: 0,
        seed,
        mse_per_mode: err.mse_per_mode,
        crlb_per_mode: crlb_per_mode(&design, &x, crlb_max_n),
        time_per_mode_us: elapsed.as_secs_f64() * 1e6 / n as f64,
        iters: rec.iterations,
        final_loss: Some(rec.final_loss),
        method: Method::PhaseRetrieval,
    })
}

/// Holographic baseline row; reported with `L = 1`, `Q = 4`.
pub fn holography_trial(
    n: usize,
    seed: u64,
    photons_per_mode: f64,
    rho_factor: f64,
    crlb_max_n: usize,
) -> Result<SweepRow> {
    let x = random_field(n, photons_per_mode, seed::derive(seed, stream::FIELD))?;
    let design = holographic_design(n, rho_factor * x.max_abs())?;
    let record = sample_counts(
        &intensities(&design, &x)?,
        seed::derive(seed, stream::HOLOGRAPHY),
    )?;
    let start = Instant::now();
    let est = holographic_estimate(&design, &record.counts_f64())?;
    let elapsed = start.elapsed();
    let err = mse(&est, &x, Gauge::Fixed)?;
    Ok(SweepRow {
        n,
        l: 1,
        q: 4,
        trial: 0,
        seed,
        mse_per_mode: err.mse_per_mode,
        crlb_per_mode: crlb_per_mode(&design, &x, crlb_max_n),
        time_per_mode_us: elapsed.as_secs_f64() * 1e6 / n as f64,
        iters: 0,
        final_loss: None,
        method: Method::Holography,
    })
}

/// Gauge-free CRLB per mode, comparable with aligned MSE.
fn crlb_per_mode(design: &MeasurementDesign, x: &ComplexField, max_n: usize) -> Option<f64> {
    if x.n_modes() > max_n.min(MAX_DENSE_MODES) {
        return None;
    }
    bounds::fisher(design, x)
        .ok()
        .map(|f| f.crlb_trace_pinv / x.n_modes() as f64)
        .filter(|v| v.is_finite())
}

enum Job {
    Retrieval { n: usize, l: usize, q: usize, trial: usize },
    Holography { n: usize, trial: usize },
}

/// Creates the output file up front so that an unwritable path fails before
/// any computation.
fn open_output(path: Option<&Path>) -> Result<Option<File>> {
    path.map(File::create).transpose().map_err(Error::from)
}

fn write_csv<T: Serialize>(file: File, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Phase-retrieval sweep over `n_list x L_list x trials`, plus holography rows
/// when configured. Rows are sorted by method, `n`, `L`, trial.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let out = open_output(cfg.output_path.as_deref())?;
    let mut jobs = Vec::new();
    for &n in &cfg.n_list {
        for &l in &cfg.l_list {
            for trial in 0..cfg.trials {
                jobs.push(Job::Retrieval { n, l, q: cfg.q_for(l), trial });
            }
        }
        if cfg.holography_rho_factor.is_some() {
            for trial in 0..cfg.trials {
                jobs.push(Job::Holography { n, trial });
            }
        }
    }
    let mut rows = cfg.install(|| {
        jobs.par_iter()
            .map(|job| match *job {
                Job::Retrieval { n, l, q, trial } => {
                    let s = trial_seed(cfg.seed, n, l, trial);
                    phase_retrieval_trial(n, l, q, s, cfg.photons_per_mode, &cfg.optimizer, cfg.crlb_max_n)
                        .map(|r| SweepRow { trial, ..r })
                }
                Job::Holography { n, trial } => {
                    let s = trial_seed(cfg.seed, n, 1, trial);
                    let factor = cfg.holography_rho_factor.unwrap_or(1.0);
                    holography_trial(n, s, cfg.photons_per_mode, factor, cfg.crlb_max_n)
                        .map(|r| SweepRow { trial, ..r })
                }
            })
            .collect::<Result<Vec<_>>>()
    })??;
    rows.sort_by_key(|r| (r.method, r.n, r.l, r.trial));
    if let Some(f) = out {
        write_csv(f, &rows)?;
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiscaleRow {
    pub n: usize,
    pub q: u32,
    pub trial: usize,
    pub seed: u64,
    pub mse_stitched: f64,
    pub mse_global: Option<f64>,
    pub penalty_db: Option<f64>,
}

/// One multiscale row. The global baseline is the same pipeline with a single
/// block spanning all modes, run on the same field.
pub fn multiscale_trial(
    n: usize,
    q: u32,
    seed: u64,
    cfg: &ExperimentConfig,
) -> Result<MultiscaleRow> {
    let x = random_field(n, cfg.photons_per_mode, seed::derive(seed, stream::FIELD))?;
    let k = n.trailing_zeros();
    let run = |q: u32| -> Result<f64> {
        let plan = build_plan_with_fraction(n, q, seed, cfg.cross_energy_fraction)?;
        let out = run_pipeline(&plan, &x, &cfg.optimizer, seed)?;
        Ok(mse(&out.field, &x, Gauge::Aligned)?.mse_per_mode)
    };
    let mse_stitched = run(q)?;
    let mse_global = if q == k {
        Some(mse_stitched)
    } else if n <= cfg.global_max_n {
        Some(run(k)?)
    } else {
        None
    };
    Ok(MultiscaleRow {
        n,
        q,
        trial: 0,
        seed,
        mse_stitched,
        mse_global,
        penalty_db: mse_global.map(|g| 10.0 * (mse_stitched / g).log10()),
    })
}

/// Multiscale table over `n_list x block_log2 x trials`; timing-free, so the
/// output is byte-identical for a fixed configuration.
pub fn run_multiscale(cfg: &ExperimentConfig) -> Result<Vec<MultiscaleRow>> {
    cfg.validate()?;
    for &n in &cfg.n_list {
        if !n.is_power_of_two() {
            return config_err(format!("multiscale needs power-of-two n, got {n}"));
        }
        if let Some(q) = cfg.block_log2.iter().find(|&&q| q > n.trailing_zeros() || q == 0) {
            return config_err(format!("block exponent {q} is not in 1..=log2({n})"));
        }
    }
    if cfg.block_log2.is_empty() {
        return config_err("block_log2 must be non-empty");
    }
    let out = open_output(cfg.output_path.as_deref())?;
    let mut jobs = Vec::new();
    for &n in &cfg.n_list {
        for &q in &cfg.block_log2 {
            for trial in 0..cfg.trials {
                jobs.push((n, q, trial));
            }
        }
    }
    let mut rows = cfg.install(|| {
        jobs.par_iter()
            .map(|&(n, q, trial)| {
                // Rows for different q share a field through the seed.
                let s = trial_seed(cfg.seed, n, 0, trial);
                multiscale_trial(n, q, s, cfg).map(|r| MultiscaleRow { trial, ..r })
            })
            .collect::<Result<Vec<_>>>()
    })??;
    rows.sort_by_key(|r| (r.n, r.q, r.trial));
    if let Some(f) = out {
        write_csv(f, &rows)?;
    }
    Ok(rows)
}

/// Writes any serializable rows as CSV to `w`.
pub fn rows_to_csv<T: Serialize, W: Write>(rows: &[T], w: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Median of a slice; `NaN` for an empty slice.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}
