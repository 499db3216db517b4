//! `phasenet` command-line driver.
//!
//! Failures exit nonzero with `{"error": kind, "message": text}` on stderr.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use phasenet::bounds::fisher;
use phasenet::estimate::{holographic_estimate, reconstruct};
use phasenet::forward::{read_counts_binary, write_counts_binary};
use phasenet::harness::{rows_to_csv, ExperimentConfig};
use phasenet::seed::{self, stream};
use phasenet::{
    holographic_design, intensities, random_field, random_group_design, sample_counts,
    ComplexField, DesignKind, DetectionRecord, MeasurementDesign, Result,
};

#[derive(Parser)]
#[command(name = "phasenet", version, about = "Coded interferometric phase retrieval experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML); flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    trials: Option<usize>,
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Build a measurement design and write it as JSON.
    Design {
        #[arg(long)]
        n: Option<usize>,
        /// Modes per group.
        #[arg(long = "L")]
        l: Option<usize>,
        /// Interferometer outputs per group; follows the configured policy when omitted.
        #[arg(long = "Q")]
        q: Option<usize>,
        /// Build the four-phase holographic design with this reference amplitude.
        #[arg(long)]
        holographic_rho: Option<f64>,
    },
    /// Draw Poisson counts for a design and a field.
    Simulate {
        #[arg(long)]
        design: PathBuf,
        /// Field JSON; a random field at the configured photon budget when omitted.
        #[arg(long)]
        field: Option<PathBuf>,
        /// Where to save the field used.
        #[arg(long)]
        field_out: Option<PathBuf>,
        /// Write counts in the binary counts format instead of JSON.
        #[arg(long)]
        binary: bool,
    },
    /// Estimate the field from counts.
    Reconstruct {
        #[arg(long)]
        design: PathBuf,
        /// Detection record JSON or binary counts file.
        #[arg(long)]
        counts: PathBuf,
        /// Per-iteration loss trace CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Fisher information summary for a design and field.
    Bound {
        #[arg(long)]
        design: PathBuf,
        #[arg(long)]
        field: PathBuf,
    },
    /// Run the configured parameter sweep and write its CSV table.
    Sweep,
    /// Run the configured multiscale experiment and write its CSV table.
    Multiscale,
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(t) = common.trials {
        cfg.trials = t;
    }
    if let Some(t) = common.threads {
        cfg.threads = Some(t);
    }
    if let Some(out) = &common.out {
        cfg.output_path = Some(out.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(p) => fs::write(p, bytes)?,
        None => io::stdout().write_all(bytes)?,
    }
    Ok(())
}

fn read_design(path: &Path) -> Result<MeasurementDesign> {
    MeasurementDesign::from_json(&fs::read_to_string(path)?)
}

fn read_field(path: &Path) -> Result<ComplexField> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Accepts either a detection record JSON or a binary counts file.
fn read_counts(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path)?;
    let counts = if bytes.starts_with(b"PNCT") {
        read_counts_binary(bytes.as_slice())?
    } else {
        serde_json::from_slice::<DetectionRecord>(&bytes)?.counts
    };
    Ok(counts.into_iter().map(|c| c as f64).collect())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.common)?;
    let out = cli.common.out.as_deref();
    match cli.command {
        Command::Design { n, l, q, holographic_rho } => {
            let n = n.unwrap_or(cfg.n_list[0]);
            let design = match holographic_rho {
                Some(rho) => holographic_design(n, rho)?,
                None => {
                    let l = l.or(cfg.l_list.first().copied()).unwrap_or(2);
                    let q = q.unwrap_or_else(|| cfg.q_for(l));
                    random_group_design(n, l, q, cfg.seed)?
                }
            };
            let mut text = design.to_json()?;
            text.push('\n');
            emit(out, text.as_bytes())
        }
        Command::Simulate { design, field, field_out, binary } => {
            let design = read_design(&design)?;
            let x = match field {
                Some(p) => read_field(&p)?,
                None => random_field(
                    design.n_modes(),
                    cfg.photons_per_mode,
                    seed::derive(cfg.seed, stream::FIELD),
                )?,
            };
            if let Some(p) = field_out {
                fs::write(p, serde_json::to_string(&x)?)?;
            }
            let record = sample_counts(&intensities(&design, &x)?, seed::derive(cfg.seed, stream::COUNTS))?;
            if binary {
                let mut buf = Vec::new();
                write_counts_binary(&mut buf, &record.counts)?;
                emit(out, &buf)
            } else {
                emit(out, serde_json::to_string(&record)?.as_bytes())
            }
        }
        Command::Reconstruct { design, counts, trace } => {
            let design = read_design(&design)?;
            let counts = read_counts(&counts)?;
            let field = if design.kind() == DesignKind::Holographic {
                holographic_estimate(&design, &counts)?
            } else {
                let rec = cfg.install(|| {
                    reconstruct(&design, &counts, &cfg.optimizer, seed::derive(cfg.seed, stream::RECONSTRUCT))
                })??;
                if let Some(p) = trace {
                    fs::write(p, rec.trace_csv())?;
                }
                rec.field
            };
            emit(out, serde_json::to_string(&field)?.as_bytes())
        }
        Command::Bound { design, field } => {
            let design = read_design(&design)?;
            let x = read_field(&field)?;
            let summary = fisher(&design, &x)?.summary();
            emit(out, serde_json::to_string_pretty(&summary)?.as_bytes())
        }
        Command::Sweep => {
            let rows = phasenet::run_sweep(&cfg)?;
            if cfg.output_path.is_none() {
                rows_to_csv(&rows, io::stdout())?;
            }
            Ok(())
        }
        Command::Multiscale => {
            let rows = phasenet::run_multiscale(&cfg)?;
            if cfg.output_path.is_none() {
                rows_to_csv(&rows, io::stdout())?;
            }
            Ok(())
        }
    }
}

fn report(kind: &str, message: &str) {
    let body = serde_json::json!({ "error": kind, "message": message });
    eprintln!("{body}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report("usage", e.to_string().trim());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(e.kind(), &e.to_string());
            ExitCode::FAILURE
        }
    }
}
