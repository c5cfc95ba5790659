//! Command-line front end: train, generate, fid, gradcheck, config-dump.
//! Exit codes: 0 success, 1 runtime failure, 2 usage or config error.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use boolgan::checkpoint::Checkpoint;
use boolgan::data::DatasetIndex;
use boolgan::fid::{frechet_distance, gaussian_stats, load_features, EmbedderSpec, GaussianStats};
use boolgan::gradcheck;
use boolgan::grid::emit_grid;
use boolgan::rng::RngStream;
use boolgan::tensor::Tensor;
use boolgan::training::{
    generate_samples, generator_from_checkpoint, real_feature_stats, train, STREAM_GRID,
};

#[derive(Parser)]
#[command(name = "boolgan", about = "Convolutional GAN training and evaluation", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model and write metrics, checkpoints, and sample grids.
    Train {
        /// key=value config file; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override one config key, e.g. --set model=boolgan. Wins over the file.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Render a sample grid from a trained generator checkpoint.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Number of samples in the grid.
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output PNG path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fréchet distance between two sample sets, printed to stdout.
    Fid {
        /// Image directory or feature file.
        path_a: PathBuf,
        /// Image directory or feature file.
        path_b: PathBuf,
        #[arg(long, default_value_t = 0)]
        embedder_seed: u64,
        #[arg(long, default_value_t = 64)]
        embedder_dim: usize,
        /// Use at most this many items per side.
        #[arg(long, default_value_t = 1024)]
        sample_cap: usize,
    },
    /// Verify every backward pass against 64-bit central finite differences.
    Gradcheck {
        /// One row name, or "all".
        #[arg(default_value = "all")]
        scope: String,
        /// Corrupt one backward pass to exercise the failure path.
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Print the fully resolved configuration in canonical form.
    ConfigDump {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
}

/// Failure with its exit code: 1 for runtime errors, 2 for usage/config.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn runtime(message: impl Into<String>) -> Failure {
        Failure {
            code: 1,
            message: message.into(),
        }
    }

    fn usage(message: impl Into<String>) -> Failure {
        Failure {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<boolgan::Error> for Failure {
    fn from(e: boolgan::Error) -> Failure {
        Failure::runtime(e.to_string())
    }
}

impl From<config::ConfigError> for Failure {
    fn from(e: config::ConfigError) -> Failure {
        Failure::usage(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cmd: Cmd) -> Result<(), Failure> {
    match cmd {
        Cmd::Train { config, set } => cmd_train(config.as_deref(), &set),
        Cmd::Generate {
            checkpoint,
            n,
            seed,
            out,
        } => cmd_generate(&checkpoint, n, seed, &out),
        Cmd::Fid {
            path_a,
            path_b,
            embedder_seed,
            embedder_dim,
            sample_cap,
        } => cmd_fid(&path_a, &path_b, embedder_seed, embedder_dim, sample_cap),
        Cmd::Gradcheck {
            scope,
            inject_fault,
        } => cmd_gradcheck(&scope, inject_fault),
        Cmd::ConfigDump { config, set } => {
            let cfg = config::load(config.as_deref(), &set)?;
            print!("{}", config::dump(&cfg));
            Ok(())
        }
    }
}

fn cmd_train(config_path: Option<&Path>, sets: &[String]) -> Result<(), Failure> {
    let cfg = config::load(config_path, sets)?;
    let report = train::<f32>(&cfg)?;
    println!("iterations: {}", report.rows.last().map_or(0, |r| r.iteration));
    if let Some((it, fid)) = report.best {
        println!("best fid: {fid:.6} at iteration {it}");
    }
    println!("final checkpoint: {}", report.final_checkpoint.display());
    println!("wall seconds: {:.1}", report.wall_seconds);
    Ok(())
}

fn cmd_generate(checkpoint: &Path, n: usize, seed: u64, out: &Path) -> Result<(), Failure> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let (spec, params) = generator_from_checkpoint::<f32>(&ckpt)?;
    let mut rng = RngStream::new(seed, STREAM_GRID);
    let samples = generate_samples(&spec, &params, n, &mut rng)?;
    let mut cols = 1;
    while cols * cols < n {
        cols += 1;
    }
    let grid = emit_grid(&samples, cols)?;
    boolgan::data::save_png(out, &grid)?;
    println!("wrote {}", out.display());
    Ok(())
}

/// Feature statistics for one side of a FID comparison: a directory of
/// images (embedded with the shared proxy embedder) or a saved feature file.
fn side_stats(
    path: &Path,
    cap: usize,
    embedder: &EmbedderSpec,
) -> Result<GaussianStats, Failure> {
    if path.is_dir() {
        let index = DatasetIndex::scan(path)?;
        Ok(real_feature_stats::<f64>(&index, None, cap, embedder)?)
    } else {
        let features = load_features(path)?;
        let (n, d) = (features.shape()[0], features.shape()[1]);
        let take = n.min(cap);
        let rows = features.data()[..take * d].to_vec();
        let capped = Tensor::<f64>::from_vec(&[take, d], rows)?;
        Ok(gaussian_stats(&capped)?)
    }
}

fn cmd_fid(
    path_a: &Path,
    path_b: &Path,
    embedder_seed: u64,
    embedder_dim: usize,
    sample_cap: usize,
) -> Result<(), Failure> {
    let embedder = EmbedderSpec {
        seed: embedder_seed,
        output_dim: embedder_dim,
        ..EmbedderSpec::default()
    };
    let a = side_stats(path_a, sample_cap, &embedder)?;
    let b = side_stats(path_b, sample_cap, &embedder)?;
    let fid = frechet_distance(&a, &b)?;
    println!("{fid:.6}");
    Ok(())
}

fn cmd_gradcheck(scope: &str, inject_fault: bool) -> Result<(), Failure> {
    let fault = if inject_fault {
        gradcheck::Fault::Conv2dBackward
    } else {
        gradcheck::Fault::None
    };
    let rows = gradcheck::run_with_fault(scope, fault).map_err(|e| match e {
        boolgan::Error::InvalidArgument { .. } => Failure::usage(e.to_string()),
        other => Failure::runtime(other.to_string()),
    })?;
    let mut failed = Vec::new();
    for row in &rows {
        let verdict = if row.ok() { "PASS" } else { "FAIL" };
        println!("{:<22} max rel err {:>12.3e}  {verdict}", row.name, row.max_rel_err);
        if !row.ok() {
            failed.push(row.name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::runtime(format!(
            "gradient check failed: {}",
            failed.join(", ")
        )))
    }
}
