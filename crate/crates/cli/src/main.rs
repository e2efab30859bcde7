//! `atv-stereo`: synthesize datasets, reconstruct depth, fuse point
//! clouds and evaluate reconstructions.
//!
//! Exit codes: 0 success, 1 runtime pipeline failure, 2 usage/config
//! errors (including missing inputs).

use std::path::PathBuf;
use std::process::ExitCode;

use atv_stereo::parallel::with_threads;
use atv_stereo::Error;
use clap::{Parser, Subcommand};

mod commands;

#[derive(Parser)]
#[command(name = "atv-stereo", version, about)]
struct Cli {
    /// Worker threads; 0 = hardware parallelism. Falls back to the
    /// ATV_STEREO_THREADS environment variable.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a builtin scene (flat, two-plane, sphere-on-plane) or a
    /// scene-spec JSON file into a dataset directory.
    Synth {
        /// Builtin scene name or path to a scene JSON.
        scene: String,
        /// Output dataset directory (created if missing).
        out_dir: PathBuf,
    },
    /// Run the cascaded depth estimation over a dataset.
    Reconstruct {
        /// Dataset directory containing manifest.json.
        dataset: PathBuf,
        /// Run configuration JSON; defaults to the paper profile.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for depth maps and reports.
        #[arg(long)]
        out: PathBuf,
        /// Also write per-stage depth/sigma PFM dumps.
        #[arg(long)]
        dump_stages: bool,
        /// Reconstruct only this view id instead of every view.
        #[arg(long)]
        reference: Option<usize>,
    },
    /// Fuse reconstructed depth maps into a point cloud.
    Fuse {
        /// Reconstruction directory written by `reconstruct`.
        recon_dir: PathBuf,
        /// Run configuration JSON; defaults to the paper profile.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output PLY path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a fused cloud against the dataset's ground truth.
    Eval {
        /// Point cloud to evaluate.
        ply: PathBuf,
        /// Dataset directory with ground-truth depth.
        dataset: PathBuf,
        /// Run configuration JSON; defaults to the paper profile.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Reconstruction directory; enables the per-stage error table and
        /// the measured stage-3 unit distance.
        #[arg(long)]
        recon: Option<PathBuf>,
        /// Output directory for scores.json / scores.csv; defaults to the
        /// cloud's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate per-stage reconstruction reports into one CSV.
    Report {
        /// Reconstruction directory written by `reconstruct`.
        recon_dir: PathBuf,
        /// CSV output path; defaults to report.csv inside the directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn resolve_threads(flag: Option<usize>) -> usize {
    flag.or_else(|| {
        std::env::var("ATV_STEREO_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    })
    .unwrap_or(0)
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Input(_) | Error::Parse { .. } => 2,
        Error::Io(e) if e.kind() == std::io::ErrorKind::NotFound => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = resolve_threads(cli.threads);
    let result = with_threads(threads, || match cli.command {
        Command::Synth { scene, out_dir } => commands::synth::run(&scene, &out_dir),
        Command::Reconstruct {
            dataset,
            config,
            out,
            dump_stages,
            reference,
        } => commands::reconstruct::run(&dataset, config.as_deref(), &out, dump_stages, reference),
        Command::Fuse {
            recon_dir,
            config,
            out,
        } => commands::fuse::run(&recon_dir, config.as_deref(), &out),
        Command::Eval {
            ply,
            dataset,
            config,
            recon,
            out,
        } => commands::eval::run(&ply, &dataset, config.as_deref(), recon.as_deref(), out.as_deref()),
        Command::Report { recon_dir, out } => commands::report::run(&recon_dir, out.as_deref()),
    });
    match result {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(err)) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(1)
        }
    }
}
