//! Command-line harness for the learned and octree geometry codecs.
//!
//! Every command is a plain function over an argument struct, so tests and
//! scripts can drive the same code paths as the `pcgc` binary.

pub mod bd;
pub mod codec;
pub mod error;
pub mod records;
pub mod sweep;
pub mod train;
pub mod voxelize;
pub mod voxfile;

use clap::{Parser, Subcommand};

pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(
    name = "pcgc",
    version,
    about = "Point cloud geometry compression laboratory"
)]
pub struct Cli {
    /// Seed for sampling, initialization, shuffling and training noise.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; 0 uses one per core.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Turn meshes or point clouds into voxel grid files.
    Voxelize(voxelize::VoxelizeArgs),
    /// Train a learned codec on a directory of voxel grids.
    Train(train::TrainArgs),
    /// Compress a voxel grid with a trained codec.
    Compress(codec::CompressArgs),
    /// Decompress a stream to a PLY point cloud.
    Decompress(codec::DecompressArgs),
    /// Measure rate and distortion over frames, models and octree depths.
    RdSweep(sweep::SweepArgs),
    /// Bjontegaard-delta rates between two per-setting CSV files.
    BdReport(bd::BdArgs),
}

/// Runs one parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    if cli.threads > 0 {
        // Fails only if the pool was already built, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }
    match cli.command {
        Command::Voxelize(a) => voxelize::run(&a, cli.seed).map(|_| ()),
        Command::Train(a) => train::run(&a, cli.seed).map(|_| ()),
        Command::Compress(a) => codec::compress(&a).map(|_| ()),
        Command::Decompress(a) => codec::decompress(&a).map(|_| ()),
        Command::RdSweep(a) => sweep::run(&a).map(|_| ()),
        Command::BdReport(a) => bd::run(&a).and_then(|report| report.into_result()),
    }
}
