use std::fs;
use std::path::PathBuf;

use clap::Args;
use pcgc::geometry::{devoxelize, save_point_cloud, VoxelGrid};
use pcgc::learned_codec::{decode, encode, load_checkpoint, CompressedBitstream};

use crate::error::{CliError, Result};
use crate::voxfile;

#[derive(Debug, Clone, Args)]
pub struct CompressArgs {
    /// Voxel grid (.pcgv).
    pub input: PathBuf,
    #[arg(short, long)]
    pub checkpoint: PathBuf,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct DecompressArgs {
    /// Compressed stream.
    pub input: PathBuf,
    #[arg(short, long)]
    pub checkpoint: PathBuf,
    /// PLY file for the reconstructed points.
    #[arg(short, long)]
    pub out: PathBuf,
    /// Occupancy score at or above which a voxel is kept.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Write binary instead of ASCII PLY.
    #[arg(long)]
    pub binary: bool,
}

pub fn compress(args: &CompressArgs) -> Result<CompressedBitstream> {
    let grid = voxfile::load(&args.input)?;
    let ckpt = load_checkpoint(&args.checkpoint, None)
        .map_err(|e| CliError::from(e).at(&args.checkpoint))?;
    let bs = encode(&grid, &ckpt.params)?;
    fs::write(&args.out, bs.to_bytes()).map_err(|e| CliError::io(&args.out, e))?;
    println!(
        "{}: {} bytes, {:.6} bpov",
        args.out.display(),
        bs.byte_len(),
        bs.bpov()
    );
    Ok(bs)
}

pub fn decompress(args: &DecompressArgs) -> Result<VoxelGrid> {
    if !args.threshold.is_finite() {
        return Err(CliError::Usage(format!(
            "threshold {} is not finite",
            args.threshold
        )));
    }
    let bytes = fs::read(&args.input).map_err(|e| CliError::io(&args.input, e))?;
    let bs =
        CompressedBitstream::from_bytes(&bytes).map_err(|e| CliError::from(e).at(&args.input))?;
    let ckpt = load_checkpoint(&args.checkpoint, None)
        .map_err(|e| CliError::from(e).at(&args.checkpoint))?;
    let grid = decode(&bs, &ckpt.params, args.threshold)?;
    save_point_cloud(&devoxelize(&grid), &args.out, args.binary)?;
    println!(
        "{}: {} points, {:.6} bpov",
        args.out.display(),
        grid.len(),
        bs.bpov()
    );
    Ok(grid)
}
