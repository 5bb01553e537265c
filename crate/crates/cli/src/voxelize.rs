use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use log::info;
use pcgc::geometry::{
    load_mesh, load_point_cloud, sample_surface, voxelize, PointCloud, VoxelGrid,
};

use crate::error::{expand_inputs, CliError, Result};
use crate::voxfile;

#[derive(Debug, Clone, Args)]
pub struct VoxelizeArgs {
    /// OFF meshes or PLY point clouds; glob patterns are expanded.
    #[arg(required = true)]
    pub inputs: Vec<String>,
    /// Grid resolution; the learned codec needs a multiple of 8.
    #[arg(short, long, default_value_t = 64)]
    pub resolution: usize,
    /// Points sampled from each mesh surface.
    #[arg(long, default_value_t = 200_000)]
    pub points: usize,
    #[arg(short, long)]
    pub out_dir: PathBuf,
}

/// Reads a cloud, sampling meshes with `points` samples.
pub fn load_cloud(path: &Path, points: usize, seed: u64) -> Result<PointCloud> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("off") => Ok(sample_surface(&load_mesh(path)?, points, seed)?),
        Some("ply") => Ok(load_point_cloud(path)?),
        _ => Err(CliError::Data(format!(
            "{}: expected an .off mesh or a .ply point cloud",
            path.display()
        ))),
    }
}

/// Writes `<out_dir>/<stem>.pcgv` for each input and returns the paths.
pub fn run(args: &VoxelizeArgs, seed: u64) -> Result<Vec<PathBuf>> {
    let r = args.resolution;
    if r < 8 || !r.is_multiple_of(8) || r > u16::MAX as usize {
        return Err(CliError::Usage(format!(
            "resolution {r} is not usable: the learned codec downsamples by 8, so use a multiple of 8"
        )));
    }
    let inputs = expand_inputs(&args.inputs)?;
    fs::create_dir_all(&args.out_dir).map_err(|e| CliError::io(&args.out_dir, e))?;
    let mut outputs = Vec::with_capacity(inputs.len());
    for path in &inputs {
        let grid: VoxelGrid = voxelize(&load_cloud(path, args.points, seed)?, r)?;
        let stem = path.file_stem().unwrap_or_default().to_string_lossy();
        let out = args.out_dir.join(format!("{stem}.pcgv"));
        if outputs.contains(&out) {
            return Err(CliError::Usage(format!(
                "two inputs map to {}",
                out.display()
            )));
        }
        voxfile::save(&grid, &out)?;
        info!(
            "{} -> {} ({} voxels)",
            path.display(),
            out.display(),
            grid.len()
        );
        outputs.push(out);
    }
    Ok(outputs)
}

/// All `.pcgv` files of `dir`, sorted by name, with one shared resolution.
pub fn load_dataset(dir: &Path) -> Result<Vec<(PathBuf, VoxelGrid)>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "pcgv"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no .pcgv grids found",
            dir.display()
        )));
    }
    load_grids(&paths)
}

/// Loads grids and checks that they share one resolution.
pub fn load_grids(paths: &[PathBuf]) -> Result<Vec<(PathBuf, VoxelGrid)>> {
    let mut out: Vec<(PathBuf, VoxelGrid)> = Vec::with_capacity(paths.len());
    for p in paths {
        let g = voxfile::load(p)?;
        if let Some((first, f)) = out.first() {
            if f.resolution() != g.resolution() {
                return Err(CliError::Data(format!(
                    "mixed resolutions: {} is {}, {} is {}",
                    first.display(),
                    f.resolution(),
                    p.display(),
                    g.resolution()
                )));
            }
        }
        out.push((p.clone(), g));
    }
    Ok(out)
}
