use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use log::{info, warn};
use pcgc::geometry::{devoxelize, PointCloud, VoxelGrid};
use pcgc::learned_codec::{decode, encode, load_checkpoint, ModelParams};
use pcgc::metrics::{bpov, symmetric_psnr, MetricKind};
use pcgc::octree_codec::{octree_decode, octree_encode};
use rayon::prelude::*;

use crate::error::{expand_inputs, CliError, Result};
use crate::records::{write_csv, FrameRow, SettingRow};
use crate::voxelize::load_grids;

pub const LEARNED: &str = "learned";
pub const OCTREE: &str = "octree";
pub const FRAME_CSV: &str = "rd_frames.csv";
pub const SETTING_CSV: &str = "rd_settings.csv";

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    /// Voxel grid frames (.pcgv); glob patterns are expanded.
    #[arg(required = true)]
    pub inputs: Vec<String>,
    /// Directory holding one checkpoint per lambda, named `lambda-<value>.pcgm`.
    #[arg(long)]
    pub checkpoint_dir: Option<PathBuf>,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "1e-4,5e-5,1e-5,5e-6,1e-6"
    )]
    pub lambdas: Vec<f64>,
    /// Skip the learned codec.
    #[arg(long)]
    pub no_learned: bool,
    /// Octree depths; all depths from 1 to log2 of the resolution by default.
    #[arg(long, value_delimiter = ',')]
    pub depths: Vec<usize>,
    /// Skip the octree codec.
    #[arg(long)]
    pub no_octree: bool,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(short, long)]
    pub out_dir: PathBuf,
}

/// File name of the checkpoint trained with `lambda`, such as `lambda-1e-4.pcgm`.
pub fn checkpoint_name(lambda: f64) -> String {
    format!("lambda-{}.pcgm", setting_name(lambda))
}

fn setting_name(lambda: f64) -> String {
    format!("{lambda:e}")
}

/// One frame under one setting, with the decoded point count.
#[derive(Clone, Debug)]
pub struct FrameResult {
    pub row: FrameRow,
    pub points: usize,
}

pub struct SweepReport {
    pub frames: Vec<FrameResult>,
    pub settings: Vec<SettingRow>,
}

enum Setting {
    Learned { name: String, params: ModelParams },
    Octree { depth: usize },
}

impl Setting {
    fn codec(&self) -> &'static str {
        match self {
            Setting::Learned { .. } => LEARNED,
            Setting::Octree { .. } => OCTREE,
        }
    }

    fn name(&self) -> String {
        match self {
            Setting::Learned { name, .. } => name.clone(),
            Setting::Octree { depth } => depth.to_string(),
        }
    }

    /// Stream size in bytes and the decoded cloud.
    fn run(&self, grid: &VoxelGrid, threshold: f64) -> Result<(usize, PointCloud)> {
        match self {
            Setting::Learned { params, .. } => {
                let bs = encode(grid, params)?;
                let decoded = decode(&bs, params, threshold)?;
                Ok((bs.byte_len(), devoxelize(&decoded)))
            }
            Setting::Octree { depth } => {
                let s = octree_encode(grid, *depth)?;
                Ok((s.byte_len(), octree_decode(&s)?))
            }
        }
    }
}

fn measure(name: &str, grid: &VoxelGrid, setting: &Setting, threshold: f64) -> Result<FrameResult> {
    let (bytes, decoded) = setting.run(grid, threshold)?;
    let original = devoxelize(grid);
    let r = grid.resolution();
    let (d1, d2) = if decoded.is_empty() {
        warn!(
            "{name}: {} {} decodes to no points",
            setting.codec(),
            setting.name()
        );
        (f64::NAN, f64::NAN)
    } else {
        (
            symmetric_psnr(&original, &decoded, r, MetricKind::D1)?,
            symmetric_psnr(&original, &decoded, r, MetricKind::D2)?,
        )
    };
    Ok(FrameResult {
        row: FrameRow {
            frame: name.to_string(),
            codec: setting.codec().to_string(),
            setting: setting.name(),
            bpov: bpov(bytes, grid.len()),
            psnr_d1: d1,
            psnr_d2: d2,
        },
        points: decoded.len(),
    })
}

/// Mean over finite values. Without any, `inf` if some frame was lossless
/// and `NaN` otherwise.
fn mean_psnr(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let finite: Vec<f64> = values.clone().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        if values.into_iter().any(|v| v == f64::INFINITY) {
            f64::INFINITY
        } else {
            f64::NAN
        }
    } else {
        finite.iter().sum::<f64>() / finite.len() as f64
    }
}

/// Averages frame rows per setting, keeping first-appearance order.
pub fn average(frames: &[FrameRow]) -> Vec<SettingRow> {
    let mut keys: Vec<(String, String)> = Vec::new();
    for f in frames {
        let key = (f.codec.clone(), f.setting.clone());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(codec, setting)| {
            let rows: Vec<&FrameRow> = frames
                .iter()
                .filter(|f| f.codec == codec && f.setting == setting)
                .collect();
            SettingRow {
                bpov: rows.iter().map(|f| f.bpov).sum::<f64>() / rows.len() as f64,
                psnr_d1: mean_psnr(rows.iter().map(|f| f.psnr_d1)),
                psnr_d2: mean_psnr(rows.iter().map(|f| f.psnr_d2)),
                codec,
                setting,
            }
        })
        .collect()
}

fn load_settings(args: &SweepArgs, resolution: usize) -> Result<Vec<Setting>> {
    let mut settings = Vec::new();
    if !args.no_learned {
        let dir = args.checkpoint_dir.as_deref().ok_or_else(|| {
            CliError::Usage("--checkpoint-dir is required unless --no-learned is given".into())
        })?;
        for &lambda in &args.lambdas {
            let path = dir.join(checkpoint_name(lambda));
            if !path.exists() {
                return Err(CliError::Data(format!(
                    "no checkpoint for lambda {lambda:e}: {} is missing",
                    path.display()
                )));
            }
            let ckpt = load_checkpoint(&path, None).map_err(|e| CliError::from(e).at(&path))?;
            settings.push(Setting::Learned {
                name: setting_name(lambda),
                params: ckpt.params,
            });
        }
    }
    if !args.no_octree {
        if !resolution.is_power_of_two() {
            return Err(CliError::Data(format!(
                "the octree codec needs a power-of-two resolution, frames are {resolution}"
            )));
        }
        let full = resolution.trailing_zeros() as usize;
        let mut depths = if args.depths.is_empty() {
            (1..=full).collect()
        } else {
            args.depths.clone()
        };
        depths.sort_unstable();
        depths.dedup();
        if let Some(d) = depths.iter().find(|&&d| d == 0 || d > full) {
            return Err(CliError::Usage(format!(
                "octree depth {d} outside [1, {full}]"
            )));
        }
        settings.extend(depths.into_iter().map(|depth| Setting::Octree { depth }));
    }
    if settings.is_empty() {
        return Err(CliError::Usage(
            "nothing to sweep: no lambdas and no octree depths".into(),
        ));
    }
    Ok(settings)
}

pub fn run(args: &SweepArgs) -> Result<SweepReport> {
    let paths = expand_inputs(&args.inputs)?;
    let frames = load_grids(&paths)?;
    let resolution = frames[0].1.resolution();
    let settings = load_settings(args, resolution)?;
    let per_frame: Vec<Vec<FrameResult>> = frames
        .par_iter()
        .map(|(path, grid)| {
            let name = frame_name(path);
            settings
                .iter()
                .map(|s| measure(&name, grid, s, args.threshold))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| e.at(path))
        })
        .collect::<Result<_>>()?;
    let frames: Vec<FrameResult> = per_frame.into_iter().flatten().collect();
    let rows: Vec<FrameRow> = frames.iter().map(|f| f.row.clone()).collect();
    let settings = average(&rows);
    fs::create_dir_all(&args.out_dir).map_err(|e| CliError::io(&args.out_dir, e))?;
    write_csv(&args.out_dir.join(FRAME_CSV), &rows)?;
    write_csv(&args.out_dir.join(SETTING_CSV), &settings)?;
    for s in &settings {
        let lossless = if s.psnr_d1 == f64::INFINITY {
            " (lossless)"
        } else {
            ""
        };
        info!(
            "{} {}: {:.4} bpov, D1 {:.2} dB, D2 {:.2} dB{lossless}",
            s.codec, s.setting, s.bpov, s.psnr_d1, s.psnr_d2
        );
    }
    Ok(SweepReport { frames, settings })
}

fn frame_name(path: &Path) -> String {
    path.file_stem()
        .unwrap_or_default()
        .to_string_lossy()
        .into_owned()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(codec: &str, setting: &str, bpov: f64, d1: f64) -> FrameRow {
        FrameRow {
            frame: "f".into(),
            codec: codec.into(),
            setting: setting.into(),
            bpov,
            psnr_d1: d1,
            psnr_d2: d1,
        }
    }

    #[test]
    fn checkpoint_names() {
        assert_eq!(checkpoint_name(1e-4), "lambda-1e-4.pcgm");
        assert_eq!(checkpoint_name(0.00005), "lambda-5e-5.pcgm");
    }

    #[test]
    fn averaging_skips_non_finite_psnr() {
        let rows = vec![
            row("octree", "6", 2.0, f64::INFINITY),
            row("learned", "1e-4", 0.5, 30.0),
            row("octree", "6", 3.0, f64::INFINITY),
            row("learned", "1e-4", 0.25, f64::NAN),
            row("octree", "3", 0.1, 20.0),
            row("octree", "3", 0.3, f64::INFINITY),
        ];
        let s = average(&rows);
        assert_eq!(s.len(), 3);
        assert_eq!(
            (s[0].codec.as_str(), s[0].setting.as_str()),
            ("octree", "6")
        );
        assert_eq!(s[0].bpov, 2.5);
        assert_eq!(s[0].psnr_d1, f64::INFINITY);
        assert_eq!(s[1].bpov, 0.375);
        assert_eq!(s[1].psnr_d1, 30.0);
        assert_eq!(s[2].psnr_d1, 20.0);
        assert!((s[2].bpov - 0.2).abs() < 1e-12);
        assert!(average(&[row("learned", "x", 1.0, f64::NAN)])[0]
            .psnr_d1
            .is_nan());
    }
}
