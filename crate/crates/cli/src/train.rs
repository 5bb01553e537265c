use std::path::PathBuf;

use clap::Args;
use log::{info, warn};
use pcgc::geometry::VoxelGrid;
use pcgc::learned_codec::{
    load_checkpoint, save_checkpoint, train_step, Checkpoint, ModelParams, TrainConfig, TrainState,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CliError, Result};
use crate::records::{write_csv, LossRow};
use crate::voxelize::load_dataset;

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Directory of .pcgv grids.
    pub dataset: PathBuf,
    /// Checkpoint to write.
    #[arg(short, long)]
    pub out: PathBuf,
    /// Loss log CSV (step,D,R,L).
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long, default_value_t = 1e-4)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    /// Feature maps per layer.
    #[arg(short = 'n', long = "feature-maps", default_value_t = 32)]
    pub feature_maps: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    /// Focal loss class balance.
    #[arg(long, default_value_t = 0.9)]
    pub alpha: f64,
    /// Focal loss focusing exponent.
    #[arg(long, default_value_t = 2.0)]
    pub gamma: f64,
    /// Continue from this checkpoint, including its optimizer state.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

impl TrainArgs {
    pub fn config(&self, seed: u64, resolution: usize) -> TrainConfig {
        TrainConfig {
            lambda: self.lambda,
            alpha: self.alpha,
            gamma: self.gamma,
            lr: self.lr,
            batch_size: self.batch_size,
            steps: self.steps,
            seed,
            resolution,
            ..TrainConfig::default()
        }
    }
}

pub struct TrainReport {
    pub checkpoint: Checkpoint,
    pub losses: Vec<LossRow>,
}

/// Dataset indices of the batch for `step`. Samples are drawn epoch by
/// epoch, each epoch a fresh seeded permutation, so a resumed run sees the
/// same batches as an uninterrupted one.
pub fn batch_indices(seed: u64, step: u64, batch_size: usize, len: usize) -> Vec<usize> {
    let mut perm_epoch = u64::MAX;
    let mut perm: Vec<usize> = Vec::new();
    let start = step * batch_size as u64;
    (start..start + batch_size as u64)
        .map(|pos| {
            let epoch = pos / len as u64;
            if epoch != perm_epoch {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(epoch);
                perm = (0..len).collect();
                perm.shuffle(&mut rng);
                perm_epoch = epoch;
            }
            perm[(pos % len as u64) as usize]
        })
        .collect()
}

pub fn run(args: &TrainArgs, seed: u64) -> Result<TrainReport> {
    let data = load_dataset(&args.dataset)?;
    let resolution = data[0].1.resolution();
    let cfg = args.config(seed, resolution);
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let (mut params, mut opt) = match &args.resume {
        Some(path) => {
            let ckpt = load_checkpoint(path, Some(args.feature_maps))
                .map_err(|e| CliError::from(e).at(path))?;
            let state = ckpt.state.ok_or_else(|| {
                CliError::Data(format!("{}: no optimizer state to resume", path.display()))
            })?;
            if state.resolution != resolution {
                return Err(CliError::Data(format!(
                    "{} was trained at resolution {}, dataset is {resolution}",
                    path.display(),
                    state.resolution
                )));
            }
            if state.adam.lr != cfg.lr {
                warn!("resuming with the stored learning rate {}", state.adam.lr);
            }
            info!("resuming at step {}", state.adam.t);
            (ckpt.params, state.adam)
        }
        None => {
            let params = ModelParams::init(args.feature_maps, seed)?;
            let opt = cfg.optimizer(&params);
            (params, opt)
        }
    };
    let grids: Vec<&VoxelGrid> = data.iter().map(|(_, g)| g).collect();
    let mut losses = Vec::with_capacity(args.steps);
    for _ in 0..args.steps {
        let step = opt.t;
        let batch: Vec<VoxelGrid> = batch_indices(seed, step, cfg.batch_size, grids.len())
            .into_iter()
            .map(|i| grids[i].clone())
            .collect();
        let loss = train_step(&batch, &mut params, &cfg, &mut opt)?;
        if step % 50 == 0 {
            info!(
                "step {step}: D {:.3} R {:.4} L {:.4}",
                loss.d, loss.r, loss.l
            );
        }
        losses.push(LossRow {
            step,
            d: loss.d,
            r: loss.r,
            l: loss.l,
        });
    }
    let checkpoint = Checkpoint {
        params,
        state: Some(TrainState {
            resolution,
            adam: opt,
        }),
    };
    save_checkpoint(&checkpoint, &args.out).map_err(|e| CliError::from(e).at(&args.out))?;
    write_csv(&args.log, &losses)?;
    info!("wrote {} and {}", args.out.display(), args.log.display());
    Ok(TrainReport { checkpoint, losses })
}
