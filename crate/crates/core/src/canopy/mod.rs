//! Stage 1: sparse-footprint-supervised canopy-height regression.
//!
//! Dataset construction extracts 15x15 image patches at footprint
//! locations (cloud-filtered, with synthesized zero-height records over
//! non-vegetated scene classes), the train/validation split happens at the
//! tile level, training optimizes a masked MSE at the labeled center pixel
//! only, and inference runs the fully convolutional model over tiled
//! windows whose cores stitch seamlessly. Multiple per-acquisition
//! predictions reduce to one map by cloud-gated per-pixel averaging.

mod dataset;
mod infer;
mod train;

pub use dataset::{
    assemble_tiles, build_dataset, read_footprints_fpd1, read_fpd1, write_footprints_fpd1,
    write_fpd1, Dataset, DatasetRecord, TileData,
};
pub use infer::{composite, dense_forward_heads, predict_dense, select_least_cloudy, Tiling};
pub use train::{train_canopy, TraceRow, TrainOutcome};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CanopyError {
    #[error("grid error: {0}")]
    Grid(#[from] crate::grid::GridError),
    #[error("nn error: {0}")]
    Nn(#[from] crate::nn::NnError),
    #[error("holdout fraction {0} outside (0, 1)")]
    InvalidFraction(f64),
    #[error("need at least 2 tiles, got {0}")]
    TooFewTiles(usize),
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("training diverged at iteration {iteration}")]
    Diverged {
        iteration: usize,
        trace: Vec<TraceRow>,
    },
    #[error("image has {got} bands, model expects {expected}")]
    BandMismatch { expected: usize, got: usize },
    #[error(
        "overlap {overlap} too small for receptive field {receptive_field} (need >= {needed})"
    )]
    OverlapTooSmall {
        overlap: usize,
        receptive_field: usize,
        needed: usize,
    },
    #[error("prediction/cloud lists empty or of different lengths")]
    BadCompositeInput,
    #[error("requested {k} of {n} images")]
    NotEnoughImages { k: usize, n: usize },
    #[error("malformed dataset file: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CanopyError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FootprintSource {
    /// Height derived from a lidar waveform footprint.
    LidarFootprint,
    /// Zero-height record synthesized from the scene classification.
    ForcedZero,
}

/// One sparse reference observation. Positions are world pixel coordinates;
/// `tile_id` keys the sample to the tile it was recorded in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FootprintSample {
    pub tile_id: usize,
    pub center_col: usize,
    pub center_row: usize,
    /// Canopy top height label in meters, >= 0 (forced-zero records are
    /// exactly 0).
    pub canopy_top_height: f32,
    pub source: FootprintSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub patch_size: usize,
    pub batch_size: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub holdout_fraction: f64,
    /// Drop a patch when more than this fraction of its pixels is cloudy.
    pub cloud_pixel_threshold: f64,
    /// A pixel is cloudy when its cloud probability exceeds this.
    pub cloud_prob_threshold: f64,
    /// Cap on the forced-zero share of the dataset (subsampled, seeded).
    pub forced_zero_cap: f64,
    /// Channel width of the residual stack.
    pub model_width: usize,
    /// Number of residual blocks (two 3x3 convolutions each).
    pub model_blocks: usize,
    /// Validation metric / loss trace cadence, iterations.
    pub eval_interval: usize,
    /// Worker threads (1 = fully sequential; results do not depend on this).
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            patch_size: 15,
            batch_size: 64,
            iterations: 20_000,
            learning_rate: 1e-4,
            seed: 0,
            holdout_fraction: 0.10,
            cloud_pixel_threshold: 0.10,
            cloud_prob_threshold: 0.10,
            forced_zero_cap: 0.20,
            model_width: 64,
            model_blocks: 8,
            eval_interval: 500,
            threads: 1,
        }
    }
}

/// Split tile ids into disjoint, exhaustive train/validation sets.
/// The holdout size is `ceil(fraction * n)` so the requested share is never
/// undershot; the draw is a seeded shuffle, deterministic per seed.
pub fn split_tiles(
    tile_ids: &[usize],
    holdout_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
        return Err(CanopyError::InvalidFraction(holdout_fraction));
    }
    let mut ids: Vec<usize> = tile_ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return Err(CanopyError::TooFewTiles(ids.len()));
    }
    let n = ids.len();
    let n_val = ((holdout_fraction * n as f64).ceil() as usize).clamp(1, n - 1);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let mut val: Vec<usize> = ids[..n_val].to_vec();
    let mut train: Vec<usize> = ids[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}
