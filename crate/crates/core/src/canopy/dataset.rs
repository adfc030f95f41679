//! Training-set construction from sparse footprints, and the FPD1 on-disk
//! dataset format (JSON index + raw f32 patch payload).

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CanopyError, FootprintSample, FootprintSource, Result, TrainConfig};
use crate::grid::io::atomic_write_bytes;
use crate::grid::{extract_patch, Grid};
use crate::nn::Tensor;
use crate::synth::SCENE_NON_VEGETATED;

/// One tile's co-registered layers: the selected (least cloudy) image, its
/// cloud-probability layer, and the scene classification.
#[derive(Debug, Clone)]
pub struct TileData {
    pub tile_id: usize,
    /// World pixel coordinates of the tile's upper-left corner.
    pub origin_col: usize,
    pub origin_row: usize,
    pub image: Grid,
    pub cloud: Grid,
    pub scene: Grid,
}

/// One training record: a patch and its scalar height label.
#[derive(Debug, Clone)]
pub struct DatasetRecord {
    pub tile_id: usize,
    /// World pixel coordinates of the patch center.
    pub col: usize,
    pub row: usize,
    pub target: f32,
    pub source: FootprintSource,
    pub patch: Tensor<f32>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub patch_size: usize,
    pub bands: usize,
    pub records: Vec<DatasetRecord>,
    /// Footprints whose recorded position fell outside their tile.
    pub skipped_outside: usize,
    /// Patches dropped by the cloud filter.
    pub dropped_cloudy: usize,
}

impl Dataset {
    pub fn tile_ids(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.records.iter().map(|r| r.tile_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

/// Cut a world into square tiles, picking for each tile the acquisition
/// with the lowest mean cloud probability over that tile (ties keep the
/// earliest acquisition).
pub fn assemble_tiles(
    acquisitions: &[(Grid, Grid)],
    scene: &Grid,
    tile_size: usize,
) -> Result<Vec<TileData>> {
    if acquisitions.is_empty() {
        return Err(CanopyError::BadCompositeInput);
    }
    let width = scene.width();
    let height = scene.height();
    let tiles_x = width.div_ceil(tile_size);
    let tiles_y = height.div_ceil(tile_size);
    let mut out = Vec::with_capacity(tiles_x * tiles_y);
    for ty in 0..tiles_y {
        for tx in 0..tiles_x {
            let col0 = tx * tile_size;
            let row0 = ty * tile_size;
            let w = tile_size.min(width - col0);
            let h = tile_size.min(height - row0);
            let mut best = 0usize;
            let mut best_mean = f64::INFINITY;
            for (i, (_, cloud)) in acquisitions.iter().enumerate() {
                let mut acc = 0.0f64;
                let mut cnt = 0usize;
                for r in row0..row0 + h {
                    for c in col0..col0 + w {
                        if !cloud.is_nodata(c, r) {
                            acc += cloud.value(0, c, r) as f64;
                            cnt += 1;
                        }
                    }
                }
                let mean = if cnt > 0 {
                    acc / cnt as f64
                } else {
                    f64::INFINITY
                };
                if mean < best_mean {
                    best_mean = mean;
                    best = i;
                }
            }
            let (image, cloud) = &acquisitions[best];
            out.push(TileData {
                tile_id: ty * tiles_x + tx,
                origin_col: col0,
                origin_row: row0,
                image: image.window(col0, row0, w, h),
                cloud: cloud.window(col0, row0, w, h),
                scene: scene.window(col0, row0, w, h),
            });
        }
    }
    Ok(out)
}

fn patch_is_cloudy(cloud: &Grid, col: usize, row: usize, cfg: &TrainConfig) -> Result<bool> {
    let patch = extract_patch(cloud, col, row, cfg.patch_size)?;
    let cloudy = patch
        .data
        .data()
        .iter()
        .filter(|&&p| p as f64 > cfg.cloud_prob_threshold)
        .count();
    let frac = cloudy as f64 / (cfg.patch_size * cfg.patch_size) as f64;
    Ok(frac > cfg.cloud_pixel_threshold)
}

/// Build the training set: one record per retained footprint (cloud-filtered)
/// plus forced-zero records synthesized at non-vegetated scene pixels,
/// subsampled (seeded) so they make up at most `forced_zero_cap` of the
/// final dataset.
pub fn build_dataset(
    tiles: &[TileData],
    footprints: &[FootprintSample],
    cfg: &TrainConfig,
) -> Result<Dataset> {
    let by_id: HashMap<usize, &TileData> = tiles.iter().map(|t| (t.tile_id, t)).collect();
    let bands = tiles.first().map_or(0, |t| t.image.bands());
    let mut records = Vec::new();
    let mut skipped_outside = 0usize;
    let mut dropped_cloudy = 0usize;

    for fp in footprints {
        let Some(tile) = by_id.get(&fp.tile_id) else {
            skipped_outside += 1;
            continue;
        };
        if fp.center_col < tile.origin_col
            || fp.center_row < tile.origin_row
            || fp.center_col >= tile.origin_col + tile.image.width()
            || fp.center_row >= tile.origin_row + tile.image.height()
        {
            skipped_outside += 1;
            continue;
        }
        let lc = fp.center_col - tile.origin_col;
        let lr = fp.center_row - tile.origin_row;
        if tile.image.is_nodata(lc, lr) {
            skipped_outside += 1;
            continue;
        }
        if patch_is_cloudy(&tile.cloud, lc, lr, cfg)? {
            dropped_cloudy += 1;
            continue;
        }
        let patch = extract_patch(&tile.image, lc, lr, cfg.patch_size)?;
        records.push(DatasetRecord {
            tile_id: fp.tile_id,
            col: fp.center_col,
            row: fp.center_row,
            target: fp.canopy_top_height.max(0.0),
            source: fp.source,
            patch: patch.data,
        });
    }

    // Forced zeros: every non-vegetated pixel is a candidate; the cap keeps
    // the zero class from dominating the loss.
    let retained = records.len();
    let max_zeros = if cfg.forced_zero_cap > 0.0 && cfg.forced_zero_cap < 1.0 {
        ((cfg.forced_zero_cap / (1.0 - cfg.forced_zero_cap)) * retained as f64).floor() as usize
    } else if cfg.forced_zero_cap >= 1.0 {
        usize::MAX
    } else {
        0
    };
    if max_zeros > 0 {
        let mut candidates: Vec<(usize, usize, usize)> = Vec::new(); // (tile idx, lc, lr)
        for (ti, tile) in tiles.iter().enumerate() {
            for lr in 0..tile.scene.height() {
                for lc in 0..tile.scene.width() {
                    if tile.scene.value(0, lc, lr) == SCENE_NON_VEGETATED
                        && !tile.image.is_nodata(lc, lr)
                    {
                        candidates.push((ti, lc, lr));
                    }
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(0x2E_80);
        candidates.shuffle(&mut rng);
        let mut taken = 0usize;
        for &(ti, lc, lr) in &candidates {
            if taken >= max_zeros {
                break;
            }
            let tile = &tiles[ti];
            if patch_is_cloudy(&tile.cloud, lc, lr, cfg)? {
                continue;
            }
            let patch = extract_patch(&tile.image, lc, lr, cfg.patch_size)?;
            records.push(DatasetRecord {
                tile_id: tile.tile_id,
                col: tile.origin_col + lc,
                row: tile.origin_row + lr,
                target: 0.0,
                source: FootprintSource::ForcedZero,
                patch: patch.data,
            });
            taken += 1;
        }
    }

    Ok(Dataset {
        patch_size: cfg.patch_size,
        bands,
        records,
        skipped_outside,
        dropped_cloudy,
    })
}

// ---------------------------------------------------------------------------
// FPD1 on-disk format
// ---------------------------------------------------------------------------

const MAGIC: &[u8; 5] = b"FPD1\n";

#[derive(Serialize, Deserialize)]
struct Fpd1Record {
    tile_id: usize,
    col: usize,
    row: usize,
    target: f32,
    source: FootprintSource,
    /// Byte offset of the patch in the payload.
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Fpd1Index {
    patch_size: usize,
    bands: usize,
    tiles: Vec<usize>,
    records: Vec<Fpd1Record>,
    config_echo: TrainConfig,
    skipped_outside: usize,
    dropped_cloudy: usize,
}

pub fn write_fpd1(dataset: &Dataset, cfg: &TrainConfig, path: &Path) -> Result<()> {
    let patch_bytes = (dataset.patch_size * dataset.patch_size * dataset.bands * 4) as u64;
    let index = Fpd1Index {
        patch_size: dataset.patch_size,
        bands: dataset.bands,
        tiles: dataset.tile_ids(),
        records: dataset
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| Fpd1Record {
                tile_id: r.tile_id,
                col: r.col,
                row: r.row,
                target: r.target,
                source: r.source,
                offset: i as u64 * patch_bytes,
            })
            .collect(),
        config_echo: cfg.clone(),
        skipped_outside: dataset.skipped_outside,
        dropped_cloudy: dataset.dropped_cloudy,
    };
    let index_bytes = serde_json::to_vec(&index).map_err(|e| CanopyError::Format(e.to_string()))?;
    let mut out = Vec::with_capacity(
        MAGIC.len() + 8 + index_bytes.len() + dataset.records.len() * patch_bytes as usize,
    );
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(index_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&index_bytes);
    for r in &dataset.records {
        for v in r.patch.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    atomic_write_bytes(path, &out)?;
    Ok(())
}

/// Write a bare footprint list as an FPD1 file with an empty patch payload
/// (`patch_size` and `bands` zero); the label rides in the `target` column.
pub fn write_footprints_fpd1(footprints: &[FootprintSample], path: &Path) -> Result<()> {
    let mut tiles: Vec<usize> = footprints.iter().map(|f| f.tile_id).collect();
    tiles.sort_unstable();
    tiles.dedup();
    let index = Fpd1Index {
        patch_size: 0,
        bands: 0,
        tiles,
        records: footprints
            .iter()
            .map(|f| Fpd1Record {
                tile_id: f.tile_id,
                col: f.center_col,
                row: f.center_row,
                target: f.canopy_top_height,
                source: f.source,
                offset: 0,
            })
            .collect(),
        config_echo: TrainConfig::default(),
        skipped_outside: 0,
        dropped_cloudy: 0,
    };
    let index_bytes = serde_json::to_vec(&index).map_err(|e| CanopyError::Format(e.to_string()))?;
    let mut out = Vec::with_capacity(MAGIC.len() + 8 + index_bytes.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(index_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&index_bytes);
    atomic_write_bytes(path, &out)?;
    Ok(())
}

pub fn read_footprints_fpd1(path: &Path) -> Result<Vec<FootprintSample>> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 13 || &bytes[..5] != MAGIC {
        return Err(CanopyError::Format("not an FPD1 file".into()));
    }
    let hlen = u64::from_le_bytes(bytes[5..13].try_into().unwrap()) as usize;
    if bytes.len() < 13 + hlen {
        return Err(CanopyError::Format("truncated index".into()));
    }
    let index: Fpd1Index = serde_json::from_slice(&bytes[13..13 + hlen])
        .map_err(|e| CanopyError::Format(format!("index: {e}")))?;
    Ok(index
        .records
        .iter()
        .map(|r| FootprintSample {
            tile_id: r.tile_id,
            center_col: r.col,
            center_row: r.row,
            canopy_top_height: r.target,
            source: r.source,
        })
        .collect())
}

pub fn read_fpd1(path: &Path) -> Result<(Dataset, TrainConfig)> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 13 || &bytes[..5] != MAGIC {
        return Err(CanopyError::Format("not an FPD1 dataset".into()));
    }
    let hlen = u64::from_le_bytes(bytes[5..13].try_into().unwrap()) as usize;
    if bytes.len() < 13 + hlen {
        return Err(CanopyError::Format("truncated index".into()));
    }
    let index: Fpd1Index = serde_json::from_slice(&bytes[13..13 + hlen])
        .map_err(|e| CanopyError::Format(format!("index: {e}")))?;
    let payload = &bytes[13 + hlen..];
    let patch_len = index.patch_size * index.patch_size * index.bands;
    let mut records = Vec::with_capacity(index.records.len());
    for r in &index.records {
        let start = r.offset as usize;
        let end = start + patch_len * 4;
        if payload.len() < end {
            return Err(CanopyError::Format("truncated payload".into()));
        }
        let mut data = Vec::with_capacity(patch_len);
        for i in 0..patch_len {
            let b = &payload[start + i * 4..start + i * 4 + 4];
            data.push(f32::from_le_bytes([b[0], b[1], b[2], b[3]]));
        }
        records.push(DatasetRecord {
            tile_id: r.tile_id,
            col: r.col,
            row: r.row,
            target: r.target,
            source: r.source,
            patch: Tensor::from_vec(index.patch_size, index.patch_size, index.bands, data),
        });
    }
    Ok((
        Dataset {
            patch_size: index.patch_size,
            bands: index.bands,
            records,
            skipped_outside: index.skipped_outside,
            dropped_cloudy: index.dropped_cloudy,
        },
        index.config_echo,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_footprints, gen_images, gen_world, WorldConfig};

    fn small_world_tiles(
        cloud_fraction: f64,
    ) -> (Vec<TileData>, Vec<FootprintSample>, TrainConfig) {
        let wc = WorldConfig {
            extent: 96,
            tile_size: 48,
            cloud_fraction,
            footprint_density: 400.0,
            footprint_jitter_px: 0,
            ..WorldConfig::default()
        };
        let world = gen_world(&wc);
        let acquisitions = gen_images(&world.height, &wc, 2);
        let tiles = assemble_tiles(&acquisitions, &world.scene_class, wc.tile_size).unwrap();
        let footprints = gen_footprints(&world.height, &wc);
        let cfg = TrainConfig {
            seed: 3,
            ..TrainConfig::default()
        };
        (tiles, footprints, cfg)
    }

    #[test]
    fn cloud_free_footprints_are_retained() {
        let (tiles, footprints, cfg) = small_world_tiles(0.0);
        let ds = build_dataset(&tiles, &footprints, &cfg).unwrap();
        let lidar = ds
            .records
            .iter()
            .filter(|r| r.source == FootprintSource::LidarFootprint)
            .count();
        assert_eq!(lidar, footprints.len());
        assert_eq!(ds.dropped_cloudy, 0);
    }

    #[test]
    fn cloudy_patch_is_dropped_at_13_percent() {
        // A patch with 30 of 225 pixels above probability 0.10 (13.3%) is
        // dropped; one with 20 of 225 (8.9%) is retained.
        let (mut tiles, _, cfg) = small_world_tiles(0.0);
        let tile = &mut tiles[0];
        for k in 0..30usize {
            tile.cloud.set_value(0, 10 + k % 15, 10 + k / 15, 0.5);
        }
        let mk = |col, row| FootprintSample {
            tile_id: 0,
            center_col: col,
            center_row: row,
            canopy_top_height: 10.0,
            source: FootprintSource::LidarFootprint,
        };
        // Patch centered on the corrupted block sees all 30 cloudy pixels.
        let ds = build_dataset(&tiles, &[mk(17, 10)], &cfg).unwrap();
        assert_eq!(
            ds.records
                .iter()
                .filter(|r| r.source == FootprintSource::LidarFootprint)
                .count(),
            0
        );
        assert_eq!(ds.dropped_cloudy, 1);

        // Far away: clean patch, retained.
        let ds = build_dataset(&tiles, &[mk(40, 40)], &cfg).unwrap();
        assert_eq!(ds.dropped_cloudy, 0);
        assert!(ds
            .records
            .iter()
            .any(|r| r.source == FootprintSource::LidarFootprint));
    }

    #[test]
    fn forced_zero_records_come_from_non_vegetated_pixels_and_are_capped() {
        let (tiles, footprints, cfg) = small_world_tiles(0.0);
        let ds = build_dataset(&tiles, &footprints, &cfg).unwrap();
        let zeros: Vec<_> = ds
            .records
            .iter()
            .filter(|r| r.source == FootprintSource::ForcedZero)
            .collect();
        assert!(!zeros.is_empty(), "expected synthesized zero records");
        assert!(zeros.iter().all(|r| r.target == 0.0));
        let frac = zeros.len() as f64 / ds.records.len() as f64;
        assert!(frac <= 0.20 + 1e-9, "forced-zero fraction {frac}");
    }

    #[test]
    fn footprint_outside_tile_is_skipped_with_count() {
        let (tiles, _, cfg) = small_world_tiles(0.0);
        let bad = FootprintSample {
            tile_id: 0,
            center_col: 90, // belongs to a different tile
            center_row: 90,
            canopy_top_height: 5.0,
            source: FootprintSource::LidarFootprint,
        };
        let ds = build_dataset(&tiles, &[bad], &cfg).unwrap();
        assert_eq!(ds.skipped_outside, 1);
        assert!(ds.records.is_empty());
    }

    #[test]
    fn retained_count_is_monotone_in_cloud_threshold_strictness() {
        let (tiles, footprints, mut cfg) = small_world_tiles(0.35);
        let mut last = usize::MAX;
        for thr in [0.30, 0.10, 0.05, 0.01] {
            cfg.cloud_pixel_threshold = thr;
            let ds = build_dataset(&tiles, &footprints, &cfg).unwrap();
            let lidar = ds
                .records
                .iter()
                .filter(|r| r.source == FootprintSource::LidarFootprint)
                .count();
            assert!(lidar <= last, "stricter threshold must retain fewer");
            last = lidar;
        }
    }

    #[test]
    fn fpd1_round_trips() {
        let (tiles, footprints, cfg) = small_world_tiles(0.0);
        let ds = build_dataset(&tiles, &footprints[..20.min(footprints.len())], &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.fpd1");
        write_fpd1(&ds, &cfg, &path).unwrap();
        let (back, cfg_echo) = read_fpd1(&path).unwrap();
        assert_eq!(back.records.len(), ds.records.len());
        assert_eq!(cfg_echo, cfg);
        for (a, b) in back.records.iter().zip(&ds.records) {
            assert_eq!(a.patch.data(), b.patch.data());
            assert_eq!(a.target, b.target);
            assert_eq!(a.tile_id, b.tile_id);
        }
    }
}
