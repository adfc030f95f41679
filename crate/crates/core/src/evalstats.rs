//! Evaluation statistics: regression metrics, confusion matrices,
//! grouped distribution summaries, and zonal class fractions, plus their
//! CSV/JSON writers.
//!
//! Conventions: ME = mean(prediction - reference), so a negative ME means
//! the prediction is lower than the reference. Percentiles use linear
//! interpolation between closest ranks. All reductions accumulate in
//! 64-bit. Pixels are equal-area; zone areas are reported as
//! `count * 0.01` hectares (10 m pixel = 100 m^2).

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::io::atomic_write_bytes;
use crate::grid::Grid;
use crate::hcs::{binary_collapse, BinaryHcs, HcsClass};

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("no valid pixels")]
    Empty,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("unknown label {0}")]
    UnknownLabel(String),
    #[error("grid misalignment")]
    Misaligned(#[from] crate::grid::GridError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, StatsError>;

// ---------------------------------------------------------------------------
// Regression metrics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub rmse: f64,
    pub mae: f64,
    pub me: f64,
    pub count: usize,
}

/// Metrics over paired samples (already filtered to valid pairs).
pub fn regression_metrics_from_pairs(pred: &[f64], reference: &[f64]) -> Result<RegressionMetrics> {
    if pred.len() != reference.len() {
        return Err(StatsError::ShapeMismatch(format!(
            "{} vs {} samples",
            pred.len(),
            reference.len()
        )));
    }
    if pred.is_empty() {
        return Err(StatsError::Empty);
    }
    let mut se = 0.0f64;
    let mut ae = 0.0f64;
    let mut e = 0.0f64;
    for (&p, &r) in pred.iter().zip(reference) {
        let d = p - r;
        se += d * d;
        ae += d.abs();
        e += d;
    }
    let n = pred.len() as f64;
    Ok(RegressionMetrics {
        rmse: (se / n).sqrt(),
        mae: ae / n,
        me: e / n,
        count: pred.len(),
    })
}

/// Metrics over two co-registered grids; pixels that are nodata in either
/// grid (or excluded by `extra_valid`) do not contribute.
pub fn regression_metrics(
    pred: &Grid,
    reference: &Grid,
    extra_valid: Option<&[bool]>,
) -> Result<RegressionMetrics> {
    pred.check_aligned(reference)?;
    if let Some(m) = extra_valid {
        if m.len() != pred.pixels() {
            return Err(StatsError::ShapeMismatch("extra mask length".into()));
        }
    }
    let mut ps = Vec::new();
    let mut rs = Vec::new();
    for r in 0..pred.height() {
        for c in 0..pred.width() {
            let i = r * pred.width() + c;
            if pred.is_nodata(c, r) || reference.is_nodata(c, r) {
                continue;
            }
            if let Some(m) = extra_valid {
                if !m[i] {
                    continue;
                }
            }
            ps.push(pred.value(0, c, r) as f64);
            rs.push(reference.value(0, c, r) as f64);
        }
    }
    regression_metrics_from_pairs(&ps, &rs)
}

// ---------------------------------------------------------------------------
// Confusion matrix
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    /// Ordered class labels; rows are reference, columns prediction.
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
    /// Rows normalized to sum to 1 (all-zero rows stay all-zero).
    pub row_normalized: Vec<Vec<f64>>,
    pub overall_accuracy: f64,
    pub total: u64,
}

/// Confusion of two co-registered class-code grids. Every code present in
/// either grid must appear in `labels` (code, display name); unknown codes
/// are an error. Nodata pixels are excluded.
pub fn confusion(
    pred: &Grid,
    reference: &Grid,
    labels: &[(f32, String)],
) -> Result<ConfusionMatrix> {
    pred.check_aligned(reference)?;
    let k = labels.len();
    let index: HashMap<i64, usize> = labels
        .iter()
        .enumerate()
        .map(|(i, (code, _))| (code.round() as i64, i))
        .collect();
    let mut counts = vec![vec![0u64; k]; k];
    for r in 0..pred.height() {
        for c in 0..pred.width() {
            if pred.is_nodata(c, r) || reference.is_nodata(c, r) {
                continue;
            }
            let pv = pred.value(0, c, r);
            let rv = reference.value(0, c, r);
            let pi = *index
                .get(&(pv.round() as i64))
                .ok_or_else(|| StatsError::UnknownLabel(format!("prediction code {pv}")))?;
            let ri = *index
                .get(&(rv.round() as i64))
                .ok_or_else(|| StatsError::UnknownLabel(format!("reference code {rv}")))?;
            counts[ri][pi] += 1;
        }
    }
    Ok(confusion_from_counts(
        labels.iter().map(|(_, n)| n.clone()).collect(),
        counts,
    ))
}

pub fn confusion_from_counts(labels: Vec<String>, counts: Vec<Vec<u64>>) -> ConfusionMatrix {
    let total: u64 = counts.iter().flatten().sum();
    let diag: u64 = (0..counts.len()).map(|i| counts[i][i]).sum();
    let row_normalized = counts
        .iter()
        .map(|row| {
            let s: u64 = row.iter().sum();
            row.iter()
                .map(|&v| if s > 0 { v as f64 / s as f64 } else { 0.0 })
                .collect()
        })
        .collect();
    ConfusionMatrix {
        labels,
        counts,
        row_normalized,
        overall_accuracy: if total > 0 {
            diag as f64 / total as f64
        } else {
            0.0
        },
        total,
    }
}

// ---------------------------------------------------------------------------
// Grouped boxplot summaries
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxplotSummary {
    pub group: String,
    pub count: usize,
    pub p10: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub p90: f64,
}

/// Percentile by linear interpolation between closest ranks:
/// rank h = (n - 1) * p, value = v[floor(h)] + frac(h) * (v[floor(h)+1] - v[floor(h)]).
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let i = h.floor() as usize;
    if i + 1 < sorted.len() {
        sorted[i] + (h - i as f64) * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

#[derive(Debug, Clone)]
pub struct GroupedBoxplots {
    /// Summaries in the declared group order (empty groups omitted).
    pub groups: Vec<BoxplotSummary>,
    /// Names of declared groups that had no values.
    pub omitted: Vec<String>,
}

/// Five-number-plus-tails summaries of `values` keyed by `group_index`
/// (indices into `group_names`, which fixes the output order).
pub fn grouped_boxplot(
    values: &[f64],
    group_index: &[usize],
    group_names: &[String],
) -> Result<GroupedBoxplots> {
    if values.len() != group_index.len() {
        return Err(StatsError::ShapeMismatch(
            "values and group indices differ in length".into(),
        ));
    }
    let mut buckets: Vec<Vec<f64>> = vec![Vec::new(); group_names.len()];
    for (&v, &g) in values.iter().zip(group_index) {
        if g >= group_names.len() {
            return Err(StatsError::UnknownLabel(format!("group index {g}")));
        }
        buckets[g].push(v);
    }
    let mut groups = Vec::new();
    let mut omitted = Vec::new();
    for (name, mut vals) in group_names.iter().zip(buckets) {
        if vals.is_empty() {
            omitted.push(name.clone());
            continue;
        }
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        groups.push(BoxplotSummary {
            group: name.clone(),
            count: vals.len(),
            p10: percentile(&vals, 0.10),
            q1: percentile(&vals, 0.25),
            median: percentile(&vals, 0.50),
            q3: percentile(&vals, 0.75),
            p90: percentile(&vals, 0.90),
        });
    }
    Ok(GroupedBoxplots { groups, omitted })
}

// ---------------------------------------------------------------------------
// Zonal statistics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ZoneStats {
    pub zone_id: i64,
    /// Valid (classified, non-nodata) pixels in the zone.
    pub valid_pixels: u64,
    pub area_ha: f64,
    /// Fraction of valid pixels per class, keyed by short class name;
    /// fractions sum to 1 per zone.
    pub class_fractions: Vec<(String, f64)>,
    pub ols_fraction: f64,
    pub hcs_fraction: f64,
    pub plantation_fraction: f64,
}

/// Per-zone class fractions over valid pixels of a class-code grid, with
/// OLS/HCS/plantation aggregates. Zones with no valid pixels are reported
/// with zero counts. Output is ordered by zone id.
pub fn zonal_stats(class_grid: &Grid, zone_grid: &Grid) -> Result<Vec<ZoneStats>> {
    class_grid.check_aligned(zone_grid)?;
    let px_area_ha = (class_grid.pixel_size() * class_grid.pixel_size()) / 10_000.0;
    let mut zones: HashMap<i64, (u64, HashMap<u8, u64>)> = HashMap::new();
    for r in 0..class_grid.height() {
        for c in 0..class_grid.width() {
            if zone_grid.is_nodata(c, r) {
                continue;
            }
            let zid = zone_grid.value(0, c, r).round() as i64;
            let entry = zones.entry(zid).or_default();
            if class_grid.is_nodata(c, r) {
                continue;
            }
            let class = HcsClass::from_code(class_grid.value(0, c, r))
                .map_err(|e| StatsError::UnknownLabel(e.to_string()))?;
            if class == HcsClass::NoData {
                continue;
            }
            entry.0 += 1;
            *entry.1.entry(class.code()).or_default() += 1;
        }
    }
    let mut ids: Vec<i64> = zones.keys().copied().collect();
    ids.sort_unstable();
    let mut out = Vec::with_capacity(ids.len());
    for zid in ids {
        let (valid, by_class) = &zones[&zid];
        let denom = *valid as f64;
        let frac_of = |class: HcsClass| -> f64 {
            if denom == 0.0 {
                0.0
            } else {
                *by_class.get(&class.code()).unwrap_or(&0) as f64 / denom
            }
        };
        let mut class_fractions = Vec::new();
        let mut ols = 0.0;
        let mut hcs = 0.0;
        let mut plantation = 0.0;
        for class in HcsClass::ALL.iter().filter(|&&c| c != HcsClass::NoData) {
            let f = frac_of(*class);
            class_fractions.push((class.short_name().to_string(), f));
            match binary_collapse(*class) {
                BinaryHcs::Ols => ols += f,
                BinaryHcs::Hcs => hcs += f,
                BinaryHcs::Other => {}
            }
            if matches!(
                class,
                HcsClass::PlantationOilPalm | HcsClass::PlantationCoconut
            ) {
                plantation += f;
            }
        }
        out.push(ZoneStats {
            zone_id: zid,
            valid_pixels: *valid,
            area_ha: denom * px_area_ha,
            class_fractions,
            ols_fraction: ols,
            hcs_fraction: hcs,
            plantation_fraction: plantation,
        });
    }
    Ok(out)
}

/// Zones reordered by descending HCS fraction (province-ranking view).
pub fn rank_zones_by_hcs(stats: &[ZoneStats]) -> Vec<ZoneStats> {
    let mut out = stats.to_vec();
    out.sort_by(|a, b| {
        b.hcs_fraction
            .partial_cmp(&a.hcs_fraction)
            .unwrap()
            .then(a.zone_id.cmp(&b.zone_id))
    });
    out
}

// ---------------------------------------------------------------------------
// CSV / JSON writers
// ---------------------------------------------------------------------------

/// `metrics.csv`: name,rmse,mae,me,count
pub fn write_metrics_csv(rows: &[(String, RegressionMetrics)], path: &Path) -> Result<()> {
    let mut out = String::from("name,rmse,mae,me,count\n");
    for (name, m) in rows {
        out.push_str(&format!(
            "{name},{},{},{},{}\n",
            m.rmse, m.mae, m.me, m.count
        ));
    }
    atomic_write_bytes(path, out.as_bytes())?;
    Ok(())
}

/// `confusion.csv`: matrix_name,reference,prediction,count,row_fraction
pub fn write_confusion_csv(matrices: &[(String, ConfusionMatrix)], path: &Path) -> Result<()> {
    let mut out = String::from("matrix,reference,prediction,count,row_fraction\n");
    for (name, cm) in matrices {
        for (ri, rlabel) in cm.labels.iter().enumerate() {
            for (pi, plabel) in cm.labels.iter().enumerate() {
                out.push_str(&format!(
                    "{name},{rlabel},{plabel},{},{}\n",
                    cm.counts[ri][pi], cm.row_normalized[ri][pi]
                ));
            }
        }
    }
    atomic_write_bytes(path, out.as_bytes())?;
    Ok(())
}

/// `boxplots.csv`: group,count,p10,q1,median,q3,p90
pub fn write_boxplots_csv(groups: &[BoxplotSummary], path: &Path) -> Result<()> {
    let mut out = String::from("group,count,p10,q1,median,q3,p90\n");
    for g in groups {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            g.group, g.count, g.p10, g.q1, g.median, g.q3, g.p90
        ));
    }
    atomic_write_bytes(path, out.as_bytes())?;
    Ok(())
}

/// `zones.csv`: zone_id,valid_pixels,area_ha,<class fractions>,ols,hcs,plantations
pub fn write_zones_csv(stats: &[ZoneStats], path: &Path) -> Result<()> {
    let class_names: Vec<&str> = HcsClass::ALL
        .iter()
        .filter(|&&c| c != HcsClass::NoData)
        .map(|c| c.short_name())
        .collect();
    let mut out = String::from("zone_id,valid_pixels,area_ha");
    for n in &class_names {
        out.push_str(&format!(",frac_{n}"));
    }
    out.push_str(",frac_OLS,frac_HCS,frac_Plantations\n");
    for z in stats {
        out.push_str(&format!("{},{},{}", z.zone_id, z.valid_pixels, z.area_ha));
        for (_, f) in &z.class_fractions {
            out.push_str(&format!(",{f}"));
        }
        out.push_str(&format!(
            ",{},{},{}\n",
            z.ols_fraction, z.hcs_fraction, z.plantation_fraction
        ));
    }
    atomic_write_bytes(path, out.as_bytes())?;
    Ok(())
}

/// JSON mirror of any serializable report.
pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("report serialization");
    bytes.push(b'\n');
    atomic_write_bytes(path, &bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn metrics_zero_when_equal() {
        let m = regression_metrics_from_pairs(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!((m.rmse, m.mae, m.me), (0.0, 0.0, 0.0));
    }

    #[test]
    fn metrics_symmetric_errors() {
        let m = regression_metrics_from_pairs(&[2.0, 2.0], &[1.0, 3.0]).unwrap();
        assert_eq!(m.rmse, 1.0);
        assert_eq!(m.mae, 1.0);
        assert_eq!(m.me, 0.0);
    }

    #[test]
    fn metrics_sign_convention() {
        // Prediction lower than reference gives a negative mean error.
        let m = regression_metrics_from_pairs(&[0.0], &[5.0]).unwrap();
        assert_eq!(m.me, -5.0);
    }

    #[test]
    fn metrics_empty_errors() {
        assert!(matches!(
            regression_metrics_from_pairs(&[], &[]),
            Err(StatsError::Empty)
        ));
    }

    #[test]
    fn confusion_identity_and_hand_counted() {
        let labels = vec![(0.0f32, "A".to_string()), (1.0f32, "B".to_string())];
        let t = crate::grid::GeoTransform {
            origin_x: 0.0,
            origin_y: 0.0,
            pixel_size: 10.0,
        };
        let mut refg = Grid::filled(4, 1, 1, t, 0.0);
        let mut pred = Grid::filled(4, 1, 1, t, 0.0);
        // ref [A,A,B,B], pred [A,B,B,B]
        for (i, (r, p)) in [(0.0, 0.0), (0.0, 1.0), (1.0, 1.0), (1.0, 1.0)]
            .iter()
            .enumerate()
        {
            refg.set_value(0, i, 0, *r);
            pred.set_value(0, i, 0, *p);
        }
        let cm = confusion(&pred, &refg, &labels).unwrap();
        assert_eq!(cm.counts, vec![vec![1, 1], vec![0, 2]]);
        assert_eq!(cm.row_normalized[0], vec![0.5, 0.5]);
        assert_eq!(cm.row_normalized[1], vec![0.0, 1.0]);
        assert!((cm.overall_accuracy - 0.75).abs() < 1e-12);

        let cm_same = confusion(&refg, &refg, &labels).unwrap();
        assert_eq!(cm_same.overall_accuracy, 1.0);
        assert_eq!(cm_same.counts[0][1], 0);
    }

    #[test]
    fn confusion_unknown_label_errors() {
        let labels = vec![(0.0f32, "A".to_string())];
        let t = crate::grid::GeoTransform {
            origin_x: 0.0,
            origin_y: 0.0,
            pixel_size: 10.0,
        };
        let g = Grid::filled(1, 1, 1, t, 7.0);
        assert!(matches!(
            confusion(&g, &g, &labels),
            Err(StatsError::UnknownLabel(_))
        ));
    }

    #[test]
    fn binary_collapse_commutes_with_confusion() {
        use crate::hcs::binary_code_grid;
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(41);
        let n = 64;
        let t = crate::grid::GeoTransform {
            origin_x: 0.0,
            origin_y: 0.0,
            pixel_size: 10.0,
        };
        let mut pred = Grid::filled(n, n, 1, t, 0.0);
        let mut reference = Grid::filled(n, n, 1, t, 0.0);
        for r in 0..n {
            for c in 0..n {
                pred.set_value(0, c, r, rng.random_range(0..9u8) as f32);
                reference.set_value(0, c, r, rng.random_range(0..9u8) as f32);
            }
        }
        // Route A: 6-class-plus-overlays confusion, then sum count blocks
        // according to the binary collapse.
        let labels: Vec<(f32, String)> = HcsClass::ALL
            .iter()
            .map(|c| (c.code() as f32, c.short_name().to_string()))
            .collect();
        let six = confusion(&pred, &reference, &labels).unwrap();
        let bin_of = |i: usize| match binary_collapse(HcsClass::ALL[i]) {
            BinaryHcs::Ols => 0usize,
            BinaryHcs::Hcs => 1,
            BinaryHcs::Other => 2,
        };
        let mut collapsed = vec![vec![0u64; 3]; 3];
        for ri in 0..10 {
            for pi in 0..10 {
                collapsed[bin_of(ri)][bin_of(pi)] += six.counts[ri][pi];
            }
        }
        // Route B: collapse the grids first, then count.
        let blabels = vec![
            (0.0f32, "OLS".to_string()),
            (1.0, "HCS".to_string()),
            (2.0, "Other".to_string()),
        ];
        let direct = confusion(
            &binary_code_grid(&pred).unwrap(),
            &binary_code_grid(&reference).unwrap(),
            &blabels,
        )
        .unwrap();
        assert_eq!(direct.counts, collapsed);
    }

    #[test]
    fn boxplot_constant_group() {
        let out =
            grouped_boxplot(&[5.0, 5.0, 5.0, 5.0], &[0, 0, 0, 0], &["only".to_string()]).unwrap();
        let g = &out.groups[0];
        assert_eq!(
            (g.p10, g.q1, g.median, g.q3, g.p90),
            (5.0, 5.0, 5.0, 5.0, 5.0)
        );
    }

    #[test]
    fn boxplot_one_to_nine_hand_evaluated() {
        // Linear interpolation between closest ranks on 1..9:
        // p10 -> rank 0.8 -> 1.8; q1 -> rank 2 -> 3; median 5; q3 7; p90 8.2.
        let vals: Vec<f64> = (1..=9).map(|v| v as f64).collect();
        let idx = vec![0usize; 9];
        let out = grouped_boxplot(&vals, &idx, &["g".to_string()]).unwrap();
        let g = &out.groups[0];
        assert!((g.p10 - 1.8).abs() < 1e-12);
        assert_eq!(g.q1, 3.0);
        assert_eq!(g.median, 5.0);
        assert_eq!(g.q3, 7.0);
        assert!((g.p90 - 8.2).abs() < 1e-12);
    }

    #[test]
    fn boxplot_identical_groups_and_empty_group_note() {
        let vals = vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0];
        let idx = vec![0, 0, 0, 2, 2, 2];
        let names = vec!["a".to_string(), "b".to_string(), "c".to_string()];
        let out = grouped_boxplot(&vals, &idx, &names).unwrap();
        assert_eq!(out.groups.len(), 2);
        assert_eq!(out.omitted, vec!["b".to_string()]);
        assert_eq!(out.groups[0].median, out.groups[1].median);
    }

    fn class_grid(codes: &[u8], w: usize, zone: &[i64]) -> (Grid, Grid) {
        let h = codes.len() / w;
        let t = crate::grid::GeoTransform {
            origin_x: 0.0,
            origin_y: 0.0,
            pixel_size: 10.0,
        };
        let mut cg = Grid::filled(w, h, 1, t, 0.0);
        let mut zg = Grid::filled(w, h, 1, t, 0.0);
        for i in 0..codes.len() {
            cg.set_value(0, i % w, i / w, codes[i] as f32);
            zg.set_value(0, i % w, i / w, zone[i] as f32);
        }
        (cg, zg)
    }

    #[test]
    fn zonal_single_zone_all_open_land() {
        let (cg, zg) = class_grid(&[0, 0, 0, 0], 2, &[1, 1, 1, 1]);
        let stats = zonal_stats(&cg, &zg).unwrap();
        assert_eq!(stats.len(), 1);
        assert_eq!(stats[0].class_fractions[0], ("OL".to_string(), 1.0));
        assert_eq!(stats[0].ols_fraction, 1.0);
        assert_eq!(stats[0].area_ha, 0.04);
    }

    #[test]
    fn zonal_two_zones_hcs_split() {
        let hdf = HcsClass::HighDensityForest.code();
        let (cg, zg) = class_grid(&[hdf, hdf, 0, 0], 2, &[0, 0, 1, 1]);
        let stats = zonal_stats(&cg, &zg).unwrap();
        assert_eq!(stats[0].hcs_fraction, 1.0);
        assert_eq!(stats[1].hcs_fraction, 0.0);
        let ranked = rank_zones_by_hcs(&stats);
        assert_eq!(ranked[0].zone_id, 0);
    }

    #[test]
    fn zonal_matches_brute_force_counts() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let w = 100;
        let h = 100;
        let codes: Vec<u8> = (0..w * h).map(|_| rng.random_range(0..9u8)).collect();
        let zones: Vec<i64> = (0..w * h).map(|_| rng.random_range(0..5i64)).collect();
        let (cg, zg) = class_grid(&codes, w, &zones);
        let stats = zonal_stats(&cg, &zg).unwrap();

        // Brute force per-pixel counting oracle.
        for z in 0..5i64 {
            let total = zones.iter().filter(|&&zz| zz == z).count() as f64;
            for class in HcsClass::ALL.iter().filter(|&&c| c != HcsClass::NoData) {
                let n = codes
                    .iter()
                    .zip(&zones)
                    .filter(|(&cc, &zz)| zz == z && cc == class.code())
                    .count() as f64;
                let zs = stats.iter().find(|s| s.zone_id == z).unwrap();
                let f = zs
                    .class_fractions
                    .iter()
                    .find(|(n2, _)| n2 == class.short_name())
                    .unwrap()
                    .1;
                assert!((f - n / total).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn csv_writers_emit_documented_headers() {
        let dir = tempfile::tempdir().unwrap();
        let m = regression_metrics_from_pairs(&[1.0], &[2.0]).unwrap();
        let p = dir.path().join("metrics.csv");
        write_metrics_csv(&[("canopy".into(), m)], &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("name,rmse,mae,me,count\n"));

        let (cg, zg) = class_grid(&[0, 1, 2, 3], 2, &[0, 0, 1, 1]);
        let stats = zonal_stats(&cg, &zg).unwrap();
        let p = dir.path().join("zones.csv");
        write_zones_csv(&stats, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("zone_id,valid_pixels,area_ha,frac_OL,"));
        let p = dir.path().join("zones.json");
        write_json(&stats, &p).unwrap();
        assert!(std::fs::read_to_string(&p).unwrap().contains("zone_id"));
    }

    proptest! {
        #[test]
        fn prop_metric_inequalities(values in proptest::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 1..200)) {
            let pred: Vec<f64> = values.iter().map(|v| v.0).collect();
            let reference: Vec<f64> = values.iter().map(|v| v.1).collect();
            let m = regression_metrics_from_pairs(&pred, &reference).unwrap();
            prop_assert!(m.rmse >= m.mae - 1e-12);
            prop_assert!(m.mae >= m.me.abs() - 1e-12);
            // rmse^2 equals the mean squared error (recomputed directly).
            let mse: f64 = pred.iter().zip(&reference).map(|(p, r)| (p - r) * (p - r)).sum::<f64>() / pred.len() as f64;
            if mse > 0.0 {
                prop_assert!(((m.rmse * m.rmse - mse) / mse).abs() < 1e-9);
            }
        }

        #[test]
        fn prop_boxplot_order_statistics(vals in proptest::collection::vec(-50.0f64..50.0, 1..100)) {
            let idx = vec![0usize; vals.len()];
            let out = grouped_boxplot(&vals, &idx, &["g".to_string()]).unwrap();
            let g = &out.groups[0];
            prop_assert!(g.p10 <= g.q1 && g.q1 <= g.median && g.median <= g.q3 && g.q3 <= g.p90);
        }
    }
}
