//! Command-line front end wiring the pipeline:
//! synth -> train-canopy -> predict -> composite -> train-carbon ->
//! predict-carbon -> classify -> stats -> eval, plus grad-check.
//!
//! Every command takes one JSON [`PipelineConfig`] file and reads its own
//! section; `--seed` and `--threads` override the config globals, `--out`
//! (or `HCSMAP_OUTPUT_ROOT`) overrides the root all relative paths resolve
//! against. Artifacts are written atomically and every run drops a
//! `run_manifest.json` with the config hash, seed, and input hashes.
//!
//! Exit codes: 0 success, 1 pipeline error, 2 config parse failure.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::canopy::{
    assemble_tiles, build_dataset, composite, predict_dense, read_footprints_fpd1,
    select_least_cloudy, train_canopy, write_footprints_fpd1, write_fpd1, Tiling, TrainConfig,
};
use crate::carbon::{
    predict_carbon, train_carbon_ensemble, CarbonEnsemble, CarbonTrainConfig, RegionSplit,
    ENSEMBLE_SIZE,
};
use crate::evalstats::{
    confusion, grouped_boxplot, rank_zones_by_hcs, regression_metrics, write_boxplots_csv,
    write_confusion_csv, write_json, write_metrics_csv, write_zones_csv, zonal_stats,
};
use crate::grid::io::{atomic_write_bytes, read_grd1, write_grd1, write_pgm, write_ppm_palette};
use crate::grid::{bilinear_resample, nearest_resample, Grid};
use crate::hcs::{
    binary_code_grid, classify_grid, legend_json, overlay, palette, HcsClass, HcsThresholds,
    OverlayThresholds,
};
use crate::nn::{grad_check_battery, read_nnp1, write_nnp1, Model};
use crate::synth::{gen_footprints, gen_images, gen_overlays, gen_world, noise_floor, WorldConfig};

pub const OUTPUT_ROOT_ENV: &str = "HCSMAP_OUTPUT_ROOT";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("missing config section `{0}`")]
    MissingSection(&'static str),
    #[error("{0}")]
    Grid(#[from] crate::grid::GridError),
    #[error("{0}")]
    Nn(#[from] crate::nn::NnError),
    #[error("{0}")]
    Canopy(#[from] crate::canopy::CanopyError),
    #[error("{0}")]
    Carbon(#[from] crate::carbon::CarbonError),
    #[error("{0}")]
    Hcs(#[from] crate::hcs::HcsError),
    #[error("{0}")]
    Stats(#[from] crate::evalstats::StatsError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("gradient check failed: max relative error {0}")]
    GradCheckFailed(f64),
}

pub type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Worker threads (0 or 1 = fully sequential; outputs are identical
    /// for any value).
    pub threads: usize,
    /// Root for all relative paths; overridden by --out / HCSMAP_OUTPUT_ROOT.
    pub output_root: Option<String>,
    pub synth: Option<SynthSection>,
    pub train_canopy: Option<TrainCanopySection>,
    pub predict: Option<PredictSection>,
    pub composite: Option<CompositeSection>,
    pub train_carbon: Option<TrainCarbonSection>,
    pub predict_carbon: Option<PredictCarbonSection>,
    pub classify: Option<ClassifySection>,
    pub stats: Option<StatsSection>,
    pub eval: Option<EvalSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub world: WorldConfig,
    pub acquisitions: usize,
    pub out_dir: String,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            world: WorldConfig::default(),
            acquisitions: 6,
            out_dir: "world".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainCanopySection {
    pub world_dir: String,
    pub config: TrainConfig,
    pub out_dir: String,
}

impl Default for TrainCanopySection {
    fn default() -> Self {
        Self {
            world_dir: "world".into(),
            config: TrainConfig::default(),
            out_dir: "canopy".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictSection {
    pub model: String,
    pub world_dir: String,
    /// Predict only the k least cloudy acquisitions (all when absent).
    pub select_k: Option<usize>,
    pub tile: usize,
    pub overlap: usize,
    pub out_dir: String,
}

impl Default for PredictSection {
    fn default() -> Self {
        Self {
            model: "canopy/canopy_model.nnp1".into(),
            world_dir: "world".into(),
            select_k: None,
            tile: 128,
            overlap: 16,
            out_dir: "predictions".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompositeSection {
    pub predictions: Vec<String>,
    pub clouds: Vec<String>,
    pub out_dir: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainCarbonSection {
    pub height: String,
    pub carbon_ref: String,
    /// Explicit column split; when absent, the proportional default.
    pub split: Option<RegionSplit>,
    pub config: CarbonTrainConfig,
    pub out_dir: String,
}

impl Default for TrainCarbonSection {
    fn default() -> Self {
        Self {
            height: "world/height.grd1".into(),
            carbon_ref: "world/carbon.grd1".into(),
            split: None,
            config: CarbonTrainConfig::default(),
            out_dir: "carbon".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictCarbonSection {
    pub ensemble_dir: String,
    pub height: String,
    pub tile: usize,
    pub overlap: usize,
    pub out_dir: String,
}

impl Default for PredictCarbonSection {
    fn default() -> Self {
        Self {
            ensemble_dir: "carbon".into(),
            height: "composite/composite.grd1".into(),
            tile: 128,
            overlap: 16,
            out_dir: "carbon_map".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifySection {
    pub carbon: String,
    pub thresholds: HcsThresholds,
    pub palm: Option<String>,
    pub coconut: Option<String>,
    pub urban: Option<String>,
    pub overlay_thresholds: OverlayThresholds,
    pub out_dir: String,
}

impl Default for ClassifySection {
    fn default() -> Self {
        Self {
            carbon: "carbon_map/carbon_mean.grd1".into(),
            thresholds: HcsThresholds::default(),
            palm: None,
            coconut: None,
            urban: None,
            overlay_thresholds: OverlayThresholds::default(),
            out_dir: "hcs".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsSection {
    pub class_grid: String,
    pub zone_grid: String,
    pub out_dir: String,
}

impl Default for StatsSection {
    fn default() -> Self {
        Self {
            class_grid: "hcs/hcs_class.grd1".into(),
            zone_grid: "world/zone.grd1".into(),
            out_dir: "stats".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub height_pred: Option<String>,
    pub height_ref: Option<String>,
    pub carbon_pred: Option<String>,
    pub carbon_ref: Option<String>,
    pub class_pred: Option<String>,
    pub class_ref: Option<String>,
    /// Values grid summarized per class of `class_ref` (boxplots.csv).
    pub boxplot_values: Option<String>,
    pub out_dir: String,
}

// ---------------------------------------------------------------------------
// Argument parsing
// ---------------------------------------------------------------------------

#[derive(Parser, Debug)]
#[command(
    name = "hcsmap",
    version,
    about = "Canopy height, carbon density, and high-carbon-stock mapping pipeline"
)]
pub struct Args {
    #[command(subcommand)]
    pub command: Command,
    /// JSON pipeline configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override the config's global seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Override the config's worker thread count (1 = sequential).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Override the output root all relative paths resolve against.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Generate a synthetic world directory.
    Synth,
    /// Build the footprint dataset and train the canopy-height model.
    TrainCanopy,
    /// Dense canopy-height inference per acquisition.
    Predict,
    /// Reduce per-acquisition predictions to one cloud-gated map.
    Composite,
    /// Train the five-member carbon ensemble.
    TrainCarbon,
    /// Dense ensemble carbon prediction with uncertainty.
    PredictCarbon,
    /// Threshold carbon density into HCS classes and apply overlays.
    Classify,
    /// Zonal class-fraction statistics.
    Stats,
    /// Regression metrics, confusion matrices, and boxplot summaries.
    Eval,
    /// Verify analytic gradients against central finite differences.
    GradCheck,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::TrainCanopy => "train-canopy",
            Command::Predict => "predict",
            Command::Composite => "composite",
            Command::TrainCarbon => "train-carbon",
            Command::PredictCarbon => "predict-carbon",
            Command::Classify => "classify",
            Command::Stats => "stats",
            Command::Eval => "eval",
            Command::GradCheck => "grad-check",
        }
    }
}

/// Binary entry point; returns the process exit code.
pub fn main() -> i32 {
    let args = Args::parse();
    let config = match load_config(&args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("hcsmap: config error: {e}");
            return 2;
        }
    };
    match run(args.command, &config) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("hcsmap: {e}");
            1
        }
    }
}

fn load_config(args: &Args) -> std::result::Result<PipelineConfig, String> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| format!("{path:?}: {e}"))?;
            serde_json::from_str::<PipelineConfig>(&text).map_err(|e| e.to_string())?
        }
        None => PipelineConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(threads) = args.threads {
        config.threads = threads;
    }
    if let Some(out) = &args.out {
        config.output_root = Some(out.to_string_lossy().into_owned());
    } else if config.output_root.is_none() {
        if let Ok(root) = std::env::var(OUTPUT_ROOT_ENV) {
            config.output_root = Some(root);
        }
    }
    Ok(config)
}

// ---------------------------------------------------------------------------
// Run manifest
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub threads: usize,
    pub config_sha256: String,
    pub config_echo: PipelineConfig,
    pub inputs: Vec<(String, String)>,
    pub outputs: Vec<String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    Ok(sha256_hex(&bytes))
}

struct Run<'a> {
    command: Command,
    config: &'a PipelineConfig,
    root: PathBuf,
    inputs: Vec<(String, String)>,
    outputs: Vec<String>,
}

impl<'a> Run<'a> {
    fn new(command: Command, config: &'a PipelineConfig) -> Self {
        let root = PathBuf::from(config.output_root.clone().unwrap_or_else(|| ".".into()));
        Self {
            command,
            config,
            root,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    fn path(&self, rel: &str) -> PathBuf {
        let p = PathBuf::from(rel);
        if p.is_absolute() {
            p
        } else {
            self.root.join(p)
        }
    }

    fn read_grid(&mut self, rel: &str) -> Result<Grid> {
        let path = self.path(rel);
        self.inputs.push((rel.to_string(), hash_file(&path)?));
        Ok(read_grd1(&path)?)
    }

    fn out_dir(&self, rel: &str) -> Result<PathBuf> {
        let dir = self.path(rel);
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        Ok(dir)
    }

    fn note_output(&mut self, dir: &str, name: &str) -> String {
        let rel = format!("{dir}/{name}");
        self.outputs.push(rel.clone());
        rel
    }

    fn write_manifest(&self, dir: &Path) -> Result<()> {
        let config_bytes = serde_json::to_vec_pretty(self.config).expect("config serialization");
        let manifest = RunManifest {
            command: self.command.name().to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.config.seed,
            threads: self.config.threads,
            config_sha256: sha256_hex(&config_bytes),
            config_echo: self.config.clone(),
            inputs: self.inputs.clone(),
            outputs: self.outputs.clone(),
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serialization");
        bytes.push(b'\n');
        let path = dir.join("run_manifest.json");
        atomic_write_bytes(&path, &bytes).map_err(io_err(&path))?;
        Ok(())
    }
}

fn effective_threads(config: &PipelineConfig) -> usize {
    config.threads.max(1)
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

/// Execute one pipeline command against a parsed configuration.
pub fn run(command: Command, config: &PipelineConfig) -> Result<()> {
    match command {
        Command::Synth => run_synth(config),
        Command::TrainCanopy => run_train_canopy(config),
        Command::Predict => run_predict(config),
        Command::Composite => run_composite(config),
        Command::TrainCarbon => run_train_carbon(config),
        Command::PredictCarbon => run_predict_carbon(config),
        Command::Classify => run_classify(config),
        Command::Stats => run_stats(config),
        Command::Eval => run_eval(config),
        Command::GradCheck => run_grad_check(config),
    }
}

#[derive(Serialize)]
struct WorldManifest<'a> {
    world: &'a WorldConfig,
    acquisitions: usize,
    noise_floor: crate::synth::NoiseFloor,
    footprint_count: usize,
    tiles_x: usize,
    tiles_y: usize,
}

fn run_synth(config: &PipelineConfig) -> Result<()> {
    let mut section = config.synth.clone().unwrap_or_default();
    if config.seed != 0 {
        section.world.seed = config.seed;
    }
    let mut run = Run::new(Command::Synth, config);
    let dir = run.out_dir(&section.out_dir)?;

    let world = gen_world(&section.world);
    let images = gen_images(&world.height, &section.world, section.acquisitions.max(1));
    let footprints = gen_footprints(&world.height, &section.world);
    let overlays = gen_overlays(&section.world);

    let grids: Vec<(&str, &Grid)> = vec![
        ("height.grd1", &world.height),
        ("carbon.grd1", &world.carbon),
        ("scene.grd1", &world.scene_class),
        ("zone.grd1", &world.zone),
        ("palm.grd1", &overlays.palm_density),
        ("coconut.grd1", &overlays.coconut_density),
        ("urban_100m.grd1", &overlays.urban_100m),
    ];
    for (name, grid) in grids {
        write_grd1(grid, &dir.join(name))?;
        run.note_output(&section.out_dir, name);
    }
    for (i, (image, cloud)) in images.iter().enumerate() {
        let iname = format!("image_{i:02}.grd1");
        let cname = format!("cloud_{i:02}.grd1");
        write_grd1(image, &dir.join(&iname))?;
        write_grd1(cloud, &dir.join(&cname))?;
        run.note_output(&section.out_dir, &iname);
        run.note_output(&section.out_dir, &cname);
    }
    write_footprints_fpd1(&footprints, &dir.join("footprints.fpd1"))?;
    run.note_output(&section.out_dir, "footprints.fpd1");
    write_pgm(&world.height, 0, &dir.join("height.pgm"))?;
    run.note_output(&section.out_dir, "height.pgm");

    let tiles_x = section.world.extent.div_ceil(section.world.tile_size);
    let manifest = WorldManifest {
        world: &section.world,
        acquisitions: section.acquisitions,
        noise_floor: noise_floor(&section.world),
        footprint_count: footprints.len(),
        tiles_x,
        tiles_y: tiles_x,
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serialization");
    bytes.push(b'\n');
    let wm = dir.join("world_manifest.json");
    atomic_write_bytes(&wm, &bytes).map_err(io_err(&wm))?;
    run.note_output(&section.out_dir, "world_manifest.json");

    run.write_manifest(&dir)
}

#[derive(Deserialize)]
struct WorldManifestEcho {
    world: WorldConfig,
    acquisitions: usize,
}

fn load_world_manifest(run: &mut Run, world_dir: &str) -> Result<WorldManifestEcho> {
    let rel = format!("{world_dir}/world_manifest.json");
    let path = run.path(&rel);
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    run.inputs.push((rel, sha256_hex(text.as_bytes())));
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("world manifest: {e}")))
}

fn load_acquisitions(run: &mut Run, world_dir: &str, count: usize) -> Result<Vec<(Grid, Grid)>> {
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let image = run.read_grid(&format!("{world_dir}/image_{i:02}.grd1"))?;
        let cloud = run.read_grid(&format!("{world_dir}/cloud_{i:02}.grd1"))?;
        out.push((image, cloud));
    }
    Ok(out)
}

fn run_train_canopy(config: &PipelineConfig) -> Result<()> {
    let mut section = config.train_canopy.clone().unwrap_or_default();
    if config.seed != 0 {
        section.config.seed = config.seed;
    }
    section.config.threads = effective_threads(config);
    let mut run = Run::new(Command::TrainCanopy, config);
    let dir = run.out_dir(&section.out_dir)?;

    let manifest = load_world_manifest(&mut run, &section.world_dir)?;
    let scene = run.read_grid(&format!("{}/scene.grd1", section.world_dir))?;
    let acquisitions = load_acquisitions(&mut run, &section.world_dir, manifest.acquisitions)?;
    let fp_rel = format!("{}/footprints.fpd1", section.world_dir);
    let fp_path = run.path(&fp_rel);
    run.inputs.push((fp_rel, hash_file(&fp_path)?));
    let footprints = read_footprints_fpd1(&fp_path)?;

    let tiles = assemble_tiles(&acquisitions, &scene, manifest.world.tile_size)?;
    let dataset = build_dataset(&tiles, &footprints, &section.config)?;
    write_fpd1(&dataset, &section.config, &dir.join("dataset.fpd1"))?;
    run.note_output(&section.out_dir, "dataset.fpd1");

    let outcome = train_canopy(&dataset, &section.config)?;
    write_nnp1(&outcome.model, None, &dir.join("canopy_model.nnp1"))?;
    run.note_output(&section.out_dir, "canopy_model.nnp1");

    let mut trace_csv = String::from("iteration,train_loss,val_rmse\n");
    for row in &outcome.trace {
        trace_csv.push_str(&format!(
            "{},{},{}\n",
            row.iteration, row.train_loss, row.val_rmse
        ));
    }
    let trace_path = dir.join("loss_trace.csv");
    atomic_write_bytes(&trace_path, trace_csv.as_bytes()).map_err(io_err(&trace_path))?;
    run.note_output(&section.out_dir, "loss_trace.csv");

    let summary = serde_json::json!({
        "records": dataset.records.len(),
        "skipped_outside": dataset.skipped_outside,
        "dropped_cloudy": dataset.dropped_cloudy,
        "train_tiles": outcome.train_tiles,
        "val_tiles": outcome.val_tiles,
        "best_val_rmse_m": outcome.best_val_rmse,
        "val_me_m": outcome.val_me,
    });
    let sp = dir.join("training_summary.json");
    let mut bytes = serde_json::to_vec_pretty(&summary).expect("summary serialization");
    bytes.push(b'\n');
    atomic_write_bytes(&sp, &bytes).map_err(io_err(&sp))?;
    run.note_output(&section.out_dir, "training_summary.json");

    run.write_manifest(&dir)
}

fn run_predict(config: &PipelineConfig) -> Result<()> {
    let section = config.predict.clone().unwrap_or_default();
    let threads = effective_threads(config);
    let mut run = Run::new(Command::Predict, config);
    let dir = run.out_dir(&section.out_dir)?;

    let model_path = run.path(&section.model);
    run.inputs
        .push((section.model.clone(), hash_file(&model_path)?));
    let (model, _): (Model<f32>, _) = read_nnp1(&model_path)?;
    let manifest = load_world_manifest(&mut run, &section.world_dir)?;
    let acquisitions = load_acquisitions(&mut run, &section.world_dir, manifest.acquisitions)?;

    let selected: Vec<usize> = match section.select_k {
        Some(k) => select_least_cloudy(&acquisitions, k)?,
        None => (0..acquisitions.len()).collect(),
    };
    let tiling = Tiling {
        tile: section.tile,
        overlap: section.overlap,
    };
    for &i in &selected {
        let pred = predict_dense(&model, &acquisitions[i].0, Some(tiling), threads)?;
        let name = format!("prediction_{i:02}.grd1");
        write_grd1(&pred, &dir.join(&name))?;
        run.note_output(&section.out_dir, &name);
    }
    let sel = serde_json::json!({ "selected_acquisitions": selected });
    let sp = dir.join("selection.json");
    let mut bytes = serde_json::to_vec_pretty(&sel).expect("selection serialization");
    bytes.push(b'\n');
    atomic_write_bytes(&sp, &bytes).map_err(io_err(&sp))?;
    run.note_output(&section.out_dir, "selection.json");

    run.write_manifest(&dir)
}

fn run_composite(config: &PipelineConfig) -> Result<()> {
    let section = config
        .composite
        .clone()
        .ok_or(CliError::MissingSection("composite"))?;
    let mut run = Run::new(Command::Composite, config);
    let dir = run.out_dir(&section.out_dir)?;

    let mut predictions = Vec::new();
    for rel in &section.predictions {
        predictions.push(run.read_grid(rel)?);
    }
    let mut clouds = Vec::new();
    for rel in &section.clouds {
        clouds.push(run.read_grid(rel)?);
    }
    let composed = composite(&predictions, &clouds)?;
    write_grd1(&composed, &dir.join("composite.grd1"))?;
    run.note_output(&section.out_dir, "composite.grd1");
    write_pgm(&composed, 0, &dir.join("composite.pgm"))?;
    run.note_output(&section.out_dir, "composite.pgm");

    run.write_manifest(&dir)
}

fn run_train_carbon(config: &PipelineConfig) -> Result<()> {
    let mut section = config.train_carbon.clone().unwrap_or_default();
    section.config.threads = effective_threads(config);
    let mut run = Run::new(Command::TrainCarbon, config);
    let dir = run.out_dir(&section.out_dir)?;

    let height = run.read_grid(&section.height)?;
    let mut carbon_ref = run.read_grid(&section.carbon_ref)?;
    if (carbon_ref.pixel_size() - height.pixel_size()).abs() > 1e-9 {
        // Coarser reference products are brought to the height grid.
        carbon_ref = bilinear_resample(&carbon_ref, height.pixel_size())?;
    }
    let split = section
        .split
        .clone()
        .unwrap_or_else(|| RegionSplit::proportional(height.width()));
    let (ensemble, trace) = train_carbon_ensemble(&height, &carbon_ref, &split, &section.config)?;

    for (i, member) in ensemble.members().iter().enumerate() {
        let name = format!("member_{i}.nnp1");
        write_nnp1(member, None, &dir.join(&name))?;
        run.note_output(&section.out_dir, &name);
    }
    let ens_manifest = serde_json::json!({
        "members": ENSEMBLE_SIZE,
        "seeds": section.config.seeds,
        "split": split,
        "config_sha256": sha256_hex(
            &serde_json::to_vec(&section.config).expect("config serialization")
        ),
    });
    let mp = dir.join("ensemble.json");
    let mut bytes = serde_json::to_vec_pretty(&ens_manifest).expect("manifest serialization");
    bytes.push(b'\n');
    atomic_write_bytes(&mp, &bytes).map_err(io_err(&mp))?;
    run.note_output(&section.out_dir, "ensemble.json");

    let mut trace_csv = String::from("member,epoch,train_nll,val_rmse\n");
    for row in &trace {
        trace_csv.push_str(&format!(
            "{},{},{},{}\n",
            row.member, row.epoch, row.train_nll, row.val_rmse
        ));
    }
    let tp = dir.join("member_trace.csv");
    atomic_write_bytes(&tp, trace_csv.as_bytes()).map_err(io_err(&tp))?;
    run.note_output(&section.out_dir, "member_trace.csv");

    run.write_manifest(&dir)
}

/// Load the five NNP1 members from an ensemble directory.
pub fn load_ensemble(dir: &Path) -> Result<CarbonEnsemble> {
    let mut members = Vec::with_capacity(ENSEMBLE_SIZE);
    for i in 0..ENSEMBLE_SIZE {
        let path = dir.join(format!("member_{i}.nnp1"));
        let (model, _): (Model<f32>, _) = read_nnp1(&path)?;
        members.push(model);
    }
    Ok(CarbonEnsemble::new(members)?)
}

fn run_predict_carbon(config: &PipelineConfig) -> Result<()> {
    let section = config.predict_carbon.clone().unwrap_or_default();
    let threads = effective_threads(config);
    let mut run = Run::new(Command::PredictCarbon, config);
    let dir = run.out_dir(&section.out_dir)?;

    let height = run.read_grid(&section.height)?;
    let ens_dir = run.path(&section.ensemble_dir);
    for i in 0..ENSEMBLE_SIZE {
        let rel = format!("{}/member_{i}.nnp1", section.ensemble_dir);
        let p = ens_dir.join(format!("member_{i}.nnp1"));
        run.inputs.push((rel, hash_file(&p)?));
    }
    let ensemble = load_ensemble(&ens_dir)?;
    let tiling = Tiling {
        tile: section.tile,
        overlap: section.overlap,
    };
    let pred = predict_carbon(&ensemble, &height, Some(tiling), threads)?;
    write_grd1(&pred.mean, &dir.join("carbon_mean.grd1"))?;
    run.note_output(&section.out_dir, "carbon_mean.grd1");
    write_grd1(&pred.variance, &dir.join("carbon_variance.grd1"))?;
    run.note_output(&section.out_dir, "carbon_variance.grd1");
    write_pgm(&pred.mean, 0, &dir.join("carbon_mean.pgm"))?;
    run.note_output(&section.out_dir, "carbon_mean.pgm");

    run.write_manifest(&dir)
}

fn run_classify(config: &PipelineConfig) -> Result<()> {
    let section = config.classify.clone().unwrap_or_default();
    let mut run = Run::new(Command::Classify, config);
    let dir = run.out_dir(&section.out_dir)?;

    let carbon = run.read_grid(&section.carbon)?;
    let mut classes = classify_grid(&carbon, &section.thresholds)?;

    if section.palm.is_some() || section.coconut.is_some() || section.urban.is_some() {
        let palm = match &section.palm {
            Some(rel) => run.read_grid(rel)?,
            None => Grid::filled(carbon.width(), carbon.height(), 1, *carbon.transform(), 0.0),
        };
        let coconut = match &section.coconut {
            Some(rel) => run.read_grid(rel)?,
            None => Grid::filled(carbon.width(), carbon.height(), 1, *carbon.transform(), 0.0),
        };
        let urban = match &section.urban {
            Some(rel) => {
                let g = run.read_grid(rel)?;
                if (g.pixel_size() - carbon.pixel_size()).abs() > 1e-9 {
                    // Categorical layer: nearest neighbor, never bilinear.
                    nearest_resample(&g, carbon.pixel_size())?
                } else {
                    g
                }
            }
            None => Grid::filled(carbon.width(), carbon.height(), 1, *carbon.transform(), 0.0),
        };
        classes = overlay(
            &classes,
            &palm,
            &coconut,
            &urban,
            &section.overlay_thresholds,
        )?;
    }

    write_grd1(&classes, &dir.join("hcs_class.grd1"))?;
    run.note_output(&section.out_dir, "hcs_class.grd1");
    write_ppm_palette(&classes, &palette(), &dir.join("hcs_class.ppm"))?;
    run.note_output(&section.out_dir, "hcs_class.ppm");
    let lp = dir.join("legend.json");
    let mut bytes = serde_json::to_vec_pretty(&legend_json()).expect("legend serialization");
    bytes.push(b'\n');
    atomic_write_bytes(&lp, &bytes).map_err(io_err(&lp))?;
    run.note_output(&section.out_dir, "legend.json");

    run.write_manifest(&dir)
}

fn run_stats(config: &PipelineConfig) -> Result<()> {
    let section = config.stats.clone().unwrap_or_default();
    let mut run = Run::new(Command::Stats, config);
    let dir = run.out_dir(&section.out_dir)?;

    let class_grid = run.read_grid(&section.class_grid)?;
    let zone_grid = run.read_grid(&section.zone_grid)?;
    let stats = zonal_stats(&class_grid, &zone_grid)?;
    write_zones_csv(&stats, &dir.join("zones.csv"))?;
    run.note_output(&section.out_dir, "zones.csv");
    write_json(&stats, &dir.join("zones.json"))?;
    run.note_output(&section.out_dir, "zones.json");
    let ranked = rank_zones_by_hcs(&stats);
    write_zones_csv(&ranked, &dir.join("zones_ranked.csv"))?;
    run.note_output(&section.out_dir, "zones_ranked.csv");

    run.write_manifest(&dir)
}

fn class_labels() -> Vec<(f32, String)> {
    HcsClass::ALL
        .iter()
        .map(|c| (c.code() as f32, c.short_name().to_string()))
        .collect()
}

fn run_eval(config: &PipelineConfig) -> Result<()> {
    let section = config.eval.clone().unwrap_or_default();
    let out_dir_name = if section.out_dir.is_empty() {
        "eval".to_string()
    } else {
        section.out_dir.clone()
    };
    let mut run = Run::new(Command::Eval, config);
    let dir = run.out_dir(&out_dir_name)?;

    let mut metric_rows = Vec::new();
    if let (Some(p), Some(r)) = (&section.height_pred, &section.height_ref) {
        let pred = run.read_grid(p)?;
        let reference = run.read_grid(r)?;
        metric_rows.push((
            "canopy_height".to_string(),
            regression_metrics(&pred, &reference, None)?,
        ));
    }
    if let (Some(p), Some(r)) = (&section.carbon_pred, &section.carbon_ref) {
        let pred = run.read_grid(p)?;
        let reference = run.read_grid(r)?;
        metric_rows.push((
            "carbon_density".to_string(),
            regression_metrics(&pred, &reference, None)?,
        ));
    }
    if !metric_rows.is_empty() {
        write_metrics_csv(&metric_rows, &dir.join("metrics.csv"))?;
        run.note_output(&out_dir_name, "metrics.csv");
        write_json(&metric_rows, &dir.join("metrics.json"))?;
        run.note_output(&out_dir_name, "metrics.json");
    }

    let mut class_ref_grid: Option<Grid> = None;
    if let (Some(p), Some(r)) = (&section.class_pred, &section.class_ref) {
        let pred = run.read_grid(p)?;
        let reference = run.read_grid(r)?;
        let six = confusion(&pred, &reference, &class_labels())?;
        let binary = confusion(
            &binary_code_grid(&pred)?,
            &binary_code_grid(&reference)?,
            &[
                (0.0, "OLS".to_string()),
                (1.0, "HCS".to_string()),
                (2.0, "Other".to_string()),
            ],
        )?;
        let matrices = vec![
            ("six_class".to_string(), six),
            ("binary".to_string(), binary),
        ];
        write_confusion_csv(&matrices, &dir.join("confusion.csv"))?;
        run.note_output(&out_dir_name, "confusion.csv");
        write_json(&matrices, &dir.join("confusion.json"))?;
        run.note_output(&out_dir_name, "confusion.json");
        class_ref_grid = Some(reference);
    }

    if let (Some(v), Some(reference)) = (&section.boxplot_values, &class_ref_grid) {
        let values_grid = run.read_grid(v)?;
        values_grid
            .check_aligned(reference)
            .map_err(CliError::Grid)?;
        let names: Vec<String> = HcsClass::ALL
            .iter()
            .map(|c| c.short_name().to_string())
            .collect();
        let mut values = Vec::new();
        let mut groups = Vec::new();
        for r in 0..values_grid.height() {
            for c in 0..values_grid.width() {
                if values_grid.is_nodata(c, r) || reference.is_nodata(c, r) {
                    continue;
                }
                let class = HcsClass::from_code(reference.value(0, c, r))?;
                values.push(values_grid.value(0, c, r) as f64);
                groups.push(class.code() as usize);
            }
        }
        let plots = grouped_boxplot(&values, &groups, &names)?;
        write_boxplots_csv(&plots.groups, &dir.join("boxplots.csv"))?;
        run.note_output(&out_dir_name, "boxplots.csv");
        write_json(&plots.groups, &dir.join("boxplots.json"))?;
        run.note_output(&out_dir_name, "boxplots.json");
    }

    run.write_manifest(&dir)
}

fn run_grad_check(config: &PipelineConfig) -> Result<()> {
    let seed = if config.seed != 0 { config.seed } else { 42 };
    let battery = grad_check_battery(seed)?;
    let mut worst = 0.0f64;
    for case in &battery {
        println!(
            "{:<28} max relative error {:.3e}",
            case.name, case.max_rel_error
        );
        worst = worst.max(case.max_rel_error);
    }
    println!("overall max relative error {worst:.3e}");
    if worst < 1e-4 {
        Ok(())
    } else {
        Err(CliError::GradCheckFailed(worst))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_json_round_trips_byte_identically() {
        let config = PipelineConfig {
            seed: 42,
            synth: Some(SynthSection::default()),
            train_canopy: Some(TrainCanopySection::default()),
            classify: Some(ClassifySection::default()),
            ..PipelineConfig::default()
        };
        let first = serde_json::to_string_pretty(&config).unwrap();
        let parsed: PipelineConfig = serde_json::from_str(&first).unwrap();
        let second = serde_json::to_string_pretty(&parsed).unwrap();
        assert_eq!(first, second);
        assert_eq!(parsed, config);
    }

    #[test]
    fn config_rejects_unknown_fields() {
        let text = r#"{ "seed": 1, "no_such_field": true }"#;
        assert!(serde_json::from_str::<PipelineConfig>(text).is_err());
    }

    #[test]
    fn sha256_is_stable() {
        assert_eq!(sha256_hex(b"hcsmap"), sha256_hex(b"hcsmap"),);
        assert_ne!(sha256_hex(b"a"), sha256_hex(b"b"));
        assert_eq!(sha256_hex(b"").len(), 64);
    }
}
