//! Command-line front end: data generation, training, evaluation tables,
//! and artifact export.
//!
//! Every subcommand resolves its configuration from defaults, an optional
//! TOML file (`--config`), and command-line flags (highest precedence), then
//! writes the fully resolved config next to its outputs so any run can be
//! reproduced from that file plus the seed.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as IoWrite;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::datastore::{
    build_dataset, read_split, DatasetManifest, DatasetParams, DriveRecord, Split,
};
use crate::gazemap::{
    central_blob, correlation_coefficient, kl_divergence, render_gaze_map, GazeMap,
};
use crate::models::{
    build_gaze_predictor, build_pilotnet, forward_driver, load_driver, load_gaze_predictor,
    predict_gaze, save_driver, save_gaze_predictor, train_driver, train_gaze_supervised,
    DriverSample, GazePredictorConfig, GazeSample, IntegrationMode, Model, ModelConfig,
    TrainParams,
};
use crate::numerics::{DropoutMode, OptimizerKind};
use crate::simworld::{
    closed_loop_metrics, generate_track, run_episode, Frame, GazeSource, Policy,
    PolicyContext, Scenario, TrackGenParams, FRAME_H, FRAME_W, GAZE_SIGMA_PX,
};

pub mod exit_codes {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 1;
    pub const RUNTIME: i32 = 2;
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataSection,
    pub driver: DriverSection,
    pub gaze: GazeSection,
    pub eval: EvalSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            data: DataSection::default(),
            driver: DriverSection::default(),
            gaze: GazeSection::default(),
            eval: EvalSection::default(),
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub n_train_tracks: usize,
    pub n_seen_eval_trials: usize,
    pub n_unseen_tracks: usize,
    pub episode_duration_s: f64,
    pub cars: bool,
    pub demo_noise_deg: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        let d = DatasetParams::default();
        DataSection {
            n_train_tracks: d.n_train_tracks,
            n_seen_eval_trials: d.n_seen_eval_trials,
            n_unseen_tracks: d.n_unseen_tracks,
            episode_duration_s: d.episode_duration_s,
            cars: d.cars,
            demo_noise_deg: d.demo_noise_deg,
        }
    }
}

impl DataSection {
    fn params(&self) -> DatasetParams {
        DatasetParams {
            track_gen: TrackGenParams::default(),
            n_train_tracks: self.n_train_tracks,
            n_seen_eval_trials: self.n_seen_eval_trials,
            n_unseen_tracks: self.n_unseen_tracks,
            episode_duration_s: self.episode_duration_s,
            cars: self.cars,
            demo_noise_deg: self.demo_noise_deg,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Arch {
    /// Published layer widths (24/36/48/64/64 conv, 100/50/10/1 dense).
    Pilotnet,
    /// Slim widths that train in minutes on one CPU core.
    Compact,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriverSection {
    pub arch: Arch,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub uniform_keep_prob: f64,
}

impl Default for DriverSection {
    fn default() -> Self {
        DriverSection {
            arch: Arch::Compact,
            epochs: 4,
            batch_size: 32,
            learning_rate: 1e-3,
            uniform_keep_prob: 0.5,
        }
    }
}

impl DriverSection {
    fn model_config(&self, mode: IntegrationMode) -> ModelConfig {
        let mut config = match self.arch {
            Arch::Pilotnet => ModelConfig::pilotnet(mode),
            Arch::Compact => ModelConfig::compact(mode),
        };
        config.uniform_keep_prob = self.uniform_keep_prob;
        config
    }

    fn train_params(&self, seed: u64) -> TrainParams {
        TrainParams {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            optimizer: OptimizerKind::Adam,
            seed,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GazeSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for GazeSection {
    fn default() -> Self {
        GazeSection {
            epochs: 3,
            batch_size: 16,
            learning_rate: 2e-3,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub episodes: usize,
    pub episode_duration_s: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            episodes: 20,
            episode_duration_s: 40.0,
        }
    }
}

// ---------------------------------------------------------------------------
// Argument parsing
// ---------------------------------------------------------------------------

#[derive(Debug, Parser)]
#[command(
    name = "gzim",
    version,
    about = "Gaze-informed imitation learning on a synthetic driving world"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
struct CommonArgs {
    /// TOML experiment config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed for every random choice in the run.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Nogaze,
    GazeInput,
    GazeDropout,
    CentralBlob,
}

impl ModeArg {
    fn integration(self) -> IntegrationMode {
        match self {
            ModeArg::Nogaze => IntegrationMode::NoGaze,
            ModeArg::GazeInput => IntegrationMode::GazeAsInput,
            ModeArg::GazeDropout => IntegrationMode::GazeDropout,
            ModeArg::CentralBlob => IntegrationMode::CentralBlobDropout,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GazeArg {
    Oracle,
    Predictor,
    Central,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate expert demonstration shards for all three splits.
    GenData {
        #[command(flatten)]
        common: CommonArgs,
        /// Spawn slower obstacle cars on the track.
        #[arg(long, value_enum)]
        cars: Option<OnOff>,
    },
    /// Train the gaze predictor on the train split.
    TrainGaze {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// KL/CC table for the trained predictor vs the central-blob baseline.
    EvalGaze {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train one driver network.
    TrainDriver {
        #[command(flatten)]
        common: CommonArgs,
        /// Gaze integration scheme.
        #[arg(long, value_enum, default_value = "nogaze")]
        mode: ModeArg,
    },
    /// Mean absolute steering error table for all six method rows.
    EvalOffline {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Closed-loop infraction metrics on unseen tracks, with and without cars.
    EvalClosedloop {
        #[command(flatten)]
        common: CommonArgs,
        /// Episodes per configuration and cars setting.
        #[arg(long)]
        episodes: Option<usize>,
        /// Gaze source for gaze-consuming drivers.
        #[arg(long, value_enum, default_value = "oracle")]
        gaze: GazeArg,
    },
    /// Export PGM heatmaps and gaze-overlay frames.
    Render {
        #[command(flatten)]
        common: CommonArgs,
        /// Number of frames to export.
        #[arg(long, default_value_t = 8)]
        frames: usize,
    },
}

/// Parse and run. Returns the process exit code.
pub fn run_cli<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version requests are successful exits.
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => exit_codes::OK,
                _ => exit_codes::USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    init_thread_pool();
    match execute(cli.command) {
        Ok(()) => exit_codes::OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_codes::RUNTIME
        }
    }
}

fn init_thread_pool() {
    if let Ok(v) = std::env::var("GZIM_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global();
        }
    }
}

fn resolve_config(common: &CommonArgs) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn write_resolved(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    fs::create_dir_all(&cfg.out_dir)?;
    let text = toml::to_string_pretty(cfg)?;
    fs::write(cfg.out_dir.join("resolved_config.toml"), text)?;
    Ok(())
}

fn execute(command: Command) -> anyhow::Result<()> {
    match command {
        Command::GenData { common, cars } => {
            let mut cfg = resolve_config(&common)?;
            if let Some(cars) = cars {
                cfg.data.cars = cars == OnOff::On;
            }
            write_resolved(&cfg)?;
            cmd_gen_data(&cfg)
        }
        Command::TrainGaze { common } => {
            let cfg = resolve_config(&common)?;
            write_resolved(&cfg)?;
            cmd_train_gaze(&cfg)
        }
        Command::EvalGaze { common } => {
            let cfg = resolve_config(&common)?;
            write_resolved(&cfg)?;
            cmd_eval_gaze(&cfg)
        }
        Command::TrainDriver { common, mode } => {
            let cfg = resolve_config(&common)?;
            write_resolved(&cfg)?;
            cmd_train_driver(&cfg, mode.integration())
        }
        Command::EvalOffline { common } => {
            let cfg = resolve_config(&common)?;
            write_resolved(&cfg)?;
            cmd_eval_offline(&cfg)
        }
        Command::EvalClosedloop {
            common,
            episodes,
            gaze,
        } => {
            let mut cfg = resolve_config(&common)?;
            if let Some(n) = episodes {
                cfg.eval.episodes = n;
            }
            write_resolved(&cfg)?;
            cmd_eval_closedloop(&cfg, gaze)
        }
        Command::Render { common, frames } => {
            let cfg = resolve_config(&common)?;
            write_resolved(&cfg)?;
            cmd_render(&cfg, frames)
        }
    }
}

// ---------------------------------------------------------------------------
// Shared artifact paths and loaders
// ---------------------------------------------------------------------------

fn data_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out_dir.join("data")
}

fn gaze_ckpt(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out_dir.join("gaze_predictor.gzmd")
}

fn driver_ckpt(cfg: &ExperimentConfig, mode: IntegrationMode) -> PathBuf {
    let tag = match mode {
        IntegrationMode::NoGaze => "nogaze",
        IntegrationMode::GazeAsInput => "gaze_input",
        IntegrationMode::GazeDropout => "gaze_dropout",
        IntegrationMode::CentralBlobDropout => "central_blob",
    };
    cfg.out_dir.join(format!("driver_{tag}.gzmd"))
}

fn load_manifest(cfg: &ExperimentConfig) -> anyhow::Result<DatasetManifest> {
    let dir = data_dir(cfg);
    DatasetManifest::load(&dir.join("manifest.json"))
        .with_context(|| format!("no dataset under {} (run gen-data first)", dir.display()))
}

fn load_records(cfg: &ExperimentConfig, split: Split) -> anyhow::Result<Vec<DriveRecord>> {
    let manifest = load_manifest(cfg)?;
    Ok(read_split(&manifest, &data_dir(cfg), split)?)
}

fn frame_values(record: &DriveRecord) -> Vec<f64> {
    record.frame.iter().map(|b| *b as f64 / 255.0).collect()
}

fn oracle_map(record: &DriveRecord) -> GazeMap {
    render_gaze_map(&record.fixations, FRAME_W, FRAME_H, GAZE_SIGMA_PX)
}

fn driver_samples(records: &[DriveRecord]) -> Vec<DriverSample> {
    records
        .par_iter()
        .map(|r| DriverSample {
            image: frame_values(r),
            gaze: Some(oracle_map(r)),
            steering_deg: r.steering_deg,
        })
        .collect()
}

fn gaze_samples(records: &[DriveRecord]) -> Vec<GazeSample> {
    records
        .par_iter()
        .map(|r| GazeSample {
            image: frame_values(r),
            target: oracle_map(r),
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Table output
// ---------------------------------------------------------------------------

fn emit_table(
    cfg: &ExperimentConfig,
    name: &str,
    header: &[&str],
    rows: &[Vec<String>],
) -> anyhow::Result<()> {
    let path = cfg.out_dir.join(format!("{name}.csv"));
    let mut csv = String::new();
    csv.push_str(&header.join(","));
    csv.push('\n');
    for row in rows {
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    fs::write(&path, &csv)?;

    // Aligned text alongside the CSV.
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let mut out = std::io::stdout().lock();
    let fmt_row = |cells: &[String]| {
        cells
            .iter()
            .enumerate()
            .map(|(i, c)| format!("{c:<w$}", w = widths[i]))
            .collect::<Vec<_>>()
            .join("  ")
    };
    let header_cells: Vec<String> = header.iter().map(|s| s.to_string()).collect();
    writeln!(out, "{}", fmt_row(&header_cells))?;
    writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)))?;
    for row in rows {
        writeln!(out, "{}", fmt_row(row))?;
    }
    writeln!(out, "(written to {})", path.display())?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

fn cmd_gen_data(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    let dir = data_dir(cfg);
    let manifest = build_dataset(&cfg.data.params(), cfg.seed, &dir)?;
    let n: u64 = manifest.shards.iter().map(|s| s.record_count).sum();
    println!(
        "wrote {} shards ({} records) to {}",
        manifest.shards.len(),
        n,
        dir.display()
    );
    Ok(())
}

fn cmd_train_gaze(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    let records = load_records(cfg, Split::Train)?;
    if records.is_empty() {
        bail!("train split is empty");
    }
    let data = gaze_samples(&records);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6761_7a65);
    let mut model = build_gaze_predictor(&GazePredictorConfig::default(), &mut rng)?;
    let params = TrainParams {
        epochs: cfg.gaze.epochs,
        batch_size: cfg.gaze.batch_size,
        learning_rate: cfg.gaze.learning_rate,
        optimizer: OptimizerKind::Adam,
        seed: cfg.seed,
    };
    train_gaze_supervised(&mut model, &data, &params, &mut rng)?;
    let path = gaze_ckpt(cfg);
    save_gaze_predictor(&model, &path)?;
    println!(
        "trained gaze predictor on {} frames; epoch L1: {:?}; saved to {}",
        data.len(),
        model.training_history,
        path.display()
    );
    Ok(())
}

fn mean_kl_cc(
    records: &[DriveRecord],
    estimate: impl Fn(&DriveRecord) -> anyhow::Result<GazeMap> + Sync,
) -> anyhow::Result<(f64, f64)> {
    let pairs: Vec<(f64, f64)> = records
        .par_iter()
        .map(|r| -> anyhow::Result<(f64, f64)> {
            let truth = oracle_map(r);
            let est = estimate(r)?;
            Ok((
                kl_divergence(&truth, &est)?,
                correlation_coefficient(&truth, &est)?,
            ))
        })
        .collect::<anyhow::Result<_>>()?;
    if pairs.is_empty() {
        bail!("empty evaluation split");
    }
    let n = pairs.len() as f64;
    Ok((
        pairs.iter().map(|(k, _)| k).sum::<f64>() / n,
        pairs.iter().map(|(_, c)| c).sum::<f64>() / n,
    ))
}

fn cmd_eval_gaze(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    let model = load_gaze_predictor(&gaze_ckpt(cfg))
        .with_context(|| "no gaze checkpoint (run train-gaze first)")?;
    let blob = central_blob(FRAME_W, FRAME_H, GAZE_SIGMA_PX);
    let mut rows = Vec::new();
    for (split, label) in [(Split::SeenEval, "seen"), (Split::UnseenEval, "unseen")] {
        let records = load_records(cfg, split)?;
        let (kl, cc) = mean_kl_cc(&records, |r| Ok(predict_gaze(&model, &frame_values(r))?))?;
        rows.push(vec![
            "estimated".to_string(),
            label.to_string(),
            format!("{kl:.4}"),
            format!("{cc:.4}"),
        ]);
        let (kl, cc) = mean_kl_cc(&records, |_| Ok(blob.clone()))?;
        rows.push(vec![
            "central_blob".to_string(),
            label.to_string(),
            format!("{kl:.4}"),
            format!("{cc:.4}"),
        ]);
    }
    emit_table(cfg, "eval_gaze", &["method", "split", "kl", "cc"], &rows)
}

fn cmd_train_driver(cfg: &ExperimentConfig, mode: IntegrationMode) -> anyhow::Result<()> {
    let records = load_records(cfg, Split::Train)?;
    if records.is_empty() {
        bail!("train split is empty");
    }
    let data = driver_samples(&records);
    let model_cfg = cfg.driver.model_config(mode);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6472_6976);
    let mut model = build_pilotnet(&model_cfg, &mut rng)?;
    train_driver(&mut model, &data, &cfg.driver.train_params(cfg.seed), &mut rng)?;
    let path = driver_ckpt(cfg, mode);
    save_driver(&model, &path)?;
    println!(
        "trained {mode:?} driver on {} frames; epoch MSE: {:?}; saved to {}",
        data.len(),
        model.training_history,
        path.display()
    );
    Ok(())
}

/// Mean absolute steering error (degrees) of a driver over records, with the
/// gaze map per record supplied by `gaze_for`.
fn driver_mae(
    model: &Model<ModelConfig>,
    records: &[DriveRecord],
    gaze_for: impl Fn(&DriveRecord) -> anyhow::Result<Option<GazeMap>> + Sync,
) -> anyhow::Result<f64> {
    let errs: Vec<f64> = records
        .par_iter()
        .map(|r| -> anyhow::Result<f64> {
            let gaze = gaze_for(r)?;
            let mut rng = ChaCha8Rng::seed_from_u64(r.step_index as u64);
            let pred = forward_driver(
                model,
                &frame_values(r),
                gaze.as_ref(),
                DropoutMode::Test,
                &mut rng,
            )?;
            Ok((pred - r.steering_deg).abs())
        })
        .collect::<anyhow::Result<_>>()?;
    if errs.is_empty() {
        bail!("empty evaluation split");
    }
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

fn cmd_eval_offline(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    let no_gaze = load_driver(&driver_ckpt(cfg, IntegrationMode::NoGaze))
        .context("missing no-gaze driver (train-driver --mode nogaze)")?;
    let input = load_driver(&driver_ckpt(cfg, IntegrationMode::GazeAsInput))
        .context("missing gaze-as-input driver (train-driver --mode gaze-input)")?;
    let dropout = load_driver(&driver_ckpt(cfg, IntegrationMode::GazeDropout))
        .context("missing gaze-dropout driver (train-driver --mode gaze-dropout)")?;
    let blob = load_driver(&driver_ckpt(cfg, IntegrationMode::CentralBlobDropout))
        .context("missing central-blob driver (train-driver --mode central-blob)")?;
    let predictor = load_gaze_predictor(&gaze_ckpt(cfg))
        .context("missing gaze predictor (run train-gaze first)")?;

    let seen = load_records(cfg, Split::SeenEval)?;
    let unseen = load_records(cfg, Split::UnseenEval)?;
    let real = |r: &DriveRecord| Ok(Some(oracle_map(r)));
    let est = |r: &DriveRecord| Ok(Some(predict_gaze(&predictor, &frame_values(r))?));
    let none = |_: &DriveRecord| Ok(None);

    let mut rows = Vec::new();
    type GazeFor<'a> = &'a (dyn Fn(&DriveRecord) -> anyhow::Result<Option<GazeMap>> + Sync);
    let methods: Vec<(&str, &Model<ModelConfig>, GazeFor)> = vec![
        ("No gaze", &no_gaze, &none),
        ("Real gaze as input", &input, &real),
        ("Estimated gaze as input", &input, &est),
        ("Real gaze dropout", &dropout, &real),
        ("Estimated gaze dropout", &dropout, &est),
        ("Central blob dropout", &blob, &none),
    ];
    for (name, model, gaze_for) in methods {
        let seen_mae = driver_mae(model, &seen, gaze_for)?;
        let unseen_mae = driver_mae(model, &unseen, gaze_for)?;
        rows.push(vec![
            name.to_string(),
            format!("{seen_mae:.4}"),
            format!("{unseen_mae:.4}"),
        ]);
    }
    emit_table(
        cfg,
        "eval_offline",
        &["method", "seen_mae_deg", "unseen_mae_deg"],
        &rows,
    )
}

/// Wrap a trained driver as a closed-loop policy.
pub struct DriverPolicy<'a> {
    pub model: &'a Model<ModelConfig>,
    pub seed: u64,
}

impl Policy for DriverPolicy<'_> {
    fn steer(&self, ctx: &PolicyContext<'_>) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        forward_driver(
            self.model,
            &ctx.frame.pixels,
            ctx.gaze,
            DropoutMode::Test,
            &mut rng,
        )
        .unwrap_or(0.0)
    }
}

fn cmd_eval_closedloop(cfg: &ExperimentConfig, gaze: GazeArg) -> anyhow::Result<()> {
    let manifest = load_manifest(cfg)?;
    let predictor = match gaze {
        GazeArg::Predictor => Some(
            load_gaze_predictor(&gaze_ckpt(cfg))
                .context("missing gaze predictor (run train-gaze first)")?,
        ),
        _ => None,
    };
    let modes = [
        ("No gaze", IntegrationMode::NoGaze),
        ("Gaze as input", IntegrationMode::GazeAsInput),
        ("Gaze dropout", IntegrationMode::GazeDropout),
    ];
    let mut models = BTreeMap::new();
    for (_, mode) in &modes {
        models.insert(
            *mode,
            load_driver(&driver_ckpt(cfg, *mode))
                .with_context(|| format!("missing driver checkpoint for {mode:?}"))?,
        );
    }
    // Fresh unseen tracks, disjoint from any dataset seed by construction.
    let track_seeds: Vec<u64> = (0..cfg.eval.episodes as u64)
        .map(|i| cfg.seed.wrapping_mul(1_000_003).wrapping_add(0xc10_5ed0_0000 + i))
        .collect();

    let predict_fn = predictor.as_ref().map(|p| {
        move |frame: &Frame| {
            predict_gaze(p, &frame.pixels).unwrap_or_else(|_| GazeMap::uniform(FRAME_W, FRAME_H))
        }
    });

    let mut rows = Vec::new();
    for (label, mode) in &modes {
        let model = &models[mode];
        for cars in [true, false] {
            let results: Vec<_> = track_seeds
                .par_iter()
                .map(|seed| {
                    let spec = generate_track(*seed, &TrackGenParams::default());
                    let scenario = Scenario::new(spec, cars, cfg.eval.episode_duration_s);
                    let policy = DriverPolicy { model, seed: *seed };
                    let source = match (mode, gaze, &predict_fn) {
                        (IntegrationMode::NoGaze, _, _) => GazeSource::NoneRequired,
                        (_, GazeArg::Central, _) => GazeSource::CentralBlob,
                        (_, GazeArg::Predictor, Some(f)) => GazeSource::Predictor(f),
                        _ => GazeSource::Oracle,
                    };
                    run_episode(&policy, &scenario, source, *seed)
                })
                .collect();
            let metrics = closed_loop_metrics(&results)?;
            let success = match metrics.overtake_success_rate {
                Some(rate) => format!("{:.1}", rate * 100.0),
                None => "N/A".to_string(),
            };
            rows.push(vec![
                label.to_string(),
                if cars { "with" } else { "without" }.to_string(),
                results.len().to_string(),
                format!("{:.4}", metrics.mean_distance_between_infractions_km),
                success,
            ]);
        }
    }
    let _ = manifest; // dataset only needed to confirm the workspace is set up
    emit_table(
        cfg,
        "eval_closedloop",
        &["method", "cars", "episodes", "km_between_infractions", "overtake_success_pct"],
        &rows,
    )
}

fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> anyhow::Result<()> {
    let mut buf = format!("P5\n{width} {height}\n255\n").into_bytes();
    buf.extend_from_slice(pixels);
    fs::write(path, buf)?;
    Ok(())
}

fn cmd_render(cfg: &ExperimentConfig, frames: usize) -> anyhow::Result<()> {
    let records = load_records(cfg, Split::UnseenEval)?;
    if records.is_empty() {
        bail!("unseen split is empty");
    }
    let predictor = load_gaze_predictor(&gaze_ckpt(cfg)).ok();
    let dir = cfg.out_dir.join("render");
    fs::create_dir_all(&dir)?;
    let stride = (records.len() / frames.max(1)).max(1);
    let mut written = 0;
    for (i, record) in records.iter().step_by(stride).take(frames).enumerate() {
        write_pgm(&dir.join(format!("frame_{i:02}.pgm")), FRAME_W, FRAME_H, &record.frame)?;

        let truth = oracle_map(record);
        let mut f = fs::File::create(dir.join(format!("gaze_oracle_{i:02}.pgm")))?;
        truth.write_pgm(&mut f)?;

        if let Some(p) = &predictor {
            let est = predict_gaze(p, &frame_values(record))?;
            let mut f = fs::File::create(dir.join(format!("gaze_estimated_{i:02}.pgm")))?;
            est.write_pgm(&mut f)?;
        }

        // Overlay: frame at half intensity plus the peak-normalized heatmap.
        let peak = truth.max();
        let overlay: Vec<u8> = record
            .frame
            .iter()
            .zip(truth.values.iter())
            .map(|(px, g)| {
                (0.5 * *px as f64 + 127.5 * g / peak).round().clamp(0.0, 255.0) as u8
            })
            .collect();
        write_pgm(&dir.join(format!("overlay_{i:02}.pgm")), FRAME_W, FRAME_H, &overlay)?;
        written += 1;
    }
    println!("wrote {written} frame sets to {}", dir.display());
    Ok(())
}
