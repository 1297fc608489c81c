//! Command-line surface: `synth`, `split`, `train`, `eval`, `predict`,
//! `report` and `stats`, all driven by one flat TOML config whose keys can be
//! overridden by flags of the same name (`n_segments` ↔ `--n-segments`).

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{self, Decoder};
use crate::manifest::{DatasetManifest, Split};
use crate::model::{MetadataScaling, ModelConfig, Variant};
use crate::split::{county_split, SplitParams};
use crate::synth::{self, SynthConfig, MANIFEST_FILE};
use crate::train::{self, AdamConfig, Checkpoint, LrSchedule, TrainConfig};

pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.toml";
pub const CHECKPOINT_FILE: &str = "checkpoint.ffc";

macro_rules! run_config {
    (
        values { $( $(#[doc = $vdoc:literal])* $v:ident : $vty:ty = $vdef:expr, )* }
        paths { $( $(#[doc = $pdoc:literal])* $p:ident, )* }
    ) => {
        /// Every knob of a run. Unknown keys are rejected and `seed` is
        /// required.
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        #[serde(deny_unknown_fields, default)]
        pub struct RunConfig {
            #[serde(skip_serializing_if = "Option::is_none")]
            pub seed: Option<u64>,
            $( $(#[doc = $vdoc])* pub $v: $vty, )*
            $(
                $(#[doc = $pdoc])*
                #[serde(skip_serializing_if = "Option::is_none")]
                pub $p: Option<PathBuf>,
            )*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                RunConfig {
                    seed: None,
                    $( $v: $vdef, )*
                    $( $p: None, )*
                }
            }
        }

        /// Flag overrides, one per config key.
        #[derive(Debug, Clone, Default, clap::Args)]
        pub struct Overrides {
            /// Seed for every random stream (required somewhere).
            #[arg(long)]
            pub seed: Option<u64>,
            $( $(#[doc = $vdoc])* #[arg(long)] pub $v: Option<$vty>, )*
            $( $(#[doc = $pdoc])* #[arg(long)] pub $p: Option<PathBuf>, )*
        }

        impl RunConfig {
            pub fn apply(&mut self, o: &Overrides) {
                if o.seed.is_some() {
                    self.seed = o.seed;
                }
                $( if let Some(v) = &o.$v { self.$v = v.clone(); } )*
                $( if o.$p.is_some() { self.$p = o.$p.clone(); } )*
            }

            fn absolutize_paths(&mut self) -> Result<()> {
                $( if let Some(p) = &self.$p { self.$p = Some(absolute(p)?); } )*
                Ok(())
            }
        }
    };
}

run_config! {
    values {
        /// Number of synthetic segments.
        n_segments: usize = SynthConfig::default().n_segments,
        /// Counties per side of the synthetic grid.
        county_grid: u32 = SynthConfig::default().county_grid,
        /// Standard deviation of label noise, mph.
        noise_mph_sd: f64 = SynthConfig::default().noise_mph_sd,
        /// Side of the rendered chips, pixels.
        chip_px: u32 = SynthConfig::default().chip_px,
        /// Target share of segments in whole test counties.
        test_fraction: f64 = SplitParams::default().test_fraction_target,
        /// Share of the non-test pool sampled into validation.
        val_fraction: f64 = SplitParams::default().val_fraction_of_train,
        /// combined, imagery_only or features_only.
        variant: Variant = Variant::Combined,
        backbone_dim: usize = ModelConfig::new(Variant::Combined, 0).backbone_dim,
        hidden_dim: usize = ModelConfig::new(Variant::Combined, 0).hidden_dim,
        /// Expected chip side, pixels.
        input_px: usize = ModelConfig::new(Variant::Combined, 0).input_px,
        freeze_backbone: bool = false,
        /// min_max or raw.
        metadata_scaling: MetadataScaling = MetadataScaling::MinMax,
        batch_size: usize = TrainConfig::default().batch_size,
        epochs: usize = TrainConfig::default().epochs,
        lr0: f64 = LrSchedule::default().lr0,
        decay_factor: f64 = LrSchedule::default().decay_factor,
        decay_epochs: f64 = LrSchedule::default().decay_epochs,
        decay_staircase: bool = LrSchedule::default().staircase,
        l2_scale: f64 = TrainConfig::default().l2_scale,
        adam_beta1: f64 = AdamConfig::default().beta1,
        adam_beta2: f64 = AdamConfig::default().beta2,
        adam_epsilon: f64 = AdamConfig::default().epsilon,
        /// argmax or expected.
        decoder: Decoder = Decoder::Argmax,
        /// Tolerance of the within-k metric, mph.
        within_k: u32 = 5,
        /// Posted-limit gaps strictly above this are flagged, mph.
        discrepancy_threshold: u32 = 10,
        /// Which split `predict` covers: all, train, val or test.
        predict_split: String = "all".to_string(),
    }
    paths {
        /// Input manifest (JSONL).
        manifest,
        /// Directory this run writes into.
        out_dir,
        /// Checkpoint for `predict`, or an extra one for `eval`.
        checkpoint,
        checkpoint_combined,
        checkpoint_imagery_only,
        checkpoint_features_only,
        /// Predictions CSV for `report`.
        predictions,
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::Config("seed is required (set it in the config or pass --seed)".into()))
    }

    pub fn synth_config(&self) -> Result<SynthConfig> {
        Ok(SynthConfig {
            n_segments: self.n_segments,
            county_grid: self.county_grid,
            noise_mph_sd: self.noise_mph_sd,
            master_seed: self.seed()?,
            chip_px: self.chip_px,
        })
    }

    pub fn split_params(&self) -> Result<SplitParams> {
        Ok(SplitParams {
            test_fraction_target: self.test_fraction,
            val_fraction_of_train: self.val_fraction,
            seed: self.seed()?,
        })
    }

    /// Model configuration with `classes` left for training to fill.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            variant: self.variant,
            backbone_dim: self.backbone_dim,
            hidden_dim: self.hidden_dim,
            classes: 0,
            input_px: self.input_px,
            freeze_backbone: self.freeze_backbone,
            metadata_scaling: self.metadata_scaling,
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            batch_size: self.batch_size,
            epochs: self.epochs,
            schedule: LrSchedule {
                lr0: self.lr0,
                decay_factor: self.decay_factor,
                decay_epochs: self.decay_epochs,
                staircase: self.decay_staircase,
            },
            l2_scale: self.l2_scale,
            adam: AdamConfig {
                beta1: self.adam_beta1,
                beta2: self.adam_beta2,
                epsilon: self.adam_epsilon,
            },
            seed: self.seed()?,
        })
    }

    fn require(&self, path: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
        path.clone()
            .ok_or_else(|| Error::Config(format!("{key} is required for this command")))
    }

    fn predict_split(&self) -> Result<Option<Split>> {
        match self.predict_split.as_str() {
            "all" => Ok(None),
            s => s.parse().map(Some),
        }
    }
}

fn absolute(p: &Path) -> Result<PathBuf> {
    if p.is_absolute() {
        return Ok(p.to_path_buf());
    }
    let cwd = std::env::current_dir().map_err(|e| Error::io(".", e))?;
    Ok(cwd.join(p))
}

#[derive(Debug, Parser)]
#[command(name = "freeflow", version, about = "Free-flow speed estimation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct CommandArgs {
    /// TOML run config; flags override its keys.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic roadscape: chips plus manifest.
    Synth(CommandArgs),
    /// Assign county-disjoint train/val/test splits.
    Split(CommandArgs),
    /// Train one model variant.
    Train(CommandArgs),
    /// Compare variant checkpoints on the test split.
    Eval(CommandArgs),
    /// Predict free-flow speeds with one checkpoint.
    Predict(CommandArgs),
    /// Flag predictions far from the posted limit.
    Report(CommandArgs),
    /// Per-feature label histograms.
    Stats(CommandArgs),
}

/// Runs the CLI on `argv` (program name first) and returns the exit code:
/// 0 on success, 1 on domain or validation errors, 2 on usage errors.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn resolve(args: &CommandArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.apply(&args.overrides);
    cfg.seed()?;
    cfg.absolutize_paths()?;
    Ok(cfg)
}

/// Creates the run directory, refusing one that holds any of the inputs,
/// and writes the resolved config into it.
fn start_run(cfg: &RunConfig, inputs: &[&Path]) -> Result<PathBuf> {
    let out = cfg.require(&cfg.out_dir, "out_dir")?;
    for input in inputs {
        if !input.exists() {
            return Err(Error::domain(format!("input {} does not exist", input.display())));
        }
    }
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let out_canon = out.canonicalize().map_err(|e| Error::io(&out, e))?;
    for input in inputs {
        let parent = input
            .canonicalize()
            .map_err(|e| Error::io(*input, e))?
            .parent()
            .map(Path::to_path_buf);
        if parent.as_deref() == Some(out_canon.as_path()) {
            return Err(Error::domain(format!(
                "out_dir {} holds input {}; choose a fresh run directory",
                out.display(),
                input.display()
            )));
        }
    }
    write_file(&out.join(RESOLVED_CONFIG_FILE), cfg.to_toml()?.as_bytes())?;
    Ok(out)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth_cmd(&resolve(&a)?),
        Command::Split(a) => split_cmd(&resolve(&a)?),
        Command::Train(a) => train_cmd(&resolve(&a)?),
        Command::Eval(a) => eval_cmd(&resolve(&a)?),
        Command::Predict(a) => predict_cmd(&resolve(&a)?),
        Command::Report(a) => report_cmd(&resolve(&a)?),
        Command::Stats(a) => stats_cmd(&resolve(&a)?),
    }
}

fn synth_cmd(cfg: &RunConfig) -> Result<()> {
    let config = cfg.synth_config()?;
    config.validate()?;
    let out = start_run(cfg, &[])?;
    let manifest = synth::generate_dataset(&config, &out)?;
    info!("wrote {} segments to {}", manifest.len(), out.join(MANIFEST_FILE).display());
    Ok(())
}

fn split_cmd(cfg: &RunConfig) -> Result<()> {
    let manifest_path = cfg.require(&cfg.manifest, "manifest")?;
    let params = cfg.split_params()?;
    let out = start_run(cfg, &[&manifest_path])?;
    let manifest = DatasetManifest::read(&manifest_path)?;
    let segments: Vec<_> = manifest.segments().cloned().collect();
    let assignment = county_split(&segments, params)?;
    let split = manifest.with_splits(&assignment)?.with_absolute_chip_paths()?;
    split.write(out.join(MANIFEST_FILE))?;
    info!(
        "train {} / val {} / test {} (test share {:.4}, val share of pool {:.4})",
        split.count(Split::Train),
        split.count(Split::Val),
        split.count(Split::Test),
        assignment.test_share(),
        assignment.val_share_of_pool()
    );
    Ok(())
}

fn train_cmd(cfg: &RunConfig) -> Result<()> {
    let manifest_path = cfg.require(&cfg.manifest, "manifest")?;
    let model = cfg.model_config();
    let config = cfg.train_config()?;
    config.validate()?;
    let out = start_run(cfg, &[&manifest_path])?;
    let manifest = DatasetManifest::read(&manifest_path)?;
    let outcome = train::train(&manifest, &model, &config)?;
    outcome.checkpoint.save(out.join(CHECKPOINT_FILE))?;
    let mut log = Vec::new();
    train::write_log_csv(&outcome.log, &mut log).map_err(|e| Error::io(&out, e))?;
    write_file(&out.join("train_log.csv"), &log)?;
    info!(
        "kept epoch {} (val within-5 {:.4}); checkpoint at {}",
        outcome.checkpoint.epoch + 1,
        outcome.checkpoint.val_within5,
        out.join(CHECKPOINT_FILE).display()
    );
    Ok(())
}

fn eval_cmd(cfg: &RunConfig) -> Result<()> {
    let manifest_path = cfg.require(&cfg.manifest, "manifest")?;
    let mut slots: Vec<(Option<Variant>, PathBuf)> = Vec::new();
    for (variant, path) in [
        (Variant::ImageryOnly, &cfg.checkpoint_imagery_only),
        (Variant::FeaturesOnly, &cfg.checkpoint_features_only),
        (Variant::Combined, &cfg.checkpoint_combined),
    ] {
        if let Some(p) = path {
            slots.push((Some(variant), p.clone()));
        }
    }
    if let Some(p) = &cfg.checkpoint {
        slots.push((None, p.clone()));
    }
    if slots.is_empty() {
        return Err(Error::Config(
            "eval needs at least one of checkpoint, checkpoint_combined, checkpoint_imagery_only, checkpoint_features_only".into(),
        ));
    }
    let mut inputs: Vec<&Path> = vec![&manifest_path];
    inputs.extend(slots.iter().map(|(_, p)| p.as_path()));
    let out = start_run(cfg, &inputs)?;
    let manifest = DatasetManifest::read(&manifest_path)?;
    let mut checkpoints = Vec::new();
    for (slot, path) in &slots {
        let c = Checkpoint::load(path)?;
        let variant = slot.unwrap_or(c.model.variant);
        if variant != c.model.variant {
            warn!("{} holds a {} model but is listed as {variant}", path.display(), c.model.variant);
        }
        checkpoints.push((variant, c));
    }
    let refs: Vec<(Variant, &Checkpoint)> = checkpoints.iter().map(|(v, c)| (*v, c)).collect();
    let table = eval::compare_variants(&manifest, &refs, cfg.decoder)?;
    write_file(&out.join("comparison.csv"), table.to_csv().as_bytes())?;
    for line in table.to_string().lines() {
        info!("{line}");
    }
    Ok(())
}

fn predict_cmd(cfg: &RunConfig) -> Result<()> {
    let manifest_path = cfg.require(&cfg.manifest, "manifest")?;
    let checkpoint_path = cfg.require(&cfg.checkpoint, "checkpoint")?;
    let split = cfg.predict_split()?;
    let out = start_run(cfg, &[&manifest_path, &checkpoint_path])?;
    let manifest = DatasetManifest::read(&manifest_path)?;
    let checkpoint = Checkpoint::load(&checkpoint_path)?;
    let (records, failed) = eval::predict_manifest(&checkpoint, &manifest, split, cfg.decoder);
    let mut csv = Vec::new();
    eval::write_predictions_csv(&records, &mut csv).map_err(|e| Error::io(&out, e))?;
    write_file(&out.join("predictions.csv"), &csv)?;
    if !failed.is_empty() {
        let mut text = String::from("id,error\n");
        for (id, e) in &failed {
            warn!("{id}: {e}");
            text.push_str(&format!("{id},\"{}\"\n", e.to_string().replace('"', "'")));
        }
        write_file(&out.join("prediction_errors.csv"), text.as_bytes())?;
    }
    if records.is_empty() && !failed.is_empty() {
        return Err(Error::domain(format!("all {} predictions failed", failed.len())));
    }
    info!("{} predictions, {} failures", records.len(), failed.len());
    if !records.is_empty() {
        info!(
            "within-{} accuracy {:.4}",
            cfg.within_k,
            eval::within_k_accuracy(&records, cfg.within_k)?
        );
    }
    Ok(())
}

fn report_cmd(cfg: &RunConfig) -> Result<()> {
    let manifest_path = cfg.require(&cfg.manifest, "manifest")?;
    let predictions_path = cfg.require(&cfg.predictions, "predictions")?;
    let out = start_run(cfg, &[&manifest_path, &predictions_path])?;
    let manifest = DatasetManifest::read(&manifest_path)?;
    let text = fs::read_to_string(&predictions_path).map_err(|e| Error::io(&predictions_path, e))?;
    let records = eval::read_predictions_csv(&text)?;
    let flagged = eval::discrepancy_report(&records, cfg.discrepancy_threshold);
    let geojson = eval::discrepancies_geojson(&flagged, &manifest)?;
    let body = serde_json::to_string_pretty(&geojson).map_err(|source| Error::Json {
        context: "discrepancy GeoJSON".into(),
        source,
    })?;
    write_file(&out.join("discrepancies.geojson"), body.as_bytes())?;
    let mut csv = String::from("id,predicted_mph,posted_limit_mph,delta\n");
    for d in &flagged {
        csv.push_str(&format!("{},{},{},{}\n", d.id, d.predicted_mph, d.posted_limit_mph, d.delta));
    }
    write_file(&out.join("discrepancies.csv"), csv.as_bytes())?;
    let mut summary = format!("metric,value\nn,{}\nflagged,{}\n", records.len(), flagged.len());
    if !records.is_empty() {
        let acc = eval::within_k_accuracy(&records, cfg.within_k)?;
        summary.push_str(&format!("within_{},{acc:.6}\n", cfg.within_k));
    }
    write_file(&out.join("summary.csv"), summary.as_bytes())?;
    info!(
        "{} of {} segments differ from the posted limit by more than {} mph",
        flagged.len(),
        records.len(),
        cfg.discrepancy_threshold
    );
    Ok(())
}

fn stats_cmd(cfg: &RunConfig) -> Result<()> {
    let manifest_path = cfg.require(&cfg.manifest, "manifest")?;
    let out = start_run(cfg, &[&manifest_path])?;
    let manifest = DatasetManifest::read(&manifest_path)?;
    write_file(&out.join("histograms.csv"), eval::histograms_csv(&manifest).as_bytes())?;
    info!("histograms of {} segments written", manifest.len());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_toml("seed = 1\nepochz = 3\n").unwrap_err();
        assert!(err.to_string().contains("epochz"), "{err}");
    }

    #[test]
    fn missing_seed_is_an_error() {
        let cfg = RunConfig::from_toml("epochs = 3\n").unwrap();
        assert!(cfg.seed().is_err());
    }

    #[test]
    fn resolved_config_roundtrips() {
        let mut cfg = RunConfig::from_toml("seed = 7\nvariant = \"features_only\"\nmanifest = \"/a/m.jsonl\"\n").unwrap();
        cfg.apply(&Overrides {
            epochs: Some(3),
            decoder: Some(Decoder::Expected),
            ..Overrides::default()
        });
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.variant, Variant::FeaturesOnly);
    }

    #[test]
    fn defaults_match_library_defaults() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.train_config_unseeded(), TrainConfig::default());
        let mut m = ModelConfig::new(Variant::Combined, 0);
        m.classes = 0;
        assert_eq!(cfg.model_config(), m);
    }

    impl RunConfig {
        fn train_config_unseeded(&self) -> TrainConfig {
            let mut c = self.clone();
            c.seed = Some(0);
            c.train_config().unwrap()
        }
    }

    #[test]
    fn exit_codes() {
        assert_eq!(run(["freeflow", "frobnicate"]), 2);
        assert_eq!(run(["freeflow", "stats", "--epochs", "many"]), 2);
        assert_eq!(run(["freeflow", "stats", "--out-dir", "/nonexistent"]), 1);
    }
}
