//! The `pmw` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{
    self, dataset_stats, ingest, stratified_split, synth, SampleManifest, Source, Split, SynthConfig, TensorDataset,
    TypeTag,
};
use crate::error::{Error, Result};
use crate::eval::{emit_report, EvaluationReport, ReportFormat};
use crate::models::{self, Arch, ModelGraph, SmallConfig, BACKBONE};
use crate::training::{self, Task, TrainConfig, TrainState, TransferConfig};

pub const SEED_ENV: &str = "PMW_SEED";

#[derive(Debug, Parser)]
#[command(name = "pmw", version, about = "Portuguese man-of-war image classification pipeline")]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build, split or summarize a manifest.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Train a network on a split manifest.
    Train(TrainArgs),
    /// Evaluate a finished run on one split.
    Eval(EvalArgs),
    /// Score images with a trained network.
    Predict(PredictArgs),
    /// Pretrain on a source task, then fine-tune a frozen backbone on a target task.
    Transfer(TransferArgs),
    /// Generate the synthetic image set.
    Synth(SynthArgs),
}

#[derive(Debug, Subcommand)]
pub enum DatasetCommand {
    Build(BuildArgs),
    Split(SplitArgs),
    Stats(StatsArgs),
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// Image directory as TYPE:SOURCE:PATH, e.g. ship:bing:images/ship. Repeatable.
    #[arg(long = "dir", value_name = "TYPE:SOURCE:PATH")]
    pub dirs: Vec<String>,
    /// iNaturalist CSV export. Repeatable.
    #[arg(long = "inat", value_name = "CSV")]
    pub inat: Vec<PathBuf>,
    /// taxon,class,type_tag mapping for the iNaturalist exports.
    #[arg(long)]
    pub taxon_map: Option<PathBuf>,
    /// Content hashes to drop, one per line.
    #[arg(long)]
    pub exclude: Option<PathBuf>,
    /// Manifest file to write.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Overwrite existing output.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Manifest file (JSON lines).
    #[arg(long, short)]
    pub manifest: PathBuf,
    /// Split manifest to write.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Train, validation and test fractions.
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.6, 0.2, 0.2])]
    pub ratios: Vec<f64>,
    /// Seed; falls back to $PMW_SEED.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overwrite existing output.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Manifest file (JSON lines).
    #[arg(long, short)]
    pub manifest: PathBuf,
    /// Print JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

/// Options shared by the commands that build and train networks.
#[derive(Debug, Args)]
pub struct RunOptions {
    /// JSON run configuration; flags and --set take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one configuration key, e.g. --set train.batch_size=16.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// vgg_s, resnet_s, inception_s, vgg16, resnet50 or inception_v3.
    #[arg(long)]
    pub arch: Option<Arch>,
    /// Seed; falls back to $PMW_SEED, then the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Manifest file (JSON lines).
    #[arg(long, short)]
    pub manifest: PathBuf,
    /// Run directory to create.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Backbone weight file; its parameters are loaded and frozen.
    #[arg(long)]
    pub pretrained: Option<PathBuf>,
    /// Continue from the checkpoint in the run directory.
    #[arg(long)]
    pub resume: bool,
    /// Overwrite existing output.
    #[arg(long)]
    pub force: bool,
    #[command(flatten)]
    pub run: RunOptions,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run directory produced by `pmw train`.
    #[arg(long)]
    pub run: PathBuf,
    /// Manifest to evaluate; defaults to the one used for training.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// train, val or test.
    #[arg(long, default_value = "test")]
    pub split: Split,
    /// json, csv or text-table.
    #[arg(long, default_value = "text-table")]
    pub format: ReportFormat,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Weight file; `config.json` beside it supplies the architecture.
    #[arg(long)]
    pub weights: PathBuf,
    /// Image directory or manifest (.jsonl).
    #[arg(long)]
    pub input: PathBuf,
    /// Probabilities at or above this are labeled PMW.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Output CSV; stdout when absent.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Overwrite existing output.
    #[arg(long)]
    pub force: bool,
    #[command(flatten)]
    pub run: RunOptions,
}

#[derive(Debug, Args)]
pub struct TransferArgs {
    /// Split manifest of the source task.
    #[arg(long)]
    pub source: PathBuf,
    /// Split manifest of the target task.
    #[arg(long)]
    pub target: PathBuf,
    /// Output directory.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Overwrite existing output.
    #[arg(long)]
    pub force: bool,
    #[command(flatten)]
    pub run: RunOptions,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Images per class.
    #[arg(long, default_value_t = 600)]
    pub n_per_class: usize,
    /// Image side in pixels.
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    /// Seed; falls back to $PMW_SEED.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also assign 60/20/20 splits with the same seed.
    #[arg(long)]
    pub split: bool,
    /// Overwrite existing output.
    #[arg(long)]
    pub force: bool,
}

/// Everything that determines a run. Written to `config.json` in every run
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub arch: Arch,
    pub model: SmallConfig,
    pub train: TrainConfig,
    /// Images are resized to `[height, width]`.
    pub image_size: [usize; 2],
    pub threshold: f64,
    /// Manifest used for training, when known.
    pub manifest: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            arch: Arch::ResnetS,
            model: SmallConfig::default(),
            train: TrainConfig::default(),
            image_size: [32, 32],
            threshold: 0.5,
            manifest: None,
        }
    }
}

impl RunConfig {
    pub fn input_shape(&self) -> [usize; 3] {
        [3, self.image_size[0], self.image_size[1]]
    }

    pub fn size(&self) -> (usize, usize) {
        (self.image_size[0], self.image_size[1])
    }
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Applies `key.path=value`; the value is parsed as JSON, or taken as a
/// string when it is not valid JSON.
pub fn apply_override(config: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not KEY=VALUE")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut slot = config;
    for part in key.split('.') {
        let obj = slot
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{part}` is not inside an object")))?;
        slot = obj.entry(part.to_string()).or_insert(Value::Null);
    }
    *slot = value;
    Ok(())
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{SEED_ENV}=`{s}` is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

/// Defaults, then the config file, then `--set` overrides, then flags.
pub fn resolve_config(opts: &RunOptions, base: Option<RunConfig>) -> Result<RunConfig> {
    let mut value = serde_json::to_value(base.unwrap_or_default())?;
    if let Some(path) = &opts.config {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: Value = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        merge(&mut value, file);
    }
    for o in &opts.overrides {
        apply_override(&mut value, o)?;
    }
    let mut cfg: RunConfig = serde_json::from_value(value).map_err(|e| Error::Config(format!("configuration: {e}")))?;
    if let Some(arch) = opts.arch {
        cfg.arch = arch;
    }
    if let Some(seed) = opts.seed.or(env_seed()?) {
        cfg.train.seed = seed;
    }
    cfg.train.validate()?;
    cfg.model.head.validate()?;
    Ok(cfg)
}

/// Creates `dir`, refusing to reuse a non-empty one without `force`.
fn prepare_dir(dir: &Path, force: bool) -> Result<()> {
    let non_empty = fs::read_dir(dir).map(|mut d| d.next().is_some()).unwrap_or(false);
    if non_empty {
        if !force {
            return Err(Error::Config(format!(
                "{} already exists and is not empty; pass --force to overwrite",
                dir.display()
            )));
        }
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn prepare_file(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::Config(format!("{} already exists; pass --force to overwrite", path.display())));
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(())
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn manifest_base(path: &Path) -> &Path {
    path.parent().unwrap_or(Path::new("."))
}

fn load_split(manifest: &SampleManifest, base: &Path, split: Split, size: (usize, usize)) -> Result<TensorDataset> {
    let ds = TensorDataset::from_manifest(manifest, base, Some(split), size)?;
    if ds.is_empty() {
        return Err(Error::Data(format!("manifest has no `{split}` records; run `pmw dataset split` first")));
    }
    Ok(ds)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Dataset(DatasetCommand::Build(a)) => cmd_build(a),
        Command::Dataset(DatasetCommand::Split(a)) => cmd_split(a),
        Command::Dataset(DatasetCommand::Stats(a)) => cmd_stats(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Transfer(a) => cmd_transfer(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

fn cmd_build(a: BuildArgs) -> Result<()> {
    prepare_file(&a.out, a.force)?;
    let mut manifest = SampleManifest::default();
    for spec in &a.dirs {
        let mut parts = spec.splitn(3, ':');
        let (Some(t), Some(s), Some(p)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::Config(format!("--dir `{spec}` is not TYPE:SOURCE:PATH")));
        };
        let (t, s): (TypeTag, Source) = (t.parse()?, s.parse()?);
        let (fragment, summary) = ingest::ingest_directory(Path::new(p), t.class(), t, s)?;
        info!("{p}: {} images, {} skipped", summary.ingested, summary.skipped.len());
        manifest.notes.push(format!("directory {p} as {t}/{s}: {} images, {} skipped", summary.ingested, summary.skipped.len()));
        manifest.extend(fragment);
    }
    let map = match &a.taxon_map {
        Some(p) => data::TaxonMap::from_csv(p)?,
        None => data::TaxonMap::default(),
    };
    for csv in &a.inat {
        let (fragment, summary) = ingest::ingest_inaturalist_csv(csv, &map)?;
        manifest.notes.push(format!("{}: {} rows, {} skipped", csv.display(), summary.ingested, summary.skipped.len()));
        manifest.extend(fragment);
    }
    let (mut manifest, removed) = data::dedupe(&manifest);
    manifest.notes.push(format!("dedupe removed {removed}"));
    if let Some(ex) = &a.exclude {
        let (m, n) = data::apply_exclude(&manifest, &data::read_exclude_list(ex)?);
        manifest = m;
        manifest.notes.push(format!("exclude list removed {n}"));
    }
    manifest.write(&a.out)?;
    println!("{} records written to {}", manifest.len(), a.out.display());
    Ok(())
}

fn cmd_split(a: SplitArgs) -> Result<()> {
    prepare_file(&a.out, a.force)?;
    let seed = a.seed.or(env_seed()?).unwrap_or(0);
    let m = SampleManifest::read(&a.manifest)?;
    let ratios = [a.ratios[0], a.ratios[1], a.ratios[2]];
    let (mut out, summary) = stratified_split(&m, ratios, seed)?;
    if manifest_base(&a.manifest) != manifest_base(&a.out) {
        let base = manifest_base(&a.manifest);
        for r in &mut out.records {
            r.image_path = data::record::resolve_path(base, &r.image_path).to_string_lossy().into_owned();
        }
    }
    out.write(&a.out)?;
    println!("train {} / val {} / test {}", summary.totals[0], summary.totals[1], summary.totals[2]);
    Ok(())
}

fn cmd_stats(a: StatsArgs) -> Result<()> {
    let stats = dataset_stats(&SampleManifest::read(&a.manifest)?);
    if a.json {
        println!("{}", serde_json::to_string_pretty(&stats)?);
    } else {
        print!("{}", stats.render_table());
    }
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    prepare_dir(&a.out, a.force)?;
    let seed = a.seed.or(env_seed()?).unwrap_or(0);
    let cfg = SynthConfig {
        n_per_class: a.n_per_class,
        size: a.size,
        seed,
    };
    let mut manifest = synth::write_synth(&a.out, &cfg)?;
    if a.split {
        manifest = stratified_split(&manifest, data::DEFAULT_RATIOS, seed)?.0;
        manifest.write(&a.out.join(synth::MANIFEST_NAME))?;
    }
    println!("{} images written to {}", manifest.len(), a.out.display());
    Ok(())
}

/// Builds the network for `cfg`, optionally loading and freezing a backbone.
fn build_model(cfg: &mut RunConfig, pretrained: Option<&Path>) -> Result<ModelGraph<f32>> {
    let mut model = cfg.arch.build(cfg.input_shape(), &cfg.model, cfg.train.seed)?;
    if let Some(p) = pretrained {
        let report = models::load_weights(p, &mut model, true)?;
        info!("loaded {} tensors from {} ({} missing)", report.loaded.len(), p.display(), report.missing.len());
        if report.loaded.is_empty() {
            return Err(Error::Data(format!("{} shares no parameters with {}", p.display(), cfg.arch)));
        }
        cfg.train.freeze_selector.get_or_insert_with(|| BACKBONE.to_string());
    }
    Ok(model)
}

fn write_run_files(dir: &Path, cfg: &RunConfig, model: &ModelGraph<f32>, history: &training::RunHistory, report: &EvaluationReport) -> Result<()> {
    write(&dir.join("config.json"), serde_json::to_string_pretty(cfg)? + "\n")?;
    write(&dir.join("history.jsonl"), history.to_jsonl()?)?;
    models::save_weights(model, &dir.join("weights.bin"))?;
    write(&dir.join("report.json"), emit_report(std::slice::from_ref(report), ReportFormat::Json)?)
}

fn probabilities(model: &ModelGraph<f32>, ds: &TensorDataset, batch: usize) -> Result<Vec<f64>> {
    Ok(training::predict(model, ds, batch)?.into_iter().map(f64::from).collect())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let ckpt = a.out.join("checkpoint");
    let (mut cfg, state) = if a.resume {
        let text = fs::read_to_string(a.out.join("config.json")).map_err(|e| Error::io(a.out.join("config.json"), e))?;
        let saved: RunConfig = serde_json::from_str(&text)?;
        let mut cfg = saved.clone();
        cfg.train.freeze_selector = None;
        let template = build_model(&mut cfg, None)?;
        let state = training::resume(&ckpt, template)?;
        (saved, state)
    } else {
        prepare_dir(&a.out, a.force)?;
        let mut cfg = resolve_config(&a.run, None)?;
        cfg.manifest = Some(a.manifest.clone());
        let model = build_model(&mut cfg, a.pretrained.as_deref())?;
        write(&a.out.join("config.json"), serde_json::to_string_pretty(&cfg)? + "\n")?;
        let state = TrainState::new(model, cfg.train.clone())?;
        (cfg, state)
    };
    if let Some(raw) = &a.run.config {
        fs::copy(raw, a.out.join("config.input.json")).map_err(|e| Error::io(raw, e))?;
    }
    info!("resolved configuration: {}", serde_json::to_string(&cfg)?);
    let manifest = SampleManifest::read(&a.manifest)?;
    let base = manifest_base(&a.manifest);
    let train = load_split(&manifest, base, Split::Train, cfg.size())?;
    let val = load_split(&manifest, base, Split::Val, cfg.size())?;
    info!("{} training and {} validation images", train.len(), val.len());

    let mut state = state;
    state.run(&train, &val, |s| {
        if let Some(e) = s.history.epochs.last() {
            info!("epoch {}: train loss {:.4}, val loss {:.4}, val accuracy {:.4}", e.epoch, e.train_loss, e.val_loss, e.val_accuracy);
        }
        training::checkpoint(s, &ckpt)
    })?;
    let (model, history) = state.finish();

    let eval_split = if manifest.in_split(Split::Test).next().is_some() { Split::Test } else { Split::Val };
    let eval = load_split(&manifest, base, eval_split, cfg.size())?;
    let probs = probabilities(&model, &eval, cfg.train.batch_size)?;
    let report = EvaluationReport::build(cfg.arch.name(), eval_split.name(), &probs, &eval.records, cfg.threshold)?;
    cfg.manifest = Some(a.manifest.clone());
    write_run_files(&a.out, &cfg, &model, &history, &report)?;
    println!(
        "best epoch {} of {}; {eval_split} accuracy {:.4}",
        history.best_epoch, history.stopped_epoch, report.metrics.accuracy.value
    );
    Ok(())
}

fn read_run_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(Error::from)
}

fn load_trained(weights: &Path, cfg: &RunConfig) -> Result<ModelGraph<f32>> {
    let mut model = cfg.arch.build(cfg.input_shape(), &cfg.model, 0)?;
    models::load_weights(weights, &mut model, false)?;
    Ok(model)
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let cfg = read_run_config(&a.run.join("config.json"))?;
    let manifest_path = a
        .manifest
        .clone()
        .or(cfg.manifest.clone())
        .ok_or_else(|| Error::Config("run has no recorded manifest; pass --manifest".into()))?;
    let model = load_trained(&a.run.join("weights.bin"), &cfg)?;
    let manifest = SampleManifest::read(&manifest_path)?;
    let ds = load_split(&manifest, manifest_base(&manifest_path), a.split, cfg.size())?;
    let probs = probabilities(&model, &ds, cfg.train.batch_size)?;
    let report = EvaluationReport::build(cfg.arch.name(), a.split.name(), &probs, &ds.records, cfg.threshold)?;
    let reports = std::slice::from_ref(&report);
    write(&a.run.join("report.json"), emit_report(reports, ReportFormat::Json)?)?;
    write(&a.run.join("report.csv"), emit_report(reports, ReportFormat::Csv)?)?;
    write(&a.run.join("report.txt"), emit_report(reports, ReportFormat::TextTable)?)?;
    std::io::stdout()
        .write_all(&emit_report(reports, a.format)?)
        .map_err(|e| Error::io("stdout", e))
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    let beside = a.weights.with_file_name("config.json");
    let base_cfg = if beside.exists() { Some(read_run_config(&beside)?) } else { None };
    if base_cfg.is_none() && a.run.arch.is_none() && a.run.config.is_none() {
        return Err(Error::Config(format!("no config.json beside {}; pass --arch", a.weights.display())));
    }
    let cfg = resolve_config(&a.run, base_cfg)?;
    let model = load_trained(&a.weights, &cfg)?;
    let ds = if a.input.is_dir() {
        let mut images = Vec::new();
        let mut records = Vec::new();
        let (fragment, summary) = ingest::ingest_directory(&a.input, data::Class::NotPmw, TypeTag::Random, Source::Other)?;
        for (path, reason) in &summary.skipped {
            warn!("skipping {}: {reason}", path.display());
        }
        for r in fragment.records {
            images.push(data::load_image(Path::new(&r.image_path), cfg.size())?);
            records.push(r);
        }
        let labels = vec![0.0; images.len()];
        TensorDataset { images, labels, records }
    } else {
        let m = SampleManifest::read(&a.input)?;
        TensorDataset::from_manifest(&m, manifest_base(&a.input), None, cfg.size())?
    };
    let probs = probabilities(&model, &ds, cfg.train.batch_size)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Data(format!("writing CSV: {e}"));
    w.write_record(["path", "probability", "label"]).map_err(csv_err)?;
    for (r, p) in ds.records.iter().zip(&probs) {
        let label = if crate::eval::is_positive(*p, a.threshold) { "PMW" } else { "not-PMW" };
        w.write_record([r.image_path.as_str(), &format!("{p:.6}"), label]).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(format!("writing CSV: {e}")))?;
    match &a.out {
        Some(path) => {
            prepare_file(path, a.force)?;
            write(path, bytes)
        }
        None => std::io::stdout().write_all(&bytes).map_err(|e| Error::io("stdout", e)),
    }
}

fn cmd_transfer(a: TransferArgs) -> Result<()> {
    prepare_dir(&a.out, a.force)?;
    let cfg = resolve_config(&a.run, None)?;
    write(&a.out.join("config.json"), serde_json::to_string_pretty(&cfg)? + "\n")?;
    let load = |path: &Path| -> Result<[TensorDataset; 3]> {
        let m = SampleManifest::read(path)?;
        let base = manifest_base(path);
        Ok([
            load_split(&m, base, Split::Train, cfg.size())?,
            load_split(&m, base, Split::Val, cfg.size())?,
            load_split(&m, base, Split::Test, cfg.size())?,
        ])
    };
    let [s_train, s_val, s_test] = load(&a.source)?;
    let [t_train, t_val, t_test] = load(&a.target)?;
    let tcfg = TransferConfig {
        arch: cfg.arch,
        model: cfg.model.clone(),
        train: cfg.train.clone(),
    };
    let source = Task {
        train: &s_train,
        val: &s_val,
        test: Some(&s_test),
    };
    let target = Task {
        train: &t_train,
        val: &t_val,
        test: Some(&t_test),
    };
    let (report, model) = training::pretrain_transfer(source, target, &tcfg)?;

    let mut history = String::new();
    for (arm, h) in [("source", &report.source.history), ("pretrained", &report.pretrained.history), ("random", &report.random.history)] {
        for e in &h.epochs {
            let mut v = serde_json::to_value(e)?;
            v["arm"] = Value::String(arm.into());
            history.push_str(&serde_json::to_string(&v)?);
            history.push('\n');
        }
    }
    write(&a.out.join("history.jsonl"), history)?;
    models::save_weights(&model, &a.out.join("weights.bin"))?;
    write(&a.out.join("backbone.bin"), training::backbone_weights(&model))?;
    write(&a.out.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    println!(
        "target val accuracy: pretrained {:.4}, random init {:.4}",
        report.pretrained.val_accuracy, report.random.val_accuracy
    );
    Ok(())
}
