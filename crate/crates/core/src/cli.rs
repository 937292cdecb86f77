//! Command-line front end: `cellnas <command>`.
//!
//! Every command reads an optional flat TOML settings file, writes into
//! `--out`, and leaves an `experiment.json` next to its outputs. Wall-clock
//! times go to `experiment.timestamps.json` so the manifest itself is stable
//! across reruns.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::controller::ControllerConfig;
use crate::datapipe::{
    augment_all, load_dataset, stratified_folds, synthetic_stripes, write_augmented_set, FoldAssignment, Label, LoadOptions,
    RoiImage,
};
use crate::error::{Error, Result};
use crate::genotype::{ArchPair, CountingConfig};
use crate::nn::CosineSchedule;
use crate::searchspace::{
    build_alexnet, build_network, forward_shapes, make_stack_plan, network_param_count, Model, NetworkManifest, Variant,
    ALEXNET_PUBLISHED_PARAMS, FINAL_BASE_CHANNELS, INPUT_CHANNELS,
};
use crate::trainer::{
    cross_validate, evaluate, search_on_fold, train_from_scratch, write_metrics_csv, LabeledSet, OptimConfig, SearchConfig,
    TrainConfig,
};

#[derive(Debug, Parser)]
#[command(name = "cellnas", version, about = "Cell-based architecture search for two-class grayscale ROI images")]
pub struct Cli {
    /// Flat TOML settings file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the `seed` setting.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Replace existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
    /// Overrides the `workers` setting.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write every original and its seven augmentations, with a CSV manifest.
    Augment { dataset: PathBuf },
    /// Assign sources to stratified folds and write folds.json.
    Folds { dataset: PathBuf },
    /// Search for a cell pair on the training part of one fold.
    Search,
    /// Cross-validate a stacked network built from a genotype file.
    Cv { genotype: PathBuf, variant: Variant },
    /// Train one network on the whole dataset.
    Train { genotype: PathBuf, variant: Variant },
    /// Evaluate a checkpoint on the dataset.
    Eval { checkpoint: PathBuf },
    /// Report analytic and enumerated parameter counts.
    Params {
        genotype: Option<PathBuf>,
        variant: Option<Variant>,
        /// Count the two-class AlexNet baseline instead.
        #[arg(long)]
        alexnet: bool,
        #[arg(long, default_value_t = 2)]
        classes: usize,
        #[arg(long, default_value_t = 100)]
        input_side: usize,
        /// Input channels for --alexnet (3 gives the canonical RGB network).
        #[arg(long, default_value_t = INPUT_CHANNELS)]
        input_channels: usize,
        #[arg(long)]
        base_channels: Option<usize>,
        #[arg(long)]
        no_bn_affine: bool,
        #[arg(long)]
        conv_bias: bool,
        #[arg(long)]
        no_projections: bool,
    },
    /// Write Graphviz files for both cells.
    Render { genotype: PathBuf },
}

/// Every setting a command can read. Empty strings mean "not set"; a zero
/// `tanh_constant` or `temperature` disables that logit shaping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub seed: u64,
    pub workers: usize,
    pub dataset: String,
    pub convert_color: bool,
    /// Use generated stripe images when no dataset is given.
    pub synthetic_per_class: usize,
    pub synthetic_side: usize,
    /// Fold file from `cellnas folds`; computed from `k` and `seed` when empty.
    pub folds: String,
    pub k: usize,
    /// Fold held out during search.
    pub fold: usize,
    pub batch_size: usize,
    pub input_side: usize,
    pub augment: bool,
    pub controller_epochs: usize,
    pub candidates_per_epoch: usize,
    pub validation_fraction: f64,
    #[serde(rename = "B")]
    pub nodes: usize,
    pub search_base_channels: usize,
    pub search_variant: Variant,
    pub epochs: usize,
    pub base_channels: usize,
    pub momentum: f32,
    pub weight_decay: f32,
    pub lr_max: f64,
    pub lr_min: f64,
    pub lr_period: usize,
    pub lr_period_mul: usize,
    pub controller_hidden: usize,
    pub controller_lr: f64,
    pub entropy_weight: f64,
    pub tanh_constant: f64,
    pub temperature: f64,
    pub baseline_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub init_range: f64,
    pub include_batchnorm_affine: bool,
    pub include_conv_bias: bool,
    pub include_projection_ops: bool,
}

impl Default for Settings {
    fn default() -> Self {
        let s = SearchConfig::default();
        let t = TrainConfig::default();
        let c = s.controller;
        Settings {
            seed: 0,
            workers: 1,
            dataset: String::new(),
            convert_color: false,
            synthetic_per_class: 0,
            synthetic_side: 16,
            folds: String::new(),
            k: 5,
            fold: 0,
            batch_size: t.batch_size,
            input_side: t.input_side,
            augment: t.augment,
            controller_epochs: s.controller_epochs,
            candidates_per_epoch: s.candidates_per_epoch,
            validation_fraction: s.validation_fraction,
            nodes: s.nodes,
            search_base_channels: s.base_channels,
            search_variant: s.variant,
            epochs: t.epochs,
            base_channels: t.base_channels,
            momentum: t.optim.momentum,
            weight_decay: t.optim.weight_decay,
            lr_max: t.optim.schedule.lr_max,
            lr_min: t.optim.schedule.lr_min,
            lr_period: t.optim.schedule.period,
            lr_period_mul: t.optim.schedule.period_mul,
            controller_hidden: c.hidden,
            controller_lr: c.lr,
            entropy_weight: c.entropy_weight,
            tanh_constant: c.tanh_constant.unwrap_or(0.0),
            temperature: c.temperature.unwrap_or(0.0),
            baseline_decay: c.baseline_decay,
            adam_beta1: c.adam_beta1,
            adam_beta2: c.adam_beta2,
            adam_eps: c.adam_eps,
            init_range: c.init_range,
            include_batchnorm_affine: t.counting.include_batchnorm_affine,
            include_conv_bias: t.counting.include_conv_bias,
            include_projection_ops: t.counting.include_projection_ops,
        }
    }
}

fn push_unique(errs: &mut Vec<String>, e: String) {
    if !errs.contains(&e) {
        errs.push(e);
    }
}

impl Settings {
    /// Parses a settings file. Unknown keys, mistyped values and out-of-range
    /// values are all collected into one [`Error::Config`].
    pub fn parse(text: &str) -> Result<Settings> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(vec![e.message().to_string()]))?;
        let mut merged = toml::Table::try_from(Settings::default()).expect("settings serialize");
        let mut errs = Vec::new();
        for (key, value) in table {
            if !merged.contains_key(&key) {
                errs.push(format!("unknown key `{key}`"));
                continue;
            }
            let mut one = toml::Table::new();
            one.insert(key.clone(), value.clone());
            match toml::Value::Table(one).try_into::<Settings>() {
                Ok(_) => {
                    merged.insert(key, value);
                }
                Err(e) => errs.push(format!("`{key}`: {}", e.message().trim())),
            }
        }
        let s: Settings = toml::Value::Table(merged).try_into().map_err(|e: toml::de::Error| Error::Config(vec![e.to_string()]))?;
        if let Err(Error::Config(more)) = s.validate() {
            errs.extend(more);
        }
        if errs.is_empty() {
            Ok(s)
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn load(path: &Path) -> Result<Settings> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Settings::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("settings serialize")
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        for cfg in [self.search_config().validate(), self.train_config().validate()] {
            if let Err(Error::Config(e)) = cfg {
                for m in e {
                    push_unique(&mut errs, m);
                }
            }
        }
        if self.k < 2 {
            errs.push(format!("k must be >= 2, got {}", self.k));
        } else if self.fold >= self.k {
            errs.push(format!("fold must be < k ({}), got {}", self.k, self.fold));
        }
        if self.synthetic_side < 2 {
            errs.push("synthetic_side must be >= 2".into());
        }
        if !(self.lr_min >= 0.0 && self.lr_min <= self.lr_max) {
            errs.push(format!("need 0 <= lr_min <= lr_max, got {} and {}", self.lr_min, self.lr_max));
        }
        if self.lr_period == 0 || self.lr_period_mul == 0 {
            errs.push("lr_period and lr_period_mul must be >= 1".into());
        }
        if self.tanh_constant < 0.0 || self.temperature < 0.0 {
            errs.push("tanh_constant and temperature must be >= 0 (0 disables)".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn counting(&self) -> CountingConfig {
        CountingConfig {
            include_batchnorm_affine: self.include_batchnorm_affine,
            include_conv_bias: self.include_conv_bias,
            include_projection_ops: self.include_projection_ops,
        }
    }

    pub fn optim(&self) -> OptimConfig {
        OptimConfig {
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            schedule: CosineSchedule {
                lr_max: self.lr_max,
                lr_min: self.lr_min,
                period: self.lr_period,
                period_mul: self.lr_period_mul,
            },
        }
    }

    pub fn controller(&self) -> ControllerConfig {
        ControllerConfig {
            hidden: self.controller_hidden,
            lr: self.controller_lr,
            entropy_weight: self.entropy_weight,
            tanh_constant: (self.tanh_constant > 0.0).then_some(self.tanh_constant),
            temperature: (self.temperature > 0.0).then_some(self.temperature),
            baseline_decay: self.baseline_decay,
            adam_beta1: self.adam_beta1,
            adam_beta2: self.adam_beta2,
            adam_eps: self.adam_eps,
            init_range: self.init_range,
        }
    }

    pub fn search_config(&self) -> SearchConfig {
        SearchConfig {
            controller_epochs: self.controller_epochs,
            candidates_per_epoch: self.candidates_per_epoch,
            validation_fraction: self.validation_fraction,
            nodes: self.nodes,
            base_channels: self.search_base_channels,
            variant: self.search_variant,
            batch_size: self.batch_size,
            input_side: self.input_side,
            augment: self.augment,
            optim: self.optim(),
            controller: self.controller(),
            counting: self.counting(),
            seed: self.seed,
            workers: self.workers,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            base_channels: self.base_channels,
            input_side: self.input_side,
            augment: self.augment,
            optim: self.optim(),
            counting: self.counting(),
            seed: self.seed,
            workers: self.workers,
        }
    }

    /// Original images from `dataset`, or the synthetic stripe set.
    pub fn originals(&self) -> Result<Vec<RoiImage>> {
        if !self.dataset.is_empty() {
            let root = Path::new(&self.dataset);
            if !root.is_dir() {
                return Err(Error::io(root, std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found")));
            }
            load_dataset(root, LoadOptions { convert_color: self.convert_color, ..Default::default() })
        } else if self.synthetic_per_class > 0 {
            Ok(synthetic_stripes(self.synthetic_per_class, self.synthetic_side, self.seed))
        } else {
            Err(Error::Config(vec!["no data: set `dataset` or `synthetic_per_class`".into()]))
        }
    }

    /// The `folds` file when set, otherwise a fresh stratified assignment.
    pub fn fold_assignment(&self, originals: &[RoiImage]) -> Result<FoldAssignment> {
        if self.folds.is_empty() {
            return stratified_folds(originals, self.k, self.seed);
        }
        let path = Path::new(&self.folds);
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let folds: FoldAssignment =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if let Some(img) = originals.iter().find(|i| folds.fold_of(&i.source_id).is_none()) {
            return Err(Error::Dataset(format!("{} has no fold in {}", img.source_id, path.display())));
        }
        Ok(folds)
    }
}

/// Class counts and a SHA-256 over ids, labels, sizes and pixels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetFingerprint {
    pub images: usize,
    pub per_class: BTreeMap<String, usize>,
    pub sha256: String,
}

impl DatasetFingerprint {
    pub fn of(images: &[RoiImage]) -> Self {
        let mut sorted: Vec<&RoiImage> = images.iter().collect();
        sorted.sort_by(|a, b| (&a.source_id, a.provenance.name()).cmp(&(&b.source_id, b.provenance.name())));
        let mut h = Sha256::new();
        let mut per_class: BTreeMap<String, usize> = Label::ALL.iter().map(|l| (l.to_string(), 0)).collect();
        for img in sorted {
            *per_class.entry(img.label.to_string()).or_default() += 1;
            h.update(img.source_id.as_bytes());
            h.update([0]);
            h.update(img.provenance.name().as_bytes());
            h.update([img.label.index() as u8]);
            h.update((img.height as u64).to_le_bytes());
            h.update((img.width as u64).to_le_bytes());
            h.update(&img.pixels);
        }
        DatasetFingerprint { images: images.len(), per_class, sha256: hex::encode(h.finalize()) }
    }
}

/// Everything needed to rerun a command, minus the data itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub command: String,
    pub arguments: BTreeMap<String, String>,
    pub seed: u64,
    pub workers: usize,
    pub versions: BTreeMap<String, String>,
    pub config: Settings,
    pub dataset: Option<DatasetFingerprint>,
    pub outputs: Vec<String>,
}

const MODULES: [&str; 6] = ["genotype", "searchspace", "controller", "datapipe", "trainer", "cli"];

impl ExperimentManifest {
    fn new(command: &str, settings: &Settings) -> Self {
        let version = env!("CARGO_PKG_VERSION").to_string();
        ExperimentManifest {
            command: command.into(),
            arguments: BTreeMap::new(),
            seed: settings.seed,
            workers: settings.workers,
            versions: MODULES.iter().map(|m| (m.to_string(), version.clone())).collect(),
            config: settings.clone(),
            dataset: None,
            outputs: Vec::new(),
        }
    }

    fn arg(mut self, name: &str, value: impl ToString) -> Self {
        self.arguments.insert(name.into(), value.to_string());
        self
    }
}

#[derive(Debug, Serialize)]
struct Timestamps {
    started_unix: f64,
    finished_unix: f64,
    elapsed_seconds: f64,
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

/// Output directory that refuses to replace files unless forced.
struct OutDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutDir {
    /// Fails before any work if a planned output already exists.
    fn claim(root: &Path, force: bool, names: &[String]) -> Result<OutDir> {
        for name in names.iter().map(String::as_str).chain(["experiment.json"]) {
            let p = root.join(name);
            if p.exists() && !force {
                return Err(Error::io(
                    p,
                    std::io::Error::new(std::io::ErrorKind::AlreadyExists, "output exists; pass --force to replace it"),
                ));
            }
        }
        std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(OutDir { root: root.to_path_buf(), written: Vec::new() })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.written.push(name.into());
        self.root.join(name)
    }

    fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let p = self.path(name);
        std::fs::write(&p, contents).map_err(|e| Error::io(p, e))
    }

    fn json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).expect("serializable");
        text.push('\n');
        self.write(name, text)
    }

    fn finish(mut self, mut manifest: ExperimentManifest, started: (f64, Instant)) -> Result<()> {
        manifest.outputs = std::mem::take(&mut self.written);
        self.json("experiment.json", &manifest)?;
        let ts = Timestamps { started_unix: started.0, finished_unix: unix_now(), elapsed_seconds: started.1.elapsed().as_secs_f64() };
        self.json("experiment.timestamps.json", &ts)
    }
}

fn read_genotype(path: &Path) -> Result<ArchPair> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ArchPair::from_json(&text)
}

fn labeled_originals(originals: &[RoiImage], augment: bool, side: usize) -> Result<LabeledSet> {
    let mut all = Vec::new();
    for img in originals {
        all.push(img.clone());
        if augment {
            all.extend(augment_all(img)?);
        }
    }
    Ok(LabeledSet::from_images(&all, side))
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |x| format!("{:.1}%", 100.0 * x))
}

/// Runs one parsed command line.
pub fn run(cli: &Cli) -> Result<()> {
    let started = (unix_now(), Instant::now());
    let mut settings = match &cli.config {
        Some(p) => Settings::load(p)?,
        None => Settings::default(),
    };
    if let Some(s) = cli.seed {
        settings.seed = s;
    }
    if let Some(w) = cli.workers {
        settings.workers = w;
    }
    settings.validate()?;
    let s = &settings;
    match &cli.command {
        Command::Augment { dataset } => {
            let mut out = OutDir::claim(&cli.out, cli.force, &["manifest.csv".into()])?;
            let originals = load_dataset(
                dataset,
                LoadOptions { convert_color: s.convert_color, allow_empty_class: true },
            )?;
            let folds = if s.folds.is_empty() { stratified_folds(&originals, s.k, s.seed).ok() } else { Some(s.fold_assignment(&originals)?) };
            let mut images = Vec::with_capacity(originals.len() * 8);
            for img in &originals {
                images.push(img.clone());
                images.extend(augment_all(img)?);
            }
            let rows = write_augmented_set(&cli.out, &images, folds.as_ref())?;
            out.written.push("manifest.csv".into());
            out.written.extend(rows.iter().map(|r| r.file_path.clone()));
            println!("{} originals -> {} images in {}", originals.len(), rows.len(), cli.out.display());
            if folds.is_none() {
                println!("fold column left empty: some class has fewer than k={} sources", s.k);
            }
            let mut m = ExperimentManifest::new("augment", s).arg("dataset", dataset.display());
            m.dataset = Some(DatasetFingerprint::of(&originals));
            out.finish(m, started)
        }
        Command::Folds { dataset } => {
            let mut out = OutDir::claim(&cli.out, cli.force, &["folds.json".into()])?;
            let originals = load_dataset(dataset, LoadOptions { convert_color: s.convert_color, ..Default::default() })?;
            let folds = stratified_folds(&originals, s.k, s.seed)?;
            out.json("folds.json", &folds)?;
            println!("fold sizes {:?}", folds.sizes());
            let mut m = ExperimentManifest::new("folds", s).arg("dataset", dataset.display());
            m.dataset = Some(DatasetFingerprint::of(&originals));
            out.finish(m, started)
        }
        Command::Search => {
            let names: Vec<String> =
                ["genotype.json", "search_report.json", "controller.bin", "controller.json"].map(String::from).to_vec();
            let originals = s.originals()?;
            let mut out = OutDir::claim(&cli.out, cli.force, &names)?;
            let folds = s.fold_assignment(&originals)?;
            let cfg = s.search_config();
            let outcome = search_on_fold(&originals, &folds, s.fold, &cfg)?;
            out.write("genotype.json", outcome.best.to_json() + "\n")?;
            out.json("search_report.json", &outcome.report)?;
            out.path("controller.bin");
            out.path("controller.json");
            outcome.policy.save(&cli.out.join("controller"), &outcome.report.baseline)?;
            println!(
                "{} candidates; best validation accuracy {:.4} (epoch {}, candidate {})",
                outcome.report.evaluations, outcome.report.best_accuracy, outcome.report.best_epoch, outcome.report.best_index
            );
            let mut m = ExperimentManifest::new("search", s);
            m.dataset = Some(DatasetFingerprint::of(&originals));
            out.finish(m, started)
        }
        Command::Cv { genotype, variant } => {
            let arch = read_genotype(genotype)?;
            let originals = s.originals()?;
            let folds = s.fold_assignment(&originals)?;
            let mut names: Vec<String> = vec!["metrics.csv".into(), "cv_report.json".into()];
            for f in 0..folds.k {
                names.push(format!("fold{f}.ckpt"));
                names.push(format!("fold{f}.json"));
            }
            let mut out = OutDir::claim(&cli.out, cli.force, &names)?;
            let cfg = s.train_config();
            let outcome = cross_validate(&arch, *variant, &originals, &folds, &cfg)?;
            let per_fold: Vec<_> = outcome.report.folds.iter().map(|f| f.metrics).collect();
            let csv = out.path("metrics.csv");
            write_metrics_csv(&csv, &per_fold)?;
            out.json("cv_report.json", &outcome.report)?;
            let net = NetworkManifest::new(*variant, &arch, cfg.base_channels, 2, cfg.input_side, cfg.counting)?;
            for (f, model) in outcome.models.iter().enumerate() {
                model.save_checkpoint(&out.path(&format!("fold{f}.ckpt")))?;
                out.json(&format!("fold{f}.json"), &net)?;
            }
            let r = &outcome.report;
            println!("{} ({}), {} parameters", variant, r.plan, r.total_params);
            println!(
                "pooled: TNR {} TPR {} PR {} accuracy {}",
                pct(r.pooled.tnr),
                pct(r.pooled.tpr),
                pct(r.pooled.pr),
                pct(r.pooled.acc)
            );
            let mut m = ExperimentManifest::new("cv", s).arg("genotype", genotype.display()).arg("variant", variant).arg("plan", &r.plan);
            m.dataset = Some(DatasetFingerprint::of(&originals));
            out.finish(m, started)
        }
        Command::Train { genotype, variant } => {
            let arch = read_genotype(genotype)?;
            let originals = s.originals()?;
            let mut out =
                OutDir::claim(&cli.out, cli.force, &["model.ckpt".into(), "model.json".into(), "curve.json".into()])?;
            let cfg = s.train_config();
            let manifest = NetworkManifest::new(*variant, &arch, cfg.base_channels, 2, cfg.input_side, cfg.counting)?;
            let data = labeled_originals(&originals, cfg.augment, cfg.input_side)?;
            let (model, curve) = train_from_scratch(&manifest.network()?, &data, &cfg)?;
            model.save_checkpoint(&out.path("model.ckpt"))?;
            out.json("model.json", &manifest)?;
            out.json("curve.json", &curve)?;
            if let Some(last) = curve.last() {
                println!("{} epochs on {} images; final loss {:.4}, training accuracy {:.4}", curve.len(), data.len(), last.mean_loss, last.train_accuracy);
            }
            let mut m = ExperimentManifest::new("train", s).arg("genotype", genotype.display()).arg("variant", variant).arg("plan", &manifest.plan);
            m.dataset = Some(DatasetFingerprint::of(&originals));
            out.finish(m, started)
        }
        Command::Eval { checkpoint } => {
            let sidecar = checkpoint.with_extension("json");
            let text = std::fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
            let manifest: NetworkManifest =
                serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", sidecar.display())))?;
            let originals = s.originals()?;
            let mut out = OutDir::claim(&cli.out, cli.force, &["eval.json".into()])?;
            let mut model = manifest.build_model()?;
            model.load_checkpoint(checkpoint)?;
            let data = LabeledSet::from_images(&originals, manifest.input_side);
            let (metrics, _) = evaluate(&model, &data, s.batch_size)?;
            out.json("eval.json", &metrics)?;
            println!(
                "{} images: TNR {} TPR {} PR {} accuracy {}",
                data.len(),
                pct(metrics.tnr),
                pct(metrics.tpr),
                pct(metrics.pr),
                pct(metrics.acc)
            );
            let mut m = ExperimentManifest::new("eval", s).arg("checkpoint", checkpoint.display());
            m.dataset = Some(DatasetFingerprint::of(&originals));
            out.finish(m, started)
        }
        Command::Params { genotype, variant, alexnet, classes, input_side, input_channels, base_channels, no_bn_affine, conv_bias, no_projections } => {
            let mut counting = s.counting();
            counting.include_batchnorm_affine &= !no_bn_affine;
            counting.include_conv_bias |= conv_bias;
            counting.include_projection_ops &= !no_projections;
            let base = base_channels.unwrap_or(FINAL_BASE_CHANNELS);
            let (name, net, published) = if *alexnet {
                ("AlexNet".to_string(), build_alexnet(*classes, *input_side, *input_channels)?, ALEXNET_PUBLISHED_PARAMS)
            } else {
                let (Some(g), Some(v)) = (genotype, variant) else {
                    return Err(Error::InvalidArgument("params needs <GENOTYPE> <VARIANT>, or --alexnet".into()));
                };
                let arch = read_genotype(g)?;
                let plan = make_stack_plan(*v, base, *classes)?;
                (format!("{v} ({})", plan.pattern()), build_network(&arch, &plan)?, v.published_params())
            };
            forward_shapes(&net, (*input_side, *input_side, net.input_channels))?;
            let mut out = OutDir::claim(&cli.out, cli.force, &["params.json".into()])?;
            let analytic = network_param_count(&net, &counting);
            let enumerated = Model::build(&net, &counting, 0)?.enumerate_params(&counting);
            let deviation = 100.0 * (analytic as f64 - published as f64) / published as f64;
            println!("network     {name}");
            println!("input       {}x{}x{}, {} classes", net.input_channels, input_side, input_side, classes);
            println!("analytic    {analytic}");
            println!("enumerated  {enumerated}");
            println!("published   {published}");
            println!("deviation   {deviation:+.2}%");
            #[derive(Serialize)]
            struct Report<'a> {
                network: &'a str,
                classes: usize,
                input_side: usize,
                counting: CountingConfig,
                analytic: usize,
                enumerated: usize,
                published: usize,
                deviation_percent: f64,
            }
            out.json(
                "params.json",
                &Report {
                    network: &name,
                    classes: *classes,
                    input_side: *input_side,
                    counting,
                    analytic,
                    enumerated,
                    published,
                    deviation_percent: deviation,
                },
            )?;
            let mut m = ExperimentManifest::new("params", s).arg("network", &name).arg("classes", classes).arg("input_side", input_side);
            if let Some(g) = genotype {
                m = m.arg("genotype", g.display());
            }
            out.finish(m, started)
        }
        Command::Render { genotype } => {
            let arch = read_genotype(genotype)?;
            let mut out = OutDir::claim(&cli.out, cli.force, &["normal.dot".into(), "reduction.dot".into()])?;
            out.write("normal.dot", arch.normal.to_dot("normal"))?;
            out.write("reduction.dot", arch.reduction.to_dot("reduction"))?;
            println!("wrote normal.dot and reduction.dot to {}", cli.out.display());
            out.finish(ExperimentManifest::new("render", s).arg("genotype", genotype.display()), started)
        }
    }
}

/// Parses `args` (program name first) and runs; returns the exit code.
pub fn run_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(Error::Config(errs)) => {
            eprintln!("error: invalid configuration");
            for e in &errs {
                eprintln!("  {e}");
            }
            1
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn main() -> std::process::ExitCode {
    std::process::ExitCode::from(run_args(std::env::args_os()) as u8)
}
