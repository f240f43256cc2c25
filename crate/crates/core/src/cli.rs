//! Command-line driver: `ingest`, `segment`, `train` and `compare`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::classical::{cca_lung_pipeline, watershed_lung_pipeline, ClassicalConfig};
use crate::error::{Error, Result};
use crate::imgio::{
    load_entry, pair_dataset, read_manifest, resize_bilinear, resize_nearest, split_dataset,
    write_manifest, write_mask_png, write_overlay_panel, BinaryMask, DatasetEntry, GrayImage,
    JsrtOptions, ManifestRow, OverlayStyle, SplitSpec,
};
use crate::metrics::{
    aggregate, render_table, scores_csv, summary_csv, Method, MethodReport, PairScore, SummaryRow,
};
use crate::phantom::{generate_set, write_dataset, PhantomConfig};
use crate::unet::{
    self, predict_mask, prepare_samples, records_to_csv, TrainConfig, UNet, UNetConfig,
};

/// Effective settings of a run: defaults, then the config file, then flags.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset_root: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Defaults to `<output_dir>/manifest.csv`.
    pub manifest: Option<PathBuf>,
    /// Defaults to `<output_dir>/model.ckpt` where a model is read.
    pub model: Option<PathBuf>,
    /// `None` means every method (compare) and is an error for segment.
    pub method: Option<Method>,
    pub working_size: usize,
    pub seed: u64,
    pub unet: UNetConfig,
    pub train: TrainConfig,
    pub classical: ClassicalConfig,
    pub jsrt: JsrtOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset_root: None,
            output_dir: PathBuf::from("out"),
            manifest: None,
            model: None,
            method: None,
            working_size: 128,
            seed: 42,
            unet: UNetConfig::default(),
            train: TrainConfig::default(),
            classical: ClassicalConfig::default(),
            jsrt: JsrtOptions::default(),
        }
    }
}

fn parse_value<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("bad value for {key}: {value:?}")))
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_default()
}

impl RunConfig {
    pub fn manifest_path(&self) -> PathBuf {
        self.manifest
            .clone()
            .unwrap_or_else(|| self.output_dir.join("manifest.csv"))
    }

    pub fn model_path(&self) -> PathBuf {
        self.model
            .clone()
            .unwrap_or_else(|| self.output_dir.join("model.ckpt"))
    }

    /// Sets one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "dataset_root" => self.dataset_root = opt_path(value),
            "output_dir" => self.output_dir = PathBuf::from(value),
            "manifest" => self.manifest = opt_path(value),
            "model" => self.model = opt_path(value),
            "method" => {
                self.method = match value {
                    "" | "all" => None,
                    m => Some(
                        Method::parse(m)
                            .ok_or_else(|| Error::InvalidConfig(format!("unknown method {m:?}")))?,
                    ),
                }
            }
            "working_size" => self.working_size = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "depth" => self.unet.depth = parse_value(key, value)?,
            "base_channels" => self.unet.base_channels = parse_value(key, value)?,
            "learning_rate" => self.train.learning_rate = parse_value(key, value)?,
            "epochs" => self.train.epochs = parse_value(key, value)?,
            "batch_size" => self.train.batch_size = parse_value(key, value)?,
            "loss_mix" => self.train.loss_mix = parse_value(key, value)?,
            "folds" => self.train.folds = parse_value(key, value)?,
            "threshold" => self.train.threshold = parse_value(key, value)?,
            "sure_fg_factor" => self.classical.sure_fg_factor = parse_value(key, value)?,
            "jsrt_width" => self.jsrt.width = parse_value(key, value)?,
            "jsrt_height" => self.jsrt.height = parse_value(key, value)?,
            "jsrt_invert" => self.jsrt.invert = parse_value(key, value)?,
            _ => return Err(Error::InvalidConfig(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Applies a flat `key = value` file; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected key = value", n + 1))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Every setting as `key = value` lines, readable by [`apply_text`](Self::apply_text).
    pub fn to_text(&self) -> String {
        let method = self.method.map(|m| m.key()).unwrap_or("all");
        let pairs: Vec<(&str, String)> = vec![
            ("dataset_root", show_path(&self.dataset_root)),
            ("output_dir", self.output_dir.display().to_string()),
            ("manifest", show_path(&self.manifest)),
            ("model", show_path(&self.model)),
            ("method", method.to_string()),
            ("working_size", self.working_size.to_string()),
            ("seed", self.seed.to_string()),
            ("depth", self.unet.depth.to_string()),
            ("base_channels", self.unet.base_channels.to_string()),
            ("learning_rate", format!("{:?}", self.train.learning_rate)),
            ("epochs", self.train.epochs.to_string()),
            ("batch_size", self.train.batch_size.to_string()),
            ("loss_mix", format!("{:?}", self.train.loss_mix)),
            ("folds", self.train.folds.to_string()),
            ("threshold", format!("{:?}", self.train.threshold)),
            (
                "sure_fg_factor",
                format!("{:?}", self.classical.sure_fg_factor),
            ),
            ("jsrt_width", self.jsrt.width.to_string()),
            ("jsrt_height", self.jsrt.height.to_string()),
            ("jsrt_invert", self.jsrt.invert.to_string()),
        ];
        pairs
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Network and training settings with the run's size and seed folded in.
    pub fn unet_config(&self) -> UNetConfig {
        UNetConfig {
            input_size: self.working_size,
            ..self.unet
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.working_size == 0 {
            return Err(Error::InvalidConfig("working_size must be positive".into()));
        }
        if self.method == Some(Method::UNet) || self.method.is_none() {
            self.unet_config().validate()?;
        }
        self.train_config().validate()
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "lungseg",
    version,
    about = "Lung segmentation of chest radiographs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Option<Command>,
    #[command(flatten)]
    pub flags: Flags,
    /// Print the effective configuration and exit.
    #[arg(long, global = true)]
    pub dump_config: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pair images with masks and write manifest.csv.
    Ingest {
        /// Generate N synthetic phantoms into the dataset root first.
        #[arg(long, value_name = "N")]
        synthetic: Option<usize>,
    },
    /// Segment every manifest entry with one method.
    Segment,
    /// Cross-validate and train the U-Net.
    Train,
    /// Score all methods on the test split and write the comparison table.
    Compare,
}

/// Flags shared by every subcommand; each overrides the config file.
#[derive(Debug, Default, Args)]
pub struct Flags {
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub dataset_root: Option<PathBuf>,
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    /// cca, watershed, unet or all.
    #[arg(long, global = true)]
    pub method: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Working resolution (square side in pixels).
    #[arg(long, global = true)]
    pub size: Option<usize>,
    #[arg(long, global = true)]
    pub depth: Option<usize>,
    #[arg(long, global = true)]
    pub base_channels: Option<usize>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    #[arg(long, global = true)]
    pub learning_rate: Option<f64>,
    #[arg(long, global = true)]
    pub folds: Option<usize>,
    #[arg(long, global = true)]
    pub loss_mix: Option<f64>,
}

impl Flags {
    /// Builds the effective config from defaults, `--config`, then flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).map_err(|e| {
                Error::InvalidConfig(format!("cannot read {}: {e}", path.display()))
            })?;
            cfg.apply_text(&text)?;
        }
        if let Some(v) = &self.dataset_root {
            cfg.dataset_root = Some(v.clone());
        }
        if let Some(v) = &self.out {
            cfg.output_dir = v.clone();
        }
        if let Some(v) = &self.manifest {
            cfg.manifest = Some(v.clone());
        }
        if let Some(v) = &self.model {
            cfg.model = Some(v.clone());
        }
        if let Some(v) = &self.method {
            cfg.set("method", v)?;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.size {
            cfg.working_size = v;
        }
        if let Some(v) = self.depth {
            cfg.unet.depth = v;
        }
        if let Some(v) = self.base_channels {
            cfg.unet.base_channels = v;
        }
        if let Some(v) = self.epochs {
            cfg.train.epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.train.batch_size = v;
        }
        if let Some(v) = self.learning_rate {
            cfg.train.learning_rate = v;
        }
        if let Some(v) = self.folds {
            cfg.train.folds = v;
        }
        if let Some(v) = self.loss_mix {
            cfg.train.loss_mix = v;
        }
        Ok(cfg)
    }
}

/// Process exit status for a command result.
pub fn exit_code<T>(result: &Result<T>, failures: impl Fn(&T) -> usize) -> i32 {
    match result {
        Ok(v) if failures(v) == 0 => 0,
        Ok(_) => 1,
        Err(e) if is_usage_error(e) => 2,
        Err(_) => 1,
    }
}

/// Errors caused by how the tool was invoked rather than by the data.
pub fn is_usage_error(e: &Error) -> bool {
    matches!(
        e,
        Error::Usage(_)
            | Error::InvalidConfig(_)
            | Error::ModelRequired
            | Error::MissingImagesDir(_)
    )
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, contents).map_err(|e| Error::Write {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestReport {
    pub manifest: PathBuf,
    pub rows: usize,
    /// Ids of images without a mask.
    pub unpaired: Vec<String>,
}

/// Pairs `images/` with `masks/` under the dataset root and writes the
/// manifest. With `synthetic`, phantoms are generated into the root first.
pub fn cmd_ingest(cfg: &RunConfig, synthetic: Option<usize>) -> Result<IngestReport> {
    let root = match (&cfg.dataset_root, synthetic) {
        (Some(root), _) => root.clone(),
        (None, Some(_)) => cfg.output_dir.join("phantoms"),
        (None, None) => return Err(Error::Usage("ingest needs --dataset-root".into())),
    };
    if let Some(n) = synthetic {
        let pcfg = PhantomConfig {
            size: cfg.working_size,
            ..Default::default()
        };
        write_dataset(&root, &generate_set(&pcfg, n, cfg.seed))?;
        log::info!("wrote {n} phantoms under {}", root.display());
    }
    let manifest = cfg.manifest_path();
    if let Some(parent) = manifest.parent() {
        fs::create_dir_all(parent)?;
    }
    let paired = match pair_dataset(&root) {
        Ok(p) => p,
        Err(e) => {
            write_manifest(&[], &manifest)?;
            return Err(e);
        }
    };
    let mut rows = Vec::with_capacity(paired.len());
    let mut unpaired = Vec::new();
    for p in &paired {
        let entry = load_entry(&p.id, &p.image_path, p.mask_path.as_deref(), &cfg.jsrt)?;
        if p.mask_path.is_none() {
            log::warn!("{}: no mask found", p.id);
            unpaired.push(p.id.clone());
        }
        rows.push(ManifestRow {
            id: p.id.clone(),
            image_path: p.image_path.to_string_lossy().into_owned(),
            mask_path: p
                .mask_path
                .as_ref()
                .map(|m| m.to_string_lossy().into_owned())
                .unwrap_or_default(),
            width: entry.image.width(),
            height: entry.image.height(),
        });
    }
    write_manifest(&rows, &manifest)?;
    if rows.is_empty() {
        return Err(Error::Usage(format!(
            "no images under {}",
            root.join("images").display()
        )));
    }
    log::info!("{} entries, {} without masks", rows.len(), unpaired.len());
    Ok(IngestReport {
        manifest,
        rows: rows.len(),
        unpaired,
    })
}

fn load_row(row: &ManifestRow, jsrt: &JsrtOptions) -> Result<DatasetEntry> {
    load_entry(&row.id, Path::new(&row.image_path), row.mask(), jsrt)
}

fn load_model(cfg: &RunConfig) -> Result<UNet<f32>> {
    let path = cfg.model_path();
    if !path.is_file() {
        return Err(Error::ModelRequired);
    }
    UNet::load(&path, cfg.working_size)
}

/// Segments at the working resolution; the mask comes back at the source dims.
pub fn segment_image(
    method: Method,
    img: &GrayImage,
    working_size: usize,
    classical: &ClassicalConfig,
    model: Option<&UNet<f32>>,
) -> Result<BinaryMask> {
    if method == Method::UNet {
        let model = model.ok_or(Error::ModelRequired)?;
        return predict_mask(model, img, 0.5);
    }
    let small = if img.dims() == (working_size, working_size) {
        img.clone()
    } else {
        resize_bilinear(img, working_size, working_size)?
    };
    let mask = match method {
        Method::Cca => cca_lung_pipeline(&small, classical)?,
        _ => watershed_lung_pipeline(&small, classical)?,
    };
    resize_nearest(&mask, img.width(), img.height())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentReport {
    pub written: usize,
    pub overlays: usize,
    pub failed: Vec<String>,
}

/// Writes `<out>/<method>/<id>_mask.png`, plus `<id>_overlay.png` when a
/// truth mask exists. Entries are processed in parallel; failures are logged
/// and counted.
pub fn cmd_segment(cfg: &RunConfig) -> Result<SegmentReport> {
    let method = cfg
        .method
        .ok_or_else(|| Error::Usage("segment needs --method cca|watershed|unet".into()))?;
    let model = if method == Method::UNet {
        cfg.unet_config().validate()?;
        Some(load_model(cfg)?)
    } else {
        None
    };
    let rows = read_manifest(&cfg.manifest_path())?;
    let dir = cfg.output_dir.join(method.key());
    fs::create_dir_all(&dir)?;
    let style = OverlayStyle::default();
    let outcomes: Vec<(String, Result<bool>)> = rows
        .par_iter()
        .map(|row| {
            let run = || -> Result<bool> {
                let entry = load_row(row, &cfg.jsrt)?;
                let mask = segment_image(
                    method,
                    &entry.image,
                    cfg.working_size,
                    &cfg.classical,
                    model.as_ref(),
                )?;
                write_mask_png(&mask, &dir.join(format!("{}_mask.png", row.id)))?;
                match &entry.mask {
                    Some(truth) => {
                        let path = dir.join(format!("{}_overlay.png", row.id));
                        write_overlay_panel(&entry.image, &mask, truth, &path, &style)?;
                        Ok(true)
                    }
                    None => Ok(false),
                }
            };
            (row.id.clone(), run())
        })
        .collect();
    let mut report = SegmentReport {
        written: 0,
        overlays: 0,
        failed: Vec::new(),
    };
    for (id, outcome) in outcomes {
        match outcome {
            Ok(overlay) => {
                report.written += 1;
                report.overlays += usize::from(overlay);
            }
            Err(e) => {
                log::error!("{id}: {e}");
                report.failed.push(id);
            }
        }
    }
    Ok(report)
}

fn load_all(cfg: &RunConfig, rows: &[ManifestRow]) -> Result<Vec<DatasetEntry>> {
    rows.iter().map(|r| load_row(r, &cfg.jsrt)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub split: SplitSpec,
    pub records: usize,
    pub checkpoint: PathBuf,
}

/// Splits 8:1:1, cross-validates over the train+val pool, retrains on the
/// pool and writes `model.ckpt`, `train_records.csv` and `split.json`.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainReport> {
    let ucfg = cfg.unet_config();
    let tcfg = cfg.train_config();
    ucfg.validate()?;
    tcfg.validate()?;
    let rows = read_manifest(&cfg.manifest_path())?;
    if let Some(row) = rows.iter().find(|r| r.mask().is_none()) {
        return Err(Error::MissingMask(row.id.clone()));
    }
    let entries = load_all(cfg, &rows)?;
    let samples = prepare_samples(&entries, cfg.working_size)?;
    let split = split_dataset(samples.len(), cfg.seed)?;
    fs::create_dir_all(&cfg.output_dir)?;
    write_file(&cfg.output_dir.join("split.json"), &split_json(&split))?;
    let outcome = unet::train(&ucfg, &samples, &split, &tcfg)?;
    let checkpoint = cfg.output_dir.join("model.ckpt");
    outcome.model.save(&checkpoint)?;
    write_file(
        &cfg.output_dir.join("train_records.csv"),
        &records_to_csv(&outcome.records),
    )?;
    Ok(TrainReport {
        split,
        records: outcome.records.len(),
        checkpoint,
    })
}

pub fn split_json(split: &SplitSpec) -> String {
    let mut s = serde_json::to_string_pretty(split).expect("split serializes");
    s.push('\n');
    s
}

pub fn read_split(path: &Path) -> Result<SplitSpec> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub reports: Vec<MethodReport>,
    pub table: String,
}

/// Scores the requested methods (all by default) on the test split at the
/// working resolution; writes `report.md`, `scores.csv` and `summary.csv`.
pub fn cmd_compare(cfg: &RunConfig) -> Result<CompareReport> {
    let methods: Vec<Method> = match cfg.method {
        Some(m) => vec![m],
        None => Method::ALL.to_vec(),
    };
    let model = if methods.contains(&Method::UNet) {
        cfg.unet_config().validate()?;
        Some(load_model(cfg)?)
    } else {
        None
    };
    let rows = read_manifest(&cfg.manifest_path())?;
    let split_path = cfg.output_dir.join("split.json");
    let split = if split_path.is_file() {
        read_split(&split_path)?
    } else {
        split_dataset(rows.len(), cfg.seed)?
    };
    split.validate(rows.len())?;
    let size = cfg.working_size;
    let test: Vec<(String, GrayImage, BinaryMask)> = split
        .test
        .iter()
        .map(|&i| {
            let entry = load_row(&rows[i], &cfg.jsrt)?;
            let truth = entry
                .mask
                .ok_or_else(|| Error::MissingMask(entry.id.clone()))?;
            Ok((
                entry.id,
                resize_bilinear(&entry.image, size, size)?,
                resize_nearest(&truth, size, size)?,
            ))
        })
        .collect::<Result<_>>()?;
    let mut reports = Vec::with_capacity(methods.len());
    for method in methods {
        let scores = test
            .par_iter()
            .map(|(id, img, truth)| {
                let pred = segment_image(method, img, size, &cfg.classical, model.as_ref())?;
                PairScore::new(id, &pred, truth)
            })
            .collect::<Result<Vec<_>>>()?;
        reports.push(aggregate(method, scores)?);
    }
    let rows_summary: Vec<SummaryRow> = reports.iter().map(SummaryRow::from).collect();
    let table = render_table(&rows_summary);
    let mut md = String::from("# Lung segmentation comparison\n\n");
    md.push_str(&table);
    let _ = writeln!(
        md,
        "\nMacro averages (mean over images) of IoU and DICE in percent, {} test images at {size}x{size}, seed {}.",
        test.len(),
        split.seed
    );
    let records = cfg.output_dir.join("train_records.csv");
    if reports.iter().any(|r| r.method == Method::UNet) && records.is_file() {
        if let Some((folds, dice)) = cv_mean_dice(&records)? {
            let _ = writeln!(
                md,
                "U-Net {folds}-fold cross-validation DICE (last epoch, mean over folds): {:.1}.",
                dice * 100.0
            );
        }
    }
    write_file(&cfg.output_dir.join("report.md"), &md)?;
    write_file(&cfg.output_dir.join("scores.csv"), &scores_csv(&reports))?;
    write_file(&cfg.output_dir.join("summary.csv"), &summary_csv(&reports))?;
    Ok(CompareReport { reports, table })
}

/// Mean over cross-validation folds of the last epoch's validation Dice in a
/// training-record CSV. The final retrain is not a fold and is skipped.
pub fn cv_mean_dice(path: &Path) -> Result<Option<(usize, f64)>> {
    let mut last: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::InvalidData(e.to_string()))?;
    for row in reader.records() {
        let row = row.map_err(|e| Error::InvalidData(e.to_string()))?;
        let field = |i: usize| row.get(i).unwrap_or("");
        let Ok(fold) = field(0).parse::<usize>() else {
            continue;
        };
        let epoch: usize = field(1)
            .parse()
            .map_err(|_| Error::InvalidData(format!("bad epoch in {}", path.display())))?;
        let dice: f64 = field(4)
            .parse()
            .map_err(|_| Error::InvalidData(format!("bad val_dice in {}", path.display())))?;
        let slot = last.entry(fold).or_insert((epoch, dice));
        if epoch >= slot.0 {
            *slot = (epoch, dice);
        }
    }
    if last.is_empty() {
        return Ok(None);
    }
    let mean = last.values().map(|&(_, d)| d).sum::<f64>() / last.len() as f64;
    Ok(Some((last.len(), mean)))
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit status: 0 success, 1 partial or runtime failure, 2 usage or
/// configuration error.
pub fn run<I, A>(args: I) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let cfg = match cli.flags.resolve() {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    if cli.dump_config {
        print!("{}", cfg.to_text());
        return 0;
    }
    let Some(command) = cli.command else {
        eprintln!("error: a subcommand is required (ingest, segment, train, compare)");
        return 2;
    };
    if let Err(e) = cfg.validate() {
        eprintln!("error: {e}");
        return 2;
    }
    let code = match command {
        Command::Ingest { synthetic } => {
            let r = cmd_ingest(&cfg, synthetic);
            report(&r, |r| {
                println!(
                    "{} manifest rows ({} without masks) -> {}",
                    r.rows,
                    r.unpaired.len(),
                    r.manifest.display()
                )
            });
            exit_code(&r, |_| 0)
        }
        Command::Segment => {
            let r = cmd_segment(&cfg);
            report(&r, |r| {
                println!(
                    "{} masks, {} overlays, {} failed",
                    r.written,
                    r.overlays,
                    r.failed.len()
                )
            });
            exit_code(&r, |r| r.failed.len())
        }
        Command::Train => {
            let r = cmd_train(&cfg);
            report(&r, |r| {
                println!("{} records, model -> {}", r.records, r.checkpoint.display())
            });
            exit_code(&r, |_| 0)
        }
        Command::Compare => {
            let r = cmd_compare(&cfg);
            report(&r, |r| print!("{}", r.table));
            exit_code(&r, |_| 0)
        }
    };
    code
}

fn report<T>(result: &Result<T>, ok: impl Fn(&T)) {
    match result {
        Ok(v) => ok(v),
        Err(e) => eprintln!("error: {e}"),
    }
}
