//! The `deepboost` command-line tool.
//!
//! Exit status: 0 success, 1 usage or configuration error, 2 data error
//! (unreadable images, bad manifests or model files, training failures),
//! 3 internal error.

pub mod config;
pub mod report;
pub mod visualize;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::boost::RoundRecord;
use crate::fsutil::atomic_write;
use crate::gabor::{response_map, FilterBank};
use crate::imageio::{
    format_manifest, load_canonical, manifest_subset, parse_manifest, scan_dataset, split_dataset,
    ImageIoError, LabeledDataset, SplitRole,
};
use crate::model::{argmax, load_images, train_multiclass_logged, ModelError, MulticlassModel};
use crate::persist::{
    export_features, load_model, load_multiclass, save_model, to_json, PersistError, SavedModel,
};

pub use config::RunConfig;
pub use report::EvalReport;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Internal(_) => 3,
        }
    }
}

impl From<ImageIoError> for CliError {
    fn from(e: ImageIoError) -> Self {
        match e {
            ImageIoError::InvalidSplit(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::InvalidConfig(_) | ModelError::Gabor(_) => CliError::Config(e.to_string()),
            ModelError::LayerOutOfRange { .. } => CliError::Usage(e.to_string()),
            ModelError::Inconsistent(_) => CliError::Internal(e.to_string()),
            ModelError::Image(e) => e.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<PersistError> for CliError {
    fn from(e: PersistError) -> Self {
        CliError::Data(e.to_string())
    }
}

fn write_output(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    atomic_write(path, bytes)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

#[derive(Debug, Parser)]
#[command(
    name = "deepboost",
    version,
    about = "Layered Gabor feature mining with boosted stumps"
)]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads; defaults to all cores. Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Reduced preset: stride 4 and 100/80/50 rounds, overridable by the config.
    #[arg(long, global = true)]
    pub desk_scale: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write `repeats` random train/test manifests into the output directory.
    Split,
    /// Train a one-vs-all model on the training part of a manifest.
    Train {
        /// Defaults to the first manifest written by `split`.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Defaults to `model.dbm` in the output directory.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Classify the test part of a manifest and write a report.
    Evaluate {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Print `<path>\t<class>\t<scores>` for each image.
    Predict {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Draw the primitives behind a layer's selected features as SVG.
    Visualize {
        #[arg(long)]
        model: Option<PathBuf>,
        /// 1-based layer index.
        #[arg(long)]
        layer: usize,
        /// Only this class; default is one file per class.
        #[arg(long)]
        class: Option<String>,
        /// Output directory; defaults to the configured one.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the filter bank's kernels as PGM images.
    DumpKernels {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a model as JSON, or its selected features as JSON Lines.
    Export {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ExportFormat::Json)]
        format: ExportFormat,
        /// Output file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ExportFormat {
    Json,
    Features,
}

/// Parses arguments, runs the command and maps the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("deepboost: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Internal(format!("thread pool: {e}")))?;
    }
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path, cli.desk_scale)?,
        None => RunConfig::defaults(cli.desk_scale),
    };
    let need_config = || {
        if cli.config.is_none() {
            Err(CliError::Usage("this command needs --config".into()))
        } else {
            Ok(())
        }
    };
    match cli.command {
        Command::Split => {
            need_config()?;
            cmd_split(&cfg).map(|_| ())
        }
        Command::Train { manifest, model } => {
            need_config()?;
            let manifest = manifest.unwrap_or_else(|| cfg.manifest_path(0));
            let model = model.unwrap_or_else(|| cfg.default_model_path());
            cmd_train(&cfg, &manifest, &model)
        }
        Command::Evaluate { manifest, model } => {
            need_config()?;
            let manifest = manifest.unwrap_or_else(|| cfg.manifest_path(0));
            let model = model.unwrap_or_else(|| cfg.default_model_path());
            let report = cmd_evaluate(&cfg, &manifest, &model)?;
            print!("{}", report.render());
            Ok(())
        }
        Command::Predict { model, images } => {
            let model = model_path(&cli.config, &cfg, model)?;
            cmd_predict(&model, &images)
        }
        Command::Visualize {
            model,
            layer,
            class,
            out,
        } => {
            let model = model_path(&cli.config, &cfg, model)?;
            let out = out.unwrap_or_else(|| cfg.output_dir.clone());
            for path in cmd_visualize(&model, layer, class.as_deref(), &out)? {
                println!("{}", path.display());
            }
            Ok(())
        }
        Command::DumpKernels { out } => {
            let out = out.unwrap_or_else(|| cfg.output_dir.join("kernels"));
            cmd_dump_kernels(&cfg, &out)
        }
        Command::Export { model, format, out } => {
            let model = model_path(&cli.config, &cfg, model)?;
            let text = cmd_export(&model, format)?;
            match out {
                Some(path) => write_output(&path, text.as_bytes()),
                None => {
                    print!("{text}");
                    Ok(())
                }
            }
        }
    }
}

fn model_path(
    config: &Option<PathBuf>,
    cfg: &RunConfig,
    explicit: Option<PathBuf>,
) -> Result<PathBuf, CliError> {
    match (explicit, config) {
        (Some(p), _) => Ok(p),
        (None, Some(_)) => Ok(cfg.default_model_path()),
        (None, None) => Err(CliError::Usage("pass --model or --config".into())),
    }
}

/// Writes every manifest, or nothing if any split fails.
pub fn cmd_split(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let root = cfg.require_dataset()?;
    let ds = scan_dataset(root)?;
    let mut outputs = Vec::with_capacity(cfg.split.repeats);
    for repeat in 0..cfg.split.repeats {
        let (train, test) = split_dataset(&ds, &cfg.split, repeat)?;
        outputs.push((
            cfg.manifest_path(repeat),
            format_manifest(root, &train, &test)?,
        ));
    }
    for (path, text) in &outputs {
        write_output(path, text.as_bytes())?;
    }
    log::info!(
        "wrote {} manifests to {}",
        outputs.len(),
        cfg.output_dir.display()
    );
    Ok(outputs.into_iter().map(|(p, _)| p).collect())
}

fn load_split(
    cfg: &RunConfig,
    manifest: &Path,
    role: SplitRole,
) -> Result<LabeledDataset, CliError> {
    let root = cfg.require_dataset()?;
    let text = fs::read_to_string(manifest)
        .map_err(|e| CliError::Data(format!("cannot read manifest {}: {e}", manifest.display())))?;
    let entries = parse_manifest(&text)?;
    let classes = scan_dataset(root)?.class_names;
    Ok(manifest_subset(root, &entries, &classes, role)?)
}

#[derive(Serialize)]
struct LogLine<'a> {
    class: &'a str,
    #[serde(flatten)]
    record: &'a RoundRecord,
}

/// Trains on the manifest's training images and writes the model, the
/// per-round log (`train_log.jsonl`) and the resolved config
/// (`config.toml`) next to the model.
pub fn cmd_train(cfg: &RunConfig, manifest: &Path, model_path: &Path) -> Result<(), CliError> {
    let train = load_split(cfg, manifest, SplitRole::Train)?;
    train.validate_for_training()?;
    let start = Instant::now();
    let (model, logs) = train_multiclass_logged(&train, &cfg.model)?;
    log::info!(
        "trained {} classes in {:.1}s",
        model.class_names.len(),
        start.elapsed().as_secs_f64()
    );

    let mut log_text = String::new();
    for (class, records) in &logs {
        for record in records {
            let line = serde_json::to_string(&LogLine { class, record })
                .map_err(|e| CliError::Internal(e.to_string()))?;
            log_text.push_str(&line);
            log_text.push('\n');
        }
    }
    let dir = model_path.parent().unwrap_or(Path::new(""));
    save_model(&SavedModel::Multiclass(model), model_path)?;
    write_output(&dir.join("train_log.jsonl"), log_text.as_bytes())?;
    write_output(&dir.join("config.toml"), cfg.to_toml().as_bytes())?;
    Ok(())
}

/// Scores every test image at every layer; the report goes to
/// `report.json` and `report.txt` in the output directory.
pub fn cmd_evaluate(
    cfg: &RunConfig,
    manifest: &Path,
    model_path: &Path,
) -> Result<EvalReport, CliError> {
    let mut timings = BTreeMap::new();
    let start = Instant::now();
    let model = load_multiclass(model_path)?;
    let test = load_split(cfg, manifest, SplitRole::Test)?;
    if test.class_names != model.class_names {
        return Err(CliError::Data(format!(
            "model classes {:?} differ from dataset classes {:?}",
            model.class_names, test.class_names
        )));
    }
    let images = load_images(&test)?;
    timings.insert("load_seconds".to_string(), start.elapsed().as_secs_f64());

    let start = Instant::now();
    let bank = model.filter_bank()?;
    let per_image: Vec<Vec<Vec<f64>>> = images
        .par_iter()
        .map(|img| model.layer_scores_map(&response_map(img, &bank)))
        .collect::<Result<_, _>>()?;
    timings.insert("score_seconds".to_string(), start.elapsed().as_secs_f64());

    let layers = model.num_layers();
    let predictions: Vec<Vec<usize>> = (0..layers)
        .map(|l| per_image.iter().map(|s| argmax(&s[l])).collect())
        .collect();
    let truth: Vec<usize> = test.items.iter().map(|i| i.class).collect();
    let report = EvalReport::new(model.class_names.clone(), &truth, &predictions, timings);
    write_output(
        &cfg.output_dir.join("report.json"),
        report.to_json().as_bytes(),
    )?;
    write_output(
        &cfg.output_dir.join("report.txt"),
        report.render().as_bytes(),
    )?;
    Ok(report)
}

fn predict_line(
    model: &MulticlassModel,
    bank: &FilterBank,
    path: &Path,
) -> Result<String, CliError> {
    let img = load_canonical(path)?;
    let (class, scores) = model.predict_map(&response_map(&img, bank))?;
    let scores: Vec<String> = scores.iter().map(f64::to_string).collect();
    Ok(format!(
        "{}\t{}\t{}",
        path.display(),
        model.class_names[class],
        scores.join(",")
    ))
}

/// Prints one line per readable image; failures are reported on standard
/// error and turn the exit status into a data error at the end.
pub fn cmd_predict(model_path: &Path, images: &[PathBuf]) -> Result<(), CliError> {
    let model = load_multiclass(model_path)?;
    let bank = model.filter_bank()?;
    let lines: Vec<Result<String, CliError>> = images
        .par_iter()
        .map(|p| predict_line(&model, &bank, p))
        .collect();
    let mut failed = 0;
    for (line, path) in lines.into_iter().zip(images) {
        match line {
            Ok(line) => println!("{line}"),
            Err(e) => {
                failed += 1;
                eprintln!("deepboost: {}: {e}", path.display());
            }
        }
    }
    if failed > 0 {
        return Err(CliError::Data(format!(
            "{failed} of {} images failed",
            images.len()
        )));
    }
    Ok(())
}

fn file_safe(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Writes `layer<l>_<class>.svg` per class and returns the paths.
pub fn cmd_visualize(
    model_path: &Path,
    layer: usize,
    class: Option<&str>,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, CliError> {
    let (names, binaries) = match load_model(model_path)? {
        SavedModel::Binary(m) => (vec!["model".to_string()], vec![m]),
        SavedModel::Multiclass(mc) => (mc.class_names, mc.binaries),
    };
    let mut written = Vec::new();
    for (name, model) in names.iter().zip(&binaries) {
        if class.is_some_and(|c| c != name) {
            continue;
        }
        let svg = visualize::render_svg(model, layer, &format!("{name}, layer {layer}"))?;
        let path = out_dir.join(format!("layer{layer}_{}.svg", file_safe(name)));
        write_output(&path, svg.as_bytes())?;
        written.push(path);
    }
    if written.is_empty() {
        return Err(CliError::Usage(format!(
            "no class named `{}`",
            class.unwrap_or("")
        )));
    }
    Ok(written)
}

/// Writes `even_<a>.pgm` and `odd_<a>.pgm` per orientation.
pub fn cmd_dump_kernels(cfg: &RunConfig, out_dir: &Path) -> Result<(), CliError> {
    let bank = FilterBank::new(cfg.model.gabor.clone()).map_err(ModelError::from)?;
    for alpha in 0..bank.orientations() {
        write_output(
            &out_dir.join(format!("even_{alpha}.pgm")),
            &bank.kernel_pgm(alpha, false),
        )?;
        write_output(
            &out_dir.join(format!("odd_{alpha}.pgm")),
            &bank.kernel_pgm(alpha, true),
        )?;
    }
    Ok(())
}

pub fn cmd_export(model_path: &Path, format: ExportFormat) -> Result<String, CliError> {
    let model = load_model(model_path)?;
    Ok(match format {
        ExportFormat::Json => to_json(&model)? + "\n",
        ExportFormat::Features => export_features(&model)?,
    })
}
