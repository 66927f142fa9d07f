//! Command-line surface: configuration, checkpoints, plots and the subcommands.

pub mod checkpoint;
pub mod config;
pub mod plot;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::diseasehead::{AltClassifierParams, ClassifierKind};
use crate::domain::{canonical_view_order, DiseaseLabel, EchoImage, PatientStudy, Prediction, ViewLabel};
use crate::error::{Error, Result};
use crate::eval::{
    ablation_csv, classifier_ablation, classifier_csv, crossval_report, default_subsets, propagation_csv,
    view_ablation_with_recipe, view_error_propagation, EvalReport, MV_MP_SWAP, VIEW_NAMES,
};
use crate::explain::{grad_cam, tsne_embed, CamLayer, TsneConfig};
use crate::ingest::{load_image, load_manifest, split_dataset, write_synthetic_dataset, ManifestRow, SplitTag};
use crate::train::{train_view_model, TrainLog};
use crate::viewnet::{embed, predict_view, ViewNet};

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use config::PipelineConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;

#[derive(Parser, Debug)]
#[command(name = "echopipe", version, about = "Echocardiography view routing and HCM/CA/NORMAL classification")]
pub struct Cli {
    /// JSON or TOML file with pipeline settings; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Overrides {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub viewnet_preset: Option<String>,
    #[arg(long)]
    pub trunk_preset: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub no_clip: bool,
    #[arg(long)]
    pub freeze_trunk: bool,
    #[arg(long)]
    pub share_trunk: bool,
    #[arg(long)]
    pub replicate_to_3: bool,
    /// Skip the six-fold CA augmentation.
    #[arg(long)]
    pub no_expand_ca: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic image corpus and manifest.
    SynthData {
        #[arg(long, default_value_t = 50)]
        n_per_class: usize,
    },
    /// Train the view classifier on the manifest images.
    TrainViews(Overrides),
    /// Train the multi-view disease model.
    TrainDisease(Overrides),
    /// Route a directory of frames and predict the study's disease.
    Infer {
        #[arg(long)]
        study_dir: PathBuf,
        #[arg(long)]
        view_model: Option<PathBuf>,
        #[arg(long)]
        disease_model: PathBuf,
        /// Take view labels from this manifest instead of the view classifier.
        #[arg(long)]
        views_from_manifest: Option<PathBuf>,
    },
    /// Cross-validated disease report.
    Eval(Overrides),
    /// Cross-validation for each view subset.
    AblateViews {
        #[command(flatten)]
        o: Overrides,
        /// Semicolon-separated subsets such as "A4C;A4C,PLAX"; default is the standard list.
        #[arg(long)]
        subsets: Option<String>,
    },
    /// Alternate classifiers on pooled trunk features.
    AblateClassifiers(Overrides),
    /// Grad-CAM overlays and a t-SNE scatter of view features.
    Explain {
        #[command(flatten)]
        o: Overrides,
        #[arg(long)]
        disease_model: PathBuf,
        #[arg(long)]
        view_model: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        studies_per_class: usize,
        #[arg(long, default_value_t = 1000)]
        tsne_iterations: usize,
    },
    /// Disease scores before and after swapping the PSAX_MV and PSAX_MP slots.
    ErrorAnalysis {
        #[command(flatten)]
        o: Overrides,
        #[arg(long)]
        disease_model: PathBuf,
        /// Restrict to studies of this class (default CA).
        #[arg(long, default_value = "CA")]
        class: String,
    },
}

/// Maps an error to the process exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        Error::Diverged { .. } => EXIT_DIVERGED,
        Error::Fold { source, .. } => exit_code(source),
        _ => EXIT_DATA,
    }
}

/// Logging from `RUST_LOG` (default `info`) and the worker pool size from
/// `ECHOPIPE_THREADS`. Call once per process.
pub fn init_runtime() {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    if let Some(n) = std::env::var("ECHOPIPE_THREADS").ok().and_then(|v| v.parse::<usize>().ok()).filter(|&n| n > 0) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn base_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::from_file(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(d) = &cli.out_dir {
        cfg.out_dir = d.clone();
    }
    Ok(cfg)
}

/// Which training stage a generic `--epochs`/`--lr` flag refers to.
#[derive(Clone, Copy, PartialEq)]
enum Stage {
    View,
    Disease,
}

fn apply(cfg: &mut PipelineConfig, o: &Overrides, stage: Stage) -> Result<()> {
    if let Some(m) = &o.manifest {
        cfg.manifest = Some(m.clone());
    }
    if let Some(p) = &o.viewnet_preset {
        cfg.viewnet_preset = p.clone();
    }
    if let Some(p) = &o.trunk_preset {
        cfg.trunk_preset = p.clone();
    }
    match stage {
        Stage::View => {
            if let Some(e) = o.epochs {
                cfg.view_epochs = e;
            }
            if let Some(lr) = o.lr {
                cfg.view_lr = lr;
            }
        }
        Stage::Disease => {
            if let Some(e) = o.epochs {
                cfg.disease_epochs = e;
            }
            if let Some(lr) = o.lr {
                cfg.disease_lr = lr;
            }
        }
    }
    if let Some(k) = o.folds {
        cfg.folds = k;
    }
    cfg.no_clip |= o.no_clip;
    cfg.freeze_trunk |= o.freeze_trunk;
    cfg.share_trunk |= o.share_trunk;
    cfg.replicate_to_3 |= o.replicate_to_3;
    if o.no_expand_ca {
        cfg.expand_ca = false;
    }
    cfg.validate()
}

fn manifest_path(cfg: &PipelineConfig) -> Result<PathBuf> {
    cfg.manifest.clone().ok_or_else(|| Error::Config("no manifest given (--manifest or config key)".into()))
}

fn resolve(manifest: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest.parent().unwrap_or(Path::new(".")).join(p)
    }
}

fn load_rows(manifest: &Path) -> Result<Vec<(ManifestRow, EchoImage)>> {
    use rayon::prelude::*;
    let rows = load_manifest(manifest)?;
    rows.into_par_iter()
        .map(|r| {
            let mut img = load_image(&resolve(manifest, &r.image_path))?;
            img.patient_id = r.patient_id.clone();
            img.view = Some(r.view);
            Ok((r, img))
        })
        .collect()
}

/// Groups canonical-view rows into studies; patients without a disease label or
/// with an incomplete view set are rejected.
fn assemble_studies(rows: &[(ManifestRow, EchoImage)]) -> Result<Vec<(PatientStudy, Option<SplitTag>)>> {
    let mut by_patient: BTreeMap<&str, (BTreeMap<ViewLabel, EchoImage>, Option<DiseaseLabel>, Option<SplitTag>)> =
        BTreeMap::new();
    for (r, img) in rows {
        if !r.view.is_canonical() {
            continue;
        }
        let e = by_patient.entry(&r.patient_id).or_default();
        if e.0.insert(r.view, img.clone()).is_some() {
            return Err(Error::DuplicateView(r.view));
        }
        e.1 = e.1.or(r.disease);
        e.2 = e.2.or(r.split);
    }
    by_patient
        .into_iter()
        .map(|(pid, (views, disease, split))| {
            let disease = disease.ok_or_else(|| Error::invalid(format!("patient {pid} has no disease label")))?;
            for v in canonical_view_order() {
                if !views.contains_key(&v) {
                    return Err(Error::invalid(format!("patient {pid}: missing view {v}")));
                }
            }
            Ok((PatientStudy { patient_id: pid.to_string(), views, disease }, split))
        })
        .collect()
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(d) = path.parent() {
        std::fs::create_dir_all(d)?;
    }
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(tmp, path)?;
    Ok(())
}

fn write_log(path: &Path, log: &TrainLog) -> Result<()> {
    write(path, log.to_jsonl()?)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = base_config(&cli)?;
    match &cli.command {
        Command::SynthData { n_per_class } => {
            cfg.validate()?;
            let rows = write_synthetic_dataset(&cfg.out_dir, *n_per_class, cfg.seed)?;
            log::info!("wrote {} images to {}", rows.len(), cfg.out_dir.display());
            Ok(())
        }
        Command::TrainViews(o) => {
            apply(&mut cfg, o, Stage::View)?;
            train_views(&cfg)
        }
        Command::TrainDisease(o) => {
            apply(&mut cfg, o, Stage::Disease)?;
            train_disease(&cfg)
        }
        Command::Infer { study_dir, view_model, disease_model, views_from_manifest } => {
            cfg.validate()?;
            let out = infer(study_dir, view_model.as_deref(), disease_model, views_from_manifest.as_deref())?;
            let text = serde_json::to_string_pretty(&out)?;
            println!("{text}");
            write(&cfg.out_dir.join("prediction.json"), text)
        }
        Command::Eval(o) => {
            apply(&mut cfg, o, Stage::Disease)?;
            eval(&cfg)
        }
        Command::AblateViews { o, subsets } => {
            apply(&mut cfg, o, Stage::Disease)?;
            ablate_views(&cfg, subsets.as_deref())
        }
        Command::AblateClassifiers(o) => {
            apply(&mut cfg, o, Stage::Disease)?;
            ablate_classifiers(&cfg)
        }
        Command::Explain { o, disease_model, view_model, studies_per_class, tsne_iterations } => {
            apply(&mut cfg, o, Stage::Disease)?;
            explain(&cfg, disease_model, view_model.as_deref(), *studies_per_class, *tsne_iterations)
        }
        Command::ErrorAnalysis { o, disease_model, class } => {
            apply(&mut cfg, o, Stage::Disease)?;
            let class: DiseaseLabel = class.parse().map_err(|_| Error::Config(format!("unknown class {class:?}")))?;
            error_analysis(&cfg, disease_model, class)
        }
    }
}

/// Manifest split tags when every row has one, otherwise the seeded stratified split.
fn view_splits(cfg: &PipelineConfig, rows: &[(ManifestRow, EchoImage)]) -> Result<[Vec<EchoImage>; 3]> {
    let images: Vec<EchoImage> = rows.iter().map(|(_, i)| i.clone()).collect();
    if rows.iter().all(|(r, _)| r.split.is_some()) {
        let pick = |t: SplitTag| rows.iter().filter(|(r, _)| r.split == Some(t)).map(|(_, i)| i.clone()).collect();
        return Ok([pick(SplitTag::Train), pick(SplitTag::Val), pick(SplitTag::Test)]);
    }
    let mut parts = split_dataset(&images, |i| i.view.map_or(0, ViewLabel::index), &cfg.view_split_spec())?;
    let test = if parts.len() > 2 { parts.remove(2) } else { Vec::new() };
    let val = parts.remove(1);
    Ok([parts.remove(0), val, test])
}

fn view_report(net: &ViewNet, images: &[EchoImage]) -> Result<EvalReport> {
    use rayon::prelude::*;
    let preds: Vec<usize> = images.par_iter().map(|i| predict_view(net, i).map(ViewLabel::index)).collect::<Result<_>>()?;
    let truths: Vec<usize> = images.iter().map(|i| i.view.map_or(0, ViewLabel::index)).collect();
    EvalReport::from_predictions(&preds, &truths, &VIEW_NAMES, None)
}

fn train_views(cfg: &PipelineConfig) -> Result<()> {
    let manifest = manifest_path(cfg)?;
    let rows = load_rows(&manifest)?;
    let [train, val, test] = view_splits(cfg, &rows)?;
    log::info!("view split: {} train / {} val / {} test", train.len(), val.len(), test.len());
    let mut net = ViewNet::new(cfg.viewnet()?, cfg.seed)?;
    let tc = cfg.view_train();
    let log = match train_view_model(&tc, &mut net, &train, &val) {
        Ok(l) => l,
        Err(Error::Diverged { epoch, last_good }) => {
            let partial = ViewNet::from_params(cfg.viewnet()?, *last_good.clone())?;
            checkpoint::save_view_model(&partial, &cfg.viewnet_preset, serde_json::to_value(&tc)?, json!({"diverged_at": epoch}), &cfg.out_dir.join("viewnet.last_good.ckpt"))?;
            return Err(Error::Diverged { epoch, last_good });
        }
        Err(e) => return Err(e),
    };
    write_log(&cfg.out_dir.join("view_train_log.jsonl"), &log)?;
    let held_out = if test.is_empty() { &val } else { &test };
    let report = view_report(&net, held_out)?;
    write(&cfg.out_dir.join("view_report.json"), report.to_json()?)?;
    write(&cfg.out_dir.join("view_report.csv"), report.to_csv())?;
    write(&cfg.out_dir.join("view_confusion.csv"), report.confusion.to_csv(&VIEW_NAMES))?;
    write(&cfg.out_dir.join("view_confusion.png"), plot::confusion_png(&report.confusion)?)?;
    let metrics = json!({
        "best_epoch": log.best_epoch,
        "best_val_accuracy": log.best_val_accuracy(),
        "held_out_accuracy": report.accuracy(),
        "epochs_completed": log.records.len(),
    });
    checkpoint::save_view_model(&net, &cfg.viewnet_preset, serde_json::to_value(&tc)?, metrics, &cfg.out_dir.join("viewnet.ckpt"))?;
    log::info!("view held-out accuracy {:.3}", report.accuracy());
    Ok(())
}

fn studies_from_manifest(cfg: &PipelineConfig) -> Result<Vec<(PatientStudy, Option<SplitTag>)>> {
    let manifest = manifest_path(cfg)?;
    assemble_studies(&load_rows(&manifest)?)
}

fn train_disease(cfg: &PipelineConfig) -> Result<()> {
    let studies = studies_from_manifest(cfg)?;
    let all: Vec<PatientStudy> = studies.iter().map(|(s, _)| s.clone()).collect();
    let recipe = cfg.recipe()?;
    let (model, log) = match recipe.fit(&all, 0) {
        Ok(r) => r,
        Err(e) => return Err(e),
    };
    write_log(&cfg.out_dir.join("disease_train_log.jsonl"), &log)?;
    let metrics = json!({
        "best_epoch": log.best_epoch,
        "best_val_accuracy": log.best_val_accuracy(),
        "epochs_completed": log.records.len(),
    });
    checkpoint::save_disease_model(&model, &cfg.trunk_preset, serde_json::to_value(&recipe)?, metrics, &cfg.out_dir.join("disease.ckpt"))?;
    Ok(())
}

fn is_image(p: &Path) -> bool {
    p.extension().and_then(|e| e.to_str()).is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
}

/// One study directory through routing, fusion and the disease head.
pub fn infer(
    study_dir: &Path,
    view_model: Option<&Path>,
    disease_model: &Path,
    views_from_manifest: Option<&Path>,
) -> Result<serde_json::Value> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(study_dir)
        .map_err(|e| Error::invalid(format!("{}: {e}", study_dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| is_image(p))
        .collect();
    files.sort();
    let labels: BTreeMap<PathBuf, ViewLabel> = match views_from_manifest {
        Some(m) => load_manifest(m)?
            .into_iter()
            .map(|r| (resolve(m, &r.image_path).canonicalize().unwrap_or_default(), r.view))
            .collect(),
        None => BTreeMap::new(),
    };
    let net = match (views_from_manifest, view_model) {
        (Some(_), _) => None,
        (None, Some(p)) => Some(checkpoint::load_view_model(p)?.0),
        (None, None) => return Err(Error::Config("infer needs --view-model or --views-from-manifest".into())),
    };
    let (model, _) = checkpoint::load_disease_model(disease_model)?;
    let pid = study_dir.file_name().and_then(|n| n.to_str()).unwrap_or("study").to_string();
    let mut views = BTreeMap::new();
    let mut routing = Vec::new();
    for f in &files {
        let img = load_image(f)?;
        let (view, pred) = match &net {
            Some(n) => {
                let p = Prediction::from_logits(n.logits(&img)?)?;
                (p.view().expect("six classes"), Some(p))
            }
            None => {
                let key = f.canonicalize().unwrap_or_default();
                let v = *labels.get(&key).ok_or_else(|| Error::invalid(format!("{} not in manifest", f.display())))?;
                (v, None)
            }
        };
        routing.push(json!({"file": f.file_name().and_then(|n| n.to_str()), "view": view.as_str(), "prediction": pred}));
        if !view.is_canonical() {
            continue;
        }
        if views.insert(view, img).is_some() {
            return Err(Error::DuplicateView(view));
        }
    }
    let study = PatientStudy { patient_id: pid.clone(), views, disease: DiseaseLabel::Normal };
    for v in canonical_view_order() {
        if !study.views.contains_key(&v) {
            return Err(Error::MissingView(v));
        }
    }
    let pred = model.predict(&study)?;
    Ok(json!({
        "patient_id": pid,
        "routing": routing,
        "disease": pred.disease().map(|d| d.as_str()),
        "logits": pred.logits,
        "probabilities": pred.probabilities,
    }))
}

fn eval(cfg: &PipelineConfig) -> Result<()> {
    let studies: Vec<PatientStudy> = studies_from_manifest(cfg)?.into_iter().map(|(s, _)| s).collect();
    let recipe = cfg.recipe()?;
    let report = crossval_report(|fold, train| recipe.fit(train, fold as u64).map(|(m, _)| m), &studies, cfg.folds, cfg.seed)?;
    write(&cfg.out_dir.join("eval_report.json"), report.to_json()?)?;
    write(&cfg.out_dir.join("eval_report.csv"), report.to_csv())?;
    write(&cfg.out_dir.join("disease_confusion.csv"), report.pooled.confusion.to_csv(&crate::eval::DISEASE_NAMES))?;
    write(&cfg.out_dir.join("disease_confusion.png"), plot::confusion_png(&report.pooled.confusion)?)?;
    log::info!("mean micro-F1 {:.3}", report.mean.f1);
    Ok(())
}

fn parse_subsets(s: &str) -> Result<Vec<Vec<ViewLabel>>> {
    s.split(';')
        .map(|group| {
            group
                .split(',')
                .map(|v| v.trim().parse::<ViewLabel>().map_err(|e| Error::Config(e.to_string())))
                .collect::<Result<Vec<_>>>()
        })
        .collect()
}

fn ablate_views(cfg: &PipelineConfig, subsets: Option<&str>) -> Result<()> {
    let subsets = match subsets {
        Some(s) => parse_subsets(s)?,
        None => default_subsets(),
    };
    let studies: Vec<PatientStudy> = studies_from_manifest(cfg)?.into_iter().map(|(s, _)| s).collect();
    let rows = view_ablation_with_recipe(&subsets, &studies, cfg.folds, cfg.seed, &cfg.recipe()?)?;
    write(&cfg.out_dir.join("ablation_views.csv"), ablation_csv(&rows))?;
    write(&cfg.out_dir.join("ablation_views.json"), serde_json::to_string_pretty(&rows)?)
}

fn ablate_classifiers(cfg: &PipelineConfig) -> Result<()> {
    let studies: Vec<PatientStudy> = studies_from_manifest(cfg)?.into_iter().map(|(s, _)| s).collect();
    let recipe = cfg.recipe()?;
    let params = AltClassifierParams { seed: cfg.seed, ..AltClassifierParams::default() };
    let rows = classifier_ablation(
        |fold, train| recipe.fit(train, fold as u64).map(|(m, _)| m),
        &studies,
        cfg.folds,
        cfg.seed,
        &ClassifierKind::ALL,
        &params,
    )?;
    write(&cfg.out_dir.join("ablation_classifiers.csv"), classifier_csv(&rows))?;
    write(&cfg.out_dir.join("ablation_classifiers.json"), serde_json::to_string_pretty(&rows)?)
}

fn explain(
    cfg: &PipelineConfig,
    disease_model: &Path,
    view_model: Option<&Path>,
    per_class: usize,
    tsne_iterations: usize,
) -> Result<()> {
    let (model, _) = checkpoint::load_disease_model(disease_model)?;
    let studies: Vec<PatientStudy> = studies_from_manifest(cfg)?.into_iter().map(|(s, _)| s).collect();
    let dir = cfg.out_dir.join("gradcam");
    for d in DiseaseLabel::ALL {
        for s in studies.iter().filter(|s| s.disease == d).take(per_class) {
            for &v in &model.config.views {
                let heat = grad_cam(&model, s, v, d, CamLayer::Final)?;
                let name = format!("{}_{}_{}.png", s.patient_id, v.as_str(), d.as_str());
                write(&dir.join(name), plot::overlay_png(s.view(v)?, &heat)?)?;
            }
        }
    }
    if let Some(p) = view_model {
        let (net, _) = checkpoint::load_view_model(p)?;
        let rows = load_rows(&manifest_path(cfg)?)?;
        let images: Vec<&EchoImage> = rows.iter().map(|(_, i)| i).take(300).collect();
        let feats: Vec<Vec<f64>> = images.iter().map(|i| embed(&net, i)).collect::<Result<_>>()?;
        let labels: Vec<String> = images.iter().map(|i| i.view.map_or("?", ViewLabel::as_str).to_string()).collect();
        let perplexity = 30.0f64.min((feats.len() as f64 - 2.0) / 3.0).max(2.0);
        let tc = TsneConfig { perplexity, iterations: tsne_iterations, seed: cfg.seed, ..TsneConfig::default() };
        let emb = tsne_embed(&feats, &labels, &tc)?;
        let idx: Vec<usize> = images.iter().map(|i| i.view.map_or(0, ViewLabel::index)).collect();
        write(&cfg.out_dir.join("tsne.csv"), emb.to_csv())?;
        write(&cfg.out_dir.join("tsne.png"), plot::scatter_png(&emb.points, &idx, 480)?)?;
    }
    Ok(())
}

fn error_analysis(cfg: &PipelineConfig, disease_model: &Path, class: DiseaseLabel) -> Result<()> {
    let (model, meta) = checkpoint::load_disease_model(disease_model)?;
    let epochs = meta.metrics.get("epochs_completed").and_then(|v| v.as_u64()).unwrap_or(0) as usize;
    let log = TrainLog {
        records: (1..=epochs)
            .map(|e| crate::train::EpochRecord { epoch: e, mean_loss: 0.0, train_accuracy: 0.0, val_accuracy: 0.0, wall_time_s: 0.0 })
            .collect(),
        best_epoch: meta.metrics.get("best_epoch").and_then(|v| v.as_u64()).map(|v| v as usize),
    };
    let studies: Vec<PatientStudy> =
        studies_from_manifest(cfg)?.into_iter().map(|(s, _)| s).filter(|s| s.disease == class).collect();
    let rows = view_error_propagation(&model, &log, &studies, MV_MP_SWAP)?;
    write(&cfg.out_dir.join("error_analysis.csv"), propagation_csv(&rows))?;
    write(&cfg.out_dir.join("error_analysis.json"), serde_json::to_string_pretty(&rows)?)
}
