use std::fs;
use std::path::{Path, PathBuf};

use glandseg::boundary::{compute_threshold_nth, segment, GlandSegmentation, RimType};
use glandseg::features::{build_training_set, write_features_csv};
use glandseg::forest::{load_forest, save_forest, train_forest};
use glandseg::metrics::{aggregate, evaluate_image, ImageMetrics, MetricsReport, SplitReport};
use glandseg::preprocess::epithelial_mask;
use glandseg::raster::{load_label_image, save_label_png, to_grayscale, LabelMap, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{hex, ConfigError, PipelineConfig};
use crate::dataset::{ingest_dataset, scan_dataset, DatasetEntry, DatasetError, Split};
use crate::overlay::{mask_png, tint_overlay};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    /// Unusable inputs detected before any work starts.
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Pipeline(#[from] glandseg::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    /// 2 for configuration and ingestion problems, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Dataset(_) | CliError::Input(_) => 2,
            CliError::Pipeline(_) | CliError::Io { .. } => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

/// Write through a sibling temp file and rename into place.
pub fn write_atomic(path: &Path, write: impl FnOnce(&Path) -> Result<(), CliError>) -> Result<(), CliError> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    if let Err(e) = write(&tmp) {
        let _ = fs::remove_file(&tmp);
        return Err(e);
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn write_bytes_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    write_atomic(path, |tmp| fs::write(tmp, bytes).map_err(io_err(tmp)))
}

fn load_pair(entry: &DatasetEntry) -> Result<(RgbImage, LabelMap), CliError> {
    let img = RgbImage::open(&entry.image)?;
    let anno = entry
        .annotation
        .as_ref()
        .ok_or_else(|| CliError::Input(format!("{}: no annotation", entry.image.display())))?;
    Ok((img, load_label_image(anno)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub images: usize,
    pub samples: usize,
    pub positives: usize,
    pub threshold: f64,
    pub model_sha256: String,
}

pub struct TrainArgs<'a> {
    pub data: &'a Path,
    pub config: &'a PipelineConfig,
    pub model: &'a Path,
    pub seed: Option<u64>,
    pub features_csv: Option<&'a Path>,
}

pub fn train(args: &TrainArgs<'_>) -> Result<TrainSummary, CliError> {
    let cfg = args.config;
    cfg.validate()?;
    let index = ingest_dataset(args.data, Split::Train)?;
    if index.entries.is_empty() {
        return Err(CliError::Input(format!("{}: no training images", args.data.display())));
    }
    let pairs = index.entries.par_iter().map(load_pair).collect::<Result<Vec<_>, _>>()?;
    let set = build_training_set(&pairs, cfg.parameters.z)?;
    let positives = set.positives();
    log::info!(
        "{} images, {} nuclei: {} border / {} other",
        pairs.len(),
        set.len(),
        positives,
        set.len() - positives
    );
    if let Some(path) = args.features_csv {
        let ids: Vec<String> = index.entries.iter().map(|e| e.id.clone()).collect();
        write_atomic(path, |tmp| {
            let file = fs::File::create(tmp).map_err(io_err(tmp))?;
            Ok(write_features_csv(file, &set, &ids)?)
        })?;
    }

    let mut params = cfg.forest_params();
    if let Some(seed) = args.seed {
        params.seed = seed;
    }
    let mut forest = train_forest(&set.rows, &set.labels, &params)?;
    let masks = pairs
        .par_iter()
        .map(|(img, _)| epithelial_mask(&to_grayscale(img)))
        .collect::<Result<Vec<_>, _>>()?;
    let threshold = compute_threshold_nth(&masks, cfg.boundary.p)?;
    log::info!("thick/thin threshold {threshold:.4}");
    forest.boundary_threshold = Some(threshold);
    save_forest(&forest, args.model)?;
    let bytes = fs::read(args.model).map_err(io_err(args.model))?;
    Ok(TrainSummary {
        images: pairs.len(),
        samples: set.len(),
        positives,
        threshold,
        model_sha256: hex(&Sha256::digest(bytes)),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub id: String,
    pub split: Split,
    pub kind: RimType,
    pub ratio: f64,
    pub regions: u32,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub model_sha256: String,
    pub threshold: f64,
    pub images: Vec<SegmentRecord>,
    pub failures: Vec<Failure>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

pub fn seg_file_name(id: &str) -> String {
    format!("{id}_seg.png")
}

pub struct SegmentArgs<'a> {
    pub data: &'a Path,
    pub model: &'a Path,
    pub out: &'a Path,
    pub config: &'a PipelineConfig,
    pub split: Option<Split>,
    pub debug_overlays: bool,
}

fn segment_one(
    entry: &DatasetEntry,
    split: Split,
    forest: &glandseg::forest::Forest,
    args: &SegmentArgs<'_>,
    threshold: f64,
) -> Result<SegmentRecord, CliError> {
    let img = RgbImage::open(&entry.image)?;
    let GlandSegmentation { regions, kind, intermediates } =
        segment(&img, forest, &args.config.segment_config(threshold))?;
    let name = seg_file_name(&entry.id);
    write_atomic(&args.out.join(&name), |tmp| Ok(save_label_png(&regions, tmp)?))?;
    if args.debug_overlays {
        if let Some(inter) = &intermediates {
            for (suffix, mask) in [("T", &inter.nuclei), ("C", &inter.border)] {
                let path = args.out.join(format!("{}_{suffix}.png", entry.id));
                write_atomic(&path, |tmp| mask_png(mask, tmp))?;
            }
        }
        let path = args.out.join(format!("{}_overlay.png", entry.id));
        write_atomic(&path, |tmp| tint_overlay(&img, &regions, tmp))?;
    }
    log::info!("{}: {:?} (ratio {:.3}), {} regions", entry.id, kind.kind, kind.ratio, regions.count());
    Ok(SegmentRecord { id: entry.id.clone(), split, kind: kind.kind, ratio: kind.ratio, regions: regions.count(), output: name })
}

pub fn segment_dataset(args: &SegmentArgs<'_>) -> Result<Manifest, CliError> {
    args.config.validate()?;
    let model_bytes = fs::read(args.model).map_err(|e| CliError::Input(format!("{}: {e}", args.model.display())))?;
    let forest = glandseg::forest::forest_from_bytes(&model_bytes)
        .map_err(|e| CliError::Input(format!("{}: {e}", args.model.display())))?;
    let threshold = args.config.boundary.nth.or(forest.boundary_threshold).ok_or_else(|| {
        CliError::Input("no thick/thin threshold: set boundary.nth or use a model trained by this tool".into())
    })?;
    let splits = match args.split {
        Some(s) => vec![s],
        None => Split::ALL.to_vec(),
    };
    let mut jobs = Vec::new();
    for split in splits {
        for entry in scan_dataset(args.data, split)?.entries {
            jobs.push((split, entry));
        }
    }
    if jobs.is_empty() {
        return Err(CliError::Input(format!("{}: no images to segment", args.data.display())));
    }
    fs::create_dir_all(args.out).map_err(io_err(args.out))?;

    let results: Vec<_> = jobs
        .par_iter()
        .map(|(split, entry)| (entry, segment_one(entry, *split, &forest, args, threshold)))
        .collect();
    let mut images = Vec::new();
    let mut failures = Vec::new();
    for (entry, r) in results {
        match r {
            Ok(rec) => images.push(rec),
            Err(e) => {
                log::error!("{}: {e}", entry.id);
                failures.push(Failure { id: entry.id.clone(), error: e.to_string() });
            }
        }
    }
    let manifest = Manifest {
        config_hash: args.config.hash(),
        model_sha256: hex(&Sha256::digest(&model_bytes)),
        threshold,
        images,
        failures,
    };
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    write_bytes_atomic(&args.out.join(MANIFEST_NAME), &json)?;
    Ok(manifest)
}

/// Outcome of an evaluation run.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub failures: Vec<Failure>,
    pub table_path: PathBuf,
}

/// Companion text table path of a report.
pub fn table_path(report: &Path) -> PathBuf {
    if report.extension().is_some_and(|e| e == "txt") {
        report.with_extension("table.txt")
    } else {
        report.with_extension("txt")
    }
}

fn evaluate_entry(entry: &DatasetEntry, anno: &Path, pred_dir: &Path) -> Result<ImageMetrics, CliError> {
    let gt = load_label_image(anno)?;
    let pred_path = pred_dir.join(seg_file_name(&entry.id));
    let missing = !pred_path.exists();
    let pred = if missing {
        log::warn!("{}: no prediction, scored as all false negatives", entry.id);
        LabelMap::empty(gt.width(), gt.height())?
    } else {
        load_label_image(&pred_path)?
    };
    let mut m = evaluate_image(&entry.id, &pred, &gt)?;
    m.missing_prediction = missing;
    Ok(m)
}

pub fn evaluate(pred_dir: &Path, gt_root: &Path, report_path: &Path) -> Result<Evaluation, CliError> {
    if !pred_dir.is_dir() {
        return Err(CliError::Input(format!("{}: prediction directory not found", pred_dir.display())));
    }
    let mut report = MetricsReport::default();
    let mut failures = Vec::new();
    for split in Split::ALL {
        let index = ingest_dataset(gt_root, split)?;
        let annotated: Vec<_> = index.entries.iter().filter_map(|e| e.annotation.as_ref().map(|a| (e, a))).collect();
        if annotated.is_empty() {
            continue;
        }
        let rows: Vec<_> = annotated.par_iter().map(|(e, a)| (*e, evaluate_entry(e, a, pred_dir))).collect();
        let mut per_image = Vec::new();
        for (entry, r) in rows {
            match r {
                Ok(m) => per_image.push(m),
                Err(e) => {
                    log::error!("{}: {e}", entry.id);
                    failures.push(Failure { id: entry.id.clone(), error: e.to_string() });
                }
            }
        }
        report.splits.push(SplitReport { split: split.to_string(), aggregate: aggregate(&per_image), per_image });
    }
    if report.splits.is_empty() {
        return Err(CliError::Input(format!("{}: no annotated images", gt_root.display())));
    }
    let json = serde_json::to_vec_pretty(&report).expect("report serializes");
    write_bytes_atomic(report_path, &json)?;
    let table_path = table_path(report_path);
    write_bytes_atomic(&table_path, report.to_table().as_bytes())?;
    Ok(Evaluation { report, failures, table_path })
}

pub fn load_report(path: &Path) -> Result<MetricsReport, CliError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn load_model(path: &Path) -> Result<glandseg::forest::Forest, CliError> {
    load_forest(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}
