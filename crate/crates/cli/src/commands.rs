use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use mixpaste_core::lls::{load_detections, DEFAULT_IOU_THRESHOLD};
use mixpaste_core::noise::{NoiseSummary, DEFAULT_DELTA};
use mixpaste_core::probe::DEFAULT_IOU_CUTOFF;
use mixpaste_core::{
    augment_dataset, load_dataset, load_dataset_unchecked, masked_loss,
    partition_outcomes, save_dataset, suspect_boxes, validate as validate_dataset, Annotation,
    BoxModel, Detection, LambdaDist, LossBreakdown, MixConfig, NoiseSpec, OutcomePartition,
    Prediction,
};
use serde::Serialize;

use crate::config::Config;
use crate::{
    AugmentArgs, BoxModelArg, CliError, InjectNoiseArgs, PartitionArgs, ProbeArgs, ValidateArgs,
};

pub const AUGMENTED_IMAGES: &str = "images";
pub const AUGMENTED_ANNOTATIONS: &str = "annotations.json";
pub const AUGMENT_REPORT: &str = "report.json";

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), CliError> {
    let bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn emit(out: &mut dyn Write, text: impl std::fmt::Display) -> Result<(), CliError> {
    writeln!(out, "{text}").map_err(|e| CliError::Io(format!("stdout: {e}")))
}

pub fn inject_noise(args: InjectNoiseArgs, cfg: &Config, out: &mut dyn Write) -> Result<(), CliError> {
    let ann: PathBuf = cfg.required(args.ann, "ann")?;
    let out_path: PathBuf = cfg.required(args.out, "out")?;
    let changelog = cfg
        .pick(args.changelog, "changelog")?
        .unwrap_or_else(|| out_path.with_extension("changes.json"));
    let box_model = match cfg.or(args.box_model, "box-model", BoxModelArg::Uniform)? {
        BoxModelArg::Uniform => BoxModel::Uniform {
            delta: cfg.or(args.delta, "delta", DEFAULT_DELTA)?,
        },
        BoxModelArg::Gaussian => BoxModel::Gaussian {
            mu: cfg.or(args.mu, "mu", 0.0)?,
            sigma: cfg.or(args.sigma, "sigma", 0.1)?,
        },
    };
    let spec = NoiseSpec {
        p_c: cfg.or(args.pc, "pc", 0.6)?,
        p_b: cfg.or(args.pb, "pb", 0.6)?,
        box_model,
        seed: cfg.or(args.seed, "seed", 0)?,
    };
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let dataset = load_dataset(&ann)?;
    let (noisy, log) = mixpaste_core::inject_noise(&dataset, &spec)?;
    save_dataset(&noisy, &out_path)?;
    write_json(&log, &changelog)?;

    let s = NoiseSummary::new(dataset.annotations.len(), &log);
    emit(
        out,
        format_args!(
            "annotations: {}\nlabel changes: {} ({:.4})\nbox changes: {} ({:.4})",
            s.annotations, s.label_changes, s.label_rate, s.box_changes, s.box_rate
        ),
    )
}

pub fn augment(args: AugmentArgs, cfg: &Config, out: &mut dyn Write) -> Result<(), CliError> {
    let ann: PathBuf = cfg.required(args.ann, "ann")?;
    let images: PathBuf = cfg.required(args.images, "images")?;
    let out_root: PathBuf = cfg.required(args.out, "out")?;
    let defaults = MixConfig::default();
    let mix = MixConfig {
        k: cfg.or(args.k, "k", defaults.k)?,
        apply_prob: cfg.or(args.apply_prob, "apply-prob", defaults.apply_prob)?,
        beta_frac: cfg.or(args.beta_frac, "beta-frac", defaults.beta_frac)?,
        lambda: LambdaDist::Beta {
            a: cfg.or(args.lambda_a, "lambda-a", 1.0)?,
            b: cfg.or(args.lambda_b, "lambda-b", 1.0)?,
        },
        seed: cfg.or(args.seed, "seed", 0)?,
    };
    mix.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let workers = cfg.or(
        args.workers,
        "workers",
        std::thread::available_parallelism().map_or(1, |n| n.get()),
    )?;
    if workers == 0 {
        return Err(CliError::Usage("--workers must be at least 1".into()));
    }

    let dataset = load_dataset(&ann)?;
    fs::create_dir_all(&out_root).map_err(|e| io_err(&out_root, e))?;
    let result = augment_dataset(
        &dataset,
        &images,
        &out_root.join(AUGMENTED_IMAGES),
        &mix,
        workers,
    )?;
    save_dataset(&result.dataset, out_root.join(AUGMENTED_ANNOTATIONS))?;
    write_json(&result.report, &out_root.join(AUGMENT_REPORT))?;

    let r = &result.report;
    for failure in &r.failures {
        eprintln!("mixpaste: image {} ({}): {}", failure.image_id, failure.file_name, failure.message);
    }
    emit(
        out,
        format_args!(
            "images: {} selected of {} ({:.4})\nitems mixed: {}, skipped: {}\nimage failures: {}",
            r.images_selected,
            r.images_total,
            r.selected_fraction,
            r.items_mixed,
            r.items_skipped,
            r.failures.len()
        ),
    )
}

#[derive(Debug, Serialize)]
struct ImagePartition {
    image_id: u64,
    /// Positions of this image's records in the detections file.
    detections: Vec<usize>,
    partition: OutcomePartition,
    loss: LossBreakdown,
}

#[derive(Debug, Serialize)]
struct PartitionOutput {
    iou_thr: f64,
    images: Vec<ImagePartition>,
}

/// Partitions detections image by image; indices in the result refer to
/// positions in `detections`.
fn partition_by_image(
    gts: &[Annotation],
    detections: &[Detection],
    iou_thr: f64,
    l_bbox: f64,
) -> Vec<ImagePartition> {
    let mut gt_by_image: BTreeMap<u64, Vec<Annotation>> = BTreeMap::new();
    for a in gts {
        gt_by_image.entry(a.image_id).or_default().push(a.clone());
    }
    let mut det_by_image: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, d) in detections.iter().enumerate() {
        det_by_image.entry(d.image_id).or_default().push(i);
    }
    let mut ids: Vec<u64> = gt_by_image.keys().chain(det_by_image.keys()).copied().collect();
    ids.sort_unstable();
    ids.dedup();

    ids.into_iter()
        .map(|image_id| {
            let global = det_by_image.remove(&image_id).unwrap_or_default();
            let preds: Vec<Prediction> = global.iter().map(|&i| detections[i].prediction()).collect();
            let gts = gt_by_image.get(&image_id).map(Vec::as_slice).unwrap_or(&[]);
            let local = partition_outcomes(&preds, gts, iou_thr);
            let loss = masked_loss(&preds, &local, l_bbox);
            let to_global = |v: &[usize]| v.iter().map(|&i| global[i]).collect::<Vec<_>>();
            ImagePartition {
                image_id,
                partition: OutcomePartition {
                    neg: to_global(&local.neg),
                    fb: to_global(&local.fb),
                    pos: to_global(&local.pos),
                    pp: to_global(&local.pp),
                },
                detections: global,
                loss,
            }
        })
        .collect()
}

pub fn partition(args: PartitionArgs, cfg: &Config, out: &mut dyn Write) -> Result<(), CliError> {
    let ann: PathBuf = cfg.required(args.ann, "ann")?;
    let det_path: PathBuf = cfg.required(args.detections, "detections")?;
    let iou_thr = cfg.or(args.iou_thr, "iou-thr", DEFAULT_IOU_THRESHOLD)?;
    if !(iou_thr > 0.0 && iou_thr < 1.0) {
        return Err(CliError::Usage(format!("--iou-thr {iou_thr} must lie in (0, 1)")));
    }
    let l_bbox = cfg.or(args.l_bbox, "l-bbox", 0.0)?;
    let gts = load_dataset(&ann)?;
    let detections = load_detections(&det_path)?;
    let result = PartitionOutput {
        iou_thr,
        images: partition_by_image(&gts.annotations, &detections, iou_thr, l_bbox),
    };
    match cfg.pick(args.out, "out")? {
        Some(path) => write_json(&result, &path),
        None => emit(
            out,
            serde_json::to_string_pretty(&result).map_err(|e| CliError::Data(e.to_string()))?,
        ),
    }
}

pub fn probe(args: ProbeArgs, cfg: &Config, out: &mut dyn Write) -> Result<(), CliError> {
    let ann: PathBuf = cfg.required(args.ann, "ann")?;
    let det_path: PathBuf = cfg.required(args.detections, "detections")?;
    let cutoff = cfg.or(args.iou_cutoff, "iou-cutoff", DEFAULT_IOU_CUTOFF)?;
    if !(cutoff > 0.0 && cutoff < 1.0) {
        return Err(CliError::Usage(format!("--iou-cutoff {cutoff} must lie in (0, 1)")));
    }
    let gts = load_dataset(&ann)?;
    let detections = load_detections(&det_path)?;
    let report = suspect_boxes(&detections, &gts, cutoff);
    let table = report.to_table();
    if let Some(path) = cfg.pick::<PathBuf>(args.out, "out")? {
        write_json(&report, &path)?;
    }
    if let Some(path) = cfg.pick::<PathBuf>(args.table, "table")? {
        fs::write(&path, &table).map_err(|e| io_err(&path, e))?;
    }
    write!(out, "{table}").map_err(|e| CliError::Io(format!("stdout: {e}")))
}

pub fn validate(args: ValidateArgs, cfg: &Config, out: &mut dyn Write) -> Result<(), CliError> {
    let ann: PathBuf = cfg.required(args.ann, "ann")?;
    let dataset = load_dataset_unchecked(&ann)?;
    let report = validate_dataset(&dataset);
    if report.is_valid() {
        return emit(
            out,
            format_args!(
                "ok: {} images, {} annotations, {} categories",
                dataset.images.len(),
                dataset.annotations.len(),
                dataset.categories.len()
            ),
        );
    }
    for v in &report.violations {
        emit(out, v)?;
    }
    Err(CliError::Data(format!(
        "{} violation(s) in {}",
        report.violations.len(),
        ann.display()
    )))
}
