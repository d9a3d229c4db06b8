//! Mix-Paste: every annotated item patch is replaced by a blend of itself
//! and same-category patches cut from other images, under an edge-smoothing
//! mask that keeps the patch border equal to the original.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Component, Path, PathBuf};
use std::sync::Arc;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{index_by_category, Annotation, CategoryIndex, Dataset, ImageRecord, IndexEntry};
use crate::error::{Error, Result};
use crate::raster::{
    blend, crop, crop_rect, load_image, paste, resize, save_image, Patch, PixelRect, Raster,
    WeightField,
};
use crate::stream::{substream, Domain};

/// Distribution of the interior weight of the original patch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum LambdaDist {
    Beta { a: f64, b: f64 },
    /// Degenerate distribution; every mix uses this value.
    Fixed { value: f64 },
}

impl Default for LambdaDist {
    fn default() -> Self {
        LambdaDist::Beta { a: 1.0, b: 1.0 }
    }
}

impl LambdaDist {
    fn validate(&self) -> Result<()> {
        match *self {
            LambdaDist::Beta { a, b } if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) => {
                Err(Error::InvalidParameter(format!(
                    "Beta({a}, {b}) needs positive parameters"
                )))
            }
            LambdaDist::Fixed { value } if !(0.0..=1.0).contains(&value) => Err(
                Error::InvalidParameter(format!("fixed lambda {value} outside [0, 1]")),
            ),
            _ => Ok(()),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        match *self {
            LambdaDist::Beta { a, b } => {
                let dist = Beta::new(a, b).map_err(|e| Error::InvalidParameter(e.to_string()))?;
                Ok(dist.sample(rng).clamp(0.0, 1.0))
            }
            LambdaDist::Fixed { value } => Ok(value),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixConfig {
    /// Patches per mix, the original included.
    pub k: usize,
    /// Per-image probability of being augmented.
    pub apply_prob: f64,
    /// Width of the smoothing band as a fraction of the patch width.
    pub beta_frac: f64,
    pub lambda: LambdaDist,
    pub seed: u64,
}

impl Default for MixConfig {
    fn default() -> Self {
        Self {
            k: 2,
            apply_prob: 0.6,
            beta_frac: 0.10,
            lambda: LambdaDist::default(),
            seed: 0,
        }
    }
}

impl MixConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidParameter(format!(
                "k = {} must be at least 2",
                self.k
            )));
        }
        if !(0.0..=1.0).contains(&self.apply_prob) {
            return Err(Error::InvalidParameter(format!(
                "apply_prob = {} is not a probability",
                self.apply_prob
            )));
        }
        if !(self.beta_frac > 0.0 && self.beta_frac <= 0.5) {
            return Err(Error::InvalidParameter(format!(
                "beta_frac = {} must lie in (0, 0.5]",
                self.beta_frac
            )));
        }
        self.lambda.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum SkipReason {
    /// The category has no annotation on any other image.
    NoCrossImagePeer,
    TooFewPeers { needed: usize, available: usize },
    TargetOutsideImage,
    PeerUnavailable { annotation_id: u64, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixRecord {
    pub image_id: u64,
    pub annotation_id: u64,
    pub category_id: u64,
    pub peers: Vec<u64>,
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub skipped: Option<SkipReason>,
}

/// Draws `k - 1` distinct annotations of the target's category, none of them
/// on the target's image. Several peers may share one image.
pub fn sample_peers<R: Rng + ?Sized>(
    index: &CategoryIndex,
    target: &Annotation,
    k: usize,
    rng: &mut R,
) -> std::result::Result<Vec<IndexEntry>, SkipReason> {
    let needed = k.saturating_sub(1);
    let eligible: Vec<IndexEntry> = index
        .get(target.category_id)
        .iter()
        .filter(|e| e.image_id != target.image_id)
        .copied()
        .collect();
    if eligible.is_empty() && needed > 0 {
        return Err(SkipReason::NoCrossImagePeer);
    }
    if eligible.len() < needed {
        return Err(SkipReason::TooFewPeers {
            needed,
            available: eligible.len(),
        });
    }
    Ok(index::sample(rng, eligible.len(), needed)
        .into_iter()
        .map(|i| eligible[i])
        .collect())
}

/// Edge-smoothing mask over a `w` x `h` patch.
///
/// With `d` the pixel distance to the nearest patch edge and `t = beta_frac * w`,
/// the weight is `1 - (1 - lambda) * d / t` for `d <= t` and `lambda` beyond.
/// The band is measured against the width only, for tall patches too.
pub fn edge_mask(w: u32, h: u32, beta_frac: f64, lambda: f64) -> Result<WeightField> {
    if w == 0 || h == 0 {
        return Err(Error::InvalidParameter(format!("mask size {w}x{h}")));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidParameter(format!(
            "lambda {lambda} outside [0, 1]"
        )));
    }
    let t = beta_frac * w as f64;
    let mut weights = Vec::with_capacity(w as usize * h as usize);
    for j in 0..h {
        let dy = j.min(h - 1 - j);
        for i in 0..w {
            let d = i.min(w - 1 - i).min(dy) as f64;
            let alpha = if d <= t {
                1.0 - (1.0 - lambda) * (d / t)
            } else {
                lambda
            };
            weights.push(alpha.clamp(lambda, 1.0));
        }
    }
    WeightField::new(w, h, weights)
}

/// Weight fields for the original and each of `peers` patches:
/// `alpha` and `(1 - alpha) / peers` respectively.
pub fn mix_weights(alpha: &WeightField, peers: usize) -> Result<Vec<WeightField>> {
    let share = alpha.map(|a| (1.0 - a) / peers as f64)?;
    let mut fields = Vec::with_capacity(peers + 1);
    fields.push(alpha.clone());
    fields.extend(std::iter::repeat_n(share, peers));
    Ok(fields)
}

/// Blends `original` with `peers` for a given interior weight. Peers are
/// resized to the original's size; the result keeps the original's origin.
pub fn mix_with_lambda(
    original: &Patch,
    peers: &[Patch],
    beta_frac: f64,
    lambda: f64,
) -> Result<Patch> {
    if peers.is_empty() {
        return Err(Error::InvalidParameter("mix needs at least one peer".into()));
    }
    let (w, h) = original.dims();
    let alpha = edge_mask(w, h, beta_frac, lambda)?;
    let weights = mix_weights(&alpha, peers.len())?;
    let mut layers = Vec::with_capacity(peers.len() + 1);
    layers.push(original.clone());
    for peer in peers {
        layers.push(resize(peer, w, h)?);
    }
    blend(&layers, &weights)
}

/// Draws the interior weight from `cfg.lambda`, then mixes.
pub fn mix_patches<R: Rng + ?Sized>(
    original: &Patch,
    peers: &[Patch],
    cfg: &MixConfig,
    rng: &mut R,
) -> Result<(Patch, f64)> {
    let lambda = cfg.lambda.sample(rng)?;
    let mixed = mix_with_lambda(original, peers, cfg.beta_frac, lambda)?;
    Ok((mixed, lambda))
}

/// `1 - p^k`: chance that at least one of `k` independently noisy items is clean.
pub fn presence_probability(p_noise: f64, k: u32) -> f64 {
    1.0 - p_noise.powi(k as i32)
}

/// Read access to source images by image id.
pub trait ImageSource: Sync {
    fn image(&self, image_id: u64) -> Result<Arc<Raster>>;
}

impl ImageSource for HashMap<u64, Arc<Raster>> {
    fn image(&self, image_id: u64) -> Result<Arc<Raster>> {
        self.get(&image_id).cloned().ok_or_else(|| {
            Error::InvalidParameter(format!("no pixels for image {image_id}"))
        })
    }
}

/// Images decoded on demand from `root/<file_name>`.
pub struct DirImageSource {
    root: PathBuf,
    files: HashMap<u64, String>,
}

impl DirImageSource {
    pub fn new(root: impl Into<PathBuf>, dataset: &Dataset) -> Self {
        Self {
            root: root.into(),
            files: dataset
                .images
                .iter()
                .map(|im| (im.id, im.file_name.clone()))
                .collect(),
        }
    }

    fn path_of(&self, image_id: u64) -> Result<PathBuf> {
        let name = self.files.get(&image_id).ok_or_else(|| {
            Error::InvalidParameter(format!("image {image_id} is not in the dataset"))
        })?;
        Ok(self.root.join(relative_path(name)?))
    }
}

impl ImageSource for DirImageSource {
    fn image(&self, image_id: u64) -> Result<Arc<Raster>> {
        load_image(self.path_of(image_id)?).map(Arc::new)
    }
}

fn relative_path(file_name: &str) -> Result<&Path> {
    let path = Path::new(file_name);
    let ok = path.components().all(|c| matches!(c, Component::Normal(_) | Component::CurDir));
    if ok && !file_name.is_empty() {
        Ok(path)
    } else {
        Err(Error::InvalidParameter(format!(
            "file_name `{file_name}` must be a relative path inside the image root"
        )))
    }
}

/// Everything needed to find and cut peer patches.
pub struct PeerCatalog<'a> {
    pub index: CategoryIndex,
    annotations: HashMap<u64, &'a Annotation>,
}

impl<'a> PeerCatalog<'a> {
    pub fn new(dataset: &'a Dataset) -> Self {
        Self {
            index: index_by_category(dataset),
            annotations: dataset.annotations.iter().map(|a| (a.id, a)).collect(),
        }
    }

    pub fn annotation(&self, id: u64) -> Option<&'a Annotation> {
        self.annotations.get(&id).copied()
    }
}

fn peer_patch(catalog: &PeerCatalog<'_>, source: &dyn ImageSource, entry: &IndexEntry) -> Result<Patch> {
    let ann = catalog.annotation(entry.annotation_id).ok_or_else(|| {
        Error::InvalidParameter(format!("annotation {} missing", entry.annotation_id))
    })?;
    let pixels = source.image(entry.image_id)?;
    crop(&pixels, &ann.bbox)
}

/// Mixes every annotated item of one image, in annotation-id order, writing
/// each result over the item's enclosing pixel rectangle. Later items see
/// the pixels written by earlier ones. Peers are always cut from the
/// unmodified source images. Labels and boxes are never touched.
pub fn apply_to_image(
    img: &Raster,
    image_id: u64,
    anns: &[&Annotation],
    catalog: &PeerCatalog<'_>,
    source: &dyn ImageSource,
    cfg: &MixConfig,
) -> Result<(Raster, Vec<MixRecord>)> {
    cfg.validate()?;
    let mut ordered: Vec<&Annotation> = anns.to_vec();
    ordered.sort_by_key(|a| a.id);

    let mut working = img.clone();
    let mut records = Vec::with_capacity(ordered.len());
    for ann in ordered {
        let mut record = MixRecord {
            image_id,
            annotation_id: ann.id,
            category_id: ann.category_id,
            peers: Vec::new(),
            lambda: None,
            skipped: None,
        };
        match mix_item(&mut working, image_id, ann, catalog, source, cfg, &mut record) {
            Ok(()) => {}
            Err(reason) => record.skipped = Some(reason),
        }
        records.push(record);
    }
    Ok((working, records))
}

fn mix_item(
    working: &mut Raster,
    image_id: u64,
    ann: &Annotation,
    catalog: &PeerCatalog<'_>,
    source: &dyn ImageSource,
    cfg: &MixConfig,
    record: &mut MixRecord,
) -> std::result::Result<(), SkipReason> {
    let mut rng = substream(cfg.seed, Domain::MixItem, &[image_id, ann.id]);
    let rect = match (ann.bbox.w > 0.0 && ann.bbox.h > 0.0)
        .then(|| PixelRect::enclosing(&ann.bbox, working.width(), working.height()))
        .flatten()
    {
        Some(rect) => rect,
        None => return Err(SkipReason::TargetOutsideImage),
    };
    let entries = sample_peers(&catalog.index, ann, cfg.k, &mut rng)?;
    record.peers = entries.iter().map(|e| e.annotation_id).collect();

    let peers = entries
        .iter()
        .map(|e| {
            peer_patch(catalog, source, e).map_err(|err| SkipReason::PeerUnavailable {
                annotation_id: e.annotation_id,
                message: err.to_string(),
            })
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;

    let original = crop_rect(working, rect);
    let internal = |err: Error| SkipReason::PeerUnavailable {
        annotation_id: ann.id,
        message: err.to_string(),
    };
    let (mixed, lambda) = mix_patches(&original, &peers, cfg, &mut rng).map_err(internal)?;
    paste(working, &mixed).map_err(internal)?;
    record.lambda = Some(lambda);
    Ok(())
}

/// Whether image `image_id` is augmented under `cfg`.
pub fn is_selected(cfg: &MixConfig, image_id: u64) -> bool {
    let mut rng = substream(cfg.seed, Domain::ImageSelect, &[image_id]);
    rng.random::<f64>() < cfg.apply_prob
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct CategoryCounts {
    pub mixed: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct LambdaStats {
    pub count: usize,
    pub mean: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageFailure {
    pub image_id: u64,
    pub file_name: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AugmentReport {
    pub seed: u64,
    pub images_total: usize,
    pub images_selected: usize,
    pub selected_fraction: f64,
    pub selected_images: Vec<u64>,
    pub items_mixed: usize,
    pub items_skipped: usize,
    pub per_category: BTreeMap<u64, CategoryCounts>,
    pub lambda: LambdaStats,
    pub records: Vec<MixRecord>,
    pub failures: Vec<ImageFailure>,
}

#[derive(Debug)]
pub struct AugmentOutput {
    /// Input document with `file_name`s pointing at the written images.
    pub dataset: Dataset,
    pub report: AugmentReport,
}

struct ImageOutcome {
    image_id: u64,
    selected: bool,
    file_name: String,
    records: Vec<MixRecord>,
    failure: Option<String>,
}

/// Augments a whole dataset. Selected images are mixed and written as PNG
/// under `out_images`; the others are copied byte for byte. The output is
/// independent of `workers`.
pub fn augment_dataset(
    dataset: &Dataset,
    image_root: &Path,
    out_images: &Path,
    cfg: &MixConfig,
    workers: usize,
) -> Result<AugmentOutput> {
    cfg.validate()?;
    fs::create_dir_all(out_images).map_err(|e| Error::io(out_images, e))?;

    let catalog = PeerCatalog::new(dataset);
    let source = DirImageSource::new(image_root, dataset);
    let by_image = dataset.annotations_by_image();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;

    let outcomes: Vec<ImageOutcome> = pool.install(|| {
        dataset
            .images
            .par_iter()
            .map(|im| {
                let anns = by_image.get(&im.id).map(Vec::as_slice).unwrap_or(&[]);
                process_image(im, anns, image_root, out_images, &catalog, &source, cfg)
            })
            .collect()
    });

    let mut out = dataset.clone();
    for (record, outcome) in out.images.iter_mut().zip(&outcomes) {
        record.file_name.clone_from(&outcome.file_name);
    }
    let report = build_report(dataset, cfg, outcomes);
    Ok(AugmentOutput {
        dataset: out,
        report,
    })
}

fn process_image(
    im: &ImageRecord,
    anns: &[&Annotation],
    image_root: &Path,
    out_images: &Path,
    catalog: &PeerCatalog<'_>,
    source: &DirImageSource,
    cfg: &MixConfig,
) -> ImageOutcome {
    let selected = is_selected(cfg, im.id);
    let mut outcome = ImageOutcome {
        image_id: im.id,
        selected,
        file_name: im.file_name.clone(),
        records: Vec::new(),
        failure: None,
    };
    let result = (|| -> Result<()> {
        let rel = relative_path(&im.file_name)?;
        let src = image_root.join(rel);
        if !selected {
            let dst = out_images.join(rel);
            create_parent(&dst)?;
            fs::copy(&src, &dst).map_err(|e| Error::io(&src, e))?;
            return Ok(());
        }
        let pixels = source.image(im.id)?;
        let (mixed, records) = apply_to_image(&pixels, im.id, anns, catalog, source, cfg)?;
        let rel_out = rel.with_extension("png");
        let dst = out_images.join(&rel_out);
        create_parent(&dst)?;
        save_image(&mixed, &dst)?;
        outcome.records = records;
        outcome.file_name = rel_out.to_string_lossy().into_owned();
        Ok(())
    })();
    if let Err(err) = result {
        outcome.failure = Some(err.to_string());
    }
    outcome
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(parent) => fs::create_dir_all(parent).map_err(|e| Error::io(parent, e)),
        None => Ok(()),
    }
}

fn build_report(dataset: &Dataset, cfg: &MixConfig, mut outcomes: Vec<ImageOutcome>) -> AugmentReport {
    outcomes.sort_by_key(|o| o.image_id);
    let mut per_category: BTreeMap<u64, CategoryCounts> = dataset
        .categories
        .iter()
        .map(|c| (c.id, CategoryCounts::default()))
        .collect();
    let mut records = Vec::new();
    let mut selected_images = Vec::new();
    let mut failures = Vec::new();
    for outcome in outcomes {
        if outcome.selected {
            selected_images.push(outcome.image_id);
        }
        if let Some(message) = outcome.failure {
            failures.push(ImageFailure {
                image_id: outcome.image_id,
                file_name: outcome.file_name.clone(),
                message,
            });
        }
        records.extend(outcome.records);
    }

    let mut lambdas = Vec::new();
    for r in &records {
        let counts = per_category.entry(r.category_id).or_default();
        match r.lambda {
            Some(l) if r.skipped.is_none() => {
                counts.mixed += 1;
                lambdas.push(l);
            }
            _ => counts.skipped += 1,
        }
    }
    let lambda = LambdaStats {
        count: lambdas.len(),
        mean: (!lambdas.is_empty()).then(|| lambdas.iter().sum::<f64>() / lambdas.len() as f64),
        min: lambdas.iter().copied().reduce(f64::min),
        max: lambdas.iter().copied().reduce(f64::max),
    };
    let images_total = dataset.images.len();
    let images_selected = selected_images.len();
    AugmentReport {
        seed: cfg.seed,
        images_total,
        images_selected,
        selected_fraction: if images_total == 0 {
            0.0
        } else {
            images_selected as f64 / images_total as f64
        },
        selected_images,
        items_mixed: lambdas.len(),
        items_skipped: records.len() - lambdas.len(),
        per_category,
        lambda,
        records,
        failures,
    }
}
