//! COCO-format detection datasets.
//!
//! Only the keys needed for detection are interpreted. Everything else in the
//! document (top-level `info`/`licenses`, per-record `area`, `iscrowd`,
//! `segmentation`, ...) is carried in the `extra` maps and written back
//! unchanged.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// Axis-aligned box anchored at its top-left corner, in pixels.
///
/// Serialized as the COCO `[x, y, w, h]` array.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BBoxXYWH {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBoxXYWH {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }
}

impl From<[f64; 4]> for BBoxXYWH {
    fn from([x, y, w, h]: [f64; 4]) -> Self {
        Self { x, y, w, h }
    }
}

/// Whole coordinates are written as JSON integers so integer-box files
/// survive a load/save cycle unchanged.
struct Coord(f64);

impl Serialize for Coord {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        const EXACT: f64 = 9_007_199_254_740_992.0;
        let v = self.0;
        if v.fract() == 0.0 && v.abs() <= EXACT && !(v == 0.0 && v.is_sign_negative()) {
            serializer.serialize_i64(v as i64)
        } else {
            serializer.serialize_f64(v)
        }
    }
}

impl Serialize for BBoxXYWH {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_array().map(Coord).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BBoxXYWH {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        <[f64; 4]>::deserialize(deserializer).map(Self::from)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: BBoxXYWH,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub id: u64,
    pub name: String,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Dataset {
    pub images: Vec<ImageRecord>,
    pub annotations: Vec<Annotation>,
    pub categories: Vec<Category>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl ImageRecord {
    pub fn new(id: u64, file_name: impl Into<String>, width: u32, height: u32) -> Self {
        Self {
            id,
            file_name: file_name.into(),
            width,
            height,
            extra: Map::new(),
        }
    }
}

impl Annotation {
    pub fn new(id: u64, image_id: u64, category_id: u64, bbox: BBoxXYWH) -> Self {
        Self {
            id,
            image_id,
            category_id,
            bbox,
            extra: Map::new(),
        }
    }
}

impl Category {
    pub fn new(id: u64, name: impl Into<String>) -> Self {
        Self {
            id,
            name: name.into(),
            extra: Map::new(),
        }
    }
}

impl Dataset {
    /// Parses a COCO document without checking referential integrity.
    pub fn from_json_slice(bytes: &[u8], origin: &Path) -> Result<Self> {
        let mut de = serde_json::Deserializer::from_slice(bytes);
        serde_path_to_error::deserialize(&mut de).map_err(|err| {
            let key_path = err.path().to_string();
            Error::Malformed {
                path: origin.to_path_buf(),
                key_path,
                message: err.into_inner().to_string(),
            }
        })
    }

    pub fn to_json_vec(&self) -> Vec<u8> {
        // Serializing plain data into a Vec cannot fail.
        serde_json::to_vec_pretty(self).expect("dataset serialization")
    }

    pub fn image_map(&self) -> HashMap<u64, &ImageRecord> {
        self.images.iter().map(|im| (im.id, im)).collect()
    }

    /// Annotations grouped by image id, each group in annotation-id order.
    pub fn annotations_by_image(&self) -> BTreeMap<u64, Vec<&Annotation>> {
        let mut groups: BTreeMap<u64, Vec<&Annotation>> = BTreeMap::new();
        for ann in &self.annotations {
            groups.entry(ann.image_id).or_default().push(ann);
        }
        for group in groups.values_mut() {
            group.sort_by_key(|a| a.id);
        }
        groups
    }
}

/// Reads a COCO document and rejects it if any invariant is violated.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let dataset = load_dataset_unchecked(path)?;
    let report = validate(&dataset);
    if report.is_valid() {
        Ok(dataset)
    } else {
        Err(Error::Invalid(report))
    }
}

/// Reads a COCO document, checking only its shape.
pub fn load_dataset_unchecked(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Dataset::from_json_slice(&bytes, path)
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, dataset.to_json_vec()).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    DuplicateImageId { image_id: u64 },
    DuplicateAnnotationId { annotation_id: u64 },
    DuplicateCategoryId { category_id: u64 },
    EmptyImage { image_id: u64, width: u32, height: u32 },
    UnknownImage { annotation_id: u64, image_id: u64 },
    UnknownCategory { annotation_id: u64, category_id: u64 },
    DegenerateBox { annotation_id: u64, bbox: BBoxXYWH },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateImageId { image_id } => write!(f, "duplicate image id {image_id}"),
            Violation::DuplicateAnnotationId { annotation_id } => {
                write!(f, "duplicate annotation id {annotation_id}")
            }
            Violation::DuplicateCategoryId { category_id } => {
                write!(f, "duplicate category id {category_id}")
            }
            Violation::EmptyImage {
                image_id,
                width,
                height,
            } => write!(f, "image {image_id} has size {width}x{height}"),
            Violation::UnknownImage {
                annotation_id,
                image_id,
            } => write!(
                f,
                "annotation {annotation_id} references missing image {image_id}"
            ),
            Violation::UnknownCategory {
                annotation_id,
                category_id,
            } => write!(
                f,
                "annotation {annotation_id} references missing category {category_id}"
            ),
            Violation::DegenerateBox {
                annotation_id,
                bbox,
            } => write!(
                f,
                "annotation {annotation_id} has degenerate bbox {:?}",
                bbox.to_array()
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.violations.as_slice() {
            [] => write!(f, "no violations"),
            [only] => write!(f, "{only}"),
            [first, rest @ ..] => write!(f, "{first} (and {} more)", rest.len()),
        }
    }
}

/// Lists every invariant violation in `dataset`.
///
/// A repeated id yields one violation per repeat beyond the first.
pub fn validate(dataset: &Dataset) -> ValidationReport {
    let mut violations = Vec::new();

    let mut image_ids = HashSet::new();
    for image in &dataset.images {
        if !image_ids.insert(image.id) {
            violations.push(Violation::DuplicateImageId { image_id: image.id });
        }
        if image.width == 0 || image.height == 0 {
            violations.push(Violation::EmptyImage {
                image_id: image.id,
                width: image.width,
                height: image.height,
            });
        }
    }

    let mut category_ids = HashSet::new();
    for category in &dataset.categories {
        if !category_ids.insert(category.id) {
            violations.push(Violation::DuplicateCategoryId {
                category_id: category.id,
            });
        }
    }

    let mut annotation_ids = HashSet::new();
    for ann in &dataset.annotations {
        if !annotation_ids.insert(ann.id) {
            violations.push(Violation::DuplicateAnnotationId {
                annotation_id: ann.id,
            });
        }
        if !image_ids.contains(&ann.image_id) {
            violations.push(Violation::UnknownImage {
                annotation_id: ann.id,
                image_id: ann.image_id,
            });
        }
        if !category_ids.contains(&ann.category_id) {
            violations.push(Violation::UnknownCategory {
                annotation_id: ann.id,
                category_id: ann.category_id,
            });
        }
        let b = ann.bbox;
        let finite = b.x.is_finite() && b.y.is_finite() && b.w.is_finite() && b.h.is_finite();
        if !finite || !(b.w > 0.0) || !(b.h > 0.0) {
            violations.push(Violation::DegenerateBox {
                annotation_id: ann.id,
                bbox: b,
            });
        }
    }

    ValidationReport { violations }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct IndexEntry {
    pub annotation_id: u64,
    pub image_id: u64,
}

/// Annotations grouped by category, in dataset order within each group.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CategoryIndex {
    groups: BTreeMap<u64, Vec<IndexEntry>>,
}

impl CategoryIndex {
    pub fn get(&self, category_id: u64) -> &[IndexEntry] {
        self.groups
            .get(&category_id)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn contains_category(&self, category_id: u64) -> bool {
        self.groups.contains_key(&category_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, &[IndexEntry])> {
        self.groups.iter().map(|(&k, v)| (k, v.as_slice()))
    }

    pub fn total(&self) -> usize {
        self.groups.values().map(Vec::len).sum()
    }
}

/// Every declared category gets an entry, possibly empty.
pub fn index_by_category(dataset: &Dataset) -> CategoryIndex {
    let mut groups: BTreeMap<u64, Vec<IndexEntry>> = dataset
        .categories
        .iter()
        .map(|c| (c.id, Vec::new()))
        .collect();
    for ann in &dataset.annotations {
        groups.entry(ann.category_id).or_default().push(IndexEntry {
            annotation_id: ann.id,
            image_id: ann.image_id,
        });
    }
    CategoryIndex { groups }
}
