//! Dataset tooling for detector training under noisy annotations.
//!
//! * [`dataset`]: COCO documents, validation and per-category indexing.
//! * [`raster`]: RGB buffers, cropping, bilinear resizing, weighted blending.
//! * [`noise`]: controlled category and box corruption.
//! * [`mix_paste`]: same-category patch mixing and dataset augmentation.
//! * [`lls`]: prediction partitioning, suppressed loss and small-loss baselines.
//! * [`probe`]: suspect-box estimation and presence simulation.

// `!(x > 0.0)` style guards are used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod error;
pub mod lls;
pub mod mix_paste;
pub mod noise;
pub mod probe;
pub mod raster;
pub mod stream;

pub use dataset::{
    index_by_category, load_dataset, load_dataset_unchecked, save_dataset, validate, Annotation,
    BBoxXYWH, Category, CategoryIndex, Dataset, ImageRecord, IndexEntry, ValidationReport,
    Violation,
};
pub use error::{Error, ErrorKind, Result};
pub use lls::{
    iou, keep_fraction_schedule, masked_loss, partition_outcomes, small_loss_select,
    small_loss_select_grouped, Detection, Label, LossBreakdown, Outcome, OutcomePartition,
    Prediction, SmallLossVariant,
};
pub use mix_paste::{
    apply_to_image, augment_dataset, edge_mask, mix_patches, presence_probability, sample_peers,
    AugmentReport, LambdaDist, MixConfig, MixRecord, SkipReason,
};
pub use noise::{
    clamp_box, corrupt_labels, inject_noise, perturb_boxes, BoxModel, ChangeLog, ChangeRecord,
    NoiseSpec,
};
pub use probe::{monte_carlo_presence, suspect_boxes, PresenceEstimate, SuspectReport};
pub use raster::{Patch, Raster, WeightField};
