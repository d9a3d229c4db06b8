//! Noise-rate estimation from an external class-agnostic detector, and a
//! simulation check of the clean-item presence probability.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rand::Rng;
use serde::Serialize;

use crate::dataset::Dataset;
use crate::lls::{iou, Detection};

pub const DEFAULT_IOU_CUTOFF: f64 = 0.70;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Suspect {
    pub annotation_id: u64,
    pub image_id: u64,
    pub category_id: u64,
    pub best_iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryNoise {
    pub category_id: u64,
    pub name: String,
    pub total: usize,
    pub suspects: usize,
    pub rate: f64,
}

impl CategoryNoise {
    fn new(category_id: u64, name: String, total: usize, suspects: usize) -> Self {
        Self {
            category_id,
            name,
            total,
            suspects,
            rate: ratio(suspects, total),
        }
    }

    /// Rate in percent, rounded to two decimals.
    pub fn rate_percent(&self) -> f64 {
        (self.rate * 10_000.0).round() / 100.0
    }
}

fn ratio(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuspectReport {
    pub iou_cutoff: f64,
    pub categories: Vec<CategoryNoise>,
    pub total: CategoryNoise,
    /// Review list, ascending by annotation id.
    pub suspects: Vec<Suspect>,
}

impl SuspectReport {
    /// Plain-text table: category, total samples, noise samples, noise rate.
    pub fn to_table(&self) -> String {
        let header = ["Category", "Total Samples", "Noise Samples", "Noise Rate"];
        let rows: Vec<[String; 4]> = self
            .categories
            .iter()
            .chain(std::iter::once(&self.total))
            .map(|c| {
                [
                    c.name.clone(),
                    c.total.to_string(),
                    c.suspects.to_string(),
                    format!("{:.2}%", c.rate * 100.0),
                ]
            })
            .collect();
        let mut widths = header.map(str::len);
        for row in &rows {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.len());
            }
        }
        let mut out = String::new();
        let mut line = |cells: [&str; 4]| {
            let _ = writeln!(
                out,
                "{:<w0$}  {:>w1$}  {:>w2$}  {:>w3$}",
                cells[0],
                cells[1],
                cells[2],
                cells[3],
                w0 = widths[0],
                w1 = widths[1],
                w2 = widths[2],
                w3 = widths[3]
            );
        };
        line(header);
        for row in &rows {
            line([&row[0], &row[1], &row[2], &row[3]]);
        }
        out
    }
}

/// Flags every ground-truth box whose best class-agnostic IoU against the
/// detections on its image falls below `iou_cutoff`.
pub fn suspect_boxes(detections: &[Detection], gts: &Dataset, iou_cutoff: f64) -> SuspectReport {
    let mut by_image: HashMap<u64, Vec<&Detection>> = HashMap::new();
    for d in detections {
        by_image.entry(d.image_id).or_default().push(d);
    }

    let mut counts: BTreeMap<u64, (usize, usize)> =
        gts.categories.iter().map(|c| (c.id, (0, 0))).collect();
    let mut suspects = Vec::new();
    for ann in &gts.annotations {
        let best = by_image
            .get(&ann.image_id)
            .map(|dets| {
                dets.iter()
                    .map(|d| iou(&d.bbox, &ann.bbox))
                    .fold(0.0, f64::max)
            })
            .unwrap_or(0.0);
        let entry = counts.entry(ann.category_id).or_default();
        entry.0 += 1;
        if best < iou_cutoff {
            entry.1 += 1;
            suspects.push(Suspect {
                annotation_id: ann.id,
                image_id: ann.image_id,
                category_id: ann.category_id,
                best_iou: best,
            });
        }
    }
    suspects.sort_by_key(|s| s.annotation_id);

    let names: HashMap<u64, &str> = gts
        .categories
        .iter()
        .map(|c| (c.id, c.name.as_str()))
        .collect();
    // Keep the document's category order for the table.
    let mut order: Vec<u64> = gts.categories.iter().map(|c| c.id).collect();
    order.extend(counts.keys().filter(|k| !names.contains_key(k)));
    order.dedup();
    let mut seen = std::collections::HashSet::new();
    let categories: Vec<CategoryNoise> = order
        .into_iter()
        .filter(|id| seen.insert(*id))
        .map(|id| {
            let (total, bad) = counts.get(&id).copied().unwrap_or_default();
            let name = names
                .get(&id)
                .map(|s| s.to_string())
                .unwrap_or_else(|| format!("category {id}"));
            CategoryNoise::new(id, name, total, bad)
        })
        .collect();
    let total = CategoryNoise::new(
        0,
        "Total".into(),
        categories.iter().map(|c| c.total).sum(),
        categories.iter().map(|c| c.suspects).sum(),
    );
    SuspectReport {
        iou_cutoff,
        categories,
        total,
        suspects,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PresenceEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub trials: u64,
}

/// Simulates `k` independent corruption flags with probability `p_noise` per
/// trial and reports the fraction of trials with at least one clean item.
pub fn monte_carlo_presence<R: Rng + ?Sized>(
    p_noise: f64,
    k: u32,
    trials: u64,
    rng: &mut R,
) -> PresenceEstimate {
    let trials = trials.max(1);
    let mut hits = 0u64;
    for _ in 0..trials {
        // Every flag is drawn so the stream advances identically per trial.
        let mut clean = false;
        for _ in 0..k {
            clean |= !(rng.random::<f64>() < p_noise);
        }
        hits += clean as u64;
    }
    let estimate = hits as f64 / trials as f64;
    PresenceEstimate {
        estimate,
        std_error: (estimate * (1.0 - estimate) / trials as f64).sqrt(),
        trials,
    }
}
