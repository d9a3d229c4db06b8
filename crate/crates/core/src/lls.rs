//! Item-based large-loss suppression.
//!
//! Predictions are split by their best-matching ground truth into
//! unmatched (`neg`), matched-as-background (`fb`), matched with the right
//! label (`pos`) and matched with a different foreground label (`pp`). The
//! classification loss of `pp` is dropped.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dataset::{Annotation, BBoxXYWH};
use crate::error::{Error, Result as CoreResult};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

/// IoU of two boxes; 0 when the union is empty.
pub fn iou(a: &BBoxXYWH, b: &BBoxXYWH) -> f64 {
    let iw = (a.right().min(b.right()) - a.x.max(b.x)).max(0.0);
    let ih = (a.bottom().min(b.bottom()) - a.y.max(b.y)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union > 0.0 && inter > 0.0 {
        (inter / union).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Predicted class. In JSON a category id, or `"background"` / `null`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Background,
    Category(u64),
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Label::Background => s.serialize_str("background"),
            Label::Category(id) => s.serialize_u64(*id),
        }
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct LabelVisitor;

        impl<'de> Visitor<'de> for LabelVisitor {
            type Value = Label;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a category id, \"background\" or null")
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Label, E> {
                Ok(Label::Category(v))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Label, E> {
                u64::try_from(v)
                    .map(Label::Category)
                    .map_err(|_| E::custom(format!("negative category id {v}")))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Label, E> {
                if v.eq_ignore_ascii_case("background") {
                    Ok(Label::Background)
                } else {
                    Err(E::invalid_value(de::Unexpected::Str(v), &self))
                }
            }

            fn visit_unit<E: de::Error>(self) -> Result<Label, E> {
                Ok(Label::Background)
            }

            fn visit_none<E: de::Error>(self) -> Result<Label, E> {
                Ok(Label::Background)
            }
        }

        d.deserialize_any(LabelVisitor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub bbox: BBoxXYWH,
    pub label: Label,
    pub score: f64,
    /// Classification loss from the caller's criterion.
    pub cls_loss: f64,
}

/// One record of a detections file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: u64,
    pub bbox: BBoxXYWH,
    pub label: Label,
    pub score: f64,
    #[serde(default)]
    pub cls_loss: f64,
}

impl Detection {
    pub fn prediction(&self) -> Prediction {
        Prediction {
            bbox: self.bbox,
            label: self.label,
            score: self.score,
            cls_loss: self.cls_loss,
        }
    }
}

/// Reads a JSON array of detection records.
pub fn load_detections(path: impl AsRef<Path>) -> CoreResult<Vec<Detection>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut de = serde_json::Deserializer::from_slice(&bytes);
    serde_path_to_error::deserialize(&mut de).map_err(|err| Error::Malformed {
        path: path.to_path_buf(),
        key_path: err.path().to_string(),
        message: err.into_inner().to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Neg,
    Fb,
    Pos,
    Pp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GtMatch {
    pub annotation_id: u64,
    pub iou: f64,
}

/// Ground truth with the highest IoU against `bbox`; ties go to the lowest
/// annotation id.
pub fn best_match(bbox: &BBoxXYWH, gts: &[Annotation]) -> Option<GtMatch> {
    let mut best: Option<(GtMatch, u64)> = None;
    for gt in gts {
        let v = iou(bbox, &gt.bbox);
        let better = match best {
            None => true,
            Some((m, _)) => v > m.iou || (v == m.iou && gt.id < m.annotation_id),
        };
        if better {
            best = Some((
                GtMatch {
                    annotation_id: gt.id,
                    iou: v,
                },
                gt.category_id,
            ));
        }
    }
    best.map(|(m, _)| m)
}

pub fn classify(pred: &Prediction, gts: &[Annotation], iou_thr: f64) -> Outcome {
    let Some(m) = best_match(&pred.bbox, gts) else {
        return Outcome::Neg;
    };
    if m.iou < iou_thr {
        return Outcome::Neg;
    }
    let gt_category = gts
        .iter()
        .find(|g| g.id == m.annotation_id)
        .map(|g| g.category_id);
    match pred.label {
        Label::Background => Outcome::Fb,
        Label::Category(c) if Some(c) == gt_category => Outcome::Pos,
        Label::Category(_) => Outcome::Pp,
    }
}

/// Indices of predictions in each of the four outcome sets, ascending.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OutcomePartition {
    pub neg: Vec<usize>,
    pub fb: Vec<usize>,
    pub pos: Vec<usize>,
    pub pp: Vec<usize>,
}

impl OutcomePartition {
    pub fn from_outcomes(outcomes: &[Outcome]) -> Self {
        let mut p = Self::default();
        for (i, o) in outcomes.iter().enumerate() {
            p.set_mut(*o).push(i);
        }
        p
    }

    pub fn set(&self, outcome: Outcome) -> &[usize] {
        match outcome {
            Outcome::Neg => &self.neg,
            Outcome::Fb => &self.fb,
            Outcome::Pos => &self.pos,
            Outcome::Pp => &self.pp,
        }
    }

    fn set_mut(&mut self, outcome: Outcome) -> &mut Vec<usize> {
        match outcome {
            Outcome::Neg => &mut self.neg,
            Outcome::Fb => &mut self.fb,
            Outcome::Pos => &mut self.pos,
            Outcome::Pp => &mut self.pp,
        }
    }

    pub fn len(&self) -> usize {
        self.neg.len() + self.fb.len() + self.pos.len() + self.pp.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Outcome of every prediction, or `None` if the sets are not a
    /// partition of `0..n`.
    pub fn outcomes(&self, n: usize) -> Option<Vec<Outcome>> {
        let mut out = vec![None; n];
        for o in [Outcome::Neg, Outcome::Fb, Outcome::Pos, Outcome::Pp] {
            for &i in self.set(o) {
                match out.get_mut(i) {
                    Some(slot @ None) => *slot = Some(o),
                    _ => return None,
                }
            }
        }
        out.into_iter().collect()
    }
}

pub fn partition_outcomes(preds: &[Prediction], gts: &[Annotation], iou_thr: f64) -> OutcomePartition {
    let outcomes: Vec<Outcome> = preds.iter().map(|p| classify(p, gts, iou_thr)).collect();
    OutcomePartition::from_outcomes(&outcomes)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_bbox: f64,
    pub l_cls_neg: f64,
    pub l_cls_pos: f64,
    pub l_cls_fb: f64,
    /// Classification loss removed by suppression; not part of `total`.
    pub l_cls_pp_suppressed: f64,
    /// `l_bbox + l_cls_neg + l_cls_pos + l_cls_fb`.
    pub total: f64,
}

pub fn masked_loss(preds: &[Prediction], partition: &OutcomePartition, l_bbox: f64) -> LossBreakdown {
    let sum = |idx: &[usize]| idx.iter().map(|&i| preds[i].cls_loss).sum::<f64>();
    let l_cls_neg = sum(&partition.neg);
    let l_cls_pos = sum(&partition.pos);
    let l_cls_fb = sum(&partition.fb);
    LossBreakdown {
        l_bbox,
        l_cls_neg,
        l_cls_pos,
        l_cls_fb,
        l_cls_pp_suppressed: sum(&partition.pp),
        total: l_bbox + l_cls_neg + l_cls_pos + l_cls_fb,
    }
}

/// Fraction of samples kept at `epoch`: `1 - tau * min(epoch / 5, 1)`.
pub fn keep_fraction_schedule(tau: f64, epoch: u32) -> f64 {
    1.0 - tau * (epoch as f64 / 5.0).min(1.0)
}

/// `floor(keep * n)`, tolerant of representation error in `keep`.
pub fn keep_count(keep: f64, n: usize) -> usize {
    let k = (keep.clamp(0.0, 1.0) * n as f64 + 1e-9).floor();
    (k as usize).min(n)
}

fn smallest(losses: &[f64], mut candidates: Vec<usize>, keep: f64) -> Vec<usize> {
    let take = keep_count(keep, candidates.len());
    candidates.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]).then(a.cmp(&b)));
    candidates.truncate(take);
    candidates
}

/// Indices of the `floor(keep * n)` smallest losses, ties to the lower
/// index, returned in ascending index order.
pub fn small_loss_select(losses: &[f64], keep: f64) -> Vec<usize> {
    let mut picked = smallest(losses, (0..losses.len()).collect(), keep);
    picked.sort_unstable();
    picked
}

/// [`small_loss_select`] applied separately to positives and negatives.
pub fn small_loss_select_grouped(losses: &[f64], positive: &[bool], keep: f64) -> Vec<usize> {
    assert_eq!(losses.len(), positive.len(), "one group flag per loss");
    let (pos, neg): (Vec<usize>, Vec<usize>) = (0..losses.len()).partition(|&i| positive[i]);
    let mut picked = smallest(losses, pos, keep);
    picked.extend(smallest(losses, neg, keep));
    picked.sort_unstable();
    picked
}

/// Whether each prediction overlaps some ground truth by at least `iou_thr`.
pub fn positive_mask(preds: &[Prediction], gts: &[Annotation], iou_thr: f64) -> Vec<bool> {
    preds
        .iter()
        .map(|p| best_match(&p.bbox, gts).is_some_and(|m| m.iou >= iou_thr))
        .collect()
}

/// The three small-loss baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SmallLossVariant {
    /// Over all classification losses.
    V1,
    /// Separately within positive and negative predictions.
    V2,
    /// Over total (classification plus regression) losses.
    V3,
}

impl SmallLossVariant {
    /// `reg_losses` is only read by `V3` and `positive` only by `V2`.
    pub fn select(self, cls_losses: &[f64], reg_losses: &[f64], positive: &[bool], keep: f64) -> Vec<usize> {
        match self {
            SmallLossVariant::V1 => small_loss_select(cls_losses, keep),
            SmallLossVariant::V2 => small_loss_select_grouped(cls_losses, positive, keep),
            SmallLossVariant::V3 => {
                assert_eq!(cls_losses.len(), reg_losses.len(), "one regression loss per prediction");
                let total: Vec<f64> = cls_losses.iter().zip(reg_losses).map(|(c, r)| c + r).collect();
                small_loss_select(&total, keep)
            }
        }
    }
}
