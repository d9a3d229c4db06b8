//! Controlled annotation corruption: category replacement and box
//! shift/scale perturbation.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::dataset::{BBoxXYWH, Dataset};
use crate::error::{Error, Result};
use crate::stream::{substream, Domain};

/// Perturbation level used throughout the benchmark protocol.
pub const DEFAULT_DELTA: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum BoxModel {
    /// Each offset drawn from `U(-delta, delta)`.
    Uniform { delta: f64 },
    /// Each offset drawn from `N(mu, sigma^2)`.
    Gaussian { mu: f64, sigma: f64 },
}

impl Default for BoxModel {
    fn default() -> Self {
        BoxModel::Uniform {
            delta: DEFAULT_DELTA,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Category replacement probability.
    pub p_c: f64,
    /// Box perturbation probability.
    pub p_b: f64,
    pub box_model: BoxModel,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_c", self.p_c), ("p_b", self.p_b)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParameter(format!(
                    "{name} = {p} is not a probability"
                )));
            }
        }
        match self.box_model {
            BoxModel::Uniform { delta } if !(delta > 0.0 && delta.is_finite()) => Err(
                Error::InvalidParameter(format!("delta = {delta} must be positive")),
            ),
            BoxModel::Gaussian { sigma, .. } if !(sigma > 0.0 && sigma.is_finite()) => Err(
                Error::InvalidParameter(format!("sigma = {sigma} must be positive")),
            ),
            BoxModel::Gaussian { mu, .. } if !mu.is_finite() => {
                Err(Error::InvalidParameter(format!("mu = {mu} must be finite")))
            }
            _ => Ok(()),
        }
    }
}

/// Relative offsets applied to one box.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BoxDeltas {
    pub dx: f64,
    pub dy: f64,
    pub dw: f64,
    pub dh: f64,
}

impl BoxDeltas {
    pub fn as_array(&self) -> [f64; 4] {
        [self.dx, self.dy, self.dw, self.dh]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChangeRecord {
    Label {
        annotation_id: u64,
        old_category: u64,
        new_category: u64,
    },
    Box {
        annotation_id: u64,
        old: BBoxXYWH,
        new: BBoxXYWH,
        deltas: BoxDeltas,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChangeLog(pub Vec<ChangeRecord>);

impl ChangeLog {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, ChangeRecord> {
        self.0.iter()
    }

    pub fn label_changes(&self) -> usize {
        self.iter()
            .filter(|c| matches!(c, ChangeRecord::Label { .. }))
            .count()
    }

    pub fn box_changes(&self) -> usize {
        self.iter()
            .filter(|c| matches!(c, ChangeRecord::Box { .. }))
            .count()
    }

    pub fn extend(&mut self, other: ChangeLog) {
        self.0.extend(other.0);
    }
}

/// With probability `p_c`, replaces each annotation's category by one drawn
/// uniformly from the other declared categories.
pub fn corrupt_labels(dataset: &Dataset, spec: &NoiseSpec) -> Result<(Dataset, ChangeLog)> {
    spec.validate()?;
    let mut categories: Vec<u64> = dataset.categories.iter().map(|c| c.id).collect();
    categories.sort_unstable();
    categories.dedup();
    if spec.p_c > 0.0 && categories.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "category noise needs at least 2 categories, dataset has {}",
            categories.len()
        )));
    }

    let mut out = dataset.clone();
    let mut log = Vec::new();
    let mut others = Vec::with_capacity(categories.len());
    for ann in &mut out.annotations {
        let mut rng = substream(spec.seed, Domain::LabelNoise, &[ann.id]);
        if rng.random::<f64>() >= spec.p_c {
            continue;
        }
        others.clear();
        others.extend(categories.iter().copied().filter(|&c| c != ann.category_id));
        let new = others[rng.random_range(0..others.len())];
        log.push(ChangeRecord::Label {
            annotation_id: ann.id,
            old_category: ann.category_id,
            new_category: new,
        });
        ann.category_id = new;
    }
    Ok((out, ChangeLog(log)))
}

/// Shift-and-scale update: `x + dx*w, y + dy*h, w*(1+dw), h*(1+dh)`.
pub fn apply_box_deltas(b: &BBoxXYWH, d: &BoxDeltas) -> BBoxXYWH {
    BBoxXYWH {
        x: b.x + d.dx * b.w,
        y: b.y + d.dy * b.h,
        w: b.w * (1.0 + d.dw),
        h: b.h * (1.0 + d.dh),
    }
}

fn draw_deltas<R: Rng>(model: &BoxModel, rng: &mut R) -> Result<BoxDeltas> {
    let [dx, dy, dw, dh]: [f64; 4] = match *model {
        BoxModel::Uniform { delta } => {
            let dist = Uniform::new_inclusive(-delta, delta)
                .map_err(|e| Error::InvalidParameter(e.to_string()))?;
            std::array::from_fn(|_| dist.sample(rng))
        }
        BoxModel::Gaussian { mu, sigma } => {
            let dist =
                Normal::new(mu, sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?;
            std::array::from_fn(|_| dist.sample(rng))
        }
    };
    Ok(BoxDeltas { dx, dy, dw, dh })
}

/// With probability `p_b`, perturbs each box with four independent draws from
/// the box model, then clamps it into its image. Untouched boxes are copied
/// bit for bit.
pub fn perturb_boxes(dataset: &Dataset, spec: &NoiseSpec) -> Result<(Dataset, ChangeLog)> {
    spec.validate()?;
    let mut out = dataset.clone();
    let images = dataset.image_map();
    let mut log = Vec::new();
    for ann in &mut out.annotations {
        let mut rng = substream(spec.seed, Domain::BoxNoise, &[ann.id]);
        if rng.random::<f64>() >= spec.p_b {
            continue;
        }
        let deltas = draw_deltas(&spec.box_model, &mut rng)?;
        let moved = apply_box_deltas(&ann.bbox, &deltas);
        let new = match images.get(&ann.image_id) {
            Some(im) => clamp_box(&moved, im.width, im.height),
            // Without image bounds only the positivity floor applies.
            None => BBoxXYWH {
                w: floor_len(moved.w),
                h: floor_len(moved.h),
                ..moved
            },
        };
        log.push(ChangeRecord::Box {
            annotation_id: ann.id,
            old: ann.bbox,
            new,
            deltas,
        });
        ann.bbox = new;
    }
    Ok((out, ChangeLog(log)))
}

/// Label corruption followed by box perturbation, with one merged log.
pub fn inject_noise(dataset: &Dataset, spec: &NoiseSpec) -> Result<(Dataset, ChangeLog)> {
    let (relabelled, mut log) = corrupt_labels(dataset, spec)?;
    let (out, boxes) = perturb_boxes(&relabelled, spec)?;
    log.extend(boxes);
    Ok((out, log))
}

pub const MIN_BOX_SIDE: f64 = 1.0;

fn floor_len(len: f64) -> f64 {
    if len >= MIN_BOX_SIDE {
        len
    } else {
        MIN_BOX_SIDE
    }
}

fn clamp_axis(start: f64, len: f64, dim: f64) -> (f64, f64) {
    let end = start + len;
    let (mut s, mut l) = (start, len);
    if !(s >= 0.0) {
        s = 0.0;
        l = end;
    }
    if s > dim - MIN_BOX_SIDE {
        s = dim - MIN_BOX_SIDE;
        l = end - s;
    }
    if s + l > dim {
        l = dim - s;
    }
    (s, floor_len(l))
}

/// Clamps `b` into an `img_w` x `img_h` image: the origin moves into
/// `[0, dim - 1]`, overhanging extent is trimmed, and each side is at least
/// one pixel. In-bounds boxes are returned unchanged.
pub fn clamp_box(b: &BBoxXYWH, img_w: u32, img_h: u32) -> BBoxXYWH {
    let (x, w) = clamp_axis(b.x, b.w, img_w.max(1) as f64);
    let (y, h) = clamp_axis(b.y, b.h, img_h.max(1) as f64);
    BBoxXYWH { x, y, w, h }
}

/// Counts and realized rates of one corruption run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseSummary {
    pub annotations: usize,
    pub label_changes: usize,
    pub box_changes: usize,
    pub label_rate: f64,
    pub box_rate: f64,
}

impl NoiseSummary {
    pub fn new(annotations: usize, log: &ChangeLog) -> Self {
        let rate = |n: usize| {
            if annotations == 0 {
                0.0
            } else {
                n as f64 / annotations as f64
            }
        };
        let (label_changes, box_changes) = (log.label_changes(), log.box_changes());
        Self {
            annotations,
            label_changes,
            box_changes,
            label_rate: rate(label_changes),
            box_rate: rate(box_changes),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Annotation, Category, ImageRecord};
    use proptest::prelude::*;

    fn synthetic(n: u64, categories: u64) -> Dataset {
        let mut d = Dataset::default();
        d.categories = (1..=categories).map(|c| Category::new(c, format!("c{c}"))).collect();
        d.images = (1..=n.div_ceil(10)).map(|i| ImageRecord::new(i, format!("{i}.png"), 200, 150)).collect();
        d.annotations = (1..=n)
            .map(|i| {
                Annotation::new(
                    i,
                    (i - 1) / 10 + 1,
                    (i % categories) + 1,
                    BBoxXYWH::new(20.0 + (i % 7) as f64, 30.0, 40.5, 25.25),
                )
            })
            .collect();
        d
    }

    fn spec(p_c: f64, p_b: f64) -> NoiseSpec {
        NoiseSpec {
            p_c,
            p_b,
            box_model: BoxModel::default(),
            seed: 11,
        }
    }

    #[test]
    fn zero_rates_change_nothing() {
        let d = synthetic(100, 3);
        let (out, log) = inject_noise(&d, &spec(0.0, 0.0)).unwrap();
        assert!(log.is_empty());
        assert_eq!(out, d);
    }

    #[test]
    fn certain_flip_with_two_categories() {
        let d = synthetic(50, 2);
        let (out, log) = corrupt_labels(&d, &spec(1.0, 0.0)).unwrap();
        assert_eq!(log.len(), 50);
        for (a, b) in d.annotations.iter().zip(&out.annotations) {
            assert_eq!(b.category_id, 3 - a.category_id);
        }
    }

    #[test]
    fn single_category_rejects_label_noise() {
        let d = synthetic(10, 1);
        assert!(corrupt_labels(&d, &spec(0.1, 0.0)).is_err());
        assert!(corrupt_labels(&d, &spec(0.0, 0.0)).is_ok());
    }

    #[test]
    fn label_rate_within_binomial_bound() {
        let d = synthetic(10_000, 5);
        let (out, log) = corrupt_labels(&d, &spec(0.6, 0.0)).unwrap();
        let rate = log.len() as f64 / 10_000.0;
        assert!((rate - 0.6).abs() <= 0.015, "rate {rate}");
        for (a, b) in d.annotations.iter().zip(&out.annotations) {
            assert!(a.category_id == b.category_id || log.iter().any(|c| matches!(c,
                ChangeRecord::Label { annotation_id, .. } if *annotation_id == a.id)));
        }
        assert!(log.iter().all(|c| matches!(c,
            ChangeRecord::Label { old_category, new_category, .. } if old_category != new_category)));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(spec(1.5, 0.0).validate().is_err());
        assert!(spec(0.0, -0.1).validate().is_err());
        let mut s = spec(0.1, 0.1);
        s.box_model = BoxModel::Uniform { delta: 0.0 };
        assert!(s.validate().is_err());
        s.box_model = BoxModel::Gaussian { mu: 0.0, sigma: -1.0 };
        assert!(s.validate().is_err());
    }

    #[test]
    fn zero_deltas_are_identity() {
        let b = BBoxXYWH::new(10.0, 20.0, 100.0, 50.0);
        assert_eq!(apply_box_deltas(&b, &BoxDeltas::default()), b);
    }

    #[test]
    fn shift_and_scale_substitution() {
        let b = BBoxXYWH::new(10.0, 20.0, 100.0, 50.0);
        let d = BoxDeltas { dx: 0.1, dy: -0.2, dw: 0.3, dh: 0.0 };
        let out = apply_box_deltas(&b, &d);
        for (got, want) in out.to_array().iter().zip([20.0, 10.0, 130.0, 50.0]) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn uniform_deltas_bounded_and_centred() {
        let d = synthetic(5_000, 2);
        let (_, log) = perturb_boxes(&d, &spec(0.0, 1.0)).unwrap();
        let all: Vec<f64> = log
            .iter()
            .flat_map(|c| match c {
                ChangeRecord::Box { deltas, .. } => deltas.as_array(),
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(all.len(), 20_000);
        assert!(all.iter().all(|v| (-0.3..=0.3).contains(v)));
        let mean = all.iter().sum::<f64>() / all.len() as f64;
        // sd of U(-0.3, 0.3) is 0.3/sqrt(3); 4 sigma of the mean.
        assert!(mean.abs() < 4.0 * 0.3 / 3f64.sqrt() / (all.len() as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn untouched_boxes_are_bit_identical() {
        let d = synthetic(500, 2);
        let (out, log) = perturb_boxes(&d, &spec(0.0, 0.5)).unwrap();
        let touched: std::collections::HashSet<u64> = log
            .iter()
            .map(|c| match c {
                ChangeRecord::Box { annotation_id, .. } => *annotation_id,
                _ => unreachable!(),
            })
            .collect();
        for (a, b) in d.annotations.iter().zip(&out.annotations) {
            if !touched.contains(&a.id) {
                assert_eq!(a.bbox.to_array().map(f64::to_bits), b.bbox.to_array().map(f64::to_bits));
            }
        }
    }

    #[test]
    fn clamp_cases() {
        let inside = BBoxXYWH::new(3.5, 4.0, 10.25, 20.0);
        assert_eq!(clamp_box(&inside, 100, 100), inside);
        assert_eq!(
            clamp_box(&BBoxXYWH::new(-5.0, 0.0, 20.0, 10.0), 100, 100),
            BBoxXYWH::new(0.0, 0.0, 15.0, 10.0)
        );
        let collapsed = clamp_box(&BBoxXYWH::new(10.0, 10.0, -3.0, 0.2), 100, 100);
        assert_eq!((collapsed.w, collapsed.h), (1.0, 1.0));
        let beyond = clamp_box(&BBoxXYWH::new(250.0, 99.5, 10.0, 10.0), 100, 100);
        assert_eq!(beyond, BBoxXYWH::new(99.0, 99.0, 1.0, 1.0));
    }

    #[test]
    fn gaussian_boxes_stay_positive() {
        let d = synthetic(2_000, 2);
        let mut s = spec(0.0, 1.0);
        s.box_model = BoxModel::Gaussian { mu: 0.0, sigma: 0.8 };
        let (out, _) = perturb_boxes(&d, &s).unwrap();
        assert!(out.annotations.iter().all(|a| a.bbox.w >= 1.0 && a.bbox.h >= 1.0 && a.bbox.x >= 0.0 && a.bbox.y >= 0.0));
    }

    #[test]
    fn determinism_and_order_independence() {
        let d = synthetic(300, 4);
        let s = spec(0.4, 0.4);
        let (a, la) = inject_noise(&d, &s).unwrap();
        let (b, lb) = inject_noise(&d, &s).unwrap();
        assert_eq!(a.to_json_vec(), b.to_json_vec());
        assert_eq!(serde_json::to_vec(&la).unwrap(), serde_json::to_vec(&lb).unwrap());

        let mut reversed = d.clone();
        reversed.annotations.reverse();
        let (r, _) = inject_noise(&reversed, &s).unwrap();
        let mut r_anns = r.annotations.clone();
        r_anns.reverse();
        assert_eq!(r_anns, a.annotations);
    }

    proptest! {
        #[test]
        fn clamped_boxes_fit_their_image(
            x in -500.0f64..500.0, y in -500.0f64..500.0,
            w in -50.0f64..600.0, h in -50.0f64..600.0,
            iw in 1u32..400, ih in 1u32..400,
        ) {
            let c = clamp_box(&BBoxXYWH::new(x, y, w, h), iw, ih);
            prop_assert!(c.w >= 1.0 && c.h >= 1.0);
            prop_assert!(c.x >= 0.0 && c.y >= 0.0);
            prop_assert!(c.right() <= iw as f64 + 1e-9);
            prop_assert!(c.bottom() <= ih as f64 + 1e-9);
        }
    }
}
