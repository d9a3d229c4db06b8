//! Fixtures shared by the criterion benches.

use mixpaste_core::lls::{Label, Prediction};
use mixpaste_core::{Annotation, BBoxXYWH, Patch, Raster};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn noise_patch(w: u32, h: u32, seed: u64) -> Patch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pixels = (0..w * h * 3).map(|_| rng.random()).collect();
    Patch::new(0, 0, Raster::from_pixels(w, h, pixels).expect("sized buffer"))
}

fn random_box(rng: &mut ChaCha8Rng) -> BBoxXYWH {
    BBoxXYWH::new(
        rng.random_range(0.0..500.0),
        rng.random_range(0.0..500.0),
        rng.random_range(5.0..120.0),
        rng.random_range(5.0..120.0),
    )
}

/// `n_pred` predictions and `n_gt` ground truths scattered over a 600 px square.
pub fn detection_scene(n_pred: usize, n_gt: usize, seed: u64) -> (Vec<Prediction>, Vec<Annotation>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gts = (0..n_gt as u64)
        .map(|i| Annotation::new(i, 1, rng.random_range(1..6), random_box(&mut rng)))
        .collect();
    let preds = (0..n_pred)
        .map(|_| Prediction {
            bbox: random_box(&mut rng),
            label: if rng.random_bool(0.2) {
                Label::Background
            } else {
                Label::Category(rng.random_range(1..6))
            },
            score: rng.random(),
            cls_loss: rng.random_range(0.0..3.0),
        })
        .collect();
    (preds, gts)
}
