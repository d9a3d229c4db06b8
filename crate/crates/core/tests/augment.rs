use std::collections::HashMap;
use std::fs;
use std::path::Path;

use mixpaste_core::mix_paste::{augment_dataset, is_selected, PeerCatalog};
use mixpaste_core::raster::{load_image, save_image, PixelRect};
use mixpaste_core::{
    apply_to_image, Annotation, BBoxXYWH, Category, Dataset, ImageRecord, LambdaDist, MixConfig, Raster,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` noisy images with 1-3 boxes each over 3 categories, written to `root`.
fn write_fixture(root: &Path, n: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(n);
    let mut d = Dataset::default();
    d.categories = (1..=3).map(|c| Category::new(c, format!("c{c}"))).collect();
    let mut next = 1;
    for id in 1..=n {
        let (w, h) = (rng.random_range(40..70), rng.random_range(30..60));
        let sub = if id % 4 == 0 { "sub/" } else { "" };
        let name = format!("{sub}{id:03}.png");
        let pixels = (0..w * h * 3).map(|_| rng.random()).collect();
        let raster = Raster::from_pixels(w, h, pixels).unwrap();
        let path = root.join(&name);
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        save_image(&raster, &path).unwrap();
        d.images.push(ImageRecord::new(id, name, w, h));
        for _ in 0..rng.random_range(1..=3) {
            let bw = rng.random_range(5.0..20.0);
            let bh = rng.random_range(5.0..20.0);
            d.annotations.push(Annotation::new(
                next,
                id,
                rng.random_range(1..=3),
                BBoxXYWH::new(rng.random_range(0.0..w as f64 - 4.0), rng.random_range(0.0..h as f64 - 4.0), bw, bh),
            ));
            next += 1;
        }
    }
    d
}

fn read_tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn zero_probability_copies_every_image() {
    let src = tempfile::tempdir().unwrap();
    let dst = tempfile::tempdir().unwrap();
    let d = write_fixture(src.path(), 12);
    let cfg = MixConfig { apply_prob: 0.0, ..Default::default() };
    let out = augment_dataset(&d, src.path(), dst.path(), &cfg, 3).unwrap();
    assert_eq!(read_tree(src.path()), read_tree(dst.path()));
    assert_eq!(out.dataset, d);
    assert_eq!(out.report.images_selected, 0);
    assert!(out.report.records.is_empty());
}

#[test]
fn certain_application_mixes_every_image() {
    let src = tempfile::tempdir().unwrap();
    let dst = tempfile::tempdir().unwrap();
    let d = write_fixture(src.path(), 15);
    let cfg = MixConfig { apply_prob: 1.0, seed: 4, ..Default::default() };
    let out = augment_dataset(&d, src.path(), dst.path(), &cfg, 2).unwrap();
    assert_eq!(out.report.images_selected, 15);
    assert!(out.report.failures.is_empty());
    for im in &d.images {
        assert!(out.report.records.iter().any(|r| r.image_id == im.id));
    }
    // Every category has annotations on several images, so nothing is skipped.
    assert_eq!(out.report.items_skipped, 0);
    assert_eq!(out.report.items_mixed, d.annotations.len());
    assert_eq!(out.dataset.annotations, d.annotations);
    assert_eq!(out.dataset.categories, d.categories);
}

#[test]
fn pixel_locality_and_label_immutability() {
    let src = tempfile::tempdir().unwrap();
    let dst = tempfile::tempdir().unwrap();
    let d = write_fixture(src.path(), 20);
    let cfg = MixConfig { apply_prob: 0.7, seed: 11, ..Default::default() };
    let out = augment_dataset(&d, src.path(), dst.path(), &cfg, 4).unwrap();
    assert_eq!(out.dataset.annotations, d.annotations);
    let by_image = d.annotations_by_image();
    for (before, after) in d.images.iter().zip(&out.dataset.images) {
        let a = load_image(src.path().join(&before.file_name)).unwrap();
        let b = load_image(dst.path().join(&after.file_name)).unwrap();
        let rects: Vec<PixelRect> = by_image[&before.id]
            .iter()
            .filter_map(|ann| PixelRect::enclosing(&ann.bbox, a.width(), a.height()))
            .collect();
        for y in 0..a.height() {
            for x in 0..a.width() {
                if !rects.iter().any(|r| r.contains(x, y)) {
                    assert_eq!(a.pixel(x, y), b.pixel(x, y), "image {} at ({x},{y})", before.id);
                }
            }
        }
    }
}

#[test]
fn worker_count_does_not_change_output() {
    let src = tempfile::tempdir().unwrap();
    let d = write_fixture(src.path(), 16);
    let cfg = MixConfig { seed: 21, ..Default::default() };
    let mut trees = Vec::new();
    for workers in [1, 8] {
        let dst = tempfile::tempdir().unwrap();
        let out = augment_dataset(&d, src.path(), dst.path(), &cfg, workers).unwrap();
        trees.push((read_tree(dst.path()), serde_json::to_vec(&out.report).unwrap(), out.dataset));
    }
    assert_eq!(trees[0], trees[1]);
}

#[test]
fn missing_image_is_reported_and_run_continues() {
    let src = tempfile::tempdir().unwrap();
    let dst = tempfile::tempdir().unwrap();
    let d = write_fixture(src.path(), 6);
    fs::remove_file(src.path().join(&d.images[2].file_name)).unwrap();
    let cfg = MixConfig { apply_prob: 0.5, ..Default::default() };
    let out = augment_dataset(&d, src.path(), dst.path(), &cfg, 2).unwrap();
    assert_eq!(out.report.failures.len(), 1);
    assert_eq!(out.report.failures[0].image_id, d.images[2].id);
    assert_eq!(read_tree(dst.path()).len(), 5);
}

#[test]
fn unwritable_output_is_fatal() {
    let src = tempfile::tempdir().unwrap();
    let d = write_fixture(src.path(), 2);
    let blocker = src.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    let err = augment_dataset(&d, src.path(), &blocker.join("out"), &MixConfig::default(), 1).unwrap_err();
    assert_eq!(err.kind(), mixpaste_core::ErrorKind::Io);
}

#[test]
fn selected_fraction_within_binomial_bound() {
    let cfg = MixConfig { apply_prob: 0.6, seed: 2024, ..Default::default() };
    let n = 5_000;
    let hits = (1..=n).filter(|&id| is_selected(&cfg, id)).count();
    let frac = hits as f64 / n as f64;
    assert!((frac - 0.6).abs() <= 0.021, "{frac}");
}

#[test]
fn apply_to_image_matches_direct_mix() {
    // Two images, one annotation each, fixed lambda: the pasted region must
    // equal the mix computed by hand from the two crops.
    let mut d = Dataset::default();
    d.categories = vec![Category::new(1, "a")];
    d.images = vec![ImageRecord::new(1, "1.png", 30, 30), ImageRecord::new(2, "2.png", 50, 40)];
    d.annotations = vec![
        Annotation::new(1, 1, 1, BBoxXYWH::new(5.0, 6.0, 20.0, 12.0)),
        Annotation::new(2, 2, 1, BBoxXYWH::new(10.0, 3.0, 33.0, 30.0)),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut pixels = HashMap::new();
    for im in &d.images {
        let px = (0..im.width * im.height * 3).map(|_| rng.random()).collect();
        pixels.insert(im.id, std::sync::Arc::new(Raster::from_pixels(im.width, im.height, px).unwrap()));
    }
    let cfg = MixConfig { lambda: LambdaDist::Fixed { value: 0.25 }, ..Default::default() };
    let catalog = PeerCatalog::new(&d);
    let anns: Vec<&Annotation> = vec![&d.annotations[0]];
    let (out, records) = apply_to_image(&pixels[&1], 1, &anns, &catalog, &pixels, &cfg).unwrap();
    assert_eq!(records[0].peers, vec![2]);

    let original = mixpaste_core::raster::crop(&pixels[&1], &d.annotations[0].bbox).unwrap();
    let peer = mixpaste_core::raster::crop(&pixels[&2], &d.annotations[1].bbox).unwrap();
    let mixed = mixpaste_core::mix_paste::mix_with_lambda(&original, &[peer], 0.1, 0.25).unwrap();
    for y in 0..mixed.height() {
        for x in 0..mixed.width() {
            assert_eq!(out.pixel(x + 5, y + 6), mixed.raster.pixel(x, y));
        }
    }
}
