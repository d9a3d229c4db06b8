#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use mixpaste_cli::{execute, Cli, CliError};
use mixpaste_core::raster::save_image;
use mixpaste_core::{save_dataset, Annotation, BBoxXYWH, Category, Dataset, ImageRecord, Raster};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Runs the CLI in-process; returns captured stdout.
pub fn cli(args: &[&str]) -> Result<String, CliError> {
    let mut argv = vec!["mixpaste"];
    argv.extend_from_slice(args);
    let parsed = <Cli as clap::Parser>::try_parse_from(argv).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut out = Vec::new();
    execute(parsed, &mut out)?;
    Ok(String::from_utf8(out).unwrap())
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Writes `n_images` random-noise PNGs under `root/images` and their COCO
/// document at `root/ann.json`. Every category appears on many images.
pub fn image_fixture(root: &Path, n_images: u64, seed: u64) -> (PathBuf, PathBuf, Dataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let images = root.join("images");
    let mut d = Dataset::default();
    d.categories = ["Scissor", "Utility Knife", "Folding Knife"]
        .iter()
        .enumerate()
        .map(|(i, n)| Category::new(i as u64 + 1, *n))
        .collect();
    let mut next = 1;
    for id in 1..=n_images {
        let (w, h) = (rng.random_range(48..96), rng.random_range(40..80));
        let name = if id % 5 == 0 { format!("nested/{id:03}.png") } else { format!("{id:03}.png") };
        let pixels = (0..w * h * 3).map(|_| rng.random()).collect();
        let path = images.join(&name);
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        save_image(&Raster::from_pixels(w, h, pixels).unwrap(), &path).unwrap();
        d.images.push(ImageRecord::new(id, name, w, h));
        for _ in 0..rng.random_range(1..=3) {
            let bw = rng.random_range(6.0..30.0);
            let bh = rng.random_range(6.0..30.0);
            // Some boxes overhang the right/bottom edge.
            let x = rng.random_range(0.0..w as f64 - 5.0);
            let y = rng.random_range(0.0..h as f64 - 5.0);
            d.annotations.push(Annotation::new(next, id, rng.random_range(1..=3), BBoxXYWH::new(x, y, bw, bh)));
            next += 1;
        }
    }
    let ann = root.join("ann.json");
    save_dataset(&d, &ann).unwrap();
    (ann, images, d)
}

/// Sorted (relative path, bytes) listing of every file under `root`.
pub fn read_tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
                out.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

/// One ground truth and four predictions, one per outcome set, in the order
/// pos, fb, pp, neg.
pub fn four_way_fixture(root: &Path) -> (PathBuf, PathBuf) {
    let mut d = Dataset::default();
    d.categories = vec![Category::new(1, "Scissor"), Category::new(2, "Straight Knife")];
    d.images = vec![ImageRecord::new(1, "1.png", 200, 200)];
    d.annotations = vec![Annotation::new(1, 1, 1, BBoxXYWH::new(40.0, 40.0, 80.0, 60.0))];
    let ann = root.join("gt.json");
    save_dataset(&d, &ann).unwrap();
    let dets = serde_json::json!([
        {"image_id": 1, "bbox": [40, 40, 80, 60], "label": 1, "score": 0.95, "cls_loss": 0.05},
        {"image_id": 1, "bbox": [42, 41, 78, 60], "label": "background", "score": 0.6, "cls_loss": 0.9},
        {"image_id": 1, "bbox": [38, 40, 82, 61], "label": 2, "score": 0.8, "cls_loss": 2.4},
        {"image_id": 1, "bbox": [150, 150, 30, 30], "label": 1, "score": 0.3, "cls_loss": 0.7}
    ]);
    let det = root.join("dets.json");
    fs::write(&det, serde_json::to_vec_pretty(&dets).unwrap()).unwrap();
    (ann, det)
}
