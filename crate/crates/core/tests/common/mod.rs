//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use pcd::distill::Objective;
use pcd::net::ConvNet;
use pcd::{LabelMap, Rng, TensorF};

/// SVLS weights evaluated directly from the Gaussian: `[center, edge, corner]`.
pub fn svls_direct(sigma: f64) -> [f64; 3] {
    let g = |d2: f64| (-d2 / (2.0 * sigma * sigma)).exp();
    let neighbours = 4.0 * g(1.0) + 4.0 * g(2.0);
    let total = 2.0 * neighbours;
    [neighbours / total, g(1.0) / total, g(2.0) / total]
}

/// Boundary uncertainty by explicit 3×3 summation with clamped (replicated) borders.
pub fn bu_brute_force(labels: &LabelMap, sigma: f64) -> Vec<f64> {
    let [c, e, k] = svls_direct(sigma);
    let (h, w) = (labels.height() as i64, labels.width() as i64);
    let mut out = Vec::with_capacity((h * w) as usize);
    for y in 0..h {
        for x in 0..w {
            let own = labels.get(y as usize, x as usize);
            let mut same = 0.0;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let yy = (y + dy).clamp(0, h - 1) as usize;
                    let xx = (x + dx).clamp(0, w - 1) as usize;
                    let wt = match dy.abs() + dx.abs() {
                        0 => c,
                        1 => e,
                        _ => k,
                    };
                    if labels.get(yy, xx) == own {
                        same += wt;
                    }
                }
            }
            out.push(1.0 - same);
        }
    }
    out
}

pub fn random_labels(rng: &mut Rng, h: usize, w: usize, classes: usize) -> LabelMap {
    let labels = (0..h * w)
        .map(|_| rng.below(classes as u64) as u8)
        .collect();
    LabelMap::new(h, w, classes, labels).unwrap()
}

pub fn random_tensor(rng: &mut Rng, shape: Vec<usize>, scale: f64) -> TensorF {
    let n = shape.iter().product();
    TensorF::new(shape, (0..n).map(|_| scale * rng.normal()).collect()).unwrap()
}

/// Per-class confusion counts, then DSC/IoU/precision straight from the definitions.
pub fn counting_scores(pred: &LabelMap, gt: &LabelMap, class: usize) -> Option<(f64, f64, f64)> {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        let (p, g) = (p as usize == class, g as usize == class);
        match (p, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    if tp + fp + fn_ == 0 {
        return None;
    }
    let dsc = 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64;
    let iou = tp as f64 / (tp + fp + fn_) as f64;
    let precision = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    Some((dsc, iou, precision))
}

fn loss(
    net: &ConvNet,
    image: &TensorF,
    teacher: Option<&TensorF>,
    labels: &LabelMap,
    weights: Option<&[f64]>,
    objective: &Objective,
) -> f64 {
    let logits = net.forward(image).unwrap();
    objective
        .evaluate(&logits, teacher, labels, weights)
        .unwrap()
        .masked_sum
}

/// Worst relative error between backprop and central differences over every
/// parameter, plus the number of parameters skipped because the ±h stencil
/// moved some ReLU input across zero (where the loss is not differentiable).
pub fn parameter_gradient_error(
    net: &ConvNet,
    image: &TensorF,
    teacher: Option<&TensorF>,
    labels: &LabelMap,
    weights: Option<&[f64]>,
    objective: &Objective,
    h: f64,
) -> (f64, usize) {
    let cache = net.forward_cached(image).unwrap();
    let base = cache.relu_pattern();
    let out = objective
        .evaluate(&cache.logits, teacher, labels, weights)
        .unwrap();
    let analytic: Vec<f64> = net.backward(&cache, &out.grad).unwrap().slices().concat();
    let mut worst: f64 = 0.0;
    let mut skipped = 0;
    let mut idx = 0;
    for s in 0..net.param_slices().len() {
        for j in 0..net.param_slices()[s].len() {
            let mut plus = net.clone();
            plus.param_slices_mut()[s][j] += h;
            let mut minus = net.clone();
            minus.param_slices_mut()[s][j] -= h;
            let a = analytic[idx];
            idx += 1;
            if plus.forward_cached(image).unwrap().relu_pattern() != base
                || minus.forward_cached(image).unwrap().relu_pattern() != base
            {
                skipped += 1;
                continue;
            }
            let lp = loss(&plus, image, teacher, labels, weights, objective);
            let lm = loss(&minus, image, teacher, labels, weights, objective);
            let fd = (lp - lm) / (2.0 * h);
            let denom = a.abs().max(fd.abs()).max(1e-8);
            worst = worst.max((a - fd).abs() / denom);
        }
    }
    (worst, skipped)
}

/// Run the built binary in `dir`; returns (exit code, stdout, stderr).
pub fn run_cli(bin: &str, dir: &std::path::Path, args: &[&str]) -> (i32, String, String) {
    let out = std::process::Command::new(bin)
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

/// Every file under `dir` with the given extensions, as (relative path, bytes), sorted.
pub fn collect_files(dir: &std::path::Path, exts: &[&str]) -> Vec<(String, Vec<u8>)> {
    fn walk(
        root: &std::path::Path,
        dir: &std::path::Path,
        exts: &[&str],
        out: &mut Vec<(String, Vec<u8>)>,
    ) {
        let mut entries: Vec<_> = std::fs::read_dir(dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(root, &p, exts, out);
            } else if p.extension().is_some_and(|e| exts.iter().any(|x| e == *x)) {
                let rel = p.strip_prefix(root).unwrap().display().to_string();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, exts, &mut out);
    out
}
