//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL
//! line each, and exits nonzero if any fails.
//!
//! Criterion 8 needs a local Warwick-QU copy; point `GLANDSEG_WARWICK_QU`
//! at the directory holding `train_*.bmp`, `testA_*.bmp`, `testB_*.bmp`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use glandseg::boundary::{compute_threshold_nth, endpoint_neighbor_ratio, RimType};
use glandseg::features::{glcm, haralick13, GLCM_LEVELS, GLCM_OFFSETS};
use glandseg::forest::{forest_to_bytes, train_forest, Forest, ForestParams, TreeNode};
use glandseg::metrics::{dice, match_objects, object_dice, object_f1, object_hausdorff};
use glandseg::phantom::{generate, PhantomSpec};
use glandseg::preprocess::multi_otsu;
use glandseg::raster::{
    draw_line, endpoints, fill_holes, label_components, label_components_with, line_points, load_label_image,
    majority_filter, save_label_png, thin, BinaryMask, Connectivity, GrayImage, LabelMap, Point,
};
use clap::Parser;
use glandseg_cli::app::{execute, Cli};
use glandseg_cli::commands::{load_report, seg_file_name, Manifest, MANIFEST_NAME};
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- 1: Otsu

/// Smallest t maximizing between-class variance for two classes, compared
/// exactly as rationals: σ_B² ∝ (S0·W1 − S1·W0)² / (W0·W1).
fn otsu2_oracle(hist: &[u64; 256]) -> usize {
    let (n, s): (u64, u64) = hist.iter().enumerate().fold((0, 0), |(n, s), (i, &c)| (n + c, s + c * i as u64));
    let mut best: Option<(u128, u128, usize)> = None;
    let (mut w0, mut s0) = (0u64, 0u64);
    for t in 1..=255usize {
        w0 += hist[t - 1];
        s0 += hist[t - 1] * (t as u64 - 1);
        let (w1, s1) = (n - w0, s - s0);
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let d = (s0 as i128 * w1 as i128 - s1 as i128 * w0 as i128).unsigned_abs();
        let (num, den) = (d * d, w0 as u128 * w1 as u128);
        if best.is_none_or(|(bn, bd, _)| num * bd > bn * den) {
            best = Some((num, den, t));
        }
    }
    best.expect("two distinct intensities").2
}

/// Exhaustive search over every 1 ≤ t1 < t2 < t3 < t4 ≤ 255 maximizing
/// Σ ω_k (μ_k − μ_T)², first tuple in lexicographic order on ties.
fn otsu5_oracle(hist: &[u64; 256]) -> [usize; 4] {
    let total: u64 = hist.iter().sum();
    let mu_t = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum::<f64>() / total as f64;
    let mut term = vec![0.0f64; 257 * 257];
    for a in 0..256 {
        let (mut c, mut s) = (0u64, 0u64);
        for b in a + 1..=256 {
            c += hist[b - 1];
            s += hist[b - 1] * (b as u64 - 1);
            if c > 0 {
                let w = c as f64 / total as f64;
                let m = s as f64 / c as f64;
                term[a * 257 + b] = w * (m - mu_t) * (m - mu_t);
            }
        }
    }
    let t = |a: usize, b: usize| term[a * 257 + b];
    let mut best = (f64::NEG_INFINITY, [0; 4]);
    for t1 in 1..=252 {
        let v1 = t(0, t1);
        for t2 in t1 + 1..=253 {
            let v2 = v1 + t(t1, t2);
            for t3 in t2 + 1..=254 {
                let v3 = v2 + t(t2, t3);
                for t4 in t3 + 1..=255 {
                    let v = v3 + t(t3, t4) + t(t4, 256);
                    if v > best.0 {
                        best = (v, [t1, t2, t3, t4]);
                    }
                }
            }
        }
    }
    best.1
}

fn hist_of(img: &GrayImage) -> [u64; 256] {
    let mut h = [0u64; 256];
    img.data().iter().for_each(|&v| h[v as usize] += 1);
    h
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x07_5u64);
    for case in 0..100 {
        let data: Vec<u8> = match case % 3 {
            0 => (0..1024).map(|_| rng.gen()).collect(),
            1 => (0..1024).map(|_| rng.gen_range(40..90u8)).collect(),
            _ => (0..1024)
                .map(|_| if rng.gen_bool(0.3) { rng.gen_range(10..80) } else { rng.gen_range(120..250) })
                .collect(),
        };
        let img = GrayImage::new(32, 32, data).unwrap();
        let got = multi_otsu(&img, 2).map_err(|e| e.to_string())?.thresholds[0] as usize;
        let want = otsu2_oracle(&hist_of(&img));
        ensure(got == want, || format!("2-class case {case}: threshold {got}, oracle {want}"))?;
    }
    for case in 0..20 {
        let mut centers: Vec<u8> = Vec::new();
        while centers.len() < 5 {
            let c = rng.gen_range(5..250u8);
            if centers.iter().all(|&o| o.abs_diff(c) > 12) {
                centers.push(c);
            }
        }
        let data: Vec<u8> = (0..48 * 48)
            .map(|_| {
                let c = centers[rng.gen_range(0..5)];
                c.saturating_add_signed(rng.gen_range(-2..=2))
            })
            .collect();
        let img = GrayImage::new(48, 48, data).unwrap();
        let got: Vec<usize> = multi_otsu(&img, 5).map_err(|e| e.to_string())?.thresholds.iter().map(|&t| t as usize).collect();
        let want = otsu5_oracle(&hist_of(&img));
        ensure(got == want, || format!("5-class case {case}: thresholds {got:?}, oracle {want:?}"))?;
    }
    Ok("100 two-class images and 20 five-mode images match exhaustive search exactly".into())
}

// ------------------------------------------------------------ 2: Haralick

/// GLCM by visiting every ordered pair of 8-adjacent pixels, then the 13
/// features from their textbook definitions.
fn haralick_oracle(patch: &GrayImage) -> [f64; 13] {
    let l = GLCM_LEVELS;
    let (w, h) = (patch.width() as isize, patch.height() as isize);
    let level = |x: isize, y: isize| patch.get(x as usize, y as usize) as usize / (256 / l);
    let mut p = vec![vec![0.0f64; l]; l];
    let mut total = 0.0;
    for y in 0..h {
        for x in 0..w {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if (dx, dy) != (0, 0) && nx >= 0 && ny >= 0 && nx < w && ny < h {
                        p[level(x, y)][level(nx, ny)] += 1.0;
                        total += 1.0;
                    }
                }
            }
        }
    }
    p.iter_mut().flatten().for_each(|v| *v /= total);
    let ln0 = |v: f64| if v > 0.0 { v * v.ln() } else { 0.0 };
    let idx = |i: usize| i as f64;

    let px: Vec<f64> = (0..l).map(|i| (0..l).map(|j| p[i][j]).sum()).collect();
    let py: Vec<f64> = (0..l).map(|j| (0..l).map(|i| p[i][j]).sum()).collect();
    let mx: f64 = (0..l).map(|i| idx(i) * px[i]).sum();
    let my: f64 = (0..l).map(|j| idx(j) * py[j]).sum();
    let sx = ((0..l).map(|i| idx(i) * idx(i) * px[i]).sum::<f64>() - mx * mx).max(0.0).sqrt();
    let sy = ((0..l).map(|j| idx(j) * idx(j) * py[j]).sum::<f64>() - my * my).max(0.0).sqrt();
    let p_sum: Vec<f64> = (0..2 * l - 1)
        .map(|k| (0..l).filter(|&i| k >= i && k - i < l).map(|i| p[i][k - i]).sum())
        .collect();
    let p_diff: Vec<f64> = (0..l)
        .map(|k| (0..l).flat_map(|i| (0..l).map(move |j| (i, j))).filter(|&(i, j)| i.abs_diff(j) == k).map(|(i, j)| p[i][j]).sum())
        .collect();

    let pairs = || (0..l).flat_map(|i| (0..l).map(move |j| (i, j)));
    let asm: f64 = pairs().map(|(i, j)| p[i][j] * p[i][j]).sum();
    let contrast: f64 = (0..l).map(|k| idx(k * k) * p_diff[k]).sum();
    let correlation = if sx > 1e-12 && sy > 1e-12 {
        (pairs().map(|(i, j)| idx(i) * idx(j) * p[i][j]).sum::<f64>() - mx * my) / (sx * sy)
    } else {
        0.0
    };
    let variance: f64 = pairs().map(|(i, j)| (idx(i) - mx).powi(2) * p[i][j]).sum();
    let idm: f64 = pairs().map(|(i, j)| p[i][j] / (1.0 + (idx(i) - idx(j)).powi(2))).sum();
    let sum_avg: f64 = p_sum.iter().enumerate().map(|(k, &v)| idx(k) * v).sum();
    let sum_var: f64 = p_sum.iter().enumerate().map(|(k, &v)| (idx(k) - sum_avg).powi(2) * v).sum();
    let sum_ent: f64 = -p_sum.iter().map(|&v| ln0(v)).sum::<f64>();
    let hxy: f64 = -pairs().map(|(i, j)| ln0(p[i][j])).sum::<f64>();
    let diff_var = (0..l).map(|k| idx(k * k) * p_diff[k]).sum::<f64>() - (0..l).map(|k| idx(k) * p_diff[k]).sum::<f64>().powi(2);
    let diff_ent: f64 = -p_diff.iter().map(|&v| ln0(v)).sum::<f64>();
    let hx: f64 = -px.iter().map(|&v| ln0(v)).sum::<f64>();
    let hy: f64 = -py.iter().map(|&v| ln0(v)).sum::<f64>();
    let hxy1: f64 = -pairs().filter(|&(i, j)| px[i] * py[j] > 0.0).map(|(i, j)| p[i][j] * (px[i] * py[j]).ln()).sum::<f64>();
    let hxy2: f64 = -pairs().map(|(i, j)| ln0(px[i] * py[j])).sum::<f64>();
    let imc1 = if hx.max(hy) > 0.0 { (hxy - hxy1) / hx.max(hy) } else { 0.0 };
    let imc2 = (1.0 - (-2.0 * (hxy2 - hxy)).exp()).max(0.0).sqrt();
    [asm, contrast, correlation, variance, idm, sum_avg, sum_var, sum_ent, hxy, diff_var, diff_ent, imc1, imc2]
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x4a2);
    let mut worst = 0.0f64;
    for case in 0..10 {
        let data: Vec<u8> = match case % 4 {
            0 => (0..64).map(|_| rng.gen()).collect(),
            1 => (0..64).map(|_| [16u8, 96, 200][rng.gen_range(0..3)]).collect(),
            2 => (0..64).map(|i| ((i % 8) * 30 + rng.gen_range(0..10)) as u8).collect(),
            _ => (0..64).map(|_| rng.gen_range(100..140)).collect(),
        };
        let patch = GrayImage::new(8, 8, data).unwrap();
        let got = haralick13(&glcm(&patch, GLCM_LEVELS, &GLCM_OFFSETS).unwrap()).map_err(|e| e.to_string())?;
        let want = haralick_oracle(&patch);
        for (k, (g, w)) in got.iter().zip(&want).enumerate() {
            let err = (g - w).abs();
            worst = worst.max(err);
            ensure(err <= 1e-9, || format!("patch {case} feature {k}: {g} vs oracle {w}"))?;
        }
    }
    let flat = GrayImage::filled(8, 8, 123).unwrap();
    let f = haralick13(&glcm(&flat, GLCM_LEVELS, &GLCM_OFFSETS).unwrap()).map_err(|e| e.to_string())?;
    ensure(f[0] == 1.0 && f[8] == 0.0 && f[1] == 0.0, || format!("constant patch: asm {} entropy {} contrast {}", f[0], f[8], f[1]))?;
    Ok(format!("10 patches x 13 features within 1e-9 (max err {worst:.1e}); constant patch exact"))
}

// -------------------------------------------------------------- 3: forest

fn leaf_distribution(node: &TreeNode, x: &[f64]) -> [f64; 2] {
    match node {
        TreeNode::Leaf { counts } => {
            let n = f64::from(counts[0] + counts[1]);
            [f64::from(counts[0]) / n, f64::from(counts[1]) / n]
        }
        TreeNode::Split { feature, threshold, left, right } => {
            if x[*feature as usize] <= *threshold {
                leaf_distribution(left, x)
            } else {
                leaf_distribution(right, x)
            }
        }
    }
}

fn two_gaussians(n: usize, rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<u8>) {
    let unit = Normal::new(0.0, 1.0).unwrap();
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let class = (i % 2) as u8;
        let shift = 2.0 * f64::from(class);
        x.push(vec![shift + unit.sample(rng), shift + unit.sample(rng)]);
        y.push(class);
    }
    (x, y)
}

fn accuracy(forest: &Forest, x: &[Vec<f64>], y: &[u8]) -> f64 {
    x.iter().zip(y).filter(|(r, &t)| forest.predict(r) == t).count() as f64 / x.len() as f64
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xf0e);
    let (x, y) = two_gaussians(500, &mut rng);
    let (hx, hy) = two_gaussians(500, &mut rng);
    let params = ForestParams { n_trees: 100, features_per_node: 1, seed: 42, ..Default::default() };
    let a = train_forest(&x, &y, &params).map_err(|e| e.to_string())?;
    let b = train_forest(&x, &y, &params).map_err(|e| e.to_string())?;
    ensure(forest_to_bytes(&a) == forest_to_bytes(&b), || "retraining with the same seed changed the model".into())?;

    let mut worst = 0.0f64;
    for _ in 0..100 {
        let v = vec![rng.gen_range(-4.0..6.0), rng.gen_range(-4.0..6.0)];
        let mut p1 = 0.0;
        for tree in &a.trees {
            p1 += leaf_distribution(tree, &v)[1];
        }
        p1 /= a.trees.len() as f64;
        let got = a.predict_proba(&v).p[1];
        worst = worst.max((got - p1).abs());
        ensure((got - p1).abs() <= 1e-12, || format!("averaging at {v:?}: {got} vs oracle {p1}"))?;
    }
    let (train_acc, held_acc) = (accuracy(&a, &x, &y), accuracy(&a, &hx, &hy));
    ensure(train_acc >= 0.95 && held_acc >= 0.85, || format!("accuracy train {train_acc:.3} held-out {held_acc:.3}"))?;
    Ok(format!(
        "bit-identical retrain; averaging max err {worst:.1e}; accuracy train {train_acc:.3} held-out {held_acc:.3}"
    ))
}

// ------------------------------------------------------ 4: thick/thin ratio

fn neighbor_counts_oracle(mask: &BinaryMask, p: f64) -> Vec<usize> {
    let skeleton = thin(mask);
    let ends = endpoints(&skeleton);
    let comps = label_components(&skeleton);
    ends.iter()
        .map(|a| {
            ends.iter()
                .filter(|b| {
                    let d = ((a.x as f64 - b.x as f64).powi(2) + (a.y as f64 - b.y as f64).powi(2)).sqrt();
                    comps.get(a.x, a.y) != comps.get(b.x, b.y) && d <= p
                })
                .count()
        })
        .collect()
}

fn ratio_oracle(mask: &BinaryMask, p: f64) -> f64 {
    let lambda = neighbor_counts_oracle(mask, p);
    if lambda.is_empty() {
        0.0
    } else {
        lambda.iter().sum::<usize>() as f64 / lambda.len() as f64
    }
}

fn random_blobs(rng: &mut ChaCha8Rng, w: usize, h: usize) -> BinaryMask {
    let mut m = BinaryMask::empty(w, h).unwrap();
    for _ in 0..rng.gen_range(0..25) {
        let (cx, cy) = (rng.gen_range(0..w), rng.gen_range(0..h));
        let (rx, ry) = (rng.gen_range(0..4), rng.gen_range(0..3));
        for y in cy.saturating_sub(ry)..(cy + ry + 1).min(h) {
            for x in cx.saturating_sub(rx)..(cx + rx + 1).min(w) {
                m.set(x, y, true);
            }
        }
    }
    m
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xe42);
    let mut masks_checked = 0;
    for set in 0..50 {
        let p = [5.0, 7.5, 10.0, 12.0][set % 4];
        let masks: Vec<BinaryMask> = (0..rng.gen_range(1..5))
            .map(|_| {
                let (w, h) = (rng.gen_range(20..48), rng.gen_range(20..48));
                random_blobs(&mut rng, w, h)
            })
            .collect();
        // N_th = (1/|I|) Σ_i (1/|E_i|) Σ_j λ_j, written out literally.
        let mut outer = 0.0;
        for m in &masks {
            let lambda = neighbor_counts_oracle(m, p);
            let inner = if lambda.is_empty() {
                0.0
            } else {
                lambda.iter().sum::<usize>() as f64 / lambda.len() as f64
            };
            outer += inner;
            let got = endpoint_neighbor_ratio(m, p);
            ensure(got == ratio_oracle(m, p), || format!("set {set}: ratio {got} vs oracle {}", ratio_oracle(m, p)))?;
            masks_checked += 1;
        }
        let want = outer / masks.len() as f64;
        let got = compute_threshold_nth(&masks, p).map_err(|e| e.to_string())?;
        ensure(got == want, || format!("set {set}: threshold {got} vs double sum {want}"))?;
    }
    Ok(format!("50 mask sets ({masks_checked} masks) equal the literal double sum and pairwise oracle exactly"))
}

// ---------------------------------------------------------- 5: morphology

const PROP_CASES: u32 = 256;

fn mask_strategy(max: usize) -> impl Strategy<Value = BinaryMask> {
    (1..=max, 1..=max, 0.15f64..0.75, any::<bool>()).prop_flat_map(|(w, h, density, smooth)| {
        proptest::collection::vec(proptest::bool::weighted(density), w * h).prop_map(move |bits| {
            let m = BinaryMask::new(w, h, bits).unwrap();
            if smooth {
                majority_filter(&m)
            } else {
                m
            }
        })
    })
}

fn run_prop<S: Strategy>(name: &str, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String>
where
    S::Value: std::fmt::Debug,
{
    let mut runner = TestRunner::new(PropConfig { cases: PROP_CASES, failure_persistence: None, ..PropConfig::default() });
    runner.run(&strategy, test).map_err(|e| format!("{name}: {e}"))
}

fn flood_fill_oracle(mask: &BinaryMask) -> Vec<u32> {
    let (w, h) = (mask.width(), mask.height());
    let mut lab = vec![0u32; w * h];
    let mut next = 0;
    for start in 0..w * h {
        if !mask.data()[start] || lab[start] != 0 {
            continue;
        }
        next += 1;
        lab[start] = next;
        let mut stack = vec![start];
        while let Some(i) = stack.pop() {
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for (dx, dy) in [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)] {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if mask.data()[j] && lab[j] == 0 {
                    lab[j] = next;
                    stack.push(j);
                }
            }
        }
    }
    lab
}

/// Number of 4-connected background components not touching the border.
fn hole_count(mask: &BinaryMask) -> u32 {
    let bg = BinaryMask::new(mask.width(), mask.height(), mask.data().iter().map(|&b| !b).collect()).unwrap();
    let lm = label_components_with(&bg, Connectivity::Four);
    let mut touches = vec![false; lm.count() as usize + 1];
    let (w, h) = (mask.width(), mask.height());
    for y in 0..h {
        for x in 0..w {
            if x == 0 || y == 0 || x + 1 == w || y + 1 == h {
                touches[lm.get(x, y) as usize] = true;
            }
        }
    }
    (1..=lm.count()).filter(|&l| !touches[l as usize]).count() as u32
}

fn criterion_5() -> Outcome {
    run_prop("fill_holes idempotence", mask_strategy(32), |m| {
        let once = fill_holes(&m);
        prop_assert!(m.is_subset_of(&once));
        prop_assert_eq!(fill_holes(&once), once);
        Ok(())
    })?;

    run_prop("thin connectivity", mask_strategy(32), |m| {
        let sk = thin(&m);
        prop_assert!(sk.is_subset_of(&m));
        let (before, after) = (label_components(&m), label_components(&sk));
        prop_assert_eq!(before.count(), after.count());
        // Every original component keeps exactly one skeleton component.
        let mut owner = vec![0u32; after.count() as usize + 1];
        let mut covered = vec![false; before.count() as usize + 1];
        for p in sk.foreground() {
            let (a, b) = (after.get(p.x, p.y), before.get(p.x, p.y));
            prop_assert!(owner[a as usize] == 0 || owner[a as usize] == b);
            owner[a as usize] = b;
            covered[b as usize] = true;
        }
        prop_assert!(covered[1..].iter().all(|&c| c));
        prop_assert_eq!(hole_count(&m), hole_count(&sk));
        Ok(())
    })?;

    let pair = mask_strategy(32).prop_flat_map(|b| {
        let n = b.width() * b.height();
        (Just(b), proptest::collection::vec(any::<bool>(), n))
    });
    run_prop("majority monotonicity", pair, |(b, keep)| {
        let a = BinaryMask::new(b.width(), b.height(), b.data().iter().zip(&keep).map(|(&x, &k)| x && k).collect()).unwrap();
        prop_assert!(majority_filter(&a).is_subset_of(&majority_filter(&b)));
        Ok(())
    })?;

    let ends = (0usize..32, 0usize..32, 0usize..32, 0usize..32);
    run_prop("bresenham oracle", ends, |(x0, y0, x1, y1)| {
        let (a, b) = (Point::new(x0, y0), Point::new(x1, y1));
        let pts = line_points(a, b);
        let (dx, dy) = (x1 as f64 - x0 as f64, y1 as f64 - y0 as f64);
        prop_assert_eq!(pts.len(), x0.abs_diff(x1).max(y0.abs_diff(y1)) + 1);
        prop_assert!(pts.contains(&a) && pts.contains(&b));
        let x_major = dx.abs() >= dy.abs();
        for w in pts.windows(2) {
            prop_assert!(w[0].x.abs_diff(w[1].x) <= 1 && w[0].y.abs_diff(w[1].y) <= 1 && w[0] != w[1]);
            let major_step = if x_major { w[0].x.abs_diff(w[1].x) } else { w[0].y.abs_diff(w[1].y) };
            prop_assert_eq!(major_step, 1);
        }
        for p in &pts {
            // Distance from the ideal segment along the minor axis.
            let dev = if a == b {
                0.0
            } else if x_major {
                (y0 as f64 + dy * (p.x as f64 - x0 as f64) / dx - p.y as f64).abs()
            } else {
                (x0 as f64 + dx * (p.y as f64 - y0 as f64) / dy - p.x as f64).abs()
            };
            prop_assert!(dev <= 0.5 + 1e-12, "point {:?} deviates {}", p, dev);
        }
        let mut fwd = pts.clone();
        let mut back = line_points(b, a);
        fwd.sort();
        back.sort();
        prop_assert_eq!(&fwd, &back);
        let drawn = draw_line(&BinaryMask::empty(32, 32).unwrap(), a, b).unwrap();
        prop_assert_eq!(drawn.count(), pts.len());
        prop_assert!(pts.iter().all(|p| drawn.get(p.x, p.y)));
        Ok(())
    })?;

    run_prop("components vs flood fill", mask_strategy(32), |m| {
        let (got, want) = (label_components(&m), flood_fill_oracle(&m));
        prop_assert_eq!(got.labels(), want.as_slice());
        Ok(())
    })?;
    Ok(format!("5 properties x {PROP_CASES} random masks up to 32x32"))
}

// ------------------------------------------------------------- 6: metrics

fn label_map_strategy() -> impl Strategy<Value = LabelMap> {
    (1usize..=24, 1usize..=24, 0usize..6, any::<u64>()).prop_map(|(w, h, n, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut raw = vec![0u32; w * h];
        for l in 1..=n as u32 {
            let (x0, y0) = (rng.gen_range(0..w), rng.gen_range(0..h));
            let (x1, y1) = ((x0 + rng.gen_range(0..10)).min(w - 1), (y0 + rng.gen_range(0..10)).min(h - 1));
            for y in y0..=y1 {
                for x in x0..=x1 {
                    if rng.gen_bool(0.9) {
                        raw[y * w + x] = l;
                    }
                }
            }
        }
        LabelMap::from_raw(w, h, &raw).unwrap()
    })
}

fn objects(lm: &LabelMap) -> Vec<Vec<Point>> {
    let mut out = vec![Vec::new(); lm.count() as usize + 1];
    for y in 0..lm.height() {
        for x in 0..lm.width() {
            out[lm.get(x, y) as usize].push(Point::new(x, y));
        }
    }
    out
}

fn brute_hausdorff(a: &[Point], b: &[Point]) -> f64 {
    let directed = |p: &[Point], q: &[Point]| {
        p.iter().map(|u| q.iter().map(|v| (u.dist2(*v) as f64).sqrt()).fold(f64::INFINITY, f64::min)).fold(0.0, f64::max)
    };
    directed(a, b).max(directed(b, a))
}

/// Area-weighted two-sided Hausdorff: each object is compared with the
/// object of the other map it overlaps most (earliest first pixel on ties)
/// and pays the image diagonal when it overlaps none.
fn object_hausdorff_oracle(pred: &LabelMap, gt: &LabelMap) -> f64 {
    let (po, go) = (objects(pred), objects(gt));
    let diag = ((gt.width().pow(2) + gt.height().pow(2)) as f64).sqrt();
    match (pred.count(), gt.count()) {
        (0, 0) => return 0.0,
        (0, _) | (_, 0) => return diag,
        _ => {}
    }
    let side = |own: &[Vec<Point>], other: &[Vec<Point>], other_map: &LabelMap| {
        let total: usize = own[1..].iter().map(Vec::len).sum();
        let mut sum = 0.0;
        for obj in &own[1..] {
            let mut best: Option<(usize, Point, u32)> = None;
            for l in 1..other.len() as u32 {
                let ov = obj.iter().filter(|p| other_map.get(p.x, p.y) == l).count();
                let first = other[l as usize][0];
                let better = match best {
                    None => ov > 0,
                    Some((n, f, _)) => ov > n || (ov == n && (first.y, first.x) < (f.y, f.x)),
                };
                if better {
                    best = Some((ov, first, l));
                }
            }
            let d = match best {
                Some((_, _, l)) => brute_hausdorff(obj, &other[l as usize]),
                None => diag,
            };
            sum += obj.len() as f64 / total as f64 * d;
        }
        sum
    };
    0.5 * (side(&go, &po, pred) + side(&po, &go, gt))
}

fn permute(lm: &LabelMap, seed: u64) -> LabelMap {
    let n = lm.count();
    let mut perm: Vec<u32> = (1..=n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..perm.len()).rev() {
        perm.swap(i, rng.gen_range(0..=i));
    }
    let labels = lm.labels().iter().map(|&l| if l == 0 { 0 } else { perm[l as usize - 1] }).collect();
    LabelMap::new(lm.width(), lm.height(), labels).unwrap()
}

fn same_shape_pair() -> impl Strategy<Value = (LabelMap, LabelMap, u64)> {
    (label_map_strategy(), any::<u64>(), any::<u64>()).prop_map(|(gt, seed, perm_seed)| {
        // A prediction of the same size: ground truth with objects
        // shifted, dropped, or merged by a random relabeling.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, h) = (gt.width(), gt.height());
        let (sx, sy) = (rng.gen_range(0..3), rng.gen_range(0..3));
        let mut raw = vec![0u32; w * h];
        for y in 0..h {
            for x in 0..w {
                if x >= sx && y >= sy {
                    let l = gt.get(x - sx, y - sy);
                    raw[y * w + x] = if l > 0 && rng.gen_bool(0.97) { (l + rng.gen_range(0..2)) / 2 + 1 } else { 0 };
                }
            }
        }
        (LabelMap::from_raw(w, h, &raw).unwrap(), gt, perm_seed)
    })
}

fn criterion_6() -> Outcome {
    run_prop("object hausdorff oracle", same_shape_pair(), |(pred, gt, _)| {
        let got = object_hausdorff(&pred, &gt).unwrap();
        let want = object_hausdorff_oracle(&pred, &gt);
        prop_assert!((got - want).abs() <= 1e-9, "{} vs oracle {}", got, want);
        Ok(())
    })?;
    run_prop("pred = gt", label_map_strategy(), |gt| {
        let s = object_f1(&match_objects(&gt, &gt).unwrap());
        if gt.count() > 0 {
            prop_assert_eq!(s.f1, 1.0);
        }
        prop_assert_eq!(object_dice(&gt, &gt).unwrap(), 1.0);
        prop_assert_eq!(object_hausdorff(&gt, &gt).unwrap(), 0.0);
        Ok(())
    })?;
    run_prop("label permutation invariance", same_shape_pair(), |(pred, gt, seed)| {
        let (pp, gp) = (permute(&pred, seed), permute(&gt, seed.rotate_left(17)));
        let (m0, m1) = (match_objects(&pred, &gt).unwrap(), match_objects(&pp, &gp).unwrap());
        prop_assert_eq!((m0.tp, m0.fp, m0.fn_), (m1.tp, m1.fp, m1.fn_));
        prop_assert!((object_dice(&pred, &gt).unwrap() - object_dice(&pp, &gp).unwrap()).abs() <= 1e-12);
        prop_assert!((object_hausdorff(&pred, &gt).unwrap() - object_hausdorff(&pp, &gp).unwrap()).abs() <= 1e-9);
        Ok(())
    })?;
    Ok(format!("hausdorff oracle, identity and permutation checks over {PROP_CASES} random maps up to 24x24 each"))
}

// ------------------------------------------------------ 7: phantom suite

fn cli(args: &[&str]) -> Result<u8, String> {
    let mut argv = vec!["glandseg"];
    argv.extend_from_slice(args);
    let parsed = Cli::try_parse_from(&argv).map_err(|e| e.to_string())?;
    execute(&parsed).map(|done| done.code).map_err(|e| e.to_string())
}

fn write_phantom(dir: &Path, id: &str, spec: &PhantomSpec) -> Result<(), String> {
    let ph = generate(spec).map_err(|e| e.to_string())?;
    ph.image.to_image().save(dir.join(format!("{id}.png"))).map_err(|e| e.to_string())?;
    save_label_png(&ph.truth, &dir.join(format!("{id}_anno.png"))).map_err(|e| e.to_string())
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

fn criterion_7() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (data, out) = (tmp.path().join("data"), tmp.path().join("out"));
    std::fs::create_dir_all(&data).map_err(|e| e.to_string())?;
    let mut intended = Vec::new();
    for i in 0..6u64 {
        let rim = if i % 2 == 0 { RimType::Thin } else { RimType::Thick };
        write_phantom(&data, &format!("train_{i:02}"), &PhantomSpec::new(rim, 1000 + i))?;
    }
    for i in 0..10u64 {
        let rim = if i % 2 == 0 { RimType::Thin } else { RimType::Thick };
        let id = format!("testA_{i:02}");
        write_phantom(&data, &id, &PhantomSpec::new(rim, 5000 + i))?;
        intended.push((id, rim));
    }
    let model = tmp.path().join("model.glsrf");
    let report = tmp.path().join("report.json");
    ensure(cli(&["train", "--data", path_str(&data), "--model", path_str(&model)])? == 0, || "train failed".into())?;
    let seg = cli(&["segment", "--data", path_str(&data), "--model", path_str(&model), "--out", path_str(&out), "--split", "testA"])?;
    ensure(seg == 0, || format!("segment exit code {seg}"))?;
    let ev = cli(&["evaluate", "--pred", path_str(&out), "--gt", path_str(&data), "--report", path_str(&report)])?;
    ensure(ev == 0, || format!("evaluate exit code {ev}"))?;

    let manifest: Manifest =
        serde_json::from_slice(&std::fs::read(out.join(MANIFEST_NAME)).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let branch_ok = intended
        .iter()
        .filter(|(id, rim)| manifest.images.iter().any(|r| &r.id == id && r.kind == *rim))
        .count();
    let rep = load_report(&report).map_err(|e| e.to_string())?;
    let split = rep.splits.iter().find(|s| s.split == "testA").ok_or("no testA split in report")?;
    let f1 = split.aggregate.f1;
    let mut pixel_dice = 0.0;
    for (id, _) in &intended {
        let pred = load_label_image(&out.join(seg_file_name(id))).map_err(|e| e.to_string())?;
        let gt = load_label_image(&data.join(format!("{id}_anno.png"))).map_err(|e| e.to_string())?;
        pixel_dice += dice(&pred.foreground(), &gt.foreground()).map_err(|e| e.to_string())?;
    }
    pixel_dice /= intended.len() as f64;
    let detail = format!(
        "object F1 {f1:.3}, pixel Dice {pixel_dice:.3}, object Dice {:.3}, branch {branch_ok}/10",
        split.aggregate.object_dice
    );
    ensure(f1 >= 0.8 && pixel_dice >= 0.7 && branch_ok >= 8, || detail.clone())?;
    Ok(detail)
}

// --------------------------------------------------------- 8: Warwick-QU

const WARWICK_VAR: &str = "GLANDSEG_WARWICK_QU";
/// Marks an optional criterion whose inputs are absent.
const SKIP_PREFIX: &str = "skipped: ";

fn criterion_8() -> Outcome {
    let Some(root) = std::env::var_os(WARWICK_VAR) else {
        return Ok(format!("{SKIP_PREFIX}{WARWICK_VAR} not set"));
    };
    let root = Path::new(&root);
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (model, out, report) = (tmp.path().join("model.glsrf"), tmp.path().join("out"), tmp.path().join("report.json"));
    ensure(cli(&["train", "--data", path_str(root), "--model", path_str(&model)])? == 0, || "train failed".into())?;
    for split in ["testA", "testB"] {
        let code = cli(&["segment", "--data", path_str(root), "--model", path_str(&model), "--out", path_str(&out), "--split", split])?;
        ensure(code == 0, || format!("segment {split} exit code {code}"))?;
    }
    ensure(cli(&["evaluate", "--pred", path_str(&out), "--gt", path_str(root), "--report", path_str(&report)])? == 0, || "evaluate failed".into())?;
    let rep = load_report(&report).map_err(|e| e.to_string())?;
    let mut parts = Vec::new();
    for (name, expected) in [("train", 85), ("testA", 60), ("testB", 20)] {
        let s = rep.splits.iter().find(|s| s.split == name).ok_or(format!("split {name} missing"))?;
        ensure(s.per_image.len() == expected, || format!("{name}: {} images, expected {expected}", s.per_image.len()))?;
        let a = &s.aggregate;
        if name != "train" {
            ensure(a.f1.is_finite() && a.object_dice.is_finite() && a.object_hausdorff.is_finite(), || format!("{name}: non-finite metric"))?;
            parts.push(format!("{name} F1 {:.3} Dice {:.3} Hausdorff {:.1}", a.f1, a.object_dice, a.object_hausdorff));
        }
    }
    Ok(parts.join("; "))
}

fn main() {
    type Criterion = (u32, &'static str, fn() -> Outcome, Duration);
    let criteria: [Criterion; 8] = [
        (1, "multi-level Otsu vs exhaustive search", criterion_1, Duration::from_secs(60)),
        (2, "Haralick features vs brute-force GLCM", criterion_2, Duration::MAX),
        (3, "random forest determinism, averaging, accuracy", criterion_3, Duration::from_secs(120)),
        (4, "thick/thin threshold double sum", criterion_4, Duration::MAX),
        (5, "morphology properties", criterion_5, Duration::MAX),
        (6, "object metrics", criterion_6, Duration::MAX),
        (7, "end-to-end phantom suite", criterion_7, Duration::from_secs(600)),
        (8, "Warwick-QU end to end", criterion_8, Duration::MAX),
    ];
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, run, limit) in criteria {
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|panic| {
            let msg = panic.downcast_ref::<String>().cloned().or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > limit => Err(format!("{detail}; took {:.1}s, limit {}s", elapsed.as_secs_f64(), limit.as_secs())),
            other => other,
        };
        match outcome {
            Ok(detail) => {
                let (status, detail) = match detail.strip_prefix(SKIP_PREFIX) {
                    Some(why) => ("SKIP", why.to_string()),
                    None => ("PASS", detail),
                };
                println!("acceptance criterion {id} [{name}]: {status} ({detail}; {:.1}s)", elapsed.as_secs_f64());
            }
            Err(detail) => {
                failed += 1;
                println!("acceptance criterion {id} [{name}]: FAIL ({detail}; {:.1}s)", elapsed.as_secs_f64());
            }
        }
    }
    if failed > 0 {
        println!("acceptance: {failed} criteria failed");
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}
