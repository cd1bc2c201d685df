//! Object-level evaluation: detection F1, object Dice and object Hausdorff.
//!
//! Detection uses the GlaS rule: a predicted object is a true positive when
//! it covers at least half of a not-yet-claimed ground-truth object, with
//! candidate pairs resolved greedily by descending overlap. Ties anywhere
//! go to the object whose first pixel comes first in raster order. Object Dice and
//! object Hausdorff are the area-weighted two-sided sums
//!
//! ```text
//! ½ [ Σ_i ω_i · D(G_i, S*(G_i)) + Σ_j ω̃_j · D(S_j, G*(S_j)) ]
//! ```
//!
//! where `S*(G)` is the predicted object overlapping `G` the most.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, LabelMap, Point};

/// Fraction of a ground-truth object a prediction must cover to count.
pub const MATCH_FRACTION: f64 = 0.5;

fn ensure_same_dims(pred: &LabelMap, gt: &LabelMap) -> Result<()> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(Error::DimensionMismatch {
            expected: (gt.width(), gt.height()),
            found: (pred.width(), pred.height()),
        });
    }
    Ok(())
}

/// Raster index of each object's first pixel, indexed by label. Ties are
/// broken on these so results do not depend on label numbering.
fn anchors(lm: &LabelMap) -> Vec<usize> {
    let mut first = vec![usize::MAX; lm.count() as usize + 1];
    for (i, &l) in lm.labels().iter().enumerate() {
        if l != 0 && first[l as usize] == usize::MAX {
            first[l as usize] = i;
        }
    }
    first
}

/// Pairwise pixel overlaps `(pred label, gt label) -> count`, background
/// excluded.
fn overlaps(pred: &LabelMap, gt: &LabelMap) -> HashMap<(u32, u32), usize> {
    let mut ov = HashMap::new();
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        if p != 0 && g != 0 {
            *ov.entry((p, g)).or_insert(0) += 1;
        }
    }
    ov
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectMatch {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// `(predicted label, ground-truth label)` of every true positive.
    pub pairs: Vec<(u32, u32)>,
}

pub fn match_objects(pred: &LabelMap, gt: &LabelMap) -> Result<ObjectMatch> {
    ensure_same_dims(pred, gt)?;
    let gt_area = gt.areas();
    let (pa, ga) = (anchors(pred), anchors(gt));
    let mut candidates: Vec<(usize, u32, u32)> = overlaps(pred, gt)
        .into_iter()
        .filter(|&((_, g), n)| n as f64 >= MATCH_FRACTION * gt_area[g as usize] as f64)
        .map(|((p, g), n)| (n, g, p))
        .collect();
    candidates.sort_by_key(|&(n, g, p)| (std::cmp::Reverse(n), ga[g as usize], pa[p as usize]));

    let mut pred_used = vec![false; pred.count() as usize + 1];
    let mut gt_used = vec![false; gt.count() as usize + 1];
    let mut pairs = Vec::new();
    for (_, g, p) in candidates {
        if !pred_used[p as usize] && !gt_used[g as usize] {
            pred_used[p as usize] = true;
            gt_used[g as usize] = true;
            pairs.push((p, g));
        }
    }
    let tp = pairs.len();
    Ok(ObjectMatch {
        tp,
        fp: pred.count() as usize - tp,
        fn_: gt.count() as usize - tp,
        pairs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision, recall and F1 with `0/0 = 0`.
pub fn object_f1(m: &ObjectMatch) -> DetectionScore {
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(m.tp, m.tp + m.fp);
    let recall = ratio(m.tp, m.tp + m.fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    DetectionScore { precision, recall, f1 }
}

/// Pixel Dice `2|a∩b| / (|a|+|b|)`; two empty masks score 1.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::DimensionMismatch {
            expected: (a.width(), a.height()),
            found: (b.width(), b.height()),
        });
    }
    let (mut inter, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        na += usize::from(x);
        nb += usize::from(y);
        inter += usize::from(x && y);
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (na + nb) as f64)
}

/// For each label of `from`, the label of `to` with the largest overlap
/// (first in raster order on ties), or 0 when nothing overlaps.
fn best_partner(ov: &HashMap<(u32, u32), usize>, n_from: u32, to_anchor: &[usize], from_is_pred: bool) -> Vec<(u32, usize)> {
    let mut best = vec![(0u32, 0usize); n_from as usize + 1];
    for (&(p, g), &n) in ov {
        let (from, to) = if from_is_pred { (p, g) } else { (g, p) };
        let slot = &mut best[from as usize];
        if n > slot.1 || (n == slot.1 && to_anchor[to as usize] < to_anchor[slot.0 as usize]) {
            *slot = (to, n);
        }
    }
    best
}

pub fn object_dice(pred: &LabelMap, gt: &LabelMap) -> Result<f64> {
    ensure_same_dims(pred, gt)?;
    if pred.count() == 0 && gt.count() == 0 {
        return Ok(1.0);
    }
    let ov = overlaps(pred, gt);
    let (pa, ga) = (pred.areas(), gt.areas());
    let side = |areas: &[usize], other: &[usize], partners: &[(u32, usize)]| -> f64 {
        let total: usize = areas[1..].iter().sum();
        if total == 0 {
            return 0.0;
        }
        // Weighted sum over one division, so perfect agreement is exactly 1.
        let weighted: f64 = (1..areas.len())
            .map(|i| {
                let (to, n) = partners[i];
                let d = if to == 0 { 0.0 } else { 2.0 * n as f64 / (areas[i] + other[to as usize]) as f64 };
                areas[i] as f64 * d
            })
            .sum();
        weighted / total as f64
    };
    let g_term = side(&ga, &pa, &best_partner(&ov, gt.count(), &anchors(pred), false));
    let s_term = side(&pa, &ga, &best_partner(&ov, pred.count(), &anchors(gt), true));
    Ok(0.5 * (g_term + s_term))
}

/// One-dimensional squared distance transform (Felzenszwalb–Huttenlocher).
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let mut s;
        loop {
            let p = v[k];
            s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            // z[0] is -inf, so this never pops the first parabola.
            if s <= z[k] {
                k -= 1;
            } else {
                break;
            }
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Exact squared Euclidean distance to the nearest `true` cell of a
/// `w × h` grid.
pub fn squared_distance_transform(seeds: &[bool], w: usize, h: usize) -> Vec<f64> {
    const FAR: f64 = 1e20;
    let mut grid: Vec<f64> = seeds.iter().map(|&s| if s { 0.0 } else { FAR }).collect();
    let n = w.max(h);
    let (mut f, mut out) = (vec![0.0; n], vec![0.0; n]);
    let (mut v, mut z) = (vec![0usize; n], vec![0.0; n + 1]);
    for x in 0..w {
        for y in 0..h {
            f[y] = grid[y * w + x];
        }
        edt_1d(&f[..h], &mut out[..h], &mut v, &mut z);
        for y in 0..h {
            grid[y * w + x] = out[y];
        }
    }
    for y in 0..h {
        f[..w].copy_from_slice(&grid[y * w..(y + 1) * w]);
        edt_1d(&f[..w], &mut out[..w], &mut v, &mut z);
        grid[y * w..(y + 1) * w].copy_from_slice(&out[..w]);
    }
    grid
}

/// Symmetric Hausdorff distance between two nonempty pixel sets.
pub fn hausdorff(a: &[Point], b: &[Point]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty(), "hausdorff of an empty set");
    let all = a.iter().chain(b);
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for p in all {
        x0 = x0.min(p.x);
        y0 = y0.min(p.y);
        x1 = x1.max(p.x);
        y1 = y1.max(p.y);
    }
    let (w, h) = (x1 - x0 + 1, y1 - y0 + 1);
    let directed = |from: &[Point], to: &[Point]| -> f64 {
        let mut seeds = vec![false; w * h];
        for p in to {
            seeds[(p.y - y0) * w + (p.x - x0)] = true;
        }
        let dt = squared_distance_transform(&seeds, w, h);
        from.iter().map(|p| dt[(p.y - y0) * w + (p.x - x0)]).fold(0.0, f64::max)
    };
    directed(a, b).max(directed(b, a)).sqrt()
}

fn object_points(lm: &LabelMap) -> Vec<Vec<Point>> {
    let mut pts = vec![Vec::new(); lm.count() as usize + 1];
    for (i, &l) in lm.labels().iter().enumerate() {
        if l != 0 {
            pts[l as usize].push(Point::new(i % lm.width(), i / lm.width()));
        }
    }
    pts
}

/// Distance charged to an object with no overlapping partner: the image
/// diagonal.
pub fn unmatched_distance(width: usize, height: usize) -> f64 {
    (width as f64).hypot(height as f64)
}

pub fn object_hausdorff(pred: &LabelMap, gt: &LabelMap) -> Result<f64> {
    ensure_same_dims(pred, gt)?;
    if pred.count() == 0 && gt.count() == 0 {
        return Ok(0.0);
    }
    let sentinel = unmatched_distance(gt.width(), gt.height());
    if pred.count() == 0 || gt.count() == 0 {
        return Ok(sentinel);
    }
    let ov = overlaps(pred, gt);
    let (pp, gp) = (object_points(pred), object_points(gt));
    let side = |own: &[Vec<Point>], other: &[Vec<Point>], partners: &[(u32, usize)]| -> f64 {
        let total: usize = own[1..].iter().map(Vec::len).sum();
        let weighted: f64 = (1..own.len())
            .map(|i| {
                let (to, _) = partners[i];
                let d = if to == 0 { sentinel } else { hausdorff(&own[i], &other[to as usize]) };
                own[i].len() as f64 * d
            })
            .sum();
        weighted / total as f64
    };
    let g_term = side(&gp, &pp, &best_partner(&ov, gt.count(), &anchors(pred), false));
    let s_term = side(&pp, &gp, &best_partner(&ov, pred.count(), &anchors(gt), true));
    Ok(0.5 * (g_term + s_term))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub id: String,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub object_dice: f64,
    pub object_hausdorff: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    #[serde(default)]
    pub missing_prediction: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub images: usize,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub object_dice: f64,
    pub object_hausdorff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub split: String,
    pub per_image: Vec<ImageMetrics>,
    pub aggregate: Aggregate,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub splits: Vec<SplitReport>,
}

pub fn evaluate_image(id: &str, pred: &LabelMap, gt: &LabelMap) -> Result<ImageMetrics> {
    let m = match_objects(pred, gt)?;
    let s = object_f1(&m);
    Ok(ImageMetrics {
        id: id.to_string(),
        f1: s.f1,
        precision: s.precision,
        recall: s.recall,
        object_dice: object_dice(pred, gt)?,
        object_hausdorff: object_hausdorff(pred, gt)?,
        tp: m.tp,
        fp: m.fp,
        fn_: m.fn_,
        missing_prediction: false,
    })
}

pub fn aggregate(rows: &[ImageMetrics]) -> Aggregate {
    let n = rows.len();
    let mean = |f: fn(&ImageMetrics) -> f64| {
        if n == 0 {
            0.0
        } else {
            rows.iter().map(f).sum::<f64>() / n as f64
        }
    };
    Aggregate {
        images: n,
        f1: mean(|r| r.f1),
        precision: mean(|r| r.precision),
        recall: mean(|r| r.recall),
        object_dice: mean(|r| r.object_dice),
        object_hausdorff: mean(|r| r.object_hausdorff),
    }
}

/// Score aligned prediction / ground-truth lists of one split.
pub fn evaluate_split(split: &str, preds: &[LabelMap], gts: &[LabelMap], ids: &[String]) -> Result<SplitReport> {
    if preds.len() != gts.len() || gts.len() != ids.len() {
        return Err(Error::InvalidInput(format!(
            "{} predictions, {} ground truths and {} ids",
            preds.len(),
            gts.len(),
            ids.len()
        )));
    }
    let per_image = preds
        .iter()
        .zip(gts)
        .zip(ids)
        .map(|((p, g), id)| evaluate_image(id, p, g))
        .collect::<Result<Vec<_>>>()?;
    Ok(SplitReport { split: split.to_string(), aggregate: aggregate(&per_image), per_image })
}

impl MetricsReport {
    /// Fixed-width table: one row per split with F1, object Dice and object
    /// Hausdorff, followed by the per-image rows.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<12} {:>7} {:>10} {:>12} {:>18}", "SPLIT", "IMAGES", "F1-SCORE", "OBJECT DICE", "OBJECT HAUSDORFF");
        for sp in &self.splits {
            let a = &sp.aggregate;
            let _ = writeln!(
                s,
                "{:<12} {:>7} {:>10.4} {:>12.4} {:>18.3}",
                sp.split, a.images, a.f1, a.object_dice, a.object_hausdorff
            );
        }
        for sp in &self.splits {
            let _ = writeln!(s);
            let _ = writeln!(
                s,
                "[{}] {:<24} {:>5} {:>5} {:>5} {:>8} {:>8} {:>8}",
                sp.split, "IMAGE", "TP", "FP", "FN", "F1", "DICE", "HAUSD"
            );
            for r in &sp.per_image {
                let _ = writeln!(
                    s,
                    "{:>w$} {:<24} {:>5} {:>5} {:>5} {:>8.4} {:>8.4} {:>8.2}{}",
                    "",
                    r.id,
                    r.tp,
                    r.fp,
                    r.fn_,
                    r.f1,
                    r.object_dice,
                    r.object_hausdorff,
                    if r.missing_prediction { "  (missing prediction)" } else { "" },
                    w = sp.split.len() + 2
                );
            }
        }
        s
    }
}
