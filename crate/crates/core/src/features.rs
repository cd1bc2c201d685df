//! Per-nucleus window descriptors.
//!
//! Each nucleus contributes one 135-value vector computed from a `z × z`
//! RGB window centered on its centroid:
//!
//! | range      | content                          |
//! |------------|----------------------------------|
//! | `0..32`    | red histogram, 32 bins of width 8 |
//! | `32..64`   | green histogram                  |
//! | `64..96`   | blue histogram                   |
//! | `96..109`  | red Haralick features            |
//! | `109..122` | green Haralick features          |
//! | `122..135` | blue Haralick features           |
//!
//! Histograms are raw counts. Haralick features come from a GLCM with 32
//! gray levels, distance 1, and the four directions summed.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::preprocess::epithelial_mask;
use crate::raster::{centroids, label_components, to_grayscale, Centroid, GrayImage, LabelMap, RgbImage};

pub const HIST_BINS: usize = 32;
pub const HARALICK_LEN: usize = 13;
pub const FEATURE_LEN: usize = 3 * HIST_BINS + 3 * HARALICK_LEN;
pub const MIN_WINDOW: usize = 16;
pub const DEFAULT_WINDOW: usize = 24;
pub const GLCM_LEVELS: usize = 32;

pub const HARALICK_NAMES: [&str; HARALICK_LEN] = [
    "asm",
    "contrast",
    "correlation",
    "sum_of_squares",
    "idm",
    "sum_average",
    "sum_variance",
    "sum_entropy",
    "entropy",
    "difference_variance",
    "difference_entropy",
    "imc1",
    "imc2",
];

/// Square RGB crop around a nucleus.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub patch: RgbImage,
    pub center: (f64, f64),
    pub z: usize,
}

/// Crop a `z × z` window around `center` (rounded). Pixels past the image
/// border take the value of the nearest edge pixel.
pub fn extract_window(img: &RgbImage, center: (f64, f64), z: usize) -> Result<Window> {
    if z < MIN_WINDOW {
        return Err(Error::Parameter(format!("window side must be >= {MIN_WINDOW}, got {z}")));
    }
    let cx = center.0.round() as isize;
    let cy = center.1.round() as isize;
    let x0 = cx - (z / 2) as isize;
    let y0 = cy - (z / 2) as isize;
    let (w, h) = (img.width() as isize, img.height() as isize);
    let mut data = Vec::with_capacity(z * z * 3);
    for dy in 0..z as isize {
        let sy = (y0 + dy).clamp(0, h - 1) as usize;
        for dx in 0..z as isize {
            let sx = (x0 + dx).clamp(0, w - 1) as usize;
            data.extend_from_slice(&img.get(sx, sy));
        }
    }
    Ok(Window { patch: RgbImage::new(z, z, data)?, center, z })
}

/// Raw-count histogram with `bins` equal-width bins over `0..=255`.
pub fn channel_histogram(plane: &GrayImage, bins: usize) -> Result<Vec<f64>> {
    if bins == 0 || 256 % bins != 0 {
        return Err(Error::Parameter(format!("bin count {bins} must divide 256")));
    }
    let width = 256 / bins;
    let mut hist = vec![0.0; bins];
    for &v in plane.data() {
        hist[v as usize / width] += 1.0;
    }
    Ok(hist)
}

/// Gray-level co-occurrence matrix, row-major `levels × levels`.
#[derive(Debug, Clone, PartialEq)]
pub struct Glcm {
    levels: usize,
    matrix: Vec<f64>,
    normalized: bool,
}

impl Glcm {
    pub fn from_matrix(levels: usize, matrix: Vec<f64>, normalized: bool) -> Result<Self> {
        if levels < 2 || matrix.len() != levels * levels {
            return Err(Error::InvalidInput(format!(
                "glcm needs {levels}x{levels} entries, got {}",
                matrix.len()
            )));
        }
        Ok(Self { levels, matrix, normalized })
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.levels + j]
    }

    pub fn transpose(&self) -> Glcm {
        let l = self.levels;
        let matrix = (0..l * l).map(|k| self.matrix[(k % l) * l + k / l]).collect();
        Glcm { levels: l, matrix, normalized: self.normalized }
    }
}

/// The four distance-1 offsets (dx, dy) at 0°, 45°, 90° and 135°.
pub const GLCM_OFFSETS: [(isize, isize); 4] = [(1, 0), (1, -1), (0, -1), (-1, -1)];

/// Symmetric GLCM over `offsets`, intensities quantized to `levels` equal
/// bins, normalized to sum 1. A plane with no valid pair yields an
/// all-zero, non-normalized matrix.
pub fn glcm(plane: &GrayImage, levels: usize, offsets: &[(isize, isize)]) -> Result<Glcm> {
    if !(2..=256).contains(&levels) {
        return Err(Error::Parameter(format!("glcm levels must be in 2..=256, got {levels}")));
    }
    let (w, h) = (plane.width() as isize, plane.height() as isize);
    let q: Vec<usize> = plane.data().iter().map(|&v| v as usize * levels / 256).collect();
    let mut m = vec![0.0; levels * levels];
    for y in 0..h {
        for x in 0..w {
            let a = q[(y * w + x) as usize];
            for &(dx, dy) in offsets {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w || ny >= h {
                    continue;
                }
                let b = q[(ny * w + nx) as usize];
                m[a * levels + b] += 1.0;
                m[b * levels + a] += 1.0;
            }
        }
    }
    let total: f64 = m.iter().sum();
    if total == 0.0 {
        return Glcm::from_matrix(levels, m, false);
    }
    m.iter_mut().for_each(|v| *v /= total);
    Glcm::from_matrix(levels, m, true)
}

fn plogp(p: f64) -> f64 {
    if p > 0.0 {
        p * p.ln()
    } else {
        0.0
    }
}

/// Haralick's 13 texture features of a normalized GLCM, in his order:
/// ASM, contrast, correlation, sum of squares variance, inverse difference
/// moment, sum average, sum variance, sum entropy, entropy, difference
/// variance, difference entropy, and the two information measures of
/// correlation.
///
/// Gray levels are indexed from 0. Logarithms are natural and `0·ln 0 = 0`.
/// Sum variance is taken about the sum average. Zero-variance marginals make
/// correlation 0, and zero marginal entropy makes IMC1 0.
pub fn haralick13(g: &Glcm) -> Result<[f64; HARALICK_LEN]> {
    if !g.normalized {
        return Err(Error::InvalidInput("haralick features need a normalized glcm".into()));
    }
    let l = g.levels;
    let p = |i: usize, j: usize| g.matrix[i * l + j];

    let mut px = vec![0.0; l];
    let mut py = vec![0.0; l];
    let mut p_sum = vec![0.0; 2 * l - 1];
    let mut p_diff = vec![0.0; l];
    for i in 0..l {
        for j in 0..l {
            let v = p(i, j);
            px[i] += v;
            py[j] += v;
            p_sum[i + j] += v;
            p_diff[i.abs_diff(j)] += v;
        }
    }
    let mu_x: f64 = px.iter().enumerate().map(|(i, &v)| i as f64 * v).sum();
    let mu_y: f64 = py.iter().enumerate().map(|(j, &v)| j as f64 * v).sum();
    let var_x: f64 = px.iter().enumerate().map(|(i, &v)| (i as f64 - mu_x).powi(2) * v).sum();
    let var_y: f64 = py.iter().enumerate().map(|(j, &v)| (j as f64 - mu_y).powi(2) * v).sum();

    let mut asm = 0.0;
    let mut contrast = 0.0;
    let mut cross = 0.0;
    let mut sum_sq = 0.0;
    let mut idm = 0.0;
    let mut entropy = 0.0;
    let mut hxy1 = 0.0;
    let mut hxy2 = 0.0;
    for i in 0..l {
        for j in 0..l {
            let v = p(i, j);
            let d = i as f64 - j as f64;
            asm += v * v;
            contrast += d * d * v;
            cross += (i as f64 - mu_x) * (j as f64 - mu_y) * v;
            sum_sq += (i as f64 - mu_x).powi(2) * v;
            idm += v / (1.0 + d * d);
            entropy -= plogp(v);
            let pxy = px[i] * py[j];
            if pxy > 0.0 {
                hxy1 -= v * pxy.ln();
                hxy2 -= plogp(pxy);
            }
        }
    }
    let correlation = if var_x > 0.0 && var_y > 0.0 {
        cross / (var_x.sqrt() * var_y.sqrt())
    } else {
        0.0
    };
    let sum_avg: f64 = p_sum.iter().enumerate().map(|(k, &v)| k as f64 * v).sum();
    let sum_var: f64 = p_sum.iter().enumerate().map(|(k, &v)| (k as f64 - sum_avg).powi(2) * v).sum();
    let sum_entropy: f64 = -p_sum.iter().map(|&v| plogp(v)).sum::<f64>();
    let diff_mean: f64 = p_diff.iter().enumerate().map(|(k, &v)| k as f64 * v).sum();
    let diff_var: f64 = p_diff.iter().enumerate().map(|(k, &v)| (k as f64 - diff_mean).powi(2) * v).sum();
    let diff_entropy: f64 = -p_diff.iter().map(|&v| plogp(v)).sum::<f64>();
    let hx: f64 = -px.iter().map(|&v| plogp(v)).sum::<f64>();
    let hy: f64 = -py.iter().map(|&v| plogp(v)).sum::<f64>();
    let hmax = hx.max(hy);
    let imc1 = if hmax > 0.0 { (entropy - hxy1) / hmax } else { 0.0 };
    let imc2 = (1.0 - (-2.0 * (hxy2 - entropy)).exp()).max(0.0).sqrt();

    Ok([
        asm,
        contrast,
        correlation,
        sum_sq,
        idm,
        sum_avg,
        sum_var,
        sum_entropy,
        entropy,
        diff_var,
        diff_entropy,
        imc1,
        imc2,
    ])
}

/// Fixed-length descriptor of one window.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl AsRef<[f64]> for FeatureVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub fn feature_vector(w: &Window) -> Result<FeatureVector> {
    let planes: Vec<GrayImage> = (0..3).map(|c| w.patch.channel(c)).collect();
    let mut values = Vec::with_capacity(FEATURE_LEN);
    for plane in &planes {
        values.extend(channel_histogram(plane, HIST_BINS)?);
    }
    for plane in &planes {
        values.extend(haralick13(&glcm(plane, GLCM_LEVELS, &GLCM_OFFSETS)?)?);
    }
    debug_assert_eq!(values.len(), FEATURE_LEN);
    Ok(FeatureVector(values))
}

/// Nucleus components of one image together with their descriptors.
#[derive(Debug, Clone)]
pub struct NucleusFeatures {
    pub labels: LabelMap,
    pub centroids: Vec<Centroid>,
    pub vectors: Vec<FeatureVector>,
}

/// Label the nucleus mask and describe every component.
pub fn nucleus_features(img: &RgbImage, nuclei: &crate::raster::BinaryMask, z: usize) -> Result<NucleusFeatures> {
    let labels = label_components(nuclei);
    let cents = centroids(&labels);
    let vectors = cents
        .par_iter()
        .map(|c| extract_window(img, (c.x, c.y), z).and_then(|w| feature_vector(&w)))
        .collect::<Result<Vec<_>>>()?;
    Ok(NucleusFeatures { labels, centroids: cents, vectors })
}

/// Feature matrix with 0/1 targets, one row per nucleus.
#[derive(Debug, Clone, Default)]
pub struct TrainingSet {
    pub rows: Vec<FeatureVector>,
    pub labels: Vec<u8>,
    /// `(image index, component label)` of each row.
    pub origin: Vec<(usize, u32)>,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }
}

/// Nucleus windows of every image labeled by whether the rounded centroid
/// falls inside an annotated gland.
pub fn build_training_set(images: &[(RgbImage, LabelMap)], z: usize) -> Result<TrainingSet> {
    let per_image = images
        .par_iter()
        .enumerate()
        .map(|(idx, (img, gt))| {
            if img.width() != gt.width() || img.height() != gt.height() {
                return Err(Error::DimensionMismatch {
                    expected: (img.width(), img.height()),
                    found: (gt.width(), gt.height()),
                });
            }
            let nuclei = epithelial_mask(&to_grayscale(img))?;
            let nf = nucleus_features(img, &nuclei, z)?;
            let targets: Vec<u8> = nf
                .centroids
                .iter()
                .map(|c| {
                    let p = c.pixel(img.width(), img.height());
                    u8::from(gt.get(p.x, p.y) != 0)
                })
                .collect();
            let origin = nf.centroids.iter().map(|c| (idx, c.label)).collect::<Vec<_>>();
            Ok((nf.vectors, targets, origin))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut set = TrainingSet::default();
    for (rows, labels, origin) in per_image {
        set.rows.extend(rows);
        set.labels.extend(labels);
        set.origin.extend(origin);
    }
    Ok(set)
}

/// Column names of the feature layout.
pub fn feature_names() -> Vec<String> {
    let mut names = Vec::with_capacity(FEATURE_LEN);
    for ch in ["r", "g", "b"] {
        names.extend((0..HIST_BINS).map(|b| format!("{ch}_hist_{b:02}")));
    }
    for ch in ["r", "g", "b"] {
        names.extend(HARALICK_NAMES.iter().map(|n| format!("{ch}_{n}")));
    }
    names
}

/// Write `image_id, component_id, <135 features>, label` rows with a header.
pub fn write_features_csv<W: Write>(out: W, set: &TrainingSet, image_ids: &[String]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    let mut header = vec!["image_id".to_string(), "component_id".to_string()];
    header.extend(feature_names());
    header.push("label".into());
    wtr.write_record(&header)?;
    for ((row, &label), &(img, comp)) in set.rows.iter().zip(&set.labels).zip(&set.origin) {
        let id = image_ids.get(img).cloned().unwrap_or_else(|| img.to_string());
        let mut rec = vec![id, comp.to_string()];
        rec.extend(row.0.iter().map(|v| v.to_string()));
        rec.push(label.to_string());
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}
