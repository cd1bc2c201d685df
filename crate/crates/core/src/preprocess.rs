//! Epithelial nucleus mask and edge-preserving smoothing.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, GrayImage, RealImage};

/// Number of intensity classes used to isolate nuclei.
pub const NUCLEUS_CLASSES: usize = 5;

/// Thresholds and per-pixel class assignment of a multi-level Otsu split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OtsuResult {
    /// Strictly ascending cut points. A pixel belongs to class `k` when
    /// exactly `k` thresholds are `<=` its intensity.
    pub thresholds: Vec<u8>,
    pub class_of: Vec<u8>,
}

impl OtsuResult {
    pub fn classes(&self) -> usize {
        self.thresholds.len() + 1
    }
}

pub fn histogram(img: &GrayImage) -> [u64; 256] {
    let mut hist = [0u64; 256];
    for &v in img.data() {
        hist[v as usize] += 1;
    }
    hist
}

/// Exact multi-level Otsu on a 256-bin histogram.
///
/// Maximizes the between-class variance, which for a fixed histogram is
/// equivalent to maximizing `Σ_k S_k² / W_k` (class pixel sum squared over
/// class count). A suffix table `best[k][s]` holds the optimum for classes
/// `k..` when class `k` starts at intensity `s`; thresholds are then read
/// off front to back, taking the smallest maximizer at every step, which
/// yields the lexicographically smallest optimal tuple.
///
/// Returns the `classes - 1` thresholds in `1..=255`.
pub fn multi_otsu_histogram(hist: &[u64; 256], classes: usize) -> Result<Vec<usize>> {
    if !(2..=256).contains(&classes) {
        return Err(Error::Parameter(format!("classes must be in 2..=256, got {classes}")));
    }
    let distinct = hist.iter().filter(|&&c| c > 0).count();
    if distinct < classes {
        return Err(Error::Degenerate(format!(
            "{distinct} distinct intensities cannot form {classes} classes"
        )));
    }

    let mut count = [0u64; 257];
    let mut sum = [0u64; 257];
    for i in 0..256 {
        count[i + 1] = count[i] + hist[i];
        sum[i + 1] = sum[i] + hist[i] * i as u64;
    }
    // Class spanning intensities [a, b).
    let term = |a: usize, b: usize| -> f64 {
        let w = count[b] - count[a];
        if w == 0 {
            0.0
        } else {
            let s = (sum[b] - sum[a]) as f64;
            s * s / w as f64
        }
    };

    let last = classes - 1;
    let mut best = vec![vec![f64::NEG_INFINITY; 257]; classes];
    for s in last..=255 {
        best[last][s] = term(s, 256);
    }
    for k in (1..last).rev() {
        let t_max = 256 - (last - k);
        for s in k..t_max {
            let mut b = f64::NEG_INFINITY;
            for t in s + 1..=t_max {
                let v = term(s, t) + best[k + 1][t];
                if v > b {
                    b = v;
                }
            }
            best[k][s] = b;
        }
    }

    let mut thresholds = Vec::with_capacity(last);
    let mut s = 0;
    for k in 0..last {
        let t_max = 256 - (last - k);
        let mut arg = s + 1;
        let mut b = f64::NEG_INFINITY;
        for t in s + 1..=t_max {
            let v = term(s, t) + best[k + 1][t];
            if v > b {
                b = v;
                arg = t;
            }
        }
        thresholds.push(arg);
        s = arg;
    }
    Ok(thresholds)
}

/// Split `img` into `classes` intensity classes with exact Otsu search.
pub fn multi_otsu(img: &GrayImage, classes: usize) -> Result<OtsuResult> {
    let thresholds = multi_otsu_histogram(&histogram(img), classes)?;
    let mut lut = [0u8; 256];
    for (v, slot) in lut.iter_mut().enumerate() {
        *slot = thresholds.iter().filter(|&&t| t <= v).count() as u8;
    }
    Ok(OtsuResult {
        thresholds: thresholds.iter().map(|&t| t as u8).collect(),
        class_of: img.data().iter().map(|&v| lut[v as usize]).collect(),
    })
}

/// Mask of the darkest Otsu class.
pub fn darkest_segment(img: &GrayImage, otsu: &OtsuResult) -> Result<BinaryMask> {
    if otsu.class_of.len() != img.data().len() {
        return Err(Error::InvalidInput("otsu result does not belong to this image".into()));
    }
    let mask = BinaryMask::new(img.width(), img.height(), otsu.class_of.iter().map(|&c| c == 0).collect())?;
    if mask.is_empty() {
        log::warn!("darkest intensity class is empty");
    }
    Ok(mask)
}

/// Nucleus mask: darkest of five Otsu classes. Images without enough
/// distinct intensities to split have no nuclei.
pub fn epithelial_mask(gray: &GrayImage) -> Result<BinaryMask> {
    match multi_otsu(gray, NUCLEUS_CLASSES) {
        Ok(otsu) => darkest_segment(gray, &otsu),
        Err(Error::Degenerate(msg)) => {
            log::debug!("no nucleus class: {msg}");
            BinaryMask::empty(gray.width(), gray.height())
        }
        Err(e) => Err(e),
    }
}

/// Explicit Perona–Malik diffusion settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionParams {
    pub iterations: usize,
    /// Edge-stopping scale in intensity units.
    pub kappa: f64,
    /// Time step; stability of the explicit 4-neighbor scheme needs `<= 0.25`.
    pub step: f64,
}

impl Default for DiffusionParams {
    fn default() -> Self {
        Self { iterations: 15, kappa: 30.0, step: 0.20 }
    }
}

impl DiffusionParams {
    pub fn new(iterations: usize, kappa: f64, step: f64) -> Result<Self> {
        let p = Self { iterations, kappa, step };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::Parameter("diffusion iterations must be >= 1".into()));
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::Parameter(format!("kappa must be positive, got {}", self.kappa)));
        }
        if !(self.step > 0.0 && self.step <= 0.25) {
            return Err(Error::Parameter(format!("step must be in (0, 0.25], got {}", self.step)));
        }
        Ok(())
    }
}

/// Perona–Malik diffusion with exponential conduction
/// `g(d) = exp(-(d/kappa)^2)` and zero-flux (reflective) borders.
pub fn perona_malik_real(img: &RealImage, params: &DiffusionParams) -> Result<RealImage> {
    params.validate()?;
    let (w, h) = (img.width(), img.height());
    let inv_k2 = 1.0 / (params.kappa * params.kappa);
    let g = |d: f64| (-(d * d) * inv_k2).exp();
    let mut cur = img.data().to_vec();
    let mut next = vec![0.0; w * h];
    for _ in 0..params.iterations {
        next.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
            for (x, out) in row.iter_mut().enumerate() {
                let c = cur[y * w + x];
                let mut flux = 0.0;
                if y > 0 {
                    let d = cur[(y - 1) * w + x] - c;
                    flux += g(d) * d;
                }
                if y + 1 < h {
                    let d = cur[(y + 1) * w + x] - c;
                    flux += g(d) * d;
                }
                if x > 0 {
                    let d = cur[y * w + x - 1] - c;
                    flux += g(d) * d;
                }
                if x + 1 < w {
                    let d = cur[y * w + x + 1] - c;
                    flux += g(d) * d;
                }
                *out = c + params.step * flux;
            }
        });
        std::mem::swap(&mut cur, &mut next);
    }
    RealImage::new(w, h, cur)
}

/// Quantized variant of [`perona_malik_real`].
pub fn perona_malik(img: &GrayImage, params: &DiffusionParams) -> Result<GrayImage> {
    Ok(perona_malik_real(&img.to_real(), params)?.quantize())
}
