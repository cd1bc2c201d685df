//! Image containers and pixel-level primitives.
//!
//! Everything downstream works on the four raster types defined here:
//! [`RgbImage`], [`GrayImage`], [`BinaryMask`] and [`LabelMap`], plus the
//! real-valued [`RealImage`] used for diffusion output and the Sobel
//! [`GradientField`].
//!
//! Connectivity conventions: foreground is 8-connected, background is
//! 4-connected. Every 3×3 kernel replicates edge pixels at the border.

use std::collections::VecDeque;
use std::path::Path;

use crate::error::{Error, Result};

/// Pixel coordinate, `x` is the column and `y` the row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Point {
    pub x: usize,
    pub y: usize,
}

impl Point {
    pub const fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }

    pub fn dist2(self, other: Point) -> u64 {
        let dx = self.x.abs_diff(other.x) as u64;
        let dy = self.y.abs_diff(other.y) as u64;
        dx * dx + dy * dy
    }
}

const NEIGHBORS_8: [(isize, isize); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

const NEIGHBORS_4: [(isize, isize); 4] = [(0, -1), (-1, 0), (1, 0), (0, 1)];

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidInput(format!(
            "image dimensions must be positive, got {width}x{height}"
        )));
    }
    Ok(())
}

/// Offset `(x, y)` by `(dx, dy)`, returning `None` outside `width × height`.
#[inline]
fn offset(x: usize, y: usize, dx: isize, dy: isize, width: usize, height: usize) -> Option<(usize, usize)> {
    let nx = x.checked_add_signed(dx)?;
    let ny = y.checked_add_signed(dy)?;
    (nx < width && ny < height).then_some((nx, ny))
}

#[inline]
fn clamp_coord(v: isize, len: usize) -> usize {
    v.clamp(0, len as isize - 1) as usize
}

/// 8-bit RGB raster, row-major interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        check_dims(width, height)?;
        if data.len() != width * height * 3 {
            return Err(Error::InvalidInput(format!(
                "rgb buffer has {} bytes, expected {}",
                data.len(),
                width * height * 3
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        check_dims(width, height)?;
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// One color plane (0 = red, 1 = green, 2 = blue).
    pub fn channel(&self, c: usize) -> GrayImage {
        assert!(c < 3, "channel index {c} out of range");
        GrayImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().skip(c).step_by(3).copied().collect(),
        }
    }

    pub fn open(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        Self::new(w as usize, h as usize, rgb.into_raw())
    }

    pub fn to_image(&self) -> image::RgbImage {
        image::RgbImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .expect("buffer length checked at construction")
    }
}

/// 8-bit single-channel raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        check_dims(width, height)?;
        if data.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "gray buffer has {} bytes, expected {}",
                data.len(),
                width * height
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    pub fn to_real(&self) -> RealImage {
        RealImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f64::from(v)).collect(),
        }
    }

    pub fn to_image(&self) -> image::GrayImage {
        image::GrayImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .expect("buffer length checked at construction")
    }
}

/// Real-valued single-channel raster (diffusion output, window means).
#[derive(Debug, Clone, PartialEq)]
pub struct RealImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl RealImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(width, height)?;
        if data.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "real buffer has {} values, expected {}",
                data.len(),
                width * height
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Round to nearest and clamp into `0..=255`.
    pub fn quantize(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| v.round().clamp(0.0, 255.0) as u8).collect(),
        }
    }
}

/// Boolean raster. Holds the nucleus masks and every boundary-construction
/// intermediate.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        check_dims(width, height)?;
        if data.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "mask buffer has {} values, expected {}",
                data.len(),
                width * height
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn empty(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, vec![false; width * height])
    }

    pub fn full(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, vec![true; width * height])
    }

    /// Build from an ASCII picture, `#` or `1` is foreground. Rows are
    /// separated by newlines; surrounding whitespace is ignored.
    pub fn from_ascii(picture: &str) -> Result<Self> {
        let rows: Vec<&str> = picture.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.chars().count());
        if rows.iter().any(|r| r.chars().count() != width) {
            return Err(Error::InvalidInput("ragged ascii mask".into()));
        }
        let data = rows
            .iter()
            .flat_map(|r| r.chars().map(|c| c == '#' || c == '1'))
            .collect();
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    /// Out-of-range coordinates read as background.
    #[inline]
    pub fn get_or_false(&self, x: isize, y: isize) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.data[y as usize * self.width + x as usize]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&v| v)
    }

    pub fn same_shape(&self, other: &BinaryMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    fn ensure_same_shape(&self, other: &BinaryMask) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: (self.width, self.height),
                found: (other.width, other.height),
            })
        }
    }

    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.ensure_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a || b).collect();
        Ok(BinaryMask { data, ..*self })
    }

    pub fn intersection(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.ensure_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a && b).collect();
        Ok(BinaryMask { data, ..*self })
    }

    /// Pixels of `self` not in `other`.
    pub fn difference(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.ensure_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a && !b).collect();
        Ok(BinaryMask { data, ..*self })
    }

    /// True when every foreground pixel of `self` is foreground in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.same_shape(other) && self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }

    pub fn foreground(&self) -> impl Iterator<Item = Point> + '_ {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &v)| v)
            .map(|(i, _)| Point::new(i % self.width, i / self.width))
    }

    /// Foreground as 255, background as 0.
    pub fn to_gray(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| if v { 255 } else { 0 }).collect(),
        }
    }

    /// Number of foreground pixels among the 8 neighbors (off-image counts
    /// as background).
    pub fn neighbor_count(&self, x: usize, y: usize) -> usize {
        NEIGHBORS_8
            .iter()
            .filter(|&&(dx, dy)| self.get_or_false(x as isize + dx, y as isize + dy))
            .count()
    }
}

/// Integer raster of object labels; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    labels: Vec<u32>,
    count: u32,
}

impl LabelMap {
    /// Labels must form the contiguous set `{0, 1, …, max}`.
    pub fn new(width: usize, height: usize, labels: Vec<u32>) -> Result<Self> {
        check_dims(width, height)?;
        if labels.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "label buffer has {} values, expected {}",
                labels.len(),
                width * height
            )));
        }
        let max = labels.iter().copied().max().unwrap_or(0);
        let mut seen = vec![false; max as usize + 1];
        for &l in &labels {
            seen[l as usize] = true;
        }
        if seen.iter().skip(1).any(|&s| !s) {
            return Err(Error::InvalidInput("label values are not contiguous".into()));
        }
        Ok(Self { width, height, labels, count: max })
    }

    /// Accepts arbitrary label values (e.g. a decoded annotation file) and
    /// renumbers the distinct nonzero ones as `1..=count` in order of first
    /// appearance in raster scan.
    pub fn from_raw(width: usize, height: usize, raw: &[u32]) -> Result<Self> {
        check_dims(width, height)?;
        if raw.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "label buffer has {} values, expected {}",
                raw.len(),
                width * height
            )));
        }
        let mut remap = std::collections::HashMap::new();
        let mut next = 0u32;
        let labels = raw
            .iter()
            .map(|&v| {
                if v == 0 {
                    0
                } else {
                    *remap.entry(v).or_insert_with(|| {
                        next += 1;
                        next
                    })
                }
            })
            .collect();
        Ok(Self { width, height, labels, count: next })
    }

    pub fn empty(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, vec![0; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Number of distinct nonzero labels.
    pub fn count(&self) -> u32 {
        self.count
    }

    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    /// Foreground mask of a single label.
    pub fn object_mask(&self, label: u32) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            data: self.labels.iter().map(|&l| l == label).collect(),
        }
    }

    /// Union of all nonzero labels.
    pub fn foreground(&self) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            data: self.labels.iter().map(|&l| l != 0).collect(),
        }
    }

    /// Pixel count per label, index 0 is background.
    pub fn areas(&self) -> Vec<usize> {
        let mut areas = vec![0usize; self.count as usize + 1];
        for &l in &self.labels {
            areas[l as usize] += 1;
        }
        areas
    }
}

/// Per-pixel Sobel response. `direction` is only meaningful where
/// `magnitude > 0` and is zero elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub width: usize,
    pub height: usize,
    pub magnitude: Vec<f64>,
    pub direction: Vec<f64>,
}

impl GradientField {
    pub fn magnitude_at(&self, x: usize, y: usize) -> f64 {
        self.magnitude[y * self.width + x]
    }

    pub fn direction_at(&self, x: usize, y: usize) -> f64 {
        self.direction[y * self.width + x]
    }
}

/// Luma with BT.601 weights, rounded to nearest.
pub fn to_grayscale(img: &RgbImage) -> GrayImage {
    let data = img
        .data
        .chunks_exact(3)
        .map(|p| {
            let y = 0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2]);
            y.round().clamp(0.0, 255.0) as u8
        })
        .collect();
    GrayImage { width: img.width, height: img.height, data }
}

/// Which neighborhood defines adjacency when labeling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

/// 8-connected component labeling. Labels follow the raster-scan order of
/// each component's first pixel.
pub fn label_components(mask: &BinaryMask) -> LabelMap {
    label_components_with(mask, Connectivity::Eight)
}

pub fn label_components_with(mask: &BinaryMask, connectivity: Connectivity) -> LabelMap {
    let (w, h) = (mask.width, mask.height);
    let nbrs: &[(isize, isize)] = match connectivity {
        Connectivity::Four => &NEIGHBORS_4,
        Connectivity::Eight => &NEIGHBORS_8,
    };
    let mut labels = vec![0u32; w * h];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !mask.data[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % w, i / w);
            for &(dx, dy) in nbrs {
                if let Some((nx, ny)) = offset(x, y, dx, dy, w, h) {
                    let j = ny * w + nx;
                    if mask.data[j] && labels[j] == 0 {
                        labels[j] = next;
                        queue.push_back(j);
                    }
                }
            }
        }
    }
    LabelMap { width: w, height: h, labels, count: next }
}

/// Centroid of one labeled component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Centroid {
    pub label: u32,
    pub x: f64,
    pub y: f64,
}

impl Centroid {
    /// Nearest pixel, clamped into the image.
    pub fn pixel(&self, width: usize, height: usize) -> Point {
        Point::new(
            clamp_coord(self.x.round() as isize, width),
            clamp_coord(self.y.round() as isize, height),
        )
    }
}

/// Mean pixel coordinate of every label, ordered by label.
pub fn centroids(lm: &LabelMap) -> Vec<Centroid> {
    let n = lm.count as usize;
    let mut sums = vec![(0u64, 0u64, 0u64); n + 1];
    for (i, &l) in lm.labels.iter().enumerate() {
        if l != 0 {
            let s = &mut sums[l as usize];
            s.0 += (i % lm.width) as u64;
            s.1 += (i / lm.width) as u64;
            s.2 += 1;
        }
    }
    sums.iter()
        .enumerate()
        .skip(1)
        .filter(|(_, s)| s.2 > 0)
        .map(|(l, &(sx, sy, c))| Centroid {
            label: l as u32,
            x: sx as f64 / c as f64,
            y: sy as f64 / c as f64,
        })
        .collect()
}

/// Neighbors of `(x, y)` in the clockwise order P2..P9 starting north.
fn ring(mask: &BinaryMask, x: usize, y: usize) -> [bool; 8] {
    let (x, y) = (x as isize, y as isize);
    [
        mask.get_or_false(x, y - 1),
        mask.get_or_false(x + 1, y - 1),
        mask.get_or_false(x + 1, y),
        mask.get_or_false(x + 1, y + 1),
        mask.get_or_false(x, y + 1),
        mask.get_or_false(x - 1, y + 1),
        mask.get_or_false(x - 1, y),
        mask.get_or_false(x - 1, y - 1),
    ]
}

/// Yokoi connectivity number for 8-connected foreground. A pixel whose
/// removal preserves topology has value 1.
fn yokoi8(n: &[bool; 8]) -> u32 {
    // Complemented neighbors, indexed from east counter-clockwise:
    // x1=E, x2=NE, x3=N, x4=NW, x5=W, x6=SW, x7=S, x8=SE.
    let c = |b: bool| u32::from(!b);
    let x = [
        c(n[2]),
        c(n[1]),
        c(n[0]),
        c(n[7]),
        c(n[6]),
        c(n[5]),
        c(n[4]),
        c(n[3]),
    ];
    (0..4)
        .map(|k| {
            let i = 2 * k;
            x[i] - x[i] * x[(i + 1) % 8] * x[(i + 2) % 8]
        })
        .sum()
}

/// Topology-preserving thinning to a one-pixel-wide skeleton.
///
/// Two alternating sub-iterations select boundary candidates with the
/// Zhang–Suen directional conditions on a snapshot; each candidate is then
/// removed sequentially only if it is still a simple point with at least two
/// neighbors. Removing simple points one at a time cannot merge, split or
/// delete components, and the neighbor check keeps branch tips.
pub fn thin(mask: &BinaryMask) -> BinaryMask {
    let mut cur = mask.clone();
    let (w, h) = (mask.width, mask.height);
    loop {
        let mut changed = false;
        for pass in 0..2 {
            let candidates: Vec<(usize, usize)> = (0..h)
                .flat_map(|y| (0..w).map(move |x| (x, y)))
                .filter(|&(x, y)| cur.get(x, y))
                .filter(|&(x, y)| {
                    let n = ring(&cur, x, y);
                    let b = n.iter().filter(|&&v| v).count();
                    let a = (0..8).filter(|&i| !n[i] && n[(i + 1) % 8]).count();
                    let (p2, p4, p6, p8) = (n[0], n[2], n[4], n[6]);
                    let directional = if pass == 0 {
                        !(p2 && p4 && p6) && !(p4 && p6 && p8)
                    } else {
                        !(p2 && p4 && p8) && !(p2 && p6 && p8)
                    };
                    (2..=6).contains(&b) && a == 1 && directional
                })
                .collect();
            for (x, y) in candidates {
                let n = ring(&cur, x, y);
                let b = n.iter().filter(|&&v| v).count();
                if b >= 2 && yokoi8(&n) == 1 {
                    cur.set(x, y, false);
                    changed = true;
                }
            }
        }
        if !changed {
            return cur;
        }
    }
}

/// Skeleton endpoints: foreground pixels with at most one foreground
/// 8-neighbor. Returned in raster order.
pub fn endpoints(skeleton: &BinaryMask) -> Vec<Point> {
    skeleton
        .foreground()
        .filter(|p| skeleton.neighbor_count(p.x, p.y) <= 1)
        .collect()
}

/// 3×3 majority vote: true iff at least 5 of the 9 pixels are true.
pub fn majority_filter(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = (mask.width, mask.height);
    let mut out = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut votes = 0;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let sx = clamp_coord(x as isize + dx, w);
                    let sy = clamp_coord(y as isize + dy, h);
                    votes += usize::from(mask.get(sx, sy));
                }
            }
            out[y * w + x] = votes >= 5;
        }
    }
    BinaryMask { width: w, height: h, data: out }
}

/// Background reachable from the image border through 4-connected
/// background pixels.
pub fn border_background(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = (mask.width, mask.height);
    let mut reached = vec![false; w * h];
    let mut queue = VecDeque::new();
    let seed = |x: usize, y: usize, reached: &mut Vec<bool>, queue: &mut VecDeque<usize>| {
        let i = y * w + x;
        if !mask.data[i] && !reached[i] {
            reached[i] = true;
            queue.push_back(i);
        }
    };
    for x in 0..w {
        seed(x, 0, &mut reached, &mut queue);
        seed(x, h - 1, &mut reached, &mut queue);
    }
    for y in 0..h {
        seed(0, y, &mut reached, &mut queue);
        seed(w - 1, y, &mut reached, &mut queue);
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = (i % w, i / w);
        for &(dx, dy) in &NEIGHBORS_4 {
            if let Some((nx, ny)) = offset(x, y, dx, dy, w, h) {
                let j = ny * w + nx;
                if !mask.data[j] && !reached[j] {
                    reached[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    BinaryMask { width: w, height: h, data: reached }
}

/// Set every background region that cannot reach the border to foreground.
pub fn fill_holes(mask: &BinaryMask) -> BinaryMask {
    let outside = border_background(mask);
    BinaryMask {
        width: mask.width,
        height: mask.height,
        data: outside.data.iter().map(|&o| !o).collect(),
    }
}

/// Drop 8-connected components smaller than `min_area` pixels.
pub fn area_filter(mask: &BinaryMask, min_area: usize) -> BinaryMask {
    if min_area == 0 {
        return mask.clone();
    }
    let lm = label_components(mask);
    let areas = lm.areas();
    BinaryMask {
        width: mask.width,
        height: mask.height,
        data: lm.labels.iter().map(|&l| l != 0 && areas[l as usize] >= min_area).collect(),
    }
}

/// 3×3 Sobel on the 0/1 raster (correlation form, x right, y down), edges
/// replicated. `direction = atan2(gy, gx)`.
pub fn sobel(mask: &BinaryMask) -> GradientField {
    let (w, h) = (mask.width, mask.height);
    let px = |x: isize, y: isize| -> f64 {
        if mask.get(clamp_coord(x, w), clamp_coord(y, h)) {
            1.0
        } else {
            0.0
        }
    };
    let mut magnitude = vec![0.0; w * h];
    let mut direction = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = (px(x + 1, y - 1) + 2.0 * px(x + 1, y) + px(x + 1, y + 1))
                - (px(x - 1, y - 1) + 2.0 * px(x - 1, y) + px(x - 1, y + 1));
            let gy = (px(x - 1, y + 1) + 2.0 * px(x, y + 1) + px(x + 1, y + 1))
                - (px(x - 1, y - 1) + 2.0 * px(x, y - 1) + px(x + 1, y - 1));
            let i = y as usize * w + x as usize;
            let m = gx.hypot(gy);
            magnitude[i] = m;
            if m > 0.0 {
                direction[i] = gy.atan2(gx);
            }
        }
    }
    GradientField { width: w, height: h, magnitude, direction }
}

/// Pixels of the Bresenham line from `a` to `b`. The walk always runs from
/// the lexicographically smaller endpoint so the raster is independent of
/// argument order.
pub fn line_points(a: Point, b: Point) -> Vec<Point> {
    let (start, end) = if (a.y, a.x) <= (b.y, b.x) { (a, b) } else { (b, a) };
    let (mut x, mut y) = (start.x as isize, start.y as isize);
    let (x1, y1) = (end.x as isize, end.y as isize);
    let dx = (x1 - x).abs();
    let dy = -(y1 - y).abs();
    let sx = if x < x1 { 1 } else { -1 };
    let sy = if y < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    let mut pts = Vec::with_capacity((dx.max(-dy) + 1) as usize);
    loop {
        pts.push(Point::new(x as usize, y as usize));
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
    pts
}

/// Rasterize a line onto a copy of `mask`.
pub fn draw_line(mask: &BinaryMask, p1: Point, p2: Point) -> Result<BinaryMask> {
    let mut out = mask.clone();
    draw_line_in_place(&mut out, p1, p2)?;
    Ok(out)
}

pub fn draw_line_in_place(mask: &mut BinaryMask, p1: Point, p2: Point) -> Result<()> {
    for p in [p1, p2] {
        if p.x >= mask.width || p.y >= mask.height {
            return Err(Error::InvalidInput(format!(
                "line endpoint ({}, {}) outside {}x{} image",
                p.x, p.y, mask.width, mask.height
            )));
        }
    }
    for p in line_points(p1, p2) {
        mask.set(p.x, p.y, true);
    }
    Ok(())
}

/// Pixels within Euclidean distance `radius` of any foreground pixel.
pub fn dilate_disk(mask: &BinaryMask, radius: usize) -> BinaryMask {
    let (w, h) = (mask.width, mask.height);
    let r = radius as isize;
    let offsets: Vec<(isize, isize)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .filter(|&(dx, dy)| dx * dx + dy * dy <= r * r)
        .collect();
    let mut out = vec![false; w * h];
    for p in mask.foreground() {
        for &(dx, dy) in &offsets {
            if let Some((nx, ny)) = offset(p.x, p.y, dx, dy, w, h) {
                out[ny * w + nx] = true;
            }
        }
    }
    BinaryMask { width: w, height: h, data: out }
}

/// Write a 16-bit grayscale PNG of the label values.
pub fn save_label_png(lm: &LabelMap, path: &Path) -> Result<()> {
    let data: Vec<u16> = lm.labels.iter().map(|&l| l.min(u32::from(u16::MAX)) as u16).collect();
    let buf = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::from_raw(
        lm.width as u32,
        lm.height as u32,
        data,
    )
    .expect("buffer length matches dimensions");
    buf.save_with_format(path, image::ImageFormat::Png).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Decode a label-map image. Pixel values are object indices; color
/// images use the first channel.
pub fn load_label_image(path: &Path) -> Result<LabelMap> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw: Vec<u32> = match &img {
        image::DynamicImage::ImageLuma8(b) => b.as_raw().iter().map(|&v| u32::from(v)).collect(),
        image::DynamicImage::ImageLuma16(b) => b.as_raw().iter().map(|&v| u32::from(v)).collect(),
        image::DynamicImage::ImageLumaA8(b) => b.as_raw().iter().step_by(2).map(|&v| u32::from(v)).collect(),
        image::DynamicImage::ImageRgb8(b) => b.as_raw().iter().step_by(3).map(|&v| u32::from(v)).collect(),
        image::DynamicImage::ImageRgba8(b) => b.as_raw().iter().step_by(4).map(|&v| u32::from(v)).collect(),
        other => other.to_luma16().as_raw().iter().map(|&v| u32::from(v)).collect(),
    };
    LabelMap::from_raw(w, h, &raw)
}
