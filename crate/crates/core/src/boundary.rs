//! Gland boundary construction.
//!
//! An image is first labeled thick- or thin-rimmed from how crowded the
//! endpoints of its thinned nucleus mask are. Thick rims are closed by
//! growing lines outward from border nuclei along the Sobel normal while
//! the diffused red channel stays similar to where the walk started; thin
//! rims are closed by repeatedly linking skeleton endpoints of the border
//! nuclei to nearby endpoints of all nuclei and keeping the enclosed holes
//! that border nuclei surround.

use std::f64::consts::FRAC_PI_4;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{nucleus_features, DEFAULT_WINDOW};
use crate::forest::Forest;
use crate::preprocess::{epithelial_mask, perona_malik_real, DiffusionParams};
use crate::raster::{
    area_filter, dilate_disk, draw_line_in_place, endpoints, fill_holes, label_components,
    label_components_with, majority_filter, sobel, thin, to_grayscale, BinaryMask, Connectivity,
    LabelMap, Point, RealImage, RgbImage,
};

/// Which construction an image's rim calls for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RimType {
    Thick,
    Thin,
}

/// Thick/thin decision together with the numbers behind it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryKind {
    pub kind: RimType,
    /// Mean cross-component endpoint neighbors per endpoint.
    pub ratio: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LineGrowParams {
    /// Side of the square averaging window, odd.
    pub window: usize,
    /// Largest mean difference, in intensity units, a walk may cross.
    pub k: f64,
    pub bins: usize,
    pub max_steps: usize,
}

impl Default for LineGrowParams {
    fn default() -> Self {
        Self { window: 5, k: 45.0, bins: 8, max_steps: 100 }
    }
}

impl LineGrowParams {
    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window % 2 == 0 {
            return Err(Error::Parameter(format!("window W must be odd and >= 3, got {}", self.window)));
        }
        if !(self.k > 0.0 && self.k.is_finite()) {
            return Err(Error::Parameter(format!("k must be positive, got {}", self.k)));
        }
        if self.bins != 8 {
            return Err(Error::Parameter(format!("direction bins must be 8, got {}", self.bins)));
        }
        if self.max_steps == 0 {
            return Err(Error::Parameter("max_steps must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThinLinkParams {
    /// Endpoint neighborhood radius for the thick/thin ratio.
    pub p: f64,
    /// Linking radius.
    pub p2: f64,
    /// Linking rounds.
    pub n: usize,
}

impl Default for ThinLinkParams {
    fn default() -> Self {
        Self { p: 10.0, p2: 20.0, n: 5 }
    }
}

impl ThinLinkParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p2 > 0.0 && self.p.is_finite() && self.p2.is_finite()) {
            return Err(Error::Parameter("radii p and p2 must be positive".into()));
        }
        if self.n < 1 {
            return Err(Error::Parameter("n must be >= 1".into()));
        }
        Ok(())
    }
}

/// Masks produced on the way to the final regions.
#[derive(Debug, Clone, PartialEq)]
pub struct Intermediates {
    /// All nuclei.
    pub nuclei: BinaryMask,
    /// Nuclei classified as gland border.
    pub border: BinaryMask,
    /// Grown lines (thick) or linking mesh (thin), before filling.
    pub connected: BinaryMask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlandSegmentation {
    pub regions: LabelMap,
    pub kind: BoundaryKind,
    pub intermediates: Option<Intermediates>,
}

/// Regions plus the connected mask they were filled from.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstructedRegions {
    pub regions: LabelMap,
    pub connected: BinaryMask,
}

fn ensure_shape(a: &BinaryMask, w: usize, h: usize) -> Result<()> {
    if a.width() == w && a.height() == h {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected: (w, h), found: (a.width(), a.height()) })
    }
}

/// Uniform-grid index over points for radius queries.
struct PointGrid {
    cell: f64,
    cols: usize,
    rows: usize,
    buckets: Vec<Vec<usize>>,
}

impl PointGrid {
    fn new(points: &[Point], width: usize, height: usize, radius: f64) -> Self {
        let cell = radius.max(1.0);
        let cols = (width as f64 / cell).ceil() as usize + 1;
        let rows = (height as f64 / cell).ceil() as usize + 1;
        let mut buckets = vec![Vec::new(); cols * rows];
        for (i, p) in points.iter().enumerate() {
            let (cx, cy) = ((p.x as f64 / cell) as usize, (p.y as f64 / cell) as usize);
            buckets[cy * cols + cx].push(i);
        }
        Self { cell, cols, rows, buckets }
    }

    /// Indices of points within `radius` of `q`, in ascending order.
    fn within(&self, points: &[Point], q: Point, radius: f64) -> Vec<usize> {
        let r2 = radius * radius;
        let (cx, cy) = ((q.x as f64 / self.cell) as isize, (q.y as f64 / self.cell) as isize);
        let reach = (radius / self.cell).ceil() as isize;
        let mut out = Vec::new();
        for gy in (cy - reach).max(0)..=(cy + reach).min(self.rows as isize - 1) {
            for gx in (cx - reach).max(0)..=(cx + reach).min(self.cols as isize - 1) {
                for &i in &self.buckets[gy as usize * self.cols + gx as usize] {
                    if points[i].dist2(q) as f64 <= r2 {
                        out.push(i);
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

/// Neighbor count λ of every skeleton endpoint of `mask`: endpoints of
/// other skeleton components within distance `p`.
pub fn endpoint_neighbor_counts(mask: &BinaryMask, p: f64) -> Vec<usize> {
    let skeleton = thin(mask);
    let ends = endpoints(&skeleton);
    let comps = label_components(&skeleton);
    let grid = PointGrid::new(&ends, mask.width(), mask.height(), p);
    ends.iter()
        .map(|&e| {
            let own = comps.get(e.x, e.y);
            grid.within(&ends, e, p)
                .into_iter()
                .filter(|&j| comps.get(ends[j].x, ends[j].y) != own)
                .count()
        })
        .collect()
}

/// Mean cross-component endpoint neighbors per endpoint; 0 without
/// endpoints.
pub fn endpoint_neighbor_ratio(mask: &BinaryMask, p: f64) -> f64 {
    let counts = endpoint_neighbor_counts(mask, p);
    if counts.is_empty() {
        0.0
    } else {
        counts.iter().sum::<usize>() as f64 / counts.len() as f64
    }
}

/// Mean over training masks of each mask's endpoint neighbor ratio.
pub fn compute_threshold_nth(training_masks: &[BinaryMask], p: f64) -> Result<f64> {
    if training_masks.is_empty() {
        return Err(Error::Parameter("thick/thin threshold needs at least one training mask".into()));
    }
    let total: f64 = training_masks.iter().map(|m| endpoint_neighbor_ratio(m, p)).sum();
    Ok(total / training_masks.len() as f64)
}

pub fn classify_boundary_kind(nuclei: &BinaryMask, threshold: f64, p: f64) -> BoundaryKind {
    let ratio = endpoint_neighbor_ratio(nuclei, p);
    let kind = if ratio < threshold { RimType::Thin } else { RimType::Thick };
    BoundaryKind { kind, ratio, threshold }
}

/// Box means over a square window clipped to the image.
struct WindowMeans {
    width: usize,
    height: usize,
    sat: Vec<f64>,
}

impl WindowMeans {
    fn new(img: &RealImage) -> Self {
        let (w, h) = (img.width(), img.height());
        let mut sat = vec![0.0; (w + 1) * (h + 1)];
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += img.get(x, y);
                sat[(y + 1) * (w + 1) + x + 1] = sat[y * (w + 1) + x + 1] + row;
            }
        }
        Self { width: w, height: h, sat }
    }

    fn mean(&self, x: usize, y: usize, half: usize) -> f64 {
        let x0 = x.saturating_sub(half);
        let y0 = y.saturating_sub(half);
        let x1 = (x + half + 1).min(self.width);
        let y1 = (y + half + 1).min(self.height);
        let s = |x: usize, y: usize| self.sat[y * (self.width + 1) + x];
        let sum = s(x1, y1) - s(x0, y1) - s(x1, y0) + s(x0, y0);
        sum / ((x1 - x0) * (y1 - y0)) as f64
    }
}

/// Unit chessboard step for each 45° bin, bin 0 pointing along +x and
/// angles increasing toward +y (image rows grow downward).
const BIN_STEPS: [(isize, isize); 8] = [(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)];

/// Bin of the outward normal at an edge pixel. The Sobel gradient of the
/// 0/1 mask points into the foreground, so the walk takes its opposite.
pub fn outward_bin(gradient_direction: f64) -> usize {
    let outward = gradient_direction + std::f64::consts::PI;
    ((outward / FRAC_PI_4).round() as i64).rem_euclid(8) as usize
}

/// Grow lines outward from every edge pixel of `border`.
///
/// The walk leaves its own nucleus along the binned outward normal, one
/// pixel at a time, and marks each pixel whose window mean over
/// `smoothed_red` stays within `k` of the mean at the start pixel. It stops
/// at the first pixel that breaks the test, at the image border, on
/// reaching another foreground pixel, or after `max_steps`.
pub fn grow_lines_thick(border: &BinaryMask, smoothed_red: &RealImage, params: &LineGrowParams) -> Result<BinaryMask> {
    params.validate()?;
    let (w, h) = (border.width(), border.height());
    if smoothed_red.width() != w || smoothed_red.height() != h {
        return Err(Error::DimensionMismatch {
            expected: (w, h),
            found: (smoothed_red.width(), smoothed_red.height()),
        });
    }
    let grad = sobel(border);
    let means = WindowMeans::new(smoothed_red);
    let half = params.window / 2;
    let mut out = border.clone();
    for start in border.foreground() {
        if grad.magnitude_at(start.x, start.y) <= 0.0 {
            continue;
        }
        let (dx, dy) = BIN_STEPS[outward_bin(grad.direction_at(start.x, start.y))];
        let m1 = means.mean(start.x, start.y, half);
        let (mut x, mut y) = (start.x as isize, start.y as isize);
        let mut left_nucleus = false;
        for _ in 0..params.max_steps {
            x += dx;
            y += dy;
            if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
                break;
            }
            let (ux, uy) = (x as usize, y as usize);
            if border.get(ux, uy) {
                if left_nucleus {
                    break;
                }
                continue;
            }
            left_nucleus = true;
            if (m1 - means.mean(ux, uy, half)).abs() < params.k {
                out.set(ux, uy, true);
            } else {
                break;
            }
        }
    }
    Ok(out)
}

/// Minimum region area when none is configured: 0.1% of the image.
pub fn default_min_area(width: usize, height: usize) -> usize {
    (width * height).div_ceil(1000)
}

/// Thick-rim construction: diffuse the red channel, grow lines, majority
/// filter, fill enclosed regions, drop small components and label.
pub fn construct_thick(
    border: &BinaryMask,
    img: &RgbImage,
    params: &LineGrowParams,
    diffusion: &DiffusionParams,
    min_area: usize,
) -> Result<ConstructedRegions> {
    ensure_shape(border, img.width(), img.height())?;
    let red = perona_malik_real(&img.channel(0).to_real(), diffusion)?;
    let grown = grow_lines_thick(border, &red, params)?;
    let cleaned = majority_filter(&grown);
    let filled = fill_holes(&cleaned);
    let kept = area_filter(&filled, min_area);
    Ok(ConstructedRegions { regions: label_components(&kept), connected: grown })
}

/// Mesh after every linking round; the first entry is `border` itself.
pub fn link_endpoints_thin_rounds(border: &BinaryMask, nuclei: &BinaryMask, params: &ThinLinkParams) -> Result<Vec<BinaryMask>> {
    params.validate()?;
    ensure_shape(nuclei, border.width(), border.height())?;
    let targets = endpoints(&thin(nuclei));
    let grid = PointGrid::new(&targets, border.width(), border.height(), params.p2);
    let mut rounds = vec![border.clone()];
    let mut mesh = border.clone();
    for _ in 0..params.n {
        let sources = endpoints(&thin(&mesh));
        let comps = label_components(&mesh);
        let mut lines = BinaryMask::empty(mesh.width(), mesh.height())?;
        for &e in &sources {
            let own = comps.get(e.x, e.y);
            for j in grid.within(&targets, e, params.p2) {
                let q = targets[j];
                if comps.get(q.x, q.y) == own {
                    continue;
                }
                draw_line_in_place(&mut lines, e, q)?;
            }
        }
        mesh = mesh.union(&lines)?;
        rounds.push(mesh.clone());
    }
    Ok(rounds)
}

/// Thin-rim mesh: `n` rounds linking border-skeleton endpoints to nucleus
/// skeleton endpoints within `p2`.
pub fn link_endpoints_thin(border: &BinaryMask, nuclei: &BinaryMask, params: &ThinLinkParams) -> Result<BinaryMask> {
    Ok(link_endpoints_thin_rounds(border, nuclei, params)?.pop().expect("at least the initial mesh"))
}

/// Settings of the hole test that separates glands from mesh artifacts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HoleParams {
    /// Share of a hole's boundary that must lie near border nuclei.
    pub border_fraction: f64,
    /// Distance, in pixels, counted as near.
    pub proximity: usize,
}

impl Default for HoleParams {
    fn default() -> Self {
        Self { border_fraction: 0.5, proximity: 3 }
    }
}

impl HoleParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.border_fraction > 0.0 && self.border_fraction <= 1.0) {
            return Err(Error::Parameter(format!(
                "border_fraction must be in (0, 1], got {}",
                self.border_fraction
            )));
        }
        Ok(())
    }
}

/// Fraction of each hole's boundary pixels near `border`, indexed by the
/// label in `holes` (entry 0 unused).
pub fn hole_border_fractions(holes: &LabelMap, border: &BinaryMask, proximity: usize) -> Vec<f64> {
    let near = dilate_disk(border, proximity);
    let n = holes.count() as usize;
    let (mut edge, mut close) = (vec![0usize; n + 1], vec![0usize; n + 1]);
    let (w, h) = (holes.width(), holes.height());
    for y in 0..h {
        for x in 0..w {
            let l = holes.get(x, y);
            if l == 0 {
                continue;
            }
            let on_edge = [(0isize, -1isize), (-1, 0), (1, 0), (0, 1)].iter().any(|&(dx, dy)| {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize || holes.get(nx as usize, ny as usize) != l
            });
            if on_edge {
                edge[l as usize] += 1;
                close[l as usize] += usize::from(near.get(x, y));
            }
        }
    }
    edge.iter()
        .zip(&close)
        .map(|(&e, &c)| if e == 0 { 0.0 } else { c as f64 / e as f64 })
        .collect()
}

/// Enclosed background regions of `mesh` whose boundary mostly runs along
/// border nuclei, area-filtered and labeled from 1.
pub fn identify_gland_holes(mesh: &BinaryMask, border: &BinaryMask, params: &HoleParams, min_area: usize) -> Result<LabelMap> {
    params.validate()?;
    ensure_shape(border, mesh.width(), mesh.height())?;
    let holes_mask = fill_holes(mesh).difference(mesh)?;
    let holes = label_components_with(&holes_mask, Connectivity::Four);
    let fractions = hole_border_fractions(&holes, border, params.proximity);
    let areas = holes.areas();
    let keep: Vec<bool> = (0..=holes.count() as usize)
        .map(|l| l != 0 && fractions[l] >= params.border_fraction && areas[l] >= min_area.max(1))
        .collect();
    let kept = BinaryMask::new(
        mesh.width(),
        mesh.height(),
        holes.labels().iter().map(|&l| keep[l as usize]).collect(),
    )?;
    Ok(label_components_with(&kept, Connectivity::Four))
}

/// Everything [`segment`] needs besides the image and the forest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentConfig {
    pub window: usize,
    pub line_grow: LineGrowParams,
    pub diffusion: DiffusionParams,
    pub thin_link: ThinLinkParams,
    pub holes: HoleParams,
    /// Minimum region area; `None` means 0.1% of the image.
    pub min_area: Option<usize>,
    /// Thick/thin threshold on the endpoint neighbor ratio.
    pub threshold: f64,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            line_grow: LineGrowParams::default(),
            diffusion: DiffusionParams::default(),
            thin_link: ThinLinkParams::default(),
            holes: HoleParams::default(),
            min_area: None,
            threshold: 0.0,
        }
    }
}

/// Border nuclei: components of `nuclei` the forest puts in class 1.
pub fn classify_nuclei(img: &RgbImage, nuclei: &BinaryMask, forest: &Forest, window: usize) -> Result<BinaryMask> {
    let nf = nucleus_features(img, nuclei, window)?;
    let mut keep = vec![false; nf.labels.count() as usize + 1];
    for (c, v) in nf.centroids.iter().zip(&nf.vectors) {
        keep[c.label as usize] = forest.predict(v.as_slice()) == 1;
    }
    BinaryMask::new(
        img.width(),
        img.height(),
        nf.labels.labels().iter().map(|&l| keep[l as usize]).collect(),
    )
}

/// Full pipeline on one image.
pub fn segment(img: &RgbImage, forest: &Forest, config: &SegmentConfig) -> Result<GlandSegmentation> {
    if forest.n_features != crate::features::FEATURE_LEN {
        return Err(Error::InvalidInput(format!(
            "forest expects {} features, pipeline produces {}",
            forest.n_features,
            crate::features::FEATURE_LEN
        )));
    }
    if img.width() < config.window || img.height() < config.window {
        return Err(Error::Degenerate(format!(
            "{}x{} image is smaller than the {}-pixel feature window",
            img.width(),
            img.height(),
            config.window
        )));
    }
    config.line_grow.validate()?;
    config.thin_link.validate()?;
    config.holes.validate()?;
    config.diffusion.validate()?;

    let min_area = config.min_area.unwrap_or_else(|| default_min_area(img.width(), img.height()));
    let nuclei = epithelial_mask(&to_grayscale(img))?;
    let border = classify_nuclei(img, &nuclei, forest, config.window)?;
    let kind = classify_boundary_kind(&nuclei, config.threshold, config.thin_link.p);
    log::debug!(
        "{} nuclei px, {} border px, ratio {:.3} vs {:.3} -> {:?}",
        nuclei.count(),
        border.count(),
        kind.ratio,
        kind.threshold,
        kind.kind
    );
    let (regions, connected) = match kind.kind {
        RimType::Thick => {
            let c = construct_thick(&border, img, &config.line_grow, &config.diffusion, min_area)?;
            (c.regions, c.connected)
        }
        RimType::Thin => {
            let mesh = link_endpoints_thin(&border, &nuclei, &config.thin_link)?;
            (identify_gland_holes(&mesh, &border, &config.holes, min_area)?, mesh)
        }
    };
    Ok(GlandSegmentation {
        regions,
        kind,
        intermediates: Some(Intermediates { nuclei, border, connected }),
    })
}
