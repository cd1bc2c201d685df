//! Synthetic H&E-like tissue with known gland geometry.
//!
//! Each gland is a disk: pale lumen, a purple cytoplasm band, and dark
//! elliptical nuclei inside the band. Thin-rim glands carry one sparse ring
//! of nuclei, thick-rim glands several staggered rows. Elongated nuclei are
//! scattered through the pink textured stroma away from every gland.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::boundary::RimType;
use crate::error::{Error, Result};
use crate::raster::{LabelMap, RgbImage};

const STROMA: [f64; 3] = [225.0, 165.0, 200.0];
const LUMEN: [f64; 3] = [242.0, 236.0, 242.0];
const CYTOPLASM: [f64; 3] = [150.0, 100.0, 170.0];
const NUCLEUS: [f64; 3] = [85.0, 45.0, 125.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub width: usize,
    pub height: usize,
    pub glands: usize,
    pub rim: RimType,
    pub seed: u64,
}

impl PhantomSpec {
    pub fn new(rim: RimType, seed: u64) -> Self {
        Self { width: 256, height: 256, glands: 2, rim, seed }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlandDisk {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
}

impl GlandDisk {
    fn dist(&self, x: f64, y: f64) -> f64 {
        ((x - self.cx).powi(2) + (y - self.cy).powi(2)).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub image: RgbImage,
    /// Gland `i` of `glands` carries label `i + 1`.
    pub truth: LabelMap,
    pub glands: Vec<GlandDisk>,
    pub rim: RimType,
}

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cx: f64,
    cy: f64,
    /// Semi-axis along `angle`.
    a: f64,
    b: f64,
    angle: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }
}

struct Layout {
    rim_width: f64,
    /// Radial offsets of nucleus rows, measured inward from the gland edge.
    rows: &'static [f64],
    spacing: f64,
    tangential: f64,
    radial: f64,
}

fn layout(rim: RimType) -> Layout {
    match rim {
        RimType::Thin => Layout { rim_width: 10.0, rows: &[5.0], spacing: 14.0, tangential: 4.5, radial: 3.2 },
        RimType::Thick => Layout { rim_width: 19.0, rows: &[4.0, 10.0, 16.0], spacing: 9.0, tangential: 3.6, radial: 2.8 },
    }
}

fn place_glands(spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> Result<Vec<GlandDisk>> {
    let (w, h) = (spec.width as f64, spec.height as f64);
    let mut glands: Vec<GlandDisk> = Vec::new();
    for _ in 0..spec.glands {
        let mut placed = false;
        for _ in 0..2000 {
            let radius = rng.gen_range(36.0..46.0);
            let margin = radius + 4.0;
            if 2.0 * margin >= w || 2.0 * margin >= h {
                break;
            }
            let cx = rng.gen_range(margin..w - margin);
            let cy = rng.gen_range(margin..h - margin);
            if glands.iter().all(|g| g.dist(cx, cy) > g.radius + radius + 30.0) {
                glands.push(GlandDisk { cx, cy, radius });
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Parameter(format!(
                "cannot fit {} glands into {}x{}",
                spec.glands, spec.width, spec.height
            )));
        }
    }
    Ok(glands)
}

fn rim_nuclei(g: &GlandDisk, lay: &Layout, rng: &mut ChaCha8Rng) -> Vec<Ellipse> {
    let mut out = Vec::new();
    let phase0 = rng.gen_range(0.0..TAU);
    for (row, &inset) in lay.rows.iter().enumerate() {
        let r = g.radius - inset;
        let n = (TAU * r / lay.spacing).round().max(3.0) as usize;
        let stagger = if row % 2 == 1 { 0.5 } else { 0.0 };
        for i in 0..n {
            let jitter = rng.gen_range(-0.08..0.08);
            let t = phase0 + (i as f64 + stagger + jitter) * TAU / n as f64;
            let rr = r + rng.gen_range(-0.5..0.5);
            out.push(Ellipse {
                cx: g.cx + rr * t.cos(),
                cy: g.cy + rr * t.sin(),
                a: lay.tangential * rng.gen_range(0.9..1.1),
                b: lay.radial * rng.gen_range(0.9..1.1),
                angle: t + std::f64::consts::FRAC_PI_2,
            });
        }
    }
    out
}

fn stromal_nuclei(spec: &PhantomSpec, glands: &[GlandDisk], rng: &mut ChaCha8Rng) -> Vec<Ellipse> {
    let (w, h) = (spec.width as f64, spec.height as f64);
    let target = (spec.width * spec.height) / 700;
    let mut out: Vec<Ellipse> = Vec::new();
    for _ in 0..target * 20 {
        if out.len() >= target {
            break;
        }
        let (x, y) = (rng.gen_range(4.0..w - 4.0), rng.gen_range(4.0..h - 4.0));
        if glands.iter().any(|g| g.dist(x, y) < g.radius + 22.0) {
            continue;
        }
        if out.iter().any(|e| (e.cx - x).powi(2) + (e.cy - y).powi(2) < 22.0 * 22.0) {
            continue;
        }
        out.push(Ellipse {
            cx: x,
            cy: y,
            a: rng.gen_range(4.0..5.5),
            b: rng.gen_range(2.0..2.8),
            angle: rng.gen_range(0.0..TAU),
        });
    }
    out
}

/// Generate one phantom. Identical specs give identical phantoms.
pub fn generate(spec: &PhantomSpec) -> Result<Phantom> {
    if spec.width < 64 || spec.height < 64 {
        return Err(Error::Parameter("phantoms need at least 64x64 pixels".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let glands = place_glands(spec, &mut rng)?;
    let lay = layout(spec.rim);
    let mut nuclei: Vec<Ellipse> = glands.iter().flat_map(|g| rim_nuclei(g, &lay, &mut rng)).collect();
    nuclei.extend(stromal_nuclei(spec, &glands, &mut rng));

    // Low-frequency stain texture: a few random plane waves.
    let waves: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            let t = rng.gen_range(0.0..TAU);
            let f = rng.gen_range(0.02..0.08);
            (f * t.cos(), f * t.sin(), rng.gen_range(0.0..TAU), rng.gen_range(3.0..6.0))
        })
        .collect();

    let (w, h) = (spec.width, spec.height);
    let mut image = RgbImage::filled(w, h, [0, 0, 0])?;
    let mut truth = vec![0u32; w * h];
    for y in 0..h {
        for x in 0..w {
            let (fx, fy) = (x as f64, y as f64);
            let mut base = STROMA;
            let texture: f64 = waves.iter().map(|&(kx, ky, ph, amp)| amp * (kx * fx + ky * fy + ph).sin()).sum();
            let mut textured = true;
            for (i, g) in glands.iter().enumerate() {
                let d = g.dist(fx, fy);
                if d <= g.radius {
                    truth[y * w + x] = i as u32 + 1;
                    base = if d > g.radius - lay.rim_width { CYTOPLASM } else { LUMEN };
                    textured = false;
                }
            }
            if nuclei.iter().any(|e| e.contains(fx, fy)) {
                base = NUCLEUS;
                textured = false;
            }
            let shift = if textured { texture } else { 0.0 };
            let noise = rng.gen_range(-5.0..5.0);
            let px = base.map(|c| (c + shift + noise + rng.gen_range(-2.0..2.0)).round().clamp(0.0, 255.0) as u8);
            image.set(x, y, px);
        }
    }
    Ok(Phantom { image, truth: LabelMap::new(w, h, truth)?, glands, rim: spec.rim })
}

/// `count` phantoms alternating thin and thick rims, seeded from `seed`.
pub fn phantom_suite(count: usize, seed: u64) -> Result<Vec<Phantom>> {
    (0..count)
        .map(|i| {
            let rim = if i % 2 == 0 { RimType::Thin } else { RimType::Thick };
            generate(&PhantomSpec::new(rim, seed.wrapping_add(i as u64)))
        })
        .collect()
}
