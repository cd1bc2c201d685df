//! Debug images.

use std::path::Path;

use glandseg::raster::{BinaryMask, LabelMap, RgbImage};
use image::ImageFormat;

use crate::commands::CliError;

const PALETTE: [[u8; 3]; 8] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
];

fn save(img: impl Fn() -> image::ImageResult<()>, path: &Path) -> Result<(), CliError> {
    img().map_err(|e| CliError::Pipeline(glandseg::Error::Image { path: path.to_path_buf(), message: e.to_string() }))
}

/// 0/255 grayscale PNG.
pub fn mask_png(mask: &BinaryMask, path: &Path) -> Result<(), CliError> {
    let gray = mask.to_gray().to_image();
    save(|| gray.save_with_format(path, ImageFormat::Png), path)
}

/// Regions tinted over the original; region borders drawn opaque.
pub fn tint_overlay(img: &RgbImage, regions: &LabelMap, path: &Path) -> Result<(), CliError> {
    let mut out = img.clone();
    let (w, h) = (img.width(), img.height());
    for y in 0..h {
        for x in 0..w {
            let l = regions.get(x, y);
            if l == 0 {
                continue;
            }
            let color = PALETTE[(l as usize - 1) % PALETTE.len()];
            let edge = x == 0
                || y == 0
                || x + 1 == w
                || y + 1 == h
                || [(x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)].iter().any(|&(nx, ny)| regions.get(nx, ny) != l);
            let px = if edge {
                color
            } else {
                let o = img.get(x, y);
                std::array::from_fn(|c| ((u16::from(o[c]) * 3 + u16::from(color[c]) * 2) / 5) as u8)
            };
            out.set(x, y, px);
        }
    }
    let rgb = out.to_image();
    save(|| rgb.save_with_format(path, ImageFormat::Png), path)
}
