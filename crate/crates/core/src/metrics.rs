//! Y-channel PSNR and SSIM.
//!
//! Luminance is BT.601 studio range, `Y = 16 + 65.481 R + 128.553 G + 24.966 B`
//! with `R, G, B` in `[0, 1]`, kept unrounded. Both metrics use a peak of 255.

use image::RgbImage;

use crate::error::{Error, Result};

pub const PEAK: f64 = 255.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Luminance of one 8-bit RGB pixel.
pub fn luma(rgb: [u8; 3]) -> f64 {
    let [r, g, b] = rgb.map(|v| v as f64 / 255.0);
    16.0 + 65.481 * r + 128.553 * g + 24.966 * b
}

/// Row-major luminance plane.
pub fn rgb_to_y(img: &RgbImage) -> Vec<f64> {
    img.pixels().map(|p| luma(p.0)).collect()
}

fn same_size(a: &RgbImage, b: &RgbImage) -> Result<()> {
    if a.dimensions() != b.dimensions() {
        return Err(Error::Dimension(format!(
            "images differ in size: {:?} vs {:?}",
            a.dimensions(),
            b.dimensions()
        )));
    }
    Ok(())
}

/// PSNR between two planes; `+inf` when they are identical.
pub fn psnr_planes(a: &[f64], b: &[f64]) -> f64 {
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (PEAK * PEAK / mse).log10()
    }
}

pub fn psnr_y(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    same_size(a, b)?;
    Ok(psnr_planes(&rgb_to_y(a), &rgb_to_y(b)))
}

/// Normalised 1D Gaussian taps of the SSIM window.
pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut g: [f64; SSIM_WINDOW] =
        std::array::from_fn(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

/// Separable "valid" filtering of an `(h, w)` plane.
fn filter_valid(x: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let k = SSIM_WINDOW;
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x0 in 0..ow {
            rows[y * ow + x0] = (0..k).map(|i| g[i] * x[y * w + x0 + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y0 in 0..oh {
        for x0 in 0..ow {
            out[y0 * ow + x0] = (0..k).map(|i| g[i] * rows[(y0 + i) * ow + x0]).sum();
        }
    }
    out
}

/// Mean SSIM between two `(h, w)` planes.
pub fn ssim_planes(a: &[f64], b: &[f64], h: usize, w: usize) -> Result<f64> {
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Dimension(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {w}x{h}"
        )));
    }
    if a.len() != h * w || b.len() != h * w {
        return Err(Error::dim("ssim: plane length does not match size"));
    }
    let g = gaussian_window();
    let c1 = (SSIM_K1 * PEAK).powi(2);
    let c2 = (SSIM_K2 * PEAK).powi(2);
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
    let mu_a = filter_valid(a, h, w, &g);
    let mu_b = filter_valid(b, h, w, &g);
    let s_aa = filter_valid(&prod(a, a), h, w, &g);
    let s_bb = filter_valid(&prod(b, b), h, w, &g);
    let s_ab = filter_valid(&prod(a, b), h, w, &g);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = s_aa[i] - ma * ma;
        let vb = s_bb[i] - mb * mb;
        let cov = s_ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / mu_a.len() as f64)
}

pub fn ssim_y(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    same_size(a, b)?;
    let (w, h) = a.dimensions();
    ssim_planes(&rgb_to_y(a), &rgb_to_y(b), h as usize, w as usize)
}
