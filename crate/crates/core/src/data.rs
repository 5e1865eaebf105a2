//! PNG I/O, procedural clean scenes, synthetic rain and the on-disk pair layout.
//!
//! Rain is an additive layer: a sparse Bernoulli impulse field convolved with
//! an antialiased line kernel, scaled, added to the clean image in `[0, 1]`,
//! clipped and quantised. The impulse field wraps around the image borders so
//! every streak is complete.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageReader, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Float, Shape, Tensor};

pub const MANIFEST: &str = "manifest.txt";

pub fn load_png(path: &Path) -> Result<RgbImage> {
    let reader = ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    let img = reader
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    match img {
        DynamicImage::ImageRgb8(rgb) => Ok(rgb),
        DynamicImage::ImageRgba8(_) | DynamicImage::ImageLuma8(_) | DynamicImage::ImageLumaA8(_) => Ok(img.to_rgb8()),
        other => Err(Error::Format(format!(
            "{}: unsupported pixel format {:?}, expected 8-bit RGB, RGBA or grayscale",
            path.display(),
            other.color()
        ))),
    }
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    })
}

/// Stacks equally sized images into `(n, 3, h, w)` with values in `[0, 1]`.
pub fn to_tensor<T: Float>(images: &[&RgbImage]) -> Result<Tensor<T>> {
    let Some(first) = images.first() else {
        return Err(Error::dim("to_tensor: no images"));
    };
    let (w, h) = first.dimensions();
    let (w, h) = (w as usize, h as usize);
    if let Some(bad) = images.iter().find(|im| im.dimensions() != first.dimensions()) {
        return Err(Error::dim(format!(
            "to_tensor: image of {:?} among images of {:?}",
            bad.dimensions(),
            first.dimensions()
        )));
    }
    let inv = T::of(1.0 / 255.0);
    Ok(Tensor::from_fn(Shape::new(images.len(), 3, h, w), |[n, c, y, x]| {
        T::of(images[n].get_pixel(x as u32, y as u32)[c] as f64) * inv
    }))
}

/// Sample `n` of a `(_, 3, h, w)` tensor, clipped to `[0, 1]` and rounded.
pub fn from_tensor<T: Float>(t: &Tensor<T>, n: usize) -> Result<RgbImage> {
    let s = t.shape();
    if s.c() != 3 || n >= s.n() {
        return Err(Error::dim(format!("from_tensor: cannot take sample {n} of {s} as RGB")));
    }
    Ok(RgbImage::from_fn(s.w() as u32, s.h() as u32, |x, y| {
        let px = |c| quantize(t.at([n, c, y as usize, x as usize]).as_f64());
        image::Rgb([px(0), px(1), px(2)])
    }))
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Parameters of one synthetic rain layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RainParams {
    /// Streak angle in degrees from vertical, clockwise on screen.
    pub theta: f64,
    /// Streak length in pixels.
    pub length: usize,
    /// Probability that a pixel starts a streak.
    pub density: f64,
    /// Brightness added along a streak, in `[0, 1]` units.
    pub intensity: f64,
    pub seed: u64,
}

impl Default for RainParams {
    fn default() -> Self {
        RainParams {
            theta: 15.0,
            length: 12,
            density: 0.004,
            intensity: 0.6,
            seed: 0,
        }
    }
}

impl RainParams {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !self.theta.is_finite() || self.theta.abs() > 90.0 {
            return fail(format!("rain angle must be in [-90, 90] degrees, got {}", self.theta));
        }
        if !(1..=256).contains(&self.length) {
            return fail(format!("streak length must be in 1..=256, got {}", self.length));
        }
        if !(self.density > 0.0 && self.density < 1.0) {
            return fail(format!("rain density must be in (0, 1), got {}", self.density));
        }
        if !(0.0..=4.0).contains(&self.intensity) {
            return fail(format!("rain intensity must be in [0, 4], got {}", self.intensity));
        }
        Ok(())
    }

    /// Manifest line for the pair stored as `file`.
    pub fn manifest_line(&self, file: &str) -> String {
        format!(
            "{file} theta={} len={} rho={} intensity={} seed={}",
            self.theta, self.length, self.density, self.intensity, self.seed
        )
    }

    pub fn parse_manifest_line(line: &str) -> Result<(String, RainParams)> {
        let bad = || Error::Format(format!("malformed manifest line {line:?}"));
        let mut parts = line.split_whitespace();
        let file = parts.next().ok_or_else(bad)?.to_string();
        let mut p = RainParams::default();
        let mut seen = 0;
        for kv in parts {
            let (k, v) = kv.split_once('=').ok_or_else(bad)?;
            let num = |v: &str| v.parse::<f64>().map_err(|_| bad());
            match k {
                "theta" => p.theta = num(v)?,
                "len" => p.length = v.parse().map_err(|_| bad())?,
                "rho" => p.density = num(v)?,
                "intensity" => p.intensity = num(v)?,
                "seed" => p.seed = v.parse().map_err(|_| bad())?,
                _ => return Err(bad()),
            }
            seen += 1;
        }
        if seen != 5 {
            return Err(bad());
        }
        Ok((file, p))
    }
}

/// Line kernel as `(dy, dx, weight)` taps. Samples at unit spacing along the
/// segment are splatted bilinearly, so each pixel the streak crosses gets a
/// weight close to one.
pub fn streak_kernel(theta: f64, length: usize) -> Vec<(isize, isize, f64)> {
    let t = theta.to_radians();
    let (dx, dy) = (t.sin(), t.cos());
    let half = (length as f64 - 1.0) / 2.0;
    let mut taps: std::collections::BTreeMap<(isize, isize), f64> = Default::default();
    for i in 0..length {
        let s = i as f64 - half;
        let (x, y) = (s * dx, s * dy);
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        for (oy, wy) in [(0, 1.0 - fy), (1, fy)] {
            for (ox, wx) in [(0, 1.0 - fx), (1, fx)] {
                let w = wy * wx;
                if w > 0.0 {
                    *taps.entry((y0 as isize + oy, x0 as isize + ox)).or_default() += w;
                }
            }
        }
    }
    taps.into_iter().map(|((y, x), w)| (y, x, w)).collect()
}

/// The rain layer alone, `(h, w)` row-major, before scaling by intensity.
pub fn rain_layer(h: usize, w: usize, p: &RainParams) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let kernel = streak_kernel(p.theta, p.length);
    let mut layer = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            if rng.random::<f64>() >= p.density {
                continue;
            }
            let amp = rng.random_range(0.6..1.0);
            for &(ky, kx, kw) in &kernel {
                let yy = (y as isize + ky).rem_euclid(h as isize) as usize;
                let xx = (x as isize + kx).rem_euclid(w as isize) as usize;
                layer[yy * w + xx] += amp * kw;
            }
        }
    }
    layer
}

/// A rainy image and its clean counterpart.
#[derive(Clone, Debug)]
pub struct ImagePair {
    pub rainy: RgbImage,
    pub clean: RgbImage,
    pub params: RainParams,
}

pub fn synth_rain(clean: &RgbImage, p: &RainParams) -> ImagePair {
    let (w, h) = clean.dimensions();
    let mut rainy = clean.clone();
    if p.intensity > 0.0 {
        let layer = rain_layer(h as usize, w as usize, p);
        for (i, px) in rainy.pixels_mut().enumerate() {
            let add = p.intensity * layer[i];
            for c in px.0.iter_mut() {
                *c = quantize(*c as f64 / 255.0 + add);
            }
        }
    }
    ImagePair {
        rainy,
        clean: clean.clone(),
        params: *p,
    }
}

/// A smooth random scene: a colour gradient, a few soft discs and bars and a
/// low-frequency texture.
pub fn procedural_scene(w: u32, h: u32, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut colour = || [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
    let (c0, c1) = (colour(), colour());
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5CE7_E000);
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let (ga, gb) = (angle.cos(), angle.sin());
    let shapes: Vec<_> = (0..rng.random_range(3..7))
        .map(|_| {
            let disc = rng.random_bool(0.6);
            let cx = rng.random_range(0.0..w as f64);
            let cy = rng.random_range(0.0..h as f64);
            let r = rng.random_range(0.08..0.3) * w.min(h) as f64;
            let col = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
            (disc, cx, cy, r, col)
        })
        .collect();
    let (fx, fy, phase) = (
        rng.random_range(1.0..4.0),
        rng.random_range(1.0..4.0),
        rng.random_range(0.0..std::f64::consts::TAU),
    );
    RgbImage::from_fn(w, h, |x, y| {
        let (u, v) = (x as f64 / w as f64, y as f64 / h as f64);
        let g = (((u - 0.5) * ga + (v - 0.5) * gb) + 0.75).clamp(0.0, 1.5) / 1.5;
        let mut px: [f64; 3] = std::array::from_fn(|c| c0[c] * (1.0 - g) + c1[c] * g);
        for &(disc, cx, cy, r, col) in &shapes {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let d = if disc { (dx * dx + dy * dy).sqrt() } else { dx.abs().max(dy.abs() * 2.5) };
            let a = (1.0 - (d - r) / 2.0).clamp(0.0, 1.0);
            for c in 0..3 {
                px[c] = px[c] * (1.0 - a * 0.8) + col[c] * a * 0.8;
            }
        }
        let tex = 0.06 * (std::f64::consts::TAU * (fx * u + fy * v) + phase).sin();
        image::Rgb(std::array::from_fn(|c| quantize(px[c] * 0.8 + 0.1 + tex)))
    })
}

/// Pairs on disk: `root/rainy/NNNN.png`, `root/clean/NNNN.png` and a manifest.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub names: Vec<String>,
    pub pairs: Vec<ImagePair>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn push(&mut self, name: impl Into<String>, pair: ImagePair) {
        self.names.push(name.into());
        self.pairs.push(pair);
    }

    /// `count` procedural scenes of `size × size` with rain whose seed is
    /// `rain.seed + i` for pair `i`. Scene seeds are drawn from a separate
    /// stream so that changing the rain does not change the scenes.
    pub fn synthetic(count: usize, size: u32, rain: &RainParams) -> Self {
        let mut ds = Dataset::default();
        for i in 0..count {
            let clean = procedural_scene(size, size, rain.seed.wrapping_add(i as u64) ^ 0xC1EA_4000_0000);
            let p = RainParams {
                seed: rain.seed.wrapping_add(i as u64),
                ..*rain
            };
            ds.push(pair_name(i), synth_rain(&clean, &p));
        }
        ds
    }

    /// Rains on every PNG in `clean_dir` (sorted by file name).
    pub fn from_clean_dir(clean_dir: &Path, rain: &RainParams) -> Result<Self> {
        let files = list_pngs(clean_dir)?;
        if files.is_empty() {
            return Err(Error::Usage(format!("no PNG files in {}", clean_dir.display())));
        }
        let mut ds = Dataset::default();
        for (i, f) in files.iter().enumerate() {
            let clean = load_png(f)?;
            let p = RainParams {
                seed: rain.seed.wrapping_add(i as u64),
                ..*rain
            };
            ds.push(pair_name(i), synth_rain(&clean, &p));
        }
        Ok(ds)
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        let mut manifest = String::new();
        for (name, pair) in self.names.iter().zip(&self.pairs) {
            save_png(&pair.rainy, &root.join("rainy").join(name))?;
            save_png(&pair.clean, &root.join("clean").join(name))?;
            manifest.push_str(&pair.params.manifest_line(name));
            manifest.push('\n');
        }
        let path = root.join(MANIFEST);
        fs::write(&path, manifest).map_err(|e| Error::io(path, e))
    }

    /// Loads pairs matched by file name. Rain parameters come from the
    /// manifest when present.
    pub fn load(root: &Path) -> Result<Self> {
        let rainy_dir = root.join("rainy");
        let files = list_pngs(&rainy_dir)?;
        if files.is_empty() {
            return Err(Error::Usage(format!("no PNG files in {}", rainy_dir.display())));
        }
        let mut params = std::collections::HashMap::new();
        let mpath = root.join(MANIFEST);
        if mpath.exists() {
            let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                let (file, p) = RainParams::parse_manifest_line(line)?;
                params.insert(file, p);
            }
        }
        let mut ds = Dataset::default();
        for f in files {
            let name = f.file_name().unwrap().to_string_lossy().into_owned();
            let rainy = load_png(&f)?;
            let clean = load_png(&root.join("clean").join(&name))?;
            if rainy.dimensions() != clean.dimensions() {
                return Err(Error::Dimension(format!(
                    "{name}: rainy {:?} and clean {:?} differ in size",
                    rainy.dimensions(),
                    clean.dimensions()
                )));
            }
            let params = params.get(&name).copied().unwrap_or(RainParams {
                intensity: 0.0,
                ..Default::default()
            });
            ds.push(name, ImagePair { rainy, clean, params });
        }
        Ok(ds)
    }
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} pairs", self.len())?;
        if let Some(p) = self.pairs.first() {
            let (w, h) = p.rainy.dimensions();
            write!(f, ", first {w}x{h}")?;
        }
        Ok(())
    }
}

pub fn pair_name(i: usize) -> String {
    format!("{i:04}.png")
}

/// PNG files directly inside `dir`, sorted by name.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_png = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if path.is_file() && is_png {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Orientation in degrees on the spectrum at which a streak layer of angle
/// `theta` concentrates its energy, in the convention of
/// [`crate::fft::orientation_histogram`]. Streaks run along `(sin θ, cos θ)`
/// in `(x, y)`, so their energy lies along the perpendicular frequency.
pub fn expected_spectrum_orientation(theta: f64) -> f64 {
    (-theta).rem_euclid(180.0) + 0.0
}

/// Dominant orientation of `|F(rainy - clean)|` on the luminance difference.
pub fn streak_orientation(pair: &ImagePair) -> Result<f64> {
    if pair.rainy.dimensions() != pair.clean.dimensions() {
        return Err(Error::dim("streak_orientation: pair sizes differ"));
    }
    let (w, h) = pair.rainy.dimensions();
    let (w, h) = (w as usize, h as usize);
    let diff: Vec<f64> = pair
        .rainy
        .pixels()
        .zip(pair.clean.pixels())
        .map(|(r, c)| crate::metrics::luma(r.0) - crate::metrics::luma(c.0))
        .collect();
    let amp = crate::fft::full_amplitude(&diff, h, w);
    let hist = crate::fft::orientation_histogram(&amp, h, w, 90, 0.05);
    Ok(crate::fft::dominant_orientation(&hist, 2))
}
