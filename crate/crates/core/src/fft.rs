//! Real-input 2D FFT and its inverse.
//!
//! Convention: the forward transform is unnormalized and the inverse carries
//! the `1 / (h * w)` factor. Power-of-two lengths use an iterative radix-2
//! transform; other lengths go through Bluestein's chirp-z algorithm on a
//! padded radix-2 transform. All arithmetic is done in double precision.

use std::f64::consts::PI;
use std::rc::Rc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::tensor::{Float, Shape, Tensor, Var};

/// A reusable 1D complex transform of fixed length.
#[derive(Clone, Debug)]
pub struct Plan {
    len: usize,
    kind: PlanKind,
}

#[derive(Clone, Debug)]
enum PlanKind {
    Trivial,
    Radix2 {
        twiddles: Vec<Complex64>,
        rev: Vec<usize>,
    },
    Bluestein {
        chirp: Vec<Complex64>,
        kernel: Vec<Complex64>,
        inner: Box<Plan>,
    },
}

impl Plan {
    pub fn new(len: usize) -> Self {
        assert!(len > 0, "fft length must be positive");
        let kind = if len == 1 {
            PlanKind::Trivial
        } else if len.is_power_of_two() {
            let bits = len.trailing_zeros();
            let rev = (0..len)
                .map(|i| i.reverse_bits() >> (usize::BITS - bits))
                .collect();
            let twiddles = (0..len / 2)
                .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / len as f64))
                .collect();
            PlanKind::Radix2 { twiddles, rev }
        } else {
            let m = (2 * len - 1).next_power_of_two();
            let inner = Plan::new(m);
            // exp(-i pi k^2 / n); k^2 reduced mod 2n keeps the angle small
            let chirp: Vec<Complex64> = (0..len)
                .map(|k| {
                    let k2 = (k as u128 * k as u128 % (2 * len as u128)) as f64;
                    Complex64::from_polar(1.0, -PI * k2 / len as f64)
                })
                .collect();
            let mut kernel = vec![Complex64::new(0.0, 0.0); m];
            kernel[0] = chirp[0].conj();
            for k in 1..len {
                kernel[k] = chirp[k].conj();
                kernel[m - k] = chirp[k].conj();
            }
            inner.forward(&mut kernel);
            PlanKind::Bluestein {
                chirp,
                kernel,
                inner: Box::new(inner),
            }
        };
        Plan { len, kind }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// In-place forward transform, `X[k] = sum_j x[j] exp(-2 pi i jk / n)`.
    pub fn forward(&self, data: &mut [Complex64]) {
        assert_eq!(data.len(), self.len);
        match &self.kind {
            PlanKind::Trivial => {}
            PlanKind::Radix2 { twiddles, rev } => {
                for i in 0..self.len {
                    let j = rev[i];
                    if i < j {
                        data.swap(i, j);
                    }
                }
                let mut size = 2;
                while size <= self.len {
                    let half = size / 2;
                    let step = self.len / size;
                    for start in (0..self.len).step_by(size) {
                        for k in 0..half {
                            let t = twiddles[k * step] * data[start + k + half];
                            let u = data[start + k];
                            data[start + k] = u + t;
                            data[start + k + half] = u - t;
                        }
                    }
                    size *= 2;
                }
            }
            PlanKind::Bluestein {
                chirp,
                kernel,
                inner,
            } => {
                let m = inner.len;
                let mut buf = vec![Complex64::new(0.0, 0.0); m];
                for k in 0..self.len {
                    buf[k] = data[k] * chirp[k];
                }
                inner.forward(&mut buf);
                for (b, k) in buf.iter_mut().zip(kernel) {
                    *b *= k;
                }
                inner.inverse(&mut buf);
                let scale = 1.0 / m as f64;
                for k in 0..self.len {
                    data[k] = buf[k] * chirp[k] * scale;
                }
            }
        }
    }

    /// In-place unnormalized inverse transform (positive exponent).
    pub fn inverse(&self, data: &mut [Complex64]) {
        data.iter_mut().for_each(|v| *v = v.conj());
        self.forward(data);
        data.iter_mut().for_each(|v| *v = v.conj());
    }
}

/// Number of retained columns for a real row of length `w`.
pub fn half_width(w: usize) -> usize {
    w / 2 + 1
}

/// Column weight in the Hermitian expansion: columns other than DC and
/// (for even `w`) Nyquist stand for themselves and their mirror.
fn column_weight(l: usize, w: usize) -> f64 {
    if l == 0 || (w % 2 == 0 && l == w / 2) {
        1.0
    } else {
        2.0
    }
}

struct Plans2d {
    h: usize,
    w: usize,
    rows: Plan,
    cols: Plan,
}

impl Plans2d {
    fn new(h: usize, w: usize) -> Self {
        Plans2d {
            h,
            w,
            rows: Plan::new(w),
            cols: Plan::new(h),
        }
    }

    fn columns(&self, half: &mut [Complex64], inverse: bool) {
        let wh = half_width(self.w);
        let mut col = vec![Complex64::new(0.0, 0.0); self.h];
        for l in 0..wh {
            for k in 0..self.h {
                col[k] = half[k * wh + l];
            }
            if inverse {
                self.cols.inverse(&mut col);
            } else {
                self.cols.forward(&mut col);
            }
            for k in 0..self.h {
                half[k * wh + l] = col[k];
            }
        }
    }

    /// Unnormalized half-plane spectrum of one real plane, row-major `(h, w/2+1)`.
    fn rfft(&self, plane: impl Fn(usize) -> f64) -> Vec<Complex64> {
        let wh = half_width(self.w);
        let mut half = vec![Complex64::new(0.0, 0.0); self.h * wh];
        let mut row = vec![Complex64::new(0.0, 0.0); self.w];
        for y in 0..self.h {
            for x in 0..self.w {
                row[x] = Complex64::new(plane(y * self.w + x), 0.0);
            }
            self.rows.forward(&mut row);
            half[y * wh..(y + 1) * wh].copy_from_slice(&row[..wh]);
        }
        self.columns(&mut half, false);
        half
    }

    /// Real plane from a half-plane spectrum, including the `1/(h*w)` factor.
    fn irfft(&self, mut half: Vec<Complex64>) -> Vec<f64> {
        let (h, w) = (self.h, self.w);
        let wh = half_width(w);
        self.columns(&mut half, true);
        let scale = 1.0 / (h * w) as f64;
        let mut out = vec![0.0; h * w];
        let mut row = vec![Complex64::new(0.0, 0.0); w];
        for y in 0..h {
            let src = &half[y * wh..(y + 1) * wh];
            row[..wh].copy_from_slice(src);
            for l in wh..w {
                row[l] = src[w - l].conj();
            }
            self.rows.inverse(&mut row);
            for x in 0..w {
                out[y * w + x] = row[x].re * scale;
            }
        }
        out
    }
}

/// Half-plane complex spectrum of a `(n, c, h, w)` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSpectrum<T> {
    /// `(n, c, h, w/2 + 1)`.
    pub shape: Shape,
    pub re: Vec<T>,
    pub im: Vec<T>,
    /// Spatial `(h, w)` of the source.
    pub origin: (usize, usize),
}

impl<T: Float> ComplexSpectrum<T> {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        let shape = Shape::new(n, c, h, half_width(w));
        ComplexSpectrum {
            shape,
            re: vec![T::zero(); shape.numel()],
            im: vec![T::zero(); shape.numel()],
            origin: (h, w),
        }
    }

    pub fn get(&self, idx: [usize; 4]) -> Complex64 {
        let [_, c, h, w] = self.shape.0;
        let k = ((idx[0] * c + idx[1]) * h + idx[2]) * w + idx[3];
        Complex64::new(self.re[k].as_f64(), self.im[k].as_f64())
    }

    /// Stacks real and imaginary parts along channels: `(n, 2c, h, w/2+1)`.
    pub fn to_stacked(&self) -> Tensor<T> {
        stack(self.shape, &self.re, &self.im)
    }

    pub fn from_stacked(t: &Tensor<T>, origin_w: usize) -> Result<Self> {
        let [n, c2, h, wh] = t.shape().0;
        if c2 % 2 != 0 || wh != half_width(origin_w) {
            return Err(Error::dim(format!(
                "stacked spectrum {} inconsistent with width {origin_w}",
                t.shape()
            )));
        }
        let shape = Shape::new(n, c2 / 2, h, wh);
        let (re, im) = unstack(t);
        Ok(ComplexSpectrum {
            shape,
            re,
            im,
            origin: (h, origin_w),
        })
    }
}

fn stack<T: Float>(shape: Shape, re: &[T], im: &[T]) -> Tensor<T> {
    let [n, c, h, wh] = shape.0;
    let p = c * h * wh;
    let mut data = Vec::with_capacity(2 * shape.numel());
    for b in 0..n {
        data.extend_from_slice(&re[b * p..(b + 1) * p]);
        data.extend_from_slice(&im[b * p..(b + 1) * p]);
    }
    Tensor::from_vec(Shape::new(n, 2 * c, h, wh), data).unwrap()
}

fn unstack<T: Float>(t: &Tensor<T>) -> (Vec<T>, Vec<T>) {
    let [n, c2, h, wh] = t.shape().0;
    let p = c2 / 2 * h * wh;
    let (mut re, mut im) = (Vec::with_capacity(n * p), Vec::with_capacity(n * p));
    for b in 0..n {
        let base = b * 2 * p;
        re.extend_from_slice(&t.data()[base..base + p]);
        im.extend_from_slice(&t.data()[base + p..base + 2 * p]);
    }
    (re, im)
}

/// Unnormalized forward real 2D FFT of every `(h, w)` plane.
pub fn rfft2<T: Float>(x: &Tensor<T>) -> ComplexSpectrum<T> {
    let [n, c, h, w] = x.shape().0;
    let mut out = ComplexSpectrum::zeros(n, c, h, w);
    if h == 0 || w == 0 {
        return out;
    }
    let plans = Plans2d::new(h, w);
    let hp = h * half_width(w);
    for (pi, plane) in x.data().chunks(h * w).enumerate() {
        let half = plans.rfft(|i| plane[i].as_f64());
        for (k, v) in half.iter().enumerate() {
            out.re[pi * hp + k] = T::of(v.re);
            out.im[pi * hp + k] = T::of(v.im);
        }
    }
    out
}

/// Inverse of [`rfft2`], normalized by `1 / (h * w)`.
pub fn irfft2<T: Float>(s: &ComplexSpectrum<T>) -> Result<Tensor<T>> {
    let [n, c, h, wh] = s.shape.0;
    let (oh, w) = s.origin;
    if oh != h || half_width(w) != wh || s.re.len() != s.shape.numel() || s.im.len() != s.shape.numel() {
        return Err(Error::dim(format!(
            "irfft2: spectrum {} inconsistent with origin {oh}x{w}",
            s.shape
        )));
    }
    let mut out = Tensor::zeros(Shape::new(n, c, h, w));
    if h == 0 || w == 0 {
        return Ok(out);
    }
    let plans = Plans2d::new(h, w);
    let hp = h * wh;
    for pi in 0..n * c {
        let half = (0..hp)
            .map(|k| Complex64::new(s.re[pi * hp + k].as_f64(), s.im[pi * hp + k].as_f64()))
            .collect();
        let plane = plans.irfft(half);
        for (o, v) in out.data_mut()[pi * h * w..(pi + 1) * h * w].iter_mut().zip(plane) {
            *o = T::of(v);
        }
    }
    Ok(out)
}

/// Differentiable [`rfft2`] returning the spectrum stacked as
/// `(n, 2c, h, w/2+1)`: real parts in the first `c` channels, imaginary parts
/// in the last `c`.
pub fn rfft2_stacked<'t, T: Float>(x: &Var<'t, T>) -> Result<Var<'t, T>> {
    let [_, _, h, w] = x.shape().0;
    if h == 0 || w == 0 {
        return Err(Error::dim(format!("rfft2: empty spatial size {}", x.shape())));
    }
    let spec = rfft2(x.value());
    x.tape().record(
        "rfft2",
        spec.to_stacked(),
        &[x],
        Box::new(move |g, _| {
            // adjoint: dx = Re(sum over half plane of G exp(+i theta))
            let mut s = ComplexSpectrum::from_stacked(g, w).unwrap();
            let wh = half_width(w);
            let hw = (h * w) as f64;
            for (k, (re, im)) in s.re.iter_mut().zip(s.im.iter_mut()).enumerate() {
                let f = T::of(hw / column_weight(k % wh, w));
                *re *= f;
                *im *= f;
            }
            vec![Some(irfft2(&s).unwrap())]
        }),
    )
}

/// Differentiable [`irfft2`] of a stacked spectrum (see [`rfft2_stacked`]).
pub fn irfft2_stacked<'t, T: Float>(s: &Var<'t, T>, w: usize) -> Result<Var<'t, T>> {
    let spec = ComplexSpectrum::from_stacked(s.value(), w)?;
    let h = spec.origin.0;
    let value = irfft2(&spec)?;
    s.tape().record(
        "irfft2",
        value,
        &[s],
        Box::new(move |g, _| {
            let mut spec = rfft2(g);
            let wh = half_width(w);
            let hw = (h * w) as f64;
            for (k, (re, im)) in spec.re.iter_mut().zip(spec.im.iter_mut()).enumerate() {
                let f = T::of(column_weight(k % wh, w) / hw);
                *re *= f;
                *im *= f;
            }
            vec![Some(spec.to_stacked())]
        }),
    )
}

/// Elementwise complex modulus of a stacked spectrum, `(n, 2c, ..) -> (n, c, ..)`.
/// The subgradient at a zero modulus is zero.
pub fn complex_abs<'t, T: Float>(s: &Var<'t, T>) -> Result<Var<'t, T>> {
    let st = s.shape();
    if st.c() % 2 != 0 {
        return Err(Error::dim(format!("complex_abs: odd channel count in {st}")));
    }
    let (re, im) = unstack(s.value());
    let modulus: Vec<T> = re.iter().zip(&im).map(|(&a, &b)| a.hypot(b)).collect();
    let out_shape = Shape::new(st.n(), st.c() / 2, st.h(), st.w());
    let (re, im, m) = (Rc::new(re), Rc::new(im), Rc::new(modulus.clone()));
    s.tape().record(
        "complex_abs",
        Tensor::from_vec(out_shape, modulus)?,
        &[s],
        Box::new(move |g, _| {
            let mut gre = vec![T::zero(); re.len()];
            let mut gim = vec![T::zero(); im.len()];
            for i in 0..re.len() {
                if m[i] > T::zero() {
                    gre[i] = g.data()[i] * re[i] / m[i];
                    gim[i] = g.data()[i] * im[i] / m[i];
                }
            }
            vec![Some(stack(out_shape, &gre, &gim))]
        }),
    )
}

/// Full-plane amplitude `|F(x)|` of one plane, row-major `(h, w)`, obtained
/// from the half plane through Hermitian symmetry.
pub fn full_amplitude(plane: &[f64], h: usize, w: usize) -> Vec<f64> {
    let plans = Plans2d::new(h, w);
    let half = plans.rfft(|i| plane[i]);
    let wh = half_width(w);
    let mut out = vec![0.0; h * w];
    for k in 0..h {
        for l in 0..w {
            out[k * w + l] = if l < wh {
                half[k * wh + l].norm()
            } else {
                half[((h - k) % h) * wh + (w - l)].norm()
            };
        }
    }
    out
}

/// BT.601 luma weights normalized to sum to one.
pub(crate) const LUMA: [f64; 3] = [65.481 / 219.0, 128.553 / 219.0, 24.966 / 219.0];

/// Log-amplitude spectrum `log(1 + |F(x)|)` of a single image, optionally
/// center-shifted, min-max normalized to `[0, 1]`. Three-channel input is
/// first converted to luminance. Output is `(1, 1, h, w)`.
pub fn spectrum_image<T: Float>(x: &Tensor<T>, shift: bool) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.shape().0;
    if n != 1 || !(c == 1 || c == 3) || h == 0 || w == 0 {
        return Err(Error::dim(format!(
            "spectrum_image: expected a single 1- or 3-channel image, got {}",
            x.shape()
        )));
    }
    let gray: Vec<f64> = if c == 3 {
        (0..h * w)
            .map(|i| (0..3).map(|ch| LUMA[ch] * x.data()[ch * h * w + i].as_f64()).sum())
            .collect()
    } else {
        x.data().iter().map(|v| v.as_f64()).collect()
    };
    let amp = full_amplitude(&gray, h, w);
    let mut out = vec![0.0; h * w];
    for k in 0..h {
        for l in 0..w {
            let (y, xx) = if shift {
                ((k + h / 2) % h, (l + w / 2) % w)
            } else {
                (k, l)
            };
            out[y * w + xx] = amp[k * w + l].ln_1p();
        }
    }
    let lo = out.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let data = out
        .iter()
        .map(|&v| T::of(if span > 0.0 { (v - lo) / span } else { 0.0 }))
        .collect();
    Tensor::from_vec(Shape::new(1, 1, h, w), data)
}

/// Energy (`|F|^2`) histogram over the orientation of the frequency vector,
/// in `bins` equal bins covering `[0, 180)` degrees. The angle is measured
/// from the horizontal frequency axis toward increasing row frequency, with
/// frequencies in cycles per pixel. Bins closer to DC than `min_radius` or
/// beyond the Nyquist circle (`0.5`) are ignored.
pub fn orientation_histogram(amplitude: &[f64], h: usize, w: usize, bins: usize, min_radius: f64) -> Vec<f64> {
    let mut hist = vec![0.0; bins];
    let signed = |i: usize, n: usize| -> f64 {
        if i <= n / 2 {
            i as f64
        } else {
            i as f64 - n as f64
        }
    };
    for k in 0..h {
        let fy = signed(k, h) / h as f64;
        for l in 0..w {
            let fx = signed(l, w) / w as f64;
            let r = fx.hypot(fy);
            if r < min_radius || r > 0.5 {
                continue;
            }
            let deg = fy.atan2(fx).to_degrees().rem_euclid(180.0);
            let b = ((deg / 180.0 * bins as f64) as usize).min(bins - 1);
            let a = amplitude[k * w + l];
            hist[b] += a * a;
        }
    }
    hist
}

/// Center (degrees) of the histogram bin with the most energy after a
/// circular moving average over `2 * radius + 1` bins.
pub fn dominant_orientation(hist: &[f64], radius: usize) -> f64 {
    let n = hist.len();
    let smoothed: Vec<f64> = (0..n)
        .map(|i| {
            (0..=2 * radius)
                .map(|d| hist[(i + n + d - radius) % n])
                .sum()
        })
        .collect();
    let best = smoothed
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    (best as f64 + 0.5) * 180.0 / n as f64
}

/// Distance between two orientations on the half circle, in degrees.
pub fn orientation_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(180.0);
    d.min(180.0 - d)
}
