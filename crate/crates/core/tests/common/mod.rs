//! Reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use dfssm::metrics::{gaussian_window, SSIM_K1, SSIM_K2};
use dfssm::ssm::{ScanDirection, ScanParams};
use dfssm::{Float, ParamStore, Shape, Tensor};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random<T: Float>(shape: Shape, seed: u64, scale: f64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_vec(
        shape,
        (0..shape.numel()).map(|_| T::of(scale * rng.random_range(-1.0..1.0))).collect(),
    )
    .unwrap()
}

pub struct ScanCase {
    pub x: Tensor<f64>,
    pub logit: Tensor<f64>,
    pub bias: Tensor<f64>,
    pub a_log: Tensor<f64>,
    pub b: Tensor<f64>,
    pub c: Tensor<f64>,
    pub d: Tensor<f64>,
}

impl ScanCase {
    pub fn random(n: usize, d: usize, s: usize, l: usize, seed: u64) -> Self {
        ScanCase {
            x: random(Shape::new(n, d, 1, l), seed, 1.0),
            logit: random(Shape::new(n, d, 1, l), seed + 1, 1.0),
            bias: random(Shape::new(1, d, 1, 1), seed + 2, 1.0),
            a_log: random(Shape::new(d, s, 1, 1), seed + 3, 1.0),
            b: random(Shape::new(n, s, 1, l), seed + 4, 1.0),
            c: random(Shape::new(n, s, 1, l), seed + 5, 1.0),
            d: random(Shape::new(1, d, 1, 1), seed + 6, 1.0),
        }
    }

    pub fn inputs(&self) -> Vec<Tensor<f64>> {
        vec![
            self.x.clone(),
            self.logit.clone(),
            self.bias.clone(),
            self.a_log.clone(),
            self.b.clone(),
            self.c.clone(),
            self.d.clone(),
        ]
    }
}

/// Step-by-step evaluation of the recurrence for one sequence.
#[allow(clippy::too_many_arguments)]
pub fn recurrence(
    x: &[f64],
    logit: &[f64],
    bias: f64,
    a_log: &[f64],
    b: &[Vec<f64>],
    c: &[Vec<f64>],
    d: f64,
) -> Vec<f64> {
    let s = a_log.len();
    let mut h = vec![0.0; s];
    let mut y = Vec::with_capacity(x.len());
    for t in 0..x.len() {
        let z: f64 = logit[t] + bias;
        let delta = (1.0 + z.exp()).ln();
        let mut out = d * x[t];
        for k in 0..s {
            let a = -a_log[k].exp();
            h[k] = (delta * a).exp() * h[k] + delta * b[t][k] * x[t];
            out += c[t][k] * h[k];
        }
        y.push(out);
    }
    y
}

pub fn oracle_scan(case: &ScanCase) -> Vec<f64> {
    let [n, dd, _, l] = case.x.shape().0;
    let s = case.a_log.shape().c();
    let mut out = vec![0.0; n * dd * l];
    for b in 0..n {
        let bm: Vec<Vec<f64>> = (0..l).map(|t| (0..s).map(|k| case.b.at([b, k, 0, t])).collect()).collect();
        let cm: Vec<Vec<f64>> = (0..l).map(|t| (0..s).map(|k| case.c.at([b, k, 0, t])).collect()).collect();
        for d in 0..dd {
            let x: Vec<f64> = (0..l).map(|t| case.x.at([b, d, 0, t])).collect();
            let lg: Vec<f64> = (0..l).map(|t| case.logit.at([b, d, 0, t])).collect();
            let al: Vec<f64> = (0..s).map(|k| case.a_log.at([d, k, 0, 0])).collect();
            let y = recurrence(&x, &lg, case.bias.data()[d], &al, &bm, &cm, case.d.data()[d]);
            out[(b * dd + d) * l..(b * dd + d + 1) * l].copy_from_slice(&y);
        }
    }
    out
}

pub fn scan_store(d: usize, s: usize, r: usize, seed: u64) -> (ParamStore<f64>, [ScanParams; 4]) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let dirs: Vec<ScanParams> = ScanDirection::ALL
        .iter()
        .map(|dir| ScanParams::new(&mut store, dir.name(), d, s, r, &mut rng).unwrap())
        .collect();
    // perturb the structured initial values so every parameter matters
    for p in store.iter_mut() {
        let noise = random::<f64>(p.tensor.shape(), seed + p.name.len() as u64, 0.3);
        for (v, e) in p.tensor.data_mut().iter_mut().zip(noise.data()) {
            *v += e;
        }
    }
    (store, dirs.try_into().unwrap())
}

/// ss2d evaluated by explicit pixel bookkeeping and the recurrence oracle.
pub fn oracle_ss2d(x: &Tensor<f64>, store: &ParamStore<f64>, dirs: &[ScanParams; 4]) -> Vec<f64> {
    let [n, dd, h, w] = x.shape().0;
    let l = h * w;
    let mut out = vec![0.0; x.numel()];
    for (di, p) in dirs.iter().enumerate() {
        let (r, s) = (p.rank, p.state);
        let xp = &store.get(p.x_proj).tensor;
        let dtp = &store.get(p.dt_proj).tensor;
        let bias = &store.get(p.dt_bias).tensor;
        let alog = &store.get(p.a_log).tensor;
        let dsk = &store.get(p.d_skip).tensor;
        let pixel = |t: usize| -> (usize, usize) {
            match di {
                0 => (t / w, t % w),
                1 => ((l - 1 - t) / w, (l - 1 - t) % w),
                2 => (t % h, t / h),
                _ => ((l - 1 - t) % h, (l - 1 - t) / h),
            }
        };
        for b in 0..n {
            let seq: Vec<Vec<f64>> = (0..l)
                .map(|t| {
                    let (y, xx) = pixel(t);
                    (0..dd).map(|d| x.at([b, d, y, xx])).collect()
                })
                .collect();
            let proj: Vec<Vec<f64>> = seq
                .iter()
                .map(|v| (0..r + 2 * s).map(|o| (0..dd).map(|d| xp.at([o, d, 0, 0]) * v[d]).sum()).collect())
                .collect();
            let bm: Vec<Vec<f64>> = proj.iter().map(|p| p[r..r + s].to_vec()).collect();
            let cm: Vec<Vec<f64>> = proj.iter().map(|p| p[r + s..].to_vec()).collect();
            for d in 0..dd {
                let xs: Vec<f64> = seq.iter().map(|v| v[d]).collect();
                let lg: Vec<f64> = proj
                    .iter()
                    .map(|p| (0..r).map(|j| dtp.at([d, j, 0, 0]) * p[j]).sum())
                    .collect();
                let al: Vec<f64> = (0..s).map(|k| alog.at([d, k, 0, 0])).collect();
                let ys = recurrence(&xs, &lg, bias.data()[d], &al, &bm, &cm, dsk.data()[d]);
                for (t, yv) in ys.into_iter().enumerate() {
                    let (y, xx) = pixel(t);
                    out[((b * dd + d) * h + y) * w + xx] += yv;
                }
            }
        }
    }
    out
}

/// Direct O((hw)^2) evaluation of the half-plane spectrum of one plane.
pub fn naive_rfft2(plane: &[f64], h: usize, w: usize) -> Vec<Complex64> {
    let wh = w / 2 + 1;
    let mut out = vec![Complex64::new(0.0, 0.0); h * wh];
    for k in 0..h {
        for l in 0..wh {
            let mut acc = Complex64::new(0.0, 0.0);
            for y in 0..h {
                for x in 0..w {
                    let theta = -2.0 * PI * ((k * y) as f64 / h as f64 + (l * x) as f64 / w as f64);
                    acc += plane[y * w + x] * Complex64::from_polar(1.0, theta);
                }
            }
            out[k * wh + l] = acc;
        }
    }
    out
}

/// Direct windowed SSIM: every 11x11 window position, with 2D weights and the
/// local statistics summed from scratch.
pub fn naive_ssim(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let g = gaussian_window();
    let c1 = (SSIM_K1 * 255.0f64).powi(2);
    let c2 = (SSIM_K2 * 255.0f64).powi(2);
    let mut total = 0.0;
    let mut count = 0;
    for y0 in 0..=h - 11 {
        for x0 in 0..=w - 11 {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let k = g[i] * g[j];
                    let (p, q) = (a[(y0 + i) * w + x0 + j], b[(y0 + i) * w + x0 + j]);
                    ma += k * p;
                    mb += k * q;
                    saa += k * p * p;
                    sbb += k * q * q;
                    sab += k * p * q;
                }
            }
            let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            total += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    total / count as f64
}

/// Mean over the half plane of `|sum_{y,x} d[y,x] exp(-2 pi i (uy/h + vx/w))|`.
pub fn naive_freq_loss(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let [n, c, h, w] = a.shape().0;
    let wh = w / 2 + 1;
    let mut total = 0.0;
    for s in 0..n {
        for ch in 0..c {
            for u in 0..h {
                for v in 0..wh {
                    let (mut re, mut im) = (0.0, 0.0);
                    for y in 0..h {
                        for x in 0..w {
                            let d = a.at([s, ch, y, x]) - b.at([s, ch, y, x]);
                            let ph = -2.0 * std::f64::consts::PI * ((u * y) as f64 / h as f64 + (v * x) as f64 / w as f64);
                            re += d * ph.cos();
                            im += d * ph.sin();
                        }
                    }
                    total += re.hypot(im);
                }
            }
        }
    }
    total / (n * c * h * wh) as f64
}

/// Parameter inventory, written out layer by layer.
pub mod inventory {
    pub fn conv(cin: usize, cout: usize, k: usize) -> usize {
        cin * cout * k * k + cout
    }
    pub fn ln(c: usize) -> usize {
        2 * c
    }
    pub fn vssm(c: usize, n: usize) -> usize {
        let d = 2 * c;
        let r = c.div_ceil(16);
        let per_direction = (r + 2 * n) * d + d * r + d + d * n + d;
        conv(c, 2 * d, 1) + (9 * d + d) + 4 * per_direction + ln(d) + conv(d, c, 1)
    }
    pub fn ssb(c: usize, n: usize) -> usize {
        ln(c) + vssm(c, n) + c
    }
    pub fn fftm(c: usize) -> usize {
        conv(c, c / 2, 1) + conv(c, c, 1) + conv(c / 2, c, 1)
    }
    pub fn channel_attention(c: usize) -> usize {
        let m = (c / c.min(16)).max(1);
        conv(c, m, 1) + conv(m, c, 1)
    }
    pub fn mgcb(c: usize, gamma: usize) -> usize {
        let g = gamma * c;
        ln(c) + conv(c, g, 1) + (9 * g + g) + 2 * conv(c, g / 2, 1) + (9 * g / 2 + g / 2) + (25 * g / 2 + g / 2)
            + conv(g, c, 1)
            + channel_attention(c)
            + c
    }
    pub fn stage(c: usize, n: usize, ns: usize, nf: usize) -> usize {
        ns * (ssb(c, n) + mgcb(c, 2)) + nf * (ssb(c, n) + fftm(c) + mgcb(c, 2))
    }
    pub fn four_level_total(c: usize, n: usize, ns: usize, nf: usize) -> usize {
        let st = |w| stage(w, n, ns, nf);
        let embed = conv(3, c, 3);
        let encoders = st(c) + st(2 * c) + st(4 * c) + st(8 * c);
        let downs = conv(4 * c, 2 * c, 1) + conv(8 * c, 4 * c, 1) + conv(16 * c, 8 * c, 1);
        let ups = conv(8 * c, 16 * c, 1) + conv(4 * c, 8 * c, 1) + conv(2 * c, 4 * c, 1);
        let reduces = conv(8 * c, 4 * c, 1) + conv(4 * c, 2 * c, 1);
        let decoders = st(4 * c) + st(2 * c) + st(2 * c);
        let refine = st(2 * c);
        let head = conv(2 * c, 3, 3);
        embed + encoders + downs + ups + reduces + decoders + refine + head
    }
}
