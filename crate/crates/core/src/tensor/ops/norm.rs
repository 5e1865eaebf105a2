use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor, Var};

pub const LN_EPS: f64 = 1e-6;

/// Layer normalization across the channel axis at every `(n, y, x)` location,
/// using the biased (1/C) variance estimate.
pub fn layer_norm<'t, T: Float>(
    x: &Var<'t, T>,
    gamma: &Var<'t, T>,
    beta: &Var<'t, T>,
    eps: f64,
) -> Result<Var<'t, T>> {
    let s = x.shape();
    let (n, c, p) = (s.n(), s.c(), s.plane());
    if c == 0 {
        return Err(Error::dim("layer_norm: zero channels"));
    }
    if gamma.shape().numel() != c || beta.shape().numel() != c {
        return Err(Error::dim(format!(
            "layer_norm: affine parameters {} / {} do not match {c} channels",
            gamma.shape(),
            beta.shape()
        )));
    }
    let eps = T::of(eps);
    let inv_c = T::one() / T::from_usize(c).unwrap();
    let xd = x.value().data();
    let (gd, bd) = (gamma.value().data(), beta.value().data());

    let mut xhat = vec![T::zero(); s.numel()];
    let mut rstd = vec![T::zero(); n * p];
    let mut out = vec![T::zero(); s.numel()];
    for b in 0..n {
        let base = b * c * p;
        let mut mean = vec![T::zero(); p];
        for ch in 0..c {
            let plane = &xd[base + ch * p..base + (ch + 1) * p];
            mean.iter_mut().zip(plane).for_each(|(m, &v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m *= inv_c);
        let mut var = vec![T::zero(); p];
        for ch in 0..c {
            let plane = &xd[base + ch * p..base + (ch + 1) * p];
            for ((v, &xv), &m) in var.iter_mut().zip(plane).zip(&mean) {
                let d = xv - m;
                *v += d * d;
            }
        }
        let r = &mut rstd[b * p..(b + 1) * p];
        for (rv, &v) in r.iter_mut().zip(&var) {
            *rv = T::one() / (v * inv_c + eps).sqrt();
        }
        for ch in 0..c {
            let range = base + ch * p..base + (ch + 1) * p;
            let (g, bt) = (gd[ch], bd[ch]);
            for (((xh, o), &xv), (&m, &rv)) in xhat[range.clone()]
                .iter_mut()
                .zip(&mut out[range.clone()])
                .zip(&xd[range])
                .zip(mean.iter().zip(r.iter()))
            {
                *xh = (xv - m) * rv;
                *o = *xh * g + bt;
            }
        }
    }

    let (gs, bs) = (gamma.shape(), beta.shape());
    let gr = gamma.value_rc();
    x.tape().record(
        "layer_norm",
        Tensor::from_vec(s, out)?,
        &[x, gamma, beta],
        Box::new(move |g, need| {
            let gdat = g.data();
            let gam = gr.data();
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            for b in 0..n {
                for ch in 0..c {
                    let range = (b * c + ch) * p..(b * c + ch + 1) * p;
                    dgamma[ch] += gdat[range.clone()]
                        .iter()
                        .zip(&xhat[range.clone()])
                        .fold(T::zero(), |a, (&gv, &xh)| a + gv * xh);
                    dbeta[ch] += gdat[range].iter().copied().sum::<T>();
                }
            }
            let dx = need[0].then(|| {
                let mut dx = vec![T::zero(); s.numel()];
                for b in 0..n {
                    let base = b * c * p;
                    let mut m1 = vec![T::zero(); p];
                    let mut m2 = vec![T::zero(); p];
                    for ch in 0..c {
                        let range = base + ch * p..base + (ch + 1) * p;
                        for ((a1, a2), (&gv, &xh)) in m1
                            .iter_mut()
                            .zip(m2.iter_mut())
                            .zip(gdat[range.clone()].iter().zip(&xhat[range]))
                        {
                            let d = gv * gam[ch];
                            *a1 += d;
                            *a2 += d * xh;
                        }
                    }
                    let r = &rstd[b * p..(b + 1) * p];
                    for ch in 0..c {
                        let range = base + ch * p..base + (ch + 1) * p;
                        for (i, ((dv, &gv), &xh)) in dx[range.clone()]
                            .iter_mut()
                            .zip(&gdat[range.clone()])
                            .zip(&xhat[range])
                            .enumerate()
                        {
                            let d = gv * gam[ch];
                            *dv = r[i] * (d - m1[i] * inv_c - xh * m2[i] * inv_c);
                        }
                    }
                }
                Tensor::from_vec(s, dx).unwrap()
            });
            vec![
                dx,
                need[1].then(|| Tensor::from_vec(gs, dgamma).unwrap()),
                need[2].then(|| Tensor::from_vec(bs, dbeta).unwrap()),
            ]
        }),
    )
}
