use crate::error::Result;
use crate::tensor::{Float, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Silu,
    /// Exact erf form.
    Gelu,
    Sigmoid,
    Relu,
    Softplus,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Silu => "silu",
            Activation::Gelu => "gelu",
            Activation::Sigmoid => "sigmoid",
            Activation::Relu => "relu",
            Activation::Softplus => "softplus",
        }
    }

    #[inline]
    pub fn apply<T: Float>(self, x: T) -> T {
        match self {
            Activation::Silu => x * sigmoid_scalar(x),
            Activation::Gelu => {
                let v = x.as_f64();
                T::of(0.5 * v * (1.0 + libm::erf(v * std::f64::consts::FRAC_1_SQRT_2)))
            }
            Activation::Sigmoid => sigmoid_scalar(x),
            Activation::Relu => x.max(T::zero()),
            Activation::Softplus => softplus_scalar(x),
        }
    }

    #[inline]
    pub fn derivative<T: Float>(self, x: T) -> T {
        match self {
            Activation::Silu => {
                let s = sigmoid_scalar(x);
                s * (T::one() + x * (T::one() - s))
            }
            Activation::Gelu => {
                let v = x.as_f64();
                let cdf = 0.5 * (1.0 + libm::erf(v * std::f64::consts::FRAC_1_SQRT_2));
                let pdf = (-0.5 * v * v).exp() / (2.0 * std::f64::consts::PI).sqrt();
                T::of(cdf + v * pdf)
            }
            Activation::Sigmoid => {
                let s = sigmoid_scalar(x);
                s * (T::one() - s)
            }
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Softplus => sigmoid_scalar(x),
        }
    }
}

#[inline]
pub(crate) fn sigmoid_scalar<T: Float>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub(crate) fn softplus_scalar<T: Float>(x: T) -> T {
    // log(1 + e^x) = max(x, 0) + log1p(e^-|x|)
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

pub fn activation<'t, T: Float>(x: &Var<'t, T>, kind: Activation) -> Result<Var<'t, T>> {
    let xr = x.value_rc();
    x.tape().record(
        kind.name(),
        x.value().map(|v| kind.apply(v)),
        &[x],
        Box::new(move |g, _| {
            let data = g
                .data()
                .iter()
                .zip(xr.data())
                .map(|(&g, &v)| g * kind.derivative(v))
                .collect();
            vec![Some(Tensor::from_vec(g.shape(), data).unwrap())]
        }),
    )
}

pub fn silu<'t, T: Float>(x: &Var<'t, T>) -> Result<Var<'t, T>> {
    activation(x, Activation::Silu)
}

pub fn gelu<'t, T: Float>(x: &Var<'t, T>) -> Result<Var<'t, T>> {
    activation(x, Activation::Gelu)
}

pub fn sigmoid<'t, T: Float>(x: &Var<'t, T>) -> Result<Var<'t, T>> {
    activation(x, Activation::Sigmoid)
}

pub fn relu<'t, T: Float>(x: &Var<'t, T>) -> Result<Var<'t, T>> {
    activation(x, Activation::Relu)
}

pub fn softplus<'t, T: Float>(x: &Var<'t, T>) -> Result<Var<'t, T>> {
    activation(x, Activation::Softplus)
}
