//! Differentiates a small convolution-plus-activation graph and compares the
//! gradient with central differences.

use dfssm::gradcheck::{self, Options};
use dfssm::tensor::ops::{self, Activation, Padding};
use dfssm::{Shape, Tape, Tensor};

fn main() -> dfssm::Result<()> {
    let x0 = Tensor::<f64>::from_fn(Shape::new(1, 2, 5, 5), |[_, c, y, x]| ((c + 2 * y + 3 * x) as f64).sin());
    let w0 = Tensor::<f64>::from_fn(Shape::new(3, 2, 3, 3), |[o, i, y, x]| 0.1 * (o + i) as f64 - 0.05 * (y * x) as f64);

    let tape = Tape::new();
    let x = tape.leaf(x0.clone(), true);
    let w = tape.leaf(w0.clone(), true);
    let y = ops::conv2d(&x, &w, None, 1, Padding::Reflect(1))?;
    let loss = ops::mean(&ops::activation(&y, Activation::Silu)?)?;
    let grads = tape.backward(&loss)?;
    println!("loss {:.6}, {} tape nodes", loss.value().at([0, 0, 0, 0]), tape.len());
    println!("|dL/dx| max {:.4e}", grads.wrt(&x).data().iter().fold(0.0f64, |m, v| m.max(v.abs())));

    let report = gradcheck::check_inputs(
        &[x0, w0],
        |_, v| {
            let y = ops::conv2d(&v[0], &v[1], None, 1, Padding::Reflect(1))?;
            ops::mean(&ops::activation(&y, Activation::Silu)?)
        },
        &Options::for_precision::<f64>(),
    )?;
    println!("relative error vs central differences: {:.3e}", report.worst());
    Ok(())
}
