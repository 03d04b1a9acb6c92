//! Fully-connected affine maps `y = W·x + b` with `W` stored `out×in`.

use crate::{Result, Tensor, TensorError};

fn dims(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<(usize, usize)> {
    let &[out, inp] = weights.shape() else {
        return Err(TensorError::ShapeMismatch {
            op: "dense weights",
            expected: vec![0, input.len()],
            actual: weights.shape().to_vec(),
        });
    };
    if inp != input.len() {
        return Err(TensorError::ShapeMismatch {
            op: "dense",
            expected: vec![out, input.len()],
            actual: weights.shape().to_vec(),
        });
    }
    if bias.shape() != [out] {
        return Err(TensorError::ShapeMismatch {
            op: "dense bias",
            expected: vec![out],
            actual: bias.shape().to_vec(),
        });
    }
    Ok((out, inp))
}

/// Treats `input` as a flat vector regardless of its shape.
pub fn dense_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (out, inp) = dims(input, weights, bias)?;
    let x = input.data();
    let data = weights
        .data()
        .chunks_exact(inp)
        .zip(bias.data())
        .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
        .collect();
    Tensor::new(&[out], data)
}

/// Returns `(grad_input, grad_weights, grad_bias)`; `grad_input` keeps the
/// input's shape.
pub fn dense_backward(input: &Tensor, weights: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let out = weights.shape().first().copied().unwrap_or(0);
    let (out, inp) = dims(input, weights, &Tensor::zeros(&[out.max(1)]))?;
    if grad_out.len() != out {
        return Err(TensorError::ShapeMismatch {
            op: "dense_backward",
            expected: vec![out],
            actual: grad_out.shape().to_vec(),
        });
    }
    let x = input.data();
    let g = grad_out.data();
    let mut grad_in = vec![0.0; inp];
    let mut grad_w = vec![0.0; out * inp];
    for ((row, grow), &go) in weights
        .data()
        .chunks_exact(inp)
        .zip(grad_w.chunks_exact_mut(inp))
        .zip(g)
    {
        for ((gi, gw), (&w, &xv)) in grad_in.iter_mut().zip(grow.iter_mut()).zip(row.iter().zip(x)) {
            *gi += w * go;
            *gw = go * xv;
        }
    }
    Ok((
        Tensor::new(input.shape(), grad_in)?,
        Tensor::new(&[out, inp], grad_w)?,
        Tensor::new(&[out], g.to_vec())?,
    ))
}
