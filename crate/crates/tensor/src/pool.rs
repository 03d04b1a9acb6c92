//! 2×2 max-pooling with argmax memory and 2×2 unpooling.

use crate::{Result, Tensor, TensorError};

/// For every pooled cell, the flat input index (within the whole `C×H×W`
/// tensor) of the element that won the max.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolIndexMap {
    pub input_shape: [usize; 3],
    pub argmax: Vec<usize>,
}

impl PoolIndexMap {
    /// Checks that every stored index lies inside its own 2×2 window.
    pub fn is_consistent(&self) -> bool {
        let [c_n, h, w] = self.input_shape;
        let (oh, ow) = (h / 2, w / 2);
        self.argmax.len() == c_n * oh * ow
            && self.argmax.iter().enumerate().all(|(o, &idx)| {
                let (c, rem) = (o / (oh * ow), o % (oh * ow));
                let (oy, ox) = (rem / ow, rem % ow);
                let (ic, irem) = (idx / (h * w), idx % (h * w));
                let (iy, ix) = (irem / w, irem % w);
                ic == c && iy / 2 == oy && ix / 2 == ox
            })
    }
}

/// Where unpooling puts each value inside its 2×2 block.
#[derive(Clone, Copy, Debug)]
pub enum UnpoolMode<'a> {
    /// Upper-left cell, zeros elsewhere.
    FixedLocation,
    /// Back to the argmax recorded by a matching max-pool.
    Indices(&'a PoolIndexMap),
}

pub fn maxpool2x2(input: &Tensor) -> Result<(Tensor, PoolIndexMap)> {
    let (c_n, h, w) = input.chw("maxpool2x2")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(TensorError::OddDimension {
            op: "maxpool2x2",
            height: h,
            width: w,
        });
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(c_n * oh * ow);
    let mut argmax = Vec::with_capacity(c_n * oh * ow);
    for c in 0..c_n {
        for oy in 0..oh {
            for ox in 0..ow {
                let base = c * h * w + 2 * oy * w + 2 * ox;
                // scan order UL, UR, LL, LR; strict > keeps the first on ties
                let mut best = base;
                for idx in [base + 1, base + w, base + w + 1] {
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok((
        Tensor::new(&[c_n, oh, ow], out)?,
        PoolIndexMap {
            input_shape: [c_n, h, w],
            argmax,
        },
    ))
}

/// Routes each pooled gradient to its argmax cell; every other input cell
/// receives zero.
pub fn maxpool2x2_backward(grad_out: &Tensor, indices: &PoolIndexMap) -> Result<Tensor> {
    let [c_n, h, w] = indices.input_shape;
    if grad_out.len() != indices.argmax.len() {
        return Err(TensorError::ShapeMismatch {
            op: "maxpool2x2_backward",
            expected: vec![c_n, h / 2, w / 2],
            actual: grad_out.shape().to_vec(),
        });
    }
    let mut grad = vec![0.0; c_n * h * w];
    for (&idx, &g) in indices.argmax.iter().zip(grad_out.data()) {
        grad[idx] += g;
    }
    Tensor::new(&[c_n, h, w], grad)
}

pub fn unpool2x2(input: &Tensor, mode: UnpoolMode<'_>) -> Result<Tensor> {
    let (c_n, h, w) = input.chw("unpool2x2")?;
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0; c_n * oh * ow];
    match mode {
        UnpoolMode::FixedLocation => {
            for c in 0..c_n {
                for y in 0..h {
                    for x in 0..w {
                        out[c * oh * ow + 2 * y * ow + 2 * x] = input.data()[(c * h + y) * w + x];
                    }
                }
            }
        }
        UnpoolMode::Indices(map) => {
            if map.input_shape != [c_n, oh, ow] {
                return Err(TensorError::ShapeMismatch {
                    op: "unpool2x2",
                    expected: map.input_shape.to_vec(),
                    actual: vec![c_n, oh, ow],
                });
            }
            for (&idx, &v) in map.argmax.iter().zip(input.data()) {
                out[idx] = v;
            }
        }
    }
    Tensor::new(&[c_n, oh, ow], out)
}

/// Gradient of [`unpool2x2`]: gathers from the cells the forward pass wrote.
pub fn unpool2x2_backward(grad_out: &Tensor, mode: UnpoolMode<'_>) -> Result<Tensor> {
    let (c_n, oh, ow) = grad_out.chw("unpool2x2_backward")?;
    if oh % 2 != 0 || ow % 2 != 0 {
        return Err(TensorError::OddDimension {
            op: "unpool2x2_backward",
            height: oh,
            width: ow,
        });
    }
    let (h, w) = (oh / 2, ow / 2);
    let g = grad_out.data();
    let data = match mode {
        UnpoolMode::FixedLocation => (0..c_n * h * w)
            .map(|i| {
                let (c, rem) = (i / (h * w), i % (h * w));
                g[c * oh * ow + 2 * (rem / w) * ow + 2 * (rem % w)]
            })
            .collect(),
        UnpoolMode::Indices(map) => map.argmax.iter().map(|&idx| g[idx]).collect(),
    };
    Tensor::new(&[c_n, h, w], data)
}
