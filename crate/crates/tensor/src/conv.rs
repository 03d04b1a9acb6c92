//! Same-padded 2D cross-correlation over `C×H×W` inputs.

use crate::{Result, Tensor, TensorError};

fn check_shapes(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<(usize, usize, usize, usize, usize)> {
    let (c, h, w) = input.chw("conv2d")?;
    let &[f, kc, kh, kw] = kernels.shape() else {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d kernels",
            expected: vec![0, c, 0, 0],
            actual: kernels.shape().to_vec(),
        });
    };
    if kc != c || kh != kw || kh % 2 == 0 {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d kernels",
            expected: vec![f, c, kh, kh | 1],
            actual: kernels.shape().to_vec(),
        });
    }
    if bias.shape() != [f] {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d bias",
            expected: vec![f],
            actual: bias.shape().to_vec(),
        });
    }
    Ok((f, c, h, w, kh))
}

/// Overlapping column range for a horizontal kernel offset `d`.
#[inline]
fn span(len: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (len as isize - d).min(len as isize).max(0) as usize;
    (lo, hi.max(lo))
}

/// `out[f,y,x] = bias[f] + Σ_{c,i,j} k[f,c,i,j] · in[c, y+i-p, x+j-p]`
/// with zero padding `p = k/2`; output spatial size equals the input's.
pub fn conv2d_forward(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (f_n, c_n, h, w, k) = check_shapes(input, kernels, bias)?;
    let p = (k / 2) as isize;
    let plane = h * w;
    let x = input.data();
    let kd = kernels.data();
    let mut out = vec![0.0; f_n * plane];
    for f in 0..f_n {
        let out_f = &mut out[f * plane..(f + 1) * plane];
        out_f.fill(bias.data()[f]);
        for c in 0..c_n {
            let in_c = &x[c * plane..(c + 1) * plane];
            for i in 0..k {
                let dy = i as isize - p;
                let (y0, y1) = span(h, dy);
                for j in 0..k {
                    let dx = j as isize - p;
                    let wgt = kd[((f * c_n + c) * k + i) * k + j];
                    if wgt == 0.0 {
                        continue;
                    }
                    let (x0, x1) = span(w, dx);
                    for y in y0..y1 {
                        let src_row = (y as isize + dy) as usize * w;
                        let src = &in_c[(src_row as isize + x0 as isize + dx) as usize
                            ..(src_row as isize + x1 as isize + dx) as usize];
                        let dst = &mut out_f[y * w + x0..y * w + x1];
                        for (o, s) in dst.iter_mut().zip(src) {
                            *o += wgt * s;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[f_n, h, w], out)
}

/// Gradients of [`conv2d_forward`] with respect to input, kernels and bias.
pub fn conv2d_backward(
    input: &Tensor,
    kernels: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let f_n = kernels.shape().first().copied().unwrap_or(0);
    let (f_n, c_n, h, w, k) = check_shapes(input, kernels, &Tensor::zeros(&[f_n.max(1)]))?;
    if grad_out.shape() != [f_n, h, w] {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d_backward",
            expected: vec![f_n, h, w],
            actual: grad_out.shape().to_vec(),
        });
    }
    let p = (k / 2) as isize;
    let plane = h * w;
    let x = input.data();
    let kd = kernels.data();
    let g = grad_out.data();
    let mut grad_in = vec![0.0; c_n * plane];
    let mut grad_k = vec![0.0; kernels.len()];
    let grad_b: Vec<f64> = (0..f_n).map(|f| g[f * plane..(f + 1) * plane].iter().sum()).collect();
    for f in 0..f_n {
        let g_f = &g[f * plane..(f + 1) * plane];
        for c in 0..c_n {
            let in_c = &x[c * plane..(c + 1) * plane];
            let gin_c = &mut grad_in[c * plane..(c + 1) * plane];
            for i in 0..k {
                let dy = i as isize - p;
                let (y0, y1) = span(h, dy);
                for j in 0..k {
                    let dx = j as isize - p;
                    let widx = ((f * c_n + c) * k + i) * k + j;
                    let wgt = kd[widx];
                    let (x0, x1) = span(w, dx);
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let src_off = ((y as isize + dy) as usize * w) as isize + dx;
                        let lo = (src_off + x0 as isize) as usize;
                        let hi = (src_off + x1 as isize) as usize;
                        let go = &g_f[y * w + x0..y * w + x1];
                        acc += go.iter().zip(&in_c[lo..hi]).map(|(a, b)| a * b).sum::<f64>();
                        for (gi, gv) in gin_c[lo..hi].iter_mut().zip(go) {
                            *gi += wgt * gv;
                        }
                    }
                    grad_k[widx] += acc;
                }
            }
        }
    }
    Ok((
        Tensor::new(&[c_n, h, w], grad_in)?,
        Tensor::new(kernels.shape(), grad_k)?,
        Tensor::new(&[f_n], grad_b)?,
    ))
}
