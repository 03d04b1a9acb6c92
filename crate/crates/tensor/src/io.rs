//! The `DGNN` weight file.
//!
//! Layout (all integers 32-bit little-endian):
//!
//! ```text
//! "DGNN" | version | layer count
//! per layer: kind | rank | dims[rank]
//! parameters as f32 LE, weights then bias, layer by layer
//! ```
//!
//! Kinds: 0 conv (dims = kernel shape), 1 dense (dims = out, in), 2 relu,
//! 3 max-pool, 4 unpool, 5 reshape (dims = target shape).

use std::io::{Read, Write};

use crate::{Layer, Network, Result, Tensor, TensorError};

pub const MAGIC: &[u8; 4] = b"DGNN";
pub const VERSION: u32 = 1;

fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn write_network(w: &mut impl Write, net: &Network) -> Result<()> {
    w.write_all(MAGIC)?;
    put_u32(w, VERSION)?;
    put_u32(w, net.layers.len() as u32)?;
    for layer in &net.layers {
        let (kind, dims): (u32, &[usize]) = match layer {
            Layer::Conv2d { kernels, .. } => (0, kernels.shape()),
            Layer::Dense { weights, .. } => (1, weights.shape()),
            Layer::Relu => (2, &[]),
            Layer::MaxPool2x2 => (3, &[]),
            Layer::Unpool2x2 => (4, &[]),
            Layer::Reshape(shape) => (5, shape),
        };
        put_u32(w, kind)?;
        put_u32(w, dims.len() as u32)?;
        for &d in dims {
            put_u32(w, d as u32)?;
        }
    }
    for p in net.parameters() {
        for &v in p.data() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_network(r: &mut impl Read) -> Result<Network> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(TensorError::Format("bad magic".into()));
    }
    let version = get_u32(r)?;
    if version != VERSION {
        return Err(TensorError::Format(format!("unsupported version {version}")));
    }
    let count = get_u32(r)? as usize;
    if count > 4096 {
        return Err(TensorError::Format(format!("implausible layer count {count}")));
    }
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let kind = get_u32(r)?;
        let rank = get_u32(r)? as usize;
        if rank > 8 {
            return Err(TensorError::Format(format!("implausible rank {rank}")));
        }
        let dims = (0..rank)
            .map(|_| get_u32(r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let layer = match (kind, dims.as_slice()) {
            (0, &[f, c, k, k2]) if k == k2 => Layer::conv(c, f, k),
            (1, &[out, inp]) => Layer::dense(inp, out),
            (2, []) => Layer::Relu,
            (3, []) => Layer::MaxPool2x2,
            (4, []) => Layer::Unpool2x2,
            (5, shape) if !shape.is_empty() => Layer::Reshape(shape.to_vec()),
            _ => return Err(TensorError::Format(format!("bad layer record kind={kind} dims={dims:?}"))),
        };
        layers.push(layer);
    }
    let mut net = Network::new(layers);
    for p in net.parameters_mut() {
        let mut buf = vec![0u8; p.len() * 4];
        r.read_exact(&mut buf)?;
        for (v, b) in p.data_mut().iter_mut().zip(buf.chunks_exact(4)) {
            *v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64;
        }
    }
    if net.parameters().any(|p: &Tensor| !p.is_finite()) {
        return Err(TensorError::Format("non-finite parameter".into()));
    }
    Ok(net)
}
