//! Dense row-major `f64` tensors and the floating-point primitives the
//! reference decoder is built from.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
}

/// Dimension selector for per-channel / per-token reductions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Axis(usize);

impl Axis {
    pub fn new(index: usize, rank: usize) -> Result<Self> {
        if index >= rank {
            return Err(Error::Axis { axis: index, rank });
        }
        Ok(Axis(index))
    }

    pub fn index(self) -> usize {
        self.0
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(dim_err(
                "tensor",
                format!(
                    "shape {shape:?} holds {numel} elements, data has {}",
                    data.len()
                ),
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Tensor {
            shape,
            data,
            name: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
            name: None,
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let mut t = Tensor::zeros(shape);
        t.data.fill(value);
        t
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![data.len()], data)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(dim_err("from_rows", "ragged rows"));
        }
        Tensor::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Size of the last dimension (1 for scalars).
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn rows(&self) -> usize {
        self.numel() / self.last_dim().max(1)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.last_dim();
        &self.data[i * d..(i + 1) * d]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let d = self.last_dim();
        &mut self.data[i * d..(i + 1) * d]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(dim_err("reshape", format!("{:?} -> {shape:?}", self.shape)));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            name: self.name.clone(),
        }
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (m, n) = self.matrix_dims("transpose")?;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Tensor::new(vec![n, m], out)
    }

    pub fn max_abs(&self) -> f64 {
        max_abs(&self.data)
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    fn matrix_dims(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [m, n] => Ok((*m, *n)),
            other => Err(dim_err(
                op,
                format!("expected a matrix, got shape {other:?}"),
            )),
        }
    }
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Row-major matrix product `a[M×K] · b[K×N]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.matrix_dims("matmul")?;
    let (k2, n) = b.matrix_dims("matmul")?;
    if k != k2 {
        return Err(dim_err("matmul", format!("inner dims {k} vs {k2}")));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &aip) in a.data[i * k..(i + 1) * k].iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let b_row = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// Row vector times matrix: `x[K] · w[K×N]`.
pub fn vecmat(x: &[f64], w: &Tensor) -> Result<Vec<f64>> {
    let (k, n) = w.matrix_dims("vecmat")?;
    if x.len() != k {
        return Err(dim_err(
            "vecmat",
            format!("vector of {} vs {k} rows", x.len()),
        ));
    }
    let mut out = vec![0.0; n];
    for (p, &xp) in x.iter().enumerate() {
        if xp == 0.0 {
            continue;
        }
        for (o, &wv) in out.iter_mut().zip(w.row(p)) {
            *o += xp * wv;
        }
    }
    Ok(out)
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn silu_scalar(x: f64) -> f64 {
    x * sigmoid_scalar(x)
}

pub fn softplus_scalar(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn silu(x: &Tensor) -> Tensor {
    x.map(silu_scalar)
}

pub fn softplus(x: &Tensor) -> Tensor {
    x.map(softplus_scalar)
}

pub fn rmsnorm_row(x: &[f64], weight: &[f64], eps: f64) -> Vec<f64> {
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let inv = 1.0 / (ms + eps).sqrt();
    x.iter().zip(weight).map(|(v, w)| v * inv * w).collect()
}

/// RMS normalization over the last dimension, scaled by `weight`.
pub fn rmsnorm(x: &Tensor, weight: &Tensor, eps: f64) -> Result<Tensor> {
    let d = x.last_dim();
    if weight.numel() != d {
        return Err(dim_err(
            "rmsnorm",
            format!("weight has {} entries, last dim is {d}", weight.numel()),
        ));
    }
    let mut out = x.clone();
    for r in 0..x.rows() {
        let normed = rmsnorm_row(x.row(r), weight.data(), eps);
        out.row_mut(r).copy_from_slice(&normed);
    }
    Ok(out)
}

/// One causal depthwise convolution step followed by SiLU.
///
/// `state` holds the previous `k-1` inputs per channel (oldest first). Returns
/// the activated output and the shifted window.
pub fn conv1d_step(
    state: &Tensor,
    x_new: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let (d, k) = kernel.matrix_dims("conv1d_step")?;
    if k == 0 {
        return Err(dim_err("conv1d_step", "kernel width must be >= 1"));
    }
    if state.shape() != [d, k - 1] || x_new.numel() != d || bias.numel() != d {
        return Err(dim_err(
            "conv1d_step",
            format!(
                "state {:?}, x {:?}, bias {:?} for kernel {:?}",
                state.shape(),
                x_new.shape(),
                bias.shape(),
                kernel.shape()
            ),
        ));
    }
    let (out, window) = conv1d_step_raw(state.data(), x_new.data(), kernel.data(), bias.data(), k);
    Ok((
        Tensor::new(vec![d], out)?,
        Tensor::new(vec![d, k - 1], window)?,
    ))
}

pub(crate) fn conv1d_step_raw(
    state: &[f64],
    x_new: &[f64],
    kernel: &[f64],
    bias: &[f64],
    k: usize,
) -> (Vec<f64>, Vec<f64>) {
    let d = x_new.len();
    let hist = k - 1;
    let mut out = Vec::with_capacity(d);
    let mut window = Vec::with_capacity(d * hist);
    for c in 0..d {
        let past = &state[c * hist..(c + 1) * hist];
        let taps = &kernel[c * k..(c + 1) * k];
        let mut acc = bias[c] + taps[hist] * x_new[c];
        for (t, p) in taps[..hist].iter().zip(past) {
            acc += t * p;
        }
        out.push(silu_scalar(acc));
        if hist > 0 {
            window.extend_from_slice(&past[1..]);
            window.push(x_new[c]);
        }
    }
    (out, window)
}
