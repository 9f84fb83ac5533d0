use crate::error::{dim_err, Error, Result};
use crate::quant::{quantize_rtn, QuantScheme, QuantizedTensor};
use crate::tensor::Tensor;

/// Column ranges of `[0, k)` on which both operands keep a single scale.
fn common_segments(x: &QuantizedTensor, w: &QuantizedTensor, k: usize) -> Vec<(usize, usize)> {
    let gx = x.scheme.group_len(k);
    let gw = w.scheme.group_len(k);
    let mut cuts: Vec<usize> = (0..k).step_by(gx).chain((0..k).step_by(gw)).collect();
    cuts.push(k);
    cuts.sort_unstable();
    cuts.dedup();
    cuts.windows(2).map(|c| (c[0], c[1])).collect()
}

/// Integer matrix product `x · Wᵀ` for activations `x: [T × K]` and weights
/// `W: [N × K]`. Codes are multiplied and accumulated in checked `i32` within
/// each segment where both scales are constant; segment sums are then scaled
/// and added in floating point. Returns `[T × N]`.
pub fn qlinear(x: &QuantizedTensor, w: &QuantizedTensor) -> Result<Tensor> {
    let k = x.cols();
    if w.cols() != k || w.shape.len() != 2 {
        return Err(dim_err(
            "qlinear",
            format!("activations {:?} vs weights {:?}", x.shape, w.shape),
        ));
    }
    let (t_rows, n_rows) = (x.rows(), w.rows());
    let segs = common_segments(x, w, k);
    let xc = x.codes();
    let wc = w.codes();
    let mut out = Vec::with_capacity(t_rows * n_rows);
    for t in 0..t_rows {
        let xr = &xc[t * k..(t + 1) * k];
        for n in 0..n_rows {
            let wr = &wc[n * k..(n + 1) * k];
            let mut total = 0.0;
            for &(lo, hi) in &segs {
                let mut acc: i32 = 0;
                for j in lo..hi {
                    acc = acc
                        .checked_add(i32::from(xr[j]) * i32::from(wr[j]))
                        .ok_or(Error::AccumulatorOverflow("qlinear"))?;
                }
                total += f64::from(acc) * x.scale_at(t, lo) * w.scale_at(n, lo);
            }
            out.push(total);
        }
    }
    let mut shape = x.shape[..x.shape.len() - 1].to_vec();
    shape.push(n_rows);
    Tensor::new(shape, out)
}

/// [`qlinear`] followed by requantization of the output.
pub fn qlinear_requant(
    x: &QuantizedTensor,
    w: &QuantizedTensor,
    out_scheme: &QuantScheme,
) -> Result<QuantizedTensor> {
    quantize_rtn(&qlinear(x, w)?, out_scheme)
}
