//! Symmetric round-to-nearest quantization.
//!
//! Tensors are viewed as `rows × last_dim`; the last dimension is the
//! reduction axis of any downstream dot product. Linear weights are therefore
//! quantized in `[out × in]` layout so that per-channel means one scale per
//! output row and per-group splits each row into runs of `group_size`.
//!
//! Scales are either arbitrary reals or powers of two (`2^e`), the latter
//! making requantization a pure arithmetic shift.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::tensor::Tensor;

/// Default group size for 4-bit schemes.
pub const DEFAULT_GROUP_SIZE: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    PerTensor,
    /// One scale per row (output channel of a `[out × in]` weight).
    PerChannel,
    /// One scale per row (token of a `[tokens × dim]` activation).
    PerToken,
    PerGroup,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleKind {
    Float,
    Pot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuantScheme {
    pub bits: u8,
    pub granularity: Granularity,
    pub group_size: usize,
    pub scale_kind: ScaleKind,
}

impl QuantScheme {
    pub fn new(
        bits: u8,
        granularity: Granularity,
        group_size: usize,
        scale_kind: ScaleKind,
    ) -> Result<Self> {
        let s = QuantScheme {
            bits,
            granularity,
            group_size,
            scale_kind,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn per_tensor(bits: u8) -> Result<Self> {
        QuantScheme::new(bits, Granularity::PerTensor, 0, ScaleKind::Float)
    }

    pub fn per_channel(bits: u8) -> Result<Self> {
        QuantScheme::new(bits, Granularity::PerChannel, 0, ScaleKind::Float)
    }

    pub fn per_token(bits: u8) -> Result<Self> {
        QuantScheme::new(bits, Granularity::PerToken, 0, ScaleKind::Float)
    }

    pub fn per_group(bits: u8, group_size: usize) -> Result<Self> {
        QuantScheme::new(bits, Granularity::PerGroup, group_size, ScaleKind::Float)
    }

    pub fn with_pot(mut self) -> Self {
        self.scale_kind = ScaleKind::Pot;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.bits != 4 && self.bits != 8 {
            return Err(Error::UnsupportedBits(self.bits));
        }
        if self.granularity == Granularity::PerGroup && self.group_size == 0 {
            return Err(Error::Scheme("per_group needs group_size > 0".into()));
        }
        Ok(())
    }

    pub fn qmax(&self) -> i32 {
        (1 << (self.bits - 1)) - 1
    }

    pub fn qmin(&self) -> i32 {
        -(1 << (self.bits - 1))
    }

    /// Effective group length along a last dimension of `cols`.
    pub fn group_len(&self, cols: usize) -> usize {
        match self.granularity {
            Granularity::PerGroup => self.group_size.min(cols).max(1),
            _ => cols.max(1),
        }
    }

    /// Number of scale groups for a tensor of `rows × cols`.
    pub fn n_groups(&self, rows: usize, cols: usize) -> usize {
        match self.granularity {
            Granularity::PerTensor => 1,
            Granularity::PerChannel | Granularity::PerToken => rows,
            Granularity::PerGroup => rows * cols.div_ceil(self.group_len(cols)),
        }
    }

    /// Group index for element `(row, col)`.
    #[inline]
    pub fn group_of(&self, row: usize, col: usize, cols: usize) -> usize {
        match self.granularity {
            Granularity::PerTensor => 0,
            Granularity::PerChannel | Granularity::PerToken => row,
            Granularity::PerGroup => {
                let g = self.group_len(cols);
                row * cols.div_ceil(g) + col / g
            }
        }
    }
}

/// Per-group scale metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scales {
    Float(Vec<f64>),
    /// Scale of group `i` is `2^exponents[i]`.
    Pot(Vec<i8>),
}

impl Scales {
    pub fn len(&self) -> usize {
        match self {
            Scales::Float(v) => v.len(),
            Scales::Pot(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn scale(&self, group: usize) -> f64 {
        match self {
            Scales::Float(v) => v[group],
            Scales::Pot(e) => pot_value(i32::from(e[group])),
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        (0..self.len()).map(|g| self.scale(g)).collect()
    }
}

#[inline]
pub fn pot_value(e: i32) -> f64 {
    2f64.powi(e)
}

/// Integer codes, either one per byte or two 4-bit codes per byte.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum QData {
    I8(Vec<i8>),
    I4 { packed: Vec<u8>, len: usize },
}

impl QData {
    pub fn len(&self) -> usize {
        match self {
            QData::I8(v) => v.len(),
            QData::I4 { len, .. } => *len,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> i8 {
        match self {
            QData::I8(v) => v[i],
            QData::I4 { packed, .. } => {
                let byte = packed[i / 2];
                if i.is_multiple_of(2) {
                    unpack_low(byte)
                } else {
                    unpack_high(byte)
                }
            }
        }
    }

    pub fn to_i8(&self) -> Vec<i8> {
        match self {
            QData::I8(v) => v.clone(),
            QData::I4 { packed, len } => unpack_int4(packed, *len),
        }
    }

    /// Raw payload bytes as stored.
    pub fn as_bytes(&self) -> Vec<u8> {
        match self {
            QData::I8(v) => v.iter().map(|&c| c as u8).collect(),
            QData::I4 { packed, .. } => packed.clone(),
        }
    }
}

#[inline]
fn sign_extend4(n: u8) -> i8 {
    ((n << 4) as i8) >> 4
}

#[inline]
fn unpack_low(b: u8) -> i8 {
    sign_extend4(b & 0x0f)
}

#[inline]
fn unpack_high(b: u8) -> i8 {
    sign_extend4(b >> 4)
}

/// Packs signed 4-bit codes two per byte, low nibble first.
pub fn pack_int4(codes: &[i8]) -> Vec<u8> {
    codes
        .chunks(2)
        .map(|pair| {
            let lo = (pair[0] as u8) & 0x0f;
            let hi = pair.get(1).map_or(0, |&c| (c as u8) & 0x0f);
            lo | (hi << 4)
        })
        .collect()
}

pub fn unpack_int4(packed: &[u8], len: usize) -> Vec<i8> {
    (0..len)
        .map(|i| {
            let b = packed[i / 2];
            if i % 2 == 0 {
                unpack_low(b)
            } else {
                unpack_high(b)
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedTensor {
    pub shape: Vec<usize>,
    pub scheme: QuantScheme,
    pub qdata: QData,
    pub scales: Scales,
}

impl QuantizedTensor {
    pub fn from_codes(
        shape: Vec<usize>,
        scheme: QuantScheme,
        codes: Vec<i8>,
        scales: Scales,
    ) -> Result<Self> {
        scheme.validate()?;
        let numel: usize = shape.iter().product();
        if codes.len() != numel {
            return Err(dim_err(
                "quantized_tensor",
                format!("{} codes for {shape:?}", codes.len()),
            ));
        }
        let (lo, hi) = (scheme.qmin(), scheme.qmax());
        if codes
            .iter()
            .any(|&c| i32::from(c) < lo || i32::from(c) > hi)
        {
            return Err(Error::Scheme(format!(
                "code outside the signed {}-bit range",
                scheme.bits
            )));
        }
        let cols = shape.last().copied().unwrap_or(1);
        let rows = numel / cols.max(1);
        if scales.len() != scheme.n_groups(rows, cols) {
            return Err(dim_err(
                "quantized_tensor",
                format!(
                    "{} scales for {} groups",
                    scales.len(),
                    scheme.n_groups(rows, cols)
                ),
            ));
        }
        let qdata = if scheme.bits == 4 {
            QData::I4 {
                packed: pack_int4(&codes),
                len: codes.len(),
            }
        } else {
            QData::I8(codes)
        };
        Ok(QuantizedTensor {
            shape,
            scheme,
            qdata,
            scales,
        })
    }

    pub fn numel(&self) -> usize {
        self.qdata.len()
    }

    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn rows(&self) -> usize {
        self.numel() / self.cols().max(1)
    }

    pub fn codes(&self) -> Vec<i8> {
        self.qdata.to_i8()
    }

    /// Same codes stored one per byte (for cross-checking packed paths).
    pub fn unpacked(&self) -> QuantizedTensor {
        QuantizedTensor {
            qdata: QData::I8(self.qdata.to_i8()),
            ..self.clone()
        }
    }

    #[inline]
    pub fn scale_at(&self, row: usize, col: usize) -> f64 {
        let cols = self.cols();
        self.scales.scale(self.scheme.group_of(row, col, cols))
    }
}

/// `e = round(log2(scale))`, ties toward +inf.
pub fn pot_exponent(scale: f64) -> i32 {
    (scale.log2() + 0.5).floor() as i32
}

/// Smallest `e` with `2^e >= scale`, so the group maximum never saturates.
pub fn pot_exponent_ceil(scale: f64) -> i32 {
    scale.log2().ceil() as i32
}

/// Power-of-two exponents chosen with [`pot_exponent_ceil`]: every value
/// in the group fits the code range without clamping.
pub fn compute_pot_scales_ceil(x: &Tensor, scheme: &QuantScheme) -> Result<Scales> {
    scheme.validate()?;
    let qmax = f64::from(scheme.qmax());
    group_max_abs(x.data(), scheme, x.rows(), x.last_dim())
        .into_iter()
        .map(|m| {
            let e = if m > 0.0 {
                pot_exponent_ceil(m / qmax)
            } else {
                0
            };
            i8::try_from(e).map_err(|_| Error::ScaleOverflow(e))
        })
        .collect::<Result<Vec<_>>>()
        .map(Scales::Pot)
}

fn group_max_abs(data: &[f64], scheme: &QuantScheme, rows: usize, cols: usize) -> Vec<f64> {
    let mut maxes = vec![0.0f64; scheme.n_groups(rows, cols)];
    for r in 0..rows {
        for c in 0..cols {
            let g = scheme.group_of(r, c, cols);
            maxes[g] = maxes[g].max(data[r * cols + c].abs());
        }
    }
    maxes
}

/// Per-group scales `max|x| / (2^(b-1) - 1)`; all-zero groups get scale 1.
pub fn compute_scales(x: &Tensor, scheme: &QuantScheme) -> Result<Scales> {
    scheme.validate()?;
    let cols = x.last_dim();
    let rows = x.rows();
    let qmax = f64::from(scheme.qmax());
    let float: Vec<f64> = group_max_abs(x.data(), scheme, rows, cols)
        .into_iter()
        .map(|m| if m > 0.0 { m / qmax } else { 1.0 })
        .collect();
    Ok(match scheme.scale_kind {
        ScaleKind::Float => Scales::Float(float),
        ScaleKind::Pot => Scales::Pot(
            float
                .iter()
                .map(|&s| {
                    let e = pot_exponent(s);
                    i8::try_from(e).map_err(|_| Error::ScaleOverflow(e))
                })
                .collect::<Result<_>>()?,
        ),
    })
}

#[inline]
pub fn quantize_value(v: f64, scale: f64, qmin: i32, qmax: i32) -> i8 {
    let q = (v / scale).round();
    q.clamp(f64::from(qmin), f64::from(qmax)) as i8
}

/// Round-to-nearest (half away from zero) quantization with saturation.
pub fn quantize_rtn(x: &Tensor, scheme: &QuantScheme) -> Result<QuantizedTensor> {
    let scales = compute_scales(x, scheme)?;
    quantize_with_scales(x, scheme, scales)
}

pub fn quantize_with_scales(
    x: &Tensor,
    scheme: &QuantScheme,
    scales: Scales,
) -> Result<QuantizedTensor> {
    let cols = x.last_dim();
    let (qmin, qmax) = (scheme.qmin(), scheme.qmax());
    let codes = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let g = scheme.group_of(i / cols, i % cols, cols);
            quantize_value(v, scales.scale(g), qmin, qmax)
        })
        .collect();
    QuantizedTensor::from_codes(x.shape().to_vec(), *scheme, codes, scales)
}

pub fn dequantize(q: &QuantizedTensor) -> Tensor {
    let cols = q.cols();
    let data = (0..q.numel())
        .map(|i| f64::from(q.qdata.get(i)) * q.scale_at(i / cols, i % cols))
        .collect();
    Tensor::new(q.shape.clone(), data).expect("dequantized values are finite")
}

/// Shift-only requantization of an accumulator carrying exponent `k`
/// relative to the output scale: `round_half_away(acc / 2^k)` saturated to
/// `out_bits`. Negative `k` shifts left.
pub fn requantize_shift(acc: i32, k: i32, out_bits: u8) -> i32 {
    let v = i64::from(acc);
    let shifted = if k > 0 {
        let k = k.min(62) as u32;
        let half = 1i64 << (k - 1);
        let mag = (v.abs() + half) >> k;
        if v < 0 {
            -mag
        } else {
            mag
        }
    } else {
        let s = (-k) as u32;
        if v == 0 {
            0
        } else if s >= 32 {
            if v < 0 {
                i64::MIN
            } else {
                i64::MAX
            }
        } else {
            v << s
        }
    };
    let bits = u32::from(out_bits.clamp(2, 32));
    let hi = (1i64 << (bits - 1)) - 1;
    let lo = -(1i64 << (bits - 1));
    shifted.clamp(lo, hi) as i32
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantError {
    pub mse: f64,
    /// `Σ(x−x̂)² / Σx²`, or 0 when `x` is all zero.
    pub rel_mse: f64,
    pub max_abs: f64,
    pub cosine: f64,
}

/// Error between `x` and the dequantized `q`; `mse` is the per-token mean
/// squared error averaged over tokens (rows).
pub fn quant_error(x: &Tensor, q: &QuantizedTensor) -> Result<QuantError> {
    if x.shape() != q.shape.as_slice() {
        return Err(dim_err(
            "quant_error",
            format!("{:?} vs {:?}", x.shape(), q.shape),
        ));
    }
    Ok(error_between(x, &dequantize(q)))
}

pub fn error_between(x: &Tensor, y: &Tensor) -> QuantError {
    let cols = x.last_dim().max(1);
    let rows = x.rows().max(1);
    let mut mse = 0.0;
    let mut se_total = 0.0;
    let mut max_abs = 0.0f64;
    let (mut dot, mut nx, mut ny) = (0.0, 0.0, 0.0);
    for r in 0..rows {
        let mut row_se = 0.0;
        for c in 0..cols {
            let (a, b) = (x.data()[r * cols + c], y.data()[r * cols + c]);
            let d = a - b;
            row_se += d * d;
            se_total += d * d;
            max_abs = max_abs.max(d.abs());
            dot += a * b;
            nx += a * a;
            ny += b * b;
        }
        mse += row_se / cols as f64;
    }
    mse /= rows as f64;
    let cosine = if nx == 0.0 && ny == 0.0 {
        1.0
    } else if nx == 0.0 || ny == 0.0 {
        0.0
    } else {
        (dot / (nx.sqrt() * ny.sqrt())).clamp(-1.0, 1.0)
    };
    QuantError {
        mse,
        rel_mse: if nx > 0.0 { se_total / nx } else { 0.0 },
        max_abs,
        cosine,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn t(v: &[f64]) -> Tensor {
        Tensor::from_vec(v.to_vec()).unwrap()
    }

    #[test]
    fn scale_examples() {
        let s8 = QuantScheme::per_tensor(8).unwrap();
        let Scales::Float(s) = compute_scales(&t(&[0.3, -0.2, 0.1, 0.05]), &s8).unwrap() else {
            panic!()
        };
        assert!((s[0] - 0.3 / 127.0).abs() < 1e-15);
        assert!((s[0] - 0.002_362_2).abs() < 1e-7);
        let Scales::Float(z) = compute_scales(&t(&[0.0; 4]), &s8).unwrap() else {
            panic!()
        };
        assert_eq!(z, vec![1.0]);
        let Scales::Float(one) = compute_scales(&t(&[127.0, -3.0]), &s8).unwrap() else {
            panic!()
        };
        assert_eq!(one, vec![1.0]);
    }

    #[test]
    fn rtn_examples() {
        let s8 = QuantScheme::per_tensor(8).unwrap();
        let q = quantize_rtn(&t(&[0.1, -0.2, 0.3, 0.05]), &s8).unwrap();
        assert_eq!(q.codes(), vec![42, -85, 127, 21]);

        let s = 2.0 / 127.0;
        let mult = t(&[3.0 * s, -127.0 * s, 0.0, 64.0 * s]);
        let back = dequantize(&quantize_rtn(&mult, &s8).unwrap());
        assert!(back.max_abs_diff(&mult) < 1e-15);

        let s4 = QuantScheme::per_tensor(4).unwrap();
        let q4 = quantize_rtn(&t(&[7.0 * 0.1, -0.1, 0.0]), &s4).unwrap();
        assert_eq!(q4.codes()[0], 7);
        assert!(matches!(q4.qdata, QData::I4 { .. }));
    }

    #[test]
    fn saturation_clamps() {
        let scheme = QuantScheme::per_tensor(8).unwrap();
        let x = t(&[1.0, 10.0]);
        let q = quantize_with_scales(&x, &scheme, Scales::Float(vec![0.01])).unwrap();
        assert_eq!(q.codes(), vec![100, 127]);
        let x4 = t(&[-1.0]);
        let s4 = QuantScheme::per_tensor(4).unwrap();
        let q = quantize_with_scales(&x4, &s4, Scales::Float(vec![0.01])).unwrap();
        assert_eq!(q.codes(), vec![-8]);
    }

    #[test]
    fn scheme_validation() {
        assert!(matches!(
            QuantScheme::per_tensor(3),
            Err(Error::UnsupportedBits(3))
        ));
        assert!(QuantScheme::per_group(4, 0).is_err());
        let g = QuantScheme::per_group(4, 128).unwrap();
        assert_eq!(g.group_len(64), 64);
        assert_eq!(g.n_groups(3, 64), 3);
        assert_eq!(g.n_groups(2, 300), 6);
        assert_eq!(g.group_of(1, 299, 300), 5);
    }

    #[test]
    fn per_group_and_per_row_layouts() {
        let x = Tensor::new(vec![2, 4], vec![1.0, 2.0, 30.0, 40.0, -5.0, 0.5, 0.25, 0.0]).unwrap();
        let g = QuantScheme::per_group(8, 2).unwrap();
        let s = compute_scales(&x, &g).unwrap().to_vec();
        let expect = [2.0, 40.0, 5.0, 0.25].map(|m| m / 127.0);
        for (a, b) in s.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        let r = QuantScheme::per_channel(8).unwrap();
        let s = compute_scales(&x, &r).unwrap().to_vec();
        assert_eq!(s.len(), 2);
        assert!((s[1] - 5.0 / 127.0).abs() < 1e-15);
    }

    #[test]
    fn pot_exponent_examples() {
        assert_eq!(pot_exponent(1.0), 0);
        assert_eq!(pot_exponent(0.3), -2);
        assert_eq!(pot_exponent(3.0), 2);
        // tie (log2 = 0.5) rounds up
        assert_eq!(pot_exponent(2f64.sqrt()), 1);
        let scheme = QuantScheme::per_tensor(8).unwrap().with_pot();
        let Scales::Pot(e) = compute_scales(&t(&[0.3 * 127.0]), &scheme).unwrap() else {
            panic!()
        };
        assert_eq!(e, vec![-2]);
    }

    #[test]
    fn requantize_examples() {
        assert_eq!(requantize_shift(1000, 4, 8), 63);
        assert_eq!(requantize_shift(-1000, 4, 8), -63);
        assert_eq!(requantize_shift(300, 0, 8), 127);
        assert_eq!(requantize_shift(-300, 0, 8), -128);
        assert_eq!(requantize_shift(3, -2, 8), 12);
        assert_eq!(requantize_shift(100, -2, 8), 127);
        assert_eq!(requantize_shift(8, 4, 8), 1);
        assert_eq!(requantize_shift(7, 4, 8), 0);
        assert_eq!(requantize_shift(-8, 4, 8), -1);
        assert_eq!(requantize_shift(i32::MIN, 1, 32), -(1 << 30));
        assert_eq!(requantize_shift(5, -40, 32), i32::MAX);
    }

    #[test]
    fn int4_pack_roundtrip_exhaustive() {
        for byte in 0..=255u8 {
            let codes = unpack_int4(&[byte], 2);
            assert!(codes.iter().all(|&c| (-8..=7).contains(&c)));
            assert_eq!(pack_int4(&codes), vec![byte]);
        }
        assert_eq!(pack_int4(&[-1, 2]), vec![0x2f]);
        assert_eq!(unpack_int4(&pack_int4(&[-8, 7, 3]), 3), vec![-8, 7, 3]);
    }

    #[test]
    fn zero_dequantizes_to_zero() {
        let q = quantize_rtn(&Tensor::zeros(&[3, 4]), &QuantScheme::per_token(8).unwrap()).unwrap();
        assert!(dequantize(&q).data().iter().all(|&v| v == 0.0));
        let e = quant_error(&Tensor::zeros(&[3, 4]), &q).unwrap();
        assert_eq!(e.mse, 0.0);
        assert_eq!(e.cosine, 1.0);
    }

    /// Independent reimplementation of per-token RTN roundtrip error.
    fn oracle_mse(rows: &[Vec<f64>], bits: u32) -> f64 {
        let qmax = ((1i64 << (bits - 1)) - 1) as f64;
        let mut total = 0.0;
        for row in rows {
            let m = row.iter().map(|v| v.abs()).fold(0.0, f64::max);
            let s = if m > 0.0 { m / qmax } else { 1.0 };
            let se: f64 = row
                .iter()
                .map(|&v| {
                    let q = (v / s).round().clamp(-qmax - 1.0, qmax);
                    (v - q * s).powi(2)
                })
                .sum();
            total += se / row.len() as f64;
        }
        total / rows.len() as f64
    }

    #[test]
    fn roundtrip_mse_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let normal = Normal::new(0.0, 1.5).unwrap();
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..40).map(|_| normal.sample(&mut rng)).collect())
            .collect();
        let x = Tensor::from_rows(&rows).unwrap();
        for bits in [4u8, 8] {
            let q = quantize_rtn(&x, &QuantScheme::per_token(bits).unwrap()).unwrap();
            let e = quant_error(&x, &q).unwrap();
            let o = oracle_mse(&rows, u32::from(bits));
            assert!((e.mse - o).abs() <= 1e-15 * o.max(1.0), "bits {bits}");
        }
    }

    #[test]
    fn int8_gaussian_cosine() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let x = Tensor::new(
            vec![16, 256],
            (0..4096).map(|_| normal.sample(&mut rng)).collect(),
        )
        .unwrap();
        let q = quantize_rtn(&x, &QuantScheme::per_token(8).unwrap()).unwrap();
        assert!(quant_error(&x, &q).unwrap().cosine >= 0.99);
    }

    #[test]
    fn finer_granularity_can_lose_on_exact_grids() {
        // Per-tensor scale 1 represents every entry exactly; per-group does not.
        let x = t(&[127.0, 0.0, 2.0, 1.0]);
        let pt = quantize_rtn(&x, &QuantScheme::per_tensor(8).unwrap()).unwrap();
        let pg = quantize_rtn(&x, &QuantScheme::per_group(8, 2).unwrap()).unwrap();
        assert_eq!(quant_error(&x, &pt).unwrap().mse, 0.0);
        assert!(quant_error(&x, &pg).unwrap().mse > 0.0);
    }

    proptest! {
        #[test]
        fn requantize_matches_real_division(acc in -(1i32 << 20)..(1i32 << 20), k in 0i32..=12) {
            let real = f64::from(acc) / 2f64.powi(k);
            prop_assert_eq!(f64::from(requantize_shift(acc, k, 32)), real.round());
        }

        #[test]
        fn pot_scale_within_sqrt2(scale in 1e-6f64..1e6) {
            let ratio = pot_value(pot_exponent(scale)) / scale;
            let r2 = 2f64.sqrt();
            prop_assert!(ratio >= 1.0 / r2 * (1.0 - 1e-12) && ratio <= r2 * (1.0 + 1e-12));
        }

        #[test]
        fn roundtrip_error_within_half_scale(
            v in prop::collection::vec(-100.0f64..100.0, 1..64),
            bits in prop::sample::select(vec![4u8, 8]),
        ) {
            let x = t(&v);
            let q = quantize_rtn(&x, &QuantScheme::per_tensor(bits).unwrap()).unwrap();
            let s = q.scales.scale(0);
            let back = dequantize(&q);
            for (a, b) in v.iter().zip(back.data()) {
                prop_assert!((a - b).abs() <= s / 2.0 * (1.0 + 1e-12));
            }
        }

        #[test]
        fn group_error_bound_never_exceeds_tensor_bound(
            v in prop::collection::vec(-50.0f64..50.0, 8..96),
            g in 1usize..16,
        ) {
            let x = t(&v);
            let pt = quantize_rtn(&x, &QuantScheme::per_tensor(4).unwrap()).unwrap();
            let pg = quantize_rtn(&x, &QuantScheme::per_group(4, g).unwrap()).unwrap();
            let bound_t = pt.scales.scale(0) / 2.0;
            let back = dequantize(&pg);
            for (a, b) in v.iter().zip(back.data()) {
                prop_assert!((a - b).abs() <= bound_t * (1.0 + 1e-12));
            }
        }

        #[test]
        fn per_group_mse_not_worse_on_heterogeneous_rows(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let normal = Normal::new(0.0, 1.0).unwrap();
            // 8 groups of 64 whose magnitudes differ by at least 2x
            let v: Vec<f64> = (0..512)
                .map(|i| normal.sample(&mut rng) * 2f64.powi(i / 64))
                .collect();
            let x = t(&v);
            for bits in [4u8, 8] {
                let pt = quantize_rtn(&x, &QuantScheme::per_tensor(bits).unwrap()).unwrap();
                let pg = quantize_rtn(&x, &QuantScheme::per_group(bits, 64).unwrap()).unwrap();
                prop_assert!(quant_error(&x, &pg).unwrap().mse <= quant_error(&x, &pt).unwrap().mse);
            }
        }
    }
}
