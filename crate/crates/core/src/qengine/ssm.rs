//! Integer selective-state update with power-of-two scales.
//!
//! Every operand is an `i8` code with a per-group exponent, so a value is
//! `code · 2^e`. Products carry the sum of their operand exponents, sums are
//! formed after aligning exponents with shifts, and results are brought back
//! to `i8` by a rounding shift chosen from the bit length of the group
//! maximum. No multiplier is ever used for rescaling, and this file contains
//! no floating-point arithmetic.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::model::SsmDims;

/// Largest exponent magnitude accepted anywhere in the integer SSM.
pub const MAX_EXPONENT: i32 = 32;

/// Fractional guard bits kept when aligning terms before a sum.
const GUARD_BITS: i32 = 16;

/// Integer operations used by [`qssm_step`].
pub trait IntAlu {
    /// Elementwise operand multiply.
    fn mul(&mut self, a: i64, b: i64) -> i64;
    /// `round_half_away(v / 2^k)` for `k > 0`, `v · 2^-k` otherwise.
    fn shift_round(&mut self, v: i64, k: i32) -> i64;
    fn add(&mut self, a: i64, b: i64) -> i64;
}

/// Operation counters for an [`IntAlu`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AluCounts {
    pub em_mults: u64,
    pub shifts: u64,
    pub adds: u64,
}

/// Plain integer ALU that counts every operation.
#[derive(Debug, Clone, Default)]
pub struct CountingAlu {
    pub counts: AluCounts,
}

pub fn shift_round_i64(v: i64, k: i32) -> i64 {
    if k > 0 {
        if k >= 63 {
            return 0;
        }
        let half = 1i64 << (k - 1);
        let mag = (v.unsigned_abs() as i64 + half) >> k;
        if v < 0 {
            -mag
        } else {
            mag
        }
    } else {
        let s = (-k).min(62) as u32;
        v.checked_shl(s)
            .filter(|r| r >> s == v)
            .unwrap_or(if v < 0 { i64::MIN } else { i64::MAX })
    }
}

impl IntAlu for CountingAlu {
    fn mul(&mut self, a: i64, b: i64) -> i64 {
        self.counts.em_mults += 1;
        a * b
    }

    fn shift_round(&mut self, v: i64, k: i32) -> i64 {
        self.counts.shifts += 1;
        shift_round_i64(v, k)
    }

    fn add(&mut self, a: i64, b: i64) -> i64 {
        self.counts.adds += 1;
        a + b
    }
}

/// `i8` codes with one exponent per group. Index `i` belongs to group
/// `(i / row_len) · ceil(row_len / group_len) + (i % row_len) / group_len`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PotVec {
    pub codes: Vec<i8>,
    pub exps: Vec<i8>,
    pub row_len: usize,
    pub group_len: usize,
}

impl PotVec {
    pub fn n_groups_for(len: usize, row_len: usize, group_len: usize) -> usize {
        (len / row_len) * row_len.div_ceil(group_len)
    }

    #[inline]
    pub fn group(&self, i: usize) -> usize {
        (i / self.row_len) * self.row_len.div_ceil(self.group_len)
            + (i % self.row_len) / self.group_len
    }

    #[inline]
    pub fn exp(&self, i: usize) -> i32 {
        i32::from(self.exps[self.group(i)])
    }

    #[inline]
    pub fn code(&self, i: usize) -> i64 {
        i64::from(self.codes[i])
    }

    fn check(&self, name: &'static str, len: usize) -> Result<()> {
        if self.codes.len() != len
            || self.row_len == 0
            || self.group_len == 0
            || !len.is_multiple_of(self.row_len)
            || self.exps.len() != PotVec::n_groups_for(len, self.row_len, self.group_len)
        {
            return Err(dim_err(
                name,
                format!("expected {len} codes with matching exponent groups"),
            ));
        }
        check_exps(&self.exps)
    }
}

fn check_exps(exps: &[i8]) -> Result<()> {
    match exps.iter().find(|e| i32::from(**e).abs() > MAX_EXPONENT) {
        Some(&e) => Err(Error::ScaleOverflow(i32::from(e))),
        None => Ok(()),
    }
}

fn checked_exp(e: i32) -> Result<i8> {
    if e.abs() > MAX_EXPONENT {
        return Err(Error::ScaleOverflow(e));
    }
    Ok(e as i8)
}

/// Tile of the hidden state sharing one exponent: `heads` consecutive heads
/// by `states` consecutive state entries (all head-dim rows included).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SsmTile {
    pub heads: usize,
    pub states: usize,
}

impl Default for SsmTile {
    fn default() -> Self {
        SsmTile {
            heads: 4,
            states: 64,
        }
    }
}

impl SsmTile {
    /// Clamps the tile to the model dimensions.
    pub fn clamped(self, dims: SsmDims) -> Self {
        SsmTile {
            heads: self.heads.clamp(1, dims.n_heads),
            states: self.states.clamp(1, dims.d_state),
        }
    }
}

/// Quantized hidden state of one layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntSsmState {
    /// `[n_heads × head_dim × d_state]` codes.
    pub h: Vec<i8>,
    /// One exponent per (head tile, state tile).
    pub exps: Vec<i8>,
    pub tile: SsmTile,
}

impl IntSsmState {
    pub fn new(dims: SsmDims, tile: SsmTile) -> Self {
        let tile = tile.clamped(dims);
        let groups = dims.n_heads.div_ceil(tile.heads) * dims.d_state.div_ceil(tile.states);
        IntSsmState {
            h: vec![0; dims.state_len()],
            exps: vec![0; groups],
            tile,
        }
    }

    #[inline]
    pub fn group(&self, dims: SsmDims, head: usize, n: usize) -> usize {
        (head / self.tile.heads) * dims.d_state.div_ceil(self.tile.states) + n / self.tile.states
    }
}

/// Quantized per-token SSM inputs; `b` and `c` hold `n_groups · d_state`
/// codes, `a`, `dt` and `d` one code per head, `x` one per head channel.
#[derive(Debug, Clone, Copy)]
pub struct QSsmInputs<'a> {
    pub a: &'a PotVec,
    pub dt: &'a PotVec,
    pub b: &'a PotVec,
    pub c: &'a PotVec,
    pub x: &'a PotVec,
    pub d: &'a PotVec,
}

fn bit_len(v: u64) -> i32 {
    (64 - v.leading_zeros()) as i32
}

/// Requantizes `(value, exponent)` pairs of one group to `i8` codes under a
/// single exponent. Returns `None` for an all-zero group.
fn requant_group<A: IntAlu>(alu: &mut A, vals: &mut [(i64, i32)]) -> Option<(Vec<i8>, i32)> {
    let e_ref = vals.iter().map(|v| v.1).max()?;
    let mut peak = 0u64;
    for v in vals.iter_mut() {
        if v.1 != e_ref {
            v.0 = alu.shift_round(v.0, e_ref - v.1);
            v.1 = e_ref;
        }
        peak = peak.max(v.0.unsigned_abs());
    }
    if peak == 0 {
        return None;
    }
    let k = bit_len(peak) - 7;
    let codes = vals
        .iter()
        .map(|v| alu.shift_round(v.0, k).clamp(-128, 127) as i8)
        .collect();
    Some((codes, e_ref + k))
}

/// One integer recurrence step. Updates `state` and returns `y` with one
/// exponent per head tile.
pub fn qssm_step<A: IntAlu>(
    dims: SsmDims,
    state: &mut IntSsmState,
    inp: QSsmInputs<'_>,
    alu: &mut A,
) -> Result<PotVec> {
    let SsmDims {
        n_heads,
        head_dim: p_dim,
        d_state: n_dim,
        n_groups,
    } = dims;
    if n_groups == 0 || n_heads % n_groups != 0 || state.h.len() != dims.state_len() {
        return Err(dim_err(
            "qssm_step",
            format!("state does not match {dims:?}"),
        ));
    }
    let n_state_tiles = n_dim.div_ceil(state.tile.states);
    if state.exps.len() != n_heads.div_ceil(state.tile.heads) * n_state_tiles {
        return Err(dim_err(
            "qssm_step",
            "state exponent table does not match tile",
        ));
    }
    check_exps(&state.exps)?;
    inp.a.check("qssm_step.a", n_heads)?;
    inp.dt.check("qssm_step.dt", n_heads)?;
    inp.d.check("qssm_step.d", n_heads)?;
    inp.b.check("qssm_step.b", n_groups * n_dim)?;
    inp.c.check("qssm_step.c", n_groups * n_dim)?;
    inp.x.check("qssm_step.x", n_heads * p_dim)?;

    // h' = Ā·h + (Δ·x)·B, kept as aligned wide sums
    let mut sums: Vec<(i64, i32)> = Vec::with_capacity(dims.state_len());
    for hd in 0..n_heads {
        let g = dims.group_of(hd);
        let (a, e_a) = (inp.a.code(hd), inp.a.exp(hd));
        let (dt, e_dt) = (inp.dt.code(hd), inp.dt.exp(hd));
        for p in 0..p_dim {
            let xi = hd * p_dim + p;
            let dx = alu.mul(dt, inp.x.code(xi));
            let e_dx = e_dt + inp.x.exp(xi);
            for n in 0..n_dim {
                let bi = g * n_dim + n;
                let inj = alu.mul(dx, inp.b.code(bi));
                let e_inj = e_dx + inp.b.exp(bi);
                let hi = (hd * p_dim + p) * n_dim + n;
                let sg = state.group(dims, hd, n);
                let dec = alu.mul(a, i64::from(state.h[hi]));
                let e_dec = e_a + i32::from(state.exps[sg]);
                let e_acc = e_inj.max(e_dec) - GUARD_BITS;
                let lhs = alu.shift_round(dec, e_acc - e_dec);
                let rhs = alu.shift_round(inj, e_acc - e_inj);
                sums.push((alu.add(lhs, rhs), e_acc));
            }
        }
    }

    // requantize each state tile under a fresh exponent
    for ht in 0..n_heads.div_ceil(state.tile.heads) {
        let heads = ht * state.tile.heads..((ht + 1) * state.tile.heads).min(n_heads);
        for st in 0..n_state_tiles {
            let ns = st * state.tile.states..((st + 1) * state.tile.states).min(n_dim);
            let mut idx = Vec::new();
            for hd in heads.clone() {
                for p in 0..p_dim {
                    for n in ns.clone() {
                        idx.push((hd * p_dim + p) * n_dim + n);
                    }
                }
            }
            let mut vals: Vec<(i64, i32)> = idx.iter().map(|&i| sums[i]).collect();
            let sg = ht * n_state_tiles + st;
            match requant_group(alu, &mut vals) {
                Some((codes, e)) => {
                    state.exps[sg] = checked_exp(e)?;
                    for (&i, c) in idx.iter().zip(codes) {
                        state.h[i] = c;
                    }
                }
                None => idx.iter().for_each(|&i| state.h[i] = 0),
            }
        }
    }

    // y = Σ_n C·h' + D·x
    let mut ys: Vec<(i64, i32)> = Vec::with_capacity(n_heads * p_dim);
    for hd in 0..n_heads {
        let g = dims.group_of(hd);
        let (d, e_d) = (inp.d.code(hd), inp.d.exp(hd));
        for p in 0..p_dim {
            let xi = hd * p_dim + p;
            let mut terms: Vec<(i64, i32)> = Vec::with_capacity(n_dim + 1);
            for n in 0..n_dim {
                let ci = g * n_dim + n;
                let hi = (hd * p_dim + p) * n_dim + n;
                let prod = alu.mul(inp.c.code(ci), i64::from(state.h[hi]));
                terms.push((
                    prod,
                    inp.c.exp(ci) + i32::from(state.exps[state.group(dims, hd, n)]),
                ));
            }
            terms.push((alu.mul(d, inp.x.code(xi)), e_d + inp.x.exp(xi)));
            let e_acc = terms.iter().map(|t| t.1).max().unwrap_or(0) - GUARD_BITS;
            let mut acc = 0i64;
            for (v, e) in terms {
                let aligned = alu.shift_round(v, e_acc - e);
                acc = alu.add(acc, aligned);
            }
            ys.push((acc, e_acc));
        }
    }

    let tile_len = state.tile.heads * p_dim;
    let row_len = n_heads * p_dim;
    let n_tiles = row_len.div_ceil(tile_len);
    let mut y = PotVec {
        codes: vec![0; row_len],
        exps: vec![0; n_tiles],
        row_len,
        group_len: tile_len,
    };
    for t in 0..n_tiles {
        let range = t * tile_len..((t + 1) * tile_len).min(row_len);
        let mut vals = ys[range.clone()].to_vec();
        if let Some((codes, e)) = requant_group(alu, &mut vals) {
            y.exps[t] = checked_exp(e)?;
            y.codes[range].copy_from_slice(&codes);
        }
    }
    Ok(y)
}
