//! Latency models for the matrix-multiply, Hadamard and SSM units.

use lightmamba_core::model::MambaConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::hw::{HwConfig, SsmuConfig};
use crate::workload::TileConfig;

/// Bytes per weight scale (fp16).
pub const SCALE_BYTES: u64 = 2;

pub(crate) fn ceil_log2(n: u64) -> u64 {
    if n <= 1 {
        0
    } else {
        u64::from(64 - (n - 1).leading_zeros())
    }
}

/// Streamed bytes for a `[k × n]` weight block: packed codes plus scales
/// (per group of `group` along `k` at 4 bits, per output channel at 8 bits,
/// none at 16 bits).
pub fn weight_bytes(k: u64, n: u64, bits_w: u32, group: u64) -> u64 {
    let codes = (k * n * u64::from(bits_w)).div_ceil(8);
    let scales = match bits_w {
        4 => k.div_ceil(group.max(1)) * n * SCALE_BYTES,
        8 => n * SCALE_BYTES,
        _ => 0,
    };
    codes + scales
}

/// MMU cost of one weight block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MmuCost {
    /// `ceil(k/d_in) · ceil(n/d_out)`, doubled when an operand is wider than
    /// 8 bits and DSP packing is unavailable.
    pub passes: u64,
    /// Adder-tree depth `log2(d_in)`.
    pub fill: u64,
    pub dram_bytes: u64,
    pub dram_cycles: u64,
}

impl MmuCost {
    /// Streaming cycles with compute and weight fetch double-buffered.
    pub fn stream_cycles(&self) -> u64 {
        self.passes.max(self.dram_cycles)
    }

    pub fn cycles(&self) -> u64 {
        self.fill + self.stream_cycles()
    }
}

pub fn mmu_latency(k: u64, n: u64, bits_w: u32, bits_a: u32, group: u64, hw: &HwConfig) -> MmuCost {
    let mut passes = k.div_ceil(hw.mmu.d_in) * n.div_ceil(hw.mmu.d_out);
    if bits_w > 8 || bits_a > 8 {
        passes *= 2;
    }
    let dram_bytes = weight_bytes(k, n, bits_w, group);
    MmuCost {
        passes,
        fill: ceil_log2(hw.mmu.d_in),
        dram_bytes,
        dram_cycles: hw.dram_cycles(dram_bytes),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HtuMode {
    /// Butterfly pipeline, one stage per bit, one butterfly per stage per cycle.
    Fht,
    /// `±1` matrix product on an add/sub-only MAC array.
    Mm,
}

/// Butterfly pipeline over `count` vectors of `n` points. A vector enters
/// every `n/2` cycles; the last one leaves after `log2(n)` stages plus a
/// drain of one cycle per stage.
pub fn fht_cycles(n: u64, count: u64) -> Result<u64> {
    if n == 0 || !n.is_power_of_two() {
        return Err(SimError::HtuMode(n));
    }
    if count == 0 || n == 1 {
        return Ok(0);
    }
    let stages = ceil_log2(n);
    Ok(count * n / 2 + (stages - 1) * n / 2 + stages)
}

/// Add/sub matrix engine with `lanes` parallel accumulators.
pub fn mm_cycles(n: u64, count: u64, lanes: u64) -> u64 {
    count * n.div_ceil(lanes.max(1)) * n
}

/// Latency of one `n`-point transform.
pub fn htu_latency(n: u64, mode: HtuMode, hw: &HwConfig) -> Result<u64> {
    match mode {
        HtuMode::Fht => fht_cycles(n, 1),
        HtuMode::Mm => Ok(mm_cycles(n, 1, hw.htu.mm_parallelism)),
    }
}

/// Matrix-engine lanes matching a butterfly pipeline of `n` points: one lane
/// per butterfly unit.
pub fn parity_lanes(n: u64) -> u64 {
    ceil_log2(n).max(1)
}

/// `fht / mm` latency ratio for one `n`-point vector at equal unit count.
pub fn fht_to_mm_ratio(n: u64) -> Result<f64> {
    let fht = fht_cycles(n, 1)?;
    let mm = mm_cycles(n, 1, parity_lanes(n));
    Ok(fht as f64 / mm as f64)
}

/// Cycles of the online transform over a row of `pot · small` values:
/// `small` butterfly passes of `pot` points, then `pot` matrix passes of
/// `small` points.
pub fn online_transform_cycles(pot: u64, small: u64, hw: &HwConfig) -> Result<u64> {
    let fht = fht_cycles(pot, small)?;
    let mm = if small > 1 {
        mm_cycles(small, pot, hw.htu.mm_parallelism)
    } else {
        0
    };
    Ok(fht + mm)
}

/// Operators of the SSM pipeline in dataflow order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SsmuOp {
    Discretize,
    Dbx,
    Ah,
    HUpdate,
    HRequant,
    Ch,
    YOut,
}

impl SsmuOp {
    pub const ALL: [SsmuOp; 7] = [
        SsmuOp::Discretize,
        SsmuOp::Dbx,
        SsmuOp::Ah,
        SsmuOp::HUpdate,
        SsmuOp::HRequant,
        SsmuOp::Ch,
        SsmuOp::YOut,
    ];

    /// Per-element operators that stream through linked FIFOs.
    pub const CHAIN: [SsmuOp; 4] = [SsmuOp::Dbx, SsmuOp::Ah, SsmuOp::HUpdate, SsmuOp::Ch];

    pub fn name(self) -> &'static str {
        match self {
            SsmuOp::Discretize => "discretize",
            SsmuOp::Dbx => "dbx",
            SsmuOp::Ah => "ah",
            SsmuOp::HUpdate => "h_update",
            SsmuOp::HRequant => "h_requant",
            SsmuOp::Ch => "ch",
            SsmuOp::YOut => "y_out",
        }
    }

    pub fn parallelism(self, s: &SsmuConfig) -> u64 {
        match self {
            SsmuOp::Discretize => s.discretize,
            SsmuOp::Dbx => s.dbx,
            SsmuOp::Ah => s.ah,
            SsmuOp::HUpdate => s.h_update,
            SsmuOp::HRequant => s.h_requant,
            SsmuOp::Ch => s.ch,
            SsmuOp::YOut => s.y_out,
        }
    }

    /// Elements handled for a tile of `heads × states` with head dim `p`.
    /// Requantization scans the tile for its peak, then shifts it.
    pub fn elements(self, heads: u64, states: u64, p: u64) -> u64 {
        match self {
            SsmuOp::Discretize => heads,
            SsmuOp::Dbx | SsmuOp::Ah | SsmuOp::HUpdate | SsmuOp::Ch => heads * p * states,
            SsmuOp::HRequant => 2 * heads * p * states,
            SsmuOp::YOut => heads * p,
        }
    }
}

/// Pipeline depth of the SSM unit, paid once as drain.
pub const SSMU_DEPTH: u64 = SsmuOp::ALL.len() as u64;

/// Initiation interval of one tile: the slowest operator's cycle count.
pub fn tile_ii(heads: u64, states: u64, p: u64, ssmu: &SsmuConfig) -> u64 {
    SsmuOp::ALL
        .iter()
        .map(|op| op.elements(heads, states, p).div_ceil(op.parallelism(ssmu)))
        .max()
        .unwrap_or(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileTiming {
    pub head_tile: u64,
    pub state_tile: u64,
    pub heads: u64,
    pub states: u64,
    pub ii: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FifoLink {
    pub name: String,
    /// Minimum depth (elements) that lets the producer run without stalling.
    pub depth: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SsmuTiming {
    /// Effective tile after clamping to the model dimensions.
    pub tile: TileConfig,
    pub head_tiles: u64,
    pub state_tiles: u64,
    pub tiles: Vec<TileTiming>,
    pub ii_max: u64,
    pub drain: u64,
    /// `Σ ii + drain` for one layer.
    pub total_cycles: u64,
    pub fifo: Vec<FifoLink>,
    /// Heads or states left over by the last tile, if any.
    pub head_remainder: u64,
    pub state_remainder: u64,
}

impl SsmuTiming {
    pub fn padded(&self) -> bool {
        self.head_remainder != 0 || self.state_remainder != 0
    }

    /// SSM cycles of each head: a head tile's cycles split evenly over its
    /// heads, remainders going to later heads.
    pub fn per_head_cycles(&self) -> Vec<u64> {
        let mut out = Vec::new();
        for g in 0..self.head_tiles {
            let in_tile: Vec<&TileTiming> =
                self.tiles.iter().filter(|t| t.head_tile == g).collect();
            let total: u64 = in_tile.iter().map(|t| t.ii).sum();
            let heads = in_tile.first().map_or(0, |t| t.heads);
            out.extend(split_even(total, heads));
        }
        out
    }
}

/// Splits `total` into `parts` integers with prefix sums
/// `floor(i·total/parts)`.
pub fn split_even(total: u64, parts: u64) -> Vec<u64> {
    let t = u128::from(total);
    let m = u128::from(parts);
    (0..m)
        .map(|i| ((i + 1) * t / m - i * t / m) as u64)
        .collect()
}

/// Minimum FIFO depth on each link of a chain of operators that move
/// `rates[i]` elements per cycle through a stream of `elements` items.
///
/// Operator `i` produces `min(E, r_i·(t − i))` items by the end of cycle `t`
/// where `r_i` is the smallest rate up to `i`; the depth of link `i` is the
/// peak of produced-minus-consumed, reached when the producer finishes.
pub fn chain_fifo_depths(rates: &[u64], elements: u64) -> Vec<u64> {
    let mut eff = Vec::with_capacity(rates.len());
    let mut r = u64::MAX;
    for &p in rates {
        r = r.min(p.max(1));
        eff.push(r);
    }
    let produced = |i: usize, t: u64| -> u64 {
        let start = i as u64;
        if t <= start {
            0
        } else {
            elements.min(eff[i].saturating_mul(t - start))
        }
    };
    (0..rates.len().saturating_sub(1))
        .map(|i| {
            if elements == 0 {
                return 0;
            }
            let done = i as u64 + elements.div_ceil(eff[i]);
            [i as u64 + 1, done.saturating_sub(1), done]
                .into_iter()
                .filter(|&t| t > i as u64)
                .map(|t| produced(i, t) - produced(i + 1, t))
                .max()
                .unwrap_or(0)
        })
        .collect()
}

/// Tile schedule, initiation intervals and FIFO depths of the SSM unit for
/// one layer.
pub fn ssmu_latency(cfg: &MambaConfig, tile: TileConfig, hw: &HwConfig) -> Result<SsmuTiming> {
    hw.validate()?;
    if tile.n_p == 0 || tile.p_p == 0 {
        return Err(crate::error::workload_err(
            "tile",
            "tile sides must be positive",
        ));
    }
    let h = cfg.n_heads as u64;
    let n = cfg.d_state as u64;
    let p = cfg.head_dim as u64;
    let eff = TileConfig {
        n_p: tile.n_p.min(h),
        p_p: tile.p_p.min(n),
    };
    let head_tiles = h.div_ceil(eff.n_p);
    let state_tiles = n.div_ceil(eff.p_p);
    let mut tiles = Vec::with_capacity((head_tiles * state_tiles) as usize);
    for g in 0..head_tiles {
        let heads = eff.n_p.min(h - g * eff.n_p);
        for s in 0..state_tiles {
            let states = eff.p_p.min(n - s * eff.p_p);
            tiles.push(TileTiming {
                head_tile: g,
                state_tile: s,
                heads,
                states,
                ii: tile_ii(heads, states, p, &hw.ssmu),
            });
        }
    }
    let ii_max = tiles.iter().map(|t| t.ii).max().unwrap_or(0);
    let total_cycles = tiles.iter().map(|t| t.ii).sum::<u64>() + SSMU_DEPTH;
    let rates: Vec<u64> = SsmuOp::CHAIN
        .iter()
        .map(|op| op.parallelism(&hw.ssmu))
        .collect();
    let depths = chain_fifo_depths(&rates, eff.n_p * eff.p_p * p);
    let fifo = SsmuOp::CHAIN
        .windows(2)
        .zip(depths)
        .map(|(pair, depth)| FifoLink {
            name: format!("{}->{}", pair[0].name(), pair[1].name()),
            depth,
        })
        .collect();
    Ok(SsmuTiming {
        tile: eff,
        head_tiles,
        state_tiles,
        tiles,
        ii_max,
        drain: SSMU_DEPTH,
        total_cycles,
        fifo,
        head_remainder: h % eff.n_p,
        state_remainder: n % eff.p_p,
    })
}

/// Causal-conv cycles for `channels` channels.
pub fn conv_cycles(channels: u64, kernel: u64, ssmu: &SsmuConfig) -> u64 {
    (channels * kernel).div_ceil(ssmu.conv)
}

/// Normalization-unit cycles for `passes` sweeps over `len` elements.
pub fn nfu_cycles(len: u64, passes: u64, hw: &HwConfig) -> u64 {
    (len * passes).div_ceil(hw.nfu_parallelism)
}
