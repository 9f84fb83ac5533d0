//! End-to-end simulation of one decode token and the report it produces.

use serde::{Deserialize, Serialize};

use crate::buffers::{buffer_report, BufferReport, BRAM_BYTES};
use crate::error::Result;
use crate::hw::HwConfig;
use crate::schedule::{asap, build_tasks, token_costs, StageEvent, TokenCosts, Unit};
use crate::units::FifoLink;
use crate::workload::{BitWidths, ScheduleMode, TileConfig, Workload};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimOptions {
    /// Emit the full per-task timeline (large for big models).
    pub timeline: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitCycles {
    pub dma: u64,
    pub nfu: u64,
    pub mmu: u64,
    pub ssmu: u64,
    pub htu: u64,
}

impl UnitCycles {
    fn from_array(a: [u64; 5]) -> Self {
        UnitCycles {
            dma: a[Unit::Dma.index()],
            nfu: a[Unit::Nfu.index()],
            mmu: a[Unit::Mmu.index()],
            ssmu: a[Unit::Ssmu.index()],
            htu: a[Unit::Htu.index()],
        }
    }

    pub fn get(&self, unit: Unit) -> u64 {
        match unit {
            Unit::Dma => self.dma,
            Unit::Nfu => self.nfu,
            Unit::Mmu => self.mmu,
            Unit::Ssmu => self.ssmu,
            Unit::Htu => self.htu,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SsmuSummary {
    pub tile: TileConfig,
    pub head_tiles: u64,
    pub state_tiles: u64,
    pub ii_max: u64,
    pub drain: u64,
    pub layer_cycles: u64,
    pub fifo: Vec<FifoLink>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub hw: String,
    pub schedule: ScheduleMode,
    pub bits: BitWidths,
    pub feasible: bool,
    pub infeasible_reasons: Vec<String>,
    pub notes: Vec<String>,
    pub cycles_per_token: u64,
    pub layer_cycles: u64,
    pub tokens_per_s: f64,
    /// `bandwidth / bytes_streamed_per_token`, the memory-wall ceiling.
    pub bandwidth_bound_tokens_per_s: f64,
    pub bytes_streamed_per_token: u64,
    /// Cycles each unit is occupied by a stage, including cycles waiting
    /// on weight streaming.
    pub busy_cycles: UnitCycles,
    pub mmu_utilization: f64,
    pub ssmu_utilization: f64,
    pub htu_utilization: f64,
    pub dsp_used: u64,
    pub uram_used: u64,
    pub bram_used: u64,
    pub ssmu: SsmuSummary,
    pub buffers: BufferReport,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub timeline: Vec<StageEvent>,
}

impl SimReport {
    pub fn utilization(&self, unit: Unit) -> f64 {
        utilization(self.busy_cycles.get(unit), self.cycles_per_token)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub fn utilization(busy: u64, total: u64) -> f64 {
    if total == 0 {
        0.0
    } else {
        busy as f64 / total as f64
    }
}

fn bram_blocks(bytes: u64) -> u64 {
    bytes.div_ceil(BRAM_BYTES)
}

/// Simulates one decode token of `w` on `hw`. Resource overruns produce a
/// report with `feasible: false` rather than an error.
pub fn simulate(w: &Workload, hw: &HwConfig, opts: SimOptions) -> Result<SimReport> {
    let tc = token_costs(w, hw)?;
    let cycles = tc.cycles(w.schedule);
    let busy = UnitCycles::from_array(tc.busy());
    let buffers = buffer_report(&w.model, w.schedule, w.tile, w.bits.ssm)?;
    let (notes, mut reasons) = check_plan(w, hw, &tc);

    let fifo: Vec<FifoLink> = tc
        .ssmu
        .fifo
        .iter()
        .map(|f| FifoLink {
            name: f.name.clone(),
            depth: hw.fifo_depths.get(&f.name).copied().unwrap_or(f.depth),
        })
        .collect();
    let ssm_bits = u64::from(w.bits.ssm);
    let act_bits = u64::from(w.bits.activations);
    let cfg = &w.model;
    let fifo_bram: u64 = fifo
        .iter()
        .map(|f| bram_blocks((f.depth * ssm_bits).div_ceil(8)).max(1))
        .sum();
    let weight_bram =
        bram_blocks(2 * (hw.mmu.d_in * hw.mmu.d_out * u64::from(w.bits.weights)).div_ceil(8));
    let act_elems = (cfg.in_proj_dim() + cfg.d_inner() + cfg.d_model) as u64;
    let act_bram = bram_blocks((act_elems * act_bits).div_ceil(8));
    let bram_used = buffers.bram_used + fifo_bram + weight_bram + act_bram;
    let dsp_used = hw.mmu.dsp_cost() + hw.ssmu.dsp_cost() + hw.nfu_parallelism;
    let uram_used = buffers.uram_used;
    for (what, used, total) in [
        ("DSP", dsp_used, hw.dsp_total),
        ("URAM", uram_used, hw.uram_total),
        ("BRAM36", bram_used, hw.bram36_total),
    ] {
        if used > total {
            reasons.push(format!("{what} needs {used}, device has {total}"));
        }
    }
    for (name, depth) in &hw.fifo_depths {
        if let Some(min) = tc.ssmu.fifo.iter().find(|f| &f.name == name) {
            if *depth < min.depth {
                reasons.push(format!(
                    "FIFO {name} depth {depth} is below the stall-free minimum {}",
                    min.depth
                ));
            }
        }
    }

    let timeline = if opts.timeline {
        asap(&build_tasks(&tc, w.schedule))
            .into_iter()
            .filter(|e| e.end_cycle > e.start_cycle)
            .collect()
    } else {
        Vec::new()
    };

    let freq = hw.freq_hz();
    Ok(SimReport {
        hw: hw.name.clone(),
        schedule: w.schedule,
        bits: w.bits,
        feasible: reasons.is_empty(),
        infeasible_reasons: reasons,
        notes,
        cycles_per_token: cycles,
        layer_cycles: tc.layer.cycles(w.schedule),
        tokens_per_s: freq / cycles as f64,
        bandwidth_bound_tokens_per_s: hw.bandwidth_bytes_per_s() / tc.dram_bytes as f64,
        bytes_streamed_per_token: tc.dram_bytes,
        mmu_utilization: utilization(busy.mmu, cycles),
        ssmu_utilization: utilization(busy.ssmu, cycles),
        htu_utilization: utilization(busy.htu, cycles),
        busy_cycles: busy,
        dsp_used,
        uram_used,
        bram_used,
        ssmu: SsmuSummary {
            tile: tc.ssmu.tile,
            head_tiles: tc.ssmu.head_tiles,
            state_tiles: tc.ssmu.state_tiles,
            ii_max: tc.ssmu.ii_max,
            drain: tc.ssmu.drain,
            layer_cycles: tc.ssmu.total_cycles,
            fifo,
        },
        buffers,
        timeline,
    })
}

fn check_plan(w: &Workload, hw: &HwConfig, tc: &TokenCosts) -> (Vec<String>, Vec<String>) {
    let mut notes = Vec::new();
    let mut reasons = Vec::new();
    let cfg = &w.model;
    let s = &tc.ssmu;
    if s.tile != w.tile {
        notes.push(format!(
            "tile {}x{} clamped to {}x{}",
            w.tile.n_p, w.tile.p_p, s.tile.n_p, s.tile.p_p
        ));
    }
    if s.head_remainder != 0 {
        notes.push(format!(
            "{} heads in tiles of {}: last head tile padded ({} heads)",
            cfg.n_heads, s.tile.n_p, s.head_remainder
        ));
    }
    if s.state_remainder != 0 {
        notes.push(format!(
            "{} states in tiles of {}: last state tile padded ({} states)",
            cfg.d_state, s.tile.p_p, s.state_remainder
        ));
    }
    if let Some((pot, small)) = tc.htu_plan {
        if pot == 1 {
            reasons.push(format!(
                "d_inner {} has no supported Hadamard factorization",
                cfg.d_inner()
            ));
        } else {
            if pot > hw.htu.pot_points {
                reasons.push(format!(
                    "online transform needs {pot}-point butterflies, unit supports {}",
                    hw.htu.pot_points
                ));
            }
            if small > hw.htu.small_points {
                reasons.push(format!(
                    "online transform needs a {small}-point matrix, unit supports {}",
                    hw.htu.small_points
                ));
            }
        }
    }
    (notes, reasons)
}
