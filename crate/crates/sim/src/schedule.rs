//! Per-token stage costs, closed-form cycle counts and the task timeline of
//! the three schedules.

use lightmamba_core::hadamard::HadamardPlan;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::hw::HwConfig;
use crate::units::{
    conv_cycles, mmu_latency, nfu_cycles, online_transform_cycles, split_even, ssmu_latency,
    SsmuTiming,
};
use crate::workload::{ScheduleMode, Workload};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Unit {
    Dma,
    Nfu,
    Mmu,
    Ssmu,
    Htu,
}

impl Unit {
    pub const ALL: [Unit; 5] = [Unit::Dma, Unit::Nfu, Unit::Mmu, Unit::Ssmu, Unit::Htu];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// One head's work: its X/Z projection on the MMU and its conv plus SSM
/// on the SSM unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub mmu: u64,
    pub ssm: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCosts {
    pub norm1: u64,
    /// MMU tree fill plus the Δ, B, C columns of the input projection.
    pub in_prefix: u64,
    /// Per head. The first head also carries the B/C conv.
    pub heads: Vec<Chunk>,
    pub conv: u64,
    pub ssm: u64,
    pub drain: u64,
    pub gated_norm: u64,
    pub htu: u64,
    /// Output projection including the tree fill.
    pub out_proj: u64,
    /// Column slices per head in the fine-tiled schedule.
    pub slices: u64,
    pub dram_bytes: u64,
}

impl LayerCosts {
    /// Work units streamed through the MMU/SSM pipeline.
    pub fn chunks(&self, mode: ScheduleMode) -> Vec<Chunk> {
        match mode {
            ScheduleMode::Sequential | ScheduleMode::Reordered => self.heads.clone(),
            ScheduleMode::FineTiled => self
                .heads
                .iter()
                .flat_map(|c| {
                    split_even(c.mmu, self.slices)
                        .into_iter()
                        .zip(split_even(c.ssm, self.slices))
                        .map(|(mmu, ssm)| Chunk { mmu, ssm })
                })
                .collect(),
        }
    }

    fn mmu_heads(&self) -> u64 {
        self.heads.iter().map(|c| c.mmu).sum()
    }

    /// Closed-form cycles of one layer.
    pub fn cycles(&self, mode: ScheduleMode) -> u64 {
        let head = self.norm1 + self.in_prefix;
        let tail = self.drain + self.gated_norm + self.htu + self.out_proj;
        let body = match mode {
            ScheduleMode::Sequential => self.mmu_heads() + self.conv + self.ssm,
            _ => pipeline_span(&self.chunks(mode)),
        };
        head + body + tail
    }

    /// Busy cycles per unit for one layer (indexed by [`Unit::index`]).
    pub fn busy(&self) -> [u64; 5] {
        let mut b = [0; 5];
        b[Unit::Nfu.index()] = self.norm1 + self.gated_norm;
        b[Unit::Mmu.index()] = self.in_prefix + self.mmu_heads() + self.out_proj;
        b[Unit::Ssmu.index()] = self.conv + self.ssm + self.drain;
        b[Unit::Htu.index()] = self.htu;
        b
    }
}

/// Makespan of an in-order two-stage pipeline where chunk `k` enters stage
/// two once stage one has produced it: `max_k (Σ_{j≤k} a_j + Σ_{j≥k} s_j)`.
pub fn pipeline_span(chunks: &[Chunk]) -> u64 {
    let mut suffix: u64 = chunks.iter().map(|c| c.ssm).sum();
    let mut prefix = 0;
    let mut best = 0;
    for c in chunks {
        prefix += c.mmu;
        best = best.max(prefix + suffix);
        suffix -= c.ssm;
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenCosts {
    pub embed: u64,
    pub layer: LayerCosts,
    pub n_layers: u64,
    pub final_norm: u64,
    pub lm_head: u64,
    pub dram_bytes: u64,
    pub ssmu: SsmuTiming,
    /// Factorization of the online transform, if any.
    pub htu_plan: Option<(u64, u64)>,
}

impl TokenCosts {
    pub fn cycles(&self, mode: ScheduleMode) -> u64 {
        self.embed + self.n_layers * self.layer.cycles(mode) + self.final_norm + self.lm_head
    }

    pub fn busy(&self) -> [u64; 5] {
        let mut b = self.layer.busy().map(|v| v * self.n_layers);
        b[Unit::Dma.index()] += self.embed;
        b[Unit::Nfu.index()] += self.final_norm;
        b[Unit::Mmu.index()] += self.lm_head;
        b
    }
}

/// Stage costs for one decode token of `w` on `hw`.
pub fn token_costs(w: &Workload, hw: &HwConfig) -> Result<TokenCosts> {
    w.validate()?;
    hw.validate()?;
    let cfg = &w.model;
    let (bw, ba) = (w.bits.weights, w.bits.activations);
    let d_model = cfg.d_model as u64;
    let d_inner = cfg.d_inner() as u64;
    let heads = cfg.n_heads as u64;
    let p = cfg.head_dim as u64;
    let bc = 2 * (cfg.n_groups * cfg.d_state) as u64;
    let kernel = cfg.conv_kernel as u64;

    let prefix = mmu_latency(d_model, bc + heads, bw, ba, w.group_size, hw);
    let head_proj = mmu_latency(d_model, 2 * p, bw, ba, w.group_size, hw);
    let out = mmu_latency(d_inner, d_model, bw, ba, w.group_size, hw);
    let lm = mmu_latency(d_model, cfg.vocab_size as u64, bw, ba, w.group_size, hw);

    let ssmu = ssmu_latency(cfg, w.tile, hw)?;
    let conv_bc = conv_cycles(bc, kernel, &hw.ssmu);
    let conv_head = conv_cycles(p, kernel, &hw.ssmu);
    let ssm_heads = ssmu.per_head_cycles();
    let chunks: Vec<Chunk> = ssm_heads
        .iter()
        .enumerate()
        .map(|(i, &s)| Chunk {
            mmu: head_proj.stream_cycles(),
            ssm: s + conv_head + if i == 0 { conv_bc } else { 0 },
        })
        .collect();

    let (htu, htu_plan) = if w.online_rotation {
        let (pot, small) = match HadamardPlan::for_dim(d_inner as usize) {
            Ok(plan) => (plan.pot_size() as u64, plan.small_size() as u64),
            // No supported factorization: fall back to the matrix engine.
            Err(_) => (1, d_inner),
        };
        (online_transform_cycles(pot, small, hw)?, Some((pot, small)))
    } else {
        (0, None)
    };

    let layer = LayerCosts {
        norm1: nfu_cycles(d_model, 2, hw),
        in_prefix: prefix.cycles(),
        heads: chunks,
        conv: conv_bc + heads * conv_head,
        ssm: ssm_heads.iter().sum(),
        drain: ssmu.drain,
        gated_norm: nfu_cycles(d_inner, 3, hw),
        htu,
        out_proj: out.cycles(),
        slices: p.div_ceil(hw.mmu.d_out),
        dram_bytes: prefix.dram_bytes + heads * head_proj.dram_bytes + out.dram_bytes,
    };
    let embed_bytes = d_model * 2;
    let n_layers = cfg.n_layers as u64;
    Ok(TokenCosts {
        embed: hw.dram_cycles(embed_bytes),
        dram_bytes: embed_bytes + n_layers * layer.dram_bytes + lm.dram_bytes,
        layer,
        n_layers,
        final_norm: nfu_cycles(d_model, 2, hw),
        lm_head: lm.cycles(),
        ssmu,
        htu_plan,
    })
}

/// A unit of work on one hardware unit. Tasks on the same unit run in list
/// order; a task starts once its unit is free and its dependencies are done.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub unit: Unit,
    pub duration: u64,
    pub deps: Vec<usize>,
    pub label: String,
}

struct Builder {
    tasks: Vec<Task>,
}

impl Builder {
    fn push(
        &mut self,
        unit: Unit,
        duration: u64,
        deps: &[Option<usize>],
        label: String,
    ) -> Option<usize> {
        self.tasks.push(Task {
            unit,
            duration,
            deps: deps.iter().flatten().copied().collect(),
            label,
        });
        Some(self.tasks.len() - 1)
    }
}

/// Every task of one decode token under `mode`.
pub fn build_tasks(tc: &TokenCosts, mode: ScheduleMode) -> Vec<Task> {
    let mut b = Builder { tasks: Vec::new() };
    let lc = &tc.layer;
    let mut last = b.push(Unit::Dma, tc.embed, &[], "embed".into());
    for l in 0..tc.n_layers {
        let norm = b.push(Unit::Nfu, lc.norm1, &[last], format!("L{l}.norm"));
        let ssm_done = match mode {
            ScheduleMode::Sequential => {
                let inp = b.push(
                    Unit::Mmu,
                    lc.in_prefix + lc.mmu_heads(),
                    &[norm],
                    format!("L{l}.in_proj"),
                );
                let conv = b.push(Unit::Ssmu, lc.conv, &[inp], format!("L{l}.conv"));
                b.push(Unit::Ssmu, lc.ssm, &[conv], format!("L{l}.ssm"))
            }
            _ => {
                let mut mmu = b.push(
                    Unit::Mmu,
                    lc.in_prefix,
                    &[norm],
                    format!("L{l}.in_proj.dbc"),
                );
                let mut ssm = None;
                for (k, c) in lc.chunks(mode).iter().enumerate() {
                    mmu = b.push(Unit::Mmu, c.mmu, &[mmu], format!("L{l}.in_proj.xz{k}"));
                    ssm = b.push(Unit::Ssmu, c.ssm, &[mmu, ssm], format!("L{l}.ssm{k}"));
                }
                ssm
            }
        };
        let drain = b.push(Unit::Ssmu, lc.drain, &[ssm_done], format!("L{l}.ssm_drain"));
        let gated = b.push(
            Unit::Nfu,
            lc.gated_norm,
            &[drain],
            format!("L{l}.gated_norm"),
        );
        let htu = b.push(Unit::Htu, lc.htu, &[gated], format!("L{l}.hadamard"));
        last = b.push(Unit::Mmu, lc.out_proj, &[htu], format!("L{l}.out_proj"));
    }
    let fnorm = b.push(Unit::Nfu, tc.final_norm, &[last], "final_norm".into());
    b.push(Unit::Mmu, tc.lm_head, &[fnorm], "lm_head".into());
    b.tasks
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageEvent {
    pub unit: Unit,
    pub start_cycle: u64,
    pub end_cycle: u64,
    pub label: String,
}

/// As-soon-as-possible start times with in-order issue per unit.
pub fn asap(tasks: &[Task]) -> Vec<StageEvent> {
    let mut free = [0u64; 5];
    let mut ends: Vec<u64> = Vec::with_capacity(tasks.len());
    let mut out = Vec::with_capacity(tasks.len());
    for t in tasks {
        let ready = t.deps.iter().map(|&d| ends[d]).max().unwrap_or(0);
        let start = ready.max(free[t.unit.index()]);
        let end = start + t.duration;
        free[t.unit.index()] = end;
        ends.push(end);
        out.push(StageEvent {
            unit: t.unit,
            start_cycle: start,
            end_cycle: end,
            label: t.label.clone(),
        });
    }
    out
}
