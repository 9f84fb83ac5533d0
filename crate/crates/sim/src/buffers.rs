//! On-chip buffer sizing for the SSM unit.

use lightmamba_core::model::MambaConfig;
use serde::{Deserialize, Serialize};

use crate::error::{workload_err, Result};
use crate::workload::{ScheduleMode, TileConfig};

/// Bytes in one URAM block (288 Kb).
pub const URAM_BYTES: u64 = 36 * 1024;
/// Bytes in one BRAM36 block.
pub const BRAM_BYTES: u64 = 4608;

/// SSM intermediates that the unit buffers between operators.
pub const INTERMEDIATES: [&str; 4] = ["dbx", "ah", "h_new", "ch_partial"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Memory {
    Uram,
    Bram,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Buffer {
    pub name: String,
    pub elements: u64,
    pub bytes: u64,
    pub memory: Memory,
    pub blocks: u64,
}

impl Buffer {
    /// Buffers larger than one BRAM go to URAM.
    pub fn new(name: impl Into<String>, elements: u64, bits: u32) -> Self {
        let bytes = (elements * u64::from(bits)).div_ceil(8);
        let (memory, block) = if bytes > BRAM_BYTES {
            (Memory::Uram, URAM_BYTES)
        } else {
            (Memory::Bram, BRAM_BYTES)
        };
        Buffer {
            name: name.into(),
            elements,
            bytes,
            memory,
            blocks: bytes.div_ceil(block),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BufferReport {
    pub schedule: ScheduleMode,
    pub buffers: Vec<Buffer>,
    pub total_bytes: u64,
    pub uram_used: u64,
    pub bram_used: u64,
}

impl BufferReport {
    fn from_buffers(schedule: ScheduleMode, buffers: Vec<Buffer>) -> Self {
        let blocks = |m: Memory| {
            buffers
                .iter()
                .filter(|b| b.memory == m)
                .map(|b| b.blocks)
                .sum()
        };
        BufferReport {
            schedule,
            total_bytes: buffers.iter().map(|b| b.bytes).sum(),
            uram_used: blocks(Memory::Uram),
            bram_used: blocks(Memory::Bram),
            buffers,
        }
    }
}

/// The persistent state plus one buffer per intermediate. Sequential and
/// reordered schedules hold every intermediate at full `H·P·N` size; the
/// fine-tiled schedule holds one `n_p · p_p · P` tile of each.
pub fn buffer_report(
    cfg: &MambaConfig,
    schedule: ScheduleMode,
    tile: TileConfig,
    ssm_bits: u32,
) -> Result<BufferReport> {
    if tile.n_p == 0 || tile.p_p == 0 {
        return Err(workload_err("tile", "tile sides must be positive"));
    }
    let (h, p, n) = (cfg.n_heads as u64, cfg.head_dim as u64, cfg.d_state as u64);
    let full = h * p * n;
    let work = match schedule {
        ScheduleMode::Sequential | ScheduleMode::Reordered => full,
        ScheduleMode::FineTiled => tile.n_p.min(h) * tile.p_p.min(n) * p,
    };
    let mut buffers = vec![Buffer::new("h_state", full, ssm_bits)];
    buffers.extend(
        INTERMEDIATES
            .iter()
            .map(|name| Buffer::new(*name, work, ssm_bits)),
    );
    Ok(BufferReport::from_buffers(schedule, buffers))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_buffers_go_to_bram() {
        let b = Buffer::new("x", 4608, 8);
        assert_eq!((b.memory, b.blocks), (Memory::Bram, 1));
        let b = Buffer::new("x", 4609, 8);
        assert_eq!((b.memory, b.blocks), (Memory::Uram, 1));
        let b = Buffer::new("x", 3 * URAM_BYTES + 1, 8);
        assert_eq!(b.blocks, 4);
    }
}
