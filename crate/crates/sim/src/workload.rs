//! What the accelerator runs: model shape, bit widths, schedule and tiling.

use std::fmt;
use std::str::FromStr;

use lightmamba_core::model::MambaConfig;
use serde::{Deserialize, Serialize};

use crate::error::{workload_err, Result, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    /// Every stage of a layer runs to completion before the next starts.
    Sequential,
    /// Δ, B, C are produced first, then X/Z head by head so the SSM of one
    /// head overlaps the projection of the next.
    Reordered,
    /// Reordered, with each head streamed in column slices so the SSM unit
    /// starts on the first slice; SSM buffers hold one tile.
    FineTiled,
}

impl ScheduleMode {
    pub const ALL: [ScheduleMode; 3] = [
        ScheduleMode::Sequential,
        ScheduleMode::Reordered,
        ScheduleMode::FineTiled,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScheduleMode::Sequential => "sequential",
            ScheduleMode::Reordered => "reordered",
            ScheduleMode::FineTiled => "fine_tiled",
        }
    }
}

impl fmt::Display for ScheduleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScheduleMode {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        ScheduleMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| workload_err("schedule", format!("unknown schedule `{s}`")))
    }
}

/// SSM tile: `n_p` heads by `p_p` state entries (all of the head dimension).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TileConfig {
    pub n_p: u64,
    pub p_p: u64,
}

impl Default for TileConfig {
    fn default() -> Self {
        TileConfig { n_p: 4, p_p: 64 }
    }
}

impl FromStr for TileConfig {
    type Err = SimError;

    /// Parses `NPxPP`, e.g. `4x64`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || workload_err("tile", format!("expected `<heads>x<states>`, got `{s}`"));
        let (a, b) = s.split_once(['x', 'X']).ok_or_else(bad)?;
        let n_p = a.trim().parse().map_err(|_| bad())?;
        let p_p = b.trim().parse().map_err(|_| bad())?;
        Ok(TileConfig { n_p, p_p })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BitWidths {
    pub weights: u32,
    pub activations: u32,
    pub ssm: u32,
}

impl BitWidths {
    pub fn w4a4() -> Self {
        BitWidths {
            weights: 4,
            activations: 4,
            ssm: 8,
        }
    }

    pub fn w8a8() -> Self {
        BitWidths {
            weights: 8,
            activations: 8,
            ssm: 8,
        }
    }

    pub fn fp16() -> Self {
        BitWidths {
            weights: 16,
            activations: 16,
            ssm: 16,
        }
    }

    /// Parses `w4a4`, `w8a8` or `fp16`.
    pub fn parse_scheme(s: &str) -> Result<Self> {
        match s {
            "w4a4" => Ok(Self::w4a4()),
            "w8a8" => Ok(Self::w8a8()),
            "fp16" => Ok(Self::fp16()),
            _ => Err(workload_err("bits", format!("unknown scheme `{s}`"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (field, b) in [
            ("bits.weights", self.weights),
            ("bits.activations", self.activations),
            ("bits.ssm", self.ssm),
        ] {
            if ![4, 8, 16].contains(&b) {
                return Err(workload_err(field, format!("{b} not in {{4, 8, 16}}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Workload {
    pub model: MambaConfig,
    pub bits: BitWidths,
    pub schedule: ScheduleMode,
    #[serde(default)]
    pub tile: TileConfig,
    /// Weight quantization group along the reduction axis (4-bit weights).
    #[serde(default = "default_group_size")]
    pub group_size: u64,
    /// Whether the Hadamard unit rotates the SSM output before out-proj.
    #[serde(default = "default_true")]
    pub online_rotation: bool,
}

fn default_group_size() -> u64 {
    128
}

fn default_true() -> bool {
    true
}

impl Workload {
    pub fn new(model: MambaConfig, bits: BitWidths, schedule: ScheduleMode) -> Self {
        Workload {
            model,
            bits,
            schedule,
            tile: TileConfig::default(),
            group_size: default_group_size(),
            online_rotation: true,
        }
    }

    pub fn with_schedule(&self, schedule: ScheduleMode) -> Self {
        Workload {
            schedule,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.bits.validate()?;
        if self.tile.n_p == 0 || self.tile.p_p == 0 {
            return Err(workload_err("tile", "tile sides must be positive"));
        }
        if self.group_size == 0 {
            return Err(workload_err("group_size", "must be positive"));
        }
        Ok(())
    }
}
