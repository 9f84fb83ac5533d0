//! Accelerator hardware description and board presets.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result, SimError};

/// Matrix-multiply unit: `d_in × d_out` MACs per cycle, two MACs per DSP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MmuConfig {
    pub d_in: u64,
    pub d_out: u64,
}

impl MmuConfig {
    pub fn dsp_cost(&self) -> u64 {
        (self.d_in * self.d_out).div_ceil(2)
    }
}

/// Elements per cycle for each SSM pipeline operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SsmuConfig {
    pub conv: u64,
    pub discretize: u64,
    pub dbx: u64,
    pub ah: u64,
    pub h_update: u64,
    pub h_requant: u64,
    pub ch: u64,
    pub y_out: u64,
}

impl SsmuConfig {
    pub fn uniform(p: u64) -> Self {
        SsmuConfig {
            conv: p,
            discretize: p,
            dbx: p,
            ah: p,
            h_update: p,
            h_requant: p,
            ch: p,
            y_out: p,
        }
    }

    /// Lanes that need a hardware multiplier.
    pub fn dsp_cost(&self) -> u64 {
        self.conv + self.discretize + self.dbx + self.ah + self.ch
    }
}

/// Hadamard transform unit: a butterfly pipeline for power-of-two points and
/// an add/sub matrix engine for the small non-power-of-two factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HtuConfig {
    pub pot_points: u64,
    pub small_points: u64,
    pub mm_parallelism: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HwConfig {
    pub name: String,
    pub freq_mhz: f64,
    #[serde(rename = "dram_bandwidth_GBps")]
    pub dram_bandwidth_gbps: f64,
    pub dsp_total: u64,
    pub bram36_total: u64,
    pub uram_total: u64,
    pub mmu: MmuConfig,
    pub ssmu: SsmuConfig,
    pub htu: HtuConfig,
    /// Lanes of the normalization / gating unit.
    pub nfu_parallelism: u64,
    /// FIFO depth overrides (elements) keyed by link name, e.g. `dbx->ah`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub fifo_depths: BTreeMap<String, u64>,
}

impl HwConfig {
    /// Versal VCK190 at 400 MHz with 12 GB/s DRAM. The DSP total is the
    /// accelerator's budget rather than the device capacity.
    pub fn vck190() -> Self {
        HwConfig {
            name: "vck190".into(),
            freq_mhz: 400.0,
            dram_bandwidth_gbps: 12.0,
            dsp_total: 228,
            bram36_total: 967,
            uram_total: 463,
            mmu: MmuConfig { d_in: 32, d_out: 8 },
            ssmu: SsmuConfig {
                conv: 1,
                discretize: 1,
                dbx: 2,
                ah: 2,
                h_update: 2,
                h_requant: 3,
                ch: 2,
                y_out: 2,
            },
            htu: HtuConfig {
                pot_points: 128,
                small_points: 40,
                mm_parallelism: 8,
            },
            nfu_parallelism: 4,
            fifo_depths: BTreeMap::new(),
        }
    }

    /// Alveo U280 at 200 MHz with 460 GB/s HBM.
    pub fn u280() -> Self {
        HwConfig {
            name: "u280".into(),
            freq_mhz: 200.0,
            dram_bandwidth_gbps: 460.0,
            dsp_total: 9024,
            bram36_total: 2016,
            uram_total: 960,
            mmu: MmuConfig {
                d_in: 64,
                d_out: 28,
            },
            ssmu: SsmuConfig {
                conv: 16,
                discretize: 4,
                dbx: 48,
                ah: 48,
                h_update: 48,
                h_requant: 96,
                ch: 48,
                y_out: 32,
            },
            htu: HtuConfig {
                pot_points: 128,
                small_points: 40,
                mm_parallelism: 40,
            },
            nfu_parallelism: 32,
            fifo_depths: BTreeMap::new(),
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "vck190" => Some(Self::vck190()),
            "u280" => Some(Self::u280()),
            _ => None,
        }
    }

    pub fn freq_hz(&self) -> f64 {
        self.freq_mhz * 1e6
    }

    pub fn bandwidth_bytes_per_s(&self) -> f64 {
        self.dram_bandwidth_gbps * 1e9
    }

    /// Cycles needed to stream `bytes` from DRAM.
    pub fn dram_cycles(&self, bytes: u64) -> u64 {
        (bytes as f64 * self.freq_hz() / self.bandwidth_bytes_per_s()).ceil() as u64
    }

    pub fn validate(&self) -> Result<()> {
        let positive_f = [
            ("freq_mhz", self.freq_mhz),
            ("dram_bandwidth_GBps", self.dram_bandwidth_gbps),
        ];
        for (field, v) in positive_f {
            if !(v.is_finite() && v > 0.0) {
                return Err(config_err(field, format!("must be positive, got {v}")));
            }
        }
        let s = &self.ssmu;
        let positive = [
            ("dsp_total", self.dsp_total),
            ("bram36_total", self.bram36_total),
            ("uram_total", self.uram_total),
            ("mmu.d_in", self.mmu.d_in),
            ("mmu.d_out", self.mmu.d_out),
            ("ssmu.conv", s.conv),
            ("ssmu.discretize", s.discretize),
            ("ssmu.dbx", s.dbx),
            ("ssmu.ah", s.ah),
            ("ssmu.h_update", s.h_update),
            ("ssmu.h_requant", s.h_requant),
            ("ssmu.ch", s.ch),
            ("ssmu.y_out", s.y_out),
            ("htu.pot_points", self.htu.pot_points),
            ("htu.small_points", self.htu.small_points),
            ("htu.mm_parallelism", self.htu.mm_parallelism),
            ("nfu_parallelism", self.nfu_parallelism),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(config_err(field, "must be positive"));
            }
        }
        if !self.htu.pot_points.is_power_of_two() {
            return Err(config_err("htu.pot_points", "must be a power of two"));
        }
        if self.mmu.dsp_cost() > self.dsp_total {
            return Err(config_err(
                "mmu",
                format!(
                    "{}x{} needs {} DSPs, budget is {}",
                    self.mmu.d_in,
                    self.mmu.d_out,
                    self.mmu.dsp_cost(),
                    self.dsp_total
                ),
            ));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let hw: HwConfig = serde_json::from_str(text)?;
        hw.validate()?;
        Ok(hw)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("hw config serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| SimError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json() + "\n").map_err(|source| SimError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}
