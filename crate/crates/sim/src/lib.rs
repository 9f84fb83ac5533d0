//! Cycle-approximate model of a Mamba2 decode accelerator built from a
//! matrix-multiply unit (MMU), an SSM pipeline unit (SSMU), a Hadamard
//! transform unit (HTU) and a normalization unit (NFU).
//!
//! [`simulate`] composes per-unit latency models under one of three
//! schedules and reports throughput, utilization and on-chip resources.

pub mod buffers;
pub mod error;
pub mod hw;
pub mod report;
pub mod schedule;
pub mod units;
pub mod workload;

pub use buffers::{buffer_report, BufferReport};
pub use error::{Result, SimError};
pub use hw::{HtuConfig, HwConfig, MmuConfig, SsmuConfig};
pub use report::{simulate, SimOptions, SimReport};
pub use schedule::{StageEvent, Task, Unit};
pub use workload::{BitWidths, ScheduleMode, TileConfig, Workload};
