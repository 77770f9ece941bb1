//! Limiter-based performance model for overlapping dropout RNG with the
//! GEMMs of a transformer block, together with a bit-exact Philox mask
//! pipeline and a small attention kernel that checks fused and decoupled
//! dropout agree bit for bit.
//!
//! ```
//! use dropsched::{estimate, PerfModel, WorkloadConfig};
//!
//! let est = estimate(&PerfModel::gh100(), &WorkloadConfig::llama2()).unwrap();
//! assert!(est.speedup > 1.0);
//! ```

pub mod attention;
pub mod capacity;
pub mod config;
pub mod cost;
pub mod error;
pub mod mask;
pub mod philox;
pub mod report;
pub mod schedule;
pub mod strategy;
pub mod workload;

pub use attention::{
    attention_dropout_decoupled, attention_dropout_fused, attention_forward, AttentionInput,
    Tensor3,
};
pub use capacity::{feasible, mask_bytes, per_gpu_mask_bytes, ParallelismPlan};
pub use cost::{fuse, runtime, CostTable, DemandVector, HardwareConfig, KernelEstimate, Limiter};
pub use error::{Error, Result};
pub use mask::{generate_mask, DropoutMask, KeepThreshold, MaskLayout};
pub use philox::{philox_block, PhiloxBlock, PhiloxCounter, PhiloxKey};
pub use schedule::{
    estimate, sweep, whatif_scale, CalibrationFactors, PerfModel, Region, ScheduleEstimate,
    SweepGrid, SweepRow,
};
pub use strategy::{ScheduleStrategy, StrategyParams, StrategyRegistry, Timeline};
pub use workload::WorkloadConfig;
