//! HBM footprint of the stored keep mask and how tensor/sequence
//! parallelism and pipelining shrink it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::workload::WorkloadConfig;

/// 8 GiB, the default per-GPU budget for mask storage.
pub const DEFAULT_BUDGET_BYTES: u64 = 8 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelismPlan {
    /// Tensor parallelism: splits heads.
    pub tp: u64,
    /// Sequence parallelism: splits the query-row dimension.
    pub sp: u64,
}

impl Default for ParallelismPlan {
    fn default() -> Self {
        Self { tp: 1, sp: 1 }
    }
}

impl ParallelismPlan {
    pub fn new(tp: u64, sp: u64) -> Self {
        Self { tp, sp }
    }

    pub fn degree(&self) -> u64 {
        self.tp * self.sp
    }

    pub fn check(&self, cfg: &WorkloadConfig) -> Result<()> {
        if self.tp == 0 || self.sp == 0 {
            return Err(Error::InvalidParameter("parallelism degrees must be >= 1".into()));
        }
        if !cfg.n_heads.is_multiple_of(self.tp) {
            return Err(Error::NotDivisible {
                what: "tensor-parallel degree",
                value: cfg.n_heads,
                divisor: self.tp,
            });
        }
        if !cfg.seq_len.is_multiple_of(self.sp) {
            return Err(Error::NotDivisible {
                what: "sequence-parallel degree",
                value: cfg.seq_len,
                divisor: self.sp,
            });
        }
        Ok(())
    }
}

fn bits_to_bytes(bits: u128) -> u64 {
    bits.div_ceil(8) as u64
}

/// One bit per element of the `(B, nH, SQ, SQ)` intermediate.
pub fn mask_bytes(cfg: &WorkloadConfig) -> u64 {
    let bits = cfg.batch as u128 * cfg.n_heads as u128 * (cfg.seq_len as u128).pow(2);
    bits_to_bytes(bits)
}

pub fn per_gpu_mask_bytes(cfg: &WorkloadConfig, plan: &ParallelismPlan) -> Result<u64> {
    plan.check(cfg)?;
    let bits = cfg.batch as u128
        * (cfg.n_heads / plan.tp) as u128
        * (cfg.seq_len / plan.sp) as u128
        * cfg.seq_len as u128;
    Ok(bits_to_bytes(bits))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Feasibility {
    pub feasible: bool,
    pub required_bytes: u64,
    pub budget_bytes: u64,
}

/// Per-GPU requirement when the local rows are further pipelined in
/// `chunks` pieces; feasible when it fits `budget_bytes` (inclusive).
pub fn feasible(
    cfg: &WorkloadConfig,
    plan: &ParallelismPlan,
    budget_bytes: u64,
    chunks: u64,
) -> Result<Feasibility> {
    plan.check(cfg)?;
    let local_rows = cfg.seq_len / plan.sp;
    if chunks == 0 || !local_rows.is_multiple_of(chunks) {
        return Err(Error::NotDivisible {
            what: "chunk count",
            value: local_rows,
            divisor: chunks,
        });
    }
    let bits = cfg.batch as u128
        * (cfg.n_heads / plan.tp) as u128
        * (local_rows / chunks) as u128
        * cfg.seq_len as u128;
    let required = bits_to_bytes(bits);
    Ok(Feasibility {
        feasible: required <= budget_bytes,
        required_bytes: required,
        budget_bytes,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CapacityRow {
    pub workload: String,
    pub batch: u64,
    pub n_heads: u64,
    pub seq_len: u64,
    pub tp: u64,
    pub sp: u64,
    pub chunks: u64,
    pub mask_bytes: u64,
    pub per_gpu_bytes: u64,
    pub reduction: f64,
    pub feasible: bool,
    pub budget_bytes: u64,
}

/// Cross product of workloads and plans; combinations that do not divide
/// evenly are skipped.
pub fn capacity_table(
    workloads: &[(String, WorkloadConfig)],
    plans: &[ParallelismPlan],
    budget_bytes: u64,
    chunks: u64,
) -> Vec<CapacityRow> {
    let mut rows = Vec::new();
    for (name, cfg) in workloads {
        for plan in plans {
            let Ok(f) = feasible(cfg, plan, budget_bytes, chunks) else {
                continue;
            };
            let full = mask_bytes(cfg);
            rows.push(CapacityRow {
                workload: name.clone(),
                batch: cfg.batch,
                n_heads: cfg.n_heads,
                seq_len: cfg.seq_len,
                tp: plan.tp,
                sp: plan.sp,
                chunks,
                mask_bytes: full,
                per_gpu_bytes: f.required_bytes,
                reduction: full as f64 / f.required_bytes as f64,
                feasible: f.feasible,
                budget_bytes,
            });
        }
    }
    rows
}
