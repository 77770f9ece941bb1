//! Limiter model: per-limiter demand totals and the max-over-limiters
//! runtime bound.
//!
//! A kernel's runtime is the largest of `demand / throughput` over the eight
//! hardware limiters. Fused kernels add their demand vectors before the max
//! is taken, which is what makes RNG expensive inside attention: both lean
//! on the issue stage.

use std::fmt;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::workload::{attention_work_for_rows, GemmShape, WorkloadConfig};

/// Hardware limiters, in tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Limiter {
    Mma,
    L2,
    Hbm,
    Rf,
    Issue,
    Alu,
    Mufu,
    Fma,
}

impl Limiter {
    pub const ALL: [Limiter; 8] = [
        Limiter::Mma,
        Limiter::L2,
        Limiter::Hbm,
        Limiter::Rf,
        Limiter::Issue,
        Limiter::Alu,
        Limiter::Mufu,
        Limiter::Fma,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Limiter::Mma => "mma",
            Limiter::L2 => "l2",
            Limiter::Hbm => "hbm",
            Limiter::Rf => "rf",
            Limiter::Issue => "issue",
            Limiter::Alu => "alu",
            Limiter::Mufu => "mufu",
            Limiter::Fma => "fma",
        }
    }
}

impl fmt::Display for Limiter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Chip-wide throughputs. Rates are per second; instruction and op counts
/// are per thread.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardwareConfig {
    pub name: String,
    /// Tensor-core math, flop/s at the workload precision.
    pub mma_flops: f64,
    pub l2_bw: f64,
    pub hbm_bw: f64,
    pub rf_bw: f64,
    pub issue_rate: f64,
    pub alu_rate: f64,
    pub mufu_rate: f64,
    pub fma_rate: f64,
    /// Register-file share handed to a co-running RNG kernel. Reported only;
    /// its runtime effect is the carve-out calibration factor.
    pub rf_carveout: f64,
    pub smem_carveout: f64,
}

impl HardwareConfig {
    /// GH100-like preset (132 SMs at 1.83 GHz, FP8).
    ///
    /// Issue, ALU, MUFU and FMA rates are datasheet-style per-SM lane counts
    /// times SM count and clock. MMA, L2 and RF are effective values fitted so
    /// the model lands on the measured speedups; they are not peak numbers.
    pub fn gh100() -> Self {
        const SMS: f64 = 132.0;
        const CLOCK: f64 = 1.83e9;
        Self {
            name: "gh100".into(),
            mma_flops: 1.56e15,
            l2_bw: 2.0e13,
            hbm_bw: 3.35e12,
            rf_bw: 3.546e14,
            issue_rate: SMS * CLOCK * 128.0,
            alu_rate: SMS * CLOCK * 64.0,
            mufu_rate: SMS * CLOCK * 16.0,
            fma_rate: SMS * CLOCK * 128.0,
            rf_carveout: 0.06,
            smem_carveout: 0.07,
        }
    }

    pub fn throughput(&self, l: Limiter) -> f64 {
        match l {
            Limiter::Mma => self.mma_flops,
            Limiter::L2 => self.l2_bw,
            Limiter::Hbm => self.hbm_bw,
            Limiter::Rf => self.rf_bw,
            Limiter::Issue => self.issue_rate,
            Limiter::Alu => self.alu_rate,
            Limiter::Mufu => self.mufu_rate,
            Limiter::Fma => self.fma_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for l in Limiter::ALL {
            let t = self.throughput(l);
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "hardware `{}`: {l} throughput must be > 0, got {t}",
                    self.name
                )));
            }
        }
        for (n, v) in [("rf_carveout", self.rf_carveout), ("smem_carveout", self.smem_carveout)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::InvalidParameter(format!("{n} must be in [0, 1), got {v}")));
            }
        }
        Ok(())
    }
}

/// Work placed on each limiter by one kernel.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DemandVector {
    pub mma_flops: f64,
    pub l2_bytes: f64,
    pub hbm_bytes: f64,
    pub rf_bytes: f64,
    pub issue_insts: f64,
    pub alu_ops: f64,
    pub mufu_ops: f64,
    pub fma_ops: f64,
}

impl DemandVector {
    pub fn get(&self, l: Limiter) -> f64 {
        match l {
            Limiter::Mma => self.mma_flops,
            Limiter::L2 => self.l2_bytes,
            Limiter::Hbm => self.hbm_bytes,
            Limiter::Rf => self.rf_bytes,
            Limiter::Issue => self.issue_insts,
            Limiter::Alu => self.alu_ops,
            Limiter::Mufu => self.mufu_ops,
            Limiter::Fma => self.fma_ops,
        }
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            mma_flops: f(self.mma_flops),
            l2_bytes: f(self.l2_bytes),
            hbm_bytes: f(self.hbm_bytes),
            rf_bytes: f(self.rf_bytes),
            issue_insts: f(self.issue_insts),
            alu_ops: f(self.alu_ops),
            mufu_ops: f(self.mufu_ops),
            fma_ops: f(self.fma_ops),
        }
    }

    pub fn scale(&self, factor: f64) -> Self {
        self.map(|v| v * factor)
    }

    pub fn is_nonnegative(&self) -> bool {
        Limiter::ALL.iter().all(|&l| self.get(l) >= 0.0)
    }
}

impl Add for DemandVector {
    type Output = DemandVector;

    fn add(self, o: DemandVector) -> DemandVector {
        DemandVector {
            mma_flops: self.mma_flops + o.mma_flops,
            l2_bytes: self.l2_bytes + o.l2_bytes,
            hbm_bytes: self.hbm_bytes + o.hbm_bytes,
            rf_bytes: self.rf_bytes + o.rf_bytes,
            issue_insts: self.issue_insts + o.issue_insts,
            alu_ops: self.alu_ops + o.alu_ops,
            mufu_ops: self.mufu_ops + o.mufu_ops,
            fma_ops: self.fma_ops + o.fma_ops,
        }
    }
}

impl AddAssign for DemandVector {
    fn add_assign(&mut self, o: DemandVector) {
        *self = *self + o;
    }
}

/// Componentwise sum: the demand of two kernels fused into one.
pub fn fuse(a: &DemandVector, b: &DemandVector) -> DemandVector {
    *a + *b
}

/// Calibration coefficients that turn work counts into limiter demand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostTable {
    pub gemm_tile_m: u64,
    pub gemm_tile_n: u64,
    pub gemm_tile_k: u64,
    pub gemm_issue_per_flop: f64,
    pub gemm_rf_per_flop: f64,
    /// Multipliers on the tile-model L2 and HBM byte counts.
    pub gemm_l2_scale: f64,
    pub gemm_hbm_scale: f64,

    pub attn_issue_per_elem: f64,
    pub attn_rf_per_elem: f64,
    pub attn_alu_per_elem: f64,
    pub attn_issue_per_flop: f64,
    pub attn_rf_per_flop: f64,
    pub attn_alu_per_flop: f64,

    /// Philox work per 4-word block, per round.
    pub rng_fma_per_round: f64,
    pub rng_alu_per_round: f64,
    pub rng_issue_per_round: f64,
    /// Philox work per block that does not scale with rounds (counter
    /// setup, threshold compares, bit packing, stores).
    pub rng_alu_fixed: f64,
    pub rng_issue_fixed: f64,
    /// Extra HBM bytes per stand-alone mask write, on top of one bit per element.
    pub mask_store_overhead: f64,
}

impl Default for CostTable {
    fn default() -> Self {
        Self::gh100()
    }
}

impl CostTable {
    /// Coefficients fitted against the `gh100` hardware preset.
    pub fn gh100() -> Self {
        Self {
            gemm_tile_m: 128,
            gemm_tile_n: 128,
            gemm_tile_k: 128,
            gemm_issue_per_flop: 1.0 / 512.0,
            gemm_rf_per_flop: 1.0 / 16.0,
            gemm_l2_scale: 1.0,
            gemm_hbm_scale: 1.0,

            attn_issue_per_elem: 34.0,
            attn_rf_per_elem: 390.0,
            attn_alu_per_elem: 12.0,
            attn_issue_per_flop: 0.0685,
            attn_rf_per_flop: 1.0,
            attn_alu_per_flop: 0.0,

            rng_fma_per_round: 4.0,
            rng_alu_per_round: 6.0,
            rng_issue_per_round: 13.0,
            rng_alu_fixed: 30.0,
            rng_issue_fixed: 60.0,
            mask_store_overhead: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [
            ("gemm_issue_per_flop", self.gemm_issue_per_flop),
            ("gemm_rf_per_flop", self.gemm_rf_per_flop),
            ("gemm_l2_scale", self.gemm_l2_scale),
            ("gemm_hbm_scale", self.gemm_hbm_scale),
            ("attn_issue_per_elem", self.attn_issue_per_elem),
            ("attn_rf_per_elem", self.attn_rf_per_elem),
            ("attn_alu_per_elem", self.attn_alu_per_elem),
            ("attn_issue_per_flop", self.attn_issue_per_flop),
            ("attn_rf_per_flop", self.attn_rf_per_flop),
            ("attn_alu_per_flop", self.attn_alu_per_flop),
            ("rng_fma_per_round", self.rng_fma_per_round),
            ("rng_alu_per_round", self.rng_alu_per_round),
            ("rng_issue_per_round", self.rng_issue_per_round),
            ("rng_alu_fixed", self.rng_alu_fixed),
            ("rng_issue_fixed", self.rng_issue_fixed),
            ("mask_store_overhead", self.mask_store_overhead),
        ];
        for (name, v) in vals {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be >= 0, got {v}")));
            }
        }
        if self.gemm_tile_m == 0 || self.gemm_tile_n == 0 || self.gemm_tile_k == 0 {
            return Err(Error::InvalidParameter("GEMM tile dimensions must be >= 1".into()));
        }
        Ok(())
    }
}

/// GEMM demand under a single-pass tiled traffic model.
pub fn gemm_demand(shape: &GemmShape, cfg: &WorkloadConfig, ct: &CostTable) -> DemandVector {
    let (m, n, k) = (shape.m as f64, shape.n as f64, shape.k as f64);
    let pb = cfg.precision_bytes as f64;
    let flops = shape.flops();
    let n_tiles = shape.n.div_ceil(ct.gemm_tile_n) as f64;
    let m_tiles = shape.m.div_ceil(ct.gemm_tile_m) as f64;
    let l2 = pb * (m * k * n_tiles + k * n * m_tiles + 2.0 * m * n);
    let hbm = pb * (m * k + k * n + m * n);
    DemandVector {
        mma_flops: flops,
        l2_bytes: l2 * ct.gemm_l2_scale,
        hbm_bytes: hbm * ct.gemm_hbm_scale,
        rf_bytes: flops * ct.gemm_rf_per_flop,
        issue_insts: flops * ct.gemm_issue_per_flop,
        ..Default::default()
    }
}

pub fn attention_demand_for_rows(cfg: &WorkloadConfig, rows: u64, ct: &CostTable) -> DemandVector {
    let w = attention_work_for_rows(cfg, rows);
    let e = w.softmax_elems;
    let f = w.mma_flops;
    DemandVector {
        mma_flops: f,
        rf_bytes: e * ct.attn_rf_per_elem + f * ct.attn_rf_per_flop,
        issue_insts: e * ct.attn_issue_per_elem + f * ct.attn_issue_per_flop,
        alu_ops: e * ct.attn_alu_per_elem + f * ct.attn_alu_per_flop,
        mufu_ops: e,
        ..Default::default()
    }
}

/// Stand-alone attention forward without dropout.
pub fn attention_demand(cfg: &WorkloadConfig, ct: &CostTable) -> DemandVector {
    attention_demand_for_rows(cfg, cfg.seq_len, ct)
}

/// Philox mask generation for `elem_count` elements (one word each, four
/// per block) plus the one-bit-per-element store.
pub fn rng_demand(elem_count: u64, rounds: u32, ct: &CostTable) -> DemandVector {
    if elem_count == 0 {
        return DemandVector::default();
    }
    let blocks = elem_count.div_ceil(4) as f64;
    let r = rounds as f64;
    DemandVector {
        fma_ops: blocks * r * ct.rng_fma_per_round,
        alu_ops: blocks * (r * ct.rng_alu_per_round + ct.rng_alu_fixed),
        issue_insts: blocks * (r * ct.rng_issue_per_round + ct.rng_issue_fixed),
        hbm_bytes: elem_count as f64 / 8.0 + ct.mask_store_overhead,
        ..Default::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelEstimate {
    pub runtime_s: f64,
    pub bottleneck: Limiter,
    pub demand: DemandVector,
    /// Time on each limiter, in [`Limiter::ALL`] order.
    pub limiter_times_s: [f64; 8],
}

impl KernelEstimate {
    pub fn time_on(&self, l: Limiter) -> f64 {
        self.limiter_times_s[l as usize]
    }
}

pub fn runtime(d: &DemandVector, hw: &HardwareConfig) -> KernelEstimate {
    let mut times = [0.0; 8];
    let mut best = Limiter::Mma;
    let mut best_t = 0.0;
    for (slot, l) in Limiter::ALL.into_iter().enumerate() {
        let t = d.get(l) / hw.throughput(l);
        times[slot] = t;
        if t > best_t {
            best_t = t;
            best = l;
        }
    }
    KernelEstimate {
        runtime_s: best_t,
        bottleneck: best,
        demand: *d,
        limiter_times_s: times,
    }
}
