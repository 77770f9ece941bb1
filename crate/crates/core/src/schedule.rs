//! Composition of kernel estimates into baseline and overlapped block
//! runtimes, plus region classification, grid sweeps and hardware what-ifs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::{
    attention_demand_for_rows, fuse, gemm_demand, rng_demand, runtime, CostTable,
    HardwareConfig, KernelEstimate, Limiter,
};
use crate::error::{Error, Result};
use crate::strategy::{FusedBaseline, Overlap, Pipelined, ScheduleStrategy, Timeline};
use crate::workload::{gemm_shapes_for_rows, WorkloadConfig};

/// Interference and overhead factors measured on silicon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFactors {
    /// GEMM runtime multiplier while RNG runs alongside.
    pub gemm_under_rng: f64,
    /// RNG rate divisor while GEMM runs alongside (2.0 = half speed).
    pub rng_under_gemm: f64,
    /// Attention runtime multiplier for the element-dropping step.
    pub drop_overhead: f64,
    /// GEMM runtime multiplier for the register/shared-memory carve-out.
    pub carve_out: f64,
    /// Gap between consecutive chunks of a pipelined schedule, seconds.
    pub chunk_launch_s: f64,
}

impl Default for CalibrationFactors {
    fn default() -> Self {
        Self {
            gemm_under_rng: 1.04,
            rng_under_gemm: 2.0,
            drop_overhead: 1.12,
            carve_out: 1.005,
            chunk_launch_s: 2e-6,
        }
    }
}

impl CalibrationFactors {
    /// No interference and no dropping cost.
    pub fn neutral() -> Self {
        Self {
            gemm_under_rng: 1.0,
            rng_under_gemm: 1.0,
            drop_overhead: 1.0,
            carve_out: 1.0,
            chunk_launch_s: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (n, v) in [
            ("gemm_under_rng", self.gemm_under_rng),
            ("rng_under_gemm", self.rng_under_gemm),
            ("drop_overhead", self.drop_overhead),
            ("carve_out", self.carve_out),
        ] {
            if !(v.is_finite() && v >= 1.0) {
                return Err(Error::InvalidParameter(format!("{n} must be >= 1.0, got {v}")));
            }
        }
        if !(self.chunk_launch_s.is_finite() && self.chunk_launch_s >= 0.0) {
            return Err(Error::InvalidParameter("chunk_launch_s must be >= 0".into()));
        }
        Ok(())
    }
}

/// Default share of baseline time above which a point counts as GEMM-dominated.
pub const DEFAULT_GEMM_THRESHOLD: f64 = 0.6;

/// Hardware, cost coefficients and calibration bundled for evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfModel {
    pub hw: HardwareConfig,
    pub ct: CostTable,
    pub cal: CalibrationFactors,
    /// Every kernel's demand is divided by this (even split across GPUs).
    #[serde(default = "one")]
    pub demand_divisor: f64,
    #[serde(default = "default_threshold")]
    pub gemm_threshold: f64,
}

fn one() -> f64 {
    1.0
}
fn default_threshold() -> f64 {
    DEFAULT_GEMM_THRESHOLD
}

/// Per-kernel estimates for one block.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct KernelSet {
    pub gemms: [KernelEstimate; 4],
    pub attention: KernelEstimate,
    pub rng: KernelEstimate,
    pub fused: KernelEstimate,
}

impl KernelSet {
    pub fn gemm_total_s(&self) -> f64 {
        self.gemms.iter().map(|g| g.runtime_s).sum()
    }

    /// Bottleneck of the longest-running GEMM.
    pub fn gemm_bottleneck(&self) -> Limiter {
        self.gemms
            .iter()
            .fold(&self.gemms[0], |a, b| if b.runtime_s > a.runtime_s { b } else { a })
            .bottleneck
    }
}

impl PerfModel {
    pub fn new(hw: HardwareConfig, ct: CostTable, cal: CalibrationFactors) -> Result<Self> {
        hw.validate()?;
        ct.validate()?;
        cal.validate()?;
        Ok(Self {
            hw,
            ct,
            cal,
            demand_divisor: 1.0,
            gemm_threshold: DEFAULT_GEMM_THRESHOLD,
        })
    }

    pub fn gh100() -> Self {
        Self::new(HardwareConfig::gh100(), CostTable::gh100(), CalibrationFactors::default())
            .expect("built-in preset is valid")
    }

    pub fn with_hardware(&self, hw: HardwareConfig) -> Self {
        Self { hw, ..self.clone() }
    }

    pub fn with_divisor(&self, divisor: f64) -> Self {
        Self {
            demand_divisor: divisor,
            ..self.clone()
        }
    }

    pub fn kernels(&self, cfg: &WorkloadConfig) -> Result<KernelSet> {
        self.kernels_for_rows(cfg, cfg.seq_len)
    }

    /// Kernel estimates for `rows` of the sequence (a pipeline chunk).
    pub fn kernels_for_rows(&self, cfg: &WorkloadConfig, rows: u64) -> Result<KernelSet> {
        cfg.validate()?;
        let scale = 1.0 / self.demand_divisor;
        let est = |d: crate::cost::DemandVector| runtime(&d.scale(scale), &self.hw);
        let shapes = gemm_shapes_for_rows(cfg, cfg.batch * rows);
        let gemms = shapes.map(|s| est(gemm_demand(&s, cfg, &self.ct)));
        let attn = attention_demand_for_rows(cfg, rows, &self.ct);
        let elems = cfg.batch * cfg.n_heads * rows * cfg.seq_len;
        let rng = rng_demand(elems, cfg.philox_rounds, &self.ct);
        Ok(KernelSet {
            gemms,
            attention: est(attn),
            rng: est(rng),
            fused: est(fuse(&attn, &rng)),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    GemmDominated,
    Balanced,
    RngExposed,
}

impl Region {
    pub fn as_str(&self) -> &'static str {
        match self {
            Region::GemmDominated => "GemmDominated",
            Region::Balanced => "Balanced",
            Region::RngExposed => "RngExposed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScheduleEstimate {
    pub strategy: String,
    pub t_baseline_s: f64,
    pub t_overlap_s: f64,
    pub speedup: f64,
    pub t_gemm_total_s: f64,
    pub t_rng_standalone_s: f64,
    pub t_rng_exposed_s: f64,
    pub t_attn_s: f64,
    pub t_fused_s: f64,
    pub region: Region,
    pub gemm_bottleneck: Limiter,
    pub attn_bottleneck: Limiter,
    pub rng_bottleneck: Limiter,
    pub fused_bottleneck: Limiter,
}

pub fn classify_region(est: &ScheduleEstimate, gemm_threshold: f64) -> Region {
    if est.t_rng_exposed_s > 0.0 {
        Region::RngExposed
    } else if est.t_gemm_total_s / est.t_baseline_s > gemm_threshold {
        Region::GemmDominated
    } else {
        Region::Balanced
    }
}

/// Compares `candidate` against the fused baseline.
pub fn estimate_with(
    model: &PerfModel,
    cfg: &WorkloadConfig,
    candidate: &dyn ScheduleStrategy,
) -> Result<ScheduleEstimate> {
    let k = model.kernels(cfg)?;
    let base = FusedBaseline.timeline(model, cfg)?;
    let cand = candidate.timeline(model, cfg)?;
    let mut est = ScheduleEstimate {
        strategy: candidate.name().to_string(),
        t_baseline_s: base.total_s,
        t_overlap_s: cand.total_s,
        speedup: base.total_s / cand.total_s,
        t_gemm_total_s: k.gemm_total_s(),
        t_rng_standalone_s: k.rng.runtime_s,
        t_rng_exposed_s: cand.rng_exposed_s,
        t_attn_s: k.attention.runtime_s,
        t_fused_s: k.fused.runtime_s,
        region: Region::Balanced,
        gemm_bottleneck: k.gemm_bottleneck(),
        attn_bottleneck: k.attention.bottleneck,
        rng_bottleneck: k.rng.bottleneck,
        fused_bottleneck: k.fused.bottleneck,
    };
    est.region = classify_region(&est, model.gemm_threshold);
    Ok(est)
}

/// Baseline vs. plain overlap.
pub fn estimate(model: &PerfModel, cfg: &WorkloadConfig) -> Result<ScheduleEstimate> {
    estimate_with(model, cfg, &Overlap)
}

pub fn baseline(model: &PerfModel, cfg: &WorkloadConfig) -> Result<Timeline> {
    FusedBaseline.timeline(model, cfg)
}

pub fn overlap(model: &PerfModel, cfg: &WorkloadConfig) -> Result<Timeline> {
    Overlap.timeline(model, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PipelineResult {
    pub runtime_s: f64,
    pub peak_mask_bytes: u64,
}

pub fn pipeline_schedule(model: &PerfModel, cfg: &WorkloadConfig, chunks: u64) -> Result<PipelineResult> {
    let t = Pipelined::new(chunks)?.timeline(model, cfg)?;
    let rows = cfg.seq_len / chunks;
    let bits = cfg.batch * cfg.n_heads * rows * cfg.seq_len;
    Ok(PipelineResult {
        runtime_s: t.total_s,
        peak_mask_bytes: bits.div_ceil(8),
    })
}

/// Scales the MMA-class throughputs (math, L2, HBM, RF); issue and the
/// ALU/MUFU/FMA pipes stay as they are.
pub fn whatif_scale(hw: &HardwareConfig, mma_factor: f64) -> Result<HardwareConfig> {
    if !(mma_factor.is_finite() && mma_factor > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "MMA scale factor must be > 0, got {mma_factor}"
        )));
    }
    Ok(HardwareConfig {
        name: format!("{}x{}", hw.name, mma_factor),
        mma_flops: hw.mma_flops * mma_factor,
        l2_bw: hw.l2_bw * mma_factor,
        hbm_bw: hw.hbm_bw * mma_factor,
        rf_bw: hw.rf_bw * mma_factor,
        ..hw.clone()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub seq_lens: Vec<u64>,
    pub n_heads: Vec<u64>,
}

impl SweepGrid {
    /// SQ 2K..64K (powers of two) by nH 48..128 (step 16).
    pub fn standard() -> Self {
        Self {
            seq_lens: vec![2048, 4096, 8192, 16384, 32768, 65536],
            n_heads: vec![48, 64, 80, 96, 112, 128],
        }
    }

    pub fn points(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.seq_lens
            .iter()
            .flat_map(move |&sq| self.n_heads.iter().map(move |&nh| (sq, nh)))
    }

    pub fn len(&self) -> usize {
        self.seq_lens.len() * self.n_heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub sq: u64,
    pub n_heads: u64,
    #[serde(flatten)]
    pub estimate: ScheduleEstimate,
}

/// One row per grid point, SQ-major. Points are evaluated in parallel.
pub fn sweep(
    grid: &SweepGrid,
    template: &WorkloadConfig,
    model: &PerfModel,
    candidate: &dyn ScheduleStrategy,
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("sweep grid is empty".into()));
    }
    let points: Vec<_> = grid.points().collect();
    points
        .par_iter()
        .map(|&(sq, nh)| {
            let cfg = template.with_seq_len(sq).with_heads(nh);
            Ok(SweepRow {
                sq,
                n_heads: nh,
                estimate: estimate_with(model, &cfg, candidate)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WhatIfRow {
    pub sq: u64,
    pub n_heads: u64,
    pub mma_factor: f64,
    pub speedup_base: f64,
    pub speedup_scaled: f64,
    pub region_base: Region,
    pub region_scaled: Region,
}

impl WhatIfRow {
    pub fn delta(&self) -> f64 {
        self.speedup_scaled - self.speedup_base
    }
}

/// Paired sweeps on the given hardware and on its MMA-scaled variant.
pub fn whatif_sweep(
    grid: &SweepGrid,
    template: &WorkloadConfig,
    model: &PerfModel,
    mma_factor: f64,
) -> Result<Vec<WhatIfRow>> {
    let scaled = model.with_hardware(whatif_scale(&model.hw, mma_factor)?);
    let a = sweep(grid, template, model, &Overlap)?;
    let b = sweep(grid, template, &scaled, &Overlap)?;
    Ok(a.iter()
        .zip(&b)
        .map(|(x, y)| WhatIfRow {
            sq: x.sq,
            n_heads: x.n_heads,
            mma_factor,
            speedup_base: x.estimate.speedup,
            speedup_scaled: y.estimate.speedup,
            region_base: x.estimate.region,
            region_scaled: y.estimate.region,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> WorkloadConfig {
        WorkloadConfig::new(1024, 16, 64)
    }

    #[test]
    fn baseline_without_rng_is_gemm_plus_dropping() {
        let mut m = PerfModel::gh100();
        m.ct.rng_alu_per_round = 0.0;
        m.ct.rng_alu_fixed = 0.0;
        m.ct.rng_fma_per_round = 0.0;
        m.ct.rng_issue_fixed = 0.0;
        m.ct.rng_issue_per_round = 0.0;
        let cfg = small();
        let k = m.kernels(&cfg).unwrap();
        // the mask store still touches HBM; attention never touches it
        assert_eq!(k.fused.runtime_s, k.attention.runtime_s);
        let b = baseline(&m, &cfg).unwrap();
        let expect = k.gemm_total_s() + k.attention.runtime_s * m.cal.drop_overhead;
        assert!((b.total_s - expect).abs() <= 1e-15 * expect);
    }

    #[test]
    fn zero_rng_overlap_formula() {
        let mut m = PerfModel::gh100();
        m.ct = CostTable {
            rng_alu_per_round: 0.0,
            rng_alu_fixed: 0.0,
            rng_fma_per_round: 0.0,
            rng_issue_fixed: 0.0,
            rng_issue_per_round: 0.0,
            ..CostTable::gh100()
        };
        m.hw.hbm_bw = 1e30;
        let cfg = small();
        let k = m.kernels(&cfg).unwrap();
        let o = overlap(&m, &cfg).unwrap();
        let expect = k.gemm_total_s() * 1.005 * 1.04 + k.attention.runtime_s * 1.12;
        assert!((o.total_s - expect).abs() <= 1e-12 * expect);
        assert_eq!(o.rng_exposed_s, 0.0);
    }

    #[test]
    fn exposed_rng_grows_linearly() {
        let m = PerfModel::gh100();
        let gemm = 1e-3;
        let (_, e1) = crate::strategy::overlap_span(&m, gemm, 1.0);
        let (_, e2) = crate::strategy::overlap_span(&m, gemm, 2.0);
        assert!(((e2 - e1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn region_rules() {
        let m = PerfModel::gh100();
        let mut est = estimate(&m, &small()).unwrap();
        est.t_rng_exposed_s = 1e-9;
        assert_eq!(classify_region(&est, 0.0), Region::RngExposed);
        assert_eq!(classify_region(&est, 1.0), Region::RngExposed);
        est.t_rng_exposed_s = 0.0;
        est.t_gemm_total_s = est.t_baseline_s;
        assert_eq!(classify_region(&est, 0.6), Region::GemmDominated);
        est.t_gemm_total_s = 0.1 * est.t_baseline_s;
        assert_eq!(classify_region(&est, 0.6), Region::Balanced);
    }

    #[test]
    fn single_point_sweep_matches_direct_call() {
        let m = PerfModel::gh100();
        let grid = SweepGrid {
            seq_lens: vec![4096],
            n_heads: vec![64],
        };
        let rows = sweep(&grid, &WorkloadConfig::llama2(), &m, &Overlap).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].estimate, estimate(&m, &WorkloadConfig::llama2()).unwrap());
        let empty = SweepGrid {
            seq_lens: vec![],
            n_heads: vec![64],
        };
        assert!(sweep(&empty, &WorkloadConfig::llama2(), &m, &Overlap).is_err());
    }

    #[test]
    fn sweep_is_sq_major() {
        let grid = SweepGrid {
            seq_lens: vec![1024, 2048],
            n_heads: vec![8, 16, 32],
        };
        let rows = sweep(&grid, &small(), &PerfModel::gh100(), &Overlap).unwrap();
        let order: Vec<_> = rows.iter().map(|r| (r.sq, r.n_heads)).collect();
        assert_eq!(
            order,
            vec![(1024, 8), (1024, 16), (1024, 32), (2048, 8), (2048, 16), (2048, 32)]
        );
    }

    #[test]
    fn whatif_identity_and_gemm_halving() {
        let hw = HardwareConfig::gh100();
        let same = whatif_scale(&hw, 1.0).unwrap();
        assert_eq!(HardwareConfig { name: hw.name.clone(), ..same }, hw);
        assert!(whatif_scale(&hw, 0.0).is_err());
        assert!(whatif_scale(&hw, -2.0).is_err());

        let m = PerfModel::gh100();
        let fast = m.with_hardware(whatif_scale(&hw, 2.0).unwrap());
        let cfg = WorkloadConfig::llama2();
        let g1 = m.kernels(&cfg).unwrap().gemm_total_s();
        let g2 = fast.kernels(&cfg).unwrap().gemm_total_s();
        assert!((g1 / g2 - 2.0).abs() < 1e-12);
        let scaled = whatif_scale(&hw, 2.0).unwrap();
        assert_eq!(scaled.issue_rate, hw.issue_rate);
        assert_eq!(scaled.alu_rate, hw.alu_rate);
        assert_eq!(scaled.mufu_rate, hw.mufu_rate);
        assert_eq!(scaled.fma_rate, hw.fma_rate);
    }

    #[test]
    fn pipeline_degenerate_cases() {
        let m = PerfModel::gh100();
        let cfg = WorkloadConfig::llama2();
        let p1 = pipeline_schedule(&m, &cfg, 1).unwrap();
        assert_eq!(p1.runtime_s, overlap(&m, &cfg).unwrap().total_s);
        assert_eq!(p1.peak_mask_bytes, 64 * 4096 * 4096 / 8);
        let pn = pipeline_schedule(&m, &cfg, 4096).unwrap();
        assert_eq!(pn.peak_mask_bytes, 64 * 4096 / 8);
        assert!(matches!(
            pipeline_schedule(&m, &cfg, 3),
            Err(Error::NotDivisible { .. })
        ));
        assert!(pipeline_schedule(&m, &cfg, 0).is_err());
    }

    #[test]
    fn bad_calibration_rejected() {
        let cal = CalibrationFactors {
            drop_overhead: 0.9,
            ..Default::default()
        };
        assert!(PerfModel::new(HardwareConfig::gh100(), CostTable::gh100(), cal).is_err());
    }
}
