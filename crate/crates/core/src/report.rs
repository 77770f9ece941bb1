//! Stable text renderings: sweep CSV, single-point JSON and what-if CSV.
//! Times are microseconds with three decimals, speedups four significant
//! digits.

use std::fmt::Write as _;

use serde_json::{json, Value};

use crate::schedule::{ScheduleEstimate, SweepRow, WhatIfRow};
use crate::workload::WorkloadConfig;

pub const SWEEP_CSV_HEADER: &str = "sq,n_heads,t_baseline_us,t_overlap_us,speedup,region,t_rng_exposed_us,gemm_bottleneck,attn_bottleneck,rng_bottleneck";

pub const WHATIF_CSV_HEADER: &str =
    "sq,n_heads,mma_factor,speedup_base,speedup_scaled,delta,region_base,region_scaled";

pub fn fmt_us(seconds: f64) -> String {
    format!("{:.3}", seconds * 1e6)
}

/// Four significant digits, fixed notation.
pub fn fmt_sig4(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let digits = |v: f64| v.abs().log10().floor() as i32 + 1;
    let mut decimals = (4 - digits(x)).max(0) as usize;
    let s = format!("{x:.decimals$}");
    // rounding can carry into a new digit (9.9996 -> 10.000)
    let rounded: f64 = s.parse().unwrap_or(x);
    if digits(rounded) > digits(x) && decimals > 0 {
        decimals -= 1;
        return format!("{x:.decimals$}");
    }
    s
}

fn round_to(x: f64, s: String) -> Value {
    s.parse::<f64>().map(Value::from).unwrap_or(Value::from(x))
}

fn us(seconds: f64) -> Value {
    round_to(seconds, fmt_us(seconds))
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(SWEEP_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let e = &r.estimate;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.sq,
            r.n_heads,
            fmt_us(e.t_baseline_s),
            fmt_us(e.t_overlap_s),
            fmt_sig4(e.speedup),
            e.region.as_str(),
            fmt_us(e.t_rng_exposed_s),
            e.gemm_bottleneck,
            e.attn_bottleneck,
            e.rng_bottleneck,
        );
    }
    out
}

pub fn estimate_json(est: &ScheduleEstimate, cfg: &WorkloadConfig, hardware: &str) -> Value {
    json!({
        "hardware": hardware,
        "strategy": est.strategy,
        "t_baseline_us": us(est.t_baseline_s),
        "t_overlap_us": us(est.t_overlap_s),
        "speedup": round_to(est.speedup, fmt_sig4(est.speedup)),
        "t_gemm_total_us": us(est.t_gemm_total_s),
        "t_rng_standalone_us": us(est.t_rng_standalone_s),
        "t_rng_exposed_us": us(est.t_rng_exposed_s),
        "t_attn_us": us(est.t_attn_s),
        "t_fused_us": us(est.t_fused_s),
        "region": est.region.as_str(),
        "gemm_bottleneck": est.gemm_bottleneck,
        "attn_bottleneck": est.attn_bottleneck,
        "rng_bottleneck": est.rng_bottleneck,
        "fused_bottleneck": est.fused_bottleneck,
        "workload": cfg,
    })
}

pub fn whatif_csv(rows: &[WhatIfRow]) -> String {
    let mut out = String::new();
    out.push_str(WHATIF_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{:.4},{},{}",
            r.sq,
            r.n_heads,
            r.mma_factor,
            fmt_sig4(r.speedup_base),
            fmt_sig4(r.speedup_scaled),
            r.delta(),
            r.region_base.as_str(),
            r.region_scaled.as_str(),
        );
    }
    out
}
