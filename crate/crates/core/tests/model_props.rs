//! Properties of the limiter model and the schedules built on it.

use dropsched::capacity::mask_bytes;
use dropsched::cost::{attention_demand, gemm_demand, rng_demand};
use dropsched::schedule::{baseline, overlap, pipeline_schedule, whatif_sweep};
use dropsched::strategy::{Overlap, Pipelined};
use dropsched::workload::{attention_work, gemm_shapes, rng_elements};
use dropsched::*;

fn grid_rows(model: &PerfModel) -> Vec<SweepRow> {
    sweep(&SweepGrid::standard(), &WorkloadConfig::llama2(), model, &Overlap).unwrap()
}

#[test]
fn shipped_preset_bottlenecks_hold_over_grid_and_scaled_hardware() {
    let m = PerfModel::gh100();
    let m2 = m.with_hardware(whatif_scale(&m.hw, 2.0).unwrap());
    for model in [&m, &m2] {
        for r in grid_rows(model) {
            let e = &r.estimate;
            assert_eq!(e.gemm_bottleneck, Limiter::Mma, "{}x{}", r.sq, r.n_heads);
            assert_eq!(e.fused_bottleneck, Limiter::Issue);
            assert!(matches!(e.rng_bottleneck, Limiter::Issue | Limiter::Alu));
            assert!(matches!(e.attn_bottleneck, Limiter::Issue | Limiter::Rf));
        }
    }
    let cfg = WorkloadConfig::llama2();
    for s in gemm_shapes(&cfg) {
        assert_eq!(runtime(&gemm_demand(&s, &cfg, &m.ct), &m.hw).bottleneck, Limiter::Mma);
    }
}

#[test]
fn work_scales_exactly() {
    let c = WorkloadConfig::new(4096, 64, 128);
    let flops = |c: &WorkloadConfig| gemm_shapes(c).iter().map(|s| s.flops()).sum::<f64>();
    assert_eq!(flops(&c.with_heads(128)), 4.0 * flops(&c));
    assert_eq!(flops(&c.with_seq_len(8192)), 2.0 * flops(&c));
    for s in gemm_shapes(&c).iter().zip(gemm_shapes(&c.with_heads(128))) {
        assert_eq!(s.1.flops(), 4.0 * s.0.flops());
    }
    let a = attention_work(&c);
    let a2 = attention_work(&c.with_seq_len(8192));
    assert_eq!(a2.mma_flops, 4.0 * a.mma_flops);
    assert_eq!(a2.softmax_elems, 4.0 * a.softmax_elems);
    assert_eq!(rng_elements(&c.with_seq_len(8192)), 4 * rng_elements(&c));
    assert_eq!(rng_elements(&c.with_heads(128)), 2 * rng_elements(&c));

    let ct = CostTable::gh100();
    let d = attention_demand(&c, &ct);
    let d2 = attention_demand(&c.with_seq_len(8192), &ct);
    for l in Limiter::ALL {
        assert_eq!(d2.get(l), 4.0 * d.get(l), "{l}");
    }
}

#[test]
fn fma_ratios_are_exact() {
    let ct = CostTable::gh100();
    let f = |r| rng_demand(1 << 20, r, &ct).fma_ops;
    assert_eq!(f(5) / f(7), 5.0 / 7.0);
    assert_eq!(f(3) / f(7), 3.0 / 7.0);
}

#[test]
fn rng_runtime_ratios_bracket_silicon() {
    let m = PerfModel::gh100();
    let t = |r| runtime(&rng_demand(1 << 28, r, &m.ct), &m.hw).runtime_s;
    let (r5, r3) = (t(5) / t(7), t(3) / t(7));
    assert!((0.76..=0.86).contains(&r5), "{r5}");
    assert!((0.62..=0.72).contains(&r3), "{r3}");
}

#[test]
fn speedup_slices_are_unimodal_and_rng_exposure_persists() {
    let rows = grid_rows(&PerfModel::gh100());
    for nh in SweepGrid::standard().n_heads {
        let slice: Vec<_> = rows.iter().filter(|r| r.n_heads == nh).collect();
        let mut falling = false;
        for w in slice.windows(2) {
            let (a, b) = (w[0].estimate.speedup, w[1].estimate.speedup);
            if b < a {
                falling = true;
            }
            assert!(!(falling && b > a), "nH={nh} rises again at SQ={}", w[1].sq);
        }
        let mut exposed = false;
        for r in &slice {
            let now = r.estimate.region == Region::RngExposed;
            assert!(!(exposed && !now), "nH={nh} leaves RngExposed at SQ={}", r.sq);
            exposed |= now;
        }
    }
}

#[test]
fn maximum_speedup_is_not_gemm_dominated() {
    let rows = grid_rows(&PerfModel::gh100());
    let best = rows
        .iter()
        .max_by(|a, b| a.estimate.speedup.total_cmp(&b.estimate.speedup))
        .unwrap();
    assert_eq!(best.estimate.region, Region::Balanced);
}

#[test]
fn hidden_rng_identity() {
    let mut m = PerfModel::gh100();
    m.cal = CalibrationFactors::neutral();
    for r in grid_rows(&m) {
        let e = &r.estimate;
        if e.t_rng_exposed_s == 0.0 {
            let lhs = e.t_baseline_s - e.t_overlap_s;
            let rhs = e.t_fused_s - e.t_attn_s;
            assert!((lhs - rhs).abs() <= 1e-12 * e.t_baseline_s, "{}x{}", r.sq, r.n_heads);
        }
    }
}

/// Holds wherever the RNG hides inside the GEMM window. Past that point an
/// RF-bound attention kernel absorbs less of the RNG than the exposed tail
/// costs, so the bound is not claimed there.
#[test]
fn overlap_never_regresses_beyond_gemm_interference() {
    let m = PerfModel::gh100();
    let k = m.cal.carve_out * m.cal.gemm_under_rng - 1.0;
    let mut checked = 0;
    for r in grid_rows(&m) {
        let e = &r.estimate;
        assert!(e.t_rng_exposed_s >= 0.0);
        assert_eq!(e.speedup, e.t_baseline_s / e.t_overlap_s);
        if e.t_rng_exposed_s == 0.0 {
            assert!(e.t_overlap_s <= e.t_baseline_s + k * e.t_gemm_total_s);
            checked += 1;
        }
    }
    assert!(checked >= 12);
}

#[test]
fn baseline_dominates_serial_gemm_plus_attention() {
    let m = PerfModel::gh100();
    for (sq, nh) in SweepGrid::standard().points() {
        let cfg = WorkloadConfig::new(sq, nh, 128);
        let k = m.kernels(&cfg).unwrap();
        assert!(baseline(&m, &cfg).unwrap().total_s >= k.gemm_total_s() + k.attention.runtime_s);
    }
}

#[test]
fn overlap_limits() {
    let mut m = PerfModel::gh100();
    let cfg = WorkloadConfig::llama2();
    let k = m.kernels(&cfg).unwrap();
    let window = k.gemm_total_s() * m.cal.carve_out * m.cal.gemm_under_rng;
    // no RNG work at all
    m.ct.rng_alu_per_round = 0.0;
    m.ct.rng_alu_fixed = 0.0;
    m.ct.rng_fma_per_round = 0.0;
    m.ct.rng_issue_per_round = 0.0;
    m.ct.rng_issue_fixed = 0.0;
    m.hw.hbm_bw = 1e30;
    let t = overlap(&m, &cfg).unwrap();
    let expect = window + k.attention.runtime_s * m.cal.drop_overhead;
    assert!((t.total_s - expect).abs() <= 1e-12 * expect);

    // huge RNG: the tail grows one for one
    let mut slow = PerfModel::gh100();
    let bump = |ct: &mut CostTable, f: f64| {
        ct.rng_alu_per_round *= f;
        ct.rng_alu_fixed *= f;
        ct.rng_issue_per_round *= f;
        ct.rng_issue_fixed *= f;
    };
    bump(&mut slow.ct, 1e3);
    let r0 = |m: &PerfModel| m.kernels(&cfg).unwrap().rng.runtime_s;
    let (a, ra) = (overlap(&slow, &cfg).unwrap(), r0(&slow));
    bump(&mut slow.ct, 2.0);
    let (b, rb) = (overlap(&slow, &cfg).unwrap(), r0(&slow));
    assert!(a.rng_exposed_s > 0.0);
    assert!(((b.rng_exposed_s - a.rng_exposed_s) - (rb - ra)).abs() <= 1e-9 * rb);
    assert!((b.total_s - rb) - (a.total_s - ra) < 1e-9 * rb);
}

#[test]
fn single_point_sweep_matches_direct_estimate() {
    let m = PerfModel::gh100();
    let grid = SweepGrid {
        seq_lens: vec![4096],
        n_heads: vec![64],
    };
    let rows = sweep(&grid, &WorkloadConfig::llama2(), &m, &Overlap).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].estimate, estimate(&m, &WorkloadConfig::llama2()).unwrap());
    let empty = SweepGrid { seq_lens: vec![], n_heads: vec![64] };
    assert!(sweep(&empty, &WorkloadConfig::llama2(), &m, &Overlap).is_err());
}

#[test]
fn pipelining_trades_time_for_footprint() {
    let m = PerfModel::gh100();
    let cfg = WorkloadConfig::llama2();
    let one = pipeline_schedule(&m, &cfg, 1).unwrap();
    assert_eq!(one.runtime_s, overlap(&m, &cfg).unwrap().total_s);
    assert_eq!(one.peak_mask_bytes, mask_bytes(&cfg));
    let mut prev = one;
    for c in [2, 4, 8] {
        let p = pipeline_schedule(&m, &cfg, c).unwrap();
        assert!(p.runtime_s >= prev.runtime_s);
        assert!(p.peak_mask_bytes < prev.peak_mask_bytes);
        prev = p;
    }
    let rows = pipeline_schedule(&m, &cfg, cfg.seq_len).unwrap();
    assert_eq!(rows.peak_mask_bytes, 64 * 4096 / 8);
    assert!(pipeline_schedule(&m, &cfg, 3).is_err());
    assert!(Pipelined::new(0).is_err());
}

#[test]
fn uniform_demand_split_keeps_speedup() {
    let m = PerfModel::gh100();
    for (sq, nh) in SweepGrid::standard().points() {
        let cfg = WorkloadConfig::new(sq, nh, 128);
        let whole = estimate(&m, &cfg).unwrap();
        for d in [2.0, 8.0, 16.0] {
            let part = estimate(&m.with_divisor(d), &cfg).unwrap();
            assert!((part.speedup / whole.speedup - 1.0).abs() <= 1e-9);
            assert_eq!(part.region, whole.region);
        }
    }
}

#[test]
fn whatif_unit_factor_is_identity() {
    let m = PerfModel::gh100();
    let hw = whatif_scale(&m.hw, 1.0).unwrap();
    for l in Limiter::ALL {
        assert_eq!(hw.throughput(l), m.hw.throughput(l));
    }
    assert!(whatif_scale(&m.hw, 0.0).is_err());
    let rows = whatif_sweep(&SweepGrid::standard(), &WorkloadConfig::llama2(), &m, 1.0).unwrap();
    assert!(rows.iter().all(|r| r.delta() == 0.0));
}

#[test]
fn doubling_mma_halves_gemm_time() {
    let m = PerfModel::gh100();
    let hw2 = whatif_scale(&m.hw, 2.0).unwrap();
    let cfg = WorkloadConfig::gpt3();
    for s in gemm_shapes(&cfg) {
        let d = gemm_demand(&s, &cfg, &m.ct);
        let (a, b) = (runtime(&d, &m.hw).runtime_s, runtime(&d, &hw2).runtime_s);
        assert!((a / b - 2.0).abs() < 1e-12);
    }
}

#[test]
fn fused_costs_about_twice_attention_for_llama2() {
    let m = PerfModel::gh100();
    let e = estimate(&m, &WorkloadConfig::llama2()).unwrap();
    let ratio = e.t_fused_s * m.cal.drop_overhead / e.t_attn_s;
    assert!((1.5..=2.5).contains(&ratio), "{ratio}");
}
