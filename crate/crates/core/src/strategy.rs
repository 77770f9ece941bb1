//! Schedule strategies: how the GEMM window, mask generation and attention
//! are arranged on the chip. Each arrangement implements
//! [`ScheduleStrategy`] and is registered by name so callers can pick one at
//! runtime.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::schedule::{KernelSet, PerfModel};
use crate::workload::WorkloadConfig;

/// Where the time of one transformer block goes under a strategy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Timeline {
    pub total_s: f64,
    /// Span before attention can start (GEMMs, plus any RNG tail).
    pub pre_attention_s: f64,
    /// RNG time left over after the GEMM window closes.
    pub rng_exposed_s: f64,
    pub attention_s: f64,
}

pub trait ScheduleStrategy: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn description(&self) -> &str;
    fn timeline(&self, model: &PerfModel, cfg: &WorkloadConfig) -> Result<Timeline>;
}

/// RNG and element dropping fused into attention, all kernels serial.
#[derive(Debug, Clone, Copy, Default)]
pub struct FusedBaseline;

impl ScheduleStrategy for FusedBaseline {
    fn name(&self) -> &str {
        "baseline"
    }

    fn description(&self) -> &str {
        "dropout RNG fused into attention, kernels run back to back"
    }

    fn timeline(&self, model: &PerfModel, cfg: &WorkloadConfig) -> Result<Timeline> {
        let k = model.kernels(cfg)?;
        let attention_s = k.fused.runtime_s * model.cal.drop_overhead;
        let gemm = k.gemm_total_s();
        Ok(Timeline {
            total_s: gemm + attention_s,
            pre_attention_s: gemm,
            rng_exposed_s: 0.0,
            attention_s,
        })
    }
}

/// Stand-alone RNG on a second stream alongside the four GEMMs; attention
/// consumes the stored mask and pays only the dropping overhead.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overlap;

/// GEMM-window span when `rng_s` of stand-alone RNG shares the chip with
/// `gemm_s` of GEMM work. Returns `(span, exposed_rng)`.
pub(crate) fn overlap_span(model: &PerfModel, gemm_s: f64, rng_s: f64) -> (f64, f64) {
    let cal = &model.cal;
    let gemm_contended = gemm_s * cal.carve_out * cal.gemm_under_rng;
    let progress = gemm_contended / cal.rng_under_gemm;
    if progress >= rng_s {
        (gemm_contended, 0.0)
    } else {
        let exposed = rng_s - progress;
        (gemm_contended + exposed, exposed)
    }
}

fn overlapped_chunk(model: &PerfModel, k: &KernelSet) -> Timeline {
    let (span, exposed) = overlap_span(model, k.gemm_total_s(), k.rng.runtime_s);
    let attention_s = k.attention.runtime_s * model.cal.drop_overhead;
    Timeline {
        total_s: span + attention_s,
        pre_attention_s: span,
        rng_exposed_s: exposed,
        attention_s,
    }
}

impl ScheduleStrategy for Overlap {
    fn name(&self) -> &str {
        "overlap"
    }

    fn description(&self) -> &str {
        "stand-alone RNG overlapped with the four GEMMs before attention"
    }

    fn timeline(&self, model: &PerfModel, cfg: &WorkloadConfig) -> Result<Timeline> {
        Ok(overlapped_chunk(model, &model.kernels(cfg)?))
    }
}

/// Overlap applied per sequence chunk: `chunks` passes of (GEMM || RNG,
/// then attention) over `SQ / chunks` query rows each, so only one chunk's
/// mask is resident at a time.
#[derive(Debug, Clone, Copy)]
pub struct Pipelined {
    pub chunks: u64,
}

impl Pipelined {
    pub fn new(chunks: u64) -> Result<Self> {
        if chunks == 0 {
            return Err(Error::InvalidParameter("chunk count must be >= 1".into()));
        }
        Ok(Self { chunks })
    }
}

impl ScheduleStrategy for Pipelined {
    fn name(&self) -> &str {
        "pipelined"
    }

    fn description(&self) -> &str {
        "overlap split into sequence chunks to bound resident mask bytes"
    }

    fn timeline(&self, model: &PerfModel, cfg: &WorkloadConfig) -> Result<Timeline> {
        let c = self.chunks;
        if !cfg.seq_len.is_multiple_of(c) {
            return Err(Error::NotDivisible {
                what: "chunk count",
                value: cfg.seq_len,
                divisor: c,
            });
        }
        let chunk = overlapped_chunk(model, &model.kernels_for_rows(cfg, cfg.seq_len / c)?);
        let n = c as f64;
        let launches = (n - 1.0) * model.cal.chunk_launch_s;
        Ok(Timeline {
            total_s: n * chunk.total_s + launches,
            pre_attention_s: n * chunk.pre_attention_s,
            rng_exposed_s: n * chunk.rng_exposed_s,
            attention_s: n * chunk.attention_s,
        })
    }
}

/// Parameters a strategy factory may consume.
#[derive(Debug, Clone, Copy)]
pub struct StrategyParams {
    pub chunks: u64,
}

impl Default for StrategyParams {
    fn default() -> Self {
        Self { chunks: 1 }
    }
}

type Factory = fn(&StrategyParams) -> Result<Box<dyn ScheduleStrategy>>;

/// Name-keyed strategy factories.
pub struct StrategyRegistry {
    factories: BTreeMap<&'static str, Factory>,
}

impl Default for StrategyRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register("baseline", |_| Ok(Box::new(FusedBaseline)));
        r.register("overlap", |_| Ok(Box::new(Overlap)));
        r.register("pipelined", |p| Ok(Box::new(Pipelined::new(p.chunks)?)));
        r
    }
}

impl StrategyRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: &'static str, factory: Factory) {
        self.factories.insert(name, factory);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.factories.keys().copied().collect()
    }

    pub fn create(&self, name: &str, params: &StrategyParams) -> Result<Box<dyn ScheduleStrategy>> {
        match self.factories.get(name) {
            Some(f) => f(params),
            None => Err(Error::UnknownName {
                kind: "strategy",
                name: name.to_string(),
                available: self.names().join(", "),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_lists_and_creates() {
        let r = StrategyRegistry::default();
        assert_eq!(r.names(), vec!["baseline", "overlap", "pipelined"]);
        let s = r.create("pipelined", &StrategyParams { chunks: 4 }).unwrap();
        assert_eq!(s.name(), "pipelined");
        assert!(matches!(
            r.create("warp-specialized", &StrategyParams::default()),
            Err(Error::UnknownName { .. })
        ));
        assert!(r.create("pipelined", &StrategyParams { chunks: 0 }).is_err());
    }

    #[test]
    fn custom_strategy_can_be_registered() {
        #[derive(Debug)]
        struct GemmOnly;
        impl ScheduleStrategy for GemmOnly {
            fn name(&self) -> &str {
                "gemm-only"
            }
            fn description(&self) -> &str {
                "ignores attention"
            }
            fn timeline(&self, model: &PerfModel, cfg: &WorkloadConfig) -> Result<Timeline> {
                let g = model.kernels(cfg)?.gemm_total_s();
                Ok(Timeline {
                    total_s: g,
                    pre_attention_s: g,
                    rng_exposed_s: 0.0,
                    attention_s: 0.0,
                })
            }
        }
        let mut r = StrategyRegistry::default();
        r.register("gemm-only", |_| Ok(Box::new(GemmOnly)));
        let s = r.create("gemm-only", &StrategyParams::default()).unwrap();
        let m = PerfModel::gh100();
        let t = s.timeline(&m, &WorkloadConfig::llama2()).unwrap();
        assert!(t.total_s > 0.0);
    }

    #[test]
    fn span_branches() {
        let m = PerfModel::gh100();
        let k = m.cal.carve_out * m.cal.gemm_under_rng;
        let (span, exp) = overlap_span(&m, 1.0, 0.0);
        assert_eq!((span, exp), (k, 0.0));
        let (span, exp) = overlap_span(&m, 1.0, 10.0);
        assert!((exp - (10.0 - k / 2.0)).abs() < 1e-12);
        assert!((span - (k + exp)).abs() < 1e-12);
    }
}
