//! Transformer-block dimensions and the raw work they imply.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadConfig {
    #[serde(default = "default_batch")]
    pub batch: u64,
    pub seq_len: u64,
    pub n_heads: u64,
    pub head_dim: u64,
    #[serde(default = "default_ffn_factor")]
    pub ffn_factor: u64,
    /// Bytes per GEMM operand element (1 for FP8).
    #[serde(default = "default_precision_bytes")]
    pub precision_bytes: u64,
    #[serde(default = "default_keep_prob")]
    pub keep_prob: f64,
    #[serde(default = "default_rounds")]
    pub philox_rounds: u32,
}

fn default_batch() -> u64 {
    1
}
fn default_ffn_factor() -> u64 {
    4
}
fn default_precision_bytes() -> u64 {
    1
}
fn default_keep_prob() -> f64 {
    0.9
}
fn default_rounds() -> u32 {
    7
}

impl WorkloadConfig {
    /// Batch 1, FP8, FFN factor 4, keep probability 0.9, Philox 7.
    pub fn new(seq_len: u64, n_heads: u64, head_dim: u64) -> Self {
        Self {
            batch: 1,
            seq_len,
            n_heads,
            head_dim,
            ffn_factor: default_ffn_factor(),
            precision_bytes: default_precision_bytes(),
            keep_prob: default_keep_prob(),
            philox_rounds: default_rounds(),
        }
    }

    pub fn gpt3() -> Self {
        Self::new(2048, 96, 128)
    }

    pub fn llama2() -> Self {
        Self::new(4096, 64, 128)
    }

    pub fn with_seq_len(mut self, seq_len: u64) -> Self {
        self.seq_len = seq_len;
        self
    }

    pub fn with_heads(mut self, n_heads: u64) -> Self {
        self.n_heads = n_heads;
        self
    }

    pub fn with_rounds(mut self, rounds: u32) -> Self {
        self.philox_rounds = rounds;
        self
    }

    pub fn hidden(&self) -> u64 {
        self.n_heads * self.head_dim
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("batch", self.batch),
            ("seq_len", self.seq_len),
            ("n_heads", self.n_heads),
            ("head_dim", self.head_dim),
            ("ffn_factor", self.ffn_factor),
            ("precision_bytes", self.precision_bytes),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::InvalidDimension(format!("{name} must be >= 1")));
            }
        }
        if !(0.0..=1.0).contains(&self.keep_prob) {
            return Err(Error::InvalidKeepProb(self.keep_prob));
        }
        crate::philox::check_rounds(self.philox_rounds)?;
        Ok(())
    }
}

pub fn preset(name: &str) -> Option<WorkloadConfig> {
    match name {
        "gpt3" => Some(WorkloadConfig::gpt3()),
        "llama2" => Some(WorkloadConfig::llama2()),
        _ => None,
    }
}

pub const PRESET_NAMES: &[&str] = &["gpt3", "llama2"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GemmName {
    Qkv,
    Proj,
    Ffn1,
    Ffn2,
}

impl GemmName {
    pub fn as_str(&self) -> &'static str {
        match self {
            GemmName::Qkv => "QKV",
            GemmName::Proj => "Proj",
            GemmName::Ffn1 => "FFN1",
            GemmName::Ffn2 => "FFN2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GemmShape {
    pub name: GemmName,
    pub m: u64,
    pub n: u64,
    pub k: u64,
}

impl GemmShape {
    pub fn new(name: GemmName, m: u64, n: u64, k: u64) -> Result<Self> {
        if m == 0 || n == 0 || k == 0 {
            return Err(Error::InvalidDimension(format!(
                "GEMM {} needs M, N, K >= 1 (got {m}x{n}x{k})",
                name.as_str()
            )));
        }
        Ok(Self { name, m, n, k })
    }

    pub fn flops(&self) -> f64 {
        2.0 * self.m as f64 * self.n as f64 * self.k as f64
    }
}

/// The four GEMMs between consecutive attention layers, with `rows`
/// token rows (normally `B * SQ`).
pub fn gemm_shapes_for_rows(cfg: &WorkloadConfig, rows: u64) -> [GemmShape; 4] {
    let h = cfg.hidden();
    let f = cfg.ffn_factor;
    [
        GemmShape { name: GemmName::Qkv, m: rows, n: 3 * h, k: h },
        GemmShape { name: GemmName::Proj, m: rows, n: h, k: h },
        GemmShape { name: GemmName::Ffn1, m: rows, n: f * h, k: h },
        GemmShape { name: GemmName::Ffn2, m: rows, n: h, k: f * h },
    ]
}

pub fn gemm_shapes(cfg: &WorkloadConfig) -> [GemmShape; 4] {
    gemm_shapes_for_rows(cfg, cfg.batch * cfg.seq_len)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AttentionWork {
    pub mma_flops: f64,
    pub softmax_elems: f64,
}

/// Attention work for `rows` query rows against the full key length.
pub fn attention_work_for_rows(cfg: &WorkloadConfig, rows: u64) -> AttentionWork {
    let elems = cfg.batch as f64 * cfg.n_heads as f64 * rows as f64 * cfg.seq_len as f64;
    AttentionWork {
        mma_flops: 4.0 * elems * cfg.head_dim as f64,
        softmax_elems: elems,
    }
}

pub fn attention_work(cfg: &WorkloadConfig) -> AttentionWork {
    attention_work_for_rows(cfg, cfg.seq_len)
}

/// Elements of the `(B, nH, SQ, SQ)` intermediate that each need a keep bit.
pub fn rng_elements(cfg: &WorkloadConfig) -> u64 {
    cfg.batch * cfg.n_heads * cfg.seq_len * cfg.seq_len
}
