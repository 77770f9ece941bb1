//! Small-scale single-precision attention forward with dropout after the
//! softmax.
//!
//! The fused and decoupled paths share one kernel and differ only in where
//! the keep bit comes from: recomputed from Philox inline, or read from a
//! stored [`DropoutMask`]. Same operation order, so the outputs are bitwise
//! equal whenever the bits are.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mask::{generate_mask, keep_bit_inline, DropoutMask, KeepThreshold, MaskLayout};
use crate::philox::{check_rounds, philox_block_unchecked, PhiloxCounter, PhiloxKey};

/// Row-major `(slices, rows, cols)` buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    pub slices: usize,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Tensor3 {
    pub fn zeros(slices: usize, rows: usize, cols: usize) -> Self {
        Self {
            slices,
            rows,
            cols,
            data: vec![0.0; slices * rows * cols],
        }
    }

    pub fn from_vec(slices: usize, rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != slices * rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {slices}x{rows}x{cols} tensor",
                data.len()
            )));
        }
        Ok(Self {
            slices,
            rows,
            cols,
            data,
        })
    }

    #[inline]
    pub fn at(&self, s: usize, r: usize, c: usize) -> f32 {
        self.data[(s * self.rows + r) * self.cols + c]
    }

    pub fn row(&self, s: usize, r: usize) -> &[f32] {
        let start = (s * self.rows + r) * self.cols;
        &self.data[start..start + self.cols]
    }

    pub fn bit_eq(&self, other: &Tensor3) -> bool {
        self.slices == other.slices
            && self.rows == other.rows
            && self.cols == other.cols
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn max_abs_diff(&self, other: &Tensor3) -> f32 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    /// Deterministic values in `[-1, 1)` drawn from Philox-4x32-10.
    pub fn philox_uniform(slices: usize, rows: usize, cols: usize, seed: u64, stream: u32) -> Self {
        let n = slices * rows * cols;
        let key = PhiloxKey::from_seed(seed);
        let mut data = Vec::with_capacity(n);
        let mut block = 0u64;
        while data.len() < n {
            let ctr = PhiloxCounter::new(block as u32, (block >> 32) as u32, stream, 0);
            for w in philox_block_unchecked(key, ctr, 10).0 {
                if data.len() < n {
                    data.push((w >> 8) as f32 / (1u32 << 23) as f32 - 1.0);
                }
            }
            block += 1;
        }
        Self {
            slices,
            rows,
            cols,
            data,
        }
    }
}

/// Q, K, V for `batch * heads` independent slices of shape `(seq, head_dim)`.
#[derive(Debug, Clone)]
pub struct AttentionInput {
    pub batch: usize,
    pub heads: usize,
    pub q: Tensor3,
    pub k: Tensor3,
    pub v: Tensor3,
}

impl AttentionInput {
    pub fn new(batch: usize, heads: usize, q: Tensor3, k: Tensor3, v: Tensor3) -> Result<Self> {
        let inp = Self {
            batch,
            heads,
            q,
            k,
            v,
        };
        inp.validate()?;
        Ok(inp)
    }

    /// Random instance with entries in `[-1, 1)`.
    pub fn random(batch: usize, heads: usize, seq: usize, head_dim: usize, seed: u64) -> Self {
        let s = batch * heads;
        Self {
            batch,
            heads,
            q: Tensor3::philox_uniform(s, seq, head_dim, seed, 0),
            k: Tensor3::philox_uniform(s, seq, head_dim, seed, 1),
            v: Tensor3::philox_uniform(s, seq, head_dim, seed, 2),
        }
    }

    pub fn seq(&self) -> usize {
        self.q.rows
    }

    pub fn head_dim(&self) -> usize {
        self.q.cols
    }

    pub fn scale(&self) -> f32 {
        1.0 / (self.head_dim() as f32).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.batch * self.heads;
        if s == 0 || self.q.rows == 0 || self.q.cols == 0 {
            return Err(Error::ShapeMismatch("empty attention input".into()));
        }
        for (name, t) in [("q", &self.q), ("k", &self.k), ("v", &self.v)] {
            if (t.slices, t.rows, t.cols) != (s, self.q.rows, self.q.cols) {
                return Err(Error::ShapeMismatch(format!(
                    "{name} is {}x{}x{}, expected {s}x{}x{}",
                    t.slices, t.rows, t.cols, self.q.rows, self.q.cols
                )));
            }
            if t.data.iter().any(|x| !x.is_finite()) {
                return Err(Error::ShapeMismatch(format!("{name} has non-finite entries")));
            }
        }
        Ok(())
    }

    fn mask_shape(&self) -> Result<(u32, u32, u32)> {
        let conv = |v: usize, what: &str| {
            u32::try_from(v).map_err(|_| Error::InvalidDimension(format!("{what} too large")))
        };
        Ok((
            conv(self.batch, "batch")?,
            conv(self.heads, "heads")?,
            conv(self.seq(), "seq")?,
        ))
    }
}

/// Source of keep bits, addressed by linear element index.
pub trait KeepSource: Sync {
    fn keep(&self, linear_index: u64) -> bool;
}

/// Recomputes bits from Philox inside the kernel.
pub struct InlinePhilox {
    pub layout: MaskLayout,
    pub threshold: KeepThreshold,
    pub rounds: u32,
}

impl KeepSource for InlinePhilox {
    #[inline]
    fn keep(&self, linear_index: u64) -> bool {
        keep_bit_inline(&self.layout, &self.threshold, self.rounds, linear_index)
    }
}

impl KeepSource for DropoutMask {
    #[inline]
    fn keep(&self, linear_index: u64) -> bool {
        self.bit_at(linear_index)
    }
}

struct Dropout<'a, S: KeepSource> {
    source: &'a S,
    inv_keep: f32,
}

fn attention_kernel<S: KeepSource>(inp: &AttentionInput, dropout: Option<Dropout<'_, S>>) -> Tensor3 {
    let seq = inp.seq();
    let dh = inp.head_dim();
    let scale = inp.scale();
    let mut out = Tensor3::zeros(inp.q.slices, seq, dh);

    out.data
        .par_chunks_mut(seq * dh)
        .enumerate()
        .for_each(|(s, out_slice)| {
            let mut w = vec![0.0f32; seq];
            for i in 0..seq {
                let q = inp.q.row(s, i);
                for (j, wj) in w.iter_mut().enumerate() {
                    let k = inp.k.row(s, j);
                    let mut dot = 0.0f32;
                    for d in 0..dh {
                        dot += q[d] * k[d];
                    }
                    *wj = dot * scale;
                }
                let m = w.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                let mut sum = 0.0f32;
                for wj in w.iter_mut() {
                    *wj = (*wj - m).exp();
                    sum += *wj;
                }
                for wj in w.iter_mut() {
                    *wj /= sum;
                }
                if let Some(dp) = &dropout {
                    let row_base = (s * seq + i) as u64 * seq as u64;
                    for (j, wj) in w.iter_mut().enumerate() {
                        *wj = if dp.source.keep(row_base + j as u64) {
                            *wj * dp.inv_keep
                        } else {
                            0.0
                        };
                    }
                }
                let o = &mut out_slice[i * dh..(i + 1) * dh];
                for (j, &wj) in w.iter().enumerate() {
                    let v = inp.v.row(s, j);
                    for d in 0..dh {
                        o[d] += wj * v[d];
                    }
                }
            }
        });
    out
}

/// `softmax(Q K^T / sqrt(dH)) V` per slice, no dropout.
pub fn attention_forward(inp: &AttentionInput) -> Result<Tensor3> {
    inp.validate()?;
    Ok(attention_kernel::<InlinePhilox>(inp, None))
}

fn inverse_keep(p: f64) -> Result<f32> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidKeepProb(p));
    }
    if p == 0.0 {
        return Err(Error::InvalidKeepProb(p));
    }
    Ok((1.0 / p) as f32)
}

/// Dropout with bits recomputed from Philox inside the kernel.
pub fn attention_dropout_fused(inp: &AttentionInput, seed: u64, p: f64, rounds: u32) -> Result<Tensor3> {
    inp.validate()?;
    let inv_keep = inverse_keep(p)?;
    check_rounds(rounds)?;
    let (b, h, sq) = inp.mask_shape()?;
    let source = InlinePhilox {
        layout: MaskLayout::new(b, h, sq, seed, 0)?,
        threshold: KeepThreshold::new(p)?,
        rounds,
    };
    Ok(attention_kernel(
        inp,
        Some(Dropout {
            source: &source,
            inv_keep,
        }),
    ))
}

/// Dropout with bits read from a mask produced ahead of time.
pub fn attention_dropout_decoupled(inp: &AttentionInput, mask: &DropoutMask, p: f64) -> Result<Tensor3> {
    inp.validate()?;
    let inv_keep = inverse_keep(p)?;
    let (b, h, sq) = inp.mask_shape()?;
    let l = mask.layout();
    if (l.batch, l.heads, l.seq) != (b, h, sq) {
        return Err(Error::LayoutMismatch(format!(
            "mask is ({}, {}, {}), attention needs ({b}, {h}, {sq})",
            l.batch, l.heads, l.seq
        )));
    }
    if mask.keep().keep_prob() != p {
        return Err(Error::LayoutMismatch(format!(
            "mask keep probability {} differs from requested {p}",
            mask.keep().keep_prob()
        )));
    }
    Ok(attention_kernel(
        inp,
        Some(Dropout {
            source: mask,
            inv_keep,
        }),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VerifyCase {
    pub batch: usize,
    pub heads: usize,
    pub seq: usize,
    pub head_dim: usize,
    pub seed: u64,
    pub keep_prob: f64,
    pub rounds: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    #[serde(flatten)]
    pub case: VerifyCase,
    pub bitwise_equal: bool,
    pub max_abs_diff: f32,
    pub kept_fraction: f64,
}

/// Sixteen shape/seed/probability combinations, up to `SQ = 256`.
pub fn default_verify_cases() -> Vec<VerifyCase> {
    let shapes = [(1, 1, 16, 8), (1, 2, 64, 16), (2, 4, 128, 32), (2, 4, 256, 64)];
    let probs = [0.5, 0.8, 0.9, 0.99];
    let mut cases = Vec::new();
    for (si, &(batch, heads, seq, head_dim)) in shapes.iter().enumerate() {
        for (pi, &keep_prob) in probs.iter().enumerate() {
            cases.push(VerifyCase {
                batch,
                heads,
                seq,
                head_dim,
                seed: 0x5EED_0000 + (si * 4 + pi) as u64,
                keep_prob,
                rounds: if pi % 2 == 0 { 7 } else { 10 },
            });
        }
    }
    cases
}

/// Runs fused and decoupled dropout on one case and compares the outputs.
pub fn verify_case(case: &VerifyCase) -> Result<VerifyReport> {
    let inp = AttentionInput::random(case.batch, case.heads, case.seq, case.head_dim, case.seed ^ 0xA5A5);
    let (b, h, sq) = inp.mask_shape()?;
    let layout = MaskLayout::new(b, h, sq, case.seed, 0)?;
    let mask = generate_mask(&layout, &KeepThreshold::new(case.keep_prob)?, case.rounds)?;
    let fused = attention_dropout_fused(&inp, case.seed, case.keep_prob, case.rounds)?;
    let decoupled = attention_dropout_decoupled(&inp, &mask, case.keep_prob)?;
    Ok(VerifyReport {
        case: *case,
        bitwise_equal: fused.bit_eq(&decoupled),
        max_abs_diff: fused.max_abs_diff(&decoupled),
        kept_fraction: mask.count_kept() as f64 / layout.element_count() as f64,
    })
}
