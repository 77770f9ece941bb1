//! Dropout keep masks.
//!
//! Every element `(b, h, i, j)` of the attention intermediate is mapped to
//! one 32-bit Philox word through a global linear index, so the mask stored
//! by the stand-alone generator and the bits recomputed inside the fused
//! attention path agree bit for bit. Bit value 1 means *keep*.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::philox::{check_rounds, philox_block_unchecked, PhiloxCounter, PhiloxKey};

/// Default capacity guard for host-side mask generation: 2^36 bits (8 GiB).
pub const DEFAULT_MAX_BITS: u64 = 1 << 36;

pub const MASK_MAGIC: [u8; 4] = *b"RNGM";
pub const MASK_VERSION: u16 = 1;
pub const MASK_HEADER_LEN: usize = 40;

/// Shape and counter placement of a `(B, nH, SQ, SQ)` mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskLayout {
    pub batch: u32,
    pub heads: u32,
    pub seq: u32,
    pub seed: u64,
    pub base_offset: u64,
}

impl MaskLayout {
    pub fn new(batch: u32, heads: u32, seq: u32, seed: u64, base_offset: u64) -> Result<Self> {
        if batch == 0 || heads == 0 || seq == 0 {
            return Err(Error::InvalidDimension(format!(
                "mask layout needs B, nH, SQ >= 1 (got B={batch}, nH={heads}, SQ={seq})"
            )));
        }
        Ok(Self {
            batch,
            heads,
            seq,
            seed,
            base_offset,
        })
    }

    pub fn element_count(&self) -> u64 {
        self.batch as u64 * self.heads as u64 * self.seq as u64 * self.seq as u64
    }

    pub fn byte_len(&self) -> u64 {
        self.element_count().div_ceil(8)
    }

    pub fn key(&self) -> PhiloxKey {
        PhiloxKey::from_seed(self.seed)
    }

    pub fn linear_index(&self, b: u32, h: u32, i: u32, j: u32) -> Result<u64> {
        if b >= self.batch || h >= self.heads || i >= self.seq || j >= self.seq {
            return Err(Error::IndexOutOfRange(format!(
                "({b}, {h}, {i}, {j}) outside ({}, {}, {}, {})",
                self.batch, self.heads, self.seq, self.seq
            )));
        }
        Ok(self.linear_index_unchecked(b, h, i, j))
    }

    #[inline]
    pub(crate) fn linear_index_unchecked(&self, b: u32, h: u32, i: u32, j: u32) -> u64 {
        let sq = self.seq as u64;
        ((b as u64 * self.heads as u64 + h as u64) * sq + i as u64) * sq + j as u64
    }

    /// Counter block for `block_index` (four elements per block).
    #[inline]
    pub fn block_counter(&self, block_index: u64) -> PhiloxCounter {
        PhiloxCounter::from_u64_pair(self.base_offset.wrapping_add(block_index), 0)
    }

    /// Philox counter and output lane for one element.
    pub fn element_source(&self, linear_index: u64) -> Result<(PhiloxCounter, usize)> {
        if linear_index >= self.element_count() {
            return Err(Error::IndexOutOfRange(format!(
                "linear index {linear_index} >= element count {}",
                self.element_count()
            )));
        }
        Ok((self.block_counter(linear_index / 4), (linear_index % 4) as usize))
    }
}

/// Keep probability and the 32-bit threshold derived from it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeepThreshold {
    keep_prob: f64,
    threshold: u32,
    keep_all: bool,
}

impl KeepThreshold {
    pub fn new(keep_prob: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&keep_prob) {
            return Err(Error::InvalidKeepProb(keep_prob));
        }
        let scaled = (keep_prob * 4_294_967_296.0).round();
        let threshold = if scaled >= u32::MAX as f64 {
            u32::MAX
        } else {
            scaled as u32
        };
        Ok(Self {
            keep_prob,
            threshold,
            keep_all: keep_prob == 1.0,
        })
    }

    pub fn keep_prob(&self) -> f64 {
        self.keep_prob
    }

    pub fn threshold(&self) -> u32 {
        self.threshold
    }

    #[inline(always)]
    pub fn keeps(&self, word: u32) -> bool {
        self.keep_all || word < self.threshold
    }
}

/// Recomputes the keep bit of one element straight from the generator.
/// This is the on-the-fly path used by fused dropout.
#[inline]
pub fn keep_bit_inline(
    layout: &MaskLayout,
    thr: &KeepThreshold,
    rounds: u32,
    linear_index: u64,
) -> bool {
    let block = philox_block_unchecked(layout.key(), layout.block_counter(linear_index / 4), rounds);
    thr.keeps(block.0[(linear_index % 4) as usize])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskOptions {
    pub workers: usize,
    pub max_bits: u64,
}

impl Default for MaskOptions {
    fn default() -> Self {
        Self {
            workers: 1,
            max_bits: DEFAULT_MAX_BITS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    layout: MaskLayout,
    keep: KeepThreshold,
    rounds: u32,
    bits: Vec<u8>,
}

impl DropoutMask {
    pub fn layout(&self) -> &MaskLayout {
        &self.layout
    }

    pub fn keep(&self) -> &KeepThreshold {
        &self.keep
    }

    pub fn rounds(&self) -> u32 {
        self.rounds
    }

    /// Packed bits, little-endian within each byte.
    pub fn as_bytes(&self) -> &[u8] {
        &self.bits
    }

    #[inline]
    pub fn bit_at(&self, linear_index: u64) -> bool {
        (self.bits[(linear_index / 8) as usize] >> (linear_index % 8)) & 1 == 1
    }

    pub fn mask_bit(&self, b: u32, h: u32, i: u32, j: u32) -> Result<bool> {
        let idx = self.layout.linear_index(b, h, i, j)?;
        Ok(self.bit_at(idx))
    }

    pub fn count_kept(&self) -> u64 {
        self.bits.iter().map(|b| b.count_ones() as u64).sum()
    }

    /// Flips one element's bit. Only used to build perturbed masks.
    pub fn flip(&mut self, linear_index: u64) -> Result<()> {
        if linear_index >= self.layout.element_count() {
            return Err(Error::IndexOutOfRange(format!("linear index {linear_index}")));
        }
        self.bits[(linear_index / 8) as usize] ^= 1 << (linear_index % 8);
        Ok(())
    }
}

pub fn generate_mask(layout: &MaskLayout, thr: &KeepThreshold, rounds: u32) -> Result<DropoutMask> {
    generate_mask_with(layout, thr, rounds, MaskOptions::default())
}

/// Generates the mask, sharding whole bytes (8 elements, two Philox blocks)
/// across `opts.workers` threads. The result does not depend on the
/// worker count.
pub fn generate_mask_with(
    layout: &MaskLayout,
    thr: &KeepThreshold,
    rounds: u32,
    opts: MaskOptions,
) -> Result<DropoutMask> {
    check_rounds(rounds)?;
    let n = layout.element_count();
    if n > opts.max_bits {
        return Err(Error::CapacityExceeded {
            required: layout.byte_len(),
            allowed: opts.max_bits / 8,
        });
    }
    let nbytes = layout.byte_len() as usize;
    let mut bits = vec![0u8; nbytes];
    let workers = opts.workers.max(1);
    let chunk = nbytes.div_ceil(workers).max(1);
    let key = layout.key();

    let fill = |first_byte: usize, out: &mut [u8]| {
        for (k, byte) in out.iter_mut().enumerate() {
            let byte_idx = (first_byte + k) as u64;
            let mut v = 0u8;
            for half in 0..2u64 {
                let block_idx = byte_idx * 2 + half;
                let words =
                    philox_block_unchecked(key, layout.block_counter(block_idx), rounds).0;
                for (lane, w) in words.iter().enumerate() {
                    let elem = block_idx * 4 + lane as u64;
                    if elem < n && thr.keeps(*w) {
                        v |= 1 << (half * 4 + lane as u64);
                    }
                }
            }
            *byte = v;
        }
    };

    if workers == 1 {
        fill(0, &mut bits);
    } else {
        std::thread::scope(|s| {
            for (w, out) in bits.chunks_mut(chunk).enumerate() {
                let fill = &fill;
                s.spawn(move || fill(w * chunk, out));
            }
        });
    }

    Ok(DropoutMask {
        layout: *layout,
        keep: *thr,
        rounds,
        bits,
    })
}

fn header_bytes(mask: &DropoutMask) -> Result<[u8; MASK_HEADER_LEN]> {
    let l = &mask.layout;
    let batch = u16::try_from(l.batch)
        .map_err(|_| Error::MaskFormat(format!("batch {} does not fit the 16-bit header field", l.batch)))?;
    let heads = u16::try_from(l.heads)
        .map_err(|_| Error::MaskFormat(format!("heads {} does not fit the 16-bit header field", l.heads)))?;
    let mut h = [0u8; MASK_HEADER_LEN];
    h[0..4].copy_from_slice(&MASK_MAGIC);
    h[4..6].copy_from_slice(&MASK_VERSION.to_le_bytes());
    h[6..8].copy_from_slice(&(mask.rounds as u16).to_le_bytes());
    h[8..10].copy_from_slice(&batch.to_le_bytes());
    h[10..12].copy_from_slice(&heads.to_le_bytes());
    h[12..16].copy_from_slice(&l.seq.to_le_bytes());
    h[16..24].copy_from_slice(&l.seed.to_le_bytes());
    h[24..32].copy_from_slice(&l.base_offset.to_le_bytes());
    h[32..40].copy_from_slice(&mask.keep.keep_prob().to_le_bytes());
    Ok(h)
}

/// Writes `header || packed bits`.
///
/// Header layout (little-endian): magic `RNGM` (4), version u16, rounds u16,
/// B u16, nH u16, SQ u32, seed u64, base_offset u64, keep_prob f64.
pub fn write_mask<W: Write>(mask: &DropoutMask, mut w: W) -> Result<()> {
    w.write_all(&header_bytes(mask)?)?;
    w.write_all(&mask.bits)?;
    w.flush()?;
    Ok(())
}

pub fn read_mask<R: Read>(mut r: R) -> Result<DropoutMask> {
    let mut h = [0u8; MASK_HEADER_LEN];
    r.read_exact(&mut h)
        .map_err(|_| Error::MaskFormat("truncated header".into()))?;
    if h[0..4] != MASK_MAGIC {
        return Err(Error::MaskFormat(format!("bad magic {:?}", &h[0..4])));
    }
    let le16 = |o: usize| u16::from_le_bytes([h[o], h[o + 1]]);
    let le32 = |o: usize| u32::from_le_bytes(h[o..o + 4].try_into().unwrap());
    let le64 = |o: usize| u64::from_le_bytes(h[o..o + 8].try_into().unwrap());
    let version = le16(4);
    if version != MASK_VERSION {
        return Err(Error::MaskFormat(format!("unsupported version {version}")));
    }
    let rounds = check_rounds(le16(6) as u32)
        .map_err(|e| Error::MaskFormat(format!("header: {e}")))?;
    let layout = MaskLayout::new(le16(8) as u32, le16(10) as u32, le32(12), le64(16), le64(24))
        .map_err(|e| Error::MaskFormat(format!("header: {e}")))?;
    let keep = KeepThreshold::new(f64::from_le_bytes(h[32..40].try_into().unwrap()))
        .map_err(|e| Error::MaskFormat(format!("header: {e}")))?;

    let nbytes = layout.byte_len() as usize;
    let mut bits = Vec::new();
    r.take(nbytes as u64 + 1).read_to_end(&mut bits)?;
    if bits.len() < nbytes {
        return Err(Error::MaskFormat(format!(
            "truncated payload: {} of {nbytes} bytes",
            bits.len()
        )));
    }
    if bits.len() > nbytes {
        return Err(Error::MaskFormat("trailing bytes after payload".into()));
    }
    let tail = layout.element_count() % 8;
    if tail != 0 && bits[nbytes - 1] >> tail != 0 {
        return Err(Error::MaskFormat("padding bits past the last element are set".into()));
    }
    Ok(DropoutMask {
        layout,
        keep,
        rounds,
        bits,
    })
}

pub fn save_mask(mask: &DropoutMask, path: &Path) -> Result<()> {
    write_mask(mask, BufWriter::new(File::create(path)?))
}

pub fn load_mask(path: &Path) -> Result<DropoutMask> {
    read_mask(BufReader::new(File::open(path)?))
}

/// Writes the mask to `path` and reads it back.
pub fn mask_file_roundtrip(mask: &DropoutMask, path: &Path) -> Result<DropoutMask> {
    save_mask(mask, path)?;
    load_mask(path)
}
