//! Keep-mask statistics, recomputation and parallel determinism.

use dropsched::mask::{
    generate_mask_with, keep_bit_inline, load_mask, save_mask, MaskOptions, MASK_HEADER_LEN,
};
use dropsched::philox::{philox_block, PhiloxCounter, PhiloxKey};
use dropsched::{generate_mask, KeepThreshold, MaskLayout};
use rand::{rngs::StdRng, Rng, SeedableRng};

fn kept_fraction(b: u32, h: u32, sq: u32, p: f64, seed: u64) -> (f64, f64) {
    let layout = MaskLayout::new(b, h, sq, seed, 0).unwrap();
    let m = generate_mask(&layout, &KeepThreshold::new(p).unwrap(), 7).unwrap();
    let n = layout.element_count() as f64;
    (m.count_kept() as f64 / n, n)
}

#[test]
fn small_mask_keep_rate_within_three_sigma() {
    let (f, n) = kept_fraction(1, 2, 64, 0.9, 42);
    assert_eq!(n, 8192.0);
    assert!((f - 0.9).abs() <= 3.0 * (0.9f64 * 0.1 / n).sqrt(), "{f}");
}

#[test]
fn large_mask_keep_rate_within_four_sigma() {
    for p in [0.5, 0.8, 0.9, 0.99] {
        let (f, n) = kept_fraction(1, 16, 256, p, 1234);
        assert!(n >= 1e6);
        assert!((f - p).abs() <= 4.0 * (p * (1.0 - p) / n).sqrt(), "p={p}: {f}");
    }
}

#[test]
fn stored_bits_equal_direct_recomputation() {
    let layout = MaskLayout::new(2, 3, 200, 0xABCD, 77).unwrap();
    let thr = KeepThreshold::new(0.8).unwrap();
    let m = generate_mask(&layout, &thr, 5).unwrap();
    let mut rng = StdRng::seed_from_u64(3);
    for _ in 0..100_000 {
        let (b, h, i, j) = (rng.gen_range(0..2), rng.gen_range(0..3), rng.gen_range(0..200), rng.gen_range(0..200));
        let idx = ((b as u64 * 3 + h as u64) * 200 + i as u64) * 200 + j as u64;
        let ctr = 77 + idx / 4;
        let block = philox_block(
            PhiloxKey::new(0xABCD, 0),
            PhiloxCounter::new(ctr as u32, (ctr >> 32) as u32, 0, 0),
            5,
        )
        .unwrap();
        let expect = block.0[(idx % 4) as usize] < (0.8f64 * 4294967296.0).round() as u32;
        assert_eq!(m.mask_bit(b, h, i, j).unwrap(), expect);
        assert_eq!(keep_bit_inline(&layout, &thr, 5, idx), expect);
    }
}

#[test]
fn worker_count_does_not_change_bits() {
    let layout = MaskLayout::new(1, 3, 123, 9, 5).unwrap();
    let thr = KeepThreshold::new(0.7).unwrap();
    let one = generate_mask_with(&layout, &thr, 7, MaskOptions { workers: 1, ..Default::default() }).unwrap();
    for workers in [2, 3, 8, 64, 10_000] {
        let many = generate_mask_with(&layout, &thr, 7, MaskOptions { workers, ..Default::default() }).unwrap();
        assert_eq!(one, many, "workers={workers}");
    }
}

#[test]
fn extreme_keep_probabilities() {
    let layout = MaskLayout::new(1, 1, 33, 1, 0).unwrap();
    let all = generate_mask(&layout, &KeepThreshold::new(1.0).unwrap(), 7).unwrap();
    let none = generate_mask(&layout, &KeepThreshold::new(0.0).unwrap(), 7).unwrap();
    assert_eq!(all.count_kept(), layout.element_count());
    assert_eq!(none.count_kept(), 0);
    assert!(all.mask_bit(0, 0, 32, 32).unwrap());
    assert!(!none.mask_bit(0, 0, 32, 32).unwrap());
}

#[test]
fn guard_names_required_and_allowed_bytes() {
    let layout = MaskLayout::new(1, 1, 1024, 1, 0).unwrap();
    let err = generate_mask_with(
        &layout,
        &KeepThreshold::new(0.9).unwrap(),
        7,
        MaskOptions { workers: 1, max_bits: 1000 },
    )
    .unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("131072") && msg.contains("125"), "{msg}");
}

#[test]
fn file_roundtrip_and_size() {
    let dir = tempfile::tempdir().unwrap();
    let layout = MaskLayout::new(2, 3, 37, 11, 1 << 40).unwrap();
    let m = generate_mask(&layout, &KeepThreshold::new(0.9).unwrap(), 3).unwrap();
    let path = dir.path().join("m.bin");
    save_mask(&m, &path).unwrap();
    let len = std::fs::metadata(&path).unwrap().len();
    assert_eq!(len, MASK_HEADER_LEN as u64 + (2 * 3 * 37 * 37u64).div_ceil(8));
    assert_eq!(load_mask(&path).unwrap(), m);

    let mut bytes = std::fs::read(&path).unwrap();
    bytes[0] = b'X';
    std::fs::write(&path, &bytes).unwrap();
    assert!(load_mask(&path).is_err());
}
