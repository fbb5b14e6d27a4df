//! Part tiling checked against a brute-force interval oracle.
//!
//! The oracle never reuses the tiler's arithmetic: it walks the returned
//! intervals as raw [start, end] pairs and verifies they cover [0, size)
//! exactly, with the sizing and numbering rules applied per interval.

use objmirror_store::{compute_parts, PartSpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

const MIB: u64 = 1024 * 1024;

/// Brute-force check that `parts` tiles [0, size) exactly.
///
/// Sorts by start, then requires: contiguous coverage from 0 to size-1 with
/// no gaps or overlaps, part numbers 1..=N in interval order, every part
/// exactly `part_size` long except a shorter final part.
fn assert_exact_tiling(size: u64, part_size: u64, parts: &[PartSpec]) {
    if size == 0 {
        assert!(parts.is_empty(), "size 0 must produce no parts");
        return;
    }
    assert!(!parts.is_empty(), "nonzero size must produce parts");

    let mut sorted: Vec<&PartSpec> = parts.iter().collect();
    sorted.sort_by_key(|p| p.start);

    let mut cursor: u64 = 0;
    for (idx, part) in sorted.iter().enumerate() {
        assert_eq!(
            part.part_number,
            (idx + 1) as u32,
            "part numbers must be 1-based and sequential in interval order"
        );
        assert_eq!(
            part.start, cursor,
            "part {} must start where the previous ended",
            part.part_number
        );
        assert!(
            part.end >= part.start,
            "part {} has end before start",
            part.part_number
        );
        let len = part.end - part.start + 1;
        if idx + 1 < sorted.len() {
            assert_eq!(
                len, part_size,
                "non-final part {} must be exactly part_size",
                part.part_number
            );
        } else {
            assert!(
                len <= part_size,
                "final part {} longer than part_size",
                part.part_number
            );
            assert!(len >= 1, "final part {} is empty", part.part_number);
        }
        cursor = part.end + 1;
    }
    assert_eq!(cursor, size, "parts must cover [0, size) exactly");
}

#[test]
fn hundred_mib_at_sixteen_mib_is_seven_parts() {
    let parts = compute_parts(100 * MIB, 16 * MIB);
    assert_eq!(parts.len(), 7);
    for (i, part) in parts.iter().take(6).enumerate() {
        assert_eq!(part.part_number, (i + 1) as u32);
        assert_eq!(part.start, i as u64 * 16 * MIB);
        assert_eq!(part.end, (i + 1) as u64 * 16 * MIB - 1);
    }
    let last = &parts[6];
    assert_eq!(last.part_number, 7);
    assert_eq!(last.start, 96 * MIB);
    assert_eq!(last.end, 100 * MIB - 1);
    assert_eq!(last.end - last.start + 1, 4 * MIB);
    assert_exact_tiling(100 * MIB, 16 * MIB, &parts);
}

#[test]
fn exact_multiple_is_one_full_part() {
    let parts = compute_parts(16 * MIB, 16 * MIB);
    assert_eq!(parts.len(), 1);
    assert_eq!(parts[0].part_number, 1);
    assert_eq!(parts[0].start, 0);
    assert_eq!(parts[0].end, 16 * MIB - 1);
    assert_exact_tiling(16 * MIB, 16 * MIB, &parts);
}

#[test]
fn zero_size_is_empty() {
    assert!(compute_parts(0, 16 * MIB).is_empty());
    assert!(compute_parts(0, 1).is_empty());
}

#[test]
fn size_smaller_than_part_is_one_short_part() {
    let parts = compute_parts(5, 16 * MIB);
    assert_eq!(parts.len(), 1);
    assert_eq!(parts[0].start, 0);
    assert_eq!(parts[0].end, 4);
    assert_exact_tiling(5, 16 * MIB, &parts);
}

#[test]
fn single_byte_parts() {
    let parts = compute_parts(10, 1);
    assert_eq!(parts.len(), 10);
    assert_exact_tiling(10, 1, &parts);
}

#[test]
fn off_by_one_boundaries() {
    for size in [
        16 * MIB - 1,
        16 * MIB,
        16 * MIB + 1,
        32 * MIB - 1,
        32 * MIB,
        32 * MIB + 1,
        1,
        2,
    ] {
        let parts = compute_parts(size, 16 * MIB);
        assert_exact_tiling(size, 16 * MIB, &parts);
    }
}

#[test]
fn ten_thousand_random_pairs_tile_exactly() {
    let mut rng = ChaCha20Rng::seed_from_u64(0x7061727473);
    for _ in 0..10_000 {
        let part_size = rng.gen_range(64 * 1024..=256 * MIB);
        let size = match rng.gen_range(0..4u8) {
            0 => 0,
            1 => rng.gen_range(0..part_size * 2),
            2 => part_size * rng.gen_range(1..=64),
            _ => rng.gen_range(0..=1024 * MIB),
        };
        let parts = compute_parts(size, part_size);
        assert_exact_tiling(size, part_size, &parts);
    }
}

proptest! {
    #[test]
    fn tiling_holds_for_arbitrary_pairs(
        size in 0u64..=(4 * 1024 * MIB),
        part_size in 4096u64..=(256 * MIB),
    ) {
        let parts = compute_parts(size, part_size);
        assert_exact_tiling(size, part_size, &parts);
    }
}
