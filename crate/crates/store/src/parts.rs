use serde::{Deserialize, Serialize};

/// One byte range of a multipart copy. Offsets are inclusive on both ends,
/// matching the wire protocol's `bytes=start-end` range form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartSpec {
    /// 1-based, sequential from the start of the object.
    pub part_number: u32,
    pub start: u64,
    pub end: u64,
}

impl PartSpec {
    pub fn byte_len(&self) -> u64 {
        self.end - self.start + 1
    }
}

/// Splits `[0, size)` into ranges of `part_size` bytes plus a shorter final
/// part when the size is not an exact multiple. A zero-byte object yields no
/// parts; callers copy it with a single direct copy instead, since a
/// multipart upload with zero parts cannot be completed.
///
/// Panics if `part_size` is zero (caller contract).
pub fn compute_parts(size: u64, part_size: u64) -> Vec<PartSpec> {
    assert!(part_size > 0, "part_size must be positive");
    if size == 0 {
        return Vec::new();
    }
    let count = size.div_ceil(part_size);
    let mut parts = Vec::with_capacity(count as usize);
    for idx in 0..count {
        let start = idx * part_size;
        let end = ((idx + 1) * part_size).min(size) - 1;
        parts.push(PartSpec {
            part_number: (idx + 1) as u32,
            start,
            end,
        });
    }
    parts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn part_len_is_inclusive() {
        let part = PartSpec {
            part_number: 1,
            start: 0,
            end: 0,
        };
        assert_eq!(part.byte_len(), 1);
    }

    #[test]
    #[should_panic(expected = "part_size must be positive")]
    fn zero_part_size_is_a_contract_violation() {
        compute_parts(10, 0);
    }
}
