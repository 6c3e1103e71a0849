//! 3D Morton (Z-order) codes.
//!
//! Bit `j` of `ix` lands on bit `3j` of the code, `iy` on `3j + 1` and `iz`
//! on `3j + 2`. Each axis holds at most 21 bits so a code fits in 63 bits.

use crate::error::{MapError, Result};

/// Maximum number of bits per axis representable in a 64-bit code.
pub const MAX_BITS_PER_AXIS: u32 = 21;

const AXIS_MASK: u64 = (1 << MAX_BITS_PER_AXIS) - 1;

#[inline]
fn spread_bits(x: u64) -> u64 {
    let mut x = x & AXIS_MASK;
    x = (x | (x << 32)) & 0x001f_0000_0000_ffff;
    x = (x | (x << 16)) & 0x001f_0000_ff00_00ff;
    x = (x | (x << 8)) & 0x100f_00f0_0f00_f00f;
    x = (x | (x << 4)) & 0x10c3_0c30_c30c_30c3;
    x = (x | (x << 2)) & 0x1249_2492_4924_9249;
    x
}

#[inline]
fn compact_bits(x: u64) -> u64 {
    let mut x = x & 0x1249_2492_4924_9249;
    x = (x | (x >> 2)) & 0x10c3_0c30_c30c_30c3;
    x = (x | (x >> 4)) & 0x100f_00f0_0f00_f00f;
    x = (x | (x >> 8)) & 0x001f_0000_ff00_00ff;
    x = (x | (x >> 16)) & 0x001f_0000_0000_ffff;
    x = (x | (x >> 32)) & AXIS_MASK;
    x
}

/// Interleave three indices without range checks. Indices must be below 2^21.
#[inline]
pub fn encode_unchecked(ix: u32, iy: u32, iz: u32) -> u64 {
    spread_bits(ix as u64) | (spread_bits(iy as u64) << 1) | (spread_bits(iz as u64) << 2)
}

/// Interleave three grid indices, each of which must fit in `bits` bits.
pub fn morton_encode(ix: i64, iy: i64, iz: i64, bits: u32) -> Result<u64> {
    debug_assert!(bits <= MAX_BITS_PER_AXIS);
    let limit = 1i64 << bits;
    for (axis, index) in [('x', ix), ('y', iy), ('z', iz)] {
        if !(0..limit).contains(&index) {
            return Err(MapError::Range { axis, index, limit });
        }
    }
    Ok(encode_unchecked(ix as u32, iy as u32, iz as u32))
}

/// Inverse of [`morton_encode`].
#[inline]
pub fn morton_decode(code: u64) -> (u32, u32, u32) {
    (
        compact_bits(code) as u32,
        compact_bits(code >> 1) as u32,
        compact_bits(code >> 2) as u32,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn interleave_oracle(ix: u64, iy: u64, iz: u64) -> u64 {
        let mut code = 0u64;
        for j in 0..21 {
            code |= ((ix >> j) & 1) << (3 * j);
            code |= ((iy >> j) & 1) << (3 * j + 1);
            code |= ((iz >> j) & 1) << (3 * j + 2);
        }
        code
    }

    #[test]
    fn unit_axes() {
        assert_eq!(morton_encode(0, 0, 0, 21).unwrap(), 0);
        assert_eq!(morton_encode(1, 0, 0, 21).unwrap(), 1);
        assert_eq!(morton_encode(0, 1, 0, 21).unwrap(), 2);
        assert_eq!(morton_encode(0, 0, 1, 21).unwrap(), 4);
        assert_eq!(morton_decode(0), (0, 0, 0));
        assert_eq!(morton_decode(7), (1, 1, 1));
    }

    #[test]
    fn matches_per_bit_oracle() {
        // ix=011, iy=101, iz=110 -> bit triples (z y x) from low: 011, 101, 110
        let expected = interleave_oracle(3, 5, 6);
        assert_eq!(expected, 0b110_101_011);
        assert_eq!(morton_encode(3, 5, 6, 21).unwrap(), expected);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let (x, y, z) = (
                rng.random_range(0..1u64 << 21),
                rng.random_range(0..1u64 << 21),
                rng.random_range(0..1u64 << 21),
            );
            assert_eq!(encode_unchecked(x as u32, y as u32, z as u32), interleave_oracle(x, y, z));
        }
    }

    #[test]
    fn roundtrip_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100_000 {
            let v = (
                rng.random_range(0..1u32 << 21),
                rng.random_range(0..1u32 << 21),
                rng.random_range(0..1u32 << 21),
            );
            assert_eq!(morton_decode(encode_unchecked(v.0, v.1, v.2)), v);
        }
    }

    #[test]
    fn out_of_range_names_axis() {
        match morton_encode(0, 1 << 21, 0, 21) {
            Err(MapError::Range { axis: 'y', .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        match morton_encode(0, 0, -1, 21) {
            Err(MapError::Range { axis: 'z', .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(morton_encode(15, 0, 0, 4).is_ok());
        assert!(morton_encode(16, 0, 0, 4).is_err());
    }

    #[test]
    fn monotone_along_one_axis() {
        for y in [0u32, 9, 1000] {
            for z in [0u32, 77] {
                let mut prev = None;
                for x in 0..2048u32 {
                    let c = encode_unchecked(x, y, z);
                    if let Some(p) = prev {
                        assert!(c > p);
                    }
                    prev = Some(c);
                }
            }
        }
    }
}
