//! AVX2 integer core.
//!
//! Only the per-block integer sums are computed with vector instructions.
//! They are exact, and the float combination below uses the same
//! operations in the same order as the scalar path, so both paths agree
//! bit for bit.

#[cfg(target_arch = "x86")]
use std::arch::x86::*;
#[cfg(target_arch = "x86_64")]
use std::arch::x86_64::*;

use crate::quant::{BlockQ4, BlockQ8};

/// Weight codes of one block expanded to 32 signed bytes in `[-8, 7]`,
/// split into magnitude and sign-carrier as `maddubs` expects.
struct Expanded {
    abs: __m256i,
    signed: __m256i,
}

#[inline]
#[target_feature(enable = "avx2")]
unsafe fn expand(a: &BlockQ4) -> Expanded {
    let q = _mm_loadu_si128(a.packed().as_ptr() as *const __m128i);
    let mask = _mm_set1_epi8(0x0F);
    let lo = _mm_and_si128(q, mask);
    let hi = _mm_and_si128(_mm_srli_epi16(q, 4), mask);
    // Interleaving low and high nibbles restores code order 0, 1, 2, ...
    let first = _mm_unpacklo_epi8(lo, hi);
    let second = _mm_unpackhi_epi8(lo, hi);
    let codes = _mm256_set_m128i(second, first);
    let signed = _mm256_sub_epi8(codes, _mm256_set1_epi8(8));
    Expanded {
        abs: _mm256_sign_epi8(signed, signed),
        signed,
    }
}

/// Eight i32 partial sums of `(a_i - 8) * b_i`. Pairwise i16 sums are at
/// most 2 * 8 * 127 in magnitude, so `maddubs` never saturates.
#[inline]
#[target_feature(enable = "avx2")]
unsafe fn partial(a: &Expanded, b: &BlockQ8) -> __m256i {
    let bv = _mm256_loadu_si256(b.codes().as_ptr() as *const __m256i);
    let sb = _mm256_sign_epi8(bv, a.signed);
    let pairs = _mm256_maddubs_epi16(a.abs, sb);
    _mm256_madd_epi16(pairs, _mm256_set1_epi16(1))
}

#[inline]
#[target_feature(enable = "avx2")]
unsafe fn hsum(v: __m256i) -> i32 {
    let s = _mm_add_epi32(_mm256_castsi256_si128(v), _mm256_extracti128_si256(v, 1));
    let s = _mm_add_epi32(s, _mm_shuffle_epi32(s, 0b01_00_11_10));
    let s = _mm_add_epi32(s, _mm_shuffle_epi32(s, 0b10_11_00_01));
    _mm_cvtsi128_si32(s)
}

/// Reduces four partial-sum vectors to `[sum(v0), sum(v1), sum(v2), sum(v3)]`.
#[inline]
#[target_feature(enable = "avx2")]
unsafe fn hsum4(v0: __m256i, v1: __m256i, v2: __m256i, v3: __m256i) -> [i32; 4] {
    let h = _mm256_hadd_epi32(_mm256_hadd_epi32(v0, v1), _mm256_hadd_epi32(v2, v3));
    let s = _mm_add_epi32(_mm256_castsi256_si128(h), _mm256_extracti128_si256(h, 1));
    let mut out = [0i32; 4];
    _mm_storeu_si128(out.as_mut_ptr() as *mut __m128i, s);
    out
}

#[target_feature(enable = "avx2")]
pub(crate) unsafe fn block_sum(a: &BlockQ4, b: &BlockQ8) -> i32 {
    hsum(partial(&expand(a), b))
}

#[target_feature(enable = "avx2")]
pub(crate) unsafe fn gemv_rows(slab: &[BlockQ4], x: &[BlockQ8], out: &mut [f32]) {
    let bpr = x.len();
    debug_assert_eq!(slab.len(), bpr * out.len());
    for (row, o) in slab.chunks_exact(bpr).zip(out.iter_mut()) {
        let mut acc = 0.0f32;
        let mut a4 = row.chunks_exact(4);
        let mut x4 = x.chunks_exact(4);
        for (a, b) in (&mut a4).zip(&mut x4) {
            let sums = hsum4(
                partial(&expand(&a[0]), &b[0]),
                partial(&expand(&a[1]), &b[1]),
                partial(&expand(&a[2]), &b[2]),
                partial(&expand(&a[3]), &b[3]),
            );
            for k in 0..4 {
                acc += super::combine(a[k].scale(), b[k].scale(), sums[k]);
            }
        }
        for (a, b) in a4.remainder().iter().zip(x4.remainder()) {
            acc += super::combine(a.scale(), b.scale(), block_sum(a, b));
        }
        *o = acc;
    }
}

/// `out` is row-major `rows x cols.len()`. Each weight block is expanded
/// once and reused for every column.
#[target_feature(enable = "avx2")]
pub(crate) unsafe fn gemm_rows(slab: &[BlockQ4], cols: &[&[BlockQ8]], out: &mut [f32]) {
    let b = cols.len();
    let bpr = cols[0].len();
    debug_assert_eq!(slab.len() * b, bpr * out.len());
    for (row, o) in slab.chunks_exact(bpr).zip(out.chunks_exact_mut(b)) {
        o.fill(0.0);
        for (k, a) in row.iter().enumerate() {
            let e = expand(a);
            let sa = a.scale();
            let mut j = 0;
            while j + 4 <= b {
                let sums = hsum4(
                    partial(&e, &cols[j][k]),
                    partial(&e, &cols[j + 1][k]),
                    partial(&e, &cols[j + 2][k]),
                    partial(&e, &cols[j + 3][k]),
                );
                for t in 0..4 {
                    o[j + t] += super::combine(sa, cols[j + t][k].scale(), sums[t]);
                }
                j += 4;
            }
            while j < b {
                let x = &cols[j][k];
                o[j] += super::combine(sa, x.scale(), hsum(partial(&e, x)));
                j += 1;
            }
        }
    }
}
