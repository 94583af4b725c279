use crate::quant::{BlockQ4, BlockQ8, Q4_OFFSET};

#[inline]
pub(crate) fn block_sum(a: &BlockQ4, b: &BlockQ8) -> i32 {
    let bq = b.codes();
    let mut sum = 0i32;
    for (j, &byte) in a.packed().iter().enumerate() {
        let lo = (byte & 0x0F) as i32 - Q4_OFFSET;
        let hi = (byte >> 4) as i32 - Q4_OFFSET;
        sum += lo * bq[2 * j] as i32 + hi * bq[2 * j + 1] as i32;
    }
    sum
}

pub(crate) fn gemv_rows(slab: &[BlockQ4], x: &[BlockQ8], out: &mut [f32]) {
    let bpr = x.len();
    debug_assert_eq!(slab.len(), bpr * out.len());
    for (row, o) in slab.chunks_exact(bpr).zip(out.iter_mut()) {
        let mut acc = 0.0f32;
        for (a, b) in row.iter().zip(x) {
            acc += super::combine(a.scale(), b.scale(), block_sum(a, b));
        }
        *o = acc;
    }
}

/// `out` is row-major `rows x cols.len()`.
pub(crate) fn gemm_rows(slab: &[BlockQ4], cols: &[&[BlockQ8]], out: &mut [f32]) {
    let b = cols.len();
    let bpr = cols[0].len();
    debug_assert_eq!(slab.len() * b, bpr * out.len());
    for (row, o) in slab.chunks_exact(bpr).zip(out.chunks_exact_mut(b)) {
        o.fill(0.0);
        for (k, a) in row.iter().enumerate() {
            for (acc, col) in o.iter_mut().zip(cols) {
                let x = &col[k];
                *acc += super::combine(a.scale(), x.scale(), block_sum(a, x));
            }
        }
    }
}

