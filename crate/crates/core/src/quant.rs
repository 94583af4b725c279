//! Block quantization formats.
//!
//! Weights use a Q4_0-style layout: 32 values share one `f32` scale and each
//! value is a 4-bit code offset by 8, so `value = (code - 8) * scale`.
//! Activations use Q8: 32 values share one `f32` scale and each value is a
//! signed 8-bit code in `[-127, 127]`, so `value = code * scale`.
//!
//! Codes of a [`BlockQ4`] are stored packed, two per byte, in the same order
//! as the `.qmat` container: byte `j` holds code `2j` in its low nibble and
//! code `2j + 1` in its high nibble.

use crate::error::{Error, Result};

/// Number of values sharing one scale.
pub const BLOCK_SIZE: usize = 32;

/// Offset subtracted from every Q4 code.
pub const Q4_OFFSET: i32 = 8;

/// Largest Q8 code magnitude.
pub const Q8_MAX: i32 = 127;

/// One 32-element weight block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockQ4 {
    scale: f32,
    packed: [u8; BLOCK_SIZE / 2],
}

impl BlockQ4 {
    /// The all-zero block: scale 0, every code 8.
    pub const ZERO: BlockQ4 = BlockQ4 {
        scale: 0.0,
        packed: [0x88; BLOCK_SIZE / 2],
    };

    /// Builds a block from unpacked codes, checking the block invariants.
    pub fn new(scale: f32, codes: [u8; BLOCK_SIZE]) -> Result<Self> {
        if let Some(c) = codes.iter().find(|&&c| c > 15) {
            return Err(Error::Format(format!("q4 code {c} out of range [0, 15]")));
        }
        let mut packed = [0u8; BLOCK_SIZE / 2];
        for (j, byte) in packed.iter_mut().enumerate() {
            *byte = codes[2 * j] | (codes[2 * j + 1] << 4);
        }
        Self::from_packed(scale, packed)
    }

    /// Builds a block from the packed nibble layout, checking the invariants.
    pub fn from_packed(scale: f32, packed: [u8; BLOCK_SIZE / 2]) -> Result<Self> {
        if !scale.is_finite() {
            return Err(Error::Format(format!("q4 scale {scale} is not finite")));
        }
        if scale == 0.0 && packed.iter().any(|&b| b != 0x88) {
            return Err(Error::Format(
                "q4 block with zero scale must have every code equal to 8".into(),
            ));
        }
        Ok(BlockQ4 { scale, packed })
    }

    #[inline]
    pub fn scale(&self) -> f32 {
        self.scale
    }

    /// Packed codes, two per byte, low nibble first.
    #[inline]
    pub fn packed(&self) -> &[u8; BLOCK_SIZE / 2] {
        &self.packed
    }

    #[inline]
    pub fn code(&self, i: usize) -> u8 {
        let byte = self.packed[i / 2];
        if i.is_multiple_of(2) {
            byte & 0x0F
        } else {
            byte >> 4
        }
    }

    pub fn codes(&self) -> [u8; BLOCK_SIZE] {
        std::array::from_fn(|i| self.code(i))
    }

    /// Same codes with a different scale. A zero scale is only accepted for
    /// the all-zero code pattern.
    pub fn with_scale(&self, scale: f32) -> Result<Self> {
        Self::from_packed(scale, self.packed)
    }
}

/// One 32-element activation block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockQ8 {
    scale: f32,
    codes: [i8; BLOCK_SIZE],
}

impl BlockQ8 {
    pub const ZERO: BlockQ8 = BlockQ8 {
        scale: 0.0,
        codes: [0; BLOCK_SIZE],
    };

    pub fn new(scale: f32, codes: [i8; BLOCK_SIZE]) -> Result<Self> {
        if !scale.is_finite() {
            return Err(Error::Format(format!("q8 scale {scale} is not finite")));
        }
        if codes.contains(&i8::MIN) {
            return Err(Error::Format("q8 code -128 out of range [-127, 127]".into()));
        }
        if scale == 0.0 && codes.iter().any(|&c| c != 0) {
            return Err(Error::Format(
                "q8 block with zero scale must have every code equal to 0".into(),
            ));
        }
        Ok(BlockQ8 { scale, codes })
    }

    #[inline]
    pub fn scale(&self) -> f32 {
        self.scale
    }

    #[inline]
    pub fn codes(&self) -> &[i8; BLOCK_SIZE] {
        &self.codes
    }
}

/// Row-major matrix of Q4 blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantMatrixQ4 {
    rows: usize,
    cols: usize,
    blocks: Vec<BlockQ4>,
}

impl QuantMatrixQ4 {
    /// Quantizes a row-major `rows x cols` matrix row by row.
    pub fn quantize(rows: usize, cols: usize, values: &[f32]) -> Result<Self> {
        check_matrix_shape(rows, cols)?;
        if values.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                what: "matrix values",
                expected: rows * cols,
                got: values.len(),
            });
        }
        let blocks = quantize_row_q4(values)?;
        Ok(QuantMatrixQ4 { rows, cols, blocks })
    }

    pub fn from_blocks(rows: usize, cols: usize, blocks: Vec<BlockQ4>) -> Result<Self> {
        check_matrix_shape(rows, cols)?;
        let expected = rows * (cols / BLOCK_SIZE);
        if blocks.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "matrix blocks",
                expected,
                got: blocks.len(),
            });
        }
        Ok(QuantMatrixQ4 { rows, cols, blocks })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn blocks_per_row(&self) -> usize {
        self.cols / BLOCK_SIZE
    }

    #[inline]
    pub fn blocks(&self) -> &[BlockQ4] {
        &self.blocks
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[BlockQ4] {
        let bpr = self.blocks_per_row();
        &self.blocks[r * bpr..(r + 1) * bpr]
    }

    /// Copies rows `start..end` into a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.rows {
            return Err(Error::shape(format!(
                "row range {start}..{end} invalid for {} rows",
                self.rows
            )));
        }
        let bpr = self.blocks_per_row();
        Self::from_blocks(
            end - start,
            self.cols,
            self.blocks[start * bpr..end * bpr].to_vec(),
        )
    }

    /// Applies `f` to every block scale.
    pub fn map_scales(&self, mut f: impl FnMut(f32) -> f32) -> Result<Self> {
        let blocks = self
            .blocks
            .iter()
            .map(|b| b.with_scale(f(b.scale)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_blocks(self.rows, self.cols, blocks)
    }

    pub fn dequantize(&self) -> Vec<f32> {
        self.blocks.iter().flat_map(dequantize_block_q4).collect()
    }
}

fn check_matrix_shape(rows: usize, cols: usize) -> Result<()> {
    if rows == 0 || cols == 0 {
        return Err(Error::shape(format!(
            "matrix dimensions must be positive, got {rows}x{cols}"
        )));
    }
    if !cols.is_multiple_of(BLOCK_SIZE) {
        return Err(Error::shape(format!(
            "column count {cols} is not a multiple of {BLOCK_SIZE}"
        )));
    }
    Ok(())
}

/// A Q8-quantized activation vector.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantVectorQ8 {
    len: usize,
    blocks: Vec<BlockQ8>,
}

impl QuantVectorQ8 {
    pub fn from_blocks(blocks: Vec<BlockQ8>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::shape("q8 vector must have at least one block"));
        }
        Ok(QuantVectorQ8 {
            len: blocks.len() * BLOCK_SIZE,
            blocks,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn blocks(&self) -> &[BlockQ8] {
        &self.blocks
    }
}

fn check_finite(x: &[f32]) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite)
    }
}

fn check_block_multiple(n: usize) -> Result<()> {
    if n == 0 || !n.is_multiple_of(BLOCK_SIZE) {
        return Err(Error::shape(format!(
            "length {n} is not a positive multiple of {BLOCK_SIZE}"
        )));
    }
    Ok(())
}

/// Quantizes 32 values to Q4.
///
/// The scale is the signed largest-magnitude element (first one on ties)
/// divided by -8, so that element lands on code 0. Codes are
/// `clamp(floor(x / d + 8.5), 0, 15)`.
///
/// Code 15 only reaches `7d`, so an element on the far side of zero with
/// `x / d > 7.5` would be clamped with an error above `|d| / 2`. In that case
/// the scale becomes `x_far / 7`, where `x_far` is the element with the
/// largest `x / d`: it maps to code 15 exactly and the largest-magnitude
/// element still lands within half a step of code 1.
pub fn quantize_block_q4(x: &[f32; BLOCK_SIZE]) -> Result<BlockQ4> {
    check_finite(x)?;
    let mut max = 0.0f32;
    let mut amax = 0.0f32;
    for &v in x {
        if v.abs() > amax {
            amax = v.abs();
            max = v;
        }
    }
    let mut d = max / -8.0;
    if d == 0.0 {
        return Ok(BlockQ4::ZERO);
    }
    let far = x
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, |m, v| m.max(v as f64 / d as f64));
    if far > 7.5 {
        let x_far = x
            .iter()
            .copied()
            .find(|&v| v as f64 / d as f64 == far)
            .expect("far element is one of the inputs");
        d = x_far / 7.0;
    }
    let mut packed = [0u8; BLOCK_SIZE / 2];
    for (j, byte) in packed.iter_mut().enumerate() {
        let lo = q4_code(x[2 * j], d);
        let hi = q4_code(x[2 * j + 1], d);
        *byte = lo | (hi << 4);
    }
    Ok(BlockQ4 { scale: d, packed })
}

// Code decisions divide in f64 so that rounding of the quotient can never
// move an element across a code boundary.
#[inline]
fn q4_code(v: f32, d: f32) -> u8 {
    (v as f64 / d as f64 + 8.5).floor().clamp(0.0, 15.0) as u8
}

pub fn dequantize_block_q4(b: &BlockQ4) -> [f32; BLOCK_SIZE] {
    std::array::from_fn(|i| (b.code(i) as i32 - Q4_OFFSET) as f32 * b.scale)
}

/// Quantizes a row whose length is a multiple of 32, one block per chunk.
pub fn quantize_row_q4(row: &[f32]) -> Result<Vec<BlockQ4>> {
    check_block_multiple(row.len())?;
    row.chunks_exact(BLOCK_SIZE)
        .map(|c| quantize_block_q4(c.try_into().expect("chunk of BLOCK_SIZE")))
        .collect()
}

/// Quantizes one block of activations to Q8 with scale `max|x| / 127`.
pub fn quantize_block_q8(x: &[f32; BLOCK_SIZE]) -> Result<BlockQ8> {
    check_finite(x)?;
    let amax = x.iter().fold(0.0f32, |m, v| m.max(v.abs()));
    let d = amax / Q8_MAX as f32;
    if d == 0.0 {
        return Ok(BlockQ8::ZERO);
    }
    let codes = std::array::from_fn(|i| {
        // f64::round is round-half-away-from-zero.
        (x[i] as f64 / d as f64).round().clamp(-127.0, 127.0) as i8
    });
    Ok(BlockQ8 { scale: d, codes })
}

pub fn quantize_vec_q8(x: &[f32]) -> Result<QuantVectorQ8> {
    check_block_multiple(x.len())?;
    let blocks = x
        .chunks_exact(BLOCK_SIZE)
        .map(|c| quantize_block_q8(c.try_into().expect("chunk of BLOCK_SIZE")))
        .collect::<Result<Vec<_>>>()?;
    QuantVectorQ8::from_blocks(blocks)
}

pub fn dequantize_block_q8(b: &BlockQ8) -> [f32; BLOCK_SIZE] {
    std::array::from_fn(|i| b.codes[i] as f32 * b.scale)
}

pub fn dequantize_vec_q8(v: &QuantVectorQ8) -> Vec<f32> {
    v.blocks.iter().flat_map(dequantize_block_q8).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::round_trip_bound;
    use proptest::prelude::*;

    fn block(f: impl Fn(usize) -> f32) -> [f32; BLOCK_SIZE] {
        std::array::from_fn(f)
    }

    #[test]
    fn q4_zero_block() {
        let b = quantize_block_q4(&[0.0; BLOCK_SIZE]).unwrap();
        assert_eq!(b.scale(), 0.0);
        assert_eq!(b.codes(), [8; BLOCK_SIZE]);
        assert_eq!(b, BlockQ4::ZERO);
    }

    #[test]
    fn q4_single_negative_eight() {
        let x = block(|i| if i == 0 { -8.0 } else { 0.0 });
        let b = quantize_block_q4(&x).unwrap();
        assert_eq!(b.scale(), 1.0);
        assert_eq!(b.code(0), 0);
        assert!((1..BLOCK_SIZE).all(|i| b.code(i) == 8));
        assert_eq!(dequantize_block_q4(&b), x);
    }

    #[test]
    fn q4_constant_positive_block() {
        for c in [0.25f32, 1.0, 3.7, 1e6] {
            let b = quantize_block_q4(&[c; BLOCK_SIZE]).unwrap();
            assert_eq!(b.scale(), -c / 8.0);
            assert_eq!(b.codes(), [0; BLOCK_SIZE]);
            assert_eq!(dequantize_block_q4(&b), [c; BLOCK_SIZE]);
        }
    }

    #[test]
    fn q4_ties_pick_lowest_index() {
        let x = block(|i| match i {
            3 => -2.0,
            9 => -2.0,
            _ => 0.5,
        });
        let b = quantize_block_q4(&x).unwrap();
        assert_eq!(b.scale(), 0.25);
        assert_eq!(b.code(3), 0);
        assert_eq!(b.code(9), 0);
        assert_eq!(b.code(0), 10);
    }

    #[test]
    fn q4_far_side_extreme_widens_scale() {
        // With d = 2 / -8 the -2.0 twin would sit at x/d = 8 and clamp.
        let x = block(|i| match i {
            3 => 2.0,
            9 => -2.0,
            _ => 0.5,
        });
        let b = quantize_block_q4(&x).unwrap();
        assert_eq!(b.scale(), -2.0 / 7.0);
        assert_eq!(b.code(9), 15);
        assert_eq!(b.code(3), 1);
        let y = dequantize_block_q4(&b);
        assert!((y[3] - 2.0).abs() < 1e-6 && (y[9] + 2.0).abs() < 1e-6);

        // Just inside the limit the plain scale is kept.
        let x = block(|i| match i {
            0 => -8.0,
            1 => 7.5,
            _ => 0.0,
        });
        let b = quantize_block_q4(&x).unwrap();
        assert_eq!(b.scale(), 1.0);
        assert_eq!(b.code(1), 15);
    }

    #[test]
    fn q4_dequantize_formula() {
        let mut codes = [8u8; BLOCK_SIZE];
        codes[5] = 15;
        let b = BlockQ4::new(1.0, codes).unwrap();
        assert_eq!(dequantize_block_q4(&b)[5], 7.0);
        assert_eq!(dequantize_block_q4(&BlockQ4::ZERO), [0.0; BLOCK_SIZE]);
    }

    #[test]
    fn q4_rejects_non_finite() {
        let mut x = [1.0f32; BLOCK_SIZE];
        x[7] = f32::NAN;
        assert!(matches!(quantize_block_q4(&x), Err(Error::NonFinite)));
        x[7] = f32::INFINITY;
        assert!(matches!(quantize_block_q4(&x), Err(Error::NonFinite)));
        assert!(matches!(quantize_vec_q8(&x), Err(Error::NonFinite)));
    }

    #[test]
    fn row_shape_errors() {
        assert!(matches!(quantize_row_q4(&[0.0; 33]), Err(Error::Shape(_))));
        assert!(matches!(quantize_row_q4(&[]), Err(Error::Shape(_))));
        assert!(matches!(quantize_vec_q8(&[0.0; 48]), Err(Error::Shape(_))));
        assert!(matches!(
            QuantMatrixQ4::quantize(2, 40, &[0.0; 80]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn row_of_zeros_and_single_block() {
        let blocks = quantize_row_q4(&[0.0; 64]).unwrap();
        assert_eq!(blocks, vec![BlockQ4::ZERO; 2]);
        let x = block(|i| (i as f32 - 10.0) * 0.3);
        assert_eq!(quantize_row_q4(&x).unwrap(), vec![quantize_block_q4(&x).unwrap()]);
    }

    #[test]
    fn q8_examples() {
        let z = quantize_vec_q8(&[0.0; 32]).unwrap();
        assert_eq!(z.blocks()[0], BlockQ8::ZERO);
        let x = block(|i| if i == 0 { 127.0 } else { 0.0 });
        let b = quantize_block_q8(&x).unwrap();
        assert_eq!(b.scale(), 1.0);
        assert_eq!(b.codes()[0], 127);
        assert!(b.codes()[1..].iter().all(|&c| c == 0));

        let mut codes = [0i8; BLOCK_SIZE];
        codes[0] = 3;
        let b = BlockQ8::new(2.0, codes).unwrap();
        assert_eq!(dequantize_block_q8(&b)[0], 6.0);
        let v = QuantVectorQ8::from_blocks(vec![BlockQ8::ZERO]).unwrap();
        assert_eq!(dequantize_vec_q8(&v), vec![0.0; 32]);
    }

    #[test]
    fn q8_rounds_half_away_from_zero() {
        // d = 1, so the codes are round(x).
        let x = block(|i| match i {
            0 => 127.0,
            1 => 2.5,
            2 => -2.5,
            3 => 0.5,
            4 => -0.5,
            _ => 0.0,
        });
        let b = quantize_block_q8(&x).unwrap();
        assert_eq!(&b.codes()[..5], &[127, 3, -3, 1, -1]);
    }

    #[test]
    fn block_constructors_check_invariants() {
        let mut codes = [8u8; BLOCK_SIZE];
        codes[0] = 16;
        assert!(BlockQ4::new(1.0, codes).is_err());
        codes[0] = 3;
        assert!(BlockQ4::new(0.0, codes).is_err());
        assert!(BlockQ4::new(f32::NAN, [8; BLOCK_SIZE]).is_err());
        let mut q8 = [0i8; BLOCK_SIZE];
        q8[1] = -128;
        assert!(BlockQ8::new(1.0, q8).is_err());
        q8[1] = 1;
        assert!(BlockQ8::new(0.0, q8).is_err());
    }

    #[test]
    fn packed_layout_is_low_nibble_first() {
        let codes = std::array::from_fn(|i| (i % 16) as u8);
        let b = BlockQ4::new(0.5, codes).unwrap();
        assert_eq!(b.packed()[0], 0x10);
        assert_eq!(b.packed()[1], 0x32);
        assert_eq!(b.codes(), codes);
    }

    fn finite_block() -> impl Strategy<Value = [f32; BLOCK_SIZE]> {
        (
            prop::array::uniform32(-1.0f32..1.0),
            -20i32..20,
        )
            .prop_map(|(x, e)| x.map(|v| v * 2f32.powi(e)))
    }

    proptest! {
        #[test]
        fn q4_round_trip_bound(x in finite_block()) {
            let b = quantize_block_q4(&x).unwrap();
            let y = dequantize_block_q4(&b);
            let half = b.scale().abs() as f64 / 2.0;
            for i in 0..BLOCK_SIZE {
                let exact = (b.code(i) as f64 - 8.0) * b.scale() as f64;
                prop_assert!((exact - x[i] as f64).abs() <= half);
                prop_assert!((y[i] as f64 - x[i] as f64).abs() <= round_trip_bound(b.scale(), y[i]));
            }
        }

        #[test]
        fn q8_round_trip_bound(x in finite_block()) {
            let b = quantize_block_q8(&x).unwrap();
            let y = dequantize_block_q8(&b);
            let half = b.scale().abs() as f64 / 2.0;
            for i in 0..BLOCK_SIZE {
                let exact = b.codes()[i] as f64 * b.scale() as f64;
                prop_assert!((exact - x[i] as f64).abs() <= half);
                prop_assert!((y[i] as f64 - x[i] as f64).abs() <= round_trip_bound(b.scale(), y[i]));
            }
        }

        #[test]
        fn q4_power_of_two_scaling(x in finite_block(), k in -8i32..8) {
            let c = 2f32.powi(k);
            let b = quantize_block_q4(&x).unwrap();
            let bc = quantize_block_q4(&x.map(|v| v * c)).unwrap();
            prop_assert_eq!(bc.codes(), b.codes());
            prop_assert_eq!(bc.scale().to_bits(), (b.scale() * c).to_bits());
        }

        #[test]
        fn q4_row_concatenation(a in prop::collection::vec(-4.0f32..4.0, 32..=32),
                                b in prop::collection::vec(-4.0f32..4.0, 64..=64)) {
            let mut ab = a.clone();
            ab.extend_from_slice(&b);
            let mut expected = quantize_row_q4(&a).unwrap();
            expected.extend(quantize_row_q4(&b).unwrap());
            prop_assert_eq!(quantize_row_q4(&ab).unwrap(), expected);
        }

        #[test]
        fn quantization_is_deterministic(x in finite_block()) {
            let a = quantize_block_q4(&x).unwrap();
            let b = quantize_block_q4(&x).unwrap();
            prop_assert_eq!(a.scale().to_bits(), b.scale().to_bits());
            prop_assert_eq!(a.packed(), b.packed());
        }
    }
}
