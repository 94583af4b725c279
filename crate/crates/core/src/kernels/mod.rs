//! Q4 x Q8 matrix-vector kernels.
//!
//! The kernel quantizes the `f32` input to Q8, then walks the rows of the
//! weight matrix and, within a row, its blocks. Each block pair contributes
//! `(scale_a * scale_x) * S`, where `S = sum((a_i - 8) * x_i)` is an exact
//! `i32`. Block contributions are summed left to right in `f32`, so the
//! output is a pure function of the operands on every execution path.

mod scalar;
#[cfg(any(target_arch = "x86", target_arch = "x86_64"))]
mod avx2;

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::quant::{
    dequantize_block_q4, quantize_vec_q8, BlockQ4, BlockQ8, QuantMatrixQ4, QuantVectorQ8,
    BLOCK_SIZE,
};

/// Instruction-set path used for the integer core.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelPath {
    Scalar,
    Avx2,
}

impl KernelPath {
    /// Fastest path supported by the running CPU.
    pub fn detect() -> KernelPath {
        static DETECTED: OnceLock<KernelPath> = OnceLock::new();
        *DETECTED.get_or_init(|| {
            Self::available()
                .into_iter()
                .last()
                .unwrap_or(KernelPath::Scalar)
        })
    }

    /// Every path the running CPU supports, scalar first.
    pub fn available() -> Vec<KernelPath> {
        let mut paths = vec![KernelPath::Scalar];
        #[cfg(any(target_arch = "x86", target_arch = "x86_64"))]
        if std::is_x86_feature_detected!("avx2") {
            paths.push(KernelPath::Avx2);
        }
        paths
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelPath::Scalar => "scalar",
            KernelPath::Avx2 => "avx2",
        }
    }

    fn check(self) -> KernelPath {
        if self == KernelPath::Avx2 {
            assert!(
                KernelPath::detect() == KernelPath::Avx2,
                "avx2 kernel path requested on a CPU without avx2"
            );
        }
        self
    }
}

#[inline(always)]
fn combine(scale_a: f32, scale_x: f32, sum: i32) -> f32 {
    (scale_a * scale_x) * sum as f32
}

/// Row-major `f32` matrix, used as the accuracy reference operand.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f32>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f32>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::shape(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if values.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                what: "dense matrix values",
                expected: rows * cols,
                got: values.len(),
            });
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(DenseMatrix { rows, cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn quantize(&self) -> Result<QuantMatrixQ4> {
        QuantMatrixQ4::quantize(self.rows, self.cols, &self.values)
    }
}

/// A batch of activation vectors stored column-major: column `j` is the
/// contiguous slice `values[j * rows..(j + 1) * rows]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThinMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f32>,
}

impl ThinMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f32>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::shape(format!(
                "thin matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if values.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                what: "thin matrix values",
                expected: rows * cols,
                got: values.len(),
            });
        }
        Ok(ThinMatrix { rows, cols, values })
    }

    pub fn from_columns<C: AsRef<[f32]>>(columns: &[C]) -> Result<Self> {
        let rows = columns.first().map(|c| c.as_ref().len()).unwrap_or(0);
        let mut values = Vec::with_capacity(rows * columns.len());
        for c in columns {
            let c = c.as_ref();
            if c.len() != rows {
                return Err(Error::DimensionMismatch {
                    what: "thin matrix column",
                    expected: rows,
                    got: c.len(),
                });
            }
            values.extend_from_slice(c);
        }
        Self::new(rows, columns.len(), values)
    }

    /// Vector length (the shared inner dimension).
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Batch size.
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn column(&self, j: usize) -> &[f32] {
        &self.values[j * self.rows..(j + 1) * self.rows]
    }

    pub fn column_mut(&mut self, j: usize) -> &mut [f32] {
        &mut self.values[j * self.rows..(j + 1) * self.rows]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[f32]> {
        self.values.chunks_exact(self.rows)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    /// Builds a column-major matrix from a row-major `rows x cols` buffer.
    pub(crate) fn from_row_major(rows: usize, cols: usize, row_major: &[f32]) -> Result<Self> {
        let mut values = vec![0.0f32; rows * cols];
        for (r, row) in row_major.chunks_exact(cols).enumerate() {
            for (j, &v) in row.iter().enumerate() {
                values[j * rows + r] = v;
            }
        }
        Self::new(rows, cols, values)
    }
}

/// Dot product of one weight block and one activation block.
pub fn dot_block_q4_q8(a: &BlockQ4, b: &BlockQ8) -> f32 {
    combine(a.scale(), b.scale(), block_sum(KernelPath::Scalar, a, b))
}

/// Exact integer core `sum((a_i - 8) * b_i)` on the given path.
pub fn block_sum(path: KernelPath, a: &BlockQ4, b: &BlockQ8) -> i32 {
    match path.check() {
        KernelPath::Scalar => scalar::block_sum(a, b),
        #[cfg(any(target_arch = "x86", target_arch = "x86_64"))]
        // SAFETY: `check` verified avx2 support.
        KernelPath::Avx2 => unsafe { avx2::block_sum(a, b) },
        #[cfg(not(any(target_arch = "x86", target_arch = "x86_64")))]
        KernelPath::Avx2 => unreachable!(),
    }
}

/// Computes `out.len()` consecutive rows held contiguously in `slab`.
pub(crate) fn gemv_rows(path: KernelPath, slab: &[BlockQ4], x: &[BlockQ8], out: &mut [f32]) {
    match path.check() {
        KernelPath::Scalar => scalar::gemv_rows(slab, x, out),
        #[cfg(any(target_arch = "x86", target_arch = "x86_64"))]
        // SAFETY: `check` verified avx2 support.
        KernelPath::Avx2 => unsafe { avx2::gemv_rows(slab, x, out) },
        #[cfg(not(any(target_arch = "x86", target_arch = "x86_64")))]
        KernelPath::Avx2 => unreachable!(),
    }
}

/// Row-major output of `slab` against every column in `cols`.
pub(crate) fn gemm_rows(path: KernelPath, slab: &[BlockQ4], cols: &[&[BlockQ8]], out: &mut [f32]) {
    match path.check() {
        KernelPath::Scalar => scalar::gemm_rows(slab, cols, out),
        #[cfg(any(target_arch = "x86", target_arch = "x86_64"))]
        // SAFETY: `check` verified avx2 support.
        KernelPath::Avx2 => unsafe { avx2::gemm_rows(slab, cols, out) },
        #[cfg(not(any(target_arch = "x86", target_arch = "x86_64")))]
        KernelPath::Avx2 => unreachable!(),
    }
}

fn check_inner(a: &QuantMatrixQ4, n: usize) -> Result<()> {
    if a.cols() != n {
        return Err(Error::DimensionMismatch {
            what: "gemv inner dimension",
            expected: a.cols(),
            got: n,
        });
    }
    Ok(())
}

pub fn gemv_q4_q8(a: &QuantMatrixQ4, x: &QuantVectorQ8) -> Result<Vec<f32>> {
    gemv_q4_q8_with(KernelPath::detect(), a, x)
}

pub fn gemv_q4_q8_with(path: KernelPath, a: &QuantMatrixQ4, x: &QuantVectorQ8) -> Result<Vec<f32>> {
    check_inner(a, x.len())?;
    let mut out = vec![0.0f32; a.rows()];
    gemv_rows(path, a.blocks(), x.blocks(), &mut out);
    Ok(out)
}

/// The full kernel: quantize `x` to Q8, then run the Q4 x Q8 GEMV.
pub fn gemv_quantizing(a: &QuantMatrixQ4, x: &[f32]) -> Result<Vec<f32>> {
    gemv_quantizing_with(KernelPath::detect(), a, x)
}

pub fn gemv_quantizing_with(path: KernelPath, a: &QuantMatrixQ4, x: &[f32]) -> Result<Vec<f32>> {
    check_inner(a, x.len())?;
    gemv_q4_q8_with(path, a, &quantize_vec_q8(x)?)
}

/// Thin GEMM: every column of `x` is quantized and multiplied by `a`.
/// Column `j` of the result is bitwise equal to `gemv_quantizing(a, x.column(j))`.
pub fn gemm_thin(a: &QuantMatrixQ4, x: &ThinMatrix) -> Result<ThinMatrix> {
    gemm_thin_with(KernelPath::detect(), a, x)
}

pub fn gemm_thin_with(path: KernelPath, a: &QuantMatrixQ4, x: &ThinMatrix) -> Result<ThinMatrix> {
    check_inner(a, x.rows())?;
    let quantized = quantize_columns(x)?;
    let cols: Vec<&[BlockQ8]> = quantized.iter().map(|q| q.blocks()).collect();
    let mut row_major = vec![0.0f32; a.rows() * x.cols()];
    gemm_rows(path, a.blocks(), &cols, &mut row_major);
    ThinMatrix::from_row_major(a.rows(), x.cols(), &row_major)
}

pub(crate) fn quantize_columns(x: &ThinMatrix) -> Result<Vec<QuantVectorQ8>> {
    x.columns().map(quantize_vec_q8).collect()
}

/// Dense reference product accumulated in `f64`, rounded to `f32` at the end.
pub fn gemv_f32_reference(a: &DenseMatrix, x: &[f32]) -> Result<Vec<f32>> {
    if a.cols() != x.len() {
        return Err(Error::DimensionMismatch {
            what: "reference gemv inner dimension",
            expected: a.cols(),
            got: x.len(),
        });
    }
    Ok(a.values()
        .chunks_exact(a.cols())
        .map(|row| {
            row.iter()
                .zip(x)
                .map(|(&w, &v)| w as f64 * v as f64)
                .sum::<f64>() as f32
        })
        .collect())
}

/// Baseline for speed comparisons: dequantize each weight block to `f32`
/// and take a plain `f32` dot with the unquantized input.
pub fn gemv_naive_baseline(a: &QuantMatrixQ4, x: &[f32]) -> Result<Vec<f32>> {
    check_inner(a, x.len())?;
    let mut out = Vec::with_capacity(a.rows());
    for r in 0..a.rows() {
        let mut acc = 0.0f32;
        for (k, block) in a.row(r).iter().enumerate() {
            let w = dequantize_block_q4(block);
            let xs = &x[k * BLOCK_SIZE..(k + 1) * BLOCK_SIZE];
            for i in 0..BLOCK_SIZE {
                acc += w[i] * xs[i];
            }
        }
        out.push(acc);
    }
    Ok(out)
}
