//! Reference implementations used to check the kernels.
//!
//! These work in `f64` directly from block codes and scales and share no
//! code with the kernel paths.

use crate::quant::{QuantMatrixQ4, QuantVectorQ8, BLOCK_SIZE};

/// Q4 weights as `f64`, row-major.
pub fn weights_f64(a: &QuantMatrixQ4) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.rows() * a.cols());
    for b in a.blocks() {
        let d = b.scale() as f64;
        for i in 0..BLOCK_SIZE {
            out.push((b.code(i) as f64 - 8.0) * d);
        }
    }
    out
}

pub fn activations_f64(x: &QuantVectorQ8) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for b in x.blocks() {
        let d = b.scale() as f64;
        out.extend(b.codes().iter().map(|&c| c as f64 * d));
    }
    out
}

fn matvec(w: &[f64], cols: usize, x: &[f64]) -> Vec<f64> {
    w.chunks_exact(cols)
        .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

/// GEMV over the dequantized operands, in `f64`.
pub fn dequantized_gemv(a: &QuantMatrixQ4, x: &QuantVectorQ8) -> Vec<f64> {
    matvec(&weights_f64(a), a.cols(), &activations_f64(x))
}

/// Activation quantization carried out in `f64`, returning the
/// reconstructed values.
pub fn quantize_activations_f64(x: &[f32]) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for chunk in x.chunks(BLOCK_SIZE) {
        let amax = chunk.iter().fold(0.0f64, |m, &v| m.max((v as f64).abs()));
        let d = amax / 127.0;
        for &v in chunk {
            let code = if d == 0.0 {
                0.0
            } else {
                (v as f64 / d).round().clamp(-127.0, 127.0)
            };
            out.push(code * d);
        }
    }
    out
}

/// End-to-end reference: quantize `x` in `f64`, dot in `f64`.
pub fn quantizing_gemv(a: &QuantMatrixQ4, x: &[f32]) -> Vec<f64> {
    matvec(&weights_f64(a), a.cols(), &quantize_activations_f64(x))
}

/// Dequantized weights against the unquantized input, in `f64`.
pub fn weights_only_gemv(a: &QuantMatrixQ4, x: &[f32]) -> Vec<f64> {
    let xs: Vec<f64> = x.iter().map(|&v| v as f64).collect();
    matvec(&weights_f64(a), a.cols(), &xs)
}

/// `|got - want| <= tol * (1 + |want|)`.
#[inline]
pub fn within(got: f32, want: f64, tol: f64) -> bool {
    (got as f64 - want).abs() <= tol * (1.0 + want.abs())
}

/// Index and values of the first element failing [`within`].
pub fn first_violation(got: &[f32], want: &[f64], tol: f64) -> Option<(usize, f32, f64)> {
    got.iter()
        .zip(want)
        .enumerate()
        .find(|(_, (&g, &w))| !within(g, w, tol))
        .map(|(i, (&g, &w))| (i, g, w))
}

/// Half an `f32` ulp at `y`: the rounding error of producing `y` from the
/// exact reconstruction `code * scale`.
pub fn half_ulp(y: f32) -> f64 {
    let a = y.abs();
    if a == 0.0 || !a.is_finite() {
        return 0.0;
    }
    (f32::from_bits(a.to_bits() + 1) as f64 - a as f64) / 2.0
}

/// Round-trip bound for a dequantized element `y`: half a code step, plus
/// the final rounding of the reconstruction to `f32`.
pub fn round_trip_bound(scale: f32, y: f32) -> f64 {
    scale.abs() as f64 / 2.0 + half_ulp(y)
}
