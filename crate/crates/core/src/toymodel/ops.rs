//! fp32 scalar pieces of the decoder layer. Every reduction runs left to
//! right so a token sees the same arithmetic in both regimes.

const RMS_EPS: f32 = 1e-5;

/// Root-mean-square normalization without a learned gain.
pub fn rms_norm(x: &[f32]) -> Vec<f32> {
    let mut ss = 0.0f32;
    for v in x {
        ss += v * v;
    }
    let inv = 1.0 / (ss / x.len() as f32 + RMS_EPS).sqrt();
    x.iter().map(|v| v * inv).collect()
}

pub fn silu(x: f32) -> f32 {
    x / (1.0 + (-x).exp())
}

/// `silu(gate) * up`, elementwise.
pub fn gated(gate: &[f32], up: &[f32]) -> Vec<f32> {
    gate.iter().zip(up).map(|(&g, &u)| silu(g) * u).collect()
}

pub fn add_assign(x: &mut [f32], y: &[f32]) {
    for (a, b) in x.iter_mut().zip(y) {
        *a += b;
    }
}

/// Multi-head attention of one query over the first `len` cached tokens.
/// `keys` and `values` hold one `q.len()`-wide row per token.
pub fn attend(q: &[f32], keys: &[f32], values: &[f32], len: usize, head_dim: usize) -> Vec<f32> {
    let d = q.len();
    debug_assert!(keys.len() >= len * d && values.len() >= len * d);
    let scale = 1.0 / (head_dim as f32).sqrt();
    let mut out = vec![0.0f32; d];
    let mut scores = vec![0.0f32; len];
    for h in (0..d).step_by(head_dim) {
        let qh = &q[h..h + head_dim];
        let mut max = f32::NEG_INFINITY;
        for (t, s) in scores.iter_mut().enumerate() {
            let kh = &keys[t * d + h..t * d + h + head_dim];
            let mut dot = 0.0f32;
            for i in 0..head_dim {
                dot += qh[i] * kh[i];
            }
            *s = dot * scale;
            max = max.max(*s);
        }
        let mut denom = 0.0f32;
        for s in scores.iter_mut() {
            *s = (*s - max).exp();
            denom += *s;
        }
        let oh = &mut out[h..h + head_dim];
        for (t, s) in scores.iter().enumerate() {
            let p = s / denom;
            let vh = &values[t * d + h..t * d + h + head_dim];
            for i in 0..head_dim {
                oh[i] += p * vh[i];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rms_norm_unit_rms() {
        let y = rms_norm(&[3.0, -4.0, 0.0, 5.0]);
        let rms = (y.iter().map(|v| v * v).sum::<f32>() / 4.0).sqrt();
        assert!((rms - 1.0).abs() < 1e-5);
        assert_eq!(rms_norm(&[0.0; 8]), vec![0.0; 8]);
    }

    #[test]
    fn silu_values() {
        assert_eq!(silu(0.0), 0.0);
        assert!((silu(1.0) - 0.731_058_6).abs() < 1e-6);
        assert!(silu(-20.0).abs() < 1e-7);
    }

    #[test]
    fn single_token_attention_returns_its_value() {
        let q = [1.0, 2.0, 3.0, 4.0];
        let k = [0.5, 0.5, 0.5, 0.5];
        let v = [9.0, 8.0, 7.0, 6.0];
        assert_eq!(attend(&q, &k, &v, 1, 2), v.to_vec());
    }

    #[test]
    fn attention_weights_follow_scores() {
        // One head of width 1: scores 0 and ln 3 give weights 1/4 and 3/4.
        let q = [3f32.ln()];
        let k = [0.0, 1.0];
        let v = [4.0, 8.0];
        let out = attend(&q, &k, &v, 2, 1);
        assert!((out[0] - 7.0).abs() < 1e-5);
        // Entries past `len` are never read.
        assert_eq!(attend(&q, &k, &v, 1, 1), vec![4.0]);
    }
}
