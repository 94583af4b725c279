//! A synthetic decoder stack for throughput measurement.
//!
//! Each layer is pre-norm causal self-attention followed by a SiLU-gated
//! MLP, with every projection a Q4 matrix. Prefill pushes the whole prompt
//! through as one thin GEMM per projection; generation runs one GEMV per
//! projection per token. Token embeddings are seeded pseudo-random vectors,
//! so there is no tokenizer and no sampling.

mod manifest;
pub mod ops;

use std::path::Path;
use std::time::Instant;

pub use manifest::{Manifest, ManifestEntry, MANIFEST_FILE};

use crate::error::{Error, Result};
use crate::kernels::ThinMatrix;
use crate::parallel::{Executor, PlacedMatrix};
use crate::qmat;
use crate::quant::{QuantMatrixQ4, BLOCK_SIZE};
use crate::synth;

pub const DEFAULT_PROMPT_LEN: usize = 22;
pub const DEFAULT_GEN_TOKENS: usize = 256;

/// Stream tag for token embeddings; weight streams use small tags.
const EMBED_STREAM: u64 = 1 << 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShapes {
    pub d_model: usize,
    pub d_ff: usize,
    pub n_layers: usize,
}

impl LayerShapes {
    pub const TOY: LayerShapes = LayerShapes { d_model: 512, d_ff: 1376, n_layers: 2 };
    /// One layer at Llama-3-8B widths.
    pub const LLAMA8B_LAYER: LayerShapes = LayerShapes { d_model: 4096, d_ff: 14336, n_layers: 1 };

    pub const PRESETS: [(&'static str, LayerShapes); 2] =
        [("toy", Self::TOY), ("llama8b-layer", Self::LLAMA8B_LAYER)];

    pub fn new(d_model: usize, d_ff: usize, n_layers: usize) -> Result<Self> {
        let s = LayerShapes { d_model, d_ff, n_layers };
        s.validate()?;
        Ok(s)
    }

    pub fn preset(name: &str) -> Result<Self> {
        Self::PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, s)| *s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown preset {name:?} (expected toy or llama8b-layer)")))
    }

    pub fn validate(&self) -> Result<()> {
        for (what, v) in [("d_model", self.d_model), ("d_ff", self.d_ff)] {
            if v == 0 || v % BLOCK_SIZE != 0 {
                return Err(Error::shape(format!("{what} must be a positive multiple of {BLOCK_SIZE}, got {v}")));
            }
        }
        if self.n_layers == 0 {
            return Err(Error::shape("n_layers must be at least 1"));
        }
        Ok(())
    }

    /// Attention head width: 64 when it divides `d_model`, else 32.
    pub fn head_dim(&self) -> usize {
        if self.d_model.is_multiple_of(64) {
            64
        } else {
            32
        }
    }

    pub fn n_heads(&self) -> usize {
        self.d_model / self.head_dim()
    }

    /// Total output rows of all projections when each is viewed as a
    /// `rows x d_model` GEMV. `W_down` has `d_model x d_ff` shape but the
    /// same multiply count as a `d_ff x d_model` matrix.
    pub fn linear_rows(&self) -> usize {
        self.n_layers * (4 * self.d_model + 3 * self.d_ff)
    }
}

/// The seven projections of one layer, in storage order.
pub const MATRIX_NAMES: [&str; 7] = ["wq", "wk", "wv", "wo", "wup", "wgate", "wdown"];

#[derive(Debug, Clone)]
struct Layer {
    /// Indexed like [`MATRIX_NAMES`].
    w: [PlacedMatrix; 7],
    keys: Vec<f32>,
    values: Vec<f32>,
}

impl Layer {
    fn shape(shapes: &LayerShapes, k: usize) -> (usize, usize) {
        let (d, f) = (shapes.d_model, shapes.d_ff);
        match k {
            0..=3 => (d, d),
            4 | 5 => (f, d),
            _ => (d, f),
        }
    }
}

/// Wall time of each timed step within a phase.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PhaseStats {
    pub tokens: usize,
    pub step_seconds: Vec<f64>,
}

impl PhaseStats {
    pub fn seconds(&self) -> f64 {
        self.step_seconds.iter().sum()
    }

    pub fn tokens_per_second(&self) -> Result<f64> {
        let secs = self.seconds();
        if self.tokens == 0 || secs <= 0.0 {
            return Err(Error::State(format!(
                "throughput undefined for {} tokens in {secs} s",
                self.tokens
            )));
        }
        Ok(self.tokens as f64 / secs)
    }
}

#[derive(Debug, Clone)]
pub struct ToyDecoder {
    shapes: LayerShapes,
    seed: u64,
    layers: Vec<Layer>,
    prefilled: bool,
}

impl ToyDecoder {
    /// Draws every weight from N(0, std = 1/sqrt(d_model)) and quantizes it.
    /// Each matrix has its own seeded stream.
    pub fn new(shapes: LayerShapes, seed: u64) -> Result<Self> {
        shapes.validate()?;
        let std = 1.0 / (shapes.d_model as f32).sqrt();
        let mut layers = Vec::with_capacity(shapes.n_layers);
        for l in 0..shapes.n_layers {
            let mut w = Vec::with_capacity(7);
            for k in 0..7 {
                let (rows, cols) = Layer::shape(&shapes, k);
                let mut rng = synth::rng(synth::derive_seed(seed, (l * 7 + k) as u64));
                w.push(synth::gaussian_q4(&mut rng, rows, cols, std)?.into());
            }
            layers.push(new_layer(w));
        }
        Ok(ToyDecoder { shapes, seed, layers, prefilled: false })
    }

    fn from_matrices(shapes: LayerShapes, seed: u64, matrices: Vec<QuantMatrixQ4>) -> Result<Self> {
        shapes.validate()?;
        if matrices.len() != 7 * shapes.n_layers {
            return Err(Error::Format(format!(
                "expected {} matrices, found {}",
                7 * shapes.n_layers,
                matrices.len()
            )));
        }
        let mut it = matrices.into_iter();
        let mut layers = Vec::with_capacity(shapes.n_layers);
        for l in 0..shapes.n_layers {
            let mut w = Vec::with_capacity(7);
            for (k, name) in MATRIX_NAMES.iter().enumerate() {
                let m = it.next().expect("count checked");
                let want = Layer::shape(&shapes, k);
                if (m.rows(), m.cols()) != want {
                    return Err(Error::shape(format!(
                        "layer{l}.{name} is {}x{}, expected {}x{}",
                        m.rows(),
                        m.cols(),
                        want.0,
                        want.1
                    )));
                }
                w.push(m.into());
            }
            layers.push(new_layer(w));
        }
        Ok(ToyDecoder { shapes, seed, layers, prefilled: false })
    }

    pub fn shapes(&self) -> LayerShapes {
        self.shapes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Tokens held in each layer's KV cache.
    pub fn kv_len(&self) -> usize {
        self.layers[0].keys.len() / self.shapes.d_model
    }

    /// Weight matrix `name` of layer `layer`.
    pub fn matrix(&self, layer: usize, name: &str) -> Option<QuantMatrixQ4> {
        let k = MATRIX_NAMES.iter().position(|n| *n == name)?;
        self.layers.get(layer).map(|l| l.w[k].to_matrix())
    }

    /// Re-lays every weight matrix out for `exec` (sharded first touch
    /// under memory interleaving).
    pub fn place_on(&mut self, exec: &Executor) -> Result<()> {
        for layer in &mut self.layers {
            for w in layer.w.iter_mut() {
                *w = exec.place(w.to_matrix())?;
            }
        }
        Ok(())
    }

    /// Input embedding of the token at `pos`.
    pub fn embedding(&self, pos: usize) -> Vec<f32> {
        let seed = synth::derive_seed(synth::derive_seed(self.seed, EMBED_STREAM), pos as u64);
        synth::gaussian(&mut synth::rng(seed), self.shapes.d_model, 1.0)
    }

    /// Clears the KV cache.
    pub fn reset(&mut self) {
        for layer in &mut self.layers {
            layer.keys.clear();
            layer.values.clear();
        }
        self.prefilled = false;
    }

    /// Runs a fresh prompt of `prompt_len` tokens as one batch. Returns the
    /// final hidden states, one column per token.
    pub fn prefill(&mut self, exec: &Executor, prompt_len: usize) -> Result<(ThinMatrix, PhaseStats)> {
        if prompt_len == 0 {
            return Err(Error::InvalidArgument("prompt length must be at least 1".into()));
        }
        self.reset();
        let cols: Vec<Vec<f32>> = (0..prompt_len).map(|p| self.embedding(p)).collect();
        let x = ThinMatrix::from_columns(&cols)?;
        let start = Instant::now();
        let hidden = self.forward(exec, x)?;
        let stats = PhaseStats {
            tokens: prompt_len,
            step_seconds: vec![start.elapsed().as_secs_f64()],
        };
        self.prefilled = true;
        Ok((hidden, stats))
    }

    /// Generates `n_tokens` one at a time after a prefill. Each step's input
    /// is the embedding for the next position.
    pub fn generate(&mut self, exec: &Executor, n_tokens: usize) -> Result<PhaseStats> {
        if !self.prefilled {
            return Err(Error::State("generate called before prefill".into()));
        }
        let mut stats = PhaseStats { tokens: n_tokens, step_seconds: Vec::with_capacity(n_tokens) };
        for _ in 0..n_tokens {
            let x = self.embedding(self.kv_len());
            let start = Instant::now();
            self.decode_step(exec, &x)?;
            stats.step_seconds.push(start.elapsed().as_secs_f64());
        }
        Ok(stats)
    }

    /// Processes a single token at the next cache position.
    pub fn decode_step(&mut self, exec: &Executor, embedding: &[f32]) -> Result<Vec<f32>> {
        let x = ThinMatrix::new(self.shapes.d_model, 1, embedding.to_vec())?;
        Ok(self.forward(exec, x)?.into_values())
    }

    fn forward(&mut self, exec: &Executor, mut x: ThinMatrix) -> Result<ThinMatrix> {
        let d = self.shapes.d_model;
        let head_dim = self.shapes.head_dim();
        let b = x.cols();
        for layer in &mut self.layers {
            let base = layer.keys.len() / d;
            let h = map_columns(&x, ops::rms_norm)?;
            let q = exec.gemm_thin(&layer.w[0], &h)?;
            let k = exec.gemm_thin(&layer.w[1], &h)?;
            let v = exec.gemm_thin(&layer.w[2], &h)?;
            layer.keys.extend_from_slice(k.values());
            layer.values.extend_from_slice(v.values());
            let attn: Vec<Vec<f32>> = (0..b)
                .map(|j| ops::attend(q.column(j), &layer.keys, &layer.values, base + j + 1, head_dim))
                .collect();
            let o = exec.gemm_thin(&layer.w[3], &ThinMatrix::from_columns(&attn)?)?;
            for j in 0..b {
                ops::add_assign(x.column_mut(j), o.column(j));
            }

            let h = map_columns(&x, ops::rms_norm)?;
            let up = exec.gemm_thin(&layer.w[4], &h)?;
            let gate = exec.gemm_thin(&layer.w[5], &h)?;
            let act: Vec<Vec<f32>> = (0..b).map(|j| ops::gated(gate.column(j), up.column(j))).collect();
            let down = exec.gemm_thin(&layer.w[6], &ThinMatrix::from_columns(&act)?)?;
            for j in 0..b {
                ops::add_assign(x.column_mut(j), down.column(j));
            }
        }
        Ok(x)
    }

    /// Writes every matrix as `.qmat` plus a manifest into `dir`.
    pub fn export(&self, dir: impl AsRef<Path>, name: &str) -> Result<Manifest> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut entries = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            for (k, w) in layer.w.iter().enumerate() {
                let entry = ManifestEntry::new(l, MATRIX_NAMES[k], w.rows(), w.cols());
                qmat::write_file(dir.join(&entry.file), &w.to_matrix())?;
                entries.push(entry);
            }
        }
        let manifest = Manifest {
            name: name.to_string(),
            shapes: self.shapes,
            seed: self.seed,
            matrices: entries,
        };
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, manifest.render()).map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }

    /// Loads a model written by [`ToyDecoder::export`].
    pub fn import(dir: impl AsRef<Path>) -> Result<(ToyDecoder, Manifest)> {
        let dir = dir.as_ref();
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest = Manifest::parse(&text)?;
        let mut matrices = Vec::with_capacity(manifest.matrices.len());
        for (i, entry) in manifest.matrices.iter().enumerate() {
            let want = ManifestEntry::new(i / 7, MATRIX_NAMES[i % 7], 0, 0);
            if entry.name != want.name {
                return Err(Error::Format(format!("manifest entry {i} is {}, expected {}", entry.name, want.name)));
            }
            let m = qmat::read_file(dir.join(&entry.file))?;
            if (m.rows(), m.cols()) != (entry.rows, entry.cols) {
                return Err(Error::Format(format!("{} does not match its manifest shape", entry.file)));
            }
            matrices.push(m);
        }
        let model = ToyDecoder::from_matrices(manifest.shapes, manifest.seed, matrices)?;
        Ok((model, manifest))
    }
}

fn new_layer(w: Vec<PlacedMatrix>) -> Layer {
    Layer {
        w: w.try_into().expect("seven matrices per layer"),
        keys: Vec::new(),
        values: Vec::new(),
    }
}

fn map_columns(x: &ThinMatrix, f: impl Fn(&[f32]) -> Vec<f32>) -> Result<ThinMatrix> {
    let cols: Vec<Vec<f32>> = x.columns().map(f).collect();
    ThinMatrix::from_columns(&cols)
}

#[cfg(test)]
mod tests;
