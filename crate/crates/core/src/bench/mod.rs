//! Benchmark sweeps behind `qbench`.
//!
//! Operation counts use 2·m·n per GEMV (one multiply and one add per
//! weight), scaled by the batch for thin GEMM and by the token count for
//! decoder phases. GOPS are computed from the fastest repetition.

mod output;
pub mod verify;

use std::hint::black_box;
use std::time::Instant;

pub use output::{emit_csv, format_real, parse_csv, read_csv, write_csv, CSV_HEADER};

use crate::error::{Error, Result};
use crate::kernels::{gemv_naive_baseline, gemv_quantizing, KernelPath};
use crate::parallel::{Executor, HostTopology, NumaPolicy};
use crate::quant::BLOCK_SIZE;
use crate::synth;
use crate::toymodel::{LayerShapes, ToyDecoder, DEFAULT_GEN_TOKENS, DEFAULT_PROMPT_LEN};

pub const KERNEL_QUANTIZED: &str = "gemv_quantizing";
pub const KERNEL_BASELINE: &str = "gemv_naive_baseline";
pub const PHASE_PREFILL: &str = "prefill";
pub const PHASE_GENERATE: &str = "generate";

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub kernel: String,
    pub m: usize,
    pub n: usize,
    pub batch: usize,
    pub threads: usize,
    pub policy: String,
    pub reps: usize,
    pub seconds_mean: f64,
    pub seconds_min: f64,
    pub gops: f64,
    pub warnings: Vec<String>,
}

impl BenchRecord {
    /// Builds a record from per-repetition wall times.
    pub fn from_times(
        kernel: &str,
        (m, n, batch): (usize, usize, usize),
        threads: usize,
        policy: NumaPolicy,
        times: &[f64],
        warnings: Vec<String>,
    ) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::InvalidArgument("a record needs at least one repetition".into()));
        }
        let seconds_min = times.iter().copied().fold(f64::INFINITY, f64::min);
        let seconds_mean = times.iter().sum::<f64>() / times.len() as f64;
        Ok(BenchRecord {
            kernel: kernel.to_string(),
            m,
            n,
            batch,
            threads,
            policy: policy.name().to_string(),
            reps: times.len(),
            // Summation rounding can put the mean a hair under the minimum.
            seconds_mean: seconds_mean.max(seconds_min),
            seconds_min,
            gops: gops(m, n, batch, seconds_min),
            warnings,
        })
    }

    pub fn ops(&self) -> f64 {
        2.0 * self.m as f64 * self.n as f64 * self.batch as f64
    }
}

pub fn gops(m: usize, n: usize, batch: usize, seconds: f64) -> f64 {
    2.0 * m as f64 * n as f64 * batch as f64 / (seconds * 1e9)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub sizes: Vec<usize>,
    pub threads: Vec<usize>,
    pub policies: Vec<NumaPolicy>,
    pub reps: usize,
    pub warmup: usize,
    pub seed: u64,
    pub prompt_len: usize,
    pub gen_tokens: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            sizes: vec![256, 512, 1024, 2048, 4096],
            threads: default_threads(HostTopology::detect().cpus.len()),
            policies: vec![NumaPolicy::MemoryInterleave],
            reps: 10,
            warmup: 3,
            seed: 42,
            prompt_len: DEFAULT_PROMPT_LEN,
            gen_tokens: DEFAULT_GEN_TOKENS,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        let invalid = |m: String| Err(Error::InvalidArgument(m));
        if self.sizes.is_empty() || self.threads.is_empty() || self.policies.is_empty() {
            return invalid("sizes, threads and policies must be non-empty".into());
        }
        if let Some(s) = self.sizes.iter().find(|&&s| s == 0 || s % BLOCK_SIZE != 0) {
            return invalid(format!("size {s} is not a positive multiple of {BLOCK_SIZE}"));
        }
        if self.threads.contains(&0) {
            return invalid("thread counts must be positive".into());
        }
        if self.reps == 0 {
            return invalid("reps must be at least 1".into());
        }
        if self.prompt_len == 0 || self.gen_tokens == 0 {
            return invalid("prompt and token counts must be at least 1".into());
        }
        Ok(())
    }
}

/// 1, 2, 4, ... up to `cpus`, plus `cpus` itself.
pub fn default_threads(cpus: usize) -> Vec<usize> {
    let cpus = cpus.max(1);
    let mut t: Vec<usize> = std::iter::successors(Some(1usize), |t| t.checked_mul(2))
        .take_while(|&t| t <= cpus)
        .collect();
    if t.last() != Some(&cpus) {
        t.push(cpus);
    }
    t
}

/// Monotonic time source in seconds.
pub trait Clock {
    fn now(&mut self) -> f64;
}

#[derive(Debug, Clone, Copy)]
pub struct MonotonicClock {
    origin: Instant,
}

impl MonotonicClock {
    pub fn new() -> Self {
        MonotonicClock { origin: Instant::now() }
    }
}

impl Default for MonotonicClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for MonotonicClock {
    fn now(&mut self) -> f64 {
        self.origin.elapsed().as_secs_f64()
    }
}

/// Runs `f` `warmup` times untimed, then `reps` times with the clock read
/// immediately around each call.
pub fn time_reps<C: Clock, F: FnMut()>(clock: &mut C, warmup: usize, reps: usize, mut f: F) -> Vec<f64> {
    for _ in 0..warmup {
        f();
    }
    (0..reps)
        .map(|_| {
            let t0 = clock.now();
            f();
            clock.now() - t0
        })
        .collect()
}

/// Single-threaded size sweep of the quantized kernel against the naive
/// baseline, on seeded random `s x s` instances.
pub fn sweep_sizes(cfg: &SweepConfig) -> Result<Vec<BenchRecord>> {
    sweep_sizes_with_clock(cfg, &mut MonotonicClock::new())
}

pub fn sweep_sizes_with_clock<C: Clock>(cfg: &SweepConfig, clock: &mut C) -> Result<Vec<BenchRecord>> {
    cfg.validate()?;
    let mut records = Vec::with_capacity(2 * cfg.sizes.len());
    for &s in &cfg.sizes {
        let mut rng = synth::rng(synth::derive_seed(cfg.seed, s as u64));
        let a = synth::gaussian_q4(&mut rng, s, s, 1.0)?;
        let x = synth::gaussian(&mut rng, s, 1.0);
        let quantized = time_reps(clock, cfg.warmup, cfg.reps, || {
            black_box(gemv_quantizing(black_box(&a), black_box(&x)).expect("shapes match"));
        });
        let baseline = time_reps(clock, cfg.warmup, cfg.reps, || {
            black_box(gemv_naive_baseline(black_box(&a), black_box(&x)).expect("shapes match"));
        });
        let shape = (s, s, 1);
        records.push(BenchRecord::from_times(KERNEL_QUANTIZED, shape, 1, NumaPolicy::AllOff, &quantized, vec![])?);
        records.push(BenchRecord::from_times(KERNEL_BASELINE, shape, 1, NumaPolicy::AllOff, &baseline, vec![])?);
    }
    Ok(records)
}

/// GOPS ratio of the quantized kernel over the baseline, per size, in the
/// order the sizes appear.
pub fn speedups(records: &[BenchRecord]) -> Vec<(usize, f64)> {
    let mut out = Vec::new();
    for q in records.iter().filter(|r| r.kernel == KERNEL_QUANTIZED) {
        if let Some(b) = records
            .iter()
            .find(|r| r.kernel == KERNEL_BASELINE && (r.m, r.n, r.batch) == (q.m, q.n, q.batch))
        {
            out.push((q.m, q.gops / b.gops));
        }
    }
    out
}

/// Decoder prefill and generation throughput for every thread count and
/// policy. Each repetition is a fresh prefill followed by generation.
pub fn sweep_threads(cfg: &SweepConfig, shapes: LayerShapes) -> Result<Vec<BenchRecord>> {
    sweep_threads_logged(cfg, shapes, |_| {})
}

/// Like [`sweep_threads`], calling `log` with each executor's placement
/// report line.
pub fn sweep_threads_logged(
    cfg: &SweepConfig,
    shapes: LayerShapes,
    mut log: impl FnMut(&str),
) -> Result<Vec<BenchRecord>> {
    cfg.validate()?;
    let mut model = ToyDecoder::new(shapes, cfg.seed)?;
    let m = shapes.linear_rows();
    let n = shapes.d_model;
    let mut records = Vec::with_capacity(2 * cfg.threads.len() * cfg.policies.len());
    for &t in &cfg.threads {
        for &policy in &cfg.policies {
            let exec = Executor::new(t, policy)?;
            log(&exec.report().to_string());
            model.place_on(&exec)?;
            for _ in 0..cfg.warmup {
                model.prefill(&exec, cfg.prompt_len)?;
                model.generate(&exec, cfg.gen_tokens)?;
            }
            let mut prefill = Vec::with_capacity(cfg.reps);
            let mut generate = Vec::with_capacity(cfg.reps);
            for _ in 0..cfg.reps {
                prefill.push(model.prefill(&exec, cfg.prompt_len)?.1.seconds());
                generate.push(model.generate(&exec, cfg.gen_tokens)?.seconds());
            }
            let warnings = exec.report().warning_names();
            records.push(BenchRecord::from_times(
                PHASE_PREFILL,
                (m, n, cfg.prompt_len),
                t,
                policy,
                &prefill,
                warnings.clone(),
            )?);
            records.push(BenchRecord::from_times(
                PHASE_GENERATE,
                (m, n, cfg.gen_tokens),
                t,
                policy,
                &generate,
                warnings,
            )?);
        }
    }
    Ok(records)
}

/// Tokens per second implied by a decoder phase record's fastest run.
pub fn tokens_per_second(r: &BenchRecord) -> f64 {
    r.batch as f64 / r.seconds_min
}

/// Build and host description for the CSV comment line.
pub fn toolchain_comment() -> String {
    format!(
        "qbench {} rustc={} profile={} opt-level={} target={} target-features={} kernel={}",
        env!("CARGO_PKG_VERSION"),
        env!("QGEMV_RUSTC_VERSION"),
        env!("QGEMV_PROFILE"),
        env!("QGEMV_OPT_LEVEL"),
        env!("QGEMV_TARGET"),
        env!("QGEMV_TARGET_FEATURES"),
        KernelPath::detect().name(),
    )
}
