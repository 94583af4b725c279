//! The self-check suite behind `qbench verify`: each property runs on small
//! seeded instances and reports pass or fail with a reason.

use std::io::Write;

use super::{parse_csv, write_csv, BenchRecord, CSV_HEADER};
use crate::kernels::{gemm_thin_with, gemv_quantizing, gemv_quantizing_with, KernelPath, ThinMatrix};
use crate::parallel::{partition_rows, Executor, NumaPolicy};
use crate::quant::{
    dequantize_block_q4, dequantize_block_q8, quantize_block_q4, quantize_block_q8, quantize_vec_q8, BLOCK_SIZE,
};
use crate::toymodel::{LayerShapes, ToyDecoder};
use crate::{oracle, qmat, synth};

/// Why a property failed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Failure(pub String);

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<crate::Error> for Failure {
    fn from(e: crate::Error) -> Self {
        Failure(e.to_string())
    }
}

pub type Outcome = std::result::Result<(), Failure>;

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub outcome: Outcome,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.outcome.is_ok()
    }
}

/// Runs every property against the embedded golden `.qmat`.
pub fn run_all() -> Vec<Check> {
    run_with_golden(qmat::GOLDEN_QMAT)
}

/// Runs every property, checking `golden` as the `.qmat` golden file.
pub fn run_with_golden(golden: &[u8]) -> Vec<Check> {
    let checks: [(&'static str, &dyn Fn() -> Outcome); 10] = [
        ("q4-round-trip-bound", &|| q4_round_trip(20_000)),
        ("q8-round-trip-bound", &|| q8_round_trip(20_000)),
        ("qmat-golden", &|| check_golden(golden)),
        ("csv-schema", &check_csv_schema),
        ("kernel-vs-f64-oracle", &|| kernel_vs_oracle(200)),
        ("kernel-paths-bit-identical", &kernel_paths),
        ("parallel-bitwise-determinism", &|| parallel_determinism(20)),
        ("gemm-thin-matches-gemv", &gemm_consistency),
        ("prefill-matches-generation", &regime_equivalence),
        ("decoder-thread-independence", &decoder_thread_independence),
    ];
    checks
        .iter()
        .map(|(name, f)| Check { name, outcome: f() })
        .collect()
}

/// Prints one line per check; returns whether all passed.
pub fn report<W: Write>(checks: &[Check], out: &mut W) -> std::io::Result<bool> {
    for c in checks {
        match &c.outcome {
            Ok(()) => writeln!(out, "PASS {}", c.name)?,
            Err(why) => writeln!(out, "FAIL {}: {why}", c.name)?,
        }
    }
    let failed = checks.iter().filter(|c| !c.passed()).count();
    writeln!(out, "{} passed, {failed} failed", checks.len() - failed)?;
    Ok(failed == 0)
}

fn fail<T: std::fmt::Debug>(what: &str, detail: T) -> Outcome {
    Err(Failure(format!("{what}: {detail:?}")))
}

pub fn q4_round_trip(n_blocks: usize) -> Outcome {
    let mut rng = synth::rng(101);
    for i in 0..n_blocks {
        let std = [1e-3, 1.0, 300.0][i % 3];
        let x: [f32; BLOCK_SIZE] = synth::gaussian(&mut rng, BLOCK_SIZE, std).try_into().expect("block");
        let b = quantize_block_q4(&x)?;
        let y = dequantize_block_q4(&b);
        for j in 0..BLOCK_SIZE {
            if (x[j] as f64 - y[j] as f64).abs() > oracle::round_trip_bound(b.scale(), y[j]) {
                return fail("block exceeds |scale|/2", (i, j, x[j], y[j], b.scale()));
            }
        }
    }
    Ok(())
}

pub fn q8_round_trip(n_blocks: usize) -> Outcome {
    let mut rng = synth::rng(102);
    for i in 0..n_blocks {
        let std = [1e-3, 1.0, 300.0][i % 3];
        let x: [f32; BLOCK_SIZE] = synth::gaussian(&mut rng, BLOCK_SIZE, std).try_into().expect("block");
        let b = quantize_block_q8(&x)?;
        let y = dequantize_block_q8(&b);
        for j in 0..BLOCK_SIZE {
            if (x[j] as f64 - y[j] as f64).abs() > oracle::round_trip_bound(b.scale(), y[j]) {
                return fail("block exceeds |scale|/2", (i, j, x[j], y[j], b.scale()));
            }
        }
    }
    Ok(())
}

/// The golden bytes decode to the reference matrix and re-encode exactly.
pub fn check_golden(bytes: &[u8]) -> Outcome {
    let m = qmat::decode(bytes).map_err(|e| Failure(format!("golden does not decode: {e}")))?;
    if m != qmat::golden_matrix() {
        return Err(Failure("golden decodes to a different matrix than the encoder produces".into()));
    }
    if qmat::encode(&m) != bytes {
        return Err(Failure("golden does not re-encode byte-exactly".into()));
    }
    Ok(())
}

pub fn check_csv_schema() -> Outcome {
    let rec = BenchRecord {
        kernel: "gemv_quantizing".into(),
        m: 1024,
        n: 1024,
        batch: 1,
        threads: 1,
        policy: "alloff".into(),
        reps: 10,
        seconds_mean: 0.0015,
        seconds_min: 0.001,
        gops: 2.097152,
        warnings: vec!["no-numa".into(), "pin-failed".into()],
    };
    let mut buf = Vec::new();
    write_csv(std::slice::from_ref(&rec), &mut buf, Some("schema check")).map_err(|e| Failure(e.to_string()))?;
    let text = String::from_utf8(buf).map_err(|e| Failure(e.to_string()))?;
    let want = format!(
        "# schema check\n{CSV_HEADER}\ngemv_quantizing,1024,1024,1,1,alloff,10,0.0015,0.001,2.097152,no-numa;pin-failed\n"
    );
    if text != want {
        return fail("unexpected CSV text", text);
    }
    match parse_csv(&text) {
        Ok(back) if back == [rec] => Ok(()),
        other => fail("CSV does not round-trip", other),
    }
}

pub fn kernel_vs_oracle(instances: u64) -> Outcome {
    for i in 0..instances {
        let mut rng = synth::rng(synth::derive_seed(103, i));
        let rows = 1 + (i as usize * 7) % 24;
        let cols = BLOCK_SIZE * (1 + (i as usize * 13) % 64);
        let a = synth::gaussian_q4(&mut rng, rows, cols, 1.0)?;
        let x = synth::gaussian(&mut rng, cols, 1.0);
        let xq = quantize_vec_q8(&x)?;
        let got = crate::kernels::gemv_q4_q8(&a, &xq)?;
        if let Some(v) = oracle::first_violation(&got, &oracle::dequantized_gemv(&a, &xq), 1e-4) {
            return fail("outside 1e-4 of oracle", (i, v));
        }
    }
    Ok(())
}

pub fn kernel_paths() -> Outcome {
    let paths = KernelPath::available();
    for i in 0..20u64 {
        let mut rng = synth::rng(synth::derive_seed(104, i));
        let cols = BLOCK_SIZE * (1 + i as usize * 5);
        let a = synth::gaussian_q4(&mut rng, 13, cols, 1.0)?;
        let x = synth::gaussian(&mut rng, cols, 1.0);
        let want = bits(&gemv_quantizing_with(KernelPath::Scalar, &a, &x)?);
        for &p in &paths {
            if bits(&gemv_quantizing_with(p, &a, &x)?) != want {
                return fail("path differs from scalar", (p, i));
            }
        }
    }
    Ok(())
}

pub fn parallel_determinism(instances: u64) -> Outcome {
    let execs: Vec<Executor> = [1, 2, 4, 8]
        .into_iter()
        .flat_map(|t| NumaPolicy::ALL.into_iter().map(move |p| (t, p)))
        .map(|(t, p)| Executor::new(t, p))
        .collect::<crate::Result<_>>()?;
    for i in 0..instances {
        let mut rng = synth::rng(synth::derive_seed(105, i));
        let rows = 1 + (i as usize * 11) % 70;
        let a = synth::gaussian_q4(&mut rng, rows, 256, 1.0)?;
        let x = synth::gaussian(&mut rng, 256, 1.0);
        let want = bits(&gemv_quantizing(&a, &x)?);
        for exec in &execs {
            let placed = exec.place(a.clone())?;
            if bits(&exec.gemv(&placed, &x)?) != want {
                return fail("executor differs from serial", (i, exec.threads(), exec.policy()));
            }
        }
        for t in [2, 4, 8] {
            let plan = partition_rows(rows, t)?;
            let y = crate::parallel::parallel_gemv(&a, &x, &plan, NumaPolicy::AllOff)?;
            if bits(&y) != want {
                return fail("parallel_gemv differs from serial", (i, t));
            }
        }
    }
    Ok(())
}

pub fn gemm_consistency() -> Outcome {
    let mut rng = synth::rng(106);
    let a = synth::gaussian_q4(&mut rng, 29, 320, 1.0)?;
    for b in [1, 2, 8, 32] {
        let x = ThinMatrix::new(320, b, synth::gaussian(&mut rng, 320 * b, 1.0))?;
        for path in KernelPath::available() {
            let y = gemm_thin_with(path, &a, &x)?;
            for j in 0..b {
                let col = gemv_quantizing_with(path, &a, x.column(j))?;
                if bits(y.column(j)) != bits(&col) {
                    return fail("column differs from gemv", (b, j, path));
                }
            }
        }
    }
    Ok(())
}

fn small_model() -> crate::Result<ToyDecoder> {
    ToyDecoder::new(LayerShapes::new(128, 192, 2)?, 107)
}

pub fn regime_equivalence() -> Outcome {
    let mut model = small_model()?;
    let exec = Executor::serial();
    for p in [1, 4, 9] {
        let (hidden, _) = model.prefill(&exec, p)?;
        model.reset();
        let mut last = Vec::new();
        for pos in 0..p {
            let x = model.embedding(pos);
            last = model.decode_step(&exec, &x)?;
        }
        if bits(hidden.column(p - 1)) != bits(&last) {
            return fail("prefill final token differs from sequential steps", p);
        }
    }
    Ok(())
}

pub fn decoder_thread_independence() -> Outcome {
    let mut model = small_model()?;
    let serial = Executor::serial();
    let (want, _) = model.prefill(&serial, 5)?;
    for (t, policy) in [(2, NumaPolicy::CoreBinding), (4, NumaPolicy::MemoryInterleave)] {
        let exec = Executor::new(t, policy)?;
        model.place_on(&exec)?;
        let (got, _) = model.prefill(&exec, 5)?;
        if bits(got.values()) != bits(want.values()) {
            return fail("hidden states depend on the executor", (t, policy));
        }
    }
    Ok(())
}

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}
