use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qgemv::bench::{self, verify, BenchRecord, SweepConfig};
use qgemv::parallel::NumaPolicy;
use qgemv::toymodel::{LayerShapes, ToyDecoder, DEFAULT_GEN_TOKENS, DEFAULT_PROMPT_LEN};
use qgemv::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;

/// Quantized GEMV benchmarks and self-checks.
#[derive(Parser)]
#[command(name = "qbench", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Single-thread size sweep of the quantized kernel against the naive baseline.
    Sweep {
        /// Square matrix sizes, multiples of 32.
        #[arg(long, value_delimiter = ',', default_value = "256,512,1024,2048,4096")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 10)]
        reps: usize,
        #[arg(long, default_value_t = 3)]
        warmup: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Decoder prefill and generation throughput across threads and policies.
    Threads {
        #[arg(long, default_value = "toy", value_parser = ["toy", "llama8b-layer"])]
        preset: String,
        /// Thread counts [default: 1, 2, 4, ... up to the CPU count].
        #[arg(long, value_delimiter = ',')]
        threads: Vec<usize>,
        /// Policies: alloff, bind, interleave, balancing, or all.
        #[arg(long, value_delimiter = ',', default_value = "interleave")]
        policy: Vec<String>,
        #[arg(long, default_value_t = DEFAULT_PROMPT_LEN)]
        prompt: usize,
        #[arg(long, default_value_t = DEFAULT_GEN_TOKENS)]
        tokens: usize,
        #[arg(long, default_value_t = 1)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        warmup: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Runs the self-check suite; exits 1 if any property fails.
    Verify,
    /// Writes a seeded decoder as .qmat files plus a manifest.
    ExportModel {
        #[arg(long, default_value = "toy", value_parser = ["toy", "llama8b-layer"])]
        preset: String,
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

#[derive(Args)]
struct Common {
    /// Workload seed; QBENCH_SEED takes precedence when set.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// CSV output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("qbench: {e}");
            let usage = matches!(
                e,
                Error::InvalidArgument(_) | Error::Shape(_) | Error::InvalidPlan(_)
            );
            ExitCode::from(if usage { EXIT_USAGE } else { EXIT_FAILURE })
        }
    }
}

fn run(command: Command) -> qgemv::Result<ExitCode> {
    match command {
        Command::Sweep { sizes, reps, warmup, common } => {
            let cfg = SweepConfig {
                sizes,
                reps,
                warmup,
                seed: seed(common.seed)?,
                ..SweepConfig::default()
            };
            let records = bench::sweep_sizes(&cfg)?;
            eprintln!("size  quantized_gops  baseline_gops  speedup");
            for (size, speedup) in bench::speedups(&records) {
                let g = |k: &str| records.iter().find(|r| r.kernel == k && r.m == size).map_or(0.0, |r| r.gops);
                eprintln!(
                    "{size:>5}  {:>14.3}  {:>13.3}  {speedup:>7.3}",
                    g(bench::KERNEL_QUANTIZED),
                    g(bench::KERNEL_BASELINE)
                );
            }
            write_records(&records, common.out)?;
        }
        Command::Threads { preset, threads, policy, prompt, tokens, reps, warmup, common } => {
            let defaults = SweepConfig::default();
            let cfg = SweepConfig {
                threads: if threads.is_empty() { defaults.threads.clone() } else { threads },
                policies: parse_policies(&policy)?,
                reps,
                warmup,
                seed: seed(common.seed)?,
                prompt_len: prompt,
                gen_tokens: tokens,
                ..defaults
            };
            let shapes = LayerShapes::preset(&preset)?;
            let records = bench::sweep_threads_logged(&cfg, shapes, |line| eprintln!("placement: {line}"))?;
            eprintln!("phase     threads  policy      tokens/s");
            for r in &records {
                eprintln!(
                    "{:<9} {:>7}  {:<10} {:>9.2}",
                    r.kernel,
                    r.threads,
                    r.policy,
                    bench::tokens_per_second(r)
                );
            }
            write_records(&records, common.out)?;
        }
        Command::Verify => {
            let checks = verify::run_all();
            let ok = verify::report(&checks, &mut std::io::stdout()).map_err(|e| Error::io("<stdout>", e))?;
            return Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(EXIT_FAILURE) });
        }
        Command::ExportModel { preset, dir, seed: s } => {
            let model = ToyDecoder::new(LayerShapes::preset(&preset)?, seed(s)?)?;
            let manifest = model.export(&dir, &preset)?;
            eprintln!("wrote {} matrices to {}", manifest.matrices.len(), dir.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn seed(flag: u64) -> qgemv::Result<u64> {
    match std::env::var("QBENCH_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("QBENCH_SEED={v:?} is not an unsigned integer"))),
        Err(_) => Ok(flag),
    }
}

fn parse_policies(names: &[String]) -> qgemv::Result<Vec<NumaPolicy>> {
    if names.iter().any(|n| n == "all") {
        return Ok(NumaPolicy::ALL.to_vec());
    }
    names.iter().map(|n| n.parse()).collect()
}

fn write_records(records: &[BenchRecord], out: Option<PathBuf>) -> qgemv::Result<()> {
    let comment = bench::toolchain_comment();
    match out {
        Some(path) => {
            bench::emit_csv(records, &path, Some(&comment))?;
            eprintln!("wrote {} records to {}", records.len(), path.display());
            Ok(())
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            bench::write_csv(records, &mut lock, Some(&comment))
                .and_then(|_| lock.flush())
                .map_err(|e| Error::io("<stdout>", e))
        }
    }
}
