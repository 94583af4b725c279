use std::io::Write;
use std::path::Path;

use super::BenchRecord;
use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "kernel,m,n,batch,threads,policy,reps,seconds_mean,seconds_min,gops,warnings";

/// Formats like C's `%.9g`.
pub fn format_real(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    const P: i32 = 9;
    let sci = format!("{:.*e}", (P - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..P).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa), exp.abs())
    } else {
        trim_zeros(&format!("{:.*}", (P - 1 - exp) as usize, x)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Writes `records` as CSV, preceded by `comment` lines prefixed with `#`.
pub fn write_csv<W: Write>(records: &[BenchRecord], out: W, comment: Option<&str>) -> std::io::Result<()> {
    let mut out = out;
    if let Some(c) = comment {
        for line in c.lines() {
            writeln!(out, "# {line}")?;
        }
    }
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_HEADER.split(','))?;
    for r in records {
        w.write_record([
            r.kernel.clone(),
            r.m.to_string(),
            r.n.to_string(),
            r.batch.to_string(),
            r.threads.to_string(),
            r.policy.clone(),
            r.reps.to_string(),
            format_real(r.seconds_mean),
            format_real(r.seconds_min),
            format_real(r.gops),
            r.warnings.join(";"),
        ])?;
    }
    w.flush()
}

pub fn emit_csv(records: &[BenchRecord], path: impl AsRef<Path>, comment: Option<&str>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(records, std::io::BufWriter::new(file), comment).map_err(|e| Error::io(path, e))
}

/// Parses CSV written by [`write_csv`]; `#` lines are skipped.
pub fn parse_csv(text: &str) -> Result<Vec<BenchRecord>> {
    parse_reader(text.as_bytes(), Path::new("<memory>"))
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<BenchRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_reader(file, path)
}

fn parse_reader<R: std::io::Read>(input: R, path: &Path) -> Result<Vec<BenchRecord>> {
    let csv_err = |source| Error::Csv { path: path.to_path_buf(), source };
    let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    let header = rd.headers().map_err(csv_err)?.iter().collect::<Vec<_>>().join(",");
    if header != CSV_HEADER {
        return Err(Error::Format(format!("unexpected CSV header {header:?}")));
    }
    let mut records = Vec::new();
    for row in rd.records() {
        let row = row.map_err(csv_err)?;
        let field = |i: usize| row.get(i).unwrap_or_default();
        let int = |i: usize| {
            field(i)
                .parse::<usize>()
                .map_err(|_| Error::Format(format!("bad integer {:?} in column {i}", field(i))))
        };
        let real = |i: usize| {
            field(i)
                .parse::<f64>()
                .map_err(|_| Error::Format(format!("bad real {:?} in column {i}", field(i))))
        };
        let warnings = field(10);
        records.push(BenchRecord {
            kernel: field(0).to_string(),
            m: int(1)?,
            n: int(2)?,
            batch: int(3)?,
            threads: int(4)?,
            policy: field(5).to_string(),
            reps: int(6)?,
            seconds_mean: real(7)?,
            seconds_min: real(8)?,
            gops: real(9)?,
            warnings: if warnings.is_empty() {
                Vec::new()
            } else {
                warnings.split(';').map(str::to_string).collect()
            },
        });
    }
    Ok(records)
}
