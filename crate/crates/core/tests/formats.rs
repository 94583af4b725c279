use qgemv::bench::{parse_csv, verify};
use qgemv::qmat;

const GOLDEN: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/golden.qmat");
const GOLDEN_CSV: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/golden_bench.csv");

#[test]
fn golden_file_round_trips_through_disk() {
    let m = qmat::read_file(GOLDEN).unwrap();
    assert_eq!((m.rows(), m.cols()), (2, 64));
    assert_eq!(m, qmat::golden_matrix());
    let dir = tempfile::tempdir().unwrap();
    let copy = dir.path().join("copy.qmat");
    qmat::write_file(&copy, &m).unwrap();
    assert_eq!(std::fs::read(&copy).unwrap(), std::fs::read(GOLDEN).unwrap());
}

#[test]
fn every_flipped_nibble_is_caught() {
    let golden = std::fs::read(GOLDEN).unwrap();
    assert!(verify::check_golden(&golden).is_ok());
    let blocks = (golden.len() - qmat::HEADER_LEN) / qmat::BLOCK_BYTES;
    for b in 0..blocks {
        for byte in 0..16 {
            for mask in [0x01u8, 0x10] {
                let mut bytes = golden.clone();
                bytes[qmat::HEADER_LEN + b * qmat::BLOCK_BYTES + 4 + byte] ^= mask;
                assert!(verify::check_golden(&bytes).is_err(), "block {b} byte {byte} mask {mask:#x}");
            }
        }
    }
}

#[test]
fn missing_file_error_names_path() {
    let err = qmat::read_file("/nonexistent/weights.qmat").unwrap_err();
    assert!(err.to_string().contains("/nonexistent/weights.qmat"), "{err}");
}

#[test]
fn golden_csv_parses() {
    let recs = parse_csv(&std::fs::read_to_string(GOLDEN_CSV).unwrap()).unwrap();
    assert_eq!(recs.len(), 4);
    assert_eq!(recs[0].gops, 2.097152);
    assert_eq!(recs[3].warnings, ["host-balancing-off", "pin-failed"]);
    for r in &recs {
        let ops = 2.0 * (r.m * r.n * r.batch) as f64;
        assert!((r.gops * r.seconds_min * 1e9 - ops).abs() <= 1e-8 * ops);
    }
}
