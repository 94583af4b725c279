//! Compiles a C program against the generated header and links it with the
//! static library. Skipped when no C compiler is on PATH.

use std::path::{Path, PathBuf};
use std::process::Command;

fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn have_cc() -> bool {
    Command::new("cc").arg("--version").output().is_ok_and(|o| o.status.success())
}

/// `target/<profile>`, two levels above this test binary.
fn artifact_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(Path::parent).unwrap().to_path_buf()
}

#[test]
fn header_is_checked_in_and_parses() {
    let header = manifest_dir().join("include/qgemv.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in ["qg_gemv", "qg_gemm_thin", "qg_last_error_message", "QG_STATUS_OK", "typedef struct QgMatrix QgMatrix"] {
        assert!(text.contains(name), "{name} missing from header");
    }
    if !have_cc() {
        eprintln!("cc not found; skipping syntax check");
        return;
    }
    let out = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-x", "c"])
        .arg(&header)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn c_program_links_and_runs() {
    if !have_cc() {
        eprintln!("cc not found; skipping link test");
        return;
    }
    let lib = artifact_dir().join("libqgemv_ffi.a");
    assert!(lib.exists(), "static library not built at {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let out = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-O1"])
        .arg("-I")
        .arg(manifest_dir().join("include"))
        .arg(manifest_dir().join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&exe).output().unwrap();
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert!(run.status.success(), "exit {:?}: {stdout}{}", run.status, String::from_utf8_lossy(&run.stderr));
    assert!(stdout.starts_with(concat!("qgemv ", env!("CARGO_PKG_VERSION"), " ok")), "{stdout}");
}
