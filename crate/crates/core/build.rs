use std::env;
use std::process::Command;

fn main() {
    let rustc = env::var("RUSTC").unwrap_or_else(|_| "rustc".into());
    let version = Command::new(rustc)
        .arg("--version")
        .output()
        .ok()
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().replace(' ', "_"))
        .unwrap_or_else(|| "unknown".into());
    // Commas would split the CSV comment line in readers that ignore `#`.
    let features = env::var("CARGO_CFG_TARGET_FEATURE").unwrap_or_default().replace(',', "+");
    let var = |k: &str| env::var(k).unwrap_or_else(|_| "unknown".into());
    println!("cargo:rustc-env=QGEMV_RUSTC_VERSION={version}");
    println!("cargo:rustc-env=QGEMV_PROFILE={}", var("PROFILE"));
    println!("cargo:rustc-env=QGEMV_OPT_LEVEL={}", var("OPT_LEVEL"));
    println!("cargo:rustc-env=QGEMV_TARGET={}", var("TARGET"));
    println!("cargo:rustc-env=QGEMV_TARGET_FEATURES={features}");
    println!("cargo:rerun-if-changed=build.rs");
}
