//! Compiles and runs a small C program against the generated header and
//! the shared library.

use std::path::PathBuf;
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include <string.h>
#include "hdpmf.h"

int main(void) {
    double b = 0.0;
    if (hdpmf_laplace_scale(10, 4.0, 1.0, &b) != HDPMF_STATUS_OK) return 1;
    if (b < 25.29 || b > 25.30) return 2;

    HdpmfConfig *cfg = NULL;
    if (hdpmf_config_parse("k = zero", &cfg) != HDPMF_STATUS_CONFIG) return 3;
    if (cfg != NULL || strstr(hdpmf_last_error_message(), "k") == NULL) return 4;

    HdpmfDataset *ds = NULL;
    if (hdpmf_dataset_load(NULL, "csv", &ds) != HDPMF_STATUS_NULL_POINTER) return 5;

    if (hdpmf_config_default(&cfg) != HDPMF_STATUS_OK) return 6;
    hdpmf_config_free(cfg);
    printf("ok %.4f\n", b);
    return 0;
}
"#;

#[test]
fn c_program_links_and_runs() {
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    // target/<profile>/deps/<this test> -> target/<profile>
    let profile_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = profile_dir.join("libhdpmf_ffi.so");
    assert!(lib.exists(), "shared library not built at {}", lib.display());

    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(&src, PROGRAM).unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new(cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&src)
        .arg("-o")
        .arg(&exe)
        .arg(format!("-L{}", profile_dir.display()))
        .arg("-lhdpmf_ffi")
        .arg(format!("-Wl,-rpath,{}", profile_dir.display()))
        .status()
        .unwrap();
    assert!(status.success(), "C compilation failed");
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "ok 25.2982");
}

fn which_cc() -> Result<String, ()> {
    for cc in ["cc", "gcc", "clang"] {
        if Command::new(cc).arg("--version").output().is_ok() {
            return Ok(cc.to_string());
        }
    }
    Err(())
}
