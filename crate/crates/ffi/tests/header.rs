//! The generated header declares the exported surface and compiles as C.

use std::path::{Path, PathBuf};
use std::process::Command;

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/vista.h")
}

#[test]
fn header_declares_every_export() {
    let text = std::fs::read_to_string(header()).unwrap();
    for name in [
        "vista_version",
        "vista_last_error_message",
        "vista_weight",
        "vista_mean_weight",
        "vista_rho",
        "vista_lambda_from_rho",
        "vista_discrete_builtin",
        "vista_discrete_from_toml",
        "vista_discrete_free",
        "vista_info_curve",
        "vista_model_load",
        "vista_model_from_bytes",
        "vista_model_free",
        "vista_model_dims",
        "vista_model_heatmap",
        "VISTA_STATUS_MISMATCH = 5",
        "VISTA_SCHEME_UNIFORM = 2",
        "typedef struct VistaModel VistaModel;",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }
}

/// Links a small C program against the static library.
#[test]
fn c_program_links_and_runs() {
    let target = std::env::current_exe().unwrap();
    let profile_dir = target.parent().unwrap().parent().unwrap();
    let lib = profile_dir.join("libvista_ffi.a");
    if !lib.exists() {
        panic!("static library not found at {}", lib.display());
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"
#include <math.h>
#include <stdio.h>
#include <string.h>
#include "vista.h"

int main(void) {
    double w = 0.0;
    if (vista_weight(2, 4, VISTA_SCHEME_NORMALIZED, 0.0, &w) != VISTA_STATUS_OK || w != 0.5) return 1;
    VistaDiscreteModel *m = NULL;
    if (vista_discrete_builtin("strong-memory", 8, &m) != VISTA_STATUS_OK) return 2;
    VistaInfoRow rows[8];
    size_t len = 0;
    if (vista_info_curve(m, 8, 0.01, rows, 8, &len) != VISTA_STATUS_OK || len != 8) return 3;
    if (!(rows[7].ratio < rows[1].ratio / 2.0)) return 4;
    vista_discrete_free(m);
    if (vista_rho(0.0, 0.0, 1.0, &w) != VISTA_STATUS_UNDEFINED) return 5;
    char buf[128];
    if (vista_last_error_message(buf, sizeof buf) == 0 || strlen(buf) == 0) return 6;
    printf("%s\n", vista_version());
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("run cc");
    assert!(status.success(), "C compile failed");
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "smoke exited with {:?}", out.status.code());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), vista::VERSION);
}
