//! Compiles a small C program against the generated header and the shared
//! library, then runs it.

use std::path::{Path, PathBuf};
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include "treebp.h"

int main(void) {
    TreebpModel *m = NULL;
    if (treebp_model_new_tree3(2, 2, TREEBP_ACTIVATION_RELU, TREEBP_GEOMETRY_MNIST, false, 1, &m) != TREEBP_STATUS_OK) return 10;
    size_t len = 0;
    treebp_model_input_len(m, &len);
    float px[784] = {0};
    for (size_t i = 0; i < len; i++) px[i] = (float)(i % 7) / 3.0f - 1.0f;
    uint32_t cls = 99;
    if (treebp_model_predict(m, px, len, &cls) != TREEBP_STATUS_OK || cls > 9) return 11;
    if (treebp_model_predict(m, px, 3, &cls) != TREEBP_STATUS_SHAPE_MISMATCH) return 12;
    if (treebp_last_error() == NULL) return 13;
    treebp_model_free(m);
    printf("%llu\n", (unsigned long long)treebp_count_routes(TREEBP_ARCH_LENET5));
    return 0;
}
"#;

fn target_dir() -> PathBuf {
    // target/<profile>/deps/<test binary>
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_and_runs() {
    let lib_dir = target_dir();
    if !lib_dir.join("libtreebp_ffi.so").exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("SKIPPED: no C compiler or shared library in {}", lib_dir.display());
        return;
    }
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    let exe = dir.path().join("main");
    std::fs::write(&src, PROGRAM).unwrap();
    let out = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-o"])
        .arg(&exe)
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg("-L")
        .arg(&lib_dir)
        .arg("-ltreebp_ffi")
        .arg(format!("-Wl,-rpath,{}", lib_dir.display()))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), "1008000");
}

#[test]
fn header_declares_the_api() {
    let h = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/treebp.h")).unwrap();
    for name in [
        "treebp_model_new_tree3",
        "treebp_model_new_lenet5",
        "treebp_model_load",
        "treebp_model_save",
        "treebp_model_free",
        "treebp_model_logits",
        "treebp_model_predict",
        "treebp_gradient_stats",
        "treebp_count_routes",
        "treebp_count_gradient_instances",
        "treebp_last_error",
        "typedef struct TreebpModel TreebpModel",
    ] {
        assert!(h.contains(name), "header lacks {name}");
    }
}
