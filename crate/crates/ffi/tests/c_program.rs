//! Compiles a small C program against the generated header and the static
//! library, then runs it.

use std::path::PathBuf;
use std::process::Command;

const PROGRAM: &str = r#"
#include <math.h>
#include <stdio.h>
#include "colorcenter.h"

int main(void) {
    CcBudget b;
    if (cc_budget(704.0, 163.0, 0.39, 0.66, &b) != CC_STATUS_OK) return 10;
    printf("tau_nr %.3f\n", b.tau_nr_ns);
    printf("eta_tot %.5f\n", b.eta_tot);

    if (cc_budget(100.0, 163.0, 0.39, 0.66, &b) != CC_STATUS_SUPERRADIANT) return 11;
    if (cc_last_error() == NULL) return 12;

    CcCavityParams p;
    CcCooperativity c;
    if (cc_cavity_reference(&p) != CC_STATUS_OK) return 13;
    if (cc_cavity(&p, &c) != CC_STATUS_OK) return 14;
    printf("eta_cav %.4f\n", c.eta_cav);

    double t[128], n[128];
    for (int i = 0; i < 128; i++) {
        t[i] = 4.0 * i;
        n[i] = 5.0 + (t[i] >= 60.0 ? 1000.0 * exp(-(t[i] - 60.0) / 30.0) : 0.0);
    }
    CcTraceMeta meta = {60.0, 1280.0, 40.0, 4.0};
    CcTrace *trace = NULL;
    if (cc_trace_from_arrays(t, n, 128, &meta, &trace) != CC_STATUS_OK) {
        fprintf(stderr, "%s\n", cc_last_error());
        return 15;
    }
    CcDecayFit *fit = NULL;
    if (cc_fit_decay(trace, CC_DECAY_KIND_SINGLE, &fit) != CC_STATUS_OK) return 16;
    CcExpComponent comp;
    if (cc_decay_fit_component(fit, 0, &comp) != CC_STATUS_OK) return 17;
    printf("tau %.3f\n", comp.tau_ns);
    cc_decay_fit_free(fit);
    cc_trace_free(trace);
    return 0;
}
"#;

/// The test build writes the library next to this test binary.
fn deps_dir() -> PathBuf {
    std::env::current_exe().unwrap().parent().unwrap().to_path_buf()
}

fn value(stdout: &str, key: &str) -> f64 {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix(key)?.trim().parse().ok())
        .unwrap_or_else(|| panic!("no `{key}` in {stdout}"))
}

#[test]
fn c_program_links_and_runs() {
    let lib = deps_dir().join("libcolorcenter_ffi.a");
    assert!(lib.exists(), "{} not built", lib.display());
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    let exe = dir.path().join("main");
    std::fs::write(&src, PROGRAM).unwrap();

    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let build = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-I"])
        .arg(&include)
        .arg(&src)
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&exe)
        .output()
        .expect("C compiler available");
    assert!(build.status.success(), "{}", String::from_utf8_lossy(&build.stderr));

    let run = Command::new(&exe).output().unwrap();
    assert_eq!(run.status.code(), Some(0), "{run:?}");
    let stdout = String::from_utf8(run.stdout).unwrap();
    assert!((value(&stdout, "tau_nr") - 1.0 / (1.0 / 163.0 - 1.0 / 704.0)).abs() < 1e-3);
    assert!((value(&stdout, "eta_tot") - 0.39 * 163.0 / 704.0).abs() < 1e-5);
    assert!((value(&stdout, "eta_cav") - 0.82).abs() < 0.05);
    assert!((value(&stdout, "tau") - 30.0).abs() < 0.5, "{stdout}");
}
