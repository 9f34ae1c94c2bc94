use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use tfm_lab_ffi::*;

const PASSIVE_TIPLESS: &str = r#"
schema_version = 1

[[transactions]]
id = 1
size = 1
valuation = 4

[[transactions]]
id = 2
size = 2
valuation = 6

[bp_valuation]
kind = "passive"

[blockset]
kind = "knapsack"
max_total_size = 2

[mechanism]
preset = "tipless"
base_fee = 2
"#;

fn load(text: &str) -> *mut TfmScenario {
    let c = CString::new(text).unwrap();
    let mut handle = ptr::null_mut();
    let status = unsafe { tfm_scenario_from_toml(c.as_ptr(), &mut handle) };
    assert_eq!(status, TfmStatus::Ok);
    assert!(!handle.is_null());
    handle
}

fn last_error() -> String {
    let p = tfm_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn audit_through_the_abi() {
    let s = load(PASSIVE_TIPLESS);
    assert_eq!(unsafe { tfm_scenario_transaction_count(s) }, 2);
    let mut summary = TfmAuditSummary::default();
    let status = unsafe { tfm_audit(s, TfmAuditKind::Dsic, 1, 6, 2, &mut summary) };
    assert_eq!(status, TfmStatus::Ok);
    assert_eq!(summary.passed, 1);
    assert_eq!(summary.max_regret, 0);
    assert_eq!(summary.cells_checked, 2 * 7 * 7);
    let status = unsafe { tfm_audit(s, TfmAuditKind::Bpic, 1, 6, 1, &mut summary) };
    assert_eq!(status, TfmStatus::Ok);
    unsafe { tfm_scenario_free(s) };
}

#[test]
fn recommended_block_and_welfare() {
    let s = load(PASSIVE_TIPLESS);
    let mut len = 0usize;
    // Both bids clear the reserve; the size-2 block {2} is the largest.
    let status = unsafe { tfm_recommended_block(s, ptr::null_mut(), 0, &mut len) };
    assert_eq!(status, TfmStatus::BufferTooSmall);
    assert_eq!(len, 1);
    let mut ids = [0u32; 4];
    let status = unsafe { tfm_recommended_block(s, ids.as_mut_ptr(), ids.len(), &mut len) };
    assert_eq!(status, TfmStatus::Ok);
    assert_eq!(&ids[..len], &[2]);

    let mut w = 0i64;
    let status = unsafe { tfm_welfare(s, ids.as_ptr(), len, &mut w) };
    assert_eq!(status, TfmStatus::Ok);
    assert_eq!(w, 6);
    let unknown = [9u32];
    let status = unsafe { tfm_welfare(s, unknown.as_ptr(), 1, &mut w) };
    assert_eq!(status, TfmStatus::ParseError);
    assert!(last_error().contains("9"));
    unsafe { tfm_scenario_free(s) };
}

#[test]
fn errors_are_reported() {
    let bad =
        CString::new("schema_version = 1\n[[transactions]]\nid = 1\nsize = 1\nvaluation = 1.5\n")
            .unwrap();
    let mut handle = ptr::null_mut();
    let status = unsafe { tfm_scenario_from_toml(bad.as_ptr(), &mut handle) };
    assert_eq!(status, TfmStatus::ParseError);
    assert!(handle.is_null());
    assert!(last_error().contains("line"));

    let status = unsafe { tfm_scenario_from_toml(ptr::null(), &mut handle) };
    assert_eq!(status, TfmStatus::InvalidArgument);

    let mut out = ptr::null_mut();
    assert_eq!(
        unsafe { tfm_welfare_counterexample(0, 1, &mut out) },
        TfmStatus::InvalidArgument
    );
    unsafe { tfm_scenario_free(ptr::null_mut()) };
    unsafe { tfm_string_free(ptr::null_mut()) };
}

#[test]
fn welfare_counterexample_round_trips() {
    let mut out = ptr::null_mut();
    let status = unsafe { tfm_welfare_counterexample(1, 10, &mut out) };
    assert_eq!(status, TfmStatus::Ok);
    let text = unsafe { CStr::from_ptr(out) }.to_str().unwrap().to_owned();
    unsafe { tfm_string_free(out) };
    assert!(text.contains("valuation = 20"));
    let s = load(&text);
    let mut ids = [0u32; 2];
    let mut len = 0;
    let status = unsafe { tfm_recommended_block(s, ids.as_mut_ptr(), 2, &mut len) };
    assert_eq!(status, TfmStatus::Ok);
    assert_eq!(&ids[..len], &[2]);

    let mut digest = ptr::null_mut();
    assert_eq!(
        unsafe { tfm_scenario_digest(s, &mut digest) },
        TfmStatus::Ok
    );
    assert_eq!(unsafe { CStr::from_ptr(digest) }.to_bytes().len(), 12);
    unsafe {
        tfm_string_free(digest);
        tfm_scenario_free(s);
    }
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/tfm_lab.h")
}

#[test]
fn header_declares_every_export() {
    let text = std::fs::read_to_string(header()).unwrap();
    for name in [
        "tfm_last_error",
        "tfm_scenario_from_toml",
        "tfm_scenario_free",
        "tfm_scenario_transaction_count",
        "tfm_scenario_digest",
        "tfm_audit",
        "tfm_recommended_block",
        "tfm_welfare",
        "tfm_welfare_counterexample",
        "tfm_string_free",
        "typedef struct TfmScenario TfmScenario;",
        "TFM_STATUS_BUFFER_TOO_SMALL = 8",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }
}

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include <string.h>
#include "tfm_lab.h"

int main(void) {
    char *toml = NULL;
    if (tfm_welfare_counterexample(1, 2, &toml) != TFM_STATUS_OK) return 10;
    TfmScenario *s = NULL;
    if (tfm_scenario_from_toml(toml, &s) != TFM_STATUS_OK) return 11;
    tfm_string_free(toml);
    uint32_t ids[4];
    size_t len = 0;
    if (tfm_recommended_block(s, ids, 4, &len) != TFM_STATUS_OK) return 12;
    int64_t w = 0;
    if (tfm_welfare(s, ids, len, &w) != TFM_STATUS_OK) return 13;
    printf("%zu %u %lld\n", len, ids[0], (long long)w);
    tfm_scenario_free(s);
    return 0;
}
"#;

fn cc() -> Option<&'static str> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok())
}

/// Compiles a C client against the generated header and, when the static
/// library is where cargo normally puts it, links and runs it.
#[test]
fn c_client_compiles_and_runs() {
    let Some(cc) = cc() else {
        eprintln!("no C compiler found; skipping C client check");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("client.c");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let include = header().parent().unwrap().to_path_buf();

    let syntax = Command::new(cc)
        .arg("-fsyntax-only")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(&include)
        .arg(&src)
        .output()
        .unwrap();
    assert!(
        syntax.status.success(),
        "{}",
        String::from_utf8_lossy(&syntax.stderr)
    );

    let target = std::env::var_os("CARGO_TARGET_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../target"));
    let profile = if cfg!(debug_assertions) {
        "debug"
    } else {
        "release"
    };
    let lib = target.join(profile).join("libtfm_lab_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built; link step skipped", lib.display());
        return;
    }
    let exe = dir.path().join("client");
    let link = Command::new(cc)
        .arg("-I")
        .arg(&include)
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .unwrap();
    assert!(
        link.status.success(),
        "{}",
        String::from_utf8_lossy(&link.stderr)
    );
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    assert_eq!(String::from_utf8_lossy(&run.stdout), "1 2 2\n");
}
