use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use offenv_ffi::*;

fn last_error() -> String {
    let p = offenv_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn gridworld_value_matches_core() {
    unsafe {
        let mut mdp = ptr::null_mut();
        assert_eq!(offenv_gridworld_build(ptr::null(), 0.1, &mut mdp), OffenvStatus::Ok);
        assert_eq!(offenv_mdp_n_states(mdp), 16);
        assert_eq!(offenv_mdp_n_actions(mdp), 4);

        let mut base = ptr::null_mut();
        assert_eq!(offenv_policy_optimal(mdp, &mut base), OffenvStatus::Ok);
        let mut pi = ptr::null_mut();
        assert_eq!(offenv_policy_mix(base, 0.1, &mut pi), OffenvStatus::Ok);

        let mut value = 0.0;
        assert_eq!(offenv_policy_value(mdp, pi, &mut value), OffenvStatus::Ok);
        let core_mdp = offenv_core::env::GridworldSpec::default().build(0.1).unwrap();
        let core_pi = offenv_core::env::mix_policy(&offenv_core::env::optimal_policy(&core_mdp).unwrap(), 0.1).unwrap();
        assert_eq!(value, offenv_core::mdp::policy_value(&core_mdp, &core_pi).unwrap());

        let mut occ = vec![0.0; 64];
        assert_eq!(offenv_occupancy(mdp, pi, occ.as_mut_ptr(), occ.len()), OffenvStatus::Ok);
        assert!((occ.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(offenv_occupancy(mdp, pi, occ.as_mut_ptr(), 3), OffenvStatus::Shape);

        offenv_policy_free(pi);
        offenv_policy_free(base);
        offenv_mdp_free(mdp);
    }
}

#[test]
fn mdp_json_roundtrip() {
    unsafe {
        let mut mdp = ptr::null_mut();
        assert_eq!(offenv_gridworld_build(ptr::null(), 0.2, &mut mdp), OffenvStatus::Ok);
        let mut text = ptr::null_mut();
        assert_eq!(offenv_mdp_to_json(mdp, &mut text), OffenvStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(offenv_mdp_from_json(text, &mut back), OffenvStatus::Ok);
        assert_eq!(offenv_mdp_n_states(back), 16);
        offenv_string_free(text);
        offenv_mdp_free(back);
        offenv_mdp_free(mdp);
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    unsafe {
        let mut mdp = ptr::null_mut();
        let bad = CString::new("{not json").unwrap();
        assert_eq!(offenv_mdp_from_json(bad.as_ptr(), &mut mdp), OffenvStatus::Parse);
        assert!(mdp.is_null());
        assert!(!last_error().is_empty());

        assert_eq!(offenv_mdp_from_json(ptr::null(), &mut mdp), OffenvStatus::NullPointer);
        let mut value = 0.0;
        assert_eq!(offenv_policy_value(ptr::null(), ptr::null(), &mut value), OffenvStatus::NullPointer);

        let probs = [0.5, 0.6];
        let mut pi = ptr::null_mut();
        assert_eq!(offenv_policy_new(1, 2, probs.as_ptr(), &mut pi), OffenvStatus::Invalid);
        assert!(last_error().contains("sum"), "{}", last_error());

        let spec = CString::new(r#"{"width": 0}"#).unwrap();
        assert_eq!(offenv_gridworld_build(spec.as_ptr(), 0.1, &mut mdp), OffenvStatus::Config);
    }
}

#[test]
fn sweep_rows_and_csv() {
    let cfg = CString::new(
        r#"{"eps_sim": 0.0, "eps_real_list": [0.1], "delta_list": [0.2], "alpha_list": [0.1],
            "n_list": [300], "seeds": [0, 1], "estimators": ["oracle", "beta_dice_linear"]}"#,
    )
    .unwrap();
    unsafe {
        let mut sweep = ptr::null_mut();
        assert_eq!(offenv_sweep_run(cfg.as_ptr(), 2, &mut sweep), OffenvStatus::Ok);
        assert_eq!(offenv_sweep_len(sweep), 4);
        let mut row = std::mem::MaybeUninit::<OffenvRow>::uninit();
        assert_eq!(offenv_sweep_row(sweep, 0, row.as_mut_ptr()), OffenvStatus::Ok);
        let row = row.assume_init();
        assert_eq!(row.estimator, OffenvEstimator::Oracle);
        assert_eq!(row.ok, 1);
        assert_eq!(row.abs_err, 0.0);
        assert_eq!(CStr::from_ptr(offenv_sweep_row_error(sweep, 0)).to_bytes(), b"");
        let mut spare = std::mem::MaybeUninit::<OffenvRow>::uninit();
        assert_eq!(offenv_sweep_row(sweep, 4, spare.as_mut_ptr()), OffenvStatus::OutOfRange);

        let mut csv = ptr::null_mut();
        assert_eq!(offenv_sweep_to_csv(sweep, &mut csv), OffenvStatus::Ok);
        let text = CStr::from_ptr(csv).to_str().unwrap().to_owned();
        assert!(text.starts_with("estimator,"));
        assert_eq!(text.lines().count(), 5);
        offenv_string_free(csv);
        offenv_sweep_free(sweep);
    }
    let name = unsafe { CStr::from_ptr(offenv_estimator_name(OffenvEstimator::QRoute)) };
    assert_eq!(name.to_str().unwrap(), "q_route");
}

#[test]
fn free_functions_accept_null() {
    unsafe {
        offenv_mdp_free(ptr::null_mut());
        offenv_policy_free(ptr::null_mut());
        offenv_sweep_free(ptr::null_mut());
        offenv_string_free(ptr::null_mut());
    }
}

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include "offenv.h"

int main(void) {
    OffenvMdp *mdp = NULL;
    OffenvPolicy *base = NULL, *pi = NULL;
    double value = 0.0;
    if (offenv_gridworld_build(NULL, 0.1, &mdp) != OFFENV_STATUS_OK) return 1;
    if (offenv_policy_optimal(mdp, &base) != OFFENV_STATUS_OK) return 2;
    if (offenv_policy_mix(base, 0.1, &pi) != OFFENV_STATUS_OK) return 3;
    if (offenv_policy_value(mdp, pi, &value) != OFFENV_STATUS_OK) return 4;
    if (offenv_mdp_from_json("{", &mdp) != OFFENV_STATUS_PARSE) return 5;
    if (offenv_last_error() == NULL) return 6;
    printf("%.17g\n", value);
    offenv_policy_free(pi);
    offenv_policy_free(base);
    offenv_mdp_free(mdp);
    return 0;
}
"#;

/// Compiles a C program against the generated header and the static library.
#[test]
fn header_compiles_and_links_from_c() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header_dir = manifest.join("include");
    assert!(header_dir.join("offenv.h").exists());
    // Test binaries live in <target>/<profile>/deps.
    let profile_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = profile_dir.join("liboffenv_ffi.a");
    if !lib.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no static library or C compiler");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let exe = dir.path().join("main");
    let status = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-I"])
        .arg(&header_dir)
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    let value: f64 = String::from_utf8_lossy(&out.stdout).trim().parse().unwrap();
    let core_mdp = offenv_core::env::GridworldSpec::default().build(0.1).unwrap();
    let core_pi = offenv_core::env::mix_policy(&offenv_core::env::optimal_policy(&core_mdp).unwrap(), 0.1).unwrap();
    assert_eq!(value, offenv_core::mdp::policy_value(&core_mdp, &core_pi).unwrap());
}
