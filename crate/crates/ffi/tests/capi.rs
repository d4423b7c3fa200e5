use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use roadlab_ffi::*;

const TINY: &str = r#"
name = "ffi"
seed = 9

[splits]
count = 10
val_fraction = 0.0
test_fraction = 0.3

[policy]
hidden = [8]

[pretrain]
steps = 60

[train]
steps = 10
batch_size = 4
rollouts_per_scenario = 1

[eval]
rollouts_per_scene = 1
min_ade_samples = 2
min_ade_stride = 50
"#;

fn last_error() -> String {
    let p = roadlab_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

unsafe fn tiny_config(out: &Path) -> *mut RoadlabConfig {
    let mut cfg = ptr::null_mut();
    assert_eq!(roadlab_config_from_toml(cstr(TINY).as_ptr(), &mut cfg), RoadlabStatus::Ok);
    let dir = toml::Value::String(out.display().to_string()).to_string();
    assert_eq!(roadlab_config_set(cfg, cstr("out_dir").as_ptr(), cstr(&dir).as_ptr()), RoadlabStatus::Ok);
    cfg
}

#[test]
fn config_round_trip_and_overrides() {
    unsafe {
        let mut cfg = ptr::null_mut();
        assert_eq!(roadlab_config_default(&mut cfg), RoadlabStatus::Ok);
        assert!(roadlab_last_error_message().is_null());
        assert_eq!(roadlab_config_set(cfg, cstr("rollout.k").as_ptr(), cstr("16").as_ptr()), RoadlabStatus::Ok);

        let st = roadlab_config_set(cfg, cstr("rollout.kk").as_ptr(), cstr("16").as_ptr());
        assert_eq!(st, RoadlabStatus::Config);
        assert!(last_error().contains("rollout.kk"), "{}", last_error());
        assert_eq!(roadlab_config_set(cfg, cstr("rollout.k").as_ptr(), cstr("[1,").as_ptr()), RoadlabStatus::Config);
        assert_eq!(roadlab_config_validate(cfg), RoadlabStatus::Ok);

        let mut text = ptr::null_mut();
        assert_eq!(roadlab_config_to_toml(cfg, &mut text), RoadlabStatus::Ok);
        let toml_text = CStr::from_ptr(text).to_str().unwrap().to_owned();
        roadlab_string_free(text);
        assert!(toml_text.contains("k = 16"));

        let mut back = ptr::null_mut();
        assert_eq!(roadlab_config_from_toml(cstr(&toml_text).as_ptr(), &mut back), RoadlabStatus::Ok);
        let mut again = ptr::null_mut();
        assert_eq!(roadlab_config_to_toml(back, &mut again), RoadlabStatus::Ok);
        assert_eq!(CStr::from_ptr(again).to_str().unwrap(), toml_text);
        roadlab_string_free(again);
        roadlab_config_free(back);
        roadlab_config_free(cfg);

        let mut bad = ptr::null_mut();
        assert_eq!(roadlab_config_from_toml(cstr("nosuch = 1").as_ptr(), &mut bad), RoadlabStatus::Config);
        assert!(bad.is_null());
        assert_eq!(roadlab_config_load(cstr("/nonexistent/x.toml").as_ptr(), &mut bad), RoadlabStatus::Config);
    }
}

#[test]
fn null_and_invalid_arguments_are_reported() {
    unsafe {
        assert_eq!(roadlab_config_default(ptr::null_mut()), RoadlabStatus::NullPointer);
        assert!(last_error().contains("out"));
        let mut cfg = ptr::null_mut();
        assert_eq!(roadlab_config_from_toml(ptr::null(), &mut cfg), RoadlabStatus::NullPointer);
        let bytes = [0xffu8, 0xfe, 0];
        assert_eq!(roadlab_config_from_toml(bytes.as_ptr().cast(), &mut cfg), RoadlabStatus::InvalidUtf8);
        assert_eq!(roadlab_config_validate(ptr::null()), RoadlabStatus::NullPointer);
        assert_eq!(roadlab_policy_num_params(ptr::null()), 0);
        roadlab_config_free(ptr::null_mut());
        roadlab_run_free(ptr::null_mut());
        roadlab_policy_free(ptr::null_mut());
        roadlab_string_free(ptr::null_mut());

        let mut p = ptr::null_mut();
        assert_eq!(roadlab_policy_load(cstr("/nonexistent.json").as_ptr(), &mut p), RoadlabStatus::Io);
        assert!(p.is_null());
        let mut m = RoadlabMetrics::default();
        assert_eq!(roadlab_policy_evaluate(ptr::null(), ptr::null(), &mut m), RoadlabStatus::NullPointer);
    }
}

#[test]
fn driving_score_and_sign_test() {
    unsafe {
        let d = [1500.0, 500.0, 1000.0];
        let i = [1usize, 0, 1];
        let mut s = 0.0;
        assert_eq!(roadlab_driving_score(d.as_ptr(), i.as_ptr(), 3, &mut s), RoadlabStatus::Ok);
        assert!((s - 1.5).abs() < 1e-12);
        assert_eq!(roadlab_driving_score(ptr::null(), ptr::null(), 0, &mut s), RoadlabStatus::Ok);
        assert_eq!(s, 0.0);
        assert_eq!(roadlab_driving_score(ptr::null(), i.as_ptr(), 3, &mut s), RoadlabStatus::NullPointer);
        let nan = [f64::NAN];
        assert_eq!(roadlab_driving_score(nan.as_ptr(), i.as_ptr(), 1, &mut s), RoadlabStatus::InvalidInput);
    }
    assert!((roadlab_sign_test(5, 0, true) - 1.0 / 32.0).abs() < 1e-15);
    assert!((roadlab_sign_test(5, 0, false) - 1.0 / 16.0).abs() < 1e-15);
    assert_eq!(roadlab_sign_test(0, 0, false), 1.0);
}

#[test]
fn pipeline_run_and_checkpoint_evaluation_agree() {
    let tmp = tempfile::tempdir().unwrap();
    unsafe {
        let cfg = tiny_config(tmp.path());
        let mut run = ptr::null_mut();
        assert_eq!(roadlab_run_pipeline(cfg, false, &mut run), RoadlabStatus::Ok, "{}", last_error());
        let mut m = RoadlabMetrics::default();
        assert_eq!(roadlab_run_metrics(run, &mut m), RoadlabStatus::Ok);
        assert_eq!(m.scenes, 3);
        assert_eq!(m.evaluated + m.excluded + m.failed, 3);

        let mut dir = ptr::null_mut();
        assert_eq!(roadlab_run_dir(run, &mut dir), RoadlabStatus::Ok);
        let dir_path = PathBuf::from(CStr::from_ptr(dir).to_str().unwrap());
        roadlab_string_free(dir);
        assert_eq!(dir_path, tmp.path());

        let ckpt = cstr(tmp.path().join("checkpoints/final.json").to_str().unwrap());
        let mut pol = ptr::null_mut();
        assert_eq!(roadlab_policy_load(ckpt.as_ptr(), &mut pol), RoadlabStatus::Ok);
        assert!(roadlab_policy_num_params(pol) > 0);
        let mut again = RoadlabMetrics::default();
        assert_eq!(roadlab_policy_evaluate(pol, cfg, &mut again), RoadlabStatus::Ok, "{}", last_error());
        assert_eq!(again, m);

        // Resuming reuses every stage and reports the same numbers.
        let mut resumed = ptr::null_mut();
        assert_eq!(roadlab_run_pipeline(cfg, true, &mut resumed), RoadlabStatus::Ok);
        let mut r = RoadlabMetrics::default();
        assert_eq!(roadlab_run_metrics(resumed, &mut r), RoadlabStatus::Ok);
        assert_eq!(r, m);

        assert_eq!(roadlab_config_set(cfg, cstr("train.lr").as_ptr(), cstr("0.5").as_ptr()), RoadlabStatus::Ok);
        let mut clash = ptr::null_mut();
        assert_eq!(roadlab_run_pipeline(cfg, true, &mut clash), RoadlabStatus::Config);
        assert!(clash.is_null());

        roadlab_run_free(resumed);
        roadlab_run_free(run);
        roadlab_policy_free(pol);
        roadlab_config_free(cfg);
    }
}

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include <string.h>
#include "roadlab.h"

int main(void) {
    RoadlabConfig *cfg = NULL;
    if (roadlab_config_default(&cfg) != ROADLAB_STATUS_OK) return 10;
    if (roadlab_config_set(cfg, "rollout.k", "64") != ROADLAB_STATUS_OK) return 11;
    if (roadlab_config_set(cfg, "rollout.k", "\"many\"") != ROADLAB_STATUS_CONFIG) return 12;
    const char *msg = roadlab_last_error_message();
    if (msg == NULL || strstr(msg, "rollout.k") == NULL) return 13;
    char *text = NULL;
    if (roadlab_config_to_toml(cfg, &text) != ROADLAB_STATUS_OK) return 14;
    if (strstr(text, "k = 64") == NULL) return 15;
    roadlab_string_free(text);
    roadlab_config_free(cfg);

    double d[2] = {2000.0, 1000.0};
    size_t inc[2] = {1, 2};
    double score = 0.0;
    if (roadlab_driving_score(d, inc, 2, &score) != ROADLAB_STATUS_OK) return 16;
    printf("version %s score %.3f\n", roadlab_version(), score);
    return 0;
}
"#;

#[test]
fn header_compiles_and_links_from_c() {
    // Test binaries live in <target>/<profile>/deps; the libraries one level up.
    let exe = std::env::current_exe().unwrap();
    let lib_dir = exe.parent().unwrap().parent().unwrap().to_path_buf();
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let so = lib_dir.join("libroadlab_ffi.so");
    assert!(so.exists(), "{} missing", so.display());

    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("main.c");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let bin = tmp.path().join("main");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = Command::new(&cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg("-L")
        .arg(&lib_dir)
        .arg("-lroadlab_ffi")
        .arg(format!("-Wl,-rpath,{}", lib_dir.display()))
        .arg("-o")
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&bin).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("score 1.000"), "{stdout}");
}
