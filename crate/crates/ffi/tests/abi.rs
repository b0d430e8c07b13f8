use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use nestadmm_ffi::*;

const SPEC: &str = r#"
[generator]
kind = "quadratic-composition"
dim_x = 4
dim_inner = 3
n_inner = 20
n_outer = 20
seed = 3
"#;

fn last_error() -> String {
    unsafe { CStr::from_ptr(nestadmm_last_error()) }
        .to_string_lossy()
        .into_owned()
}

fn instance(spec: &str) -> Result<*mut NestadmmInstance, NestadmmStatus> {
    let text = CString::new(spec).unwrap();
    let mut out = ptr::null_mut();
    match unsafe { nestadmm_instance_from_toml(text.as_ptr(), &mut out) } {
        NestadmmStatus::Ok => Ok(out),
        s => Err(s),
    }
}

fn solve(inst: *const NestadmmInstance, seed: u64) -> *mut NestadmmRun {
    let mut run = ptr::null_mut();
    let s = unsafe {
        nestadmm_solve(
            inst,
            NestadmmEstimator::Spider,
            0.5,
            0.1,
            60,
            seed,
            false,
            &mut run,
        )
    };
    assert_eq!(s, NestadmmStatus::Ok, "{}", last_error());
    run
}

#[test]
fn solve_round_trip() {
    let inst = instance(SPEC).unwrap();
    let (mut dx, mut dp, mut blocks) = (0, 0, 0);
    assert_eq!(
        unsafe { nestadmm_instance_dims(inst, &mut dx, &mut dp, &mut blocks) },
        NestadmmStatus::Ok
    );
    assert_eq!((dx, dp, blocks), (4, 4, 1));

    let run = solve(inst, 9);
    let (mut iters, mut samples, mut pick) = (0, 0u64, 0);
    assert_eq!(
        unsafe { nestadmm_run_stats(run, &mut iters, &mut samples, &mut pick) },
        NestadmmStatus::Ok
    );
    assert_eq!(iters, 60);
    assert!(samples > 0 && (1..=60).contains(&pick));

    let mut stat = vec![0.0; iters + 1];
    assert_eq!(
        unsafe { nestadmm_run_copy_stationarity(run, stat.as_mut_ptr(), stat.len()) },
        NestadmmStatus::Ok
    );
    let mut best = 0.0;
    assert_eq!(
        unsafe { nestadmm_run_best_stationarity(run, &mut best) },
        NestadmmStatus::Ok
    );
    assert_eq!(
        best,
        stat[1..].iter().copied().fold(f64::INFINITY, f64::min)
    );
    assert!(best < stat[0]);

    let mut x = [0.0; 4];
    assert_eq!(
        unsafe { nestadmm_run_copy_x(run, x.as_mut_ptr(), 3) },
        NestadmmStatus::BufferTooSmall
    );
    assert!(last_error().contains("need 4"));
    assert_eq!(
        unsafe { nestadmm_run_copy_x(run, x.as_mut_ptr(), 4) },
        NestadmmStatus::Ok
    );

    let again = solve(inst, 9);
    let mut y = [0.0; 4];
    unsafe { nestadmm_run_copy_x(again, y.as_mut_ptr(), 4) };
    assert_eq!(x, y);

    unsafe {
        nestadmm_run_free(run);
        nestadmm_run_free(again);
        nestadmm_instance_free(inst);
    }
}

#[test]
fn error_codes() {
    assert_eq!(
        instance("dim_x = ").unwrap_err(),
        NestadmmStatus::ConfigError
    );
    assert!(last_error().contains("line"));
    assert_eq!(
        instance(&SPEC.replace("dim_inner = 3", "dim_inner = 0")).unwrap_err(),
        NestadmmStatus::ConfigError
    );

    let mut out = ptr::null_mut();
    assert_eq!(
        unsafe { nestadmm_instance_from_toml(ptr::null(), &mut out) },
        NestadmmStatus::NullPointer
    );
    let mut v = 0.0;
    assert_eq!(
        unsafe { nestadmm_run_best_stationarity(ptr::null(), &mut v) },
        NestadmmStatus::NullPointer
    );

    let inst = instance(SPEC).unwrap();
    let mut run = ptr::null_mut();
    let s = unsafe {
        nestadmm_solve(
            inst,
            NestadmmEstimator::Minibatch,
            1.5,
            0.1,
            10,
            0,
            false,
            &mut run,
        )
    };
    assert_eq!(s, NestadmmStatus::ConfigError);
    assert!(run.is_null());
    unsafe {
        nestadmm_instance_free(inst);
        nestadmm_instance_free(ptr::null_mut());
        nestadmm_run_free(ptr::null_mut());
    }
    let name = unsafe { CStr::from_ptr(nestadmm_status_name(NestadmmStatus::BufferTooSmall)) };
    assert_eq!(name.to_str().unwrap(), "buffer too small");
}

#[test]
fn header_compiles_and_links_from_c() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = root.join("include").join("nestadmm.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for f in [
        "nestadmm_instance_from_toml",
        "nestadmm_solve",
        "nestadmm_run_free",
        "NESTADMM_STATUS_BUFFER_TOO_SMALL",
    ] {
        assert!(text.contains(f), "{f} missing from header");
    }
    let target = std::env::current_exe()
        .unwrap()
        .parent()
        .unwrap()
        .parent()
        .unwrap()
        .to_path_buf();
    let lib = target.join("libnestadmm_ffi.a");
    if Command::new("cc").arg("--version").output().is_err() || !lib.exists() {
        eprintln!("skipping C link check: no C compiler or static library");
        return;
    }
    let exe = tempfile::tempdir().unwrap();
    let bin = exe.path().join("smoke");
    let status = Command::new("cc")
        .arg(root.join("tests").join("c").join("smoke.c"))
        .arg("-I")
        .arg(root.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&bin).output().unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("dims 4 4 1 iterations 50"));
}
