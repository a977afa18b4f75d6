use std::ptr;

use gradflow_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 256];
    let n = unsafe { gf_last_error(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..n.min(255)].iter().map(|&c| c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

fn uniform_density(a: f64, b: f64) -> *mut GfDensity {
    let bp = [a, b];
    let v = [1.0];
    let mut d = ptr::null_mut();
    let s = unsafe { gf_density_new(bp.as_ptr(), 2, v.as_ptr(), 1, true, &mut d) };
    assert_eq!(s, GfStatus::Ok);
    d
}

#[test]
fn distance_between_uniforms() {
    let a = uniform_density(0.0, 1.0);
    let b = uniform_density(1.0, 2.0);
    let mut w = 0.0;
    let mut m = 0.0;
    unsafe {
        assert_eq!(gf_density_mass(a, &mut m), GfStatus::Ok);
        assert_eq!(gf_wasserstein1d(a, b, &mut w), GfStatus::Ok);
        gf_density_free(a);
        gf_density_free(b);
    }
    assert!((m - 1.0).abs() < 1e-14);
    assert!((w - 1.0).abs() < 1e-12);
}

#[test]
fn errors_carry_status_and_message() {
    let bp = [0.0, 1.0, 0.5];
    let v = [1.0, 1.0];
    let mut d = ptr::null_mut();
    let s = unsafe { gf_density_new(bp.as_ptr(), 3, v.as_ptr(), 2, true, &mut d) };
    assert_ne!(s, GfStatus::Ok);
    assert!(d.is_null());
    assert!(!last_error().is_empty());

    let mut w = 0.0;
    let s = unsafe { gf_wasserstein1d(ptr::null(), ptr::null(), &mut w) };
    assert_eq!(s, GfStatus::NullPointer);

    let mut g = ptr::null_mut();
    assert_eq!(unsafe { gf_grid_uniform(0, &mut g) }, GfStatus::InvalidInput);
}

#[test]
fn state_round_trip_and_buffer_check() {
    let d = uniform_density(-1.0, 1.0);
    let mut g = ptr::null_mut();
    let mut st = ptr::null_mut();
    unsafe {
        assert_eq!(gf_grid_uniform(4, &mut g), GfStatus::Ok);
        assert_eq!(gf_grid_cells(g), 4);
        assert_eq!(gf_state_from_density(d, g, true, &mut st), GfStatus::Ok);
        let n = gf_state_len(st);
        assert_eq!(n, 5);
        let mut small = [0.0; 2];
        assert_eq!(gf_state_positions(st, small.as_mut_ptr(), 2), GfStatus::BufferTooSmall);
        let mut x = vec![0.0; n];
        assert_eq!(gf_state_positions(st, x.as_mut_ptr(), n), GfStatus::Ok);
        for (i, xi) in x.iter().enumerate() {
            assert!((xi - (-1.0 + 0.5 * i as f64)).abs() < 1e-12);
        }
        let mut back = ptr::null_mut();
        assert_eq!(gf_state_density(st, g, &mut back), GfStatus::Ok);
        let mut w = 1.0;
        assert_eq!(gf_wasserstein1d(d, back, &mut w), GfStatus::Ok);
        assert!(w < 1e-12);
        gf_density_free(back);
        gf_state_free(st);
        gf_grid_free(g);
        gf_density_free(d);
    }
}

#[test]
fn heat_flow_decreases_energy() {
    let d = uniform_density(-0.5, 0.5);
    let mut g = ptr::null_mut();
    let mut st = ptr::null_mut();
    let mut tr = ptr::null_mut();
    unsafe {
        gf_grid_uniform(20, &mut g);
        gf_state_from_density(d, g, true, &mut st);
        let s = gf_flow_fokker_planck(g, st, GfEntropy::Xlogx, 0.0, 0.0, 0.0, 1e-3, 10, &mut tr);
        assert_eq!(s, GfStatus::Ok, "{}", last_error());
        assert_eq!(gf_trajectory_len(tr), 11);
        let mut prev = f64::INFINITY;
        for i in 0..11 {
            let (mut t, mut e) = (0.0, 0.0);
            assert_eq!(gf_trajectory_sample(tr, i, &mut t, &mut e), GfStatus::Ok);
            assert!((t - 1e-3 * i as f64).abs() < 1e-12);
            assert!(e < prev);
            prev = e;
        }
        let (mut t, mut e) = (0.0, 0.0);
        assert_eq!(gf_trajectory_sample(tr, 11, &mut t, &mut e), GfStatus::InvalidInput);
        let mut last = ptr::null_mut();
        assert_eq!(gf_trajectory_state(tr, 10, &mut last), GfStatus::Ok);
        let mut x = vec![0.0; 21];
        gf_state_positions(last, x.as_mut_ptr(), 21);
        assert!(x[0] < -0.5 && x[20] > 0.5);
        gf_state_free(last);
        gf_trajectory_free(tr);
        gf_state_free(st);
        gf_grid_free(g);
        gf_density_free(d);
    }
}

#[test]
fn keller_segel_entry_points() {
    let n = 16;
    let mut u = vec![0.0; n + 1];
    let s = unsafe { gf_ksfd_steady_state(n, 0.5 * std::f64::consts::PI, u.as_mut_ptr(), u.len()) };
    assert_eq!(s, GfStatus::Ok, "{}", last_error());
    assert!(u.windows(2).all(|w| w[1] > w[0]));

    let (mut halt, mut t, mut m2) = (GfHalt::NonFinite, 0.0, 0.0);
    let mass = 4.0 * std::f64::consts::PI;
    let s = unsafe { gf_blob_keller_segel(8, 0.5, mass, 0.3, 1e-3, 0.01, &mut halt, &mut t, &mut m2) };
    assert_eq!(s, GfStatus::Ok, "{}", last_error());
    assert_eq!(halt, GfHalt::Completed);
    assert!((t - 0.01).abs() < 1e-9);
    assert!(m2 > 0.0);
}

#[test]
fn porous_medium_mesh_run() {
    let (mut e, mut a) = (0.0, 0.0);
    let s = unsafe { gf_pme2d(6, 2.0, 0.05, 1e-3, 3, &mut e, &mut a) };
    assert_eq!(s, GfStatus::Ok, "{}", last_error());
    assert!(e.is_finite() && a > 0.0);
}

#[test]
fn version_string() {
    let v = unsafe { std::ffi::CStr::from_ptr(gf_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/gradflow.h")).unwrap();
    let src = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/src/lib.rs")).unwrap();
    for line in src.lines().filter(|l| l.contains("extern \"C\" fn ")) {
        let name = line.split("fn ").nth(1).unwrap().split('(').next().unwrap();
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
    for ty in ["GfGrid", "GfDensity", "GfState", "GfTrajectory", "GF_STATUS_OK"] {
        assert!(header.contains(ty));
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = which_cc() else { return };
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/gradflow.h");
    let out = std::process::Command::new(cc).args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c", header]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn which_cc() -> Result<&'static str, ()> {
    for cc in ["cc", "gcc", "clang"] {
        if std::process::Command::new(cc).arg("--version").output().is_ok_and(|o| o.status.success()) {
            return Ok(cc);
        }
    }
    Err(())
}

#[test]
fn c_example_links_and_runs() {
    let Ok(cc) = which_cc() else { return };
    let exe = std::env::current_exe().unwrap();
    let lib_dir = exe.parent().unwrap().parent().unwrap();
    if !lib_dir.join("libgradflow_ffi.so").exists() {
        return;
    }
    let root = env!("CARGO_MANIFEST_DIR");
    let tmp = tempfile::tempdir().unwrap();
    let bin = tmp.path().join("distance");
    let out = std::process::Command::new(cc)
        .args([&format!("{root}/examples/distance.c"), "-I", &format!("{root}/include"), "-L"])
        .arg(lib_dir)
        .args(["-lgradflow_ffi", "-o"])
        .arg(&bin)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = std::process::Command::new(&bin).env("LD_LIBRARY_PATH", lib_dir).output().unwrap();
    assert!(run.status.success());
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), "W2 = 0.577350269189626");
}
