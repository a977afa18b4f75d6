use std::path::Path;
use std::process::Command;

use gradflow::cli::compare::{compare_files, Reference};
use gradflow::cli::{parse_config, parse_config_str, run_experiment};

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn check<'a>(m: &'a gradflow::cli::Manifest, name: &str) -> &'a gradflow::cli::Check {
    m.checks.iter().find(|c| c.name == name).unwrap_or_else(|| panic!("no check {name}"))
}

const HEAT: &str = r#"
scheme = "fp1d"
output = "heat"
[problem]
entropy = "xlogx"
boundary = "pinned"
[discretization]
k = 50
dt = 1e-3
steps = 20
record_every = 10
[initial]
kind = "cosine"
amplitude = 0.5
"#;

#[test]
fn heat_run_reports_monotone_energy() {
    let dir = tempfile::tempdir().unwrap();
    let spec = parse_config(&write(dir.path(), "heat.toml", HEAT)).unwrap();
    let m = run_experiment(&spec).unwrap();
    assert!(check(&m, "energy_monotone").passed);
    assert!(check(&m, "mass").passed);
    assert_eq!(m.exit_code(), 0);
    for f in ["trajectory.csv", "density_000000.csv", "density_000020.csv", "final_state.json", "manifest.json"] {
        assert!(dir.path().join("heat").join(f).exists(), "{f}");
    }
}

#[test]
fn identical_configs_give_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let a = write(dir.path(), "a.toml", &HEAT.replace("\"heat\"", "\"a\""));
    let b = write(dir.path(), "b.toml", &HEAT.replace("\"heat\"", "\"b\""));
    run_experiment(&parse_config(&a).unwrap()).unwrap();
    run_experiment(&parse_config(&b).unwrap()).unwrap();
    for f in ["trajectory.csv", "state_000020.csv"] {
        let x = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let y = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(x, y, "{f}");
    }
}

#[test]
fn pme_run_matches_barenblatt() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"
scheme = "fp1d"
output = "pme"
[problem]
entropy = "power"
m = 2.0
[discretization]
k = 100
dt = 1e-4
steps = 40
record_every = 40
[initial]
kind = "barenblatt"
m = 2.0
t0 = 1e-3
"#;
    let spec = parse_config(&write(dir.path(), "pme.toml", text)).unwrap();
    let m = run_experiment(&spec).unwrap();
    assert_eq!(m.exit_code(), 0);
    assert!(m.results["final_w2_reference"].as_f64().unwrap() < 1e-3);
    let out = dir.path().join("pme");
    let cmp = compare_files(&out.join("density_000040.csv"), &Reference::Barenblatt { m: 2.0, t: 5e-3, mass: 1.0 }).unwrap();
    assert!(cmp.l1 < 0.05, "{cmp:?}");
    assert!(cmp.warnings.is_empty());
    let same = compare_files(&out.join("density_000040.csv"), &Reference::File(out.join("density_000040.csv"))).unwrap();
    assert_eq!(same.l1, 0.0);
    assert_eq!(same.linf, 0.0);
}

#[test]
fn fourth_order_run() {
    let dir = tempfile::tempdir().unwrap();
    let text = HEAT.replace("fp1d", "thinfilm1d").replace("dt = 1e-3", "dt = 1e-5").replace("k = 50", "k = 30");
    let spec = parse_config(&write(dir.path(), "tf.toml", &text)).unwrap();
    let m = run_experiment(&spec).unwrap();
    assert!(check(&m, "h1_monotone").passed, "{:?}", m.checks);
    assert_eq!(m.exit_code(), 0);
}

#[test]
fn ksfd_reports_contraction() {
    let dir = tempfile::tempdir().unwrap();
    let text = "scheme = \"ksfd\"\noutput = \"ks\"\n[problem]\nchi_fraction = 0.25\n[discretization]\nn = 30\ndt = 0.1\nsteps = 60\n";
    let m = run_experiment(&parse_config(&write(dir.path(), "ks.toml", text)).unwrap()).unwrap();
    assert_eq!(m.results["bound_satisfied"], true);
    assert_eq!(m.exit_code(), 0);
}

#[test]
fn pme2d_records_positive_areas() {
    let dir = tempfile::tempdir().unwrap();
    let text = "scheme = \"pme2d\"\noutput = \"p2\"\n[problem]\nentropy = \"power\"\nm = 3.0\n[discretization]\nn = 8\ndt = 1e-3\nsteps = 5\nrecord_every = 5\n";
    let m = run_experiment(&parse_config(&write(dir.path(), "p2.toml", text)).unwrap()).unwrap();
    let series = m.results["min_area_series"].as_array().unwrap();
    assert_eq!(series.len(), 6);
    assert!(series.iter().all(|a| a.as_f64().unwrap() > 0.0));
    assert!(check(&m, "no_inversion").passed);
    assert!(dir.path().join("p2/elements_00001.csv").exists());
}

#[test]
fn blob_run_writes_samples() {
    let dir = tempfile::tempdir().unwrap();
    let text = "scheme = \"blob\"\noutput = \"b\"\n[problem]\nmass_pi = 4.0\n[discretization]\nparticles = 100\ndt = 1e-3\nt_end = 0.01\nrecord_every = 0.005\n";
    let spec = parse_config(&write(dir.path(), "b.toml", text)).unwrap();
    let m = run_experiment(&spec).unwrap();
    assert_eq!(m.metadata["regime"], "subcritical");
    assert!(check(&m, "energy_monotone").passed);
    assert!(dir.path().join("b/samples.csv").exists());
    assert!(dir.path().join("b/particles_00000.csv").exists());
}

#[test]
fn distance_of_uniforms() {
    let dir = tempfile::tempdir().unwrap();
    let text = "scheme = \"distance\"\noutput = \"d\"\n[distance.first]\nkind = \"uniform\"\na = 0.0\nb = 1.0\n[distance.second]\nkind = \"uniform\"\na = 0.0\nb = 2.0\n";
    let m = run_experiment(&parse_config(&write(dir.path(), "d.toml", text)).unwrap()).unwrap();
    assert!((m.results["w2"].as_f64().unwrap() - 1.0 / 3f64.sqrt()).abs() < 1e-12);
}

#[test]
fn binary_exit_codes() {
    let exe = env!("CARGO_BIN_EXE_gradflow");
    let dir = tempfile::tempdir().unwrap();
    let ok = write(dir.path(), "ok.toml", HEAT);
    assert_eq!(Command::new(exe).arg("run").arg(&ok).status().unwrap().code(), Some(0));
    // interaction strength beyond the threshold: the steady-state solver refuses
    let bad = write(dir.path(), "bad.toml", "scheme = \"ksfd\"\noutput = \"bad\"\n[problem]\nchi = 10.0\n[discretization]\nn = 10\ndt = 0.1\nsteps = 2\n");
    assert_eq!(Command::new(exe).arg("run").arg(&bad).status().unwrap().code(), Some(3));
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("bad/manifest.json")).unwrap()).unwrap();
    assert!(manifest["failure"].is_string());
    let typo = write(dir.path(), "typo.toml", &HEAT.replace("dt = 1e-3", "\"dt \" = 1e-3"));
    let out = Command::new(exe).arg("run").arg(&typo).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dt "));
}

#[test]
fn sweep_spawns_runs() {
    let exe = env!("CARGO_BIN_EXE_gradflow");
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.toml", &HEAT.replace("steps = 20", "steps = 4"));
    let out = Command::new(exe).args(["sweep"]).arg(&cfg).args(["--param", "discretization.dt=1e-3,5e-4"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for v in ["1e-3", "5e-4"] {
        assert!(dir.path().join("heat").join(format!("discretization.dt={v}")).join("manifest.json").exists());
    }
}

#[test]
fn compare_subcommand_fits_decay() {
    let exe = env!("CARGO_BIN_EXE_gradflow");
    let dir = tempfile::tempdir().unwrap();
    let text = "scheme = \"fp1d\"\noutput = \"pme\"\n[problem]\nentropy = \"power\"\nm = 2.0\n[discretization]\nk = 60\ndt = 2e-4\nsteps = 50\nrecord_every = 50\n[initial]\nkind = \"barenblatt\"\nm = 2.0\nt0 = 1e-3\n";
    run_experiment(&parse_config(&write(dir.path(), "c.toml", text)).unwrap()).unwrap();
    let out = dir.path().join("pme");
    let res = Command::new(exe)
        .arg("compare")
        .arg(out.join("density_000050.csv"))
        .arg("analytic:barenblatt:m=2,t=0.011")
        .arg("--trajectory")
        .arg(out.join("trajectory.csv"))
        .args(["--window", "0.003,0.011"])
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let v: serde_json::Value = serde_json::from_slice(&res.stdout).unwrap();
    let slope = v["decay_fit"]["slope"].as_f64().unwrap();
    assert!((slope + 1.0 / 3.0).abs() < 0.05, "{slope}");
}

#[test]
fn failed_check_maps_to_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let spec = parse_config(&write(dir.path(), "h.toml", HEAT)).unwrap();
    let mut m = run_experiment(&spec).unwrap();
    m.checks[0].passed = false;
    assert_eq!(m.exit_code(), 2);
    m.failure = Some("solver".into());
    assert_eq!(m.exit_code(), 3);
}

#[test]
fn parse_rejects_bad_scheme() {
    assert!(parse_config_str("scheme = \"fp2d\"").is_err());
}

#[test]
fn shipped_configs_parse() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            parse_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 8);
}
