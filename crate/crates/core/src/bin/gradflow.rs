use std::path::{Path, PathBuf};
use std::process::{exit, Command};

use clap::{Parser, Subcommand};
use gradflow::cli::compare::{compare_files, fit_decay, Reference};
use gradflow::cli::{parse_config, run_experiment};
use gradflow::io::read_rows;

#[derive(Parser)]
#[command(name = "gradflow", version, about = "Lagrangian schemes for Wasserstein gradient flows")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one experiment from a TOML config.
    Run { config: PathBuf },
    /// Compare a density CSV with another CSV or `analytic:NAME:key=value,...`.
    Compare {
        computed: PathBuf,
        reference: String,
        /// Trajectory CSV with `time` and `energy` columns for a log-log decay fit.
        #[arg(long)]
        trajectory: Option<PathBuf>,
        /// Fit window `lo,hi` in time.
        #[arg(long, value_parser = parse_window)]
        window: Option<(f64, f64)>,
    },
    /// Run a config once per value of a parameter, e.g. `--param discretization.dt=1e-3,5e-4`.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        param: String,
    },
}

fn parse_window(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected lo,hi")?;
    Ok((a.trim().parse().map_err(|e| format!("{e}"))?, b.trim().parse().map_err(|e| format!("{e}"))?))
}

fn fail(msg: impl std::fmt::Display, code: i32) -> ! {
    eprintln!("error: {msg}");
    exit(code)
}

fn run(config: &Path) -> i32 {
    let spec = parse_config(config).unwrap_or_else(|e| fail(e, 1));
    let manifest = run_experiment(&spec).unwrap_or_else(|e| fail(e, 3));
    for c in &manifest.checks {
        println!("{:<22} {}  {}", c.name, if c.passed { "ok" } else { "FAILED" }, c.detail);
    }
    if let Some(f) = &manifest.failure {
        eprintln!("solver failure: {f}");
    }
    println!("wrote {} files to {} in {:.2} s", manifest.outputs.len() + 1, spec.output.display(), manifest.wall_time_s);
    manifest.exit_code()
}

#[derive(serde::Deserialize)]
struct EnergyRow {
    time: f64,
    energy: f64,
}

fn compare(computed: &Path, reference: &str, trajectory: Option<&Path>, window: Option<(f64, f64)>) -> i32 {
    let reference = Reference::parse(reference).unwrap_or_else(|e| fail(e, 1));
    let cmp = compare_files(computed, &reference).unwrap_or_else(|e| fail(e, 1));
    let mut out = serde_json::to_value(&cmp).expect("comparison serializes");
    if let Some(path) = trajectory {
        let rows: Vec<EnergyRow> = read_rows(path).unwrap_or_else(|e| fail(e, 1));
        let t: Vec<f64> = rows.iter().map(|r| r.time).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.energy).collect();
        let fit = fit_decay(&t, &y, window.unwrap_or((0.0, f64::INFINITY))).unwrap_or_else(|e| fail(e, 1));
        out["decay_fit"] = serde_json::to_value(fit).expect("fit serializes");
        if let Reference::Barenblatt { m, .. } = reference {
            out["expected_slope"] = (-(m - 1.0) / (m + 1.0)).into();
        }
    }
    for w in &cmp.warnings {
        eprintln!("warning: {w}");
    }
    println!("{}", serde_json::to_string_pretty(&out).expect("json"));
    0
}

/// Writes one config per value and runs each in its own process.
fn sweep(config: &Path, param: &str) -> i32 {
    let (key, values) = param.split_once('=').unwrap_or_else(|| fail("--param expects key=v1,v2,...", 1));
    let text = std::fs::read_to_string(config).unwrap_or_else(|e| fail(e, 1));
    let base: toml::Table = toml::from_str(&text).unwrap_or_else(|e| fail(e, 1));
    let base_spec = parse_config(config).unwrap_or_else(|e| fail(e, 1));
    let exe = std::env::current_exe().unwrap_or_else(|e| fail(e, 1));
    let mut worst = 0;
    for raw in values.split(',') {
        let value: toml::Value = raw.trim().parse::<i64>().map(toml::Value::Integer).or_else(|_| raw.trim().parse::<f64>().map(toml::Value::Float)).unwrap_or_else(|_| {
            match raw.trim() {
                "true" => toml::Value::Boolean(true),
                "false" => toml::Value::Boolean(false),
                s => toml::Value::String(s.to_string()),
            }
        });
        let mut table = base.clone();
        let mut slot = &mut table;
        let parts: Vec<&str> = key.split('.').collect();
        for part in &parts[..parts.len() - 1] {
            slot = slot
                .entry(part.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .unwrap_or_else(|| fail(format!("`{part}` is not a table"), 1));
        }
        slot.insert(parts[parts.len() - 1].to_string(), value);
        let dir = base_spec.output.join(format!("{key}={}", raw.trim()));
        std::fs::create_dir_all(&dir).unwrap_or_else(|e| fail(e, 1));
        table.insert("output".into(), toml::Value::String(".".into()));
        let cfg = dir.join("config.toml");
        std::fs::write(&cfg, toml::to_string(&table).expect("table serializes")).unwrap_or_else(|e| fail(e, 1));
        let status = Command::new(&exe).arg("run").arg(&cfg).status().unwrap_or_else(|e| fail(e, 1));
        let code = status.code().unwrap_or(3);
        println!("{key}={}: exit {code}", raw.trim());
        worst = worst.max(code);
    }
    worst
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            exit(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let code = match &cli.command {
        Cmd::Run { config } => run(config),
        Cmd::Compare { computed, reference, trajectory, window } => compare(computed, reference, trajectory.as_deref(), *window),
        Cmd::Sweep { config, param } => sweep(config, param),
    };
    exit(code)
}
