use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;
use viscotomo_cli::ExperimentConfig;

fn viscotomo(args: &[&str], out_dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_viscotomo"))
        .args(args)
        .env("VISCOTOMO_OUTPUT_DIR", out_dir)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &TempDir, name: &str, body: &str) -> String {
    let path = dir.path().join(name);
    fs::write(&path, format!("output = \"unused\"\n{body}")).unwrap();
    path.to_str().unwrap().to_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn flat_trace_endpoints_land_on_the_circle() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "t.toml", "command = \"trace\"\nseed = 3\nmodel = \"constant:1\"\n[trace]\ncount = 8\nstep = 1e-3\n");
    let out = tmp.path().join("out");
    let o = viscotomo(&["run", &cfg], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(out.join("trace_endpoints.csv")).unwrap();
    let rows: Vec<_> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 8);
    for row in rows {
        let cols: Vec<f64> = row.split(',').skip(3).map(|v| v.parse().unwrap()).collect();
        assert!(cols.iter().all(|r| (r - 1.0).abs() < 1e-9), "{row}");
    }
    assert!(out.join("trace_007.csv").exists());
    assert!(out.join("config.toml").exists());
}

#[test]
fn coercivity_reports_satisfied_condition() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        &tmp,
        "c.toml",
        "command = \"coercivity\"\nmodel = \"paper4\"\nalpha = \"constant:1\"\n[grid]\nI = 6\nJ = 6\nK = 6\n[solver]\nepsilon = [1e-2]\ntol = 1e-10\nrestart = 60\n[coercivity]\nprobes = 2\n",
    );
    let o = viscotomo(&["run", &cfg], &tmp.path().join("out"));
    assert!(o.status.success());
    assert!(stdout(&o).contains("satisfied=true"), "{}", stdout(&o));
}

#[test]
fn bad_config_exits_with_code_2() {
    let tmp = TempDir::new().unwrap();
    let unknown = write_config(&tmp, "a.toml", "command = \"trace\"\nbogus = 1\n[trace]\ncount = 1\nstep = 1e-3\n");
    let invalid = write_config(&tmp, "b.toml", "command = \"sweep\"\nmodel = \"paper4\"\n[solver]\nepsilon = [-1.0]\ntol = 1e-10\nrestart = 60\n");
    for cfg in [unknown, invalid] {
        let o = viscotomo(&["run", &cfg], &tmp.path().join("out"));
        assert_eq!(o.status.code(), Some(2));
        assert!(!o.stderr.is_empty());
    }
}

#[test]
fn unconverged_solve_exits_with_code_4_unless_allowed() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        &tmp,
        "s.toml",
        "command = \"solve-static\"\nmodel = \"paper4\"\n[grid]\nI = 8\nJ = 8\nK = 8\n[solver]\nepsilon = [1e-3]\ntol = 1e-14\nmax_iter = 2\nrestart = 2\n[quadrature]\nrule = \"simpson\"\nstep = 1e-2\n",
    );
    let out = tmp.path().join("out");
    assert_eq!(viscotomo(&["run", &cfg], &out).status.code(), Some(4));
    let o = viscotomo(&["--allow-unconverged", "run", &cfg], &out);
    assert!(o.status.success());
    assert!(stdout(&o).contains("converged=false"));
}

#[test]
fn default_grid_field_export_has_one_line_per_node() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        &tmp,
        "s.toml",
        "command = \"solve-static\"\nmodel = \"paper4\"\n[solver]\nepsilon = [1e-3]\ntol = 1e-10\nrestart = 60\n[quadrature]\nrule = \"simpson\"\nstep = 1e-2\n[export]\nfields = true\n",
    );
    let out = tmp.path().join("elsewhere");
    let o = viscotomo(&["run", &cfg], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("static_eps1.csv")).unwrap();
    assert_eq!(csv.lines().count(), 30 * 30 * 10 + 1);
    assert_eq!(csv.lines().nth(1).unwrap().split(',').take(3).collect::<Vec<_>>(), ["1", "1", "1"]);
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        &tmp,
        "w.toml",
        "command = \"sweep\"\nmodel = \"paper4\"\n[grid]\nI = 8\nJ = 8\nK = 6\n[solver]\nepsilon = [1e-2, 1e-4]\ntol = 1e-10\nrestart = 60\n[quadrature]\nrule = \"simpson\"\nstep = 1e-2\n[export]\nfields = true\n",
    );
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(viscotomo(&["--workers", "1", "run", &cfg], &a).status.success());
    assert!(viscotomo(&["--workers", "3", "run", &cfg], &b).status.success());
    for name in ["sweep.csv", "reference.csv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn check_prints_a_config_that_parses_back() {
    let tmp = TempDir::new().unwrap();
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/paper4_sweep.toml");
    let o = viscotomo(&["check", path.to_str().unwrap()], &tmp.path().join("out"));
    assert!(o.status.success());
    let printed = ExperimentConfig::from_toml(&stdout(&o)).unwrap();
    assert_eq!(printed, ExperimentConfig::load(&path).unwrap());
}
