//! End-to-end tests of the `fairpart` binary: artifacts, determinism, and
//! exit codes.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fairpart"))
}

fn write(path: &Path, text: &str) {
    fs::write(path, text).unwrap();
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Fixture {
        Fixture {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn out(&self) -> PathBuf {
        self.path("out")
    }

    /// Minimal single-group mixture config with two facilities.
    fn mixture_config(&self) -> PathBuf {
        write(
            &self.path("facilities.csv"),
            "facility_id,x,y\nf1,0.25,0.5\nf2,0.75,0.5\n",
        );
        let config = serde_json::json!({
            "population": {
                "mixture": {
                    "bounds": {"xmin": 0.0, "ymin": 0.0, "xmax": 1.0, "ymax": 1.0},
                    "groups": [
                        {"prior": 1.0,
                         "components": [{"weight": 1.0, "mean": [0.5, 0.5],
                                         "cov": [[0.05, 0.0], [0.0, 0.05]]}]}
                    ]
                }
            },
            "facilities": self.path("facilities.csv"),
            "cost": {"kind": "euclidean"},
            "solver": {"iterations": 2000, "eval_samples": 2000, "checkpoint_samples": 500},
            "output_dir": self.out(),
            "seed": 5
        });
        let path = self.path("run.json");
        write(&path, &config.to_string());
        path
    }

    /// The fully segregated two-site instance with matrix costs.
    fn discrete_config(&self) -> PathBuf {
        write(
            &self.path("population.csv"),
            "site_id,x,y,count_1,count_2\ns1,0,0,10,0\ns2,1,0,0,10\n",
        );
        write(
            &self.path("facilities.csv"),
            "facility_id,x,y\nf1,0,0\nf2,1,0\n",
        );
        write(
            &self.path("costs.csv"),
            "site_id,c_1,c_2\ns1,0,1\ns2,1,0\n",
        );
        let config = serde_json::json!({
            "population": {"csv": self.path("population.csv")},
            "facilities": self.path("facilities.csv"),
            "cost": {"kind": "matrix", "matrix": self.path("costs.csv")},
            "solver": {"iterations": 20000, "eval_samples": 5000, "checkpoint_samples": 500},
            "output_dir": self.out(),
            "seed": 11
        });
        let path = self.path("run.json");
        write(&path, &config.to_string());
        path
    }
}

fn run_ok(cmd: &mut Command) -> Output {
    let output = cmd.output().unwrap();
    assert!(
        output.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    output
}

fn exit_code(cmd: &mut Command) -> (i32, String) {
    let output = cmd.output().unwrap();
    (
        output.status.code().unwrap(),
        format!(
            "{}{}",
            String::from_utf8_lossy(&output.stdout),
            String::from_utf8_lossy(&output.stderr)
        ),
    )
}

#[test]
fn solve_single_group_yields_zero_weights() {
    let fx = Fixture::new();
    let config = fx.mixture_config();
    run_ok(bin().arg("solve").arg("-c").arg(&config));
    let weights: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(fx.out().join("weights.json")).unwrap()).unwrap();
    assert_eq!(weights["k"], 2);
    assert_eq!(weights["m"], 1);
    for w in weights["w"].as_array().unwrap() {
        assert_eq!(w.as_f64().unwrap(), 0.0);
    }
    assert!(fx.out().join("trace.csv").exists());
    assert!(fx.out().join("report.json").exists());
    assert!(fx.out().join("cdf_group_1.csv").exists());
    let trace = fs::read_to_string(fx.out().join("trace.csv")).unwrap();
    assert!(trace.starts_with("n,dual_estimate,stderr,max_fairness_dev\n"));
}

#[test]
fn solve_is_deterministic() {
    let fx = Fixture::new();
    let config = fx.mixture_config();
    run_ok(bin().arg("solve").arg("-c").arg(&config));
    let first_weights = fs::read(fx.out().join("weights.json")).unwrap();
    let first_report = fs::read(fx.out().join("report.json")).unwrap();
    run_ok(bin().arg("solve").arg("-c").arg(&config));
    assert_eq!(fs::read(fx.out().join("weights.json")).unwrap(), first_weights);
    assert_eq!(fs::read(fx.out().join("report.json")).unwrap(), first_report);
}

#[test]
fn bad_fixed_p_exits_2_naming_field() {
    let fx = Fixture::new();
    let config = fx.mixture_config();
    let (code, log) = exit_code(
        bin()
            .arg("solve")
            .arg("-c")
            .arg(&config)
            .arg("--set")
            .arg("solver.mode={\"fixed_p\": [0.7, 0.7]}"),
    );
    assert_eq!(code, 2, "log: {log}");
    assert!(log.contains("fixed_p"), "log: {log}");
}

#[test]
fn missing_population_file_exits_3() {
    let fx = Fixture::new();
    let config = fx.discrete_config();
    fs::remove_file(fx.path("population.csv")).unwrap();
    let (code, _) = exit_code(bin().arg("solve").arg("-c").arg(&config));
    assert_eq!(code, 3);
}

#[test]
fn baseline_writes_prefixed_artifacts() {
    let fx = Fixture::new();
    let config = fx.mixture_config();
    let out = run_ok(bin().arg("baseline").arg("-c").arg(&config));
    assert!(fx.out().join("baseline_report.json").exists());
    let stdout = String::from_utf8_lossy(&out.stdout).to_string();
    // baseline never closes facilities
    assert!(stdout.contains("closed_facilities: none"), "{stdout}");
}

#[test]
fn evaluate_reuses_solved_weights() {
    let fx = Fixture::new();
    let config = fx.discrete_config();
    run_ok(bin().arg("solve").arg("-c").arg(&config));
    let report_after_solve = fs::read(fx.out().join("report.json")).unwrap();
    run_ok(
        bin()
            .arg("evaluate")
            .arg("-c")
            .arg(&config)
            .arg("--weights")
            .arg(fx.out().join("weights.json")),
    );
    assert_eq!(fs::read(fx.out().join("report.json")).unwrap(), report_after_solve);
    assert!(fx.out().join("assignment.csv").exists());
    let table = fs::read_to_string(fx.out().join("assignment.csv")).unwrap();
    assert!(table.starts_with("site_id,facility,cost,count_1,count_2\n"));
}

#[test]
fn oracle_passes_on_bundled_instance() {
    let fx = Fixture::new();
    let config = fx.discrete_config();
    let out = run_ok(bin().arg("oracle").arg("-c").arg(&config));
    let stdout = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(stdout.contains("strong_duality: pass"), "{stdout}");
    assert!(stdout.contains("objective 0.5"), "{stdout}");
}

#[test]
fn oracle_single_group_instance_has_zero_gap() {
    let fx = Fixture::new();
    write(
        &fx.path("population.csv"),
        "site_id,x,y,count_1\ns1,0,0,4\ns2,1,0,2\ns3,0.4,0.6,3\n",
    );
    write(
        &fx.path("facilities.csv"),
        "facility_id,x,y\nf1,0.1,0.1\nf2,0.9,0.2\n",
    );
    let config = serde_json::json!({
        "population": {"csv": fx.path("population.csv")},
        "facilities": fx.path("facilities.csv"),
        "cost": {"kind": "euclidean"},
        "solver": {"iterations": 1000, "eval_samples": 1000, "checkpoint_samples": 500},
        "output_dir": fx.out(),
        "seed": 3
    });
    let path = fx.path("run.json");
    write(&path, &config.to_string());
    let out = run_ok(bin().arg("oracle").arg("-c").arg(&path));
    let stdout = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(stdout.contains("strong_duality: pass"), "{stdout}");
    assert!(stdout.contains("gradient_unbiasedness: pass"), "{stdout}");
}

#[test]
fn oracle_flags_corrupted_weights_with_exit_5() {
    let fx = Fixture::new();
    let config = fx.discrete_config();
    run_ok(bin().arg("solve").arg("-c").arg(&config));
    let weights_path = fx.out().join("weights.json");
    let mut weights: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&weights_path).unwrap()).unwrap();
    weights["w"] = serde_json::json!([5.0, -5.0, -5.0, 5.0]);
    write(&weights_path, &weights.to_string());
    let (code, log) = exit_code(
        bin()
            .arg("oracle")
            .arg("-c")
            .arg(&config)
            .arg("--weights")
            .arg(&weights_path),
    );
    assert_eq!(code, 5, "log: {log}");
    assert!(log.contains("audited_weights_gap: FAIL"), "log: {log}");
}

#[test]
fn grid_exports_raster() {
    let fx = Fixture::new();
    let config = fx.mixture_config();
    run_ok(bin().arg("solve").arg("-c").arg(&config));
    run_ok(
        bin()
            .arg("grid")
            .arg("-c")
            .arg(&config)
            .arg("--weights")
            .arg(fx.out().join("weights.json"))
            .arg("--resolution")
            .arg("8x4"),
    );
    let raster = fs::read_to_string(fx.out().join("raster.csv")).unwrap();
    let lines: Vec<&str> = raster.trim_end().lines().collect();
    assert_eq!(lines[0], "8,4,0,0,1,1");
    assert_eq!(lines.len(), 5);
    // w = 0 on a symmetric instance: left half to facility 0, right to 1
    for line in &lines[1..] {
        assert_eq!(line, &"0,0,0,0,1,1,1,1");
    }
}

#[test]
fn grid_rejects_bad_resolution() {
    let fx = Fixture::new();
    let config = fx.mixture_config();
    run_ok(bin().arg("solve").arg("-c").arg(&config));
    let (code, log) = exit_code(
        bin()
            .arg("grid")
            .arg("-c")
            .arg(&config)
            .arg("--weights")
            .arg(fx.out().join("weights.json"))
            .arg("--resolution")
            .arg("8by4"),
    );
    assert_eq!(code, 2, "log: {log}");
}

#[test]
fn compare_renders_table() {
    let fx = Fixture::new();
    let config = fx.discrete_config();
    run_ok(bin().arg("solve").arg("-c").arg(&config));
    run_ok(bin().arg("baseline").arg("-c").arg(&config));
    let out = run_ok(
        bin()
            .arg("compare")
            .arg(fx.out().join("baseline_report.json"))
            .arg(fx.out().join("report.json")),
    );
    let table = String::from_utf8_lossy(&out.stdout).to_string();
    let lines: Vec<&str> = table.trim_end().lines().collect();
    assert_eq!(lines[0], "group,stat,baseline_report,report,pct_change_2");
    // 2 groups x 3 stats + 3 overall stats + deviation row
    assert_eq!(lines.len(), 1 + 6 + 3 + 1);
}

#[test]
fn env_var_overrides_config() {
    let fx = Fixture::new();
    let config = fx.mixture_config();
    let (code, log) = exit_code(
        bin()
            .arg("solve")
            .arg("-c")
            .arg(&config)
            .env("FAIRPART_SOLVER__MODE", "{\"fixed_p\": [0.4, 0.4]}"),
    );
    assert_eq!(code, 2, "log: {log}");
    assert!(log.contains("fixed_p"), "log: {log}");
}
