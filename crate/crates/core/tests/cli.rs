use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use jellium::cli::{git_blob_hash, parse_config_str, SCHEMA_LINE};
use jellium::Error;

const SMALL: &str = r#"{
  "domain": {"n1": 2, "n2": 2},
  "sampler": {"n_steps": 20000, "burn_in": 2000, "seed": 11},
  "observables": {"r_grid": [1, 2], "phase_r_grid": [0.5, 1, 2], "u_grid": [0, 1, 2]},
  "run": {"n_chains": 2, "save_snapshots": true, "snapshot_every": 100}
}"#;

fn jellium(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jellium"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn sample(dir: &Path, out: &str) -> Output {
    fs::write(dir.join("small.json"), SMALL).unwrap();
    jellium(
        &[
            "--config",
            "small.json",
            "--output",
            out,
            "--quiet",
            "sample",
        ],
        dir,
    )
}

const OUTPUTS: [&str; 9] = [
    "accumulators.json",
    "summary.json",
    "k_trace.csv",
    "snapshots.csv",
    "density.csv",
    "ktail.csv",
    "phase.csv",
    "volavg.csv",
    "chargevar.csv",
];

#[test]
fn sample_is_byte_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (sample(tmp.path(), "a"), sample(tmp.path(), "b"));
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert!(b.status.success());
    for f in OUTPUTS {
        let fa = fs::read(tmp.path().join("a").join(f)).unwrap();
        let fb = fs::read(tmp.path().join("b").join(f)).unwrap();
        if f == "summary.json" {
            // only the output directory differs
            let s = String::from_utf8(fa).unwrap().replace("\"a\"", "\"b\"");
            assert_eq!(s.as_bytes(), &fb[..], "{f}");
        } else {
            assert_eq!(fa, fb, "{f}");
        }
    }
}

#[test]
fn csv_schemas() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(sample(tmp.path(), "o").status.success());
    let dir = tmp.path().join("o");
    let header = |f: &str| {
        let text = fs::read_to_string(dir.join(f)).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(SCHEMA_LINE), "{f}");
        lines.next().unwrap().to_string()
    };
    assert_eq!(header("density.csv"), "x_lo,x_hi,density,stderr");
    assert_eq!(header("ktail.csv"), "gamma,p_emp,p_stderr");
    assert_eq!(
        header("phase.csv"),
        "r_cut,circ_mean_angle,resultant_length,stderr_angle"
    );
    assert_eq!(
        header("volavg.csv"),
        "r,mean_abs,p_exceed_0.25,p_exceed_0.5"
    );
    assert_eq!(header("chargevar.csv"), "u,var_q,stderr");
    assert_eq!(header("snapshots.csv"), "step,particle_rank,x,y");
    assert_eq!(header("k_trace.csv"), "x,k_left,k_right");

    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config_hash"], git_blob_hash(SMALL.as_bytes()));
    assert_eq!(summary["identity_checks_passed"], true);
    assert_eq!(summary["samples"], 2 * 20000 / 10);

    // density integrates to the particle count
    let text = fs::read_to_string(dir.join("density.csv")).unwrap();
    let total: f64 = text
        .lines()
        .skip(2)
        .map(|l| {
            let c: Vec<f64> = l.split(',').map(|v| v.parse().unwrap()).collect();
            c[2] * (c[1] - c[0])
        })
        .sum();
    assert!((total - 4.0).abs() < 1e-9);
}

#[test]
fn k_trace_is_a_consistent_step_function() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(sample(tmp.path(), "o").status.success());
    let text = fs::read_to_string(tmp.path().join("o/k_trace.csv")).unwrap();
    assert!(text.lines().nth(2).unwrap().starts_with("# chain=0 step="));
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with('x'))
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    // walls plus one row per particle, with a unit drop at each particle
    assert_eq!(rows.len(), 6);
    assert!(rows[0][2].abs() < 1e-12);
    assert!(rows[5][1].abs() < 1e-12);
    for r in &rows[1..5] {
        assert!((r[1] - r[2] - 1.0).abs() < 1e-12);
    }
    for w in rows.windows(2) {
        let slope = (w[1][1] - w[0][2]) / (w[1][0] - w[0][0]);
        assert!((slope - 1.0).abs() < 1e-9);
    }
}

#[test]
fn analyze_reproduces_sample_estimators() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(sample(tmp.path(), "o").status.success());
    let out = jellium(
        &["--output", "re", "--quiet", "analyze", "--input", "o"],
        tmp.path(),
    );
    assert!(out.status.success());
    for f in [
        "density.csv",
        "phase.csv",
        "volavg.csv",
        "chargevar.csv",
        "ktail.csv",
    ] {
        assert_eq!(
            fs::read(tmp.path().join("o").join(f)).unwrap(),
            fs::read(tmp.path().join("re").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn exit_codes_and_diagnostics() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("bad.json"), "{\"params\": {\"widht\": 1}}").unwrap();
    let out = jellium(&["--config", "bad.json", "sample"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let diag: serde_json::Value =
        serde_json::from_str(String::from_utf8_lossy(&out.stderr).lines().next().unwrap()).unwrap();
    assert_eq!(diag["kind"], "parse");
    assert!(diag["message"].as_str().unwrap().contains("widht"));

    fs::write(
        tmp.path().join("theta.json"),
        "{\"params\": {\"theta\": 1.0}}",
    )
    .unwrap();
    let out = jellium(&["--config", "theta.json", "sample"], tmp.path());
    assert_eq!(out.status.code(), Some(2));

    let out = jellium(&["--bogus"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn validate_command_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = jellium(&["--output", "v", "validate"], tmp.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 8);
    assert!(tmp.path().join("v/validate.json").exists());
}

#[test]
fn oracle_command_writes_density() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = r#"{"domain": {"n1": 1, "n2": 1},
        "observables": {"r_grid": [1, 2], "phase_r_grid": [0.5, 1], "u_grid": [0, 1, 2]}}"#;
    fs::write(tmp.path().join("n2.json"), cfg).unwrap();
    let out = jellium(
        &["--config", "n2.json", "--output", "q", "--quiet", "oracle"],
        tmp.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("q/oracle.json")).unwrap())
            .unwrap();
    assert!(report["mean_k0"].as_f64().unwrap().abs() < 1e-6);
    let text = fs::read_to_string(tmp.path().join("q/oracle_density.csv")).unwrap();
    assert_eq!(text.lines().count(), 2 + 20);
}

#[test]
fn config_defaults_and_overrides() {
    let spec = parse_config_str("{}").unwrap();
    assert_eq!((spec.n1, spec.n2, spec.n_chains), (8, 8, 4));
    assert_eq!(spec.params.beta, 2.0);
    let spec = parse_config_str(r#"{"params": {"beta": 0}, "sampler": {"seed": 5}}"#).unwrap();
    assert_eq!(spec.params.beta, 0.0);
    assert_eq!(spec.base_seed, 5);
    assert!(matches!(
        parse_config_str(r#"{"observables": {"r_grid": [40]}}"#),
        Err(Error::Validation(_))
    ));
    assert!(matches!(parse_config_str("{"), Err(Error::Parse(_))));
}
