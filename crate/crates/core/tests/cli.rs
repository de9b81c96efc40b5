use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Value;
use weakhyp::cli::{run, EXIT_BLOW_UP, EXIT_CONTINUATION, EXIT_FAIL, EXIT_OK, EXIT_STABILITY};

const BASE: &str = "order = 2\nhorizon = 1.0\nmodes = 16\ndt = 1e-3\nsnapshot_interval = 0.05\n";

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(format!("{name}.toml"));
    fs::write(&path, format!("{BASE}{body}")).unwrap();
    path
}

fn invoke(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> i32 {
    let mut args = vec![
        "weakhyp".to_string(),
        cmd.to_string(),
        "--config".to_string(),
        config.display().to_string(),
        "--output".to_string(),
        out.display().to_string(),
    ];
    args.extend(extra.iter().map(|s| s.to_string()));
    run(args)
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const WAVE: &str = "coefficients = [\"0\", \"-1\"]\ninitial = [\"cos(x)\", \"0\"]\n";

#[test]
fn check_reports_separation() {
    let dir = tempfile::tempdir().unwrap();
    let wave = write_config(dir.path(), "wave", WAVE);
    let out = dir.path().join("ok");
    assert_eq!(invoke("check", &wave, &out, &[]), EXIT_OK);
    let report = json(&out.join("report.json"));
    assert_eq!(report["diam"]["satisfied"], Value::Bool(true));
    assert_eq!(report["discriminant"]["holds"], Value::Bool(true));
    assert_eq!(report["metadata"]["command"], "check");
    assert_eq!(report["metadata"]["config_sha256"].as_str().unwrap().len(), 64);

    let double =
        write_config(dir.path(), "double", "coefficients = [\"-2\", \"1\"]\ninitial = [\"cos(x)\", \"0\"]\n");
    let out = dir.path().join("double");
    assert_eq!(invoke("check", &double, &out, &[]), EXIT_FAIL);
    assert_eq!(json(&out.join("report.json"))["diam"]["satisfied"], Value::Bool(false));
}

#[test]
fn simulate_writes_spectrum() {
    let dir = tempfile::tempdir().unwrap();
    let wave = write_config(dir.path(), "wave", WAVE);
    let out = dir.path().join("sim");
    assert_eq!(invoke("simulate", &wave, &out, &[]), EXIT_OK);
    let csv = fs::read_to_string(out.join("spectrum.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "t,k,re_V1,im_V1,re_V2,im_V2");
    // 21 snapshots × 33 modes
    assert_eq!(lines.count(), 21 * 33);
    let report = json(&out.join("report.json"));
    assert_eq!(report["run"]["status"], "completed");
    assert!(report["conjugate_symmetry_defect"].as_f64().unwrap() < 1e-14);
}

#[test]
fn abort_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let elliptic = write_config(
        dir.path(),
        "elliptic",
        "coefficients = [\"0\", \"1\"]\ninitial = [\"cos(20*x)\", \"0\"]\nmodes = 32\n",
    );
    // `modes` appears twice in that file; parse errors are configuration failures
    assert_eq!(invoke("simulate", &elliptic, &dir.path().join("dup"), &[]), EXIT_FAIL);

    let text = fs::read_to_string(&elliptic).unwrap().replacen("modes = 16\n", "", 1);
    fs::write(&elliptic, text).unwrap();
    let out = dir.path().join("blow");
    assert_eq!(invoke("simulate", &elliptic, &out, &[]), EXIT_BLOW_UP);
    assert_eq!(json(&out.join("report.json"))["run"]["status"], "blow_up");

    let stiff = dir.path().join("stiff.toml");
    fs::write(&stiff, format!("{}{WAVE}", BASE.replace("dt = 1e-3", "dt = 0.2"))).unwrap();
    let out = dir.path().join("stiff");
    assert_eq!(invoke("simulate", &stiff, &out, &[]), EXIT_STABILITY);
    assert_eq!(json(&out.join("report.json"))["status"], "stability_abort");
}

#[test]
fn analyze_outputs_and_continuation() {
    let dir = tempfile::tempdir().unwrap();
    let wave = write_config(dir.path(), "wave", WAVE);
    let out = dir.path().join("an");
    assert_eq!(invoke("analyze", &wave, &out, &["--threads", "2"]), EXIT_OK);
    let energies = fs::read_to_string(out.join("energies.csv")).unwrap();
    assert_eq!(energies.lines().next().unwrap(), "t,E,E_1,E_2,E_4,E_8,F,G,L,r,master_ratio");
    let radius = fs::read_to_string(out.join("radius.csv")).unwrap();
    assert_eq!(radius.lines().next().unwrap(), "t,r_hat,residual,band_lo,band_hi,s");
    let report = json(&out.join("report.json"));
    assert_eq!(report["continuation"]["pass"], Value::Bool(true));
    assert_eq!(report["energy_inequality"]["pass"], Value::Bool(true));
    assert_eq!(report["metadata"]["constants"]["J_max"], 24);
    assert!(report["metadata"]["config"].get("threads").is_none());

    // a vanishing linear constant leaves no room between 𝓖(0) and L
    let starved = write_config(
        dir.path(),
        "starved",
        "coefficients = [\"0\", \"-t^2\"]\nnu = 2\ninitial = [\"0.5*0.75/(1.25-cos(x))\", \"0\"]\n[constants]\nC = 1e-6\n",
    );
    let out = dir.path().join("starved");
    assert_eq!(invoke("analyze", &starved, &out, &[]), EXIT_CONTINUATION);
    let report = json(&out.join("report.json"));
    assert_eq!(report["continuation"]["pass"], Value::Bool(false));
    assert!(report["continuation"]["first_crossing"].as_f64().unwrap() > 0.0);
}

#[test]
fn symmetrizer_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let wave = write_config(dir.path(), "wave", WAVE);
    let out = dir.path().join("cert");
    assert_eq!(invoke("symmetrizer", &wave, &out, &["--seed", "5"]), EXIT_OK);
    let cert = json(&out.join("certificate.json"));
    assert!(cert.to_string().contains("\"pass\":true"));
}

#[test]
fn configuration_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    assert_eq!(invoke("check", &dir.path().join("absent.toml"), &out, &[]), EXIT_FAIL);
    let short = write_config(dir.path(), "short", "coefficients = [\"0\"]\ninitial = [\"cos(x)\", \"0\"]\n");
    assert_eq!(invoke("simulate", &short, &out, &[]), EXIT_FAIL);
    let unknown = write_config(dir.path(), "unknown", &format!("{WAVE}colour = 3\n"));
    assert_eq!(invoke("simulate", &unknown, &out, &[]), EXIT_FAIL);
    assert_eq!(run(["weakhyp", "frobnicate"]), EXIT_FAIL);
}
