use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use gge_spectra::cli::ExperimentSpec;

const SPEC: &str = r#"
name = "small"
model = "toda"
alpha = 1.0
potential = "x^2/2"
N = 16
tasks = ["sample", "transfer", "verify-clt", "seeds-check", { susceptibility = [[1, 1]] }]

[sampler]
count = 3000
rng_seed = 5

[operator]
nodes_per_dim = 24
"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_gge-spectra"));
    c.env_remove("GGE_SPECTRA_THREADS");
    c
}

fn run_spec(spec: &Path, out: &Path) -> Output {
    bin().arg("run").arg(spec).arg("--out").arg(out).output().unwrap()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn runs_are_deterministic_and_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("small.toml");
    fs::write(&spec, SPEC).unwrap();
    let (o1, o2) = (tmp.path().join("a"), tmp.path().join("b"));
    let r1 = run_spec(&spec, &o1);
    assert_eq!(r1.status.code(), Some(0), "{}", String::from_utf8_lossy(&r1.stderr));
    let r2 = bin().args(["--threads", "1"]).arg("run").arg(&spec).arg("--out").arg(&o2).output().unwrap();
    assert_eq!(r2.status.code(), Some(0));
    let (f1, f2) = (files(&o1.join("small")), files(&o2.join("small")));
    let names: Vec<&str> = f1.iter().map(|f| f.0.as_str()).collect();
    for want in ["spec.json", "samples.bin", "operator.json", "clt.json", "seeds.json", "susceptibility.json", "log.txt"] {
        assert!(names.contains(&want), "missing {want} in {names:?}");
    }
    assert_eq!(f1, f2);

    let stdout = String::from_utf8(r1.stdout).unwrap();
    assert_eq!(stdout.trim(), o1.join("small").display().to_string());
    let stderr = String::from_utf8(r1.stderr).unwrap();
    assert!(stderr.lines().any(|l| l.starts_with("[PASS]")));

    let written = ExperimentSpec::load(&o1.join("small/spec.json")).unwrap();
    assert_eq!(written, ExperimentSpec::parse(SPEC).unwrap());

    // every float is printed with 17 significant digits
    let op = fs::read_to_string(o1.join("small/operator.json")).unwrap();
    let line = op.lines().find(|l| l.contains("\"A\"")).unwrap();
    let mantissa = line.split(':').nth(1).unwrap().trim().trim_end_matches(',').split('e').next().unwrap();
    assert_eq!(mantissa.trim_start_matches('-').replace('.', "").len(), 17, "{line}");
}

#[test]
fn empty_task_list_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("empty.toml");
    fs::write(&spec, SPEC.replace(r#"tasks = ["sample", "transfer", "verify-clt", "seeds-check", { susceptibility = [[1, 1]] }]"#, "tasks = []"))
        .unwrap();
    let out = run_spec(&spec, tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no tasks requested"));
}

#[test]
fn unknown_fields_and_models_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("bad.toml");
    fs::write(&spec, format!("{SPEC}\n[extra]\nx = 1\n")).unwrap();
    assert_eq!(run_spec(&spec, tmp.path()).status.code(), Some(2));
    let out = bin().args(["run", "no-such-preset"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn presets_listing() {
    let out = bin().arg("presets").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().count() >= 11);
    assert!(text.contains("toda-quadratic-clt"));
    let out = bin().args(["presets", "--json"]).output().unwrap();
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let list = v.as_array().unwrap();
    assert!(list.len() >= 11);
    for p in list {
        let spec: ExperimentSpec = serde_json::from_value(p["spec"].clone()).unwrap();
        assert_eq!(spec.name, p["name"].as_str().unwrap());
    }
}

#[test]
fn seeds_print() {
    let out = bin().args(["seeds", "print", "--model", "toda", "--potential", "x^4"]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["k"], 1);
    assert!(!v["seed"].as_array().unwrap().is_empty());
    let bad = bin().args(["seeds", "print", "--model", "toda", "--potential", "x^3"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn thread_variable_overrides_flag() {
    let out = bin().env("GGE_SPECTRA_THREADS", "many").args(["--threads", "1", "presets"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("GGE_SPECTRA_THREADS"));
    let out = bin().env("GGE_SPECTRA_THREADS", "1").args(["--threads", "3", "presets"]).output().unwrap();
    assert!(out.status.success());
}
