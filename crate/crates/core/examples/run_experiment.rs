//! Runs an experiment spec end to end and lists its artifacts.

use gge_spectra::cli::{run, ExperimentSpec};

const SPEC: &str = r#"
name = "volterra-example"
model = "volterra"
alpha = 1.0
potential = "-x^2"
N = 32
tasks = ["sample", "transfer", "verify-clt", "seeds-check"]

[sampler]
count = 4000
"#;

fn main() -> gge_spectra::Result<()> {
    let spec = ExperimentSpec::parse(SPEC)?;
    let out = std::env::temp_dir().join("gge-spectra-example");
    let outcome = run(&spec, &out);
    for line in &outcome.log {
        println!("{line}");
    }
    let mut files: Vec<String> = std::fs::read_dir(&outcome.dir)?
        .filter_map(|e| e.ok().map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect();
    files.sort();
    println!("{} -> {}", outcome.dir.display(), files.join(", "));
    std::process::exit(outcome.exit_code);
}
