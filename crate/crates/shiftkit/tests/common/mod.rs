#![allow(dead_code)]

use std::path::PathBuf;

pub fn fixture(name: &str) -> String {
    manifest_dir().join("tests/fixtures").join(name).to_string_lossy().into_owned()
}

pub fn golden_path(name: &str) -> PathBuf {
    manifest_dir().join("tests/golden").join(name)
}

fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub struct Outcome {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

/// Runs the command line in-process. Arguments starting with `@` name a
/// fixture file.
pub fn run(args: &[&str]) -> Outcome {
    let argv: Vec<String> = std::iter::once("shiftkit".to_string())
        .chain(args.iter().map(|a| match a.strip_prefix('@') {
            Some(name) => fixture(name),
            None => a.to_string(),
        }))
        .collect();
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = shiftkit::cli::run(argv, &mut out, &mut err);
    Outcome {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

/// Golden file, expected exit code and arguments.
pub const GOLDEN_CASES: &[(&str, i32, &[&str])] = &[
    ("validate.json", 0, &["validate", "@p.json"]),
    ("validate_csv.json", 0, &["validate", "@p.csv"]),
    ("validate_invalid.json", 1, &["validate", "@invalid.json"]),
    ("decompose_prior.json", 0, &["decompose", "--source", "@p.json", "--target", "@q_prior.json"]),
    ("decompose_covariate.json", 0, &["decompose", "--source", "@p.json", "--target", "@q_covariate.json"]),
    ("correct_general.json", 0, &["correct", "--source", "@p.json", "--target", "@q_prior.json"]),
    ("correct_prior.json", 0, &["correct", "--source", "@p.json", "--priors", "@priors_prior.json"]),
    (
        "correct_fjs.csv",
        0,
        &["correct", "--source", "@p.json", "--priors", "@priors_covariate.json", "--rho", "0.61290322580645162", "--format", "csv"],
    ),
    (
        "solve_rho_prior.json",
        0,
        &["solve-rho", "--dist", "@p.json", "--density", "@h_prior.json", "--priors", "@priors_prior.json"],
    ),
    (
        "solve_rho_covariate.json",
        0,
        &["solve-rho", "--dist", "@p.json", "--density", "@h_covariate.json", "--priors", "@priors_covariate.json"],
    ),
    ("estimate_priors.json", 0, &["estimate-priors", "--dist", "@p.json", "--marginal", "@marginal_prior.json"]),
    (
        "phi_curve.csv",
        0,
        &["phi-curve", "--dist", "@p.json", "--density", "@h_prior.json", "--grid", "0.1:0.9:0.1"],
    ),
    (
        "phi_curve.json",
        0,
        &["phi-curve", "--dist", "@p.json", "--density", "@h_prior.json", "--grid", "0.1:0.9:0.2", "--format", "json"],
    ),
    ("classify_prior.json", 0, &["classify", "--source", "@p.json", "--target", "@q_prior.json"]),
    (
        "classify_covariate.json",
        0,
        &["classify", "--source", "@p.json", "--target", "@q_covariate.json", "--map", "@map_identity.json"],
    ),
    (
        "simulate_selection.json",
        0,
        &["simulate-selection", "--dist", "@p.json", "--phi", "@phi_cell.json", "-n", "100000", "--seed", "42"],
    ),
    (
        "analyze_selection_class.json",
        0,
        &["analyze-selection", "--dist", "@p.json", "--phi", "@phi_class.json", "--mode", "alpha-one"],
    ),
    (
        "analyze_selection_cell.json",
        0,
        &["analyze-selection", "--dist", "@p.json", "--phi", "@phi_cell.json", "--mode", "known-priors"],
    ),
];

/// Compares one case with its golden file; `SHIFTKIT_BLESS=1` rewrites
/// the file instead.
pub fn check_golden(name: &str, code: i32, args: &[&str]) -> Result<(), String> {
    let outcome = run(args);
    if outcome.code != code {
        return Err(format!("{name}: exit {} (want {code}); stderr: {}", outcome.code, outcome.stderr));
    }
    let path = golden_path(name);
    if std::env::var_os("SHIFTKIT_BLESS").is_some() {
        std::fs::write(&path, &outcome.stdout).map_err(|e| e.to_string())?;
        return Ok(());
    }
    let expected = std::fs::read_to_string(&path).map_err(|e| format!("{name}: {e}"))?;
    if expected != outcome.stdout {
        return Err(format!("{name}: output differs from golden\n--- got\n{}", outcome.stdout));
    }
    let again = run(args);
    if again.stdout != outcome.stdout {
        return Err(format!("{name}: output not stable across runs"));
    }
    Ok(())
}
