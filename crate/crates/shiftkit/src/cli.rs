//! Argument parsing and command dispatch.

use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use shiftkit_core::dist::{density, feature_density};
use shiftkit_core::fjs::{binary_phi, correct_posteriors_fjs, estimate_priors_em, solve_rho, EmOptions};
use shiftkit_core::normal_form::{correct_posteriors, normal_form};
use shiftkit_core::selection::{analyze_fjs_selection, sample_distribution, simulate_selection, AnalysisMode};
use shiftkit_core::taxonomy::{classify, correct_prior_shift};
use shiftkit_core::tolerance::{ADMISSIBILITY, CHECK};
use shiftkit_core::{Error, FiniteJointDistribution, PosteriorTable, SolverOptions, Table};

use crate::error::CliError;
use crate::format::{
    load_density, load_distribution, load_feature_vector, load_map, load_priors, load_selection, read_table,
};
use crate::json::{format_g17, to_canonical_string};
use crate::report;

#[derive(Debug, Parser)]
#[command(name = "shiftkit", version, about = "Exact dataset-shift computations on finite joint distributions")]
pub struct Cli {
    /// Tolerance: solver residual for solve-rho, estimate-priors and the
    /// selection analysis (default 1e-12); relative comparison tolerance
    /// for classify (default 1e-9).
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Iteration limit of the iterative solvers (default 10000).
    #[arg(long, global = true)]
    pub max_iter: Option<usize>,
    /// Seed of the simulation random stream.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output format; each command has its own default.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// Population priors taken from the distribution; solve for alpha.
    KnownPriors,
    /// Alpha fixed to one; estimate the population priors.
    AlphaOne,
}

/// `start:stop:step`, inclusive of both ends.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid(pub Vec<f64>);

impl FromStr for Grid {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<f64> = s
            .split(':')
            .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
            .collect::<Result<_, _>>()?;
        let [start, stop, step] = parts[..] else {
            return Err("expected start:stop:step".into());
        };
        if !(step > 0.0) || !(stop >= start) {
            return Err("need step > 0 and stop >= start".into());
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize;
        // round away the binary noise of start + k * step
        Ok(Grid(
            (0..=n)
                .map(|k| ((start + k as f64 * step) * 1e12).round() / 1e12)
                .collect(),
        ))
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a distribution file.
    Validate { path: PathBuf },
    /// Joint, feature and class-conditional densities of a target against a source.
    Decompose {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
    },
    /// Target posteriors from source posteriors: from a full target
    /// (general correction), from target priors (prior shift), or from
    /// target priors and rho (factorizable joint shift).
    Correct {
        #[arg(long)]
        source: PathBuf,
        #[arg(long, conflicts_with_all = ["priors", "rho"])]
        target: Option<PathBuf>,
        #[arg(long, required_unless_present = "target")]
        priors: Option<PathBuf>,
        /// Comma-separated rho_1..rho_{d-1}.
        #[arg(long, value_delimiter = ',', requires = "priors")]
        rho: Option<Vec<f64>>,
    },
    /// Solve the factorizable-joint-shift equation system for rho.
    SolveRho {
        #[arg(long)]
        dist: PathBuf,
        #[arg(long)]
        density: PathBuf,
        #[arg(long)]
        priors: PathBuf,
        #[arg(long)]
        damping: Option<f64>,
    },
    /// Target priors from a target feature marginal under prior shift (EM).
    EstimatePriors {
        #[arg(long)]
        dist: PathBuf,
        /// Target feature marginal, a feature vector file.
        #[arg(long)]
        marginal: PathBuf,
        /// Plain EM iterations without extrapolation.
        #[arg(long)]
        no_accelerate: bool,
    },
    /// Two-class map from target prior q to rho, as CSV q,rho,residual.
    PhiCurve {
        #[arg(long)]
        dist: PathBuf,
        #[arg(long)]
        density: PathBuf,
        #[arg(long, default_value = "0.05:0.95:0.05")]
        grid: Grid,
    },
    /// Report which special shift types relate a source and a target.
    Classify {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// Representation map from cells to groups.
        #[arg(long)]
        map: Option<PathBuf>,
    },
    /// Monte Carlo draw of the selected sample.
    SimulateSelection {
        #[arg(long)]
        dist: PathBuf,
        #[arg(long)]
        phi: PathBuf,
        #[arg(short = 'n', long = "draws")]
        n: u64,
    },
    /// Population-side analysis of a factorizable selection.
    AnalyzeSelection {
        #[arg(long)]
        dist: PathBuf,
        #[arg(long)]
        phi: PathBuf,
        #[arg(long, value_enum, default_value = "known-priors")]
        mode: Mode,
    },
}

enum Output {
    Json(Value),
    Text(String),
}

struct Failure {
    error: CliError,
    context: Option<FiniteJointDistribution>,
    extra: Option<serde_json::Map<String, Value>>,
}

impl From<CliError> for Failure {
    fn from(error: CliError) -> Self {
        Failure {
            error,
            context: None,
            extra: None,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        CliError::from(e).into()
    }
}

fn with_context(dist: &FiniteJointDistribution) -> impl Fn(Error) -> Failure + '_ {
    move |e| Failure {
        error: e.into(),
        context: Some(dist.clone()),
        extra: None,
    }
}

fn solver_options(cli: &Cli, damping: Option<f64>) -> SolverOptions {
    let d = SolverOptions::default();
    SolverOptions {
        tol: cli.tol.unwrap_or(d.tol),
        max_iter: cli.max_iter.unwrap_or(d.max_iter),
        damping: damping.unwrap_or(d.damping),
    }
}

fn csv_escape(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn long_csv(dist: &FiniteJointDistribution, column: &str, value: impl Fn(usize, usize) -> Option<String>) -> String {
    let mut s = format!("feature,class,{column}\n");
    for (x, f) in dist.features().iter().enumerate() {
        for (i, c) in dist.classes().iter().enumerate() {
            if let Some(v) = value(x, i) {
                s.push_str(&format!("{},{},{v}\n", csv_escape(f), csv_escape(c)));
            }
        }
    }
    s
}

fn posterior_csv(dist: &FiniteJointDistribution, post: &PosteriorTable) -> String {
    long_csv(dist, "posterior", |x, i| post.is_defined(x).then(|| format_g17(post.get(x, i))))
}

fn execute(cli: &Cli) -> Result<Output, Failure> {
    let format = cli.format;
    let json_only = |default: Format| -> Result<(), Failure> {
        if format.unwrap_or(default) == Format::Csv {
            return Err(CliError::Usage("this command has no CSV output".into()).into());
        }
        Ok(())
    };
    match &cli.command {
        Command::Validate { path } => {
            json_only(Format::Json)?;
            let file = read_table(path)?;
            let report = file.validate()?;
            if report.is_valid() {
                Ok(Output::Json(json!({ "valid": true })))
            } else {
                let issues: Vec<String> = report.issues().iter().map(ToString::to_string).collect();
                Err(Failure {
                    error: Error::InvalidDistribution(report).into(),
                    context: None,
                    extra: Some(json!({ "valid": false, "issues": issues }).as_object().cloned().unwrap()),
                })
            }
        }
        Command::Decompose { source, target } => {
            json_only(Format::Json)?;
            let p = load_distribution(source)?;
            let q = load_distribution(target)?;
            let ctx = with_context(&p);
            let nf = normal_form(&p, &q).map_err(&ctx)?;
            let h = feature_density(&q, &p).map_err(&ctx)?;
            let joint = density(&q, &p).map_err(&ctx)?;
            Ok(Output::Json(report::decomposition(&p, &nf, &h, &joint)))
        }
        Command::Correct { source, target, priors, rho } => {
            let p = load_distribution(source)?;
            let ctx = with_context(&p);
            let (method, post) = match (target, priors) {
                (Some(target), _) => {
                    let q = load_distribution(target)?;
                    let nf = normal_form(&p, &q).map_err(&ctx)?;
                    let qp = q.priors();
                    ("general", correct_posteriors(&p.posteriors(), &p.priors(), &qp, &nf.class_densities)?)
                }
                (None, Some(priors)) => {
                    let q = load_priors(priors, &p)?;
                    match rho {
                        None => ("prior_shift", correct_prior_shift(&p.posteriors(), &p.priors(), &q)?),
                        Some(rho) => ("fjs", correct_posteriors_fjs(&p.posteriors(), &p.priors(), &q, rho)?),
                    }
                }
                (None, None) => return Err(CliError::Usage("need --target or --priors".into()).into()),
            };
            match format.unwrap_or(Format::Json) {
                Format::Json => Ok(Output::Json(json!({
                    "method": method,
                    "posteriors": report::posteriors(&p, &post),
                }))),
                Format::Csv => Ok(Output::Text(posterior_csv(&p, &post))),
            }
        }
        Command::SolveRho { dist, density, priors, damping } => {
            json_only(Format::Json)?;
            let p = load_distribution(dist)?;
            let h = load_density(density, &p)?;
            let q = load_priors(priors, &p)?;
            let c = solve_rho(&p, &h, &q, &solver_options(cli, *damping))?;
            Ok(Output::Json(report::characterization(&p, &c)))
        }
        Command::EstimatePriors { dist, marginal, no_accelerate } => {
            json_only(Format::Json)?;
            let p = load_distribution(dist)?;
            let t = load_feature_vector(marginal, &p)?;
            let d = EmOptions::default();
            let opts = EmOptions {
                tol: cli.tol.unwrap_or(d.tol),
                max_iter: cli.max_iter.unwrap_or(d.max_iter),
                accelerate: !no_accelerate,
            };
            let e = estimate_priors_em(&p.posteriors(), &p.priors(), &t, &opts)?;
            Ok(Output::Json(report::em(&p, &e)))
        }
        Command::PhiCurve { dist, density, grid } => {
            let p = load_distribution(dist)?;
            let h = load_density(density, &p)?;
            let curve = binary_phi(&p, &h, &grid.0)?;
            match format.unwrap_or(Format::Csv) {
                Format::Json => Ok(Output::Json(report::phi_curve(&curve))),
                Format::Csv => {
                    let mut s = String::from("q,rho,residual\n");
                    for pt in &curve.points {
                        s.push_str(&format!(
                            "{},{},{}\n",
                            format_g17(pt.q),
                            format_g17(pt.rho),
                            format_g17(pt.residual)
                        ));
                    }
                    Ok(Output::Text(s))
                }
            }
        }
        Command::Classify { source, target, map } => {
            json_only(Format::Json)?;
            let p = load_distribution(source)?;
            let q = load_distribution(target)?;
            let map = map.as_ref().map(|m| load_map(m, &p)).transpose()?;
            let r = classify(&p, &q, map.as_ref(), cli.tol.unwrap_or(CHECK)).map_err(with_context(&p))?;
            Ok(Output::Json(report::shift_report(&p, &r)))
        }
        Command::SimulateSelection { dist, phi, n } => {
            let p = load_distribution(dist)?;
            let sel = load_selection(phi, &p)?;
            let sim = simulate_selection(&p, &sel, *n, cli.seed)?;
            let (exact, _) = sample_distribution(&p, &sel)?;
            match format.unwrap_or(Format::Json) {
                Format::Json => Ok(Output::Json(report::simulation(&p, cli.seed, &sim, &exact))),
                Format::Csv => Ok(Output::Text(long_csv(&p, "count", |x, i| Some(sim.counts[x][i].to_string())))),
            }
        }
        Command::AnalyzeSelection { dist, phi, mode } => {
            json_only(Format::Json)?;
            let p = load_distribution(dist)?;
            let sel = load_selection(phi, &p)?;
            let mode = match mode {
                Mode::KnownPriors => AnalysisMode::KnownPopulationPriors,
                Mode::AlphaOne => AnalysisMode::AlphaOne,
            };
            let a = analyze_fjs_selection(&p, &sel, mode, &solver_options(cli, None))?;
            if !a.admissible {
                let t: &Table = &a.classwise_selection;
                let (cell, class) = (0..t.rows())
                    .flat_map(|x| (0..t.cols()).map(move |i| (x, i)))
                    .find(|&(x, i)| t[(x, i)] > 1.0 + ADMISSIBILITY)
                    .expect("inadmissible entry exists");
                let extra = json!({ "analysis": report::selection_analysis(&p, &a) });
                return Err(Failure {
                    error: Error::Inadmissible { cell, class, value: t[(cell, class)] }.into(),
                    context: Some(p),
                    extra: extra.as_object().cloned(),
                });
            }
            Ok(Output::Json(report::selection_analysis(&p, &a)))
        }
    }
}

/// Runs one invocation; returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let target: &mut dyn Write = if e.use_stderr() { err } else { out };
            let _ = write!(target, "{}", e.render());
            return code;
        }
    };
    let written = match execute(&cli) {
        Ok(Output::Json(v)) => out.write_all(to_canonical_string(&v).as_bytes()).map(|_| 0),
        Ok(Output::Text(s)) => out.write_all(s.as_bytes()).map(|_| 0),
        Err(f) => {
            let code = f.error.exit_code();
            let mut extra = match &f.error {
                CliError::Domain(e) => report::error_details(f.context.as_ref(), e),
                _ => Default::default(),
            };
            if let Some(more) = f.extra {
                extra.extend(more);
            }
            let v = report::error(f.error.name(), &f.error.to_string(), Some(extra));
            let _ = writeln!(err, "shiftkit: {}", f.error);
            out.write_all(to_canonical_string(&v).as_bytes()).map(|_| code)
        }
    };
    written.unwrap_or(2)
}
