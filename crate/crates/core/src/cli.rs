//! Command-line front end.
//!
//! Every command prints one pretty JSON report and exits with 0 (pass or
//! successful run), 1 (invariance or non-attainment fails) or 2 (spec or
//! evaluation error).

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::checker::{
    check_canonical, check_domain, check_parabolic_concave, check_parabolic_convex,
    ClosedFormVerdict,
};
use crate::error::{Error, Result};
use crate::geometry::{Domain, Window};
use crate::nonattain::{non_attainment_on_boundary, BoundaryOptions};
use crate::sim::{default_exit_band, euler_maruyama, exit_statistics, PathEnsemble};
use crate::spec::ModelSpec;

/// Overrides the rayon worker count.
pub const WORKERS_ENV: &str = "STOCHINV_WORKERS";

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_ERROR: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "stochinv",
    version,
    about = "Stochastic invariance checks for polynomial diffusions"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Test the first-order invariance conditions on the model's domain.
    Check(CheckArgs),
    /// Test boundary non-attainment for the model's level function.
    Nonattain(NonattainArgs),
    /// Run an Euler-Maruyama ensemble and report exit statistics.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    pub spec: PathBuf,
    #[arg(long, conflicts_with_all = ["numeric", "both"])]
    pub closed_form: bool,
    #[arg(long, conflicts_with = "both")]
    pub numeric: bool,
    /// Closed form where applicable plus sampling (default).
    #[arg(long)]
    pub both: bool,
    #[arg(long, default_value_t = 201)]
    pub samples: usize,
    /// Sampling window `lo,hi`, applied to every coordinate.
    #[arg(long, value_parser = parse_window, allow_hyphen_values = true, default_value = "-10,10")]
    pub window: (f64, f64),
}

#[derive(Debug, Args)]
pub struct NonattainArgs {
    pub spec: PathBuf,
    /// `auto` or a comma-separated vector.
    #[arg(long, default_value = "auto", allow_hyphen_values = true)]
    pub v: String,
    #[arg(long, default_value_t = 201)]
    pub samples: usize,
    #[arg(long, value_parser = parse_window, allow_hyphen_values = true, default_value = "-10,10")]
    pub window: (f64, f64),
    /// Level-set distance of the samples used for the local fit of `v`.
    #[arg(long, default_value_t = 1e-5)]
    pub radius: f64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub spec: PathBuf,
    #[arg(long)]
    pub paths: Option<usize>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dump every state as `path,step,t,x1..xd`.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

fn parse_window(s: &str) -> std::result::Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(',').ok_or("expected lo,hi")?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("{e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("{e}"))?;
    if !(lo < hi) {
        return Err(format!("window lower bound {lo} must be below {hi}"));
    }
    Ok((lo, hi))
}

fn parse_vector(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|e| Error::InvalidArgument(format!("--v entry {p:?}: {e}")))
        })
        .collect()
}

/// Sizes the global rayon pool from [`WORKERS_ENV`] if it is set.
pub fn configure_workers() -> Result<()> {
    let Ok(raw) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "{WORKERS_ENV} must be a positive integer, got {raw:?}"
        ))
    })?;
    // a pool may already exist when called twice in one process
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(())
}

/// A rendered report and its exit code.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub report: Value,
    pub code: i32,
}

impl Outcome {
    pub fn render(&self) -> String {
        let mut report = self.report.clone();
        positive_zeros(&mut report);
        serde_json::to_string_pretty(&report).expect("report serializes")
    }
}

fn positive_zeros(v: &mut Value) {
    match v {
        Value::Number(n) if n.as_f64() == Some(0.0) && n.is_f64() => *v = json!(0.0),
        Value::Array(a) => a.iter_mut().for_each(positive_zeros),
        Value::Object(o) => o.values_mut().for_each(positive_zeros),
        _ => {}
    }
}

fn error_report(command: &str, e: &Error) -> Outcome {
    let (kind, pointer) = match e {
        Error::Spec { pointer, .. } => ("spec", Some(pointer.clone())),
        Error::InvalidArgument(_) => ("argument", None),
        _ => ("evaluation", None),
    };
    Outcome {
        report: json!({
            "command": command,
            "status": "error",
            "error": {"kind": kind, "pointer": pointer, "message": e.to_string()},
        }),
        code: EXIT_ERROR,
    }
}

fn load(path: &Path) -> Result<ModelSpec> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::InvalidArgument(format!("cannot read {}: {e}", path.display())))?;
    ModelSpec::from_json(&text)
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report serializes")
}

pub fn run(cli: &Cli) -> Outcome {
    match &cli.command {
        Command::Check(a) => run_check(a),
        Command::Nonattain(a) => run_nonattain(a),
        Command::Simulate(a) => run_simulate(a),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    ClosedForm,
    Numeric,
    Both,
}

/// Closed-form checker for the three planar state spaces it covers.
fn closed_form(
    spec: &ModelSpec,
    domain: &Domain,
) -> std::result::Result<Result<ClosedFormVerdict>, String> {
    let model = spec.model().map_err(|e| e.to_string())?;
    let Some(poly) = model.to_poly2d() else {
        return Err(
            "closed forms cover two-dimensional models with affine drift and quadratic covariance"
                .into(),
        );
    };
    if *domain == Domain::upper_half_plane() {
        Ok(Ok(check_canonical(&poly)))
    } else if *domain == Domain::parabola(1.0) {
        Ok(check_parabolic_convex(&poly))
    } else if *domain == Domain::parabola(-1.0) {
        Ok(check_parabolic_concave(&poly))
    } else {
        Err("closed forms cover R x [0, inf) and the regions above x2 = x1^2 and x2 = -x1^2".into())
    }
}

pub fn run_check(args: &CheckArgs) -> Outcome {
    let mode = if args.closed_form {
        Mode::ClosedForm
    } else if args.numeric {
        Mode::Numeric
    } else {
        Mode::Both
    };
    match check_inner(args, mode) {
        Ok(o) => o,
        Err(e) => error_report("check", &e),
    }
}

fn check_inner(args: &CheckArgs, mode: Mode) -> Result<Outcome> {
    let spec = load(&args.spec)?;
    let domain = spec.domain()?;
    let tols = spec.tolerances();
    let window = Window::uniform(spec.dimension, args.window.0, args.window.1);
    let mut pass = true;
    let mut report = serde_json::Map::new();
    report.insert("command".into(), json!("check"));
    report.insert("tolerances".into(), to_value(&tols));

    if mode != Mode::Numeric {
        match closed_form(&spec, &domain) {
            Ok(verdict) => {
                let v = verdict?;
                pass &= v.pass;
                report.insert("closed_form".into(), to_value(&v));
            }
            Err(reason) if mode == Mode::ClosedForm => return Err(Error::InvalidArgument(reason)),
            Err(reason) => {
                report.insert(
                    "closed_form".into(),
                    json!({"applicable": false, "reason": reason}),
                );
            }
        }
    }
    if mode != Mode::ClosedForm {
        let model = spec.model()?.to_generic();
        let r = check_domain(&model, &domain, args.samples, &window, &tols)?;
        pass &= r.overall_pass;
        report.insert("witness".into(), to_value(&r.witness()));
        report.insert("numeric".into(), to_value(&r));
    }
    report.insert("status".into(), json!(if pass { "pass" } else { "fail" }));
    Ok(Outcome {
        report: Value::Object(report),
        code: if pass { EXIT_PASS } else { EXIT_FAIL },
    })
}

pub fn run_nonattain(args: &NonattainArgs) -> Outcome {
    match nonattain_inner(args) {
        Ok(o) => o,
        Err(e) => error_report("nonattain", &e),
    }
}

fn nonattain_inner(args: &NonattainArgs) -> Result<Outcome> {
    let spec = load(&args.spec)?;
    let domain = spec.domain()?;
    let level = spec.level()?;
    let model = spec.model()?.to_generic();
    let v = match args.v.trim() {
        "auto" => None,
        list => Some(parse_vector(list)?),
    };
    let opts = BoundaryOptions {
        samples: args.samples,
        window: Window::uniform(spec.dimension, args.window.0, args.window.1),
        radius: args.radius,
        v,
    };
    let r = non_attainment_on_boundary(&model, &domain, &level, &opts)?;
    let mut report = to_value(&r);
    report["command"] = json!("nonattain");
    report["status"] = json!(if r.pass { "pass" } else { "fail" });
    Ok(Outcome {
        report,
        code: if r.pass { EXIT_PASS } else { EXIT_FAIL },
    })
}

pub fn run_simulate(args: &SimulateArgs) -> Outcome {
    match simulate_inner(args) {
        Ok(o) => o,
        Err(e) => error_report("simulate", &e),
    }
}

fn simulate_inner(args: &SimulateArgs) -> Result<Outcome> {
    let spec = load(&args.spec)?;
    let mut config = spec
        .sim_config()
        .ok_or_else(|| Error::spec("#/sim", "simulate requires a sim block"))?;
    config.dt = args.dt.unwrap_or(config.dt);
    config.horizon = args.horizon.unwrap_or(config.horizon);
    config.n_paths = args.paths.unwrap_or(config.n_paths);
    config.seed = args.seed.unwrap_or(config.seed);
    config.validate()?;
    let x0 = spec.sim_start().expect("sim block present");
    let domain = spec.domain()?;
    let model = spec.model()?.to_generic();
    let band = match config.exit_band {
        Some(b) => b,
        None => default_exit_band(
            &model,
            &domain,
            std::slice::from_ref(&x0),
            &Window::uniform(spec.dimension, -10.0, 10.0),
            config.dt,
        )?,
    };
    let ensemble = euler_maruyama(&model, &x0, &config)?;
    if let Some(path) = &args.csv {
        write_csv(&ensemble, path)?;
    }
    let stats = exit_statistics(&ensemble, &domain, band);
    let failure_rate = stats.failed_paths as f64 / stats.n_paths as f64;
    let failures: Vec<_> = ensemble
        .paths
        .iter()
        .filter_map(|p| p.failure.as_ref())
        .take(10)
        .collect();
    let report = json!({
        "command": "simulate",
        "status": if failure_rate > 0.5 { "error" } else { "ok" },
        "config": config,
        "x0": x0.as_slice(),
        "exit_band": band,
        "exit_fraction": stats.exit_fraction,
        "exits": stats.exits,
        "n_paths": stats.n_paths,
        "failed_paths": stats.failed_paths,
        "worst_excursion": stats.worst_excursion,
        "first_exit_time_histogram": stats.first_exit_time_histogram,
        "first_failures": failures,
    });
    Ok(Outcome {
        report,
        code: if failure_rate > 0.5 {
            EXIT_ERROR
        } else {
            EXIT_PASS
        },
    })
}

fn write_csv(ensemble: &PathEnsemble, path: &Path) -> Result<()> {
    let io =
        |e: std::io::Error| Error::InvalidArgument(format!("cannot write {}: {e}", path.display()));
    let mut w = BufWriter::new(fs::File::create(path).map_err(io)?);
    let d = ensemble.dim;
    let header: Vec<String> = ["path", "step", "t"]
        .into_iter()
        .map(String::from)
        .chain((1..=d).map(|k| format!("x{k}")))
        .collect();
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    for (i, p) in ensemble.paths.iter().enumerate() {
        for (k, s) in p.states.chunks(d).enumerate() {
            write!(w, "{i},{k},{}", ensemble.times[k]).map_err(io)?;
            for v in s {
                write!(w, ",{v}").map_err(io)?;
            }
            writeln!(w).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn negative_zero_renders_as_zero() {
        let out = Outcome {
            report: json!({"a": [-0.0, 1.0], "b": {"c": -0.0}}),
            code: 0,
        };
        assert!(!out.render().contains("-0.0"));
    }

    #[test]
    fn window_parsing() {
        assert_eq!(parse_window("-5,5").unwrap(), (-5.0, 5.0));
        assert_eq!(parse_window(" 0 , 2.5").unwrap(), (0.0, 2.5));
        assert!(parse_window("3,1").is_err());
        assert!(parse_window("3").is_err());
    }

    #[test]
    fn vector_parsing() {
        assert_eq!(parse_vector("1, -0.5").unwrap(), vec![1.0, -0.5]);
        assert!(parse_vector("1,x").is_err());
    }

    #[test]
    fn flags_parse() {
        let cli = Cli::try_parse_from([
            "stochinv",
            "check",
            "s.json",
            "--numeric",
            "--window",
            "-1,1",
        ])
        .unwrap();
        match cli.command {
            Command::Check(a) => {
                assert!(a.numeric && !a.closed_form);
                assert_eq!(a.window, (-1.0, 1.0));
                assert_eq!(a.samples, 201);
            }
            _ => panic!("wrong command"),
        }
        assert!(
            Cli::try_parse_from(["stochinv", "check", "s.json", "--numeric", "--closed-form"])
                .is_err()
        );
        let cli = Cli::try_parse_from(["stochinv", "nonattain", "s.json", "--v", "-1"]).unwrap();
        assert!(matches!(cli.command, Command::Nonattain(ref a) if a.v == "-1"));
    }

    #[test]
    fn missing_file_is_an_error() {
        let cli = Cli::try_parse_from(["stochinv", "check", "/nonexistent/spec.json"]).unwrap();
        let out = run(&cli);
        assert_eq!(out.code, EXIT_ERROR);
        assert_eq!(out.report["status"], "error");
    }
}
