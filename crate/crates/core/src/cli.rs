//! Command-line front end: `solve`, `sweep` and `dump-operator`.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 solver
//! non-convergence (outputs are still written), 3 I/O error.

use crate::config::ProblemConfig;
use crate::diagnostics::DiagnosticsReport;
use crate::error::WorldlineError;
use crate::reference::{convergence_study, solve_geodesic_ode, ConvergenceTable, StudyMode, StudyOptions};
use crate::sbp::{regularize, Order};
use crate::solver::{solve_report, SolveOptions};
use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NONCONVERGED: i32 = 2;
pub const EXIT_IO: i32 = 3;

const ORACLE_TOL: f64 = 1e-12;

const SCHEMAS: &str = "\
Output files:
  trajectory.csv    gamma,t1,t2,x1,x2
  diagnostics.csv   gamma,t,x,dt_dgamma,q_t,delta_e,delta_g_t,delta_g_x,h_bvp,q_x,q_boost
                    (q_x and q_boost are empty unless the potential is free)
  summary.json      convergence data, endpoint and interior charge deviation,
                    multipliers, oracle errors
  convergence.csv   n,dgamma,tdot_i,xdot_i,eps_final_x,eps_final_t,eps_l2_x,eps_l2_t,
                    t_final,delta_e_final,max_interior_delta_e,grad_norm,iterations,converged
  fit.json          fitted exponents beta for every error measure
  manifest.json     emitted files with sha256 checksums

Exit codes: 0 ok, 1 configuration/usage error, 2 solver did not converge
(files are still written), 3 I/O error.
Environment: WORLDLINE_THREADS caps the number of sweep worker threads.";

#[derive(Debug, Parser)]
#[command(name = "worldline", version, about = "World-line SBP discretization of particle initial value problems", after_help = SCHEMAS)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct SolverFlags {
    /// Absolute gradient-norm tolerance (default 1e-12 (1 + |z|_inf))
    #[arg(long)]
    pub tol: Option<f64>,
    /// Newton iteration cap
    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one configuration and write trajectory, diagnostics and summary
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the operator order of the configuration
        #[arg(long)]
        order: Option<Order>,
        #[command(flatten)]
        solver: SolverFlags,
    },
    /// Grid-refinement sweep with exponent fits
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated ascending grid sizes
        #[arg(long, value_delimiter = ',', required = true)]
        n_list: Vec<usize>,
        #[arg(long)]
        order: Option<Order>,
        /// Scale tdot_i (and xdot_i, keeping dx/dt fixed) with the grid size
        #[arg(long)]
        scale_tdot: bool,
        /// Explicit per-grid tdot_i values used with --scale-tdot
        #[arg(long, value_delimiter = ',', requires = "scale_tdot")]
        tdot_list: Option<Vec<f64>>,
        /// Smallest grid size included in the exponent fit
        #[arg(long, default_value_t = 0)]
        min_fit_n: usize,
        #[command(flatten)]
        solver: SolverFlags,
    },
    /// Print operator matrices as JSON
    DumpOperator {
        #[arg(long)]
        order: Order,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        dgamma: f64,
        #[arg(long)]
        regularized: bool,
        #[arg(long, default_value_t = 0.0, requires = "regularized")]
        init_value: f64,
    },
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Io(m) => write!(f, "I/O error: {m}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

impl From<WorldlineError> for CliError {
    fn from(e: WorldlineError) -> Self {
        CliError::Config(e.to_string())
    }
}

fn io_err(path: &Path, e: impl fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Shortest round-trip decimal.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn load_config(path: &Path, order: Option<Order>) -> Result<ProblemConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut cfg = ProblemConfig::from_json(&text)?;
    if let Some(o) = order {
        cfg.order = o;
        cfg.validate()?;
    }
    Ok(cfg)
}

fn solve_options(f: &SolverFlags) -> Result<SolveOptions, CliError> {
    let opts = SolveOptions {
        grad_tol: f.tol,
        max_iter: f.max_iter,
        ..SolveOptions::default()
    };
    opts.validate()?;
    Ok(opts)
}

struct OutDir {
    dir: PathBuf,
    files: Vec<(String, String, usize)>,
}

impl OutDir {
    fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        Ok(OutDir {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
        self.files.push((name.to_string(), hex::encode(Sha256::digest(bytes)), bytes.len()));
        Ok(())
    }

    fn write_json(&mut self, name: &str, v: &impl Serialize) -> Result<(), CliError> {
        let mut s = serde_json::to_string_pretty(v).map_err(|e| CliError::Io(e.to_string()))?;
        s.push('\n');
        self.write(name, s.as_bytes())
    }

    fn finish(mut self, config: &Path, subcommand: &str) -> Result<(), CliError> {
        let files: Vec<Value> = self
            .files
            .iter()
            .map(|(n, h, b)| json!({"name": n, "sha256": h, "bytes": b}))
            .collect();
        let manifest = json!({
            "config": config.display().to_string(),
            "subcommand": subcommand,
            "out_dir": self.dir.display().to_string(),
            "files": files,
        });
        let mut s = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Io(e.to_string()))?;
        s.push('\n');
        let path = self.dir.join("manifest.json");
        fs::write(&path, s).map_err(|e| io_err(&path, e))?;
        self.files.clear();
        Ok(())
    }
}

fn csv_bytes(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| CliError::Io(e.to_string()))?;
    for r in rows {
        w.write_record(&r).map_err(|e| CliError::Io(e.to_string()))?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.to_string()))
}

fn finite_or_null(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

fn cmd_solve(config: &Path, out: &Path, order: Option<Order>, flags: &SolverFlags) -> Result<i32, CliError> {
    let cfg = load_config(config, order)?;
    let opts = solve_options(flags)?;
    let sol = solve_report(&cfg, &opts)?;
    let report = DiagnosticsReport::from_state(&sol.state, &cfg)?;
    let report = match solve_geodesic_ode(&cfg, ORACLE_TOL) {
        Ok(oracle) => {
            let (t_ref, x_ref) = oracle.sample(&cfg.gamma_grid());
            report.with_errors(&t_ref, &x_ref, &cfg)?
        }
        Err(_) => report,
    };
    let mut dir = OutDir::create(out)?;
    let s = &sol.state;
    let gamma = cfg.gamma_grid();
    let traj = csv_bytes(
        &["gamma", "t1", "t2", "x1", "x2"],
        (0..cfg.n_gamma).map(|k| {
            vec![
                fmt_f64(gamma[k]),
                fmt_f64(s.t1[k]),
                fmt_f64(s.t2[k]),
                fmt_f64(s.x1[k]),
                fmt_f64(s.x2[k]),
            ]
        }),
    )?;
    dir.write("trajectory.csv", &traj)?;
    let opt = |v: &Option<Vec<f64>>, k: usize| v.as_ref().map(|p| fmt_f64(p[k])).unwrap_or_default();
    let r = &report;
    let diag = csv_bytes(
        &[
            "gamma", "t", "x", "dt_dgamma", "q_t", "delta_e", "delta_g_t", "delta_g_x", "h_bvp", "q_x",
            "q_boost",
        ],
        (0..cfg.n_gamma).map(|k| {
            vec![
                fmt_f64(r.gamma[k]),
                fmt_f64(r.t[k]),
                fmt_f64(r.x[k]),
                fmt_f64(r.time_mesh_velocity[k]),
                fmt_f64(r.q_t[k]),
                fmt_f64(r.delta_e[k]),
                fmt_f64(r.delta_g_t[k]),
                fmt_f64(r.delta_g_x[k]),
                fmt_f64(r.h_bvp[k]),
                opt(&r.q_x, k),
                opt(&r.q_boost, k),
            ]
        }),
    )?;
    dir.write("diagnostics.csv", &diag)?;
    let n = cfg.n_gamma;
    let summary = json!({
        "converged": sol.converged,
        "grad_norm": finite_or_null(sol.grad_norm),
        "grad_tol": sol.grad_tol,
        "iterations": sol.iterations,
        "continuation": sol.continuation,
        "t_final": finite_or_null(s.t1[n - 1]),
        "x_final": finite_or_null(s.x1[n - 1]),
        "dt_dgamma_final": finite_or_null(r.time_mesh_velocity[n - 1]),
        "endpoint_delta_e": finite_or_null(r.endpoint_delta_e()),
        "max_interior_delta_e": finite_or_null(r.max_interior_delta_e()),
        "branch_gap_t": finite_or_null(r.branch_gap_t),
        "branch_gap_x": finite_or_null(r.branch_gap_x),
        "h_bvp_total": finite_or_null(r.h_bvp_total),
        "h_bvp_bound": finite_or_null(r.h_bvp_bound),
        "lambda": s.lambda.iter().map(|v| finite_or_null(*v)).collect::<Vec<_>>(),
        "errors": r.errors,
        "config": cfg,
    });
    dir.write_json("summary.json", &summary)?;
    dir.finish(config, "solve")?;
    Ok(if sol.converged { EXIT_OK } else { EXIT_NONCONVERGED })
}

fn thread_cap() -> Result<Option<usize>, CliError> {
    match std::env::var("WORLDLINE_THREADS") {
        Err(_) => Ok(None),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Config(format!("WORLDLINE_THREADS must be a positive integer, got '{s}'"))),
        },
    }
}

fn scaled_tdots(cfg: &ProblemConfig, n_list: &[usize], explicit: Option<&Vec<f64>>) -> Vec<f64> {
    match explicit {
        Some(v) => v.clone(),
        None => n_list.iter().map(|&n| cfg.tdot_i * n as f64 / n_list[0] as f64).collect(),
    }
}

fn fit_json(table: &ConvergenceTable, min_n: usize) -> Value {
    let de: Vec<f64> = table.rows.iter().map(|r| r.delta_e_final.abs()).collect();
    let strictly_decreasing = de.windows(2).all(|w| w[1] < w[0]);
    let max = de.iter().cloned().fold(f64::NAN, f64::max);
    let min = de.iter().cloned().fold(f64::NAN, f64::min);
    let fits = match table.fit(min_n) {
        Ok(f) => json!(f),
        Err(e) => json!({"error": e.to_string()}),
    };
    json!({
        "order": table.order,
        "fits": fits,
        "endpoint_delta_e": {
            "strictly_decreasing": strictly_decreasing,
            "max_over_min": finite_or_null(max / min),
        },
        "all_converged": table.rows.iter().all(|r| r.converged),
    })
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(
    config: &Path,
    out: &Path,
    n_list: &[usize],
    order: Option<Order>,
    scale_tdot: bool,
    tdot_list: Option<&Vec<f64>>,
    min_fit_n: usize,
    flags: &SolverFlags,
) -> Result<i32, CliError> {
    let cfg = load_config(config, order)?;
    let opts = solve_options(flags)?;
    let threads = thread_cap()?;
    let study = StudyOptions {
        solve: opts,
        oracle_tol: ORACLE_TOL,
        mode: StudyMode::Parallel,
        tdot_list: scale_tdot.then(|| scaled_tdots(&cfg, n_list, tdot_list)),
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| CliError::Config(e.to_string()))?;
    let table = pool.install(|| convergence_study(&cfg, n_list, cfg.order, &study))?;

    let mut dir = OutDir::create(out)?;
    let bytes = csv_bytes(
        &[
            "n",
            "dgamma",
            "tdot_i",
            "xdot_i",
            "eps_final_x",
            "eps_final_t",
            "eps_l2_x",
            "eps_l2_t",
            "t_final",
            "delta_e_final",
            "max_interior_delta_e",
            "grad_norm",
            "iterations",
            "converged",
        ],
        table.rows.iter().map(|r| {
            vec![
                r.n_gamma.to_string(),
                fmt_f64(r.dgamma),
                fmt_f64(r.tdot_i),
                fmt_f64(r.xdot_i),
                fmt_f64(r.eps_final_x),
                fmt_f64(r.eps_final_t),
                fmt_f64(r.eps_l2_x),
                fmt_f64(r.eps_l2_t),
                fmt_f64(r.t_final),
                fmt_f64(r.delta_e_final),
                fmt_f64(r.max_interior_delta_e),
                fmt_f64(r.grad_norm),
                r.iterations.to_string(),
                r.converged.to_string(),
            ]
        }),
    )?;
    dir.write("convergence.csv", &bytes)?;
    dir.write_json("fit.json", &fit_json(&table, min_fit_n))?;
    dir.finish(config, "sweep")?;
    Ok(if table.rows.iter().all(|r| r.converged) {
        EXIT_OK
    } else {
        EXIT_NONCONVERGED
    })
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn cmd_dump(order: Order, n: usize, dgamma: f64, regularized: bool, init_value: f64, out: &mut dyn Write) -> Result<i32, CliError> {
    let op = order.build(n, dgamma).map_err(|e| CliError::Config(e.to_string()))?;
    let mut v = json!({
        "order": order,
        "n": n,
        "dgamma": dgamma,
        "d": rows(&op.d),
        "h": rows(&op.h),
    });
    if regularized {
        let r = regularize(&op, init_value);
        v["init_value"] = json!(init_value);
        v["sigma0"] = json!(r.sigma0);
        v["dbar"] = json!(rows(&r.dbar));
        v["hbar"] = json!(rows(&r.hbar));
    }
    let s = serde_json::to_string_pretty(&v).map_err(|e| CliError::Io(e.to_string()))?;
    writeln!(out, "{s}").map_err(|e| CliError::Io(e.to_string()))?;
    Ok(EXIT_OK)
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(stderr, "{text}")
            } else {
                write!(stdout, "{text}")
            };
            return code;
        }
    };
    let result = match &cli.command {
        Command::Solve {
            config,
            out,
            order,
            solver,
        } => cmd_solve(config, out, *order, solver),
        Command::Sweep {
            config,
            out,
            n_list,
            order,
            scale_tdot,
            tdot_list,
            min_fit_n,
            solver,
        } => cmd_sweep(config, out, n_list, *order, *scale_tdot, tdot_list.as_ref(), *min_fit_n, solver),
        Command::DumpOperator {
            order,
            n,
            dgamma,
            regularized,
            init_value,
        } => cmd_dump(*order, *n, *dgamma, *regularized, *init_value, stdout),
    };
    match result {
        Ok(code) => {
            if code == EXIT_NONCONVERGED {
                let _ = writeln!(stderr, "warning: solver did not converge; outputs written");
            }
            code
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(args.iter().copied(), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn float_format_round_trips() {
        for v in [0.1, 1.0, 1e-16, -2.5e300, 1.0 / 3.0] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn dump_small_operator() {
        let (code, out, _) = run_capture(&["worldline", "dump-operator", "--order", "sbp21", "--n", "3", "--dgamma", "0.5"]);
        assert_eq!(code, 0);
        let v: Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["d"], json!([[-2.0, 2.0, 0.0], [-1.0, 0.0, 1.0], [0.0, -2.0, 2.0]]));
        assert_eq!(v["h"][1][1], json!(0.5));
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run_capture(&["worldline", "dump-operator", "--order", "sbp21", "--n", "2", "--dgamma", "1"]).0, 1);
        assert_eq!(run_capture(&["worldline", "dump-operator", "--order", "sbp99", "--n", "5", "--dgamma", "1"]).0, 1);
        assert_eq!(run_capture(&["worldline", "bogus"]).0, 1);
        let (code, out, _) = run_capture(&["worldline", "--help"]);
        assert_eq!(code, 0);
        assert!(out.contains("diagnostics.csv"));
    }

    #[test]
    fn missing_config_is_io_error() {
        let (code, _, err) = run_capture(&["worldline", "solve", "--config", "/nonexistent/cfg.json", "--out", "/tmp/x"]);
        assert_eq!(code, 3, "{err}");
    }

    #[test]
    fn scaled_tdot_defaults_to_proportional() {
        let cfg = ProblemConfig::quartic_example();
        assert_eq!(scaled_tdots(&cfg, &[16, 32, 64], None), vec![1.0, 2.0, 4.0]);
        let explicit = vec![1.0, 4.0, 8.0];
        assert_eq!(scaled_tdots(&cfg, &[16, 32, 64], Some(&explicit)), explicit);
    }
}
