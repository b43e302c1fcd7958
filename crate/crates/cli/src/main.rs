//! `tflpi` command-line front end.
//!
//! Exit codes: 0 success with a positive verdict, 1 negative verdict,
//! 2 bad input or usage, 3 numerical failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use tflpi::charts::{construct, normal_form};
use tflpi::ltflpi::{check_commuting, check_gtflpi, check_ltflpi, check_output, lie_chain, GtflpiVerdict};
use tflpi::ode::OdeOptions;
use tflpi::sim::{simulate_closed_loop, SimSetup};
use tflpi::sysmodel::{parse_output_expr, sample_on_set, validate};
use tflpi::{load_system, Config, Error, SystemFile};

const SCHEMA: u32 = 1;
const DEFAULT_GRID: usize = 24;
const GRID_RADIUS: f64 = 0.5;

#[derive(Parser, Debug)]
#[command(name = "tflpi", version, about = "Transverse feedback linearization checks and tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Write a JSON report to this path.
    #[arg(long, global = true, value_name = "PATH")]
    json: Option<PathBuf>,
    /// Pretty-print the JSON report.
    #[arg(long, global = true)]
    pretty: bool,
    /// Leave out version and timestamp so reports are reproducible.
    #[arg(long, global = true)]
    no_meta: bool,
    /// Relative singular-value threshold for rank decisions.
    #[arg(long, global = true, value_name = "X")]
    tol_rank: Option<f64>,
    /// Vanishing threshold.
    #[arg(long, global = true, value_name = "Y")]
    tol_zero: Option<f64>,
    /// Number of sample points near the base point.
    #[arg(long, global = true, value_name = "N")]
    samples: Option<usize>,
    /// Sampling (and chart verification) radius.
    #[arg(long, global = true, value_name = "R")]
    radius: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check the standing assumptions on a system file.
    Validate { file: PathBuf },
    /// Solvability checks.
    #[command(subcommand)]
    Check(Check),
    /// Relative degree, zero dynamics and observability of an output.
    Reldeg {
        file: PathBuf,
        #[arg(long)]
        lambda: String,
    },
    /// Build the flow chart and extract the transverse output.
    Construct { file: PathBuf },
    /// Transversal normal form of an output.
    Normalform {
        file: PathBuf,
        #[arg(long)]
        lambda: String,
    },
    /// Closed-loop simulation with the high-gain observer.
    Simulate {
        file: PathBuf,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long = "T", value_name = "T")]
        t_final: Option<f64>,
        #[arg(long)]
        sat: Option<f64>,
        /// Output to feed back; defaults to the file's [lambda].
        #[arg(long)]
        lambda: Option<String>,
        /// CSV trajectory path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
enum Check {
    /// Local problem at the file's base point.
    Ltflpi { file: PathBuf },
    /// Sufficient conditions for the global problem on a grid.
    Gtflpi {
        file: PathBuf,
        /// Generate this many grid points instead of using the file's [grid].
        #[arg(long)]
        grid: Option<usize>,
        /// Declare the target set a generalized cylinder.
        #[arg(long)]
        cylinder: bool,
    },
}

/// A finished command: the verdict decides between exit 0 and 1.
struct Outcome {
    verdict: bool,
    summary: String,
    report: Value,
}

fn config(c: &Common) -> Result<Config, Error> {
    let mut cfg = Config::default();
    if let Some(v) = c.tol_rank {
        cfg.tol.rank_rel = v;
    }
    if let Some(v) = c.tol_zero {
        cfg.tol.zero = v;
    }
    if let Some(v) = c.samples {
        cfg.sampling.count = v;
    }
    if let Some(v) = c.radius {
        cfg.sampling.radius = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load(path: &Path) -> Result<SystemFile, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    Ok(load_system(&text)?)
}

enum CliError {
    Io(String),
    Lib(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => 2,
            CliError::Lib(e) if e.is_numerical() => 3,
            CliError::Lib(Error::Precondition(_)) => 1,
            CliError::Lib(_) => 2,
        }
    }

    fn kind(&self) -> &'static str {
        match self.exit_code() {
            1 => "precondition",
            3 => "numerical",
            _ => "input",
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Io(m) => m.clone(),
            CliError::Lib(e) => e.to_string(),
        }
    }
}

fn run(cmd: &Command, cfg: &Config) -> Result<Outcome, CliError> {
    match cmd {
        Command::Validate { file } => {
            let m = load(file)?;
            let rep = validate(&m.system, &m.target, cfg);
            Ok(Outcome {
                verdict: rep.pass,
                summary: format!(
                    "validate: {} (n = {}, p = {}, nstar = {})",
                    if rep.pass { "ok" } else { "failed" },
                    rep.n,
                    rep.p,
                    rep.nstar
                ),
                report: json!(rep),
            })
        }
        Command::Check(Check::Ltflpi { file }) => {
            let m = load(file)?;
            let rep = check_ltflpi(&m.system, &m.target, cfg)?;
            Ok(Outcome {
                verdict: rep.solvable,
                summary: format!(
                    "ltflpi: {} (condition a {}, condition b {}, regular {})",
                    if rep.solvable { "solvable" } else { "not shown solvable" },
                    rep.cond_a.pass,
                    rep.cond_b.pass,
                    rep.regular
                ),
                report: json!(rep),
            })
        }
        Command::Check(Check::Gtflpi { file, grid, cylinder }) => {
            let m = load(file)?;
            let (points, source) = match (grid, m.grid.is_empty()) {
                (None, false) => (m.grid.clone(), "file".to_string()),
                (count, _) => {
                    let count = count.unwrap_or(DEFAULT_GRID);
                    if count == 0 {
                        return Err(Error::InvalidConfig("--grid must be positive".into()).into());
                    }
                    let pts = sample_on_set(&m.target, count, GRID_RADIUS, cfg.tol.rank_rel)?;
                    (pts, format!("sampled (radius {GRID_RADIUS})"))
                }
            };
            let rep = check_gtflpi(&m.system, &m.target, &points, *cylinder, cfg)?;
            let commuting = check_commuting(&m.system, &m.target)?;
            let hold = rep.verdict == GtflpiVerdict::SufficientHold;
            Ok(Outcome {
                verdict: hold,
                summary: format!(
                    "gtflpi: {} on {} grid points; (a) {} (b) {} (c) {}; ad-iterates commute: {}",
                    if hold { "sufficient conditions hold" } else { "sufficient conditions fail" },
                    points.len(),
                    rep.cond_a_pass,
                    rep.cond_b_pass,
                    rep.cond_c_pass,
                    commuting.commuting
                ),
                report: json!({ "grid_source": source, "gtflpi": rep, "commuting": commuting }),
            })
        }
        Command::Reldeg { file, lambda } => {
            let m = load(file)?;
            let lam = parse_output_expr(lambda, &m.system)?;
            let rep = check_output(&lam, &m.system, &m.target, cfg)?;
            Ok(Outcome {
                verdict: rep.valid,
                summary: format!(
                    "reldeg: {} ({}); zero dynamics coincide: {}; observable: {}",
                    match rep.reldeg.r() {
                        Some(r) => format!("r = {r}"),
                        None => "undefined".into(),
                    },
                    rep.reldeg.message,
                    rep.zero_dynamics.as_ref().is_some_and(|z| z.coincides),
                    rep.observability.observable
                ),
                report: json!(rep),
            })
        }
        Command::Construct { file } => {
            let m = load(file)?;
            let res = construct(&m.system, &m.target, cfg)?;
            let pass = res.verification.pass;
            Ok(Outcome {
                verdict: pass,
                summary: format!(
                    "construct: chart verified at radius {} (roundtrip {:.1e}, max |lambda| on set {:.1e})",
                    res.radius, res.verification.roundtrip_x, res.verification.on_set_max
                ),
                report: res.to_json()?,
            })
        }
        Command::Normalform { file, lambda } => {
            let m = load(file)?;
            let lam = parse_output_expr(lambda, &m.system)?;
            let nf = normal_form(&lam, &m.system, &m.target, None, cfg)?;
            let mut summary = format!("normalform: r = {}", nf.r);
            for (k, xi) in nf.xi.iter().enumerate() {
                summary.push_str(&format!("\n  xi{} = {xi}", k + 1));
            }
            summary.push_str(&format!("\n  a1 = {}\n  a2 = {}", nf.a1, nf.a2));
            Ok(Outcome {
                verdict: true,
                summary,
                report: json!(nf),
            })
        }
        Command::Simulate { file, eps, t_final, sat, lambda, out } => {
            let m = load(file)?;
            let lam = match lambda {
                Some(text) => parse_output_expr(text, &m.system)?,
                None => m.lambda.clone().ok_or_else(|| {
                    Error::InvalidConfig("no [lambda] in the file; pass --lambda".into())
                })?,
            };
            let r = m.target.codim();
            let mut overrides = BTreeMap::new();
            for (key, v) in [("eps", eps), ("T", t_final), ("sat", sat)] {
                if let Some(v) = v {
                    overrides.insert(key.to_string(), format!("{v:e}"));
                }
            }
            let setup = SimSetup::from_params(m.system.n(), r, &m.params, &overrides)?;
            let chain = lie_chain(&lam, m.system.f(), r - 1);
            let tr = simulate_closed_loop(
                &m.system,
                &m.target,
                &chain,
                &setup.observer,
                &setup.x_init,
                &setup.xihat_init,
                setup.timing,
                OdeOptions::default(),
            )?;
            if let Some(path) = out {
                let f = std::fs::File::create(path)
                    .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
                tr.write_csv(std::io::BufWriter::new(f))
                    .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
            }
            let report = json!({
                "setup": setup,
                "termination": tr.termination,
                "samples": tr.len(),
                "t_end": tr.t.last(),
                "terminal_transverse_norm": tr.terminal_transverse_norm(),
                "max_transverse_norm": tr.max_transverse_norm(),
                "terminal_gamma_residual": tr.gamma_resid.last(),
                "saturated_samples": tr.saturated_samples,
                "saturated_evaluations": tr.saturated_evaluations,
                "csv": out.as_ref().map(|p| p.display().to_string()),
            });
            if let tflpi::sim::Termination::Blowup(reason) = &tr.termination {
                return Err(Error::IntegratorBlowup(format!(
                    "trajectory stopped at t = {}: {reason}",
                    tr.t.last().copied().unwrap_or(0.0)
                ))
                .into());
            }
            Ok(Outcome {
                verdict: true,
                summary: format!(
                    "simulate: t = {}, |xi| = {:.3e} (peak {:.3e}), saturation active in {} evaluations",
                    tr.t.last().copied().unwrap_or(0.0),
                    tr.terminal_transverse_norm(),
                    tr.max_transverse_norm(),
                    tr.saturated_evaluations
                ),
                report,
            })
        }
    }
}

fn command_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Validate { .. } => "validate",
        Command::Check(Check::Ltflpi { .. }) => "check ltflpi",
        Command::Check(Check::Gtflpi { .. }) => "check gtflpi",
        Command::Reldeg { .. } => "reldeg",
        Command::Construct { .. } => "construct",
        Command::Normalform { .. } => "normalform",
        Command::Simulate { .. } => "simulate",
    }
}

fn input_path(cmd: &Command) -> &Path {
    match cmd {
        Command::Validate { file }
        | Command::Check(Check::Ltflpi { file })
        | Command::Check(Check::Gtflpi { file, .. })
        | Command::Reldeg { file, .. }
        | Command::Construct { file }
        | Command::Normalform { file, .. }
        | Command::Simulate { file, .. } => file,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = config(&cli.common)
        .map_err(CliError::from)
        .and_then(|cfg| run(&cli.command, &cfg).map(|o| (o, cfg)));

    let mut doc = json!({
        "schema": SCHEMA,
        "command": command_name(&cli.command),
        "input": input_path(&cli.command).display().to_string(),
    });
    let code = match &result {
        Ok((o, cfg)) => {
            println!("{}", o.summary);
            doc["verdict"] = json!(o.verdict);
            doc["config"] = json!(cfg);
            doc["report"] = o.report.clone();
            if o.verdict {
                0
            } else {
                1
            }
        }
        Err(e) => {
            eprintln!("tflpi: {}", e.message());
            doc["error"] = json!({ "kind": e.kind(), "message": e.message() });
            e.exit_code()
        }
    };
    doc["exit_code"] = json!(code);
    if !cli.common.no_meta {
        let stamp = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        doc["meta"] = json!({ "version": env!("CARGO_PKG_VERSION"), "unix_time": stamp });
    }
    if let Some(path) = &cli.common.json {
        let text = if cli.common.pretty {
            serde_json::to_string_pretty(&doc)
        } else {
            serde_json::to_string(&doc)
        }
        .expect("report serializes");
        if let Err(e) = std::fs::write(path, text + "\n") {
            eprintln!("tflpi: cannot write {}: {e}", path.display());
            return ExitCode::from(2);
        }
    }
    ExitCode::from(code)
}
