//! `weakrk` command-line front end.
//!
//! Exit codes: 0 success, 1 verification found violations (or a convergence
//! study was inconclusive), 2 usage or input-file error, 3 runtime failure.

use clap::{Args, Parser, Subcommand, ValueEnum};
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use weakrk::conditions::{concrete_coefficient_check, conditions_csv, conditions_text, generate_conditions, verify_tableau};
use weakrk::expansion::{expansion_csv, expansion_table};
use weakrk::simulate::{convergence_study, load_affine, ExecPolicy, StudyStatus, TestFunctional};
use weakrk::tableau::Tableau;
use weakrk::trees::{beta_of, enumerate_ts_delta, enumerate_ts_star, HalfInt};
use weakrk::{Calculus, Error};

/// Largest tree order accepted by `trees enumerate`.
const MAX_TREE_ORDER: u32 = 4;
/// Largest condition order accepted by `conditions`.
const MAX_CONDITION_ORDER: u32 = 3;
/// Largest trajectory count accepted by `simulate convergence`.
const MAX_SAMPLES: u64 = 1_000_000_000;

#[derive(Parser, Debug)]
#[command(name = "weakrk", version, about = "Colored rooted trees, weak order conditions and SRK weak-convergence studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Tree tables.
    #[command(subcommand)]
    Trees(TreesCmd),
    /// Order conditions and scheme verification.
    #[command(subcommand)]
    Conditions(ConditionsCmd),
    /// Truncated expansion of E f(X_t).
    #[command(subcommand)]
    Expand(ExpandCmd),
    /// Monte Carlo studies.
    #[command(subcommand)]
    Simulate(SimulateCmd),
    /// Scheme files.
    #[command(subcommand)]
    Scheme(SchemeCmd),
}

#[derive(Subcommand, Debug)]
enum TreesCmd {
    /// List tree classes with their labelling counts.
    Enumerate {
        /// Tree set.
        #[arg(long, value_enum)]
        set: TreeSet,
        /// Largest order ρ, a multiple of 1/2.
        #[arg(long, default_value = "2")]
        max_order: String,
        #[command(flatten)]
        out: Output,
    },
}

#[derive(Subcommand, Debug)]
enum ConditionsCmd {
    /// Conditions E(Φ_S(t)) = target for every correlated tree.
    Generate {
        #[arg(long, value_enum)]
        calculus: CalculusArg,
        #[arg(long)]
        order: u32,
        /// Noise dimension bounding the number of index classes.
        #[arg(long, default_value_t = 1)]
        m: u32,
        #[command(flatten)]
        out: Output,
    },
    /// Verify a scheme symbolically, one identity per pattern.
    Verify(VerifyArgs),
    /// Verify a scheme with concrete index values in 1..=m.
    Oracle(VerifyArgs),
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// Built-in scheme name or scheme file.
    #[arg(long)]
    scheme: String,
    /// Calculus of the conditions (defaults to the scheme's).
    #[arg(long, value_enum)]
    calculus: Option<CalculusArg>,
    #[arg(long)]
    order: u32,
    #[arg(long, default_value_t = 1)]
    m: u32,
    #[command(flatten)]
    out: Output,
}

#[derive(Subcommand, Debug)]
enum ExpandCmd {
    /// Truncated expansion against the closed-form moment of an affine problem.
    Exact {
        /// Built-in problem name or affine problem file.
        #[arg(long)]
        problem: String,
        /// Functional: x, xsq or norm2.
        #[arg(long, default_value = "xsq")]
        f: String,
        #[arg(long)]
        order: u32,
        /// Comma-separated step sizes.
        #[arg(long, value_delimiter = ',', default_value = "0.125,0.0625,0.03125,0.015625,0.0078125")]
        dt_grid: Vec<f64>,
        #[command(flatten)]
        out: Output,
    },
}

#[derive(Subcommand, Debug)]
enum SimulateCmd {
    /// Weak-error study over a list of step counts.
    Convergence {
        #[arg(long)]
        scheme: String,
        #[arg(long)]
        problem: String,
        #[arg(long, default_value = "xsq")]
        f: String,
        /// End time.
        #[arg(long = "T", default_value_t = 1.0)]
        t_end: f64,
        /// Comma-separated numbers of steps; h = T / steps.
        #[arg(long, value_delimiter = ',', default_value = "2,4,8,16,32")]
        steps: Vec<u64>,
        #[arg(long, default_value_t = 1_000_000)]
        samples: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Worker threads (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
        /// Run chunks on the calling thread only.
        #[arg(long)]
        sequential: bool,
        #[command(flatten)]
        out: Output,
    },
}

#[derive(Subcommand, Debug)]
enum SchemeCmd {
    /// Print a scheme's coefficients.
    Show {
        #[arg(long)]
        scheme: String,
        /// Noise dimension for the instantiated coefficient table.
        #[arg(long, default_value_t = 1)]
        m: u32,
        /// Print the scheme file instead of the coefficient table.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args, Debug)]
struct Output {
    /// Output format.
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Output file (default: standard output).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Format {
    Csv,
    Text,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum TreeSet {
    Delta,
    Ito,
    Strat,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum CalculusArg {
    Ito,
    Strat,
}

impl From<CalculusArg> for Calculus {
    fn from(c: CalculusArg) -> Self {
        match c {
            CalculusArg::Ito => Calculus::Ito,
            CalculusArg::Strat => Calculus::Strat,
        }
    }
}

/// Failure with its exit code.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn usage(e: Error) -> Failure {
    Failure::Usage(e.to_string())
}

fn emit(out: &Output, csv: String, text: String) -> Result<(), Failure> {
    let body = if out.format == Format::Csv { csv } else { text };
    match &out.out {
        Some(path) => std::fs::write(path, body).map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display()))),
        None => std::io::stdout().write_all(body.as_bytes()).map_err(|e| Failure::Runtime(e.to_string())),
    }
}

fn check_order(p: u32) -> Result<(), Failure> {
    if p == 0 || p > MAX_CONDITION_ORDER {
        return Err(Failure::Usage(format!("--order must be in 1..={MAX_CONDITION_ORDER}, got {p}")));
    }
    Ok(())
}

fn check_m(m: u32) -> Result<(), Failure> {
    if m == 0 {
        return Err(Failure::Usage("--m must be at least 1".into()));
    }
    Ok(())
}

/// Runs one subcommand; `Ok(true)` means success, `Ok(false)` a negative verdict.
fn run(cli: Cli) -> Result<bool, Failure> {
    match cli.command {
        Command::Trees(TreesCmd::Enumerate { set, max_order, out }) => {
            let rho: HalfInt = max_order.parse().map_err(usage)?;
            if rho.0 > 2 * MAX_TREE_ORDER {
                return Err(Failure::Usage(format!("--max-order must be at most {MAX_TREE_ORDER}")));
            }
            let (header, rows): (Vec<&str>, Vec<Vec<String>>) = match set {
                TreeSet::Delta => (
                    vec!["tree", "rho", "alpha_delta", "gamma"],
                    enumerate_ts_delta(rho)
                        .iter()
                        .map(|e| vec![e.tree.to_string(), e.tree.rho().to_string(), e.alpha_delta.to_string(), e.tree.stats().gamma.to_string()])
                        .collect(),
                ),
                TreeSet::Ito | TreeSet::Strat => {
                    let calc = if matches!(set, TreeSet::Ito) { Calculus::Ito } else { Calculus::Strat };
                    (
                        vec!["tree", "rho", "alpha_ito", "alpha_strat", "gamma", "beta"],
                        enumerate_ts_star(calc, rho)
                            .iter()
                            .map(|e| {
                                vec![
                                    e.tree.to_string(),
                                    e.tree.rho().to_string(),
                                    e.alpha_ito.to_string(),
                                    e.alpha_strat.to_string(),
                                    e.tree.stats().gamma.to_string(),
                                    beta_of(&e.tree).to_string(),
                                ]
                            })
                            .collect(),
                    )
                }
            };
            let mut csv = header.join(",") + "\n";
            for r in &rows {
                csv.push_str(&r.iter().map(|f| if f.contains(',') { format!("\"{f}\"") } else { f.clone() }).collect::<Vec<_>>().join(","));
                csv.push('\n');
            }
            let text = text_table(&header, &rows);
            emit(&out, csv, text)?;
            Ok(true)
        }
        Command::Conditions(ConditionsCmd::Generate { calculus, order, m, out }) => {
            check_order(order)?;
            check_m(m)?;
            let conds = generate_conditions(calculus.into(), order, m)?;
            emit(&out, conditions_csv(&conds), conditions_text(&conds))?;
            Ok(true)
        }
        Command::Conditions(ConditionsCmd::Verify(args)) => verify(args, false),
        Command::Conditions(ConditionsCmd::Oracle(args)) => verify(args, true),
        Command::Expand(ExpandCmd::Exact { problem, f, order, dt_grid, out }) => {
            let sde = load_affine(&problem).map_err(usage)?;
            let f: TestFunctional = f.parse().map_err(usage)?;
            if order > 4 {
                return Err(Failure::Usage(format!("--order must be at most 4, got {order}")));
            }
            if let Some(bad) = dt_grid.iter().find(|dt| !(**dt >= 0.0) || !dt.is_finite()) {
                return Err(Failure::Usage(format!("--dt-grid entries must be non-negative, got {bad}")));
            }
            let rows = expansion_table(&sde, f, order, &dt_grid)?;
            let text_rows: Vec<Vec<String>> =
                rows.iter().map(|r| vec![format!("{}", r.dt), format!("{:.12e}", r.truncated), format!("{:.12e}", r.exact), format!("{:.3e}", r.error)]).collect();
            emit(&out, expansion_csv(&rows), text_table(&["dt", "truncated", "exact", "error"], &text_rows))?;
            Ok(true)
        }
        Command::Simulate(SimulateCmd::Convergence { scheme, problem, f, t_end, steps, samples, seed, threads, sequential, out }) => {
            let tab = Tableau::load(&scheme).map_err(usage)?;
            let sde = load_affine(&problem).map_err(usage)?;
            let f: TestFunctional = f.parse().map_err(usage)?;
            if !(t_end > 0.0) || !t_end.is_finite() {
                return Err(Failure::Usage(format!("--T must be positive, got {t_end}")));
            }
            if steps.is_empty() || steps.contains(&0) {
                return Err(Failure::Usage("--steps must list positive step counts".into()));
            }
            if samples == 0 || samples > MAX_SAMPLES {
                return Err(Failure::Usage(format!("--samples must be in 1..={MAX_SAMPLES}")));
            }
            if threads == Some(0) {
                return Err(Failure::Usage("--threads must be at least 1".into()));
            }
            // the process is fixed; its drift is rewritten for the scheme's calculus
            let sde = sde.to_calculus(tab.calculus());
            let prob = sde.to_problem().map_err(usage)?;
            let policy = if sequential { ExecPolicy::Sequential } else { ExecPolicy::Parallel(threads) };
            let hs: Vec<f64> = steps.iter().map(|&n| t_end / n as f64).collect();
            let report = convergence_study(&prob, &tab, f, t_end, &hs, samples, seed, policy)?;
            let text_rows: Vec<Vec<String>> = report
                .rows
                .iter()
                .map(|r| {
                    vec![
                        format!("{}", r.h),
                        format!("{:.10e}", r.estimate),
                        format!("{:.3e}", r.stderr),
                        format!("{:.3e}", r.bias),
                        r.slope_so_far.map(|s| format!("{s:.3}")).unwrap_or_else(|| "-".into()),
                    ]
                })
                .collect();
            let text = text_table(&["h", "estimate", "stderr", "bias", "slope_so_far"], &text_rows) + &report.summary() + "\n";
            emit(&out, report.to_csv(), text)?;
            eprintln!("{}", report.summary());
            Ok(report.status == StudyStatus::Ok)
        }
        Command::Scheme(SchemeCmd::Show { scheme, m, json }) => {
            check_m(m)?;
            let tab = Tableau::load(&scheme).map_err(usage)?;
            let mut stdout = std::io::stdout();
            let body = if json {
                tab.to_json()
            } else {
                let inst = tab.instantiate(m)?;
                format!("{} ({} calculus, {} stages, m = {m})\n{}", tab.name(), tab.calculus(), tab.stages(), inst.describe())
            };
            stdout.write_all(body.as_bytes()).map_err(|e| Failure::Runtime(e.to_string()))?;
            Ok(true)
        }
    }
}

fn verify(args: VerifyArgs, concrete: bool) -> Result<bool, Failure> {
    check_order(args.order)?;
    check_m(args.m)?;
    let tab = Tableau::load(&args.scheme).map_err(usage)?;
    let calculus = args.calculus.map(Calculus::from).unwrap_or(tab.calculus());
    let inst = tab.instantiate(args.m).map_err(usage)?;
    let report = if concrete { concrete_coefficient_check(&inst, calculus, args.order)? } else { verify_tableau(&inst, calculus, args.order)? };
    emit(&args.out, report.to_csv(), report.to_text())?;
    if let Some(first) = report.first_failure() {
        eprintln!(
            "{} violated identities, max order passed {}, first failure {} {}",
            report.violations().len(),
            report.max_order_passed(),
            first.tree,
            first.pattern.as_ref().map(|p| p.to_string()).unwrap_or_default()
        );
    }
    Ok(report.passed())
}

fn text_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let n = header.len();
    let mut width: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, f) in width.iter_mut().zip(r) {
            *w = (*w).max(f.chars().count());
        }
    }
    let line = |fields: Vec<&str>| {
        let mut s = String::new();
        for (i, f) in fields.iter().enumerate() {
            s.push_str(f);
            if i + 1 < n {
                s.push_str(&" ".repeat(width[i] - f.chars().count() + 2));
            }
        }
        s + "\n"
    };
    let mut out = line(header.to_vec());
    for r in rows {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
    }
    out
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
