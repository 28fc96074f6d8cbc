mod config;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use virakdv::factorization::{check_product_annihilation, solve_factors, split_data, split_rep};
use virakdv::fock::{exp_log, quantize, ExpLog, Monomial};
use virakdv::gw::{
    build_gw_operators, check_lbar_equals_lhat, compare_with_rep, libgober_wood_constant, regenerate_from_low_operators, LbarReport,
};
use virakdv::heisenberg::render_matrix;
use virakdv::solver::{hirota_kdv_residual, monomials_of_degree, solve_constraints_1d, SolutionReport};
use virakdv::virasoro::{extend_to_w, verify_rep};
use virakdv::{Error, FockOperator, Rational, Scalar, Series, VirasoroRep};

use config::{parse_rational, FileConfig, Source};

#[derive(Parser, Debug)]
#[command(name = "virakdv", version, about = "Virasoro constraints, Fock quantization and KdV tau functions in exact arithmetic")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in data: point, k3, canonical1d, gw2dim.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Highest generator L_K.
    #[arg(long, global = true, allow_hyphen_values = true)]
    kmax: Option<i32>,
    /// Largest (odd) mode kept in truncated operators.
    #[arg(long = "mode-cutoff", global = true)]
    mode_cutoff: Option<usize>,
    /// Weighted degree cutoff for series.
    #[arg(long, global = true)]
    degree: Option<usize>,
    /// Linear coefficient of the canonical one-dimensional data.
    #[arg(long, global = true, allow_hyphen_values = true, value_parser = parse_rational)]
    s: Option<Rational>,
    /// Genus parameter of a variety; 2 hbar must be a rational square.
    #[arg(long, global = true, value_parser = parse_rational)]
    hbar: Option<Rational>,
    /// Report format.
    #[arg(long, global = true, value_enum)]
    output: Option<Format>,
}

#[derive(Subcommand, Debug, Clone)]
enum Command {
    /// Extend the sl(2) data to L_{-1}, ..., L_K.
    Build,
    /// Check the Witt relations of the extension.
    Verify,
    /// Solve the constraints of one-dimensional data for log tau.
    Solve,
    /// Solve, then evaluate the KdV Hirota residual.
    KdvCheck,
    /// Split into one-dimensional factors and check the product solution.
    Factor,
    /// Tasks on the operators of a variety.
    Gw {
        #[arg(long, value_enum)]
        task: Option<GwTask>,
    },
    /// Compare the extension of the variety's sl(2) data with its Virasoro operators.
    LbarCheck,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq)]
enum GwTask {
    Operators,
    LbarCheck,
    Regenerate,
    Constant,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq)]
enum Format {
    Text,
    Json,
}

struct Run {
    source: Source,
    kmax: i32,
    cutoff: usize,
    degree: usize,
}

/// Exit status and report of one task.
struct Outcome {
    ok: bool,
    text: Vec<String>,
    json: Value,
    failure: Option<String>,
}

enum Failure {
    Config(anyhow::Error),
    Identity(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<Error>() {
            Some(
                Error::NoSolution(_)
                | Error::UnderdeterminedDegree(_)
                | Error::Underdetermined(_)
                | Error::ConstraintViolation(_)
                | Error::BlockLeak { .. }
                | Error::NotSimultaneouslyDiagonalizable(_)
                | Error::IrrationalEigenvalue(_),
            ) => Failure::Identity(e),
            _ => Failure::Config(e),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::from(anyhow::Error::from(e))
    }
}

fn main() -> ExitCode {
    if let Some(n) = std::env::var("VIRAKDV_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let cli = Cli::parse();
    let file = match cli.config.as_deref().map(FileConfig::load).transpose() {
        Ok(f) => f.unwrap_or_default(),
        Err(e) => return fail(2, &e),
    };
    let format = cli.output.or_else(|| file.output.as_deref().and_then(|o| Format::from_str(o, true).ok())).unwrap_or(Format::Text);
    let result = resolve(&cli, &file).map_err(Failure::Config).and_then(|run| dispatch(&cli.command, &file, &run));
    match result {
        Ok(out) => {
            let body = match format {
                Format::Text => out.text.join("\n"),
                Format::Json => serde_json::to_string_pretty(&out.json).expect("report serializes"),
            };
            // a closed pipe is not an error of the run
            let _ = writeln!(std::io::stdout().lock(), "{body}");
            if out.ok {
                ExitCode::SUCCESS
            } else {
                eprintln!("{}", out.failure.unwrap_or_else(|| "identity check failed".into()));
                ExitCode::from(1)
            }
        }
        Err(Failure::Identity(e)) => fail(1, &e),
        Err(Failure::Config(e)) => fail(2, &e),
    }
}

fn fail(code: u8, e: &anyhow::Error) -> ExitCode {
    eprintln!("error: {e:#}");
    ExitCode::from(code)
}

fn resolve(cli: &Cli, file: &FileConfig) -> Result<Run> {
    let mut source = match &cli.preset {
        Some(name) => Source::preset(name)?,
        None => file.source.clone().ok_or_else(|| anyhow::anyhow!("no data source: pass --preset or --config"))?,
    };
    if let Some(s) = cli.s.clone().or_else(|| file.s.clone()) {
        match &mut source {
            Source::Canonical(old) => *old = s,
            _ => bail!("--s applies only to the canonical one-dimensional data"),
        }
    }
    if let Some(h) = cli.hbar.clone().or_else(|| file.hbar.clone()) {
        match &mut source {
            Source::Variety(v) => *v = v.with_hbar(h)?,
            _ => bail!("--hbar applies only to variety data"),
        }
    }
    let series_task = matches!(cli.command, Command::Solve | Command::KdvCheck | Command::Factor);
    let degree = cli.degree.or(file.degree).unwrap_or(10);
    if series_task && degree < 4 {
        bail!("degree cutoff must be at least 4, got {degree}");
    }
    let default_k = match cli.command {
        Command::Solve | Command::KdvCheck => ((degree as i32 - 3) / 2 + 1).max(1),
        Command::Factor | Command::Gw { .. } | Command::LbarCheck => 3,
        Command::Build | Command::Verify => 5,
    };
    let kmax = cli.kmax.or(file.kmax).unwrap_or(default_k);
    if kmax < -1 {
        bail!("K must be at least -1, got {kmax}");
    }
    let gw_window = matches!(cli.command, Command::Gw { .. } | Command::LbarCheck);
    let floor = if gw_window { 2 * kmax.max(1) as usize + 3 } else { (2 * kmax.max(1) as usize + 3).max(if series_task { degree + 2 } else { 0 }) };
    let cutoff = match cli.mode_cutoff.or(file.mode_cutoff).or(source.fixed_cutoff()) {
        Some(m) => m,
        None if gw_window => floor.max(11) | 1,
        None if series_task => floor | 1,
        None => floor.max(23) | 1,
    };
    if cutoff % 2 == 0 {
        bail!("mode cutoff must be odd, got {cutoff}");
    }
    if cutoff < floor {
        bail!("mode cutoff {cutoff} is below the required {floor}");
    }
    Ok(Run { source, kmax, cutoff, degree })
}

fn dispatch(cmd: &Command, file: &FileConfig, run: &Run) -> std::result::Result<Outcome, Failure> {
    match cmd {
        Command::Build => build(run),
        Command::Verify => verify(run),
        Command::Solve => solve(run),
        Command::KdvCheck => kdv_check(run),
        Command::Factor => factor(run),
        Command::LbarCheck => gw(run, GwTask::LbarCheck),
        Command::Gw { task } => {
            let from_file = file.task.as_deref().and_then(|t| GwTask::from_str(t, true).ok());
            gw(run, task.or(from_file).unwrap_or(GwTask::Operators))
        }
    }
}

fn extension(run: &Run) -> std::result::Result<VirasoroRep, Failure> {
    let data = run.source.sl2_data(run.cutoff)?;
    Ok(extend_to_w(&data, run.kmax.max(1))?)
}

fn header(run: &Run, task: &str) -> Vec<String> {
    vec![format!("task {task}: n = {}, K = {}, M = {}", run.source.dim(), run.kmax, run.cutoff)]
}

fn matrix_line(name: &str, m: &virakdv::Matrix) -> String {
    let rows: Vec<String> = m.to_rows().iter().map(|r| r.iter().map(Scalar::render).collect::<Vec<_>>().join(" ")).collect();
    format!("{name} = [{}]", rows.join("; "))
}

fn build(run: &Run) -> std::result::Result<Outcome, Failure> {
    let rep = extension(run)?;
    let data = rep.source();
    let mut text = header(run, "build");
    text.push(format!("b = {}", data.constant().render()));
    text.push(matrix_line("B", data.degree_block()));
    text.push(matrix_line("c", data.raising_block()));
    for (k, g) in rep.generators() {
        text.push(format!("L_{k}: type {}, reliable through mode {}", g.type_index(), g.reliable_mode()));
    }
    Ok(Outcome { ok: true, text, json: json!({"task": "build", "rep": rep.to_json()}), failure: None })
}

fn verify(run: &Run) -> std::result::Result<Outcome, Failure> {
    let rep = extension(run)?;
    let report = verify_rep(&rep, rep.k_max(), rep.k_max() + 1);
    let mut text = header(run, "verify");
    let mut rows = Vec::new();
    let mut failure = None;
    for r in &report.residuals {
        let zero = r.height == 0.0;
        let label = format!("[L_{}, L_{}] = {} L_{}", r.i, r.j, r.i - r.j, r.i + r.j);
        text.push(format!("{label}: {} (modes <= {})", if zero { "ok" } else { "FAIL" }, r.window));
        rows.push(json!({"i": r.i, "j": r.j, "window": r.window, "zero": zero}));
        if !zero && failure.is_none() {
            failure = Some(format!("relation {label} violated"));
        }
    }
    Ok(Outcome { ok: report.is_clean(), text, json: json!({"task": "verify", "relations": rows}), failure })
}

fn quantized(rep: &VirasoroRep) -> BTreeMap<i32, FockOperator> {
    rep.generators().iter().map(|(k, g)| (*k, quantize(g, rep.pairing()))).collect()
}

fn solve_tau(run: &Run) -> std::result::Result<Series, Failure> {
    if run.source.dim() != 1 {
        return Err(Failure::Config(anyhow::anyhow!("solve needs one-dimensional data; use factor for n = {}", run.source.dim())));
    }
    let rep = extension(run)?;
    Ok(solve_constraints_1d(&quantized(&rep), run.kmax, run.degree)?)
}

/// `f_{e_1 e_3 e_5 ...}` for the monomial `t_1^{e_1} t_3^{e_3} ...`.
fn coefficient_label(m: &Monomial) -> String {
    let top = m.exps().iter().map(|((i, _), _)| *i).max().unwrap_or(1);
    let exps: Vec<u32> = (1..=top).step_by(2).map(|i| m.exponent((i, 0))).collect();
    let sep = if exps.iter().any(|e| *e > 9) { "," } else { "" };
    format!("f_{}", exps.iter().map(u32::to_string).collect::<Vec<_>>().join(sep))
}

fn solve(run: &Run) -> std::result::Result<Outcome, Failure> {
    let tau = solve_tau(run)?;
    let f = exp_log(&tau, ExpLog::Log)?;
    let mut text = header(run, "solve");
    text.push(format!("log tau through degree {}", run.degree));
    let mut rows = Vec::new();
    for d in 1..=run.degree {
        for m in monomials_of_degree(1, d) {
            let label = coefficient_label(&m);
            let value = f.coefficient(&m).render();
            text.push(format!("{label} = {value}"));
            rows.push(json!({"label": label, "degree": d, "monomial": m.to_json(), "value": value}));
        }
    }
    Ok(Outcome { ok: true, text, json: json!({"task": "solve", "degree": run.degree, "coefficients": rows}), failure: None })
}

fn kdv_check(run: &Run) -> std::result::Result<Outcome, Failure> {
    let tau = solve_tau(run)?;
    let r = hirota_kdv_residual(&tau, run.degree)?;
    let mut text = header(run, "kdv-check");
    text.push(format!("(D_1^4 - 4 D_1 D_3) tau.tau through degree {}: {} nonzero coefficients", r.cutoff(), r.terms().len()));
    for (m, c) in r.terms() {
        text.push(format!("  {} : {}", m.to_json(), c.render()));
    }
    let failure = (!r.is_zero()).then(|| "KdV Hirota equation violated".to_string());
    Ok(Outcome { ok: r.is_zero(), text, json: json!({"task": "kdv-check", "residual": r.to_json()}), failure })
}

fn residual_lines(report: &SolutionReport<Rational>, text: &mut Vec<String>) -> Option<String> {
    let mut failure = None;
    for r in &report.residuals {
        let n = r.residual.terms().len();
        text.push(format!("L_{} tau through degree {}: {}", r.k, r.degree, if n == 0 { "0".to_string() } else { format!("{n} nonzero coefficients") }));
        if n > 0 && failure.is_none() {
            failure = Some(format!("constraint L_{} tau = 0 violated", r.k));
        }
    }
    failure
}

fn factor(run: &Run) -> std::result::Result<Outcome, Failure> {
    let rep = extension(run)?;
    let sp = split_data(rep.source())?;
    let factors = split_rep(&rep, &sp)?;
    let mut text = header(run, "factor");
    text.push(matrix_line("S", sp.s()));
    text.push(matrix_line("eta'", sp.transformed_pairing()));
    let mut clean = true;
    for (i, f) in factors.iter().enumerate() {
        let report = verify_rep(f, f.k_max(), f.k_max() + 1);
        clean &= report.is_clean();
        let s = f.source().lowering().linear()[0].render();
        text.push(format!("factor {}: eta = {}, s = {}, relations {}", i + 1, f.pairing().eta()[(0, 0)].render(), s, if report.is_clean() { "ok" } else { "FAIL" }));
    }
    let taus = solve_factors(&factors, run.kmax, run.degree)?;
    let report = check_product_annihilation(&rep, &sp, &taus, run.kmax, run.degree)?;
    let failure = residual_lines(&report, &mut text).or_else(|| (!clean).then(|| "factor relations violated".into()));
    let json = json!({"task": "factor", "splitting": sp.to_json(), "residuals": report.to_json()});
    Ok(Outcome { ok: clean && report.is_clean(), text, json, failure })
}

fn lbar_lines(report: &LbarReport, text: &mut Vec<String>) -> Option<String> {
    let mut failure = None;
    for g in &report.generators {
        text.push(format!("Lbar_{} vs extension, modes <= {}: {}", g.k, g.window, if g.mismatches == 0 { "equal".into() } else { format!("{} mismatches", g.mismatches) }));
        if g.mismatches > 0 && failure.is_none() {
            failure = Some(format!("Lbar_{} differs from the extension", g.k));
        }
    }
    failure
}

fn gw(run: &Run, task: GwTask) -> std::result::Result<Outcome, Failure> {
    let v = run.source.variety().map_err(Failure::Config)?;
    let mut text = header(run, "gw");
    match task {
        GwTask::Operators => {
            let ops = build_gw_operators(v, run.kmax, run.cutoff)?;
            for (k, op) in &ops {
                text.push(format!("Lbar_{k}: {} terms", op.terms().len()));
            }
            let json = json!({"task": "operators", "operators": ops.iter().map(|(k, o)| (k.to_string(), o.to_json())).collect::<serde_json::Map<_, _>>()});
            Ok(Outcome { ok: true, text, json, failure: None })
        }
        GwTask::LbarCheck => {
            let report = check_lbar_equals_lhat(v, run.kmax, run.cutoff)?;
            let failure = lbar_lines(&report, &mut text);
            Ok(Outcome { ok: report.all_equal(), text, json: json!({"task": "lbar-check", "generators": report.to_json()}), failure })
        }
        GwTask::Regenerate => {
            let rep = regenerate_from_low_operators(v, run.kmax, run.cutoff + 4)?;
            let report = compare_with_rep(&rep, &build_gw_operators(v, run.kmax, run.cutoff)?, run.cutoff)?;
            let failure = lbar_lines(&report, &mut text);
            Ok(Outcome { ok: report.all_equal(), text, json: json!({"task": "regenerate", "generators": report.to_json()}), failure })
        }
        GwTask::Constant => {
            let (via_mu, via_chern) = libgober_wood_constant(v);
            text.push(format!("from weights: {}", via_mu.render()));
            text.push(format!("from Chern numbers: {}", via_chern.render()));
            let ok = via_mu == via_chern;
            let json = json!({"task": "constant", "via_mu": via_mu.render(), "via_chern": via_chern.render(), "eta": render_matrix(v.pairing().eta())});
            Ok(Outcome { ok, text, json, failure: (!ok).then(|| "Libgober-Wood identity violated".into()) })
        }
    }
}
