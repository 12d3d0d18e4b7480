//! Command-line front end.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::Value;

use crate::ensemble::Support;
use crate::experiments::{
    certificates, run_epr, run_ideal, Certificate, EprConfig, EprReport, ExperimentError,
    Extension, IdealReport, DEFAULT_EPR_POLICY,
};
use crate::histories::{family_dumps, run_histories, HistoriesReport, HistoryError};
use crate::linalg::DEFAULT_TOL;

pub const SEED_ENV: &str = "REALITYLAB_SEED";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "realitylab",
    version,
    about = "Elements of reality in correlated spin systems"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Operator certificates plus all three experiments; exits 1 on any failure.
    Verify(Common),
    /// Bohm-EPR singlet with a measurement policy.
    Epr(EprArgs),
    /// The spin-5/2 ⊗ spin-3/2 ideal experiment.
    Ideal(IdealArgs),
    /// Consistent-histories treatment of the ideal experiment.
    Histories(HistoriesArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ExtensionArg {
    Strict,
    Wide,
}

impl From<ExtensionArg> for Extension {
    fn from(e: ExtensionArg) -> Self {
        match e {
            ExtensionArg::Strict => Extension::Strict,
            ExtensionArg::Wide => Extension::Wide,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Number of specimens.
    #[arg(long, default_value_t = 100_000, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: u64,
    /// RNG seed; REALITYLAB_SEED takes precedence when set.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = ExtensionArg::Strict)]
    pub extension: ExtensionArg,
    /// Numerical tolerance for operator predicates.
    #[arg(long, default_value_t = DEFAULT_TOL)]
    pub tol: f64,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads (0 = one per core).
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Debug, Args)]
pub struct EprArgs {
    #[command(flatten)]
    pub common: Common,
    /// Groups of jointly measured observables with their shares.
    #[arg(long, default_value = DEFAULT_EPR_POLICY)]
    pub policy: String,
    /// Polar angle of `n_A` in the x-z plane, radians.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub theta_a: f64,
    /// Polar angle of `n_B` in the x-z plane, radians.
    #[arg(long, default_value_t = std::f64::consts::FRAC_PI_2, allow_negative_numbers = true)]
    pub theta_b: f64,
    /// Write the support as NDJSON.
    #[arg(long)]
    pub dump_support: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IdealArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub dump_support: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct HistoriesArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub dump_support: Option<PathBuf>,
    /// Write the history families (projectors, labels, decoherence) as JSON.
    #[arg(long)]
    pub dump_family: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::InvalidPolicy(_)
            | ExperimentError::ParallelDirections
            | ExperimentError::NotUnit(_) => Failure::Usage(e.to_string()),
            ExperimentError::Ensemble(crate::ensemble::EnsembleError::InvalidPolicy(_)) => {
                Failure::Usage(e.to_string())
            }
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<HistoryError> for Failure {
    fn from(e: HistoryError) -> Self {
        match e {
            HistoryError::Experiment(inner) => inner.into(),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<crate::ensemble::EnsembleError> for Failure {
    fn from(e: crate::ensemble::EnsembleError) -> Self {
        Failure::Runtime(e.to_string())
    }
}

#[derive(Serialize)]
struct VerifyReport {
    experiment: &'static str,
    n: usize,
    seed: u64,
    extension: Extension,
    /// Section-prefixed frequencies of the three experiments.
    frequencies: BTreeMap<String, f64>,
    /// Size of the EPR simultaneous `(P, Q)` set.
    simultaneous_set_size: usize,
    table_conformance: bool,
    verdict: &'static str,
    certificates: Vec<Certificate>,
    epr: EprReport,
    ideal: IdealReport,
    histories: HistoriesReport,
}

/// Parses `args` and runs the command, writing the report to `stdout`
/// unless `--out` is given. `env_seed` is the value of [`SEED_ENV`].
pub fn run<I, T>(
    args: I,
    env_seed: Option<String>,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = write!(stderr, "{}", e.render());
            return if code == 0 { EXIT_OK } else { EXIT_USAGE };
        }
    };
    match dispatch(cli, env_seed, stdout, stderr) {
        Ok(passed) => {
            if passed {
                EXIT_OK
            } else {
                EXIT_CHECK_FAILED
            }
        }
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(stderr, "error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(msg)) => {
            let _ = writeln!(stderr, "error: {msg}");
            EXIT_CHECK_FAILED
        }
    }
}

fn common_of(cmd: &mut Command) -> &mut Common {
    match cmd {
        Command::Verify(c) => c,
        Command::Epr(a) => &mut a.common,
        Command::Ideal(a) => &mut a.common,
        Command::Histories(a) => &mut a.common,
    }
}

fn dispatch(
    mut cli: Cli,
    env_seed: Option<String>,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<bool, Failure> {
    let common = common_of(&mut cli.command);
    if let Some(raw) = env_seed {
        common.seed = raw.trim().parse().map_err(|_| {
            Failure::Usage(format!(
                "{SEED_ENV} must be an unsigned integer, got '{raw}'"
            ))
        })?;
    }
    if !(common.tol.is_finite() && common.tol > 0.0) {
        return Err(Failure::Usage(format!(
            "--tol must be positive, got {}",
            common.tol
        )));
    }
    let threads = common.threads;
    let command = &cli.command;
    let (passed, buf) = with_threads(threads, stderr, || {
        let mut buf = Vec::new();
        execute(command, &mut buf).map(|p| (p, buf))
    })?;
    stdout.write_all(&buf)?;
    stdout.flush()?;
    Ok(passed)
}

#[cfg(feature = "parallel")]
fn with_threads<R>(
    threads: usize,
    _stderr: &mut dyn Write,
    f: impl FnOnce() -> Result<R, Failure> + Send,
) -> Result<R, Failure>
where
    R: Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    pool.install(f)
}

#[cfg(not(feature = "parallel"))]
fn with_threads<R>(
    threads: usize,
    stderr: &mut dyn Write,
    f: impl FnOnce() -> Result<R, Failure>,
) -> Result<R, Failure> {
    if threads > 1 {
        let _ = writeln!(
            stderr,
            "warning: built without the parallel feature, --threads ignored"
        );
    }
    f()
}

fn execute(cmd: &Command, stdout: &mut dyn Write) -> Result<bool, Failure> {
    match cmd {
        Command::Verify(c) => verify(c, stdout),
        Command::Epr(a) => {
            let c = &a.common;
            let cfg = EprConfig {
                n: c.n as usize,
                seed: c.seed,
                extension: c.extension.into(),
                policy: a.policy.clone(),
                theta_a: a.theta_a,
                theta_b: a.theta_b,
                tol: c.tol,
            };
            let (report, support) = run_epr(&cfg)?;
            dump_support(a.dump_support.as_deref(), &support)?;
            emit(c, &report, Some(&support), stdout)?;
            Ok(report.passed())
        }
        Command::Ideal(a) => {
            let c = &a.common;
            let (report, support) = run_ideal(c.n as usize, c.seed, c.extension.into(), c.tol)?;
            dump_support(a.dump_support.as_deref(), &support)?;
            emit(c, &report, Some(&support), stdout)?;
            Ok(report.passed())
        }
        Command::Histories(a) => {
            let c = &a.common;
            let (report, support) = run_histories(c.n as usize, c.seed, c.extension.into(), c.tol)?;
            dump_support(a.dump_support.as_deref(), &support)?;
            if let Some(path) = &a.dump_family {
                let dumps = family_dumps(c.tol)?;
                let mut w = BufWriter::new(create(path)?);
                serde_json::to_writer_pretty(&mut w, &dumps)
                    .map_err(|e| Failure::Runtime(e.to_string()))?;
                writeln!(w)?;
                w.flush()?;
            }
            emit(c, &report, Some(&support), stdout)?;
            Ok(report.passed())
        }
    }
}

fn verify(c: &Common, stdout: &mut dyn Write) -> Result<bool, Failure> {
    let n = c.n as usize;
    let ext: Extension = c.extension.into();
    let certs = certificates(c.tol)?;
    // states and operators are built at no finer than the default tolerance;
    // --tol below that only tightens the certificates
    let build_tol = c.tol.max(DEFAULT_TOL);
    let cfg = EprConfig {
        n,
        seed: c.seed,
        extension: ext,
        tol: build_tol,
        ..EprConfig::default()
    };
    let (epr, _) = run_epr(&cfg)?;
    let (ideal, _) = run_ideal(n, c.seed, ext, build_tol)?;
    let (histories, _) = run_histories(n, c.seed, ext, build_tol)?;

    let passed =
        certs.iter().all(|x| x.pass) && epr.passed() && ideal.passed() && histories.passed();
    let mut frequencies = BTreeMap::new();
    for (section, map) in [
        ("epr", &epr.frequencies),
        ("ideal", &ideal.frequencies),
        ("histories", &histories.frequencies),
    ] {
        for (k, v) in map {
            frequencies.insert(format!("{section}.{k}"), *v);
        }
    }
    let report = VerifyReport {
        experiment: "verify",
        n,
        seed: c.seed,
        extension: ext,
        frequencies,
        simultaneous_set_size: epr.simultaneous_set_size,
        table_conformance: epr.table_conformance
            && ideal.table_conformance
            && histories.table_conformance,
        verdict: if passed { "pass" } else { "fail" },
        certificates: certs,
        epr,
        ideal,
        histories,
    };
    if c.format == Format::Csv {
        let mut w = open_out(c, stdout)?;
        write_verify_csv(&report, &mut w)?;
        w.flush()?;
    } else {
        emit(c, &report, None, stdout)?;
    }
    Ok(passed)
}

fn write_verify_csv(report: &VerifyReport, w: &mut dyn Write) -> Result<(), Failure> {
    let mut csv = csv::Writer::from_writer(w);
    let err = |e: csv::Error| Failure::Runtime(e.to_string());
    csv.write_record(["section", "name", "value", "relation", "threshold", "pass"])
        .map_err(err)?;
    for cert in &report.certificates {
        let value = format!("{:e}", cert.value);
        let threshold = format!("{:e}", cert.threshold);
        let pass = cert.pass.to_string();
        csv.write_record([
            "certificate",
            &cert.name,
            &value,
            cert.relation,
            &threshold,
            &pass,
        ])
        .map_err(err)?;
    }
    let sections = [("epr", &report.epr.checks), ("ideal", &report.ideal.checks)];
    for (section, checks) in sections {
        for ch in checks {
            csv.write_record([section, &ch.name, "", "", "", &ch.pass.to_string()])
                .map_err(err)?;
        }
    }
    for ch in &report.histories.checks {
        csv.write_record(["histories", &ch.name, "", "", "", &ch.pass.to_string()])
            .map_err(err)?;
    }
    csv.flush()?;
    Ok(())
}

fn create(path: &Path) -> Result<File, Failure> {
    File::create(path).map_err(|e| Failure::Usage(format!("cannot write {}: {e}", path.display())))
}

fn dump_support(path: Option<&Path>, support: &Support) -> Result<(), Failure> {
    if let Some(path) = path {
        let mut w = BufWriter::new(create(path)?);
        support.write_ndjson(&mut w)?;
        w.flush()?;
    }
    Ok(())
}

fn open_out<'a>(c: &Common, stdout: &'a mut dyn Write) -> Result<Box<dyn Write + 'a>, Failure> {
    Ok(match &c.out {
        Some(path) => Box::new(BufWriter::new(create(path)?)),
        None => Box::new(stdout),
    })
}

fn emit<R: Serialize>(
    c: &Common,
    report: &R,
    support: Option<&Support>,
    stdout: &mut dyn Write,
) -> Result<(), Failure> {
    let mut w = open_out(c, stdout)?;
    match c.format {
        Format::Json => {
            serde_json::to_writer_pretty(&mut w, report)
                .map_err(|e| Failure::Runtime(e.to_string()))?;
            writeln!(w)?;
        }
        Format::Csv => {
            let support = support
                .ok_or_else(|| Failure::Usage("csv output needs a specimen support".into()))?;
            support.write_csv(&mut w)?;
        }
        Format::Text => {
            let value =
                serde_json::to_value(report).map_err(|e| Failure::Runtime(e.to_string()))?;
            write_text(&value, &mut w)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn scalar(v: &Value) -> Option<String> {
    match v {
        Value::Null => Some("-".into()),
        Value::Bool(b) => Some(if *b { "yes".into() } else { "no".into() }),
        Value::Number(n) => Some(n.to_string()),
        Value::String(s) => Some(s.clone()),
        _ => None,
    }
}

fn write_text(v: &Value, w: &mut dyn Write) -> io::Result<()> {
    let Value::Object(map) = v else {
        return writeln!(w, "{v}");
    };
    for (key, val) in map {
        write_entry(key, val, 0, w)?;
    }
    Ok(())
}

fn write_entry(key: &str, val: &Value, depth: usize, w: &mut dyn Write) -> io::Result<()> {
    let pad = "  ".repeat(depth);
    if let Some(s) = scalar(val) {
        return writeln!(w, "{pad}{key}: {s}");
    }
    match val {
        Value::Object(map) => {
            writeln!(w, "{pad}{key}:")?;
            for (k, v) in map {
                write_entry(k, v, depth + 1, w)?;
            }
        }
        Value::Array(items) => {
            writeln!(w, "{pad}{key}:")?;
            if let Some(rows) = flat_rows(items) {
                return write_table(&rows, &pad, w);
            }
            for item in items {
                match (
                    item.get("name").and_then(Value::as_str),
                    item.get("pass").and_then(Value::as_bool),
                ) {
                    (Some(name), Some(pass)) => {
                        let mark = if pass { "PASS" } else { "FAIL" };
                        match (
                            item.get("value"),
                            item.get("relation"),
                            item.get("threshold"),
                        ) {
                            (Some(v), Some(r), Some(t)) => writeln!(
                                w,
                                "{pad}  [{mark}] {name}  {} {} {}",
                                v,
                                r.as_str().unwrap_or(""),
                                t
                            )?,
                            _ => writeln!(w, "{pad}  [{mark}] {name}")?,
                        }
                    }
                    _ => writeln!(w, "{pad}  {item}")?,
                }
            }
        }
        _ => unreachable!(),
    }
    Ok(())
}

/// Objects sharing one set of scalar fields, none of which is `name`.
fn flat_rows(items: &[Value]) -> Option<Vec<&serde_json::Map<String, Value>>> {
    let rows: Vec<_> = items.iter().map(Value::as_object).collect::<Option<_>>()?;
    let first = rows.first()?;
    let uniform = rows.iter().all(|r| {
        r.len() == first.len()
            && r.keys().zip(first.keys()).all(|(a, b)| a == b)
            && r.values().all(|v| scalar(v).is_some())
    });
    (uniform && !first.contains_key("name")).then_some(rows)
}

fn write_table(
    rows: &[&serde_json::Map<String, Value>],
    pad: &str,
    w: &mut dyn Write,
) -> io::Result<()> {
    let header: Vec<String> = rows[0].keys().map(|k| k.to_uppercase()).collect();
    writeln!(w, "{pad}  {}", header.join("  "))?;
    for r in rows {
        let cells: Vec<String> = r
            .iter()
            .map(|(k, v)| format!("{:>width$}", scalar(v).unwrap_or_default(), width = k.len()))
            .collect();
        writeln!(w, "{pad}  {}", cells.join("  "))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str], env: Option<&str>) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(
            std::iter::once("realitylab").chain(args.iter().copied()),
            env.map(String::from),
            &mut out,
            &mut err,
        );
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run_capture(&["bogus"], None).0, EXIT_USAGE);
        assert_eq!(run_capture(&["epr", "--n", "0"], None).0, EXIT_USAGE);
        assert_eq!(
            run_capture(&["epr", "--extension", "loose"], None).0,
            EXIT_USAGE
        );
        assert_eq!(
            run_capture(&["epr", "--n", "10", "--policy", "A,B:1"], None).0,
            EXIT_USAGE
        );
        assert_eq!(
            run_capture(&["epr", "--n", "10", "--tol", "-1"], None).0,
            EXIT_USAGE
        );
        assert_eq!(run_capture(&["epr", "--n", "10"], Some("x")).0, EXIT_USAGE);
        assert_eq!(
            run_capture(
                &["epr", "--n", "10", "--theta-a", "0.3", "--theta-b", "0.3"],
                None
            )
            .0,
            EXIT_USAGE
        );
    }

    #[test]
    fn help_exits_0() {
        let (code, _, err) = run_capture(&["--help"], None);
        assert_eq!(code, EXIT_OK);
        assert!(err.contains("verify"));
    }

    #[test]
    fn env_seed_overrides_flag() {
        let (_, a, _) = run_capture(
            &["ideal", "--n", "50", "--seed", "1", "--format", "json"],
            Some("9"),
        );
        let (_, b, _) = run_capture(
            &["ideal", "--n", "50", "--seed", "9", "--format", "json"],
            None,
        );
        assert_eq!(a, b);
        let v: Value = serde_json::from_str(&a).unwrap();
        assert_eq!(v["seed"], 9);
    }

    #[test]
    fn text_output_lists_checks() {
        let (code, out, _) = run_capture(&["epr", "--n", "200"], None);
        assert_eq!(code, EXIT_OK);
        assert!(out.contains("verdict: simultaneous_PQ_reality: none"));
        assert!(out.contains("[PASS] intersection_identity"));
    }

    #[test]
    fn csv_is_per_specimen() {
        let (code, out, _) = run_capture(&["ideal", "--n", "30", "--format", "csv"], None);
        assert_eq!(code, EXIT_OK);
        assert_eq!(out.lines().count(), 31);
        assert!(out.starts_with("id,"));
    }
}
