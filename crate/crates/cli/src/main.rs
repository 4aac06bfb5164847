use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use hw_core::constructor::{construct, ConstructOptions};
use hw_core::diagnostics::DiagnosticsBundle;
use hw_core::fss::{validate_fss, FundamentalSystem};
use hw_core::problem::ProblemSpec;
use hw_core::solvability::{classify, Status};
use hw_core::sweep::{parse_range, reproduce, sweep, write_sweep_csv, Family, DEFAULT_BAND};
use hw_core::HwError;

/// Solvability diagnostics and asymptotic construction for perturbed
/// second-order difference equations `Δ(r_{n-1}Δy_{n-1}) = (q_n + σ_n) y_n`.
#[derive(Parser, Debug)]
#[command(name = "hw", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Fundamental system of the unperturbed equation and its validation.
    Fss(SpecArgs),
    /// Series diagnostics (J, A, C, H and the auxiliary series).
    Diagnose(SpecArgs),
    /// Solvability verdict. Exit code 4 when indeterminate.
    Classify(SpecArgs),
    /// Perturbed fundamental system. Exit code 5 when construction is refused.
    Construct(SpecArgs),
    /// Verdict table over a parameter grid of one of the built-in families.
    Sweep(SweepArgs),
    /// Canonical grid of a built-in family checked against its known phase diagram.
    Reproduce(ReproduceArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args, Debug)]
struct SpecArgs {
    /// Problem spec (JSON with keys r, q, sigma, n0, horizon, tolerances).
    #[arg(long)]
    spec: PathBuf,
    /// Truncation horizon N; overrides the spec.
    #[arg(long)]
    horizon: Option<usize>,
    /// Tail tolerance; overrides the spec.
    #[arg(long)]
    tol: Option<f64>,
    /// Output directory; reports go to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// exponential (gamma), power (alpha, beta) or alternating (alpha, beta).
    #[arg(long)]
    family: String,
    /// Parameter range `name=a:b:step` (or `name=value`); repeatable.
    /// Parameters without a range take the canonical grid.
    #[arg(long)]
    grid: Vec<String>,
    #[arg(long)]
    horizon: Option<usize>,
    /// Half-width of the unscored band around the phase boundary.
    #[arg(long, default_value_t = DEFAULT_BAND)]
    band: f64,
    /// Output directory; the table goes to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args, Debug)]
struct ReproduceArgs {
    /// exponential, power or alternating.
    family: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A failure carrying its exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::new(1, format!("i/o: {e}"))
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::new(1, format!("json: {e}"))
    }
}

fn core(code: u8) -> impl Fn(HwError) -> Failure {
    move |e| Failure::new(code, e.to_string())
}

type Outcome = Result<u8, Failure>;

fn load_problem(args: &SpecArgs) -> Result<ProblemSpec, Failure> {
    let text = fs::read_to_string(&args.spec)
        .map_err(|e| Failure::new(3, format!("cannot read {}: {e}", args.spec.display())))?;
    let mut p = ProblemSpec::from_json(&text).map_err(core(3))?;
    if let Some(h) = args.horizon {
        p.horizon = Some(h);
    }
    if let Some(t) = args.tol {
        p.tolerances.tail_tol = t;
    }
    p.validate().map_err(core(3))?;
    log::info!("loaded {} (n0 {}, horizon {})", args.spec.display(), p.n0, p.horizon());
    Ok(p)
}

/// Writer for `name` inside `out`, or stdout.
fn sink(out: &Option<PathBuf>, name: &str) -> Result<Box<dyn Write>, Failure> {
    match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            Ok(Box::new(BufWriter::new(File::create(dir.join(name))?)))
        }
        None => Ok(Box::new(io::stdout().lock())),
    }
}

fn write_json(out: &Option<PathBuf>, name: &str, value: &serde_json::Value) -> Result<(), Failure> {
    let mut w = sink(out, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(())
}

fn announce(out: &Option<PathBuf>, files: &[&str]) {
    if let Some(dir) = out {
        for f in files {
            eprintln!("wrote {}", dir.join(f).display());
        }
    }
}

fn build_fss(p: &ProblemSpec) -> Result<FundamentalSystem, Failure> {
    FundamentalSystem::build(p).map_err(core(2))
}

fn fss_table_csv(fss: &FundamentalSystem, mut w: impl Write) -> Result<(), Failure> {
    writeln!(w, "n,log_r,log_u,log_v,u,v")?;
    for n in fss.n0..=fss.last() {
        writeln!(
            w,
            "{n},{:e},{:e},{:e},{:e},{:e}",
            fss.log_r(n),
            fss.log_u(n),
            fss.log_v(n),
            fss.u(n),
            fss.v(n)
        )?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_fss(args: &SpecArgs) -> Outcome {
    let p = load_problem(args)?;
    let fss = build_fss(&p)?;
    let report = validate_fss(&fss, p.horizon(), &p.tolerances.tail_config());
    let passed = report.passed(p.tolerances.wronskian_tol);
    match args.format {
        Format::Csv => {
            fss_table_csv(&fss, sink(&args.out, "fss.csv")?)?;
            write_json(&args.out, "validation.json", &serde_json::to_value(&report)?)?;
            announce(&args.out, &["fss.csv", "validation.json"]);
        }
        Format::Json => {
            let n: Vec<usize> = (fss.n0..=fss.last()).collect();
            let doc = json!({
                "method": format!("{:?}", fss.method),
                "n": n,
                "log_r": fss.log_r_table(),
                "log_u": fss.log_u_table(),
                "log_v": fss.log_v_table(),
                "validation": report,
            });
            write_json(&args.out, "fss.json", &doc)?;
            announce(&args.out, &["fss.json"]);
        }
    }
    if passed {
        Ok(0)
    } else {
        Err(Failure::new(2, "fundamental system failed validation"))
    }
}

fn diagnostics(p: &ProblemSpec) -> Result<(FundamentalSystem, DiagnosticsBundle), Failure> {
    let fss = build_fss(p)?;
    let report = validate_fss(&fss, p.horizon(), &p.tolerances.tail_config());
    if !report.passed(p.tolerances.wronskian_tol) {
        return Err(Failure::new(2, "fundamental system failed validation"));
    }
    let bundle = DiagnosticsBundle::compute(p, &fss).map_err(core(2))?;
    Ok((fss, bundle))
}

fn cmd_diagnose(args: &SpecArgs) -> Outcome {
    let p = load_problem(args)?;
    let (_, bundle) = diagnostics(&p)?;
    match args.format {
        Format::Csv => {
            bundle
                .write_csv(sink(&args.out, "diagnostics.csv")?)
                .map_err(core(1))?;
            let mut doc = serde_json::to_value(&bundle)?;
            if let Some(m) = doc.as_object_mut() {
                for t in ["j_table", "a_table", "c_table", "c_stable_table", "h_table"] {
                    m.remove(t);
                }
            }
            write_json(&args.out, "diagnostics.json", &doc)?;
            announce(&args.out, &["diagnostics.csv", "diagnostics.json"]);
        }
        Format::Json => {
            write_json(&args.out, "diagnostics.json", &serde_json::to_value(&bundle)?)?;
            announce(&args.out, &["diagnostics.json"]);
        }
    }
    Ok(0)
}

fn cmd_classify(args: &SpecArgs) -> Outcome {
    let p = load_problem(args)?;
    let (_, bundle) = diagnostics(&p)?;
    let verdict = classify(&bundle);
    write_json(&args.out, "verdict.json", &serde_json::to_value(&verdict)?)?;
    announce(&args.out, &["verdict.json"]);
    Ok(if verdict.status == Status::Indeterminate { 4 } else { 0 })
}

fn cmd_construct(args: &SpecArgs) -> Outcome {
    let p = load_problem(args)?;
    let (fss, bundle) = diagnostics(&p)?;
    let verdict = classify(&bundle);
    if !matches!(verdict.status, Status::NarrowSolvable | Status::SolvableAndEquivalent) {
        return Err(Failure::new(
            5,
            format!("refusing to construct: verdict is {}", verdict.status.as_str()),
        ));
    }
    let c = construct(&p, &fss, &bundle, &ConstructOptions::default()).map_err(|e| match e {
        HwError::Precondition(_) | HwError::HorizonTooSmall(_) => Failure::new(5, format!("refusing to construct: {e}")),
        other => Failure::new(1, other.to_string()),
    })?;
    let report = json!({
        "window": c.window,
        "iterations": c.solution.iterations,
        "contraction_rates": c.solution.contraction_rates,
        "asymptotics": c.report,
    });
    match args.format {
        Format::Csv => {
            c.write_csv(sink(&args.out, "construction.csv")?).map_err(core(1))?;
            write_json(&args.out, "asymptotics.json", &report)?;
            announce(&args.out, &["construction.csv", "asymptotics.json"]);
        }
        Format::Json => {
            let mut doc = report;
            doc["beta"] = serde_json::to_value(&c.solution.beta)?;
            doc["mu"] = serde_json::to_value(&c.solution.mu)?;
            write_json(&args.out, "construction.json", &doc)?;
            announce(&args.out, &["construction.json"]);
        }
    }
    Ok(0)
}

fn family(name: &str) -> Result<Family, Failure> {
    Family::from_name(name).ok_or_else(|| {
        Failure::new(
            3,
            format!("unknown family '{name}' (expected exponential, power or alternating)"),
        )
    })
}

/// Cartesian grid from `name=range` entries, falling back to the
/// canonical values for parameters that are not given.
fn build_grid(fam: Family, entries: &[String]) -> Result<Vec<Vec<f64>>, Failure> {
    let names = fam.param_names();
    let canonical = fam.canonical_grid();
    let mut axes: Vec<Vec<f64>> = (0..names.len())
        .map(|i| {
            let mut v: Vec<f64> = canonical.iter().map(|p| p[i]).collect();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v.dedup();
            v
        })
        .collect();
    for e in entries {
        let (name, range) = e
            .split_once('=')
            .ok_or_else(|| Failure::new(3, format!("grid entry '{e}' is not name=a:b:step")))?;
        let i = names
            .iter()
            .position(|n| *n == name.trim())
            .ok_or_else(|| Failure::new(3, format!("{} has no parameter '{name}'", fam.name())))?;
        axes[i] = parse_range(range).map_err(core(3))?;
    }
    let mut grid: Vec<Vec<f64>> = vec![vec![]];
    for axis in &axes {
        grid = grid
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&x| {
                    let mut q = p.clone();
                    q.push(x);
                    q
                })
            })
            .collect();
    }
    for p in &grid {
        fam.check_params(p).map_err(core(3))?;
    }
    Ok(grid)
}

fn cmd_sweep(args: &SweepArgs) -> Outcome {
    let fam = family(&args.family)?;
    let grid = build_grid(fam, &args.grid)?;
    log::info!("sweeping {} cells of {}", grid.len(), fam.name());
    let cells = sweep(fam, &grid, args.horizon, args.band);
    match args.format {
        Format::Csv => {
            write_sweep_csv(&cells, sink(&args.out, "sweep.csv")?).map_err(core(1))?;
            announce(&args.out, &["sweep.csv"]);
        }
        Format::Json => {
            write_json(&args.out, "sweep.json", &serde_json::to_value(&cells)?)?;
            announce(&args.out, &["sweep.json"]);
        }
    }
    Ok(0)
}

fn cmd_reproduce(args: &ReproduceArgs) -> Outcome {
    let fam = family(&args.family)?;
    let report = reproduce(fam);
    println!("{}", report.summary());
    if let Some(dir) = &args.out {
        write_sweep_csv(&report.cells, sink(&args.out, "reproduce.csv")?).map_err(core(1))?;
        write_json(&args.out, "reproduce.json", &serde_json::to_value(&report)?)?;
        announce(&Some(dir.clone()), &["reproduce.csv", "reproduce.json"]);
    }
    Ok(if report.passed { 0 } else { 1 })
}

fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HW_LOG", "warn")).init();
}

fn run(cli: &Cli) -> Outcome {
    match &cli.cmd {
        Cmd::Fss(a) => cmd_fss(a),
        Cmd::Diagnose(a) => cmd_diagnose(a),
        Cmd::Classify(a) => cmd_classify(a),
        Cmd::Construct(a) => cmd_construct(a),
        Cmd::Sweep(a) => cmd_sweep(a),
        Cmd::Reproduce(a) => cmd_reproduce(a),
    }
}

fn main() -> ExitCode {
    init_logging();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("hw: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
