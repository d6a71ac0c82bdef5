//! `minimaxgof` command-line front end.
//!
//! Exit codes: 0 success, 2 invalid input or schema, 3 enumeration cap
//! exceeded, 4 infeasible extremal problem, 5 execution failure.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use minimaxgof::basis::Basis;
use minimaxgof::extremal::{
    balance_constant_with_cap, radius_for_detectability, solve_extremal, test_weights,
    ExtremalProblem, ExtremalSolution,
};
use minimaxgof::families::{
    enumerate_below_with_cap, family_from_parts, Family, IndexSet, DEFAULT_MAX_INDICES,
};
use minimaxgof::sim::{
    monte_carlo, predicted_errors, prior_problem, AlternativeSource, DesignModel,
    MonteCarloConfig, MonteCarloReport, SignRule, CSV_HEADER,
};
use minimaxgof::testing::{
    decide, rate_weights, u_statistic, weights_from_csv, Sample, TestSpec,
    VarianceMode,
};
use minimaxgof::Error;

const CAP_ENV: &str = "MINIMAXGOF_MAX_INDICES";

#[derive(Parser)]
#[command(name = "minimaxgof", version, about = "Minimax goodness-of-fit tests on ellipsoids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List the indices with c_l < C.
    Enumerate(EnumerateArgs),
    /// Separation rates r_n* over a grid of sample sizes.
    Rates(RatesArgs),
    /// Solve the extremal problem and emit the sharp kernel weights.
    Extremal(ExtremalArgs),
    /// Apply a U-statistic test to a data file.
    Test(TestArgs),
    /// Monte Carlo error rates of the test.
    Simulate(SimulateArgs),
}

#[derive(Args, Clone)]
struct FamilyArgs {
    /// sobolev-sum, sobolev-euclid, tensor-sobolev, anova-exact,
    /// anova-at-most, analytic-strip or sloan-wozniakowski.
    #[arg(long)]
    family: Option<String>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    s: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    m: Option<usize>,
}

impl FamilyArgs {
    fn family(&self) -> Result<Family, Failure> {
        let name = self
            .family
            .as_deref()
            .ok_or_else(|| Failure::usage("--family is required"))?;
        Ok(family_from_parts(name, self.d, self.sigma, self.s, self.kappa, self.m)?)
    }
}

#[derive(Args, Clone)]
struct OutputArgs {
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args)]
struct EnumerateArgs {
    #[command(flatten)]
    family: FamilyArgs,
    #[arg(long)]
    cutoff: f64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct RatesArgs {
    #[command(flatten)]
    family: FamilyArgs,
    /// Comma-separated sample sizes, or `LO..HI:POINTS` for a log grid.
    #[arg(long = "n-grid")]
    n_grid: String,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct ExtremalArgs {
    #[command(flatten)]
    family: FamilyArgs,
    #[arg(long)]
    n: u64,
    #[arg(long)]
    r: f64,
    #[arg(long, default_value_t = 1.0)]
    b: f64,
    #[arg(long = "B", default_value_t = 1.0)]
    big_b: f64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum VarianceArg {
    Known,
    Plugin,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BasisArg {
    Fourier,
    Haar,
    Walsh,
}

impl From<BasisArg> for Basis {
    fn from(b: BasisArg) -> Self {
        match b {
            BasisArg::Fourier => Basis::Fourier,
            BasisArg::Haar => Basis::Haar,
            BasisArg::Walsh => Basis::Walsh,
        }
    }
}

#[derive(Args)]
struct TestArgs {
    /// Sample CSV with header t_1,...,t_d,x.
    #[arg(long)]
    data: PathBuf,
    /// Kernel weights as `index,weight` CSV.
    #[arg(long, conflicts_with_all = ["index_set", "cutoff", "r"])]
    weights: Option<PathBuf>,
    /// Index set CSV from `enumerate`; uses the rate kernel.
    #[arg(long = "index-set", conflicts_with_all = ["cutoff", "r"])]
    index_set: Option<PathBuf>,
    #[command(flatten)]
    family: FamilyArgs,
    /// Rate kernel over N(C) of the family.
    #[arg(long, conflicts_with = "r")]
    cutoff: Option<f64>,
    /// Sharp kernel of the extremal problem at (n, r); n defaults to the sample size.
    #[arg(long)]
    r: Option<f64>,
    #[arg(long)]
    n: Option<u64>,
    #[arg(long, value_enum, default_value = "fourier")]
    basis: BasisArg,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Explicit threshold H; overrides --alpha.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, value_enum, default_value = "known")]
    variance: VarianceArg,
    /// Known noise variance tau^2.
    #[arg(long, default_value_t = 1.0)]
    tau2: f64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SourceArg {
    Null,
    Lf,
    LfRademacher,
    Prior,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KernelArg {
    Sharp,
    Rate,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    family: FamilyArgs,
    #[arg(long)]
    n: u64,
    #[arg(long, conflicts_with = "target_u")]
    r: Option<f64>,
    /// Choose r so that the solved u_n equals this value.
    #[arg(long = "target-u")]
    target_u: Option<f64>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, value_enum, default_value = "null")]
    source: SourceArg,
    #[arg(long, value_enum, default_value = "sharp")]
    kernel: KernelArg,
    /// Cutoff of the rate kernel; defaults to the extremal cutoff.
    #[arg(long)]
    cutoff: Option<f64>,
    /// Prior scales (1 - delta, 1 + delta).
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long, value_enum, default_value = "known")]
    variance: VarianceArg,
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    #[arg(long, value_enum, default_value = "fourier")]
    basis: BasisArg,
    #[arg(long, default_value_t = 1000)]
    reps: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Append the CSV row to an existing --out file.
    #[arg(long)]
    append: bool,
    #[command(flatten)]
    output: OutputArgs,
}

/// A failure with its exit status.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(msg: impl Into<String>) -> Self {
        Failure { code: 2, message: msg.into() }
    }

    fn execution(msg: impl Into<String>) -> Self {
        Failure { code: 5, message: msg.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Domain(_) | Error::Parse(_) => 2,
            Error::Resource { .. } => 3,
            Error::Infeasible(_) => 4,
            Error::DegenerateSample(_) | Error::Replication { .. } => 5,
        };
        Failure { code, message: e.to_string() }
    }
}

fn max_indices() -> Result<usize, Failure> {
    match std::env::var(CAP_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&c| c > 0)
            .ok_or_else(|| Failure::usage(format!("{CAP_ENV} must be a positive integer, got {v:?}"))),
        Err(_) => Ok(DEFAULT_MAX_INDICES),
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))
}

/// Write via a sibling temporary file and rename, so failures never leave
/// partial output behind.
fn write_atomic(path: &Path, contents: &str) -> Result<(), Failure> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| Failure::usage("output path has no file name"))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    let result = fs::File::create(&tmp)
        .and_then(|mut f| {
            f.write_all(contents.as_bytes())?;
            f.sync_all()
        })
        .and_then(|_| fs::rename(&tmp, path));
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Failure::execution(format!("cannot write {}: {e}", path.display()))
    })
}

fn emit(output: &OutputArgs, contents: &str) -> Result<(), Failure> {
    match &output.out {
        Some(path) => write_atomic(path, contents),
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

/// Summary lines go to stdout when data goes to a file, else to stderr.
fn note(output: &OutputArgs, line: &str) {
    if output.out.is_some() {
        println!("{line}");
    } else {
        eprintln!("{line}");
    }
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json value serializes");
    s.push('\n');
    s
}

fn cmd_enumerate(a: &EnumerateArgs) -> Result<(), Failure> {
    let family = a.family.family()?;
    let set = enumerate_below_with_cap(&family, a.cutoff, max_indices()?)?;
    let asym = family.asymptotic_count(a.cutoff);
    let ratio = asym.filter(|&x| x > 0.0).map(|x| set.size() as f64 / x);
    let body = match a.output.format.unwrap_or(Format::Csv) {
        Format::Csv => set.to_csv(),
        Format::Json => pretty(&json!({
            "schema_version": 1,
            "family": family,
            "C": a.cutoff,
            "N": set.size(),
            "asymptotic_N": asym,
            "ratio": ratio,
            "members": set.members().iter().map(|(l, c)| json!({"index": l, "c": c})).collect::<Vec<_>>(),
        })),
    };
    emit(&a.output, &body)?;
    let mut summary = format!("N={} C={}", set.size(), a.cutoff);
    if let (Some(x), Some(r)) = (asym, ratio) {
        summary += &format!(" asymptotic={x} ratio={r}");
    }
    note(&a.output, &summary);
    Ok(())
}

fn parse_grid(text: &str) -> Result<Vec<u64>, Failure> {
    let bad = || Failure::usage(format!("bad --n-grid {text:?}"));
    let num = |s: &str| -> Result<f64, Failure> {
        s.trim().parse::<f64>().ok().filter(|x| x.is_finite() && *x >= 2.0).ok_or_else(bad)
    };
    if let Some((range, points)) = text.split_once(':') {
        let (lo, hi) = range.split_once("..").ok_or_else(bad)?;
        let (lo, hi) = (num(lo)?.log10(), num(hi)?.log10());
        let points: usize = points.trim().parse().ok().filter(|&p| p >= 2).ok_or_else(bad)?;
        return Ok((0..points)
            .map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / (points - 1) as f64).round() as u64)
            .collect());
    }
    text.split(',').map(|s| num(s).map(|x| x.round() as u64)).collect()
}

fn slope(rows: &[(u64, f64)]) -> Option<f64> {
    if rows.len() < 2 {
        return None;
    }
    let xs: Vec<f64> = rows.iter().map(|r| (r.0 as f64).ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.1.ln()).collect();
    let k = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / k, ys.iter().sum::<f64>() / k);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn cmd_rates(a: &RatesArgs) -> Result<(), Failure> {
    let family = a.family.family()?;
    let grid = parse_grid(&a.n_grid)?;
    let cap = max_indices()?;
    let mut rows = Vec::new();
    for &n in &grid {
        let p = balance_constant_with_cap(&family, n, cap)?;
        rows.push((n, p.cutoff, p.count));
    }
    let fit = slope(&rows.iter().map(|r| (r.0, 1.0 / r.1)).collect::<Vec<_>>());
    let body = match a.output.format.unwrap_or(Format::Csv) {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["n", "C_n", "N", "r_n"]).map_err(|e| Failure::execution(e.to_string()))?;
            for (n, c, count) in &rows {
                w.write_record([n.to_string(), c.to_string(), count.to_string(), (1.0 / c).to_string()])
                    .map_err(|e| Failure::execution(e.to_string()))?;
            }
            let data = String::from_utf8(w.into_inner().map_err(|e| Failure::execution(e.to_string()))?)
                .expect("csv output is utf-8");
            let mut s = format!("# schema_version: 1\n{data}");
            if let Some(k) = fit {
                s += &format!("# slope: {k}\n");
            }
            s
        }
        Format::Json => pretty(&json!({
            "schema_version": 1,
            "family": family,
            "rows": rows.iter().map(|(n, c, count)| json!({"n": n, "C_n": c, "N": count, "r_n": 1.0 / c})).collect::<Vec<_>>(),
            "slope": fit,
        })),
    };
    emit(&a.output, &body)?;
    match fit {
        Some(k) => note(&a.output, &format!("rows={} slope={k}", rows.len())),
        None => note(&a.output, &format!("rows={}", rows.len())),
    }
    Ok(())
}

fn cmd_extremal(a: &ExtremalArgs) -> Result<(), Failure> {
    let family = a.family.family()?;
    let problem = ExtremalProblem::new(family, a.n, a.r)
        .with_scales(a.b, a.big_b)
        .with_max_indices(max_indices()?);
    let sol = solve_extremal(&problem)?;
    let weights = test_weights(&sol)?;
    let body = match a.output.format.unwrap_or(Format::Json) {
        Format::Json => {
            let mut v = sol.to_json();
            v["test_weights"] = weights
                .iter()
                .map(|(l, w)| json!({"index": l, "weight": w}))
                .collect::<Vec<_>>()
                .into();
            pretty(&v)
        }
        Format::Csv => {
            let mut s = format!(
                "# schema_version: 1\n# C: {}\n# u_sq: {}\nindex,c,v_sq,weight\n",
                sol.cutoff, sol.u_squared
            );
            for (w, (_, tw)) in sol.weights.iter().zip(&weights) {
                s += &format!("{},{},{},{}\n", w.index, w.coefficient, w.v_sq, tw);
            }
            s
        }
    };
    emit(&a.output, &body)?;
    note(&a.output, &format!("N={} C={} u_sq={} u={}", sol.count(), sol.cutoff, sol.u_squared, sol.u()));
    Ok(())
}

fn variance_mode(v: VarianceArg, tau2: f64) -> VarianceMode {
    match v {
        VarianceArg::Known => VarianceMode::Known(tau2),
        VarianceArg::Plugin => VarianceMode::PlugIn,
    }
}

fn cmd_test(a: &TestArgs) -> Result<(), Failure> {
    let declared = a.family.d;
    let sample = Sample::from_csv(&read(&a.data)?, declared)?;
    let mut solution: Option<ExtremalSolution> = None;
    let weights = if let Some(path) = &a.weights {
        weights_from_csv(&read(path)?)?
    } else if let Some(path) = &a.index_set {
        let set = IndexSet::from_csv(&read(path)?, f64::INFINITY, None)?;
        rate_weights(&set)?
    } else if let Some(c) = a.cutoff {
        rate_weights(&enumerate_below_with_cap(&a.family.family()?, c, max_indices()?)?)?
    } else if let Some(r) = a.r {
        let n = a.n.unwrap_or(sample.len() as u64);
        let problem = ExtremalProblem::new(a.family.family()?, n, r).with_max_indices(max_indices()?);
        let sol = solve_extremal(&problem)?;
        let w = test_weights(&sol)?;
        solution = Some(sol);
        w
    } else {
        return Err(Failure::usage("give --weights, --index-set, or a family with --cutoff or --r"));
    };
    let mode = variance_mode(a.variance, a.tau2);
    let spec = match a.threshold {
        Some(h) => TestSpec::new(a.basis.into(), weights, h, mode)?,
        None => TestSpec::at_level(a.basis.into(), weights, a.alpha, mode)?,
    };
    let u = u_statistic(&sample, &spec)?;
    let reject = decide(u, spec.threshold);
    let beta = match (&solution, a.threshold) {
        (Some(sol), None) => Some(predicted_errors(a.alpha, sol.u())?.beta),
        _ => None,
    };
    let body = match a.output.format.unwrap_or(Format::Json) {
        Format::Json => pretty(&json!({
            "schema_version": 1,
            "n": sample.len(),
            "N": spec.weights.len(),
            "U": u,
            "H": spec.threshold,
            "reject": reject,
            "u_n": solution.as_ref().map(ExtremalSolution::u),
            "predicted_beta": beta,
        })),
        Format::Csv => format!(
            "# schema_version: 1\nn,N,U,H,reject,u_n,predicted_beta\n{},{},{},{},{},{},{}\n",
            sample.len(),
            spec.weights.len(),
            u,
            spec.threshold,
            reject,
            solution.as_ref().map(|s| s.u().to_string()).unwrap_or_default(),
            beta.map(|b| b.to_string()).unwrap_or_default()
        ),
    };
    emit(&a.output, &body)?;
    note(
        &a.output,
        &format!("U={u} H={} decision={}", spec.threshold, if reject { "reject" } else { "accept" }),
    );
    Ok(())
}

fn cmd_simulate(a: &SimulateArgs) -> Result<(), Failure> {
    let family = a.family.family()?;
    let cap = max_indices()?;
    let solve = |r: f64| solve_extremal(&ExtremalProblem::new(family.clone(), a.n, r).with_max_indices(cap));
    let solution = match (a.r, a.target_u) {
        (Some(r), _) => Some(solve(r)?),
        (None, Some(u)) => Some(radius_for_detectability(&family, a.n, u, 1.0, 1.0, cap)?),
        (None, None) => None,
    };
    let needs_solution = a.source != SourceArg::Null || (a.kernel == KernelArg::Sharp) || a.cutoff.is_none();
    if solution.is_none() && needs_solution {
        return Err(Failure::usage(
            "give --r or --target-u (a null run with --kernel rate may use --cutoff instead)",
        ));
    }
    let weights = match a.kernel {
        KernelArg::Sharp => test_weights(solution.as_ref().expect("checked above"))?,
        KernelArg::Rate => {
            let c = match (a.cutoff, &solution) {
                (Some(c), _) => c,
                (None, Some(s)) => s.cutoff,
                (None, None) => unreachable!("checked above"),
            };
            rate_weights(&enumerate_below_with_cap(&family, c, cap)?)?
        }
    };
    let spec = TestSpec::at_level(a.basis.into(), weights, a.alpha, variance_mode(a.variance, a.tau * a.tau))?;
    let source = match a.source {
        SourceArg::Null => AlternativeSource::Null,
        SourceArg::Lf | SourceArg::LfRademacher => AlternativeSource::LeastFavorable {
            solution: solution.clone().expect("checked above"),
            signs: if a.source == SourceArg::Lf { SignRule::AllPositive } else { SignRule::Rademacher },
        },
        SourceArg::Prior => {
            let r = solution.as_ref().expect("checked above").r_n;
            let problem = prior_problem(family.clone(), a.n, r, a.delta)?.with_max_indices(cap);
            AlternativeSource::GaussianPrior { solution: solve_extremal(&problem)? }
        }
    };
    let d = family
        .dimension()
        .unwrap_or(0)
        .max(spec.required_dimension())
        .max(solution.as_ref().map_or(0, |s| s.weights.iter().map(|w| w.index.len()).max().unwrap_or(0)))
        .max(1);
    let config = MonteCarloConfig::new(a.n as usize, d, a.reps, a.seed)
        .with_tau(a.tau)
        .with_workers(a.workers);
    let mut report: MonteCarloReport = monte_carlo(&spec, &source, &DesignModel::Uniform, &config)?.with_family(&family);
    if report.r_n.is_none() {
        report.r_n = solution.as_ref().map(|s| s.r_n);
    }
    let body = match a.output.format.unwrap_or(Format::Csv) {
        Format::Json => pretty(&report.to_json()),
        Format::Csv => {
            let row = report.to_csv_row();
            match (&a.output.out, a.append) {
                (Some(path), true) if path.exists() => {
                    let mut old = read(path)?;
                    if !old.ends_with('\n') && !old.is_empty() {
                        old.push('\n');
                    }
                    format!("{old}{row}\n")
                }
                _ => format!("# schema_version: 1\n{CSV_HEADER}\n{row}\n"),
            }
        }
    };
    emit(&a.output, &body)?;
    let mut summary = format!(
        "mode={} reps={} rejections={} rate={} ci=[{}, {}]",
        report.mode, report.replications, report.rejections, report.empirical_rate, report.wilson_ci.0, report.wilson_ci.1
    );
    if let Some(p) = report.predicted {
        summary += &format!(" predicted={p}");
    }
    if let Some(u) = report.u_n {
        let pe = predicted_errors(a.alpha, u)?;
        summary += &format!(" u_n={u} gamma={} gamma_alt={}", pe.gamma, pe.gamma_alt);
    }
    note(&a.output, &summary);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Enumerate(a) => cmd_enumerate(a),
        Command::Rates(a) => cmd_rates(a),
        Command::Extremal(a) => cmd_extremal(a),
        Command::Test(a) => cmd_test(a),
        Command::Simulate(a) => cmd_simulate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
