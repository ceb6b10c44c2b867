//! Command-line front end.
//!
//! Every command prints a JSON run manifest (command, arguments, seed,
//! version, wall time, result) to stdout. With `--out` the tabular result
//! goes to that CSV file and the manifest to `<out>.manifest.json`.
//! Exit codes: 0 success, 2 invalid input or domain error, 3 non-convergence.

use std::ffi::OsString;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::bench::{
    bench_convergence, bench_reordering, BenchMethod, ConvergenceConfig, ReorderingConfig, ReorderingRecord,
};
use crate::density::{closed_log_density, log_density_batch, DensityOptions};
use crate::distribution::prob;
use crate::error::{NvmixError, Result};
use crate::fitting::{fit, Evaluation, FitConfig, TraceEntry};
use crate::gammamix::{qgammamix_batch, shortfall_prob, QuantileOptions};
use crate::linalg::mahalanobis_rows;
use crate::mixtures::MixtureSpec;
use crate::model::NvmModel;
use crate::rqmc::{RqmcConfig, RqmcResult};
use crate::sampling::{rnvmix, SampleMethod};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "nvmix", version, about = "Normal variance mixtures: probabilities, densities, fitting, sampling")]
pub struct Cli {
    /// Seed for every random stream of the run.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Worker threads (falls back to NVMIX_THREADS).
    #[arg(long, global = true, env = "NVMIX_THREADS")]
    threads: Option<usize>,
    /// Write the tabular result to this CSV file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// P(lower < X <= upper).
    Prob(ProbArgs),
    /// Log-density at every row of a data file.
    Logdens(LogdensArgs),
    /// ECME fit of location, scale and mixing parameters.
    Fit(FitArgs),
    /// Draw a sample.
    Sample(SampleArgs),
    /// Mahalanobis-distance QQ data against the fitted gamma mixture.
    Qq(QqArgs),
    /// P(all margins below their u-quantiles), with the normal baseline.
    Shortfall(ShortfallArgs),
    /// Reproduce the error-convergence and reordering experiments.
    #[command(subcommand)]
    Bench(BenchCommand),
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    /// Mixing distribution, e.g. `inverse.gamma:4`, `pareto:2`, `constant:1`.
    #[arg(long)]
    mix: String,
    /// Dimension; required when neither --scale nor data fixes it.
    #[arg(long)]
    dim: Option<usize>,
    /// `identity` or a CSV file holding the scale matrix.
    #[arg(long, default_value = "identity")]
    scale: String,
    /// Comma-separated location vector (default zero).
    #[arg(long, allow_hyphen_values = true)]
    loc: Option<String>,
}

#[derive(Args, Debug, Clone)]
struct RqmcArgs {
    /// Absolute error tolerance.
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
    /// Maximum number of RQMC iterations.
    #[arg(long, default_value_t = 1000)]
    max_iter: usize,
}

impl RqmcArgs {
    fn config(&self) -> RqmcConfig {
        RqmcConfig::default().with_tol(self.tol).with_i_max(self.max_iter)
    }
}

#[derive(Args, Debug)]
struct ProbArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Comma-separated lower limits (default -inf).
    #[arg(long, allow_hyphen_values = true)]
    lower: Option<String>,
    /// Comma-separated upper limits (default inf).
    #[arg(long, allow_hyphen_values = true)]
    upper: Option<String>,
    #[command(flatten)]
    rqmc: RqmcArgs,
}

#[derive(Args, Debug)]
struct LogdensArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// CSV file with one point per row.
    #[arg(long)]
    data: PathBuf,
    /// Use the closed form (inverse-gamma, Pareto, constant only).
    #[arg(long)]
    closed: bool,
    #[command(flatten)]
    rqmc: RqmcArgs,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    /// Mixing family; parameters, if given, are ignored.
    #[arg(long)]
    mix: String,
    /// Relative tolerance on location, scale and mixing parameters.
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
    /// Estimate weights and likelihood numerically even when closed forms exist.
    #[arg(long)]
    estimated: bool,
    /// Rows used for the mixing-parameter step.
    #[arg(long)]
    subsample: Option<usize>,
    #[arg(long, default_value_t = 30)]
    max_iter: usize,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    n: usize,
    /// `pseudo` or `sobol`.
    #[arg(long, default_value = "pseudo")]
    method: String,
}

#[derive(Args, Debug)]
struct QqArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    data: PathBuf,
    /// Fit the model to the data first and use the estimates.
    #[arg(long)]
    fit: bool,
}

#[derive(Args, Debug)]
struct ShortfallArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Comma-separated levels in (0, 1).
    #[arg(long, default_value = "0.001,0.01,0.05,0.1")]
    u: String,
    #[command(flatten)]
    rqmc: RqmcArgs,
}

#[derive(Subcommand, Debug)]
enum BenchCommand {
    /// Mean estimated error against n for the four estimators.
    Convergence(ConvergenceArgs),
    /// Variance of the integrand with and without reordering.
    Reordering(ReorderingArgs),
}

#[derive(Args, Debug)]
struct ConvergenceArgs {
    #[arg(long, default_value = "inverse.gamma:2")]
    mix: String,
    #[arg(long, default_value = "10,100")]
    dims: String,
    #[arg(long, default_value_t = 15)]
    settings: usize,
    /// Points per randomization, multiples of 128.
    #[arg(long, default_value = "128,256,512,1024,2048,4096")]
    ns: String,
    /// Subset of mc, mc-reordered, rqmc, rqmc-reordered.
    #[arg(long, default_value = "mc,mc-reordered,rqmc,rqmc-reordered")]
    methods: String,
}

#[derive(Args, Debug)]
struct ReorderingArgs {
    #[arg(long, default_value_t = 200)]
    settings: usize,
    #[arg(long, default_value_t = 5)]
    dim_min: usize,
    #[arg(long, default_value_t = 50)]
    dim_max: usize,
    #[arg(long, default_value_t = 0.1)]
    nu_min: f64,
    #[arg(long, default_value_t = 5.0)]
    nu_max: f64,
    #[arg(long, default_value_t = 10_000)]
    n_samples: usize,
}

#[derive(Serialize)]
pub struct RunManifest<T: Serialize> {
    pub command: String,
    pub args: Vec<String>,
    pub seed: u64,
    pub version: &'static str,
    pub wall_time_secs: f64,
    pub result: T,
}

/// Tabular result: CSV header and rows.
struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    fn push<I: IntoIterator<Item = String>>(&mut self, row: I) {
        self.rows.push(row.into_iter().collect());
    }
}

fn num(v: f64) -> String {
    // Shortest representation that parses back to the same bits.
    format!("{v:?}")
}

/// What a command produced.
struct Outcome {
    json: serde_json::Value,
    table: Table,
    converged: bool,
}

fn to_json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("serializable result")
}

/// Parse `argv`, run the command and write the manifest to `stdout`.
/// Returns the process exit code.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(stderr, "{}", e.render());
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    if let Some(t) = cli.threads {
        // Fails harmlessly when a global pool already exists.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build_global();
    }
    let start = Instant::now();
    let outcome = match dispatch(&cli) {
        Ok(o) => o,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            return EXIT_INVALID;
        }
    };
    let manifest = RunManifest {
        command: command_name(&cli.command).to_string(),
        args: argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect(),
        seed: cli.seed,
        version: env!("CARGO_PKG_VERSION"),
        wall_time_secs: start.elapsed().as_secs_f64(),
        result: outcome.json,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("serializable manifest");
    let written = match &cli.out {
        Some(path) => write_csv(path, &outcome.table).and_then(|_| {
            let side = sidecar(path);
            std::fs::write(&side, &text).map_err(|e| NvmixError::InvalidInput(format!("{}: {e}", side.display())))
        }),
        None => writeln!(stdout, "{text}").map_err(|e| NvmixError::InvalidInput(e.to_string())),
    };
    if let Err(e) = written {
        let _ = writeln!(stderr, "error: {e}");
        return EXIT_INVALID;
    }
    if outcome.converged {
        EXIT_OK
    } else {
        let _ = writeln!(stderr, "warning: error tolerance not reached");
        EXIT_NOT_CONVERGED
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Prob(_) => "prob",
        Command::Logdens(_) => "logdens",
        Command::Fit(_) => "fit",
        Command::Sample(_) => "sample",
        Command::Qq(_) => "qq",
        Command::Shortfall(_) => "shortfall",
        Command::Bench(BenchCommand::Convergence(_)) => "bench convergence",
        Command::Bench(BenchCommand::Reordering(_)) => "bench reordering",
    }
}

/// `<out>.manifest.json`
pub fn sidecar(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn write_csv(path: &Path, table: &Table) -> Result<()> {
    let io = |e: csv::Error| NvmixError::InvalidInput(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(&table.header).map_err(io)?;
    for r in &table.rows {
        w.write_record(r).map_err(io)?;
    }
    w.flush().map_err(|e| NvmixError::InvalidInput(format!("{}: {e}", path.display())))
}

/// Numeric CSV matrix. A first row that does not parse as numbers is taken
/// as a header.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let file = File::open(path).map_err(|e| NvmixError::InvalidInput(format!("{}: {e}", path.display())))?;
    parse_matrix(file, &path.display().to_string())
}

pub fn parse_matrix<R: std::io::Read>(input: R, name: &str) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(input);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 1;
        let rec = rec.map_err(|e| NvmixError::InvalidInput(format!("{name}: row {line}: {e}")))?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        let parsed: Vec<std::result::Result<f64, usize>> =
            rec.iter().enumerate().map(|(j, f)| f.parse::<f64>().map_err(|_| j + 1)).collect();
        if i == 0 && parsed.iter().all(|p| p.is_err()) {
            continue;
        }
        let mut row = Vec::with_capacity(parsed.len());
        for (p, field) in parsed.into_iter().zip(rec.iter()) {
            match p {
                Ok(v) if !v.is_nan() => row.push(v),
                Ok(_) | Err(_) => {
                    let col = row.len() + 1;
                    return Err(NvmixError::InvalidInput(format!(
                        "{name}: row {line}, column {col}: cannot parse '{field}' as a number"
                    )));
                }
            }
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(NvmixError::InvalidInput(format!(
                    "{name}: row {line} has {} columns, expected {}",
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(NvmixError::InvalidInput(format!("{name}: no data rows")));
    }
    let (n, d) = (rows.len(), rows[0].len());
    Ok(DMatrix::from_fn(n, d, |i, j| rows[i][j]))
}

/// Comma-separated numbers; `inf` and `-inf` allowed.
pub fn parse_list(s: &str, what: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            let t = t.trim();
            t.parse::<f64>()
                .ok()
                .filter(|v| !v.is_nan())
                .ok_or_else(|| NvmixError::InvalidInput(format!("{what}: cannot parse '{t}' as a number")))
        })
        .collect()
}

fn parse_usize_list(s: &str, what: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|t| {
            t.trim().parse::<usize>().map_err(|_| NvmixError::InvalidInput(format!("{what}: cannot parse '{t}'")))
        })
        .collect()
}

fn build_model(m: &ModelArgs, data_dim: Option<usize>) -> Result<NvmModel> {
    let mix = MixtureSpec::from_str(&m.mix)?;
    let scale = if m.scale.eq_ignore_ascii_case("identity") {
        let d = m
            .dim
            .or(data_dim)
            .or_else(|| m.loc.as_deref().and_then(|l| parse_list(l, "--loc").ok()).map(|v| v.len()))
            .ok_or_else(|| NvmixError::InvalidInput("--dim is required with an identity scale".into()))?;
        DMatrix::identity(d, d)
    } else {
        let s = read_matrix(Path::new(&m.scale))?;
        if s.nrows() != s.ncols() {
            return Err(NvmixError::DimensionMismatch(format!("scale matrix is {}x{}", s.nrows(), s.ncols())));
        }
        s
    };
    let d = scale.nrows();
    for (what, other) in [("--dim", m.dim), ("data", data_dim)] {
        if let Some(o) = other {
            if o != d {
                return Err(NvmixError::DimensionMismatch(format!("{what} gives dimension {o}, scale has {d}")));
            }
        }
    }
    let loc = match &m.loc {
        Some(l) => DVector::from_vec(parse_list(l, "--loc")?),
        None => DVector::zeros(d),
    };
    NvmModel::new(loc, scale, mix)
}

fn result_row(r: &RqmcResult) -> Vec<String> {
    vec![num(r.estimate), num(r.error_estimate), r.n_per_randomization.to_string(), r.converged.to_string()]
}

fn dispatch(cli: &Cli) -> Result<Outcome> {
    let seed = cli.seed;
    match &cli.command {
        Command::Prob(a) => {
            let model = build_model(&a.model, None)?;
            let d = model.dim();
            let lower = match &a.lower {
                Some(s) => parse_list(s, "--lower")?,
                None => vec![f64::NEG_INFINITY; d],
            };
            let upper = match &a.upper {
                Some(s) => parse_list(s, "--upper")?,
                None => vec![f64::INFINITY; d],
            };
            let r = prob(&lower, &upper, &model, &a.rqmc.config(), seed)?;
            let mut table = Table::new(&["estimate", "error_estimate", "n_per_randomization", "converged"]);
            table.push(result_row(&r));
            Ok(Outcome { converged: r.converged, json: to_json(&r), table })
        }
        Command::Logdens(a) => {
            let x = read_matrix(&a.data)?;
            let model = build_model(&a.model, Some(x.ncols()))?;
            let results: Vec<RqmcResult> = if a.closed {
                (0..x.nrows())
                    .map(|i| {
                        let row: Vec<f64> = x.row(i).iter().copied().collect();
                        closed_log_density(&model, &row).map(RqmcResult::exact)
                    })
                    .collect::<Result<_>>()?
            } else {
                log_density_batch(&x, &model, &a.rqmc.config(), &DensityOptions::default(), seed)?
            };
            let mut table = Table::new(&["log_density", "error_estimate", "n_per_randomization", "converged"]);
            for r in &results {
                table.push(result_row(r));
            }
            let converged = results.iter().all(|r| r.converged);
            Ok(Outcome { converged, json: to_json(&results), table })
        }
        Command::Fit(a) => {
            let x = read_matrix(&a.data)?;
            let mix = MixtureSpec::from_str(&a.mix)?;
            let mut cfg = FitConfig::default().with_tol(a.tol);
            cfg.max_ecme_iter = a.max_iter;
            cfg.subsample = a.subsample;
            if a.estimated {
                cfg = cfg.with_evaluation(Evaluation::Estimated);
            }
            let r = fit(&x, &mix, &cfg, seed)?;
            let view = FitView::new(&r.nu, &r.loc, &r.scale, r.loglik, r.converged, r.default_start, &r.trace);
            let mut table = Table::new(&["iteration", "nu", "loglik", "loglik_error", "rel_diff_mu", "rel_diff_sigma", "rel_diff_nu"]);
            for t in &r.trace {
                let nu: Vec<String> = t.nu.iter().map(|v| num(*v)).collect();
                table.push([
                    t.iteration.to_string(),
                    nu.join(";"),
                    num(t.loglik),
                    num(t.loglik_error),
                    num(t.rel_diff_mu),
                    num(t.rel_diff_sigma),
                    num(t.rel_diff_nu),
                ]);
            }
            Ok(Outcome { converged: r.converged, json: to_json(&view), table })
        }
        Command::Sample(a) => {
            let model = build_model(&a.model, None)?;
            let method = SampleMethod::from_str(&a.method)?;
            let x = rnvmix(a.n, &model, seed, method)?;
            let header: Vec<String> = (1..=x.ncols()).map(|j| format!("x{j}")).collect();
            let header_ref: Vec<&str> = header.iter().map(String::as_str).collect();
            let mut table = Table::new(&header_ref);
            let rows: Vec<Vec<f64>> = x.row_iter().map(|r| r.iter().copied().collect()).collect();
            for r in &rows {
                table.push(r.iter().map(|v| num(*v)));
            }
            Ok(Outcome { converged: true, json: to_json(&rows), table })
        }
        Command::Qq(a) => {
            let x = read_matrix(&a.data)?;
            let mut model = build_model(&a.model, Some(x.ncols()))?;
            if a.fit {
                let r = fit(&x, &model.mix, &FitConfig::default(), seed)?;
                model = NvmModel::new(r.loc, r.scale, model.mix.with_params(&r.nu)?)?;
            }
            let qq = qq_points(&x, &model, seed)?;
            let mut table = Table::new(&["p", "theoretical", "empirical"]);
            for q in &qq {
                table.push([num(q.p), num(q.theoretical), num(q.empirical)]);
            }
            Ok(Outcome { converged: true, json: to_json(&qq), table })
        }
        Command::Shortfall(a) => {
            let model = build_model(&a.model, None)?;
            let normal = model.with_mixture(MixtureSpec::constant(1.0)?);
            let cfg = a.rqmc.config();
            let opts = QuantileOptions::default();
            let mut rows = Vec::new();
            for u in parse_list(&a.u, "--u")? {
                let r = shortfall_prob(u, &model, &cfg, &opts, seed)?;
                let base = shortfall_prob(u, &normal, &cfg, &opts, seed)?;
                rows.push(ShortfallRow {
                    u,
                    prob: r.estimate,
                    error_estimate: r.error_estimate,
                    normal_prob: base.estimate,
                    ratio: r.estimate / base.estimate,
                    converged: r.converged && base.converged,
                });
            }
            let mut table = Table::new(&["u", "prob", "error_estimate", "normal_prob", "ratio"]);
            for r in &rows {
                table.push([num(r.u), num(r.prob), num(r.error_estimate), num(r.normal_prob), num(r.ratio)]);
            }
            let converged = rows.iter().all(|r| r.converged);
            Ok(Outcome { converged, json: to_json(&rows), table })
        }
        Command::Bench(BenchCommand::Convergence(a)) => {
            let mix = MixtureSpec::from_str(&a.mix)?;
            let mut cfg = ConvergenceConfig::new(mix, parse_usize_list(&a.dims, "--dims")?);
            cfg.settings = a.settings;
            cfg.ns = parse_usize_list(&a.ns, "--ns")?;
            cfg.methods = a.methods.split(',').map(|m| BenchMethod::from_str(m.trim())).collect::<Result<_>>()?;
            let summary = bench_convergence(&cfg, seed)?.summary();
            let mut table = Table::new(&["method", "d", "n", "mean_abs_error", "slope"]);
            for s in &summary {
                table.push([s.method.name().to_string(), s.d.to_string(), s.n.to_string(), num(s.mean_abs_error), num(s.slope)]);
            }
            Ok(Outcome { converged: true, json: to_json(&summary), table })
        }
        Command::Bench(BenchCommand::Reordering(a)) => {
            let cfg = ReorderingConfig {
                settings: a.settings,
                d_min: a.dim_min,
                d_max: a.dim_max,
                nu_min: a.nu_min,
                nu_max: a.nu_max,
                n_samples: a.n_samples,
            };
            let rep = bench_reordering(&cfg, seed)?;
            let mut table = Table::new(&["setting", "d", "nu", "var_plain", "var_reordered", "ratio"]);
            for r in &rep.records {
                table.push([r.setting.to_string(), r.d.to_string(), num(r.nu), num(r.var_plain), num(r.var_reordered), num(r.ratio)]);
            }
            let json = to_json(&ReorderingView {
                fraction_reduced: rep.fraction_reduced(),
                exceedances: rep.exceedances(),
                records: &rep.records,
            });
            Ok(Outcome { converged: true, json, table })
        }
    }
}

#[derive(Serialize)]
struct FitView<'a> {
    nu: &'a [f64],
    loc: Vec<f64>,
    scale: Vec<Vec<f64>>,
    loglik: f64,
    converged: bool,
    default_start: bool,
    trace: &'a [TraceEntry],
}

impl<'a> FitView<'a> {
    fn new(
        nu: &'a [f64],
        loc: &DVector<f64>,
        scale: &DMatrix<f64>,
        loglik: f64,
        converged: bool,
        default_start: bool,
        trace: &'a [TraceEntry],
    ) -> Self {
        Self {
            nu,
            loc: loc.iter().copied().collect(),
            scale: scale.row_iter().map(|r| r.iter().copied().collect()).collect(),
            loglik,
            converged,
            default_start,
            trace,
        }
    }
}

#[derive(Serialize)]
struct ReorderingView<'a> {
    fraction_reduced: f64,
    exceedances: usize,
    records: &'a [ReorderingRecord],
}

#[derive(Serialize)]
struct ShortfallRow {
    u: f64,
    prob: f64,
    error_estimate: f64,
    normal_prob: f64,
    /// `prob / normal_prob`.
    ratio: f64,
    converged: bool,
}

#[derive(Serialize, Debug, Clone, Copy, PartialEq)]
pub struct QqPoint {
    pub p: f64,
    pub theoretical: f64,
    pub empirical: f64,
}

/// Sorted squared Mahalanobis distances against the gamma-mixture quantiles
/// at `p_i = (i - 1/2) / n`.
pub fn qq_points(x: &DMatrix<f64>, model: &NvmModel, seed: u64) -> Result<Vec<QqPoint>> {
    let mut d2 = mahalanobis_rows(x, &model.loc, &model.factor)?;
    d2.sort_by(f64::total_cmp);
    let n = d2.len();
    let ps: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
    let q = qgammamix_batch(&ps, model.dim(), &model.mix, &QuantileOptions::default(), seed)?;
    Ok(ps.iter().zip(q).zip(d2).map(|((&p, theoretical), empirical)| QqPoint { p, theoretical, empirical }).collect())
}
