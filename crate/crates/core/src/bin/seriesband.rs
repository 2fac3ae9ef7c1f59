//! Command-line front end: CSV in, JSON/CSV reports out.
//!
//! Exit codes: 0 success, 2 user or input error, 3 numerical failure.
//! Flags win over the `--config` key=value file; `SERIESBAND_OUT_DIR`
//! overrides the default output directory but not an explicit `--out-dir`.
//! Every output file embeds the resolved configuration and seed.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use serde_json::json;

use seriesband::basis::{BasisFamily, BasisSpec};
use seriesband::candidate::{
    cv_anchored_set, explicit_set, select_cv_with_fits, simulation_rule_set, CandidateSet,
    Selection,
};
use seriesband::fit::{
    basis_row_at, cross_k_correlation, predict, standard_error_at, CrossKCorrelation, Dataset,
    FitResult,
};
use seriesband::plm::{plm_fit, plm_robust_ci, PlmFit};
use seriesband::rng::derive;
use seriesband::sim::{run_coverage_study, report_to_csv, KRule, SimConfig};
use seriesband::suptstat::{
    make_band, nested_critical_value, pointwise_critical_value, robust_ci, standard_z,
    uniform_band_critical_value, CriticalValueResult, Interval,
};
use seriesband::{Error, Result};

const SEED_TAG_POINT: u64 = 10;
const SEED_TAG_BAND: u64 = 11;

#[derive(Parser)]
#[command(
    name = "seriesband",
    version,
    about = "Series regression with intervals and bands that stay valid under specification search"
)]
struct Cli {
    /// Flat key=value config file; command-line flags win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory (default ".", or SERIESBAND_OUT_DIR when set).
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    /// Worker threads for parallel sections; 0 = one per core.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the regression (fixed size or cross-validated) with
    /// standard intervals.
    Fit(FitArgs),
    /// Cross-validated fit plus search-robust intervals and bands.
    Ci(FitArgs),
    /// Simulated sup-t critical value from standard errors or a
    /// correlation matrix file.
    Critvals(CritvalsArgs),
    /// Partially linear model intervals over a list of control counts.
    Plm(PlmArgs),
    /// Monte Carlo coverage study on the built-in designs.
    Simulate(SimArgs),
}

#[derive(Args)]
struct FitArgs {
    /// Input CSV with a header row.
    #[arg(long, value_name = "FILE")]
    input: Option<PathBuf>,
    /// Outcome column name.
    #[arg(long)]
    y_col: Option<String>,
    /// Regressor column name.
    #[arg(long)]
    x_col: Option<String>,
    /// Basis family: spline or polynomial.
    #[arg(long)]
    basis: Option<String>,
    /// Spline degree (ignored for polynomials).
    #[arg(long)]
    degree: Option<usize>,
    /// Fixed series size, bypassing candidate search (fit only).
    #[arg(long)]
    segments: Option<usize>,
    /// Candidate rule: sim, explicit, or cv-anchored.
    #[arg(long)]
    k_rule: Option<String>,
    /// Comma-separated candidate sizes for the explicit rule.
    #[arg(long)]
    k_list: Option<String>,
    /// Anchor for the cv-anchored rule.
    #[arg(long)]
    k_cv: Option<usize>,
    /// Upper multiplier for the cv-anchored rule.
    #[arg(long)]
    c1: Option<f64>,
    /// Comma-separated evaluation points.
    #[arg(long = "x")]
    x: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Critical-value simulation draws.
    #[arg(long = "B", alias = "b")]
    b: Option<u64>,
    /// Bootstrap draws for the uniform band.
    #[arg(long = "b-boot", alias = "B-boot")]
    b_boot: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Emit band.csv over the band support.
    #[arg(long)]
    band: bool,
    /// Grid size for the band.
    #[arg(long)]
    band_grid: Option<usize>,
    /// Band support "lo,hi" (default: the data range).
    #[arg(long)]
    band_support: Option<String>,
}

#[derive(Args)]
struct CritvalsArgs {
    /// Comma-separated standard errors of nested fits.
    #[arg(long)]
    ses: Option<String>,
    /// CSV file holding a square correlation matrix.
    #[arg(long, value_name = "FILE")]
    sigma: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long = "B", alias = "b")]
    b: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct PlmArgs {
    #[arg(long, value_name = "FILE")]
    input: Option<PathBuf>,
    #[arg(long)]
    y_col: Option<String>,
    #[arg(long)]
    x_col: Option<String>,
    /// Treatment column name.
    #[arg(long)]
    w_col: Option<String>,
    /// Comma-separated control counts (series terms per fit).
    #[arg(long)]
    k_list: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long = "B", alias = "b")]
    b: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SimArgs {
    /// Design id: 1, 2, or 3.
    #[arg(long)]
    model: Option<u8>,
    #[arg(long = "n")]
    n: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long = "B", alias = "b")]
    b: Option<u64>,
    #[arg(long = "b-boot", alias = "B-boot")]
    b_boot: Option<u64>,
    /// Candidate rule: sim or explicit.
    #[arg(long)]
    k_rule: Option<String>,
    #[arg(long)]
    k_list: Option<String>,
    /// Comma-separated evaluation points.
    #[arg(long)]
    eval_points: Option<String>,
    #[arg(long)]
    band_support: Option<String>,
    #[arg(long)]
    band_grid: Option<usize>,
    /// Draw unit-variance errors instead of the default design variance.
    #[arg(long)]
    homoskedastic: bool,
    /// Record failed replications instead of aborting.
    #[arg(long)]
    tolerate_failures: bool,
    /// Multiplier applied to outcomes and the target function.
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = ConfigFile::load(cli.config.as_deref())?;
    let threads = resolve(cli.threads, &cfg, "threads")?.unwrap_or(0);
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    }
    let out_dir = resolve_out_dir(cli.out_dir, &cfg)?;
    fs::create_dir_all(&out_dir)?;
    match cli.command {
        Command::Fit(a) => cmd_fit_ci(a, &cfg, &out_dir, false),
        Command::Ci(a) => cmd_fit_ci(a, &cfg, &out_dir, true),
        Command::Critvals(a) => cmd_critvals(a, &cfg, &out_dir),
        Command::Plm(a) => cmd_plm(a, &cfg, &out_dir),
        Command::Simulate(a) => cmd_simulate(a, &cfg, &out_dir),
    }
}

// ---------------------------------------------------------------- config

/// Every key mirrors a long flag; unknown keys are rejected so typos fail
/// loudly instead of silently falling back to defaults.
const KNOWN_KEYS: &[&str] = &[
    "input",
    "y-col",
    "x-col",
    "w-col",
    "basis",
    "degree",
    "segments",
    "k-rule",
    "k-list",
    "k-cv",
    "c1",
    "x",
    "alpha",
    "B",
    "b-boot",
    "seed",
    "band",
    "band-grid",
    "band-support",
    "ses",
    "sigma",
    "model",
    "n",
    "reps",
    "eval-points",
    "homoskedastic",
    "tolerate-failures",
    "scale",
    "out-dir",
    "threads",
];

struct ConfigFile(BTreeMap<String, String>);

impl ConfigFile {
    fn load(path: Option<&Path>) -> Result<Self> {
        let mut map = BTreeMap::new();
        if let Some(path) = path {
            let text = fs::read_to_string(path)?;
            for (i, raw) in text.lines().enumerate() {
                let line = raw.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    Error::InvalidConfig(format!(
                        "config line {}: expected key=value, got {raw:?}",
                        i + 1
                    ))
                })?;
                let key = key.trim();
                if !KNOWN_KEYS.contains(&key) {
                    return Err(Error::InvalidConfig(format!(
                        "config line {}: unknown key {key:?}",
                        i + 1
                    )));
                }
                map.insert(key.to_string(), value.trim().to_string());
            }
        }
        Ok(ConfigFile(map))
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }
}

/// Flag value if given, else the parsed config-file value.
fn resolve<T: FromStr>(flag: Option<T>, cfg: &ConfigFile, key: &str) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    if flag.is_some() {
        return Ok(flag);
    }
    match cfg.raw(key) {
        None => Ok(None),
        Some(s) => s.parse::<T>().map(Some).map_err(|e| {
            Error::InvalidConfig(format!("config key {key:?}: cannot parse {s:?}: {e}"))
        }),
    }
}

fn resolve_switch(flag: bool, cfg: &ConfigFile, key: &str) -> Result<bool> {
    if flag {
        return Ok(true);
    }
    match cfg.raw(key) {
        None => Ok(false),
        Some("true") => Ok(true),
        Some("false") => Ok(false),
        Some(other) => Err(Error::InvalidConfig(format!(
            "config key {key:?}: expected true or false, got {other:?}"
        ))),
    }
}

fn required<T>(value: Option<T>, flag: &str) -> Result<T> {
    value.ok_or_else(|| Error::InvalidConfig(format!("--{flag} is required")))
}

fn resolve_out_dir(flag: Option<PathBuf>, cfg: &ConfigFile) -> Result<PathBuf> {
    if let Some(d) = flag {
        return Ok(d);
    }
    if let Ok(d) = std::env::var("SERIESBAND_OUT_DIR") {
        if !d.is_empty() {
            return Ok(PathBuf::from(d));
        }
    }
    Ok(cfg
        .raw("out-dir")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(".")))
}

fn parse_f64_list(s: &str, what: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::InvalidConfig(format!("{what}: {t:?} is not a number")))
        })
        .collect()
}

fn parse_usize_list(s: &str, what: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<usize>()
                .map_err(|_| Error::InvalidConfig(format!("{what}: {t:?} is not an integer")))
        })
        .collect()
}

fn parse_pair(s: &str, what: &str) -> Result<(f64, f64)> {
    let v = parse_f64_list(s, what)?;
    if v.len() != 2 {
        return Err(Error::InvalidConfig(format!(
            "{what}: expected \"lo,hi\", got {s:?}"
        )));
    }
    Ok((v[0], v[1]))
}

// ------------------------------------------------------------------- io

fn read_columns(path: &Path, cols: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(&e))?;
    let headers = rdr
        .headers()
        .map_err(|e| csv_error(&e))?
        .clone();
    let mut idx = Vec::with_capacity(cols.len());
    for &name in cols {
        let j = headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::InvalidData(format!(
                "column {name:?} not found; header has: {}",
                headers.iter().collect::<Vec<_>>().join(", ")
            ))
        })?;
        idx.push(j);
    }
    let mut out = vec![Vec::new(); cols.len()];
    for record in rdr.records() {
        let record = record.map_err(|e| csv_error(&e))?;
        let line = record.position().map_or(0, |p| p.line());
        for (slot, &j) in idx.iter().enumerate() {
            let field = record.get(j).ok_or_else(|| Error::CsvParse {
                line,
                msg: format!("missing field for column {:?}", cols[slot]),
            })?;
            let value: f64 = field.parse().map_err(|_| Error::CsvParse {
                line,
                msg: format!("column {:?}: {field:?} is not a number", cols[slot]),
            })?;
            out[slot].push(value);
        }
    }
    Ok(out)
}

fn csv_error(e: &csv::Error) -> Error {
    Error::CsvParse {
        line: e.position().map_or(0, |p| p.line()),
        msg: e.to_string(),
    }
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, contents)?;
    println!("wrote {}", path.display());
    Ok(path)
}

fn to_json(value: &impl Serialize) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Numerical(format!("report serialization: {e}")))?;
    s.push('\n');
    Ok(s)
}

fn sigma_rows(sigma: &CrossKCorrelation) -> Vec<Vec<f64>> {
    let p = sigma.p();
    (0..p)
        .map(|j| (0..p).map(|l| sigma.sigma_hat[(j, l)]).collect())
        .collect()
}

// --------------------------------------------------------------- fit/ci

struct SeriesPlan {
    family: BasisFamily,
    degree: usize,
    support: (f64, f64),
}

impl SeriesPlan {
    /// Candidate size -> spec. Spline candidates count equal subintervals
    /// (size - 1 interior knots); polynomial candidates are degrees.
    fn spec(&self, size: usize) -> BasisSpec {
        match self.family {
            BasisFamily::Spline => BasisSpec::spline(
                self.degree + 1,
                size.saturating_sub(1),
                self.support,
            ),
            BasisFamily::Polynomial => BasisSpec::polynomial(size, self.support),
        }
    }
}

#[derive(Serialize)]
struct FitSummary {
    k: usize,
    dimension: usize,
    cv: f64,
}

#[derive(Serialize)]
struct PointReport {
    x: f64,
    g_hat: f64,
    se: f64,
    ci_standard: Interval,
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma_hat: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    critical_value: Option<CriticalValueResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ci_robust: Option<Interval>,
    #[serde(skip_serializing_if = "Option::is_none")]
    g_hat_plus: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    se_plus: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ci_robust_plus: Option<Interval>,
}

#[derive(Serialize)]
struct BandMeta {
    k_used: usize,
    c_used: f64,
    /// Present only for bootstrap bands; the plain band uses the z quantile.
    #[serde(skip_serializing_if = "Option::is_none")]
    critical_value: Option<CriticalValueResult>,
    support: (f64, f64),
    grid_size: usize,
    csv: String,
}

#[derive(Serialize)]
struct Report {
    config: serde_json::Value,
    n: usize,
    support: (f64, f64),
    fits: Vec<FitSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    selection: Option<Selection>,
    k_used: usize,
    points: Vec<PointReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    band: Option<BandMeta>,
}

fn cmd_fit_ci(a: FitArgs, cfg: &ConfigFile, out_dir: &Path, robust: bool) -> Result<()> {
    let input = required(resolve(a.input, cfg, "input")?, "input")?;
    let y_col = resolve(a.y_col, cfg, "y-col")?.unwrap_or_else(|| "y".into());
    let x_col = resolve(a.x_col, cfg, "x-col")?.unwrap_or_else(|| "x".into());
    let basis = resolve(a.basis, cfg, "basis")?.unwrap_or_else(|| "spline".into());
    let family = match basis.as_str() {
        "spline" => BasisFamily::Spline,
        "polynomial" => BasisFamily::Polynomial,
        other => {
            return Err(Error::InvalidConfig(format!(
                "--basis must be spline or polynomial, got {other:?}"
            )))
        }
    };
    let degree = resolve(a.degree, cfg, "degree")?.unwrap_or(2);
    if family == BasisFamily::Spline && degree < 1 {
        return Err(Error::InvalidConfig("spline degree must be at least 1".into()));
    }
    let segments = resolve(a.segments, cfg, "segments")?;
    let k_rule = resolve(a.k_rule, cfg, "k-rule")?;
    let alpha = resolve(a.alpha, cfg, "alpha")?.unwrap_or(0.05);
    let b = resolve(a.b, cfg, "B")?.unwrap_or(5000);
    let b_boot = resolve(a.b_boot, cfg, "b-boot")?.unwrap_or(1000);
    let seed = resolve(a.seed, cfg, "seed")?.unwrap_or(1);
    let eval_points = match resolve(a.x, cfg, "x")? {
        Some(s) => parse_f64_list(&s, "--x")?,
        None => Vec::new(),
    };
    let band = resolve_switch(a.band, cfg, "band")?;
    let band_grid = resolve(a.band_grid, cfg, "band-grid")?.unwrap_or(91);
    let band_support_raw = resolve(a.band_support, cfg, "band-support")?;
    if robust && eval_points.is_empty() && !band {
        return Err(Error::InvalidConfig(
            "ci needs evaluation points (--x) or --band".into(),
        ));
    }
    let k_list = match resolve(a.k_list, cfg, "k-list")? {
        Some(s) => Some(parse_usize_list(&s, "--k-list")?),
        None => None,
    };
    let k_cv_anchor = resolve(a.k_cv, cfg, "k-cv")?;
    let c1 = resolve(a.c1, cfg, "c1")?.unwrap_or(2.0);

    let columns = read_columns(&input, &[&y_col, &x_col])?;
    let mut it = columns.into_iter();
    let y = it.next().unwrap();
    let x = it.next().unwrap();
    let data = Dataset::new(x, y)?;
    let (lo, hi) = data
        .x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| {
            (l.min(v), h.max(v))
        });
    let plan = SeriesPlan {
        family,
        degree,
        support: (lo, hi),
    };

    if robust && segments.is_some() {
        return Err(Error::InvalidConfig(
            "ci searches a candidate set; --segments only applies to fit".into(),
        ));
    }

    // Candidate set, or a singleton when a fixed size is requested.
    let set = if let Some(size) = segments {
        if k_rule.is_some() {
            return Err(Error::InvalidConfig(
                "--segments and --k-rule are mutually exclusive".into(),
            ));
        }
        explicit_set(vec![size])?
    } else {
        let rule = if robust {
            required(k_rule, "k-rule")?
        } else {
            k_rule.ok_or_else(|| {
                Error::InvalidConfig("fit needs --segments or --k-rule".into())
            })?
        };
        build_candidate_set(&rule, data.n(), k_list, k_cv_anchor, c1)?
    };

    let config_echo = json!({
        "command": if robust { "ci" } else { "fit" },
        "input": input.display().to_string(),
        "y_col": y_col,
        "x_col": x_col,
        "basis": basis,
        "degree": degree,
        "candidate_k": set.k_values,
        "alpha": alpha,
        "B": b,
        "b_boot": b_boot,
        "seed": seed,
        "eval_points": eval_points,
        "band": band,
        "band_grid": band_grid,
        "band_support": band_support_raw,
    });

    let (selection, fits) = select_cv_with_fits(&data, &set, |size| plan.spec(size))?;
    let k_used = selection.k_cv;
    let k_plus = selection.bumped["cv+"].used;
    let fits_summary: Vec<FitSummary> = set
        .k_values
        .iter()
        .map(|k| FitSummary {
            k: *k,
            dimension: fits[k].design.ncols(),
            cv: selection.cv_scores[k],
        })
        .collect();
    let ordered: Vec<&FitResult> = set.k_values.iter().map(|k| &fits[k]).collect();
    let fit_cv = &fits[&k_used];
    let fit_plus = &fits[&k_plus];
    let z = standard_z(alpha);

    let mut points = Vec::with_capacity(eval_points.len());
    for (pi, &xp) in eval_points.iter().enumerate() {
        let g_hat = predict(fit_cv, &[xp])?[0];
        let se = standard_error_at(fit_cv, xp)?;
        let mut report = PointReport {
            x: xp,
            g_hat,
            se,
            ci_standard: robust_ci(g_hat, se, z)?,
            sigma_hat: None,
            critical_value: None,
            ci_robust: None,
            g_hat_plus: None,
            se_plus: None,
            ci_robust_plus: None,
        };
        if robust {
            let rows: Vec<DVector<f64>> = ordered
                .iter()
                .map(|f| basis_row_at(f, xp))
                .collect::<Result<_>>()?;
            let sigma = cross_k_correlation(&ordered, &rows, format!("x={xp}"))?;
            let cv = pointwise_critical_value(
                &sigma,
                alpha,
                b,
                derive(seed, &[SEED_TAG_POINT, pi as u64]),
            )?;
            let g_plus = predict(fit_plus, &[xp])?[0];
            let se_plus = standard_error_at(fit_plus, xp)?;
            report.sigma_hat = Some(sigma_rows(&sigma));
            report.ci_robust = Some(robust_ci(g_hat, se, cv.c_hat)?);
            report.ci_robust_plus = Some(robust_ci(g_plus, se_plus, cv.c_hat)?);
            report.g_hat_plus = Some(g_plus);
            report.se_plus = Some(se_plus);
            report.critical_value = Some(cv);
        }
        points.push(report);
    }

    let mut band_meta = None;
    if band {
        let (blo, bhi) = match band_support_raw {
            Some(ref s) => parse_pair(s, "--band-support")?,
            None => (lo, hi),
        };
        if !(blo < bhi) || blo < lo || bhi > hi {
            return Err(Error::InvalidConfig(format!(
                "band support [{blo}, {bhi}] must sit inside the data range [{lo}, {hi}]"
            )));
        }
        if band_grid < 2 {
            return Err(Error::InvalidConfig("band grid needs at least 2 points".into()));
        }
        let grid: Vec<f64> = (0..band_grid)
            .map(|i| blo + (bhi - blo) * i as f64 / (band_grid - 1) as f64)
            .collect();
        let (c_used, cv_meta) = if robust {
            let cv = uniform_band_critical_value(
                &data,
                &ordered,
                &grid,
                alpha,
                b_boot,
                derive(seed, &[SEED_TAG_BAND]),
            )?;
            (cv.c_hat, Some(cv))
        } else {
            (z, None)
        };
        let band_obj = make_band(fit_cv, &grid, c_used)?;
        let csv_name = "band.csv";
        let mut contents = format!("# config: {}\n", serde_json::to_string(&config_echo).unwrap());
        contents.push_str(&band_obj.to_csv());
        write_file(out_dir, csv_name, &contents)?;
        band_meta = Some(BandMeta {
            k_used,
            c_used,
            critical_value: cv_meta,
            support: (blo, bhi),
            grid_size: band_grid,
            csv: csv_name.into(),
        });
    }

    let report = Report {
        config: config_echo,
        n: data.n(),
        support: (lo, hi),
        fits: fits_summary,
        selection: Some(selection),
        k_used,
        points,
        band: band_meta,
    };
    write_file(out_dir, "report.json", &to_json(&report)?)?;
    println!(
        "n={} candidates={:?} k_cv={} (dimension {})",
        report.n,
        set.k_values,
        k_used,
        fit_cv.design.ncols()
    );
    Ok(())
}

fn build_candidate_set(
    rule: &str,
    n: usize,
    k_list: Option<Vec<usize>>,
    k_cv_anchor: Option<usize>,
    c1: f64,
) -> Result<CandidateSet> {
    match rule {
        "sim" => simulation_rule_set(n),
        "explicit" => {
            let list = k_list
                .ok_or_else(|| Error::InvalidConfig("explicit rule needs --k-list".into()))?;
            explicit_set(list)
        }
        "cv-anchored" => {
            let anchor = required(k_cv_anchor, "k-cv")?;
            cv_anchored_set(anchor, c1)
        }
        other => Err(Error::InvalidConfig(format!(
            "--k-rule must be sim, explicit, or cv-anchored, got {other:?}"
        ))),
    }
}

// -------------------------------------------------------------- critvals

fn cmd_critvals(a: CritvalsArgs, cfg: &ConfigFile, out_dir: &Path) -> Result<()> {
    let ses_raw = resolve(a.ses, cfg, "ses")?;
    let sigma_path = resolve(a.sigma, cfg, "sigma")?;
    let alpha = resolve(a.alpha, cfg, "alpha")?.unwrap_or(0.05);
    let b = resolve(a.b, cfg, "B")?.unwrap_or(5000);
    let seed = resolve(a.seed, cfg, "seed")?.unwrap_or(1);

    let (result, source, p) = match (ses_raw, sigma_path) {
        (Some(_), Some(_)) => {
            return Err(Error::InvalidConfig(
                "--ses and --sigma are mutually exclusive".into(),
            ))
        }
        (None, None) => {
            return Err(Error::InvalidConfig("need --ses or --sigma".into()));
        }
        (Some(s), None) => {
            let ses = parse_f64_list(&s, "--ses")?;
            let p = ses.len();
            (nested_critical_value(&ses, alpha, b, seed)?, "ses".to_string(), p)
        }
        (None, Some(path)) => {
            let sigma = read_sigma_matrix(&path)?;
            let p = sigma.nrows();
            let corr = CrossKCorrelation::new(
                sigma,
                (1..=p).collect(),
                vec![1.0; p],
                format!("correlation file {}", path.display()),
            )?;
            (
                pointwise_critical_value(&corr, alpha, b, seed)?,
                path.display().to_string(),
                p,
            )
        }
    };

    let report = json!({
        "config": {
            "command": "critvals",
            "source": source,
            "p": p,
            "alpha": alpha,
            "B": b,
            "seed": seed,
        },
        "result": result,
    });
    write_file(out_dir, "critvals.json", &to_json(&report)?)?;
    println!("c_hat = {:.4} (mc_se {:.4})", result.c_hat, result.mc_se);
    Ok(())
}

/// Square numeric CSV; a non-numeric first line is treated as a header.
fn read_sigma_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = line
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect();
        match parsed {
            Ok(v) => rows.push(v),
            Err(_) if i == 0 => continue,
            Err(_) => {
                return Err(Error::CsvParse {
                    line: (i + 1) as u64,
                    msg: format!("non-numeric entry in {raw:?}"),
                })
            }
        }
    }
    let p = rows.len();
    if p == 0 {
        return Err(Error::InvalidData("correlation file is empty".into()));
    }
    if rows.iter().any(|r| r.len() != p) {
        return Err(Error::InvalidData(format!(
            "correlation matrix must be square; got {p} rows with lengths {:?}",
            rows.iter().map(Vec::len).collect::<Vec<_>>()
        )));
    }
    Ok(DMatrix::from_fn(p, p, |i, j| rows[i][j]))
}

// ------------------------------------------------------------------ plm

fn cmd_plm(a: PlmArgs, cfg: &ConfigFile, out_dir: &Path) -> Result<()> {
    let input = required(resolve(a.input, cfg, "input")?, "input")?;
    let y_col = resolve(a.y_col, cfg, "y-col")?.unwrap_or_else(|| "y".into());
    let x_col = resolve(a.x_col, cfg, "x-col")?.unwrap_or_else(|| "x".into());
    let w_col = resolve(a.w_col, cfg, "w-col")?.unwrap_or_else(|| "w".into());
    let k_list_raw = required(resolve(a.k_list, cfg, "k-list")?, "k-list")?;
    let k_list = parse_usize_list(&k_list_raw, "--k-list")?;
    let alpha = resolve(a.alpha, cfg, "alpha")?.unwrap_or(0.05);
    let b = resolve(a.b, cfg, "B")?.unwrap_or(5000);
    let seed = resolve(a.seed, cfg, "seed")?.unwrap_or(1);
    if k_list.is_empty() {
        return Err(Error::InvalidConfig("--k-list is empty".into()));
    }

    let columns = read_columns(&input, &[&y_col, &x_col, &w_col])?;
    let mut it = columns.into_iter();
    let y = it.next().unwrap();
    let x = it.next().unwrap();
    let w = it.next().unwrap();
    let data = Dataset::with_treatment(x, y, Some(w))?;
    let (lo, hi) = data
        .x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| {
            (l.min(v), h.max(v))
        });

    // k counts control functions: a quadratic spline with k - 3 interior
    // knots has exactly k columns.
    let mut fits: Vec<PlmFit> = Vec::with_capacity(k_list.len());
    for &k in &k_list {
        if k < 3 {
            return Err(Error::InvalidConfig(format!(
                "control count {k} too small; quadratic splines need at least 3"
            )));
        }
        let spec = BasisSpec::quadratic_spline(k - 3, (lo, hi));
        let controls = seriesband::basis::build_basis(&spec, &data.x)?;
        fits.push(plm_fit(
            &data,
            k,
            &controls.values,
            format!("quadratic spline, {} interior knots", k - 3),
        )?);
    }
    let refs: Vec<&PlmFit> = fits.iter().collect();
    let report = plm_robust_ci(&refs, alpha, b, seed)?;

    let out = json!({
        "config": {
            "command": "plm",
            "input": input.display().to_string(),
            "y_col": y_col,
            "x_col": x_col,
            "w_col": w_col,
            "k_list": k_list,
            "alpha": alpha,
            "B": b,
            "seed": seed,
        },
        "n": data.n(),
        "support": [lo, hi],
        "report": report,
    });
    write_file(out_dir, "plm.json", &to_json(&out)?)?;
    for pk in &report.per_k {
        println!(
            "k={}: theta_hat={:.6} se_hc0={:.6} robust=[{:.6}, {:.6}]",
            pk.k, pk.theta_hat, pk.se_hc0, pk.ci_robust.lower, pk.ci_robust.upper
        );
    }
    println!("c_hat = {:.4}", report.c_hat);
    Ok(())
}

// ------------------------------------------------------------- simulate

fn cmd_simulate(a: SimArgs, cfg: &ConfigFile, out_dir: &Path) -> Result<()> {
    let model = required(resolve(a.model, cfg, "model")?, "model")?;
    let n = resolve(a.n, cfg, "n")?.unwrap_or(200);
    let reps = required(resolve(a.reps, cfg, "reps")?, "reps")?;
    let alpha = resolve(a.alpha, cfg, "alpha")?.unwrap_or(0.05);
    let b = resolve(a.b, cfg, "B")?.unwrap_or(1000);
    let b_boot = resolve(a.b_boot, cfg, "b-boot")?.unwrap_or(1000);
    let seed = resolve(a.seed, cfg, "seed")?.unwrap_or(1);
    let k_rule = resolve(a.k_rule, cfg, "k-rule")?.unwrap_or_else(|| "sim".into());
    let k_list = match resolve(a.k_list, cfg, "k-list")? {
        Some(s) => Some(parse_usize_list(&s, "--k-list")?),
        None => None,
    };
    let eval_points = match resolve(a.eval_points, cfg, "eval-points")? {
        Some(s) => parse_f64_list(&s, "--eval-points")?,
        None => vec![0.2, 0.5, 0.8, 0.9],
    };
    let band_support = match resolve(a.band_support, cfg, "band-support")? {
        Some(s) => parse_pair(&s, "--band-support")?,
        None => (0.05, 0.95),
    };
    let band_grid = resolve(a.band_grid, cfg, "band-grid")?.unwrap_or(91);
    let homoskedastic = resolve_switch(a.homoskedastic, cfg, "homoskedastic")?;
    let tolerate = resolve_switch(a.tolerate_failures, cfg, "tolerate-failures")?;
    let scale = resolve(a.scale, cfg, "scale")?.unwrap_or(1.0);

    let candidate_rule = match k_rule.as_str() {
        "sim" => KRule::SimulationRule,
        "explicit" => KRule::Explicit {
            k_values: k_list
                .ok_or_else(|| Error::InvalidConfig("explicit rule needs --k-list".into()))?,
        },
        other => {
            return Err(Error::InvalidConfig(format!(
                "--k-rule must be sim or explicit, got {other:?}"
            )))
        }
    };
    let config = SimConfig {
        model_id: model,
        n,
        n_reps: reps,
        b_critical: b,
        b_bootstrap: b_boot,
        alpha,
        candidate_rule,
        eval_points,
        band_support,
        band_grid_size: band_grid,
        heteroskedastic: !homoskedastic,
        master_seed: seed,
        tolerate_failures: tolerate,
        scale,
    };
    let report = run_coverage_study(&config)?;

    let csv = format!(
        "# config: {}\n{}",
        serde_json::to_string(&config).unwrap(),
        report_to_csv(&report)
    );
    write_file(out_dir, "coverage.csv", &csv)?;
    write_file(out_dir, "sim.json", &to_json(&report)?)?;
    for p in &report.points {
        println!(
            "model {} {} x={}: coverage {:.3}, length {:.3}",
            model, p.method, p.x, p.coverage, p.avg_length
        );
    }
    for bnd in &report.bands {
        println!(
            "model {} {} uniform: coverage {:.3}, width {:.3}",
            model, bnd.method, bnd.coverage, bnd.avg_width
        );
    }
    if !report.failures.is_empty() {
        println!("{} replication(s) failed and were recorded", report.failures.len());
    }
    Ok(())
}
