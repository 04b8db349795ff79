//! Command-line harness: experiment configs, scale profiles, artifact
//! layout and the `mixbil` subcommands.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::data::{generate, load_bundle, save_bundle, GenConfig, TaskBundle};
use crate::error::{Error, Result};
use crate::lowerlevel::{DualScheme, SolverSettings};
use crate::outer::{
    cross_validate, log_grid, mean_std, run_cell, ContinuationConfig, CvResult, Method, RunRecord,
    RunSettings, RECORD_SCHEMA_VERSION,
};
use crate::upper::{AdamConfig, StageConfig};
use crate::verify::{landscape_grid, run_suite, Level, ToyObjective, TOY_LAMBDA, TOY_SEED};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Paper,
    Desk,
}

/// `count` log-spaced values over `[min, max]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaGrid {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl LambdaGrid {
    pub fn values(&self) -> Vec<f64> {
        log_grid(self.min, self.max, self.count)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandscapeConfig {
    pub seed: u64,
    pub lambda: f64,
    pub resolution: usize,
    pub eps: f64,
}

impl Default for LandscapeConfig {
    fn default() -> Self {
        LandscapeConfig {
            seed: TOY_SEED,
            lambda: TOY_LAMBDA,
            resolution: 201,
            eps: 1e-2,
        }
    }
}

/// Everything an experiment needs. Serialized as JSON; unknown keys are
/// rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub profile: Option<Profile>,
    /// The `seed` field is replaced by each entry of `seeds`.
    pub data: GenConfig,
    pub run: RunSettings,
    pub lambda_grid: LambdaGrid,
    pub seeds: Vec<u64>,
    #[serde(default = "both_methods")]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub landscape: LandscapeConfig,
}

fn both_methods() -> Vec<Method> {
    vec![Method::Mib, Method::Bilevel]
}

impl ExperimentConfig {
    pub fn profile(profile: Profile) -> Self {
        let (data, q, epochs, stages, count, seeds) = match profile {
            Profile::Paper => (
                GenConfig {
                    d: 100,
                    groups: 10,
                    tasks: 50,
                    n: 50,
                    noise_variance: 0.1,
                    seed: 0,
                },
                500,
                500,
                10,
                10,
                5,
            ),
            Profile::Desk => (
                GenConfig {
                    d: 30,
                    groups: 5,
                    tasks: 12,
                    n: 20,
                    noise_variance: 0.1,
                    seed: 0,
                },
                100,
                100,
                6,
                5,
                3,
            ),
        };
        ExperimentConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            profile: Some(profile),
            data,
            run: RunSettings {
                eta: 1e-3,
                solver: SolverSettings::new(q, DualScheme::Accelerated),
                continuation: ContinuationConfig {
                    eps0: None,
                    eps1: 1e3,
                    beta: 0.5,
                    stages,
                    stage: StageConfig {
                        epochs,
                        batch_size: 10,
                        ..StageConfig::default()
                    },
                    adam: AdamConfig {
                        tangent_rows: true,
                        ..AdamConfig::default()
                    },
                    tau_bin: 1e-3,
                    carry_moments: false,
                },
                restarts: 1,
            },
            lambda_grid: LambdaGrid {
                min: 1e-3,
                max: 10.0,
                count,
            },
            seeds: (0..seeds).collect(),
            methods: both_methods(),
            out: None,
            landscape: LandscapeConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::SchemaVersionMismatch {
                expected: CONFIG_SCHEMA_VERSION,
                found: self.schema_version,
            });
        }
        self.data.validate()?;
        self.run.continuation.validate()?;
        if !(self.run.eta > 0.0) {
            return Err(Error::Config("run.eta must be positive".into()));
        }
        if self.run.solver.q == 0 {
            return Err(Error::Config("run.solver.q must be >= 1".into()));
        }
        let g = &self.lambda_grid;
        if g.count == 0 || !(g.min > 0.0) || !(g.max >= g.min) {
            return Err(Error::Config(
                "lambda_grid needs 0 < min <= max and count >= 1".into(),
            ));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must be nonempty".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("methods must be nonempty".into()));
        }
        if self.landscape.resolution < 2 {
            return Err(Error::Config("landscape.resolution must be >= 2".into()));
        }
        Ok(())
    }

    pub fn gen_for_seed(&self, seed: u64) -> GenConfig {
        GenConfig {
            seed,
            ..self.data.clone()
        }
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig =
            serde_path_to_error::deserialize(de).map_err(|e| Error::Malformed {
                path: path.to_path_buf(),
                msg: format!("at `{}`: {}", e.path(), e.inner()),
            })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Directory name for one λ, stable across platforms.
pub fn lambda_dir(lambda: f64) -> String {
    format!("{lambda:e}")
}

pub fn record_path(out: &Path, method: Method, lambda: f64, seed: u64) -> PathBuf {
    out.join(method.to_string())
        .join(lambda_dir(lambda))
        .join(format!("{seed}.json"))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn write_record(path: &Path, record: &RunRecord) -> Result<()> {
    let mut text = serde_json::to_string_pretty(record)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub fn read_record(path: &Path) -> Result<RunRecord> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let record: RunRecord = serde_json::from_str(&text).map_err(|e| Error::Malformed {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    if record.schema_version != RECORD_SCHEMA_VERSION {
        return Err(Error::SchemaVersionMismatch {
            expected: RECORD_SCHEMA_VERSION,
            found: record.schema_version,
        });
    }
    Ok(record)
}

/// Every record under `dir`, in path order.
pub fn collect_records(dir: &Path) -> Result<Vec<RunRecord>> {
    let mut paths = Vec::new();
    for method in ["mib", "bilevel"] {
        let root = dir.join(method);
        if !root.is_dir() {
            continue;
        }
        for lam in fs::read_dir(&root).map_err(|e| Error::io(&root, e))? {
            let lam = lam.map_err(|e| Error::io(&root, e))?.path();
            if !lam.is_dir() {
                continue;
            }
            for file in fs::read_dir(&lam).map_err(|e| Error::io(&lam, e))? {
                let file = file.map_err(|e| Error::io(&lam, e))?.path();
                if file.extension().is_some_and(|x| x == "json") {
                    paths.push(file);
                }
            }
        }
    }
    paths.sort();
    paths.iter().map(|p| read_record(p)).collect()
}

/// Runs one cell on the bundle of `seed`.
pub fn run_one(
    cfg: &ExperimentConfig,
    bundle: &TaskBundle,
    method: Method,
    lambda: f64,
    seed: u64,
) -> Result<RunRecord> {
    let mut record = run_cell(bundle, method, lambda, seed, &cfg.run)?;
    record.config = Some(serde_json::to_value(cfg)?);
    Ok(record)
}

pub fn bundles_for(cfg: &ExperimentConfig) -> Result<Vec<TaskBundle>> {
    cfg.seeds
        .iter()
        .map(|&s| generate(&cfg.gen_for_seed(s)))
        .collect()
}

/// Output of a full sweep.
pub struct GridOutcome {
    pub results: Vec<CvResult>,
    pub bundles: Vec<TaskBundle>,
}

/// `method,lambda,validation_mean,validation_std,cells_ok,cells_failed,selected`
pub fn summary_csv(results: &[CvResult]) -> String {
    let mut s = String::from(
        "method,lambda,validation_mean,validation_std,cells_ok,cells_failed,selected\n",
    );
    for r in results {
        for row in &r.summary {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.method,
                row.lambda,
                row.mean,
                row.std,
                row.ok,
                row.failed,
                u8::from(row.lambda == r.selected_lambda)
            ));
        }
    }
    s
}

/// Group label of every feature for the first seed: the oracle, the
/// baseline before and after rounding, and the continuation, each at its
/// method's selected λ.
pub fn groups_csv(results: &[CvResult], bundle: &TaskBundle, seed: u64) -> String {
    let d = bundle.d();
    let mut s = String::from("row,seed,lambda");
    for j in 0..d {
        s.push_str(&format!(",f{j}"));
    }
    s.push('\n');
    let mut push = |name: &str, lambda: f64, labels: &[usize]| {
        s.push_str(&format!("{name},{seed},{lambda}"));
        for l in labels {
            s.push_str(&format!(",{l}"));
        }
        s.push('\n');
    };
    push("oracle", f64::NAN, &bundle.labels);
    let find = |m: Method| {
        results.iter().find(|r| r.method == m).and_then(|r| {
            r.cells
                .iter()
                .find(|c| c.lambda == r.selected_lambda && c.seed == seed)
                .and_then(|c| c.outcome.as_ref().ok())
        })
    };
    if let Some(rec) = find(Method::Bilevel) {
        let relaxed = crate::penalty::GroupAssignment::project(rec.theta_relaxed.clone());
        push("bilevel_relaxed", rec.lambda, &relaxed.labels());
        push("bilevel_rounded", rec.lambda, &rec.labels);
    }
    if let Some(rec) = find(Method::Mib) {
        push("mib", rec.lambda, &rec.labels);
    }
    s
}

/// Runs every method over the λ grid and seeds, writing records,
/// `summary.csv`, `groups.csv` and `manifest.json` under `out`.
pub fn run_grid(cfg: &ExperimentConfig, out: &Path) -> Result<GridOutcome> {
    cfg.validate()?;
    let bundles = bundles_for(cfg)?;
    let grid = cfg.lambda_grid.values();
    let mut results = Vec::new();
    let resolved = serde_json::to_value(cfg)?;
    for &method in &cfg.methods {
        let mut cv = cross_validate(&bundles, &cfg.seeds, &grid, method, &cfg.run)?;
        for cell in &mut cv.cells {
            if let Ok(rec) = &mut cell.outcome {
                rec.config = Some(resolved.clone());
                write_record(&record_path(out, method, cell.lambda, cell.seed), rec)?;
            }
        }
        results.push(cv);
    }
    write_file(&out.join("summary.csv"), summary_csv(&results).as_bytes())?;
    write_file(
        &out.join("groups.csv"),
        groups_csv(&results, &bundles[0], cfg.seeds[0]).as_bytes(),
    )?;
    let manifest = serde_json::json!({
        "schema_version": RECORD_SCHEMA_VERSION,
        "config": resolved,
        "selected_lambda": results
            .iter()
            .map(|r| (r.method.to_string(), r.selected_lambda))
            .collect::<BTreeMap<_, _>>(),
        "failed_cells": results
            .iter()
            .flat_map(|r| r.cells.iter().filter_map(move |c| c.outcome.as_ref().err().map(|e| {
                serde_json::json!({"method": r.method, "lambda": c.lambda, "seed": c.seed, "error": e})
            })))
            .collect::<Vec<_>>(),
    });
    write_file(
        &out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?.as_bytes(),
    )?;
    Ok(GridOutcome { results, bundles })
}

/// One row of the test-performance table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: Method,
    pub lambda: f64,
    pub seeds: usize,
    pub test_error_mean: f64,
    pub test_error_std: f64,
    pub recon_mean: f64,
    pub recon_std: f64,
}

/// Cross-validates λ per method from stored records and summarizes test
/// and reconstruction errors across seeds at the selected λ.
pub fn report(records: &[RunRecord]) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::new();
    for method in [Method::Mib, Method::Bilevel] {
        let mine: Vec<&RunRecord> = records.iter().filter(|r| r.method == method).collect();
        if mine.is_empty() {
            continue;
        }
        let mut by_lambda: BTreeMap<u64, Vec<&RunRecord>> = BTreeMap::new();
        for r in &mine {
            by_lambda.entry(r.lambda.to_bits()).or_default().push(r);
        }
        let (lambda, cell) = by_lambda
            .iter()
            .map(|(&bits, rs)| {
                let vals: Vec<f64> = rs.iter().map(|r| r.validation_error).collect();
                (f64::from_bits(bits), rs, mean_std(&vals).0)
            })
            .fold(
                None::<(f64, &Vec<&RunRecord>, f64)>,
                |best, cur| match best {
                    Some(b) if b.2 <= cur.2 => Some(b),
                    _ => Some(cur),
                },
            )
            .map(|(l, rs, _)| (l, rs))
            .expect("nonempty");
        let tests: Vec<f64> = cell.iter().map(|r| r.test_error).collect();
        let recons: Vec<f64> = cell.iter().map(|r| r.reconstruction_error).collect();
        let (tm, ts) = mean_std(&tests);
        let (rm, rs) = mean_std(&recons);
        rows.push(ReportRow {
            method,
            lambda,
            seeds: cell.len(),
            test_error_mean: tm,
            test_error_std: ts,
            recon_mean: rm,
            recon_std: rs,
        });
    }
    if rows.is_empty() {
        return Err(Error::Config("no run records found".into()));
    }
    Ok(rows)
}

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut s =
        String::from("method,lambda,seeds,test_error_mean,test_error_std,recon_mean,recon_std\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.method.label(),
            r.lambda,
            r.seeds,
            r.test_error_mean,
            r.test_error_std,
            r.recon_mean,
            r.recon_std
        ));
    }
    s
}

// ------------------------------------------------------------ CLI

#[derive(Parser, Debug)]
#[command(
    name = "mixbil",
    version,
    about = "Group-structure learning by penalized bilevel continuation"
)]
pub struct Cli {
    /// Worker threads (MIXBIL_THREADS takes precedence).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Experiment config (JSON). Overrides --profile.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "desk")]
    pub profile: Profile,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Independent starts per cell.
    #[arg(long)]
    pub restarts: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic task bundle.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run one (method, λ, seed) cell and emit its record.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        lambda: f64,
        #[arg(long, default_value = "mib")]
        method: String,
        /// Use a saved bundle instead of generating one.
        #[arg(long)]
        bundle: Option<PathBuf>,
    },
    /// Full λ × seed × method sweep.
    Grid {
        #[command(flatten)]
        common: Common,
    },
    /// Toy two-feature landscape CSV.
    Landscape {
        #[command(flatten)]
        common: Common,
    },
    /// Oracle suites; exits 3 on failure.
    Verify {
        #[arg(value_enum, default_value = "quick")]
        level: LevelArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Test-performance table from a records directory.
    Report {
        /// Directory written by `grid`.
        dir: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum LevelArg {
    Quick,
    Full,
}

/// Process exit status for an error.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::NotPositiveDefinite { .. }
        | Error::NonFiniteIterate(_)
        | Error::StageDiverged { .. }
        | Error::LambdaColumnFailed(_) => 2,
        _ => 1,
    }
}

fn resolve(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::profile(common.profile),
    };
    if let Some(r) = common.restarts {
        cfg.run.restarts = r;
    }
    if let Some(o) = &common.out {
        cfg.out = Some(o.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>> {
    match std::env::var("MIXBIL_THREADS") {
        Ok(v) if !v.is_empty() => v
            .parse::<usize>()
            .map(Some)
            .map_err(|_| Error::Config(format!("MIXBIL_THREADS must be a count, got {v:?}"))),
        _ => Ok(flag),
    }
}

/// Outcome of a subcommand that did not error.
pub enum Outcome {
    Ok,
    VerificationFailed,
}

pub fn execute(cli: Cli) -> Result<Outcome> {
    if let Some(n) = thread_count(cli.threads)? {
        // a pool may already exist when called twice in one process
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    match cli.command {
        Command::Generate { common, seed } => {
            let cfg = resolve(&common)?;
            let bundle = generate(&cfg.gen_for_seed(seed))?;
            let path = common
                .out
                .unwrap_or_else(|| PathBuf::from(format!("bundle-{seed}.json")));
            save_bundle(&bundle, &path)?;
            println!("{}", path.display());
        }
        Command::Run {
            common,
            seed,
            lambda,
            method,
            bundle,
        } => {
            let mut cfg = resolve(&common)?;
            let method: Method = method.parse()?;
            let data = match bundle {
                Some(p) => {
                    let b = load_bundle(&p)?;
                    cfg.data = b.cfg.clone();
                    b
                }
                None => generate(&cfg.gen_for_seed(seed))?,
            };
            let record = run_one(&cfg, &data, method, lambda, seed)?;
            match common.out {
                Some(p) if p.extension().is_some_and(|x| x == "json") => write_record(&p, &record)?,
                Some(dir) => write_record(&record_path(&dir, method, lambda, seed), &record)?,
                None => println!("{}", serde_json::to_string_pretty(&record)?),
            }
        }
        Command::Grid { common } => {
            let cfg = resolve(&common)?;
            let out = out_dir(&cfg);
            let grid = run_grid(&cfg, &out)?;
            for r in &grid.results {
                println!("{} selected lambda {}", r.method.label(), r.selected_lambda);
            }
            let rows = report(&collect_records(&out)?)?;
            let csv = report_csv(&rows);
            write_file(&out.join("report.csv"), csv.as_bytes())?;
            print!("{csv}");
        }
        Command::Landscape { common } => {
            let cfg = resolve(&common)?;
            let out = out_dir(&cfg);
            let toy = ToyObjective::new(cfg.landscape.seed, cfg.landscape.lambda)?;
            let land = landscape_grid(&toy, cfg.landscape.eps, cfg.landscape.resolution)?;
            let path = out.join("landscape.csv");
            let mut buf = Vec::new();
            land.write_csv(&mut buf).map_err(|e| Error::io(&path, e))?;
            write_file(&path, &buf)?;
            let g = land.argmin_g();
            let p = land.argmin_pen();
            println!(
                "argmin G: ({}, {})  argmin G+phi/eps: ({}, {})",
                g.t11, g.t21, p.t11, p.t21
            );
            println!("{}", path.display());
        }
        Command::Verify { level, seed } => {
            let level = match level {
                LevelArg::Quick => Level::Quick,
                LevelArg::Full => Level::Full,
            };
            let checks = run_suite(level, seed)?;
            for c in &checks {
                println!("{c}");
            }
            if checks.iter().any(|c| !c.passed) {
                return Ok(Outcome::VerificationFailed);
            }
        }
        Command::Report { dir, out } => {
            let dir = dir.unwrap_or_else(|| PathBuf::from("out"));
            let rows = report(&collect_records(&dir)?)?;
            let csv = report_csv(&rows);
            if let Some(p) = out {
                write_file(&p, csv.as_bytes())?;
            }
            print!("{csv}");
        }
    }
    Ok(Outcome::Ok)
}

/// Entry point of the `mixbil` binary.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::VerificationFailed) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
