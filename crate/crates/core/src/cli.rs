//! Command-line front end.
//!
//! Every command resolves its flags into a [`RunConfig`], which is echoed as
//! a `#`-prefixed JSON line at the top of each output file so that
//! `alo-tune replay --from FILE` reruns it.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::alo::{alo_value, AloObjective};
use crate::dataset::{
    apply_standardization, attach_intercept, load_csv, make_folds, standardize, CsvSchema, Dataset,
    ResponseColumn, Task,
};
use crate::error::{Error, Result};
use crate::fd_check::{emit_fd_table, DEFAULT_STEP};
use crate::glm::{Loss, Model, Regularizer, DEFAULT_BRIDGE_DELTA};
use crate::grid::{grid_search, held_out_loss, log_space, Criterion, GridSpec};
use crate::synthetic;
use crate::trust_region::{TerminationStatus, TrustRegionConfig};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Worst floored-relative error accepted by `check`.
pub const CHECK_TOLERANCE: f64 = 1e-3;

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "alo-tune", version, about = "Tune regularization hyperparameters by minimizing approximate leave-one-out error")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Minimize ALO with the trust-region method.
    Tune(CommonArgs),
    /// ALO and its first two derivatives along a log grid of the first hyperparameter.
    Curve(CommonArgs),
    /// Grid-search baseline.
    Grid(CommonArgs),
    /// Compare exact derivatives with finite differences.
    Check(CommonArgs),
    /// Time trust-region tuning against grid search.
    Bench(CommonArgs),
    /// Per-fold tuning with held-out loss.
    Kfold(CommonArgs),
    /// Rerun the configuration echoed in an output file.
    Replay {
        #[arg(long)]
        from: PathBuf,
        /// Output path; defaults to standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Squared,
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RegArg {
    Ridge,
    #[value(name = "group_ridge", alias = "group-ridge")]
    GroupRidge,
    Bridge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Regression,
    Classification,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CriterionArg {
    Alo,
    Kfold,
}

#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    /// CSV file with one row per observation.
    #[arg(long, conflicts_with = "synthetic")]
    pub data: Option<PathBuf>,
    /// Generated data instead of a file: `regression:NxP` or `classification:NxP`.
    #[arg(long)]
    pub synthetic: Option<String>,
    /// Response column: 0-based index or header name.
    #[arg(long)]
    pub response: Option<String>,
    /// Defaults to classification for logistic loss, regression otherwise.
    #[arg(long, value_enum)]
    pub task: Option<TaskArg>,
    #[arg(long)]
    pub no_header: bool,
    /// Use features as given instead of standardizing them.
    #[arg(long)]
    pub no_standardize: bool,
    /// Append an unpenalized intercept column.
    #[arg(long)]
    pub intercept: bool,
    #[arg(long, value_enum, default_value = "squared")]
    pub loss: LossArg,
    #[arg(long, value_enum, default_value = "ridge")]
    pub reg: RegArg,
    /// Group of each feature column for group ridge, e.g. `0,0,1,2`.
    #[arg(long)]
    pub groups: Option<String>,
    /// Half-width of the bridge smoothing region.
    #[arg(long, default_value_t = DEFAULT_BRIDGE_DELTA)]
    pub delta: f64,
    /// Starting hyperparameters, comma separated; defaults to all ones.
    #[arg(long, allow_hyphen_values = true)]
    pub lambda0: Option<String>,
    #[arg(long, default_value_t = 1e-3)]
    pub grid_min: f64,
    #[arg(long, default_value_t = 1e3)]
    pub grid_max: f64,
    /// Points per grid axis; 100 for curve and one-dimensional grids, 10 otherwise.
    #[arg(long)]
    pub grid_points: Option<usize>,
    #[arg(long, value_enum, default_value = "alo")]
    pub criterion: CriterionArg,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for parallel evaluation.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output path; defaults to standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Timing repeats for bench.
    #[arg(long, default_value_t = 10)]
    pub repeats: usize,
    /// Finite-difference step for check.
    #[arg(long, default_value_t = DEFAULT_STEP)]
    pub step: f64,
    /// Points for check: `;`-separated, each comma separated.
    #[arg(long, allow_hyphen_values = true)]
    pub points: Option<String>,
    #[arg(long)]
    pub delta0: Option<f64>,
    #[arg(long)]
    pub delta_max: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub shrink: Option<f64>,
    #[arg(long)]
    pub expand: Option<f64>,
    #[arg(long)]
    pub grad_tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandKind {
    Tune,
    Curve,
    Grid,
    Check,
    Bench,
    Kfold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    Csv { path: PathBuf, schema: CsvSchema },
    Synthetic { task: Task, n: usize, p: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

/// A fully resolved run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: CommandKind,
    pub data: DataSource,
    pub standardize: bool,
    pub intercept: bool,
    pub model: Model,
    pub lambda0: Vec<f64>,
    pub trust_region: TrustRegionConfig,
    pub grid: GridConfig,
    pub criterion: Criterion,
    pub folds: usize,
    pub seed: u64,
    pub threads: Option<usize>,
    pub repeats: usize,
    pub step: f64,
    pub lambda_points: Vec<Vec<f64>>,
    pub out: Option<PathBuf>,
}

fn usage(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

fn parse_list(text: &str, what: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| usage(format!("cannot parse {what} entry {t:?}")))
        })
        .collect()
}

fn parse_synthetic(spec: &str, seed: u64) -> Result<DataSource> {
    let bad = || usage(format!("--synthetic expects regression:NxP or classification:NxP, got {spec:?}"));
    let (kind, shape) = spec.split_once(':').ok_or_else(bad)?;
    let task = match kind {
        "regression" => Task::Regression,
        "classification" => Task::Classification,
        _ => return Err(bad()),
    };
    let (n, p) = shape.split_once(['x', 'X']).ok_or_else(bad)?;
    let n = n.trim().parse().map_err(|_| bad())?;
    let p = p.trim().parse().map_err(|_| bad())?;
    Ok(DataSource::Synthetic { task, n, p, seed })
}

impl RunConfig {
    pub fn from_args(command: CommandKind, a: &CommonArgs) -> Result<Self> {
        let loss = match a.loss {
            LossArg::Squared => Loss::Squared,
            LossArg::Logistic => Loss::Logistic,
        };
        let task = match a.task {
            Some(TaskArg::Regression) => Task::Regression,
            Some(TaskArg::Classification) => Task::Classification,
            None if loss == Loss::Logistic => Task::Classification,
            None => Task::Regression,
        };
        let reg = match a.reg {
            RegArg::Ridge => Regularizer::Ridge,
            RegArg::Bridge => {
                if !(a.delta > 0.0 && a.delta.is_finite()) {
                    return Err(usage("--delta must be positive"));
                }
                Regularizer::Bridge { delta: a.delta }
            }
            RegArg::GroupRidge => {
                let text = a.groups.as_deref().ok_or_else(|| usage("group_ridge needs --groups"))?;
                let groups = text
                    .split(',')
                    .map(|t| t.trim().parse::<usize>().map_err(|_| usage(format!("bad group {t:?}"))))
                    .collect::<Result<Vec<_>>>()?;
                Regularizer::group_ridge(groups)?
            }
        };
        let model = Model::new(loss, reg);
        let q = model.n_hyper();

        let data = match (&a.data, &a.synthetic) {
            (Some(path), None) => {
                let response = a
                    .response
                    .as_deref()
                    .ok_or_else(|| usage("--data needs --response"))?;
                let response = match response.parse::<usize>() {
                    Ok(i) => ResponseColumn::Index(i),
                    Err(_) => ResponseColumn::Name(response.to_string()),
                };
                DataSource::Csv {
                    path: path.clone(),
                    schema: CsvSchema {
                        response,
                        has_header: !a.no_header,
                        task,
                    },
                }
            }
            (None, Some(spec)) => parse_synthetic(spec, a.seed)?,
            _ => return Err(usage("give exactly one of --data or --synthetic")),
        };

        let lambda0 = match &a.lambda0 {
            Some(t) => parse_list(t, "--lambda0")?,
            None => vec![1.0; q],
        };
        if lambda0.len() != q {
            return Err(usage(format!(
                "--lambda0 has {} entries, {} regularizer takes {q}",
                lambda0.len(),
                model.reg.name()
            )));
        }

        let defaults = TrustRegionConfig::default();
        let trust_region = TrustRegionConfig {
            delta0: a.delta0.unwrap_or(defaults.delta0),
            delta_max: a.delta_max.unwrap_or(defaults.delta_max),
            eta_accept: a.eta.unwrap_or(defaults.eta_accept),
            shrink: a.shrink.unwrap_or(defaults.shrink),
            expand: a.expand.unwrap_or(defaults.expand),
            grad_tol: a.grad_tol.unwrap_or(defaults.grad_tol),
            max_iter: a.max_iter.unwrap_or(defaults.max_iter),
        };

        let default_points = match command {
            CommandKind::Curve => 100,
            CommandKind::Grid if q == 1 => 100,
            _ => 10,
        };
        let lambda_points = match &a.points {
            Some(t) => t.split(';').map(|pt| parse_list(pt, "--points")).collect::<Result<Vec<_>>>()?,
            None => default_check_points(q),
        };

        let cfg = RunConfig {
            command,
            data,
            standardize: !a.no_standardize,
            intercept: a.intercept,
            model,
            lambda0,
            trust_region,
            grid: GridConfig {
                min: a.grid_min,
                max: a.grid_max,
                points: a.grid_points.unwrap_or(default_points),
            },
            criterion: match a.criterion {
                CriterionArg::Alo => Criterion::Alo,
                CriterionArg::Kfold => Criterion::KFoldCv,
            },
            folds: a.folds,
            seed: a.seed,
            threads: a.threads,
            repeats: a.repeats,
            step: a.step,
            lambda_points,
            out: a.out.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.trust_region.validate()?;
        let q = self.model.n_hyper();
        if self.lambda0.len() != q {
            return Err(usage("lambda0 length does not match the regularizer"));
        }
        if let Some(bad) = self.lambda_points.iter().find(|p| p.len() != q) {
            return Err(usage(format!("check point {bad:?} needs {q} entries")));
        }
        log_space(self.grid.min, self.grid.max, self.grid.points)?;
        if self.folds < 2 {
            return Err(usage("--folds must be at least 2"));
        }
        if self.repeats == 0 {
            return Err(usage("--repeats must be at least 1"));
        }
        if self.threads == Some(0) {
            return Err(usage("--threads must be at least 1"));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(usage("--step must be positive"));
        }
        if let DataSource::Synthetic { n, p, .. } = self.data {
            if n == 0 || p == 0 {
                return Err(usage("synthetic data needs n, p >= 1"));
            }
        }
        Ok(())
    }
}

/// Table 3-style points for one hyperparameter, a small product grid otherwise.
fn default_check_points(q: usize) -> Vec<Vec<f64>> {
    match q {
        1 => [0.01, 0.05, 0.1, 1.0, 2.0, 5.0].iter().map(|&v| vec![v]).collect(),
        2 | 3 => GridSpec { axes: vec![vec![0.5, 1.0, 2.0]; q] }.points(),
        _ => [0.5, 1.0, 2.0].iter().map(|&v| vec![v; q]).collect(),
    }
}

pub fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::InvalidArgument(_) | Error::Output { .. } => EXIT_USAGE,
        e if e.is_data_error() => EXIT_DATA,
        _ => EXIT_NUMERIC,
    }
}

pub fn execute(cli: Cli) -> Result<u8> {
    let cfg = match cli.command {
        Command::Tune(a) => RunConfig::from_args(CommandKind::Tune, &a)?,
        Command::Curve(a) => RunConfig::from_args(CommandKind::Curve, &a)?,
        Command::Grid(a) => RunConfig::from_args(CommandKind::Grid, &a)?,
        Command::Check(a) => RunConfig::from_args(CommandKind::Check, &a)?,
        Command::Bench(a) => RunConfig::from_args(CommandKind::Bench, &a)?,
        Command::Kfold(a) => RunConfig::from_args(CommandKind::Kfold, &a)?,
        Command::Replay { from, out } => {
            let mut cfg = read_config_header(&from)?;
            cfg.out = out;
            cfg.validate()?;
            cfg
        }
    };
    run(&cfg)
}

/// Recovers the [`RunConfig`] from the metadata line of an output file.
pub fn read_config_header(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let first = text.lines().next().unwrap_or("");
    let body = first
        .strip_prefix('#')
        .ok_or_else(|| usage(format!("{} has no metadata header", path.display())))?;
    let meta: serde_json::Value =
        serde_json::from_str(body.trim()).map_err(|e| usage(format!("bad metadata header: {e}")))?;
    serde_json::from_value(meta["config"].clone()).map_err(|e| usage(format!("bad config in header: {e}")))
}

/// Runs one command, writing its table. Returns the process exit status.
pub fn run(cfg: &RunConfig) -> Result<u8> {
    cfg.validate()?;
    let work = || match cfg.command {
        CommandKind::Tune => run_tune(cfg),
        CommandKind::Curve => run_curve(cfg),
        CommandKind::Grid => run_grid(cfg),
        CommandKind::Check => run_check(cfg),
        CommandKind::Bench => run_bench(cfg),
        CommandKind::Kfold => run_kfold(cfg),
    };
    match cfg.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| usage(format!("cannot start thread pool: {e}")))?
            .install(work),
        None => work(),
    }
}

/// The dataset a config refers to, before standardization.
pub fn load_raw(cfg: &RunConfig) -> Result<Dataset> {
    match &cfg.data {
        DataSource::Csv { path, schema } => load_csv(path, schema),
        DataSource::Synthetic { task, n, p, seed } => match task {
            Task::Regression => synthetic::regression(*n, *p, 0.5, *seed),
            Task::Classification => synthetic::classification(*n, *p, (*p / 10).max(1), 1.0, *seed),
        },
    }
}

fn prepare(cfg: &RunConfig, raw: &Dataset) -> Result<Dataset> {
    let ds = if cfg.standardize { standardize(raw)? } else { raw.clone() };
    let ds = if cfg.intercept { attach_intercept(&ds)? } else { ds };
    cfg.model.loss.check_responses(ds.responses().as_slice())?;
    cfg.model.reg.check_columns(&ds.intercept_mask())?;
    Ok(ds)
}

fn load(cfg: &RunConfig) -> Result<Dataset> {
    prepare(cfg, &load_raw(cfg)?)
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: Vec<String>) -> Self {
        Self { header, rows: Vec::new() }
    }
}

fn lambda_header(q: usize) -> Vec<String> {
    (1..=q).map(|k| format!("lambda{k}")).collect()
}

fn num(v: f64) -> String {
    format!("{v:e}")
}

fn write_output(cfg: &RunConfig, results: serde_json::Value, table: &Table) -> Result<()> {
    let meta = json!({
        "tool": "alo-tune",
        "version": VERSION,
        "seed": cfg.seed,
        "config": cfg,
        "results": results,
    });
    let mut buf = Vec::new();
    writeln!(buf, "# {meta}").expect("writing to memory");
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let csv_err = |e: csv::Error| Error::Evaluation(format!("formatting csv: {e}"));
        w.write_record(&table.header).map_err(csv_err)?;
        for r in &table.rows {
            w.write_record(r).map_err(csv_err)?;
        }
        w.flush().expect("writing to memory");
    }
    match &cfg.out {
        Some(path) => std::fs::write(path, &buf).map_err(|source| Error::Output {
            path: path.clone(),
            source,
        }),
        None => std::io::stdout().write_all(&buf).map_err(|source| Error::Output {
            path: PathBuf::from("<stdout>"),
            source,
        }),
    }
}

fn status_name(s: TerminationStatus) -> &'static str {
    match s {
        TerminationStatus::Converged => "converged",
        TerminationStatus::MaxIter => "max_iter",
        TerminationStatus::SubproblemFailure => "subproblem_failure",
    }
}

fn run_tune(cfg: &RunConfig) -> Result<u8> {
    let ds = load(cfg)?;
    let mut obj = AloObjective::new(&ds, &cfg.model);
    let out = obj.minimize(&cfg.lambda0, &cfg.trust_region)?;
    let lambda_star: Vec<f64> = out.lambda.iter().copied().collect();
    let beta = obj.fit_at(&lambda_star)?.beta;
    let q = lambda_star.len();

    let mut header = vec!["iteration".to_string()];
    header.extend(lambda_header(q));
    header.extend(["f", "grad_norm", "delta", "rho", "step_norm", "accepted"].map(String::from));
    let mut table = Table::new(header);
    for r in &out.trace.records {
        let mut row = vec![r.iteration.to_string()];
        row.extend(r.lambda.iter().map(|&v| num(v)));
        row.push(num(r.value));
        row.push(num(r.grad_norm));
        row.push(num(r.delta));
        row.push(r.rho.map_or_else(|| "NaN".to_string(), num));
        row.push(num(r.step_norm));
        row.push(u8::from(r.accepted).to_string());
        table.rows.push(row);
    }
    let results = json!({
        "status": status_name(out.trace.status),
        "lambda_star": lambda_star,
        "f_star": out.value,
        "gradient": out.gradient.as_slice(),
        "iterations": out.iterations(),
        "evaluations": out.evaluations,
        "beta": beta.as_slice(),
    });
    write_output(cfg, results, &table)?;
    eprintln!(
        "tune: {} after {} iterations, lambda* = {:?}, f* = {:.10e}",
        status_name(out.trace.status),
        out.iterations(),
        lambda_star,
        out.value
    );
    Ok(if out.trace.status == TerminationStatus::Converged { EXIT_OK } else { EXIT_NUMERIC })
}

fn run_curve(cfg: &RunConfig) -> Result<u8> {
    let ds = load(cfg)?;
    let axis = log_space(cfg.grid.min, cfg.grid.max, cfg.grid.points)?;
    let evals: Vec<std::result::Result<(f64, f64, f64), String>> = axis
        .par_iter()
        .map(|&l| {
            let mut lam = cfg.lambda0.clone();
            lam[0] = l;
            let mut obj = AloObjective::new(&ds, &cfg.model);
            obj.evaluate(&lam)
                .map(|r| (r.value, r.gradient[0], r.hessian[(0, 0)]))
                .map_err(|e| e.to_string())
        })
        .collect();
    let mut table = Table::new(["lambda1", "f", "df/dl1", "d2f/dl1^2"].map(String::from).to_vec());
    let mut failures = Vec::new();
    for (&l, e) in axis.iter().zip(&evals) {
        match e {
            Ok((f, g, h)) => table.rows.push(vec![num(l), num(*f), num(*g), num(*h)]),
            Err(msg) => {
                failures.push(json!({"lambda1": l, "error": msg}));
                table.rows.push(vec![num(l), "NaN".into(), "NaN".into(), "NaN".into()]);
            }
        }
    }
    let best = axis
        .iter()
        .zip(&evals)
        .filter_map(|(&l, e)| e.as_ref().ok().map(|v| (l, v.0)))
        .min_by(|a, b| a.1.total_cmp(&b.1));
    let results = json!({
        "argmin_lambda1": best.map(|b| b.0),
        "min_f": best.map(|b| b.1),
        "failures": failures,
    });
    write_output(cfg, results, &table)?;
    Ok(if best.is_some() { EXIT_OK } else { EXIT_NUMERIC })
}

fn run_grid(cfg: &RunConfig) -> Result<u8> {
    let ds = load(cfg)?;
    let q = cfg.model.n_hyper();
    let spec = GridSpec::uniform(q, cfg.grid.min, cfg.grid.max, cfg.grid.points)?;
    let folds = match cfg.criterion {
        Criterion::KFoldCv => Some(make_folds(ds.n(), cfg.folds, cfg.seed)?),
        Criterion::Alo => None,
    };
    let res = grid_search(&ds, &cfg.model, &spec, cfg.criterion, folds.as_ref())?;
    let mut header = lambda_header(q);
    header.extend(["criterion", "best", "failed"].map(String::from));
    let mut table = Table::new(header);
    for (i, p) in res.points.iter().enumerate() {
        let mut row: Vec<String> = p.lambda.iter().map(|&v| num(v)).collect();
        row.push(p.value.map_or_else(|| "NaN".into(), num));
        row.push(u8::from(res.best == Some(i)).to_string());
        row.push(u8::from(p.value.is_none()).to_string());
        table.rows.push(row);
    }
    let best = res.best_point();
    let results = json!({
        "best_lambda": best.map(|b| b.lambda.clone()),
        "best_value": best.and_then(|b| b.value),
        "points": res.points.len(),
        "failures": res.failures(),
    });
    write_output(cfg, results, &table)?;
    Ok(if best.is_some() { EXIT_OK } else { EXIT_NUMERIC })
}

fn run_check(cfg: &RunConfig) -> Result<u8> {
    let ds = load(cfg)?;
    let q = cfg.model.n_hyper();
    let report = emit_fd_table(&ds, &cfg.model, &cfg.lambda_points, cfg.step)?;
    let mut header = lambda_header(q);
    header.extend(["quantity", "exact", "approx", "rel_error"].map(String::from));
    let mut table = Table::new(header);
    for r in &report.rows {
        let mut row: Vec<String> = r.lambda.iter().map(|&v| num(v)).collect();
        row.push(r.quantity.clone());
        row.extend([r.exact, r.approx, r.rel_error].map(num));
        table.rows.push(row);
    }
    let pass = report.passes(CHECK_TOLERANCE);
    let results = json!({
        "worst_rel_error": report.worst_rel_error,
        "tolerance": CHECK_TOLERANCE,
        "failed_points": report.failed,
        "pass": pass,
    });
    write_output(cfg, results, &table)?;
    eprint!("{}", report.to_text(q));
    eprintln!("worst relative error {:.3e} ({})", report.worst_rel_error, if pass { "pass" } else { "FAIL" });
    Ok(if pass { EXIT_OK } else { EXIT_NUMERIC })
}

struct BenchRow {
    method: &'static str,
    seconds: f64,
    evaluations: usize,
    lambda: Vec<f64>,
    alo: f64,
    criterion: f64,
}

fn run_bench(cfg: &RunConfig) -> Result<u8> {
    let ds = load(cfg)?;
    let model = &cfg.model;
    let q = model.n_hyper();
    let reps = cfg.repeats;
    let alo_at = |lam: &[f64]| AloObjective::new(&ds, model).value(lam);
    let mut rows = Vec::new();

    // trust region from lambda0, cold start every repeat
    let mut last = None;
    let start = Instant::now();
    for _ in 0..reps {
        let mut obj = AloObjective::new(&ds, model);
        let out = obj.minimize(&cfg.lambda0, &cfg.trust_region)?;
        last = Some((out, obj.fits()));
    }
    let (out, fits) = last.expect("at least one repeat");
    let lam: Vec<f64> = out.lambda.iter().copied().collect();
    rows.push(BenchRow {
        method: "trust_region_alo",
        seconds: start.elapsed().as_secs_f64() / reps as f64,
        evaluations: fits,
        alo: out.value,
        criterion: out.value,
        lambda: lam,
    });

    let spec = GridSpec::uniform(q, cfg.grid.min, cfg.grid.max, cfg.grid.points)?;
    let folds = make_folds(ds.n(), cfg.folds, cfg.seed)?;
    for (method, criterion) in [("grid_alo", Criterion::Alo), ("grid_kfold", Criterion::KFoldCv)] {
        let start = Instant::now();
        let mut res = None;
        for _ in 0..reps {
            res = Some(grid_search(&ds, model, &spec, criterion, Some(&folds))?);
        }
        let seconds = start.elapsed().as_secs_f64() / reps as f64;
        let res = res.expect("at least one repeat");
        let best = res
            .best_point()
            .ok_or_else(|| Error::Evaluation(format!("{method}: every grid point failed")))?;
        let fits_per_point = if criterion == Criterion::Alo { 1 } else { cfg.folds };
        rows.push(BenchRow {
            method,
            seconds,
            evaluations: res.points.len() * fits_per_point,
            alo: alo_at(&best.lambda)?,
            criterion: best.value.expect("best has a value"),
            lambda: best.lambda.clone(),
        });
    }

    let mut header = vec!["method".to_string(), "mean_seconds".into(), "fits".into()];
    header.extend(lambda_header(q));
    header.extend(["alo".to_string(), "criterion".into()]);
    let mut table = Table::new(header);
    for r in &rows {
        let mut row = vec![r.method.to_string(), num(r.seconds), r.evaluations.to_string()];
        row.extend(r.lambda.iter().map(|&v| num(v)));
        row.push(num(r.alo));
        row.push(num(r.criterion));
        table.rows.push(row);
    }
    let results = json!({
        "repeats": reps,
        "trust_region_status": status_name(out.trace.status),
        "timings": rows.iter().map(|r| json!({"method": r.method, "mean_seconds": r.seconds})).collect::<Vec<_>>(),
    });
    write_output(cfg, results, &table)?;
    Ok(EXIT_OK)
}

/// Tuned hyperparameters and held-out loss for one fold and regularizer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldResult {
    pub fold: usize,
    pub reg: &'static str,
    pub lambda: Vec<f64>,
    pub train_alo: f64,
    pub test_loss: f64,
    pub status: TerminationStatus,
}

/// Per-fold tuning. Ridge is always tuned first; other regularizers start
/// from the ridge optimum (`(lambda, 1)` for bridge, which coincides with
/// ridge, and `lambda` in every group for group ridge).
pub fn kfold_experiment(cfg: &RunConfig, raw: &Dataset) -> Result<Vec<FoldResult>> {
    let folds = make_folds(raw.n(), cfg.folds, cfg.seed)?;
    let ridge = Model::new(cfg.model.loss, Regularizer::Ridge);
    let mut out = Vec::new();
    for k in 0..folds.k {
        let (train_rows, test_rows) = folds.split(k);
        let train = prepare(cfg, &raw.subset(&train_rows))?;
        let test_raw = raw.subset(&test_rows);
        let test = if cfg.standardize {
            apply_standardization(&train, &test_raw)?
        } else if cfg.intercept {
            attach_intercept(&test_raw)?
        } else {
            test_raw
        };

        let tune = |model: &Model, start: &[f64]| -> Result<(Vec<f64>, f64, f64, TerminationStatus)> {
            let mut obj = AloObjective::new(&train, model);
            let res = obj.minimize(start, &cfg.trust_region)?;
            let lam: Vec<f64> = res.lambda.iter().copied().collect();
            let beta = obj.fit_at(&lam)?.beta;
            Ok((lam, res.value, held_out_loss(&test, model, &beta), res.trace.status))
        };

        let (rl, ralo, rtest, rstatus) = tune(&ridge, &cfg.lambda0[..1])?;
        out.push(FoldResult {
            fold: k,
            reg: "ridge",
            lambda: rl.clone(),
            train_alo: ralo,
            test_loss: rtest,
            status: rstatus,
        });
        let start = match &cfg.model.reg {
            Regularizer::Ridge => continue,
            Regularizer::Bridge { .. } => vec![rl[0].abs(), 1.0],
            Regularizer::GroupRidge { n_groups, .. } => vec![rl[0].abs(); *n_groups],
        };
        let (l, alo, test_loss, status) = tune(&cfg.model, &start)?;
        out.push(FoldResult {
            fold: k,
            reg: cfg.model.reg.name(),
            lambda: l,
            train_alo: alo,
            test_loss,
            status,
        });
    }
    Ok(out)
}

fn run_kfold(cfg: &RunConfig) -> Result<u8> {
    let raw = load_raw(cfg)?;
    let results = kfold_experiment(cfg, &raw)?;
    let q = results.iter().map(|r| r.lambda.len()).max().unwrap_or(1);
    let mut header = vec!["fold".to_string(), "reg".into()];
    header.extend(lambda_header(q));
    header.extend(["train_alo", "test_loss", "status"].map(String::from));
    let mut table = Table::new(header);
    for r in &results {
        let mut row = vec![r.fold.to_string(), r.reg.to_string()];
        row.extend((0..q).map(|i| r.lambda.get(i).map_or_else(String::new, |&v| num(v))));
        row.push(num(r.train_alo));
        row.push(num(r.test_loss));
        row.push(status_name(r.status).to_string());
        table.rows.push(row);
    }
    let mut means = serde_json::Map::new();
    for reg in ["ridge", cfg.model.reg.name()] {
        let v: Vec<f64> = results.iter().filter(|r| r.reg == reg).map(|r| r.test_loss).collect();
        means.insert(reg.to_string(), json!(v.iter().sum::<f64>() / v.len() as f64));
    }
    write_output(cfg, json!({ "mean_test_loss": means, "folds": cfg.folds }), &table)?;
    Ok(EXIT_OK)
}

/// `alo_value` at `lambda` from a cold fit; exposed for consistency checks
/// against reported optima.
pub fn recompute_alo(cfg: &RunConfig, lambda: &[f64]) -> Result<f64> {
    let ds = load(cfg)?;
    let st = crate::inner::fit(&ds, &cfg.model, lambda, None, &Default::default())?;
    alo_value(&st, &ds, cfg.model.loss)
}

/// The prepared dataset a config refers to.
pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    load(cfg)
}
