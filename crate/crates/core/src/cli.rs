//! Command-line front end: configuration merging, the subcommands and all
//! file output.
//!
//! Observations are right-continuous: an event at exactly an observation time
//! is included in that observation.
//!
//! Exit codes: 0 success or pass, 1 statistical or invariant failure,
//! 2 usage error.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::coupling::{self, TraceRow};
use crate::engine::{observation_grid, validate_horizon, EventRecord, ModelParams, Observation, Simulator};
use crate::error::{Error, Result};
use crate::regen::{self, ExcursionRecord, RegenRecord};
use crate::renewal::{self, GridFunction, GridSpec, Mode, RenewalProblem, RenewalReport};
use crate::replicate::{run_replicas, try_run_replicas};
use crate::stats::{self, EmpiricalDistribution, GoFReport, ReferenceLaw};
use crate::verify::{self, Target, VerifyConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "fitbd", version, about = "Birth-death process of types with uniform fitness marks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every simulation subcommand. Unset flags fall back to the
/// config file, then to the subcommand defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Birth rate per type.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Probability that a death kills a uniformly chosen type.
    #[arg(long)]
    pub r: Option<f64>,
    #[arg(long)]
    pub t_max: Option<f64>,
    /// Spacing of the observation grid 0, dt, 2dt, ..
    #[arg(long)]
    pub obs_dt: Option<f64>,
    #[arg(long)]
    pub replicas: Option<u64>,
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Step of the renewal grid.
    #[arg(long)]
    pub grid_dt: Option<f64>,
    /// Renewal horizon; default 10 times a pilot estimate of E R_1.
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// TOML or JSON file with any of the fields of the effective config.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate replicas and write observations on a time grid.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Summary JSON path (csv format); default `<output>.summary.json`.
        #[arg(long)]
        summary: Option<PathBuf>,
        /// Event log CSV.
        #[arg(long)]
        events: Option<PathBuf>,
    },
    /// Regeneration times of long trajectories.
    Regen {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        summary: Option<PathBuf>,
        /// Debug CSV with every excursion.
        #[arg(long)]
        excursions: Option<PathBuf>,
    },
    /// Estimate and solve the renewal equation for P(phi <= v) or P(age <= x).
    Renewal {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value = "fitness")]
        mode: String,
        /// Comma-separated thresholds v (fitness) or x (age).
        #[arg(long, value_delimiter = ',')]
        thresholds: Vec<f64>,
        /// Distribution function of R_1 as a `t,value` grid CSV.
        #[arg(long, requires_all = ["h_input", "mu"])]
        f_input: Option<PathBuf>,
        /// Inhomogeneity h as a `t,value` grid CSV.
        #[arg(long, requires_all = ["f_input", "mu"])]
        h_input: Option<PathBuf>,
        /// Mean of R_1 for grid input.
        #[arg(long, requires_all = ["f_input", "h_input"])]
        mu: Option<f64>,
        /// Directory receiving F.csv and the h and H grids.
        #[arg(long)]
        grid_out: Option<PathBuf>,
    },
    /// Coupled runs of the r-process and the all-random process.
    Couple {
        #[command(flatten)]
        common: CommonArgs,
        /// Per-event trace CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        population_cap: Option<usize>,
    },
    /// Run the checks of one target; exit 1 when any check fails.
    Verify {
        /// thm1a, thm2b, thm3, thm4, regen, stationary, coupling, r1law,
        /// amended, growth, calibration or determinism.
        target: String,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Age quantiles of the fittest type for r > 0 and lambda > 1.
    ExploreConjecture {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        summary: Option<PathBuf>,
        #[arg(long)]
        population_cap: Option<usize>,
    },
    /// Goodness-of-fit of a sample column against a named reference law.
    Gof {
        /// CSV whose first column holds the sample.
        #[arg(long)]
        input: PathBuf,
        /// uniform, exp:RATE, power:K or logseries:LAMBDA.
        #[arg(long)]
        law: String,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    lambda: Option<f64>,
    r: Option<f64>,
    #[serde(alias = "t-max")]
    t_max: Option<f64>,
    #[serde(alias = "obs-dt")]
    obs_dt: Option<f64>,
    replicas: Option<u64>,
    seed: Option<u64>,
    workers: Option<usize>,
    #[serde(alias = "grid-dt")]
    grid_dt: Option<f64>,
    horizon: Option<f64>,
    output: Option<PathBuf>,
    format: Option<Format>,
}

impl ConfigFile {
    fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let bad = |e: String| Error::Usage(format!("bad config {}: {e}", path.display()));
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).map_err(|e| bad(e.to_string())),
            Some("toml") => toml::from_str(&text).map_err(|e| bad(e.to_string())),
            _ => toml::from_str(&text)
                .or_else(|_| serde_json::from_str(&text))
                .map_err(|e: serde_json::Error| bad(e.to_string())),
        }
    }
}

/// Effective configuration of one run, echoed in every JSON output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub lambda: f64,
    pub r: f64,
    pub t_max: f64,
    pub obs_dt: f64,
    pub replicas: u64,
    pub seed: u64,
    pub workers: usize,
    pub grid_dt: f64,
    pub horizon: Option<f64>,
    pub output: Option<PathBuf>,
    pub format: Format,
}

const DEFAULT_SEED: u64 = 20240601;

impl RunConfig {
    fn base(lambda: f64, r: f64, t_max: f64, replicas: u64, format: Format) -> Self {
        Self {
            lambda,
            r,
            t_max,
            obs_dt: 1.0,
            replicas,
            seed: DEFAULT_SEED,
            workers: 1,
            grid_dt: 0.1,
            horizon: None,
            output: None,
            format,
        }
    }

    /// Built-in defaults of a subcommand.
    pub fn defaults(command: &str) -> Self {
        match command {
            "regen" => Self::base(0.5, 0.5, 1000.0, 1, Format::Csv),
            "renewal" => Self::base(0.5, 0.5, 10.0, 10_000, Format::Json),
            "couple" => Self::base(2.0, 0.5, 20.0, 1000, Format::Json),
            "explore-conjecture" => Self::base(1.5, 0.5, 12.0, 200, Format::Csv),
            _ => Self::base(0.5, 0.0, 10.0, 10, Format::Csv),
        }
    }

    pub fn verify_defaults(target: Target) -> Self {
        let v = target.defaults();
        Self {
            lambda: v.lambda,
            r: v.r,
            t_max: v.t_max,
            obs_dt: 1.0,
            replicas: v.replicas,
            seed: v.seed,
            workers: v.workers,
            grid_dt: v.grid_dt,
            horizon: v.horizon,
            output: None,
            format: Format::Json,
        }
    }

    /// Flags over config file over `defaults`.
    pub fn resolve(args: &CommonArgs, defaults: Self) -> Result<Self> {
        let file = match &args.config {
            Some(p) => ConfigFile::load(p)?,
            None => ConfigFile::default(),
        };
        let d = defaults;
        let cfg = Self {
            lambda: args.lambda.or(file.lambda).unwrap_or(d.lambda),
            r: args.r.or(file.r).unwrap_or(d.r),
            t_max: args.t_max.or(file.t_max).unwrap_or(d.t_max),
            obs_dt: args.obs_dt.or(file.obs_dt).unwrap_or(d.obs_dt),
            replicas: args.replicas.or(file.replicas).unwrap_or(d.replicas),
            seed: args.seed.or(file.seed).unwrap_or(d.seed),
            workers: args.workers.or(file.workers).unwrap_or(d.workers),
            grid_dt: args.grid_dt.or(file.grid_dt).unwrap_or(d.grid_dt),
            horizon: args.horizon.or(file.horizon).or(d.horizon),
            output: args.output.clone().or(file.output).or(d.output),
            format: args.format.or(file.format).unwrap_or(d.format),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        ModelParams::new(self.lambda, self.r)?;
        validate_horizon(self.t_max, &[])?;
        if self.replicas == 0 {
            return Err(Error::Usage("replicas must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::Usage("workers must be at least 1".into()));
        }
        for (name, v) in [("obs-dt", self.obs_dt), ("grid-dt", self.grid_dt)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Usage(format!("{name} must be positive, got {v}")));
            }
        }
        if let Some(h) = self.horizon {
            if !(h.is_finite() && h > 0.0) {
                return Err(Error::Usage(format!("horizon must be positive, got {h}")));
            }
        }
        Ok(())
    }

    pub fn params(&self) -> Result<ModelParams> {
        ModelParams::new(self.lambda, self.r)
    }

    fn verify_config(&self) -> VerifyConfig {
        VerifyConfig {
            lambda: self.lambda,
            r: self.r,
            t_max: self.t_max,
            replicas: self.replicas,
            seed: self.seed,
            workers: self.workers,
            grid_dt: self.grid_dt,
            horizon: self.horizon,
        }
    }
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code. Errors are reported on stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                2
            } else {
                1
            }
        }
    }
}

/// Runs one subcommand; `Ok(false)` means a check failed.
pub fn dispatch(command: Command) -> Result<bool> {
    match command {
        Command::Simulate { common, summary, events } => {
            let cfg = RunConfig::resolve(&common, RunConfig::defaults("simulate"))?;
            run_simulate(&cfg, summary.as_deref(), events.as_deref())
        }
        Command::Regen { common, summary, excursions } => {
            let cfg = RunConfig::resolve(&common, RunConfig::defaults("regen"))?;
            run_regen(&cfg, summary.as_deref(), excursions.as_deref())
        }
        Command::Renewal { common, mode, thresholds, f_input, h_input, mu, grid_out } => {
            let cfg = RunConfig::resolve(&common, RunConfig::defaults("renewal"))?;
            let mode: Mode = mode.parse()?;
            let grid_input = match (f_input, h_input, mu) {
                (Some(f), Some(h), Some(mu)) => Some((f, h, mu)),
                _ => None,
            };
            run_renewal(&cfg, mode, &thresholds, grid_input, grid_out.as_deref())
        }
        Command::Couple { common, trace, population_cap } => {
            let cfg = RunConfig::resolve(&common, RunConfig::defaults("couple"))?;
            run_couple(&cfg, population_cap.unwrap_or(verify::COUPLING_CAP), trace.as_deref())
        }
        Command::Verify { target, common } => {
            let target: Target = target.parse()?;
            let cfg = RunConfig::resolve(&common, RunConfig::verify_defaults(target))?;
            run_verify(&cfg, target)
        }
        Command::ExploreConjecture { common, summary, population_cap } => {
            let cfg = RunConfig::resolve(&common, RunConfig::defaults("explore-conjecture"))?;
            run_explore(&cfg, population_cap.unwrap_or(20_000), summary.as_deref())
        }
        Command::Gof { input, law, output } => run_gof(&input, &law, output.as_deref()),
    }
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json(path: Option<&Path>, value: &Value) -> Result<()> {
    let mut w = sink(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn write_rows<S: Serialize>(path: Option<&Path>, rows: impl IntoIterator<Item = S>) -> Result<()> {
    let mut wr = csv::Writer::from_writer(sink(path)?);
    for row in rows {
        wr.serialize(row)?;
    }
    wr.flush()?;
    Ok(())
}

fn envelope(command: &str, cfg: &impl Serialize, payload: Value) -> Value {
    let mut out = json!({ "schema_version": SCHEMA_VERSION, "command": command, "config": cfg });
    if let (Some(o), Value::Object(p)) = (out.as_object_mut(), payload) {
        o.extend(p);
    }
    out
}

/// Summary path for csv output: explicit, or next to the main output.
fn summary_path(cfg: &RunConfig, explicit: Option<&Path>) -> Option<PathBuf> {
    explicit.map(Path::to_path_buf).or_else(|| {
        cfg.output.as_ref().map(|o| {
            let mut s = o.clone().into_os_string();
            s.push(".summary.json");
            PathBuf::from(s)
        })
    })
}

#[derive(Serialize)]
struct ObservationRow {
    replica: u64,
    t: f64,
    #[serde(rename = "X")]
    x: u64,
    phi: f64,
    age: f64,
    births: u64,
}

impl ObservationRow {
    fn new(replica: u64, o: &Observation) -> Self {
        Self { replica, t: o.time, x: o.x, phi: o.phi, age: o.age, births: o.births }
    }
}

#[derive(Serialize)]
struct EventRow {
    replica: u64,
    time: f64,
    kind: &'static str,
    subject_id: u64,
    fitness: f64,
    population_after: u64,
}

fn describe(values: Vec<f64>) -> Value {
    match EmpiricalDistribution::new(values) {
        Ok(e) => json!({
            "mean": e.mean(),
            "q05": e.quantile(0.05),
            "q25": e.quantile(0.25),
            "q50": e.quantile(0.5),
            "q75": e.quantile(0.75),
            "q95": e.quantile(0.95),
        }),
        Err(_) => Value::Null,
    }
}

/// Mean and quantiles of X, phi and age at each grid time.
fn observation_summary(grid: &[f64], paths: &[Vec<Observation>]) -> Value {
    let rows: Vec<Value> = grid
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let at: Vec<&Observation> = paths.iter().filter_map(|p| p.get(j)).collect();
            json!({
                "t": t,
                "n": at.len(),
                "X": describe(at.iter().map(|o| o.x as f64).collect()),
                "phi": describe(at.iter().map(|o| o.phi).collect()),
                "age": describe(at.iter().map(|o| o.age).collect()),
            })
        })
        .collect();
    Value::Array(rows)
}

pub fn run_simulate(cfg: &RunConfig, summary: Option<&Path>, events: Option<&Path>) -> Result<bool> {
    let params = cfg.params()?;
    let grid = observation_grid(cfg.t_max, cfg.obs_dt);
    let keep_events = events.is_some();
    let runs = run_replicas(cfg.replicas, cfg.workers, |i| {
        let mut sim = Simulator::new(params, cfg.seed, i, 0.0);
        let mut obs = Vec::with_capacity(grid.len());
        let mut log: Vec<EventRecord> = Vec::new();
        sim.run(
            cfg.t_max,
            &grid,
            |ev, _| {
                if keep_events {
                    log.push(*ev);
                }
                ControlFlow::Continue(())
            },
            |o| obs.push(o),
        );
        (obs, log)
    })?;
    if let Some(path) = events {
        let rows = runs.iter().enumerate().flat_map(|(i, (_, log))| {
            log.iter().map(move |e| EventRow {
                replica: i as u64,
                time: e.time,
                kind: e.kind.as_str(),
                subject_id: e.subject_id,
                fitness: e.fitness,
                population_after: e.population_after,
            })
        });
        write_rows(Some(path), rows)?;
    }
    let paths: Vec<Vec<Observation>> = runs.into_iter().map(|(o, _)| o).collect();
    let summary_json = envelope("simulate", cfg, json!({ "times": observation_summary(&grid, &paths) }));
    match cfg.format {
        Format::Csv => {
            let rows = paths
                .iter()
                .enumerate()
                .flat_map(|(i, p)| p.iter().map(move |o| ObservationRow::new(i as u64, o)));
            write_rows(cfg.output.as_deref(), rows)?;
            if let Some(p) = summary_path(cfg, summary) {
                write_json(Some(&p), &summary_json)?;
            }
        }
        Format::Json => {
            let mut out = summary_json;
            out["observations"] = serde_json::to_value(
                paths
                    .iter()
                    .enumerate()
                    .flat_map(|(i, p)| p.iter().map(move |o| ObservationRow::new(i as u64, o)))
                    .collect::<Vec<_>>(),
            )?;
            write_json(cfg.output.as_deref(), &out)?;
        }
    }
    Ok(true)
}

#[derive(Serialize)]
struct RegenRow {
    replica: u64,
    n: u64,
    #[serde(rename = "R_n")]
    r_n: f64,
    phi: f64,
    age: f64,
}

#[derive(Serialize)]
struct ExcursionRow {
    replica: u64,
    n: u64,
    xi: f64,
    eta: f64,
    outcome: &'static str,
    epsilon: u8,
}

pub fn run_regen(cfg: &RunConfig, summary: Option<&Path>, excursions: Option<&Path>) -> Result<bool> {
    let params = cfg.params()?;
    let runs = try_run_replicas(cfg.replicas, cfg.workers, |i| regen::regenerations_for_replica(params, cfg.t_max, cfg.seed, i))?;

    let regens: Vec<(u64, &RegenRecord)> =
        runs.iter().enumerate().flat_map(|(i, (_, rs))| rs.iter().map(move |r| (i as u64, r))).collect();
    let excs: Vec<(u64, &ExcursionRecord)> = runs
        .iter()
        .enumerate()
        .flat_map(|(i, (scan, _))| scan.excursions.iter().map(move |e| (i as u64, e)))
        .collect();
    if let Some(path) = excursions {
        write_rows(
            Some(path),
            excs.iter().map(|(i, e)| ExcursionRow {
                replica: *i,
                n: e.n,
                xi: e.xi,
                eta: e.eta,
                outcome: e.outcome.as_str(),
                epsilon: u8::from(e.epsilon),
            }),
        )?;
    }

    let rows: Vec<RegenRow> = regens
        .iter()
        .map(|(i, r)| RegenRow { replica: *i, n: r.n, r_n: r.time, phi: r.phi_at_r, age: r.age_at_r })
        .collect();
    let gaps: Vec<f64> = runs
        .iter()
        .flat_map(|(_, rs)| {
            let mut prev = 0.0;
            rs.iter().map(move |r| {
                let g = r.time - prev;
                prev = r.time;
                g
            })
        })
        .collect();
    // null below the KS minimum sample size
    let gof = |xs: Vec<f64>, law: ReferenceLaw| -> Option<GoFReport> { stats::ks_statistic(&xs, law).ok() };
    let age_rate = 2.0 * (params.lambda() + 1.0);
    let eps = excs.iter().filter(|(_, e)| e.epsilon).count();
    let payload = json!({
        "regenerations": rows.len(),
        "excursions": excs.len(),
        "censored_excursions": runs.iter().map(|(s, _)| s.censored).sum::<usize>(),
        "epsilon_fraction": if excs.is_empty() { f64::NAN } else { eps as f64 / excs.len() as f64 },
        "bernoulli_p": regen::bernoulli_p(&params),
        "mean_cycle": if gaps.is_empty() { f64::NAN } else { gaps.iter().sum::<f64>() / gaps.len() as f64 },
        "ks_phi_uniform": gof(rows.iter().map(|r| r.phi).collect(), ReferenceLaw::Uniform),
        "ks_age_exponential": gof(rows.iter().map(|r| r.age).collect(), ReferenceLaw::Exponential { rate: age_rate }),
    });
    let mut summary_json = envelope("regen", cfg, payload);
    match cfg.format {
        Format::Csv => {
            write_rows(cfg.output.as_deref(), &rows)?;
            if let Some(p) = summary_path(cfg, summary) {
                write_json(Some(&p), &summary_json)?;
            }
        }
        Format::Json => {
            summary_json["rows"] = serde_json::to_value(&rows)?;
            write_json(cfg.output.as_deref(), &summary_json)?;
        }
    }
    Ok(true)
}

fn write_grid(dir: &Path, name: &str, g: &GridFunction) -> Result<()> {
    g.write_csv(BufWriter::new(File::create(dir.join(name))?))
}

pub fn run_renewal(
    cfg: &RunConfig,
    mode: Mode,
    thresholds: &[f64],
    grid_input: Option<(PathBuf, PathBuf, f64)>,
    grid_out: Option<&Path>,
) -> Result<bool> {
    if let Some(dir) = grid_out {
        fs::create_dir_all(dir)?;
    }
    let (reports, extra) = match grid_input {
        Some((f_path, h_path, mu)) => {
            let open = |p: &Path| File::open(p).map_err(|e| Error::Usage(format!("cannot read {}: {e}", p.display())));
            let f = GridFunction::read_csv(open(&f_path)?)?;
            let h = GridFunction::read_csv(open(&h_path)?)?;
            let problem = RenewalProblem::new(f, h, mu)?;
            let big_h = renewal::solve_renewal(&problem)?;
            let limit = renewal::limit_value(&problem.h, mu)?;
            if let Some(dir) = grid_out {
                write_grid(dir, "H.csv", &big_h)?;
            }
            let report = RenewalReport {
                v_or_x: thresholds.first().copied().unwrap_or(f64::NAN),
                limit,
                limit_std_error: f64::NAN,
                h_at_horizon: big_h.last(),
                mu_hat: mu,
                censored_fraction: 0.0,
            };
            (vec![report], json!({ "source": "grid", "horizon": big_h.horizon() }))
        }
        None => {
            let params = cfg.params()?;
            let thresholds: Vec<f64> = if thresholds.is_empty() {
                match mode {
                    Mode::Fitness => verify::FITNESS_THRESHOLDS.to_vec(),
                    Mode::Age => verify::AGE_THRESHOLDS.to_vec(),
                }
            } else {
                thresholds.to_vec()
            };
            let horizon = match cfg.horizon {
                Some(h) => h,
                None => verify::pilot_horizon(
                    params,
                    cfg.grid_dt,
                    crate::rng::substream_seed(cfg.seed, "renewal/pilot", 0),
                    cfg.workers,
                )?,
            };
            let inputs = renewal::estimate_h(
                params,
                &thresholds,
                mode,
                GridSpec { dt: cfg.grid_dt, horizon },
                cfg.replicas,
                crate::rng::substream_seed(cfg.seed, "renewal/h", 0),
                cfg.workers,
            )?;
            let solved = renewal::renewal_reports(&inputs)?;
            if let Some(dir) = grid_out {
                write_grid(dir, "F.csv", &inputs.f)?;
                for (i, (_, big_h)) in solved.iter().enumerate() {
                    write_grid(dir, &format!("h_{i}.csv"), &inputs.h[i])?;
                    write_grid(dir, &format!("H_{i}.csv"), big_h)?;
                }
            }
            let reports = solved.into_iter().map(|(r, _)| r).collect();
            (reports, json!({ "source": "simulation", "mode": mode, "horizon": horizon }))
        }
    };
    match cfg.format {
        Format::Csv => write_rows(cfg.output.as_deref(), &reports)?,
        Format::Json => {
            let mut payload = extra;
            payload["reports"] = serde_json::to_value(&reports)?;
            write_json(cfg.output.as_deref(), &envelope("renewal", cfg, payload))?;
        }
    }
    Ok(true)
}

#[derive(Serialize)]
struct CoupleRow {
    replica: u64,
    events: usize,
    stop_time: f64,
    reached_cap: bool,
    max_f1: f64,
    max_fr: f64,
    min_gap: f64,
}

#[derive(Serialize)]
struct TraceCsvRow {
    replica: u64,
    time: f64,
    #[serde(rename = "X")]
    x: usize,
    max_f1: f64,
    max_fr: f64,
}

pub fn run_couple(cfg: &RunConfig, population_cap: usize, trace: Option<&Path>) -> Result<bool> {
    let params = cfg.params()?;
    let keep = trace.is_some();
    let runs = run_replicas(cfg.replicas, cfg.workers, |i| {
        coupling::coupled_simulate(params, cfg.t_max, cfg.seed, i, Some(population_cap), keep)
    })?;
    let mut ok = Vec::new();
    let mut violations = Vec::new();
    for (i, r) in runs.into_iter().enumerate() {
        match r {
            Ok(run) => ok.push((i as u64, run)),
            Err(Error::OrderViolation(msg)) => violations.push(json!({ "replica": i, "detail": msg })),
            Err(e) => return Err(e),
        }
    }
    if let Some(path) = trace {
        let rows = ok.iter().flat_map(|(i, run)| {
            run.trace.iter().flatten().map(move |t: &TraceRow| TraceCsvRow {
                replica: *i,
                time: t.time,
                x: t.x,
                max_f1: t.max_f1,
                max_fr: t.max_fr,
            })
        });
        write_rows(Some(path), rows)?;
    }
    let f1: Vec<f64> = ok.iter().map(|(_, r)| r.max_f1).collect();
    let fr: Vec<f64> = ok.iter().map(|(_, r)| r.max_fr).collect();
    let gap_min = ok.iter().map(|(_, r)| r.min_gap).fold(f64::INFINITY, f64::min);
    let pass = violations.is_empty();
    match cfg.format {
        Format::Csv => write_rows(
            cfg.output.as_deref(),
            ok.iter().map(|(i, r)| CoupleRow {
                replica: *i,
                events: r.events,
                stop_time: r.stop_time,
                reached_cap: r.reached_cap,
                max_f1: r.max_f1,
                max_fr: r.max_fr,
                min_gap: r.min_gap,
            }),
        )?,
        Format::Json => {
            let payload = json!({
                "violations": violations.len(),
                "dominance_gap_min": gap_min,
                "replicas": cfg.replicas,
                "t_max": cfg.t_max,
                "population_cap": population_cap,
                "stopped_at_cap": ok.iter().filter(|(_, r)| r.reached_cap).count(),
                "dominance_excess": if f1.is_empty() { f64::NAN } else { coupling::dominance_excess(&f1, &fr) },
                "violation_details": violations,
            });
            write_json(cfg.output.as_deref(), &envelope("couple", cfg, payload))?;
        }
    }
    Ok(pass)
}

#[derive(Serialize)]
struct CheckRow<'a> {
    target: &'a str,
    name: &'a str,
    pass: bool,
    statistic: Option<f64>,
    threshold: Option<f64>,
    n: Option<u64>,
    detail: Option<&'a str>,
}

pub fn run_verify(cfg: &RunConfig, target: Target) -> Result<bool> {
    let verdict = verify::run_target(target, &cfg.verify_config())?;
    for c in verdict.failed_checks() {
        log::warn!("{target}: failed check `{}`", c.name);
    }
    match cfg.format {
        Format::Csv => write_rows(
            cfg.output.as_deref(),
            verdict.checks.iter().map(|c| CheckRow {
                target: target.as_str(),
                name: &c.name,
                pass: c.pass,
                statistic: c.statistic,
                threshold: c.threshold,
                n: c.n,
                detail: c.detail.as_deref(),
            }),
        )?,
        Format::Json => {
            let payload = json!({
                "target": target,
                "pass": verdict.pass,
                "checks": verdict.checks,
                "data": verdict.data,
            });
            write_json(cfg.output.as_deref(), &envelope("verify", cfg, payload))?;
        }
    }
    Ok(verdict.pass)
}

pub fn run_explore(cfg: &RunConfig, population_cap: usize, summary: Option<&Path>) -> Result<bool> {
    let params = cfg.params()?;
    let (paths, rows) =
        verify::explore_conjecture(params, cfg.t_max, cfg.obs_dt, cfg.replicas, cfg.seed, cfg.workers, population_cap)?;
    let mut summary_json = envelope("explore-conjecture", cfg, json!({ "population_cap": population_cap, "rows": rows }));
    match cfg.format {
        Format::Csv => {
            let obs = paths
                .iter()
                .enumerate()
                .flat_map(|(i, p)| p.iter().map(move |o| ObservationRow::new(i as u64, o)));
            write_rows(cfg.output.as_deref(), obs)?;
            if let Some(p) = summary_path(cfg, summary) {
                write_json(Some(&p), &summary_json)?;
            }
        }
        Format::Json => {
            summary_json["observations"] = serde_json::to_value(
                paths
                    .iter()
                    .enumerate()
                    .flat_map(|(i, p)| p.iter().map(move |o| ObservationRow::new(i as u64, o)))
                    .collect::<Vec<_>>(),
            )?;
            write_json(cfg.output.as_deref(), &summary_json)?;
        }
    }
    Ok(true)
}

/// KS against continuous laws, chi-square against the log-series law.
pub fn run_gof(input: &Path, law: &str, output: Option<&Path>) -> Result<bool> {
    let law: ReferenceLaw = law.parse()?;
    let file = File::open(input).map_err(|e| Error::Usage(format!("cannot read {}: {e}", input.display())))?;
    let mut rd = csv::Reader::from_reader(file);
    let mut xs = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let field = rec.get(0).unwrap_or("");
        let x: f64 = field
            .trim()
            .parse()
            .map_err(|e| Error::Usage(format!("non-numeric sample `{field}` in {}: {e}", input.display())))?;
        xs.push(x);
    }
    if xs.is_empty() {
        return Err(Error::Usage(format!("{} holds no samples", input.display())));
    }
    let report = match law {
        ReferenceLaw::LogSeries { lambda } => {
            let mut counts = Vec::new();
            for &x in &xs {
                if !(x >= 1.0 && x.fract() == 0.0) {
                    return Err(Error::Usage(format!("log-series samples must be positive integers, got {x}")));
                }
                let k = x as usize - 1;
                if counts.len() <= k {
                    counts.resize(k + 1, 0);
                }
                counts[k] += 1;
            }
            stats::chi_square_gof(&counts, 1, |n| stats::logseries_pmf(lambda, n).unwrap_or(0.0), &law.to_string())?
        }
        _ => stats::ks_statistic(&xs, law)?,
    };
    let pass = report.pass;
    write_json(output, &envelope("gof", &json!({ "input": input, "law": law.to_string() }), json!({ "report": report })))?;
    Ok(pass)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Command {
        Cli::try_parse_from(std::iter::once("fitbd").chain(args.iter().copied())).unwrap().command
    }

    #[test]
    fn flags_parse_with_hyphens() {
        match parse(&["simulate", "--lambda", "0.7", "--t-max", "3", "--obs-dt", "0.5", "--format", "json"]) {
            Command::Simulate { common, .. } => {
                assert_eq!(common.lambda, Some(0.7));
                assert_eq!(common.t_max, Some(3.0));
                assert_eq!(common.obs_dt, Some(0.5));
                assert_eq!(common.format, Some(Format::Json));
            }
            _ => panic!("wrong subcommand"),
        }
        assert!(Cli::try_parse_from(["fitbd", "simulate", "--bogus"]).is_err());
    }

    #[test]
    fn precedence_flag_file_default() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "lambda = 0.3\nr = 0.2\nreplicas = 4\n").unwrap();
        let args = CommonArgs { lambda: Some(0.9), config: Some(path), ..Default::default() };
        let cfg = RunConfig::resolve(&args, RunConfig::defaults("simulate")).unwrap();
        assert_eq!(cfg.lambda, 0.9);
        assert_eq!(cfg.r, 0.2);
        assert_eq!(cfg.replicas, 4);
        assert_eq!(cfg.t_max, RunConfig::defaults("simulate").t_max);
    }

    #[test]
    fn json_config_and_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("c.json");
        fs::write(&good, r#"{"t_max": 2.5, "format": "json", "horizon": null}"#).unwrap();
        let cfg = RunConfig::resolve(&CommonArgs { config: Some(good), ..Default::default() }, RunConfig::defaults("regen")).unwrap();
        assert_eq!(cfg.t_max, 2.5);
        assert_eq!(cfg.format, Format::Json);

        let bad = dir.path().join("b.toml");
        fs::write(&bad, "lamda = 0.3\n").unwrap();
        let err = RunConfig::resolve(&CommonArgs { config: Some(bad), ..Default::default() }, RunConfig::defaults("regen"));
        assert!(err.unwrap_err().is_usage());
    }

    #[test]
    fn invalid_values_are_usage_errors() {
        let d = || RunConfig::defaults("simulate");
        for args in [
            CommonArgs { t_max: Some(0.0), ..Default::default() },
            CommonArgs { replicas: Some(0), ..Default::default() },
            CommonArgs { workers: Some(0), ..Default::default() },
            CommonArgs { lambda: Some(-1.0), ..Default::default() },
            CommonArgs { r: Some(1.5), ..Default::default() },
            CommonArgs { obs_dt: Some(0.0), ..Default::default() },
        ] {
            assert!(RunConfig::resolve(&args, d()).unwrap_err().is_usage());
        }
    }

    #[test]
    fn summary_path_defaults_next_to_output() {
        let mut cfg = RunConfig::defaults("simulate");
        assert_eq!(summary_path(&cfg, None), None);
        cfg.output = Some(PathBuf::from("out/obs.csv"));
        assert_eq!(summary_path(&cfg, None), Some(PathBuf::from("out/obs.csv.summary.json")));
        assert_eq!(summary_path(&cfg, Some(Path::new("s.json"))), Some(PathBuf::from("s.json")));
    }

    #[test]
    fn verify_defaults_follow_target() {
        let cfg = RunConfig::verify_defaults(Target::Thm2b);
        assert_eq!(cfg.lambda, 2.0);
        assert_eq!(cfg.r, 0.0);
        assert_eq!(cfg.format, Format::Json);
    }
}
