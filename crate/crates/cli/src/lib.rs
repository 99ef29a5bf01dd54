//! Command implementations behind the `gdro` binary.
//!
//! * `gen`: write a synthetic dataset (and optionally a held-out twin).
//! * `run`: run one solver over several seeds as described by a JSON config.
//! * `gap`: duality gap of a saved solution.
//! * `compare`: several solvers at a shared gradient budget, median curves.
//!
//! Seeds run in parallel on a rayon pool capped by `GDRO_THREADS`. Workers
//! only compute; every file is written afterwards by the calling thread.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use gdro_core::datagen::{self, SynthKind, SynthSpec};
use gdro_core::format::{load_dataset, save_dataset, Format};
use gdro_core::metrics::{self, GapReport, OracleConfig};
use gdro_core::solvers::{
    self, aleg_grad_evals, mpvr_grad_evals, AlegConfig, AlemConfig, MpvrConfig, RunRecord, Sampling, SmdConfig,
};
use gdro_core::{EvalCounter, Geometry, GroupedDataset, LossModel, Point, Problem};

#[derive(Debug, Parser)]
#[command(name = "gdro", version, about = "Solvers and benchmarks for empirical group DRO and MERO")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic grouped dataset.
    Gen(GenArgs),
    /// Run one solver as described by a JSON config file.
    Run(RunArgs),
    /// Duality gap of a saved solution.
    Gap(GapArgs),
    /// Compare solvers at a shared gradient-evaluation budget.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub kind: SynthKind,
    #[arg(long)]
    pub m: usize,
    #[arg(long)]
    pub dim: usize,
    /// Samples per group.
    #[arg(long, default_value_t = datagen::DEFAULT_N_PER_GROUP)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a held-out set of the same size.
    #[arg(long)]
    pub test_out: Option<PathBuf>,
    #[arg(long, default_value = "text")]
    pub format: Format,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    pub config: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct GapArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub solution: PathBuf,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 100_000)]
    pub max_iters: u64,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated: aleg, alem, smd, mpvr-uniform, mpvr-importance.
    #[arg(long, value_delimiter = ',')]
    pub algos: Vec<String>,
    /// Cap on gradient evaluations per run.
    #[arg(long)]
    pub budget: u64,
    /// Seeds 0..k.
    #[arg(long)]
    pub seeds: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub radius: f64,
    /// Points on the shared gradient-evaluation grid.
    #[arg(long, default_value_t = 101)]
    pub grid: usize,
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(a) => {
            let s = cmd_gen(&a)?;
            println!("{}", serde_json::to_string(&s)?);
        }
        Command::Run(a) => {
            let s = cmd_run(&a.config)?;
            println!("{}", serde_json::to_string(&s.brief())?);
        }
        Command::Gap(a) => {
            let r = cmd_gap(&a)?;
            println!("{}", serde_json::to_string_pretty(&r)?);
        }
        Command::Compare(a) => {
            let v = cmd_compare(&a)?;
            println!("{}", serde_json::to_string(&v)?);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSummary {
    pub m: usize,
    pub dim: usize,
    pub n_bar: f64,
    pub bytes: u64,
}

pub fn cmd_gen(a: &GenArgs) -> Result<GenSummary> {
    let mut spec = SynthSpec::new(a.kind, a.m, a.dim, a.n, a.seed);
    if a.test_out.is_some() {
        spec = spec.with_test();
    }
    let data = datagen::generate(&spec)?;
    save_dataset(&data.train, &a.out, a.format).with_context(|| format!("writing {}", a.out.display()))?;
    let mut bytes = fs::metadata(&a.out)?.len();
    if let (Some(path), Some(test)) = (&a.test_out, &data.test) {
        save_dataset(test, path, a.format).with_context(|| format!("writing {}", path.display()))?;
        bytes += fs::metadata(path)?.len();
    }
    Ok(GenSummary { m: data.train.m(), dim: data.train.dim(), n_bar: data.train.n_bar(), bytes })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Algo {
    #[serde(rename = "aleg")]
    Aleg,
    #[serde(rename = "alem")]
    Alem,
    #[serde(rename = "smd")]
    Smd,
    #[serde(rename = "mpvr-uniform")]
    MpvrUniform,
    #[serde(rename = "mpvr-importance")]
    MpvrImportance,
}

impl Algo {
    pub fn name(self) -> &'static str {
        match self {
            Algo::Aleg => "aleg",
            Algo::Alem => "alem",
            Algo::Smd => "smd",
            Algo::MpvrUniform => "mpvr-uniform",
            Algo::MpvrImportance => "mpvr-importance",
        }
    }

    fn block(self) -> &'static str {
        match self {
            Algo::MpvrUniform | Algo::MpvrImportance => "mpvr",
            other => other.name(),
        }
    }
}

impl std::str::FromStr for Algo {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.trim().to_string()))
            .map_err(|_| anyhow!("unknown algo {s:?} (expected aleg, alem, smd, mpvr-uniform or mpvr-importance)"))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlegBlock {
    pub epochs: usize,
    /// Defaults to `round(n_bar)`.
    pub inner: Option<usize>,
    pub theta: Option<f64>,
    pub eta_override: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlemBlock {
    pub budget: u64,
    pub stage1_theta: Option<f64>,
    /// Stage-2 schedule; defaults to the stage-1 schedule.
    pub stage2: Option<AlegBlock>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmdBlock {
    pub steps: usize,
    pub eta0: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpvrBlock {
    pub epochs: usize,
    /// Defaults to `m n_bar`.
    pub inner: Option<usize>,
    /// Defaults to `1 - 1 / K`.
    pub alpha: Option<f64>,
    pub gamma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryBlock {
    pub radius: f64,
}

/// A `run` configuration. Relative paths resolve against the config file's
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algo: Algo,
    pub dataset: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aleg: Option<AlegBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alem: Option<AlemBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smd: Option<SmdBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mpvr: Option<MpvrBlock>,
    pub geometry: GeometryBlock,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub record_every: usize,
    pub output: PathBuf,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let present: Vec<&str> = [
            ("aleg", self.aleg.is_some()),
            ("alem", self.alem.is_some()),
            ("smd", self.smd.is_some()),
            ("mpvr", self.mpvr.is_some()),
        ]
        .iter()
        .filter(|(_, p)| *p)
        .map(|(n, _)| *n)
        .collect();
        let want = self.algo.block();
        if present != [want] {
            bail!(
                "algo {:?} needs exactly one algorithm block `{want}`, found [{}]",
                self.algo.name(),
                present.join(", ")
            );
        }
        if self.seeds.is_empty() {
            bail!("field `seeds`: at least one seed is required");
        }
        if !(self.geometry.radius.is_finite() && self.geometry.radius > 0.0) {
            bail!("field `geometry.radius`: must be positive, got {}", self.geometry.radius);
        }
        Ok(())
    }
}

/// A solver plus everything resolved from the dataset, ready to run per seed.
#[derive(Debug, Clone)]
pub enum SolverPlan {
    Aleg(AlegConfig),
    Alem(AlemConfig),
    Smd(SmdConfig),
    Mpvr(MpvrConfig),
}

impl SolverPlan {
    pub fn from_config(cfg: &ExperimentConfig, ds: &GroupedDataset) -> Result<Self> {
        let aleg_cfg = |b: &AlegBlock| {
            let mut c = AlegConfig::with_default_inner(b.epochs, ds.n_bar(), 0);
            if let Some(k) = b.inner {
                c.inner = k;
            }
            if let Some(t) = b.theta {
                c.theta = t;
            }
            c.eta_override = b.eta_override;
            c
        };
        Ok(match cfg.algo {
            Algo::Aleg => SolverPlan::Aleg(aleg_cfg(cfg.aleg.as_ref().expect("validated"))),
            Algo::Alem => {
                let b = cfg.alem.as_ref().expect("validated");
                let mut c = AlemConfig::new(b.budget, ds.n_bar(), 0);
                if let Some(t) = b.stage1_theta {
                    c.stage1_theta = t;
                }
                if let Some(s2) = &b.stage2 {
                    c.stage2 = aleg_cfg(s2);
                }
                SolverPlan::Alem(c)
            }
            Algo::Smd => {
                let b = cfg.smd.as_ref().expect("validated");
                SolverPlan::Smd(SmdConfig { steps: b.steps, eta0: b.eta0, seed: 0 })
            }
            Algo::MpvrUniform | Algo::MpvrImportance => {
                let b = cfg.mpvr.as_ref().expect("validated");
                let sampling = if cfg.algo == Algo::MpvrUniform { Sampling::Uniform } else { Sampling::Importance };
                let mut c = MpvrConfig::new(b.epochs, b.inner.unwrap_or(ds.total()), sampling, 0);
                if let Some(a) = b.alpha {
                    c.alpha = a;
                }
                if let Some(g) = b.gamma {
                    c.gamma = g;
                }
                SolverPlan::Mpvr(c)
            }
        })
    }

    pub fn run(&self, problem: &Problem, geom: &Geometry, seed: u64, record_every: usize) -> Result<SeedRun> {
        Ok(match self {
            SolverPlan::Aleg(c) => {
                let c = AlegConfig { seed, ..c.clone() };
                SeedRun { seed, record: solvers::aleg(problem, geom, &c, record_every)?, r_hats: None }
            }
            SolverPlan::Alem(c) => {
                let mut c = c.clone();
                c.seed = seed;
                c.stage2.seed = seed;
                let out = solvers::alem(problem, geom, &c, record_every)?;
                SeedRun { seed, record: out.record, r_hats: Some(out.r_hats) }
            }
            SolverPlan::Smd(c) => {
                let c = SmdConfig { seed, ..c.clone() };
                SeedRun { seed, record: solvers::smd(problem, geom, &c, record_every)?, r_hats: None }
            }
            SolverPlan::Mpvr(c) => {
                let c = MpvrConfig { seed, ..c.clone() };
                SeedRun { seed, record: solvers::mpvr(problem, geom, &c, record_every)?, r_hats: None }
            }
        })
    }
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub record: RunRecord,
    pub r_hats: Option<Vec<f64>>,
}

/// Solution file contents, as read by `gap`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub w: Vec<f64>,
    pub q: Vec<f64>,
    pub radius: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub risk_shift: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub final_max_risk: f64,
    pub solution_w_norm: f64,
    pub solution_q_max: f64,
    pub final_counter: EvalCounter,
    pub metric_counter: EvalCounter,
    pub trajectory_rows: usize,
    pub config: solvers::ConfigEcho,
    pub audit: solvers::IterateAudit,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_hats: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub algo: Algo,
    pub dataset: PathBuf,
    pub output: PathBuf,
    pub runs: Vec<SeedSummary>,
}

impl RunSummary {
    fn brief(&self) -> serde_json::Value {
        serde_json::json!({
            "algo": self.algo,
            "output": self.output,
            "final_max_risk": self.runs.iter().map(|r| r.final_max_risk).collect::<Vec<_>>(),
            "grad_evals": self.runs.iter().map(|r| r.final_counter.grad_evals).collect::<Vec<_>>(),
        })
    }
}

/// Thread pool capped by `GDRO_THREADS` (default: rayon's choice).
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("GDRO_THREADS") {
        let n: usize = v.trim().parse().with_context(|| format!("GDRO_THREADS={v:?} is not a thread count"))?;
        if n > 0 {
            b = b.num_threads(n);
        }
    }
    Ok(b.build()?)
}

fn load(path: &Path) -> Result<GroupedDataset> {
    load_dataset(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn trajectory_csv(rec: &RunRecord) -> String {
    let mut s = String::from("grad_evals,max_risk,wallclock_ns\n");
    for r in &rec.trajectory {
        s.push_str(&format!("{},{},{}\n", r.grad_evals, r.max_risk, r.wallclock_ns));
    }
    s
}

fn run_seeds(plan: &SolverPlan, problem: &Problem, geom: &Geometry, seeds: &[u64], record_every: usize) -> Result<Vec<SeedRun>> {
    thread_pool()?.install(|| {
        seeds.par_iter().map(|&s| plan.run(problem, geom, s, record_every)).collect::<Result<Vec<_>>>()
    })
}

pub fn cmd_run(config_path: &Path) -> Result<RunSummary> {
    let text = fs::read_to_string(config_path).with_context(|| format!("reading {}", config_path.display()))?;
    let cfg = ExperimentConfig::parse(&text).with_context(|| format!("config {}", config_path.display()))?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    let data_path = resolve(base, &cfg.dataset);
    let out_dir = resolve(base, &cfg.output);
    let ds = load(&data_path)?;
    let problem = Problem::new(&ds, LossModel::for_dataset(&ds));
    let geom = problem.geometry(cfg.geometry.radius)?;
    let plan = SolverPlan::from_config(&cfg, &ds)?;
    let runs = run_seeds(&plan, &problem, &geom, &cfg.seeds, cfg.record_every)?;

    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let mut summaries = Vec::with_capacity(runs.len());
    for (idx, run) in runs.iter().enumerate() {
        let rec = &run.record;
        fs::write(out_dir.join(format!("{}-seed{}.csv", cfg.algo.name(), run.seed)), trajectory_csv(rec))?;
        let sol = SolutionFile {
            w: rec.solution.w.clone(),
            q: rec.solution.q.clone(),
            radius: cfg.geometry.radius,
            risk_shift: run.r_hats.clone(),
        };
        let sol_json = serde_json::to_string_pretty(&sol)?;
        fs::write(out_dir.join(format!("solution-seed{}.json", run.seed)), &sol_json)?;
        if idx == 0 {
            fs::write(out_dir.join("solution.json"), &sol_json)?;
        }
        summaries.push(SeedSummary {
            seed: run.seed,
            final_max_risk: rec.trajectory.last().map_or(f64::NAN, |r| r.max_risk),
            solution_w_norm: rec.solution.w.iter().map(|v| v * v).sum::<f64>().sqrt(),
            solution_q_max: rec.solution.q.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            final_counter: rec.final_counter,
            metric_counter: rec.metric_counter,
            trajectory_rows: rec.trajectory.len(),
            config: rec.config_echo.clone(),
            audit: rec.audit,
            r_hats: run.r_hats.clone(),
        });
    }
    let summary = RunSummary { algo: cfg.algo, dataset: data_path, output: out_dir.clone(), runs: summaries };
    fs::write(out_dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

/// Off-simplex tolerance for solution files.
const SOLUTION_TOL: f64 = 1e-9;

pub fn cmd_gap(a: &GapArgs) -> Result<GapReport> {
    let ds = load(&a.data)?;
    let text = fs::read_to_string(&a.solution).with_context(|| format!("reading {}", a.solution.display()))?;
    let sol: SolutionFile =
        serde_json::from_str(&text).with_context(|| format!("solution {}", a.solution.display()))?;
    let mut problem = Problem::new(&ds, LossModel::for_dataset(&ds));
    if let Some(shift) = &sol.risk_shift {
        problem = problem.with_shift(shift.clone())?;
    }
    let geom = problem.geometry(sol.radius)?;
    if sol.w.len() != geom.dim() || sol.q.len() != geom.m() {
        bail!(
            "solution has |w| = {}, |q| = {} but the dataset needs {} and {}",
            sol.w.len(),
            sol.q.len(),
            geom.dim(),
            geom.m()
        );
    }
    let sum: f64 = sol.q.iter().sum();
    if sol.q.iter().any(|&v| !(v >= -SOLUTION_TOL)) || (sum - 1.0).abs() > SOLUTION_TOL {
        bail!("infeasible solution: q is off the simplex (sum {sum})");
    }
    let norm = sol.w.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm <= sol.radius * (1.0 + SOLUTION_TOL)) {
        bail!("infeasible solution: ||w|| = {norm} exceeds the radius {}", sol.radius);
    }
    let cfg = OracleConfig { tol: a.tol, max_iters: a.max_iters };
    let z = Point::new(sol.w, sol.q);
    Ok(metrics::duality_gap(&problem, sol.radius, &z, &cfg, &mut EvalCounter::default()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub budget: u64,
    pub seeds: u64,
    /// Median over seeds of each algorithm's last recorded max risk.
    pub final_median: BTreeMap<String, f64>,
    /// Algorithms from best (lowest final median) to worst.
    pub ordering: Vec<String>,
}

/// Solver settings that spend at most `budget` gradient evaluations with the
/// default schedules.
pub fn plan_for_budget(algo: Algo, ds: &GroupedDataset, budget: u64) -> Result<SolverPlan> {
    let m = ds.m();
    let total = ds.total();
    let k = (ds.n_bar().round() as usize).max(1);
    Ok(match algo {
        Algo::Aleg => {
            let cost = aleg_grad_evals(total, m, 1, k);
            let epochs = (budget / cost) as usize;
            if epochs == 0 {
                bail!("budget below minimum epoch cost ({budget} < {cost} = m n_bar + 2 m K)");
            }
            SolverPlan::Aleg(AlegConfig::new(epochs, k, 0))
        }
        Algo::Alem => {
            // One stage-1 epoch over all groups costs the same as one stage-2 epoch.
            let cost = 2 * aleg_grad_evals(total, m, 1, k);
            let epochs = budget / cost;
            if epochs == 0 {
                bail!("budget below minimum epoch cost ({budget} < {cost} for one epoch of each stage)");
            }
            let t = (epochs as f64 * ds.n_bar().sqrt()).floor() as u64;
            let mut c = AlemConfig::new(t.max(1), ds.n_bar(), 0);
            c.stage2 = AlegConfig::new(solvers::stage1_schedule(c.budget, ds.n_bar()).0, k, 0);
            SolverPlan::Alem(c)
        }
        Algo::Smd => {
            let steps = (budget / m as u64) as usize;
            if steps == 0 {
                bail!("budget below minimum epoch cost ({budget} < m = {m})");
            }
            SolverPlan::Smd(SmdConfig { steps, eta0: None, seed: 0 })
        }
        Algo::MpvrUniform | Algo::MpvrImportance => {
            let inner = total;
            let cost = mpvr_grad_evals(total, 1, inner);
            let epochs = (budget / cost) as usize;
            if epochs == 0 {
                bail!("budget below minimum epoch cost ({budget} < {cost} = m n_bar + 2 K)");
            }
            let sampling = if algo == Algo::MpvrUniform { Sampling::Uniform } else { Sampling::Importance };
            SolverPlan::Mpvr(MpvrConfig::new(epochs, inner, sampling, 0))
        }
    })
}

fn inner_steps(plan: &SolverPlan) -> usize {
    match plan {
        SolverPlan::Aleg(c) => c.epochs * c.inner,
        SolverPlan::Alem(c) => c.stage2.epochs * c.stage2.inner,
        SolverPlan::Smd(c) => c.steps,
        SolverPlan::Mpvr(c) => c.epochs * c.inner,
    }
}

pub fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Value of a step-function trajectory at `x`: the last row at or before `x`.
fn value_at(rec: &RunRecord, x: u64) -> Option<f64> {
    let idx = rec.trajectory.partition_point(|r| r.grad_evals <= x);
    (idx > 0).then(|| rec.trajectory[idx - 1].max_risk)
}

pub fn cmd_compare(a: &CompareArgs) -> Result<Verdict> {
    let algos: Vec<Algo> = a.algos.iter().map(|s| s.parse()).collect::<Result<_>>()?;
    if algos.is_empty() {
        bail!("--algos needs at least one algorithm");
    }
    if a.seeds == 0 {
        bail!("--seeds must be at least 1");
    }
    let ds = load(&a.data)?;
    let problem = Problem::new(&ds, LossModel::for_dataset(&ds));
    let geom = problem.geometry(a.radius)?;
    let seeds: Vec<u64> = (0..a.seeds).collect();
    let plans: Vec<SolverPlan> = algos.iter().map(|&al| plan_for_budget(al, &ds, a.budget)).collect::<Result<_>>()?;

    let mut results = Vec::with_capacity(algos.len());
    for plan in &plans {
        let every = (inner_steps(plan) / 200).max(1);
        results.push(run_seeds(plan, &problem, &geom, &seeds, every)?);
    }

    let grid = a.grid.max(2);
    let mut csv = String::from("grad_evals");
    for al in &algos {
        csv.push(',');
        csv.push_str(al.name());
    }
    csv.push('\n');
    for g in 0..grid {
        let x = a.budget * g as u64 / (grid as u64 - 1);
        csv.push_str(&x.to_string());
        for runs in &results {
            let mut vals: Vec<f64> = runs.iter().filter_map(|r| value_at(&r.record, x)).collect();
            csv.push(',');
            if vals.len() == runs.len() {
                csv.push_str(&median(&mut vals).to_string());
            }
        }
        csv.push('\n');
    }

    let mut final_median = BTreeMap::new();
    for (al, runs) in algos.iter().zip(&results) {
        let mut finals: Vec<f64> =
            runs.iter().map(|r| r.record.trajectory.last().map_or(f64::NAN, |t| t.max_risk)).collect();
        final_median.insert(al.name().to_string(), median(&mut finals));
    }
    let mut ordering: Vec<String> = final_median.keys().cloned().collect();
    ordering.sort_by(|x, y| final_median[x].total_cmp(&final_median[y]).then_with(|| x.cmp(y)));
    let verdict = Verdict { budget: a.budget, seeds: a.seeds, final_median, ordering };

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    fs::write(a.out.join("compare.csv"), csv)?;
    fs::write(a.out.join("verdict.json"), serde_json::to_string_pretty(&verdict)?)?;
    Ok(verdict)
}
