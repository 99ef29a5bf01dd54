//! Saddle-point solvers for empirical GDRO and MERO.
//!
//! * [`aleg`]: variance-reduced stochastic mirror prox with group sampling,
//!   one-index-shifted (mirror) snapshots and an eta-weighted output average.
//! * [`alem`]: per-group ERM by single-group [`aleg`], then [`aleg`] on the
//!   risks shifted by the estimated minima.
//! * [`smd`]: stochastic mirror descent on group-sampling gradients.
//! * [`mpvr`]: mirror prox with variance reduction on single-index gradients
//!   (uniform or importance sampling), snapshots taken at epoch end.
//!
//! Randomness: each run owns a ChaCha8 generator seeded from the run seed.
//! [`aleg`], [`smd`], [`mpvr`] and the second stage of [`alem`] use stream 0;
//! every ERM run in the first stage of [`alem`] uses stream 1, so groups with
//! identical data get identical estimates.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::DatasetError;
use crate::geometry::{
    dual_map, init_point, merged_norm, prox_step, DualAccumulator, DualPoint, Geometry, GeometryError, MergedGradient,
    Point, PointAccumulator,
};
use crate::problem::{lipschitz_li, lipschitz_lu, lipschitz_lz, vr_estimator, EvalCounter, LossKind, Problem};

/// Largest merged distance between two points of the domain.
pub const DOMAIN_DIAMETER: f64 = 2.0 * std::f64::consts::SQRT_2;
const DIAMETER_SLACK: f64 = 1e-6;
const SIMPLEX_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("{solver} diverged at epoch {epoch}, step {step}: {detail}")]
    Diverged { solver: &'static str, epoch: usize, step: usize, detail: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlegConfig {
    pub epochs: usize,
    pub inner: usize,
    pub theta: f64,
    pub eta_override: Option<f64>,
    pub seed: u64,
}

impl AlegConfig {
    pub const DEFAULT_THETA: f64 = 0.9;

    pub fn new(epochs: usize, inner: usize, seed: u64) -> Self {
        Self { epochs, inner, theta: Self::DEFAULT_THETA, eta_override: None, seed }
    }

    /// `S` epochs with `K = round(n_bar)` inner steps.
    pub fn with_default_inner(epochs: usize, n_bar: f64, seed: u64) -> Self {
        Self::new(epochs, (n_bar.round() as usize).max(1), seed)
    }

    /// Step-size band `[1 / (10 L sqrt K), 1 / (L sqrt(5 K))]` for constant `L`.
    pub fn eta_band(&self, lipschitz: f64) -> (f64, f64) {
        let k = self.inner as f64;
        (1.0 / (10.0 * lipschitz * k.sqrt()), 1.0 / (lipschitz * (5.0 * k).sqrt()))
    }

    /// Resolves `(alpha, eta)` with `alpha = 1 / K` and
    /// `eta = sqrt(alpha (1 - theta)) / L` unless overridden.
    pub fn resolve(&self, lipschitz: f64) -> Result<(f64, f64), SolverError> {
        if self.epochs == 0 || self.inner == 0 {
            return Err(SolverError::Config("epochs and inner must be at least 1".into()));
        }
        if !(self.theta > 0.8 && self.theta < 0.99) {
            return Err(SolverError::Config(format!("theta = {} outside (0.8, 0.99)", self.theta)));
        }
        let alpha = 1.0 / self.inner as f64;
        let (lo, hi) = self.eta_band(lipschitz);
        match self.eta_override {
            Some(eta) => {
                let slack = 1e-12 * hi;
                if !(eta.is_finite() && eta >= lo - slack && eta <= hi + slack) {
                    return Err(SolverError::Config(format!("eta_override = {eta} outside the band [{lo}, {hi}]")));
                }
                Ok((alpha, eta))
            }
            None => Ok((alpha, (alpha * (1.0 - self.theta)).sqrt() / lipschitz)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    Uniform,
    Importance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpvrConfig {
    pub epochs: usize,
    pub inner: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub sampling: Sampling,
    pub seed: u64,
}

impl MpvrConfig {
    pub const DEFAULT_GAMMA: f64 = 0.9;

    /// `alpha = 1 - 1 / K`, `gamma = 0.9`.
    pub fn new(epochs: usize, inner: usize, sampling: Sampling, seed: u64) -> Self {
        let alpha = 1.0 - 1.0 / inner.max(1) as f64;
        Self { epochs, inner, alpha, gamma: Self::DEFAULT_GAMMA, sampling, seed }
    }

    fn validate(&self) -> Result<(), SolverError> {
        if self.epochs == 0 || self.inner == 0 {
            return Err(SolverError::Config("epochs and inner must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(SolverError::Config(format!("alpha = {} outside [0, 1)", self.alpha)));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(SolverError::Config(format!("gamma = {} outside (0, 1)", self.gamma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmdConfig {
    pub steps: usize,
    /// Base step; `eta_t = eta0 / sqrt(t + 1)`. Defaults to [`smd_default_eta0`].
    pub eta0: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlemConfig {
    /// Budget `T`: stage 1 runs `ceil(T / sqrt(n_bar))` epochs of `round(n_bar)` steps.
    pub budget: u64,
    pub stage1_theta: f64,
    pub stage2: AlegConfig,
    pub seed: u64,
}

impl AlemConfig {
    /// Stage 2 defaults to the stage-1 schedule.
    pub fn new(budget: u64, n_bar: f64, seed: u64) -> Self {
        let (epochs, inner) = stage1_schedule(budget, n_bar);
        Self { budget, stage1_theta: AlegConfig::DEFAULT_THETA, stage2: AlegConfig::new(epochs, inner, seed), seed }
    }
}

/// `(ceil(T / sqrt(n_bar)), round(n_bar))`.
pub fn stage1_schedule(budget: u64, n_bar: f64) -> (usize, usize) {
    let epochs = (budget as f64 / n_bar.sqrt()).ceil().max(1.0) as usize;
    (epochs, (n_bar.round() as usize).max(1))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub grad_evals: u64,
    /// Worst shifted group risk at the running output average.
    pub max_risk: f64,
    pub wallclock_ns: u64,
}

/// Worst violations seen over every iterate a run produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterateAudit {
    pub iterates: u64,
    /// `max(||w|| - R)`, nonpositive when every iterate is in the ball.
    pub max_ball_excess: f64,
    /// `max |sum q - 1|`.
    pub max_simplex_error: f64,
    pub min_q: f64,
    /// Largest merged distance from the initial point.
    pub max_diameter: f64,
}

impl Default for IterateAudit {
    fn default() -> Self {
        Self {
            iterates: 0,
            max_ball_excess: f64::NEG_INFINITY,
            max_simplex_error: 0.0,
            min_q: f64::INFINITY,
            max_diameter: 0.0,
        }
    }
}

impl IterateAudit {
    pub fn merge(&mut self, o: &IterateAudit) {
        self.iterates += o.iterates;
        self.max_ball_excess = self.max_ball_excess.max(o.max_ball_excess);
        self.max_simplex_error = self.max_simplex_error.max(o.max_simplex_error);
        self.min_q = self.min_q.min(o.min_q);
        self.max_diameter = self.max_diameter.max(o.max_diameter);
    }

    /// Ball, simplex and diameter conditions, with the usual tolerances.
    pub fn is_feasible(&self, radius: f64) -> bool {
        self.max_ball_excess <= 1e-12 * radius.max(1.0)
            && self.max_simplex_error <= SIMPLEX_TOL
            && self.min_q >= 0.0
            && self.max_diameter <= DOMAIN_DIAMETER + DIAMETER_SLACK
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzConstants {
    pub l_z: f64,
    pub l_u: f64,
    pub l_i: f64,
}

/// Resolved hyperparameters of a run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub algo: String,
    pub seed: u64,
    pub radius: f64,
    pub m: usize,
    pub dim: usize,
    pub n_bar: f64,
    pub smoothness: f64,
    pub lipschitz: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lipschitz_constants: Option<LipschitzConstants>,
    /// Which constant set the step size (`L_z`, `L_u`, `L_i`, `L` or `M`).
    pub step_constant_name: String,
    pub step_constant: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inner: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Constant step, or the base step `eta0` for SMD.
    pub eta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sampling: Option<Sampling>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub risk_shift: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage1: Option<Box<ConfigEcho>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub solution: Point,
    pub trajectory: Vec<TrajectoryRow>,
    pub final_counter: EvalCounter,
    /// Loss evaluations spent on trajectory metrics, kept off the comparison axis.
    pub metric_counter: EvalCounter,
    pub config_echo: ConfigEcho,
    pub audit: IterateAudit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlemOutput {
    pub record: RunRecord,
    pub r_hats: Vec<f64>,
    pub stage1_ws: Vec<Vec<f64>>,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn lipschitz_constants(problem: &Problem, geom: &Geometry) -> Option<LipschitzConstants> {
    (geom.m() >= 2).then(|| LipschitzConstants {
        l_z: lipschitz_lz(geom, problem.model()),
        l_u: lipschitz_lu(geom, problem.model(), problem.dataset()),
        l_i: lipschitz_li(geom, problem.model()),
    })
}

/// A zero constant means every loss is constant in `w`; any step is then
/// admissible and 1 is used in place of the constant.
fn nonzero(l: f64) -> f64 {
    if l > 0.0 {
        l
    } else {
        1.0
    }
}

fn base_echo(algo: &str, problem: &Problem, geom: &Geometry, seed: u64) -> ConfigEcho {
    let ds = problem.dataset();
    ConfigEcho {
        algo: algo.to_string(),
        seed,
        radius: geom.radius(),
        m: ds.m(),
        dim: geom.dim(),
        n_bar: ds.n_bar(),
        smoothness: problem.model().smoothness,
        lipschitz: problem.model().lipschitz,
        lipschitz_constants: lipschitz_constants(problem, geom),
        ..Default::default()
    }
}

fn check_geometry(problem: &Problem, geom: &Geometry) -> Result<(), SolverError> {
    if geom.dim() != problem.param_dim() || geom.m() != problem.m() {
        return Err(SolverError::Config(format!(
            "geometry is (dim {}, m {}) but the problem is (dim {}, m {})",
            geom.dim(),
            geom.m(),
            problem.param_dim(),
            problem.m()
        )));
    }
    Ok(())
}

/// Feasibility audit, divergence tripwire and trajectory bookkeeping.
struct Monitor<'p, 'a> {
    solver: &'static str,
    problem: &'p Problem<'a>,
    geom: &'p Geometry,
    z0: Point,
    record_every: usize,
    steps: usize,
    offset: u64,
    start: Instant,
    trajectory: Vec<TrajectoryRow>,
    metric: EvalCounter,
    audit: IterateAudit,
}

impl<'p, 'a> Monitor<'p, 'a> {
    fn new(solver: &'static str, problem: &'p Problem<'a>, geom: &'p Geometry, record_every: usize, offset: u64) -> Self {
        Self {
            solver,
            problem,
            geom,
            z0: init_point(geom),
            record_every,
            steps: 0,
            offset,
            start: Instant::now(),
            trajectory: Vec::new(),
            metric: EvalCounter::default(),
            audit: IterateAudit::default(),
        }
    }

    fn check(&mut self, z: &Point, epoch: usize, step: usize) -> Result<(), SolverError> {
        let fail = |detail: String| SolverError::Diverged { solver: self.solver, epoch, step, detail };
        if !z.is_finite() {
            return Err(fail("non-finite iterate".into()));
        }
        let (dw, dq) = z.minus(&self.z0);
        let diam = merged_norm(self.geom, &dw, &dq);
        if diam > DOMAIN_DIAMETER + DIAMETER_SLACK {
            return Err(fail(format!("iterate at merged distance {diam} from the start exceeds the domain diameter")));
        }
        let a = &mut self.audit;
        a.iterates += 1;
        a.max_ball_excess = a.max_ball_excess.max(z.w.iter().map(|v| v * v).sum::<f64>().sqrt() - self.geom.radius());
        a.max_simplex_error = a.max_simplex_error.max((z.q.iter().sum::<f64>() - 1.0).abs());
        a.min_q = z.q.iter().fold(a.min_q, |acc, &v| acc.min(v));
        a.max_diameter = a.max_diameter.max(diam);
        Ok(())
    }

    fn dual(&self, z: &Point, epoch: usize, step: usize) -> Result<DualPoint, SolverError> {
        dual_map(self.geom, z).map_err(|e| SolverError::Diverged {
            solver: self.solver,
            epoch,
            step,
            detail: format!("simplex weight underflow: {e}"),
        })
    }

    fn record(&mut self, counter: &EvalCounter, w: &[f64]) {
        let grad_evals = self.offset + counter.grad_evals;
        if self.trajectory.last().is_some_and(|r| r.grad_evals >= grad_evals) {
            return;
        }
        let max_risk = self.problem.objective_risks(w, &mut self.metric).into_iter().fold(f64::NEG_INFINITY, f64::max);
        let wallclock_ns = self.start.elapsed().as_nanos() as u64;
        self.trajectory.push(TrajectoryRow { grad_evals, max_risk, wallclock_ns });
    }

    /// Counts one inner step and records the running average when due.
    fn step(&mut self, counter: &EvalCounter, avg: &PointAccumulator) -> Result<(), SolverError> {
        self.steps += 1;
        if self.record_every > 0 && self.steps % self.record_every == 0 {
            let mean = avg.mean()?;
            self.record(counter, &mean.w);
        }
        Ok(())
    }

    fn finish(mut self, solution: Point, counter: EvalCounter, config_echo: ConfigEcho) -> RunRecord {
        self.record(&counter, &solution.w);
        RunRecord {
            solution,
            trajectory: self.trajectory,
            final_counter: EvalCounter {
                grad_evals: self.offset + counter.grad_evals,
                loss_evals: counter.loss_evals,
            },
            metric_counter: self.metric,
            config_echo,
            audit: self.audit,
        }
    }
}

/// Variance-reduced stochastic mirror prox with group sampling.
///
/// Uses `alpha = 1 / K` and `eta = sqrt(alpha (1 - theta)) / L_z` (or the
/// override), with `L` in place of `L_z` when `m = 1`. Trajectory rows are
/// recorded every `record_every` inner steps, plus the start and the end;
/// `record_every = 0` records only those two.
pub fn aleg(problem: &Problem, geom: &Geometry, cfg: &AlegConfig, record_every: usize) -> Result<RunRecord, SolverError> {
    aleg_with(problem, geom, cfg, record_every, 0, 0)
}

fn aleg_with(
    problem: &Problem,
    geom: &Geometry,
    cfg: &AlegConfig,
    record_every: usize,
    stream: u64,
    offset: u64,
) -> Result<RunRecord, SolverError> {
    check_geometry(problem, geom)?;
    let (name, lc) = if geom.m() == 1 {
        ("L", problem.model().smoothness)
    } else {
        ("L_z", lipschitz_lz(geom, problem.model()))
    };
    let lc = nonzero(lc);
    let (alpha, eta) = cfg.resolve(lc)?;
    let mut echo = base_echo("aleg", problem, geom, cfg.seed);
    echo.step_constant_name = name.into();
    echo.step_constant = lc;
    echo.epochs = Some(cfg.epochs);
    echo.inner = Some(cfg.inner);
    echo.alpha = Some(alpha);
    echo.eta = eta;
    echo.theta = Some(cfg.theta);
    if problem.shift().iter().any(|&s| s != 0.0) {
        echo.risk_shift = Some(problem.shift().to_vec());
    }

    let (dim, m) = (geom.dim(), geom.m());
    let mut rng = rng_for(cfg.seed, stream);
    let mut counter = EvalCounter::default();
    let mut mon = Monitor::new("aleg", problem, geom, record_every, offset);
    let z0 = init_point(geom);
    mon.record(&counter, &z0.w);

    // Virtual epoch -1 holds K copies of z_0, so the first snapshot is z_0 itself.
    let mut snap = z0.clone();
    let mut mirror = mon.dual(&z0, 0, 0)?;
    let mut z = z0;
    let mut out = PointAccumulator::new(dim, m);
    let norm = alpha * cfg.inner as f64;
    for s in 0..cfg.epochs {
        let g_full = problem.full_gradient(&snap, &mut counter);
        let mut snap_acc = PointAccumulator::new(dim, m);
        let mut mirror_acc = DualAccumulator::new(dim, m);
        for k in 0..cfg.inner {
            let half = prox_step(geom, &g_full, eta, alpha, &mirror, &z)?;
            mon.check(&half, s, k)?;
            let sample = problem.draw_group_sample(&mut rng);
            let g_half = problem.stochastic_gradient(&half, &sample, &mut counter);
            let g_snap = problem.stochastic_gradient(&snap, &sample, &mut counter);
            let g = vr_estimator(&g_half, &g_snap, &g_full);
            let next = prox_step(geom, &g, eta, alpha, &mirror, &z)?;
            mon.check(&next, s, k)?;
            out.add(&half, eta);
            snap_acc.add(&next, alpha);
            mirror_acc.add(&mon.dual(&next, s, k)?, alpha);
            z = next;
            mon.step(&counter, &out)?;
        }
        snap = snap_acc.finish(norm)?;
        mirror = mirror_acc.finish(norm)?;
    }
    let solution = out.mean()?;
    Ok(mon.finish(solution, counter, echo))
}

/// Single-group ERM by [`aleg`] with the two-stage schedule: returns the
/// averaged weights and the group risk there.
pub fn aleg_erm(
    problem: &Problem,
    geom: &Geometry,
    cfg: &AlegConfig,
) -> Result<(Vec<f64>, f64, RunRecord), SolverError> {
    aleg_erm_with(problem, geom, cfg, 0)
}

fn aleg_erm_with(
    problem: &Problem,
    geom: &Geometry,
    cfg: &AlegConfig,
    stream: u64,
) -> Result<(Vec<f64>, f64, RunRecord), SolverError> {
    if problem.m() != 1 {
        return Err(SolverError::Config(format!("ERM needs a single group, got {}", problem.m())));
    }
    let mut rec = aleg_with(problem, geom, cfg, 0, stream, 0)?;
    let w = rec.solution.w.clone();
    let r = problem.group_risk(0, &w, &mut rec.metric_counter)?;
    Ok((w, r, rec))
}

/// Two-stage MERO solver.
pub fn alem(problem: &Problem, geom: &Geometry, cfg: &AlemConfig, record_every: usize) -> Result<AlemOutput, SolverError> {
    check_geometry(problem, geom)?;
    let ds = problem.dataset();
    let (epochs, inner) = stage1_schedule(cfg.budget, ds.n_bar());
    let stage1 = AlegConfig { epochs, inner, theta: cfg.stage1_theta, eta_override: None, seed: cfg.seed };
    let single_geom = Geometry::new(geom.dim(), 1, geom.radius())?;

    let mut r_hats = Vec::with_capacity(ds.m());
    let mut stage1_ws = Vec::with_capacity(ds.m());
    let mut stage1_counter = EvalCounter::default();
    let mut metric = EvalCounter::default();
    let mut audit = IterateAudit::default();
    let mut stage1_echo = None;
    for i in 0..ds.m() {
        let group = ds.single_group(i)?;
        let sub = Problem::new(&group, *problem.model());
        let (w, r, rec) = aleg_erm_with(&sub, &single_geom, &stage1, 1)?;
        stage1_counter.add(rec.final_counter);
        metric.add(rec.metric_counter);
        audit.merge(&rec.audit);
        stage1_echo.get_or_insert(rec.config_echo);
        r_hats.push(r);
        stage1_ws.push(w);
    }

    let shifted = problem.clone().with_shift(r_hats.clone())?;
    let mut stage2 = cfg.stage2.clone();
    stage2.seed = cfg.seed;
    let mut record = aleg_with(&shifted, geom, &stage2, record_every, 0, stage1_counter.grad_evals)?;
    record.final_counter.loss_evals += stage1_counter.loss_evals;
    record.metric_counter.add(metric);
    record.audit.merge(&audit);
    let echo = &mut record.config_echo;
    echo.algo = "alem".into();
    echo.budget = Some(cfg.budget);
    echo.risk_shift = Some(r_hats.clone());
    echo.stage1 = stage1_echo.map(|mut e| {
        e.algo = "aleg_erm".into();
        Box::new(e)
    });
    Ok(AlemOutput { record, r_hats, stage1_ws })
}

/// `1 / M` where `M^2 = 2 D_w^2 G^2 + 2 D_q^2 l_max^2` bounds the squared dual
/// norm of a group-sampling gradient; `l_max` bounds the loss on the ball.
pub fn smd_default_eta0(problem: &Problem, geom: &Geometry) -> f64 {
    let ds = problem.dataset();
    let reach = geom.radius() * ds.max_feature_norm();
    let l_max = match problem.model().kind {
        LossKind::Logistic => reach.exp().ln_1p(),
        LossKind::Softmax { classes } => (classes as f64).ln() + std::f64::consts::SQRT_2 * reach,
    };
    let g = problem.model().lipschitz;
    let dq2 = if geom.m() >= 2 { (geom.m() as f64).ln() } else { 0.0 };
    let big_m = (2.0 * geom.d_w() * geom.d_w() * g * g + 2.0 * dq2 * l_max * l_max).sqrt();
    1.0 / nonzero(big_m)
}

/// Stochastic mirror descent: one group sample per step, plain mirror step
/// with `eta_t = eta0 / sqrt(t + 1)`, uniform average of `z_1 .. z_T`.
pub fn smd(problem: &Problem, geom: &Geometry, cfg: &SmdConfig, record_every: usize) -> Result<RunRecord, SolverError> {
    check_geometry(problem, geom)?;
    if cfg.steps == 0 {
        return Err(SolverError::Config("steps must be at least 1".into()));
    }
    let eta0 = cfg.eta0.unwrap_or_else(|| smd_default_eta0(problem, geom));
    if !(eta0.is_finite() && eta0 > 0.0) {
        return Err(SolverError::Config(format!("eta0 = {eta0} must be positive")));
    }
    let mut echo = base_echo("smd", problem, geom, cfg.seed);
    echo.step_constant_name = "M".into();
    echo.step_constant = 1.0 / eta0;
    echo.steps = Some(cfg.steps);
    echo.eta = eta0;

    let (dim, m) = (geom.dim(), geom.m());
    let mut rng = rng_for(cfg.seed, 0);
    let mut counter = EvalCounter::default();
    let mut mon = Monitor::new("smd", problem, geom, record_every, 0);
    let mut z = init_point(geom);
    mon.record(&counter, &z.w);
    let unused = DualPoint { dw: Vec::new(), sq: Vec::new() };
    let mut out = PointAccumulator::new(dim, m);
    for t in 0..cfg.steps {
        let sample = problem.draw_group_sample(&mut rng);
        let g = problem.stochastic_gradient(&z, &sample, &mut counter);
        let eta = eta0 / ((t + 1) as f64).sqrt();
        z = prox_step(geom, &g, eta, 0.0, &unused, &z)?;
        mon.check(&z, 0, t)?;
        out.add(&z, 1.0);
        mon.step(&counter, &out)?;
    }
    let solution = out.mean()?;
    Ok(mon.finish(solution, counter, echo))
}

/// Mirror prox with variance reduction on single-index gradients.
///
/// The first full gradient is taken at `z_0`. At the end of every epoch but the
/// last, the snapshot becomes the plain mean of `z_0 .. z_{K-1}`, the mirror
/// snapshot the mean of their dual images, and the full gradient is refreshed
/// there. The output is the uniform mean of all half points.
pub fn mpvr(problem: &Problem, geom: &Geometry, cfg: &MpvrConfig, record_every: usize) -> Result<RunRecord, SolverError> {
    check_geometry(problem, geom)?;
    cfg.validate()?;
    if geom.m() < 2 {
        return Err(SolverError::Config("mpvr needs at least two groups".into()));
    }
    let (name, lc) = match cfg.sampling {
        Sampling::Uniform => ("L_u", lipschitz_lu(geom, problem.model(), problem.dataset())),
        Sampling::Importance => ("L_i", lipschitz_li(geom, problem.model())),
    };
    let lc = nonzero(lc);
    let eta = cfg.gamma * (1.0 - cfg.alpha).sqrt() / lc;
    let algo = match cfg.sampling {
        Sampling::Uniform => "mpvr-uniform",
        Sampling::Importance => "mpvr-importance",
    };
    let mut echo = base_echo(algo, problem, geom, cfg.seed);
    echo.step_constant_name = name.into();
    echo.step_constant = lc;
    echo.epochs = Some(cfg.epochs);
    echo.inner = Some(cfg.inner);
    echo.alpha = Some(cfg.alpha);
    echo.eta = eta;
    echo.gamma = Some(cfg.gamma);
    echo.sampling = Some(cfg.sampling);

    let (dim, m) = (geom.dim(), geom.m());
    let mut rng = rng_for(cfg.seed, 0);
    let mut counter = EvalCounter::default();
    let mut mon = Monitor::new("mpvr", problem, geom, record_every, 0);
    let z0 = init_point(geom);
    mon.record(&counter, &z0.w);

    let mut snap = z0.clone();
    let mut mirror = mon.dual(&z0, 0, 0)?;
    let mut g_full = problem.full_gradient(&snap, &mut counter);
    let mut z = z0;
    let mut out = PointAccumulator::new(dim, m);
    for s in 0..cfg.epochs {
        let mut snap_acc = PointAccumulator::new(dim, m);
        let mut mirror_acc = DualAccumulator::new(dim, m);
        for k in 0..cfg.inner {
            snap_acc.add(&z, 1.0);
            mirror_acc.add(&mon.dual(&z, s, k)?, 1.0);
            let half = prox_step(geom, &g_full, eta, cfg.alpha, &mirror, &z)?;
            mon.check(&half, s, k)?;
            let (g_half, g_snap) = single_index_pair(problem, &half, &snap, cfg.sampling, &mut rng, &mut counter);
            let g = vr_estimator(&g_half, &g_snap, &g_full);
            let next = prox_step(geom, &g, eta, cfg.alpha, &mirror, &z)?;
            mon.check(&next, s, k)?;
            out.add(&half, 1.0);
            z = next;
            mon.step(&counter, &out)?;
        }
        if s + 1 < cfg.epochs {
            snap = snap_acc.mean()?;
            mirror = mirror_acc.finish(cfg.inner as f64)?;
            g_full = problem.full_gradient(&snap, &mut counter);
        }
    }
    let solution = out.mean()?;
    Ok(mon.finish(solution, counter, echo))
}

/// Gradients at `a` and `b` from one shared single-index draw.
fn single_index_pair(
    problem: &Problem,
    a: &Point,
    b: &Point,
    sampling: Sampling,
    rng: &mut ChaCha8Rng,
    counter: &mut EvalCounter,
) -> (MergedGradient, MergedGradient) {
    match sampling {
        Sampling::Uniform => {
            let l = problem.draw_uniform_index(rng);
            (problem.mpvr_uniform_gradient_at(a, l, counter), problem.mpvr_uniform_gradient_at(b, l, counter))
        }
        Sampling::Importance => {
            let (i, j) = problem.draw_importance_pair(rng);
            (
                problem.mpvr_importance_gradient_at(a, i, j, counter),
                problem.mpvr_importance_gradient_at(b, i, j, counter),
            )
        }
    }
}

/// Closed-form gradient count of an [`aleg`] run: `S (m n_bar + 2 m K)`.
pub fn aleg_grad_evals(total_samples: usize, m: usize, epochs: usize, inner: usize) -> u64 {
    (epochs * (total_samples + 2 * m * inner)) as u64
}

/// Closed-form gradient count of an [`mpvr`] run: `S (m n_bar + 2 K)`.
pub fn mpvr_grad_evals(total_samples: usize, epochs: usize, inner: usize) -> u64 {
    (epochs * (total_samples + 2 * inner)) as u64
}
