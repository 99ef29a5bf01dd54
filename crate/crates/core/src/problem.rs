//! Loss models, empirical group risks, and the merged gradient oracles.
//!
//! Three stochastic constructions are provided on top of the exact
//! [`Problem::full_gradient`]:
//!
//! * group sampling: one uniform sample from every group per call (`m` evaluations);
//! * single-index uniform sampling over all `m * n_bar` samples;
//! * single-index importance sampling: a uniform group, then a uniform sample in it.
//!
//! All three are unbiased for the full gradient. Every `grad` of a per-sample
//! loss is charged to [`EvalCounter::grad_evals`]; plain loss values, as needed
//! for risk reporting, go to [`EvalCounter::loss_evals`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetError, GroupedDataset, LabelKind};
use crate::geometry::{dot, Geometry, MergedGradient, Point};

/// Per-sample loss family. Both are linear models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    /// `ln(1 + exp(-y <w, x>))` with labels in `{-1, +1}`.
    Logistic,
    /// `-ln softmax_y(W x)`, `W` a `classes x dim` matrix flattened row-major.
    Softmax { classes: usize },
}

impl LossKind {
    pub fn for_labels(kind: LabelKind) -> Self {
        match kind {
            LabelKind::Binary => LossKind::Logistic,
            LabelKind::Multiclass { classes } => LossKind::Softmax { classes },
        }
    }

    /// Length of the parameter vector for `feature_dim` features.
    pub fn param_dim(&self, feature_dim: usize) -> usize {
        match *self {
            LossKind::Logistic => feature_dim,
            LossKind::Softmax { classes } => classes * feature_dim,
        }
    }
}

/// A loss family together with its smoothness `L` and Lipschitz constant `G`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossModel {
    pub kind: LossKind,
    pub smoothness: f64,
    pub lipschitz: f64,
}

impl LossModel {
    pub fn new(kind: LossKind, smoothness: f64, lipschitz: f64) -> Self {
        Self { kind, smoothness, lipschitz }
    }

    /// Loss matching the dataset's labels, with constants from [`estimate_lg`].
    pub fn for_dataset(ds: &GroupedDataset) -> Self {
        let kind = LossKind::for_labels(ds.label_kind());
        let (l, g) = estimate_lg(ds, kind);
        Self::new(kind, l, g)
    }

    pub fn param_dim(&self, feature_dim: usize) -> usize {
        self.kind.param_dim(feature_dim)
    }

    pub fn loss(&self, w: &[f64], x: &[f64], y: i64) -> f64 {
        match self.kind {
            LossKind::Logistic => softplus(-(y as f64) * dot(w, x)),
            LossKind::Softmax { classes } => {
                let d = x.len();
                let logits: Vec<f64> = (0..classes).map(|c| dot(&w[c * d..(c + 1) * d], x)).collect();
                log_sum_exp(&logits) - logits[y as usize]
            }
        }
    }

    /// Returns the loss and adds `scale * grad loss` into `out`.
    pub fn loss_grad_into(&self, w: &[f64], x: &[f64], y: i64, scale: f64, out: &mut [f64]) -> f64 {
        match self.kind {
            LossKind::Logistic => {
                let yf = y as f64;
                let margin = yf * dot(w, x);
                let coef = -yf * sigmoid(-margin) * scale;
                out.iter_mut().zip(x).for_each(|(o, xi)| *o += coef * xi);
                softplus(-margin)
            }
            LossKind::Softmax { classes } => {
                let d = x.len();
                let logits: Vec<f64> = (0..classes).map(|c| dot(&w[c * d..(c + 1) * d], x)).collect();
                let lse = log_sum_exp(&logits);
                for (c, &z) in logits.iter().enumerate() {
                    let mut coef = (z - lse).exp();
                    if c as i64 == y {
                        coef -= 1.0;
                    }
                    let coef = coef * scale;
                    out[c * d..(c + 1) * d].iter_mut().zip(x).for_each(|(o, xi)| *o += coef * xi);
                }
                lse - logits[y as usize]
            }
        }
    }
}

/// Closed-form `(L, G)` bounds from the largest feature norm `r`:
/// logistic `(r^2 / 4, r)`, softmax `(r^2, sqrt(2) r)`.
pub fn estimate_lg(ds: &GroupedDataset, kind: LossKind) -> (f64, f64) {
    let r = ds.max_feature_norm();
    match kind {
        LossKind::Logistic => (r * r / 4.0, r),
        LossKind::Softmax { .. } => (r * r, std::f64::consts::SQRT_2 * r),
    }
}

/// Oracle call counts. Both fields only ever increase.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCounter {
    pub grad_evals: u64,
    pub loss_evals: u64,
}

impl EvalCounter {
    pub fn add(&mut self, other: EvalCounter) {
        self.grad_evals += other.grad_evals;
        self.loss_evals += other.loss_evals;
    }
}

/// One sample index per group, as drawn by group sampling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupSample(pub Vec<usize>);

/// An empirical GDRO instance, optionally with per-group risk shifts
/// `R_i(w) - shift_i` (the approximate excess risks of the MERO stage).
#[derive(Debug, Clone)]
pub struct Problem<'a> {
    ds: &'a GroupedDataset,
    model: LossModel,
    shift: Vec<f64>,
}

impl<'a> Problem<'a> {
    pub fn new(ds: &'a GroupedDataset, model: LossModel) -> Self {
        let shift = vec![0.0; ds.m()];
        Self { ds, model, shift }
    }

    /// Shifts group risk `i` by `-shift[i]`. The w-gradient is unaffected.
    pub fn with_shift(mut self, shift: Vec<f64>) -> Result<Self, DatasetError> {
        if shift.len() != self.ds.m() {
            return Err(DatasetError::GroupOutOfRange { index: shift.len(), m: self.ds.m() });
        }
        self.shift = shift;
        Ok(self)
    }

    pub fn dataset(&self) -> &'a GroupedDataset {
        self.ds
    }

    pub fn model(&self) -> &LossModel {
        &self.model
    }

    pub fn shift(&self) -> &[f64] {
        &self.shift
    }

    pub fn m(&self) -> usize {
        self.ds.m()
    }

    /// Dimension of the parameter vector `w`.
    pub fn param_dim(&self) -> usize {
        self.model.param_dim(self.ds.dim())
    }

    /// Geometry for this problem with a ball of the given radius.
    pub fn geometry(&self, radius: f64) -> Result<Geometry, crate::geometry::GeometryError> {
        Geometry::new(self.param_dim(), self.m(), radius)
    }

    /// Unshifted group risk `R_i(w) = (1/n_i) sum_j loss(w; xi_ij)`.
    pub fn group_risk(&self, i: usize, w: &[f64], counter: &mut EvalCounter) -> Result<f64, DatasetError> {
        if i >= self.m() {
            return Err(DatasetError::GroupOutOfRange { index: i, m: self.m() });
        }
        let n = self.ds.group_size(i);
        let mut sum = 0.0;
        for j in 0..n {
            sum += self.model.loss(w, self.ds.x(i, j), self.ds.y(i, j));
        }
        counter.loss_evals += n as u64;
        Ok(sum / n as f64)
    }

    /// All unshifted group risks.
    pub fn risks(&self, w: &[f64], counter: &mut EvalCounter) -> Vec<f64> {
        (0..self.m()).map(|i| self.group_risk(i, w, counter).expect("index in range")).collect()
    }

    /// Shifted risks `R_i(w) - shift_i`, the quantities the saddle problem sees.
    pub fn objective_risks(&self, w: &[f64], counter: &mut EvalCounter) -> Vec<f64> {
        let mut r = self.risks(w, counter);
        r.iter_mut().zip(&self.shift).for_each(|(v, s)| *v -= s);
        r
    }

    /// `(sum_i q_i grad R_i(w); -[R_1(w) - shift_1, ..., R_m(w) - shift_m])`.
    pub fn full_gradient(&self, z: &Point, counter: &mut EvalCounter) -> MergedGradient {
        let mut g = MergedGradient::zeros(self.param_dim(), self.m());
        for i in 0..self.m() {
            let n = self.ds.group_size(i);
            let scale = z.q[i] / n as f64;
            let mut sum = 0.0;
            for j in 0..n {
                sum += self.model.loss_grad_into(&z.w, self.ds.x(i, j), self.ds.y(i, j), scale, &mut g.gw);
            }
            g.gq[i] = -(sum / n as f64 - self.shift[i]);
            counter.grad_evals += n as u64;
            counter.loss_evals += n as u64;
        }
        g
    }

    /// Draws one index per group, in group order.
    pub fn draw_group_sample<R: Rng + ?Sized>(&self, rng: &mut R) -> GroupSample {
        GroupSample((0..self.m()).map(|i| rng.random_range(0..self.ds.group_size(i))).collect())
    }

    /// Group-sampling gradient: `(sum_i q_i grad loss(w; xi_i); -[loss(w; xi_i) - shift_i]_i)`.
    pub fn stochastic_gradient(&self, z: &Point, s: &GroupSample, counter: &mut EvalCounter) -> MergedGradient {
        let mut g = MergedGradient::zeros(self.param_dim(), self.m());
        for (i, &j) in s.0.iter().enumerate() {
            let l = self.model.loss_grad_into(&z.w, self.ds.x(i, j), self.ds.y(i, j), z.q[i], &mut g.gw);
            g.gq[i] = -(l - self.shift[i]);
        }
        counter.grad_evals += self.m() as u64;
        counter.loss_evals += self.m() as u64;
        g
    }

    /// Single-sample gradient with importance factor `c` at `(i, j)`.
    fn one_hot_gradient(&self, z: &Point, i: usize, j: usize, c: f64, counter: &mut EvalCounter) -> MergedGradient {
        let mut g = MergedGradient::zeros(self.param_dim(), self.m());
        let l = self.model.loss_grad_into(&z.w, self.ds.x(i, j), self.ds.y(i, j), c * z.q[i], &mut g.gw);
        g.gq[i] = -c * (l - self.shift[i]);
        counter.grad_evals += 1;
        counter.loss_evals += 1;
        g
    }

    /// Uniform single-index gradient at flat index `l` (scale `m n_bar / n_{l_i}`).
    pub fn mpvr_uniform_gradient_at(&self, z: &Point, l: usize, counter: &mut EvalCounter) -> MergedGradient {
        let (i, j) = self.ds.flat_to_pair(l).expect("flat index in range");
        let c = self.ds.total() as f64 / self.ds.group_size(i) as f64;
        self.one_hot_gradient(z, i, j, c, counter)
    }

    /// Draws `l ~ Unif(m n_bar)` and returns the uniform-sampling gradient.
    pub fn mpvr_uniform_gradient<R: Rng + ?Sized>(
        &self,
        z: &Point,
        rng: &mut R,
        counter: &mut EvalCounter,
    ) -> (MergedGradient, usize) {
        let l = self.draw_uniform_index(rng);
        (self.mpvr_uniform_gradient_at(z, l, counter), l)
    }

    pub fn draw_uniform_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        rng.random_range(0..self.ds.total())
    }

    /// Importance-sampling gradient at `(i, j)` (scale `m`).
    pub fn mpvr_importance_gradient_at(&self, z: &Point, i: usize, j: usize, counter: &mut EvalCounter) -> MergedGradient {
        self.one_hot_gradient(z, i, j, self.m() as f64, counter)
    }

    /// Draws `l_i ~ Unif(m)`, `l_j ~ Unif(n_{l_i})` and returns the gradient.
    pub fn mpvr_importance_gradient<R: Rng + ?Sized>(
        &self,
        z: &Point,
        rng: &mut R,
        counter: &mut EvalCounter,
    ) -> (MergedGradient, (usize, usize)) {
        let pair = self.draw_importance_pair(rng);
        (self.mpvr_importance_gradient_at(z, pair.0, pair.1, counter), pair)
    }

    pub fn draw_importance_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize) {
        let i = rng.random_range(0..self.m());
        let j = rng.random_range(0..self.ds.group_size(i));
        (i, j)
    }
}

/// Variance-reduced estimator `g_half - g_snap_stoch + g_snap_full`.
pub fn vr_estimator(
    g_half: &MergedGradient,
    g_snap_stoch: &MergedGradient,
    g_snap_full: &MergedGradient,
) -> MergedGradient {
    let comb = |a: &[f64], b: &[f64], c: &[f64]| -> Vec<f64> {
        a.iter().zip(b).zip(c).map(|((x, y), z)| x - y + z).collect()
    };
    MergedGradient {
        gw: comb(&g_half.gw, &g_snap_stoch.gw, &g_snap_full.gw),
        gq: comb(&g_half.gq, &g_snap_stoch.gq, &g_snap_full.gq),
    }
}

/// Lipschitz constant of the group-sampling gradient in the merged norms:
/// `2 D_w max{ sqrt(2 D_w^2 L^2 + G^2 ln m), G sqrt(2 ln m) }`.
pub fn lipschitz_lz(geom: &Geometry, model: &LossModel) -> f64 {
    lz_formula(geom.d_w(), model.smoothness, model.lipschitz, (geom.m() as f64).ln())
}

/// Second-moment Lipschitz constant of uniform single-index sampling; depends
/// on the group sizes through `n_bar / n_min` and `n_bar / n_harmonic`.
pub fn lipschitz_lu(geom: &Geometry, model: &LossModel, ds: &GroupedDataset) -> f64 {
    lu_formula(
        geom.d_w(),
        model.smoothness,
        model.lipschitz,
        geom.m() as f64,
        ds.n_bar() / ds.n_min() as f64,
        ds.n_bar() / ds.n_harmonic(),
    )
}

/// Second-moment Lipschitz constant of importance sampling.
pub fn lipschitz_li(geom: &Geometry, model: &LossModel) -> f64 {
    li_formula(geom.d_w(), model.smoothness, model.lipschitz, geom.m() as f64)
}

fn lz_formula(d_w: f64, l: f64, g: f64, ln_m: f64) -> f64 {
    let a = (2.0 * d_w * d_w * l * l + g * g * ln_m).sqrt();
    let b = g * (2.0 * ln_m).sqrt();
    2.0 * d_w * a.max(b)
}

fn lu_formula(d_w: f64, l: f64, g: f64, m: f64, over_min: f64, over_harm: f64) -> f64 {
    let ln_m = m.ln();
    let a = (2.0 * d_w * d_w * l * l * m * over_min + g * g * m * m * ln_m * over_harm).sqrt();
    let b = g * (2.0 * m * ln_m * over_min).sqrt();
    2.0 * d_w * a.max(b)
}

fn li_formula(d_w: f64, l: f64, g: f64, m: f64) -> f64 {
    let ln_m = m.ln();
    let a = (2.0 * d_w * d_w * l * l * m + g * g * m * m * ln_m).sqrt();
    let b = g * (2.0 * m * ln_m).sqrt();
    2.0 * d_w * a.max(b)
}

/// `ln(1 + e^t)` without overflow.
fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}
