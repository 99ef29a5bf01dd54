//! Bregman geometry on `Z = W x simplex`.
//!
//! `W` is the centered Euclidean ball of radius `R` with `psi_w(w) = ||w||^2 / 2`,
//! and the simplex carries the negative entropy `psi_q(q) = sum q_i ln q_i`.
//! The two parts are merged with the scalings `1 / (2 D_w^2)` and
//! `1 / (2 D_q^2)`, where `D_w = R / sqrt(2)` and `D_q = sqrt(ln m)`.
//!
//! With a single group the simplex is the singleton `{1}`: every q-side term
//! is identically zero and the q-part of a prox step is always `(1)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("dual map undefined: q[{index}] = {value} is not strictly positive")]
    BoundaryPoint { index: usize, value: f64 },
    #[error("step size must be positive and finite, got {0}")]
    InvalidStepSize(f64),
    #[error("anchor weight must lie in [0, 1], got {0}")]
    InvalidAnchorWeight(f64),
    #[error("gradient has a non-finite entry")]
    NonFiniteGradient,
    #[error("weights must be strictly positive and finite")]
    InvalidWeight,
    #[error("averaging normalizer must be positive and finite, got {0}")]
    InvalidNormalizer(f64),
    #[error("cannot average an empty sequence")]
    Empty,
}

/// Domain constants of the merged Bregman setup.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    dim: usize,
    m: usize,
    radius: f64,
    d_w: f64,
    d_q: f64,
}

impl Geometry {
    pub fn new(dim: usize, m: usize, radius: f64) -> Result<Self, GeometryError> {
        if dim == 0 {
            return Err(GeometryError::InvalidGeometry("dim must be at least 1".into()));
        }
        if m == 0 {
            return Err(GeometryError::InvalidGeometry("m must be at least 1".into()));
        }
        if !(radius.is_finite() && radius > 0.0) {
            return Err(GeometryError::InvalidGeometry(format!(
                "radius must be positive and finite, got {radius}"
            )));
        }
        Ok(Self {
            dim,
            m,
            radius,
            d_w: radius / std::f64::consts::SQRT_2,
            d_q: (m as f64).ln().sqrt(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn d_w(&self) -> f64 {
        self.d_w
    }

    pub fn d_q(&self) -> f64 {
        self.d_q
    }

    /// `2 D_w^2`, the inverse scaling of the w-part of `psi`.
    pub(crate) fn w_scale(&self) -> f64 {
        2.0 * self.d_w * self.d_w
    }

    /// `2 D_q^2`; zero for the singleton simplex.
    pub(crate) fn q_scale(&self) -> f64 {
        2.0 * self.d_q * self.d_q
    }

    fn has_simplex(&self) -> bool {
        self.m > 1
    }

    fn check_w(&self, len: usize) -> Result<(), GeometryError> {
        if len != self.dim {
            return Err(GeometryError::DimensionMismatch { expected: self.dim, got: len });
        }
        Ok(())
    }

    fn check_q(&self, len: usize) -> Result<(), GeometryError> {
        if len != self.m {
            return Err(GeometryError::DimensionMismatch { expected: self.m, got: len });
        }
        Ok(())
    }
}

/// A primal-dual iterate `z = (w; q)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub w: Vec<f64>,
    pub q: Vec<f64>,
}

impl Point {
    pub fn new(w: Vec<f64>, q: Vec<f64>) -> Self {
        Self { w, q }
    }

    /// Componentwise `self - other`, as a displacement `(dw, dq)`.
    pub fn minus(&self, other: &Point) -> (Vec<f64>, Vec<f64>) {
        (sub(&self.w, &other.w), sub(&self.q, &other.q))
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().chain(self.q.iter()).all(|v| v.is_finite())
    }
}

/// The image `grad psi(z)`, kept only in dual coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualPoint {
    pub dw: Vec<f64>,
    pub sq: Vec<f64>,
}

/// Merged gradient `(grad_w F; -grad_q F)`. `gq` holds the already negated
/// q-part, so for nonnegative losses every entry is `<= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedGradient {
    pub gw: Vec<f64>,
    pub gq: Vec<f64>,
}

impl MergedGradient {
    pub fn zeros(dim: usize, m: usize) -> Self {
        Self { gw: vec![0.0; dim], gq: vec![0.0; m] }
    }

    pub fn is_finite(&self) -> bool {
        self.gw.iter().chain(self.gq.iter()).all(|v| v.is_finite())
    }

    /// `self - other`.
    pub fn minus(&self, other: &MergedGradient) -> MergedGradient {
        MergedGradient { gw: sub(&self.gw, &other.gw), gq: sub(&self.gq, &other.gq) }
    }

    /// `<g, z>` over both blocks.
    pub fn dot(&self, z: &Point) -> f64 {
        dot(&self.gw, &z.w) + dot(&self.gq, &z.q)
    }
}

/// Bregman anchor bundled with the primal point and `psi` value needed to
/// evaluate the divergence itself.
#[derive(Debug, Clone, PartialEq)]
pub struct Anchor {
    pub point: Point,
    pub dual: DualPoint,
    pub psi: f64,
}

impl Anchor {
    pub fn from_point(geom: &Geometry, point: &Point) -> Result<Self, GeometryError> {
        Ok(Self { dual: dual_map(geom, point)?, psi: psi(geom, point)?, point: point.clone() })
    }

    /// Recovers a primal representative of a dual vector (for example a
    /// mirror snapshot). The entropy part is determined up to a shift along
    /// the all-ones direction, which does not change divergences between
    /// points of the simplex.
    pub fn from_dual(geom: &Geometry, dual: &DualPoint) -> Result<Self, GeometryError> {
        geom.check_w(dual.dw.len())?;
        geom.check_q(dual.sq.len())?;
        let w: Vec<f64> = dual.dw.iter().map(|v| v * geom.w_scale()).collect();
        let q = if geom.has_simplex() {
            let t: Vec<f64> = dual.sq.iter().map(|s| s * geom.q_scale()).collect();
            softmax(&t)
        } else {
            vec![1.0]
        };
        let point = Point::new(w, q);
        Ok(Self { psi: psi(geom, &point)?, dual: dual.clone(), point })
    }
}

/// `z_0 = argmin psi`: the origin of the ball and the uniform distribution.
pub fn init_point(geom: &Geometry) -> Point {
    Point::new(vec![0.0; geom.dim], vec![1.0 / geom.m as f64; geom.m])
}

/// Merged primal norm `sqrt(||dw||_2^2 / (2 D_w^2) + ||dq||_1^2 / (2 D_q^2))`.
pub fn merged_norm(geom: &Geometry, dw: &[f64], dq: &[f64]) -> f64 {
    let w2 = dot(dw, dw) / geom.w_scale();
    let q2 = if geom.has_simplex() {
        let l1: f64 = dq.iter().map(|v| v.abs()).sum();
        l1 * l1 / geom.q_scale()
    } else {
        0.0
    };
    (w2 + q2).sqrt()
}

/// Merged norm of `a - b`.
pub fn distance(geom: &Geometry, a: &Point, b: &Point) -> f64 {
    let (dw, dq) = a.minus(b);
    merged_norm(geom, &dw, &dq)
}

/// Dual of [`merged_norm`]: `sqrt(2 D_w^2 ||gw||_2^2 + 2 D_q^2 ||gq||_inf^2)`.
pub fn merged_dual_norm(geom: &Geometry, g: &MergedGradient) -> f64 {
    let w2 = geom.w_scale() * dot(&g.gw, &g.gw);
    let linf = g.gq.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    (w2 + geom.q_scale() * linf * linf).sqrt()
}

/// Distance-generating function, with `0 ln 0 = 0`.
pub fn psi(geom: &Geometry, z: &Point) -> Result<f64, GeometryError> {
    geom.check_w(z.w.len())?;
    geom.check_q(z.q.len())?;
    let pw = 0.5 * dot(&z.w, &z.w) / geom.w_scale();
    if !geom.has_simplex() {
        return Ok(pw);
    }
    let ent: f64 = z.q.iter().map(|&v| if v > 0.0 { v * v.ln() } else { 0.0 }).sum();
    Ok(pw + ent / geom.q_scale())
}

/// `grad psi(z)`. Undefined on the relative boundary of the simplex.
pub fn dual_map(geom: &Geometry, z: &Point) -> Result<DualPoint, GeometryError> {
    geom.check_w(z.w.len())?;
    geom.check_q(z.q.len())?;
    let dw = z.w.iter().map(|v| v / geom.w_scale()).collect();
    if !geom.has_simplex() {
        return Ok(DualPoint { dw, sq: vec![0.0] });
    }
    let mut sq = Vec::with_capacity(geom.m);
    for (index, &value) in z.q.iter().enumerate() {
        if !(value > 0.0) {
            return Err(GeometryError::BoundaryPoint { index, value });
        }
        sq.push((1.0 + value.ln()) / geom.q_scale());
    }
    Ok(DualPoint { dw, sq })
}

/// `B(z, anchor) = psi(z) - psi(anchor) - <grad psi(anchor), z - anchor>`.
pub fn bregman(geom: &Geometry, z: &Point, anchor: &Anchor) -> Result<f64, GeometryError> {
    let pz = psi(geom, z)?;
    let (dw, dq) = z.minus(&anchor.point);
    let lin = dot(&anchor.dual.dw, &dw) + dot(&anchor.dual.sq, &dq);
    Ok((pz - anchor.psi - lin).max(0.0))
}

/// Convex combination `sum_k weights_k points_k / sum_k weights_k`.
pub fn weighted_average(points: &[Point], weights: &[f64]) -> Result<Point, GeometryError> {
    check_weights(points.len(), weights)?;
    let total: f64 = weights.iter().sum();
    let mut avg = PointAccumulator::new(points[0].w.len(), points[0].q.len());
    for (p, &a) in points.iter().zip(weights) {
        avg.add(p, a);
    }
    avg.finish(total)
}

/// `(sum_k weights_k duals_k) / normalizer`. The normalizer is explicit so that
/// averages whose weight total differs from the normalizing sum are expressible.
pub fn weighted_dual_average(
    duals: &[DualPoint],
    weights: &[f64],
    normalizer: f64,
) -> Result<DualPoint, GeometryError> {
    check_weights(duals.len(), weights)?;
    let mut avg = DualAccumulator::new(duals[0].dw.len(), duals[0].sq.len());
    for (d, &a) in duals.iter().zip(weights) {
        avg.add(d, a);
    }
    avg.finish(normalizer)
}

fn check_weights(len: usize, weights: &[f64]) -> Result<(), GeometryError> {
    if len == 0 {
        return Err(GeometryError::Empty);
    }
    if weights.len() != len {
        return Err(GeometryError::DimensionMismatch { expected: len, got: weights.len() });
    }
    if weights.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
        return Err(GeometryError::InvalidWeight);
    }
    Ok(())
}

/// Running weighted sum of primal points.
#[derive(Debug, Clone)]
pub struct PointAccumulator {
    w: Vec<f64>,
    q: Vec<f64>,
    total: f64,
}

impl PointAccumulator {
    pub fn new(dim: usize, m: usize) -> Self {
        Self { w: vec![0.0; dim], q: vec![0.0; m], total: 0.0 }
    }

    pub fn add(&mut self, p: &Point, weight: f64) {
        axpy(&mut self.w, weight, &p.w);
        axpy(&mut self.q, weight, &p.q);
        self.total += weight;
    }

    /// Sum of the weights pushed so far.
    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn finish(&self, normalizer: f64) -> Result<Point, GeometryError> {
        if !(normalizer.is_finite() && normalizer > 0.0) {
            return Err(GeometryError::InvalidNormalizer(normalizer));
        }
        Ok(Point::new(
            self.w.iter().map(|v| v / normalizer).collect(),
            self.q.iter().map(|v| v / normalizer).collect(),
        ))
    }

    /// Average normalized by the accumulated weight total.
    pub fn mean(&self) -> Result<Point, GeometryError> {
        self.finish(self.total)
    }
}

/// Running weighted sum of dual points.
#[derive(Debug, Clone)]
pub struct DualAccumulator {
    dw: Vec<f64>,
    sq: Vec<f64>,
    total: f64,
}

impl DualAccumulator {
    pub fn new(dim: usize, m: usize) -> Self {
        Self { dw: vec![0.0; dim], sq: vec![0.0; m], total: 0.0 }
    }

    pub fn add(&mut self, d: &DualPoint, weight: f64) {
        axpy(&mut self.dw, weight, &d.dw);
        axpy(&mut self.sq, weight, &d.sq);
        self.total += weight;
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn finish(&self, normalizer: f64) -> Result<DualPoint, GeometryError> {
        if !(normalizer.is_finite() && normalizer > 0.0) {
            return Err(GeometryError::InvalidNormalizer(normalizer));
        }
        Ok(DualPoint {
            dw: self.dw.iter().map(|v| v / normalizer).collect(),
            sq: self.sq.iter().map(|v| v / normalizer).collect(),
        })
    }
}

/// Composite prox step
/// `argmin_z { eta <g, z> + alpha B(z, anchor) + (1 - alpha) B(z, current) }`.
///
/// The w-part is a Euclidean-ball projection of the unconstrained minimizer and
/// the q-part is an exponentiated-gradient update normalized with
/// max-subtraction. With `alpha = 0` the anchor is never read; with `alpha = 1`
/// `current` is never read.
pub fn prox_step(
    geom: &Geometry,
    g: &MergedGradient,
    eta: f64,
    alpha: f64,
    anchor: &DualPoint,
    current: &Point,
) -> Result<Point, GeometryError> {
    if !(eta.is_finite() && eta > 0.0) {
        return Err(GeometryError::InvalidStepSize(eta));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(GeometryError::InvalidAnchorWeight(alpha));
    }
    if !g.is_finite() {
        return Err(GeometryError::NonFiniteGradient);
    }
    geom.check_w(g.gw.len())?;
    geom.check_q(g.gq.len())?;
    geom.check_w(current.w.len())?;
    geom.check_q(current.q.len())?;
    let use_anchor = alpha > 0.0;
    let use_current = alpha < 1.0;
    if use_anchor {
        geom.check_w(anchor.dw.len())?;
        geom.check_q(anchor.sq.len())?;
    }

    let sw = geom.w_scale();
    let mut w = vec![0.0; geom.dim];
    for (j, wj) in w.iter_mut().enumerate() {
        let mut v = -sw * eta * g.gw[j];
        if use_anchor {
            v += alpha * sw * anchor.dw[j];
        }
        if use_current {
            v += (1.0 - alpha) * current.w[j];
        }
        *wj = v;
    }
    project_ball(&mut w, geom.radius);

    if !geom.has_simplex() {
        return Ok(Point::new(w, vec![1.0]));
    }
    let sq = geom.q_scale();
    let t: Vec<f64> = (0..geom.m)
        .map(|i| {
            let mut v = -sq * eta * g.gq[i];
            if use_anchor {
                v += alpha * sq * anchor.sq[i];
            }
            if use_current {
                v += (1.0 - alpha) * (1.0 + current.q[i].ln());
            }
            v
        })
        .collect();
    Ok(Point::new(w, softmax(&t)))
}

/// Rescales `w` onto the ball of radius `r` when it lies outside.
pub fn project_ball(w: &mut [f64], r: f64) {
    let norm = dot(w, w).sqrt();
    if norm > r {
        let s = r / norm;
        w.iter_mut().for_each(|v| *v *= s);
    }
}

fn softmax(t: &[f64]) -> Vec<f64> {
    let max = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = t.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += a * xi);
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}
