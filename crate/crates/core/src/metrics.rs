//! Solution quality: worst group risk, excess risk, and the duality gap.
//!
//! The gap `max_q F(w_bar, q) - min_w F(w, q_bar)` has an exact first term
//! (`F` is linear in `q`, so the max sits at a vertex) and a second term from
//! a deterministic projected-gradient ERM oracle.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{dot, project_ball, Point};
use crate::problem::{EvalCounter, Problem};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
}

/// Worst (shifted) group risk and the first group attaining it.
pub fn max_group_risk(problem: &Problem, w: &[f64], counter: &mut EvalCounter) -> (f64, usize) {
    argmax(&problem.objective_risks(w, counter))
}

fn argmax(v: &[f64]) -> (f64, usize) {
    let mut best = (v[0], 0);
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > best.0 {
            best = (x, i);
        }
    }
    best
}

/// `max_i (R_i(w) - r_stars_i)` on unshifted risks.
pub fn excess_risk_gap(
    problem: &Problem,
    w: &[f64],
    r_stars: &[f64],
    counter: &mut EvalCounter,
) -> Result<f64, MetricsError> {
    if r_stars.len() != problem.m() {
        return Err(MetricsError::LengthMismatch { expected: problem.m(), got: r_stars.len() });
    }
    let risks = problem.risks(w, counter);
    Ok(risks.iter().zip(r_stars).map(|(r, s)| r - s).fold(f64::NEG_INFINITY, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    /// Stop once the gradient-mapping norm is at most this.
    pub tol: f64,
    pub max_iters: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { tol: 1e-8, max_iters: 100_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErmResult {
    pub w: Vec<f64>,
    /// `sum_i q_i (R_i(w) - shift_i)` at `w`.
    pub value: f64,
    pub iters: u64,
    pub grad_mapping_norm: f64,
    pub converged: bool,
}

/// Minimizes `sum_i q_i R_i(w)` over the ball of radius `radius` by projected
/// gradient descent with backtracking. The trial step starts at `1 / L`, is
/// doubled before each iteration and halved until the quadratic upper bound
/// holds. Returns the best point seen.
pub fn erm_oracle(
    problem: &Problem,
    q: &[f64],
    radius: f64,
    cfg: &OracleConfig,
    counter: &mut EvalCounter,
) -> ErmResult {
    let weighted = |risks: &[f64]| -> f64 { risks.iter().zip(q).map(|(r, qi)| r * qi).sum() };
    let smooth = problem.model().smoothness;
    let mut step = if smooth > 0.0 { 1.0 / smooth } else { 1.0 };
    let mut w = vec![0.0; problem.param_dim()];
    let mut z = Point::new(w.clone(), q.to_vec());
    let mut iters = 0;
    let mut gm_norm = f64::INFINITY;
    let mut converged = false;
    loop {
        z.w.clone_from(&w);
        let g = problem.full_gradient(&z, counter);
        let f = -dot(&g.gq, q);
        if iters >= cfg.max_iters {
            return ErmResult { w, value: f, iters, grad_mapping_norm: gm_norm, converged };
        }
        step *= 2.0;
        loop {
            let mut next: Vec<f64> = w.iter().zip(&g.gw).map(|(wi, gi)| wi - step * gi).collect();
            project_ball(&mut next, radius);
            let d: Vec<f64> = next.iter().zip(&w).map(|(a, b)| a - b).collect();
            let dd = dot(&d, &d);
            let f_next = weighted(&problem.objective_risks(&next, counter));
            let bound = f + dot(&g.gw, &d) + dd / (2.0 * step);
            if f_next <= bound + 1e-15 * f.abs().max(1.0) || step < 1e-300 {
                gm_norm = dd.sqrt() / step;
                iters += 1;
                if gm_norm <= cfg.tol {
                    converged = true;
                }
                if f_next <= f {
                    w = next;
                }
                break;
            }
            step *= 0.5;
        }
        if converged {
            let f = weighted(&problem.objective_risks(&w, counter));
            return ErmResult { w, value: f, iters, grad_mapping_norm: gm_norm, converged };
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    /// `max_i (R_i(w_bar) - shift_i)`.
    pub max_term: f64,
    pub argmax: usize,
    /// Oracle value of `min_w sum_i q_bar_i (R_i(w) - shift_i)`.
    pub min_term: f64,
    pub gap: f64,
    pub oracle_iters: u64,
    pub oracle_tol: f64,
    pub oracle_converged: bool,
    pub oracle_grad_mapping_norm: f64,
}

/// Duality gap of `z_bar` for the (possibly shifted) problem.
pub fn duality_gap(
    problem: &Problem,
    radius: f64,
    z_bar: &Point,
    cfg: &OracleConfig,
    counter: &mut EvalCounter,
) -> GapReport {
    let (max_term, argmax) = max_group_risk(problem, &z_bar.w, counter);
    let erm = erm_oracle(problem, &z_bar.q, radius, cfg, counter);
    GapReport {
        max_term,
        argmax,
        min_term: erm.value,
        gap: max_term - erm.value,
        oracle_iters: erm.iters,
        oracle_tol: cfg.tol,
        oracle_converged: erm.converged,
        oracle_grad_mapping_norm: erm.grad_mapping_norm,
    }
}
