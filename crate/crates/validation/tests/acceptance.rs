//! Acceptance criteria, one PASS/FAIL line each. Exits nonzero on any failure.
//!
//! Reference quantities (losses, full gradients, norms, Bregman divergences,
//! the prox minimizer and the saddle oracle) are recomputed here from scratch
//! rather than taken from the library under test.

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use gdro_cli::{cmd_run, median, plan_for_budget, Algo};
use gdro_core::datagen::{gen_gdro, gen_mero, SynthKind, SynthSpec};
use gdro_core::format::{save_dataset, Format};
use gdro_core::geometry::{prox_step, DualPoint};
use gdro_core::metrics::{duality_gap, erm_oracle, excess_risk_gap, OracleConfig};
use gdro_core::problem::{lipschitz_li, lipschitz_lu, lipschitz_lz, GroupSample};
use gdro_core::solvers::{
    aleg, aleg_grad_evals, alem, mpvr, mpvr_grad_evals, AlegConfig, AlemConfig, IterateAudit, MpvrConfig, Sampling,
    DOMAIN_DIAMETER,
};
use gdro_core::{Group, GroupedDataset, LabelKind, LossModel, MergedGradient, Point, Problem};

type Outcome = Result<String, String>;

fn main() {
    let mut audits = Vec::new();
    let mut failed = 0;
    let mut report = |name: &str, limit: Duration, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let out = f();
        let dt = t.elapsed();
        let (ok, msg) = match out {
            Ok(m) if dt <= limit => (true, m),
            Ok(m) => (false, format!("{m}; over the {:.0} s limit", limit.as_secs_f64())),
            Err(m) => (false, m),
        };
        if !ok {
            failed += 1;
        }
        println!("{} {name}: {msg} [{:.2} s]", if ok { "PASS" } else { "FAIL" }, dt.as_secs_f64());
    };
    let secs = Duration::from_secs;
    report("1 unbiased estimators", secs(60), &mut unbiasedness);
    report("2 lipschitz bounds", secs(10), &mut lipschitz_bounds);
    report("3 prox exactness", secs(30), &mut prox_exactness);
    report("4 rate trend", secs(120), &mut || rate_trend(&mut audits));
    report("5 head-to-head", secs(300), &mut || head_to_head(&mut audits));
    report("6 alem pipeline", secs(300), &mut || alem_pipeline(&mut audits));
    report("7 accounting", secs(1), &mut accounting);
    report("8 determinism", secs(60), &mut determinism);
    report("9 domain invariants", secs(1), &mut || domain_invariants(&audits));
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------------------
// Reference arithmetic

fn dotp(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Loss and gradient of one sample, written out directly.
fn ref_loss_grad(kind: LabelKind, w: &[f64], x: &[f64], y: i64) -> (f64, Vec<f64>) {
    match kind {
        LabelKind::Binary => {
            let t = -(y as f64) * dotp(w, x);
            let loss = if t > 0.0 { t + (-t).exp().ln_1p() } else { t.exp().ln_1p() };
            let sig = 1.0 / (1.0 + (-t).exp());
            (loss, x.iter().map(|v| -(y as f64) * sig * v).collect())
        }
        LabelKind::Multiclass { classes } => {
            let d = x.len();
            let logits: Vec<f64> = (0..classes).map(|c| dotp(&w[c * d..(c + 1) * d], x)).collect();
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
            let loss = mx + z.ln() - logits[y as usize];
            let mut g = vec![0.0; classes * d];
            for c in 0..classes {
                let p = (logits[c] - mx).exp() / z - if c as i64 == y { 1.0 } else { 0.0 };
                for k in 0..d {
                    g[c * d + k] = p * x[k];
                }
            }
            (loss, g)
        }
    }
}

fn ref_risks(ds: &GroupedDataset, w: &[f64]) -> Vec<f64> {
    (0..ds.m())
        .map(|i| {
            let n = ds.group_size(i);
            (0..n).map(|j| ref_loss_grad(ds.label_kind(), w, ds.x(i, j), ds.y(i, j)).0).sum::<f64>() / n as f64
        })
        .collect()
}

/// `(sum_i q_i grad R_i(w), -(R_i(w) - shift_i))`.
fn ref_full_gradient(ds: &GroupedDataset, shift: &[f64], z: &Point) -> (Vec<f64>, Vec<f64>) {
    let mut gw = vec![0.0; z.w.len()];
    let mut gq = vec![0.0; ds.m()];
    for i in 0..ds.m() {
        let n = ds.group_size(i);
        let mut risk = 0.0;
        for j in 0..n {
            let (l, g) = ref_loss_grad(ds.label_kind(), &z.w, ds.x(i, j), ds.y(i, j));
            risk += l / n as f64;
            for (o, v) in gw.iter_mut().zip(&g) {
                *o += z.q[i] * v / n as f64;
            }
        }
        gq[i] = -(risk - shift[i]);
    }
    (gw, gq)
}

fn q_scale(m: usize) -> f64 {
    2.0 * (m as f64).ln()
}

/// `sqrt(||dw||^2 / R^2 + ||dq||_1^2 / (2 ln m))`.
fn ref_norm(r: f64, dw: &[f64], dq: &[f64]) -> f64 {
    let mut s = dotp(dw, dw) / (r * r);
    if dq.len() > 1 {
        let l1: f64 = dq.iter().map(|v| v.abs()).sum();
        s += l1 * l1 / q_scale(dq.len());
    }
    s.sqrt()
}

/// `sqrt(R^2 ||gw||^2 + 2 ln m ||gq||_inf^2)`.
fn ref_dual_norm(r: f64, gw: &[f64], gq: &[f64]) -> f64 {
    let linf = gq.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    (r * r * dotp(gw, gw) + q_scale(gq.len()) * linf * linf).sqrt()
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn random_point(rng: &mut ChaCha8Rng, dim: usize, m: usize, r: f64) -> Point {
    let dir: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let norm = dotp(&dir, &dir).sqrt().max(1e-300);
    let rad = r * rng.random::<f64>().powf(1.0 / dim as f64);
    let w = dir.iter().map(|v| v * rad / norm).collect();
    // Spread exponents so some draws sit close to a vertex.
    let spread = 0.5 + 6.0 * rng.random::<f64>();
    let e: Vec<f64> = (0..m).map(|_| (spread * rng.sample::<f64, _>(StandardNormal)).exp()).collect();
    let s: f64 = e.iter().sum();
    Point::new(w, e.into_iter().map(|v| v / s).collect())
}

fn random_dataset(rng: &mut ChaCha8Rng, dim: usize, sizes: &[usize], kind: LabelKind) -> GroupedDataset {
    let groups = sizes
        .iter()
        .map(|&n| {
            let features = (0..n * dim).map(|_| rng.sample(StandardNormal)).collect();
            let labels = (0..n)
                .map(|_| match kind {
                    LabelKind::Binary => {
                        if rng.random::<bool>() {
                            1
                        } else {
                            -1
                        }
                    }
                    LabelKind::Multiclass { classes } => rng.random_range(0..classes as i64),
                })
                .collect();
            Group::new(features, labels)
        })
        .collect();
    GroupedDataset::new(dim, kind, groups).unwrap()
}

// ---------------------------------------------------------------------------
// 1

fn all_tuples(sizes: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for &n in sizes {
        out = out.into_iter().flat_map(|t| (0..n).map(move |j| [t.clone(), vec![j]].concat())).collect();
    }
    out
}

fn axpy_grad(acc: &mut (Vec<f64>, Vec<f64>), p: f64, g: &MergedGradient) {
    acc.0.iter_mut().zip(&g.gw).for_each(|(a, v)| *a += p * v);
    acc.1.iter_mut().zip(&g.gq).for_each(|(a, v)| *a += p * v);
}

fn unbiasedness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0_f64;
    let mut cases = 0;
    for m in 1..=3usize {
        for sizes in all_tuples(&vec![3; m]) {
            let sizes: Vec<usize> = sizes.iter().map(|s| s + 1).collect();
            for dim in 1..=2 {
                for kind in [LabelKind::Binary, LabelKind::Multiclass { classes: 3 }] {
                    let ds = random_dataset(&mut rng, dim, &sizes, kind);
                    let shift: Vec<f64> = (0..m).map(|_| rng.random::<f64>() - 0.5).collect();
                    let p = Problem::new(&ds, LossModel::for_dataset(&ds)).with_shift(shift.clone()).unwrap();
                    let pd = p.param_dim();
                    let z = random_point(&mut rng, pd, m, 2.0);
                    let zs = random_point(&mut rng, pd, m, 2.0);
                    let reference = ref_full_gradient(&ds, &shift, &z);
                    let c = &mut Default::default();
                    let full = p.full_gradient(&z, c);
                    let full_s = p.full_gradient(&zs, c);
                    let mut err = max_abs_diff(&full.gw, &reference.0).max(max_abs_diff(&full.gq, &reference.1));
                    let zero = || (vec![0.0; pd], vec![0.0; m]);

                    // Group sampling and its variance-reduced form.
                    let tuples = all_tuples(&sizes);
                    let prob = 1.0 / tuples.len() as f64;
                    let (mut plain, mut vr) = (zero(), zero());
                    for t in tuples {
                        let s = GroupSample(t);
                        let g = p.stochastic_gradient(&z, &s, c);
                        let gs = p.stochastic_gradient(&zs, &s, c);
                        axpy_grad(&mut plain, prob, &g);
                        axpy_grad(&mut vr, prob, &g.minus(&gs));
                    }
                    axpy_grad(&mut vr, 1.0, &full_s);

                    // Single-index uniform and importance sampling, plain and reduced.
                    let total = ds.total();
                    let (mut uni, mut uni_vr, mut imp, mut imp_vr) = (zero(), zero(), zero(), zero());
                    for l in 0..total {
                        let g = p.mpvr_uniform_gradient_at(&z, l, c);
                        let gs = p.mpvr_uniform_gradient_at(&zs, l, c);
                        axpy_grad(&mut uni, 1.0 / total as f64, &g);
                        axpy_grad(&mut uni_vr, 1.0 / total as f64, &g.minus(&gs));
                    }
                    for (i, &n) in sizes.iter().enumerate() {
                        for j in 0..n {
                            let pr = 1.0 / (m * n) as f64;
                            let g = p.mpvr_importance_gradient_at(&z, i, j, c);
                            let gs = p.mpvr_importance_gradient_at(&zs, i, j, c);
                            axpy_grad(&mut imp, pr, &g);
                            axpy_grad(&mut imp_vr, pr, &g.minus(&gs));
                        }
                    }
                    axpy_grad(&mut uni_vr, 1.0, &full_s);
                    axpy_grad(&mut imp_vr, 1.0, &full_s);
                    for e in [&plain, &vr, &uni, &uni_vr, &imp, &imp_vr] {
                        err = err.max(max_abs_diff(&e.0, &reference.0)).max(max_abs_diff(&e.1, &reference.1));
                    }
                    worst = worst.max(err);
                    cases += 1;
                }
            }
        }
    }
    let msg = format!("{cases} instances, max |E[g] - grad F| = {worst:.2e} (tol 1e-12)");
    if worst <= 1e-12 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// ---------------------------------------------------------------------------
// 2

fn lipschitz_bounds() -> Outcome {
    let spec = SynthSpec::new(SynthKind::Gdro, 8, 16, 25, 11);
    let ds = gen_gdro(&spec).unwrap().train;
    let model = LossModel::for_dataset(&ds);
    let p = Problem::new(&ds, model);
    let r = 1.0;
    let geom = p.geometry(r).unwrap();
    let (lz, lu, li) = (lipschitz_lz(&geom, &model), lipschitz_lu(&geom, &model, &ds), lipschitz_li(&geom, &model));
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let c = &mut Default::default();

    let mut violations = 0;
    let mut worst_ratio = 0.0_f64;
    for _ in 0..10_000 {
        let z1 = random_point(&mut rng, 16, 8, r);
        let z2 = random_point(&mut rng, 16, 8, r);
        let s = p.draw_group_sample(&mut rng);
        let g = p.stochastic_gradient(&z1, &s, c).minus(&p.stochastic_gradient(&z2, &s, c));
        let lhs = ref_dual_norm(r, &g.gw, &g.gq);
        let rhs = lz * ref_norm(r, &diff(&z1.w, &z2.w), &diff(&z1.q, &z2.q));
        if lhs > rhs * (1.0 + 1e-12) {
            violations += 1;
        }
        worst_ratio = worst_ratio.max(lhs / rhs);
    }

    // Second moments over 50 pairs, 2000 draws each, compared within 3 standard errors.
    let mut moment_fail = 0;
    let mut worst_moment = [0.0_f64; 2];
    for _ in 0..50 {
        let z1 = random_point(&mut rng, 16, 8, r);
        let z2 = random_point(&mut rng, 16, 8, r);
        let dz2 = ref_norm(r, &diff(&z1.w, &z2.w), &diff(&z1.q, &z2.q)).powi(2);
        for (slot, (lc, sampling)) in [(lu, Sampling::Uniform), (li, Sampling::Importance)].into_iter().enumerate() {
            let draws: Vec<f64> = (0..2000)
                .map(|_| {
                    let g = match sampling {
                        Sampling::Uniform => {
                            let l = p.draw_uniform_index(&mut rng);
                            p.mpvr_uniform_gradient_at(&z1, l, c).minus(&p.mpvr_uniform_gradient_at(&z2, l, c))
                        }
                        Sampling::Importance => {
                            let (i, j) = p.draw_importance_pair(&mut rng);
                            p.mpvr_importance_gradient_at(&z1, i, j, c)
                                .minus(&p.mpvr_importance_gradient_at(&z2, i, j, c))
                        }
                    };
                    ref_dual_norm(r, &g.gw, &g.gq).powi(2)
                })
                .collect();
            let n = draws.len() as f64;
            let mean = draws.iter().sum::<f64>() / n;
            let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let se = (var / n).sqrt();
            if mean - 3.0 * se > lc * lc * dz2 {
                moment_fail += 1;
            }
            worst_moment[slot] = worst_moment[slot].max(mean / (lc * lc * dz2));
        }
    }
    let msg = format!(
        "L_z violations {violations}/10000 (max ratio {worst_ratio:.3}); second-moment failures {moment_fail}/100 \
         (max E/L_u^2 ratio {:.3}, E/L_i^2 ratio {:.3})",
        worst_moment[0], worst_moment[1]
    );
    if violations == 0 && moment_fail == 0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// ---------------------------------------------------------------------------
// 3

fn ref_psi_w(r: f64, w: &[f64]) -> f64 {
    0.5 * dotp(w, w) / (r * r)
}

fn ref_psi_q(q: &[f64]) -> f64 {
    if q.len() < 2 {
        return 0.0;
    }
    q.iter().map(|&v| if v > 0.0 { v * v.ln() } else { 0.0 }).sum::<f64>() / q_scale(q.len())
}

/// Prox objective `eta <g, z> + alpha B(z, a) + (1 - alpha) B(z, c)`, split into
/// its w and q parts.
struct ProxInstance {
    r: f64,
    eta: f64,
    alpha: f64,
    g: MergedGradient,
    a: Point,
    c: Point,
}

impl ProxInstance {
    fn breg_w(&self, w: &[f64], b: &[f64]) -> f64 {
        let r2 = self.r * self.r;
        ref_psi_w(self.r, w) - ref_psi_w(self.r, b) - dotp(&b.iter().map(|v| v / r2).collect::<Vec<_>>(), &diff(w, b))
    }

    fn breg_q(&self, q: &[f64], b: &[f64]) -> f64 {
        if q.len() < 2 {
            return 0.0;
        }
        let grad: Vec<f64> = b.iter().map(|v| (1.0 + v.ln()) / q_scale(q.len())).collect();
        ref_psi_q(q) - ref_psi_q(b) - dotp(&grad, &diff(q, b))
    }

    fn obj_w(&self, w: &[f64]) -> f64 {
        self.eta * dotp(&self.g.gw, w) + self.alpha * self.breg_w(w, &self.a.w) + (1.0 - self.alpha) * self.breg_w(w, &self.c.w)
    }

    fn obj_q(&self, q: &[f64]) -> f64 {
        if q.len() < 2 {
            return 0.0;
        }
        self.eta * dotp(&self.g.gq, q) + self.alpha * self.breg_q(q, &self.a.q) + (1.0 - self.alpha) * self.breg_q(q, &self.c.q)
    }

    fn obj(&self, z: &Point) -> f64 {
        self.obj_w(&z.w) + self.obj_q(&z.q)
    }
}

fn project(w: &mut [f64], r: f64) {
    let n = dotp(w, w).sqrt();
    if n > r {
        w.iter_mut().for_each(|v| *v *= r / n);
    }
}

/// Box grid over the ball followed by a projected pattern search.
fn grid_min_w(inst: &ProxInstance, dim: usize) -> f64 {
    let r = inst.r;
    let steps = [0, 400, 60, 24][dim];
    let h0 = 2.0 * r / steps as f64;
    let mut best = (f64::INFINITY, vec![0.0; dim]);
    let mut idx = vec![0usize; dim];
    loop {
        let w: Vec<f64> = idx.iter().map(|&i| -r + i as f64 * h0).collect();
        if dotp(&w, &w) <= r * r {
            let v = inst.obj_w(&w);
            if v < best.0 {
                best = (v, w);
            }
        }
        let mut k = 0;
        while k < dim {
            idx[k] += 1;
            if idx[k] <= steps {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == dim {
            break;
        }
    }
    let mut dirs: Vec<Vec<f64>> = Vec::new();
    for k in 0..dim {
        let mut e = vec![0.0; dim];
        e[k] = 1.0;
        dirs.push(e.clone());
        e[k] = -1.0;
        dirs.push(e);
    }
    if dim >= 2 {
        for a in 0..dim {
            for b in a + 1..dim {
                for (sa, sb) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                    let mut e = vec![0.0; dim];
                    e[a] = sa / 2f64.sqrt();
                    e[b] = sb / 2f64.sqrt();
                    dirs.push(e);
                }
            }
        }
    }
    let (mut fbest, mut w) = best;
    let mut h = h0;
    while h > 1e-13 * r {
        let mut improved = false;
        for d in &dirs {
            let mut cand: Vec<f64> = w.iter().zip(d).map(|(x, e)| x + h * e).collect();
            project(&mut cand, r);
            let v = inst.obj_w(&cand);
            if v < fbest {
                fbest = v;
                w = cand;
                improved = true;
            }
        }
        if !improved {
            h *= 0.5;
        }
    }
    fbest
}

/// Simplex lattice followed by pairwise exchange with ternary search.
fn grid_min_q(inst: &ProxInstance, m: usize) -> f64 {
    if m < 2 {
        return 0.0;
    }
    let res = [0, 0, 2000, 120, 40][m];
    let mut best = (f64::INFINITY, vec![0.0; m]);
    let mut counts = vec![0usize; m];
    fn rec(k: usize, left: usize, res: usize, counts: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        if k + 1 == counts.len() {
            counts[k] = left;
            f(counts);
            return;
        }
        for c in 0..=left {
            counts[k] = c;
            rec(k + 1, left - c, res, counts, f);
        }
    }
    rec(0, res, res, &mut counts, &mut |c| {
        let q: Vec<f64> = c.iter().map(|&v| v as f64 / res as f64).collect();
        let v = inst.obj_q(&q);
        if v < best.0 {
            best = (v, q);
        }
    });
    let (mut fbest, mut q) = best;
    for _ in 0..500 {
        let before = fbest;
        for i in 0..m {
            for j in i + 1..m {
                let at = |t: f64, q: &[f64]| {
                    let mut c = q.to_vec();
                    c[i] += t;
                    c[j] -= t;
                    c[i] = c[i].max(0.0);
                    c[j] = c[j].max(0.0);
                    c
                };
                let (mut lo, mut hi) = (-q[i], q[j]);
                for _ in 0..200 {
                    let a = lo + (hi - lo) / 3.0;
                    let b = hi - (hi - lo) / 3.0;
                    if inst.obj_q(&at(a, &q)) < inst.obj_q(&at(b, &q)) {
                        hi = b;
                    } else {
                        lo = a;
                    }
                }
                let cand = at(0.5 * (lo + hi), &q);
                let v = inst.obj_q(&cand);
                if v < fbest {
                    fbest = v;
                    q = cand;
                }
            }
        }
        if before - fbest <= 1e-16 {
            break;
        }
    }
    fbest
}

fn prox_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0_f64;
    let mut cases = Vec::new();
    for t in 0..100 {
        let dim = rng.random_range(1..=3usize);
        let m = rng.random_range(1..=4usize);
        let r = 0.5 + 1.5 * rng.random::<f64>();
        let alpha = match t % 10 {
            0 => 0.0,
            1 => 1.0,
            _ => rng.random::<f64>(),
        };
        let scale = 10f64.powf(rng.random_range(-1.0..1.0));
        let g = MergedGradient {
            gw: (0..dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect(),
            gq: (0..m).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect(),
        };
        let a = random_point(&mut rng, dim, m, r);
        let c = random_point(&mut rng, dim, m, r);
        let eta = 10f64.powf(rng.random_range(-2.0..0.5));
        cases.push((dim, m, ProxInstance { r, eta, alpha, g, a, c }));
    }
    let results: Vec<f64> = cases
        .par_iter()
        .map(|(dim, m, inst)| {
            let geom = gdro_core::Geometry::new(*dim, *m, inst.r).unwrap();
            let anchor = DualPoint {
                dw: inst.a.w.iter().map(|v| v / (inst.r * inst.r)).collect(),
                sq: if *m >= 2 { inst.a.q.iter().map(|v| (1.0 + v.ln()) / q_scale(*m)).collect() } else { vec![0.0] },
            };
            let z = prox_step(&geom, &inst.g, inst.eta, inst.alpha, &anchor, &inst.c).unwrap();
            let closed = inst.obj(&z);
            let oracle = grid_min_w(inst, *dim) + grid_min_q(inst, *m);
            (closed - oracle).abs()
        })
        .collect();
    for d in &results {
        worst = worst.max(*d);
    }
    let msg = format!("100 instances, max |closed form - grid minimizer| = {worst:.2e} (tol 1e-8)");
    if worst <= 1e-8 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// ---------------------------------------------------------------------------
// 4

/// Deterministic mirror prox on the full problem: Euclidean steps in `w`,
/// entropic steps in `q`, averaged half points.
fn saddle_oracle(ds: &GroupedDataset, r: f64, eta: f64, steps: usize) -> Point {
    let m = ds.m();
    let dim = ds.dim();
    let shift = vec![0.0; m];
    let zero_w = vec![0.0; dim];
    let mut z = Point::new(zero_w.clone(), vec![1.0 / m as f64; m]);
    let mut avg = Point::new(zero_w, vec![0.0; m]);
    let step = |from: &Point, at: &Point| -> Point {
        let (gw, gq) = ref_full_gradient(ds, &shift, at);
        let mut w: Vec<f64> = from.w.iter().zip(&gw).map(|(a, g)| a - r * r * eta * g).collect();
        project(&mut w, r);
        let t: Vec<f64> = from.q.iter().zip(&gq).map(|(q, g)| q.ln() - q_scale(m) * eta * g).collect();
        let mx = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = t.iter().map(|v| (v - mx).exp()).collect();
        let s: f64 = e.iter().sum();
        Point::new(w, e.iter().map(|v| v / s).collect())
    };
    for _ in 0..steps {
        let half = step(&z, &z);
        z = step(&z, &half);
        avg.w.iter_mut().zip(&half.w).for_each(|(a, v)| *a += v);
        avg.q.iter_mut().zip(&half.q).for_each(|(a, v)| *a += v);
    }
    Point::new(avg.w.iter().map(|v| v / steps as f64).collect(), avg.q.iter().map(|v| v / steps as f64).collect())
}

fn rate_trend(audits: &mut Vec<(String, f64, IterateAudit)>) -> Outcome {
    let ds = gen_gdro(&SynthSpec::new(SynthKind::Gdro, 2, 2, 4, 0)).unwrap().train;
    let p = Problem::new(&ds, LossModel::for_dataset(&ds));
    let r = 1.0;
    let geom = p.geometry(r).unwrap();
    let oc = OracleConfig::default();

    // Step for the oracle from its own smoothness bound.
    let xmax = (0..ds.m())
        .flat_map(|i| (0..ds.group_size(i)).map(move |j| (i, j)))
        .map(|(i, j)| dotp(ds.x(i, j), ds.x(i, j)).sqrt())
        .fold(0.0, f64::max);
    let lip = 2.0 * r * (xmax * xmax / 4.0 * r + xmax * (2.0 * 2f64.ln()).sqrt()) + xmax * r;
    let saddle = saddle_oracle(&ds, r, 0.5 / lip, 1_000_000);
    let rs = ref_risks(&ds, &saddle.w);
    let saddle_gap = duality_gap(&p, r, &saddle, &oc, &mut Default::default());
    let value = rs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    let mut means = Vec::new();
    let mut bracket_ok = true;
    for s in [40, 80] {
        let runs: Vec<_> = (0..20u64)
            .into_par_iter()
            .map(|seed| {
                let rec = aleg(&p, &geom, &AlegConfig::new(s, 4, seed), 0).unwrap();
                let gap = duality_gap(&p, r, &rec.solution, &oc, &mut Default::default());
                (gap, rec.audit)
            })
            .collect();
        for (gap, audit) in &runs {
            bracket_ok &= gap.min_term <= value + 1e-6 && gap.max_term >= value - 1e-6;
            audits.push((format!("aleg S={s}"), r, *audit));
        }
        means.push(runs.iter().map(|(g, _)| g.gap).sum::<f64>() / runs.len() as f64);
    }
    let ratio = means[1] / means[0];
    let msg = format!(
        "mean gap S=40 {:.4e}, S=80 {:.4e}, ratio {ratio:.3} (want [0.35, 0.75]); saddle value {value:.6}, \
         oracle gap {:.2e}",
        means[0], means[1], saddle_gap.gap
    );
    let oracle_ok = saddle_gap.gap < 0.05 * means[1];
    if (0.35..=0.75).contains(&ratio) && bracket_ok && oracle_ok {
        Ok(msg)
    } else {
        Err(format!("{msg}; saddle bracket ok {bracket_ok}, oracle accurate {oracle_ok}"))
    }
}

// ---------------------------------------------------------------------------
// 5

fn head_to_head(audits: &mut Vec<(String, f64, IterateAudit)>) -> Outcome {
    let ds = gen_gdro(&SynthSpec::new(SynthKind::Gdro, 10, 20, 200, 0)).unwrap().train;
    let p = Problem::new(&ds, LossModel::for_dataset(&ds));
    let r = 1.0;
    let geom = p.geometry(r).unwrap();
    let budget = 2_000_000;
    let algos = [Algo::Aleg, Algo::Smd, Algo::MpvrUniform, Algo::MpvrImportance];
    let mut finals = Vec::new();
    for algo in algos {
        let plan = plan_for_budget(algo, &ds, budget).unwrap();
        let runs: Vec<_> = (0..20u64)
            .into_par_iter()
            .map(|seed| plan.run(&p, &geom, seed, 0).unwrap().record)
            .collect();
        let mut vals = Vec::new();
        for rec in &runs {
            if rec.final_counter.grad_evals > budget {
                return Err(format!("{} spent {} > {budget}", algo.name(), rec.final_counter.grad_evals));
            }
            vals.push(rec.trajectory.last().unwrap().max_risk);
            audits.push((algo.name().to_string(), r, rec.audit));
        }
        finals.push(median(&mut vals));
    }
    let msg = format!(
        "median final max risk: aleg {:.5}, smd {:.5}, mpvr-uniform {:.5}, mpvr-importance {:.5}",
        finals[0], finals[1], finals[2], finals[3]
    );
    let checks = [("smd", finals[0] <= finals[1]), ("mpvr-uniform", finals[0] <= finals[2]), ("mpvr-importance", finals[0] <= finals[3])];
    let lost: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    if lost.is_empty() {
        Ok(msg)
    } else {
        Err(format!("{msg}; aleg is behind {}", lost.join(", ")))
    }
}

// ---------------------------------------------------------------------------
// 6

fn alem_pipeline(audits: &mut Vec<(String, f64, IterateAudit)>) -> Outcome {
    let ds = gen_mero(&SynthSpec::new(SynthKind::Mero, 5, 10, 200, 0)).unwrap().train;
    let model = LossModel::for_dataset(&ds);
    let p = Problem::new(&ds, model);
    let r = 1.0;
    let geom = p.geometry(r).unwrap();
    let oc = OracleConfig { tol: 1e-10, max_iters: 1_000_000 };
    let r_star: Vec<f64> = (0..ds.m())
        .map(|i| {
            let g = ds.single_group(i).unwrap();
            erm_oracle(&Problem::new(&g, model), &[1.0], r, &oc, &mut Default::default()).value
        })
        .collect();
    let init_gap = excess_risk_gap(&p, &vec![0.0; ds.dim()], &r_star, &mut Default::default()).unwrap();

    let budget = 800;
    let mut med_err = Vec::new();
    let mut worst_gap = f64::NEG_INFINITY;
    for t in [budget, 2 * budget] {
        let runs: Vec<_> = (0..10u64)
            .into_par_iter()
            .map(|seed| alem(&p, &geom, &AlemConfig::new(t, ds.n_bar(), seed), 0).unwrap())
            .collect();
        let mut errs = Vec::new();
        for out in &runs {
            errs.push(out.r_hats.iter().zip(&r_star).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
            let gap = excess_risk_gap(&p, &out.record.solution.w, &r_star, &mut Default::default()).unwrap();
            worst_gap = worst_gap.max(gap);
            audits.push((format!("alem T={t}"), r, out.record.audit));
        }
        med_err.push(median(&mut errs));
    }
    let ratio = med_err[0] / med_err[1];
    let msg = format!(
        "median stage-1 error T={budget} {:.3e}, 2T {:.3e}, ratio {ratio:.2} (want [1.5, 3.0]); \
         worst final excess gap {worst_gap:.4} vs initial {init_gap:.4}",
        med_err[0], med_err[1]
    );
    if (1.5..=3.0).contains(&ratio) && worst_gap <= init_gap {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// ---------------------------------------------------------------------------
// 7

fn accounting() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let configs: [(&[usize], usize, usize); 3] = [(&[2, 5, 9], 3, 4), (&[4, 4], 1, 1), (&[7, 3, 1, 6, 2], 2, 10)];
    let mut lines = Vec::new();
    for (sizes, s, k) in configs {
        let ds = random_dataset(&mut rng, 3, sizes, LabelKind::Binary);
        let p = Problem::new(&ds, LossModel::for_dataset(&ds));
        let geom = p.geometry(1.0).unwrap();
        let m = sizes.len() as u64;
        let total: u64 = sizes.iter().map(|&n| n as u64).sum();
        let (s64, k64) = (s as u64, k as u64);
        let want_aleg = s64 * (total + 2 * m * k64);
        let want_mpvr = s64 * (total + 2 * k64);
        let got_aleg = aleg(&p, &geom, &AlegConfig::new(s, k, 5), 1).unwrap().final_counter.grad_evals;
        if got_aleg != want_aleg || aleg_grad_evals(ds.total(), ds.m(), s, k) != want_aleg {
            return Err(format!("aleg on n={sizes:?}, S={s}, K={k}: {got_aleg} != {want_aleg}"));
        }
        for sampling in [Sampling::Uniform, Sampling::Importance] {
            let got = mpvr(&p, &geom, &MpvrConfig::new(s, k, sampling, 5), 1).unwrap().final_counter.grad_evals;
            if got != want_mpvr || mpvr_grad_evals(ds.total(), s, k) != want_mpvr {
                return Err(format!("mpvr {sampling:?} on n={sizes:?}, S={s}, K={k}: {got} != {want_mpvr}"));
            }
        }
        lines.push(format!("n={sizes:?} S={s} K={k}: aleg {want_aleg}, mpvr {want_mpvr}"));
    }
    Ok(lines.join("; "))
}

// ---------------------------------------------------------------------------
// 8

fn strip_wallclock(csv: &str) -> String {
    csv.lines().map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head)).collect::<Vec<_>>().join("\n")
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let ds = gen_gdro(&SynthSpec::new(SynthKind::Gdro, 4, 6, 30, 5)).unwrap().train;
    save_dataset(&ds, &dir.path().join("data.txt"), Format::Text).map_err(|e| e.to_string())?;
    let mut compared = 0;
    for (algo, block) in [
        ("aleg", r#""aleg": {"epochs": 6}"#),
        ("mpvr-importance", r#""mpvr": {"epochs": 3}"#),
        ("smd", r#""smd": {"steps": 500}"#),
    ] {
        let mut outputs = Vec::new();
        for run in ["a", "b"] {
            let cfg = format!(
                r#"{{"algo": "{algo}", "dataset": "data.txt", {block}, "geometry": {{"radius": 1.0}},
                   "seeds": [3, 4], "record_every": 7, "output": "{algo}-{run}"}}"#
            );
            let path = dir.path().join(format!("{algo}-{run}.json"));
            fs::write(&path, cfg).map_err(|e| e.to_string())?;
            cmd_run(&path).map_err(|e| format!("{e:#}"))?;
            outputs.push(dir.path().join(format!("{algo}-{run}")));
        }
        for seed in [3, 4] {
            let read = |d: &Path| fs::read_to_string(d.join(format!("{algo}-seed{seed}.csv"))).unwrap();
            let (a, b) = (read(&outputs[0]), read(&outputs[1]));
            if strip_wallclock(&a) != strip_wallclock(&b) {
                return Err(format!("{algo} seed {seed}: trajectories differ"));
            }
            let sol = |d: &Path| fs::read(d.join(format!("solution-seed{seed}.json"))).unwrap();
            if sol(&outputs[0]) != sol(&outputs[1]) {
                return Err(format!("{algo} seed {seed}: solutions differ"));
            }
            compared += 1;
        }
    }
    Ok(format!("{compared} trajectory CSVs and solutions byte-identical (wallclock excluded)"))
}

// ---------------------------------------------------------------------------
// 9

fn domain_invariants(audits: &[(String, f64, IterateAudit)]) -> Outcome {
    if audits.is_empty() {
        return Err("no audited runs".into());
    }
    let mut iterates = 0;
    let mut worst = (f64::NEG_INFINITY, 0.0_f64, f64::INFINITY, 0.0_f64);
    for (name, r, a) in audits {
        iterates += a.iterates;
        worst.0 = worst.0.max(a.max_ball_excess);
        worst.1 = worst.1.max(a.max_simplex_error);
        worst.2 = worst.2.min(a.min_q);
        worst.3 = worst.3.max(a.max_diameter);
        if !a.is_feasible(*r) {
            return Err(format!("{name}: {a:?}"));
        }
    }
    let msg = format!(
        "{} runs, {iterates} iterates: max ||w|| - R {:.1e}, max |sum q - 1| {:.1e}, min q {:.1e}, \
         max merged distance {:.4} (bound {:.4})",
        audits.len(),
        worst.0,
        worst.1,
        worst.2,
        worst.3,
        DOMAIN_DIAMETER + 1e-6
    );
    if worst.3 <= DOMAIN_DIAMETER + 1e-6 {
        Ok(msg)
    } else {
        Err(msg)
    }
}
