use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::loss::{check_training_inputs, loss_at, LossWeights, TrainingSet};
use super::MlpSurrogate;
use crate::dynamics::VectorField;
use crate::error::{Error, Result};

/// Step taken along the negative gradient when the line search fails.
const FALLBACK_STEP: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Optimizer {
    Adam {
        #[serde(default = "default_lr")]
        lr: f64,
    },
    Lbfgs {
        #[serde(default = "default_history")]
        history: usize,
    },
}

fn default_lr() -> f64 {
    1e-3
}

fn default_history() -> usize {
    10
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Lbfgs { history: default_history() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOptions {
    #[serde(default)]
    pub optimizer: Optimizer,
    pub max_iters: usize,
    #[serde(default)]
    pub weights: LossWeights,
    /// Stop once the gradient infinity-norm drops below this.
    #[serde(default = "default_grad_tol")]
    pub grad_tol: f64,
}

fn default_grad_tol() -> f64 {
    1e-10
}

impl TrainOptions {
    pub fn lbfgs(max_iters: usize) -> Self {
        Self { optimizer: Optimizer::default(), max_iters, weights: LossWeights::default(), grad_tol: default_grad_tol() }
    }

    pub fn adam(max_iters: usize) -> Self {
        Self { optimizer: Optimizer::Adam { lr: default_lr() }, ..Self::lbfgs(max_iters) }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: MlpSurrogate,
    /// Loss before the first iteration followed by the loss after each one.
    pub history: Vec<f64>,
    /// Iterations at which the line search failed and a plain gradient step was taken.
    pub fallback_steps: Vec<usize>,
    pub evaluations: usize,
}

/// Trains `net` on `set` (full batch). Deterministic: the parallel loss sums
/// reduce in a fixed order.
pub fn train<F: VectorField + ?Sized>(net: &MlpSurrogate, set: &TrainingSet, field: &F, opts: &TrainOptions) -> Result<TrainOutcome> {
    check_training_inputs(net, set, field)?;
    let w = opts.weights;
    let mut work = net.clone();
    let mut evals = 0usize;
    let mut objective = |theta: &[f64], grad: &mut [f64]| -> f64 {
        evals += 1;
        let (parts, g) = loss_at(net, theta, set, field, &w, true);
        grad.copy_from_slice(&g);
        parts.total(&w)
    };
    let mut theta = net.params().to_vec();
    let (history, fallback_steps) = match opts.optimizer {
        Optimizer::Adam { lr } => {
            if !(lr > 0.0) {
                return Err(Error::InvalidParameter(format!("learning rate must be > 0, got {lr}")));
            }
            (adam(&mut objective, &mut theta, opts.max_iters, lr, opts.grad_tol)?, Vec::new())
        }
        Optimizer::Lbfgs { history } => {
            if history == 0 {
                return Err(Error::InvalidParameter("L-BFGS history must be >= 1".into()));
            }
            let rep = lbfgs(&mut objective, &mut theta, opts.max_iters, history, opts.grad_tol)?;
            (rep.history, rep.fallback_steps)
        }
    };
    work.set_params(&theta)?;
    Ok(TrainOutcome { net: work, history, fallback_steps, evaluations: evals })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn adam<O: FnMut(&[f64], &mut [f64]) -> f64>(f: &mut O, x: &mut [f64], iters: usize, lr: f64, tol: f64) -> Result<Vec<f64>> {
    let (b1, b2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
    let n = x.len();
    let (mut m, mut v, mut g) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut history = vec![];
    for it in 0..=iters {
        let fx = f(x, &mut g);
        if !fx.is_finite() {
            return Err(Error::TrainingDiverged(it));
        }
        history.push(fx);
        if it == iters || inf_norm(&g) < tol {
            break;
        }
        let t = (it + 1) as i32;
        let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
        for i in 0..n {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            x[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
        }
    }
    Ok(history)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsReport {
    pub history: Vec<f64>,
    pub fallback_steps: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
}

struct Probe {
    alpha: f64,
    f: f64,
    d: f64,
    g: Vec<f64>,
}

/// Limited-memory BFGS minimization of `f` (returning the value and writing
/// the gradient) with a strong-Wolfe line search.
///
/// Accepted steps satisfy the sufficient-decrease condition, so the history
/// is nonincreasing except at recorded fallback steps.
pub fn lbfgs<O: FnMut(&[f64], &mut [f64]) -> f64>(
    f: &mut O,
    x: &mut [f64],
    max_iters: usize,
    memory: usize,
    tol: f64,
) -> Result<LbfgsReport> {
    let n = x.len();
    let mut g = vec![0.0; n];
    let mut fx = f(x, &mut g);
    if !fx.is_finite() {
        return Err(Error::TrainingDiverged(0));
    }
    let mut history = vec![fx];
    let mut fallback_steps = vec![];
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(memory);
    let mut stalls = 0;
    let mut converged = inf_norm(&g) < tol;
    let mut it = 0;
    while it < max_iters && !converged {
        it += 1;
        let mut d = two_loop(&g, &pairs);
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            pairs.clear();
            d = g.iter().map(|v| -v).collect();
            slope = dot(&g, &d);
        }
        let alpha0 = if pairs.is_empty() { (1.0 / inf_norm(&g).max(1e-300)).min(1.0) } else { 1.0 };
        let mut eval = |alpha: f64| -> Probe {
            let xt: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + alpha * b).collect();
            let mut gt = vec![0.0; n];
            let ft = f(&xt, &mut gt);
            let ft = if ft.is_finite() { ft } else { f64::INFINITY };
            Probe { alpha, f: ft, d: dot(&gt, &d), g: gt }
        };
        match strong_wolfe(&mut eval, fx, slope, alpha0) {
            Some(p) => {
                let s: Vec<f64> = d.iter().map(|v| p.alpha * v).collect();
                let y: Vec<f64> = p.g.iter().zip(&g).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &y);
                if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
                    if pairs.len() == memory {
                        pairs.pop_front();
                    }
                    pairs.push_back((s.clone(), y, 1.0 / sy));
                }
                for (xi, si) in x.iter_mut().zip(&s) {
                    *xi += si;
                }
                let improvement = fx - p.f;
                fx = p.f;
                g = p.g;
                stalls = if improvement <= 1e-15 * fx.abs().max(1e-300) { stalls + 1 } else { 0 };
            }
            None => {
                fallback_steps.push(it);
                pairs.clear();
                for (xi, gi) in x.iter_mut().zip(&g) {
                    *xi -= FALLBACK_STEP * gi;
                }
                fx = f(x, &mut g);
                if !fx.is_finite() {
                    return Err(Error::TrainingDiverged(it));
                }
                stalls += 1;
            }
        }
        history.push(fx);
        converged = inf_norm(&g) < tol || stalls >= 5;
    }
    Ok(LbfgsReport { history, fallback_steps, iterations: it, converged })
}

fn two_loop(g: &[f64], pairs: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, rho) in pairs.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = pairs.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

const C1: f64 = 1e-4;
const C2: f64 = 0.9;
const MAX_PROBES: usize = 30;

/// Bracketing phase followed by zoom; returns a point meeting the strong
/// Wolfe conditions, or failing that the best sufficient-decrease point seen.
fn strong_wolfe<E: FnMut(f64) -> Probe>(eval: &mut E, f0: f64, d0: f64, alpha0: f64) -> Option<Probe> {
    let armijo = |p: &Probe| p.f <= f0 + C1 * p.alpha * d0;
    let mut best: Option<Probe> = None;
    let keep = |best: &mut Option<Probe>, p: &Probe| {
        if p.f < f0 && p.f <= f0 + C1 * p.alpha * d0 && best.as_ref().is_none_or(|b| p.f < b.f) {
            *best = Some(Probe { alpha: p.alpha, f: p.f, d: p.d, g: p.g.clone() });
        }
    };
    let mut prev = Probe { alpha: 0.0, f: f0, d: d0, g: Vec::new() };
    let mut alpha = alpha0;
    let mut probes = 0;
    while probes < MAX_PROBES {
        let p = eval(alpha);
        probes += 1;
        keep(&mut best, &p);
        if !armijo(&p) || (prev.alpha > 0.0 && p.f >= prev.f) {
            return zoom(eval, f0, d0, prev, p, probes, best);
        }
        if p.d.abs() <= -C2 * d0 {
            return Some(p);
        }
        if p.d >= 0.0 {
            return zoom(eval, f0, d0, p, prev, probes, best);
        }
        alpha = (2.0 * alpha).min(1e10);
        prev = p;
    }
    best
}

fn zoom<E: FnMut(f64) -> Probe>(
    eval: &mut E,
    f0: f64,
    d0: f64,
    mut lo: Probe,
    mut hi: Probe,
    mut probes: usize,
    mut best: Option<Probe>,
) -> Option<Probe> {
    while probes < MAX_PROBES {
        let (a, b) = (lo.alpha.min(hi.alpha), lo.alpha.max(hi.alpha));
        if (b - a) <= 1e-16 * b.max(1.0) {
            break;
        }
        let mut alpha = cubic_min(&lo, &hi).unwrap_or(0.5 * (lo.alpha + hi.alpha));
        let margin = 0.1 * (b - a);
        if !(alpha > a + margin && alpha < b - margin) {
            alpha = 0.5 * (lo.alpha + hi.alpha);
        }
        let p = eval(alpha);
        probes += 1;
        if p.f < f0 && p.f <= f0 + C1 * p.alpha * d0 && best.as_ref().is_none_or(|b| p.f < b.f) {
            best = Some(Probe { alpha: p.alpha, f: p.f, d: p.d, g: p.g.clone() });
        }
        if p.f > f0 + C1 * p.alpha * d0 || p.f >= lo.f {
            hi = p;
        } else {
            if p.d.abs() <= -C2 * d0 {
                return Some(p);
            }
            if p.d * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = p;
        }
    }
    best
}

/// Minimizer of the cubic interpolating value and slope at both ends.
fn cubic_min(p: &Probe, q: &Probe) -> Option<f64> {
    if !(p.f.is_finite() && q.f.is_finite()) {
        return None;
    }
    let d1 = p.d + q.d - 3.0 * (p.f - q.f) / (p.alpha - q.alpha);
    let disc = d1 * d1 - p.d * q.d;
    if !(disc >= 0.0) {
        return None;
    }
    let d2 = (q.alpha - p.alpha).signum() * disc.sqrt();
    let t = q.alpha - (q.alpha - p.alpha) * (q.d + d2 - d1) / (q.d - p.d + 2.0 * d2);
    t.is_finite().then_some(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64], g: &mut [f64]) -> f64 {
        let (a, b) = (x[0], x[1]);
        g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
        g[1] = 200.0 * (b - a * a);
        (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
    }

    #[test]
    fn lbfgs_solves_rosenbrock_monotonically() {
        let mut x = vec![-1.2, 1.0];
        let rep = lbfgs(&mut rosenbrock, &mut x, 200, 10, 1e-10).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-6 && (x[1] - 1.0).abs() < 1e-6, "{x:?}");
        assert!(rep.fallback_steps.is_empty());
        assert!(rep.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn lbfgs_zero_iterations_leaves_point() {
        let mut x = vec![-1.2, 1.0];
        let rep = lbfgs(&mut rosenbrock, &mut x, 0, 10, 1e-10).unwrap();
        assert_eq!(x, vec![-1.2, 1.0]);
        assert_eq!(rep.history, vec![24.199999999999996]);
    }

    #[test]
    fn adam_descends_quadratic() {
        let mut quad = |x: &[f64], g: &mut [f64]| {
            g[0] = 2.0 * (x[0] - 3.0);
            (x[0] - 3.0).powi(2)
        };
        let mut x = vec![0.0];
        let h = adam(&mut quad, &mut x, 5000, 1e-2, 0.0).unwrap();
        assert!(h.last().unwrap() < &1e-4);
        assert_eq!(h.len(), 5001);
    }

    #[test]
    fn nan_objective_reports_divergence() {
        let mut bad = |_x: &[f64], g: &mut [f64]| {
            g[0] = 0.0;
            f64::NAN
        };
        assert!(matches!(lbfgs(&mut bad, &mut [0.0], 3, 10, 0.0), Err(Error::TrainingDiverged(0))));
    }

    #[test]
    fn cubic_interpolation_recovers_quadratic_minimum() {
        // phi(a) = (a - 0.3)^2
        let p = Probe { alpha: 0.0, f: 0.09, d: -0.6, g: vec![] };
        let q = Probe { alpha: 1.0, f: 0.49, d: 1.4, g: vec![] };
        assert!((cubic_min(&p, &q).unwrap() - 0.3).abs() < 1e-12);
    }
}
