//! Worst-case discrepancy search between a surrogate and the reference solver.
//!
//! The objective is `max_k ||U(eta, t_k) - G(eta, t_k)||_2` over a fixed grid,
//! with `eta = [x0, u]`. Gradient methods differentiate it through the
//! surrogate rollout and the discrete RK4 adjoint; the black-box maximizer and
//! the uniform baseline only read values. Every search draws its start points
//! from the same seeded sampler, so paired seeds compare like with like.

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{integrate_rk4, l2, max_over_grid, trajectory_vjp, TimeGrid, Trajectory, VectorField};
use crate::error::{Error, Result};
use crate::fmt::{csv_table, fmt_f64};
use crate::par;
use crate::region::OperatingBox;
use crate::seed::{derive_seed, rng};
use crate::surrogate::{rollout_vjp, surrogate_trajectory, MlpSurrogate};

/// A model that produces trajectories from `(x0, u)` and can pull a row
/// cotangent back to its inputs.
pub trait TrajectoryModel: Sync {
    fn trajectory(&self, x0: &[f64], u: &[f64], grid: &TimeGrid) -> Result<Trajectory>;

    /// `v^T d(row k)/d(x0, u)`.
    fn row_vjp(&self, x0: &[f64], u: &[f64], grid: &TimeGrid, k: usize, v: &[f64]) -> Result<(Vec<f64>, Vec<f64>)>;
}

impl TrajectoryModel for MlpSurrogate {
    fn trajectory(&self, x0: &[f64], u: &[f64], grid: &TimeGrid) -> Result<Trajectory> {
        surrogate_trajectory(self, x0, u, grid)
    }

    fn row_vjp(&self, x0: &[f64], u: &[f64], grid: &TimeGrid, k: usize, v: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        rollout_vjp(self, x0, u, grid, k, v)
    }
}

/// The reference solver itself, wrapped as a model. Comparing it against the
/// reference gives an identically zero discrepancy.
pub struct ReferenceModel<'a, F: ?Sized>(pub &'a F);

impl<F: VectorField + ?Sized> TrajectoryModel for ReferenceModel<'_, F> {
    fn trajectory(&self, x0: &[f64], u: &[f64], grid: &TimeGrid) -> Result<Trajectory> {
        integrate_rk4(self.0, x0, u, grid)
    }

    fn row_vjp(&self, x0: &[f64], u: &[f64], grid: &TimeGrid, k: usize, v: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let traj = integrate_rk4(self.0, x0, u, grid)?;
        trajectory_vjp(self.0, u, &traj, &[(k, v.to_vec())])
    }
}

/// One objective evaluation. `value` is `+inf` when the reference diverged;
/// such points carry no gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub gradient: Option<Vec<f64>>,
}

/// A scalar objective over `eta` to be maximized.
pub trait Objective: Sync {
    fn dim(&self) -> usize;

    fn evaluate(&self, eta: &[f64], want_gradient: bool) -> Result<Evaluation>;
}

/// Objective from a closure returning `(value, gradient)`.
pub struct FnObjective<G> {
    dim: usize,
    g: G,
}

impl<G> FnObjective<G>
where
    G: Fn(&[f64]) -> (f64, Option<Vec<f64>>) + Sync,
{
    pub fn new(dim: usize, g: G) -> Self {
        Self { dim, g }
    }
}

impl<G> Objective for FnObjective<G>
where
    G: Fn(&[f64]) -> (f64, Option<Vec<f64>>) + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&self, eta: &[f64], want_gradient: bool) -> Result<Evaluation> {
        let (value, gradient) = (self.g)(eta);
        Ok(Evaluation { value, gradient: if want_gradient { gradient } else { None } })
    }
}

/// Max-over-grid discrepancy between `model` and RK4 on `field`.
pub struct DiscrepancyObjective<'a, M: ?Sized, F: ?Sized> {
    pub model: &'a M,
    pub field: &'a F,
    pub grid: TimeGrid,
}

impl<'a, M: TrajectoryModel + ?Sized, F: VectorField + ?Sized> DiscrepancyObjective<'a, M, F> {
    pub fn new(model: &'a M, field: &'a F, grid: TimeGrid) -> Self {
        Self { model, field, grid }
    }

    fn split<'e>(&self, eta: &'e [f64]) -> Result<(&'e [f64], &'e [f64])> {
        let n = self.field.n_state();
        if eta.len() != n + self.field.n_param() {
            return Err(Error::Dimension(format!("eta has {} entries, expected {}", eta.len(), n + self.field.n_param())));
        }
        Ok(eta.split_at(n))
    }
}

impl<M: TrajectoryModel + ?Sized, F: VectorField + ?Sized> Objective for DiscrepancyObjective<'_, M, F> {
    fn dim(&self) -> usize {
        self.field.n_state() + self.field.n_param()
    }

    fn evaluate(&self, eta: &[f64], want_gradient: bool) -> Result<Evaluation> {
        let (x0, u) = self.split(eta)?;
        let reference = match integrate_rk4(self.field, x0, u, &self.grid) {
            Ok(t) => t,
            Err(Error::Diverged { .. }) => return Ok(Evaluation { value: f64::INFINITY, gradient: None }),
            Err(e) => return Err(e),
        };
        let surrogate = self.model.trajectory(x0, u, &self.grid)?;
        let gm = max_over_grid(&surrogate, &reference)?;
        if !want_gradient {
            return Ok(Evaluation { value: gm.value, gradient: None });
        }
        let k = gm.index;
        let e: Vec<f64> = surrogate.row(k).iter().zip(reference.row(k)).map(|(a, b)| a - b).collect();
        let norm = l2(&e);
        if norm == 0.0 {
            // the norm is not differentiable at zero; zero is a valid subgradient
            return Ok(Evaluation { value: gm.value, gradient: Some(vec![0.0; eta.len()]) });
        }
        let v: Vec<f64> = e.iter().map(|x| x / norm).collect();
        let (sx, su) = self.model.row_vjp(x0, u, &self.grid, k, &v)?;
        let (rx, ru) = trajectory_vjp(self.field, u, &reference, &[(k, v)])?;
        let mut g: Vec<f64> = sx.iter().zip(&rx).map(|(a, b)| a - b).collect();
        g.extend(su.iter().zip(&ru).map(|(a, b)| a - b));
        Ok(Evaluation { value: gm.value, gradient: Some(g) })
    }
}

/// Wraps an objective and counts every evaluation atomically.
pub struct Counted<'a, O: ?Sized> {
    inner: &'a O,
    count: AtomicUsize,
}

impl<'a, O: Objective + ?Sized> Counted<'a, O> {
    pub fn new(inner: &'a O) -> Self {
        Self { inner, count: AtomicUsize::new(0) }
    }

    pub fn count(&self) -> usize {
        self.count.load(Ordering::SeqCst)
    }
}

impl<O: Objective + ?Sized> Objective for Counted<'_, O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn evaluate(&self, eta: &[f64], want_gradient: bool) -> Result<Evaluation> {
        self.count.fetch_add(1, Ordering::SeqCst);
        self.inner.evaluate(eta, want_gradient)
    }
}

/// Restarts and total objective evaluations shared by every method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchBudget {
    pub restarts: usize,
    pub total_evals: usize,
}

impl SearchBudget {
    pub fn new(restarts: usize, total_evals: usize) -> Result<Self> {
        let b = Self { restarts, total_evals };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 || self.total_evals < self.restarts {
            return Err(Error::InvalidParameter(format!(
                "search budget needs restarts >= 1 and total_evals >= restarts, got {} / {}",
                self.restarts, self.total_evals
            )));
        }
        Ok(())
    }

    /// Evaluations available to each restart, start point included.
    pub fn inner_iters(&self) -> usize {
        self.total_evals / self.restarts
    }
}

/// Outcome of one search. `evaluated` lists every point in a deterministic
/// order (restart-major); `trace` pairs each evaluation index with its value.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub best_eta: Vec<f64>,
    pub best_value: f64,
    pub eval_count: usize,
    pub trace: Vec<(usize, f64)>,
    /// Evaluations whose reference trajectory diverged (`+inf` values).
    pub diverged: usize,
    pub evaluated: Vec<(Vec<f64>, f64)>,
}

impl SearchResult {
    fn from_log(log: Vec<(Vec<f64>, f64)>) -> Self {
        let mut best = 0;
        for (i, (_, v)) in log.iter().enumerate() {
            if *v > log[best].1 {
                best = i;
            }
        }
        Self {
            best_eta: log[best].0.clone(),
            best_value: log[best].1,
            eval_count: log.len(),
            trace: log.iter().enumerate().map(|(i, (_, v))| (i, *v)).collect(),
            diverged: log.iter().filter(|(_, v)| *v == f64::INFINITY).count(),
            evaluated: log,
        }
    }
}

/// First `n` draws of the seeded uniform sampler over `region`.
pub fn start_points(region: &OperatingBox, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    (0..n).map(|_| region.sample(&mut r)).collect()
}

fn value_of(ev: &Evaluation) -> f64 {
    // NaN values are treated as uninformative rather than as maxima
    if ev.value.is_nan() {
        f64::NEG_INFINITY
    } else {
        ev.value
    }
}

fn check_objective<O: Objective + ?Sized>(objective: &O, region: &OperatingBox) -> Result<()> {
    region.validate()?;
    if objective.dim() != region.dim() {
        return Err(Error::Dimension(format!("objective has dimension {}, box {}", objective.dim(), region.dim())));
    }
    Ok(())
}

/// Uniform random search: evaluates the first `total_evals` sampler draws.
pub fn random_search<O: Objective + ?Sized>(objective: &O, region: &OperatingBox, budget: SearchBudget, seed: u64) -> Result<SearchResult> {
    random_search_from(objective, region, budget, seed, None)
}

fn random_search_from<O: Objective + ?Sized>(
    objective: &O,
    region: &OperatingBox,
    budget: SearchBudget,
    seed: u64,
    warm: Option<&[f64]>,
) -> Result<SearchResult> {
    budget.validate()?;
    check_objective(objective, region)?;
    let mut points = start_points(region, budget.total_evals, seed);
    if let Some(w) = warm {
        points[0] = region.projected(w);
    }
    let values = par::map_slice(&points, |p| objective.evaluate(p, false).map(|e| value_of(&e)));
    let log = points.into_iter().zip(values).map(|(p, v)| v.map(|v| (p, v))).collect::<Result<Vec<_>>>()?;
    Ok(SearchResult::from_log(log))
}

/// Inner ascent rule used by [`pgd_search`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InnerMethod {
    /// Normalized projected gradient ascent; the step halves whenever a trial
    /// point does not improve on the incumbent.
    Pgd,
    Adam,
    /// Normalized gradient with heavy-ball momentum 0.9.
    Sgd,
}

impl InnerMethod {
    pub fn name(&self) -> &'static str {
        match self {
            InnerMethod::Pgd => "pgd",
            InnerMethod::Adam => "adam",
            InnerMethod::Sgd => "sgd",
        }
    }
}

/// Multi-start projected gradient ascent. `step` is measured in unit-box
/// coordinates (1.0 spans the box along every axis).
pub fn pgd_search<O: Objective + ?Sized>(
    objective: &O,
    region: &OperatingBox,
    budget: SearchBudget,
    inner: InnerMethod,
    step: f64,
    seed: u64,
) -> Result<SearchResult> {
    pgd_search_from(objective, region, budget, inner, step, seed, None)
}

fn pgd_search_from<O: Objective + ?Sized>(
    objective: &O,
    region: &OperatingBox,
    budget: SearchBudget,
    inner: InnerMethod,
    step: f64,
    seed: u64,
    warm: Option<&[f64]>,
) -> Result<SearchResult> {
    budget.validate()?;
    check_objective(objective, region)?;
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidParameter(format!("step must be positive, got {step}")));
    }
    let mut starts = start_points(region, budget.restarts, seed);
    if let Some(w) = warm {
        starts[0] = region.projected(w);
    }
    let iters = budget.inner_iters();
    let logs = par::map_slice(&starts, |s| ascend(objective, region, s, iters, inner, step));
    let mut log = Vec::with_capacity(budget.total_evals);
    for l in logs {
        log.extend(l?);
    }
    Ok(SearchResult::from_log(log))
}

/// One restart; returns its evaluation log (at most `iters` entries).
fn ascend<O: Objective + ?Sized>(
    objective: &O,
    region: &OperatingBox,
    start: &[f64],
    iters: usize,
    inner: InnerMethod,
    step: f64,
) -> Result<Vec<(Vec<f64>, f64)>> {
    let widths = region.widths();
    let d = start.len();
    let mut log = Vec::with_capacity(iters);
    let mut x = region.projected(start);
    let ev = objective.evaluate(&x, true)?;
    let mut value = value_of(&ev);
    log.push((x.clone(), value));
    let mut grad = ev.gradient;
    let mut best = value;
    let mut s = step;
    let (mut m, mut v, mut vel) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    let (b1, b2) = (0.9f64, 0.999f64);
    for it in 1..iters {
        let Some(g) = grad.as_ref() else { break };
        // chain rule into unit-box coordinates
        let gu: Vec<f64> = g.iter().zip(&widths).map(|(g, w)| g * w).collect();
        let gn = l2(&gu);
        if !(gn > 0.0 && gn.is_finite()) {
            break;
        }
        let du: Vec<f64> = match inner {
            InnerMethod::Pgd => gu.iter().map(|g| s * g / gn).collect(),
            InnerMethod::Adam => {
                let t = it as i32;
                (0..d)
                    .map(|i| {
                        m[i] = b1 * m[i] + (1.0 - b1) * gu[i];
                        v[i] = b2 * v[i] + (1.0 - b2) * gu[i] * gu[i];
                        let mh = m[i] / (1.0 - b1.powi(t));
                        let vh = v[i] / (1.0 - b2.powi(t));
                        s * mh / (vh.sqrt() + 1e-8)
                    })
                    .collect()
            }
            InnerMethod::Sgd => (0..d)
                .map(|i| {
                    vel[i] = 0.9 * vel[i] + gu[i] / gn;
                    s * vel[i]
                })
                .collect(),
        };
        let mut trial: Vec<f64> = x.iter().zip(&du).zip(&widths).map(|((x, du), w)| x + du * w).collect();
        region.project(&mut trial);
        let ev = objective.evaluate(&trial, true)?;
        let tv = value_of(&ev);
        log.push((trial.clone(), tv));
        match inner {
            InnerMethod::Pgd => {
                if tv > value {
                    x = trial;
                    value = tv;
                    grad = ev.gradient;
                } else {
                    s *= 0.5;
                }
            }
            InnerMethod::Adam | InnerMethod::Sgd => {
                x = trial;
                value = tv;
                grad = ev.gradient;
            }
        }
        best = best.max(tv);
        if best == f64::INFINITY {
            // a diverged reference is a found failure; nothing to ascend further
            break;
        }
    }
    Ok(log)
}

/// Settings of the rectangle-partitioning maximizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlackboxOptions {
    /// Weight of the size bonus relative to the observed value range.
    pub kappa: f64,
}

impl Default for BlackboxOptions {
    fn default() -> Self {
        Self { kappa: 0.5 }
    }
}

struct Cell {
    center: Vec<f64>,
    half: Vec<f64>,
    value: f64,
}

impl Cell {
    fn diameter(&self) -> f64 {
        2.0 * l2(&self.half)
    }
}

/// Derivative-free maximizer by iterated trisection of the unit box.
///
/// Each cell is scored by its center value plus `kappa * range * diam / diam0`,
/// where `range` is the spread of observed values and `diam0` the unit-box
/// diagonal. Rounds alternate between the top-scored cell and the best of the
/// largest cells; the chosen cell is trisected along its longest side and the
/// two new centers are evaluated. Ties in score and in side length are broken
/// by the seeded generator.
pub fn blackbox_search<O: Objective + ?Sized>(
    objective: &O,
    region: &OperatingBox,
    budget: SearchBudget,
    options: BlackboxOptions,
    seed: u64,
) -> Result<SearchResult> {
    blackbox_search_from(objective, region, budget, options, seed, None)
}

fn blackbox_search_from<O: Objective + ?Sized>(
    objective: &O,
    region: &OperatingBox,
    budget: SearchBudget,
    options: BlackboxOptions,
    seed: u64,
    warm: Option<&[f64]>,
) -> Result<SearchResult> {
    budget.validate()?;
    check_objective(objective, region)?;
    let d = region.dim();
    let mut r = rng(derive_seed(seed, 0xb1ac_b0c5));
    let mut log: Vec<(Vec<f64>, f64)> = Vec::with_capacity(budget.total_evals);
    let eval = |u: &[f64], log: &mut Vec<(Vec<f64>, f64)>| -> Result<f64> {
        let x = region.from_unit(u);
        let v = value_of(&objective.evaluate(&x, false)?);
        log.push((x, v));
        Ok(v)
    };
    if let Some(w) = warm {
        eval(&region.to_unit(&region.projected(w)), &mut log)?;
    }
    let root = vec![0.5; d];
    let v0 = eval(&root, &mut log)?;
    let mut cells = vec![Cell { center: root, half: vec![0.5; d], value: v0 }];
    let diam0 = cells[0].diameter();
    let mut round = 0usize;
    while log.len() < budget.total_evals {
        let finite = log.iter().map(|e| e.1).filter(|v| v.is_finite());
        let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        // with no spread yet, explore by size alone
        let range = if hi > lo { hi - lo } else { 1.0 };
        if log.iter().any(|e| e.1 == f64::INFINITY) {
            break;
        }
        // alternate between the top-scored cell and the largest cell; pure
        // greedy scoring can starve a large cell that hides a narrow peak
        let explore = round % 2 == 1;
        round += 1;
        let scores: Vec<f64> = if explore {
            let big = cells.iter().map(Cell::diameter).fold(0.0, f64::max);
            cells.iter().map(|c| if c.diameter() >= big * (1.0 - 1e-12) { c.value } else { f64::NEG_INFINITY }).collect()
        } else {
            cells.iter().map(|c| c.value + options.kappa * range * c.diameter() / diam0).collect()
        };
        let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let ties: Vec<usize> = (0..cells.len()).filter(|&i| scores[i] == top).collect();
        let pick = ties[r.random_range(0..ties.len())];
        let longest = cells[pick].half.iter().cloned().fold(0.0, f64::max);
        if longest < 1e-15 {
            break;
        }
        let sides: Vec<usize> = (0..d).filter(|&j| cells[pick].half[j] == longest).collect();
        let j = sides[r.random_range(0..sides.len())];
        let third = longest / 3.0;
        cells[pick].half[j] = third;
        let mut children = Vec::with_capacity(2);
        for sign in [-1.0, 1.0] {
            if log.len() >= budget.total_evals {
                break;
            }
            let mut c = cells[pick].center.clone();
            c[j] += sign * 2.0 * third;
            let v = eval(&c, &mut log)?;
            children.push(Cell { center: c, half: cells[pick].half.clone(), value: v });
        }
        cells.extend(children);
    }
    Ok(SearchResult::from_log(log))
}

/// Every search method available to the comparison and box-shrink studies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum SearchMethod {
    Random,
    Gradient { inner: InnerMethod, step: f64 },
    Blackbox(BlackboxOptions),
}

impl SearchMethod {
    pub fn name(&self) -> &'static str {
        match self {
            SearchMethod::Random => "random",
            SearchMethod::Gradient { inner, .. } => inner.name(),
            SearchMethod::Blackbox(_) => "blackbox",
        }
    }

    /// Runs the method; `warm` replaces the first start point.
    pub fn run<O: Objective + ?Sized>(
        &self,
        objective: &O,
        region: &OperatingBox,
        budget: SearchBudget,
        seed: u64,
        warm: Option<&[f64]>,
    ) -> Result<SearchResult> {
        let counted = Counted::new(objective);
        let res = match *self {
            SearchMethod::Random => random_search_from(&counted, region, budget, seed, warm),
            SearchMethod::Gradient { inner, step } => pgd_search_from(&counted, region, budget, inner, step, seed, warm),
            SearchMethod::Blackbox(o) => blackbox_search_from(&counted, region, budget, o, seed, warm),
        }?;
        if counted.count() != res.eval_count || res.eval_count > budget.total_evals {
            return Err(Error::Contract(format!(
                "{} used {} evaluations (logged {}) with a budget of {}",
                self.name(),
                counted.count(),
                res.eval_count,
                budget.total_evals
            )));
        }
        Ok(res)
    }
}

/// One line of `methods_comparison.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodRow {
    pub method: String,
    pub seed: u64,
    pub best_value: f64,
    pub evals: usize,
}

/// Runs every method for every seed (seed-major order).
pub fn methods_comparison<O: Objective + ?Sized>(
    objective: &O,
    region: &OperatingBox,
    budget: SearchBudget,
    methods: &[SearchMethod],
    seeds: &[u64],
) -> Result<Vec<MethodRow>> {
    let mut rows = Vec::with_capacity(methods.len() * seeds.len());
    for &seed in seeds {
        for m in methods {
            let r = m.run(objective, region, budget, seed, None)?;
            rows.push(MethodRow { method: m.name().to_string(), seed, best_value: r.best_value, evals: r.eval_count });
        }
    }
    Ok(rows)
}

pub fn methods_csv(rows: &[MethodRow]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.method.clone(), r.seed.to_string(), fmt_f64(r.best_value), r.evals.to_string()])
        .collect();
    csv_table("method,seed,best_value,evals", &body)
}

/// One line of `box_shrink.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShrinkRow {
    pub width_fraction: f64,
    pub max_error: f64,
    pub normalized_max_error: f64,
}

fn inside_tol(region: &OperatingBox, x: &[f64]) -> bool {
    x.iter().zip(&region.lo).zip(&region.hi).all(|((v, l), h)| {
        let tol = 1e-9 * (h - l).abs().max(1e-300);
        *v >= l - tol && *v <= h + tol
    })
}

/// Worst case found in shrinking boxes sharing the full box's center.
///
/// The box of each width is searched with its own budget, warm-started at the
/// best point found so far inside it. The reported maximum for a width is the
/// largest value over every evaluated point (from any search) that lies in
/// that box, so the values are nonincreasing as the box shrinks. Values are
/// normalized by the full-box maximum; width 1.0 is always searched first.
pub fn box_shrink_study<O: Objective + ?Sized>(
    objective: &O,
    region: &OperatingBox,
    budget: SearchBudget,
    widths: &[f64],
    method: SearchMethod,
    seed: u64,
) -> Result<Vec<ShrinkRow>> {
    if widths.is_empty() || widths.iter().any(|w| !(*w > 0.0 && *w <= 1.0)) || widths.windows(2).any(|p| p[1] > p[0]) {
        return Err(Error::InvalidParameter("widths must lie in (0, 1] and be sorted descending".into()));
    }
    let mut all = widths.to_vec();
    if all[0] != 1.0 {
        all.insert(0, 1.0);
    }
    let boxes: Vec<OperatingBox> = all.iter().map(|&w| region.shrink(w)).collect();
    let mut pools: Vec<Vec<(Vec<f64>, f64)>> = Vec::with_capacity(all.len());
    for (i, b) in boxes.iter().enumerate() {
        let warm = pools
            .iter()
            .flatten()
            .filter(|(x, _)| b.contains(x))
            .fold(None::<&(Vec<f64>, f64)>, |acc, p| match acc {
                Some(a) if a.1 >= p.1 => Some(a),
                _ => Some(p),
            })
            .map(|p| p.0.clone());
        let res = method.run(objective, b, budget, derive_seed(seed, i as u64), warm.as_deref())?;
        pools.push(res.evaluated);
    }
    let reported: Vec<f64> = (0..all.len())
        .map(|i| {
            pools
                .iter()
                .enumerate()
                .flat_map(|(j, pool)| pool.iter().map(move |p| (j, p)))
                .filter(|(j, (x, _))| *j >= i || inside_tol(&boxes[i], x))
                .map(|(_, (_, v))| *v)
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    let full = reported[0];
    let offset = all.len() - widths.len();
    Ok(widths
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let m = reported[i + offset];
            ShrinkRow { width_fraction: w, max_error: m, normalized_max_error: if full > 0.0 { m / full } else { 0.0 } }
        })
        .collect())
}

pub fn box_shrink_csv(rows: &[ShrinkRow]) -> String {
    let body: Vec<Vec<String>> = rows.iter().map(|r| vec![fmt_f64(r.width_fraction), fmt_f64(r.normalized_max_error)]).collect();
    csv_table("width_fraction,normalized_max_error", &body)
}
