//! Fixed-step trajectory integration and discrete adjoint sensitivities.
//!
//! The integrator is the classical four-stage Runge–Kutta scheme on a uniform
//! grid. Sensitivities are computed by reverse-mode differentiation of that
//! exact discrete map, so gradients are consistent with the computed objective
//! rather than with the continuous flow.

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmt::fmt_f64;

/// Uniform time grid with `n_steps + 1` points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub dt: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, dt: f64, n_steps: usize) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) || !t0.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "time grid needs finite t0 and dt > 0 (t0={t0}, dt={dt})"
            )));
        }
        if n_steps == 0 {
            return Err(Error::InvalidParameter("time grid needs n_steps >= 1".into()));
        }
        Ok(Self { t0, dt, n_steps })
    }

    /// Grid over `[t0, t0 + horizon]`; `horizon / dt` is rounded to the nearest step count.
    pub fn with_horizon(t0: f64, horizon: f64, dt: f64) -> Result<Self> {
        if !(horizon > 0.0) || !(dt > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "horizon and dt must be positive (horizon={horizon}, dt={dt})"
            )));
        }
        let n = (horizon / dt).round() as usize;
        Self::new(t0, dt, n.max(1))
    }

    /// Time of grid point `k`, computed directly as `t0 + k*dt`.
    #[inline]
    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn horizon(&self) -> f64 {
        self.n_steps as f64 * self.dt
    }

    pub fn end(&self) -> f64 {
        self.time(self.n_steps)
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.time(k)).collect()
    }
}

/// States of one simulated run on a [`TimeGrid`], stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    grid: TimeGrid,
    n_state: usize,
    states: Vec<f64>,
}

impl Trajectory {
    pub fn new(grid: TimeGrid, n_state: usize, states: Vec<f64>) -> Result<Self> {
        if n_state == 0 || states.len() != grid.len() * n_state {
            return Err(Error::Dimension(format!(
                "trajectory expects {} x {} states, got {} values",
                grid.len(),
                n_state,
                states.len()
            )));
        }
        if let Some(i) = states.iter().position(|v| !v.is_finite()) {
            return Err(Error::Diverged { step: i / n_state });
        }
        Ok(Self { grid, n_state, states })
    }

    /// Builds a trajectory from per-row vectors.
    pub fn from_rows(grid: TimeGrid, rows: &[Vec<f64>]) -> Result<Self> {
        let n_state = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_state) {
            return Err(Error::Dimension("ragged trajectory rows".into()));
        }
        Self::new(grid, n_state, rows.concat())
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n_state(&self) -> usize {
        self.n_state
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn row(&self, k: usize) -> &[f64] {
        &self.states[k * self.n_state..(k + 1) * self.n_state]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.states.chunks_exact(self.n_state)
    }

    pub fn final_state(&self) -> &[f64] {
        self.row(self.grid.n_steps)
    }

    /// Column `j` over the whole grid.
    pub fn component(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.states
    }

    /// Writes `t,x1,...,xn` with one row per grid point.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain((1..=self.n_state).map(|j| format!("x{j}")))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for (k, row) in self.rows().enumerate() {
            let mut line = fmt_f64(self.grid.time(k));
            for v in row {
                line.push(',');
                line.push_str(&fmt_f64(*v));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn check_compatible(&self, other: &Trajectory) -> Result<()> {
        if self.grid != other.grid || self.n_state != other.n_state {
            return Err(Error::Dimension(format!(
                "trajectory grids/dimensions differ ({:?}, n={} vs {:?}, n={})",
                self.grid, self.n_state, other.grid, other.n_state
            )));
        }
        Ok(())
    }
}

/// Central finite-difference step for a coordinate of magnitude `v`.
#[inline]
pub fn fd_step(v: f64) -> f64 {
    1e-6 * (1.0 + v.abs())
}

/// Right-hand side `dx/dt = f(x, p, t)` of a component model.
///
/// `p` carries exogenous inputs and parameters that sensitivities are taken
/// with respect to. Jacobians default to central finite differences.
pub trait VectorField: Send + Sync {
    fn n_state(&self) -> usize;
    fn n_param(&self) -> usize;
    fn eval(&self, x: &[f64], p: &[f64], t: f64, out: &mut [f64]);

    fn jac_state(&self, x: &[f64], p: &[f64], t: f64) -> DMatrix<f64> {
        fd_jacobian(self.n_state(), x, |xx, out| self.eval(xx, p, t, out))
    }

    fn jac_param(&self, x: &[f64], p: &[f64], t: f64) -> DMatrix<f64> {
        fd_jacobian(self.n_state(), p, |pp, out| self.eval(x, pp, t, out))
    }

    /// True when `jac_state`/`jac_param` are hand-derived.
    fn analytic_jacobians(&self) -> bool {
        false
    }

    fn eval_vec(&self, x: &[f64], p: &[f64], t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.n_state()];
        self.eval(x, p, t, &mut out);
        out
    }
}

/// Central finite-difference Jacobian of `g: R^m -> R^n` at `at`.
pub fn fd_jacobian<G>(n_out: usize, at: &[f64], mut g: G) -> DMatrix<f64>
where
    G: FnMut(&[f64], &mut [f64]),
{
    let m = at.len();
    let mut jac = DMatrix::zeros(n_out, m);
    let mut probe = at.to_vec();
    let mut plus = vec![0.0; n_out];
    let mut minus = vec![0.0; n_out];
    for j in 0..m {
        let h = fd_step(at[j]);
        probe[j] = at[j] + h;
        g(&probe, &mut plus);
        probe[j] = at[j] - h;
        g(&probe, &mut minus);
        probe[j] = at[j];
        for i in 0..n_out {
            jac[(i, j)] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    jac
}

/// Vector field backed by a closure; Jacobians by finite differences.
pub struct FnField<F> {
    n_state: usize,
    n_param: usize,
    f: F,
}

impl<F> FnField<F>
where
    F: Fn(&[f64], &[f64], f64, &mut [f64]) + Send + Sync,
{
    pub fn new(n_state: usize, n_param: usize, f: F) -> Self {
        Self { n_state, n_param, f }
    }
}

impl<F> VectorField for FnField<F>
where
    F: Fn(&[f64], &[f64], f64, &mut [f64]) + Send + Sync,
{
    fn n_state(&self) -> usize {
        self.n_state
    }
    fn n_param(&self) -> usize {
        self.n_param
    }
    fn eval(&self, x: &[f64], p: &[f64], t: f64, out: &mut [f64]) {
        (self.f)(x, p, t, out)
    }
}

/// Compares analytic Jacobians against finite differences at the given probe
/// points. Returns the largest relative Frobenius error seen.
pub fn check_jacobians(
    field: &dyn VectorField,
    probes: &[(Vec<f64>, Vec<f64>, f64)],
    tol: f64,
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (x, p, t) in probes {
        let fdx = fd_jacobian(field.n_state(), x, |xx, out| field.eval(xx, p, *t, out));
        let fdp = fd_jacobian(field.n_state(), p, |pp, out| field.eval(x, pp, *t, out));
        for (a, b) in [(field.jac_state(x, p, *t), fdx), (field.jac_param(x, p, *t), fdp)] {
            if a.shape() != b.shape() {
                return Err(Error::Dimension(format!(
                    "jacobian shape {:?} != {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
            let rel = (&a - &b).norm() / b.norm().max(1e-6);
            worst = worst.max(rel);
        }
    }
    if worst > tol {
        return Err(Error::Contract(format!(
            "analytic jacobian disagrees with finite differences (relative error {worst:.3e} > {tol:.1e})"
        )));
    }
    Ok(worst)
}

fn check_inputs(field: &(impl VectorField + ?Sized), x0: &[f64], params: &[f64]) -> Result<()> {
    if x0.len() != field.n_state() {
        return Err(Error::Dimension(format!(
            "initial state has length {}, field expects {}",
            x0.len(),
            field.n_state()
        )));
    }
    if params.len() != field.n_param() {
        return Err(Error::Dimension(format!(
            "parameter vector has length {}, field expects {}",
            params.len(),
            field.n_param()
        )));
    }
    if x0.iter().chain(params).any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite initial state or parameter".into()));
    }
    Ok(())
}

/// Stage derivatives of one RK4 step from `x` at time `t`.
struct Stages {
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl Stages {
    fn new(n: usize) -> Self {
        Self {
            k: [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]],
            tmp: vec![0.0; n],
        }
    }

    /// Fills `k1..k4`; afterwards `self.tmp` is undefined.
    fn compute<F: VectorField + ?Sized>(&mut self, field: &F, x: &[f64], p: &[f64], t: f64, h: f64) {
        let n = x.len();
        let [k1, k2, k3, k4] = &mut self.k;
        field.eval(x, p, t, k1);
        for i in 0..n {
            self.tmp[i] = x[i] + 0.5 * h * k1[i];
        }
        field.eval(&self.tmp, p, t + 0.5 * h, k2);
        for i in 0..n {
            self.tmp[i] = x[i] + 0.5 * h * k2[i];
        }
        field.eval(&self.tmp, p, t + 0.5 * h, k3);
        for i in 0..n {
            self.tmp[i] = x[i] + h * k3[i];
        }
        field.eval(&self.tmp, p, t + h, k4);
    }
}

/// Integrates `field` from `x0` over `grid` with classical RK4.
pub fn integrate_rk4<F: VectorField + ?Sized>(
    field: &F,
    x0: &[f64],
    params: &[f64],
    grid: &TimeGrid,
) -> Result<Trajectory> {
    check_inputs(field, x0, params)?;
    let n = x0.len();
    let h = grid.dt;
    let mut states = Vec::with_capacity(grid.len() * n);
    states.extend_from_slice(x0);
    let mut stages = Stages::new(n);
    let mut x = x0.to_vec();
    for step in 0..grid.n_steps {
        stages.compute(field, &x, params, grid.time(step), h);
        let [k1, k2, k3, k4] = &stages.k;
        for i in 0..n {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { step: step + 1 });
        }
        states.extend_from_slice(&x);
    }
    Ok(Trajectory { grid: *grid, n_state: n, states })
}

/// A scalar functional of a trajectory together with its row gradients.
pub trait TrajectoryFunctional {
    fn value(&self, traj: &Trajectory) -> f64;

    /// `dJ/dx_k` for every row `k` the functional reads, or `None` if the
    /// functional cannot supply gradients.
    fn row_gradients(&self, traj: &Trajectory) -> Option<Vec<(usize, Vec<f64>)>>;
}

/// Gradient of a trajectory functional with respect to the initial state and
/// the parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Sensitivity {
    pub value: f64,
    pub d_x0: Vec<f64>,
    pub d_params: Vec<f64>,
}

/// Reverse-mode derivative of the discrete RK4 map.
pub fn adjoint_gradient<F: VectorField + ?Sized>(
    field: &F,
    x0: &[f64],
    params: &[f64],
    grid: &TimeGrid,
    objective: &dyn TrajectoryFunctional,
) -> Result<Sensitivity> {
    let traj = integrate_rk4(field, x0, params, grid)?;
    let value = objective.value(&traj);
    let seeds = objective
        .row_gradients(&traj)
        .ok_or_else(|| Error::Contract("objective does not supply row gradients".into()))?;
    let (d_x0, d_params) = trajectory_vjp(field, params, &traj, &seeds)?;
    Ok(Sensitivity { value, d_x0, d_params })
}

/// Vector–Jacobian product of an already computed RK4 trajectory: given seeds
/// `(k, w_k)` returns `sum_k w_k^T dx_k/dx0` and `sum_k w_k^T dx_k/dp`.
pub fn trajectory_vjp<F: VectorField + ?Sized>(
    field: &F,
    params: &[f64],
    traj: &Trajectory,
    seeds: &[(usize, Vec<f64>)],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = traj.n_state();
    let np = params.len();
    if n != field.n_state() || np != field.n_param() {
        return Err(Error::Dimension("trajectory/field dimensions differ".into()));
    }
    let grid = *traj.grid();
    let mut seed_rows = vec![vec![0.0; n]; grid.len()];
    for (k, w) in seeds {
        if *k >= grid.len() || w.len() != n {
            return Err(Error::Contract(format!(
                "objective gradient row {k} has length {} (expected {n}, grid has {} rows)",
                w.len(),
                grid.len()
            )));
        }
        for i in 0..n {
            seed_rows[*k][i] += w[i];
        }
    }

    let h = grid.dt;
    let mut lambda = seed_rows[grid.n_steps].clone();
    let mut pbar = vec![0.0; np];
    let mut stages = Stages::new(n);
    let mut kb = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut stage_x = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];

    for step in (0..grid.n_steps).rev() {
        let x = traj.row(step);
        let t = grid.time(step);
        stages.compute(field, x, params, t, h);
        let [k1, k2, k3, _] = &stages.k;
        for i in 0..n {
            stage_x[0][i] = x[i];
            stage_x[1][i] = x[i] + 0.5 * h * k1[i];
            stage_x[2][i] = x[i] + 0.5 * h * k2[i];
            stage_x[3][i] = x[i] + h * k3[i];
        }
        let stage_t = [t, t + 0.5 * h, t + 0.5 * h, t + h];
        // weight of each stage derivative in the update, and of the previous
        // stage derivative in each stage point
        let weights = [h / 6.0, h / 3.0, h / 3.0, h / 6.0];
        let feed = [0.0, 0.5 * h, 0.5 * h, h];
        for s in 0..4 {
            for i in 0..n {
                kb[s][i] = weights[s] * lambda[i];
            }
        }
        for s in (0..4).rev() {
            let jx = field.jac_state(&stage_x[s], params, stage_t[s]);
            let g = jx.tr_mul(&nalgebra::DVector::from_column_slice(&kb[s]));
            if np > 0 {
                let jp = field.jac_param(&stage_x[s], params, stage_t[s]);
                let gp = jp.tr_mul(&nalgebra::DVector::from_column_slice(&kb[s]));
                for j in 0..np {
                    pbar[j] += gp[j];
                }
            }
            for i in 0..n {
                lambda[i] += g[i];
            }
            if s > 0 {
                for i in 0..n {
                    kb[s - 1][i] += feed[s] * g[i];
                }
            }
        }
        for i in 0..n {
            lambda[i] += seed_rows[step][i];
        }
    }
    Ok((lambda, pbar))
}

/// Largest per-time L2 distance between two trajectories.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridMax {
    pub value: f64,
    pub index: usize,
    pub time: f64,
}

/// Max over grid points of `||a_k - b_k||_2`; ties go to the earliest time.
pub fn max_over_grid(a: &Trajectory, b: &Trajectory) -> Result<GridMax> {
    a.check_compatible(b)?;
    let mut best = GridMax { value: f64::NEG_INFINITY, index: 0, time: a.grid.t0 };
    for (k, (ra, rb)) in a.rows().zip(b.rows()).enumerate() {
        let d = l2_diff(ra, rb);
        if d > best.value {
            best = GridMax { value: d, index: k, time: a.grid.time(k) };
        }
    }
    Ok(best)
}

#[inline]
pub(crate) fn l2_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[inline]
pub(crate) fn l2(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay() -> impl VectorField {
        FnField::new(1, 0, |x: &[f64], _: &[f64], _t: f64, out: &mut [f64]| out[0] = -x[0])
    }

    fn growth() -> impl VectorField {
        FnField::new(1, 1, |x: &[f64], p: &[f64], _t: f64, out: &mut [f64]| out[0] = p[0] * x[0])
    }

    struct FinalState;
    impl TrajectoryFunctional for FinalState {
        fn value(&self, traj: &Trajectory) -> f64 {
            traj.final_state()[0]
        }
        fn row_gradients(&self, traj: &Trajectory) -> Option<Vec<(usize, Vec<f64>)>> {
            Some(vec![(traj.grid().n_steps, vec![1.0])])
        }
    }

    struct NoGrad;
    impl TrajectoryFunctional for NoGrad {
        fn value(&self, _: &Trajectory) -> f64 {
            0.0
        }
        fn row_gradients(&self, _: &Trajectory) -> Option<Vec<(usize, Vec<f64>)>> {
            None
        }
    }

    #[test]
    fn grid_points_are_direct_products() {
        let g = TimeGrid::new(0.1, 0.01, 1000).unwrap();
        assert_eq!(g.time(700), 0.1 + 700.0 * 0.01);
        assert_eq!(g.len(), 1001);
        assert!(TimeGrid::new(0.0, 0.0, 3).is_err());
        assert!(TimeGrid::new(0.0, 0.1, 0).is_err());
    }

    #[test]
    fn zero_field_is_constant() {
        let f = FnField::new(1, 0, |_: &[f64], _: &[f64], _: f64, out: &mut [f64]| out[0] = 0.0);
        let g = TimeGrid::new(0.0, 0.1, 10).unwrap();
        let tr = integrate_rk4(&f, &[1.0], &[], &g).unwrap();
        assert!(tr.rows().all(|r| r == [1.0]));
    }

    #[test]
    fn one_step_matches_stability_polynomial() {
        let g = TimeGrid::new(0.0, 0.01, 1).unwrap();
        let tr = integrate_rk4(&decay(), &[1.0], &[], &g).unwrap();
        let h: f64 = 0.01;
        let poly = 1.0 - h + h * h / 2.0 - h.powi(3) / 6.0 + h.powi(4) / 24.0;
        assert!((tr.final_state()[0] - poly).abs() < 1e-15);
        assert!((tr.final_state()[0] - 0.990049833749).abs() < 1e-12);
    }

    #[test]
    fn exponential_growth_reaches_e() {
        let g = TimeGrid::new(0.0, 0.01, 100).unwrap();
        let tr = integrate_rk4(&growth(), &[1.0], &[1.0], &g).unwrap();
        assert!((tr.final_state()[0] - std::f64::consts::E).abs() < 1e-8);
    }

    #[test]
    fn fourth_order_convergence() {
        let err = |dt: f64| {
            let g = TimeGrid::with_horizon(0.0, 1.0, dt).unwrap();
            let tr = integrate_rk4(&decay(), &[1.0], &[], &g).unwrap();
            (tr.final_state()[0] - (-1.0f64).exp()).abs()
        };
        let (e1, e2, e3) = (err(0.02), err(0.01), err(0.005));
        for ratio in [e1 / e2, e2 / e3] {
            assert!((14.0..=18.0).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn divergence_reports_step() {
        let f = FnField::new(1, 0, |x: &[f64], _: &[f64], _: f64, out: &mut [f64]| out[0] = x[0] * x[0]);
        let g = TimeGrid::new(0.0, 0.5, 200).unwrap();
        match integrate_rk4(&f, &[10.0], &[], &g) {
            Err(Error::Diverged { step }) => assert!(step >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn input_validation() {
        let g = TimeGrid::new(0.0, 0.1, 2).unwrap();
        assert!(matches!(integrate_rk4(&decay(), &[1.0, 2.0], &[], &g), Err(Error::Dimension(_))));
        assert!(matches!(
            integrate_rk4(&decay(), &[f64::NAN], &[], &g),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn adjoint_identity_flow() {
        let f = FnField::new(1, 0, |_: &[f64], _: &[f64], _: f64, out: &mut [f64]| out[0] = 0.0);
        let g = TimeGrid::new(0.0, 0.1, 10).unwrap();
        let s = adjoint_gradient(&f, &[1.0], &[], &g, &FinalState).unwrap();
        assert_eq!(s.d_x0, vec![1.0]);
    }

    #[test]
    fn adjoint_parameter_gradient_matches_polynomial_derivative() {
        // x_n = R(eta h)^n with R(z) = 1 + z + z^2/2 + z^3/6 + z^4/24
        // dJ/deta = n R^{n-1} R'(eta h) h
        let (h, n, eta) = (0.01f64, 100usize, 1.0f64);
        let z = eta * h;
        let r = 1.0 + z + z * z / 2.0 + z.powi(3) / 6.0 + z.powi(4) / 24.0;
        let dr = 1.0 + z + z * z / 2.0 + z.powi(3) / 6.0;
        let discrete = n as f64 * r.powi(n as i32 - 1) * dr * h;
        let g = TimeGrid::new(0.0, h, n).unwrap();
        let s = adjoint_gradient(&growth(), &[1.0], &[eta], &g, &FinalState).unwrap();
        assert!((s.d_params[0] - discrete).abs() < 1e-8 * discrete);
        let continuous = std::f64::consts::E;
        assert!((s.d_params[0] - continuous).abs() < 1e-6);
        // dJ/dx0 = R^n
        assert!((s.d_x0[0] - r.powi(n as i32)).abs() < 1e-8);
    }

    #[test]
    fn missing_objective_gradient_is_contract_error() {
        let g = TimeGrid::new(0.0, 0.1, 3).unwrap();
        assert!(matches!(
            adjoint_gradient(&decay(), &[1.0], &[], &g, &NoGrad),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn max_over_grid_examples() {
        let g = TimeGrid::new(0.0, 0.5, 4).unwrap();
        let a = Trajectory::new(g, 2, (0..10).map(|i| i as f64).collect()).unwrap();
        let m = max_over_grid(&a, &a).unwrap();
        assert_eq!((m.value, m.time), (0.0, 0.0));

        let shifted: Vec<f64> = a.as_slice().iter().enumerate().map(|(i, v)| v + if i % 2 == 0 { 0.5 } else { 0.0 }).collect();
        let b = Trajectory::new(g, 2, shifted).unwrap();
        let m = max_over_grid(&a, &b).unwrap();
        assert!((m.value - 0.5).abs() < 1e-12);
        assert_eq!(m.index, 0);

        let mut last = a.as_slice().to_vec();
        last[8] += 3.0;
        last[9] += 4.0;
        let c = Trajectory::new(g, 2, last).unwrap();
        let m = max_over_grid(&a, &c).unwrap();
        assert_eq!((m.value, m.time), (5.0, 2.0));

        let other = Trajectory::new(TimeGrid::new(0.0, 0.5, 3).unwrap(), 2, vec![0.0; 8]).unwrap();
        assert!(matches!(max_over_grid(&a, &other), Err(Error::Dimension(_))));
    }

    #[test]
    fn csv_export_has_header_and_rows() {
        let g = TimeGrid::new(0.0, 0.5, 1).unwrap();
        let tr = Trajectory::new(g, 2, vec![1.0, 2.0, 0.1, 1.0 / 3.0]).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "t,x1,x2");
        assert_eq!(lines.len(), 3);
        let last: f64 = lines[2].split(',').nth(2).unwrap().parse().unwrap();
        assert_eq!(last, 1.0 / 3.0);
    }
}
