//! Single-machine infinite-bus benchmark.
//!
//! A swing-model machine with internal EMF `E' e^{j delta}` behind `X_d'` feeds
//! an infinite bus `V_inf` through a line `X_line`:
//!
//! ```text
//! I = (E' e^{j delta} - V_inf) / (j X_eq),  X_eq = X_d' + X_line
//! V = V_inf + j X_line I,                   P_e = Re(V conj(I))
//! ```
//!
//! The interface-perturbation experiment adds a windowed phasor `d(t)` to the
//! machine current and compares the resulting run against the unperturbed one.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bound::{estimate_constants, BoundConstants, ConstantEstimate, CoupledSystem, TheoremBounds};
use crate::dynamics::{integrate_rk4, l2_diff, TimeGrid, Trajectory};
use crate::error::{Error, Result};
use crate::fmt::{csv_table, fmt_f64};
use crate::machines::{sm2_field, ElectricalPower, MachineParams, Sm2Field};
use crate::par;
use crate::region::OperatingBox;

const J: Complex64 = Complex64::new(0.0, 1.0);

/// Where the disturbance phasor enters the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Injection {
    /// `I_hat = I(delta_hat) + d(t)`.
    #[default]
    Direct,
    /// `d(t)` injected at the internal EMF node and divided by the network:
    /// `I_hat = I(delta_hat) + d(t) X_d' / X_eq`.
    BehindReactance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmibConfig {
    pub machine: MachineParams,
    pub v_inf: Complex64,
    pub x_line: f64,
    pub grid: TimeGrid,
    pub injection: Injection,
}

impl SmibConfig {
    /// `V_inf = 1.0 + 0j`, horizon 8 s at `dt = 0.01` s, direct injection.
    pub fn new(machine: MachineParams, x_line: f64) -> Result<Self> {
        let cfg = Self {
            machine,
            v_inf: Complex64::new(1.0, 0.0),
            x_line,
            grid: TimeGrid::new(0.0, 0.01, 800)?,
            injection: Injection::Direct,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Benchmark machine: H = 3.5, D = 0, E' = 1.1, X_d' = 0.3, P_m0 = 0.7,
    /// a 0.08 pu mechanical step at 1 s.
    pub fn benchmark_machine() -> MachineParams {
        MachineParams::swing(3.5, 0.0, 1.1, 0.3, 0.7, 0.08, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        self.machine.validate()?;
        if !(self.x_line >= 0.0 && self.x_line.is_finite()) {
            return Err(Error::InvalidParameter(format!("x_line must be >= 0, got {}", self.x_line)));
        }
        if !(self.v_inf.norm() > 0.0) {
            return Err(Error::InvalidParameter("|V_inf| must be > 0".into()));
        }
        Ok(())
    }

    pub fn with_x_line(&self, x_line: f64) -> Self {
        Self { x_line, ..self.clone() }
    }

    pub fn x_eq(&self) -> f64 {
        self.machine.x_d_prime + self.x_line
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkSolution {
    pub current: Complex64,
    pub voltage: Complex64,
    pub power: f64,
}

pub fn network_solve(delta: f64, cfg: &SmibConfig) -> Result<NetworkSolution> {
    let x_eq = cfg.x_eq();
    if x_eq == 0.0 {
        return Err(Error::SingularNetwork("X_d' + X_line = 0".into()));
    }
    Ok(solve_with_offset(delta, cfg, Complex64::new(0.0, 0.0)))
}

/// Network solution with `offset` added to the machine current.
#[inline]
fn solve_with_offset(delta: f64, cfg: &SmibConfig, offset: Complex64) -> NetworkSolution {
    let emf = Complex64::from_polar(cfg.machine.e_prime, delta);
    let current = (emf - cfg.v_inf) / (J * cfg.x_eq()) + offset;
    let voltage = cfg.v_inf + J * cfg.x_line * current;
    NetworkSolution { current, voltage, power: (voltage * current.conj()).re }
}

/// Pre-step steady state `(delta0, omega0 = 0)` on the stable branch.
pub fn find_equilibrium(cfg: &SmibConfig) -> Result<(f64, f64)> {
    cfg.validate()?;
    let m = &cfg.machine;
    let ratio = m.p_m0 * cfg.x_eq() / (m.e_prime * cfg.v_inf.norm());
    if !(ratio > -1.0 && ratio < 1.0) {
        return Err(Error::InfeasibleDispatch { ratio });
    }
    let delta0 = ratio.asin() + cfg.v_inf.arg();
    let residual = (network_solve(delta0, cfg)?.power - m.p_m0).abs();
    debug_assert!(residual < 1e-10, "equilibrium residual {residual}");
    Ok((delta0, 0.0))
}

/// Windowed interface disturbance `d(t) = a s(t) e^{j phi}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Disturbance {
    /// Target interface budget (pu).
    pub epsilon: f64,
    pub t_on: f64,
    pub t_off: f64,
    /// Window edge width (s).
    pub w: f64,
    pub phi: f64,
    /// Injected amplitude (pu).
    #[serde(default)]
    pub amplitude: f64,
}

impl Disturbance {
    /// Benchmark window `(t_on, t_off, w, phi) = (1.2, 3.0, 0.03, 0.7)`.
    pub fn benchmark(epsilon: f64) -> Self {
        Self { epsilon, t_on: 1.2, t_off: 3.0, w: 0.03, phi: 0.7, amplitude: 0.0 }
    }

    pub fn with_amplitude(self, amplitude: f64) -> Self {
        Self { amplitude, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_on < self.t_off) {
            return Err(Error::InvalidParameter(format!("need t_on < t_off, got {} >= {}", self.t_on, self.t_off)));
        }
        if !(self.w > 0.0) {
            return Err(Error::InvalidParameter(format!("window width must be > 0, got {}", self.w)));
        }
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(Error::InvalidParameter(format!("amplitude must be >= 0, got {}", self.amplitude)));
        }
        Ok(())
    }

    /// `a = eps X_eq / X_d'`.
    pub fn nominal_amplitude(&self, cfg: &SmibConfig) -> f64 {
        self.epsilon * cfg.x_eq() / cfg.machine.x_d_prime
    }

    /// Disturbance phasor at time `t`.
    pub fn phasor(&self, t: f64) -> Complex64 {
        Complex64::from_polar(self.amplitude * window(t, self), self.phi)
    }
}

/// Half-difference of tanh edges; ~1 on `[t_on, t_off]`, ~0 outside.
pub fn window(t: f64, d: &Disturbance) -> f64 {
    0.5 * (((t - d.t_on) / d.w).tanh() - ((t - d.t_off) / d.w).tanh())
}

/// Electrical power of the benchmark machine, optionally with the interface
/// disturbance applied to its current.
#[derive(Debug, Clone)]
pub struct SmibPower {
    cfg: SmibConfig,
    disturbance: Option<Disturbance>,
}

impl SmibPower {
    pub fn reference(cfg: &SmibConfig) -> Self {
        Self { cfg: cfg.clone(), disturbance: None }
    }

    pub fn perturbed(cfg: &SmibConfig, d: &Disturbance) -> Self {
        Self { cfg: cfg.clone(), disturbance: Some(*d) }
    }

    fn offset(&self, t: f64) -> Complex64 {
        match &self.disturbance {
            None => Complex64::new(0.0, 0.0),
            Some(d) => {
                let p = d.phasor(t);
                match self.cfg.injection {
                    Injection::Direct => p,
                    Injection::BehindReactance => p * (self.cfg.machine.x_d_prime / self.cfg.x_eq()),
                }
            }
        }
    }

    /// Network quantities at rotor angle `delta` and time `t`.
    pub fn solve(&self, delta: f64, t: f64) -> NetworkSolution {
        solve_with_offset(delta, &self.cfg, self.offset(t))
    }
}

impl ElectricalPower for SmibPower {
    fn power(&self, state: &[f64], t: f64) -> f64 {
        self.solve(state[0], t).power
    }

    fn gradient(&self, state: &[f64], t: f64) -> [f64; 2] {
        let s = self.solve(state[0], t);
        // dI/d delta = E' e^{j delta} / X_eq, dV/d delta = j X_line dI/d delta
        let di = Complex64::from_polar(self.cfg.machine.e_prime, state[0]) / self.cfg.x_eq();
        let dv = J * self.cfg.x_line * di;
        [(dv * s.current.conj() + s.voltage * di.conj()).re, 0.0]
    }
}

/// Reference swing field of the benchmark.
pub fn reference_field(cfg: &SmibConfig) -> Result<Sm2Field<SmibPower>> {
    sm2_field(cfg.machine.clone(), SmibPower::reference(cfg))
}

#[derive(Debug, Clone)]
pub struct PerturbationRunResult {
    pub reference: Trajectory,
    pub perturbed: Trajectory,
    pub disturbance: Disturbance,
    pub amplitude: f64,
    pub e_z: Vec<f64>,
    pub e_x: Vec<f64>,
    pub e_y: Vec<f64>,
    pub e_sim: Vec<f64>,
    pub max_e_z: f64,
    pub max_e_sim: f64,
}

/// First maximum of a series (earliest index on ties).
fn series_max(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

impl PerturbationRunResult {
    pub fn max_e_x(&self) -> f64 {
        series_max(&self.e_x)
    }

    pub fn to_csv(&self) -> String {
        let g = self.reference.grid();
        let rows: Vec<Vec<String>> = (0..g.len())
            .map(|k| {
                [g.time(k), self.e_z[k], self.e_x[k], self.e_y[k], self.e_sim[k]].iter().map(|v| fmt_f64(*v)).collect()
            })
            .collect();
        csv_table("t,e_z,e_x,e_y,e_sim", &rows)
    }
}

/// Runs the unperturbed and perturbed benchmark from the pre-step equilibrium
/// and returns interface, state and simulator deviations on the shared grid.
pub fn perturbation_run(cfg: &SmibConfig, d: &Disturbance) -> Result<PerturbationRunResult> {
    d.validate()?;
    let (delta0, omega0) = find_equilibrium(cfg)?;
    let x0 = [delta0, omega0];
    let u = [cfg.machine.p_m0];
    let ref_power = SmibPower::reference(cfg);
    let pert_power = SmibPower::perturbed(cfg, d);
    let reference = integrate_rk4(&sm2_field(cfg.machine.clone(), ref_power.clone())?, &x0, &u, &cfg.grid)?;
    let perturbed = integrate_rk4(&sm2_field(cfg.machine.clone(), pert_power.clone())?, &x0, &u, &cfg.grid)?;

    let n = cfg.grid.len();
    let (mut e_z, mut e_x, mut e_y, mut e_sim) =
        (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for k in 0..n {
        let t = cfg.grid.time(k);
        let (xr, xp) = (reference.row(k), perturbed.row(k));
        let a = ref_power.solve(xr[0], t);
        let b = pert_power.solve(xp[0], t);
        let ez = (b.current - a.current).norm();
        let ey = (b.voltage - a.voltage).norm();
        let ex = l2_diff(xp, xr);
        e_z.push(ez);
        e_y.push(ey);
        e_x.push(ex);
        e_sim.push(ex + ey);
    }
    let max_e_z = series_max(&e_z);
    let max_e_sim = series_max(&e_sim);
    Ok(PerturbationRunResult { reference, perturbed, disturbance: *d, amplitude: d.amplitude, e_z, e_x, e_y, e_sim, max_e_z, max_e_sim })
}

/// Amplitude whose perturbation run reaches `max e_z = target_eps` to within
/// `1e-4` relative, found by bisection started from the nominal amplitude.
pub fn calibrate_amplitude(cfg: &SmibConfig, d: &Disturbance, target_eps: f64) -> Result<f64> {
    if !(target_eps > 0.0 && target_eps.is_finite()) {
        return Err(Error::InvalidParameter(format!("target interface budget must be > 0, got {target_eps}")));
    }
    let tol = 1e-4 * target_eps;
    let mut sweep: Vec<(f64, f64)> = Vec::new();
    let eval = |a: f64, sweep: &mut Vec<(f64, f64)>| -> Result<f64> {
        let r = perturbation_run(cfg, &d.with_amplitude(a))?;
        sweep.push((a, r.max_e_z));
        Ok(r.max_e_z)
    };

    let a0 = Disturbance { epsilon: target_eps, ..*d }.nominal_amplitude(cfg);
    let f0 = eval(a0, &mut sweep)?;
    if (f0 - target_eps).abs() <= tol {
        return Ok(a0);
    }
    let (mut lo, mut f_lo, mut hi, mut f_hi) = if f0 > target_eps {
        (0.0, 0.0, a0, f0)
    } else {
        let (mut lo, mut f_lo, mut hi) = (a0, f0, 2.0 * a0);
        let mut f_hi = eval(hi, &mut sweep)?;
        let mut doublings = 0;
        while f_hi < target_eps {
            if f_hi < f_lo || doublings >= 40 {
                return Err(Error::Calibration { reason: "could not bracket the target budget".into(), sweep });
            }
            (lo, f_lo) = (hi, f_hi);
            hi *= 2.0;
            f_hi = eval(hi, &mut sweep)?;
            doublings += 1;
        }
        (lo, f_lo, hi, f_hi)
    };
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        let f_mid = eval(mid, &mut sweep)?;
        if f_mid < f_lo || f_mid > f_hi {
            return Err(Error::Calibration { reason: "max e_z is not monotone in the amplitude".into(), sweep });
        }
        if (f_mid - target_eps).abs() <= tol {
            return Ok(mid);
        }
        if f_mid < target_eps {
            (lo, f_lo) = (mid, f_mid);
        } else {
            (hi, f_hi) = (mid, f_mid);
        }
    }
    Err(Error::Calibration { reason: "bisection did not reach the tolerance in 40 steps".into(), sweep })
}

/// Calibrated perturbation run at the target budget.
pub fn calibrated_run(cfg: &SmibConfig, d: &Disturbance, target_eps: f64) -> Result<PerturbationRunResult> {
    let a = calibrate_amplitude(cfg, d, target_eps)?;
    perturbation_run(cfg, &d.with_amplitude(a))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub x_line: f64,
    pub amplitude: f64,
    pub max_e_z: f64,
    pub max_e_sim: f64,
    pub max_e_x: f64,
    pub e_x_final: f64,
    pub e_y_final: f64,
}

/// One calibrated perturbation run per line reactance (rows run in parallel).
pub fn xline_sweep(base: &SmibConfig, d: &Disturbance, target_eps: f64, xline_values: &[f64]) -> Result<Vec<SweepRow>> {
    if xline_values.is_empty() {
        return Err(Error::InvalidParameter("x_line sweep needs at least one value".into()));
    }
    if xline_values.iter().any(|x| !(*x >= 0.0)) || xline_values.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidParameter("x_line values must be nonnegative and sorted ascending".into()));
    }
    let rows = par::map_slice(xline_values, |&x| -> Result<SweepRow> {
        let run = calibrated_run(&base.with_x_line(x), d, target_eps)?;
        let last = run.e_x.len() - 1;
        Ok(SweepRow {
            x_line: x,
            amplitude: run.amplitude,
            max_e_z: run.max_e_z,
            max_e_sim: run.max_e_sim,
            max_e_x: run.max_e_x(),
            e_x_final: run.e_x[last],
            e_y_final: run.e_y[last],
        })
    });
    rows.into_iter().collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let body: Vec<Vec<String>> =
        rows.iter().map(|r| vec![fmt_f64(r.x_line), fmt_f64(r.max_e_z), fmt_f64(r.max_e_sim)]).collect();
    csv_table("x_line,max_e_z,max_e_sim", &body)
}

/// The benchmark as a coupled system: `x = [delta, omega]`, interface
/// `z = [Re I, Im I]`, algebraic `y = [Re V, Im V]` with `V = V_inf + j X_line I`.
///
/// The swing dynamics read the network through `y` only: since the line
/// equation gives `I = (V - V_inf) / (j X_line)`, the electrical power is
/// `P_e = Im(V conj(V_inf)) / X_line`. This holds for both the reference and
/// the perturbed run, so the perturbation experiment satisfies the bound's
/// hypotheses exactly.
#[derive(Debug, Clone)]
pub struct SmibCoupled {
    pub cfg: SmibConfig,
    /// Time at which `P_m(t)` is evaluated (irrelevant to the Jacobians).
    pub t_eval: f64,
}

impl CoupledSystem for SmibCoupled {
    fn n_x(&self) -> usize {
        2
    }
    fn n_y(&self) -> usize {
        2
    }
    fn n_z(&self) -> usize {
        2
    }

    fn algebraic(&self, _x: &[f64], z: &[f64]) -> Option<Vec<f64>> {
        let v = self.cfg.v_inf + J * self.cfg.x_line * Complex64::new(z[0], z[1]);
        Some(vec![v.re, v.im])
    }

    fn differential(&self, x: &[f64], y: &[f64]) -> Option<Vec<f64>> {
        if self.cfg.x_line == 0.0 {
            return None;
        }
        let v = Complex64::new(y[0], y[1]);
        let pe = (v * self.cfg.v_inf.conj()).im / self.cfg.x_line;
        let m = &self.cfg.machine;
        let pm = m.mechanical_power(m.p_m0, self.t_eval);
        Some(vec![x[1], (pm - pe - m.d * x[1]) / (2.0 * m.h)])
    }
}

/// Box over `(delta, omega, Re I, Im I)` enclosing both runs, padded by
/// `margin` times each span (plus a small absolute floor).
pub fn envelope_box(cfg: &SmibConfig, run: &PerturbationRunResult, margin: f64) -> Result<OperatingBox> {
    let ref_power = SmibPower::reference(cfg);
    let pert_power = SmibPower::perturbed(cfg, &run.disturbance);
    let mut lo = [f64::INFINITY; 4];
    let mut hi = [f64::NEG_INFINITY; 4];
    let g = cfg.grid;
    for k in 0..g.len() {
        let t = g.time(k);
        let (xr, xp) = (run.reference.row(k), run.perturbed.row(k));
        let ir = ref_power.solve(xr[0], t).current;
        let ip = pert_power.solve(xp[0], t).current;
        for pt in [[xr[0], xr[1], ir.re, ir.im], [xp[0], xp[1], ip.re, ip.im]] {
            for i in 0..4 {
                lo[i] = lo[i].min(pt[i]);
                hi[i] = hi[i].max(pt[i]);
            }
        }
    }
    let pad: Vec<f64> = (0..4).map(|i| margin * (hi[i] - lo[i]) + 1e-6).collect();
    OperatingBox::new((0..4).map(|i| lo[i] - pad[i]).collect(), (0..4).map(|i| hi[i] + pad[i]).collect())
}

/// Bound constants for the benchmark over the envelope of a run.
pub fn estimate_run_constants(cfg: &SmibConfig, run: &PerturbationRunResult, n_samples: usize) -> Result<ConstantEstimate> {
    let region = envelope_box(cfg, run, 0.1)?;
    let sys = SmibCoupled { cfg: cfg.clone(), t_eval: cfg.grid.t0 };
    estimate_constants(&sys, &region, n_samples, 1e-6, cfg.grid.horizon())
}

/// Measured deviations of a run against the finite-horizon bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremCheck {
    pub eps: f64,
    pub bounds: TheoremBounds,
    pub max_e_x: f64,
    pub e_x_final: f64,
    pub e_y_final: f64,
    /// Largest `e_x(t) / bound_ex(t)` over the grid, with the bound evaluated at horizon `t`.
    pub worst_ratio_x: f64,
    pub holds: bool,
}

/// Checks `e_x(t) <= L_y K_yz Phi(t, alpha) eps` at every grid time and
/// `e_y(T) <= K_yx bound_ex + K_yz eps` at the horizon, with `eps = max e_z`.
pub fn theorem_check(constants: &BoundConstants, run: &PerturbationRunResult) -> TheoremCheck {
    let eps = run.max_e_z;
    let g = *run.reference.grid();
    let bounds = crate::bound::theorem_bounds(constants, eps);
    let mut worst: f64 = 0.0;
    for k in 1..g.len() {
        let c = constants.with_horizon(g.time(k) - g.t0);
        let b = crate::bound::theorem_bounds(&c, eps).bound_ex;
        if b > 0.0 {
            worst = worst.max(run.e_x[k] / b);
        } else if run.e_x[k] > 0.0 {
            worst = f64::INFINITY;
        }
    }
    let last = g.n_steps;
    let max_e_x = run.max_e_x();
    let e_y_final = run.e_y[last];
    let holds = worst <= 1.0 && max_e_x <= bounds.bound_ex && e_y_final <= bounds.bound_ey;
    TheoremCheck { eps, bounds, max_e_x, e_x_final: run.e_x[last], e_y_final, worst_ratio_x: worst, holds }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::machines::ElectricalPower;

    fn cfg(x_line: f64) -> SmibConfig {
        SmibConfig::new(SmibConfig::benchmark_machine(), x_line).unwrap()
    }

    #[test]
    fn zero_angle_with_matching_emf_carries_no_current() {
        let mut m = SmibConfig::benchmark_machine();
        m.e_prime = 1.0;
        let c = SmibConfig::new(m, 0.2).unwrap();
        let s = network_solve(0.0, &c).unwrap();
        assert_eq!(s.current, Complex64::new(0.0, 0.0));
        assert_eq!(s.voltage, c.v_inf);
        assert_eq!(s.power, 0.0);
    }

    #[test]
    fn equilibrium_power_matches_dispatch() {
        let c = cfg(0.2);
        let delta = (0.35f64 / 1.1).asin();
        // the quoted 0.323874 is a rounded figure; asin(0.35/1.1) = 0.3238110...
        assert!((delta - 0.323874).abs() < 1e-4);
        assert!((delta - 0.323_811_015_273_55).abs() < 1e-12);
        assert!((network_solve(delta, &c).unwrap().power - 0.7).abs() < 1e-4);
        let (d0, w0) = find_equilibrium(&c).unwrap();
        assert_eq!(w0, 0.0);
        assert!((d0 - delta).abs() < 1e-15);
        assert!((network_solve(d0, &c).unwrap().power - 0.7).abs() < 1e-10);
    }

    #[test]
    fn lossless_closed_form() {
        let c = cfg(0.35);
        for delta in [-1.0f64, -0.2, 0.0, 0.4, 1.3] {
            let closed = 1.1 * delta.sin() / 0.65;
            assert!((network_solve(delta, &c).unwrap().power - closed).abs() < 1e-12);
        }
    }

    #[test]
    fn equilibrium_edge_cases() {
        let mut m = SmibConfig::benchmark_machine();
        m.p_m0 = 0.0;
        assert_eq!(find_equilibrium(&SmibConfig::new(m.clone(), 0.2).unwrap()).unwrap().0, 0.0);
        m.p_m0 = 3.0;
        assert!(matches!(
            find_equilibrium(&SmibConfig::new(m, 0.2).unwrap()),
            Err(Error::InfeasibleDispatch { .. })
        ));
    }

    #[test]
    fn equilibrium_is_a_fixed_point_before_the_step() {
        let c = cfg(0.2);
        let f = reference_field(&c).unwrap();
        let (d0, w0) = find_equilibrium(&c).unwrap();
        let d = crate::dynamics::VectorField::eval_vec(&f, &[d0, w0], &[0.7], 0.5);
        assert!(crate::dynamics::l2(&d) < 1e-10);
    }

    #[test]
    fn window_shape() {
        let d = Disturbance::benchmark(0.02);
        assert!((window(2.1, &d) - 1.0).abs() < 1e-9);
        assert!((window(1.2, &d) - 0.5).abs() < 1e-12);
        assert!(window(0.0, &d).abs() < 1e-12);
        // 10w from an edge leaves 2e^{-20} ~ 2.1e-9; 11w is inside 1e-9
        assert!((window(1.2 + 10.0 * 0.03, &d) - 1.0).abs() < 3e-9);
        for t in [1.2 + 11.0 * 0.03, 2.0, 3.0 - 11.0 * 0.03] {
            assert!((window(t, &d) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_disturbance_is_bit_identical() {
        let r = perturbation_run(&cfg(0.2), &Disturbance::benchmark(0.02)).unwrap();
        assert_eq!(r.reference, r.perturbed);
        assert!(r.e_z.iter().all(|&v| v == 0.0));
        assert!(r.e_sim.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn voltage_error_is_line_scaled_current_error() {
        let c = cfg(0.3);
        let r = perturbation_run(&c, &Disturbance::benchmark(0.02).with_amplitude(0.03)).unwrap();
        for (ez, ey) in r.e_z.iter().zip(&r.e_y) {
            assert!((ey - 0.3 * ez).abs() < 1e-12);
        }
    }

    #[test]
    fn power_gradient_matches_finite_differences() {
        let c = cfg(0.25);
        let p = SmibPower::perturbed(&c, &Disturbance::benchmark(0.02).with_amplitude(0.05));
        for (delta, t) in [(0.3, 0.5), (0.7, 1.5), (-0.2, 2.9)] {
            let g = p.gradient(&[delta, 0.0], t);
            let h = 1e-6;
            let fd = (p.power(&[delta + h, 0.0], t) - p.power(&[delta - h, 0.0], t)) / (2.0 * h);
            assert!((g[0] - fd).abs() < 1e-8 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn calibration_rejects_nonpositive_target() {
        assert!(matches!(
            calibrate_amplitude(&cfg(0.2), &Disturbance::benchmark(0.02), 0.0),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn calibration_hits_target() {
        let c = cfg(0.2);
        let d = Disturbance::benchmark(0.02);
        let a = calibrate_amplitude(&c, &d, 0.02).unwrap();
        let r = perturbation_run(&c, &d.with_amplitude(a)).unwrap();
        assert!((r.max_e_z - 0.02).abs() <= 1e-4 * 0.02);
    }

    #[test]
    fn small_amplitudes_respond_linearly() {
        let c = cfg(0.2);
        let d = Disturbance::benchmark(0.001);
        let a = d.nominal_amplitude(&c);
        let one = perturbation_run(&c, &d.with_amplitude(a)).unwrap().max_e_z;
        let two = perturbation_run(&c, &d.with_amplitude(2.0 * a)).unwrap().max_e_z;
        assert!(((two / one) - 2.0).abs() < 0.2);
    }

    #[test]
    fn sweep_validation_and_single_row() {
        let c = cfg(0.2);
        let d = Disturbance::benchmark(0.02);
        assert!(xline_sweep(&c, &d, 0.02, &[]).is_err());
        assert!(xline_sweep(&c, &d, 0.02, &[0.3, 0.1]).is_err());
        let rows = xline_sweep(&c, &d, 0.02, &[0.2]).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(sweep_csv(&rows).starts_with("x_line,max_e_z,max_e_sim\n"));
    }

    #[test]
    fn coupling_constants_match_line_reactance() {
        let c = cfg(0.4);
        let d = Disturbance::benchmark(0.02);
        let run = calibrated_run(&c, &d, 0.02).unwrap();
        let est = estimate_run_constants(&c, &run, 16).unwrap();
        assert!((est.constants.k_yz - 0.4).abs() < 1e-6);
        assert!(est.constants.k_yx.abs() < 1e-9);
        // df/dx = [[0, 1], [0, -D/2H]] with D = 0: symmetric part eigenvalues +-1/2
        assert!((est.constants.mu_cl - 0.5).abs() < 1e-8);
        assert!((est.constants.l_y - 1.0 / (7.0 * 0.4)).abs() < 1e-6);
    }

    #[test]
    fn damped_one_sided_constant_matches_hand_eigenvalue() {
        let mut m = SmibConfig::benchmark_machine();
        m.d = 2.0;
        let c = SmibConfig::new(m, 0.2).unwrap();
        let sys = SmibCoupled { cfg: c, t_eval: 0.0 };
        let region = OperatingBox::new(vec![0.3, 0.0, 0.5, -0.1], vec![0.3, 0.0, 0.5, -0.1]).unwrap();
        let est = estimate_constants(&sys, &region, 1, 1e-6, 8.0).unwrap();
        // [[0, 1/2], [1/2, -c]] with c = D/2H: largest eigenvalue (-c + sqrt(c^2 + 1)) / 2
        let cc = 2.0 / 7.0;
        let hand = (-cc + (cc * cc + 1.0f64).sqrt()) / 2.0;
        assert!((est.constants.mu_cl - hand).abs() < 1e-8);
        let local = est.local[0].unwrap();
        assert_eq!(
            [est.constants.k_yz, est.constants.k_yx, est.constants.l_y, est.constants.mu_cl],
            local
        );
    }
}
