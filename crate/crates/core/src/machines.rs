//! Synchronous-machine component models, the Park/dq interface rotation and
//! the functional/solution error metrics.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::{fd_step, l2, l2_diff, Trajectory, VectorField};
use crate::error::{Error, Result};

/// Machine parameters in per-unit and seconds.
///
/// The two-axis fields are only needed by [`Sm4Field`]; no defaults exist for them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MachineParams {
    /// Inertia constant H (s).
    pub h: f64,
    /// Damping D (pu).
    pub d: f64,
    /// Internal EMF magnitude E' (pu).
    pub e_prime: f64,
    /// Transient reactance X_d' (pu).
    pub x_d_prime: f64,
    /// Pre-step mechanical power (pu).
    pub p_m0: f64,
    /// Mechanical power step (pu).
    #[serde(default)]
    pub dp_m: f64,
    /// Step time (s).
    #[serde(default)]
    pub t_step: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_q_prime: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_d: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_d0_prime: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_q0_prime: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e_fd: Option<f64>,
}

impl MachineParams {
    /// Second-order machine parameters; two-axis fields left unset.
    pub fn swing(h: f64, d: f64, e_prime: f64, x_d_prime: f64, p_m0: f64, dp_m: f64, t_step: f64) -> Self {
        Self {
            h,
            d,
            e_prime,
            x_d_prime,
            p_m0,
            dp_m,
            t_step,
            x_q_prime: None,
            x_d: None,
            x_q: None,
            t_d0_prime: None,
            t_q0_prime: None,
            e_fd: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.h, self.d, self.e_prime, self.x_d_prime, self.p_m0, self.dp_m, self.t_step]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParameter("machine parameters must be finite".into()));
        }
        if self.h <= 0.0 {
            return Err(Error::InvalidParameter(format!("inertia H must be > 0, got {}", self.h)));
        }
        if self.x_d_prime <= 0.0 {
            return Err(Error::InvalidParameter(format!("X_d' must be > 0, got {}", self.x_d_prime)));
        }
        for (name, v) in [
            ("x_q_prime", self.x_q_prime),
            ("x_d", self.x_d),
            ("x_q", self.x_q),
            ("t_d0_prime", self.t_d0_prime),
            ("t_q0_prime", self.t_q0_prime),
        ] {
            if let Some(v) = v {
                if !(v > 0.0) {
                    return Err(Error::InvalidParameter(format!("{name} must be > 0, got {v}")));
                }
            }
        }
        Ok(())
    }

    /// Mechanical power at time `t` for a pre-step level `p_m0`.
    #[inline]
    pub fn mechanical_power(&self, p_m0: f64, t: f64) -> f64 {
        if t >= self.t_step {
            p_m0 + self.dp_m
        } else {
            p_m0
        }
    }

    /// Two-axis parameter set; fails if any of its fields is missing.
    pub fn two_axis(&self) -> Result<TwoAxisParams> {
        let missing = |n: &str| Error::Config(format!("fourth-order model requires machine.{n}"));
        let p = TwoAxisParams {
            x_q_prime: self.x_q_prime.ok_or_else(|| missing("x_q_prime"))?,
            x_d: self.x_d.ok_or_else(|| missing("x_d"))?,
            x_q: self.x_q.ok_or_else(|| missing("x_q"))?,
            t_d0_prime: self.t_d0_prime.ok_or_else(|| missing("t_d0_prime"))?,
            t_q0_prime: self.t_q0_prime.ok_or_else(|| missing("t_q0_prime"))?,
            e_fd: self.e_fd.ok_or_else(|| missing("e_fd"))?,
        };
        self.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoAxisParams {
    pub x_q_prime: f64,
    pub x_d: f64,
    pub x_q: f64,
    pub t_d0_prime: f64,
    pub t_q0_prime: f64,
    pub e_fd: f64,
}

/// Electrical power drawn from a second-order machine, as a function of its
/// state `[delta, omega]` and time.
pub trait ElectricalPower: Send + Sync {
    fn power(&self, state: &[f64], t: f64) -> f64;

    /// `[dP/d delta, dP/d omega]`; finite differences unless overridden.
    fn gradient(&self, state: &[f64], t: f64) -> [f64; 2] {
        let mut g = [0.0; 2];
        let mut probe = [state[0], state[1]];
        for j in 0..2 {
            let h = fd_step(state[j]);
            probe[j] = state[j] + h;
            let plus = self.power(&probe, t);
            probe[j] = state[j] - h;
            let minus = self.power(&probe, t);
            probe[j] = state[j];
            g[j] = (plus - minus) / (2.0 * h);
        }
        g
    }
}

/// Adapts a closure `(state, t) -> P_e` to [`ElectricalPower`].
pub struct PowerFn<F>(pub F);

impl<F> ElectricalPower for PowerFn<F>
where
    F: Fn(&[f64], f64) -> f64 + Send + Sync,
{
    fn power(&self, state: &[f64], t: f64) -> f64 {
        (self.0)(state, t)
    }
}

/// Swing model `d delta/dt = omega`, `2H d omega/dt = P_m(t) - P_e - D omega`.
///
/// The parameter vector is `[P_m0]`, the pre-step mechanical power.
pub struct Sm2Field<P> {
    params: MachineParams,
    power: P,
}

/// Builds the swing-model vector field.
pub fn sm2_field<P: ElectricalPower>(params: MachineParams, power: P) -> Result<Sm2Field<P>> {
    params.validate()?;
    Ok(Sm2Field { params, power })
}

impl<P> Sm2Field<P> {
    pub fn params(&self) -> &MachineParams {
        &self.params
    }

    pub fn power(&self) -> &P {
        &self.power
    }

    /// Default input vector `[P_m0]`.
    pub fn nominal_inputs(&self) -> Vec<f64> {
        vec![self.params.p_m0]
    }
}

impl<P: ElectricalPower> VectorField for Sm2Field<P> {
    fn n_state(&self) -> usize {
        2
    }

    fn n_param(&self) -> usize {
        1
    }

    fn eval(&self, x: &[f64], p: &[f64], t: f64, out: &mut [f64]) {
        let pm = self.params.mechanical_power(p[0], t);
        let pe = self.power.power(x, t);
        out[0] = x[1];
        out[1] = (pm - pe - self.params.d * x[1]) / (2.0 * self.params.h);
    }

    fn jac_state(&self, x: &[f64], _p: &[f64], t: f64) -> DMatrix<f64> {
        let g = self.power.gradient(x, t);
        let two_h = 2.0 * self.params.h;
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -g[0] / two_h, -(g[1] + self.params.d) / two_h])
    }

    fn jac_param(&self, _x: &[f64], _p: &[f64], _t: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 1, &[0.0, 1.0 / (2.0 * self.params.h)])
    }

    fn analytic_jacobians(&self) -> bool {
        true
    }
}

/// Stiff voltage source behind a line reactance, seen from a two-axis machine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfiniteBusCoupling {
    pub v_inf: Complex64,
    pub x_line: f64,
}

/// Stator/network quantities of the two-axis machine in its own dq frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoAxisTerminal {
    pub i_d: f64,
    pub i_q: f64,
    pub v_d: f64,
    pub v_q: f64,
}

impl TwoAxisTerminal {
    pub fn electrical_power(&self) -> f64 {
        self.v_d * self.i_d + self.v_q * self.i_q
    }
}

/// Two-axis model, states `[delta, omega, E_q', E_d']`, parameter `[P_m0]`.
///
/// `T_d0' dE_q'/dt = -E_q' - (X_d - X_d') I_d + E_fd` and
/// `T_q0' dE_d'/dt = -E_d' + (X_q - X_q') I_q`, with stator resistance neglected
/// and the machine frame defined by `(V_d + j V_q) = V e^{-j(delta - pi/2)}`.
pub struct Sm4Field {
    params: MachineParams,
    axis: TwoAxisParams,
    coupling: InfiniteBusCoupling,
}

pub fn sm4_field(params: MachineParams, coupling: InfiniteBusCoupling) -> Result<Sm4Field> {
    let axis = params.two_axis()?;
    if !(coupling.x_line >= 0.0) {
        return Err(Error::InvalidParameter(format!("x_line must be >= 0, got {}", coupling.x_line)));
    }
    Ok(Sm4Field { params, axis, coupling })
}

impl Sm4Field {
    pub fn axis(&self) -> &TwoAxisParams {
        &self.axis
    }

    pub fn params(&self) -> &MachineParams {
        &self.params
    }

    /// Solves the stator and line equations for the given state.
    pub fn terminal(&self, x: &[f64]) -> TwoAxisTerminal {
        let (delta, eq, ed) = (x[0], x[2], x[3]);
        let xl = self.coupling.x_line;
        // infinite-bus voltage expressed in the machine frame
        let vinf = self.coupling.v_inf * Complex64::new(0.0, 1.0) * Complex64::from_polar(1.0, -delta);
        let (a, b) = (vinf.re, vinf.im);
        let i_q = (a - ed) / (self.axis.x_q_prime + xl);
        let i_d = (eq - b) / (self.params.x_d_prime + xl);
        TwoAxisTerminal { i_d, i_q, v_d: a - xl * i_q, v_q: b + xl * i_d }
    }

    /// Terminal current phasor in the network frame.
    pub fn current_phasor(&self, x: &[f64]) -> Complex64 {
        let term = self.terminal(x);
        Complex64::new(term.i_d, term.i_q) * Complex64::from_polar(1.0, x[0] - std::f64::consts::FRAC_PI_2)
    }

    /// Steady state at `P_m0` (omega = 0) by Newton iteration.
    pub fn equilibrium(&self) -> Result<Vec<f64>> {
        let pm = self.params.p_m0;
        let residual = |z: &[f64]| -> [f64; 3] {
            let x = [z[0], 0.0, z[1], z[2]];
            let mut d = [0.0; 4];
            self.eval(&x, &[pm], self.params.t_step - 1.0, &mut d);
            [d[1], d[2], d[3]]
        };
        let vmag = self.coupling.v_inf.norm();
        let xeq = self.params.x_d_prime + self.coupling.x_line;
        let s = (pm * xeq / (self.axis.e_fd.max(self.params.e_prime) * vmag)).clamp(-0.9, 0.9);
        let mut z = [s.asin() + self.coupling.v_inf.arg(), self.params.e_prime, 0.0];
        for _ in 0..100 {
            let r = residual(&z);
            let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-13 {
                return Ok(vec![z[0], 0.0, z[1], z[2]]);
            }
            let jac = crate::dynamics::fd_jacobian(3, &z, |zz, out| out.copy_from_slice(&residual(zz)));
            let step = jac
                .lu()
                .solve(&nalgebra::DVector::from_column_slice(&r))
                .ok_or_else(|| Error::SingularNetwork("two-axis equilibrium jacobian is singular".into()))?;
            for i in 0..3 {
                z[i] -= step[i];
            }
        }
        let r = residual(&z);
        if r.iter().all(|v| v.abs() < 1e-9) {
            Ok(vec![z[0], 0.0, z[1], z[2]])
        } else {
            Err(Error::InfeasibleDispatch { ratio: f64::NAN })
        }
    }
}

impl VectorField for Sm4Field {
    fn n_state(&self) -> usize {
        4
    }

    fn n_param(&self) -> usize {
        1
    }

    fn eval(&self, x: &[f64], p: &[f64], t: f64, out: &mut [f64]) {
        let term = self.terminal(x);
        let pm = self.params.mechanical_power(p[0], t);
        let a = &self.axis;
        out[0] = x[1];
        out[1] = (pm - term.electrical_power() - self.params.d * x[1]) / (2.0 * self.params.h);
        out[2] = (-x[2] - (a.x_d - self.params.x_d_prime) * term.i_d + a.e_fd) / a.t_d0_prime;
        out[3] = (-x[3] + (a.x_q - a.x_q_prime) * term.i_q) / a.t_q0_prime;
    }
}

/// Currents in the rotor frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DqCurrents {
    pub i_d: f64,
    pub i_q: f64,
}

/// Rotation applied to the network-frame phasor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParkConvention {
    /// `I_d + j I_q = I e^{-j delta}`
    #[default]
    NegativeRotation,
    /// `I_d + j I_q = I e^{+j delta}`
    PositiveRotation,
}

pub fn park_dq(current: Complex64, delta: f64) -> DqCurrents {
    park_dq_with(current, delta, ParkConvention::NegativeRotation)
}

pub fn park_dq_with(current: Complex64, delta: f64, convention: ParkConvention) -> DqCurrents {
    let angle = match convention {
        ParkConvention::NegativeRotation => -delta,
        ParkConvention::PositiveRotation => delta,
    };
    let r = current * Complex64::from_polar(1.0, angle);
    DqCurrents { i_d: r.re, i_q: r.im }
}

/// Per-grid-point ODE residual `||dU/dtau - f(U, u, t)||_2` along a surrogate
/// trajectory. `derivative` is row-major with the trajectory's shape.
pub fn functional_error<F: VectorField + ?Sized>(
    surrogate: &Trajectory,
    derivative: &[f64],
    field: &F,
    inputs: &[f64],
) -> Result<Vec<f64>> {
    let n = surrogate.n_state();
    if derivative.len() != surrogate.len() * n || field.n_state() != n {
        return Err(Error::Dimension(format!(
            "derivative matrix has {} values, trajectory needs {} x {}",
            derivative.len(),
            surrogate.len(),
            n
        )));
    }
    if inputs.len() != field.n_param() {
        return Err(Error::Dimension("input vector does not match field".into()));
    }
    let grid = surrogate.grid();
    let mut f = vec![0.0; n];
    Ok(surrogate
        .rows()
        .enumerate()
        .map(|(k, row)| {
            field.eval(row, inputs, grid.time(k), &mut f);
            l2_diff(&derivative[k * n..(k + 1) * n], &f)
        })
        .collect())
}

/// Per-grid-point `||U(t_k) - G(t_k)||_2`.
pub fn solution_error(surrogate: &Trajectory, reference: &Trajectory) -> Result<Vec<f64>> {
    surrogate.check_compatible(reference)?;
    Ok(surrogate.rows().zip(reference.rows()).map(|(a, b)| l2_diff(a, b)).collect())
}

/// Second-order finite-difference time derivative of a sampled trajectory
/// (central inside, one-sided at the ends).
pub fn fd_time_derivative(traj: &Trajectory) -> Vec<f64> {
    let n = traj.n_state();
    let m = traj.len();
    let h = traj.grid().dt;
    let mut out = vec![0.0; m * n];
    for k in 0..m {
        for j in 0..n {
            out[k * n + j] = if m < 3 {
                let (a, b) = if k + 1 < m { (k, k + 1) } else { (k - 1, k) };
                (traj.row(b)[j] - traj.row(a)[j]) / h
            } else if k == 0 {
                (-3.0 * traj.row(0)[j] + 4.0 * traj.row(1)[j] - traj.row(2)[j]) / (2.0 * h)
            } else if k == m - 1 {
                (3.0 * traj.row(k)[j] - 4.0 * traj.row(k - 1)[j] + traj.row(k - 2)[j]) / (2.0 * h)
            } else {
                (traj.row(k + 1)[j] - traj.row(k - 1)[j]) / (2.0 * h)
            };
        }
    }
    out
}

/// Norm of a dq current pair.
pub fn dq_magnitude(c: &DqCurrents) -> f64 {
    l2(&[c.i_d, c.i_q])
}
