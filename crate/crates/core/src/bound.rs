//! Finite-horizon acceptance bound linking interface error to simulator-level
//! deviation, and numerical estimation of the constants it needs.
//!
//! For an interface error `||e_z(t)|| <= eps` on `[0, T]` and shared initial
//! conditions:
//!
//! ```text
//! ||e_x(T)|| <= L_y K_yz Phi(T, alpha) eps
//! ||e_y(T)|| <= K_yx ||e_x(T)|| bound + K_yz eps
//! alpha = mu_cl + L_y K_yx,  Phi(T, a) = (e^{aT} - 1) / a  (T when a = 0)
//! ```
//!
//! All Lipschitz constants use induced 2-norms; `mu_cl` is the largest
//! eigenvalue of the symmetric part of `df/dx`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::region::OperatingBox;
use crate::seed::halton;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    /// Sensitivity of algebraic variables to the interface signal.
    pub k_yz: f64,
    /// Sensitivity of algebraic variables to the differential states.
    pub k_yx: f64,
    /// Lipschitz constant of the dynamics in the algebraic variables.
    pub l_y: f64,
    /// One-sided Lipschitz constant of the dynamics in the states (may be negative).
    pub mu_cl: f64,
    /// Horizon T (s).
    pub horizon: f64,
}

impl BoundConstants {
    pub fn new(k_yz: f64, k_yx: f64, l_y: f64, mu_cl: f64, horizon: f64) -> Result<Self> {
        let c = Self { k_yz, k_yx, l_y, mu_cl, horizon };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k_yz >= 0.0 && self.k_yx >= 0.0 && self.l_y >= 0.0) {
            return Err(Error::InvalidParameter("K_yz, K_yx and L_y must be >= 0".into()));
        }
        if !self.mu_cl.is_finite() {
            return Err(Error::InvalidParameter("mu_cl must be finite".into()));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidParameter("horizon T must be > 0".into()));
        }
        Ok(())
    }

    pub fn alpha(&self) -> f64 {
        self.mu_cl + self.l_y * self.k_yx
    }

    pub fn phi(&self) -> f64 {
        phi(self.horizon, self.alpha())
    }

    /// `(1 + K_yx) L_y K_yz Phi + K_yz`, the total-deviation gain per unit eps.
    pub fn total_gain(&self) -> f64 {
        (1.0 + self.k_yx) * self.l_y * self.k_yz * self.phi() + self.k_yz
    }

    pub fn with_horizon(self, horizon: f64) -> Self {
        Self { horizon, ..self }
    }
}

/// Amplification factor `Phi(T, alpha)`.
///
/// Uses `T (1 + aT/2 + (aT)^2/6)` when `|alpha T| < 1e-8`.
pub fn phi(horizon: f64, alpha: f64) -> f64 {
    let at = alpha * horizon;
    if at.abs() < 1e-8 {
        horizon * (1.0 + at / 2.0 + at * at / 6.0)
    } else {
        at.exp_m1() / alpha
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoremBounds {
    pub bound_ex: f64,
    pub bound_ey: f64,
    pub bound_total: f64,
}

pub fn theorem_bounds(c: &BoundConstants, eps: f64) -> TheoremBounds {
    let bound_ex = c.l_y * c.k_yz * c.phi() * eps;
    let bound_ey = c.k_yx * bound_ex + c.k_yz * eps;
    TheoremBounds { bound_ex, bound_ey, bound_total: bound_ex + bound_ey }
}

/// Largest interface error that keeps the total deviation within `delta`.
pub fn eps_max(c: &BoundConstants, delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter(format!("admissible deviation must be > 0, got {delta}")));
    }
    let gain = c.total_gain();
    if c.k_yz == 0.0 || !(gain > 0.0) {
        return Err(Error::DegenerateCoupling);
    }
    Ok(delta / gain)
}

/// Total deviation bound for a calibrated uniform interface bound `eps_bar`.
pub fn propagate_calibrated_bound(c: &BoundConstants, eps_bar: f64) -> f64 {
    theorem_bounds(c, eps_bar).bound_total
}

/// JSON bound report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    #[serde(rename = "K_yz")]
    pub k_yz: f64,
    #[serde(rename = "K_yx")]
    pub k_yx: f64,
    #[serde(rename = "L_y")]
    pub l_y: f64,
    pub mu_cl: f64,
    pub alpha: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub phi: f64,
    pub eps: f64,
    pub bound_ex: f64,
    pub bound_ey: f64,
    pub bound_total: f64,
    /// `None` when the coupling is degenerate.
    pub eps_max: Option<f64>,
}

impl BoundReport {
    pub fn new(c: &BoundConstants, eps: f64, delta: f64) -> Self {
        let b = theorem_bounds(c, eps);
        Self {
            k_yz: c.k_yz,
            k_yx: c.k_yx,
            l_y: c.l_y,
            mu_cl: c.mu_cl,
            alpha: c.alpha(),
            horizon: c.horizon,
            phi: c.phi(),
            eps,
            bound_ex: b.bound_ex,
            bound_ey: b.bound_ey,
            bound_total: b.bound_total,
            eps_max: eps_max(c, delta).ok(),
        }
    }
}

/// A component coupled to the rest of the simulator through algebraic equations,
/// with the algebraic part solved for `y` given states `x` and interface `z`.
pub trait CoupledSystem: Sync {
    fn n_x(&self) -> usize;
    fn n_y(&self) -> usize;
    fn n_z(&self) -> usize;

    /// `y = h(x, z)`; `None` when the algebraic solve is singular.
    fn algebraic(&self, x: &[f64], z: &[f64]) -> Option<Vec<f64>>;

    /// `f(x, y)`; `None` when undefined at this point.
    fn differential(&self, x: &[f64], y: &[f64]) -> Option<Vec<f64>>;
}

/// Per-sample local constants `[K_yz, K_yx, L_y, mu_cl]`.
pub type LocalConstants = [f64; 4];

#[derive(Debug, Clone, PartialEq)]
pub struct ConstantEstimate {
    pub constants: BoundConstants,
    /// Sample points `(x, z)` in evaluation order.
    pub samples: Vec<Vec<f64>>,
    /// Local values per sample, `None` where the sample was skipped.
    pub local: Vec<Option<LocalConstants>>,
    pub skipped: usize,
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().max()
}

fn max_sym_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().max()
}

/// Jacobian by central differences with step `rel * (1 + |v|)`; `None` if any
/// probe is undefined.
fn fd_jacobian_opt<G>(n_out: usize, at: &[f64], rel: f64, g: G) -> Option<DMatrix<f64>>
where
    G: Fn(&[f64]) -> Option<Vec<f64>>,
{
    let mut jac = DMatrix::zeros(n_out, at.len());
    let mut probe = at.to_vec();
    for j in 0..at.len() {
        let h = rel * (1.0 + at[j].abs());
        probe[j] = at[j] + h;
        let plus = g(&probe)?;
        probe[j] = at[j] - h;
        let minus = g(&probe)?;
        probe[j] = at[j];
        for i in 0..n_out {
            jac[(i, j)] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    Some(jac)
}

/// Local constants at one `(x, z)` point.
pub fn local_constants<S: CoupledSystem + ?Sized>(sys: &S, x: &[f64], z: &[f64], fd_step: f64) -> Option<LocalConstants> {
    let y = sys.algebraic(x, z)?;
    let j_yz = fd_jacobian_opt(sys.n_y(), z, fd_step, |zz| sys.algebraic(x, zz))?;
    let j_yx = fd_jacobian_opt(sys.n_y(), x, fd_step, |xx| sys.algebraic(xx, z))?;
    let j_fy = fd_jacobian_opt(sys.n_x(), &y, fd_step, |yy| sys.differential(x, yy))?;
    let j_fx = fd_jacobian_opt(sys.n_x(), x, fd_step, |xx| sys.differential(xx, &y))?;
    let vals = [spectral_norm(&j_yz), spectral_norm(&j_yx), spectral_norm(&j_fy), max_sym_eigenvalue(&j_fx)];
    vals.iter().all(|v| v.is_finite()).then_some(vals)
}

/// Estimates `(K_yz, K_yx, L_y, mu_cl)` as maxima of local Jacobian quantities
/// over `n_samples` Halton points of `region` (coordinates ordered `x` then `z`).
pub fn estimate_constants<S: CoupledSystem + ?Sized>(
    sys: &S,
    region: &OperatingBox,
    n_samples: usize,
    fd_step: f64,
    horizon: f64,
) -> Result<ConstantEstimate> {
    region.validate()?;
    if n_samples == 0 {
        return Err(Error::InvalidParameter("n_samples must be >= 1".into()));
    }
    if region.dim() != sys.n_x() + sys.n_z() {
        return Err(Error::Dimension(format!(
            "region has {} dimensions, system needs n_x + n_z = {}",
            region.dim(),
            sys.n_x() + sys.n_z()
        )));
    }
    if !(fd_step > 0.0) {
        return Err(Error::InvalidParameter("fd_step must be > 0".into()));
    }
    let samples: Vec<Vec<f64>> = (0..n_samples).map(|i| region.from_unit(&halton(i, region.dim()))).collect();
    let nx = sys.n_x();
    let local = par::map_slice(&samples, |s| local_constants(sys, &s[..nx], &s[nx..], fd_step));
    let skipped = local.iter().filter(|l| l.is_none()).count();
    if 2 * skipped > n_samples || skipped == n_samples {
        return Err(Error::Estimation { skipped, total: n_samples });
    }
    let mut acc = [0.0, 0.0, 0.0, f64::NEG_INFINITY];
    for l in local.iter().flatten() {
        for (a, v) in acc.iter_mut().zip(l) {
            *a = a.max(*v);
        }
    }
    let constants = BoundConstants::new(acc[0], acc[1], acc[2], acc[3], horizon)?;
    Ok(ConstantEstimate { constants, samples, local, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn consts(k_yz: f64, k_yx: f64, l_y: f64, mu: f64, t: f64) -> BoundConstants {
        BoundConstants::new(k_yz, k_yx, l_y, mu, t).unwrap()
    }

    #[test]
    fn phi_values() {
        assert_eq!(phi(8.0, 0.0), 8.0);
        assert!((phi(1.0, 1.0) - (std::f64::consts::E - 1.0)).abs() < 1e-15);
        assert!((phi(2.0, -1.0) - 0.864664716763387).abs() < 1e-15);
    }

    #[test]
    fn phi_is_continuous_at_zero() {
        for a in [1e-6, -1e-6, 1e-9, -1e-9] {
            let t: f64 = 3.0;
            let series = t * (1.0 + a * t / 2.0 + (a * t).powi(2) / 6.0);
            assert!((phi(t, a) - series).abs() < 1e-12);
            assert!((phi(t, a) - t).abs() < 1e-5);
        }
    }

    #[test]
    fn theorem_bound_examples() {
        let c = consts(0.5, 0.0, 1.0, 0.0, 1.0);
        let b = theorem_bounds(&c, 0.1);
        assert!((b.bound_ex - 0.05).abs() < 1e-15);
        assert!((b.bound_ey - 0.05).abs() < 1e-15);
        assert!((b.bound_total - 0.1).abs() < 1e-15);
        assert_eq!(theorem_bounds(&c, 0.0), TheoremBounds { bound_ex: 0.0, bound_ey: 0.0, bound_total: 0.0 });
        assert!((eps_max(&c, 0.1).unwrap() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn degenerate_coupling() {
        let c = consts(0.0, 0.3, 1.0, 0.2, 1.0);
        assert!(matches!(eps_max(&c, 0.1), Err(Error::DegenerateCoupling)));
        assert!(eps_max(&consts(1.0, 0.0, 1.0, 0.0, 1.0), 0.0).is_err());
    }

    #[test]
    fn longer_horizon_tightens_requirement() {
        let c = consts(0.4, 0.2, 0.8, 0.1, 2.0);
        let longer = c.with_horizon(4.0);
        assert!(eps_max(&longer, 0.1).unwrap() < eps_max(&c, 0.1).unwrap());
    }

    #[test]
    fn calibrated_bound_uses_same_formula() {
        let c = consts(0.4, 0.2, 0.8, -0.3, 5.0);
        assert_eq!(propagate_calibrated_bound(&c, 0.0), 0.0);
        assert_eq!(propagate_calibrated_bound(&c, 0.03), theorem_bounds(&c, 0.03).bound_total);
    }

    #[test]
    fn report_serializes_expected_fields() {
        let c = consts(0.4, 0.2, 0.8, -0.3, 5.0);
        let v = serde_json::to_value(BoundReport::new(&c, 0.01, 0.1)).unwrap();
        for k in ["K_yz", "K_yx", "L_y", "mu_cl", "alpha", "T", "phi", "eps", "bound_ex", "bound_ey", "bound_total", "eps_max"] {
            assert!(v.get(k).is_some(), "missing {k}");
        }
    }

    /// y = A x + B z, f = C x + D y, all linear so local constants are exact.
    struct Linear;
    impl CoupledSystem for Linear {
        fn n_x(&self) -> usize {
            2
        }
        fn n_y(&self) -> usize {
            1
        }
        fn n_z(&self) -> usize {
            1
        }
        fn algebraic(&self, x: &[f64], z: &[f64]) -> Option<Vec<f64>> {
            Some(vec![3.0 * x[0] + 4.0 * x[1] + 2.0 * z[0]])
        }
        fn differential(&self, x: &[f64], y: &[f64]) -> Option<Vec<f64>> {
            Some(vec![-x[0] + 2.0 * x[1], -3.0 * x[1] + 0.5 * y[0]])
        }
    }

    #[test]
    fn linear_system_constants() {
        let region = OperatingBox::new(vec![-1.0, -1.0, -1.0], vec![1.0, 1.0, 1.0]).unwrap();
        let est = estimate_constants(&Linear, &region, 5, 1e-6, 1.0).unwrap();
        let c = est.constants;
        assert!((c.k_yz - 2.0).abs() < 1e-8);
        assert!((c.k_yx - 5.0).abs() < 1e-8);
        assert!((c.l_y - 0.5).abs() < 1e-8);
        // sym part [[-1, 1], [1, -3]] -> eigenvalues -2 +- sqrt(2)
        assert!((c.mu_cl - (-2.0 + 2f64.sqrt())).abs() < 1e-8);
        assert_eq!(est.samples.len(), 5);
    }

    struct Singular;
    impl CoupledSystem for Singular {
        fn n_x(&self) -> usize {
            1
        }
        fn n_y(&self) -> usize {
            1
        }
        fn n_z(&self) -> usize {
            1
        }
        fn algebraic(&self, x: &[f64], z: &[f64]) -> Option<Vec<f64>> {
            (x[0] > 0.8).then(|| vec![z[0]])
        }
        fn differential(&self, _x: &[f64], y: &[f64]) -> Option<Vec<f64>> {
            Some(vec![y[0]])
        }
    }

    #[test]
    fn too_many_singular_samples_fail() {
        let region = OperatingBox::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        assert!(matches!(estimate_constants(&Singular, &region, 20, 1e-6, 1.0), Err(Error::Estimation { .. })));
    }
}
