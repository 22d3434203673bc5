use serde::{Deserialize, Serialize};

use super::batch::Batch;
use super::MlpSurrogate;
use crate::dynamics::{integrate_rk4, TimeGrid, VectorField};
use crate::error::{Error, Result};
use crate::par;
use crate::region::OperatingBox;
use crate::seed::{derive_seed, halton, rng};
use rand::Rng;

/// Points per parallel work unit; fixed so that sums do not depend on the
/// number of threads.
const CHUNK: usize = 256;

/// Reference sub-step used for data targets.
const REFERENCE_DT: f64 = 0.005;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollocationPoint {
    pub x0: Vec<f64>,
    pub u: Vec<f64>,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    pub x0: Vec<f64>,
    pub u: Vec<f64>,
    pub tau: f64,
    pub target: Vec<f64>,
}

/// Residual, data and initial-condition points over `tau in [0, t_max]`.
/// Initial-condition points are evaluated at `tau = 0` with target `x0`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingSet {
    pub collocation: Vec<CollocationPoint>,
    pub data: Vec<DataPoint>,
    pub initial: Vec<CollocationPoint>,
    pub t_max: f64,
}

/// RK4 state at local time `tau` from `x0` (field time starts at 0).
pub fn reference_state<F: VectorField + ?Sized>(field: &F, x0: &[f64], u: &[f64], tau: f64) -> Result<Vec<f64>> {
    if tau == 0.0 {
        return Ok(x0.to_vec());
    }
    let n = ((tau / REFERENCE_DT).ceil() as usize).max(1);
    let grid = TimeGrid::new(0.0, tau / n as f64, n)?;
    Ok(integrate_rk4(field, x0, u, &grid)?.final_state().to_vec())
}

impl TrainingSet {
    /// Low-discrepancy points over the `(x0, u)` box and `tau in [0, t_max]`,
    /// each family with its own seeded Cranley-Patterson shift. Data targets
    /// come from the RK4 reference.
    pub fn generate<F: VectorField + ?Sized>(
        field: &F,
        region: &OperatingBox,
        counts: (usize, usize, usize),
        t_max: f64,
        seed: u64,
    ) -> Result<Self> {
        let n_x = field.n_state();
        if region.dim() != n_x + field.n_param() {
            return Err(Error::Dimension(format!(
                "training box has {} dims, field needs {} states + {} inputs",
                region.dim(),
                n_x,
                field.n_param()
            )));
        }
        let (n_r, n_d, n_0) = counts;
        let dim = region.dim();
        let family = |task: u64, n: usize, with_tau: bool| -> Vec<(Vec<f64>, f64)> {
            let mut r = rng(derive_seed(seed, task));
            let d = dim + usize::from(with_tau);
            let shift: Vec<f64> = (0..d).map(|_| r.random::<f64>()).collect();
            (0..n)
                .map(|i| {
                    let p: Vec<f64> = halton(i, d).iter().zip(&shift).map(|(h, s)| (h + s).fract()).collect();
                    let x = region.from_unit(&p[..dim]);
                    let tau = if with_tau { p[dim] * t_max } else { 0.0 };
                    (x, tau)
                })
                .collect()
        };
        let split = |x: &[f64]| (x[..n_x].to_vec(), x[n_x..].to_vec());
        let collocation = family(1, n_r, true)
            .into_iter()
            .map(|(x, tau)| {
                let (x0, u) = split(&x);
                CollocationPoint { x0, u, tau }
            })
            .collect();
        let data_pts = family(2, n_d, true);
        let data = par::map_slice(&data_pts, |(x, tau)| -> Result<DataPoint> {
            let (x0, u) = split(x);
            let target = reference_state(field, &x0, &u, *tau)?;
            Ok(DataPoint { x0, u, tau: *tau, target })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let initial = family(3, n_0, false)
            .into_iter()
            .map(|(x, _)| {
                let (x0, u) = split(&x);
                CollocationPoint { x0, u, tau: 0.0 }
            })
            .collect();
        let set = Self { collocation, data, initial, t_max };
        set.validate()?;
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.collocation.len() + self.data.len() + self.initial.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_max > 0.0) {
            return Err(Error::InvalidParameter(format!("t_max must be > 0, got {}", self.t_max)));
        }
        if self.is_empty() {
            return Err(Error::InvalidParameter("training set is empty".into()));
        }
        let bad_tau = |t: f64| !(0.0..=self.t_max).contains(&t);
        if self.collocation.iter().any(|p| bad_tau(p.tau)) || self.data.iter().any(|p| bad_tau(p.tau)) {
            return Err(Error::InvalidParameter("tau outside [0, t_max]".into()));
        }
        Ok(())
    }

    fn check_net<F: VectorField + ?Sized>(&self, net: &MlpSurrogate, field: &F) -> Result<()> {
        let (n, m) = (net.n_state(), net.n_u());
        if field.n_state() != n || field.n_param() != m {
            return Err(Error::Dimension("field and surrogate dimensions differ".into()));
        }
        let ok = |x0: &[f64], u: &[f64]| x0.len() == n && u.len() == m;
        if !self.collocation.iter().all(|p| ok(&p.x0, &p.u))
            || !self.initial.iter().all(|p| ok(&p.x0, &p.u))
            || !self.data.iter().all(|p| ok(&p.x0, &p.u) && p.target.len() == n)
        {
            return Err(Error::Dimension("training point dimensions do not match the surrogate".into()));
        }
        Ok(())
    }
}

/// Multipliers of the three loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub residual: f64,
    pub data: f64,
    pub initial: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { residual: 1.0, data: 1.0, initial: 1.0 }
    }
}

/// Unweighted mean of each term.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub residual: f64,
    pub data: f64,
    pub initial: f64,
}

impl LossParts {
    pub fn total(&self, w: &LossWeights) -> f64 {
        w.residual * self.residual + w.data * self.data + w.initial * self.initial
    }
}

/// Loss and its gradient for raw parameters `theta` of `net`'s architecture.
///
/// residual: mean over collocation points of `||dU/dtau - f(U, u, tau)||^2`;
/// data: mean `||U - x_target||^2`; initial: mean `||U(x0, u, 0) - x0||^2`.
pub(crate) fn loss_at<F: VectorField + ?Sized>(
    net: &MlpSurrogate,
    theta: &[f64],
    set: &TrainingSet,
    field: &F,
    w: &LossWeights,
    want_grad: bool,
) -> (LossParts, Vec<f64>) {
    let (n_r, n_d, n_0) = (set.collocation.len(), set.data.len(), set.initial.len());
    let total = n_r + n_d + n_0;
    let n_chunks = total.div_ceil(CHUNK);
    let lay = net.layout();
    let n_p = lay.total;
    let n = net.n_state();
    let inv = |k: usize| if k > 0 { 1.0 / k as f64 } else { 0.0 };
    let (s_r, s_d, s_0) = (inv(n_r), inv(n_d), inv(n_0));
    let tangent = net.tau_tangent();

    let n_in = net.n_inputs();
    let chunks = par::map_indexed(n_chunks, |c| {
        let (lo, hi) = (c * CHUNK, ((c + 1) * CHUNK).min(total));
        let rows = hi - lo;
        // Chunks without collocation points skip the tangent entirely.
        let dual = lo < n_r;
        let mut batch = Batch::new(lay, rows);
        let mut grad = if want_grad { vec![0.0; n_p] } else { Vec::new() };
        let mut parts = [0.0f64; 3];
        for (row, idx) in (lo..hi).enumerate() {
            let (x0, u, tau) = point(set, idx);
            net.encode(x0, u, tau, batch.input_row(row, n_in));
            if dual {
                batch.tangent_row(row, n_in).copy_from_slice(&tangent);
            }
        }
        batch.forward(lay, theta, rows, dual);
        let mut f = vec![0.0; n];
        let mut r = vec![0.0; n];
        let mut gy = vec![0.0; n];
        let mut gyd = vec![0.0; n];
        for (row, idx) in (lo..hi).enumerate() {
            let y = batch.output_row(row).to_vec();
            gyd.iter_mut().for_each(|v| *v = 0.0);
            if idx < n_r {
                let p = &set.collocation[idx];
                field.eval(&y, &p.u, p.tau, &mut f);
                let rate = batch.output_rate_row(row);
                for i in 0..n {
                    r[i] = rate[i] - f[i];
                }
                parts[0] += r.iter().map(|v| v * v).sum::<f64>();
                if want_grad {
                    let jac = field.jac_state(&y, &p.u, p.tau);
                    for i in 0..n {
                        gyd[i] = 2.0 * w.residual * s_r * r[i];
                    }
                    for j in 0..n {
                        gy[j] = -(0..n).map(|i| jac[(i, j)] * gyd[i]).sum::<f64>();
                    }
                }
            } else {
                let (target, scale, slot, weight) = if idx < n_r + n_d {
                    (&set.data[idx - n_r].target, s_d, 1, w.data)
                } else {
                    (&set.initial[idx - n_r - n_d].x0, s_0, 2, w.initial)
                };
                let mut sq = 0.0;
                for i in 0..n {
                    let e = y[i] - target[i];
                    sq += e * e;
                    gy[i] = 2.0 * weight * scale * e;
                }
                parts[slot] += sq;
            }
            if want_grad {
                let (ga, gad) = batch.seed_rows(row, n);
                ga.copy_from_slice(&gy);
                if dual {
                    gad.copy_from_slice(&gyd);
                }
            }
        }
        if want_grad {
            batch.backward(lay, theta, rows, &mut grad);
        }
        (parts, grad)
    });

    let mut parts = [0.0f64; 3];
    let mut grad = if want_grad { vec![0.0; n_p] } else { Vec::new() };
    for (p, g) in chunks {
        for k in 0..3 {
            parts[k] += p[k];
        }
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    (LossParts { residual: parts[0] * s_r, data: parts[1] * s_d, initial: parts[2] * s_0 }, grad)
}

/// Network inputs of the `idx`-th point in collocation, data, initial order.
fn point(set: &TrainingSet, idx: usize) -> (&[f64], &[f64], f64) {
    let (n_r, n_d) = (set.collocation.len(), set.data.len());
    if idx < n_r {
        let p = &set.collocation[idx];
        (&p.x0, &p.u, p.tau)
    } else if idx < n_r + n_d {
        let p = &set.data[idx - n_r];
        (&p.x0, &p.u, p.tau)
    } else {
        let p = &set.initial[idx - n_r - n_d];
        (&p.x0, &p.u, 0.0)
    }
}

/// Weighted loss and its exact gradient with respect to all parameters.
pub fn grad_params<F: VectorField + ?Sized>(
    net: &MlpSurrogate,
    set: &TrainingSet,
    field: &F,
    w: &LossWeights,
) -> Result<(f64, LossParts, Vec<f64>)> {
    set.validate()?;
    set.check_net(net, field)?;
    let (parts, grad) = loss_at(net, net.params(), set, field, w, true);
    let loss = parts.total(w);
    if !loss.is_finite() {
        return Err(Error::TrainingDiverged(0));
    }
    Ok((loss, parts, grad))
}

pub(crate) fn check_training_inputs<F: VectorField + ?Sized>(net: &MlpSurrogate, set: &TrainingSet, field: &F) -> Result<()> {
    set.validate()?;
    set.check_net(net, field)?;
    if (set.t_max - net.t_max()).abs() > 1e-12 * set.t_max {
        return Err(Error::InvalidParameter(format!(
            "training horizon {} differs from surrogate horizon {}",
            set.t_max,
            net.t_max()
        )));
    }
    Ok(())
}
