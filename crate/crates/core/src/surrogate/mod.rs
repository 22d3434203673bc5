//! Physics-informed MLP surrogate `U(x0, u, tau) ~ x(tau)`.
//!
//! Inputs are `[x0, u, tau]`, affinely normalized per dimension; hidden layers
//! use tanh and the output layer is linear. Parameters live in one flat vector
//! ordered `W_1, b_1, W_2, b_2, ...` with row-major `W_l` of shape
//! `(n_l, n_{l-1})`.

mod batch;
mod loss;
mod train;

pub use loss::{grad_params, reference_state, CollocationPoint, DataPoint, LossParts, LossWeights, TrainingSet};
pub use train::{lbfgs, train, LbfgsReport, Optimizer, TrainOptions, TrainOutcome};

use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{TimeGrid, Trajectory};
use crate::error::{Error, Result};
use crate::region::OperatingBox;
use crate::seed::rng;

/// Tag written to weight files; the only supported hidden activation.
pub const ACTIVATION: &str = "tanh";

/// Hidden widths of the default architecture.
pub const DEFAULT_HIDDEN: [usize; 3] = [64, 64, 64];

/// Per-dimension affine input map `v -> (v - offset) * scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalization {
    pub fn identity(n: usize) -> Self {
        Self { offset: vec![0.0; n], scale: vec![1.0; n] }
    }

    /// Maps `[lo, hi]` onto `[-1, 1]`; degenerate dimensions only get centered.
    pub fn from_bounds(lo: &[f64], hi: &[f64]) -> Self {
        let offset = lo.iter().zip(hi).map(|(l, h)| 0.5 * (l + h)).collect();
        let scale = lo.iter().zip(hi).map(|(l, h)| if h > l { 2.0 / (h - l) } else { 1.0 }).collect();
        Self { offset, scale }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.offset.len() != n || self.scale.len() != n {
            return Err(Error::Dimension(format!("normalization needs {n} entries")));
        }
        if self.offset.iter().any(|v| !v.is_finite()) || self.scale.iter().any(|s| !(s.is_finite() && *s != 0.0)) {
            return Err(Error::InvalidParameter("normalization must be finite and invertible".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layout {
    pub sizes: Vec<usize>,
    pub w_off: Vec<usize>,
    pub b_off: Vec<usize>,
    pub total: usize,
}

impl Layout {
    fn new(sizes: &[usize]) -> Self {
        let mut w_off = Vec::new();
        let mut b_off = Vec::new();
        let mut off = 0;
        for l in 1..sizes.len() {
            w_off.push(off);
            off += sizes[l] * sizes[l - 1];
            b_off.push(off);
            off += sizes[l];
        }
        Self { sizes: sizes.to_vec(), w_off, b_off, total: off }
    }

    pub(crate) fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub(crate) fn max_width(&self) -> usize {
        *self.sizes.iter().max().unwrap()
    }
}

/// Dot product with four independent accumulators (fixed summation order).
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
fn axpy2(y: &mut [f64], alpha: f64, x: &[f64], beta: f64, z: &[f64]) {
    for ((yi, xi), zi) in y.iter_mut().zip(x).zip(z) {
        *yi += alpha * xi + beta * zi;
    }
}

/// Activations (and tangents along one input direction) of one pass.
pub(crate) struct Pass {
    a: Vec<Vec<f64>>,
    ad: Vec<Vec<f64>>,
    zd: Vec<Vec<f64>>,
    ga: Vec<f64>,
    gad: Vec<f64>,
    gz: Vec<f64>,
    gzd: Vec<f64>,
    /// Gradient with respect to the normalized input after `backward`.
    pub g_in: Vec<f64>,
}

impl Pass {
    pub(crate) fn new(lay: &Layout) -> Self {
        let w = lay.max_width();
        Self {
            a: lay.sizes.iter().map(|&n| vec![0.0; n]).collect(),
            ad: lay.sizes.iter().map(|&n| vec![0.0; n]).collect(),
            zd: lay.sizes.iter().map(|&n| vec![0.0; n]).collect(),
            ga: vec![0.0; w],
            gad: vec![0.0; w],
            gz: vec![0.0; w],
            gzd: vec![0.0; w],
            g_in: vec![0.0; lay.sizes[0]],
        }
    }

    pub(crate) fn output(&self) -> &[f64] {
        self.a.last().unwrap()
    }

    pub(crate) fn output_rate(&self) -> &[f64] {
        self.ad.last().unwrap()
    }

    /// Forward pass on a normalized input, optionally carrying a tangent.
    pub(crate) fn forward(&mut self, lay: &Layout, th: &[f64], input: &[f64], tangent: Option<&[f64]>) {
        let dual = tangent.is_some();
        self.a[0].copy_from_slice(input);
        if let Some(t) = tangent {
            self.ad[0].copy_from_slice(t);
        }
        let last = lay.n_layers();
        for l in 1..=last {
            let (n_in, n_out) = (lay.sizes[l - 1], lay.sizes[l]);
            let w = &th[lay.w_off[l - 1]..lay.w_off[l - 1] + n_in * n_out];
            let b = &th[lay.b_off[l - 1]..lay.b_off[l - 1] + n_out];
            let (a_lo, a_hi) = self.a.split_at_mut(l);
            let (ad_lo, ad_hi) = self.ad.split_at_mut(l);
            let (prev, cur) = (&a_lo[l - 1], &mut a_hi[0]);
            let (prev_d, cur_d) = (&ad_lo[l - 1], &mut ad_hi[0]);
            let zd = &mut self.zd[l];
            for (i, row) in w.chunks_exact(n_in).enumerate() {
                let s = b[i] + dot(row, prev);
                let sd = if dual { dot(row, prev_d) } else { 0.0 };
                if l < last {
                    let ai = s.tanh();
                    cur[i] = ai;
                    zd[i] = sd;
                    cur_d[i] = (1.0 - ai * ai) * sd;
                } else {
                    cur[i] = s;
                    cur_d[i] = sd;
                }
            }
        }
    }

    /// Reverse pass from output cotangents `gy` (and `gyd` for the tangent
    /// output, which requires a dual forward pass). Accumulates into `grad`
    /// when given and leaves the normalized-input gradient in `g_in`.
    pub(crate) fn backward(&mut self, lay: &Layout, th: &[f64], gy: &[f64], gyd: Option<&[f64]>, mut grad: Option<&mut [f64]>) {
        let dual = gyd.is_some();
        let last = lay.n_layers();
        let n_out = lay.sizes[last];
        self.ga[..n_out].copy_from_slice(gy);
        if let Some(g) = gyd {
            self.gad[..n_out].copy_from_slice(g);
        }
        for l in (1..=last).rev() {
            let (n_in, n_out) = (lay.sizes[l - 1], lay.sizes[l]);
            if l == last {
                self.gz[..n_out].copy_from_slice(&self.ga[..n_out]);
                if dual {
                    self.gzd[..n_out].copy_from_slice(&self.gad[..n_out]);
                }
            } else {
                let a = &self.a[l];
                let zd = &self.zd[l];
                for i in 0..n_out {
                    let s = 1.0 - a[i] * a[i];
                    if dual {
                        self.gz[i] = self.ga[i] * s - 2.0 * a[i] * s * zd[i] * self.gad[i];
                        self.gzd[i] = self.gad[i] * s;
                    } else {
                        self.gz[i] = self.ga[i] * s;
                    }
                }
            }
            let w_off = lay.w_off[l - 1];
            let b_off = lay.b_off[l - 1];
            let prev = &self.a[l - 1];
            let prev_d = &self.ad[l - 1];
            if let Some(g) = grad.as_deref_mut() {
                let (gw_all, gb) = g[w_off..b_off + n_out].split_at_mut(n_out * n_in);
                for (i, gw) in gw_all.chunks_exact_mut(n_in).enumerate() {
                    let gz = self.gz[i];
                    if dual {
                        axpy2(gw, gz, prev, self.gzd[i], prev_d);
                    } else {
                        axpy(gw, gz, prev);
                    }
                    gb[i] += gz;
                }
            }
            let w = &th[w_off..w_off + n_in * n_out];
            self.ga[..n_in].iter_mut().for_each(|v| *v = 0.0);
            if dual {
                self.gad[..n_in].iter_mut().for_each(|v| *v = 0.0);
            }
            for (i, row) in w.chunks_exact(n_in).enumerate() {
                axpy(&mut self.ga[..n_in], self.gz[i], row);
                if dual {
                    axpy(&mut self.gad[..n_in], self.gzd[i], row);
                }
            }
        }
        let n0 = lay.sizes[0];
        self.g_in.copy_from_slice(&self.ga[..n0]);
    }
}

/// Fully connected tanh network over `[x0, u, tau]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WeightFile", into = "WeightFile")]
pub struct MlpSurrogate {
    layout: Layout,
    theta: Vec<f64>,
    normalization: Normalization,
    t_max: f64,
}

/// On-disk form of a surrogate.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightFile {
    layer_sizes: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    normalization: Normalization,
    activation: String,
    t_max: f64,
}

impl From<MlpSurrogate> for WeightFile {
    fn from(net: MlpSurrogate) -> Self {
        let lay = &net.layout;
        let weights = (0..lay.n_layers())
            .map(|l| net.theta[lay.w_off[l]..lay.w_off[l] + lay.sizes[l] * lay.sizes[l + 1]].to_vec())
            .collect();
        let biases = (0..lay.n_layers()).map(|l| net.theta[lay.b_off[l]..lay.b_off[l] + lay.sizes[l + 1]].to_vec()).collect();
        WeightFile {
            layer_sizes: lay.sizes.clone(),
            weights,
            biases,
            normalization: net.normalization,
            activation: ACTIVATION.to_string(),
            t_max: net.t_max,
        }
    }
}

impl TryFrom<WeightFile> for MlpSurrogate {
    type Error = Error;

    fn try_from(f: WeightFile) -> Result<Self> {
        if f.activation != ACTIVATION {
            return Err(Error::Config(format!("unsupported activation {:?}", f.activation)));
        }
        if f.layer_sizes.len() < 2 || f.layer_sizes.iter().any(|&n| n == 0) {
            return Err(Error::Dimension("layer_sizes needs at least two nonzero entries".into()));
        }
        let layout = Layout::new(&f.layer_sizes);
        if f.weights.len() != layout.n_layers() || f.biases.len() != layout.n_layers() {
            return Err(Error::Dimension("one weight matrix and bias vector per layer".into()));
        }
        let mut theta = Vec::with_capacity(layout.total);
        for l in 0..layout.n_layers() {
            let (n_in, n_out) = (layout.sizes[l], layout.sizes[l + 1]);
            if f.weights[l].len() != n_in * n_out || f.biases[l].len() != n_out {
                return Err(Error::Dimension(format!("layer {l} expects {n_out}x{n_in} weights and {n_out} biases")));
            }
            theta.extend_from_slice(&f.weights[l]);
            theta.extend_from_slice(&f.biases[l]);
        }
        let net = MlpSurrogate { layout, theta, normalization: f.normalization, t_max: f.t_max };
        net.validate()?;
        Ok(net)
    }
}

impl MlpSurrogate {
    /// Glorot-uniform weights and zero biases for `layer_sizes`.
    pub fn new(layer_sizes: &[usize], normalization: Normalization, t_max: f64, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes, normalization, t_max)?;
        let mut r = rng(seed);
        let lay = net.layout.clone();
        for l in 0..lay.n_layers() {
            let (n_in, n_out) = (lay.sizes[l], lay.sizes[l + 1]);
            let bound = (6.0 / (n_in + n_out) as f64).sqrt();
            for w in &mut net.theta[lay.w_off[l]..lay.w_off[l] + n_in * n_out] {
                *w = r.random_range(-bound..bound);
            }
        }
        Ok(net)
    }

    pub fn zeros(layer_sizes: &[usize], normalization: Normalization, t_max: f64) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.iter().any(|&n| n == 0) {
            return Err(Error::Dimension("layer_sizes needs at least two nonzero entries".into()));
        }
        let layout = Layout::new(layer_sizes);
        let net = Self { theta: vec![0.0; layout.total], layout, normalization, t_max };
        net.validate()?;
        Ok(net)
    }

    /// Default `[n_in, 64, 64, 64, n_state]` network normalized over the
    /// `(x0, u)` box and `tau in [0, t_max]`.
    pub fn for_task(region: &OperatingBox, n_state: usize, t_max: f64, seed: u64) -> Result<Self> {
        Self::for_task_with(region, n_state, &DEFAULT_HIDDEN, t_max, seed)
    }

    pub fn for_task_with(region: &OperatingBox, n_state: usize, hidden: &[usize], t_max: f64, seed: u64) -> Result<Self> {
        if region.dim() < n_state {
            return Err(Error::Dimension(format!("box has {} dims, state needs {n_state}", region.dim())));
        }
        let mut lo = region.lo.clone();
        let mut hi = region.hi.clone();
        lo.push(0.0);
        hi.push(t_max);
        let mut sizes = vec![region.dim() + 1];
        sizes.extend_from_slice(hidden);
        sizes.push(n_state);
        Self::new(&sizes, Normalization::from_bounds(&lo, &hi), t_max, seed)
    }

    pub fn validate(&self) -> Result<()> {
        self.normalization.validate(self.n_inputs())?;
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return Err(Error::InvalidParameter(format!("t_max must be > 0, got {}", self.t_max)));
        }
        if self.n_inputs() < self.n_state() + 1 {
            return Err(Error::Dimension("input layer must hold x0 and tau".into()));
        }
        if self.theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite network parameter".into()));
        }
        Ok(())
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layout.sizes
    }

    pub fn n_inputs(&self) -> usize {
        self.layout.sizes[0]
    }

    pub fn n_state(&self) -> usize {
        *self.layout.sizes.last().unwrap()
    }

    /// Width of the input vector `u`.
    pub fn n_u(&self) -> usize {
        self.n_inputs() - self.n_state() - 1
    }

    pub fn n_params(&self) -> usize {
        self.layout.total
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn normalization(&self) -> &Normalization {
        &self.normalization
    }

    pub fn params(&self) -> &[f64] {
        &self.theta
    }

    pub fn set_params(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.theta.len() {
            return Err(Error::Dimension(format!("expected {} parameters, got {}", self.theta.len(), theta.len())));
        }
        self.theta.copy_from_slice(theta);
        Ok(())
    }

    pub(crate) fn layout(&self) -> &Layout {
        &self.layout
    }

    /// Normalized input vector.
    pub(crate) fn encode(&self, x0: &[f64], u: &[f64], tau: f64, out: &mut [f64]) {
        let n = &self.normalization;
        let mut k = 0;
        for v in x0.iter().chain(u).chain(std::iter::once(&tau)) {
            out[k] = (v - n.offset[k]) * n.scale[k];
            k += 1;
        }
    }

    /// Normalized tangent of the input along `tau`.
    pub(crate) fn tau_tangent(&self) -> Vec<f64> {
        let mut t = vec![0.0; self.n_inputs()];
        let last = self.n_inputs() - 1;
        t[last] = self.normalization.scale[last];
        t
    }

    fn check_inputs(&self, x0: &[f64], u: &[f64], tau: f64) -> Result<()> {
        if x0.len() != self.n_state() || u.len() != self.n_u() {
            return Err(Error::Dimension(format!(
                "surrogate expects x0 of length {} and u of length {}, got {} and {}",
                self.n_state(),
                self.n_u(),
                x0.len(),
                u.len()
            )));
        }
        if !tau.is_finite() || x0.iter().chain(u).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite surrogate input".into()));
        }
        Ok(())
    }

    pub fn forward(&self, x0: &[f64], u: &[f64], tau: f64) -> Result<Vec<f64>> {
        self.check_inputs(x0, u, tau)?;
        let mut pass = Pass::new(&self.layout);
        Ok(self.forward_in(&mut pass, x0, u, tau).to_vec())
    }

    fn forward_in<'a>(&self, pass: &'a mut Pass, x0: &[f64], u: &[f64], tau: f64) -> &'a [f64] {
        let mut input = vec![0.0; self.n_inputs()];
        self.encode(x0, u, tau, &mut input);
        pass.forward(&self.layout, &self.theta, &input, None);
        pass.output()
    }

    /// Output and its exact derivative with respect to `tau`.
    pub fn forward_with_rate(&self, x0: &[f64], u: &[f64], tau: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_inputs(x0, u, tau)?;
        let mut pass = Pass::new(&self.layout);
        let mut input = vec![0.0; self.n_inputs()];
        self.encode(x0, u, tau, &mut input);
        pass.forward(&self.layout, &self.theta, &input, Some(&self.tau_tangent()));
        Ok((pass.output().to_vec(), pass.output_rate().to_vec()))
    }

    /// `v^T dU/d[x0, u, tau]` in raw input units.
    pub fn input_vjp(&self, x0: &[f64], u: &[f64], tau: f64, v: &[f64]) -> Result<Vec<f64>> {
        self.check_inputs(x0, u, tau)?;
        if v.len() != self.n_state() {
            return Err(Error::Dimension("cotangent length must equal n_state".into()));
        }
        let mut pass = Pass::new(&self.layout);
        self.forward_in(&mut pass, x0, u, tau);
        pass.backward(&self.layout, &self.theta, v, None, None);
        Ok(pass.g_in.iter().zip(&self.normalization.scale).map(|(g, s)| g * s).collect())
    }

    /// Jacobian `dU/d[x0, u, tau]`, shape `(n_state, n_inputs)`.
    pub fn grad_inputs(&self, x0: &[f64], u: &[f64], tau: f64) -> Result<DMatrix<f64>> {
        self.check_inputs(x0, u, tau)?;
        let n = self.n_state();
        let mut pass = Pass::new(&self.layout);
        self.forward_in(&mut pass, x0, u, tau);
        let mut jac = DMatrix::zeros(n, self.n_inputs());
        let mut e = vec![0.0; n];
        for i in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[i] = 1.0;
            pass.backward(&self.layout, &self.theta, &e, None, None);
            for (j, (g, s)) in pass.g_in.iter().zip(&self.normalization.scale).enumerate() {
                jac[(i, j)] = g * s;
            }
        }
        Ok(jac)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Hop index and local time for an offset `s` from the trajectory start.
/// `s` in `[0, t_max]` is hop 0; later times use the latest anchor whose
/// window `(h t_max, (h+1) t_max]` contains `s`.
fn hop(s: f64, t_max: f64) -> (usize, f64) {
    if s <= t_max * (1.0 + 1e-12) {
        return (0, s.max(0.0));
    }
    let h = ((s / t_max) - 1e-9).ceil() as usize - 1;
    (h, (s - h as f64 * t_max).max(0.0))
}

/// Anchors `x_h`, where `x_0 = x0` and `x_{h+1} = U(x_h, u, t_max)`.
fn anchors(net: &MlpSurrogate, x0: &[f64], u: &[f64], n_hops: usize) -> Vec<Vec<f64>> {
    let mut pass = Pass::new(&net.layout);
    let mut out = vec![x0.to_vec()];
    for h in 0..n_hops {
        let next = net.forward_in(&mut pass, &out[h], u, net.t_max).to_vec();
        out.push(next);
    }
    out
}

fn check_grid(net: &MlpSurrogate, grid: &TimeGrid) -> Result<()> {
    if grid.dt > net.t_max * (1.0 + 1e-12) {
        return Err(Error::InvalidParameter(format!("grid step {} exceeds surrogate horizon {}", grid.dt, net.t_max)));
    }
    Ok(())
}

/// Surrogate rollout on a grid: direct evaluation on `[0, t_max]`, then
/// re-anchored every `t_max` on the surrogate's own prediction.
pub fn surrogate_trajectory(net: &MlpSurrogate, x0: &[f64], u: &[f64], grid: &TimeGrid) -> Result<Trajectory> {
    net.check_inputs(x0, u, 0.0)?;
    check_grid(net, grid)?;
    let (last_hop, _) = hop(grid.horizon(), net.t_max);
    let anchor = anchors(net, x0, u, last_hop);
    let mut pass = Pass::new(&net.layout);
    let n = net.n_state();
    let mut states = Vec::with_capacity(grid.len() * n);
    for k in 0..grid.len() {
        let (h, tau) = hop(grid.time(k) - grid.t0, net.t_max);
        states.extend_from_slice(net.forward_in(&mut pass, &anchor[h], u, tau));
    }
    Trajectory::new(*grid, n, states)
}

/// `dU/dtau` of the active hop at every grid point (row-major).
pub fn surrogate_rates(net: &MlpSurrogate, x0: &[f64], u: &[f64], grid: &TimeGrid) -> Result<Vec<f64>> {
    net.check_inputs(x0, u, 0.0)?;
    check_grid(net, grid)?;
    let (last_hop, _) = hop(grid.horizon(), net.t_max);
    let anchor = anchors(net, x0, u, last_hop);
    let tangent = net.tau_tangent();
    let mut pass = Pass::new(&net.layout);
    let mut input = vec![0.0; net.n_inputs()];
    let mut out = Vec::with_capacity(grid.len() * net.n_state());
    for k in 0..grid.len() {
        let (h, tau) = hop(grid.time(k) - grid.t0, net.t_max);
        net.encode(&anchor[h], u, tau, &mut input);
        pass.forward(&net.layout, &net.theta, &input, Some(&tangent));
        out.extend_from_slice(pass.output_rate());
    }
    Ok(out)
}

/// `v^T d(row k of the rollout)/d(x0, u)`, chained back through every hop.
pub fn rollout_vjp(net: &MlpSurrogate, x0: &[f64], u: &[f64], grid: &TimeGrid, k: usize, v: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    net.check_inputs(x0, u, 0.0)?;
    check_grid(net, grid)?;
    if k >= grid.len() {
        return Err(Error::Dimension(format!("row {k} outside grid of {} points", grid.len())));
    }
    let (h, tau) = hop(grid.time(k) - grid.t0, net.t_max);
    let anchor = anchors(net, x0, u, h);
    let n = net.n_state();
    let mut g_u = vec![0.0; net.n_u()];
    let mut g = net.input_vjp(&anchor[h], u, tau, v)?;
    for m in (0..h).rev() {
        for (a, b) in g_u.iter_mut().zip(&g[n..n + net.n_u()]) {
            *a += b;
        }
        let g_x = g[..n].to_vec();
        g = net.input_vjp(&anchor[m], u, net.t_max, &g_x)?;
    }
    for (a, b) in g_u.iter_mut().zip(&g[n..n + net.n_u()]) {
        *a += b;
    }
    Ok((g[..n].to_vec(), g_u))
}
