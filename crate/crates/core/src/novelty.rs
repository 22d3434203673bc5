//! Coverage-oriented trajectory sampling with a soft-min novelty score.

use serde::Serialize;

use crate::dynamics::{integrate_rk4, TimeGrid, Trajectory, VectorField};
use crate::error::{Error, Result};
use crate::fmt::{csv_table, fmt_f64};
use crate::par;
use crate::region::OperatingBox;
use crate::seed::rng;
use crate::verify::TrajectoryModel;

/// `d(a, b) = sqrt(mean_k ||a_k - b_k||^2)` over the shared grid.
pub fn traj_distance(a: &Trajectory, b: &Trajectory) -> Result<f64> {
    a.check_compatible(b)?;
    let sum: f64 = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((sum / a.len() as f64).sqrt())
}

/// Trajectories on one grid plus the soft-min sharpness `beta`.
#[derive(Debug, Clone)]
pub struct TrajectoryArchive {
    members: Vec<Trajectory>,
    beta: f64,
}

impl TrajectoryArchive {
    pub fn new(beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidParameter(format!("beta must be positive, got {beta}")));
        }
        Ok(Self { members: Vec::new(), beta })
    }

    pub fn push(&mut self, t: Trajectory) -> Result<()> {
        if let Some(first) = self.members.first() {
            first.check_compatible(&t)?;
        }
        self.members.push(t);
        Ok(())
    }

    pub fn members(&self) -> &[Trajectory] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Smallest pairwise distance (`+inf` below two members).
    pub fn min_pairwise_distance(&self) -> Result<f64> {
        let mut best = f64::INFINITY;
        for i in 0..self.members.len() {
            for j in i + 1..self.members.len() {
                best = best.min(traj_distance(&self.members[i], &self.members[j])?);
            }
        }
        Ok(best)
    }
}

/// `N = -(1/beta) log sum_i exp(-beta d_i^2)`; `+inf` for an empty archive.
pub fn novelty_score(candidate: &Trajectory, archive: &TrajectoryArchive) -> Result<f64> {
    if archive.is_empty() {
        return Ok(f64::INFINITY);
    }
    let beta = archive.beta;
    let expo = archive
        .members
        .iter()
        .map(|m| traj_distance(candidate, m).map(|d| -beta * d * d))
        .collect::<Result<Vec<_>>>()?;
    let top = expo.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = top + expo.iter().map(|e| (e - top).exp()).sum::<f64>().ln();
    Ok(-lse / beta)
}

/// Selected inputs and their trajectories, plus generator calls spent.
#[derive(Debug, Clone)]
pub struct SampleSet {
    pub etas: Vec<Vec<f64>>,
    pub archive: TrajectoryArchive,
    pub evaluations: usize,
}

/// Shared round structure: every round draws up to `per_round` uniform
/// candidates, evaluates them all, and keeps the one chosen by `pick`.
fn rounds<G, P>(generator: &G, region: &OperatingBox, budget: usize, per_round: usize, beta: f64, seed: u64, pick: P) -> Result<SampleSet>
where
    G: Fn(&[f64]) -> Result<Trajectory> + Sync,
    P: Fn(&[Trajectory], &TrajectoryArchive) -> Result<usize>,
{
    if budget == 0 || per_round == 0 {
        return Err(Error::InvalidParameter("budget and candidates_per_round must be at least 1".into()));
    }
    region.validate()?;
    let mut r = rng(seed);
    let mut archive = TrajectoryArchive::new(beta)?;
    let mut etas = Vec::new();
    let mut evaluations = 0;
    while evaluations < budget {
        let k = per_round.min(budget - evaluations);
        let cands: Vec<Vec<f64>> = (0..k).map(|_| region.sample(&mut r)).collect();
        let trajs = par::map_slice(&cands, |c| generator(c)).into_iter().collect::<Result<Vec<_>>>()?;
        evaluations += k;
        let i = pick(&trajs, &archive)?;
        etas.push(cands[i].clone());
        archive.push(trajs.into_iter().nth(i).expect("pick within round"))?;
    }
    Ok(SampleSet { etas, archive, evaluations })
}

/// Greedy novelty sampling: keeps the highest-novelty candidate of each round
/// (the first candidate on ties, so round one keeps its first draw).
pub fn novelty_sample<G>(generator: &G, region: &OperatingBox, budget: usize, per_round: usize, beta: f64, seed: u64) -> Result<SampleSet>
where
    G: Fn(&[f64]) -> Result<Trajectory> + Sync,
{
    rounds(generator, region, budget, per_round, beta, seed, |trajs, archive| {
        let mut best = (0, f64::NEG_INFINITY);
        for (i, t) in trajs.iter().enumerate() {
            let s = novelty_score(t, archive)?;
            if s > best.1 {
                best = (i, s);
            }
        }
        Ok(best.0)
    })
}

/// Naive baseline on the same candidate stream: keeps each round's first
/// draw. Same seed, budget and set size as [`novelty_sample`].
pub fn naive_sample<G>(generator: &G, region: &OperatingBox, budget: usize, per_round: usize, beta: f64, seed: u64) -> Result<SampleSet>
where
    G: Fn(&[f64]) -> Result<Trajectory> + Sync,
{
    rounds(generator, region, budget, per_round, beta, seed, |_, _| Ok(0))
}

/// Mean over `etas = [x0, u]` of the grid-mean squared solution error
/// `mean_k ||U(t_k) - G(t_k)||^2`.
pub fn mean_mse_eval<M, F>(etas: &[Vec<f64>], model: &M, field: &F, grid: &TimeGrid) -> Result<f64>
where
    M: TrajectoryModel + ?Sized,
    F: VectorField + ?Sized,
{
    if etas.is_empty() {
        return Err(Error::InvalidParameter("mean_mse_eval needs at least one input".into()));
    }
    let n = field.n_state();
    let per = par::map_slice(etas, |eta| -> Result<f64> {
        if eta.len() != n + field.n_param() {
            return Err(Error::Dimension(format!("eta has {} entries, expected {}", eta.len(), n + field.n_param())));
        }
        let (x0, u) = eta.split_at(n);
        let g = integrate_rk4(field, x0, u, grid)?;
        let s = model.trajectory(x0, u, grid)?;
        let d = traj_distance(&s, &g)?;
        Ok(d * d)
    });
    let mut sum = 0.0;
    for v in per {
        sum += v?;
    }
    Ok(sum / etas.len() as f64)
}

/// One line of `sampling_mse.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SamplingRow {
    pub method: String,
    pub seed: u64,
    pub mean_mse: f64,
}

pub fn sampling_csv(rows: &[SamplingRow]) -> String {
    let body: Vec<Vec<String>> = rows.iter().map(|r| vec![r.method.clone(), r.seed.to_string(), fmt_f64(r.mean_mse)]).collect();
    csv_table("method,seed,mean_mse", &body)
}
