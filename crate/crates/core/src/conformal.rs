//! Conformal calibration of a scalar interface channel.
//!
//! Scores are `|r - r_hat| / sigma`; intervals are `r_hat +- q sigma`. The
//! split rule takes the `ceil((n+1)(1-alpha))`-th smallest score; the UCB rule
//! takes the smallest order statistic whose coverage is at least `1 - alpha`
//! with probability `1 - delta` over the calibration draw. An unbounded
//! quantile is represented by `f64::INFINITY`.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::error::{Error, Result};
use crate::fmt::{csv_table, fmt_f64};
use crate::par;
use crate::seed::{derive_seed, rng};

/// One calibration or test point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSample {
    pub features: Vec<f64>,
    pub target: f64,
    pub prediction: f64,
    pub sigma: f64,
}

/// `|r - r_hat| / sigma`.
pub fn nonconformity(s: &CalibrationSample) -> Result<f64> {
    if !(s.sigma > 0.0 && s.sigma.is_finite()) {
        return Err(Error::Scale(s.sigma));
    }
    Ok((s.target - s.prediction).abs() / s.sigma)
}

fn check_level(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v < 1.0) {
        return Err(Error::InvalidParameter(format!("{name} must lie in (0, 1), got {v}")));
    }
    Ok(())
}

fn sorted(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::EmptyScores);
    }
    let mut v = scores.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// 1-based rank used by the split rule.
pub fn split_rank(n: usize, alpha: f64) -> usize {
    // the small offset keeps exact products such as 100 * 0.95 from rounding up
    ((n as f64 + 1.0) * (1.0 - alpha) - 1e-9).ceil().max(1.0) as usize
}

/// Split-conformal quantile.
pub fn split_quantile(scores: &[f64], alpha: f64) -> Result<f64> {
    check_level("alpha", alpha)?;
    let v = sorted(scores)?;
    let k = split_rank(v.len(), alpha);
    Ok(if k > v.len() { f64::INFINITY } else { v[k - 1] })
}

/// 1-based rank used by the UCB rule, or `None` when no rank up to `n`
/// reaches the confidence level.
pub fn ucb_rank(n: usize, alpha: f64, delta: f64) -> Option<usize> {
    let b = Binomial::new(1.0 - alpha, n as u64).expect("valid binomial");
    (1..=n).find(|&k| b.cdf(k as u64 - 1) >= 1.0 - delta)
}

/// High-confidence quantile: coverage `>= 1 - alpha` holds with probability
/// at least `1 - delta` over the calibration sample.
pub fn ucb_quantile(scores: &[f64], alpha: f64, delta: f64) -> Result<f64> {
    check_level("alpha", alpha)?;
    check_level("delta", delta)?;
    let v = sorted(scores)?;
    Ok(match ucb_rank(v.len(), alpha, delta) {
        Some(k) => v[k - 1],
        None => f64::INFINITY,
    })
}

/// Symmetric prediction interval; `unbounded` flags an infinite quantile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub unbounded: bool,
}

impl Interval {
    pub fn contains(&self, r: f64) -> bool {
        self.unbounded || (self.lo <= r && r <= self.hi)
    }
}

pub fn interval(q: f64, prediction: f64, sigma: f64) -> Interval {
    if q == f64::INFINITY {
        return Interval { lo: f64::NEG_INFINITY, hi: f64::INFINITY, unbounded: true };
    }
    Interval { lo: prediction - q * sigma, hi: prediction + q * sigma, unbounded: false }
}

/// Quantile rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum QuantileRule {
    Split,
    Ucb { delta: f64 },
}

impl QuantileRule {
    pub fn name(&self) -> &'static str {
        match self {
            QuantileRule::Split => "split",
            QuantileRule::Ucb { .. } => "ucb",
        }
    }

    pub fn quantile(&self, scores: &[f64], alpha: f64) -> Result<f64> {
        match *self {
            QuantileRule::Split => split_quantile(scores, alpha),
            QuantileRule::Ucb { delta } => ucb_quantile(scores, alpha, delta),
        }
    }
}

/// Fitted quantile and its held-out coverage.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationResult {
    pub q: f64,
    pub alpha: f64,
    pub method: QuantileRule,
    pub n_cal: usize,
    pub empirical_coverage: f64,
    /// Mean `q sigma` over the test points.
    pub mean_halfwidth: f64,
}

/// Fits `rule` on `cal` and measures coverage on `test`.
pub fn calibrate(cal: &[CalibrationSample], test: &[CalibrationSample], alpha: f64, rule: QuantileRule) -> Result<CalibrationResult> {
    let scores = cal.iter().map(nonconformity).collect::<Result<Vec<_>>>()?;
    let q = rule.quantile(&scores, alpha)?;
    let (coverage, halfwidth) = evaluate(q, test)?;
    Ok(CalibrationResult { q, alpha, method: rule, n_cal: cal.len(), empirical_coverage: coverage, mean_halfwidth: halfwidth })
}

fn evaluate(q: f64, test: &[CalibrationSample]) -> Result<(f64, f64)> {
    if test.is_empty() {
        return Err(Error::InfeasibleSplit("no test points".into()));
    }
    let mut hit = 0usize;
    let mut width = 0.0;
    for s in test {
        nonconformity(s)?;
        let iv = interval(q, s.prediction, s.sigma);
        hit += iv.contains(s.target) as usize;
        width += if iv.unbounded { f64::INFINITY } else { q * s.sigma };
    }
    Ok((hit as f64 / test.len() as f64, width / test.len() as f64))
}

/// Calibration-set size for ratio `rho` of `n` samples.
pub fn n_cal_for(rho: f64, n: usize) -> Result<usize> {
    let k = (rho * n as f64).round() as usize;
    if !(rho > 0.0 && rho < 1.0) || k == 0 || k >= n {
        return Err(Error::InfeasibleSplit(format!("rho = {rho} on {n} samples leaves {k} calibration and {} test points", n.saturating_sub(k))));
    }
    Ok(k)
}

/// One line of `conformal.csv`, plus the per-repeat coverages.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageRow {
    pub rho: f64,
    pub method: String,
    pub mean_coverage: f64,
    pub mean_halfwidth: f64,
    pub n_cal: usize,
    #[serde(skip)]
    pub coverages: Vec<f64>,
}

/// Repeated random calibration/test splits for every ratio in `rhos`, fitting
/// both the split rule and the UCB rule on each split.
pub fn coverage_experiment(
    dataset: &[CalibrationSample],
    rhos: &[f64],
    alpha: f64,
    delta: f64,
    n_repeats: usize,
    seed: u64,
) -> Result<Vec<CoverageRow>> {
    check_level("alpha", alpha)?;
    check_level("delta", delta)?;
    if n_repeats == 0 {
        return Err(Error::InvalidParameter("n_repeats must be at least 1".into()));
    }
    let n = dataset.len();
    let rules = [QuantileRule::Split, QuantileRule::Ucb { delta }];
    let mut rows = Vec::with_capacity(2 * rhos.len());
    for (ri, &rho) in rhos.iter().enumerate() {
        let n_cal = n_cal_for(rho, n)?;
        let per = par::map_indexed(n_repeats, |rep| -> Result<Vec<(f64, f64)>> {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng(derive_seed(seed, ((ri as u64) << 32) | rep as u64)));
            let cal: Vec<CalibrationSample> = idx[..n_cal].iter().map(|&i| dataset[i].clone()).collect();
            let test: Vec<CalibrationSample> = idx[n_cal..].iter().map(|&i| dataset[i].clone()).collect();
            rules.iter().map(|r| calibrate(&cal, &test, alpha, *r).map(|c| (c.empirical_coverage, c.mean_halfwidth))).collect()
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        for (m, rule) in rules.iter().enumerate() {
            let coverages: Vec<f64> = per.iter().map(|p| p[m].0).collect();
            let mean_halfwidth = per.iter().map(|p| p[m].1).sum::<f64>() / n_repeats as f64;
            rows.push(CoverageRow {
                rho,
                method: rule.name().to_string(),
                mean_coverage: coverages.iter().sum::<f64>() / n_repeats as f64,
                mean_halfwidth,
                n_cal,
                coverages,
            });
        }
    }
    Ok(rows)
}

pub fn coverage_csv(rows: &[CoverageRow]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![fmt_f64(r.rho), r.method.clone(), fmt_f64(r.mean_coverage), fmt_f64(r.mean_halfwidth), r.n_cal.to_string()])
        .collect();
    csv_table("rho,method,mean_coverage,mean_halfwidth,n_cal", &body)
}

/// Uniform interface bound `q * sigma_max`.
pub fn interface_eps_bar(result: &CalibrationResult, sigma_max: f64) -> Result<f64> {
    if !result.q.is_finite() {
        return Err(Error::NoCertificate);
    }
    if !(sigma_max > 0.0 && sigma_max.is_finite()) {
        return Err(Error::Scale(sigma_max));
    }
    Ok(result.q * sigma_max)
}

/// Where the scale of each playback row comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaSource {
    Constant(f64),
    Column(String),
}

/// Column selection for a playback CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlaybackColumns {
    pub features: Vec<String>,
    pub target: String,
    /// Prediction column; when absent, predictions come from the callback.
    #[serde(default)]
    pub prediction: Option<String>,
    pub sigma: SigmaSource,
}

/// Parses a playback CSV (header row, comma separated, numeric cells).
pub fn load_playback(text: &str, cols: &PlaybackColumns, predict: Option<&dyn Fn(&[f64]) -> Result<f64>>) -> Result<Vec<CalibrationSample>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines.next().ok_or_else(|| Error::Config("playback file is empty".into()))?.split(',').map(str::trim).collect();
    let find = |name: &str| {
        header.iter().position(|h| *h == name).ok_or_else(|| Error::Config(format!("playback file has no column {name:?}")))
    };
    let feat = cols.features.iter().map(|f| find(f)).collect::<Result<Vec<_>>>()?;
    let tgt = find(&cols.target)?;
    let pred = cols.prediction.as_deref().map(find).transpose()?;
    let sig = match &cols.sigma {
        SigmaSource::Column(c) => Some(find(c)?),
        SigmaSource::Constant(_) => None,
    };
    if pred.is_none() && predict.is_none() {
        return Err(Error::Config("playback needs a prediction column or a predictor".into()));
    }
    let mut out = Vec::new();
    for (ln, line) in lines.enumerate() {
        let cells = line
            .split(',')
            .map(|c| c.trim().parse::<f64>().map_err(|e| Error::Config(format!("playback row {}: {e}", ln + 2))))
            .collect::<Result<Vec<_>>>()?;
        if cells.len() != header.len() {
            return Err(Error::Config(format!("playback row {} has {} cells, header has {}", ln + 2, cells.len(), header.len())));
        }
        let features: Vec<f64> = feat.iter().map(|&i| cells[i]).collect();
        let prediction = match (pred, predict) {
            (Some(i), _) => cells[i],
            (None, Some(p)) => p(&features)?,
            (None, None) => unreachable!(),
        };
        let sigma = match (&cols.sigma, sig) {
            (_, Some(i)) => cells[i],
            (SigmaSource::Constant(s), None) => *s,
            (SigmaSource::Column(_), None) => unreachable!(),
        };
        let s = CalibrationSample { features, target: cells[tgt], prediction, sigma };
        nonconformity(&s)?;
        out.push(s);
    }
    Ok(out)
}
