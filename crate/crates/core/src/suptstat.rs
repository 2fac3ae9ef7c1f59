//! Critical values that stay valid under specification search, and the
//! intervals and bands built from them.
//!
//! Pointwise: draw Z ~ N(0, Sigma_hat) repeatedly, where Sigma_hat is the
//! estimated correlation of ghat(K, x) across the candidate K values, and
//! take the (1 - alpha) sample quantile of max_j |Z_j|. Because every
//! marginal is standard normal, the resulting c_hat weakly exceeds the usual
//! z quantile; equality holds when all candidates are perfectly correlated.
//!
//! Uniform: a weighted bootstrap with i.i.d. standard exponential
//! multipliers. Each replication re-solves the least-squares problem per
//! candidate K, forms the studentized deviation process on the band grid
//! using the original fit's variance in the denominator, and records the sup
//! of its absolute value over candidates and grid. The band half-width is
//! c_hat * sqrt(V_hat/n) pointwise.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::basis::build_basis;
use crate::error::{Error, Result};
use crate::fit::{pointwise_variance, weighted_beta, CrossKCorrelation, Dataset, FitResult};
use crate::rng::stream;

pub use crate::fit::weighted_fit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticalValueMethod {
    GaussianSim,
    NestedSeRatio,
    WeightedBootstrap,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CriticalValueResult {
    pub c_hat: f64,
    pub alpha: f64,
    pub draws: u64,
    /// Monte Carlo standard error of the quantile estimate; for tolerances
    /// only, never part of the inference itself.
    pub mc_se: f64,
    pub seed: u64,
    pub method: CriticalValueMethod,
}

/// i.i.d. standard exponential multipliers for one bootstrap replication.
#[derive(Debug, Clone)]
pub struct BootstrapWeights {
    pub e: Vec<f64>,
    pub seed: u64,
    pub index: u64,
}

impl BootstrapWeights {
    pub fn exponential(n: usize, seed: u64, index: u64) -> Self {
        let mut rng = stream(seed, &[index]);
        let e = (0..n).map(|_| rng.sample(Exp1)).collect();
        BootstrapWeights { e, seed, index }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }

    pub fn length(&self) -> f64 {
        self.upper - self.lower
    }
}

/// [estimate - c*se, estimate + c*se].
pub fn robust_ci(estimate: f64, se: f64, c: f64) -> Result<Interval> {
    if !(se >= 0.0) || !se.is_finite() {
        return Err(Error::NonPositiveSe(se));
    }
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "critical value must be positive, got {c}"
        )));
    }
    Ok(Interval {
        lower: estimate - c * se,
        upper: estimate + c * se,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Band {
    pub grid: Vec<f64>,
    pub center: Vec<f64>,
    pub half_width: Vec<f64>,
    pub k_used: usize,
    pub c_used: f64,
}

impl Band {
    pub fn lower(&self) -> Vec<f64> {
        self.center
            .iter()
            .zip(&self.half_width)
            .map(|(c, h)| c - h)
            .collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        self.center
            .iter()
            .zip(&self.half_width)
            .map(|(c, h)| c + h)
            .collect()
    }

    /// True when the band contains f at every grid point.
    pub fn covers(&self, f: impl Fn(f64) -> f64) -> bool {
        self.grid.iter().enumerate().all(|(g, &x)| {
            let v = f(x);
            (self.center[g] - v).abs() <= self.half_width[g]
        })
    }

    /// CSV with header `x,center,lower,upper`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,center,lower,upper\n");
        for g in 0..self.grid.len() {
            let lo = self.center[g] - self.half_width[g];
            let hi = self.center[g] + self.half_width[g];
            out.push_str(&format!("{},{},{},{}\n", self.grid[g], self.center[g], lo, hi));
        }
        out
    }
}

/// ghat(K, .) with half-width c * sqrt(V_hat(K, .)/n) on a strictly
/// increasing grid.
pub fn make_band(fitres: &FitResult, grid: &[f64], c: f64) -> Result<Band> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "band critical value must be positive, got {c}"
        )));
    }
    if grid.is_empty() {
        return Err(Error::InvalidConfig("band grid is empty".into()));
    }
    if !grid.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::InvalidConfig(
            "band grid must be strictly increasing".into(),
        ));
    }
    let basis = build_basis(&fitres.spec, grid)?;
    let center_v = &basis.values * &fitres.beta_hat;
    let n = fitres.n as f64;
    let mut half_width = Vec::with_capacity(grid.len());
    for g in 0..grid.len() {
        let row = basis.values.row(g).transpose();
        let v = pointwise_variance(fitres, &row)?;
        half_width.push(c * (v / n).sqrt());
    }
    Ok(Band {
        grid: grid.to_vec(),
        center: center_v.iter().copied().collect(),
        half_width,
        k_used: fitres.k,
        c_used: c,
    })
}

pub fn normal_quantile(p: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().inverse_cdf(p)
}

/// z_{1-alpha/2}, the two-sided standard-normal critical value.
pub fn standard_z(alpha: f64) -> f64 {
    normal_quantile(1.0 - alpha / 2.0)
}

fn validate_level_and_draws(alpha: f64, b: u64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "level alpha must lie in (0, 1), got {alpha}"
        )));
    }
    if b < 100 {
        return Err(Error::InvalidConfig(format!(
            "need at least 100 draws, got {b}"
        )));
    }
    if alpha * (b as f64) < 1.0 {
        return Err(Error::QuantileUndefined { alpha, b });
    }
    Ok(())
}

/// Order statistic at rank ceil((1 - alpha) * B); input must be sorted.
fn order_stat_quantile(sorted: &[f64], alpha: f64) -> f64 {
    let b = sorted.len();
    let rank = ((1.0 - alpha) * b as f64).ceil() as usize;
    sorted[rank.clamp(1, b) - 1]
}

/// Asymptotic quantile standard error sqrt(alpha(1-alpha)/B) / f(c), with f
/// a Gaussian kernel density estimate at c (Silverman bandwidth).
fn quantile_mc_se(sorted: &[f64], alpha: f64, c: f64) -> f64 {
    let b = sorted.len();
    let bf = b as f64;
    let mean = sorted.iter().sum::<f64>() / bf;
    let var = sorted.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (bf - 1.0);
    let sd = var.sqrt();
    let q1 = sorted[(0.25 * bf).floor() as usize];
    let q3 = sorted[((0.75 * bf).floor() as usize).min(b - 1)];
    let iqr = (q3 - q1) / 1.34;
    let mut h = 0.9 * sd.min(if iqr > 0.0 { iqr } else { sd }) * bf.powf(-0.2);
    if !(h > 0.0) {
        h = 1e-6;
    }
    let inv_sqrt_2pi = 0.3989422804014327;
    let density = sorted
        .iter()
        .map(|s| {
            let u = (c - s) / h;
            inv_sqrt_2pi * (-0.5 * u * u).exp()
        })
        .sum::<f64>()
        / (bf * h);
    let density = density.max(1e-12);
    (alpha * (1.0 - alpha) / bf).sqrt() / density
}

/// Square root of a correlation matrix by symmetric eigendecomposition.
/// Eigenvalues in [-1e-8, 0) are floor rounding noise and are clipped to 0;
/// anything lower was already rejected by the matrix invariants.
fn correlation_sqrt_factor(sigma: &CrossKCorrelation) -> Result<DMatrix<f64>> {
    sigma.check_invariants()?;
    let eig = sigma.sigma_hat.clone().symmetric_eigen();
    let p = sigma.p();
    let mut factor = eig.eigenvectors.clone();
    for j in 0..p {
        let lam = eig.eigenvalues[j];
        if !lam.is_finite() {
            return Err(Error::Numerical(
                "eigendecomposition of the correlation matrix failed".into(),
            ));
        }
        let s = lam.max(0.0).sqrt();
        factor.column_mut(j).scale_mut(s);
    }
    if factor.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(
            "correlation square root is not finite after eigenvalue clipping".into(),
        ));
    }
    Ok(factor)
}

/// (1 - alpha) sample quantile of max_j |Z_j| over B draws of
/// Z ~ N(0, Sigma_hat). Deterministic given (sigma, alpha, B, seed).
pub fn pointwise_critical_value(
    sigma: &CrossKCorrelation,
    alpha: f64,
    b: u64,
    seed: u64,
) -> Result<CriticalValueResult> {
    validate_level_and_draws(alpha, b)?;
    let factor = correlation_sqrt_factor(sigma)?;
    let p = sigma.p();
    let mut stats: Vec<f64> = (0..b)
        .map(|rep| {
            let mut rng = stream(seed, &[rep]);
            let xi = DVector::from_iterator(p, (0..p).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let z = &factor * xi;
            z.iter().fold(0.0f64, |m, v| m.max(v.abs()))
        })
        .collect();
    stats.sort_unstable_by(f64::total_cmp);
    let c_hat = order_stat_quantile(&stats, alpha);
    let mc_se = quantile_mc_se(&stats, alpha, c_hat);
    Ok(CriticalValueResult {
        c_hat,
        alpha,
        draws: b,
        mc_se,
        seed,
        method: CriticalValueMethod::GaussianSim,
    })
}

/// Correlation matrix for nested least-squares models under homoskedastic
/// errors, from standard errors alone: the correlation between two models'
/// estimates is the smaller SE over the larger one. Writing se = e^t, the
/// entries are exp(-|t_j - t_l|), an exponential kernel, so the matrix is
/// positive semidefinite by construction.
pub fn nested_homoskedastic_corr(ses: &[f64]) -> Result<CrossKCorrelation> {
    if ses.is_empty() {
        return Err(Error::InvalidConfig("no standard errors supplied".into()));
    }
    for &s in ses {
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::NonPositiveSe(s));
        }
    }
    let p = ses.len();
    let mut sigma = DMatrix::identity(p, p);
    for j in 0..p {
        for l in (j + 1)..p {
            let rho = ses[j].min(ses[l]) / ses[j].max(ses[l]);
            sigma[(j, l)] = rho;
            sigma[(l, j)] = rho;
        }
    }
    CrossKCorrelation::new(
        sigma,
        (1..=p).collect(),
        ses.iter().map(|s| s * s).collect(),
        "nested homoskedastic se ratio".into(),
    )
}

/// Convenience path for externally supplied nested-model standard errors.
pub fn nested_critical_value(
    ses: &[f64],
    alpha: f64,
    b: u64,
    seed: u64,
) -> Result<CriticalValueResult> {
    let sigma = nested_homoskedastic_corr(ses)?;
    let mut out = pointwise_critical_value(&sigma, alpha, b, seed)?;
    out.method = CriticalValueMethod::NestedSeRatio;
    Ok(out)
}

/// Weighted-bootstrap critical value for uniform bands: per replication,
/// draw exponential multipliers, re-solve every candidate fit, studentize
/// the deviation process by the original fit's sqrt(V_hat), and take the sup
/// of |T| over candidates and grid points. c_hat is the (1 - alpha) sample
/// quantile of the B sups. Weight draws depend only on (seed, replication),
/// so enlarging the grid or the candidate set with the same seed reuses the
/// same weights and can only increase each replication's sup.
pub fn uniform_band_critical_value(
    data: &Dataset,
    fits: &[&FitResult],
    grid: &[f64],
    alpha: f64,
    b: u64,
    seed: u64,
) -> Result<CriticalValueResult> {
    validate_level_and_draws(alpha, b)?;
    if fits.is_empty() {
        return Err(Error::InvalidConfig("no candidate fits supplied".into()));
    }
    if grid.is_empty() {
        return Err(Error::InvalidConfig("band grid is empty".into()));
    }
    let n = data.n();
    if fits.iter().any(|f| f.n != n) {
        return Err(Error::InvalidData(
            "candidate fits and dataset disagree on sample size".into(),
        ));
    }
    let nf = n as f64;
    let sqrt_n = nf.sqrt();
    let y = DVector::from_column_slice(&data.y);

    // Per candidate: grid basis, and the original fit's sd(x) = sqrt(V_hat).
    let mut grids = Vec::with_capacity(fits.len());
    let mut sds = Vec::with_capacity(fits.len());
    for f in fits {
        let gb = build_basis(&f.spec, grid)?.values;
        let mut sd = Vec::with_capacity(grid.len());
        for g in 0..grid.len() {
            let row = gb.row(g).transpose();
            sd.push(pointwise_variance(f, &row)?.sqrt());
        }
        grids.push(gb);
        sds.push(sd);
    }

    let sups: Vec<Result<f64>> = (0..b)
        .into_par_iter()
        .map(|rep| {
            let mut rng = stream(seed, &[rep]);
            let weights: Vec<f64> = (0..n).map(|_| rng.sample(Exp1)).collect();
            let mut sup = 0.0f64;
            for (j, f) in fits.iter().enumerate() {
                let beta_e =
                    weighted_beta(&f.design, &y, &weights, f.k).map_err(|e| Error::BootstrapFit {
                        replication: rep + 1,
                        k: f.k,
                        source: Box::new(e),
                    })?;
                let delta = beta_e - &f.beta_hat;
                let dev = &grids[j] * delta;
                for (g, d) in dev.iter().enumerate() {
                    let t = (sqrt_n * d / sds[j][g]).abs();
                    if t > sup {
                        sup = t;
                    }
                }
            }
            Ok(sup)
        })
        .collect();

    let mut stats = Vec::with_capacity(b as usize);
    for s in sups {
        stats.push(s?);
    }
    stats.sort_unstable_by(f64::total_cmp);
    let c_hat = order_stat_quantile(&stats, alpha);
    let mc_se = quantile_mc_se(&stats, alpha, c_hat);
    Ok(CriticalValueResult {
        c_hat,
        alpha,
        draws: b,
        mc_se,
        seed,
        method: CriticalValueMethod::WeightedBootstrap,
    })
}
