//! Monte Carlo coverage studies on three nonparametric regression designs.
//!
//! Covariates are x = Phi(x*) with x* standard normal, errors are Gaussian
//! with optional variance ((1 + 2x*)/2)^2, and the regression functions are
//!
//! ```text
//! g1(x) = ln(|6x - 3| + 1) sgn(x - 1/2)
//! g2(x) = sin(7 pi x / 2) / (1 + 2 x^2 (sgn(x) + 1))
//! g3(x) = x - 1/2 + 5 phi(10 (x - 1/2))
//! ```
//!
//! Each replication selects K by cross-validation over the candidate set,
//! then records containment of the true function by standard and
//! search-robust intervals at a few evaluation points and by uniform bands
//! on a grid. Candidate counts index equal subdivisions of the support: a
//! candidate K means K - 1 evenly spaced interior knots (a quadratic spline
//! with dimension K + 2), so the set {6..12} spans dimensions 8 through 14.
//!
//! Every random quantity is drawn from a stream keyed by (master_seed, tag,
//! replication, ...), so reports are identical across thread counts and
//! scheduling orders.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::basis::BasisSpec;
use crate::candidate::{explicit_set, select_cv_with_fits, simulation_rule_set, CandidateSet};
use crate::error::{Error, Result};
use crate::fit::{basis_row_at, cross_k_correlation, predict, standard_error_at, Dataset, FitResult};
use crate::rng::{derive, stream};
use crate::suptstat::{
    make_band, pointwise_critical_value, robust_ci, standard_z, uniform_band_critical_value,
};

const TAG_DGP: u64 = 1;
const TAG_CRIT: u64 = 2;
const TAG_BOOT: u64 = 3;

fn sgn(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn std_normal_pdf(v: f64) -> f64 {
    0.3989422804014327 * (-0.5 * v * v).exp()
}

fn g1(x: f64) -> f64 {
    ((6.0 * x - 3.0).abs() + 1.0).ln() * sgn(x - 0.5)
}

fn g2(x: f64) -> f64 {
    (3.5 * std::f64::consts::PI * x).sin() / (1.0 + 2.0 * x * x * (sgn(x) + 1.0))
}

fn g3(x: f64) -> f64 {
    x - 0.5 + 5.0 * std_normal_pdf(10.0 * (x - 0.5))
}

/// The true regression function for a design id.
pub fn true_function(model_id: u8) -> Result<fn(f64) -> f64> {
    match model_id {
        1 => Ok(g1),
        2 => Ok(g2),
        3 => Ok(g3),
        other => Err(Error::InvalidConfig(format!("unknown model id {other}"))),
    }
}

/// One simulated dataset plus the function it was generated from.
pub fn dgp_sample(
    model_id: u8,
    n: usize,
    heteroskedastic: bool,
    seed: u64,
) -> Result<(Dataset, fn(f64) -> f64)> {
    let g = true_function(model_id)?;
    if n < 2 {
        return Err(Error::InvalidConfig(format!("sample size {n} below 2")));
    }
    let mut rng = stream(seed, &[]);
    let phi = Normal::new(0.0, 1.0).unwrap();
    let mut x = Vec::with_capacity(n);
    let mut sd = Vec::with_capacity(n);
    for _ in 0..n {
        let xs: f64 = rng.sample(StandardNormal);
        x.push(phi.cdf(xs));
        sd.push(if heteroskedastic {
            ((1.0 + 2.0 * xs) / 2.0).abs()
        } else {
            1.0
        });
    }
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let e: f64 = rng.sample(StandardNormal);
        y.push(g(x[i]) + sd[i] * e);
    }
    Ok((Dataset::new(x, y)?, g))
}

/// Candidate-set construction knob for a study.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum KRule {
    /// All integers between 2 n^{1/5} and 2 n^{1/3}, rounded up.
    SimulationRule,
    Explicit { k_values: Vec<usize> },
}

impl KRule {
    pub fn build(&self, n: usize) -> Result<CandidateSet> {
        match self {
            KRule::SimulationRule => simulation_rule_set(n),
            KRule::Explicit { k_values } => explicit_set(k_values.clone()),
        }
    }
}

fn default_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub model_id: u8,
    pub n: usize,
    pub n_reps: usize,
    pub b_critical: u64,
    pub b_bootstrap: u64,
    pub alpha: f64,
    pub candidate_rule: KRule,
    pub eval_points: Vec<f64>,
    pub band_support: (f64, f64),
    pub band_grid_size: usize,
    pub heteroskedastic: bool,
    pub master_seed: u64,
    /// Record failed replications and continue instead of aborting.
    #[serde(default)]
    pub tolerate_failures: bool,
    /// Multiplies y and the true function together; coverage indicators are
    /// invariant in it (used to exercise that property end to end).
    #[serde(default = "default_scale")]
    pub scale: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            model_id: 1,
            n: 200,
            n_reps: 500,
            b_critical: 1000,
            b_bootstrap: 1000,
            alpha: 0.05,
            candidate_rule: KRule::SimulationRule,
            eval_points: vec![0.2, 0.5, 0.8, 0.9],
            band_support: (0.05, 0.95),
            band_grid_size: 91,
            heteroskedastic: true,
            master_seed: 1,
            tolerate_failures: false,
            scale: 1.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_reps < 1 {
            return Err(Error::InvalidConfig("n_reps must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        let (a, b) = self.band_support;
        if !(a < b) || a <= 0.0 || b >= 1.0 {
            return Err(Error::InvalidConfig(format!(
                "band support [{a}, {b}] must sit strictly inside (0, 1)"
            )));
        }
        if self.band_grid_size < 2 {
            return Err(Error::InvalidConfig("band grid needs at least 2 points".into()));
        }
        if self.eval_points.is_empty() {
            return Err(Error::InvalidConfig("no evaluation points".into()));
        }
        for &e in &self.eval_points {
            if !(e > 0.0 && e < 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "evaluation point {e} outside (0, 1)"
                )));
            }
        }
        if !(self.scale > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "scale must be positive, got {}",
                self.scale
            )));
        }
        true_function(self.model_id)?;
        Ok(())
    }

    pub fn band_grid(&self) -> Vec<f64> {
        let (a, b) = self.band_support;
        let m = self.band_grid_size;
        (0..m)
            .map(|i| a + (b - a) * i as f64 / (m - 1) as f64)
            .collect()
    }
}

/// Candidate count -> spline spec: K equal subintervals of [0, 1], i.e.
/// K - 1 interior knots, quadratic, dimension K + 2.
pub fn spec_for_count(k: usize) -> BasisSpec {
    BasisSpec::quadratic_spline(k.saturating_sub(1), (0.0, 1.0))
}

pub const METHOD_STANDARD: &str = "standard(k_cv)";
pub const METHOD_ROBUST: &str = "robust(k_cv)";
pub const METHOD_ROBUST_PLUS: &str = "robust(k_cv+)";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PointSummary {
    pub method: String,
    pub x: f64,
    pub coverage: f64,
    pub avg_length: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BandSummary {
    pub method: String,
    pub coverage: f64,
    pub avg_width: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepFailure {
    pub replication: u64,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimReport {
    pub config: SimConfig,
    pub points: Vec<PointSummary>,
    pub bands: Vec<BandSummary>,
    /// Selected K per replication, keyed by candidate count.
    pub k_cv_histogram: BTreeMap<usize, usize>,
    /// Replications whose bumped selection hit the top of the candidate set.
    pub cv_plus_clipped: usize,
    pub n_reps_completed: usize,
    pub failures: Vec<RepFailure>,
    pub timing_secs: f64,
}

struct RepOutcome {
    /// [method][eval point] containment indicator.
    point_cover: [Vec<bool>; 3],
    /// [method][eval point] interval length.
    point_length: [Vec<f64>; 3],
    /// [method] band containment.
    band_cover: [bool; 3],
    /// [method] average band width over the grid.
    band_width: [f64; 3],
    k_cv: usize,
    clipped: bool,
}

fn run_one(config: &SimConfig, set: &CandidateSet, grid: &[f64], rep: u64) -> Result<RepOutcome> {
    let rep_seed = derive(config.master_seed, &[TAG_DGP, rep]);
    let (mut data, g0) = dgp_sample(config.model_id, config.n, config.heteroskedastic, rep_seed)?;
    let scale = config.scale;
    for v in &mut data.y {
        *v *= scale;
    }
    let truth = move |t: f64| scale * g0(t);

    let (sel, fits) = select_cv_with_fits(&data, set, spec_for_count)?;
    let k_cv = sel.k_cv;
    let bump = sel.bumped["cv+"];
    let fit_cv = &fits[&k_cv];
    let fit_plus = &fits[&bump.used];
    let z = standard_z(config.alpha);

    let ordered: Vec<&FitResult> = set.k_values.iter().map(|k| &fits[k]).collect();

    let ne = config.eval_points.len();
    let mut point_cover = [vec![false; ne], vec![false; ne], vec![false; ne]];
    let mut point_length = [vec![0.0; ne], vec![0.0; ne], vec![0.0; ne]];
    for (pi, &x) in config.eval_points.iter().enumerate() {
        let rows: Vec<_> = ordered
            .iter()
            .map(|f| basis_row_at(f, x))
            .collect::<Result<_>>()?;
        let sigma = cross_k_correlation(&ordered, &rows, format!("x={x}"))?;
        let crit_seed = derive(config.master_seed, &[TAG_CRIT, rep, pi as u64]);
        let cv = pointwise_critical_value(&sigma, config.alpha, config.b_critical, crit_seed)?;

        let truth_x = truth(x);
        let ghat_cv = predict(fit_cv, &[x])?[0];
        let se_cv = standard_error_at(fit_cv, x)?;
        let ghat_plus = predict(fit_plus, &[x])?[0];
        let se_plus = standard_error_at(fit_plus, x)?;

        let standard = robust_ci(ghat_cv, se_cv, z)?;
        let robust = robust_ci(ghat_cv, se_cv, cv.c_hat)?;
        let robust_plus = robust_ci(ghat_plus, se_plus, cv.c_hat)?;

        point_cover[0][pi] = standard.contains(truth_x);
        point_cover[1][pi] = robust.contains(truth_x);
        point_cover[2][pi] = robust_plus.contains(truth_x);
        point_length[0][pi] = standard.length();
        point_length[1][pi] = robust.length();
        point_length[2][pi] = robust_plus.length();

        // Interval nesting implies indicator dominance whenever the
        // search-robust critical value is at least the z quantile.
        if cv.c_hat >= z {
            debug_assert!(point_cover[1][pi] || !point_cover[0][pi]);
        }
    }

    let boot_seed = derive(config.master_seed, &[TAG_BOOT, rep]);
    let c_boot =
        uniform_band_critical_value(&data, &ordered, grid, config.alpha, config.b_bootstrap, boot_seed)?;

    let band_std = make_band(fit_cv, grid, z)?;
    let band_rob = make_band(fit_cv, grid, c_boot.c_hat)?;
    let band_plus = make_band(fit_plus, grid, c_boot.c_hat)?;
    let avg_width = |b: &crate::suptstat::Band| {
        2.0 * b.half_width.iter().sum::<f64>() / b.half_width.len() as f64
    };

    Ok(RepOutcome {
        point_cover,
        point_length,
        band_cover: [
            band_std.covers(&truth),
            band_rob.covers(&truth),
            band_plus.covers(&truth),
        ],
        band_width: [avg_width(&band_std), avg_width(&band_rob), avg_width(&band_plus)],
        k_cv,
        clipped: bump.clipped,
    })
}

/// Run the full study. Replications execute in parallel; every stream is
/// keyed by (master_seed, tag, replication), so the report does not depend
/// on the schedule.
pub fn run_coverage_study(config: &SimConfig) -> Result<SimReport> {
    config.validate()?;
    let start = Instant::now();
    let set = config.candidate_rule.build(config.n)?;
    let grid = config.band_grid();

    let outcomes: Vec<(u64, Result<RepOutcome>)> = (0..config.n_reps as u64)
        .into_par_iter()
        .map(|rep| (rep, run_one(config, &set, &grid, rep)))
        .collect();

    let ne = config.eval_points.len();
    let mut cover_acc = vec![[0usize; 3]; ne];
    let mut length_acc = vec![[0.0f64; 3]; ne];
    let mut band_cover_acc = [0usize; 3];
    let mut band_width_acc = [0.0f64; 3];
    let mut histogram: BTreeMap<usize, usize> = BTreeMap::new();
    let mut clipped = 0usize;
    let mut completed = 0usize;
    let mut failures = Vec::new();

    for (rep, outcome) in outcomes {
        match outcome {
            Ok(o) => {
                completed += 1;
                for m in 0..3 {
                    for pi in 0..ne {
                        if o.point_cover[m][pi] {
                            cover_acc[pi][m] += 1;
                        }
                        length_acc[pi][m] += o.point_length[m][pi];
                    }
                    if o.band_cover[m] {
                        band_cover_acc[m] += 1;
                    }
                    band_width_acc[m] += o.band_width[m];
                }
                *histogram.entry(o.k_cv).or_insert(0) += 1;
                if o.clipped {
                    clipped += 1;
                }
            }
            Err(e) => {
                let seed = derive(config.master_seed, &[TAG_DGP, rep]);
                if config.tolerate_failures {
                    failures.push(RepFailure {
                        replication: rep,
                        seed,
                        message: e.to_string(),
                    });
                } else {
                    return Err(Error::Replication {
                        replication: rep,
                        seed,
                        source: Box::new(e),
                    });
                }
            }
        }
    }
    if completed == 0 {
        return Err(Error::Numerical("every replication failed".into()));
    }

    let methods = [METHOD_STANDARD, METHOD_ROBUST, METHOD_ROBUST_PLUS];
    let cf = completed as f64;
    let mut points = Vec::new();
    for (m, name) in methods.iter().enumerate() {
        for pi in 0..ne {
            let coverage = cover_acc[pi][m] as f64 / cf;
            let avg_length = length_acc[pi][m] / cf;
            debug_assert!((0.0..=1.0).contains(&coverage));
            if !avg_length.is_finite() {
                return Err(Error::Numerical(format!(
                    "average length at x={} is not finite",
                    config.eval_points[pi]
                )));
            }
            points.push(PointSummary {
                method: name.to_string(),
                x: config.eval_points[pi],
                coverage,
                avg_length,
            });
        }
    }
    let bands = methods
        .iter()
        .enumerate()
        .map(|(m, name)| BandSummary {
            method: name.to_string(),
            coverage: band_cover_acc[m] as f64 / cf,
            avg_width: band_width_acc[m] / cf,
        })
        .collect();

    Ok(SimReport {
        config: config.clone(),
        points,
        bands,
        k_cv_histogram: histogram,
        cv_plus_clipped: clipped,
        n_reps_completed: completed,
        failures,
        timing_secs: start.elapsed().as_secs_f64(),
    })
}

/// Flat CSV: `model,method,target,coverage,avg_length`, one row per
/// method x evaluation point plus one per band method.
pub fn report_to_csv(report: &SimReport) -> String {
    let mut out = String::from("model,method,target,coverage,avg_length\n");
    for p in &report.points {
        out.push_str(&format!(
            "{},{},x={},{},{}\n",
            report.config.model_id, p.method, p.x, p.coverage, p.avg_length
        ));
    }
    for b in &report.bands {
        out.push_str(&format!(
            "{},{},uniform,{},{}\n",
            report.config.model_id, b.method, b.coverage, b.avg_width
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn regression_function_values() {
        assert_abs_diff_eq!(g1(0.5), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g1(1.0), 4.0f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(g2(1.0), -0.2, epsilon = 1e-9);
        assert_abs_diff_eq!(g3(0.5), 5.0 * 0.3989422804014327, epsilon = 1e-12);
        assert!(true_function(4).is_err());
        assert!(true_function(0).is_err());
    }

    #[test]
    fn dgp_covariates_live_in_the_unit_interval() {
        let (data, g) = dgp_sample(2, 500, true, 11).unwrap();
        assert!(data.x.iter().all(|&v| v > 0.0 && v < 1.0));
        assert_eq!(data.n(), 500);
        assert_abs_diff_eq!(g(1.0), -0.2, epsilon = 1e-9);
        // Heteroskedastic and homoskedastic draws share x but differ in y.
        let (data2, _) = dgp_sample(2, 500, false, 11).unwrap();
        assert_eq!(data.x, data2.x);
        assert_ne!(data.y, data2.y);
    }

    #[test]
    fn candidate_count_maps_to_equal_subintervals() {
        let spec = spec_for_count(6);
        assert_eq!(spec.k, 5);
        assert_eq!(spec.dimension(), 8);
        let knots = crate::basis::make_knots(&spec, None).unwrap();
        assert_eq!(knots.len(), 5);
        assert_abs_diff_eq!(knots[0], 1.0 / 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(knots[4], 5.0 / 6.0, epsilon = 1e-15);
    }

    fn small_config() -> SimConfig {
        SimConfig {
            model_id: 1,
            n: 120,
            n_reps: 12,
            b_critical: 200,
            b_bootstrap: 120,
            alpha: 0.05,
            candidate_rule: KRule::Explicit {
                k_values: vec![4, 5, 6],
            },
            eval_points: vec![0.3, 0.6],
            band_support: (0.1, 0.9),
            band_grid_size: 17,
            heteroskedastic: true,
            master_seed: 7,
            tolerate_failures: false,
            scale: 1.0,
        }
    }

    #[test]
    fn small_study_is_deterministic_and_sane() {
        let config = small_config();
        let a = run_coverage_study(&config).unwrap();
        let b = run_coverage_study(&config).unwrap();
        assert_eq!(a.n_reps_completed, 12);
        assert_eq!(a.points.len(), 6);
        assert_eq!(a.bands.len(), 3);
        for (pa, pb) in a.points.iter().zip(&b.points) {
            assert_eq!(pa.coverage.to_bits(), pb.coverage.to_bits());
            assert_eq!(pa.avg_length.to_bits(), pb.avg_length.to_bits());
            assert!((0.0..=1.0).contains(&pa.coverage));
            assert!(pa.avg_length > 0.0);
        }
        for (ba, bb) in a.bands.iter().zip(&b.bands) {
            assert_eq!(ba.coverage.to_bits(), bb.coverage.to_bits());
        }
        assert_eq!(a.k_cv_histogram, b.k_cv_histogram);
        let total: usize = a.k_cv_histogram.values().sum();
        assert_eq!(total, 12);
        // Robust intervals never cover less often than standard ones.
        let cov = |method: &str, x: f64| {
            a.points
                .iter()
                .find(|p| p.method == method && p.x == x)
                .unwrap()
                .coverage
        };
        for &x in &config.eval_points {
            assert!(cov(METHOD_ROBUST, x) >= cov(METHOD_STANDARD, x));
        }
    }

    #[test]
    fn scaled_outcomes_are_bit_identical() {
        let config = small_config();
        let mut scaled = config.clone();
        scaled.scale = 2.0;
        let a = run_coverage_study(&config).unwrap();
        let b = run_coverage_study(&scaled).unwrap();
        for (pa, pb) in a.points.iter().zip(&b.points) {
            assert_eq!(pa.coverage.to_bits(), pb.coverage.to_bits());
            assert_eq!((2.0 * pa.avg_length).to_bits(), pb.avg_length.to_bits());
        }
        for (ba, bb) in a.bands.iter().zip(&b.bands) {
            assert_eq!(ba.coverage.to_bits(), bb.coverage.to_bits());
            assert_eq!((2.0 * ba.avg_width).to_bits(), bb.avg_width.to_bits());
        }
        assert_eq!(a.k_cv_histogram, b.k_cv_histogram);
    }

    #[test]
    fn csv_layout() {
        let report = run_coverage_study(&small_config()).unwrap();
        let csv = report_to_csv(&report);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("model,method,target,coverage,avg_length"));
        assert_eq!(csv.lines().count(), 1 + 6 + 3);
        assert!(csv.contains("uniform"));
        assert!(csv.contains("x=0.3"));
    }

    #[test]
    fn config_validation() {
        let mut c = small_config();
        c.n_reps = 0;
        assert!(c.validate().is_err());
        let mut c = small_config();
        c.eval_points = vec![1.2];
        assert!(c.validate().is_err());
        let mut c = small_config();
        c.band_support = (0.9, 0.1);
        assert!(c.validate().is_err());
        let mut c = small_config();
        c.model_id = 9;
        assert!(c.validate().is_err());
        let mut c = small_config();
        c.alpha = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn failures_abort_by_default_and_are_recorded_when_tolerated() {
        // n below every candidate dimension: all replications fail.
        let mut c = small_config();
        c.n = 8;
        c.n_reps = 3;
        match run_coverage_study(&c) {
            Err(Error::Replication { replication, .. }) => assert_eq!(replication, 0),
            other => panic!("expected replication error, got {other:?}"),
        }
        c.tolerate_failures = true;
        // With every replication failing the study itself is an error.
        assert!(run_coverage_study(&c).is_err());
    }
}
