//! Polynomial and regression-spline basis construction.
//!
//! A basis turns a scalar covariate into the regressor vector P(K, x) of a
//! series regression. Two families are supported:
//!
//! * `Polynomial`: monomials of degree 0..=K, evaluated on the support
//!   rescaled to [-1, 1] for conditioning. Dimension K + 1.
//! * `Spline`: B-splines of a fixed order on a clamped knot vector with K
//!   strictly interior knots. Dimension K + order (order = degree + 1, so a
//!   quadratic spline has order 3 and dimension K + 3).
//!
//! B-splines are used instead of truncated powers because their Gram matrices
//! stay well conditioned as K grows. Each B-spline row sums to one (partition
//! of unity); derivative rows sum to zero.

use crate::error::{Error, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisFamily {
    Polynomial,
    Spline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnotRule {
    EvenlySpaced,
    Quantile,
}

/// Full description of a basis: family, complexity and support.
///
/// `k` is the tuning parameter: the number of interior knots for splines and
/// the polynomial degree for polynomials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub family: BasisFamily,
    /// B-spline order (degree + 1). Ignored for polynomials. Quadratic = 3.
    pub spline_order: usize,
    /// Interior-knot count (spline) or degree (polynomial).
    pub k: usize,
    /// Closed support interval [a, b].
    pub support: (f64, f64),
    pub knot_rule: KnotRule,
}

/// Relative tolerance for accepting points on (or negligibly outside) the
/// support boundary. Anything farther out is an error, never clamped.
const BOUNDARY_TOL: f64 = 1e-12;

impl BasisSpec {
    pub fn polynomial(degree: usize, support: (f64, f64)) -> Self {
        BasisSpec {
            family: BasisFamily::Polynomial,
            spline_order: 0,
            k: degree,
            support,
            knot_rule: KnotRule::EvenlySpaced,
        }
    }

    pub fn spline(order: usize, interior_knots: usize, support: (f64, f64)) -> Self {
        BasisSpec {
            family: BasisFamily::Spline,
            spline_order: order,
            k: interior_knots,
            support,
            knot_rule: KnotRule::EvenlySpaced,
        }
    }

    /// Quadratic B-spline (degree 2) with `interior_knots` interior knots.
    pub fn quadratic_spline(interior_knots: usize, support: (f64, f64)) -> Self {
        Self::spline(3, interior_knots, support)
    }

    /// Number of basis functions.
    pub fn dimension(&self) -> usize {
        match self.family {
            BasisFamily::Polynomial => self.k + 1,
            BasisFamily::Spline => self.k + self.spline_order,
        }
    }

    fn validate(&self) -> Result<()> {
        let (a, b) = self.support;
        if !(a < b) || !a.is_finite() || !b.is_finite() {
            return Err(Error::DegenerateSupport { a, b });
        }
        if self.family == BasisFamily::Spline && self.spline_order < 1 {
            return Err(Error::InvalidConfig("spline order must be >= 1".into()));
        }
        Ok(())
    }

    fn boundary_slack(&self) -> f64 {
        let (a, b) = self.support;
        BOUNDARY_TOL * a.abs().max(b.abs()).max(1.0)
    }

    /// Checks a point against the support with boundary tolerance and returns
    /// it clamped to the closed interval (only ever moving it by the slack).
    fn admit(&self, t: f64) -> Result<f64> {
        let (a, b) = self.support;
        let slack = self.boundary_slack();
        if !t.is_finite() || t < a - slack || t > b + slack {
            return Err(Error::PointOutOfSupport { point: t, a, b });
        }
        Ok(t.clamp(a, b))
    }
}

/// Interior knots for a spline spec.
///
/// `evenly_spaced` places knot j at a + j(b-a)/(K+1), j = 1..K. `quantile`
/// places knot j at the j/(K+1) empirical quantile (inverse-ECDF convention)
/// of the sample and requires at least K distinct values.
pub fn make_knots(spec: &BasisSpec, x_sample: Option<&[f64]>) -> Result<Vec<f64>> {
    spec.validate()?;
    let (a, b) = spec.support;
    let k = spec.k;
    let knots: Vec<f64> = match spec.knot_rule {
        KnotRule::EvenlySpaced => (1..=k)
            .map(|j| a + j as f64 * (b - a) / (k + 1) as f64)
            .collect(),
        KnotRule::Quantile => {
            let sample = x_sample.ok_or_else(|| {
                Error::InvalidConfig("quantile knot rule requires a sample".into())
            })?;
            let mut sorted: Vec<f64> = sample.to_vec();
            sorted.sort_by(|p, q| p.partial_cmp(q).expect("non-finite sample value"));
            let mut distinct = sorted.clone();
            distinct.dedup();
            if distinct.len() < k {
                return Err(Error::InsufficientQuantileSample {
                    needed: k,
                    got: distinct.len(),
                });
            }
            let n = sorted.len();
            (1..=k)
                .map(|j| {
                    let p = j as f64 / (k + 1) as f64;
                    let idx = ((n as f64 * p).ceil() as usize).clamp(1, n) - 1;
                    sorted[idx]
                })
                .collect()
        }
    };
    let strictly_inside = knots.windows(2).all(|w| w[0] < w[1])
        && knots.first().map_or(true, |&t| t > a)
        && knots.last().map_or(true, |&t| t < b);
    if !strictly_inside {
        return Err(Error::InvalidKnots);
    }
    Ok(knots)
}

/// Clamped knot vector: `order` copies of each support endpoint around the
/// interior knots. Length = K + 2*order; basis dimension = K + order.
fn clamped_knot_vector(spec: &BasisSpec, interior: &[f64]) -> Vec<f64> {
    let (a, b) = spec.support;
    let mut t = Vec::with_capacity(interior.len() + 2 * spec.spline_order);
    t.extend(std::iter::repeat(a).take(spec.spline_order));
    t.extend_from_slice(interior);
    t.extend(std::iter::repeat(b).take(spec.spline_order));
    t
}

/// Evaluation matrix: rows are points, columns are basis functions.
#[derive(Debug, Clone)]
pub struct BasisMatrix {
    pub values: DMatrix<f64>,
    pub points: Vec<f64>,
}

/// Builds the design matrix P with P[i, j] = p_j(points[i]).
pub fn build_basis(spec: &BasisSpec, points: &[f64]) -> Result<BasisMatrix> {
    build_impl(spec, points, false)
}

/// Builds the derivative design matrix with entries d/dt p_j(t).
pub fn build_derivative_basis(spec: &BasisSpec, points: &[f64]) -> Result<BasisMatrix> {
    if spec.family == BasisFamily::Spline && spec.spline_order < 2 {
        return Err(Error::DerivativeOfConstantSpline);
    }
    build_impl(spec, points, true)
}

fn build_impl(spec: &BasisSpec, points: &[f64], derivative: bool) -> Result<BasisMatrix> {
    spec.validate()?;
    let dim = spec.dimension();
    let mut values = DMatrix::zeros(points.len(), dim);
    match spec.family {
        BasisFamily::Polynomial => {
            let (a, b) = spec.support;
            // Monomials in z = 2(t-a)/(b-a) - 1 for conditioning; the chain
            // factor dz/dt enters derivative rows.
            let scale = 2.0 / (b - a);
            for (i, &raw) in points.iter().enumerate() {
                let t = spec.admit(raw)?;
                let z = scale * (t - a) - 1.0;
                if derivative {
                    let mut zpow = 1.0;
                    for j in 1..dim {
                        values[(i, j)] = j as f64 * zpow * scale;
                        zpow *= z;
                    }
                } else {
                    let mut zpow = 1.0;
                    for j in 0..dim {
                        values[(i, j)] = zpow;
                        zpow *= z;
                    }
                }
            }
        }
        BasisFamily::Spline => {
            let interior = make_knots(spec, None)?;
            let t = clamped_knot_vector(spec, &interior);
            let order = spec.spline_order;
            let deg = order - 1;
            let mut work = vec![0.0; order];
            let mut left = vec![0.0; order];
            let mut right = vec![0.0; order];
            for (i, &raw) in points.iter().enumerate() {
                let u = spec.admit(raw)?;
                let span = find_span(&t, dim, deg, u);
                eval_nonzero(&t, deg, span, u, &mut work, &mut left, &mut right);
                if derivative {
                    // d/du B_{j,order} = deg * ( B_{j,order-1}/(t_{j+deg}-t_j)
                    //                          - B_{j+1,order-1}/(t_{j+deg+1}-t_{j+1}) )
                    // computed from the order-1 nonzero functions at the same span.
                    let mut lower = vec![0.0; deg];
                    eval_nonzero(&t, deg - 1, span, u, &mut lower, &mut left, &mut right);
                    for r in 0..order {
                        let j = span - deg + r;
                        let mut d = 0.0;
                        if r > 0 {
                            let den = t[j + deg] - t[j];
                            if den > 0.0 {
                                d += lower[r - 1] / den;
                            }
                        }
                        if r < deg {
                            let den = t[j + deg + 1] - t[j + 1];
                            if den > 0.0 {
                                d -= lower[r] / den;
                            }
                        }
                        values[(i, j)] = deg as f64 * d;
                    }
                } else {
                    for r in 0..order {
                        values[(i, span - deg + r)] = work[r];
                    }
                }
            }
        }
    }
    if !values.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical("non-finite basis value".into()));
    }
    Ok(BasisMatrix {
        values,
        points: points.to_vec(),
    })
}

/// Index of the knot span containing u: largest i with t[i] <= u < t[i+1],
/// except u at the right end maps into the last non-empty span.
fn find_span(t: &[f64], dim: usize, deg: usize, u: f64) -> usize {
    let last = dim; // == t.len() - order; right end of the valid span range
    if u >= t[last] {
        return last - 1;
    }
    let mut lo = deg;
    let mut hi = last;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if u < t[mid] {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    lo
}

/// The deg+1 B-splines of degree `deg` that are nonzero on `span`, via the
/// Cox-de Boor recurrence (no zero divisions: only non-empty spans enter).
fn eval_nonzero(t: &[f64], deg: usize, span: usize, u: f64, out: &mut [f64], left: &mut [f64], right: &mut [f64]) {
    out[0] = 1.0;
    for j in 1..=deg {
        left[j] = u - t[span + 1 - j];
        right[j] = t[span + j] - u;
        let mut saved = 0.0;
        for r in 0..j {
            let den = right[r + 1] + left[j - r];
            let tmp = out[r] / den;
            out[r] = saved + right[r + 1] * tmp;
            saved = left[j - r] * tmp;
        }
        out[j] = saved;
    }
}
