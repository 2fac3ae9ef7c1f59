//! Least-squares series regression with heteroskedasticity-robust variance.
//!
//! For a basis dimension K (loosely "the number of series terms") the fit is
//!
//! ```text
//! beta_hat = (P'P)^{-1} P'y,        ghat(x) = P(K, x)' beta_hat,
//! Q_hat    = P'P / n,               Omega_hat = (1/n) sum_i P_i P_i' eps_i^2,
//! V_hat(x) = P(K,x)' Q_hat^{-1} Omega_hat Q_hat^{-1} P(K,x),  se = sqrt(V_hat/n).
//! ```
//!
//! The solve goes through a QR factorization with a singular-value rank check
//! rather than normal equations; the sandwich pieces are still the plug-in
//! definitions above. Cross-K covariances share each model's own residuals:
//!
//! ```text
//! Omega_{Kj,Kl} = (1/n) sum_i P_{Kj,i} P_{Kl,i}' eps_{Kj,i} eps_{Kl,i}
//! ```
//!
//! which makes the correlation matrix a Gram matrix of per-observation
//! influence vectors, hence positive semidefinite by construction.

use crate::basis::{build_basis, BasisSpec};
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Relative singular-value cutoff below which a design is declared rank
/// deficient. Failing loudly is deliberate: a silently regularized fit would
/// invalidate the coverage semantics downstream.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Treatment column for the partially linear model; unused otherwise.
    pub w: Option<Vec<f64>>,
}

impl Dataset {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        Self::with_treatment(x, y, None)
    }

    pub fn with_treatment(x: Vec<f64>, y: Vec<f64>, w: Option<Vec<f64>>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::InvalidData(format!(
                "x has {} entries but y has {}",
                x.len(),
                y.len()
            )));
        }
        if x.len() < 2 {
            return Err(Error::InvalidData("need at least 2 observations".into()));
        }
        if let Some(w) = &w {
            if w.len() != x.len() {
                return Err(Error::InvalidData(format!(
                    "w has {} entries but x has {}",
                    w.len(),
                    x.len()
                )));
            }
            if !w.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidData("non-finite value in w".into()));
            }
        }
        if !x.iter().all(|v| v.is_finite()) || !y.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidData("non-finite value in x or y".into()));
        }
        Ok(Dataset { x, y, w })
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }
}

/// Everything downstream inference needs from one least-squares series fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    /// Tuning parameter this fit was built with (interior knots or degree).
    pub k: usize,
    pub spec: BasisSpec,
    pub beta_hat: DVector<f64>,
    /// Plain residuals y - P beta_hat (also for weighted fits).
    pub residuals: DVector<f64>,
    /// Q_hat = P'P/n (weighted: P'EP/n).
    pub gram: DMatrix<f64>,
    /// Omega_hat = (1/n) sum P_i P_i' eps_i^2 over the (scaled) design.
    pub meat: DMatrix<f64>,
    /// Leverages h_ii of the (weighted) projection; trace equals dimension.
    pub hat_diag: DVector<f64>,
    pub n: usize,
    /// Cached Q_hat^{-1} for sandwich evaluations.
    pub gram_inv: DMatrix<f64>,
    /// The design matrix P itself; reused by bootstrap refits and cross-K work.
    pub design: DMatrix<f64>,
}

/// Ordinary least-squares series fit.
pub fn fit(data: &Dataset, spec: &BasisSpec) -> Result<FitResult> {
    fit_scaled(data, spec, None)
}

/// Weighted least squares: beta minimizes sum_i e_i (y_i - P_i' beta)^2.
/// With unit weights this is bit-identical to `fit`.
pub fn weighted_fit(data: &Dataset, spec: &BasisSpec, weights: &[f64]) -> Result<FitResult> {
    if weights.len() != data.n() {
        return Err(Error::InvalidData(format!(
            "{} weights for {} observations",
            weights.len(),
            data.n()
        )));
    }
    if !weights.iter().all(|e| e.is_finite() && *e > 0.0) {
        return Err(Error::InvalidData("weights must be positive".into()));
    }
    fit_scaled(data, spec, Some(weights))
}

fn fit_scaled(data: &Dataset, spec: &BasisSpec, weights: Option<&[f64]>) -> Result<FitResult> {
    let design = build_basis(spec, &data.x)?.values;
    let y = DVector::from_column_slice(&data.y);
    let (beta, scaled, hat_diag) = solve_ls(&design, &y, weights, spec.k)?;
    let n = data.n();
    let residuals = &y - &design * &beta;

    // Gram and meat follow the plug-in definitions on the scaled design, so a
    // weighted fit carries the internals of its own weighted LS problem.
    let p = scaled.as_ref().unwrap_or(&design);
    let gram = p.transpose() * p / n as f64;
    let gram_inv = invert_gram(&gram, spec.k)?;
    let mut scaled_resid = residuals.clone();
    if let Some(e) = weights {
        for i in 0..n {
            scaled_resid[i] *= e[i].sqrt();
        }
    }
    let mut weighted_rows = p.clone();
    for i in 0..n {
        let r = scaled_resid[i];
        weighted_rows.row_mut(i).scale_mut(r);
    }
    let meat = weighted_rows.transpose() * weighted_rows / n as f64;

    Ok(FitResult {
        k: spec.k,
        spec: spec.clone(),
        beta_hat: beta,
        residuals,
        gram,
        meat,
        hat_diag,
        n,
        gram_inv,
        design,
    })
}

/// QR solve with a rank check; returns (beta, scaled design if weighted, h_ii).
fn solve_ls(
    design: &DMatrix<f64>,
    y: &DVector<f64>,
    weights: Option<&[f64]>,
    k: usize,
) -> Result<(DVector<f64>, Option<DMatrix<f64>>, DVector<f64>)> {
    let n = design.nrows();
    let dim = design.ncols();
    if n <= dim {
        return Err(Error::TooFewObservations { n, dim, k });
    }
    let (p, yv, scaled) = match weights {
        None => (design.clone(), y.clone(), None),
        Some(e) => {
            let mut p = design.clone();
            let mut yv = y.clone();
            for i in 0..n {
                let s = e[i].sqrt();
                p.row_mut(i).scale_mut(s);
                yv[i] *= s;
            }
            (p.clone(), yv, Some(p))
        }
    };
    let qr = p.qr();
    let q = qr.q();
    let r = qr.r();
    // Rank check on R's singular values; R is dim x dim so this is cheap.
    let sv = r.clone().svd(false, false).singular_values;
    let (smin, smax) = sv.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &s| {
        (lo.min(s), hi.max(s))
    });
    if !(smax > 0.0) || smin / smax <= RANK_TOL {
        return Err(Error::RankDeficient {
            k,
            ratio: if smax > 0.0 { smin / smax } else { 0.0 },
        });
    }
    let qty = q.transpose() * &yv;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or(Error::RankDeficient { k, ratio: smin / smax })?;
    // Leverages are squared row norms of the thin Q factor.
    let hat_diag = DVector::from_iterator(n, (0..n).map(|i| q.row(i).norm_squared()));
    Ok((beta, scaled, hat_diag))
}

fn invert_gram(gram: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>> {
    gram.clone()
        .try_inverse()
        .ok_or_else(|| Error::RankDeficient { k, ratio: 0.0 })
}

/// Coefficient-only weighted solve on a prebuilt design, for bootstrap inner
/// loops. The R-diagonal ratio stands in for the singular-value rank check;
/// the full check runs once on the unweighted fit that produced the design.
pub(crate) fn weighted_beta(
    design: &DMatrix<f64>,
    y: &DVector<f64>,
    weights: &[f64],
    k: usize,
) -> Result<DVector<f64>> {
    let n = design.nrows();
    let dim = design.ncols();
    let mut p = design.clone();
    let mut yv = y.clone();
    for i in 0..n {
        let s = weights[i].sqrt();
        p.row_mut(i).scale_mut(s);
        yv[i] *= s;
    }
    let qr = p.qr();
    let r = qr.r();
    let (dmin, dmax) = (0..dim).fold((f64::INFINITY, 0.0f64), |(lo, hi), j| {
        let d = r[(j, j)].abs();
        (lo.min(d), hi.max(d))
    });
    if !(dmax > 0.0) || dmin / dmax <= RANK_TOL {
        return Err(Error::RankDeficient {
            k,
            ratio: if dmax > 0.0 { dmin / dmax } else { 0.0 },
        });
    }
    qr.q_tr_mul(&mut yv);
    let qty = DVector::from_iterator(dim, (0..dim).map(|j| yv[j]));
    r.solve_upper_triangular(&qty)
        .ok_or(Error::RankDeficient { k, ratio: dmin / dmax })
}

/// ghat(K, x) on arbitrary points.
pub fn predict(fit: &FitResult, points: &[f64]) -> Result<Vec<f64>> {
    let m = build_basis(&fit.spec, points)?.values;
    Ok((m * &fit.beta_hat).iter().copied().collect())
}

/// Plug-in sandwich variance V_hat(K, x) for one basis row. The reporting
/// standard error is sqrt(V_hat / n).
pub fn pointwise_variance(fit: &FitResult, basis_row: &DVector<f64>) -> Result<f64> {
    let u = &fit.gram_inv * basis_row;
    let v = (u.transpose() * &fit.meat * &u)[(0, 0)];
    if !v.is_finite() || v <= 0.0 {
        return Err(Error::DegenerateVariance { k: fit.k, value: v });
    }
    Ok(v)
}

/// Standard error sqrt(V_hat(K, x)/n) at a point.
pub fn standard_error_at(fit: &FitResult, x: f64) -> Result<f64> {
    let row = basis_row_at(fit, x)?;
    Ok((pointwise_variance(fit, &row)? / fit.n as f64).sqrt())
}

pub fn basis_row_at(fit: &FitResult, x: f64) -> Result<DVector<f64>> {
    let m = build_basis(&fit.spec, &[x])?.values;
    Ok(m.row(0).transpose())
}

/// Leave-one-out cross-validation via the hat-matrix shortcut,
/// CV = (1/n) sum (eps_i / (1 - h_ii))^2; exact for least squares.
pub fn loo_cv(fit: &FitResult) -> Result<f64> {
    let n = fit.n;
    let mut acc = 0.0;
    for i in 0..n {
        let h = fit.hat_diag[i];
        if h >= 1.0 - 1e-10 {
            return Err(Error::SaturatedObservation { index: i });
        }
        let r = fit.residuals[i] / (1.0 - h);
        acc += r * r;
    }
    Ok(acc / n as f64)
}

/// Correlation structure of ghat(K_j, x) across candidate fits at one
/// evaluation functional (a basis row per fit, e.g. the point-evaluation row).
#[derive(Debug, Clone)]
pub struct CrossKCorrelation {
    /// Sigma_hat: unit-diagonal correlation matrix, PSD within tolerance.
    pub sigma_hat: DMatrix<f64>,
    pub k_values: Vec<usize>,
    /// V_hat(K_j, x) per fit (divide by n for squared standard errors).
    pub point_variances: Vec<f64>,
    /// Human-readable descriptor of the evaluation functional.
    pub at: String,
}

impl CrossKCorrelation {
    /// Constructor used by estimation paths; enforces the type's invariants.
    pub fn new(
        sigma_hat: DMatrix<f64>,
        k_values: Vec<usize>,
        point_variances: Vec<f64>,
        at: String,
    ) -> Result<Self> {
        let out = CrossKCorrelation {
            sigma_hat,
            k_values,
            point_variances,
            at,
        };
        out.check_invariants()?;
        Ok(out)
    }

    pub fn p(&self) -> usize {
        self.sigma_hat.nrows()
    }

    pub fn check_invariants(&self) -> Result<()> {
        let s = &self.sigma_hat;
        let p = s.nrows();
        if s.ncols() != p || p == 0 {
            return Err(Error::InvalidCorrelation("not a nonempty square matrix".into()));
        }
        for j in 0..p {
            if (s[(j, j)] - 1.0).abs() > 1e-10 {
                return Err(Error::InvalidCorrelation(format!(
                    "diagonal entry {} is {}, expected 1",
                    j,
                    s[(j, j)]
                )));
            }
            for l in 0..p {
                if (s[(j, l)] - s[(l, j)]).abs() > 1e-10 {
                    return Err(Error::InvalidCorrelation(format!(
                        "asymmetry at ({j},{l})"
                    )));
                }
                if s[(j, l)].abs() > 1.0 + 1e-8 {
                    return Err(Error::InvalidCorrelation(format!(
                        "off-diagonal {} at ({j},{l}) outside [-1, 1]",
                        s[(j, l)]
                    )));
                }
            }
        }
        let eig = s.clone().symmetric_eigen();
        let min_eig = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        if min_eig < -1e-8 {
            return Err(Error::InvalidCorrelation(format!(
                "minimum eigenvalue {min_eig:.3e} below -1e-8"
            )));
        }
        Ok(())
    }
}

/// Per-observation influence vector of the functional row'beta_hat:
/// a_i = row' Q_hat^{-1} P_i eps_i, so that V_hat = (1/n) sum a_i^2 and the
/// cross-K covariance is the inner product of two fits' influence vectors.
pub fn influence_vector(fit: &FitResult, basis_row: &DVector<f64>) -> DVector<f64> {
    let u = &fit.gram_inv * basis_row;
    let mut a = &fit.design * u;
    for i in 0..fit.n {
        a[i] *= fit.residuals[i];
    }
    a
}

/// Sigma_hat across candidate fits at a common evaluation functional.
///
/// `basis_rows[j]` must be the row of fit j's basis representing the target
/// (point evaluation or derivative). All fits must share the dataset.
pub fn cross_k_correlation(
    fits: &[&FitResult],
    basis_rows: &[DVector<f64>],
    at: String,
) -> Result<CrossKCorrelation> {
    if fits.is_empty() || fits.len() != basis_rows.len() {
        return Err(Error::InvalidConfig(
            "cross_k_correlation needs one basis row per fit".into(),
        ));
    }
    let n = fits[0].n;
    if fits.iter().any(|f| f.n != n) {
        return Err(Error::InvalidData(
            "cross-K correlation requires fits on a common dataset".into(),
        ));
    }
    let p = fits.len();
    let influences: Vec<DVector<f64>> = fits
        .iter()
        .zip(basis_rows)
        .map(|(f, row)| influence_vector(f, row))
        .collect();
    let variances: Vec<f64> = influences.iter().map(|a| a.norm_squared() / n as f64).collect();
    for (j, &v) in variances.iter().enumerate() {
        if !v.is_finite() || v <= 0.0 {
            return Err(Error::DegenerateVariance {
                k: fits[j].k,
                value: v,
            });
        }
    }
    let mut sigma = DMatrix::identity(p, p);
    for j in 0..p {
        for l in (j + 1)..p {
            let cov = influences[j].dot(&influences[l]) / n as f64;
            let rho = cov / (variances[j] * variances[l]).sqrt();
            sigma[(j, l)] = rho;
            sigma[(l, j)] = rho;
        }
    }
    CrossKCorrelation::new(
        sigma,
        fits.iter().map(|f| f.k).collect(),
        variances,
        at,
    )
}
