//! Partially linear model y = theta0 * w + g0(x) + eps, with g0 absorbed by
//! a series control basis and theta0 estimated by partialling out:
//!
//! ```text
//! theta_hat(K) = (W' M_K W)^{-1} W' M_K Y,   M_K = I - P(P'P)^{-1}P'.
//! ```
//!
//! Standard errors come in two flavors. `hc0` is the usual sandwich with
//! kappa_{ij} = 1{i=j}, valid when K/n vanishes. `cross_term_full` keeps the
//! full squared-annihilator mass (1/n) sum_ij M_{K,ij}^2 vhat_i^2 ehat_j^2,
//! which stays consistent when K grows proportionally with n. Across
//! candidate K values the correlation of theta_hat(K) is estimated from the
//! same double-sum structure, and a sup-t critical value from that matrix
//! gives intervals that remain valid no matter which K is reported.
//!
//! Double sums over (i, j) are evaluated in trace form: with Q the thin
//! orthonormal factor of the controls, M_{ij} = delta_ij - q_i.q_j, so each
//! pair cost is O(n d^2) instead of O(n^2).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{CrossKCorrelation, Dataset};
use crate::suptstat::{
    pointwise_critical_value, robust_ci, standard_z, CriticalValueResult, Interval,
};

/// Assumption floor for annihilator diagonals; observations this close to
/// being interpolated by the controls break the many-regressor asymptotics.
const M_DIAG_FLOOR: f64 = 0.01;

#[derive(Debug, Clone)]
pub struct PlmFit {
    pub theta_hat: f64,
    pub k: usize,
    /// Diagonal of M_K; entries in [0, 1], summing to n - rank(controls).
    pub m_diag: DVector<f64>,
    /// vhat = M_K W.
    pub v_hat: DVector<f64>,
    /// ehat = M_K (Y - W theta_hat).
    pub eps_hat: DVector<f64>,
    /// Gamma_hat = W' M_K W / n.
    pub gamma_hat: f64,
    /// Descriptor of the control columns, for reports.
    pub basis: String,
    pub n: usize,
    /// Thin orthonormal factor of the controls: M_ij = delta_ij - q_i.q_j.
    pub q: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KappaMode {
    Hc0,
    CrossTermFull,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlmVariance {
    pub v_hat_n: f64,
    pub omega_hat: f64,
    pub kappa_mode: KappaMode,
    /// Cross-K covariance entries when computed as part of a joint analysis.
    pub cross: Option<Vec<f64>>,
}

pub fn plm_fit(
    data: &Dataset,
    k: usize,
    controls: &DMatrix<f64>,
    basis: impl Into<String>,
) -> Result<PlmFit> {
    let w = data
        .w
        .as_ref()
        .ok_or_else(|| Error::InvalidData("partially linear model needs a w column".into()))?;
    let n = data.n();
    let dim = controls.ncols();
    if controls.nrows() != n {
        return Err(Error::InvalidData(format!(
            "controls have {} rows for {} observations",
            controls.nrows(),
            n
        )));
    }
    if n <= k + 1 || n <= dim {
        return Err(Error::TooFewObservations { n, dim, k });
    }

    let qr = controls.clone().qr();
    let q_full = qr.q();
    let r = qr.r();
    let sv = r.clone().svd(false, false).singular_values;
    let (smin, smax) = sv.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &s| {
        (lo.min(s), hi.max(s))
    });
    if !(smax > 0.0) || smin / smax <= 1e-10 {
        return Err(Error::RankDeficient {
            k,
            ratio: if smax > 0.0 { smin / smax } else { 0.0 },
        });
    }

    let mut m_diag = DVector::zeros(n);
    for i in 0..n {
        let h = q_full.row(i).norm_squared().clamp(0.0, 1.0);
        let m = 1.0 - h;
        if m < M_DIAG_FLOOR {
            return Err(Error::Numerical(format!(
                "annihilator diagonal {m:.4} at observation {i} is below the {M_DIAG_FLOOR} floor for K={k}"
            )));
        }
        m_diag[i] = m;
    }
    let trace: f64 = m_diag.iter().sum();
    if (trace - (n - dim) as f64).abs() > 1e-6 {
        return Err(Error::Numerical(format!(
            "annihilator trace {trace} differs from n - rank = {}",
            n - dim
        )));
    }

    let wv = DVector::from_column_slice(w);
    let yv = DVector::from_column_slice(&data.y);
    // Residual maker through the orthonormal factor: Mz = z - Q(Q'z).
    let v_hat = &wv - &q_full * (q_full.transpose() * &wv);
    let y_res = &yv - &q_full * (q_full.transpose() * &yv);
    let vv = v_hat.norm_squared();
    let gamma_hat = vv / n as f64;
    if !(gamma_hat > 0.0) || !gamma_hat.is_finite() {
        return Err(Error::DegenerateVariance {
            k,
            value: gamma_hat,
        });
    }
    let theta_hat = v_hat.dot(&y_res) / vv;
    let eps_hat = y_res - &v_hat * theta_hat;

    // Orthogonality of the partialled-out vectors to every control column.
    // The normalization floors at the input scale: a residual vector that is
    // zero relative to the data is orthogonal by convention, and the floor
    // keeps accumulated machine noise in the dot product from firing the
    // check when the residual norm itself is just roundoff.
    let v_scale = v_hat.norm().max(1e-6 * wv.norm()).max(1e-300);
    let e_scale = eps_hat.norm().max(1e-6 * yv.norm()).max(1e-300);
    for c in 0..dim {
        let col = controls.column(c);
        let scale = col.norm().max(1e-300);
        let dv = col.dot(&v_hat) / (scale * v_scale);
        let de = col.dot(&eps_hat) / (scale * e_scale);
        if dv.abs() > 1e-8 || de.abs() > 1e-8 {
            return Err(Error::Numerical(format!(
                "partialling out left correlation with control column {c}"
            )));
        }
    }

    Ok(PlmFit {
        theta_hat,
        k,
        m_diag,
        v_hat,
        eps_hat,
        gamma_hat,
        basis: basis.into(),
        n,
        q: q_full,
    })
}

/// The off-diagonal-capable double sum
/// (1/n) sum_ij M_{l,ij} M_{l',ij} a_i b_j in trace form.
fn annihilator_double_sum(f1: &PlmFit, f2: &PlmFit, a: &[f64], b: &[f64]) -> f64 {
    let n = f1.n;
    let mut diag = 0.0;
    for i in 0..n {
        let h1 = 1.0 - f1.m_diag[i];
        let h2 = 1.0 - f2.m_diag[i];
        diag += a[i] * b[i] * (1.0 - h1 - h2);
    }
    let mut qa = f1.q.clone();
    let mut qb = f1.q.clone();
    for i in 0..n {
        qa.row_mut(i).scale_mut(a[i]);
        qb.row_mut(i).scale_mut(b[i]);
    }
    let a_mat = qa.transpose() * &f2.q;
    let b_mat = qb.transpose() * &f2.q;
    (diag + a_mat.dot(&b_mat)) / n as f64
}

pub fn plm_variance(fit: &PlmFit, mode: KappaMode) -> Result<PlmVariance> {
    let n = fit.n;
    let omega_hat = match mode {
        KappaMode::Hc0 => {
            let mut acc = 0.0;
            for i in 0..n {
                acc += fit.v_hat[i] * fit.v_hat[i] * fit.eps_hat[i] * fit.eps_hat[i];
            }
            acc / n as f64
        }
        KappaMode::CrossTermFull => {
            let a: Vec<f64> = fit.v_hat.iter().map(|v| v * v).collect();
            let b: Vec<f64> = fit.eps_hat.iter().map(|e| e * e).collect();
            // Gram diagonal; tiny negatives are roundoff.
            annihilator_double_sum(fit, fit, &a, &b).max(0.0)
        }
    };
    if !(fit.gamma_hat > 0.0) {
        return Err(Error::DegenerateVariance {
            k: fit.k,
            value: fit.gamma_hat,
        });
    }
    let v_hat_n = omega_hat / (fit.gamma_hat * fit.gamma_hat);
    Ok(PlmVariance {
        v_hat_n,
        omega_hat,
        kappa_mode: mode,
        cross: None,
    })
}

/// sqrt(V_hat_n / n) under the chosen kappa mode.
pub fn plm_se(fit: &PlmFit, mode: KappaMode) -> Result<f64> {
    Ok((plm_variance(fit, mode)?.v_hat_n / fit.n as f64).sqrt())
}

/// Correlation of theta_hat across candidate control sizes, from the full
/// double-sum covariance normalized by its own diagonal, so the matrix is a
/// Gram matrix (PSD) with exact unit diagonal.
pub fn plm_cross_corr(fits: &[&PlmFit]) -> Result<CrossKCorrelation> {
    if fits.is_empty() {
        return Err(Error::InvalidConfig("no fits supplied".into()));
    }
    let n = fits[0].n;
    if fits.iter().any(|f| f.n != n) {
        return Err(Error::InvalidData(
            "cross-K correlation requires fits on a common dataset".into(),
        ));
    }
    let p = fits.len();
    let mut vmat = DMatrix::zeros(p, p);
    for l in 0..p {
        for m in l..p {
            let a: Vec<f64> = (0..n).map(|i| fits[l].v_hat[i] * fits[m].v_hat[i]).collect();
            let b: Vec<f64> = (0..n)
                .map(|j| fits[l].eps_hat[j] * fits[m].eps_hat[j])
                .collect();
            let omega = annihilator_double_sum(fits[l], fits[m], &a, &b);
            let v = omega / (fits[l].gamma_hat * fits[m].gamma_hat);
            vmat[(l, m)] = v;
            vmat[(m, l)] = v;
        }
    }
    let mut variances = Vec::with_capacity(p);
    for l in 0..p {
        let v = vmat[(l, l)];
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::DegenerateVariance {
                k: fits[l].k,
                value: v,
            });
        }
        variances.push(v);
    }
    let mut sigma = DMatrix::identity(p, p);
    for l in 0..p {
        for m in (l + 1)..p {
            let rho = vmat[(l, m)] / (variances[l] * variances[m]).sqrt();
            sigma[(l, m)] = rho;
            sigma[(m, l)] = rho;
        }
    }
    CrossKCorrelation::new(
        sigma,
        fits.iter().map(|f| f.k).collect(),
        variances,
        "theta".into(),
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlmKReport {
    pub k: usize,
    pub theta_hat: f64,
    pub se_hc0: f64,
    pub se_cross_term: f64,
    pub ci_standard: Interval,
    pub ci_robust: Interval,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlmReport {
    pub per_k: Vec<PlmKReport>,
    pub c_hat: f64,
    pub alpha: f64,
    #[serde(rename = "B")]
    pub draws: u64,
    pub seed: u64,
    pub sigma_hat: Vec<Vec<f64>>,
    pub critical_value: CriticalValueResult,
}

/// Per-K intervals sharing one sup-t critical value: the standard interval
/// is theta_hat +- z * se_hc0, the robust one replaces z with c_hat from the
/// cross-K correlation so it survives reporting any K in the list.
pub fn plm_robust_ci(
    fits: &[&PlmFit],
    alpha: f64,
    b: u64,
    seed: u64,
) -> Result<PlmReport> {
    let sigma = plm_cross_corr(fits)?;
    let cv = pointwise_critical_value(&sigma, alpha, b, seed)?;
    let z = standard_z(alpha);
    let mut per_k = Vec::with_capacity(fits.len());
    for f in fits {
        let se_hc0 = plm_se(f, KappaMode::Hc0)?;
        let se_ctf = plm_se(f, KappaMode::CrossTermFull)?;
        if !(se_hc0 > 0.0) {
            return Err(Error::DegenerateVariance {
                k: f.k,
                value: se_hc0,
            });
        }
        per_k.push(PlmKReport {
            k: f.k,
            theta_hat: f.theta_hat,
            se_hc0,
            se_cross_term: se_ctf,
            ci_standard: robust_ci(f.theta_hat, se_hc0, z)?,
            ci_robust: robust_ci(f.theta_hat, se_hc0, cv.c_hat)?,
        });
    }
    let p = sigma.p();
    let sigma_rows = (0..p)
        .map(|l| (0..p).map(|m| sigma.sigma_hat[(l, m)]).collect())
        .collect();
    Ok(PlmReport {
        per_k,
        c_hat: cv.c_hat,
        alpha,
        draws: b,
        seed,
        sigma_hat: sigma_rows,
        critical_value: cv,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{build_basis, BasisSpec};
    use crate::rng::stream;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn synthetic(seed: u64, n: usize, theta: f64) -> (Dataset, DMatrix<f64>) {
        let mut rng = stream(seed, &[0]);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let x: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let w: Vec<f64> = x
            .iter()
            .map(|&t| 0.5 - t + normal.sample(&mut rng))
            .collect();
        let y: Vec<f64> = x
            .iter()
            .zip(&w)
            .map(|(&t, &wi)| theta * wi + (1.0 + 2.0 * t) + 0.5 * normal.sample(&mut rng))
            .collect();
        let data = Dataset::with_treatment(x.clone(), y, Some(w)).unwrap();
        let spec = BasisSpec::quadratic_spline(5, (0.0, 1.0));
        let controls = build_basis(&spec, &x).unwrap().values;
        (data, controls)
    }

    fn intercept_controls(n: usize) -> DMatrix<f64> {
        DMatrix::from_element(n, 1, 1.0)
    }

    #[test]
    fn fwl_matches_joint_ols() {
        let (data, controls) = synthetic(1, 200, 1.5);
        let f = plm_fit(&data, 5, &controls, "quadratic_spline(5)").unwrap();
        // Joint OLS of y on [w, controls]; the w coefficient must agree.
        let n = data.n();
        let dim = controls.ncols();
        let mut joint = DMatrix::zeros(n, dim + 1);
        for i in 0..n {
            joint[(i, 0)] = data.w.as_ref().unwrap()[i];
            for c in 0..dim {
                joint[(i, c + 1)] = controls[(i, c)];
            }
        }
        let y = DVector::from_column_slice(&data.y);
        let beta = (joint.transpose() * &joint)
            .try_inverse()
            .unwrap()
            * (joint.transpose() * &y);
        assert_abs_diff_eq!(f.theta_hat, beta[0], epsilon = 1e-8);
    }

    #[test]
    fn intercept_controls_give_demeaned_slope_and_textbook_hc0() {
        let n = 150;
        let mut rng = stream(2, &[0]);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let w: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
        let y: Vec<f64> = w
            .iter()
            .map(|&wi| 2.0 + 0.7 * wi + normal.sample(&mut rng))
            .collect();
        let x: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        let data = Dataset::with_treatment(x, y.clone(), Some(w.clone())).unwrap();
        let f = plm_fit(&data, 0, &intercept_controls(n), "intercept").unwrap();

        let wbar = w.iter().sum::<f64>() / n as f64;
        let ybar = y.iter().sum::<f64>() / n as f64;
        let sxy: f64 = w.iter().zip(&y).map(|(wi, yi)| (wi - wbar) * (yi - ybar)).sum();
        let sxx: f64 = w.iter().map(|wi| (wi - wbar) * (wi - wbar)).sum();
        assert_abs_diff_eq!(f.theta_hat, sxy / sxx, epsilon = 1e-10);

        // Textbook HC0 sandwich for the slope of simple regression:
        // sum (w - wbar)^2 e^2 / (sum (w - wbar)^2)^2 with e the OLS
        // residuals of y on (1, w).
        let slope = sxy / sxx;
        let intercept = ybar - slope * wbar;
        let mut num = 0.0;
        for i in 0..n {
            let e = y[i] - intercept - slope * w[i];
            num += (w[i] - wbar) * (w[i] - wbar) * e * e;
        }
        let se_textbook = (num / (sxx * sxx)).sqrt();
        let se = plm_se(&f, KappaMode::Hc0).unwrap();
        assert_abs_diff_eq!(se, se_textbook, epsilon = 1e-10 * se_textbook.max(1.0));
    }

    #[test]
    fn orthogonal_w_reduces_to_plain_projection() {
        let n = 60;
        let mut rng = stream(3, &[0]);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut w: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
        let mean = w.iter().sum::<f64>() / n as f64;
        for v in &mut w {
            *v -= mean; // exactly orthogonal to the intercept column
        }
        let y: Vec<f64> = w.iter().map(|&wi| 3.0 * wi + 1.0).collect();
        let x: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        let data = Dataset::with_treatment(x, y.clone(), Some(w.clone())).unwrap();
        let f = plm_fit(&data, 0, &intercept_controls(n), "intercept").unwrap();
        let wy: f64 = w.iter().zip(&y).map(|(a, b)| a * b).sum();
        let ww: f64 = w.iter().map(|a| a * a).sum();
        assert_abs_diff_eq!(f.theta_hat, wy / ww, epsilon = 1e-10);
    }

    #[test]
    fn zero_residuals_give_zero_variance() {
        let n = 40;
        let mut rng = stream(4, &[0]);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let w: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
        // Exact linear truth with no noise: y = 2 + 1.5 w.
        let y: Vec<f64> = w.iter().map(|&wi| 2.0 + 1.5 * wi).collect();
        let x: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        let data = Dataset::with_treatment(x, y, Some(w)).unwrap();
        let f = plm_fit(&data, 0, &intercept_controls(n), "intercept").unwrap();
        for mode in [KappaMode::Hc0, KappaMode::CrossTermFull] {
            let v = plm_variance(&f, mode).unwrap();
            assert_abs_diff_eq!(v.omega_hat, 0.0, epsilon = 1e-18);
            assert_abs_diff_eq!(v.v_hat_n, 0.0, epsilon = 1e-18);
        }
    }

    #[test]
    fn cross_term_double_sum_matches_naive_loops() {
        let (data, controls) = synthetic(5, 50, 0.8);
        let f5 = plm_fit(&data, 5, &controls, "s5").unwrap();
        let spec3 = BasisSpec::quadratic_spline(3, (0.0, 1.0));
        let controls3 = build_basis(&spec3, &data.x).unwrap().values;
        let f3 = plm_fit(&data, 3, &controls3, "s3").unwrap();

        let n = data.n();
        // Explicit annihilators.
        let m_of = |q: &DMatrix<f64>| {
            let mut m = DMatrix::identity(n, n);
            m -= q * q.transpose();
            m
        };
        let m5 = m_of(&f5.q);
        let m3 = m_of(&f3.q);

        // Same-K full cross-term omega against the O(n^2) definition.
        let v = plm_variance(&f5, KappaMode::CrossTermFull).unwrap();
        let mut naive = 0.0;
        for i in 0..n {
            for j in 0..n {
                naive += m5[(i, j)] * m5[(i, j)]
                    * f5.v_hat[i] * f5.v_hat[i]
                    * f5.eps_hat[j] * f5.eps_hat[j];
            }
        }
        naive /= n as f64;
        assert_abs_diff_eq!(v.omega_hat, naive, epsilon = 1e-10 * naive.max(1.0));

        // Cross-K correlation against the same double loop.
        let corr = plm_cross_corr(&[&f3, &f5]).unwrap();
        let mut omega_lm = 0.0;
        for i in 0..n {
            for j in 0..n {
                omega_lm += m3[(i, j)] * m5[(i, j)]
                    * (f3.v_hat[i] * f5.v_hat[i])
                    * (f3.eps_hat[j] * f5.eps_hat[j]);
            }
        }
        omega_lm /= n as f64;
        let v_lm = omega_lm / (f3.gamma_hat * f5.gamma_hat);
        let rho = v_lm / (corr.point_variances[0] * corr.point_variances[1]).sqrt();
        assert_abs_diff_eq!(corr.sigma_hat[(0, 1)], rho, epsilon = 1e-10);
    }

    #[test]
    fn three_point_hand_example() {
        // Intercept-only controls on n=3: M = I - J/3, M_ii = 2/3,
        // M_ij = -1/3. With vhat and ehat the demeaned w and residuals,
        // omega_ctf = (1/3) sum_ij M_ij^2 v_i^2 e_j^2.
        let w = vec![1.0, 2.0, 4.0];
        let y = vec![1.0, 3.0, 4.0];
        let x = vec![0.1, 0.5, 0.9];
        let data = Dataset::with_treatment(x, y, Some(w)).unwrap();
        let f = plm_fit(&data, 0, &intercept_controls(3), "intercept").unwrap();
        let v = plm_variance(&f, KappaMode::CrossTermFull).unwrap();
        let mut naive = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let mij: f64 = if i == j { 2.0 / 3.0 } else { -1.0 / 3.0 };
                naive += mij * mij
                    * f.v_hat[i] * f.v_hat[i]
                    * f.eps_hat[j] * f.eps_hat[j];
            }
        }
        naive /= 3.0;
        assert_abs_diff_eq!(v.omega_hat, naive, epsilon = 1e-12);
        let h = plm_variance(&f, KappaMode::Hc0).unwrap();
        assert!(h.omega_hat >= 0.0 && v.omega_hat >= 0.0);
    }

    #[test]
    fn single_and_duplicated_fits() {
        let (data, controls) = synthetic(6, 80, 1.0);
        let f = plm_fit(&data, 5, &controls, "s5").unwrap();
        let single = plm_cross_corr(&[&f]).unwrap();
        assert_eq!(single.p(), 1);
        assert_abs_diff_eq!(single.sigma_hat[(0, 0)], 1.0, epsilon = 1e-12);
        let dup = plm_cross_corr(&[&f, &f]).unwrap();
        assert_abs_diff_eq!(dup.sigma_hat[(0, 1)], 1.0, epsilon = 1e-10);
    }

    #[test]
    fn scale_equivariance_in_w() {
        let (data, controls) = synthetic(7, 120, 0.6);
        let c = 4.0;
        let w2: Vec<f64> = data.w.as_ref().unwrap().iter().map(|v| c * v).collect();
        let data2 =
            Dataset::with_treatment(data.x.clone(), data.y.clone(), Some(w2)).unwrap();
        let f1 = plm_fit(&data, 5, &controls, "s5").unwrap();
        let f2 = plm_fit(&data2, 5, &controls, "s5").unwrap();
        assert_abs_diff_eq!(f2.theta_hat, f1.theta_hat / c, epsilon = 1e-10);
        for mode in [KappaMode::Hc0, KappaMode::CrossTermFull] {
            let se1 = plm_se(&f1, mode).unwrap();
            let se2 = plm_se(&f2, mode).unwrap();
            assert_abs_diff_eq!(se2, se1 / c, epsilon = 1e-10 * se1);
            let t1 = f1.theta_hat / se1;
            let t2 = f2.theta_hat / se2;
            assert_abs_diff_eq!(t1, t2, epsilon = 1e-10 * t1.abs().max(1.0));
        }
    }

    #[test]
    fn saturated_observation_is_named() {
        // An indicator column for observation 0 forces M_00 = 0.
        let n = 30;
        let mut rng = stream(8, &[0]);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let w: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
        let y: Vec<f64> = w.iter().map(|&wi| wi + normal.sample(&mut rng)).collect();
        let x: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        let data = Dataset::with_treatment(x, y, Some(w)).unwrap();
        let mut controls = DMatrix::from_element(n, 2, 1.0);
        controls[(0, 1)] = 1.0;
        for i in 1..n {
            controls[(i, 1)] = 0.0;
        }
        let err = plm_fit(&data, 0, &controls, "dummy").unwrap_err();
        match err {
            Error::Numerical(msg) => assert!(msg.contains("observation 0"), "{msg}"),
            other => panic!("expected numerical error, got {other:?}"),
        }
    }

    #[test]
    fn robust_report_nests_standard_intervals() {
        let (data, _) = synthetic(9, 200, 1.2);
        let fits: Vec<PlmFit> = [3usize, 5, 8]
            .iter()
            .map(|&k| {
                let spec = BasisSpec::quadratic_spline(k, (0.0, 1.0));
                let c = build_basis(&spec, &data.x).unwrap().values;
                plm_fit(&data, k, &c, format!("quadratic_spline({k})")).unwrap()
            })
            .collect();
        let refs: Vec<&PlmFit> = fits.iter().collect();
        let report = plm_robust_ci(&refs, 0.05, 5000, 42).unwrap();
        assert!(report.c_hat >= 1.96 - 3.0 * report.critical_value.mc_se);
        for kr in &report.per_k {
            assert!(kr.ci_robust.lower <= kr.ci_standard.lower + 1e-12);
            assert!(kr.ci_robust.upper >= kr.ci_standard.upper - 1e-12);
            assert!(kr.se_hc0 > 0.0 && kr.se_cross_term > 0.0);
        }
        let js = serde_json::to_value(&report).unwrap();
        assert!(js.get("B").is_some());
        assert!(js["per_k"][0].get("se_cross_term").is_some());
    }

    #[test]
    fn missing_w_is_rejected() {
        let data = Dataset::new(vec![0.1, 0.5, 0.9], vec![1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(
            plm_fit(&data, 0, &intercept_controls(3), "intercept"),
            Err(Error::InvalidData(_))
        ));
    }
}
