//! Candidate sets of series-term counts and leave-one-out model selection.
//!
//! The candidate set is the finite collection of K values the analyst is
//! willing to report. The default construction takes every integer between
//! 2n^{1/5} and 2n^{1/3}, both rounded up, so the set grows slowly with the
//! sample. Selection minimizes leave-one-out cross-validation computed from
//! hat-matrix diagonals, never by refitting. Ties break toward the smaller K;
//! the sup-t critical value supplies the coverage protection, so the cheaper
//! model wins.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::error::{Error, Result};
use crate::fit::{fit, loo_cv, Dataset, FitResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateRule {
    Explicit,
    SimulationRule,
    CvAnchored,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateSet {
    /// Strictly increasing K values.
    pub k_values: Vec<usize>,
    pub rule: CandidateRule,
    /// Cardinality; equals k_values.len().
    pub p: usize,
}

impl CandidateSet {
    fn from_values(k_values: Vec<usize>, rule: CandidateRule) -> Result<Self> {
        if k_values.is_empty() {
            return Err(Error::InvalidConfig("candidate set is empty".into()));
        }
        if !k_values.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidConfig(
                "candidate K values must be strictly increasing".into(),
            ));
        }
        let p = k_values.len();
        Ok(CandidateSet { k_values, rule, p })
    }

    pub fn min_k(&self) -> usize {
        self.k_values[0]
    }

    pub fn max_k(&self) -> usize {
        *self.k_values.last().unwrap()
    }
}

/// All integers in [ceil(2 n^{1/5}), ceil(2 n^{1/3})].
pub fn simulation_rule_set(n: usize) -> Result<CandidateSet> {
    if n < 2 {
        return Err(Error::InvalidConfig(format!("sample size {n} below 2")));
    }
    let nf = n as f64;
    let lo = (2.0 * nf.powf(0.2)).ceil() as usize;
    let hi = (2.0 * nf.powf(1.0 / 3.0)).ceil() as usize;
    CandidateSet::from_values((lo..=hi).collect(), CandidateRule::SimulationRule)
}

/// All integers in [k_cv, ceil(c1 * k_cv)] for a multiplier c1 > 1.
pub fn cv_anchored_set(k_cv: usize, c1: f64) -> Result<CandidateSet> {
    if !(c1 > 1.0) {
        return Err(Error::InvalidConfig(format!(
            "cv_anchored multiplier must exceed 1, got {c1}"
        )));
    }
    if k_cv == 0 {
        return Err(Error::InvalidConfig("cv_anchored needs k_cv >= 1".into()));
    }
    let hi = (c1 * k_cv as f64).ceil() as usize;
    CandidateSet::from_values((k_cv..=hi).collect(), CandidateRule::CvAnchored)
}

/// User-supplied list, validated. Input order is irrelevant (set semantics)
/// but duplicates are rejected.
pub fn explicit_set(mut k_values: Vec<usize>) -> Result<CandidateSet> {
    k_values.sort_unstable();
    if k_values.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidConfig(
            "explicit candidate list contains duplicates".into(),
        ));
    }
    CandidateSet::from_values(k_values, CandidateRule::Explicit)
}

/// One bumped (undersmoothed) selection, e.g. "cv+" = K_cv + 2 clipped to the
/// candidate range. `clipped` flags when the requested bump fell outside.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Bump {
    pub requested: usize,
    pub used: usize,
    pub clipped: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Selection {
    pub k_cv: usize,
    pub cv_scores: BTreeMap<usize, f64>,
    pub bumped: BTreeMap<String, Bump>,
}

/// Fit every candidate and pick the CV minimizer. Returns the fits keyed by K
/// so downstream inference reuses them instead of refitting.
pub fn select_cv_with_fits(
    data: &Dataset,
    set: &CandidateSet,
    template: impl Fn(usize) -> BasisSpec,
) -> Result<(Selection, BTreeMap<usize, FitResult>)> {
    let mut fits = BTreeMap::new();
    let mut cv_scores = BTreeMap::new();
    for &k in &set.k_values {
        let spec = template(k);
        let f = fit(data, &spec).map_err(|e| Error::CandidateFit {
            k,
            source: Box::new(e),
        })?;
        let score = loo_cv(&f).map_err(|e| Error::CandidateFit {
            k,
            source: Box::new(e),
        })?;
        if !score.is_finite() {
            return Err(Error::CandidateFit {
                k,
                source: Box::new(Error::Numerical(format!("CV score {score}"))),
            });
        }
        cv_scores.insert(k, score);
        fits.insert(k, f);
    }
    // argmin with ties toward smaller K: BTreeMap iterates ascending and the
    // strict < keeps the first minimizer.
    let mut k_cv = set.k_values[0];
    let mut best = f64::INFINITY;
    for (&k, &s) in &cv_scores {
        if s < best {
            best = s;
            k_cv = k;
        }
    }
    let requested = k_cv + 2;
    let used = requested.min(set.max_k());
    let mut bumped = BTreeMap::new();
    bumped.insert(
        "cv+".to_string(),
        Bump {
            requested,
            used,
            clipped: used != requested,
        },
    );
    Ok((
        Selection {
            k_cv,
            cv_scores,
            bumped,
        },
        fits,
    ))
}

pub fn select_cv(
    data: &Dataset,
    set: &CandidateSet,
    template: impl Fn(usize) -> BasisSpec,
) -> Result<Selection> {
    select_cv_with_fits(data, set, template).map(|(s, _)| s)
}
