//! Candidate construction for large covariate sets: nested models from
//! marginal correlation ranking, or active sets along an L1 path.

use std::io::Write;

use crate::data::{fmt_f64, CandidateSpec, Dataset};
use crate::error::{Error, Result};
use crate::estimator::{l1_fit_design, CoordinateDescentOptions, IndexCoefficients};
use crate::kernel::Bandwidth;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScreenMethod {
    CorrelationNested,
    LambdaPath,
}

#[derive(Debug, Clone)]
pub enum ScreenInfo {
    /// Covariate added at this step and its absolute correlation with `y`.
    Rank { covariate: usize, abs_corr: f64 },
    /// Penalty level and the penalized estimate on the screening design,
    /// restricted to the candidate's covariates.
    Lambda { lambda: f64, beta: IndexCoefficients },
}

#[derive(Debug, Clone)]
pub struct ScreenResult {
    pub method: ScreenMethod,
    pub candidates: Vec<CandidateSpec>,
    pub provenance: Vec<ScreenInfo>,
}

impl ScreenResult {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// One row per candidate: id, method, lambda or rank score, members.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["candidate", "method", "lambda", "abs_corr", "indices"])?;
        let method = match self.method {
            ScreenMethod::CorrelationNested => "correlation",
            ScreenMethod::LambdaPath => "lambda-path",
        };
        for (i, (spec, info)) in self.candidates.iter().zip(&self.provenance).enumerate() {
            let (lambda, score) = match info {
                ScreenInfo::Rank { abs_corr, .. } => (String::new(), fmt_f64(*abs_corr)),
                ScreenInfo::Lambda { lambda, .. } => (fmt_f64(*lambda), String::new()),
            };
            w.write_record([i.to_string(), method.to_string(), lambda, score, spec.label()])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn pearson_abs(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).abs())
}

fn check_disjoint(p: usize, a: &[usize], b: &[usize]) -> Result<()> {
    for &i in a.iter().chain(b) {
        if i >= p {
            return Err(Error::invalid(format!("covariate index {i} out of range 0..{p}")));
        }
    }
    if let Some(i) = a.iter().find(|i| b.contains(i)) {
        return Err(Error::invalid(format!("covariate {i} is both forced and excluded")));
    }
    Ok(())
}

/// Candidate `k` (for `k = 1..count`) holds `forced` followed by the `k`
/// covariates with the largest absolute correlation with the response.
/// `forced` must be nonempty; its first entry is the anchor.
pub fn screen_by_correlation(
    data: &Dataset,
    forced: &[usize],
    excluded: &[usize],
    count: usize,
) -> Result<ScreenResult> {
    let p = data.p();
    if data.n() < 3 {
        return Err(Error::invalid("correlation screening needs at least 3 observations"));
    }
    if forced.is_empty() {
        return Err(Error::invalid("at least the anchor covariate must be forced"));
    }
    check_disjoint(p, forced, excluded)?;
    let pool: Vec<usize> = (0..p)
        .filter(|i| !forced.contains(i) && !excluded.contains(i))
        .collect();
    if count == 0 || count > pool.len() {
        return Err(Error::invalid(format!(
            "requested {count} nested candidates, {} covariates are available",
            pool.len()
        )));
    }
    let y = data.y();
    let mut ranked: Vec<(usize, f64)> = pool
        .iter()
        .map(|&j| {
            let r = pearson_abs(data.column(j), y).unwrap_or_else(|| {
                log::warn!("covariate {j} has zero variance; correlation set to 0");
                0.0
            });
            (j, r)
        })
        .collect();
    // Stable sort keeps the smaller index first among ties.
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));

    let mut indices = forced.to_vec();
    let mut candidates = Vec::with_capacity(count);
    let mut provenance = Vec::with_capacity(count);
    for &(j, r) in ranked.iter().take(count) {
        indices.push(j);
        candidates.push(CandidateSpec::new(indices.clone(), p)?);
        provenance.push(ScreenInfo::Rank { covariate: j, abs_corr: r });
    }
    Ok(ScreenResult {
        method: ScreenMethod::CorrelationNested,
        candidates,
        provenance,
    })
}

/// `count` evenly spaced values from `lo` to `hi`, both included.
pub fn lambda_grid(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && lo < hi && hi.is_finite()) {
        return Err(Error::invalid(format!(
            "penalty range needs 0 < min < max, got [{lo}, {hi}]"
        )));
    }
    if count < 2 {
        return Err(Error::invalid("the penalty grid needs at least 2 points"));
    }
    let step = (hi - lo) / (count - 1) as f64;
    Ok((0..count)
        .map(|k| if k + 1 == count { hi } else { lo + step * k as f64 })
        .collect())
}

/// Fits the L1-penalized model on every covariate except `excluded`
/// (covariate 0 first, as anchor) along a descending penalty grid with
/// warm starts, and returns one candidate per distinct active set, in
/// increasing order of penalty. A repeated active set keeps its smallest
/// penalty.
pub fn screen_by_lambda_path(
    data: &Dataset,
    excluded: &[usize],
    lambda_min: f64,
    lambda_max: f64,
    count: usize,
    h: &Bandwidth,
    opts: &CoordinateDescentOptions,
) -> Result<ScreenResult> {
    let p = data.p();
    check_disjoint(p, &[0], excluded)?;
    let grid = lambda_grid(lambda_min, lambda_max, count)?;
    let covariates: Vec<usize> = (0..p).filter(|i| !excluded.contains(i)).collect();
    let full = CandidateSpec::new(covariates, p)?;
    let x = data.design(&full);

    // (lambda, active positions, beta) in descending lambda.
    let mut path: Vec<(f64, Vec<usize>, IndexCoefficients)> = Vec::with_capacity(count);
    let mut warm: Option<IndexCoefficients> = None;
    for &lambda in grid.iter().rev() {
        let fit = l1_fit_design(&x, data.y(), lambda, h.h, warm.as_ref(), opts)?;
        if !fit.converged {
            log::warn!("coordinate descent at lambda {lambda} stopped before converging");
        }
        warm = Some(fit.beta_hat.clone());
        match path.last_mut() {
            Some(last) if last.1 == fit.active_set => {
                *last = (lambda, fit.active_set, fit.beta_hat);
            }
            _ => path.push((lambda, fit.active_set, fit.beta_hat)),
        }
    }
    // Non-adjacent repeats collapse as well.
    let mut distinct: Vec<(f64, Vec<usize>, IndexCoefficients)> = Vec::new();
    for entry in path.into_iter().rev() {
        if !distinct.iter().any(|d| d.1 == entry.1) {
            distinct.push(entry);
        }
    }
    if distinct.iter().all(|d| d.1.len() == 1) {
        return Err(Error::DegenerateScreen);
    }
    let mut candidates = Vec::with_capacity(distinct.len());
    let mut provenance = Vec::with_capacity(distinct.len());
    for (lambda, active, beta) in distinct {
        let indices: Vec<usize> = active.iter().map(|&r| full.indices()[r]).collect();
        let coef: Vec<f64> = active.iter().map(|&r| beta.as_slice()[r]).collect();
        candidates.push(CandidateSpec::new(indices, p)?);
        provenance.push(ScreenInfo::Lambda {
            lambda,
            beta: IndexCoefficients::new(coef)?,
        });
    }
    Ok(ScreenResult {
        method: ScreenMethod::LambdaPath,
        candidates,
        provenance,
    })
}
