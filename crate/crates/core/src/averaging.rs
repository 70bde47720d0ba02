//! End-to-end averaging: fit a candidate set, derive the weights of every
//! comparison method, and combine predictions.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::data::{BlockPartition, CandidateSpec, Dataset};
use crate::error::{Error, Result};
use crate::estimator::{
    fit_regularized_candidate, nls_fit_with, predict_for_evaluation, predict_unchecked, FitOptions,
    FittedCandidate,
    IndexCoefficients,
};
use crate::kernel::select_bandwidth;
use crate::screening::{screen_by_lambda_path, ScreenInfo, ScreenResult};
use crate::weights::{
    build_cv_gram, ic_scores, select_min, softmax_half, solve_simplex_qp_robust, Criterion, CvGram,
    IcScores, QpSolution,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Jcvma,
    Aic,
    Bic,
    Aicc,
    Saic,
    Sbic,
    Saicc,
    Full,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Jcvma,
        Method::Aic,
        Method::Bic,
        Method::Aicc,
        Method::Saic,
        Method::Sbic,
        Method::Saicc,
        Method::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Jcvma => "jcvma",
            Method::Aic => "aic",
            Method::Bic => "bic",
            Method::Aicc => "aicc",
            Method::Saic => "saic",
            Method::Sbic => "sbic",
            Method::Saicc => "saicc",
            Method::Full => "full",
        }
    }

    /// Comma-separated list; duplicates are dropped, order kept.
    pub fn parse_list(s: &str) -> Result<Vec<Method>> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let m: Method = part.parse()?;
            if !out.contains(&m) {
                out.push(m);
            }
        }
        if out.is_empty() {
            return Err(Error::invalid("empty method list"));
        }
        Ok(out)
    }

    fn criterion(self) -> Option<Criterion> {
        match self {
            Method::Aic | Method::Saic => Some(Criterion::Aic),
            Method::Bic | Method::Sbic => Some(Criterion::Bic),
            Method::Aicc | Method::Saicc => Some(Criterion::Aicc),
            _ => None,
        }
    }

    fn is_smoothed(self) -> bool {
        matches!(self, Method::Saic | Method::Sbic | Method::Saicc)
    }

    /// Selection methods put all weight on one candidate.
    pub fn is_selection(self) -> bool {
        matches!(self, Method::Aic | Method::Bic | Method::Aicc | Method::Full)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .iter()
            .copied()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown method '{s}'; expected one of jcvma, aic, bic, aicc, saic, sbic, saicc, full"
                ))
            })
    }
}

/// How one candidate is estimated.
#[derive(Debug, Clone)]
pub enum CandidateFit {
    Nls,
    /// L1-penalized at its own penalty, started from `init`.
    Regularized { lambda: f64, init: IndexCoefficients },
}

/// Candidates from the active sets of an L1 path over every covariate
/// except `excluded`, each refit at its own penalty from the path estimate.
/// The path bandwidth is selected at the anchor-only index.
pub fn lambda_path_plan(
    data: &Dataset,
    excluded: &[usize],
    lambda_min: f64,
    lambda_max: f64,
    count: usize,
    partition: &BlockPartition,
    opts: &FitOptions,
) -> Result<(ScreenResult, Vec<CandidateFit>)> {
    let anchor = CandidateSpec::new(vec![0], data.p())?;
    let h = select_bandwidth(data, &anchor, &[1.0], &opts.kappa_grid, partition)?;
    let screen = screen_by_lambda_path(data, excluded, lambda_min, lambda_max, count, &h, &opts.cd)?;
    let kinds = screen
        .provenance
        .iter()
        .map(|info| match info {
            ScreenInfo::Lambda { lambda, beta } => CandidateFit::Regularized {
                lambda: *lambda,
                init: beta.clone(),
            },
            ScreenInfo::Rank { .. } => unreachable!("path screening records penalties"),
        })
        .collect();
    Ok((screen, kinds))
}

/// Successfully fitted candidates, in request order.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub fits: Vec<FittedCandidate>,
    /// Position of each fit in the requested candidate list.
    pub source: Vec<usize>,
    /// Requested candidates whose fit failed, with the reason.
    pub dropped: Vec<(usize, String)>,
    pub partition: BlockPartition,
}

impl Ensemble {
    pub fn len(&self) -> usize {
        self.fits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fits.is_empty()
    }

    pub fn labels(&self) -> Vec<String> {
        self.fits.iter().map(|f| f.spec.label()).collect()
    }

    /// `S x m` matrix of candidate predictions at the rows of `x_new`
    /// (all covariates of the training data, in the same order).
    pub fn predict(&self, train: &Dataset, x_new: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x_new.ncols() != train.p() {
            return Err(Error::invalid(format!(
                "prediction rows have {} covariates, training data has {}",
                x_new.ncols(),
                train.p()
            )));
        }
        let rows: Vec<Vec<f64>> = self
            .fits
            .par_iter()
            .map(|fit| predict_unchecked(train, fit, &x_new.select_columns(fit.spec.indices())))
            .collect::<Result<_>>()?;
        let m = x_new.nrows();
        Ok(DMatrix::from_fn(self.fits.len(), m, |s, i| rows[s][i]))
    }

    /// [`Ensemble::predict`] for scoring simulated test samples: queries far
    /// outside the training index range do not fail.
    pub(crate) fn predict_for_evaluation(&self, train: &Dataset, x_new: &DMatrix<f64>) -> DMatrix<f64> {
        let rows: Vec<Vec<f64>> = self
            .fits
            .par_iter()
            .map(|fit| predict_for_evaluation(train, fit, &x_new.select_columns(fit.spec.indices())))
            .collect();
        DMatrix::from_fn(self.fits.len(), x_new.nrows(), |s, i| rows[s][i])
    }
}

/// Fits every candidate, in parallel. A candidate whose fit returns an
/// error is dropped and recorded; unconverged fits are kept.
pub fn fit_ensemble(
    data: &Dataset,
    specs: &[CandidateSpec],
    kinds: Option<&[CandidateFit]>,
    partition: &BlockPartition,
    opts: &FitOptions,
) -> Result<Ensemble> {
    if specs.is_empty() {
        return Err(Error::invalid("empty candidate set"));
    }
    if let Some(k) = kinds {
        if k.len() != specs.len() {
            return Err(Error::invalid("one fitting rule per candidate is required"));
        }
    }
    let results: Vec<Result<FittedCandidate>> = (0..specs.len())
        .into_par_iter()
        .map(|s| match kinds.map(|k| &k[s]) {
            None | Some(CandidateFit::Nls) => nls_fit_with(data, &specs[s], partition, opts, None),
            Some(CandidateFit::Regularized { lambda, init }) => fit_regularized_candidate(
                data,
                &specs[s],
                partition,
                *lambda,
                opts,
                Some(init),
            ),
        })
        .collect();
    let mut fits = Vec::new();
    let mut source = Vec::new();
    let mut dropped = Vec::new();
    for (s, r) in results.into_iter().enumerate() {
        match r {
            Ok(f) => {
                if !f.converged {
                    log::warn!("candidate [{}] did not converge", specs[s].label());
                }
                fits.push(f);
                source.push(s);
            }
            Err(e) => {
                log::warn!("candidate [{}] dropped: {e}", specs[s].label());
                dropped.push((s, e.to_string()));
            }
        }
    }
    if fits.is_empty() {
        return Err(Error::AllFitsFailed(dropped[0].1.clone()));
    }
    Ok(Ensemble {
        fits,
        source,
        dropped,
        partition: *partition,
    })
}

/// Weights of every requested method over the fitted candidates.
#[derive(Debug, Clone)]
pub struct Weighting {
    pub gram: Option<CvGram>,
    pub jcvma: Option<QpSolution>,
    /// `None` where the scores could not be computed.
    pub scores: Vec<Option<IcScores>>,
    pub weights: Vec<(Method, Vec<f64>)>,
    /// Chosen candidate for selection methods.
    pub selected: Vec<(Method, usize)>,
    /// Methods that produced no weights, with the reason.
    pub failed: Vec<(Method, String)>,
}

impl Weighting {
    pub fn weights_of(&self, m: Method) -> Option<&[f64]> {
        self.weights.iter().find(|(k, _)| *k == m).map(|(_, w)| w.as_slice())
    }

    pub fn selected_by(&self, m: Method) -> Option<usize> {
        self.selected.iter().find(|(k, _)| *k == m).map(|(_, s)| *s)
    }
}

/// Position of the candidate with the most covariates (earliest on ties).
pub fn largest_candidate(specs: &[&CandidateSpec]) -> usize {
    let mut best = 0;
    for (i, s) in specs.iter().enumerate() {
        if s.len() > specs[best].len() {
            best = i;
        }
    }
    best
}

fn unit(len: usize, i: usize) -> Vec<f64> {
    let mut w = vec![0.0; len];
    w[i] = 1.0;
    w
}

/// Computes the weights of `methods`. Selection by an information criterion
/// only considers converged candidates when at least one converged. A method
/// that fails is listed in `failed`; the call fails only when all do.
pub fn weigh(data: &Dataset, ensemble: &Ensemble, methods: &[Method]) -> Result<Weighting> {
    let s = ensemble.len();
    let need_ic = methods.iter().any(|m| m.criterion().is_some());
    let scores: Vec<Option<IcScores>> = if need_ic {
        ensemble
            .fits
            .par_iter()
            .map(|f| match ic_scores(data, f) {
                Ok(sc) => Some(sc),
                Err(e) => {
                    log::warn!("scores for [{}] unavailable: {e}", f.spec.label());
                    None
                }
            })
            .collect()
    } else {
        vec![None; s]
    };
    let any_converged = ensemble.fits.iter().any(|f| f.converged);

    let mut out = Weighting {
        gram: None,
        jcvma: None,
        scores,
        weights: Vec::new(),
        selected: Vec::new(),
        failed: Vec::new(),
    };
    let mut first_error = None;
    for &m in methods {
        let attempt = (|| -> Result<Vec<f64>> {
            Ok(match m {
                Method::Jcvma => {
                    let gram = build_cv_gram(&ensemble.fits, data.y())?;
                    let sol = solve_simplex_qp_robust(&gram)?;
                    if sol.hit_cap {
                        log::warn!("weight solver reached its iteration cap");
                    }
                    let w = sol.weights.as_slice().to_vec();
                    out.gram = Some(gram);
                    out.jcvma = Some(sol);
                    w
                }
                Method::Full => {
                    let specs: Vec<&CandidateSpec> = ensemble.fits.iter().map(|f| &f.spec).collect();
                    let i = largest_candidate(&specs);
                    out.selected.push((m, i));
                    unit(s, i)
                }
                _ => {
                    let c = m.criterion().expect("criterion method");
                    let values: Vec<f64> = out
                        .scores
                        .iter()
                        .map(|sc| sc.map_or(f64::INFINITY, |v| v.score(c)))
                        .collect();
                    if m.is_smoothed() {
                        softmax_half(&values)?.into_vec()
                    } else {
                        let eligible: Vec<f64> = values
                            .iter()
                            .zip(&ensemble.fits)
                            .map(|(&v, f)| if f.converged || !any_converged { v } else { f64::INFINITY })
                            .collect();
                        let i = select_min(&eligible)?;
                        out.selected.push((m, i));
                        unit(s, i)
                    }
                }
            })
        })();
        match attempt {
            Ok(w) => out.weights.push((m, w)),
            Err(e) => {
                log::warn!("method {m} produced no weights: {e}");
                out.failed.push((m, e.to_string()));
                first_error.get_or_insert(e);
            }
        }
    }
    match first_error {
        Some(e) if out.weights.is_empty() => Err(e),
        _ => Ok(out),
    }
}

/// `sum_s w_s P[s, .]`.
pub fn combine(w: &[f64], predictions: &DMatrix<f64>) -> Vec<f64> {
    (0..predictions.ncols())
        .map(|i| w.iter().enumerate().map(|(s, ws)| ws * predictions[(s, i)]).sum())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::Bandwidth;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert_eq!(
            Method::parse_list("jcvma, AIC,jcvma").unwrap(),
            vec![Method::Jcvma, Method::Aic]
        );
        assert!(Method::parse_list("jcvma,mallows").is_err());
        assert!(Method::parse_list(" , ").is_err());
    }

    #[test]
    fn largest_candidate_prefers_first_on_ties() {
        let a = CandidateSpec::new(vec![0, 1], 4).unwrap();
        let b = CandidateSpec::new(vec![0, 1, 2], 4).unwrap();
        let c = CandidateSpec::new(vec![0, 2, 3], 4).unwrap();
        assert_eq!(largest_candidate(&[&a, &b, &c]), 1);
        assert_eq!(largest_candidate(&[&a]), 0);
    }

    #[test]
    fn combine_is_weighted_sum() {
        let p = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 5.0, 6.0, 7.0]);
        assert_eq!(combine(&[0.5, 0.5], &p), vec![3.0, 4.0, 5.0]);
        assert_eq!(combine(&[0.0, 1.0], &p), vec![5.0, 6.0, 7.0]);
    }
    #[test]
    fn failed_method_does_not_void_the_others() {
        // With a tiny bandwidth the smoother is nearly the identity, so the
        // AICC denominator is negative for every candidate.
        let n = 10;
        let x = DMatrix::from_fn(n, 2, |i, j| (i * (j + 1)) as f64);
        let y: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let data = Dataset::new(y.clone(), x).unwrap();
        let fit = |indices: Vec<usize>, shift: f64| FittedCandidate {
            beta_hat: IndexCoefficients::new(vec![1.0; indices.len()]).unwrap(),
            spec: CandidateSpec::new(indices, 2).unwrap(),
            bandwidth: Bandwidth::fixed(1e-3, n).unwrap(),
            mu_hat: y.clone(),
            mu_tilde: y.iter().map(|v| v + shift).collect(),
            block_betas: Vec::new(),
            objective: 0.0,
            converged: true,
            lambda: None,
        };
        let ensemble = Ensemble {
            fits: vec![fit(vec![0], 0.1), fit(vec![0, 1], -0.2)],
            source: vec![0, 1],
            dropped: Vec::new(),
            partition: BlockPartition::new(n, 5).unwrap(),
        };
        let w = weigh(&data, &ensemble, &[Method::Jcvma, Method::Aicc, Method::Full]).unwrap();
        assert!(w.weights_of(Method::Jcvma).is_some());
        assert_eq!(w.weights_of(Method::Full), Some(&[0.0, 1.0][..]));
        assert!(w.weights_of(Method::Aicc).is_none());
        assert_eq!(w.failed.len(), 1);
        assert_eq!(w.failed[0].0, Method::Aicc);
        assert!(weigh(&data, &ensemble, &[Method::Aicc]).is_err());
    }
}
