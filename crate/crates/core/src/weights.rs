//! Cross-validation weights and information-criterion baselines.
//!
//! The averaging weights minimize `w'Aw` over the unit simplex, where
//! `A[s,m]` is the inner product of the leave-block-out residuals of
//! candidates `s` and `m`. The solver is an accelerated projected gradient
//! method followed by an active-set polish on the support, and every
//! solution carries an explicit KKT check.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::data::{fmt_f64, WeightVector};
use crate::error::{Error, Result};
use crate::estimator::FittedCandidate;
use crate::kernel::{self, index_values, smoother_from_index, SmootherMode};
use crate::data::Dataset;

/// Symmetric positive semidefinite Gram matrix of leave-block-out residuals.
#[derive(Debug, Clone)]
pub struct CvGram {
    a: DMatrix<f64>,
}

impl CvGram {
    /// Wraps a square matrix, replacing it by `(A + A')/2`.
    pub fn from_matrix(a: DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() || a.nrows() == 0 {
            return Err(Error::invalid("Gram matrix must be square and nonempty"));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("Gram matrix has non-finite entries"));
        }
        let sym = (&a + a.transpose()) * 0.5;
        Ok(CvGram { a: sym })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn size(&self) -> usize {
        self.a.nrows()
    }

    /// `w'Aw`.
    pub fn objective(&self, w: &[f64]) -> f64 {
        quad_form(&self.a, w)
    }

    /// Smallest eigenvalue and spectral norm.
    pub fn spectrum(&self) -> (f64, f64) {
        let eig = SymmetricEigen::new(self.a.clone()).eigenvalues;
        let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
        let norm = eig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        (min, norm)
    }

    /// Adds `eps * I` with `eps = 1e-10 * trace(A) / S`.
    pub fn jittered(&self) -> CvGram {
        let s = self.size();
        let eps = 1e-10 * self.a.trace().abs().max(f64::MIN_POSITIVE) / s as f64;
        CvGram {
            a: &self.a + DMatrix::identity(s, s) * eps,
        }
    }
}

fn quad_form(a: &DMatrix<f64>, w: &[f64]) -> f64 {
    let v = DVector::from_column_slice(w);
    (v.transpose() * a * &v)[(0, 0)]
}

/// Gram matrix `G[s,m] = (c_s - t)'(c_m - t)` of columns against a target.
pub fn residual_gram(columns: &[&[f64]], target: &[f64]) -> Result<DMatrix<f64>> {
    let n = target.len();
    if columns.is_empty() {
        return Err(Error::invalid("no candidate columns"));
    }
    if let Some(bad) = columns.iter().position(|c| c.len() != n) {
        return Err(Error::invalid(format!(
            "column {bad} has length {}, expected {n}",
            columns[bad].len()
        )));
    }
    let s = columns.len();
    let mut r = DMatrix::zeros(n, s);
    for (k, c) in columns.iter().enumerate() {
        for i in 0..n {
            r[(i, k)] = c[i] - target[i];
        }
    }
    let g = r.transpose() * &r;
    Ok((&g + g.transpose()) * 0.5)
}

pub fn build_cv_gram(candidates: &[FittedCandidate], y: &[f64]) -> Result<CvGram> {
    let cols: Vec<&[f64]> = candidates.iter().map(|c| c.mu_tilde.as_slice()).collect();
    CvGram::from_matrix(residual_gram(&cols, y)?)
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub weights: WeightVector,
    pub objective: f64,
    pub iterations: usize,
    /// The projected gradient phase hit its iteration cap and the
    /// active-set polish could not certify optimality.
    pub hit_cap: bool,
}

pub const QP_MAX_ITER: usize = 10_000;
const QP_GAP_TOL: f64 = 1e-10;
const KKT_TOL: f64 = 1e-6;

/// Minimizes `w'Aw` over the simplex. Fails with a conditioning error if
/// `A` has an eigenvalue below `-1e-8 ||A||`; retry with [`CvGram::jittered`].
pub fn solve_simplex_qp(gram: &CvGram) -> Result<QpSolution> {
    let (min_eig, norm) = gram.spectrum();
    if min_eig < -1e-8 * norm {
        return Err(Error::Conditioning(format!(
            "CV Gram matrix is indefinite (smallest eigenvalue {min_eig:e}); retry with jitter"
        )));
    }
    solve_restricted(gram.matrix(), None, norm)
}

/// Solves with conditioning fallback: one jittered retry.
pub fn solve_simplex_qp_robust(gram: &CvGram) -> Result<QpSolution> {
    match solve_simplex_qp(gram) {
        Err(Error::Conditioning(_)) => {
            log::warn!("CV Gram matrix is indefinite; adding jitter");
            solve_simplex_qp(&gram.jittered())
        }
        other => other,
    }
}

/// Minimizes `w'Aw` over simplex points supported on `allowed` (all
/// coordinates when `None`). Weights outside `allowed` are zero. `A` is
/// assumed positive semidefinite.
pub fn minimize_on_simplex(a: &DMatrix<f64>, allowed: Option<&[bool]>) -> Result<QpSolution> {
    let a = (a + a.transpose()) * 0.5;
    let norm = SymmetricEigen::new(a.clone())
        .eigenvalues
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    solve_restricted(&a, allowed, norm)
}

fn solve_restricted(a_full: &DMatrix<f64>, allowed: Option<&[bool]>, norm: f64) -> Result<QpSolution> {
    let s_full = a_full.nrows();
    let idx: Vec<usize> = match allowed {
        Some(mask) => {
            if mask.len() != s_full {
                return Err(Error::invalid("mask length does not match the Gram matrix"));
            }
            (0..s_full).filter(|&s| mask[s]).collect()
        }
        None => (0..s_full).collect(),
    };
    if idx.is_empty() {
        return Err(Error::invalid("no admissible coordinates"));
    }
    let a = a_full.select_rows(&idx).select_columns(&idx);
    let (w, iterations, hit_cap) = solve_dense(&a, norm);
    let mut full = vec![0.0; s_full];
    for (k, &s) in idx.iter().enumerate() {
        full[s] = w[k];
    }
    let weights = WeightVector::from_solver(full)?;
    let objective = quad_form(a_full, weights.as_slice());
    Ok(QpSolution {
        weights,
        objective,
        iterations,
        hit_cap,
    })
}

/// Euclidean projection onto the unit simplex.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (k, &uk) in u.iter().enumerate() {
        cum += uk;
        let t = (cum - 1.0) / (k + 1) as f64;
        if uk - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// Returns `(w, iterations, hit_cap)`.
fn solve_dense(a: &DMatrix<f64>, norm: f64) -> (Vec<f64>, usize, bool) {
    let s = a.nrows();
    if s == 1 {
        return (vec![1.0], 0, false);
    }
    let grad = |w: &[f64]| -> Vec<f64> {
        let v = a * DVector::from_column_slice(w);
        v.iter().map(|x| 2.0 * x).collect()
    };
    let lip = (2.0 * norm).max(f64::MIN_POSITIVE);
    let step = 1.0 / lip;

    // FISTA with restart on objective increase.
    let mut w = vec![1.0 / s as f64; s];
    let mut yk = w.clone();
    let mut t = 1.0f64;
    let mut f_w = quad_form(a, &w);
    let mut iterations = 0;
    let mut hit_cap = true;
    while iterations < QP_MAX_ITER {
        let g = grad(&w);
        // Frank-Wolfe gap bounds the suboptimality of w.
        let gmin = g.iter().copied().fold(f64::INFINITY, f64::min);
        let gap: f64 = g.iter().zip(&w).map(|(gi, wi)| gi * wi).sum::<f64>() - gmin;
        if gap <= QP_GAP_TOL * (1.0 + f_w.abs()) {
            hit_cap = false;
            break;
        }
        iterations += 1;
        let gy = grad(&yk);
        let trial: Vec<f64> = yk.iter().zip(&gy).map(|(y, g)| y - step * g).collect();
        let w_new = project_simplex(&trial);
        let f_new = quad_form(a, &w_new);
        if f_new > f_w {
            // Restart momentum from the current iterate.
            t = 1.0;
            yk = w.clone();
            continue;
        }
        let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let mom = (t - 1.0) / t_new;
        yk = w_new
            .iter()
            .zip(&w)
            .map(|(a, b)| a + mom * (a - b))
            .collect();
        w = w_new;
        f_w = f_new;
        t = t_new;
    }

    let polished = active_set(a, &w);
    if let Some(p) = polished {
        let f_p = quad_form(a, &p);
        if f_p <= f_w + 1e-15 * (1.0 + f_w.abs()) {
            let cert = kkt_certificate(a, &p, KKT_TOL);
            if cert || !kkt_certificate(a, &w, KKT_TOL) {
                return (p, iterations, hit_cap && !cert);
            }
        }
    }
    let cert = kkt_certificate(a, &w, KKT_TOL);
    (w, iterations, hit_cap && !cert)
}

/// Minimizer of `w'Aw` subject to `1'w = 1` on the coordinates in `set`,
/// via the bordered KKT system (pseudo-inverse when singular).
fn equality_qp(a: &DMatrix<f64>, set: &[usize]) -> Option<Vec<f64>> {
    let k = set.len();
    let mut m = DMatrix::zeros(k + 1, k + 1);
    for (r, &i) in set.iter().enumerate() {
        for (c, &j) in set.iter().enumerate() {
            m[(r, c)] = 2.0 * a[(i, j)];
        }
        m[(r, k)] = 1.0;
        m[(k, r)] = 1.0;
    }
    let mut rhs = DVector::zeros(k + 1);
    rhs[k] = 1.0;
    let sol = match m.clone().lu().solve(&rhs) {
        Some(x) if x.iter().all(|v| v.is_finite()) && (&m * &x - &rhs).amax() < 1e-9 => x,
        _ => {
            let svd = m.svd(true, true);
            let tol = 1e-12 * svd.singular_values.max();
            svd.solve(&rhs, tol).ok()?
        }
    };
    let mut w = vec![0.0; a.nrows()];
    for (r, &i) in set.iter().enumerate() {
        w[i] = sol[r];
    }
    let sum: f64 = w.iter().sum();
    if !sum.is_finite() || (sum - 1.0).abs() > 1e-6 {
        return None;
    }
    Some(w)
}

/// Primal active-set method started from the support of a feasible point.
fn active_set(a: &DMatrix<f64>, start: &[f64]) -> Option<Vec<f64>> {
    let s = a.nrows();
    let mut w: Vec<f64> = start.iter().map(|&v| if v > 1e-10 { v } else { 0.0 }).collect();
    let sum: f64 = w.iter().sum();
    if sum <= 0.0 {
        return None;
    }
    w.iter_mut().for_each(|v| *v /= sum);
    let mut set: Vec<usize> = (0..s).filter(|&i| w[i] > 0.0).collect();
    for _ in 0..(20 * s + 20) {
        let target = equality_qp(a, &set)?;
        let blocking = set
            .iter()
            .filter(|&&i| target[i] < 0.0)
            .map(|&i| (i, w[i] / (w[i] - target[i])))
            .min_by(|x, y| x.1.total_cmp(&y.1));
        match blocking {
            Some((i, alpha)) => {
                for j in 0..s {
                    w[j] += alpha * (target[j] - w[j]);
                }
                w[i] = 0.0;
                set.retain(|&j| j != i);
                set.retain(|&j| w[j] > 0.0);
                if set.is_empty() {
                    return None;
                }
            }
            None => {
                w = target;
                let g: Vec<f64> = (a * DVector::from_column_slice(&w))
                    .iter()
                    .map(|x| 2.0 * x)
                    .collect();
                let mu = set.iter().map(|&i| g[i]).sum::<f64>() / set.len() as f64;
                let entering = (0..s)
                    .filter(|i| !set.contains(i))
                    .map(|i| (i, g[i]))
                    .min_by(|x, y| x.1.total_cmp(&y.1));
                match entering {
                    Some((i, gi)) if gi < mu - 1e-12 * (1.0 + mu.abs()) => {
                        set.push(i);
                        set.sort_unstable();
                    }
                    _ => return Some(w),
                }
            }
        }
    }
    None
}

/// KKT check for `min w'Aw` on the simplex: with `g = 2Aw`, some `mu`
/// satisfies `|g_s - mu| <= tol (1 + |mu|)` where `w_s > 1e-10` and
/// `g_s >= mu - tol (1 + |mu|)` elsewhere.
pub fn kkt_certificate(a: &DMatrix<f64>, w: &[f64], tol: f64) -> bool {
    let g: Vec<f64> = (a * DVector::from_column_slice(w))
        .iter()
        .map(|x| 2.0 * x)
        .collect();
    let support: Vec<usize> = (0..w.len()).filter(|&i| w[i] > 1e-10).collect();
    if support.is_empty() {
        return false;
    }
    let hi = support.iter().map(|&i| g[i]).fold(f64::NEG_INFINITY, f64::max);
    let lo = support.iter().map(|&i| g[i]).fold(f64::INFINITY, f64::min);
    let mu = 0.5 * (hi + lo);
    let band = tol * (1.0 + mu.abs());
    support.iter().all(|&i| (g[i] - mu).abs() <= band)
        && (0..w.len()).all(|i| support.contains(&i) || g[i] >= mu - band)
}

/// `sum_s w_s P[s, .]` for an `S x m` prediction matrix.
pub fn average_predictions(w: &WeightVector, per_candidate: &DMatrix<f64>) -> Result<Vec<f64>> {
    if per_candidate.nrows() != w.len() {
        return Err(Error::invalid(format!(
            "{} weights for {} candidates",
            w.len(),
            per_candidate.nrows()
        )));
    }
    let v = per_candidate.transpose() * DVector::from_column_slice(w.as_slice());
    Ok(v.iter().copied().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Criterion {
    Aic,
    Bic,
    Aicc,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcScores {
    pub aic: f64,
    pub bic: f64,
    pub aicc: f64,
    pub sigma2_hat: f64,
    pub trace_k: f64,
    /// `tr(H + K - HK)`.
    pub trace_h_combined: f64,
    /// `sigma2_hat` was floored before taking logs.
    pub sigma2_floored: bool,
    /// Rank of the derivative design behind `H`.
    pub rank_v: usize,
}

impl IcScores {
    pub fn score(&self, c: Criterion) -> f64 {
        match c {
            Criterion::Aic => self.aic,
            Criterion::Bic => self.bic,
            Criterion::Aicc => self.aicc,
        }
    }
}

const SIGMA2_FLOOR: f64 = 1e-300;

/// AIC, BIC and AICC of a fitted candidate from its full smoother at the
/// estimate. `H` projects onto the columns of the derivative of the fitted
/// means in the coefficients.
pub fn ic_scores(data: &Dataset, fit: &FittedCandidate) -> Result<IcScores> {
    let n = data.n();
    if fit.mu_hat.len() != n {
        return Err(Error::invalid("fitted means do not match the data"));
    }
    let y = data.y();
    let x_s = data.design(&fit.spec);
    let beta = fit.beta_hat.as_slice();
    let z = index_values(&x_s, beta);
    let k = smoother_from_index(&z, fit.bandwidth.h, SmootherMode::Full)?;
    let trace_k = k.trace();
    let rss: f64 = y.iter().zip(&fit.mu_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    let raw = rss / n as f64;
    let sigma2_floored = !(raw >= SIGMA2_FLOOR);
    let sigma2 = if sigma2_floored { SIGMA2_FLOOR } else { raw };

    let v = kernel::jacobian(&x_s, beta, &fit.bandwidth, y, SmootherMode::Full)?;
    let p_s = v.ncols();
    let svd = v.svd(true, false);
    let u = svd.u.as_ref().expect("left singular vectors requested");
    let smax = svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| smax > 0.0 && svd.singular_values[i] > 1e-10 * smax)
        .collect();
    if keep.len() < p_s {
        log::warn!(
            "derivative design of candidate [{}] has rank {} < {}",
            fit.spec.label(),
            keep.len(),
            p_s
        );
    }
    // tr(HK) = sum_k q_k' K q_k over an orthonormal basis of col(V).
    let mut tr_hk = 0.0;
    for &c in &keep {
        let q = u.column(c);
        tr_hk += (q.transpose() * &k.weights * q)[(0, 0)];
    }
    let trace_h_combined = keep.len() as f64 + trace_k - tr_hk;
    let nf = n as f64;
    let log_s2 = sigma2.ln();
    let aic = nf * log_s2 + 2.0 * trace_k;
    let bic = nf * log_s2 + nf.ln() * trace_k;
    let denom = nf - 2.0 - trace_h_combined;
    let aicc = if denom > 0.0 {
        log_s2 + (nf + trace_h_combined) / denom
    } else {
        f64::INFINITY
    };
    Ok(IcScores {
        aic,
        bic,
        aicc,
        sigma2_hat: raw,
        trace_k,
        trace_h_combined,
        sigma2_floored,
        rank_v: keep.len(),
    })
}

/// Index of the smallest score; ties go to the earlier candidate.
pub fn ic_select(scores: &[IcScores], criterion: Criterion) -> Result<usize> {
    select_min(&scores.iter().map(|s| s.score(criterion)).collect::<Vec<_>>())
}

pub(crate) fn select_min(values: &[f64]) -> Result<usize> {
    if values.is_empty() {
        return Err(Error::invalid("no candidates to select from"));
    }
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if v.is_finite() && best.map_or(true, |b| v < values[b]) {
            best = Some(i);
        }
    }
    best.ok_or(Error::NoSelectableModel)
}

pub fn smoothed_ic_weights(scores: &[IcScores], criterion: Criterion) -> Result<WeightVector> {
    softmax_half(&scores.iter().map(|s| s.score(criterion)).collect::<Vec<_>>())
}

/// `w_s ∝ exp(-v_s / 2)`; non-finite scores get weight 0.
pub fn softmax_half(values: &[f64]) -> Result<WeightVector> {
    if values.is_empty() {
        return Err(Error::invalid("no candidates to weight"));
    }
    let min = values
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return Err(Error::NoSelectableModel);
    }
    let raw: Vec<f64> = values
        .iter()
        .map(|&v| if v.is_finite() { (-(v - min) / 2.0).exp() } else { 0.0 })
        .collect();
    let total: f64 = raw.iter().sum();
    WeightVector::from_solver(raw.into_iter().map(|r| r / total).collect())
}

/// Writes one row per candidate: id, member indices, weight and scores.
pub fn write_weights_csv<W: Write>(
    out: W,
    labels: &[String],
    weights: &[f64],
    scores: &[Option<IcScores>],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["candidate", "indices", "weight", "aic", "bic", "aicc"])?;
    for (i, label) in labels.iter().enumerate() {
        let (aic, bic, aicc) = match scores.get(i).copied().flatten() {
            Some(s) => (fmt_f64(s.aic), fmt_f64(s.bic), fmt_f64(s.aicc)),
            None => ("NA".into(), "NA".into(), "NA".into()),
        };
        w.write_record([
            i.to_string(),
            label.clone(),
            fmt_f64(weights.get(i).copied().unwrap_or(0.0)),
            aic,
            bic,
            aicc,
        ])?;
    }
    w.flush()?;
    Ok(())
}
