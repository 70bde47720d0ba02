//! Nonlinear least-squares estimation of one candidate single-index model.
//!
//! The index coefficients are identified by fixing the anchor (first)
//! coefficient at one. The criterion minimized is the leave-one-out
//! kernel criterion `n^-1 ||y - W y||^2`, where `W` excludes each
//! observation from its own fitted mean. Reported in-sample means use the
//! full smoother, and the leave-block-out means use coefficients refit
//! without the block being predicted.

use nalgebra::{DMatrix, DVector};

use crate::data::{BlockPartition, CandidateSpec, Dataset};
use crate::error::{Error, Result};
use crate::kernel::{
    self, index_values, nw_in_sample, nw_predict, row_major, Bandwidth, SmootherMode,
};
use crate::optim::{bfgs, sided_minimize, BfgsOptions};

/// Coefficients of one single-index model with the anchor fixed at 1.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexCoefficients(Vec<f64>);

impl IndexCoefficients {
    pub fn new(beta: Vec<f64>) -> Result<Self> {
        match beta.first() {
            None => Err(Error::invalid("empty coefficient vector")),
            Some(&b0) if b0 != 1.0 => Err(Error::invalid(format!(
                "anchor coefficient must be exactly 1, got {b0}"
            ))),
            _ if beta.iter().any(|b| !b.is_finite()) => {
                Err(Error::invalid("coefficients must be finite"))
            }
            _ => Ok(IndexCoefficients(beta)),
        }
    }

    /// `(1, 0, ..., 0)`.
    pub fn anchor_only(p_s: usize) -> Self {
        let mut b = vec![0.0; p_s.max(1)];
        b[0] = 1.0;
        IndexCoefficients(b)
    }

    pub(crate) fn from_free(free: &[f64]) -> Self {
        let mut b = Vec::with_capacity(free.len() + 1);
        b.push(1.0);
        b.extend_from_slice(free);
        IndexCoefficients(b)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn free(&self) -> &[f64] {
        &self.0[1..]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub kappa_grid: Vec<f64>,
    pub bfgs: BfgsOptions,
    /// Used by L1-penalized candidates.
    pub cd: CoordinateDescentOptions,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            kappa_grid: kernel::DEFAULT_KAPPA_GRID.to_vec(),
            bfgs: BfgsOptions::default(),
            cd: CoordinateDescentOptions::default(),
        }
    }
}

/// One estimated candidate model.
#[derive(Debug, Clone)]
pub struct FittedCandidate {
    pub spec: CandidateSpec,
    pub beta_hat: IndexCoefficients,
    pub bandwidth: Bandwidth,
    /// Full-sample fitted means (diagonal included).
    pub mu_hat: Vec<f64>,
    /// Leave-block-out fitted means: entry `i` uses coefficients estimated
    /// without block `B(i)` and smooths over observations outside `B(i)`.
    pub mu_tilde: Vec<f64>,
    /// Coefficients estimated with each block deleted, in block order.
    pub block_betas: Vec<IndexCoefficients>,
    /// Leave-one-out criterion at `beta_hat`.
    pub objective: f64,
    pub converged: bool,
    /// Penalty level for regularized candidates.
    pub lambda: Option<f64>,
}

/// Leave-one-out kernel criterion on a design, its gradient in the free
/// coordinates, and the data needed to evaluate both.
struct LooCriterion<'a> {
    x_s: &'a DMatrix<f64>,
    free_rows: Vec<f64>,
    y: &'a [f64],
    h: f64,
}

impl<'a> LooCriterion<'a> {
    fn new(x_s: &'a DMatrix<f64>, y: &'a [f64], h: f64) -> Self {
        let p = x_s.ncols();
        let free = x_s.columns(1, p - 1).into_owned();
        LooCriterion {
            x_s,
            free_rows: row_major(&free),
            y,
            h,
        }
    }

    fn n(&self) -> f64 {
        self.y.len() as f64
    }

    fn value_at_index(&self, z: &[f64]) -> Result<f64> {
        let fit = nw_in_sample(z, self.y, self.h, SmootherMode::LeaveOneOut, None)?;
        Ok(sum_sq_diff(self.y, &fit.fitted) / self.n())
    }

    /// Criterion and its derivative along one covariate column at index `z`.
    fn value_and_partial(&self, z: &[f64], column: &[f64]) -> Result<(f64, f64)> {
        let fit = nw_in_sample(z, self.y, self.h, SmootherMode::LeaveOneOut, Some((column, 1)))?;
        let jac = fit.jacobian.expect("jacobian requested");
        let mut value = 0.0;
        let mut slope = 0.0;
        for ((&yi, &gi), &ji) in self.y.iter().zip(&fit.fitted).zip(&jac) {
            let r = yi - gi;
            value += r * r;
            slope -= 2.0 * r * ji;
        }
        Ok((value / self.n(), slope / self.n()))
    }

    fn value(&self, beta: &[f64]) -> Result<f64> {
        self.value_at_index(&index_values(self.x_s, beta))
    }

    fn value_and_gradient(&self, beta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let z = index_values(self.x_s, beta);
        let pf = self.x_s.ncols() - 1;
        let fit = nw_in_sample(
            &z,
            self.y,
            self.h,
            SmootherMode::LeaveOneOut,
            Some((&self.free_rows, pf)),
        )?;
        let jac = fit.jacobian.expect("jacobian requested");
        let n = self.n();
        let mut grad = vec![0.0; pf];
        let mut value = 0.0;
        for (i, (&yi, &gi)) in self.y.iter().zip(&fit.fitted).enumerate() {
            let r = yi - gi;
            value += r * r;
            for c in 0..pf {
                grad[c] -= 2.0 * r * jac[i * pf + c];
            }
        }
        grad.iter_mut().for_each(|g| *g /= n);
        Ok((value / n, grad))
    }
}

fn sum_sq_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Leave-one-out criterion `n^-1 ||y - W(beta) y||^2` for one candidate.
pub fn nls_objective(
    data: &Dataset,
    spec: &CandidateSpec,
    beta: &IndexCoefficients,
    h: &Bandwidth,
) -> Result<f64> {
    if beta.len() != spec.len() {
        return Err(Error::invalid(format!(
            "{} coefficients for a {}-covariate candidate",
            beta.len(),
            spec.len()
        )));
    }
    let x_s = data.design(spec);
    LooCriterion::new(&x_s, data.y(), h.h).value(beta.as_slice())
}

/// Slopes of `y` on `[1, X_s]`, rescaled so the anchor slope is one.
/// `None` when the anchor slope is numerically zero.
fn ols_start(x_s: &DMatrix<f64>, y: &[f64]) -> Option<IndexCoefficients> {
    let (n, p) = x_s.shape();
    let mut design = DMatrix::from_element(n, p + 1, 1.0);
    design.columns_mut(1, p).copy_from(x_s);
    let yv = DVector::from_column_slice(y);
    let coef = design.svd(true, true).solve(&yv, 1e-12).ok()?;
    let slopes: Vec<f64> = coef.iter().skip(1).copied().collect();
    let scale = slopes.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(scale > 0.0) || slopes[0].abs() <= 1e-8 * scale {
        return None;
    }
    let beta: Vec<f64> = slopes.iter().map(|s| s / slopes[0]).collect();
    IndexCoefficients::new(beta).ok()
}

fn starting_points(
    x_s: &DMatrix<f64>,
    y: &[f64],
    init: Option<&IndexCoefficients>,
) -> Vec<IndexCoefficients> {
    let p = x_s.ncols();
    let mut starts = Vec::with_capacity(3);
    if let Some(ols) = ols_start(x_s, y) {
        starts.push(ols);
    }
    starts.push(IndexCoefficients::anchor_only(p));
    if let Some(init) = init {
        if init.len() == p && !starts.contains(init) {
            starts.push(init.clone());
        }
    }
    starts
}

struct Minimized {
    beta: IndexCoefficients,
    objective: f64,
    converged: bool,
}

/// Best BFGS solution of the leave-one-out criterion over several starts.
fn minimize_criterion(
    x_s: &DMatrix<f64>,
    y: &[f64],
    h: f64,
    starts: &[IndexCoefficients],
    opts: &BfgsOptions,
) -> Result<Minimized> {
    let crit = LooCriterion::new(x_s, y, h);
    if x_s.ncols() == 1 {
        let beta = IndexCoefficients::anchor_only(1);
        let objective = crit.value(beta.as_slice())?;
        return Ok(Minimized {
            beta,
            objective,
            converged: true,
        });
    }
    let mut best: Option<Minimized> = None;
    let mut last_err = None;
    for start in starts {
        let eval = |free: &[f64]| {
            let beta = IndexCoefficients::from_free(free);
            crit.value_and_gradient(beta.as_slice()).ok()
        };
        match bfgs(eval, start.free(), opts) {
            Some(m) => {
                if best.as_ref().map_or(true, |b| m.f < b.objective) {
                    best = Some(Minimized {
                        beta: IndexCoefficients::from_free(&m.x),
                        objective: m.f,
                        converged: m.converged,
                    });
                }
            }
            None => {
                last_err = Some(crit.value(start.as_slice()).err().unwrap_or(Error::NoValidBandwidth));
            }
        }
    }
    best.ok_or_else(|| last_err.unwrap_or(Error::NoValidBandwidth))
}

fn check_candidate(data: &Dataset, spec: &CandidateSpec) -> Result<()> {
    if spec.indices().iter().any(|&i| i >= data.p()) {
        return Err(Error::invalid("candidate refers to a covariate outside the dataset"));
    }
    Ok(())
}

/// Estimates one candidate model: bandwidth, coefficients, full-sample and
/// leave-block-out fitted means.
pub fn nls_fit(
    data: &Dataset,
    spec: &CandidateSpec,
    partition: &BlockPartition,
    kappa_grid: &[f64],
    init: Option<&IndexCoefficients>,
) -> Result<FittedCandidate> {
    let opts = FitOptions {
        kappa_grid: kappa_grid.to_vec(),
        ..FitOptions::default()
    };
    nls_fit_with(data, spec, partition, &opts, init)
}

pub fn nls_fit_with(
    data: &Dataset,
    spec: &CandidateSpec,
    partition: &BlockPartition,
    opts: &FitOptions,
    init: Option<&IndexCoefficients>,
) -> Result<FittedCandidate> {
    check_candidate(data, spec)?;
    check_partition(data, partition)?;
    let x_s = data.design(spec);
    let y = data.y();
    let starts = starting_points(&x_s, y, init);

    // Bandwidth from the first start that gives a usable smoother.
    let mut bandwidth = Err(Error::NoValidBandwidth);
    for s in &starts {
        let z = index_values(&x_s, s.as_slice());
        bandwidth = kernel::select_bandwidth_for_index(&z, y, &opts.kappa_grid, partition);
        if bandwidth.is_ok() {
            break;
        }
    }
    let (mut bw, _) = bandwidth?;

    let mut best = minimize_criterion(&x_s, y, bw.h, &starts, &opts.bfgs)?;
    // Reselect at the estimate; refit once if the choice moved.
    let z = index_values(&x_s, best.beta.as_slice());
    if let Ok((reselected, _)) = kernel::select_bandwidth_for_index(&z, y, &opts.kappa_grid, partition) {
        if reselected.kappa != bw.kappa {
            bw = reselected;
            best = minimize_criterion(&x_s, y, bw.h, std::slice::from_ref(&best.beta), &opts.bfgs)?;
        }
    }

    finish_candidate(data, spec, partition, &x_s, best, bw, None, |retained, start| {
        let xr = x_s.select_rows(retained);
        let yr: Vec<f64> = retained.iter().map(|&i| y[i]).collect();
        minimize_criterion(&xr, &yr, bw.h, std::slice::from_ref(start), &opts.bfgs)
            .map(|m| (m.beta, m.converged))
    })
}

fn check_partition(data: &Dataset, partition: &BlockPartition) -> Result<()> {
    if partition.n() != data.n() {
        return Err(Error::invalid(format!(
            "partition covers {} observations, dataset has {}",
            partition.n(),
            data.n()
        )));
    }
    if partition.is_degenerate() {
        return Err(Error::invalid(
            "cross-validation needs at least two blocks; lower the block size",
        ));
    }
    Ok(())
}

/// Computes the full-sample and leave-block-out means for an estimate,
/// refitting each deleted-block problem with `refit`.
#[allow(clippy::too_many_arguments)]
fn finish_candidate<F>(
    data: &Dataset,
    spec: &CandidateSpec,
    partition: &BlockPartition,
    x_s: &DMatrix<f64>,
    best: Minimized,
    bw: Bandwidth,
    lambda: Option<f64>,
    mut refit: F,
) -> Result<FittedCandidate>
where
    F: FnMut(&[usize], &IndexCoefficients) -> Result<(IndexCoefficients, bool)>,
{
    let y = data.y();
    let z = index_values(x_s, best.beta.as_slice());
    let mu_hat = nw_in_sample(&z, y, bw.h, SmootherMode::Full, None)?.fitted;
    let mut mu_tilde = vec![0.0; data.n()];
    let mut block_betas = Vec::with_capacity(partition.n_blocks());
    let mut converged = best.converged;
    for j in 0..partition.n_blocks() {
        let retained = partition.retained(j);
        let (beta_j, ok) = refit(&retained, &best.beta)?;
        converged &= ok;
        let block = partition.block(j);
        let z_all = index_values(x_s, beta_j.as_slice());
        let z_train: Vec<f64> = retained.iter().map(|&i| z_all[i]).collect();
        let y_train: Vec<f64> = retained.iter().map(|&i| y[i]).collect();
        let preds = nw_predict(&z_train, &y_train, &z_all[block.clone()], bw.h).map_err(|e| match e {
            Error::DegenerateRow { row } => Error::DegenerateRow { row: block.start + row },
            other => other,
        })?;
        mu_tilde[block].copy_from_slice(&preds);
        block_betas.push(beta_j);
    }
    Ok(FittedCandidate {
        spec: spec.clone(),
        beta_hat: best.beta,
        bandwidth: bw,
        mu_hat,
        mu_tilde,
        block_betas,
        objective: best.objective,
        converged,
        lambda,
    })
}

/// Coefficients estimated without the observations of block `block`.
/// Without `init`, the same OLS and anchor-only starts as the full fit
/// are tried.
pub fn leave_block_out_fit(
    data: &Dataset,
    spec: &CandidateSpec,
    partition: &BlockPartition,
    block: usize,
    h: &Bandwidth,
    init: Option<&IndexCoefficients>,
) -> Result<IndexCoefficients> {
    check_candidate(data, spec)?;
    check_partition(data, partition)?;
    if block >= partition.n_blocks() {
        return Err(Error::invalid(format!(
            "block {block} out of range 0..{}",
            partition.n_blocks()
        )));
    }
    let retained = partition.retained(block);
    if retained.len() < 2 {
        return Err(Error::invalid("deleting the block leaves fewer than 2 observations"));
    }
    let x_s = data.design(spec).select_rows(&retained);
    let y: Vec<f64> = retained.iter().map(|&i| data.y()[i]).collect();
    let starts = match init {
        Some(b) => vec![b.clone()],
        None => starting_points(&x_s, &y, None),
    };
    Ok(minimize_criterion(&x_s, &y, h.h, &starts, &BfgsOptions::default())?.beta)
}

/// Nadaraya-Watson predictions of a fitted candidate at new covariate rows
/// (`m x p_s`, columns in the candidate's order).
pub fn predict(train: &Dataset, fit: &FittedCandidate, x_new: &DMatrix<f64>) -> Result<Vec<f64>> {
    if !fit.converged {
        return Err(Error::invalid(
            "candidate fit did not converge; use predict_unchecked to override",
        ));
    }
    predict_unchecked(train, fit, x_new)
}

pub fn predict_unchecked(
    train: &Dataset,
    fit: &FittedCandidate,
    x_new: &DMatrix<f64>,
) -> Result<Vec<f64>> {
    predict_index_model(train, &fit.spec, &fit.beta_hat, fit.bandwidth.h, x_new)
}

/// Predictions of the index model `(spec, beta, h)` smoothed over `train`;
/// `x_new` holds the candidate's columns.
pub fn predict_index_model(
    train: &Dataset,
    spec: &CandidateSpec,
    beta: &IndexCoefficients,
    h: f64,
    x_new: &DMatrix<f64>,
) -> Result<Vec<f64>> {
    check_candidate(train, spec)?;
    if x_new.ncols() != spec.len() || beta.len() != spec.len() {
        return Err(Error::invalid(format!(
            "query rows have {} columns and {} coefficients, candidate has {}",
            x_new.ncols(),
            beta.len(),
            spec.len()
        )));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid(format!("bandwidth must be positive, got {h}")));
    }
    let z_train = index_values(&train.design(spec), beta.as_slice());
    let z_new = index_values(x_new, beta.as_slice());
    nw_predict(&z_train, train.y(), &z_new, h)
}

/// Prediction for out-of-sample evaluation: a query outside the kernel
/// support of every training index takes the mean response of the nearest
/// training indices rather than failing.
pub(crate) fn predict_for_evaluation(train: &Dataset, fit: &FittedCandidate, x_new: &DMatrix<f64>) -> Vec<f64> {
    let beta = fit.beta_hat.as_slice();
    let z_train = index_values(&train.design(&fit.spec), beta);
    let z_new = index_values(x_new, beta);
    kernel::nw_predict_shifted(&z_train, train.y(), &z_new, fit.bandwidth.h)
}

/// Result of the L1-penalized criterion.
#[derive(Debug, Clone)]
pub struct RegularizedFit {
    pub beta_hat: IndexCoefficients,
    pub lambda: f64,
    /// Positions (within the candidate) of nonzero coefficients; always
    /// starts with the anchor position 0.
    pub active_set: Vec<usize>,
    /// Unpenalized criterion at `beta_hat`.
    pub objective: f64,
    /// Penalized criterion at the start and after each sweep.
    pub history: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
}

impl RegularizedFit {
    pub fn penalized_objective(&self) -> f64 {
        *self.history.last().expect("history holds the starting value")
    }

    /// Covariate indices of the active set.
    pub fn active_covariates(&self, spec: &CandidateSpec) -> Vec<usize> {
        self.active_set.iter().map(|&r| spec.indices()[r]).collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CoordinateDescentOptions {
    pub max_sweeps: usize,
    /// Converged when no coordinate moves by more than this in a sweep.
    pub tol: f64,
    /// Also converged when a sweep lowers the penalized criterion by less
    /// than `f_tol * (1 + value)`.
    pub f_tol: f64,
    /// Relative precision of each one-dimensional search.
    pub line_tol: f64,
    /// Proximal-gradient steps taken before the first sweep.
    pub warm_steps: usize,
}

impl Default for CoordinateDescentOptions {
    fn default() -> Self {
        CoordinateDescentOptions {
            max_sweeps: 200,
            tol: 1e-6,
            f_tol: 1e-9,
            line_tol: 1e-7,
            warm_steps: 500,
        }
    }
}

/// L1-penalized criterion `H(beta) + lambda * sum_{r>0} |beta_r|`, the
/// anchor being fixed and unpenalized, solved by cyclic coordinate descent.
pub fn l1_nls_fit(
    data: &Dataset,
    spec: &CandidateSpec,
    lambda: f64,
    h: &Bandwidth,
    init: Option<&IndexCoefficients>,
) -> Result<RegularizedFit> {
    l1_nls_fit_with(data, spec, lambda, h, init, &CoordinateDescentOptions::default())
}

pub fn l1_nls_fit_with(
    data: &Dataset,
    spec: &CandidateSpec,
    lambda: f64,
    h: &Bandwidth,
    init: Option<&IndexCoefficients>,
    opts: &CoordinateDescentOptions,
) -> Result<RegularizedFit> {
    check_candidate(data, spec)?;
    let x_s = data.design(spec);
    l1_fit_design(&x_s, data.y(), lambda, h.h, init, opts)
}

pub(crate) fn l1_fit_design(
    x_s: &DMatrix<f64>,
    y: &[f64],
    lambda: f64,
    h: f64,
    init: Option<&IndexCoefficients>,
    opts: &CoordinateDescentOptions,
) -> Result<RegularizedFit> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("penalty must be nonnegative, got {lambda}")));
    }
    let p = x_s.ncols();
    let mut beta = match init {
        Some(b) if b.len() == p => b.as_slice().to_vec(),
        Some(b) => {
            return Err(Error::invalid(format!(
                "initial coefficients have length {}, candidate has {p}",
                b.len()
            )))
        }
        None => IndexCoefficients::anchor_only(p).as_slice().to_vec(),
    };
    let crit = LooCriterion::new(x_s, y, h);
    let penalty = |b: &[f64]| lambda * b[1..].iter().map(|v| v.abs()).sum::<f64>();

    let mut z = index_values(x_s, &beta);
    let mut current = crit.value_at_index(&z)? + penalty(&beta);
    let mut history = vec![current];
    if p > 1 && opts.warm_steps > 0 {
        current = proximal_warm_start(&crit, &mut beta, lambda, current, opts, &mut history)?;
        z = index_values(x_s, &beta);
    }
    let mut converged = p == 1;
    let mut sweeps = 0;
    let mut z_trial = vec![0.0; z.len()];
    // Sweeps alternate between all coordinates and the nonzero ones only;
    // convergence is declared on a sweep over all coordinates.
    let mut full_sweep = true;

    while !converged && sweeps < opts.max_sweeps {
        sweeps += 1;
        let start_value = current;
        let mut max_change: f64 = 0.0;
        // A zero coordinate with |dH/db_r| <= lambda stays at zero. The
        // gradient is taken at the start of the sweep, so it is exact on a
        // sweep that moves nothing.
        let grad = if full_sweep {
            Some(crit.value_and_gradient(&beta)?.1)
        } else {
            None
        };
        for r in 1..p {
            let b = beta[r];
            if b == 0.0 {
                match &grad {
                    Some(g) if g[r - 1].abs() > lambda => {}
                    _ => continue,
                }
            }
            let col = x_s.column(r);
            let col = col.as_slice();
            let base: Vec<f64> = z.iter().zip(col).map(|(zi, xi)| zi - b * xi).collect();
            let pen_rest = penalty(&beta) - lambda * b.abs();
            let mut eval = |t: f64| -> Option<(f64, f64)> {
                for ((zt, zb), xi) in z_trial.iter_mut().zip(&base).zip(col) {
                    *zt = zb + t * xi;
                }
                crit.value_and_partial(&z_trial, col).ok()
            };
            let Some((h0, d0)) = eval(0.0) else { continue };
            let mut best_t = 0.0;
            let mut best_f = h0 + pen_rest;
            for side in [1.0, -1.0] {
                let start = if b * side > 0.0 { b.abs() } else { 0.0 };
                // Moving off zero to this side must be a descent direction.
                if start == 0.0 && side * d0 + lambda >= 0.0 {
                    continue;
                }
                let psi = |s: f64| {
                    eval(side * s).map(|(hv, hd)| (hv + pen_rest + lambda * s, side * hd + lambda))
                };
                if let Some((s, f)) = sided_minimize(psi, start, opts.line_tol, 60) {
                    if f < best_f {
                        best_t = side * s;
                        best_f = f;
                    }
                }
            }
            if best_f < current {
                beta[r] = best_t;
                for ((zi, zb), xi) in z.iter_mut().zip(&base).zip(col) {
                    *zi = zb + best_t * xi;
                }
                current = best_f;
                max_change = max_change.max((best_t - b).abs());
            }
        }
        history.push(current);
        let stalled = start_value - current <= opts.f_tol * (1.0 + current.abs());
        if max_change < opts.tol || stalled {
            if full_sweep {
                converged = true;
            }
            full_sweep = true;
        } else {
            full_sweep = false;
        }
    }

    let beta_hat = IndexCoefficients::new(beta)?;
    let objective = current - penalty(beta_hat.as_slice());
    let active_set = beta_hat
        .as_slice()
        .iter()
        .enumerate()
        .filter(|&(r, v)| r == 0 || *v != 0.0)
        .map(|(r, _)| r)
        .collect();
    Ok(RegularizedFit {
        beta_hat,
        lambda,
        active_set,
        objective,
        history,
        sweeps,
        converged,
    })
}

/// Monotone proximal-gradient steps with Barzilai-Borwein trial lengths and
/// backtracking. Cheap per step, so it takes the bulk of the descent on wide
/// designs before coordinate sweeps refine the result.
fn proximal_warm_start(
    crit: &LooCriterion<'_>,
    beta: &mut [f64],
    lambda: f64,
    mut current: f64,
    opts: &CoordinateDescentOptions,
    history: &mut Vec<f64>,
) -> Result<f64> {
    let p = beta.len();
    let penalty = |b: &[f64]| lambda * b[1..].iter().map(|v| v.abs()).sum::<f64>();
    let soft = |v: f64, t: f64| v.signum() * (v.abs() - t).max(0.0);
    let (_, mut grad) = crit.value_and_gradient(beta)?;
    let mut alpha = 1.0;
    let mut trial = beta.to_vec();
    for _ in 0..opts.warm_steps {
        let mut accepted = None;
        for _ in 0..50 {
            for r in 1..p {
                trial[r] = soft(beta[r] - alpha * grad[r - 1], alpha * lambda);
            }
            let step2: f64 = (1..p).map(|r| (trial[r] - beta[r]).powi(2)).sum();
            if step2 == 0.0 {
                return Ok(current);
            }
            if let Ok(hv) = crit.value(&trial) {
                let f = hv + penalty(&trial);
                if f <= current - 1e-4 * step2 / alpha {
                    accepted = Some(f);
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some(f) = accepted else { return Ok(current) };
        let (_, g_new) = crit.value_and_gradient(&trial)?;
        let (mut ss, mut sy) = (0.0, 0.0);
        for r in 1..p {
            let s = trial[r] - beta[r];
            ss += s * s;
            sy += s * (g_new[r - 1] - grad[r - 1]);
        }
        alpha = if sy > 0.0 { (ss / sy).clamp(1e-8, 1e4) } else { (alpha * 2.0).min(1e4) };
        beta.copy_from_slice(&trial);
        grad = g_new;
        current = f;
        history.push(current);
        // Stall over a window, since single steps can be short.
        const WINDOW: usize = 10;
        if history.len() > WINDOW {
            let decrease = history[history.len() - 1 - WINDOW] - current;
            if decrease <= WINDOW as f64 * opts.f_tol * (1.0 + current.abs()) {
                break;
            }
        }
    }
    Ok(current)
}

/// Regularized candidate: L1-penalized estimate at `lambda` on the full
/// sample and on each deleted-block sample.
pub fn fit_regularized_candidate(
    data: &Dataset,
    spec: &CandidateSpec,
    partition: &BlockPartition,
    lambda: f64,
    opts: &FitOptions,
    init: Option<&IndexCoefficients>,
) -> Result<FittedCandidate> {
    check_candidate(data, spec)?;
    check_partition(data, partition)?;
    let x_s = data.design(spec);
    let y = data.y();
    let pilot = init.cloned().unwrap_or_else(|| IndexCoefficients::anchor_only(spec.len()));
    let z = index_values(&x_s, pilot.as_slice());
    let (bw, _) = kernel::select_bandwidth_for_index(&z, y, &opts.kappa_grid, partition)?;
    let cd = opts.cd;
    let fit = l1_fit_design(&x_s, y, lambda, bw.h, Some(&pilot), &cd)?;
    let best = Minimized {
        beta: fit.beta_hat.clone(),
        objective: fit.objective,
        converged: fit.converged,
    };
    finish_candidate(data, spec, partition, &x_s, best, bw, Some(lambda), |retained, start| {
        let xr = x_s.select_rows(retained);
        let yr: Vec<f64> = retained.iter().map(|&i| y[i]).collect();
        l1_fit_design(&xr, &yr, lambda, bw.h, Some(start), &cd).map(|f| (f.beta_hat, f.converged))
    })
}
