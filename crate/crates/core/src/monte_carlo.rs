//! Simulation designs, replicated experiments and evaluation metrics.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Mutex, OnceLock};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use statrs::function::erf::erfc;

use crate::averaging::{fit_ensemble, lambda_path_plan, weigh, CandidateFit, Method};
use crate::data::{enumerate_candidates, make_partition, BlockPartition, CandidateSpec, Dataset};
use crate::error::{Error, Result};
use crate::estimator::{CoordinateDescentOptions, FitOptions};
use crate::kernel::{index_values, DEFAULT_KAPPA_GRID};
use crate::screening::screen_by_correlation;
use crate::weights::{minimize_on_simplex, residual_gram};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Link {
    /// `mu = sin(pi z / 6)`, `y = mu + c eps`.
    Sin,
    /// `y = max(z + c eps, 0)`, loss target `E[y | x]`.
    Tobit,
}

impl FromStr for Link {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sin" => Ok(Link::Sin),
            "tobit" => Ok(Link::Tobit),
            _ => Err(Error::invalid(format!("unknown link '{s}'; expected sin or tobit"))),
        }
    }
}

impl fmt::Display for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Link::Sin => "sin",
            Link::Tobit => "tobit",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Situation {
    One,
    Two,
    Three,
    Four,
    PGreaterN,
}

impl FromStr for Situation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "1" => Ok(Situation::One),
            "2" => Ok(Situation::Two),
            "3" => Ok(Situation::Three),
            "4" => Ok(Situation::Four),
            "p>n" | "pgreatern" | "p-greater-n" | "high" => Ok(Situation::PGreaterN),
            _ => Err(Error::invalid(format!(
                "unknown situation '{s}'; expected 1, 2, 3, 4 or p>n"
            ))),
        }
    }
}

impl fmt::Display for Situation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Situation::One => "1",
            Situation::Two => "2",
            Situation::Three => "3",
            Situation::Four => "4",
            Situation::PGreaterN => "p>n",
        })
    }
}

/// `ceil(1.5 n^(1/3))`.
pub fn segment_length(n: usize) -> usize {
    (1.5 * (n as f64).cbrt() - 1e-12).ceil() as usize
}

/// True coefficients. `p_high` is the dimension of the p > n design and
/// is ignored elsewhere.
pub fn situation_beta(situation: Situation, n: usize, p_high: usize) -> Result<Vec<f64>> {
    let tail = |pattern: &[f64]| {
        let len = segment_length(n);
        let mut b = vec![1.0];
        b.extend(pattern.iter().cycle().take(len));
        b.extend([1.0, 1.5]);
        b
    };
    Ok(match situation {
        Situation::One => vec![1.0, 1.5, 1.0, 0.0, 0.1, -1.5, 1.5],
        Situation::Two => vec![1.0, 1.5, 0.0, 1.0, 0.0, -1.5, 1.5],
        Situation::Three => tail(&[1.5, 1.0, 0.0, 0.1, -1.5]),
        Situation::Four => tail(&[1.5, 0.0, 1.0, 0.0, 0.0, -1.5, 0.0]),
        Situation::PGreaterN => {
            let head = [1.0, 2.0, 0.1, 3.0, 0.08, 4.0, 0.06, 5.0, 0.04, 6.0, 0.02];
            if p_high < head.len() + 1 {
                return Err(Error::invalid(format!(
                    "the p > n design needs at least {} covariates",
                    head.len() + 1
                )));
            }
            let mut b = vec![0.0; p_high];
            b[..head.len()].copy_from_slice(&head);
            b[p_high - 1] = 4.0;
            b
        }
    })
}

/// `Sigma[i,j] = rho^|i-j|`.
pub fn covariance(p: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |i, j| rho.powi((i as i64 - j as i64).unsigned_abs() as i32))
}

fn std_normal_cdf(t: f64) -> f64 {
    0.5 * erfc(-t / std::f64::consts::SQRT_2)
}

fn std_normal_pdf(t: f64) -> f64 {
    (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Conditional mean of the response at index value `z`.
pub fn conditional_mean(link: Link, z: f64, c: f64) -> f64 {
    match link {
        Link::Sin => (std::f64::consts::PI * z / 6.0).sin(),
        Link::Tobit => {
            if c <= 0.0 {
                z.max(0.0)
            } else {
                let t = z / c;
                z * std_normal_cdf(t) + c * std_normal_pdf(t)
            }
        }
    }
}

/// Response for index `z` and standard normal noise `e`.
pub fn response(link: Link, z: f64, c: f64, e: f64) -> f64 {
    match link {
        Link::Sin => conditional_mean(link, z, c) + c * e,
        Link::Tobit => (z + c * e).max(0.0),
    }
}

fn variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n
}

/// `var(E[y|x]) / var(y)` over a set of index and noise draws.
fn r_squared_on(link: Link, z: &[f64], e: &[f64], c: f64) -> f64 {
    let mu: Vec<f64> = z.iter().map(|&zi| conditional_mean(link, zi, c)).collect();
    let y: Vec<f64> = z.iter().zip(e).map(|(&zi, &ei)| response(link, zi, c, ei)).collect();
    variance(&mu) / variance(&y)
}

/// Index and noise draws; `x'beta` is normal with variance `beta' Sigma beta`,
/// so the index is drawn directly.
fn pilot_draws(beta: &[f64], rho: f64, draws: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let sigma = covariance(beta.len(), rho);
    let b = nalgebra::DVector::from_column_slice(beta);
    let sd = (b.transpose() * &sigma * &b)[(0, 0)].sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = Vec::with_capacity(draws);
    let mut e = Vec::with_capacity(draws);
    for _ in 0..draws {
        z.push(sd * rng.sample::<f64, _>(StandardNormal));
        e.push(rng.sample::<f64, _>(StandardNormal));
    }
    (z, e)
}

pub const PILOT_DRAWS: usize = 100_000;
const PILOT_SEED: u64 = 0x5151_7a11;

/// Empirical signal share for noise scale `c` on a fresh sample.
pub fn empirical_r_squared(link: Link, beta: &[f64], rho: f64, c: f64, draws: usize, seed: u64) -> f64 {
    let (z, e) = pilot_draws(beta, rho, draws, seed);
    r_squared_on(link, &z, &e, c)
}

type CalibrationKey = (Link, Vec<u64>, u64, u64);

fn calibration_cache() -> &'static Mutex<HashMap<CalibrationKey, f64>> {
    static CACHE: OnceLock<Mutex<HashMap<CalibrationKey, f64>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Noise scale `c` giving `var(E[y|x]) / var(y) = r_squared` on a fixed
/// pilot sample. Memoized per design.
pub fn calibrate_noise(link: Link, beta: &[f64], rho: f64, r_squared: f64) -> Result<f64> {
    if !(r_squared > 0.0 && r_squared < 1.0) {
        return Err(Error::invalid(format!("R^2 must lie in (0, 1), got {r_squared}")));
    }
    let key = (
        link,
        beta.iter().map(|b| b.to_bits()).collect(),
        rho.to_bits(),
        r_squared.to_bits(),
    );
    if let Some(&c) = calibration_cache().lock().expect("cache lock").get(&key) {
        return Ok(c);
    }
    let (z, e) = pilot_draws(beta, rho, PILOT_DRAWS, PILOT_SEED);
    let c = match link {
        Link::Sin => {
            let mu: Vec<f64> = z.iter().map(|&zi| conditional_mean(link, zi, 0.0)).collect();
            (variance(&mu) * (1.0 - r_squared) / r_squared).sqrt()
        }
        Link::Tobit => {
            // Signal share falls as c grows; bisect on log c.
            let sd = variance(&z).sqrt().max(1e-12);
            let (mut lo, mut hi) = ((sd * 1e-4).ln(), (sd * 1e4).ln());
            let f = |lc: f64| r_squared_on(link, &z, &e, lc.exp()) - r_squared;
            if f(lo) < 0.0 || f(hi) > 0.0 {
                return Err(Error::invalid(format!(
                    "cannot reach R^2 = {r_squared} with this design"
                )));
            }
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if f(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            (0.5 * (lo + hi)).exp()
        }
    };
    calibration_cache().lock().expect("cache lock").insert(key, c);
    Ok(c)
}

#[derive(Debug, Clone)]
pub struct DgpSpec {
    pub link: Link,
    pub situation: Situation,
    pub n_train: usize,
    pub n_test: usize,
    pub r_squared: f64,
    pub rho: f64,
    /// Dimension of the p > n design.
    pub p_high: usize,
}

impl DgpSpec {
    pub fn new(link: Link, situation: Situation, n_train: usize, r_squared: f64) -> Self {
        DgpSpec {
            link,
            situation,
            n_train,
            n_test: 1000,
            r_squared,
            rho: 0.5,
            p_high: 200,
        }
    }

    pub fn beta(&self) -> Result<Vec<f64>> {
        situation_beta(self.situation, self.n_train, self.p_high)
    }

    fn validate(&self) -> Result<()> {
        if !(self.r_squared > 0.0 && self.r_squared < 1.0) {
            return Err(Error::invalid(format!("R^2 must lie in (0, 1), got {}", self.r_squared)));
        }
        if self.n_test < 1 {
            return Err(Error::invalid("the test sample needs at least one observation"));
        }
        if self.n_train < 2 {
            return Err(Error::invalid("the training sample needs at least two observations"));
        }
        if !(self.rho.abs() < 1.0) {
            return Err(Error::invalid("covariate correlation must lie in (-1, 1)"));
        }
        Ok(())
    }
}

/// One simulated training and test sample.
#[derive(Debug, Clone)]
pub struct Sample {
    pub train: Dataset,
    pub x_test: DMatrix<f64>,
    pub y_test: Vec<f64>,
    pub mu_train: Vec<f64>,
    pub mu_test: Vec<f64>,
    pub noise_scale: f64,
}

/// Draws `n` rows of `(x, y, E[y|x])` from the design.
pub fn draw_rows(
    link: Link,
    beta: &[f64],
    rho: f64,
    c: f64,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> (DMatrix<f64>, Vec<f64>, Vec<f64>) {
    let p = beta.len();
    let chol = covariance(p, rho)
        .cholesky()
        .expect("the covariance is positive definite for |rho| < 1")
        .l();
    let e = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let x = e * chol.transpose();
    let z = index_values(&x, beta);
    let mu: Vec<f64> = z.iter().map(|&zi| conditional_mean(link, zi, c)).collect();
    let y: Vec<f64> = z
        .iter()
        .map(|&zi| response(link, zi, c, rng.sample::<f64, _>(StandardNormal)))
        .collect();
    (x, y, mu)
}

/// Deterministic in `(spec, seed, stream)`; replications use distinct streams.
pub fn generate(spec: &DgpSpec, seed: u64, stream: u64) -> Result<Sample> {
    spec.validate()?;
    let beta = spec.beta()?;
    let c = calibrate_noise(spec.link, &beta, spec.rho, spec.r_squared)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let (x, y, mu) = draw_rows(spec.link, &beta, spec.rho, c, spec.n_train + spec.n_test, &mut rng);
    let n = spec.n_train;
    let train_rows: Vec<usize> = (0..n).collect();
    let test_rows: Vec<usize> = (n..n + spec.n_test).collect();
    let names = (1..=beta.len()).map(|j| format!("x{j}")).collect();
    let train = Dataset::with_names(
        y[..n].to_vec(),
        x.select_rows(&train_rows),
        "y".into(),
        names,
    )?;
    Ok(Sample {
        train,
        x_test: x.select_rows(&test_rows),
        y_test: y[n..].to_vec(),
        mu_train: mu[..n].to_vec(),
        mu_test: mu[n..].to_vec(),
        noise_scale: c,
    })
}

/// A candidate is correct when it contains every covariate with a nonzero
/// true coefficient.
pub fn is_correct(spec: &CandidateSpec, beta: &[f64]) -> bool {
    beta.iter()
        .enumerate()
        .all(|(j, &b)| b == 0.0 || spec.contains(j))
}

#[derive(Debug, Clone)]
pub struct ExperimentSettings {
    pub methods: Vec<Method>,
    pub block_size: usize,
    pub kappa_grid: Vec<f64>,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub lambda_count: usize,
    /// Budget of the L1-penalized fits.
    pub cd: CoordinateDescentOptions,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        ExperimentSettings {
            methods: Method::ALL.to_vec(),
            block_size: 50,
            kappa_grid: DEFAULT_KAPPA_GRID.to_vec(),
            lambda_min: 0.001,
            lambda_max: 0.02,
            lambda_count: 10,
            cd: CoordinateDescentOptions {
                max_sweeps: 1,
                warm_steps: 300,
                f_tol: 1e-6,
                ..CoordinateDescentOptions::default()
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct CandidatePlan {
    pub specs: Vec<CandidateSpec>,
    pub kinds: Option<Vec<CandidateFit>>,
    pub correct: Vec<bool>,
}

/// Candidate set of a situation, built from the training sample only.
pub fn build_candidates(
    spec: &DgpSpec,
    train: &Dataset,
    partition: &BlockPartition,
    settings: &ExperimentSettings,
) -> Result<CandidatePlan> {
    let beta = spec.beta()?;
    let p = beta.len();
    let mut kinds = None;
    let specs = match spec.situation {
        Situation::One => enumerate_candidates(p, &[0], &[6], &[1, 2, 3, 4, 5])?,
        Situation::Two => enumerate_candidates(p, &[0, 6], &[], &[1, 2, 3, 4, 5])?,
        Situation::Three => {
            let len = segment_length(spec.n_train);
            screen_by_correlation(train, &[0], &[p - 2, p - 1], len)?.candidates
        }
        Situation::Four => {
            let len = segment_length(spec.n_train);
            screen_by_correlation(train, &[0, p - 2, p - 1], &[], len)?.candidates
        }
        Situation::PGreaterN => {
            let opts = FitOptions {
                kappa_grid: settings.kappa_grid.clone(),
                cd: settings.cd,
                ..FitOptions::default()
            };
            let (screen, fits) = lambda_path_plan(
                train,
                &[p - 1],
                settings.lambda_min,
                settings.lambda_max,
                settings.lambda_count,
                partition,
                &opts,
            )?;
            kinds = Some(fits);
            screen.candidates
        }
    };
    let correct = specs.iter().map(|s| is_correct(s, &beta)).collect();
    Ok(CandidatePlan { specs, kinds, correct })
}

#[derive(Debug, Clone)]
pub struct MethodOutcome {
    pub method: Method,
    /// `||mu_hat_test(w) - mu_test||^2`.
    pub loss: f64,
    /// Weights over the fitted candidates.
    pub weights: Vec<f64>,
    pub selected: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct ReplicationResult {
    pub replication: usize,
    pub n_candidates: usize,
    pub dropped: usize,
    pub outcomes: Vec<MethodOutcome>,
    /// Test loss of every fitted candidate.
    pub candidate_losses: Vec<f64>,
    pub correct: Vec<bool>,
    /// Smallest loss over all weight vectors.
    pub inf_loss: f64,
    /// Smallest loss over weights that put nothing on correct candidates;
    /// `None` when every candidate is correct.
    pub inf_loss_misspecified: Option<f64>,
    pub l_min: f64,
    /// Weight mass the averaging weights put on correct candidates, when
    /// the set holds any.
    pub w_delta: Option<f64>,
}

impl ReplicationResult {
    pub fn outcome(&self, m: Method) -> Option<&MethodOutcome> {
        self.outcomes.iter().find(|o| o.method == m)
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn run_replication(
    spec: &DgpSpec,
    settings: &ExperimentSettings,
    seed: u64,
    replication: usize,
) -> Result<ReplicationResult> {
    let sample = generate(spec, seed, replication as u64)?;
    let train = &sample.train;
    let partition = make_partition(train.n(), settings.block_size)?;
    let plan = build_candidates(spec, train, &partition, settings)?;
    let opts = FitOptions {
        kappa_grid: settings.kappa_grid.clone(),
        cd: settings.cd,
        ..FitOptions::default()
    };
    let ensemble = fit_ensemble(train, &plan.specs, plan.kinds.as_deref(), &partition, &opts)?;
    let weighting = weigh(train, &ensemble, &settings.methods)?;
    let preds = ensemble.predict_for_evaluation(train, &sample.x_test);
    let s = ensemble.len();
    let rows: Vec<Vec<f64>> = (0..s).map(|k| preds.row(k).iter().copied().collect()).collect();
    let candidate_losses: Vec<f64> = rows.iter().map(|r| squared_distance(r, &sample.mu_test)).collect();
    let correct: Vec<bool> = ensemble.source.iter().map(|&k| plan.correct[k]).collect();

    let cols: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
    let b = residual_gram(&cols, &sample.mu_test)?;
    let inf_loss = minimize_on_simplex(&b, None)?.objective;
    let mask: Vec<bool> = correct.iter().map(|c| !c).collect();
    let inf_loss_misspecified = if mask.iter().any(|&m| m) {
        Some(minimize_on_simplex(&b, Some(&mask))?.objective)
    } else {
        None
    };
    let l_min = candidate_losses.iter().copied().fold(f64::INFINITY, f64::min);

    let outcomes: Vec<MethodOutcome> = weighting
        .weights
        .iter()
        .map(|(m, w)| {
            let fitted = crate::averaging::combine(w, &preds);
            MethodOutcome {
                method: *m,
                loss: squared_distance(&fitted, &sample.mu_test),
                weights: w.clone(),
                selected: weighting.selected_by(*m),
            }
        })
        .collect();
    let w_delta = match (weighting.weights_of(Method::Jcvma), correct.iter().any(|&c| c)) {
        (Some(w), true) => Some(w.iter().zip(&correct).filter(|(_, &c)| c).map(|(w, _)| w).sum()),
        _ => None,
    };
    Ok(ReplicationResult {
        replication,
        n_candidates: s,
        dropped: ensemble.dropped.len(),
        outcomes,
        candidate_losses,
        correct,
        inf_loss,
        inf_loss_misspecified,
        l_min,
        w_delta,
    })
}

/// Runs `replications` independent replications in parallel. Replication
/// `d` uses stream `d` of the generator seeded with `seed`, so results do
/// not depend on scheduling. Failed replications are logged and skipped.
pub fn run_experiment(
    spec: &DgpSpec,
    settings: &ExperimentSettings,
    replications: usize,
    seed: u64,
) -> Result<Vec<ReplicationResult>> {
    if replications == 0 {
        return Err(Error::invalid("at least one replication is required"));
    }
    spec.validate()?;
    // Calibrate once before the workers start.
    calibrate_noise(spec.link, &spec.beta()?, spec.rho, spec.r_squared)?;
    let results: Vec<Option<ReplicationResult>> = crate::install(|| {
        (0..replications)
            .into_par_iter()
            .map(|d| match run_replication(spec, settings, seed, d) {
                Ok(r) => Some(r),
                Err(e) => {
                    log::warn!("replication {d} skipped: {e}");
                    None
                }
            })
            .collect()
    });
    Ok(results.into_iter().flatten().collect())
}

fn mean_ratio<F>(results: &[ReplicationResult], what: &str, mut ratio: F) -> Result<f64>
where
    F: FnMut(&ReplicationResult) -> Option<(f64, f64)>,
{
    let mut total = 0.0;
    let mut count = 0usize;
    for r in results {
        if let Some((num, den)) = ratio(r) {
            if den > 0.0 {
                total += num / den;
                count += 1;
            } else {
                log::warn!("replication {} has a zero {what} denominator; excluded", r.replication);
            }
        }
    }
    if count == 0 {
        return Err(Error::invalid(format!("no replication supports the {what} metric")));
    }
    Ok(total / count as f64)
}

fn loss_of(r: &ReplicationResult, m: Method) -> Option<f64> {
    r.outcome(m).map(|o| o.loss)
}

/// Mean of `L(method) / inf_w L(w)`.
pub fn metric_relative_loss(results: &[ReplicationResult], method: Method) -> Result<f64> {
    mean_ratio(results, "relative loss", |r| loss_of(r, method).map(|l| (l, r.inf_loss)))
}

/// Mean of `L(method) / min_s L_s`.
pub fn metric_nmspe(results: &[ReplicationResult], method: Method) -> Result<f64> {
    mean_ratio(results, "NMSPE", |r| loss_of(r, method).map(|l| (l, r.l_min)))
}

/// Mean of `L(method) / inf L(w)` over weights avoiding correct candidates.
pub fn metric_misspecified_relative_loss(results: &[ReplicationResult], method: Method) -> Result<f64> {
    mean_ratio(results, "misspecified relative loss", |r| {
        Some((loss_of(r, method)?, r.inf_loss_misspecified?))
    })
}

/// Mean weight mass on correct candidates.
pub fn metric_weight_consistency(results: &[ReplicationResult]) -> Result<f64> {
    let v: Vec<f64> = results.iter().filter_map(|r| r.w_delta).collect();
    if v.is_empty() {
        return Err(Error::invalid(
            "no replication has correct candidates or averaging weights",
        ));
    }
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}

/// Sample variance with the `n - 1` denominator.
pub fn sample_variance(y: &[f64]) -> Result<f64> {
    if y.len() < 2 {
        return Err(Error::invalid("variance needs at least two values"));
    }
    let n = y.len() as f64;
    let m = y.iter().sum::<f64>() / n;
    Ok(y.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0))
}

/// `n_test^-1 ||y_hat - y_test||^2 - sigma2`.
pub fn metric_mspe(y_test: &[f64], y_hat: &[f64], sigma2: f64) -> Result<f64> {
    if y_test.len() != y_hat.len() {
        return Err(Error::invalid("prediction and response lengths differ"));
    }
    if y_test.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    Ok(squared_distance(y_hat, y_test) / y_test.len() as f64 - sigma2)
}

/// Out-of-sample prediction errors over a sequence of time splits.
#[derive(Debug, Clone)]
pub struct MspeTable {
    pub fractions: Vec<f64>,
    pub train_sizes: Vec<usize>,
    pub methods: Vec<Method>,
    /// `mspe[m][k]` for method `m` at split `k`.
    pub mspe: Vec<Vec<f64>>,
}

impl MspeTable {
    /// Every entry divided by the full model's entry at the same split.
    pub fn normalized(&self) -> Result<Vec<Vec<f64>>> {
        let full = self
            .methods
            .iter()
            .position(|&m| m == Method::Full)
            .ok_or_else(|| Error::invalid("the table has no full-model row"))?;
        Ok(self
            .mspe
            .iter()
            .map(|row| row.iter().zip(&self.mspe[full]).map(|(v, f)| v / f).collect())
            .collect())
    }
}

/// Trains on the first `round(f n)` rows for each fraction `f`, predicts
/// the remaining rows, and reports MSPE with the variance of the whole
/// response series subtracted.
pub fn time_split_mspe(
    data: &Dataset,
    candidates: &[CandidateSpec],
    fractions: &[f64],
    settings: &ExperimentSettings,
) -> Result<MspeTable> {
    let n = data.n();
    let sigma2 = sample_variance(data.y())?;
    let mut methods = settings.methods.clone();
    if !methods.contains(&Method::Full) {
        methods.push(Method::Full);
    }
    let opts = FitOptions {
        kappa_grid: settings.kappa_grid.clone(),
        cd: settings.cd,
        ..FitOptions::default()
    };
    let mut mspe = vec![Vec::with_capacity(fractions.len()); methods.len()];
    let mut train_sizes = Vec::with_capacity(fractions.len());
    for &f in fractions {
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::invalid(format!("training fraction {f} outside (0, 1)")));
        }
        let n_train = (f * n as f64).round() as usize;
        if n_train < 2 || n_train >= n {
            return Err(Error::invalid(format!("fraction {f} leaves an empty sample")));
        }
        train_sizes.push(n_train);
        let train = data.subset_rows(&(0..n_train).collect::<Vec<_>>())?;
        let test_rows: Vec<usize> = (n_train..n).collect();
        let x_test = data.x().select_rows(&test_rows);
        let y_test: Vec<f64> = test_rows.iter().map(|&i| data.y()[i]).collect();
        let partition = make_partition(n_train, settings.block_size)?;
        let ensemble = fit_ensemble(&train, candidates, None, &partition, &opts)?;
        let weighting = weigh(&train, &ensemble, &methods)?;
        let preds = ensemble.predict(&train, &x_test)?;
        for (k, &m) in methods.iter().enumerate() {
            // A method without weights on this split is reported as NaN.
            let value = match weighting.weights_of(m) {
                Some(w) => metric_mspe(&y_test, &crate::averaging::combine(w, &preds), sigma2)?,
                None => f64::NAN,
            };
            mspe[k].push(value);
        }
    }
    Ok(MspeTable {
        fractions: fractions.to_vec(),
        train_sizes,
        methods,
        mspe,
    })
}
