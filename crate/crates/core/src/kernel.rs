//! Kernel functions, the bandwidth rule, and Nadaraya-Watson smoothers on
//! the single index `x'beta`.
//!
//! All fitted means are rows of a row-stochastic smoother matrix. The
//! admissible column set of row `i` depends on the [`SmootherMode`]:
//! every observation (`Full`), every observation except `i`
//! (`LeaveOneOut`), or every observation outside the CV block holding `i`
//! (`LeaveBlockOut`).

use nalgebra::DMatrix;

use crate::data::{BlockPartition, CandidateSpec, Dataset};
use crate::error::{Error, Result};

/// A second-order smoothing kernel.
pub trait Kernel: Sync {
    fn value(&self, u: f64) -> f64;
    fn derivative(&self, u: f64) -> f64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Gaussian;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

impl Kernel for Gaussian {
    #[inline]
    fn value(&self, u: f64) -> f64 {
        gaussian_kernel(u)
    }

    #[inline]
    fn derivative(&self, u: f64) -> f64 {
        -u * gaussian_kernel(u)
    }
}

/// Standard normal density.
#[inline]
pub fn gaussian_kernel(u: f64) -> f64 {
    (-0.5 * u * u).exp() * INV_SQRT_2PI
}

/// Bandwidth `h = kappa * n^(-1/5) * log(n)^(-1/6)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bandwidth {
    pub h: f64,
    pub kappa: f64,
}

impl Bandwidth {
    pub fn from_kappa(kappa: f64, n: usize) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::invalid(format!("bandwidth scale must be positive, got {kappa}")));
        }
        if n < 2 {
            return Err(Error::invalid("bandwidth rule needs n >= 2"));
        }
        Ok(Bandwidth {
            h: kappa * rate(n),
            kappa,
        })
    }

    /// Bandwidth given directly; `kappa` is backed out of the rule.
    pub fn fixed(h: f64, n: usize) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::invalid(format!("bandwidth must be positive, got {h}")));
        }
        if n < 2 {
            return Err(Error::invalid("bandwidth rule needs n >= 2"));
        }
        Ok(Bandwidth {
            h,
            kappa: h / rate(n),
        })
    }
}

fn rate(n: usize) -> f64 {
    let n = n as f64;
    n.powf(-0.2) * n.ln().powf(-1.0 / 6.0)
}

pub const DEFAULT_KAPPA_GRID: [f64; 5] = [0.5, 1.0, 1.5, 2.0, 3.0];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SmootherMode {
    Full,
    LeaveOneOut,
    LeaveBlockOut(BlockPartition),
}

impl SmootherMode {
    #[inline]
    pub fn admits(&self, i: usize, j: usize) -> bool {
        match self {
            SmootherMode::Full => true,
            SmootherMode::LeaveOneOut => i != j,
            SmootherMode::LeaveBlockOut(p) => p.block_of(i) != p.block_of(j),
        }
    }
}

/// Dense smoother matrix `W` with `fitted = W y`.
#[derive(Debug, Clone)]
pub struct SmootherMatrix {
    pub weights: DMatrix<f64>,
    pub mode: SmootherMode,
}

impl SmootherMatrix {
    pub fn trace(&self) -> f64 {
        self.weights.diagonal().sum()
    }

    pub fn n(&self) -> usize {
        self.weights.nrows()
    }
}

/// `X_s beta` for a candidate design.
pub fn index_values(x_s: &DMatrix<f64>, beta: &[f64]) -> Vec<f64> {
    assert_eq!(x_s.ncols(), beta.len(), "coefficient length must match the design");
    let n = x_s.nrows();
    let mut z = vec![0.0; n];
    for (c, &b) in beta.iter().enumerate() {
        if b == 0.0 {
            continue;
        }
        for (zi, xi) in z.iter_mut().zip(x_s.column(c).iter()) {
            *zi += b * xi;
        }
    }
    z
}

fn check_inputs(x_s: &DMatrix<f64>, beta: &[f64], h: &Bandwidth) -> Result<()> {
    if beta.len() != x_s.ncols() {
        return Err(Error::invalid(format!(
            "{} coefficients for a design with {} columns",
            beta.len(),
            x_s.ncols()
        )));
    }
    if !(h.h > 0.0) {
        return Err(Error::invalid("bandwidth must be positive"));
    }
    Ok(())
}

pub fn smoother_matrix(
    x_s: &DMatrix<f64>,
    beta: &[f64],
    h: &Bandwidth,
    mode: SmootherMode,
) -> Result<SmootherMatrix> {
    check_inputs(x_s, beta, h)?;
    let z = index_values(x_s, beta);
    smoother_from_index(&z, h.h, mode)
}

pub(crate) fn smoother_from_index(z: &[f64], h: f64, mode: SmootherMode) -> Result<SmootherMatrix> {
    let n = z.len();
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut total = 0.0;
        for j in 0..n {
            if mode.admits(i, j) {
                let k = gaussian_kernel((z[i] - z[j]) / h);
                w[(i, j)] = k;
                total += k;
            }
        }
        if total <= 0.0 {
            return Err(Error::DegenerateRow { row: i });
        }
        for j in 0..n {
            w[(i, j)] /= total;
        }
    }
    Ok(SmootherMatrix { weights: w, mode })
}

pub fn fitted_means(s: &SmootherMatrix, y: &[f64]) -> Vec<f64> {
    assert_eq!(s.n(), y.len(), "smoother and response dimensions differ");
    let y = nalgebra::DVectorView::from_slice(y, y.len());
    (&s.weights * y).iter().copied().collect()
}

/// In-sample Nadaraya-Watson fit and, optionally, its Jacobian with
/// respect to the full coefficient vector.
#[derive(Debug, Clone)]
pub(crate) struct NwFit {
    pub fitted: Vec<f64>,
    /// Row-major `n x p_s` matrix of `d fitted_i / d beta`.
    pub jacobian: Option<Vec<f64>>,
}

/// Row-major copy of a design, so that the pair loop reads contiguous rows.
pub(crate) fn row_major(x: &DMatrix<f64>) -> Vec<f64> {
    let (n, p) = x.shape();
    let mut out = vec![0.0; n * p];
    for c in 0..p {
        for (i, v) in x.column(c).iter().enumerate() {
            out[i * p + c] = *v;
        }
    }
    out
}

/// Pairs `(i, j)`, `i != j`, whose kernel weight can matter, each
/// unordered pair once.
///
/// Observations are visited in index order and pairs further apart than
/// `cut` are skipped, where `cut` leaves every dropped weight below
/// `exp(-40)` times the largest admissible weight of its row.
fn for_each_pair<F>(z: &[f64], h: f64, mode: SmootherMode, mut visit: F)
where
    F: FnMut(usize, usize, f64),
{
    let n = z.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| z[a].total_cmp(&z[b]));
    let zs: Vec<f64> = order.iter().map(|&i| z[i]).collect();

    // Largest distance from an observation to its nearest admissible partner.
    let mut widest: f64 = 0.0;
    if mode != SmootherMode::Full {
        for a in 0..n {
            let i = order[a];
            let mut nearest = f64::INFINITY;
            for b in (a + 1)..n {
                if zs[b] - zs[a] >= nearest {
                    break;
                }
                if mode.admits(i, order[b]) {
                    nearest = zs[b] - zs[a];
                    break;
                }
            }
            for b in (0..a).rev() {
                if zs[a] - zs[b] >= nearest {
                    break;
                }
                if mode.admits(i, order[b]) {
                    nearest = zs[a] - zs[b];
                    break;
                }
            }
            if nearest.is_finite() {
                widest = widest.max(nearest);
            }
        }
    }
    let reach = widest / h;
    let cut = h * (80.0 + reach * reach).sqrt();

    let inv_h = 1.0 / h;
    for a in 0..n {
        let i = order[a];
        let za = zs[a];
        for b in (a + 1)..n {
            if zs[b] - za > cut {
                break;
            }
            let j = order[b];
            if mode.admits(i, j) {
                visit(i, j, (z[i] - z[j]) * inv_h);
            }
        }
    }
}

/// Nadaraya-Watson fitted means at every observation for index values `z`.
///
/// The Gaussian weight is symmetric and its derivative antisymmetric in
/// the pair, so each unordered pair is evaluated once. With `x_rows`
/// supplied, the Jacobian of the fitted means in `beta` is accumulated
/// from `d g_i / d beta = sum_j k'(u_ij) (y_j - g_i) (x_i - x_j) / (h S_i)`.
pub(crate) fn nw_in_sample(
    z: &[f64],
    y: &[f64],
    h: f64,
    mode: SmootherMode,
    x_rows: Option<(&[f64], usize)>,
) -> Result<NwFit> {
    let n = z.len();
    let inv_h = 1.0 / h;
    let k0 = gaussian_kernel(0.0);
    // Per row: S = sum k, T = sum k y.
    let mut s = vec![0.0; n];
    let mut t = vec![0.0; n];
    if mode == SmootherMode::Full {
        for i in 0..n {
            s[i] = k0;
            t[i] = k0 * y[i];
        }
    }
    match x_rows {
        None => {
            for_each_pair(z, h, mode, |i, j, u| {
                let k = (-0.5 * u * u).exp() * INV_SQRT_2PI;
                s[i] += k;
                t[i] += k * y[j];
                s[j] += k;
                t[j] += k * y[i];
            });
            let mut fitted = vec![0.0; n];
            for i in 0..n {
                if s[i] <= 0.0 {
                    return Err(Error::DegenerateRow { row: i });
                }
                fitted[i] = t[i] / s[i];
            }
            Ok(NwFit {
                fitted,
                jacobian: None,
            })
        }
        Some((xr, p)) => {
            // D0 = sum k', D1 = sum k' y, E = sum k' x_j, F = sum k' y_j x_j,
            // with k' evaluated at u_ij = (z_i - z_j)/h.
            let mut d0 = vec![0.0; n];
            let mut d1 = vec![0.0; n];
            let mut e = vec![0.0; n * p];
            let mut f = vec![0.0; n * p];
            for_each_pair(z, h, mode, |i, j, u| {
                let k = (-0.5 * u * u).exp() * INV_SQRT_2PI;
                let kd = -u * k;
                let (yi, yj) = (y[i], y[j]);
                s[i] += k;
                t[i] += k * yj;
                s[j] += k;
                t[j] += k * yi;
                // k'(u_ji) = -k'(u_ij)
                d0[i] += kd;
                d1[i] += kd * yj;
                d0[j] -= kd;
                d1[j] -= kd * yi;
                let xi = &xr[i * p..(i + 1) * p];
                let xj = &xr[j * p..(j + 1) * p];
                let kdy_j = kd * yj;
                let kdy_i = kd * yi;
                for c in 0..p {
                    e[i * p + c] += kd * xj[c];
                    f[i * p + c] += kdy_j * xj[c];
                    e[j * p + c] -= kd * xi[c];
                    f[j * p + c] -= kdy_i * xi[c];
                }
            });
            let mut fitted = vec![0.0; n];
            let mut jac = vec![0.0; n * p];
            for i in 0..n {
                if s[i] <= 0.0 {
                    return Err(Error::DegenerateRow { row: i });
                }
                let g = t[i] / s[i];
                fitted[i] = g;
                let scale = inv_h / s[i];
                let a = d1[i] - g * d0[i];
                for c in 0..p {
                    let b = f[i * p + c] - g * e[i * p + c];
                    jac[i * p + c] = (xr[i * p + c] * a - b) * scale;
                }
            }
            Ok(NwFit {
                fitted,
                jacobian: Some(jac),
            })
        }
    }
}

/// Nadaraya-Watson predictions at query indices from training pairs.
/// Like [`nw_predict`], but a query whose kernel weights all underflow is
/// evaluated with every exponent shifted by the row's smallest one. The
/// ratio is unchanged in exact arithmetic; far queries get the response of
/// the nearest training indices instead of an error.
pub(crate) fn nw_predict_shifted(z_train: &[f64], y_train: &[f64], z_query: &[f64], h: f64) -> Vec<f64> {
    let inv_h = 1.0 / h;
    z_query
        .iter()
        .map(|&zq| {
            let sq = |zj: f64| {
                let u = (zq - zj) * inv_h;
                0.5 * u * u
            };
            let mut s = 0.0;
            let mut t = 0.0;
            for (&zj, &yj) in z_train.iter().zip(y_train) {
                let k = (-sq(zj)).exp();
                s += k;
                t += k * yj;
            }
            if s > 0.0 {
                return t / s;
            }
            let shift = z_train.iter().map(|&zj| sq(zj)).fold(f64::INFINITY, f64::min);
            let (mut s, mut t) = (0.0, 0.0);
            for (&zj, &yj) in z_train.iter().zip(y_train) {
                let k = (shift - sq(zj)).exp();
                s += k;
                t += k * yj;
            }
            t / s
        })
        .collect()
}

pub(crate) fn nw_predict(z_train: &[f64], y_train: &[f64], z_query: &[f64], h: f64) -> Result<Vec<f64>> {
    let inv_h = 1.0 / h;
    z_query
        .iter()
        .enumerate()
        .map(|(q, &zq)| {
            let mut s = 0.0;
            let mut t = 0.0;
            for (&zj, &yj) in z_train.iter().zip(y_train) {
                let u = (zq - zj) * inv_h;
                let k = (-0.5 * u * u).exp();
                s += k;
                t += k * yj;
            }
            if s <= 0.0 {
                Err(Error::DegenerateRow { row: q })
            } else {
                Ok(t / s)
            }
        })
        .collect()
}

/// Derivative of the Nadaraya-Watson fitted mean at observation `at_row`
/// with respect to every coefficient, both the evaluation point and the
/// training indices moving with `beta`.
pub fn link_derivative(
    x_s: &DMatrix<f64>,
    beta: &[f64],
    h: &Bandwidth,
    y: &[f64],
    at_row: usize,
) -> Result<Vec<f64>> {
    check_inputs(x_s, beta, h)?;
    if at_row >= x_s.nrows() {
        return Err(Error::invalid(format!("row {at_row} out of range")));
    }
    let jac = jacobian(x_s, beta, h, y, SmootherMode::Full)?;
    Ok(jac.row(at_row).iter().copied().collect())
}

/// `n x p_s` Jacobian of the fitted means in the given mode.
pub(crate) fn jacobian(
    x_s: &DMatrix<f64>,
    beta: &[f64],
    h: &Bandwidth,
    y: &[f64],
    mode: SmootherMode,
) -> Result<DMatrix<f64>> {
    let z = index_values(x_s, beta);
    let p = x_s.ncols();
    let xr = row_major(x_s);
    let fit = nw_in_sample(&z, y, h.h, mode, Some((&xr, p)))?;
    let jac = fit.jacobian.expect("jacobian requested");
    Ok(DMatrix::from_row_slice(x_s.nrows(), p, &jac))
}

/// Leave-block-out squared prediction error `sum_i (y~_i - y_i)^2` at a
/// fixed coefficient vector.
pub(crate) fn block_cv_error(z: &[f64], y: &[f64], h: f64, partition: &BlockPartition) -> Result<f64> {
    let fit = nw_in_sample(z, y, h, SmootherMode::LeaveBlockOut(*partition), None)?;
    Ok(fit
        .fitted
        .iter()
        .zip(y)
        .map(|(f, y)| (f - y) * (f - y))
        .sum())
}

/// Picks the grid value of `kappa` with the smallest leave-block-out
/// prediction error at `beta`. Ties go to the smaller `kappa`.
pub fn select_bandwidth(
    data: &Dataset,
    spec: &CandidateSpec,
    beta: &[f64],
    kappa_grid: &[f64],
    partition: &BlockPartition,
) -> Result<Bandwidth> {
    let x_s = data.design(spec);
    if beta.len() != x_s.ncols() {
        return Err(Error::invalid("coefficient length does not match the candidate"));
    }
    let z = index_values(&x_s, beta);
    select_bandwidth_for_index(&z, data.y(), kappa_grid, partition).map(|(b, _)| b)
}

pub(crate) fn select_bandwidth_for_index(
    z: &[f64],
    y: &[f64],
    kappa_grid: &[f64],
    partition: &BlockPartition,
) -> Result<(Bandwidth, f64)> {
    if kappa_grid.is_empty() {
        return Err(Error::invalid("empty bandwidth grid"));
    }
    if kappa_grid.iter().any(|&k| !(k > 0.0 && k.is_finite())) {
        return Err(Error::invalid("bandwidth grid values must be positive"));
    }
    if partition.is_degenerate() {
        return Err(Error::invalid(
            "bandwidth selection needs at least two CV blocks",
        ));
    }
    if partition.n() != z.len() {
        return Err(Error::invalid("partition size does not match the data"));
    }
    let mut grid = kappa_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let n = z.len();
    let mut best: Option<(Bandwidth, f64)> = None;
    for kappa in grid {
        let bw = Bandwidth::from_kappa(kappa, n)?;
        match block_cv_error(z, y, bw.h, partition) {
            Ok(err) if err.is_finite() => {
                if best.map_or(true, |(_, e)| err < e) {
                    best = Some((bw, err));
                }
            }
            Ok(_) | Err(Error::DegenerateRow { .. }) => {}
            Err(other) => return Err(other),
        }
    }
    best.ok_or(Error::NoValidBandwidth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_design(n: usize, p: usize, seed: u64) -> (DMatrix<f64>, Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, _| rng.gen_range(-2.0..2.0));
        let mut beta: Vec<f64> = (0..p).map(|_| rng.gen_range(-1.0..1.0)).collect();
        beta[0] = 1.0;
        let y = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        (x, beta, y)
    }

    #[test]
    fn gaussian_values() {
        assert_relative_eq!(gaussian_kernel(0.0), 0.3989422804, epsilon = 1e-10);
        assert_relative_eq!(gaussian_kernel(1.0), 0.2419707245, epsilon = 1e-10);
        for u in [0.1, 0.7, 2.5, 10.0] {
            assert_eq!(gaussian_kernel(u), gaussian_kernel(-u));
            assert!(gaussian_kernel(u) <= gaussian_kernel(0.0));
        }
    }

    #[test]
    fn bandwidth_rule() {
        let b = Bandwidth::from_kappa(1.0, 100).unwrap();
        let expected = 100f64.powf(-0.2) * 100f64.ln().powf(-1.0 / 6.0);
        assert_relative_eq!(b.h, expected, max_relative = 1e-14);
        let f = Bandwidth::fixed(b.h * 2.0, 100).unwrap();
        assert_relative_eq!(f.kappa, 2.0, max_relative = 1e-12);
        assert!(Bandwidth::from_kappa(0.0, 100).is_err());
        assert!(Bandwidth::from_kappa(1.0, 1).is_err());
    }

    #[test]
    fn equal_indices_give_uniform_rows() {
        let x = DMatrix::from_row_slice(2, 1, &[0.3, 0.3]);
        let h = Bandwidth::fixed(1.0, 2).unwrap();
        let s = smoother_matrix(&x, &[1.0], &h, SmootherMode::Full).unwrap();
        assert!(s.weights.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn three_point_full_smoother_matches_scalar_formula() {
        let x = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 2.0]);
        let h = Bandwidth::fixed(1.0, 3).unwrap();
        let s = smoother_matrix(&x, &[1.0], &h, SmootherMode::Full).unwrap();
        // Hand-normalized Gaussian weights, phi(0), phi(1), phi(2) etc.
        let phi = |u: f64| (-u * u / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let z = [0.0, 1.0, 2.0];
        for i in 0..3 {
            let denom: f64 = z.iter().map(|zj| phi(z[i] - zj)).sum();
            for j in 0..3 {
                assert_relative_eq!(s.weights[(i, j)], phi(z[i] - z[j]) / denom, max_relative = 1e-14);
            }
        }
        assert_relative_eq!(s.weights[(0, 0)], 0.3989422804 / (0.3989422804 + 0.2419707245 + 0.0539909665), max_relative = 1e-9);
    }

    #[test]
    fn leave_block_out_zero_prefix() {
        let (x, beta, _) = random_design(20, 2, 3);
        let part = BlockPartition::new(20, 10).unwrap();
        let h = Bandwidth::fixed(1.0, 20).unwrap();
        let s = smoother_matrix(&x, &beta, &h, SmootherMode::LeaveBlockOut(part)).unwrap();
        for j in 0..10 {
            assert_eq!(s.weights[(0, j)], 0.0);
        }
        assert!(s.weights.row(0).iter().skip(10).all(|&v| v > 0.0));
        for i in 10..20 {
            for j in 10..20 {
                assert_eq!(s.weights[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn degenerate_row_reported() {
        let x = DMatrix::from_row_slice(3, 1, &[0.0, 100.0, 200.0]);
        let h = Bandwidth::fixed(0.1, 3).unwrap();
        match smoother_matrix(&x, &[1.0], &h, SmootherMode::LeaveOneOut) {
            Err(Error::DegenerateRow { row }) => assert_eq!(row, 0),
            other => panic!("expected degenerate row, got {other:?}"),
        }
    }

    #[test]
    fn fitted_means_basic_cases() {
        let n = 4;
        let uniform = SmootherMatrix {
            weights: DMatrix::from_element(n, n, 1.0 / n as f64),
            mode: SmootherMode::Full,
        };
        let y = [1.0, 2.0, 3.0, 6.0];
        for v in fitted_means(&uniform, &y) {
            assert_relative_eq!(v, 3.0, max_relative = 1e-15);
        }
        assert_relative_eq!(uniform.trace(), 1.0, max_relative = 1e-15);

        let (x, beta, yr) = random_design(4, 2, 11);
        let h = Bandwidth::fixed(0.8, 4).unwrap();
        let s = smoother_matrix(&x, &beta, &h, SmootherMode::Full).unwrap();
        for v in fitted_means(&s, &[2.5; 4]) {
            assert_relative_eq!(v, 2.5, max_relative = 1e-14);
        }
        let got = fitted_means(&s, &yr);
        for i in 0..4 {
            let mut acc = 0.0;
            for j in 0..4 {
                acc += s.weights[(i, j)] * yr[j];
            }
            assert_relative_eq!(got[i], acc, max_relative = 1e-14);
        }
    }

    #[test]
    fn fast_path_matches_dense_smoother() {
        let (x, beta, y) = random_design(30, 3, 5);
        let h = Bandwidth::fixed(0.7, 30).unwrap();
        let part = BlockPartition::new(30, 10).unwrap();
        for mode in [SmootherMode::Full, SmootherMode::LeaveOneOut, SmootherMode::LeaveBlockOut(part)] {
            let dense = fitted_means(&smoother_matrix(&x, &beta, &h, mode).unwrap(), &y);
            let z = index_values(&x, &beta);
            let fast = nw_in_sample(&z, &y, h.h, mode, None).unwrap().fitted;
            let xr = row_major(&x);
            let with_jac = nw_in_sample(&z, &y, h.h, mode, Some((&xr, 3))).unwrap().fitted;
            for i in 0..30 {
                assert_relative_eq!(dense[i], fast[i], max_relative = 1e-12, epsilon = 1e-14);
                assert_relative_eq!(dense[i], with_jac[i], max_relative = 1e-12, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn link_derivative_flat_for_constant_response() {
        let (x, beta, _) = random_design(6, 3, 2);
        let h = Bandwidth::fixed(1.0, 6).unwrap();
        let d = link_derivative(&x, &beta, &h, &[4.0; 6], 2).unwrap();
        assert!(d.iter().all(|v| v.abs() < 1e-12));
    }

    fn finite_difference_check(n: usize, p: usize, seed: u64, mode: SmootherMode) {
        let (x, beta, y) = random_design(n, p, seed);
        let h = Bandwidth::fixed(0.9, n).unwrap();
        let jac = jacobian(&x, &beta, &h, &y, mode).unwrap();
        let step = 1e-5;
        for c in 0..p {
            let mut up = beta.clone();
            up[c] += step;
            let mut dn = beta.clone();
            dn[c] -= step;
            let fu = fitted_means(&smoother_matrix(&x, &up, &h, mode).unwrap(), &y);
            let fd = fitted_means(&smoother_matrix(&x, &dn, &h, mode).unwrap(), &y);
            for i in 0..n {
                let numeric = (fu[i] - fd[i]) / (2.0 * step);
                let analytic = jac[(i, c)];
                let scale = numeric.abs().max(analytic.abs()).max(1e-3);
                assert!(
                    (numeric - analytic).abs() / scale < 1e-5,
                    "row {i} coord {c}: numeric {numeric} analytic {analytic}"
                );
            }
        }
    }

    #[test]
    fn link_derivative_matches_finite_differences() {
        finite_difference_check(5, 3, 7, SmootherMode::Full);
        let (x, beta, y) = random_design(5, 3, 7);
        let h = Bandwidth::fixed(0.9, 5).unwrap();
        let row = link_derivative(&x, &beta, &h, &y, 3).unwrap();
        let jac = jacobian(&x, &beta, &h, &y, SmootherMode::Full).unwrap();
        assert_eq!(row, jac.row(3).iter().copied().collect::<Vec<_>>());
    }

    #[test]
    fn leave_one_out_jacobian_matches_finite_differences() {
        finite_difference_check(12, 2, 8, SmootherMode::LeaveOneOut);
        let part = BlockPartition::new(12, 4).unwrap();
        finite_difference_check(12, 2, 9, SmootherMode::LeaveBlockOut(part));
    }

    #[test]
    fn rescaling_beta_and_h_together_keeps_derivative_signs() {
        let x = DMatrix::from_row_slice(3, 2, &[0.0, 1.0, 1.0, -0.5, 2.0, 0.3]);
        let y = [0.2, 1.0, -0.4];
        let beta = [1.0, 0.4];
        let h = Bandwidth::fixed(0.8, 3).unwrap();
        let d1 = link_derivative(&x, &beta, &h, &y, 1).unwrap();
        let scaled: Vec<f64> = beta.iter().map(|b| 2.0 * b).collect();
        let h2 = Bandwidth::fixed(1.6, 3).unwrap();
        // The fitted mean depends on beta/h only, so the derivative scales by 1/2.
        let d2 = link_derivative(&x, &scaled, &h2, &y, 1).unwrap();
        for (a, b) in d1.iter().zip(&d2) {
            assert_eq!(a.signum(), b.signum());
            assert_relative_eq!(*a, 2.0 * b, max_relative = 1e-10);
        }
    }

    #[test]
    fn singleton_grid_returns_its_value() {
        let (x, _, y) = random_design(40, 1, 4);
        let data = Dataset::new(y, x).unwrap();
        let spec = CandidateSpec::new(vec![0], 1).unwrap();
        let part = BlockPartition::new(40, 20).unwrap();
        let b = select_bandwidth(&data, &spec, &[1.0], &[1.5], &part).unwrap();
        assert_eq!(b.kappa, 1.5);
    }

    #[test]
    fn grid_search_picks_minimal_cv_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 100;
        let x: DMatrix<f64> = DMatrix::from_fn(n, 1, |_, _| rng.gen_range(-3.0..3.0));
        let y: Vec<f64> = (0..n).map(|i| x[(i, 0)].sin() + 0.2 * rng.gen_range(-1.0..1.0)).collect();
        let data = Dataset::new(y.clone(), x.clone()).unwrap();
        let spec = CandidateSpec::new(vec![0], 1).unwrap();
        let part = BlockPartition::new(n, 50).unwrap();
        let grid = [0.5, 1.0, 2.0];
        let chosen = select_bandwidth(&data, &spec, &[1.0], &grid, &part).unwrap();
        // Exhaustive oracle on the dense leave-block-out smoother.
        let errs: Vec<f64> = grid
            .iter()
            .map(|&k| {
                let h = Bandwidth::from_kappa(k, n).unwrap();
                let s = smoother_matrix(&x, &[1.0], &h, SmootherMode::LeaveBlockOut(part)).unwrap();
                fitted_means(&s, &y).iter().zip(&y).map(|(f, y)| (f - y).powi(2)).sum()
            })
            .collect();
        let best = errs.iter().cloned().fold(f64::INFINITY, f64::min);
        let idx = grid.iter().position(|&k| k == chosen.kappa).unwrap();
        assert_eq!(errs[idx], best);
    }

    #[test]
    fn all_degenerate_grid_errors() {
        let x = DMatrix::from_row_slice(4, 1, &[0.0, 1e6, 2e6, 3e6]);
        let data = Dataset::new(vec![1.0, 2.0, 3.0, 4.0], x).unwrap();
        let spec = CandidateSpec::new(vec![0], 1).unwrap();
        let part = BlockPartition::new(4, 2).unwrap();
        assert!(matches!(
            select_bandwidth(&data, &spec, &[1.0], &[0.5, 1.0], &part),
            Err(Error::NoValidBandwidth)
        ));
    }

    proptest! {
        #[test]
        fn rows_are_stochastic(seed in 0u64..10_000, n in 3usize..25, hval in 0.3f64..3.0, block in 1usize..8) {
            let (x, beta, _) = random_design(n, 2, seed);
            let h = Bandwidth::fixed(hval, n).unwrap();
            let block = block.min(n / 2).max(1);
            let part = BlockPartition::new(n, block).unwrap();
            for mode in [SmootherMode::Full, SmootherMode::LeaveOneOut, SmootherMode::LeaveBlockOut(part)] {
                let s = match smoother_matrix(&x, &beta, &h, mode) {
                    Ok(s) => s,
                    Err(Error::DegenerateRow { .. }) => continue,
                    Err(e) => return Err(TestCaseError::fail(e.to_string())),
                };
                for i in 0..n {
                    let row_sum: f64 = s.weights.row(i).iter().sum();
                    prop_assert!((row_sum - 1.0).abs() < 1e-10);
                    for j in 0..n {
                        prop_assert!(s.weights[(i, j)] >= 0.0);
                        if !mode.admits(i, j) {
                            prop_assert_eq!(s.weights[(i, j)], 0.0);
                        }
                    }
                }
            }
        }

        #[test]
        fn kernel_decays_in_abs(a in -20.0f64..20.0, b in -20.0f64..20.0) {
            if a.abs() <= b.abs() {
                prop_assert!(gaussian_kernel(a) >= gaussian_kernel(b));
            }
            prop_assert_eq!(gaussian_kernel(a), gaussian_kernel(-a));
        }
    }
    #[test]
    fn shifted_prediction_matches_strict_and_handles_far_queries() {
        let z = [0.0, 0.5, 1.0, 1.5];
        let y = [1.0, 2.0, 3.0, 4.0];
        let q = [0.2, 1.1];
        let strict = nw_predict(&z, &y, &q, 0.4).unwrap();
        let shifted = nw_predict_shifted(&z, &y, &q, 0.4);
        for (a, b) in strict.iter().zip(&shifted) {
            assert_relative_eq!(a, b, epsilon = 1e-14);
        }
        assert!(nw_predict(&z, &y, &[500.0], 0.4).is_err());
        let far = nw_predict_shifted(&z, &y, &[500.0, -500.0], 0.4);
        assert_relative_eq!(far[0], 4.0, epsilon = 1e-12);
        assert_relative_eq!(far[1], 1.0, epsilon = 1e-12);
    }
}
