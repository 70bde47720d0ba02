//! Small dense optimizers used by the estimators: BFGS with a backtracking
//! line search, and Brent's one-dimensional minimizer.

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop when the objective decrease falls below `f_tol * (1 + |f|)`.
    pub f_tol: f64,
    /// Stop when `max |g| <= g_tol * (1 + |f|)`.
    pub g_tol: f64,
    /// A stop on `f_tol` counts as converged only if `max |g|` is below
    /// `accept_g_tol * (1 + |f|)`.
    pub accept_g_tol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions {
            max_iter: 500,
            f_tol: 1e-8,
            g_tol: 1e-6,
            accept_g_tol: 1e-3,
        }
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `f` from `x0`. The callback returns `None` where the objective
/// is undefined; the line search backs off from such points.
pub fn bfgs<F>(mut f: F, x0: &[f64], opts: &BfgsOptions) -> Option<Minimum>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let d = x0.len();
    let (mut fx, mut g) = f(x0)?;
    let mut x = x0.to_vec();
    if d == 0 {
        return Some(Minimum {
            x,
            f: fx,
            grad: g,
            iterations: 0,
            converged: true,
        });
    }
    // Inverse Hessian approximation, row-major.
    let mut hinv = vec![0.0; d * d];
    let reset = |h: &mut Vec<f64>, scale: f64| {
        h.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..d {
            h[i * d + i] = scale;
        }
    };
    let init_scale = 1.0 / max_abs(&g).max(1.0);
    reset(&mut hinv, init_scale);

    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        if max_abs(&g) <= opts.g_tol * (1.0 + fx.abs()) {
            converged = true;
            break;
        }
        iterations += 1;
        let mut dir: Vec<f64> = (0..d)
            .map(|i| -(0..d).map(|j| hinv[i * d + j] * g[j]).sum::<f64>())
            .collect();
        let mut slope = dot(&dir, &g);
        if !(slope < 0.0) {
            reset(&mut hinv, init_scale);
            dir = g.iter().map(|v| -v * init_scale).collect();
            slope = dot(&dir, &g);
        }

        // Backtracking line search on the Armijo condition.
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + step * b).collect();
            if let Some((ft, gt)) = f(&trial) {
                if ft.is_finite() && ft <= fx + 1e-4 * step * slope {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            converged = max_abs(&g) <= opts.accept_g_tol * (1.0 + fx.abs());
            break;
        };

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let decrease = fx - f_new;
        x = x_new;
        fx = f_new;
        g = g_new;

        let sy = dot(&s, &yv);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&yv, &yv).sqrt() && sy > 0.0 {
            // H <- (I - rho s y') H (I - rho y s') + rho s s'
            let rho = 1.0 / sy;
            let hy: Vec<f64> = (0..d)
                .map(|i| (0..d).map(|j| hinv[i * d + j] * yv[j]).sum())
                .collect();
            let yhy = dot(&yv, &hy);
            for i in 0..d {
                for j in 0..d {
                    hinv[i * d + j] += -rho * (hy[i] * s[j] + s[i] * hy[j])
                        + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
        }

        if decrease <= opts.f_tol * (1.0 + fx.abs()) {
            converged = max_abs(&g) <= opts.accept_g_tol * (1.0 + fx.abs());
            break;
        }
    }
    if !converged && max_abs(&g) <= opts.g_tol * (1.0 + fx.abs()) {
        converged = true;
    }
    Some(Minimum {
        x,
        f: fx,
        grad: g,
        iterations,
        converged,
    })
}

/// Minimizes `f` on `[lo, hi]` by golden-section search with parabolic
/// acceleration (Brent). Returns the best point evaluated and its value;
/// the endpoints are not evaluated.
pub fn brent_minimize<F>(mut f: F, lo: f64, hi: f64, tol: f64, max_iter: usize) -> (f64, f64)
where
    F: FnMut(f64) -> f64,
{
    const CGOLD: f64 = 0.381_966_011_250_105_1;
    let (mut a, mut b) = (lo.min(hi), lo.max(hi));
    let mut x = a + CGOLD * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = f(x);
    let (mut fw, mut fv) = (fx, fx);
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    for _ in 0..max_iter {
        let xm = 0.5 * (a + b);
        let tol1 = tol * (x.abs() + 1.0);
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 && fx.is_finite() && fw.is_finite() && fv.is_finite() {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let etemp = e;
            if p.abs() < (0.5 * q * etemp).abs() && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = tol1.copysign(xm - x);
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= xm { a - x } else { b - x };
            d = CGOLD * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + tol1.copysign(d) };
        let fu = f(u);
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    (x, fx)
}

/// Minimizes `psi(s)` over `s >= 0` from `s0`, where `f` returns the value
/// and derivative of `psi` (`None` where undefined). Brackets a sign change
/// of the derivative by step doubling, then narrows it with secant steps
/// safeguarded by bisection. Returns the best point evaluated, which is
/// `(s0, f(s0))` when nothing better is found.
pub fn sided_minimize<F>(mut f: F, s0: f64, tol: f64, max_evals: usize) -> Option<(f64, f64)>
where
    F: FnMut(f64) -> Option<(f64, f64)>,
{
    let s0 = s0.max(0.0);
    let (v0, d0) = f(s0)?;
    let mut best = (s0, v0);
    let mut evals = 1;
    let mut probe = |s: f64, best: &mut (f64, f64), evals: &mut usize| -> Option<(f64, f64)> {
        *evals += 1;
        let r = f(s).filter(|(v, d)| v.is_finite() && d.is_finite());
        if let Some((v, _)) = r {
            if v < best.1 {
                *best = (s, v);
            }
        }
        r
    };

    // Bracket [lo, hi]: derivative negative at lo, and at hi either the
    // derivative is nonnegative or the value is above lo's.
    let (mut lo, mut vlo, mut dlo, mut hi, mut dhi);
    if d0 < 0.0 {
        lo = s0;
        vlo = v0;
        dlo = d0;
        let mut step = (0.25 * s0).max(0.05);
        loop {
            if evals >= max_evals || step > 1e6 {
                return Some(best);
            }
            let s = lo + step;
            match probe(s, &mut best, &mut evals) {
                Some((v, d)) if d < 0.0 && v <= vlo => {
                    lo = s;
                    vlo = v;
                    dlo = d;
                    step *= 2.0;
                }
                Some((_, d)) => {
                    hi = s;
                    dhi = d;
                    break;
                }
                None => {
                    hi = s;
                    dhi = f64::NAN;
                    break;
                }
            }
        }
    } else if d0 > 0.0 && s0 > 0.0 {
        let (vz, dz) = probe(0.0, &mut best, &mut evals)?;
        if dz >= 0.0 {
            return Some(best);
        }
        lo = 0.0;
        vlo = vz;
        dlo = dz;
        hi = s0;
        dhi = d0;
    } else {
        return Some(best);
    }

    // Illinois variant: when one end moves twice running, the other end's
    // derivative is halved so the secant cannot stall.
    let mut last_moved = 0i8;
    let mut prev_s = f64::NAN;
    while evals < max_evals && hi - lo > tol * (1.0 + lo.abs()) {
        let mut s = if dhi.is_finite() && dhi >= 0.0 && dlo < 0.0 {
            lo - dlo * (hi - lo) / (dhi - dlo)
        } else {
            0.5 * (lo + hi)
        };
        if !s.is_finite() {
            s = 0.5 * (lo + hi);
        }
        let margin = (0.5 * tol * (1.0 + lo.abs())).min(0.25 * (hi - lo));
        s = s.clamp(lo + margin, hi - margin);
        if (s - prev_s).abs() <= tol * (1.0 + s.abs()) {
            break;
        }
        prev_s = s;
        match probe(s, &mut best, &mut evals) {
            Some((v, d)) if d < 0.0 && v <= vlo => {
                lo = s;
                vlo = v;
                dlo = d;
                if last_moved == -1 && dhi.is_finite() {
                    dhi *= 0.5;
                }
                last_moved = -1;
            }
            Some((_, d)) => {
                hi = s;
                dhi = d;
                if last_moved == 1 {
                    dlo *= 0.5;
                }
                last_moved = 1;
            }
            None => {
                hi = s;
                dhi = f64::NAN;
                last_moved = 1;
            }
        }
    }
    let _ = vlo;
    Some(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bfgs_rosenbrock() {
        let rosen = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![
                -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
                200.0 * (b - a * a),
            ];
            Some((f, g))
        };
        let opts = BfgsOptions {
            f_tol: 0.0,
            g_tol: 1e-9,
            ..Default::default()
        };
        let m = bfgs(rosen, &[-1.2, 1.0], &opts).unwrap();
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn bfgs_backs_off_undefined_region() {
        // Undefined for x > 2; minimum of (x - 1)^2 at 1.
        let f = |x: &[f64]| {
            if x[0] > 2.0 {
                None
            } else {
                Some(((x[0] - 1.0).powi(2), vec![2.0 * (x[0] - 1.0)]))
            }
        };
        let m = bfgs(f, &[-30.0], &BfgsOptions::default()).unwrap();
        assert!((m.x[0] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn sided_search_cases() {
        // Interior minimum at 2.5 from the left and from the right.
        let q = |s: f64| Some(((s - 2.5).powi(2), 2.0 * (s - 2.5)));
        let (s, v) = sided_minimize(q, 0.0, 1e-10, 100).unwrap();
        assert!((s - 2.5).abs() < 1e-8 && v < 1e-15);
        let (s, _) = sided_minimize(q, 9.0, 1e-10, 100).unwrap();
        assert!((s - 2.5).abs() < 1e-8);
        // Increasing on the half-line: the boundary wins.
        let (s, v) = sided_minimize(|s: f64| Some((s + 1.0, 1.0)), 3.0, 1e-10, 100).unwrap();
        assert_eq!((s, v), (0.0, 1.0));
        // Kinked objective with slope change at 0.7.
        let k = |s: f64| Some(((s - 0.7).abs() + 0.1 * s * s, (s - 0.7).signum() + 0.2 * s));
        let (s, _) = sided_minimize(k, 0.0, 1e-12, 200).unwrap();
        assert!((s - 0.7).abs() < 1e-9);
        // Nonsmooth quartic: few evaluations.
        let mut calls = 0;
        let (s, _) = sided_minimize(
            |s: f64| {
                calls += 1;
                Some(((s - 0.3).powi(4) + (s - 0.3).powi(2), 4.0 * (s - 0.3).powi(3) + 2.0 * (s - 0.3)))
            },
            1.0,
            1e-9,
            100,
        )
        .unwrap();
        assert!((s - 0.3).abs() < 1e-8);
        assert!(calls < 25, "{calls}");
    }

    #[test]
    fn brent_quadratic_and_boundary() {
        let mut calls = 0;
        let (x, fx) = brent_minimize(
            |t| {
                calls += 1;
                (t - 0.3).powi(2) + 1.0
            },
            0.0,
            2.0,
            1e-8,
            200,
        );
        assert!((x - 0.3).abs() < 1e-7);
        assert!((fx - 1.0).abs() < 1e-15);
        assert!(calls < 20, "{calls} evaluations");
        // Minimum outside the interval: converges to the nearer end.
        let (x, _) = brent_minimize(|t| (t - 5.0).powi(2), 0.0, 1.0, 1e-8, 200);
        assert!((1.0 - x) < 1e-7);
        // Non-smooth: |t - 0.7| still located.
        let (x, _) = brent_minimize(|t| (t - 0.7).abs(), -1.0, 3.0, 1e-8, 200);
        assert!((x - 0.7).abs() < 1e-6);
    }
}
