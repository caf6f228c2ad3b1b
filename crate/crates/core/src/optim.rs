//! Small dense optimizers: a box-projected Nelder-Mead simplex and a BFGS
//! quasi-Newton method with backtracking line search.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadOptions {
    pub max_iter: usize,
    /// Relative spread of simplex values at which to stop.
    pub ftol: f64,
    /// Simplex diameter at which to stop.
    pub xtol: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self { max_iter: 200, ftol: 1e-6, xtol: 1e-10 }
    }
}

/// Nelder-Mead simplex search. Every trial point is projected onto `bounds`
/// (when given) before evaluation, so the result is always feasible. The
/// starting point is a vertex of the initial simplex, hence the returned
/// value never exceeds `f(x0)`.
pub fn nelder_mead<F>(
    mut f: F,
    x0: &[f64],
    step: &[f64],
    bounds: Option<&[(f64, f64)]>,
    opts: NelderMeadOptions,
) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let project = |x: &mut [f64]| {
        if let Some(b) = bounds {
            for (xi, (lo, hi)) in x.iter_mut().zip(b) {
                *xi = xi.clamp(*lo, *hi);
            }
        }
    };
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut start = x0.to_vec();
    project(&mut start);
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(start.clone());
    for i in 0..n {
        let mut v = start.clone();
        v[i] += step[i];
        project(&mut v);
        if v[i] == start[i] {
            // bound hit: step the other way
            v[i] = start[i] - step[i];
            project(&mut v);
        }
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(v, &mut evals)).collect();

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let best = values[0];
        let worst = values[n];
        let spread = (worst - best).abs();
        let diameter = simplex[1..]
            .iter()
            .map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if 2.0 * spread <= opts.ftol * (best.abs() + worst.abs()) + 1e-300 || diameter <= opts.xtol {
            converged = true;
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; n];
        for v in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / n as f64;
            }
        }
        let along = |coef: f64| -> Vec<f64> {
            centroid.iter().zip(&simplex[n]).map(|(c, w)| c + coef * (c - w)).collect()
        };

        let mut xr = along(alpha);
        project(&mut xr);
        let fr = eval(&xr, &mut evals);
        if fr < values[0] {
            let mut xe = along(alpha * gamma);
            project(&mut xe);
            let fe = eval(&xe, &mut evals);
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
            continue;
        }
        let (mut xc, outside) = if fr < values[n] { (along(alpha * rho), true) } else { (along(-rho), false) };
        project(&mut xc);
        let fc = eval(&xc, &mut evals);
        if (outside && fc <= fr) || (!outside && fc < values[n]) {
            simplex[n] = xc;
            values[n] = fc;
            continue;
        }
        // shrink towards the best vertex
        for k in 1..=n {
            let shrunk: Vec<f64> =
                simplex[0].iter().zip(&simplex[k]).map(|(b, v)| b + sigma * (v - b)).collect();
            simplex[k] = shrunk;
            values[k] = eval(&simplex[k], &mut evals);
        }
    }
    let (best_idx, _) = values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
        .expect("simplex has at least one vertex");
    Minimum {
        x: simplex[best_idx].clone(),
        f: values[best_idx],
        iterations,
        evaluations: evals,
        converged,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop when the largest gradient component falls below this.
    pub gtol: f64,
    /// Stop when the relative decrease of the objective falls below this.
    pub ftol: f64,
    /// Longest step allowed along the search direction.
    pub max_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self { max_iter: 100, gtol: 1e-6, ftol: 1e-10, max_step: 2.0 }
    }
}

/// BFGS on an unconstrained objective returning value and gradient. Non-finite
/// values are treated as +∞ by the line search.
pub fn bfgs<F>(mut fg: F, x0: &[f64], opts: BfgsOptions) -> Minimum
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut evals = 1;
    let (mut fx, mut g) = fg(&x);
    if !fx.is_finite() {
        return Minimum { x, f: f64::INFINITY, iterations: 0, evaluations: evals, converged: false };
    }
    let mut h = identity(n);
    let mut iterations = 0;
    let mut converged = false;
    let mut small_steps = 0;
    while iterations < opts.max_iter {
        if g.iter().fold(0.0f64, |m, v| m.max(v.abs())) < opts.gtol {
            converged = true;
            break;
        }
        iterations += 1;
        let mut dir: Vec<f64> = (0..n).map(|i| -(0..n).map(|j| h[i][j] * g[j]).sum::<f64>()).collect();
        let mut slope: f64 = dir.iter().zip(&g).map(|(d, gi)| d * gi).sum();
        if !(slope < 0.0) {
            // not a descent direction: reset to steepest descent
            h = identity(n);
            dir = g.iter().map(|v| -v).collect();
            slope = -g.iter().map(|v| v * v).sum::<f64>();
        }
        let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
        let mut step = if norm > opts.max_step { opts.max_step / norm } else { 1.0 };

        let mut accepted = None;
        for _ in 0..40 {
            let xn: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            let (fn_, gn) = fg(&xn);
            evals += 1;
            if fn_.is_finite() && fn_ <= fx + 1e-4 * step * slope {
                accepted = Some((xn, fn_, gn));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else {
            break;
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        if sy > 1e-12 * s.iter().map(|v| v * v).sum::<f64>().sqrt() * y.iter().map(|v| v * v).sum::<f64>().sqrt() {
            if iterations == 1 {
                let yy: f64 = y.iter().map(|v| v * v).sum();
                let scale = sy / yy;
                h = identity(n);
                for (i, row) in h.iter_mut().enumerate() {
                    row[i] = scale;
                }
            }
            let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[i][j] * y[j]).sum()).collect();
            let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
            let rho = 1.0 / sy;
            for i in 0..n {
                for j in 0..n {
                    h[i][j] += rho * ((1.0 + rho * yhy) * s[i] * s[j] - hy[i] * s[j] - s[i] * hy[j]);
                }
            }
        }
        let decrease = fx - fn_;
        x = xn;
        g = gn;
        let prev = fx;
        fx = fn_;
        if decrease <= opts.ftol * (prev.abs() + fx.abs() + 1e-12) {
            small_steps += 1;
            if small_steps >= 2 {
                converged = true;
                break;
            }
        } else {
            small_steps = 0;
        }
    }
    Minimum { x, f: fx, iterations, evaluations: evals, converged }
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> f64 {
        (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
    }

    #[test]
    fn nelder_mead_finds_rosenbrock_minimum() {
        let opts = NelderMeadOptions { max_iter: 2000, ftol: 1e-14, xtol: 1e-12 };
        let m = nelder_mead(rosenbrock, &[-1.2, 1.0], &[0.5, 0.5], None, opts);
        assert!((m.x[0] - 1.0).abs() < 1e-4 && (m.x[1] - 1.0).abs() < 1e-4, "{m:?}");
    }

    #[test]
    fn nelder_mead_respects_bounds() {
        let b = [(2.0, 5.0), (-1.0, 1.0)];
        let m = nelder_mead(
            |x: &[f64]| x[0] * x[0] + x[1] * x[1],
            &[4.0, 0.5],
            &[1.0, 1.0],
            Some(&b),
            NelderMeadOptions { max_iter: 500, ftol: 1e-12, xtol: 1e-12 },
        );
        assert!((m.x[0] - 2.0).abs() < 1e-6 && m.x[1].abs() < 1e-5, "{m:?}");
    }

    #[test]
    fn nelder_mead_never_worse_than_start() {
        let f = |x: &[f64]| (x[0] - 3.0).abs().sqrt() + (x[1] * 7.0).sin();
        let m = nelder_mead(f, &[0.0, 0.0], &[1.0, 1.0], None, NelderMeadOptions::default());
        assert!(m.f <= f(&[0.0, 0.0]));
    }

    #[test]
    fn bfgs_quadratic_and_rosenbrock() {
        let quad = |x: &[f64]| {
            let f = 3.0 * (x[0] - 1.0).powi(2) + (x[1] + 2.0).powi(2) + x[0] * x[1];
            (f, alloc::vec![6.0 * (x[0] - 1.0) + x[1], 2.0 * (x[1] + 2.0) + x[0]])
        };
        let m = bfgs(quad, &[0.0, 0.0], BfgsOptions::default());
        // stationary point of 6a + b = 6, a + 2b = -4
        let (a, b) = (16.0 / 11.0, -30.0 / 11.0);
        assert!((m.x[0] - a).abs() < 1e-6 && (m.x[1] - b).abs() < 1e-6, "{m:?}");

        let rb = |x: &[f64]| {
            let f = rosenbrock(x);
            let g0 = -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0]);
            let g1 = 200.0 * (x[1] - x[0] * x[0]);
            (f, alloc::vec![g0, g1])
        };
        let m = bfgs(rb, &[-1.2, 1.0], BfgsOptions { max_iter: 500, ..BfgsOptions::default() });
        assert!((m.x[0] - 1.0).abs() < 1e-4 && (m.x[1] - 1.0).abs() < 1e-4, "{m:?}");
    }
}
