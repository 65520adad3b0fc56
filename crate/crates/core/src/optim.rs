//! Derivative-free optimizers: bounded Brent search for scalar parameters and
//! Nelder–Mead for the rotation angles.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Result of a scalar maximization.
#[derive(Debug, Clone, Copy)]
pub struct ScalarMax {
    pub x: f64,
    pub fx: f64,
    pub evals: usize,
}

/// Maximize `f` on `[a, b]` with Brent's parabolic/golden-section method.
///
/// `xtol` is an absolute tolerance on the abscissa.
pub fn brent_max<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, xtol: f64, max_iter: usize) -> ScalarMax {
    const GOLDEN: f64 = 0.381_966_011_250_105_1;
    let mut g = |x: f64| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            -v
        }
    };
    let (mut a, mut b) = if a < b { (a, b) } else { (b, a) };
    let mut x = a + GOLDEN * (b - a);
    let mut w = x;
    let mut v = x;
    let mut fx = g(x);
    let mut fw = fx;
    let mut fv = fx;
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    let mut evals = 1;
    for _ in 0..max_iter {
        let xm = 0.5 * (a + b);
        let tol1 = 1e-10 * x.abs() + xtol / 3.0;
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let etemp = e;
            e = d;
            if p.abs() < (0.5 * q * etemp).abs() && p > q * (a - x) && p < q * (b - x) {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if xm >= x { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= xm { a - x } else { b - x };
            d = GOLDEN * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else if d > 0.0 {
            x + tol1
        } else {
            x - tol1
        };
        let fu = g(u);
        evals += 1;
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
    ScalarMax { x, fx: -fx, evals }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NelderMeadOptions {
    /// Initial simplex edge length along each coordinate.
    pub step: f64,
    /// Stop once the largest vertex distance to the best vertex falls below this.
    pub diameter_tol: f64,
    pub max_evals: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions { step: 0.3, diameter_tol: 1e-4, max_evals: 2000 }
    }
}

#[derive(Debug, Clone)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub fx: f64,
    pub evals: usize,
    pub converged: bool,
}

/// Maximize `f` from `x0` with the Nelder–Mead simplex method.
///
/// Points where `f` is `-inf` or NaN are treated as infinitely bad.
pub fn nelder_mead_max<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    opts: &NelderMeadOptions,
) -> NelderMeadResult {
    let n = x0.len();
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    };
    if n == 0 {
        let fx = eval(x0, &mut evals);
        return NelderMeadResult { x: vec![], fx, evals, converged: true };
    }

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += opts.step;
        simplex.push(p);
    }
    let mut values: Vec<f64> = simplex.iter().map(|p| eval(p, &mut evals)).collect();

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut converged = false;
    loop {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let diameter = simplex[1..]
            .iter()
            .map(|p| p.iter().zip(&simplex[0]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        if diameter < opts.diameter_tol && values[0].is_finite() {
            converged = true;
            break;
        }
        if evals >= opts.max_evals {
            break;
        }

        let mut centroid = vec![0.0; n];
        for p in &simplex[..n] {
            for (c, v) in centroid.iter_mut().zip(p) {
                *c += v / n as f64;
            }
        }
        let worst = simplex[n].clone();
        let along = |t: f64| -> Vec<f64> {
            centroid.iter().zip(&worst).map(|(c, w)| c + t * (c - w)).collect()
        };

        let xr = along(alpha);
        let fr = eval(&xr, &mut evals);
        if fr > values[0] {
            let xe = along(gamma);
            let fe = eval(&xe, &mut evals);
            if fe > fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
            continue;
        }
        if fr > values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
            continue;
        }
        let (xc, fc) = if fr > values[n] {
            let xc = along(rho);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        } else {
            let xc = along(-rho);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        };
        if fc > values[n].max(fr) || (fc >= fr && fc > values[n]) {
            simplex[n] = xc;
            values[n] = fc;
            continue;
        }
        let best = simplex[0].clone();
        for i in 1..=n {
            let shrunk: Vec<f64> =
                best.iter().zip(&simplex[i]).map(|(b, p)| b + sigma * (p - b)).collect();
            values[i] = eval(&shrunk, &mut evals);
            simplex[i] = shrunk;
        }
    }
    NelderMeadResult { x: simplex[0].clone(), fx: values[0], evals, converged }
}

/// `n` Latin-hypercube points in the box `lower..upper`.
pub fn latin_hypercube<R: Rng + ?Sized>(n: usize, lower: &[f64], upper: &[f64], rng: &mut R) -> Vec<Vec<f64>> {
    let dim = lower.len();
    let mut points = vec![vec![0.0; dim]; n];
    for d in 0..dim {
        let mut strata: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            strata.swap(i, j);
        }
        for (i, p) in points.iter_mut().enumerate() {
            let u = (strata[i] as f64 + rng.random::<f64>()) / n as f64;
            p[d] = lower[d] + u * (upper[d] - lower[d]);
        }
    }
    points
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn brent_finds_interior_maximum() {
        let r = brent_max(|x| -(x - 1.234).powi(2) + 3.0, -5.0, 5.0, 1e-10, 200);
        assert!((r.x - 1.234).abs() < 1e-6);
        assert!((r.fx - 3.0).abs() < 1e-12);
    }

    #[test]
    fn brent_stops_at_boundary_for_monotone_function() {
        let r = brent_max(|x| x, 0.0, 2.0, 1e-9, 200);
        assert!(r.x > 2.0 - 1e-6);
    }

    #[test]
    fn nelder_mead_maximizes_negative_rosenbrock() {
        let f = |x: &[f64]| -((1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2));
        let opts = NelderMeadOptions { step: 0.5, diameter_tol: 1e-8, max_evals: 5000 };
        let r = nelder_mead_max(f, &[-1.2, 1.0], &opts);
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn nelder_mead_avoids_infinite_penalty_region() {
        let f = |x: &[f64]| if x[0] < 0.0 { f64::NEG_INFINITY } else { -(x[0] - 0.5).powi(2) };
        let r = nelder_mead_max(f, &[0.1], &NelderMeadOptions::default());
        assert!((r.x[0] - 0.5).abs() < 1e-4);
    }

    #[test]
    fn latin_hypercube_covers_each_stratum_once() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = latin_hypercube(8, &[0.0, 10.0], &[1.0, 20.0], &mut rng);
        for d in 0..2 {
            let (lo, hi) = if d == 0 { (0.0, 1.0) } else { (10.0, 20.0) };
            let mut seen = [false; 8];
            for p in &pts {
                let s = (((p[d] - lo) / (hi - lo)) * 8.0).floor() as usize;
                assert!(!seen[s]);
                seen[s] = true;
            }
        }
    }
}
