//! Monte-Carlo predictive distributions, VaR extraction, quantile scores and
//! expanding-window backtests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SvfError};
use crate::margins::{ecdf_sorted, empirical_quantile, pseudo_observations};
use crate::pipeline::FittedModel;
use crate::Matrix;

/// Offset separating the residual-resampling streams from the copula streams.
const RESIDUAL_SEED_SALT: u64 = 0x5851_f42d_4c95_7f2d;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForecastOptions {
    pub horizon: usize,
    pub n_paths: usize,
    pub seed: u64,
}

/// `M` simulated paths of `h` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastEnsemble {
    pub horizon: usize,
    pub n_paths: usize,
    pub n_series: usize,
    pub k: usize,
    /// `paths[(m * h + s) * N + i]`, in model units.
    pub paths: Vec<f64>,
    /// `factor_paths[(m * h + s) * K + j]`.
    pub factor_paths: Vec<f64>,
    pub seed: u64,
}

impl ForecastEnsemble {
    /// All `M` draws of series `i` at step `s` (0-based).
    pub fn draws(&self, step: usize, series: usize) -> Vec<f64> {
        (0..self.n_paths).map(|m| self.paths[(m * self.horizon + step) * self.n_series + series]).collect()
    }

    pub fn factor_draws(&self, step: usize, j: usize) -> Vec<f64> {
        (0..self.n_paths).map(|m| self.factor_paths[(m * self.horizon + step) * self.k + j]).collect()
    }
}

fn residual_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ RESIDUAL_SEED_SALT);
    rng.set_stream(path as u64);
    rng
}

/// Simulate the predictive distribution of the next `horizon` observations.
pub fn forecast(model: &FittedModel, opts: &ForecastOptions) -> Result<ForecastEnsemble> {
    if opts.horizon < 1 {
        return Err(SvfError::InvalidArgument("horizon must be at least 1".into()));
    }
    if opts.n_paths < 1 {
        return Err(SvfError::InvalidArgument("number of paths must be at least 1".into()));
    }
    let k = model.k();
    let n = model.rotated_loadings.nrows();
    let (h, big_m) = (opts.horizon, opts.n_paths);
    let u = pseudo_observations(&model.rotated_factors);
    let u_paths = model.mvine.simulate_conditional(&u, h, big_m, opts.seed)?;
    let resid = &model.decomposition.residuals;
    let t_len = resid.nrows();
    let lt = model.rotated_loadings.transpose();

    let mut paths = vec![0.0; big_m * h * n];
    let mut factor_paths = vec![0.0; big_m * h * k];
    for (m, up) in u_paths.iter().enumerate() {
        let mut rng = residual_rng(opts.seed, m);
        for s in 0..h {
            let f: Vec<f64> = (0..k).map(|j| model.margins[j].quantile(up[(s, j)])).collect();
            let r = rng.random_range(0..t_len);
            for (j, v) in f.iter().enumerate() {
                factor_paths[(m * h + s) * k + j] = *v;
            }
            let base = (m * h + s) * n;
            for i in 0..n {
                let common: f64 = (0..k).map(|j| f[j] * lt[(j, i)]).sum();
                paths[base + i] = common + resid[(r, i)];
            }
        }
    }
    Ok(ForecastEnsemble { horizon: h, n_paths: big_m, n_series: n, k, paths, factor_paths, seed: opts.seed })
}

/// Asymmetric piecewise-linear score of an `alpha`-quantile forecast `y`
/// against the realization `x`: `(1{x ≤ y} − α)(y − x)`.
pub fn quantile_score(y: f64, x: f64, alpha: f64) -> f64 {
    let ind = if x <= y { 1.0 } else { 0.0 };
    (ind - alpha) * (y - x)
}

pub fn mean_quantile_score(var_series: &[f64], realized: &[f64], alpha: f64) -> Result<f64> {
    if var_series.len() != realized.len() {
        return Err(SvfError::DimensionMismatch { expected: var_series.len(), got: realized.len() });
    }
    if var_series.is_empty() {
        return Err(SvfError::InsufficientData { needed: 1, got: 0 });
    }
    let s: f64 = var_series.iter().zip(realized).map(|(y, x)| quantile_score(*y, *x, alpha)).sum();
    Ok(s / var_series.len() as f64)
}

/// Empirical `alpha`-quantile of a sample (plotting-position interpolation).
pub fn sample_quantile(draws: &[f64], alpha: f64) -> f64 {
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    empirical_quantile(&sorted, alpha)
}

pub fn var_from_ensemble(ens: &ForecastEnsemble, series: usize, step: usize, alpha: f64) -> f64 {
    sample_quantile(&ens.draws(step, series), alpha)
}

fn var_from_abs_sorted(sorted_abs: &[f64], alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) || alpha == 0.5 {
        return Err(SvfError::InvalidArgument(format!("alpha must lie in (0,1) and differ from 0.5, got {alpha}")));
    }
    Ok(if alpha < 0.5 {
        -empirical_quantile(sorted_abs, 1.0 - 2.0 * alpha)
    } else {
        empirical_quantile(sorted_abs, 2.0 * alpha - 1.0)
    })
}

/// VaR from an ensemble of absolute returns assuming symmetric signs:
/// `−Q(1−2α)` for lower tails and `Q(2α−1)` for upper tails.
pub fn var_from_absolute_returns(ens: &ForecastEnsemble, series: usize, step: usize, alpha: f64) -> Result<f64> {
    let mut d = ens.draws(step, series);
    d.sort_by(f64::total_cmp);
    var_from_abs_sorted(&d, alpha)
}

/// Realizations below a lower-tail VaR or above an upper-tail VaR.
pub fn count_violations(var_series: &[f64], realized: &[f64], alpha: f64) -> Result<usize> {
    if var_series.len() != realized.len() {
        return Err(SvfError::DimensionMismatch { expected: var_series.len(), got: realized.len() });
    }
    if alpha == 0.5 {
        return Err(SvfError::InvalidArgument("alpha = 0.5 has no tail".into()));
    }
    Ok(var_series.iter().zip(realized).filter(|(v, x)| is_violation(**v, **x, alpha)).count())
}

pub fn is_violation(var: f64, realized: f64, alpha: f64) -> bool {
    if alpha < 0.5 {
        realized < var
    } else {
        realized > var
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BacktestOptions {
    pub alphas: Vec<f64>,
    pub n_paths: usize,
    pub seed: u64,
    /// Keep the training sample as the factor margins instead of letting
    /// it grow with the window.
    pub fixed_margins: bool,
    /// Series (0-based) to forecast.
    pub series: Vec<usize>,
    /// The model describes absolute returns; VaR uses the symmetric rule.
    pub absolute: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestRow {
    pub t: usize,
    pub series: usize,
    pub alpha: f64,
    pub var: f64,
    pub realized: f64,
    pub score: f64,
    pub violation: bool,
}

/// One-step-ahead expanding-window VaR with frozen parameters.
///
/// `data` holds all rows in model units; the first `model` sample length
/// rows are the training window. `realized` holds the values VaR is checked
/// against, in original units (equal to `data` for untransformed models).
/// Forecast draws are mapped to original units with the model's stored
/// series moments.
pub fn backtest(model: &FittedModel, data: &Matrix, realized: &Matrix, opts: &BacktestOptions) -> Result<Vec<BacktestRow>> {
    let k = model.k();
    let p = model.p();
    let n = model.rotated_loadings.nrows();
    let train = model.rotated_factors.nrows();
    if data.ncols() != n || realized.ncols() != n {
        return Err(SvfError::DimensionMismatch { expected: n, got: data.ncols() });
    }
    if data.nrows() != realized.nrows() {
        return Err(SvfError::DimensionMismatch { expected: data.nrows(), got: realized.nrows() });
    }
    if data.nrows() <= train {
        return Err(SvfError::InsufficientData { needed: train + 1, got: data.nrows() });
    }
    if let Some(&bad) = opts.series.iter().find(|&&i| i >= n) {
        return Err(SvfError::InvalidArgument(format!("series index {bad} out of range")));
    }
    for &a in &opts.alphas {
        if !(a > 0.0 && a < 1.0) || (opts.absolute && a == 0.5) {
            return Err(SvfError::InvalidArgument(format!("invalid alpha {a}")));
        }
    }

    let lam = &model.rotated_loadings;
    let gram = lam.transpose() * lam;
    let proj = lam * gram.try_inverse().ok_or_else(|| SvfError::Numerical("loadings are rank deficient".into()))?;
    let resid = &model.decomposition.residuals;
    let t_resid = resid.nrows();

    let mut factors: Vec<Vec<f64>> = (0..train).map(|t| model.rotated_factors.row(t).iter().copied().collect()).collect();
    let mut sorted: Vec<Vec<f64>> = model.margins.iter().map(|m| m.sorted_sample.clone()).collect();
    let fixed: Vec<Vec<f64>> = sorted.clone();

    let mut rows = Vec::new();
    for t in train..data.nrows() {
        let margin = if opts.fixed_margins { &fixed } else { &sorted };
        let n_margin = margin[0].len() as f64;
        let (lo, hi) = (1.0 / (n_margin + 1.0), n_margin / (n_margin + 1.0));
        let hist = Matrix::from_fn(p, k, |r, j| {
            let x = factors[factors.len() - p + r][j];
            ecdf_sorted(&margin[j], x).clamp(lo, hi)
        });
        let step_seed = opts.seed.wrapping_add(t as u64);
        let u_paths = model.mvine.simulate_conditional(&hist, 1, opts.n_paths, step_seed)?;

        let mut draws: Vec<Vec<f64>> = vec![Vec::with_capacity(opts.n_paths); opts.series.len()];
        for (m, up) in u_paths.iter().enumerate() {
            let mut rng = residual_rng(step_seed, m);
            let f: Vec<f64> = (0..k).map(|j| empirical_quantile(&margin[j], up[(0, j)])).collect();
            let r = rng.random_range(0..t_resid);
            for (d, &i) in draws.iter_mut().zip(&opts.series) {
                let x: f64 = (0..k).map(|j| f[j] * lam[(i, j)]).sum::<f64>() + resid[(r, i)];
                d.push(x * model.stdevs[i] + model.means[i]);
            }
        }

        for (d, &i) in draws.iter_mut().zip(&opts.series) {
            d.sort_by(f64::total_cmp);
            let x = realized[(t, i)];
            for &alpha in &opts.alphas {
                let var = if opts.absolute { var_from_abs_sorted(d, alpha)? } else { empirical_quantile(d, alpha) };
                rows.push(BacktestRow {
                    t,
                    series: i,
                    alpha,
                    var,
                    realized: x,
                    score: quantile_score(var, x, alpha),
                    violation: is_violation(var, x, alpha),
                });
            }
        }

        // absorb the realized row
        let f_new: Vec<f64> = (0..k).map(|j| (0..n).map(|i| data[(t, i)] * proj[(i, j)]).sum()).collect();
        for j in 0..k {
            let pos = sorted[j].partition_point(|&s| s <= f_new[j]);
            sorted[j].insert(pos, f_new[j]);
        }
        factors.push(f_new);
    }
    Ok(rows)
}

/// Two-sided `level` binomial acceptance interval for violation counts.
pub fn binomial_interval(n: usize, prob: f64, level: f64) -> (usize, usize) {
    use statrs::distribution::{Binomial, DiscreteCDF};
    let b = Binomial::new(prob, n as u64).expect("valid binomial");
    let tail = (1.0 - level) / 2.0;
    let lo = (0..=n as u64).find(|&x| b.cdf(x) > tail).unwrap_or(0);
    let hi = (0..=n as u64).find(|&x| b.cdf(x) >= 1.0 - tail).unwrap_or(n as u64);
    (lo as usize, hi as usize)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_examples() {
        assert_eq!(quantile_score(2.0, 2.0, 0.3), 0.0);
        assert!((quantile_score(1.0, 2.0, 0.05) - 0.05).abs() < 1e-15);
        assert!((quantile_score(3.0, 1.0, 0.95) - 0.1).abs() < 1e-12);
        assert!((mean_quantile_score(&[0.0; 4], &[1.0; 4], 0.5).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(mean_quantile_score(&[1.0, 2.0], &[1.0, 2.0], 0.1).unwrap(), 0.0);
    }

    #[test]
    fn score_is_minimized_at_empirical_quantile() {
        let x: Vec<f64> = (0..97).map(|i| ((i * 31 % 97) as f64 / 10.0).powf(1.3)).collect();
        for &alpha in &[0.05, 0.1, 0.5, 0.9, 0.95] {
            let mut sorted = x.clone();
            sorted.sort_by(f64::total_cmp);
            let best_y = sorted
                .iter()
                .copied()
                .min_by(|a, b| {
                    let sa = mean_quantile_score(&vec![*a; x.len()], &x, alpha).unwrap();
                    let sb = mean_quantile_score(&vec![*b; x.len()], &x, alpha).unwrap();
                    sa.total_cmp(&sb)
                })
                .unwrap();
            let idx = ((alpha * x.len() as f64).ceil() as usize).max(1) - 1;
            let s_best = mean_quantile_score(&vec![best_y; x.len()], &x, alpha).unwrap();
            let s_q = mean_quantile_score(&vec![sorted[idx]; x.len()], &x, alpha).unwrap();
            assert!((s_best - s_q).abs() < 1e-12, "alpha={alpha}");
        }
    }

    fn ensemble(draws: Vec<f64>) -> ForecastEnsemble {
        let m = draws.len();
        ForecastEnsemble { horizon: 1, n_paths: m, n_series: 1, k: 1, paths: draws, factor_paths: vec![0.0; m], seed: 0 }
    }

    #[test]
    fn var_examples() {
        let e = ensemble((1..=99).map(f64::from).collect());
        assert_eq!(var_from_ensemble(&e, 0, 0, 0.5), 50.0);
        let e = ensemble((1..=100).map(f64::from).collect());
        assert_eq!(var_from_ensemble(&e, 0, 0, 0.001), 1.0);
        let e = ensemble(vec![2.5; 30]);
        assert_eq!(var_from_ensemble(&e, 0, 0, 0.2), 2.5);
        assert_eq!(var_from_ensemble(&e, 0, 0, 0.9), 2.5);
    }

    #[test]
    fn absolute_return_var() {
        let e = ensemble((1..=999).map(|i| i as f64 / 1000.0).collect());
        let v = var_from_absolute_returns(&e, 0, 0, 0.05).unwrap();
        assert!((v + 0.9).abs() < 1e-9);
        for &a in &[0.01, 0.05, 0.1, 0.3] {
            let lo = var_from_absolute_returns(&e, 0, 0, a).unwrap();
            let hi = var_from_absolute_returns(&e, 0, 0, 1.0 - a).unwrap();
            assert_eq!(lo, -hi);
        }
        assert!(var_from_absolute_returns(&e, 0, 0, 0.5).is_err());
    }

    #[test]
    fn violation_counting() {
        let var = [-1.0, -1.0, -1.0];
        let x = [0.0, -2.0, 5.0];
        assert_eq!(count_violations(&var, &x, 0.05).unwrap(), 1);
        assert_eq!(count_violations(&[3.0; 3], &x, 0.95).unwrap(), 1);
        assert_eq!(count_violations(&[-10.0; 3], &x, 0.05).unwrap(), 0);
    }

    #[test]
    fn binomial_interval_brackets_mean() {
        let (lo, hi) = binomial_interval(252, 0.05, 0.99);
        assert!(lo < 13 && hi > 12);
        assert!(lo >= 3 && hi <= 24);
    }
}
