//! Simulation designs for the factor model, RMSE metrics with sign alignment
//! and repeated-experiment drivers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::dataio::PanelData;
use crate::error::{Result, SvfError};
use crate::margins::pseudo_observations;
use crate::mvine::{build_structure, fit_stepwise, FitMode, MVineModel};
use crate::numeric::norm_quantile;
use crate::paircop::{Family, FamilySet, PairCopula, Reflection};
use crate::pipeline::{fit, FitOptions, FittedModel};
use crate::rotation::{apply_signs, enumerate_sign_flips, RotationAngles};
use crate::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginLaw {
    StandardNormal,
    /// Student t with 4 degrees of freedom scaled to unit variance.
    T4,
}

impl MarginLaw {
    pub fn quantile(&self, u: f64) -> f64 {
        match self {
            MarginLaw::StandardNormal => norm_quantile(u),
            MarginLaw::T4 => t4().inverse_cdf(u) / std::f64::consts::SQRT_2,
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            MarginLaw::StandardNormal => crate::numeric::norm_cdf(x),
            MarginLaw::T4 => t4().cdf(x * std::f64::consts::SQRT_2),
        }
    }
}

fn t4() -> StudentsT {
    StudentsT::new(0.0, 1.0, 4.0).expect("valid t distribution")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub truth: MVineModel,
    pub margin: MarginLaw,
    pub loading_mean: f64,
    pub loading_variance: f64,
    pub ar_coef: f64,
    pub innovation_variance: f64,
    pub t_len: usize,
    pub n_dim: usize,
    pub n_reps: usize,
    pub seed: u64,
    #[serde(default = "default_warmup")]
    pub warmup: usize,
}

fn default_warmup() -> usize {
    100
}

impl SimulationSpec {
    /// Design with N(1,1) loadings and unit-variance AR(1) noise with coefficient 0.5.
    pub fn standard(truth: MVineModel, margin: MarginLaw, t_len: usize, n_dim: usize, n_reps: usize, seed: u64) -> Self {
        SimulationSpec {
            truth,
            margin,
            loading_mean: 1.0,
            loading_variance: 1.0,
            ar_coef: 0.5,
            innovation_variance: 0.75,
            t_len,
            n_dim,
            n_reps,
            seed,
            warmup: default_warmup(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SvfError::InvalidArgument(m.to_string()));
        if self.n_reps < 1 {
            return bad("n_reps must be at least 1");
        }
        if !(self.ar_coef > -1.0 && self.ar_coef < 1.0) {
            return bad("AR coefficient must lie in (-1, 1)");
        }
        if !(self.innovation_variance >= 0.0) || !(self.loading_variance >= 0.0) || !self.loading_mean.is_finite() {
            return bad("variances must be non-negative and the loading mean finite");
        }
        if self.t_len < 2 || self.n_dim < 1 {
            return bad("need t_len >= 2 and n_dim >= 1");
        }
        if self.truth.k() > self.n_dim {
            return bad("more factors than series");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Generated {
    pub panel: PanelData,
    pub u: Matrix,
    pub factors: Matrix,
    pub loadings: Matrix,
    pub angles: RotationAngles,
}

/// Draw replication `rep` of a design.
pub fn generate(spec: &SimulationSpec, rep: usize) -> Result<Generated> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(rep as u64);
    let k = spec.truth.k();
    let (t_len, n) = (spec.t_len, spec.n_dim);
    let u = spec.truth.simulate_with(t_len, spec.warmup, &mut rng);
    let factors = u.map(|x| spec.margin.quantile(x));
    let load_law = Normal::new(spec.loading_mean, spec.loading_variance.sqrt())
        .map_err(|e| SvfError::InvalidArgument(e.to_string()))?;
    let loadings = Matrix::from_fn(n, k, |_, _| load_law.sample(&mut rng));

    let a = spec.ar_coef;
    let innov_sd = spec.innovation_variance.sqrt();
    let stat_sd = (spec.innovation_variance / (1.0 - a * a)).sqrt();
    let mut noise = Matrix::zeros(t_len, n);
    for i in 0..n {
        let z: f64 = StandardNormal.sample(&mut rng);
        let mut e = stat_sd * z;
        for t in 0..t_len {
            if t > 0 {
                let z: f64 = StandardNormal.sample(&mut rng);
                e = a * e + innov_sd * z;
            }
            noise[(t, i)] = e;
        }
    }
    let x = &factors * loadings.transpose() + noise;
    Ok(Generated { panel: PanelData::new(x, None)?, u, factors, loadings, angles: RotationAngles::identity(k) })
}

/// `(1/√dim)·‖θ̂ − θ‖`.
pub fn rmse_params(theta_hat: &[f64], theta_true: &[f64]) -> Result<f64> {
    if theta_hat.len() != theta_true.len() {
        return Err(SvfError::DimensionMismatch { expected: theta_true.len(), got: theta_hat.len() });
    }
    if theta_hat.is_empty() {
        return Err(SvfError::InvalidArgument("empty parameter vector".into()));
    }
    let ss: f64 = theta_hat.iter().zip(theta_true).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((ss / theta_hat.len() as f64).sqrt())
}

fn rmse_with_signs(f_hat: &Matrix, f_true: &Matrix, signs: &[f64]) -> f64 {
    let t = f_hat.nrows() as f64;
    let mut ss = 0.0;
    for r in 0..f_hat.nrows() {
        for (j, s) in signs.iter().enumerate() {
            let d = s * f_hat[(r, j)] - f_true[(r, j)];
            ss += d * d;
        }
    }
    (ss / t).sqrt()
}

/// Minimum over sign vectors of the factor RMSE, with the minimizing signs.
pub fn rmse_factors_best_flip(f_hat: &Matrix, f_true: &Matrix) -> Result<(f64, Vec<f64>)> {
    if f_hat.shape() != f_true.shape() {
        return Err(SvfError::DimensionMismatch { expected: f_true.ncols(), got: f_hat.ncols() });
    }
    let mut best = (f64::INFINITY, vec![]);
    for s in enumerate_sign_flips(f_hat.ncols()) {
        let r = rmse_with_signs(f_hat, f_true, &s);
        if r < best.0 {
            best = (r, s);
        }
    }
    Ok(best)
}

/// Per-column RMSE between two equally shaped matrices.
pub fn column_rmse(a: &Matrix, b: &Matrix) -> Vec<f64> {
    (0..a.ncols())
        .map(|j| {
            let ss: f64 = a.column(j).iter().zip(b.column(j).iter()).map(|(x, y)| (x - y) * (x - y)).sum();
            (ss / a.nrows() as f64).sqrt()
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepMetrics {
    pub rep: usize,
    pub rmse_theta: f64,
    pub rmse_factors: f64,
    pub rmse_factor_columns: Vec<f64>,
    pub rmse_loading_columns: Vec<f64>,
    pub signs: Vec<f64>,
    pub objective: f64,
}

/// Compare a fit against the truth after sign alignment; the copula is
/// refitted on the aligned factors.
pub fn evaluate_fit(model: &FittedModel, truth: &Generated, spec: &SimulationSpec, families: &FamilySet, rep: usize) -> Result<RepMetrics> {
    let (rmse_factors, signs) = rmse_factors_best_flip(&model.rotated_factors, &truth.factors)?;
    let aligned = apply_signs(&model.rotated_factors, &signs);
    let structure = build_structure(spec.truth.k(), spec.truth.p())?;
    let refit = fit_stepwise(&structure, &pseudo_observations(&aligned), FitMode::Select(families))?;
    let est: Vec<f64> = refit.copulas.iter().map(|c| c.param).collect();
    let tru: Vec<f64> = spec.truth.copulas.iter().map(|c| c.param).collect();
    let rmse_theta = rmse_params(&est, &tru)?;
    let loadings = apply_signs(&model.rotated_loadings, &signs);
    Ok(RepMetrics {
        rep,
        rmse_theta,
        rmse_factors,
        rmse_factor_columns: column_rmse(&aligned, &truth.factors),
        rmse_loading_columns: column_rmse(&loadings, &truth.loadings),
        signs,
        objective: model.objective,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyReport {
    pub t_len: usize,
    pub n_dim: usize,
    pub reps: Vec<RepMetrics>,
}

impl StudyReport {
    pub fn mean_theta(&self) -> f64 {
        self.reps.iter().map(|r| r.rmse_theta).sum::<f64>() / self.reps.len() as f64
    }

    pub fn mean_factor_column(&self, j: usize) -> f64 {
        self.reps.iter().map(|r| r.rmse_factor_columns[j]).sum::<f64>() / self.reps.len() as f64
    }

    pub fn mean_loading_column(&self, j: usize) -> f64 {
        self.reps.iter().map(|r| r.rmse_loading_columns[j]).sum::<f64>() / self.reps.len() as f64
    }

    /// One row per replication followed by a `mean` row.
    pub fn to_csv(&self) -> String {
        let k = self.reps.first().map_or(0, |r| r.rmse_factor_columns.len());
        let mut head = vec!["n".to_string(), "d".into(), "rep".into(), "rmse_theta".into()];
        head.extend((1..=k).map(|j| format!("rmse_f{j}")));
        head.extend((1..=k).map(|j| format!("rmse_lambda{j}")));
        head.push("objective".into());
        let mut out = head.join(",") + "\n";
        let fmt = crate::dataio::fmt_f64;
        for r in &self.reps {
            let mut cells = vec![self.t_len.to_string(), self.n_dim.to_string(), r.rep.to_string(), fmt(r.rmse_theta)];
            cells.extend(r.rmse_factor_columns.iter().map(|v| fmt(*v)));
            cells.extend(r.rmse_loading_columns.iter().map(|v| fmt(*v)));
            cells.push(fmt(r.objective));
            out += &(cells.join(",") + "\n");
        }
        if !self.reps.is_empty() {
            let mut cells = vec![self.t_len.to_string(), self.n_dim.to_string(), "mean".into(), fmt(self.mean_theta())];
            cells.extend((0..k).map(|j| fmt(self.mean_factor_column(j))));
            cells.extend((0..k).map(|j| fmt(self.mean_loading_column(j))));
            let obj = self.reps.iter().map(|r| r.objective).sum::<f64>() / self.reps.len() as f64;
            cells.push(fmt(obj));
            out += &(cells.join(",") + "\n");
        }
        out
    }
}

/// Generate, fit and score every replication. Fit seeds are offset by the
/// replication index.
pub fn run_study(spec: &SimulationSpec, opts: &FitOptions) -> Result<StudyReport> {
    spec.validate()?;
    let reps: Result<Vec<RepMetrics>> = (0..spec.n_reps)
        .into_par_iter()
        .map(|rep| {
            let g = generate(spec, rep)?;
            let mut o = opts.clone();
            o.seed = opts.seed.wrapping_add(rep as u64);
            let model = fit(&g.panel, &o)?;
            evaluate_fit(&model, &g, spec, &opts.families, rep)
        })
        .collect();
    Ok(StudyReport { t_len: spec.t_len, n_dim: spec.n_dim, reps: reps? })
}

fn model_from_params(k: usize, p: usize, copulas: Vec<PairCopula>) -> MVineModel {
    MVineModel::new(build_structure(k, p).expect("valid dimensions"), copulas).expect("parameter count matches")
}

/// Two factors, one lag, all five classes from `family` at the reference
/// parameters.
pub fn one_lag_design(family: Family) -> Result<MVineModel> {
    let params: [f64; 5] = match family {
        Family::Gaussian => [0.34, 0.69, -0.046, 0.67, -0.27],
        Family::Clayton => [1.5, 2.0, 0.37, 0.72, 0.24],
        Family::Frank => [2.0, 5.5, -0.57, 5.1, -1.1],
        Family::Joe => [2.5, 2.7, 1.3, 1.6, 1.2],
        Family::Independence => {
            return Err(SvfError::InvalidArgument("no reference design for independence".into()));
        }
    };
    let copulas = params.iter().map(|&t| PairCopula::new(family, t, Reflection::R0)).collect::<Result<Vec<_>>>()?;
    Ok(model_from_params(2, 1, copulas))
}

/// Two factors, two lags, nine frank classes.
pub fn two_lag_frank_design() -> MVineModel {
    let params = [2.0, 5.4, -0.33, 5.0, 0.16, -1.6, -0.039, 0.7, 0.019];
    model_from_params(2, 2, params.iter().map(|&t| PairCopula::frank(t)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{acf, kendall_tau};

    #[test]
    fn rmse_params_examples() {
        assert_eq!(rmse_params(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse_params(&[1.0; 4], &[0.0; 4]).unwrap() - 1.0).abs() < 1e-15);
        assert!(rmse_params(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn best_flip_examples() {
        let f = Matrix::from_fn(40, 2, |i, j| ((i * 7 + j * 3) % 11) as f64 - 5.0);
        let (r, s) = rmse_factors_best_flip(&f, &f).unwrap();
        assert_eq!((r, s), (0.0, vec![1.0, 1.0]));
        let g = apply_signs(&f, &[1.0, -1.0]);
        let (r, s) = rmse_factors_best_flip(&g, &f).unwrap();
        assert_eq!(r, 0.0);
        assert_eq!(s, vec![1.0, -1.0]);
        let c = 0.3;
        let shifted = Matrix::from_fn(40, 2, |i, j| {
            let ang = i as f64 * 0.37;
            f[(i, j)] + c * if j == 0 { ang.cos() } else { ang.sin() }
        });
        let (r, _) = rmse_factors_best_flip(&shifted, &f).unwrap();
        assert!((r - c).abs() < 1e-12);
    }

    #[test]
    fn generate_is_deterministic() {
        let spec = SimulationSpec::standard(two_lag_frank_design(), MarginLaw::StandardNormal, 60, 5, 2, 9);
        let a = generate(&spec, 1).unwrap();
        let b = generate(&spec, 1).unwrap();
        assert_eq!(a.panel.values, b.panel.values);
        let c = generate(&spec, 0).unwrap();
        assert_ne!(a.panel.values, c.panel.values);
    }

    #[test]
    fn contemporaneous_tau_matches_truth() {
        let spec = SimulationSpec::standard(two_lag_frank_design(), MarginLaw::StandardNormal, 5000, 2, 1, 4);
        let g = generate(&spec, 0).unwrap();
        let f1: Vec<f64> = g.factors.column(0).iter().copied().collect();
        let f2: Vec<f64> = g.factors.column(1).iter().copied().collect();
        assert!((kendall_tau(&f2, &f1) - 0.4781).abs() < 0.03);
    }

    #[test]
    fn white_noise_when_ar_is_zero() {
        let mut spec = SimulationSpec::standard(MVineModel::independence(1, 1).unwrap(), MarginLaw::StandardNormal, 5000, 1, 1, 2);
        spec.ar_coef = 0.0;
        spec.innovation_variance = 1.0;
        spec.loading_mean = 0.0;
        spec.loading_variance = 0.0;
        let g = generate(&spec, 0).unwrap();
        let x: Vec<f64> = g.panel.values.column(0).iter().copied().collect();
        assert!(acf(&x, 1)[0].abs() < 0.03);
    }

    #[test]
    fn t4_margin_has_unit_variance_quantiles() {
        let law = MarginLaw::T4;
        for &u in &[0.01, 0.2, 0.5, 0.77, 0.999] {
            assert!((law.cdf(law.quantile(u)) - u).abs() < 1e-9);
        }
        // Simpson estimate of the variance of the scaled t4 law
        let var = crate::numeric::integrate(|u| law.quantile(u).powi(2), 1e-9, 1.0 - 1e-9, 1e-10);
        assert!((var - 1.0).abs() < 2e-3, "{var}");
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = SimulationSpec::standard(two_lag_frank_design(), MarginLaw::StandardNormal, 50, 3, 1, 0);
        spec.ar_coef = 1.0;
        assert!(generate(&spec, 0).is_err());
        spec.ar_coef = 0.5;
        spec.n_reps = 0;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn reference_designs_have_expected_sizes() {
        assert_eq!(two_lag_frank_design().copulas.len(), 9);
        for f in [Family::Gaussian, Family::Clayton, Family::Frank, Family::Joe] {
            assert_eq!(one_lag_design(f).unwrap().copulas.len(), 5);
        }
    }
}
