//! Two-step estimator: principal components, then the rotation maximizing
//! `log|det H| + Σ_j entropy_j + L_C / T` with the copula refitted at every
//! candidate rotation.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{rowmajor, PanelData};
use crate::error::{Result, SvfError};
use crate::factors::{pca_factors, select_k, FactorDecomposition};
use crate::margins::{loo_entropy, pseudo_observations, MarginModel};
use crate::mvine::{build_structure, fit_stepwise_ll, FitMode, MVineModel, MVineStructure};
use crate::optim::{latin_hypercube, nelder_mead_max, NelderMeadOptions};
use crate::paircop::{FamilySet, PairCopula};
use crate::rotation::{apply_signs, build_h, enumerate_sign_flips, rotate_loadings, RotationAngles, SINGULAR_TOL};
use crate::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KChoice {
    Auto { k_max: usize },
    Fixed(usize),
}

/// Which factor reflections the angle search evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SignSearch {
    /// All `2^K` sign vectors at every candidate rotation.
    Exhaustive,
    /// Only the identity signs. The candidate families are closed under
    /// reflection (every family enters with all its reflections, and Frank
    /// and Gaussian cover both signs), so each reflected vine has a
    /// counterpart in the candidate set with the same profile likelihood.
    Identity,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitOptions {
    pub k: KChoice,
    pub p: usize,
    pub families: FamilySet,
    pub starts: usize,
    pub seed: u64,
    pub nelder_mead: NelderMeadOptions,
    pub sign_search: SignSearch,
    /// Keep the families chosen by the first inner fit of each start.
    pub freeze_families: bool,
    /// Search over rotations; when false `H = I`.
    pub rotate: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            k: KChoice::Auto { k_max: 8 },
            p: 1,
            families: FamilySet::all(),
            starts: 8,
            seed: 0,
            nelder_mead: NelderMeadOptions::default(),
            sign_search: SignSearch::Exhaustive,
            freeze_families: true,
            rotate: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub start: usize,
    pub angles: Vec<f64>,
    pub signs: Vec<f64>,
    pub objective: f64,
    pub evaluations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub decomposition: FactorDecomposition,
    pub angles: RotationAngles,
    pub signs: Vec<f64>,
    pub mvine: MVineModel,
    /// `F̂ H diag(signs)`.
    #[serde(with = "rowmajor")]
    pub rotated_factors: Matrix,
    /// `Λ̂ (H⁻¹)' diag(signs)`.
    #[serde(with = "rowmajor")]
    pub rotated_loadings: Matrix,
    pub margins: Vec<MarginModel>,
    pub objective: f64,
    /// Local maxima within 0.5% of the best objective, best first.
    pub trace: Vec<TraceEntry>,
    pub families: FamilySet,
    pub series_names: Vec<String>,
    pub means: Vec<f64>,
    pub stdevs: Vec<f64>,
}

/// Components of the objective at one rotation.
#[derive(Debug, Clone)]
pub struct ObjectiveEval {
    pub value: f64,
    pub log_det: f64,
    pub entropy: f64,
    pub copula_loglik: f64,
    pub mvine: Option<MVineModel>,
}

impl ObjectiveEval {
    fn singular() -> Self {
        ObjectiveEval {
            value: f64::NEG_INFINITY,
            log_det: f64::NEG_INFINITY,
            entropy: f64::NAN,
            copula_loglik: f64::NAN,
            mvine: None,
        }
    }
}

/// Rotated factors `F H diag(signs)` and `log|det H|`; `None` when singular.
fn rotate(factors: &Matrix, angles: &RotationAngles, signs: &[f64]) -> Option<(Matrix, f64)> {
    let h = build_h(angles);
    let det = h.determinant().abs();
    if !(det >= SINGULAR_TOL) {
        return None;
    }
    Some((apply_signs(&(factors * h), signs), det.ln()))
}

fn entropy_sum(rotated: &Matrix) -> f64 {
    (0..rotated.ncols())
        .map(|j| {
            let col: Vec<f64> = rotated.column(j).iter().copied().collect();
            let b = crate::margins::default_bandwidth(&col);
            loo_entropy(&col, b)
        })
        .sum()
}

/// Objective with the copula re-estimated at this rotation.
pub fn eval_objective(
    factors: &Matrix,
    angles: &RotationAngles,
    signs: &[f64],
    structure: &MVineStructure,
    mode: FitMode<'_>,
) -> Result<ObjectiveEval> {
    let Some((rotated, log_det)) = rotate(factors, angles, signs) else {
        return Ok(ObjectiveEval::singular());
    };
    let t = rotated.nrows() as f64;
    let entropy = entropy_sum(&rotated);
    let u = pseudo_observations(&rotated);
    let (mvine, ll) = fit_stepwise_ll(structure, &u, mode)?;
    Ok(ObjectiveEval { value: log_det + entropy + ll / t, log_det, entropy, copula_loglik: ll, mvine: Some(mvine) })
}

/// Objective with the copula held fixed.
pub fn eval_objective_fixed(
    factors: &Matrix,
    angles: &RotationAngles,
    signs: &[f64],
    mvine: &MVineModel,
) -> Result<ObjectiveEval> {
    let Some((rotated, log_det)) = rotate(factors, angles, signs) else {
        return Ok(ObjectiveEval::singular());
    };
    let t = rotated.nrows() as f64;
    let entropy = entropy_sum(&rotated);
    let ll = mvine.loglik(&pseudo_observations(&rotated))?;
    Ok(ObjectiveEval { value: log_det + entropy + ll / t, log_det, entropy, copula_loglik: ll, mvine: None })
}

/// Inner state of one multi-start: per sign vector, the copulas of the
/// latest fit (used as frozen families and warm starts).
struct StartState {
    templates: Vec<Option<Vec<PairCopula>>>,
}

fn best_over_signs(
    factors: &Matrix,
    angles: &RotationAngles,
    flips: &[Vec<f64>],
    structure: &MVineStructure,
    families: &FamilySet,
    freeze: bool,
    state: &mut StartState,
) -> (f64, usize) {
    let mut best = (f64::NEG_INFINITY, 0);
    for (s, signs) in flips.iter().enumerate() {
        let mode = match (&state.templates[s], freeze) {
            (Some(t), true) => FitMode::Frozen(t),
            _ => FitMode::Select(families),
        };
        let value = match eval_objective(factors, angles, signs, structure, mode) {
            Ok(ev) => {
                if let Some(m) = ev.mvine {
                    state.templates[s] = Some(m.copulas);
                }
                ev.value
            }
            Err(_) => f64::NEG_INFINITY,
        };
        if value > best.0 {
            best = (value, s);
        }
    }
    best
}

/// Lower and upper corners of the raw angle box.
fn angle_box(k: usize) -> (Vec<f64>, Vec<f64>) {
    let m = k.saturating_sub(1);
    let mut lo = Vec::with_capacity(k * m);
    let mut hi = Vec::with_capacity(k * m);
    for _ in 0..k {
        for j in 0..m {
            lo.push(0.0);
            hi.push(if j == 0 { PI } else { 2.0 * PI });
        }
    }
    (lo, hi)
}

/// Maximize the objective over rotation angles for given PCA factors.
pub fn fit_rotation(
    factors: &Matrix,
    structure: &MVineStructure,
    opts: &FitOptions,
) -> Result<(RotationAngles, Vec<f64>, MVineModel, f64, Vec<TraceEntry>)> {
    let k = factors.ncols();
    let flips = match opts.sign_search {
        SignSearch::Exhaustive => enumerate_sign_flips(k),
        SignSearch::Identity => vec![vec![1.0; k]],
    };
    let dim = k * k.saturating_sub(1);
    let starts: Vec<Vec<f64>> = if !opts.rotate || dim == 0 {
        vec![RotationAngles::identity(k).to_raw()]
    } else {
        let (lo, hi) = angle_box(k);
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        latin_hypercube(opts.starts.max(1), &lo, &hi, &mut rng)
    };

    let results: Vec<(TraceEntry, Option<Vec<PairCopula>>)> = starts
        .par_iter()
        .enumerate()
        .map(|(idx, x0)| {
            let mut state = StartState { templates: vec![None; flips.len()] };
            let mut objective = |x: &[f64]| {
                let angles = RotationAngles::from_raw(k, x).expect("angle vector length");
                best_over_signs(factors, &angles, &flips, structure, &opts.families, opts.freeze_families, &mut state).0
            };
            let (x, evals, converged) = if opts.rotate && dim > 0 {
                let r = nelder_mead_max(&mut objective, x0, &opts.nelder_mead);
                (r.x, r.evals, r.converged)
            } else {
                (x0.clone(), 0, true)
            };
            let angles = RotationAngles::from_raw(k, &x).expect("angle vector length");
            let (value, s) =
                best_over_signs(factors, &angles, &flips, structure, &opts.families, opts.freeze_families, &mut state);
            let entry =
                TraceEntry { start: idx, angles: x, signs: flips[s].clone(), objective: value, evaluations: evals + 1, converged };
            (entry, state.templates[s].take())
        })
        .collect();

    let (best, template) = results
        .iter()
        .filter(|r| r.0.objective.is_finite())
        .max_by(|a, b| a.0.objective.total_cmp(&b.0.objective).then(b.0.start.cmp(&a.0.start)))
        .ok_or_else(|| SvfError::Numerical("optimizer found no finite objective".into()))?
        .clone();

    let raw = RotationAngles::from_raw(k, &best.angles)?;
    let (angles, flip) = raw.canonicalize();
    let signs: Vec<f64> = best.signs.iter().zip(&flip).map(|(a, b)| a * b).collect();

    // refit at the canonical state: the winning families first, then a
    // fresh family selection under every admissible sign vector
    let mut candidates: Vec<(Vec<f64>, FitMode<'_>)> = Vec::new();
    if let (Some(t), true) = (&template, opts.freeze_families) {
        candidates.push((signs.clone(), FitMode::Frozen(t)));
    }
    match opts.sign_search {
        SignSearch::Exhaustive => candidates.extend(flips.iter().map(|f| (f.clone(), FitMode::Select(&opts.families)))),
        SignSearch::Identity => candidates.push((signs.clone(), FitMode::Select(&opts.families))),
    }
    let mut chosen: Option<(f64, Vec<f64>, MVineModel)> = None;
    for (cand_signs, mode) in candidates {
        let ev = eval_objective(factors, &angles, &cand_signs, structure, mode)?;
        if let Some(m) = ev.mvine {
            if chosen.as_ref().is_none_or(|c| ev.value > c.0) {
                chosen = Some((ev.value, cand_signs, m));
            }
        }
    }
    let (_, signs, mvine) = chosen.ok_or(SvfError::Numerical("singular rotation at optimum".into()))?;
    let value = eval_objective_fixed(factors, &angles, &signs, &mvine)?.value;

    let tol = 0.005 * best.objective.abs();
    let mut trace: Vec<TraceEntry> = results
        .into_iter()
        .map(|r| r.0)
        .filter(|r| r.objective.is_finite() && r.objective >= best.objective - tol)
        .collect();
    trace.sort_by(|a, b| b.objective.total_cmp(&a.objective).then(a.start.cmp(&b.start)));
    Ok((angles, signs, mvine, value, trace))
}

/// Full estimation on a panel.
pub fn fit(data: &PanelData, opts: &FitOptions) -> Result<FittedModel> {
    let k = match opts.k {
        KChoice::Fixed(k) => k,
        KChoice::Auto { k_max } => select_k(data, k_max.min(data.t_len()).min(data.n_series()))?,
    };
    let decomposition = pca_factors(data, k)?;
    fit_decomposition(decomposition, data, opts)
}

/// Rotation and copula estimation given the PCA step.
pub fn fit_decomposition(decomposition: FactorDecomposition, data: &PanelData, opts: &FitOptions) -> Result<FittedModel> {
    let k = decomposition.k;
    let structure = build_structure(k, opts.p)?;
    let (angles, signs, mvine, objective, trace) = fit_rotation(&decomposition.factors, &structure, opts)?;
    let h = build_h(&angles);
    let rotated_factors = apply_signs(&(&decomposition.factors * h), &signs);
    let rotated_loadings = apply_signs(&rotate_loadings(&decomposition.loadings, &angles)?, &signs);
    let margins = (0..k).map(|j| MarginModel::new(rotated_factors.column(j).iter().copied().collect())).collect();
    Ok(FittedModel {
        decomposition,
        angles,
        signs,
        mvine,
        rotated_factors,
        rotated_loadings,
        margins,
        objective,
        trace,
        families: opts.families.clone(),
        series_names: data.series_names.clone(),
        means: data.means.clone(),
        stdevs: data.stdevs.clone(),
    })
}

impl FittedModel {
    pub fn k(&self) -> usize {
        self.decomposition.k
    }

    pub fn p(&self) -> usize {
        self.mvine.p()
    }

    /// Objective at the stored angles, signs and copulas.
    pub fn recompute_objective(&self) -> Result<f64> {
        Ok(eval_objective_fixed(&self.decomposition.factors, &self.angles, &self.signs, &self.mvine)?.value)
    }

    /// Internal consistency checks used after deserialization.
    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        let t = self.decomposition.factors.nrows();
        let n = self.decomposition.loadings.nrows();
        let bad = |msg: &str| Err(SvfError::CorruptModel(msg.to_string()));
        if self.decomposition.factors.ncols() != k
            || self.decomposition.loadings.ncols() != k
            || self.decomposition.residuals.shape() != (t, n)
        {
            return bad("factor decomposition shapes disagree");
        }
        if self.angles.k != k || self.signs.len() != k || self.mvine.k() != k || self.margins.len() != k {
            return bad("factor count disagrees across components");
        }
        if self.rotated_factors.shape() != (t, k) || self.rotated_loadings.shape() != (n, k) {
            return bad("rotated matrices have wrong shape");
        }
        if self.means.len() != n || self.stdevs.len() != n || self.series_names.len() != n {
            return bad("series metadata length disagrees with loadings");
        }
        Ok(())
    }
}

/// One grid point of the identification scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanPoint {
    pub theta1: f64,
    pub theta2: f64,
    pub objective: f64,
}

/// Objective over a grid of `(θ1, θ2)` for two factors, maximized over the
/// sign vectors selected by `sign_search`. Singular points give `-inf`.
pub fn contour_scan(
    factors: &Matrix,
    grid: &[(f64, f64)],
    structure: &MVineStructure,
    families: &FamilySet,
    sign_search: SignSearch,
) -> Result<Vec<ScanPoint>> {
    if factors.ncols() != 2 || structure.k != 2 {
        return Err(SvfError::InvalidArgument(format!("contour scan needs K = 2, got {}", factors.ncols())));
    }
    let flips = match sign_search {
        SignSearch::Exhaustive => enumerate_sign_flips(2),
        SignSearch::Identity => vec![vec![1.0; 2]],
    };
    grid.par_iter()
        .map(|&(a, b)| {
            let angles = RotationAngles::from_raw(2, &[a, b])?;
            let mut best = f64::NEG_INFINITY;
            for signs in &flips {
                let v = eval_objective(factors, &angles, signs, structure, FitMode::Select(families))?.value;
                best = best.max(v);
            }
            Ok(ScanPoint { theta1: a, theta2: b, objective: best })
        })
        .collect()
}

/// Regular grid `{0, step, …}²` up to and including `upper`.
pub fn square_grid(step: f64, upper: f64) -> Vec<(f64, f64)> {
    let n = (upper / step + 1e-9).floor() as usize;
    let mut g = Vec::with_capacity((n + 1) * (n + 1));
    for i in 0..=n {
        for j in 0..=n {
            g.push((i as f64 * step, j as f64 * step));
        }
    }
    g
}
