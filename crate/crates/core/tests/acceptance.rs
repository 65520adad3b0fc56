//! Acceptance suite. Prints one PASS/FAIL line per criterion and a summary.
//! Numeric arguments select a subset, e.g.
//! `cargo test --release --test acceptance -- 1 2 3`. With
//! `SVF_ACCEPTANCE_STRICT=1` the process exits non-zero when any criterion
//! fails; otherwise the failures are reported without stopping the rest of
//! a workspace test run.

#[allow(dead_code)]
mod common;

use std::f64::consts::{FRAC_PI_2, PI};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use svf_core::dgp::{generate, run_study, one_lag_design, two_lag_frank_design, MarginLaw, SimulationSpec};
use svf_core::forecast::{backtest, binomial_interval, forecast, BacktestOptions, BacktestRow};
use svf_core::margins::{default_bandwidth, loo_entropy, pseudo_observations};
use svf_core::mvine::{build_structure, fit_stepwise, FitMode, MVineModel, MVineStructure};
use svf_core::numeric::integrate;
use svf_core::paircop::{Family, FamilySet, PairCopula, Reflection};
use svf_core::pipeline::{contour_scan, eval_objective, fit, square_grid, FitOptions, KChoice, SignSearch};
use svf_core::rotation::enumerate_sign_flips;
use svf_core::{ForecastOptions, Matrix, PanelData};

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome { pass, detail: detail.into() }
    }
}

type Criterion = (usize, &'static str, fn() -> Outcome);

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [Criterion; 9] = [
        (1, "structure exactness", structure_exactness),
        (2, "kendall tau table", tau_table),
        (3, "copula numerics", copula_numerics),
        (4, "entropy estimator", entropy_estimator),
        (5, "estimator consistency trend", consistency_trend),
        (6, "identification scan", identification_scan),
        (7, "forecast scores", forecast_scores),
        (8, "VaR coverage", var_coverage),
        (9, "invariant suites", invariant_suites),
    ];
    let mut failures = 0;
    let mut run_count = 0;
    for (id, name, run) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        run_count += 1;
        let start = Instant::now();
        let out = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome::new(false, format!("panicked: {msg}"))
        });
        if !out.pass {
            failures += 1;
        }
        let verdict = if out.pass { "PASS" } else { "FAIL" };
        println!("{verdict} [{id}] {name}: {} ({:.1} s)", out.detail, start.elapsed().as_secs_f64());
    }
    println!("acceptance: {} of {run_count} criteria passed, {failures} failed", run_count - failures);
    let strict = std::env::var("SVF_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && failures > 0 {
        std::process::exit(1);
    }
}

fn frank_only() -> FamilySet {
    FamilySet::single(Family::Frank)
}

fn listing(s: &MVineStructure) -> Vec<(usize, usize, usize, Vec<usize>)> {
    s.classes
        .iter()
        .map(|c| {
            let mut cond = c.representative.conditioning_set();
            cond.sort_unstable();
            (c.tree, c.representative.conditioned.0, c.representative.conditioned.1, cond)
        })
        .collect()
}

fn structure_exactness() -> Outcome {
    let one_lag = vec![
        (1, 3, 1, vec![]),
        (1, 2, 1, vec![]),
        (2, 4, 1, vec![3]),
        (2, 3, 2, vec![1]),
        (3, 4, 2, vec![1, 3]),
    ];
    let two_lags = vec![
        (1, 3, 1, vec![]),
        (1, 2, 1, vec![]),
        (2, 4, 1, vec![3]),
        (2, 3, 2, vec![1]),
        (3, 5, 1, vec![3, 4]),
        (3, 4, 2, vec![1, 3]),
        (4, 6, 1, vec![3, 4, 5]),
        (4, 5, 2, vec![1, 3, 4]),
        (5, 6, 2, vec![1, 3, 4, 5]),
    ];
    let mut problems = Vec::new();
    if listing(&build_structure(2, 1).unwrap()) != one_lag {
        problems.push("K=2,p=1 listing differs".to_string());
    }
    if listing(&build_structure(2, 2).unwrap()) != two_lags {
        problems.push("K=2,p=2 listing differs".to_string());
    }

    // six variables, five lags: every first-tree edge is either a link
    // between neighbours in the same period or the boundary link of the
    // first variable to its own previous value
    let s = build_structure(6, 5).unwrap();
    let k = 6;
    let node = |id: usize| ((id - 1) / k, (id - 1) % k + 1);
    let tree1: Vec<_> = s.edges_in_tree(1).collect();
    let mut classes: Vec<usize> = tree1.iter().map(|e| e.class_id).collect();
    classes.sort_unstable();
    classes.dedup();
    let mut cross = 0;
    let mut temporal = 0;
    for e in &tree1 {
        let ((ta, va), (tb, vb)) = (node(e.conditioned.0), node(e.conditioned.1));
        if ta == tb && va.abs_diff(vb) == 1 {
            cross += 1;
        } else if va == 1 && vb == 1 && ta.abs_diff(tb) == 1 {
            temporal += 1;
        } else {
            problems.push(format!("unexpected first-tree edge {:?}", e.conditioned));
        }
    }
    let tree1_classes = s.classes.iter().filter(|c| c.tree == 1).count();
    let two_periods = tree1.iter().filter(|e| node(e.conditioned.0).0 < 2 && node(e.conditioned.1).0 < 2).count();
    if tree1_classes != 6 || classes.len() != 6 || cross != 30 || temporal != 5 || two_periods != 11 {
        problems.push(format!(
            "K=6,p=5 first tree: {tree1_classes} classes, {cross} cross-sectional and {temporal} temporal edges, {two_periods} in two periods"
        ));
    }
    let detail = if problems.is_empty() {
        format!("both listings verbatim; K=6,p=5 first tree has 6 classes (5 cross-sectional + 1 temporal), {} window edges, 11 edges across two periods", tree1.len())
    } else {
        problems.join("; ")
    };
    Outcome::new(problems.is_empty(), detail)
}

/// Joe τ from its series `1 − 4 Σ 1/(k(θk+2)(θ(k−1)+2))`.
fn joe_tau_series(t: f64) -> f64 {
    1.0 - 4.0 * (1..200_000).map(|k| 1.0 / (k as f64 * (t * k as f64 + 2.0) * (t * (k - 1) as f64 + 2.0))).sum::<f64>()
}

/// Whether some parameter that prints as `param` (one decimal) has a τ
/// that prints as `printed_tau`.
fn consistent_with_rounding(cop: &PairCopula, printed_tau: f64, decimals: i32) -> bool {
    let half = 0.5 * 10f64.powi(-decimals);
    (-500..=500).any(|i| {
        let t = cop.param + 0.05 * i as f64 / 500.0;
        PairCopula::new(cop.family, t, cop.reflection).is_ok_and(|c| (c.tau() - printed_tau).abs() <= half)
    })
}

fn tau_table() -> Outcome {
    let rows: [(Family, [f64; 5], i32); 4] = [
        (Family::Gaussian, [0.218, 0.486, -0.029, 0.467, -0.174], 3),
        (Family::Clayton, [0.43, 0.49, 0.16, 0.26, 0.11], 2),
        (Family::Frank, [0.214, 0.488, -0.063, 0.464, -0.119], 3),
        (Family::Joe, [0.44, 0.48, 0.13, 0.25, 0.08], 2),
    ];
    let mut worst: (f64, String) = (0.0, String::new());
    let mut rounding = Vec::new();
    let mut pass = true;
    for (fam, taus, decimals) in rows {
        let model = one_lag_design(fam).unwrap();
        for (c, (cop, &printed)) in model.copulas.iter().zip(&taus).enumerate() {
            if fam == Family::Joe && (cop.tau() - joe_tau_series(cop.param)).abs() > 1e-6 {
                pass = false;
                rounding.push(format!("joe({}) disagrees with its series", cop.param));
            }
            let diff = (cop.tau() - printed).abs();
            // the printed values are rounded, so a gap of exactly 0.01 counts
            if diff <= 0.01 + 1e-12 {
                if diff > worst.0 {
                    worst = (diff, format!("{fam} class {c}"));
                }
            } else if consistent_with_rounding(cop, printed, decimals) {
                rounding.push(format!("{fam}({}) τ {:.4} vs printed {printed}", cop.param, cop.tau()));
            } else {
                pass = false;
                rounding.push(format!("{fam} class {c}: {:.4} vs {printed} unexplained", cop.tau()));
            }
        }
    }
    Outcome::new(
        pass,
        format!(
            "max |Δτ| = {:.4} at {} over rows within 0.01; rounded-parameter rows: {}",
            worst.0,
            worst.1,
            if rounding.is_empty() { "none".to_string() } else { rounding.join(", ") }
        ),
    )
}

fn frank_cdf(t: f64, u: f64, v: f64) -> f64 {
    -((-t * u).exp_m1() * (-t * v).exp_m1() / (-t).exp_m1()).ln_1p() / t
}

fn copula_numerics() -> Outcome {
    let eps = 1e-10;
    let mut worst_mass = 0.0f64;
    let mut worst_inv = 0.0f64;
    let mut worst_fd = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for fam in [Family::Gaussian, Family::Clayton, Family::Frank, Family::Joe] {
        for cop in one_lag_design(fam).unwrap().copulas {
            let mass = integrate(|u| integrate(|v| cop.density(u, v), eps, 1.0 - eps, 1e-8), eps, 1.0 - eps, 1e-7);
            worst_mass = worst_mass.max((mass - 1.0).abs());
            for _ in 0..1000 {
                let (w, v): (f64, f64) = (rng.random(), rng.random());
                worst_inv = worst_inv.max((cop.hfunc(cop.hinv(w, v), v) - w).abs());
            }
            if fam == Family::Frank {
                let h = 1e-5;
                for _ in 0..1000 {
                    let u: f64 = rng.random_range(0.01..0.99);
                    let v: f64 = rng.random_range(0.01..0.99);
                    let fd = (frank_cdf(cop.param, u, v + h) - frank_cdf(cop.param, u, v - h)) / (2.0 * h);
                    worst_fd = worst_fd.max((cop.hfunc(u, v) - fd).abs());
                }
            }
        }
    }
    let pass = worst_mass < 1e-3 && worst_inv < 1e-8 && worst_fd < 1e-6;
    Outcome::new(
        pass,
        format!("max |∫∫c − 1| = {worst_mass:.2e}, max h∘h⁻¹ error = {worst_inv:.2e}, max frank h vs finite difference = {worst_fd:.2e}"),
    )
}

fn entropy_estimator() -> Outcome {
    let inside = (0..100u64)
        .filter(|&seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..5000).map(|_| StandardNormal.sample(&mut rng)).collect();
            let e = loo_entropy(&x, default_bandwidth(&x));
            (-1.52..=-1.32).contains(&e)
        })
        .count();
    Outcome::new(inside >= 99, format!("{inside}/100 reps in [-1.52, -1.32] (E log φ = -1.41894)"))
}

fn consistency_trend() -> Outcome {
    let opts = FitOptions {
        k: KChoice::Fixed(2),
        p: 2,
        families: frank_only(),
        sign_search: SignSearch::Identity,
        seed: 500,
        ..FitOptions::default()
    };
    let mut theta = Vec::new();
    let mut first_factor = 0.0;
    for n in [100, 500, 2000] {
        let spec = SimulationSpec::standard(two_lag_frank_design(), MarginLaw::StandardNormal, n, 100, 50, 4000 + n as u64);
        let report = run_study(&spec, &opts).unwrap();
        theta.push(report.mean_theta());
        first_factor = report.mean_factor_column(0);
    }
    let decreasing = theta.windows(2).all(|w| w[1] < w[0]);
    let pass = decreasing && (theta[2] - 0.63).abs() <= 0.15 && (first_factor - 0.1588).abs() <= 0.04;
    Outcome::new(
        pass,
        format!(
            "mean θ RMSE at n=100/500/2000: {:.4}/{:.4}/{:.4} (reference 2.2413/1.4506/0.6288); first-factor RMSE at n=2000: {first_factor:.4} (reference 0.1588)",
            theta[0], theta[1], theta[2]
        ),
    )
}

/// Distance between two angles on the circle of circumference π.
fn dist_mod_pi(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(PI);
    d.min(PI - d)
}

fn identification_scan() -> Outcome {
    let mut spec = SimulationSpec::standard(one_lag_design(Family::Frank).unwrap(), MarginLaw::T4, 1000, 100, 1, 6);
    spec.n_reps = 1;
    let factors = generate(&spec, 0).unwrap().factors;
    let step = PI / 32.0;
    let grid = square_grid(step, 4.0 * PI);
    let pts = contour_scan(&factors, &grid, &build_structure(2, 1).unwrap(), &frank_only(), SignSearch::Identity).unwrap();

    let best = pts.iter().filter(|p| p.objective.is_finite()).max_by(|a, b| a.objective.total_cmp(&b.objective)).unwrap();
    let tol = step * (1.0 + 1e-9);
    let near = |a: f64, b: f64| dist_mod_pi(best.theta1, a) <= tol && dist_mod_pi(best.theta2, b) <= tol;
    let near = near(FRAC_PI_2, 0.0) || near(0.0, FRAC_PI_2);

    // grid index i pairs with i + 32 along either axis
    let side = (grid.len() as f64).sqrt().round() as usize;
    let mut worst_period = 0.0f64;
    for i in 0..side {
        for j in 0..side {
            let v = pts[i * side + j].objective;
            for (a, b) in [(i + 32, j), (i, j + 32)] {
                if a < side && b < side {
                    let w = pts[a * side + b].objective;
                    if v.is_finite() || w.is_finite() {
                        worst_period = worst_period.max((v - w).abs() / (1.0 + v.abs()));
                    }
                }
            }
        }
    }
    // rounding in cos/sin of θ + π is the only source of disagreement
    let periodic = worst_period <= 1e-7;
    let at_truth = pts[16 * side].objective;
    Outcome::new(
        near && periodic,
        format!(
            "argmax at ({:.0}, {:.0})·π/32 mod π, objective {:.5} against {at_truth:.5} at (16, 0); max relative |f(θ) − f(θ + π)| = {worst_period:.1e}",
            (best.theta1 / step).round() as i64 % 32,
            (best.theta2 / step).round() as i64 % 32,
            best.objective
        ),
    )
}

fn mean_score(rows: &[BacktestRow], alphas: &[f64]) -> (f64, f64) {
    let per_alpha: Vec<f64> = alphas
        .iter()
        .map(|&a| {
            let s: Vec<f64> = rows.iter().filter(|r| r.alpha == a).map(|r| r.score).collect();
            s.iter().sum::<f64>() / s.len() as f64
        })
        .collect();
    let sum: f64 = per_alpha.iter().sum();
    (sum / alphas.len() as f64, sum)
}

fn forecast_scores() -> Outcome {
    let (train, test, reps) = (250, 200, 20);
    let mut spec = SimulationSpec::standard(two_lag_frank_design(), MarginLaw::StandardNormal, train + test, 100, reps, 710);
    spec.ar_coef = 0.0;
    spec.innovation_variance = 1.0;
    let alphas = [0.05, 0.10, 0.90, 0.95];
    let mut sf1 = Vec::new();
    let mut sf2 = Vec::new();
    let mut sf1_std_sum = Vec::new();
    for rep in 0..reps {
        let g = generate(&spec, rep).unwrap();
        let x = g.panel.values.clone();
        let panel = PanelData::new(x.rows(0, train).into_owned(), None).unwrap();
        let bt = BacktestOptions {
            alphas: alphas.to_vec(),
            n_paths: 1000,
            seed: 9000 + rep as u64,
            fixed_margins: false,
            series: vec![0],
            absolute: false,
        };
        for (rotate, out) in [(true, &mut sf1), (false, &mut sf2)] {
            let opts = FitOptions {
                k: KChoice::Fixed(2),
                p: 2,
                families: frank_only(),
                sign_search: SignSearch::Identity,
                seed: rep as u64,
                rotate,
                ..FitOptions::default()
            };
            let model = fit(&panel, &opts).unwrap();
            let rows = backtest(&model, &x, &x, &bt).unwrap();
            let (avg, sum) = mean_score(&rows, &alphas);
            out.push(avg);
            if rotate {
                let col: Vec<f64> = panel.values.column(0).iter().copied().collect();
                sf1_std_sum.push(sum / svf_core::numeric::sample_sd(&col));
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (m1, m2) = (mean(&sf1), mean(&sf2));
    Outcome::new(
        (m1 - 0.532).abs() <= 0.05 && m1 <= m2,
        format!(
            "SF_1 {m1:.4} (reference 0.5320), SF_2 {m2:.4} (reference 0.5346); SF_1 summed over α in standardized units {:.4}",
            mean(&sf1_std_sum)
        ),
    )
}

fn var_coverage() -> Outcome {
    let spec = SimulationSpec::standard(two_lag_frank_design(), MarginLaw::StandardNormal, 500, 30, 1, 808);
    let g = generate(&spec, 0).unwrap();
    let opts = FitOptions {
        k: KChoice::Fixed(2),
        p: 2,
        families: frank_only(),
        sign_search: SignSearch::Identity,
        seed: 1,
        ..FitOptions::default()
    };
    let model = fit(&g.panel, &opts).unwrap();
    let horizon = 2000;
    let cont = forecast(&model, &ForecastOptions { horizon, n_paths: 1, seed: 77 }).unwrap();
    let n = model.rotated_loadings.nrows();
    let train = g.panel.t_len();
    let data = Matrix::from_fn(train + horizon, n, |t, i| {
        if t < train {
            g.panel.values[(t, i)]
        } else {
            cont.paths[(t - train) * n + i]
        }
    });
    let alphas = [0.01, 0.05, 0.10, 0.90, 0.95, 0.99];
    let bt = BacktestOptions {
        alphas: alphas.to_vec(),
        n_paths: 1000,
        seed: 31,
        fixed_margins: true,
        series: vec![0],
        absolute: false,
    };
    let rows = backtest(&model, &data, &data, &bt).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for a in alphas {
        let hits = rows.iter().filter(|r| r.alpha == a && r.violation).count();
        let tail = if a < 0.5 { a } else { 1.0 - a };
        let (lo, hi) = binomial_interval(horizon, tail, 0.99);
        let ok = (lo..=hi).contains(&hits);
        pass &= ok;
        parts.push(format!("α={a}: {hits} in [{lo}, {hi}]{}", if ok { "" } else { " !" }));
    }
    Outcome::new(pass, parts.join(", "))
}

fn random_model(rng: &mut ChaCha8Rng, k: usize, p: usize) -> MVineModel {
    let s = build_structure(k, p).unwrap();
    let refl = [Reflection::R0, Reflection::R90, Reflection::R180, Reflection::R270];
    let copulas = (0..s.n_classes())
        .map(|_| {
            let r = refl[rng.random_range(0..4)];
            match rng.random_range(0..5) {
                0 => PairCopula::gaussian(rng.random_range(-0.8..0.8)),
                1 => PairCopula::frank(rng.random_range(-8.0..8.0)),
                2 => PairCopula::clayton(rng.random_range(0.1..4.0), r),
                3 => PairCopula::joe(rng.random_range(1.05..3.5), r),
                _ => PairCopula::independence(),
            }
        })
        .collect();
    MVineModel::new(s, copulas).unwrap()
}

fn invariant_suites() -> Outcome {
    let mut problems = Vec::new();

    // pooled likelihood against edge enumeration at T = 50
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let mut worst_pool = 0.0f64;
    for case in 0..30 {
        let (k, p) = (1 + case % 3, 1 + case % 2);
        let model = random_model(&mut rng, k, p);
        let u = model.simulate(50, 10, case as u64);
        let pooled = model.loglik(&u).unwrap();
        let brute = common::oracle_loglik(&model, &u);
        worst_pool = worst_pool.max((pooled - brute).abs() / (1.0 + brute.abs()));
    }
    if worst_pool >= 1e-8 {
        problems.push(format!("pooling gap {worst_pool:.1e}"));
    }

    // stepwise fit depends on the factors only through their ranks
    let truth = two_lag_frank_design();
    let f = truth.simulate(400, 50, 5).map(svf_core::numeric::norm_quantile);
    let g = f.map(|x| x.exp() + x.powi(3));
    let s = build_structure(2, 2).unwrap();
    let all: FamilySet = "all".parse().unwrap();
    let a = fit_stepwise(&s, &pseudo_observations(&f), FitMode::Select(&all)).unwrap();
    let b = fit_stepwise(&s, &pseudo_observations(&g), FitMode::Select(&all)).unwrap();
    if a.copulas != b.copulas {
        problems.push("rank invariance".into());
    }

    // the stored objective dominates every sign vector at the stored angles
    let spec = SimulationSpec::standard(one_lag_design(Family::Clayton).unwrap(), MarginLaw::StandardNormal, 200, 20, 1, 3);
    let panel = generate(&spec, 0).unwrap().panel;
    let opts = FitOptions {
        k: KChoice::Fixed(2),
        p: 1,
        families: "clayton,frank".parse().unwrap(),
        starts: 3,
        seed: 2,
        ..FitOptions::default()
    };
    let model = fit(&panel, &opts).unwrap();
    for signs in enumerate_sign_flips(2) {
        let v = eval_objective(&model.decomposition.factors, &model.angles, &signs, &s_for(&model), FitMode::Select(&opts.families))
            .unwrap()
            .value;
        if v > model.objective + 1e-9 {
            problems.push(format!("signs {signs:?} beat the stored objective"));
        }
    }

    // fixed seeds reproduce fit, simulation and forecast bit for bit
    let again = fit(&panel, &opts).unwrap();
    if again.objective.to_bits() != model.objective.to_bits() || again.rotated_factors != model.rotated_factors {
        problems.push("fit not deterministic".into());
    }
    if truth.simulate(100, 20, 8) != truth.simulate(100, 20, 8) {
        problems.push("simulate not deterministic".into());
    }
    let fo = ForecastOptions { horizon: 3, n_paths: 50, seed: 4 };
    if forecast(&model, &fo).unwrap().paths != forecast(&model, &fo).unwrap().paths {
        problems.push("forecast not deterministic".into());
    }

    let detail = if problems.is_empty() {
        format!("pooling gap {worst_pool:.1e} over 30 models; rank invariance, sign exhaustiveness and determinism hold")
    } else {
        problems.join("; ")
    };
    Outcome::new(problems.is_empty(), detail)
}

fn s_for(model: &svf_core::FittedModel) -> MVineStructure {
    build_structure(model.k(), model.p()).unwrap()
}
