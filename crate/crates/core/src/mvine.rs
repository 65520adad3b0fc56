//! Markovian S-vine (M-vine) over a sliding window of `p + 1` time points.
//!
//! Nodes in the window are numbered `(t - 1)·K + i` for variable `i` at
//! window time `t`. Each node `v` is joined in turn to the nodes of its
//! *partner list*: first the lower variables at the same time in descending
//! order, then each earlier time block (most recent first) in ascending
//! variable order. The `m`-th partner `w_m` gives the edge
//! `(v, w_m | w_1, …, w_{m-1})` in tree `m`. Edges that differ only by a time
//! shift form one equivalence class `(i, m)` sharing a pair copula.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SvfError};
use crate::paircop::{fit_pair, fit_param, FamilySet, PairCopula};
use crate::Matrix;

pub type ClassId = usize;

/// A variable at a time lag relative to the owning node, `var` 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct Lagged {
    var: usize,
    lag: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VineEdge {
    pub tree: usize,
    pub conditioned: (usize, usize),
    pub conditioning: Vec<usize>,
    pub class_id: ClassId,
}

impl VineEdge {
    pub fn conditioning_set(&self) -> Vec<usize> {
        let mut s = self.conditioning.clone();
        s.sort_unstable();
        s
    }
}

/// Where the second argument of a class's copula comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Source {
    /// Raw pseudo-observation of `var` at `lag`.
    Raw { var: usize, lag: usize },
    /// `h(v|w)` of a lower-tree class at `lag`.
    V { class: ClassId, lag: usize },
    /// `h(w|v)` of a lower-tree class at `lag`.
    W { class: ClassId, lag: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassInfo {
    /// Variable owning the class (1-based).
    pub var: usize,
    pub tree: usize,
    /// Earliest time index (0-based) at which the class is present.
    pub t_min: usize,
    /// Representative (earliest) edge in window numbering.
    pub representative: VineEdge,
    a_source: Option<ClassId>,
    b_source: Source,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MVineStructure {
    pub k: usize,
    pub p: usize,
    /// All edges of the `(p+1)K`-node window, by tree then owner descending.
    pub edges: Vec<VineEdge>,
    /// Classes ordered by tree, then representative owner descending.
    pub classes: Vec<ClassInfo>,
    /// `by_var[i-1][m-1]` is the class of variable `i` in tree `m`.
    by_var: Vec<Vec<ClassId>>,
}

fn partner_list(k: usize, p: usize, var: usize) -> Vec<Lagged> {
    let mut w: Vec<Lagged> = (1..var).rev().map(|j| Lagged { var: j, lag: 0 }).collect();
    for lag in 1..=p {
        w.extend((1..=k).map(|j| Lagged { var: j, lag }));
    }
    w
}

fn node_id(k: usize, window_time: usize, var: usize) -> usize {
    window_time * k + var
}

/// Build the M-vine for `k` variables and Markov order `p`.
pub fn build_structure(k: usize, p: usize) -> Result<MVineStructure> {
    if k < 1 || p < 1 {
        return Err(SvfError::InvalidArgument(format!("need k >= 1 and p >= 1, got k={k}, p={p}")));
    }
    let lists: Vec<Vec<Lagged>> = (1..=k).map(|i| partner_list(k, p, i)).collect();

    // provisional class keys (var, tree)
    let mut keys: Vec<(usize, usize)> = Vec::new();
    for i in 1..=k {
        for m in 1..=lists[i - 1].len() {
            keys.push((i, m));
        }
    }
    let t_min_of = |i: usize, m: usize| lists[i - 1][m - 1].lag;
    keys.sort_by(|a, b| {
        a.1.cmp(&b.1).then_with(|| {
            let oa = node_id(k, t_min_of(a.0, a.1), a.0);
            let ob = node_id(k, t_min_of(b.0, b.1), b.0);
            ob.cmp(&oa)
        })
    });
    let mut by_var: Vec<Vec<ClassId>> = lists.iter().map(|l| vec![usize::MAX; l.len()]).collect();
    for (c, &(i, m)) in keys.iter().enumerate() {
        by_var[i - 1][m - 1] = c;
    }

    let mut classes = Vec::with_capacity(keys.len());
    for (c, &(i, m)) in keys.iter().enumerate() {
        let list = &lists[i - 1];
        let t_min = list[m - 1].lag;
        let partner = list[m - 1];
        let a_source = if m > 1 { Some(by_var[i - 1][m - 2]) } else { None };
        let b_source = if m == 1 {
            Source::Raw { var: partner.var, lag: partner.lag }
        } else {
            let set = &list[..m];
            // owner: most recent time, then highest variable
            let owner = *set.iter().min_by(|x, y| x.lag.cmp(&y.lag).then(y.var.cmp(&x.var))).unwrap();
            let owner_list: Vec<Lagged> = lists[owner.var - 1]
                .iter()
                .map(|w| Lagged { var: w.var, lag: w.lag + owner.lag })
                .collect();
            if owner_list.len() < m - 1 {
                return Err(SvfError::Numerical(format!("proximity violated for class ({i},{m})")));
            }
            let mut expect: Vec<(usize, usize)> =
                set.iter().filter(|x| **x != owner).map(|x| (x.lag, x.var)).collect();
            let mut got: Vec<(usize, usize)> = owner_list[..m - 1].iter().map(|x| (x.lag, x.var)).collect();
            expect.sort_unstable();
            got.sort_unstable();
            if expect != got {
                return Err(SvfError::Numerical(format!("proximity violated for class ({i},{m})")));
            }
            let class = by_var[owner.var - 1][m - 2];
            if partner == owner {
                Source::V { class, lag: owner.lag }
            } else if owner_list[m - 2] == partner {
                Source::W { class, lag: owner.lag }
            } else {
                return Err(SvfError::Numerical(format!("proximity violated for class ({i},{m})")));
            }
        };
        let representative = window_edge(k, &lists[i - 1], i, t_min, m, c);
        classes.push(ClassInfo { var: i, tree: m, t_min, representative, a_source, b_source });
    }

    let mut edges = Vec::new();
    for wt in 0..=p {
        for i in 1..=k {
            let avail = (i - 1) + wt * k;
            for m in 1..=avail {
                edges.push(window_edge(k, &lists[i - 1], i, wt, m, by_var[i - 1][m - 1]));
            }
        }
    }
    edges.sort_by(|a, b| a.tree.cmp(&b.tree).then(b.conditioned.0.cmp(&a.conditioned.0)));

    Ok(MVineStructure { k, p, edges, classes, by_var })
}

fn window_edge(k: usize, list: &[Lagged], var: usize, wt: usize, m: usize, class_id: ClassId) -> VineEdge {
    let id = |x: &Lagged| node_id(k, wt - x.lag, x.var);
    VineEdge {
        tree: m,
        conditioned: (node_id(k, wt, var), id(&list[m - 1])),
        conditioning: list[..m - 1].iter().map(id).collect(),
        class_id,
    }
}

impl MVineStructure {
    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn n_trees(&self) -> usize {
        (self.p + 1) * self.k - 1
    }

    pub fn edges_in_tree(&self, tree: usize) -> impl Iterator<Item = &VineEdge> {
        self.edges.iter().filter(move |e| e.tree == tree)
    }

    /// Class of variable `var` (1-based) in tree `tree`.
    pub fn class_of(&self, var: usize, tree: usize) -> Option<ClassId> {
        self.by_var.get(var.wrapping_sub(1))?.get(tree.wrapping_sub(1)).copied()
    }

    /// Number of classes of variable `var` present at time index `t`.
    fn available(&self, var: usize, t: usize) -> usize {
        (var - 1) + t.min(self.p) * self.k
    }

    /// Structural checks: conditioning sizes, spanning trees and proximity.
    pub fn validate(&self) -> Result<()> {
        let n_nodes = (self.p + 1) * self.k;
        let mut prev: Vec<Vec<usize>> = (1..=n_nodes).map(|v| vec![v]).collect();
        for tree in 1..n_nodes {
            let edges: Vec<&VineEdge> = self.edges_in_tree(tree).collect();
            if edges.len() != n_nodes - tree {
                return Err(SvfError::Numerical(format!("tree {tree} has {} edges", edges.len())));
            }
            let mut current = Vec::new();
            // union-find over the previous level's edges
            let mut parent: Vec<usize> = (0..prev.len()).collect();
            fn find(p: &mut [usize], x: usize) -> usize {
                let mut r = x;
                while p[r] != r {
                    r = p[r];
                }
                p[x] = r;
                r
            }
            for e in edges {
                if e.conditioning.len() != tree - 1 {
                    return Err(SvfError::Numerical("conditioning size mismatch".into()));
                }
                let mut all: Vec<usize> = e.conditioning.clone();
                all.push(e.conditioned.0);
                all.push(e.conditioned.1);
                all.sort_unstable();
                let with_a: Vec<usize> = {
                    let mut s = e.conditioning.clone();
                    s.push(e.conditioned.0);
                    s.sort_unstable();
                    s
                };
                let with_b: Vec<usize> = {
                    let mut s = e.conditioning.clone();
                    s.push(e.conditioned.1);
                    s.sort_unstable();
                    s
                };
                let pa = prev.iter().position(|s| *s == with_a);
                let pb = prev.iter().position(|s| *s == with_b);
                let (pa, pb) = match (pa, pb) {
                    (Some(a), Some(b)) => (a, b),
                    _ => return Err(SvfError::Numerical(format!("proximity fails in tree {tree}"))),
                };
                let (ra, rb) = (find(&mut parent, pa), find(&mut parent, pb));
                if ra == rb {
                    return Err(SvfError::Numerical(format!("cycle in tree {tree}")));
                }
                parent[ra] = rb;
                current.push(all);
            }
            prev = current;
        }
        Ok(())
    }
}

/// Per-class pair copulas on a structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MVineFile", into = "MVineFile")]
pub struct MVineModel {
    pub structure: MVineStructure,
    pub copulas: Vec<PairCopula>,
}

#[derive(Serialize, Deserialize)]
struct MVineFile {
    k: usize,
    p: usize,
    classes: Vec<ClassFile>,
}

#[derive(Serialize, Deserialize)]
struct ClassFile {
    tree: usize,
    conditioned: (usize, usize),
    conditioning: Vec<usize>,
    copula: PairCopula,
}

impl From<MVineModel> for MVineFile {
    fn from(m: MVineModel) -> Self {
        let classes = m
            .structure
            .classes
            .iter()
            .zip(&m.copulas)
            .map(|(c, cop)| ClassFile {
                tree: c.tree,
                conditioned: c.representative.conditioned,
                conditioning: c.representative.conditioning.clone(),
                copula: *cop,
            })
            .collect();
        MVineFile { k: m.structure.k, p: m.structure.p, classes }
    }
}

impl TryFrom<MVineFile> for MVineModel {
    type Error = SvfError;
    fn try_from(f: MVineFile) -> Result<Self> {
        let structure = build_structure(f.k, f.p)?;
        if f.classes.len() != structure.n_classes() {
            return Err(SvfError::CorruptModel(format!(
                "expected {} vine classes, found {}",
                structure.n_classes(),
                f.classes.len()
            )));
        }
        for (c, info) in f.classes.iter().zip(&structure.classes) {
            if c.tree != info.tree
                || c.conditioned != info.representative.conditioned
                || c.conditioning != info.representative.conditioning
            {
                return Err(SvfError::CorruptModel("vine class does not match structure".into()));
            }
            PairCopula::new(c.copula.family, c.copula.param, c.copula.reflection)
                .map_err(|e| SvfError::CorruptModel(e.to_string()))?;
        }
        let copulas = f.classes.into_iter().map(|c| c.copula).collect();
        Ok(MVineModel { structure, copulas })
    }
}

/// How the stepwise fit chooses each class's copula.
#[derive(Debug, Clone, Copy)]
pub enum FitMode<'a> {
    /// AIC selection over the family set.
    Select(&'a FamilySet),
    /// Keep each class's family and reflection, re-estimate the parameter
    /// starting near the given value.
    Frozen(&'a [PairCopula]),
}

/// Conditional distribution values at every class and time.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub t_len: usize,
    /// `hv[c * t_len + t] = F(v | w_1..w_m)`.
    pub hv: Vec<f64>,
    /// `hw[c * t_len + t] = F(w_m | v, w_1..w_{m-1})`.
    pub hw: Vec<f64>,
    /// Log-density contribution of each class.
    pub class_loglik: Vec<f64>,
}

impl Evaluation {
    pub fn loglik(&self) -> f64 {
        self.class_loglik.iter().sum()
    }
}

/// Pseudo-observations laid out row-major (`u[t * k + i - 1]`).
fn flatten(u: &Matrix) -> Vec<f64> {
    let (t, k) = u.shape();
    let mut out = Vec::with_capacity(t * k);
    for r in 0..t {
        for c in 0..k {
            out.push(u[(r, c)]);
        }
    }
    out
}

struct Workspace<'a> {
    s: &'a MVineStructure,
    len: usize,
    u: Vec<f64>,
    hv: Vec<f64>,
    hw: Vec<f64>,
}

impl<'a> Workspace<'a> {
    fn new(s: &'a MVineStructure, len: usize) -> Self {
        let n = s.n_classes() * len;
        Workspace { s, len, u: vec![f64::NAN; len * s.k], hv: vec![f64::NAN; n], hw: vec![f64::NAN; n] }
    }

    #[inline]
    fn a(&self, c: ClassId, t: usize) -> f64 {
        match self.s.classes[c].a_source {
            None => self.u[t * self.s.k + self.s.classes[c].var - 1],
            Some(prev) => self.hv[prev * self.len + t],
        }
    }

    #[inline]
    fn b(&self, c: ClassId, t: usize) -> f64 {
        match self.s.classes[c].b_source {
            Source::Raw { var, lag } => self.u[(t - lag) * self.s.k + var - 1],
            Source::V { class, lag } => self.hv[class * self.len + t - lag],
            Source::W { class, lag } => self.hw[class * self.len + t - lag],
        }
    }

    fn set(&mut self, c: ClassId, t: usize, cop: &PairCopula) {
        let (a, b) = (self.a(c, t), self.b(c, t));
        self.hv[c * self.len + t] = cop.hfunc(a, b);
        self.hw[c * self.len + t] = cop.hrev(a, b);
    }

    /// Forward pass for every class of every variable at time `t`.
    fn forward_row(&mut self, t: usize, copulas: &[PairCopula]) {
        for var in 1..=self.s.k {
            self.forward_var(t, var, copulas);
        }
    }

    fn forward_var(&mut self, t: usize, var: usize, copulas: &[PairCopula]) {
        for m in 1..=self.s.available(var, t) {
            let c = self.s.by_var[var - 1][m - 1];
            self.set(c, t, &copulas[c]);
        }
    }

    /// Draw row `t` by inverting the conditional distributions, then fill
    /// the forward quantities.
    fn sample_row<R: Rng>(&mut self, t: usize, copulas: &[PairCopula], rng: &mut R) {
        for var in 1..=self.s.k {
            let mut x: f64 = rng.random();
            for m in (1..=self.s.available(var, t)).rev() {
                let c = self.s.by_var[var - 1][m - 1];
                x = copulas[c].hinv(x, self.b(c, t));
            }
            self.u[t * self.s.k + var - 1] = x;
            self.forward_var(t, var, copulas);
        }
    }
}

impl MVineModel {
    pub fn new(structure: MVineStructure, copulas: Vec<PairCopula>) -> Result<Self> {
        if copulas.len() != structure.n_classes() {
            return Err(SvfError::DimensionMismatch { expected: structure.n_classes(), got: copulas.len() });
        }
        Ok(MVineModel { structure, copulas })
    }

    pub fn independence(k: usize, p: usize) -> Result<Self> {
        let s = build_structure(k, p)?;
        let n = s.n_classes();
        MVineModel::new(s, vec![PairCopula::independence(); n])
    }

    pub fn k(&self) -> usize {
        self.structure.k
    }

    pub fn p(&self) -> usize {
        self.structure.p
    }

    /// Conditional distributions and class log-likelihoods on `u` (`T × K`).
    pub fn evaluate(&self, u: &Matrix) -> Result<Evaluation> {
        check_u(&self.structure, u)?;
        let len = u.nrows();
        let mut ws = Workspace::new(&self.structure, len);
        ws.u = flatten(u);
        let mut class_loglik = vec![0.0; self.structure.n_classes()];
        for (c, info) in self.structure.classes.iter().enumerate() {
            let cop = &self.copulas[c];
            let mut ll = 0.0;
            for t in info.t_min..len {
                let (a, b) = (ws.a(c, t), ws.b(c, t));
                ll += cop.log_density(a, b);
                ws.hv[c * len + t] = cop.hfunc(a, b);
                ws.hw[c * len + t] = cop.hrev(a, b);
            }
            if !ll.is_finite() {
                let e = &info.representative;
                return Err(SvfError::Numerical(format!(
                    "non-finite log-density in class ({},{}|{:?})",
                    e.conditioned.0, e.conditioned.1, e.conditioning
                )));
            }
            class_loglik[c] = ll;
        }
        Ok(Evaluation { t_len: len, hv: ws.hv, hw: ws.hw, class_loglik })
    }

    /// Joint log copula density of the series `u`.
    pub fn loglik(&self, u: &Matrix) -> Result<f64> {
        Ok(self.evaluate(u)?.loglik())
    }

    /// Unconditional simulation of `t_len` rows after `warmup` burn-in rows.
    pub fn simulate(&self, t_len: usize, warmup: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.simulate_with(t_len, warmup, &mut rng)
    }

    pub fn simulate_with<R: Rng>(&self, t_len: usize, warmup: usize, rng: &mut R) -> Matrix {
        let total = t_len + warmup;
        let mut ws = Workspace::new(&self.structure, total);
        for t in 0..total {
            ws.sample_row(t, &self.copulas, rng);
        }
        let k = self.k();
        Matrix::from_fn(t_len, k, |r, c| ws.u[(r + warmup) * k + c])
    }

    /// `n_paths` independent continuations of `history` for `horizon` steps.
    /// Path `m` uses the ChaCha8 stream `m` of `seed`.
    pub fn simulate_conditional(&self, history: &Matrix, horizon: usize, n_paths: usize, seed: u64) -> Result<Vec<Matrix>> {
        let p = self.p();
        let k = self.k();
        if history.nrows() < p {
            return Err(SvfError::InsufficientData { needed: p, got: history.nrows() });
        }
        if history.ncols() != k {
            return Err(SvfError::DimensionMismatch { expected: k, got: history.ncols() });
        }
        let hist = history.rows(history.nrows() - p, p).into_owned();
        let len = p + horizon;
        let mut base = Workspace::new(&self.structure, len);
        for t in 0..p {
            for i in 0..k {
                base.u[t * k + i] = hist[(t, i)];
            }
            base.forward_row(t, &self.copulas);
        }
        let (u0, hv0, hw0) = (base.u, base.hv, base.hw);
        let paths = (0..n_paths)
            .into_par_iter()
            .map(|m| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(m as u64);
                let mut ws =
                    Workspace { s: &self.structure, len, u: u0.clone(), hv: hv0.clone(), hw: hw0.clone() };
                for t in p..len {
                    ws.sample_row(t, &self.copulas, &mut rng);
                }
                Matrix::from_fn(horizon, k, |r, c| ws.u[(r + p) * k + c])
            })
            .collect();
        Ok(paths)
    }

    /// CSV table of classes: tree, edge, conditioned, conditioning, family,
    /// parameter, reflection, tau.
    pub fn structure_table(&self) -> String {
        let mut out = String::from("tree,edge,conditioned,conditioning,family,parameter,reflection,tau\n");
        let mut edge_no = 0;
        let mut last_tree = 0;
        for (info, cop) in self.structure.classes.iter().zip(&self.copulas) {
            if info.tree != last_tree {
                edge_no = 0;
                last_tree = info.tree;
            }
            edge_no += 1;
            let e = &info.representative;
            let cond: Vec<String> = e.conditioning_set().iter().map(|x| x.to_string()).collect();
            out.push_str(&format!(
                "{},{},\"{}, {}\",\"{}\",{},{},{},{}\n",
                info.tree,
                edge_no,
                e.conditioned.0,
                e.conditioned.1,
                cond.join(", "),
                cop.family,
                cop.param,
                cop.reflection.degrees(),
                cop.tau()
            ));
        }
        out
    }
}

fn check_u(s: &MVineStructure, u: &Matrix) -> Result<()> {
    if u.ncols() != s.k {
        return Err(SvfError::DimensionMismatch { expected: s.k, got: u.ncols() });
    }
    if let Some(bad) = u.iter().find(|x| !(**x > 0.0 && **x < 1.0)) {
        return Err(SvfError::InvalidArgument(format!("pseudo-observation {bad} outside (0, 1)")));
    }
    Ok(())
}

/// Tree-by-tree estimation pooling every time-shifted copy of each class.
pub fn fit_stepwise(structure: &MVineStructure, u: &Matrix, mode: FitMode<'_>) -> Result<MVineModel> {
    Ok(fit_stepwise_ll(structure, u, mode)?.0)
}

/// [`fit_stepwise`] also returning the log-likelihood at the estimates.
pub fn fit_stepwise_ll(structure: &MVineStructure, u: &Matrix, mode: FitMode<'_>) -> Result<(MVineModel, f64)> {
    check_u(structure, u)?;
    let len = u.nrows();
    let windows = len.saturating_sub(structure.p);
    if windows < crate::paircop::MIN_PAIRS {
        return Err(SvfError::InsufficientData { needed: crate::paircop::MIN_PAIRS + structure.p, got: len });
    }
    if let FitMode::Frozen(t) = mode {
        if t.len() != structure.n_classes() {
            return Err(SvfError::DimensionMismatch { expected: structure.n_classes(), got: t.len() });
        }
    }
    let mut ws = Workspace::new(structure, len);
    ws.u = flatten(u);
    let mut copulas = Vec::with_capacity(structure.n_classes());
    let mut total = 0.0;
    let mut a = Vec::with_capacity(len);
    let mut b = Vec::with_capacity(len);
    for (c, info) in structure.classes.iter().enumerate() {
        a.clear();
        b.clear();
        for t in info.t_min..len {
            a.push(ws.a(c, t));
            b.push(ws.b(c, t));
        }
        let fit = match mode {
            FitMode::Select(fams) => fit_pair(&a, &b, fams)?,
            FitMode::Frozen(t) => {
                let tpl = t[c];
                fit_param(&a, &b, tpl.family, tpl.reflection, Some(tpl.param))?
            }
        };
        total += fit.loglik;
        let cop = fit.copula;
        for (idx, t) in (info.t_min..len).enumerate() {
            ws.hv[c * len + t] = cop.hfunc(a[idx], b[idx]);
            ws.hw[c * len + t] = cop.hrev(a[idx], b[idx]);
        }
        copulas.push(cop);
    }
    Ok((MVineModel::new(structure.clone(), copulas)?, total))
}
