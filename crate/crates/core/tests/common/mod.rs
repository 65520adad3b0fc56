//! Generic vine density evaluator used as an oracle for the pooled likelihood.

use std::collections::HashMap;

use svf_core::mvine::{MVineModel, MVineStructure};
use svf_core::paircop::PairCopula;
use svf_core::Matrix;

pub struct Edge {
    pub owner: usize,
    pub partner: usize,
    pub cond: Vec<usize>,
    pub copula: PairCopula,
}

/// Every edge of the `T·K`-node vine, nodes numbered `t·K + (i−1)`.
pub fn unrolled_edges(s: &MVineStructure, copulas: &[PairCopula], t_len: usize) -> Vec<Edge> {
    let k = s.k;
    let mut edges = Vec::new();
    for t in 0..t_len {
        for i in 1..=k {
            let mut partners: Vec<usize> = (1..i).rev().map(|j| t * k + j - 1).collect();
            for lag in 1..=s.p.min(t) {
                partners.extend((1..=k).map(|j| (t - lag) * k + j - 1));
            }
            for (m, &w) in partners.iter().enumerate() {
                let class = s.class_of(i, m + 1).expect("class exists");
                let mut cond = partners[..m].to_vec();
                cond.sort_unstable();
                edges.push(Edge { owner: t * k + i - 1, partner: w, cond, copula: copulas[class] });
            }
        }
    }
    edges
}

pub struct Oracle<'a> {
    u: Vec<f64>,
    edges: &'a [Edge],
    index: HashMap<(Vec<usize>, usize, usize), usize>,
    memo: HashMap<(usize, Vec<usize>), f64>,
}

impl<'a> Oracle<'a> {
    pub fn new(u: &Matrix, edges: &'a [Edge]) -> Self {
        let flat = (0..u.nrows()).flat_map(|r| (0..u.ncols()).map(move |c| (r, c))).map(|rc| u[rc]).collect();
        let mut index = HashMap::new();
        for (n, e) in edges.iter().enumerate() {
            let (a, b) = (e.owner.min(e.partner), e.owner.max(e.partner));
            index.insert((e.cond.clone(), a, b), n);
        }
        Oracle { u: flat, edges, index, memo: HashMap::new() }
    }

    /// `F(x | cond)` with `cond` sorted.
    fn cdf(&mut self, x: usize, cond: &[usize]) -> f64 {
        if cond.is_empty() {
            return self.u[x];
        }
        if let Some(v) = self.memo.get(&(x, cond.to_vec())) {
            return *v;
        }
        for (pos, &y) in cond.iter().enumerate() {
            let mut rest = cond.to_vec();
            rest.remove(pos);
            let key = (rest.clone(), x.min(y), x.max(y));
            if let Some(&n) = self.index.get(&key) {
                let e = &self.edges[n];
                let cop = e.copula;
                let fx = self.cdf(x, &rest);
                let fy = self.cdf(y, &rest);
                let v = if e.owner == x { cop.hfunc(fx, fy) } else { cop.hrev(fy, fx) };
                self.memo.insert((x, cond.to_vec()), v);
                return v;
            }
        }
        panic!("no edge yields F({x} | {cond:?})");
    }

    pub fn loglik(&mut self) -> f64 {
        let mut total = 0.0;
        for n in 0..self.edges.len() {
            let (owner, partner, cond, cop) = {
                let e = &self.edges[n];
                (e.owner, e.partner, e.cond.clone(), e.copula)
            };
            let a = self.cdf(owner, &cond);
            let b = self.cdf(partner, &cond);
            total += cop.log_density(a, b);
        }
        total
    }
}

pub fn oracle_loglik(model: &MVineModel, u: &Matrix) -> f64 {
    let edges = unrolled_edges(&model.structure, &model.copulas, u.nrows());
    Oracle::new(u, &edges).loglik()
}
