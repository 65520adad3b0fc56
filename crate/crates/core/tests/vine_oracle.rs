//! The pooled class-wise likelihood against a generic vine density evaluator
//! that unrolls every edge over the whole sample and computes conditional
//! distributions by memoized recursion.

mod common;

use common::{oracle_loglik, unrolled_edges};
use proptest::prelude::*;
use svf_core::dgp::one_lag_design;
use svf_core::mvine::{build_structure, MVineModel};
use svf_core::paircop::{Family, PairCopula, Reflection};

#[test]
fn gaussian_reference_design_matches_edge_enumeration() {
    let model = one_lag_design(Family::Gaussian).unwrap();
    let u = model.simulate(50, 20, 3);
    let pooled = model.loglik(&u).unwrap();
    let brute = oracle_loglik(&model, &u);
    assert!((pooled - brute).abs() < 1e-8, "pooled {pooled} brute {brute}");
}

#[test]
fn edge_count_of_unrolled_graph() {
    let s = build_structure(2, 2).unwrap();
    let cops = vec![PairCopula::independence(); s.n_classes()];
    // K(K-1)/2 contemporaneous edges per time plus K²·min(t,p) temporal ones
    let edges = unrolled_edges(&s, &cops, 10);
    assert_eq!(edges.len(), 10 + 4 * (1 + 2 * 8));
}

fn arb_copula() -> impl Strategy<Value = PairCopula> {
    let refl = prop_oneof![Just(Reflection::R0), Just(Reflection::R90), Just(Reflection::R180), Just(Reflection::R270)];
    prop_oneof![
        (-0.8f64..0.8).prop_map(|r| PairCopula::new(Family::Gaussian, r, Reflection::R0).unwrap()),
        (-8.0f64..8.0).prop_map(PairCopula::frank),
        (0.1f64..4.0, refl.clone()).prop_map(|(t, r)| PairCopula::new(Family::Clayton, t, r).unwrap()),
        (1.05f64..3.5, refl).prop_map(|(t, r)| PairCopula::new(Family::Joe, t, r).unwrap()),
        Just(PairCopula::independence()),
    ]
}

fn arb_model() -> impl Strategy<Value = MVineModel> {
    (1usize..=3, 1usize..=2).prop_flat_map(|(k, p)| {
        let n = build_structure(k, p).unwrap().n_classes();
        prop::collection::vec(arb_copula(), n)
            .prop_map(move |cops| MVineModel::new(build_structure(k, p).unwrap(), cops).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn pooled_likelihood_equals_unpooled_sum(model in arb_model(), seed in 0u64..1000) {
        let u = model.simulate(50, 10, seed);
        let pooled = model.loglik(&u).unwrap();
        let brute = oracle_loglik(&model, &u);
        prop_assert!((pooled - brute).abs() < 1e-8 * (1.0 + brute.abs()), "pooled {} brute {}", pooled, brute);
    }
}
