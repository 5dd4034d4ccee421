mod common;

use common::positive_joint;
use proptest::collection::vec;
use proptest::prelude::*;
use shiftkit_core::dist::{class_densities, density, feature_density};
use shiftkit_core::normal_form::{normal_form, reverse};
use shiftkit_core::selection::{
    analyze_fjs_selection, covariate_selection_check, not_selected_posteriors, recover_posteriors_hein,
    sample_distribution, selection_given_features, AnalysisMode,
};
use shiftkit_core::{FiniteJointDistribution, SelectionModel, SolverOptions, Table};

fn with_model(
    p: FiniteJointDistribution,
    raw: Vec<f64>,
) -> (FiniteJointDistribution, SelectionModel) {
    let (m, d) = (p.num_cells(), p.num_classes());
    let sel = SelectionModel::new(Table::from_fn(m, d, |x, i| raw[x * d + i])).unwrap();
    (p, sel)
}

fn scenario() -> impl Strategy<Value = (FiniteJointDistribution, SelectionModel)> {
    positive_joint(2..=10, 2..=4).prop_flat_map(|p| {
        let n = p.num_cells() * p.num_classes();
        (Just(p), vec(0.05f64..=1.0, n)).prop_map(|(p, raw)| with_model(p, raw))
    })
}

/// `φ(x, i) = u(x) v(i)`: the induced pair is factorizable.
fn product_scenario() -> impl Strategy<Value = (FiniteJointDistribution, SelectionModel)> {
    positive_joint(2..=10, 2..=4).prop_flat_map(|p| {
        let (m, d) = (p.num_cells(), p.num_classes());
        (Just(p), vec(0.1f64..=1.0, m), vec(0.1f64..=1.0, d)).prop_map(move |(p, u, v)| {
            let raw = (0..m * d).map(|k| u[k / d] * v[k % d]).collect();
            with_model(p, raw)
        })
    })
}

proptest! {
    #[test]
    fn sample_is_equivalent_to_population((p, sel) in scenario()) {
        let (q, ps) = sample_distribution(&p, &sel).unwrap();
        let hbar = density(&q, &p).unwrap();
        for x in 0..p.num_cells() {
            for i in 0..p.num_classes() {
                prop_assert!(hbar.get(x, i) > 0.0);
                prop_assert!((hbar.get(x, i) - sel.phi()[(x, i)] / ps).abs() <= 1e-12);
            }
        }
        prop_assert!(reverse(&p, &q).is_ok());
    }

    #[test]
    fn densities_follow_selection_probabilities((p, sel) in scenario()) {
        let (q, ps) = sample_distribution(&p, &sel).unwrap();
        let given = selection_given_features(&p, &sel).unwrap();
        let h = feature_density(&q, &p).unwrap();
        for x in 0..p.num_cells() {
            prop_assert!((h.values()[x] - given[x] / ps).abs() <= 1e-12);
        }
        // P_i[S] = Σ_x P_i[x] φ(x, i)
        let hi = class_densities(&q, &p).unwrap();
        let pri = p.priors();
        let (m, d) = (p.num_cells(), p.num_classes());
        let class_rate: Vec<f64> = (0..d)
            .map(|i| (0..m).map(|x| p.weight(x, i) / pri.get(i) * sel.phi()[(x, i)]).sum())
            .collect();
        let nf = normal_form(&p, &q).unwrap().reconstruct(&p);
        let qp = q.priors();
        for x in 0..m {
            for i in 0..d {
                let expected = sel.phi()[(x, i)] / class_rate[i];
                prop_assert!((hi.get(x, i) - expected).abs() <= 1e-12 * expected.max(1.0));
                let via_selection = expected * qp.get(i) / pri.get(i);
                prop_assert!((nf.get(x, i) - via_selection).abs() <= 1e-12 * via_selection.max(1.0));
            }
        }
        // Q[A_i|x] = P[S ∩ A_i|x] / P[S|x]
        let (pp, qpost) = (p.posteriors(), q.posteriors());
        for x in 0..m {
            for i in 0..d {
                let v = pp.get(x, i) * sel.phi()[(x, i)] / given[x];
                prop_assert!((qpost.get(x, i) - v).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn hein_routes_recover_population((p, sel) in scenario()) {
        let (q, _) = sample_distribution(&p, &sel).unwrap();
        let given = selection_given_features(&p, &sel).unwrap();
        let star = not_selected_posteriors(&p, &sel).unwrap();
        let one = recover_posteriors_hein(&given, &q.posteriors(), Some(&star), None).unwrap();
        let two = recover_posteriors_hein(&given, &q.posteriors(), None, Some(sel.classwise())).unwrap();
        prop_assert!(one.max_abs_diff(&p.posteriors()) <= 1e-12);
        prop_assert!(two.max_abs_diff(&p.posteriors()) <= 1e-12);
    }

    #[test]
    fn covariate_selection_iff_posterior_invariance((p, sel) in prop_oneof![
        scenario(),
        positive_joint(2..=10, 2..=4).prop_flat_map(|p| {
            let (m, d) = (p.num_cells(), p.num_classes());
            (Just(p), vec(0.05f64..=1.0, m)).prop_map(move |(p, u)| {
                with_model(p, (0..m * d).map(|k| u[k / d]).collect())
            })
        }),
    ]) {
        let (q, _) = sample_distribution(&p, &sel).unwrap();
        let independent = covariate_selection_check(&p, &sel, 1e-12).unwrap();
        let invariant = q.posteriors().max_abs_diff(&p.posteriors()) <= 1e-12;
        prop_assert_eq!(independent, invariant);
    }

    #[test]
    fn factorizable_selection_round_trip((p, sel) in product_scenario()) {
        let (q, _) = sample_distribution(&p, &sel).unwrap();
        let a = analyze_fjs_selection(&p, &sel, AnalysisMode::KnownPopulationPriors, &SolverOptions::default()).unwrap();
        prop_assert!(a.recovered_posteriors.max_abs_diff(&p.posteriors()) <= 1e-8);
        prop_assert!(a.classwise_selection.max_abs_diff(sel.phi()) <= 1e-8);
        prop_assert!(a.admissible);
        // g* b* = 1/h̄ up to one constant
        let hbar = density(&q, &p).unwrap();
        let c = a.g_star[0] * a.b_star[0] * hbar.get(0, 0);
        for x in 0..p.num_cells() {
            for i in 0..p.num_classes() {
                let v = a.g_star[x] * a.b_star[i] * hbar.get(x, i) / c;
                prop_assert!((v - 1.0).abs() <= 1e-10);
            }
        }
    }
}
