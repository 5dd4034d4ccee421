mod common;

use common::{density_from, equivalent_pair, fjs_inputs, positive_joint};
use proptest::collection::vec;
use proptest::prelude::*;
use shiftkit_core::dist::{class_densities, density, feature_density};
use shiftkit_core::fjs::{construct_fjs_target, correct_posteriors_fjs, is_factorizable, solve_rho, Factorizability};
use shiftkit_core::normal_form::normal_form;
use shiftkit_core::taxonomy::{
    check_cspd, classify, covariate_rho, gls_factorize, make_covariate_shift, make_prior_shift,
    ShiftReport,
};
use shiftkit_core::{ClassPriors, FiniteJointDistribution, RepresentationMap, SolverOptions, Table};

const TOL: f64 = 1e-9;

fn closure_holds(r: &ShiftReport) -> bool {
    let implies = |a: bool, b: bool| !a || b;
    implies(r.no_shift, r.prior_shift && r.covariate_shift)
        && implies(r.prior_shift, r.fjs)
        && implies(r.covariate_shift, r.fjs)
        && implies(r.gls == Some(true), r.fjs)
        && implies(r.domain_invariance == Some(true), r.covariate_shift)
        && implies(r.fjs, r.cspd != Some(false))
}

fn priors_strategy(d: usize) -> impl Strategy<Value = ClassPriors> {
    vec(0.05f64..1.0, d).prop_map(|v| {
        let t: f64 = v.iter().sum();
        ClassPriors::new(v.iter().map(|x| x / t).collect()).unwrap()
    })
}

/// Group-level prior shift with cell shares that are class-independent
/// within each group but differ between source and target.
fn gls_pair() -> impl Strategy<Value = (FiniteJointDistribution, FiniteJointDistribution, RepresentationMap)> {
    (1usize..=4, 2usize..=4, 1usize..=3).prop_flat_map(|(k, d, per)| {
        let m = k * per;
        (
            vec(0.05f64..1.0, k * d),
            vec(0.05f64..1.0, m),
            vec(0.05f64..1.0, m),
            priors_strategy(d),
        )
            .prop_map(move |(g, sp, sq, q)| {
                let gt: f64 = g.iter().sum();
                let share = |s: &[f64], x: usize| {
                    let grp = x / per;
                    s[x] / (grp * per..(grp + 1) * per).map(|y| s[y]).sum::<f64>()
                };
                let group = |grp: usize, i: usize| g[grp * d + i] / gt;
                let p = Table::from_fn(m, d, |x, i| group(x / per, i) * share(&sp, x));
                let p = FiniteJointDistribution::unlabeled(p).unwrap();
                let pp = p.priors();
                let qt = Table::from_fn(m, d, |x, i| group(x / per, i) / pp.get(i) * q.get(i) * share(&sq, x));
                let target = p.with_weights(qt).unwrap();
                let labels: Vec<String> = (0..m).map(|x| format!("g{}", x / per)).collect();
                (p, target, RepresentationMap::from_labels(&labels).unwrap())
            })
    })
}

proptest! {
    #[test]
    fn prior_shift_correction_is_exact((p, q) in positive_joint(2..=12, 2..=4).prop_flat_map(|p| {
        let d = p.num_classes();
        (Just(p), priors_strategy(d))
    })) {
        let target = make_prior_shift(&p, &q).unwrap();
        let h = class_densities(&target, &p).unwrap();
        prop_assert!(h.table().as_slice().iter().all(|v| (v - 1.0).abs() <= 1e-12));
        let ones = vec![1.0; p.num_classes() - 1];
        let corrected = correct_posteriors_fjs(&p.posteriors(), &p.priors(), &q, &ones).unwrap();
        prop_assert!(corrected.max_abs_diff(&target.posteriors()) <= 1e-12);
    }

    #[test]
    fn covariate_shift_keeps_posteriors(
        (p, t) in positive_joint(2..=12, 2..=4).prop_flat_map(|p| {
            let m = p.num_cells();
            (Just(p), vec(0.05f64..1.0, m))
        })
    ) {
        let total: f64 = t.iter().sum();
        let t: Vec<f64> = t.iter().map(|v| v / total).collect();
        let q = make_covariate_shift(&p, &t).unwrap();
        prop_assert!(q.posteriors().max_abs_diff(&p.posteriors()) <= 1e-12);
        let hbar = density(&q, &p).unwrap();
        for x in 0..p.num_cells() {
            for i in 1..p.num_classes() {
                prop_assert!((hbar.get(x, i) - hbar.get(x, 0)).abs() <= 1e-12 * hbar.get(x, 0).max(1.0));
            }
        }
        let rho = covariate_rho(&p.priors(), &q.priors());
        let h = feature_density(&q, &p).unwrap();
        let target = construct_fjs_target(&p, &h, &q.priors(), &rho, 1e-10);
        prop_assert!(target.is_ok());
        prop_assert!(target.unwrap().weights().max_abs_diff(q.weights()) <= 1e-10);
    }

    #[test]
    fn binary_fjs_pairs_are_comonotone((p, h, q) in fjs_inputs(2..=12, 2..=2)) {
        let c = solve_rho(&p, &h, &q, &SolverOptions::default()).unwrap();
        let target = construct_fjs_target(&p, &h, &q, &c.rho, 1e-12).unwrap();
        prop_assert!(check_cspd(&p, &target, TOL).unwrap().holds());
        let report = classify(&p, &target, None, TOL).unwrap();
        prop_assert!(report.fjs && report.cspd == Some(true));
    }

    #[test]
    fn gls_pairs_factorize_with_unit_ratio_scale((p, q, t) in gls_pair()) {
        let f = gls_factorize(&p, &q, &t, TOL).unwrap();
        prop_assert!(f.max_error <= 1e-10);
        let nf = normal_form(&p, &q).unwrap();
        let d = p.num_classes();
        // h_j / h_d ≡ 1
        for x in 0..p.num_cells() {
            for j in 0..d - 1 {
                let (hj, hd) = (nf.class_densities.get(x, j), nf.class_densities.get(x, d - 1));
                prop_assert!((hj / hd - 1.0).abs() <= 1e-10);
            }
        }
        match is_factorizable(&p, &q, TOL).unwrap() {
            Factorizability::Factorizable { rho } => prop_assert!(rho.iter().all(|r| (r - 1.0).abs() <= 1e-9)),
            other => prop_assert!(false, "{:?}", other),
        }
        let report = classify(&p, &q, Some(&t), TOL).unwrap();
        prop_assert_eq!(report.gls, Some(true));
        prop_assert!(closure_holds(&report));
    }

    #[test]
    fn classification_is_closed_under_implication((p, q) in equivalent_pair(2..=8, 2..=4)) {
        let m = p.num_cells();
        let halves: Vec<String> = (0..m).map(|x| format!("{}", x % 2)).collect();
        let map = RepresentationMap::from_labels(&halves).unwrap();
        for target in [q.clone(), p.clone(), make_prior_shift(&p, &q.priors()).unwrap()] {
            let r = classify(&p, &target, Some(&map), TOL).unwrap();
            prop_assert!(closure_holds(&r), "{:?}", r);
        }
        let generic = classify(&p, &q, None, TOL).unwrap();
        prop_assert!(!generic.no_shift && !generic.prior_shift && !generic.covariate_shift && !generic.fjs);
    }
}

#[test]
fn density_helper_normalises() {
    let p = FiniteJointDistribution::unlabeled(Table::from_rows(&[[0.25, 0.25], [0.25, 0.25]]).unwrap()).unwrap();
    assert_eq!(density_from(&p, &[2.0, 2.0]).values(), &[1.0, 1.0]);
}
