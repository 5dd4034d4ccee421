#![allow(dead_code)]

use proptest::collection::vec;
use proptest::prelude::*;
use shiftkit_core::{ClassPriors, FeatureDensity, FiniteJointDistribution, Table};

pub fn normalized(raw: &[f64], m: usize, d: usize) -> Table {
    let total: f64 = raw.iter().sum();
    Table::new(m, d, raw.iter().map(|v| v / total).collect()).unwrap()
}

/// Strictly positive joint table with `m` cells and `d` classes in the
/// given ranges.
pub fn positive_joint(
    cells: core::ops::RangeInclusive<usize>,
    classes: core::ops::RangeInclusive<usize>,
) -> impl Strategy<Value = FiniteJointDistribution> {
    (cells, classes).prop_flat_map(|(m, d)| {
        vec(0.02f64..1.0, m * d).prop_map(move |raw| {
            FiniteJointDistribution::unlabeled(normalized(&raw, m, d)).unwrap()
        })
    })
}

/// Two strictly positive tables with the same shape.
pub fn equivalent_pair(
    cells: core::ops::RangeInclusive<usize>,
    classes: core::ops::RangeInclusive<usize>,
) -> impl Strategy<Value = (FiniteJointDistribution, FiniteJointDistribution)> {
    (cells, classes).prop_flat_map(|(m, d)| {
        (vec(0.02f64..1.0, m * d), vec(0.02f64..1.0, m * d)).prop_map(move |(a, b)| {
            let p = FiniteJointDistribution::unlabeled(normalized(&a, m, d)).unwrap();
            let q = p.with_weights(normalized(&b, m, d)).unwrap();
            (p, q)
        })
    })
}

/// Source with some zero entries (every class keeps mass) and a target
/// absolutely continuous with respect to it.
pub fn sparse_pair(
    cells: core::ops::RangeInclusive<usize>,
    classes: core::ops::RangeInclusive<usize>,
) -> impl Strategy<Value = (FiniteJointDistribution, FiniteJointDistribution)> {
    (cells, classes).prop_flat_map(|(m, d)| {
        (
            vec(prop_oneof![1 => Just(0.0), 3 => 0.02f64..1.0], m * d),
            vec(prop_oneof![1 => Just(0.0), 3 => 0.02f64..1.0], m * d),
        )
            .prop_map(move |(mut a, mut b)| {
                for i in 0..d {
                    if (0..m).all(|x| a[x * d + i] == 0.0) {
                        a[i] = 0.5;
                    }
                }
                for k in 0..m * d {
                    if a[k] == 0.0 {
                        b[k] = 0.0;
                    }
                }
                for i in 0..d {
                    if (0..m).all(|x| b[x * d + i] == 0.0) {
                        let x = (0..m).find(|&x| a[x * d + i] > 0.0).unwrap();
                        b[x * d + i] = 0.5;
                    }
                }
                let p = FiniteJointDistribution::unlabeled(normalized(&a, m, d)).unwrap();
                let q = p.with_weights(normalized(&b, m, d)).unwrap();
                (p, q)
            })
    })
}

/// Source, a feature density and target priors of matching shape.
pub fn fjs_inputs(
    cells: core::ops::RangeInclusive<usize>,
    classes: core::ops::RangeInclusive<usize>,
) -> impl Strategy<Value = (FiniteJointDistribution, FeatureDensity, ClassPriors)> {
    (cells, classes).prop_flat_map(|(m, d)| {
        (vec(0.02f64..1.0, m * d), vec(0.1f64..3.0, m), vec(0.05f64..1.0, d)).prop_map(
            move |(w, h, q)| {
                let p = FiniteJointDistribution::unlabeled(normalized(&w, m, d)).unwrap();
                let h = density_from(&p, &h);
                let total: f64 = q.iter().sum();
                let q = ClassPriors::new(q.iter().map(|v| v / total).collect()).unwrap();
                (p, h, q)
            },
        )
    })
}

/// Rescales positive weights so their `P`-expectation is one.
pub fn density_from(p: &FiniteJointDistribution, raw: &[f64]) -> FeatureDensity {
    let marginal = p.feature_marginal();
    let e: f64 = raw.iter().zip(&marginal).map(|(r, w)| r * w).sum();
    FeatureDensity::new(raw.iter().map(|r| r / e).collect(), p).unwrap()
}

/// `p_1 - ρ E_P[h P[A_1|x] / D(ρ)]` for two classes, evaluated directly.
pub fn binary_residual(p: &FiniteJointDistribution, h: &[f64], q1: f64, rho: f64) -> f64 {
    let post = p.posteriors();
    let marginal = p.feature_marginal();
    let p1 = p.priors().get(0);
    let mut e = 0.0;
    for x in 0..p.num_cells() {
        let den = rho * q1 / p1 * post.get(x, 0) + (1.0 - q1) / (1.0 - p1) * post.get(x, 1);
        e += marginal[x] * h[x] * post.get(x, 0) / den;
    }
    p1 - rho * e
}
