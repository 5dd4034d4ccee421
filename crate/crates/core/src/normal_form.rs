//! Class-wise decomposition of the joint density and the general posterior
//! correction it implies, in both directions between source and target.

use alloc::vec::Vec;

use crate::dist::{
    class_densities, density, feature_density, ClassConditionalDensities, ClassPriors,
    FeatureDensity, FiniteJointDistribution, JointDensity, PosteriorTable,
};
use crate::{Error, Result, Table};

/// `h̄ = Σ_i h_i (q_i / p_i) 1_{A_i}`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalForm {
    pub class_densities: ClassConditionalDensities,
    /// `q_i / p_i` per class.
    pub prior_ratios: Vec<f64>,
}

impl NormalForm {
    /// Rebuilds the joint density on the source support.
    pub fn reconstruct(&self, source: &FiniteJointDistribution) -> JointDensity {
        let table = source.weights().map(|x, i, w| {
            if w > 0.0 {
                self.class_densities.get(x, i) * self.prior_ratios[i]
            } else {
                0.0
            }
        });
        JointDensity::new(table)
    }
}

pub fn normal_form(
    source: &FiniteJointDistribution,
    target: &FiniteJointDistribution,
) -> Result<NormalForm> {
    let class_densities = class_densities(target, source)?;
    let prior_ratios = prior_ratios(&source.priors(), &target.priors());
    Ok(NormalForm {
        class_densities,
        prior_ratios,
    })
}

pub(crate) fn prior_ratios(source: &ClassPriors, target: &ClassPriors) -> Vec<f64> {
    target
        .values()
        .iter()
        .zip(source.values())
        .map(|(q, p)| q / p)
        .collect()
}

fn check_posterior_shape(post: &PosteriorTable, classes: usize, cells: usize) -> Result<()> {
    if post.num_classes() != classes || post.num_cells() != cells {
        return Err(Error::ShapeMismatch {
            expected: (cells, classes),
            found: (post.num_cells(), post.num_classes()),
        });
    }
    Ok(())
}

/// Normalises `weight(x, i) * posterior(x, i)` per row. Rows that are
/// undefined in the input or have zero total stay undefined.
pub(crate) fn reweight_posteriors(
    posteriors: &PosteriorTable,
    mut weight: impl FnMut(usize, usize) -> f64,
) -> PosteriorTable {
    let (m, d) = (posteriors.num_cells(), posteriors.num_classes());
    let mut values = Table::zeros(m, d);
    let mut defined = alloc::vec![false; m];
    for x in 0..m {
        if !posteriors.is_defined(x) {
            continue;
        }
        let row = values.row_mut(x);
        for (i, v) in row.iter_mut().enumerate() {
            *v = weight(x, i) * posteriors.get(x, i);
        }
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            row.iter_mut().for_each(|v| *v /= total);
            defined[x] = true;
        } else {
            row.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    PosteriorTable::new(values, defined).expect("shape preserved")
}

/// Target posteriors from source posteriors, priors and the class-wise
/// densities: `Q[A_i|x] ∝ h_i(x) (q_i/p_i) P[A_i|x]`.
///
/// Cells where the normaliser vanishes are target-null and flagged.
pub fn correct_posteriors(
    source_posteriors: &PosteriorTable,
    source_priors: &ClassPriors,
    target_priors: &ClassPriors,
    class_densities: &ClassConditionalDensities,
) -> Result<PosteriorTable> {
    let d = source_priors.len();
    check_posterior_shape(source_posteriors, d, class_densities.table().rows())?;
    if target_priors.len() != d || class_densities.table().cols() != d {
        return Err(Error::ShapeMismatch {
            expected: (class_densities.table().rows(), d),
            found: class_densities.table().shape(),
        });
    }
    let ratios = prior_ratios(source_priors, target_priors);
    Ok(reweight_posteriors(source_posteriors, |x, i| {
        class_densities.get(x, i) * ratios[i]
    }))
}

/// The joint density from the feature density and the posterior ratio:
/// `h̄ = h Σ_i (Q[A_i|x] / P[A_i|x]) 1_{A_i}`.
pub fn alternative_density(
    source: &FiniteJointDistribution,
    target: &FiniteJointDistribution,
) -> Result<JointDensity> {
    let h = feature_density(target, source)?;
    alternative_density_from_parts(&h, &source.posteriors(), &target.posteriors())
}

/// Same as [`alternative_density`] from its ingredients. Fails when a
/// target posterior is positive where the source posterior is zero on
/// `{h > 0}`, which no absolutely continuous pair can produce.
pub fn alternative_density_from_parts(
    h: &FeatureDensity,
    source_posteriors: &PosteriorTable,
    target_posteriors: &PosteriorTable,
) -> Result<JointDensity> {
    let (m, d) = (source_posteriors.num_cells(), source_posteriors.num_classes());
    check_posterior_shape(target_posteriors, d, m)?;
    if h.values().len() != m {
        return Err(Error::ShapeMismatch {
            expected: (m, 1),
            found: (h.values().len(), 1),
        });
    }
    let mut table = Table::zeros(m, d);
    for x in 0..m {
        let hx = h.values()[x];
        if !(hx > 0.0) {
            continue;
        }
        for i in 0..d {
            let (p, q) = (source_posteriors.get(x, i), target_posteriors.get(x, i));
            if p > 0.0 {
                table[(x, i)] = hx * q / p;
            } else if q > 0.0 {
                return Err(Error::ImplicationViolation { cell: x, class: i });
            }
        }
    }
    Ok(JointDensity::new(table))
}

/// Source density with respect to the target and source posteriors
/// recovered from target posteriors.
#[derive(Clone, Debug, PartialEq)]
pub struct Reversal {
    /// `dP/dQ = 1/h̄` on the source support.
    pub inverse_density: JointDensity,
    pub source_posteriors: PosteriorTable,
}

/// Requires `h̄ > 0` on every source-support entry (exactly, no tolerance).
pub fn reverse(
    source: &FiniteJointDistribution,
    target: &FiniteJointDistribution,
) -> Result<Reversal> {
    let hbar = density(target, source)?;
    let mut zeros = Vec::new();
    let inverse = source.weights().map(|x, i, w| {
        if w > 0.0 {
            let v = hbar.get(x, i);
            if v > 0.0 {
                return 1.0 / v;
            }
            zeros.push((x, i));
        }
        0.0
    });
    if !zeros.is_empty() {
        return Err(Error::NotEquivalent { entries: zeros });
    }
    let nf = normal_form(source, target)?;
    let source_posteriors = source_posteriors_from_target(
        &target.posteriors(),
        &source.priors(),
        &target.priors(),
        &nf.class_densities,
    )?;
    Ok(Reversal {
        inverse_density: JointDensity::new(inverse),
        source_posteriors,
    })
}

/// `P[A_i|x] ∝ (1/h_i(x)) Q[A_i|x] (p_i/q_i)`, the correction run backwards.
/// Terms with `h_i(x) = 0` contribute zero.
pub fn source_posteriors_from_target(
    target_posteriors: &PosteriorTable,
    source_priors: &ClassPriors,
    target_priors: &ClassPriors,
    class_densities: &ClassConditionalDensities,
) -> Result<PosteriorTable> {
    let d = source_priors.len();
    check_posterior_shape(target_posteriors, d, class_densities.table().rows())?;
    let ratios = prior_ratios(target_priors, source_priors);
    Ok(reweight_posteriors(target_posteriors, |x, i| {
        let hi = class_densities.get(x, i);
        if hi > 0.0 {
            ratios[i] / hi
        } else {
            0.0
        }
    }))
}
