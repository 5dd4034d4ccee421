//! Named special cases of dataset shift: constructors, membership checks,
//! and the correction formulas they admit.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::dist::{
    class_conditionals, class_densities, density, feature_density, ClassConditionalDensities,
    ClassPriors, FiniteJointDistribution, Partition, PosteriorTable,
};
use crate::fjs::{is_factorizable, Factorizability};
use crate::normal_form::reweight_posteriors;
use crate::tolerance::close;
use crate::{Error, Result, Table};

/// Target with the source class-conditionals and new priors:
/// `Q[x, i] = P_i[x] q_i`.
pub fn make_prior_shift(source: &FiniteJointDistribution, q: &ClassPriors) -> Result<FiniteJointDistribution> {
    if q.len() != source.num_classes() {
        return Err(Error::ShapeMismatch {
            expected: (1, source.num_classes()),
            found: (1, q.len()),
        });
    }
    let cc = class_conditionals(source);
    source.with_weights(cc.map(|_, i, v| v * q.get(i)))
}

/// Target with the source posteriors and a new feature marginal:
/// `Q[x, i] = P[A_i|x] t(x)`.
pub fn make_covariate_shift(source: &FiniteJointDistribution, t: &[f64]) -> Result<FiniteJointDistribution> {
    let m = source.num_cells();
    if t.len() != m {
        return Err(Error::ShapeMismatch {
            expected: (m, 1),
            found: (t.len(), 1),
        });
    }
    let post = source.posteriors();
    let entries: Vec<(usize, usize)> = (0..m)
        .filter(|&x| t[x] > 0.0 && !post.is_defined(x))
        .flat_map(|x| (0..source.num_classes()).map(move |i| (x, i)))
        .collect();
    if !entries.is_empty() {
        return Err(Error::AbsoluteContinuityViolation { entries });
    }
    source.with_weights(post.table().map(|x, _, v| v * t[x]))
}

/// `ρ_i = (q_d/p_d)(p_i/q_i)`, the constants that make `b` constant under
/// covariate shift.
pub fn covariate_rho(source_priors: &ClassPriors, target_priors: &ClassPriors) -> Vec<f64> {
    let (p, q) = (source_priors.values(), target_priors.values());
    let d = p.len();
    (0..d - 1)
        .map(|i| (q[d - 1] / p[d - 1]) * (p[i] / q[i]))
        .collect()
}

/// `Q[A_i|x] ∝ (q_i/p_i) P[A_i|x]`.
pub fn correct_prior_shift(
    source_posteriors: &PosteriorTable,
    source_priors: &ClassPriors,
    target_priors: &ClassPriors,
) -> Result<PosteriorTable> {
    let d = source_priors.len();
    if target_priors.len() != d || source_posteriors.num_classes() != d {
        return Err(Error::ShapeMismatch {
            expected: (source_posteriors.num_cells(), d),
            found: (source_posteriors.num_cells(), source_posteriors.num_classes()),
        });
    }
    let (p, q) = (source_priors.values(), target_priors.values());
    Ok(reweight_posteriors(source_posteriors, |_, i| q[i] / p[i]))
}

/// Outcome of the binary posterior-link test.
#[derive(Clone, Debug, PartialEq)]
pub enum Cspd {
    /// Comonotone; the link as `(P[A_1|x], Q[A_1|x])` points sorted by the
    /// source posterior, one per distinct cell.
    Comonotone { link: Vec<(f64, f64)> },
    /// The two cells order the posteriors differently, or tie under the
    /// source but not under the target.
    Violation { cells: (usize, usize) },
}

impl Cspd {
    pub fn holds(&self) -> bool {
        matches!(self, Cspd::Comonotone { .. })
    }
}

/// Tests whether the target positive-class posterior is an increasing
/// function of the source one over cells where both are defined.
pub fn check_cspd(source: &FiniteJointDistribution, target: &FiniteJointDistribution, tol: f64) -> Result<Cspd> {
    if source.num_classes() != 2 {
        return Err(Error::NotBinary {
            classes: source.num_classes(),
        });
    }
    density(target, source)?;
    let (pp, qp) = (source.posteriors(), target.posteriors());
    let cells: Vec<usize> = (0..source.num_cells())
        .filter(|&x| pp.is_defined(x) && qp.is_defined(x))
        .collect();
    for (k, &a) in cells.iter().enumerate() {
        for &b in &cells[k + 1..] {
            let (pa, pb) = (pp.get(a, 0), pp.get(b, 0));
            let (qa, qb) = (qp.get(a, 0), qp.get(b, 0));
            let violated = if close(pa, pb, tol) {
                !close(qa, qb, tol)
            } else {
                !close(qa, qb, tol) && (pa - pb) * (qa - qb) < 0.0
            };
            if violated {
                return Ok(Cspd::Violation { cells: (a, b) });
            }
        }
    }
    let mut link: Vec<(f64, f64)> = cells.iter().map(|&x| (pp.get(x, 0), qp.get(x, 0))).collect();
    link.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    Ok(Cspd::Comonotone { link })
}

/// Class-conditional densities through the posterior link:
/// `h_1 = (p_1/q_1) h Q[A_1|x]/P[A_1|x]` and
/// `h_2 = ((1-p_1)/(1-q_1)) h (1 - Q[A_1|x])/(1 - P[A_1|x])`.
pub fn cspd_class_densities(
    source: &FiniteJointDistribution,
    target: &FiniteJointDistribution,
    tol: f64,
) -> Result<ClassConditionalDensities> {
    if !check_cspd(source, target, tol)?.holds() {
        return Err(Error::PreconditionFailed("posteriors are not comonotone"));
    }
    let h = feature_density(target, source)?;
    let (pp, qp) = (source.posteriors(), target.posteriors());
    let (p, q) = (source.priors(), target.priors());
    let scale = [p.get(0) / q.get(0), p.get(1) / q.get(1)];
    let table = Table::from_fn(source.num_cells(), 2, |x, i| {
        let (sp, tp) = (pp.get(x, i), qp.get(x, i));
        if pp.is_defined(x) && qp.is_defined(x) && sp > 0.0 {
            scale[i] * h.values()[x] * tp / sp
        } else {
            0.0
        }
    });
    Ok(ClassConditionalDensities::new(table))
}

/// A deterministic map from cells to representation values: the cell
/// partition it induces and a label per group.
#[derive(Clone, Debug, PartialEq)]
pub struct RepresentationMap {
    labels: Vec<String>,
    partition: Partition,
}

impl RepresentationMap {
    /// Groups numbered in order of first appearance.
    pub fn from_labels<S: AsRef<str>>(cell_groups: &[S]) -> Result<Self> {
        let mut labels: Vec<String> = Vec::new();
        let mut assignment = Vec::with_capacity(cell_groups.len());
        for g in cell_groups {
            let g = g.as_ref();
            let id = match labels.iter().position(|l| l == g) {
                Some(id) => id,
                None => {
                    labels.push(String::from(g));
                    labels.len() - 1
                }
            };
            assignment.push(id);
        }
        Ok(RepresentationMap {
            labels,
            partition: Partition::new(assignment)?,
        })
    }

    pub fn from_partition(partition: Partition) -> Self {
        let labels = (0..partition.num_groups()).map(|g| alloc::format!("{g}")).collect();
        RepresentationMap { labels, partition }
    }

    pub fn identity(m: usize) -> Self {
        Self::from_partition(Partition::cells(m))
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    fn check_cells(&self, m: usize) -> Result<()> {
        if self.partition.num_cells() != m {
            return Err(Error::ShapeMismatch {
                expected: (m, 1),
                found: (self.partition.num_cells(), 1),
            });
        }
        Ok(())
    }
}

/// Posteriors constant within each group and equal to the group-level
/// posterior, on cells of positive mass.
fn check_sufficiency(dist: &FiniteJointDistribution, map: &RepresentationMap, tol: f64) -> Result<()> {
    let part = map.partition();
    let grouped = PosteriorTable::from_joint(&part.aggregate(dist.weights()));
    let post = dist.posteriors();
    for x in 0..dist.num_cells() {
        if !post.is_defined(x) {
            continue;
        }
        let g = part.group_of(x);
        for i in 0..dist.num_classes() {
            if !close(post.get(x, i), grouped.get(g, i), tol) {
                return Err(Error::NotSufficient { group: g, class: i });
            }
        }
    }
    Ok(())
}

fn compare_grouped(a: &Table, b: &Table, tol: f64) -> Result<()> {
    for g in 0..a.rows() {
        for i in 0..a.cols() {
            if !close(a[(g, i)], b[(g, i)], tol) {
                return Err(Error::NotGroupInvariant { group: g, class: i });
            }
        }
    }
    Ok(())
}

/// Generalised label shift: group distributions given each class agree,
/// and the representation is sufficient under both distributions.
pub fn check_gls(
    source: &FiniteJointDistribution,
    target: &FiniteJointDistribution,
    map: &RepresentationMap,
    tol: f64,
) -> Result<()> {
    density(target, source)?;
    map.check_cells(source.num_cells())?;
    let part = map.partition();
    compare_grouped(
        &part.aggregate(&class_conditionals(target)),
        &part.aggregate(&class_conditionals(source)),
        tol,
    )?;
    check_sufficiency(source, map, tol)?;
    check_sufficiency(target, map, tol)
}

/// `b_i = q_i/p_i` and `g = h/γ` with `γ = Σ_i (q_i/p_i) P[A_i|x]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GlsFactorization {
    pub g: Vec<f64>,
    pub b: Vec<f64>,
    /// Largest entrywise gap between `g b` and the joint density.
    pub max_error: f64,
}

pub fn gls_factorize(
    source: &FiniteJointDistribution,
    target: &FiniteJointDistribution,
    map: &RepresentationMap,
    tol: f64,
) -> Result<GlsFactorization> {
    check_gls(source, target, map, tol)?;
    let h = feature_density(target, source)?;
    let joint = density(target, source)?;
    let (p, q) = (source.priors(), target.priors());
    let b: Vec<f64> = (0..p.len()).map(|i| q.get(i) / p.get(i)).collect();
    let post = source.posteriors();
    let g: Vec<f64> = (0..source.num_cells())
        .map(|x| {
            let gamma: f64 = post.row(x).iter().zip(&b).map(|(v, bi)| v * bi).sum();
            if gamma > 0.0 {
                h.values()[x] / gamma
            } else {
                0.0
            }
        })
        .collect();
    let mut max_error: f64 = 0.0;
    for x in 0..source.num_cells() {
        for i in 0..p.len() {
            if source.weight(x, i) > 0.0 {
                max_error = max_error.max((g[x] * b[i] - joint.get(x, i)).abs());
            }
        }
    }
    if max_error > crate::tolerance::DENSITY_MASS {
        return Err(Error::PreconditionFailed("g b does not reproduce the joint density"));
    }
    Ok(GlsFactorization { g, b, max_error })
}

/// Domain invariance: equal (group, class) masses and a representation
/// sufficient under both distributions.
pub fn check_domain_invariance(
    source: &FiniteJointDistribution,
    target: &FiniteJointDistribution,
    map: &RepresentationMap,
    tol: f64,
) -> Result<()> {
    density(target, source)?;
    map.check_cells(source.num_cells())?;
    let part = map.partition();
    compare_grouped(&part.aggregate(target.weights()), &part.aggregate(source.weights()), tol)?;
    check_sufficiency(source, map, tol)?;
    check_sufficiency(target, map, tol)
}

/// Which check a counterexample belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Check {
    NoShift,
    PriorShift,
    CovariateShift,
    Fjs,
    Cspd,
    Gls,
    DomainInvariance,
}

impl Check {
    pub fn name(self) -> &'static str {
        match self {
            Check::NoShift => "no_shift",
            Check::PriorShift => "prior_shift",
            Check::CovariateShift => "covariate_shift",
            Check::Fjs => "fjs",
            Check::Cspd => "cspd",
            Check::Gls => "gls",
            Check::DomainInvariance => "domain_invariance",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Witness {
    /// The table entry that breaks the check.
    Entry { check: Check, cell: usize, class: usize },
    /// Two cells (possibly the same) that break the check.
    Cells {
        check: Check,
        class: Option<usize>,
        cells: (usize, usize),
    },
    /// A representation group that breaks the check.
    Group {
        check: Check,
        group: usize,
        class: usize,
        reason: &'static str,
    },
    /// A density ratio that no cell determines.
    Undetermined { class: usize },
    /// The check failed only to be set by an implied type.
    Implied { check: Check, by: Check },
}

/// Every applicable special-case flag for a source/target pair.
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftReport {
    pub tolerance: f64,
    pub no_shift: bool,
    pub prior_shift: bool,
    pub covariate_shift: bool,
    pub fjs: bool,
    /// Witness constants `ρ_1..ρ_{d-1}` when factorizable.
    pub rho: Option<Vec<f64>>,
    /// Binary pairs only.
    pub cspd: Option<bool>,
    /// Only with a representation map.
    pub gls: Option<bool>,
    pub domain_invariance: Option<bool>,
    pub witnesses: Vec<Witness>,
}

fn first_mismatch(a: &Table, b: &Table, tol: f64, mask: impl Fn(usize, usize) -> bool) -> Option<(usize, usize)> {
    (0..a.rows())
        .flat_map(|x| (0..a.cols()).map(move |i| (x, i)))
        .find(|&(x, i)| mask(x, i) && !close(a[(x, i)], b[(x, i)], tol))
}

fn group_witness(check: Check, err: Error) -> Result<Witness> {
    match err {
        Error::NotGroupInvariant { group, class } => Ok(Witness::Group {
            check,
            group,
            class,
            reason: "NotGroupInvariant",
        }),
        Error::NotSufficient { group, class } => Ok(Witness::Group {
            check,
            group,
            class,
            reason: "NotSufficient",
        }),
        other => Err(other),
    }
}

/// Runs every applicable check and closes the flags under the known
/// implications: no shift implies prior and covariate shift, those and
/// generalised label shift imply factorizable joint shift, domain
/// invariance implies covariate shift, and for two classes factorizable
/// joint shift implies the posterior link.
pub fn classify(
    source: &FiniteJointDistribution,
    target: &FiniteJointDistribution,
    map: Option<&RepresentationMap>,
    tol: f64,
) -> Result<ShiftReport> {
    density(target, source)?;
    let mut witnesses = Vec::new();
    let (p, q) = (source.priors(), target.priors());
    let d = source.num_classes();

    let no_shift = match first_mismatch(target.weights(), source.weights(), tol, |_, _| true) {
        None => true,
        Some((cell, class)) => {
            witnesses.push(Witness::Entry { check: Check::NoShift, cell, class });
            false
        }
    };

    let hi = class_densities(target, source)?;
    let ones = Table::filled(source.num_cells(), d, 1.0);
    let mut prior_shift = match first_mismatch(hi.table(), &ones, tol, |x, i| source.weight(x, i) > 0.0) {
        None => true,
        Some((cell, class)) => {
            witnesses.push(Witness::Entry { check: Check::PriorShift, cell, class });
            false
        }
    };

    let (pp, qp) = (source.posteriors(), target.posteriors());
    let mut covariate_shift =
        match first_mismatch(qp.table(), pp.table(), tol, |x, _| qp.is_defined(x)) {
            None => true,
            Some((cell, class)) => {
                witnesses.push(Witness::Entry { check: Check::CovariateShift, cell, class });
                false
            }
        };

    let (mut fjs, mut rho) = match is_factorizable(source, target, tol) {
        Ok(Factorizability::Factorizable { rho }) => (true, Some(rho)),
        Ok(Factorizability::NotFactorizable { class, cells }) => {
            witnesses.push(Witness::Cells {
                check: Check::Fjs,
                class: Some(class),
                cells,
            });
            (false, None)
        }
        Err(Error::Undetermined { class }) => {
            witnesses.push(Witness::Undetermined { class });
            (false, None)
        }
        Err(e) => return Err(e),
    };

    let (gls, domain_invariance) = match map {
        None => (None, None),
        Some(map) => {
            let gls = match check_gls(source, target, map, tol) {
                Ok(()) => true,
                Err(e) => {
                    witnesses.push(group_witness(Check::Gls, e)?);
                    false
                }
            };
            let di = match check_domain_invariance(source, target, map, tol) {
                Ok(()) => true,
                Err(e) => {
                    witnesses.push(group_witness(Check::DomainInvariance, e)?);
                    false
                }
            };
            (Some(gls), Some(di))
        }
    };

    let mut imply = |flag: &mut bool, check: Check, by: Check, premise: bool| {
        if premise && !*flag {
            *flag = true;
            witnesses.push(Witness::Implied { check, by });
        }
    };
    imply(&mut prior_shift, Check::PriorShift, Check::NoShift, no_shift);
    imply(&mut covariate_shift, Check::CovariateShift, Check::NoShift, no_shift);
    imply(
        &mut covariate_shift,
        Check::CovariateShift,
        Check::DomainInvariance,
        domain_invariance == Some(true),
    );
    if !fjs {
        if prior_shift || gls == Some(true) {
            let by = if prior_shift { Check::PriorShift } else { Check::Gls };
            imply(&mut fjs, Check::Fjs, by, true);
            rho = Some(vec![1.0; d - 1]);
        } else if covariate_shift {
            imply(&mut fjs, Check::Fjs, Check::CovariateShift, true);
            rho = Some(covariate_rho(&p, &q));
        }
    }

    let cspd = if d == 2 {
        let mut flag = match check_cspd(source, target, tol)? {
            Cspd::Comonotone { .. } => true,
            Cspd::Violation { cells } => {
                witnesses.push(Witness::Cells {
                    check: Check::Cspd,
                    class: None,
                    cells,
                });
                false
            }
        };
        if fjs && !flag {
            flag = true;
            witnesses.push(Witness::Implied {
                check: Check::Cspd,
                by: Check::Fjs,
            });
        }
        Some(flag)
    } else {
        None
    };

    Ok(ShiftReport {
        tolerance: tol,
        no_shift,
        prior_shift,
        covariate_shift,
        fjs,
        rho,
        cspd,
        gls,
        domain_invariance,
        witnesses,
    })
}
