//! Finite joint distributions over (feature cell, class) and the densities
//! between two of them.
//!
//! Cells whose feature marginal is zero stay in every table; quantities
//! that would need a division by their mass are set to zero and the row is
//! flagged as undefined.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::tolerance::{DENSITY_MASS, STRUCTURAL};
use crate::{Error, Result, Table};

#[derive(Clone, Debug, PartialEq)]
pub enum ValidationIssue {
    TooFewClasses { classes: usize },
    NoCells,
    ShapeMismatch { rows: usize, cols: usize },
    DuplicateFeature { index: usize },
    DuplicateClass { index: usize },
    WeightOutOfRange { cell: usize, class: usize, value: f64 },
    NotNormalized { total: f64 },
    ClassPriorZero { class: usize },
}

impl ValidationIssue {
    pub fn code(&self) -> &'static str {
        match self {
            ValidationIssue::TooFewClasses { .. } => "too few classes",
            ValidationIssue::NoCells => "no feature cells",
            ValidationIssue::ShapeMismatch { .. } => "shape mismatch",
            ValidationIssue::DuplicateFeature { .. } => "duplicate feature label",
            ValidationIssue::DuplicateClass { .. } => "duplicate class label",
            ValidationIssue::WeightOutOfRange { .. } => "weight out of range",
            ValidationIssue::NotNormalized { .. } => "not normalized",
            ValidationIssue::ClassPriorZero { .. } => "class prior zero",
        }
    }
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())?;
        match self {
            ValidationIssue::TooFewClasses { classes } => write!(f, " ({classes})"),
            ValidationIssue::NoCells => Ok(()),
            ValidationIssue::ShapeMismatch { rows, cols } => write!(f, " ({rows}x{cols})"),
            ValidationIssue::DuplicateFeature { index } | ValidationIssue::DuplicateClass { index } => {
                write!(f, " at index {index}")
            }
            ValidationIssue::WeightOutOfRange { cell, class, value } => {
                write!(f, " at ({cell}, {class}): {value}")
            }
            ValidationIssue::NotNormalized { total } => write!(f, " (total {total})"),
            ValidationIssue::ClassPriorZero { class } => write!(f, " for class {class}"),
        }
    }
}

/// Outcome of [`validate`]; empty means valid.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn issues(&self) -> &[ValidationIssue] {
        &self.issues
    }
}

/// Checks labels and weights of a candidate joint table.
///
/// Every issue is collected rather than stopping at the first one.
pub fn validate(features: &[String], classes: &[String], weights: &Table) -> ValidationReport {
    let mut issues = Vec::new();
    if classes.len() < 2 {
        issues.push(ValidationIssue::TooFewClasses {
            classes: classes.len(),
        });
    }
    if features.is_empty() {
        issues.push(ValidationIssue::NoCells);
    }
    if weights.shape() != (features.len(), classes.len()) {
        issues.push(ValidationIssue::ShapeMismatch {
            rows: weights.rows(),
            cols: weights.cols(),
        });
        return ValidationReport { issues };
    }
    for (index, label) in features.iter().enumerate() {
        if features[..index].contains(label) {
            issues.push(ValidationIssue::DuplicateFeature { index });
        }
    }
    for (index, label) in classes.iter().enumerate() {
        if classes[..index].contains(label) {
            issues.push(ValidationIssue::DuplicateClass { index });
        }
    }
    for cell in 0..weights.rows() {
        for class in 0..weights.cols() {
            let value = weights[(cell, class)];
            if !(0.0..=1.0).contains(&value) {
                issues.push(ValidationIssue::WeightOutOfRange { cell, class, value });
            }
        }
    }
    let total = weights.total();
    if !((total - 1.0).abs() <= STRUCTURAL) {
        issues.push(ValidationIssue::NotNormalized { total });
    }
    for (class, mass) in weights.column_sums().into_iter().enumerate() {
        if !(mass > 0.0) {
            issues.push(ValidationIssue::ClassPriorZero { class });
        }
    }
    ValidationReport { issues }
}

/// Exact joint probability table of features and classes.
///
/// Invariants (checked on construction): at least one cell and two
/// classes, unique labels, weights in `[0, 1]` summing to one, and every
/// class with positive mass.
#[derive(Clone, Debug, PartialEq)]
pub struct FiniteJointDistribution {
    features: Vec<String>,
    classes: Vec<String>,
    weights: Table,
}

impl FiniteJointDistribution {
    pub fn new(features: Vec<String>, classes: Vec<String>, weights: Table) -> Result<Self> {
        let report = validate(&features, &classes, &weights);
        if !report.is_valid() {
            return Err(Error::InvalidDistribution(report));
        }
        Ok(FiniteJointDistribution {
            features,
            classes,
            weights,
        })
    }

    /// Labels cells `x1..xm` and classes `1..d`.
    pub fn unlabeled(weights: Table) -> Result<Self> {
        let features = (1..=weights.rows()).map(|k| alloc::format!("x{k}")).collect();
        let classes = (1..=weights.cols()).map(|k| alloc::format!("{k}")).collect();
        Self::new(features, classes, weights)
    }

    /// Same labels as `self`, new weights.
    pub fn with_weights(&self, weights: Table) -> Result<Self> {
        Self::new(self.features.clone(), self.classes.clone(), weights)
    }

    pub fn features(&self) -> &[String] {
        &self.features
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn weights(&self) -> &Table {
        &self.weights
    }

    pub fn weight(&self, cell: usize, class: usize) -> f64 {
        self.weights[(cell, class)]
    }

    pub fn num_cells(&self) -> usize {
        self.weights.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.weights.cols()
    }

    pub fn priors(&self) -> ClassPriors {
        ClassPriors(self.weights.column_sums())
    }

    pub fn feature_marginal(&self) -> Vec<f64> {
        self.weights.row_sums()
    }

    pub fn posteriors(&self) -> PosteriorTable {
        PosteriorTable::from_joint(&self.weights)
    }

    /// Same cells and classes, compared by exact label equality.
    pub fn same_labels(&self, other: &FiniteJointDistribution) -> bool {
        self.features == other.features && self.classes == other.classes
    }

    pub(crate) fn check_labels(&self, other: &FiniteJointDistribution) -> Result<()> {
        if self.weights.shape() != other.weights.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.weights.shape(),
                found: other.weights.shape(),
            });
        }
        if !self.same_labels(other) {
            return Err(Error::LabelMismatch);
        }
        Ok(())
    }
}

/// Class prior probabilities, strictly positive and summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassPriors(Vec<f64>);

impl ClassPriors {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        let total: f64 = values.iter().sum();
        let inside = values.iter().all(|&v| v > 0.0 && v < 1.0);
        if values.len() < 2 || !inside || !((total - 1.0).abs() <= STRUCTURAL) {
            return Err(Error::InvalidPriors);
        }
        Ok(ClassPriors(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, class: usize) -> f64 {
        self.0[class]
    }
}

/// Density `h` of the target with respect to the source on the feature
/// cells.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureDensity(Vec<f64>);

impl FeatureDensity {
    /// Checks `h >= 0`, `h = 0` on `P`-null cells and `E_P[h] = 1`.
    pub fn new(values: Vec<f64>, source: &FiniteJointDistribution) -> Result<Self> {
        let marginal = source.feature_marginal();
        if values.len() != marginal.len() {
            return Err(Error::ShapeMismatch {
                expected: (marginal.len(), 1),
                found: (values.len(), 1),
            });
        }
        let expectation: f64 = values.iter().zip(&marginal).map(|(h, w)| h * w).sum();
        let null_mass = values
            .iter()
            .zip(&marginal)
            .any(|(&h, &w)| w == 0.0 && h != 0.0);
        let negative = values.iter().any(|&h| !(h >= 0.0) || !h.is_finite());
        if negative || null_mass || !((expectation - 1.0).abs() <= DENSITY_MASS) {
            return Err(Error::InvalidDensity { expectation });
        }
        Ok(FeatureDensity(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Class-conditional feature densities `h_i`, one column per class.
/// Entries where `P_i` has no mass are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassConditionalDensities(Table);

impl ClassConditionalDensities {
    pub fn new(values: Table) -> Self {
        ClassConditionalDensities(values)
    }

    pub fn table(&self) -> &Table {
        &self.0
    }

    pub fn get(&self, cell: usize, class: usize) -> f64 {
        self.0[(cell, class)]
    }
}

/// Density `h̄` of the target with respect to the source on the joint
/// (cell, class) table.
#[derive(Clone, Debug, PartialEq)]
pub struct JointDensity(Table);

impl JointDensity {
    pub fn new(values: Table) -> Self {
        JointDensity(values)
    }

    pub fn table(&self) -> &Table {
        &self.0
    }

    pub fn get(&self, cell: usize, class: usize) -> f64 {
        self.0[(cell, class)]
    }

    /// `E_P[h̄]`.
    pub fn expectation(&self, source: &FiniteJointDistribution) -> f64 {
        self.0
            .as_slice()
            .iter()
            .zip(source.weights().as_slice())
            .map(|(f, w)| f * w)
            .sum()
    }
}

/// Posterior class probabilities per cell.
///
/// Rows on null cells are all zero and reported as undefined.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorTable {
    values: Table,
    defined: Vec<bool>,
}

impl PosteriorTable {
    pub fn new(values: Table, defined: Vec<bool>) -> Result<Self> {
        if defined.len() != values.rows() {
            return Err(Error::ShapeMismatch {
                expected: (values.rows(), 1),
                found: (defined.len(), 1),
            });
        }
        Ok(PosteriorTable { values, defined })
    }

    /// Normalises each row of a nonnegative table; zero rows stay zero and
    /// undefined.
    pub fn from_joint(joint: &Table) -> Self {
        let mut values = Table::zeros(joint.rows(), joint.cols());
        let mut defined = vec![false; joint.rows()];
        for (x, flag) in defined.iter_mut().enumerate() {
            let mass: f64 = joint.row(x).iter().sum();
            if mass > 0.0 {
                *flag = true;
                for (out, w) in values.row_mut(x).iter_mut().zip(joint.row(x)) {
                    *out = w / mass;
                }
            }
        }
        PosteriorTable { values, defined }
    }

    pub fn table(&self) -> &Table {
        &self.values
    }

    pub fn get(&self, cell: usize, class: usize) -> f64 {
        self.values[(cell, class)]
    }

    pub fn row(&self, cell: usize) -> &[f64] {
        self.values.row(cell)
    }

    pub fn is_defined(&self, cell: usize) -> bool {
        self.defined[cell]
    }

    pub fn defined(&self) -> &[bool] {
        &self.defined
    }

    pub fn num_cells(&self) -> usize {
        self.values.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.values.cols()
    }

    /// Largest difference over rows defined in both tables; `INFINITY` if
    /// the sets of defined rows differ.
    pub fn max_abs_diff(&self, other: &PosteriorTable) -> f64 {
        if self.values.shape() != other.values.shape() || self.defined != other.defined {
            return f64::INFINITY;
        }
        self.values.max_abs_diff(&other.values)
    }
}

/// Assignment of every feature cell to a group; the conditioning
/// information of a coarser feature view.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    assignment: Vec<usize>,
    groups: usize,
}

impl Partition {
    /// Every cell its own group.
    pub fn cells(m: usize) -> Self {
        Partition {
            assignment: (0..m).collect(),
            groups: m,
        }
    }

    /// Group ids must be `0..k` with every id used.
    pub fn new(assignment: Vec<usize>) -> Result<Self> {
        let groups = assignment.iter().max().map_or(0, |g| g + 1);
        let mut used = vec![false; groups];
        for &g in &assignment {
            used[g] = true;
        }
        if assignment.is_empty() || used.iter().any(|u| !u) {
            return Err(Error::PreconditionFailed("partition groups must be nonempty"));
        }
        Ok(Partition { assignment, groups })
    }

    pub fn group_of(&self, cell: usize) -> usize {
        self.assignment[cell]
    }

    pub fn num_groups(&self) -> usize {
        self.groups
    }

    pub fn num_cells(&self) -> usize {
        self.assignment.len()
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    /// Sums the rows of `table` within each group.
    pub fn aggregate(&self, table: &Table) -> Table {
        let mut out = Table::zeros(self.groups, table.cols());
        for x in 0..table.rows() {
            let g = self.assignment[x];
            for (o, v) in out.row_mut(g).iter_mut().zip(table.row(x)) {
                *o += v;
            }
        }
        out
    }
}

/// Priors, feature marginal and posteriors of one distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct Marginals {
    pub priors: ClassPriors,
    pub feature_marginal: Vec<f64>,
    pub posteriors: PosteriorTable,
}

pub fn marginals_and_posteriors(dist: &FiniteJointDistribution) -> Marginals {
    Marginals {
        priors: dist.priors(),
        feature_marginal: dist.feature_marginal(),
        posteriors: dist.posteriors(),
    }
}

/// `P_i[x] = P[x, i] / P[A_i]`, one column per class.
pub fn class_conditionals(dist: &FiniteJointDistribution) -> Table {
    let priors = dist.priors();
    dist.weights().map(|_, i, w| w / priors.get(i))
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Joint density `h̄ = dQ/dP` entrywise, with `0/0 = 0`.
pub fn density(target: &FiniteJointDistribution, source: &FiniteJointDistribution) -> Result<JointDensity> {
    source.check_labels(target)?;
    let mut entries = Vec::new();
    let values = Table::from_fn(source.num_cells(), source.num_classes(), |x, i| {
        let (q, p) = (target.weight(x, i), source.weight(x, i));
        if p == 0.0 && q > 0.0 {
            entries.push((x, i));
        }
        ratio(q, p)
    });
    if !entries.is_empty() {
        return Err(Error::AbsoluteContinuityViolation { entries });
    }
    Ok(JointDensity(values))
}

/// Density `h = dQ/dP` on the feature cells.
pub fn feature_density(
    target: &FiniteJointDistribution,
    source: &FiniteJointDistribution,
) -> Result<FeatureDensity> {
    density(target, source)?;
    let values = target
        .feature_marginal()
        .into_iter()
        .zip(source.feature_marginal())
        .map(|(q, p)| ratio(q, p))
        .collect();
    Ok(FeatureDensity(values))
}

/// Class-conditional densities `h_i = dQ_i/dP_i`.
pub fn class_densities(
    target: &FiniteJointDistribution,
    source: &FiniteJointDistribution,
) -> Result<ClassConditionalDensities> {
    density(target, source)?;
    let source_cc = class_conditionals(source);
    let target_cc = class_conditionals(target);
    Ok(ClassConditionalDensities(
        target_cc.map(|x, i, q| ratio(q, source_cc[(x, i)])),
    ))
}

/// Generalised Bayes formula on a finite table:
/// `E_P[f 1_{A_class} | G] / E_P[f | G]` per cell, zero where the
/// denominator vanishes.
///
/// With `f = dQ/dP` this is the target posterior of `class` given the
/// partition, computed without any correction formula.
pub fn generalized_bayes(
    source: &FiniteJointDistribution,
    f: &JointDensity,
    class: usize,
    conditioning: &Partition,
) -> Vec<f64> {
    let weighted = source.weights().map(|x, i, w| w * f.get(x, i));
    let grouped = conditioning.aggregate(&weighted);
    (0..source.num_cells())
        .map(|x| {
            let g = conditioning.group_of(x);
            let den: f64 = grouped.row(g).iter().sum();
            ratio(grouped[(g, class)], den)
        })
        .collect()
}
