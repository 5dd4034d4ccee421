//! Sample selection from a population: every object is kept with a
//! probability depending on its cell and class, and the kept objects form
//! the sample distribution.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dist::{ClassPriors, FiniteJointDistribution, PosteriorTable};
use crate::fjs::{correct_posteriors_fjs, estimate_priors_em, is_factorizable, EmOptions, RhoSystem, SolverOptions};
use crate::tolerance::{ADMISSIBILITY, CHECK};
use crate::{Error, Result, Table};

/// Selection probabilities `φ(x, i) ∈ (0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectionModel {
    phi: Table,
}

impl SelectionModel {
    pub fn new(phi: Table) -> Result<Self> {
        for x in 0..phi.rows() {
            for i in 0..phi.cols() {
                let v = phi[(x, i)];
                if !(v > 0.0 && v <= 1.0) {
                    return Err(Error::InvalidSelection { cell: x, class: i });
                }
            }
        }
        Ok(SelectionModel { phi })
    }

    pub fn constant(m: usize, d: usize, c: f64) -> Result<Self> {
        Self::new(Table::filled(m, d, c))
    }

    pub fn phi(&self) -> &Table {
        &self.phi
    }

    /// Class-wise feature-conditional selection probabilities
    /// `P_i[S|x]`, which are the entries of `φ` themselves.
    pub fn classwise(&self) -> &Table {
        &self.phi
    }

    fn check_shape(&self, population: &FiniteJointDistribution) -> Result<()> {
        let shape = (population.num_cells(), population.num_classes());
        if self.phi.shape() != shape {
            return Err(Error::ShapeMismatch {
                expected: shape,
                found: self.phi.shape(),
            });
        }
        Ok(())
    }
}

/// Overall selection probability `P[S] = Σ P φ`.
pub fn selection_probability(population: &FiniteJointDistribution, sel: &SelectionModel) -> Result<f64> {
    sel.check_shape(population)?;
    Ok(population
        .weights()
        .as_slice()
        .iter()
        .zip(sel.phi.as_slice())
        .map(|(w, f)| w * f)
        .sum())
}

/// The sample distribution `Q = P φ / P[S]` and `P[S]`.
pub fn sample_distribution(
    population: &FiniteJointDistribution,
    sel: &SelectionModel,
) -> Result<(FiniteJointDistribution, f64)> {
    let ps = selection_probability(population, sel)?;
    let q = population.weights().map(|x, i, w| w * sel.phi[(x, i)] / ps);
    Ok((population.with_weights(q)?, ps))
}

/// `P[S|x] = Σ_i P[A_i|x] φ(x, i)`; zero on population-null cells.
pub fn selection_given_features(population: &FiniteJointDistribution, sel: &SelectionModel) -> Result<Vec<f64>> {
    sel.check_shape(population)?;
    let post = population.posteriors();
    Ok((0..population.num_cells())
        .map(|x| {
            post.row(x)
                .iter()
                .zip(sel.phi.row(x))
                .map(|(p, f)| p * f)
                .sum()
        })
        .collect())
}

/// Posteriors of the objects that were not selected. Rows where nothing
/// is rejected are undefined.
pub fn not_selected_posteriors(population: &FiniteJointDistribution, sel: &SelectionModel) -> Result<PosteriorTable> {
    sel.check_shape(population)?;
    let rejected = population.weights().map(|x, i, w| w * (1.0 - sel.phi[(x, i)]));
    Ok(PosteriorTable::from_joint(&rejected))
}

/// Counts of accepted draws per `(cell, class)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Simulation {
    pub counts: Vec<Vec<u64>>,
    pub draws: u64,
    pub accepted: u64,
}

impl Simulation {
    /// Accepted counts divided by the number of acceptances.
    pub fn frequencies(&self) -> Table {
        let n = self.accepted as f64;
        let rows: Vec<Vec<f64>> = self
            .counts
            .iter()
            .map(|r| r.iter().map(|&c| c as f64 / n).collect())
            .collect();
        Table::from_rows(&rows).expect("rectangular counts")
    }
}

/// Draws `n` objects from the population by inversion and keeps each with
/// probability `φ` using a second uniform. Deterministic in `seed`.
pub fn simulate_selection(
    population: &FiniteJointDistribution,
    sel: &SelectionModel,
    n: u64,
    seed: u64,
) -> Result<Simulation> {
    sel.check_shape(population)?;
    if n == 0 {
        return Err(Error::PreconditionFailed("number of draws must be positive"));
    }
    let weights = population.weights().as_slice();
    let phi = sel.phi.as_slice();
    let mut cumulative = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in weights {
        acc += w;
        cumulative.push(acc);
    }
    let last = weights.iter().rposition(|&w| w > 0.0).expect("distribution has mass");
    let d = population.num_classes();
    let mut counts = vec![vec![0u64; d]; population.num_cells()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut accepted = 0;
    for _ in 0..n {
        let u: f64 = rng.gen();
        let k = cumulative.partition_point(|&c| c <= u).min(last);
        let v: f64 = rng.gen();
        if v < phi[k] {
            counts[k / d][k % d] += 1;
            accepted += 1;
        }
    }
    if accepted == 0 {
        return Err(Error::AllRejected { draws: n });
    }
    Ok(Simulation {
        counts,
        draws: n,
        accepted,
    })
}

/// Population posteriors from sample posteriors, either by mixing with the
/// not-selected posteriors or by rescaling with the class-wise selection
/// probabilities. Exactly one of the two must be given.
pub fn recover_posteriors_hein(
    selection_given_features: &[f64],
    sample_posteriors: &PosteriorTable,
    not_selected: Option<&PosteriorTable>,
    classwise: Option<&Table>,
) -> Result<PosteriorTable> {
    let (m, d) = (sample_posteriors.num_cells(), sample_posteriors.num_classes());
    if selection_given_features.len() != m {
        return Err(Error::ShapeMismatch {
            expected: (m, 1),
            found: (selection_given_features.len(), 1),
        });
    }
    let ps = selection_given_features;
    let values = match (not_selected, classwise) {
        (None, None) => return Err(Error::MissingInput),
        (Some(_), Some(_)) => return Err(Error::AmbiguousInput),
        (Some(star), None) => {
            if (star.num_cells(), star.num_classes()) != (m, d) {
                return Err(Error::ShapeMismatch {
                    expected: (m, d),
                    found: (star.num_cells(), star.num_classes()),
                });
            }
            Table::from_fn(m, d, |x, i| {
                let rest = if star.is_defined(x) {
                    star.get(x, i) * (1.0 - ps[x])
                } else {
                    0.0
                };
                sample_posteriors.get(x, i) * ps[x] + rest
            })
        }
        (None, Some(cw)) => {
            if cw.shape() != (m, d) {
                return Err(Error::ShapeMismatch {
                    expected: (m, d),
                    found: cw.shape(),
                });
            }
            Table::from_fn(m, d, |x, i| {
                let s = cw[(x, i)];
                if s > 0.0 {
                    ps[x] / s * sample_posteriors.get(x, i)
                } else {
                    0.0
                }
            })
        }
    };
    let values = values.map(|x, _, v| if sample_posteriors.is_defined(x) { v } else { 0.0 });
    PosteriorTable::new(values, sample_posteriors.defined().to_vec())
}

/// Selection and class independent given the features:
/// `P[S ∩ A_i|x] = P[S|x] P[A_i|x]` on every populated cell.
pub fn covariate_selection_check(population: &FiniteJointDistribution, sel: &SelectionModel, tol: f64) -> Result<bool> {
    let ps = selection_given_features(population, sel)?;
    let post = population.posteriors();
    for x in 0..population.num_cells() {
        if !post.is_defined(x) {
            continue;
        }
        for i in 0..population.num_classes() {
            let joint = post.get(x, i) * sel.phi[(x, i)];
            if (joint - ps[x] * post.get(x, i)).abs() > tol {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnalysisMode {
    /// Population priors known; solve for `α`.
    KnownPopulationPriors,
    /// `α ≡ 1`; estimate the population priors.
    AlphaOne,
}

/// Population-side view of a factorizable selection.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectionAnalysis {
    pub mode: AnalysisMode,
    /// `α_1..α_{d-1}`; `α_d = 1`.
    pub alpha: Vec<f64>,
    pub population_priors: Vec<f64>,
    pub sample_priors: Vec<f64>,
    pub recovered_posteriors: PosteriorTable,
    /// `P_i[S|x]` implied by `α` and the priors.
    pub classwise_selection: Table,
    /// Feature factor of `dP/dQ`, up to scale.
    pub g_star: Vec<f64>,
    /// Class factor of `dP/dQ`: `α_i P[A_i]/Q[A_i]`.
    pub b_star: Vec<f64>,
    /// Every class-wise selection probability is at most one.
    pub admissible: bool,
    /// The bound required for `α ≡ 1` holds on every entry.
    pub necessary_bound_ok: bool,
    pub residual: f64,
    pub iterations: usize,
}

/// Solves for the factorisation of the population relative to the sample
/// and derives the population posteriors and the class-wise selection
/// probabilities it implies.
pub fn analyze_fjs_selection(
    population: &FiniteJointDistribution,
    sel: &SelectionModel,
    mode: AnalysisMode,
    opts: &SolverOptions,
) -> Result<SelectionAnalysis> {
    let (sample, ps_total) = sample_distribution(population, sel)?;
    if !is_factorizable(population, &sample, CHECK)?.holds() {
        return Err(Error::NotFJS);
    }
    let d = population.num_classes();
    let ps = selection_given_features(population, sel)?;
    let sample_marginal = sample.feature_marginal();
    let sample_post = sample.posteriors();
    let sample_priors = sample.priors();
    // dP/dQ on the features
    let inverse: Vec<f64> = ps
        .iter()
        .map(|&s| if s > 0.0 { ps_total / s } else { 0.0 })
        .collect();

    let (population_priors, alpha, iterations) = match mode {
        AnalysisMode::KnownPopulationPriors => {
            let population_priors = population.priors();
            let system = RhoSystem {
                marginal: &sample_marginal,
                posteriors: &sample_post,
                density: &inverse,
                source_priors: sample_priors.values(),
                target_priors: population_priors.values(),
            };
            let (alpha, _, iterations) = system.solve(opts)?;
            (population_priors.values().to_vec(), alpha, iterations)
        }
        AnalysisMode::AlphaOne => {
            let em = estimate_priors_em(
                &sample_post,
                &sample_priors,
                &population.feature_marginal(),
                &EmOptions {
                    tol: opts.tol,
                    max_iter: opts.max_iter,
                    accelerate: true,
                },
            )?;
            if !em.converged {
                return Err(Error::NoConvergence {
                    iterations: em.iterations,
                    residual: em.step,
                });
            }
            (em.q, vec![1.0; d - 1], em.iterations)
        }
    };
    let system = RhoSystem {
        marginal: &sample_marginal,
        posteriors: &sample_post,
        density: &inverse,
        source_priors: sample_priors.values(),
        target_priors: &population_priors,
    };
    let residual = system.residual(&alpha);
    let (g_star, b_star) = system.factors(&alpha);
    let priors = ClassPriors::new(population_priors.clone())?;
    let recovered_posteriors = correct_posteriors_fjs(&sample_post, &sample_priors, &priors, &alpha)?;

    let mut full_alpha = alpha.clone();
    full_alpha.push(1.0);
    let (pp, qp) = (&population_priors, sample_priors.values());
    let classwise_selection = Table::from_fn(population.num_cells(), d, |x, i| {
        if !sample_post.is_defined(x) {
            return 0.0;
        }
        let den: f64 = sample_post
            .row(x)
            .iter()
            .zip(&b_star)
            .map(|(post, b)| post * b)
            .sum();
        qp[i] / (full_alpha[i] * pp[i]) * ps[x] * den
    });
    let admissible = classwise_selection
        .as_slice()
        .iter()
        .all(|&v| v <= 1.0 + ADMISSIBILITY);
    let necessary_bound_ok = necessary_criterion(&priors, &sample_priors, &classwise_selection)?
        .as_slice()
        .iter()
        .all(|ok| *ok);
    Ok(SelectionAnalysis {
        mode,
        alpha,
        population_priors,
        sample_priors: qp.to_vec(),
        recovered_posteriors,
        classwise_selection,
        g_star,
        b_star,
        admissible,
        necessary_bound_ok,
        residual,
        iterations,
    })
}

/// Entrywise flags of the bound
/// `P_i[S|x] ≤ (Q[A_i]/P[A_i]) min_j (P[A_j]/Q[A_j])`
/// that every class-wise selection table must satisfy when `α ≡ 1`.
pub fn necessary_criterion(
    population_priors: &ClassPriors,
    sample_priors: &ClassPriors,
    classwise: &Table,
) -> Result<Flags> {
    let d = population_priors.len();
    if sample_priors.len() != d || classwise.cols() != d {
        return Err(Error::ShapeMismatch {
            expected: (classwise.rows(), d),
            found: classwise.shape(),
        });
    }
    let (p, q) = (population_priors.values(), sample_priors.values());
    let min = (0..d).map(|j| p[j] / q[j]).fold(f64::INFINITY, f64::min);
    let flags = (0..classwise.rows())
        .flat_map(|x| (0..d).map(move |i| (x, i)))
        .map(|(x, i)| classwise[(x, i)] <= q[i] / p[i] * min * (1.0 + ADMISSIBILITY))
        .collect();
    Ok(Flags {
        cols: d,
        values: flags,
    })
}

/// Row-major table of booleans.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Flags {
    cols: usize,
    values: Vec<bool>,
}

impl Flags {
    pub fn get(&self, cell: usize, class: usize) -> bool {
        self.values[cell * self.cols + class]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.values
    }

    /// `(cell, class)` entries that are false.
    pub fn failures(&self) -> Vec<(usize, usize)> {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, ok)| !**ok)
            .map(|(k, _)| (k / self.cols, k % self.cols))
            .collect()
    }
}
