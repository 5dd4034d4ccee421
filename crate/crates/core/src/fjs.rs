//! Factorizable joint shift: the target density splits as `h̄ = g b` with
//! `g` a function of the features and `b` a function of the class.
//!
//! With the scale fixed by `ρ_d = 1`,
//!
//! ```text
//! b_i  = ρ_i q_i / p_i                      (ρ_d = 1)
//! g(x) = h(x) / D(x),   D(x) = Σ_i ρ_i (q_i/p_i) P[A_i|x]
//! ```
//!
//! and the constants solve `p_j = ρ_j E_P[h P[A_j|x] / D]` for `j < d`.
//! For two classes the system is solved by bisection on a monotone
//! function of `ρ`; for more classes by damped fixed-point iteration.

use alloc::vec;
use alloc::vec::Vec;

use crate::dist::{
    class_conditionals, class_densities, ClassPriors, FeatureDensity, FiniteJointDistribution,
    JointDensity, PosteriorTable,
};
use crate::normal_form::reweight_posteriors;
use crate::tolerance::{close, BOUNDARY_COLLAPSE, INDEPENDENCE};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    /// Maximum absolute residual of the equation system.
    pub tol: f64,
    pub max_iter: usize,
    /// Initial fixed-point damping `λ ∈ (0, 1]`; halved whenever the
    /// residual grows.
    pub damping: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-12,
            max_iter: 10_000,
            damping: 1.0,
        }
    }
}

/// Solved factorisation of a target given by its feature density and
/// priors.
#[derive(Clone, Debug, PartialEq)]
pub struct FjsCharacterization {
    pub q: ClassPriors,
    /// `ρ_1..ρ_{d-1}`; `ρ_d = 1` is implied.
    pub rho: Vec<f64>,
    /// Feature factor, one entry per cell.
    pub g: Vec<f64>,
    /// Class factor, one entry per class.
    pub b: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Some class is independent of the features under the source.
    pub degenerate: bool,
}

impl FjsCharacterization {
    /// `g(x) b_i` on the source support.
    pub fn joint_density(&self, source: &FiniteJointDistribution) -> JointDensity {
        JointDensity::new(source.weights().map(|x, i, w| {
            if w > 0.0 {
                self.g[x] * self.b[i]
            } else {
                0.0
            }
        }))
    }
}

/// `ρ` extended with the trailing `ρ_d = 1`.
fn full_rho(rho: &[f64]) -> Vec<f64> {
    let mut full = rho.to_vec();
    full.push(1.0);
    full
}

/// The `ρ` equation system of a source (marginal, posteriors, priors), a
/// feature density and target priors.
///
/// The sample-selection analysis reuses it with source and target
/// swapped.
#[derive(Clone, Copy, Debug)]
pub(crate) struct RhoSystem<'a> {
    pub marginal: &'a [f64],
    pub posteriors: &'a PosteriorTable,
    pub density: &'a [f64],
    pub source_priors: &'a [f64],
    pub target_priors: &'a [f64],
}

impl RhoSystem<'_> {
    fn classes(&self) -> usize {
        self.source_priors.len()
    }

    /// `ρ_i q_i / p_i` for all classes.
    fn class_factor(&self, rho: &[f64]) -> Vec<f64> {
        full_rho(rho)
            .iter()
            .zip(self.target_priors.iter().zip(self.source_priors))
            .map(|(r, (q, p))| r * (q / p))
            .collect()
    }

    fn denominators(&self, rho: &[f64]) -> Vec<f64> {
        let b = self.class_factor(rho);
        (0..self.marginal.len())
            .map(|x| {
                self.posteriors
                    .row(x)
                    .iter()
                    .zip(&b)
                    .map(|(post, bi)| bi * post)
                    .sum()
            })
            .collect()
    }

    /// `E_P[h P[A_j|x] / D]` for every class `j` (including the last).
    fn expectations(&self, rho: &[f64]) -> Vec<f64> {
        let d = self.classes();
        let den = self.denominators(rho);
        let mut e = vec![0.0; d];
        for x in 0..self.marginal.len() {
            let w = self.marginal[x] * self.density[x];
            if !(w > 0.0) || !(den[x] > 0.0) {
                continue;
            }
            for (ej, post) in e.iter_mut().zip(self.posteriors.row(x)) {
                *ej += w * post / den[x];
            }
        }
        e
    }

    /// `max_j |p_j - ρ_j E_j|` over `j < d`.
    pub fn residual(&self, rho: &[f64]) -> f64 {
        let e = self.expectations(rho);
        rho.iter()
            .zip(&e)
            .zip(self.source_priors)
            .map(|((r, ej), p)| (p - r * ej).abs())
            .fold(0.0, f64::max)
    }

    pub fn factors(&self, rho: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let den = self.denominators(rho);
        let g = self
            .density
            .iter()
            .zip(&den)
            .map(|(h, dx)| if *dx > 0.0 { h / dx } else { 0.0 })
            .collect();
        (g, self.class_factor(rho))
    }

    /// A class whose source posterior is constant across cells of
    /// positive mass.
    pub fn degenerate(&self) -> bool {
        (0..self.classes()).any(|i| {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for x in 0..self.marginal.len() {
                if self.marginal[x] > 0.0 && self.posteriors.is_defined(x) {
                    let v = self.posteriors.get(x, i);
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
            hi - lo <= INDEPENDENCE
        })
    }

    pub fn solve(&self, opts: &SolverOptions) -> Result<(Vec<f64>, f64, usize)> {
        if self.classes() == 2 {
            self.solve_binary(opts)
        } else {
            self.solve_fixed_point(opts)
        }
    }

    /// `ρ E_1(ρ) - p_1`, strictly increasing in `ρ`. Its root is that of
    /// the decreasing `E_P[h R_2 / (ρ q R_1 + (1-q) R_2)] - 1` because
    /// `Σ_i b_i E_i = E_P[h] = 1`; this form stays well conditioned as
    /// `q → 0`, where the other flattens out.
    fn binary_gap(&self, rho: f64) -> f64 {
        rho * self.expectations(&[rho])[0] - self.source_priors[0]
    }

    fn solve_binary(&self, opts: &SolverOptions) -> Result<(Vec<f64>, f64, usize)> {
        let mut iterations = 0;
        let mut best = (1.0, self.residual(&[1.0]));
        if best.1 <= opts.tol {
            return Ok((vec![1.0], best.1, iterations));
        }
        let (mut lo, mut hi) = (1.0_f64, 1.0_f64);
        while self.binary_gap(lo) >= 0.0 {
            lo *= 0.5;
            iterations += 1;
            if lo < 1e-300 || iterations >= opts.max_iter {
                return Err(Error::NoConvergence {
                    iterations,
                    residual: best.1,
                });
            }
        }
        while self.binary_gap(hi) <= 0.0 {
            hi *= 2.0;
            iterations += 1;
            if hi > 1e300 || iterations >= opts.max_iter {
                return Err(Error::NoConvergence {
                    iterations,
                    residual: best.1,
                });
            }
        }
        while iterations < opts.max_iter {
            iterations += 1;
            let mid = libm::sqrt(lo * hi);
            let residual = self.residual(&[mid]);
            if residual < best.1 {
                best = (mid, residual);
            }
            if residual <= opts.tol || !(mid > lo && mid < hi) {
                break;
            }
            if self.binary_gap(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if best.1 <= opts.tol {
            Ok((vec![best.0], best.1, iterations))
        } else {
            Err(Error::NoConvergence {
                iterations,
                residual: best.1,
            })
        }
    }

    fn solve_fixed_point(&self, opts: &SolverOptions) -> Result<(Vec<f64>, f64, usize)> {
        let d = self.classes();
        let mut rho = vec![1.0; d - 1];
        let mut damping = opts.damping.clamp(f64::MIN_POSITIVE, 1.0);
        let mut previous = f64::INFINITY;
        let mut best = (rho.clone(), f64::INFINITY);
        for iteration in 0..=opts.max_iter {
            let e = self.expectations(&rho);
            let residual = rho
                .iter()
                .zip(&e)
                .zip(self.source_priors)
                .map(|((r, ej), p)| (p - r * ej).abs())
                .fold(0.0, f64::max);
            if residual < best.1 {
                best = (rho.clone(), residual);
            }
            if residual <= opts.tol {
                return Ok((rho, residual, iteration));
            }
            if residual > previous {
                damping *= 0.5;
            }
            previous = residual;
            if iteration == opts.max_iter {
                break;
            }
            for ((r, ej), p) in rho.iter_mut().zip(&e).zip(self.source_priors) {
                if !(*ej > 0.0) {
                    return Err(Error::NoConvergence {
                        iterations: iteration,
                        residual: best.1,
                    });
                }
                *r = (1.0 - damping) * *r + damping * (p / ej);
            }
        }
        Err(Error::NoConvergence {
            iterations: opts.max_iter,
            residual: best.1,
        })
    }
}

struct SourceView {
    marginal: Vec<f64>,
    posteriors: PosteriorTable,
    priors: ClassPriors,
}

impl SourceView {
    fn of(source: &FiniteJointDistribution) -> Self {
        SourceView {
            marginal: source.feature_marginal(),
            posteriors: source.posteriors(),
            priors: source.priors(),
        }
    }

    fn system<'a>(&'a self, h: &'a FeatureDensity, q: &'a ClassPriors) -> Result<RhoSystem<'a>> {
        if h.values().len() != self.marginal.len() {
            return Err(Error::ShapeMismatch {
                expected: (self.marginal.len(), 1),
                found: (h.values().len(), 1),
            });
        }
        if q.len() != self.priors.len() {
            return Err(Error::ShapeMismatch {
                expected: (1, self.priors.len()),
                found: (1, q.len()),
            });
        }
        Ok(RhoSystem {
            marginal: &self.marginal,
            posteriors: &self.posteriors,
            density: h.values(),
            source_priors: self.priors.values(),
            target_priors: q.values(),
        })
    }
}

/// Result of [`is_factorizable`].
#[derive(Clone, Debug, PartialEq)]
pub enum Factorizability {
    /// `h_j / h_d ≡ ρ_j` on the common support.
    Factorizable { rho: Vec<f64> },
    /// The class density ratio of `class` differs between the two cells
    /// (the same cell twice when one density vanishes and the other
    /// does not).
    NotFactorizable { class: usize, cells: (usize, usize) },
}

impl Factorizability {
    pub fn holds(&self) -> bool {
        matches!(self, Factorizability::Factorizable { .. })
    }
}

/// Tests whether the class-conditional density ratios `h_j / h_d` are
/// constant where both classes have source mass, and whether the implied
/// `h̄ = g b` is consistent on every cell.
pub fn is_factorizable(
    source: &FiniteJointDistribution,
    target: &FiniteJointDistribution,
    tol: f64,
) -> Result<Factorizability> {
    let h = class_densities(target, source)?;
    let cc = class_conditionals(source);
    let (m, d) = (source.num_cells(), source.num_classes());
    let last = d - 1;
    let mut rho = Vec::with_capacity(d);
    for j in 0..last {
        let mut reference: Option<(usize, f64)> = None;
        for x in 0..m {
            if !(cc[(x, j)] > 0.0 && cc[(x, last)] > 0.0) {
                continue;
            }
            let (hj, hd) = (h.get(x, j), h.get(x, last));
            match (hj > 0.0, hd > 0.0) {
                (false, false) => continue,
                (true, true) => {}
                _ => {
                    return Ok(Factorizability::NotFactorizable {
                        class: j,
                        cells: (x, x),
                    })
                }
            }
            let r = hj / hd;
            match reference {
                None => reference = Some((x, r)),
                Some((x0, r0)) if !close(r, r0, tol) => {
                    return Ok(Factorizability::NotFactorizable {
                        class: j,
                        cells: (x0, x),
                    })
                }
                Some(_) => {}
            }
        }
        match reference {
            Some((_, r)) => rho.push(r),
            None => return Err(Error::Undetermined { class: j }),
        }
    }
    rho.push(1.0);
    // cells lacking the last class still need h_i / ρ_i equal across classes
    for x in 0..m {
        let mut reference: Option<(usize, f64)> = None;
        for i in 0..d {
            if !(cc[(x, i)] > 0.0) {
                continue;
            }
            let v = h.get(x, i) / rho[i];
            match reference {
                None => reference = Some((i, v)),
                Some((_, v0)) if !close(v, v0, tol) => {
                    return Ok(Factorizability::NotFactorizable {
                        class: i,
                        cells: (x, x),
                    })
                }
                Some(_) => {}
            }
        }
    }
    rho.pop();
    Ok(Factorizability::Factorizable { rho })
}

/// Builds the target `Q = P · g b` from a feature density, target priors
/// and constants `ρ` that solve the equation system within `tol`.
pub fn construct_fjs_target(
    source: &FiniteJointDistribution,
    h: &FeatureDensity,
    q: &ClassPriors,
    rho: &[f64],
    tol: f64,
) -> Result<FiniteJointDistribution> {
    let view = SourceView::of(source);
    let system = view.system(h, q)?;
    check_rho(rho, source.num_classes())?;
    let residual = system.residual(rho);
    if !(residual <= tol) {
        return Err(Error::InconsistentInputs { residual });
    }
    let (g, b) = system.factors(rho);
    let mut weights = source.weights().map(|x, i, w| w * g[x] * b[i]);
    // total is E_P[h], one up to the density tolerance
    let total = weights.total();
    if total > 0.0 {
        weights = weights.map(|_, _, w| w / total);
    }
    source.with_weights(weights)
}

fn check_rho(rho: &[f64], classes: usize) -> Result<()> {
    if rho.len() + 1 != classes {
        return Err(Error::ShapeMismatch {
            expected: (1, classes - 1),
            found: (1, rho.len()),
        });
    }
    if rho.iter().any(|&r| !(r > 0.0) || !r.is_finite()) {
        return Err(Error::PreconditionFailed("rho must be positive and finite"));
    }
    Ok(())
}

/// Solves the equation system for `ρ` given the target feature density
/// and target priors.
pub fn solve_rho(
    source: &FiniteJointDistribution,
    h: &FeatureDensity,
    q: &ClassPriors,
    opts: &SolverOptions,
) -> Result<FjsCharacterization> {
    let view = SourceView::of(source);
    let system = view.system(h, q)?;
    characterize(&system, q.clone(), opts)
}

pub(crate) fn characterize(
    system: &RhoSystem<'_>,
    q: ClassPriors,
    opts: &SolverOptions,
) -> Result<FjsCharacterization> {
    let degenerate = system.degenerate();
    let (rho, residual, iterations) = system.solve(opts)?;
    let (g, b) = system.factors(&rho);
    Ok(FjsCharacterization {
        q,
        rho,
        g,
        b,
        residual,
        iterations,
        converged: true,
        degenerate,
    })
}

/// Posterior correction under factorizable joint shift:
/// `Q[A_j|x] ∝ ρ_j (q_j/p_j) P[A_j|x]` with `ρ_d = 1`.
pub fn correct_posteriors_fjs(
    source_posteriors: &PosteriorTable,
    source_priors: &ClassPriors,
    target_priors: &ClassPriors,
    rho: &[f64],
) -> Result<PosteriorTable> {
    let d = source_priors.len();
    check_rho(rho, d)?;
    if target_priors.len() != d || source_posteriors.num_classes() != d {
        return Err(Error::ShapeMismatch {
            expected: (source_posteriors.num_cells(), d),
            found: (source_posteriors.num_cells(), source_posteriors.num_classes()),
        });
    }
    let rho = full_rho(rho);
    let (p, q) = (source_priors.values(), target_priors.values());
    Ok(reweight_posteriors(source_posteriors, |_, i| {
        rho[i] * (q[i] / p[i])
    }))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EmOptions {
    /// Stop once no prior moves by more than this in one EM step.
    pub tol: f64,
    pub max_iter: usize,
    /// Squared-extrapolation acceleration of the EM map.
    pub accelerate: bool,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            tol: 1e-12,
            max_iter: 10_000,
            accelerate: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmEstimate {
    /// Estimated target priors.
    pub q: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Some estimated prior fell below the collapse threshold.
    pub boundary_collapse: bool,
    /// Last EM step size, `max_j |F(q)_j - q_j|`.
    pub step: f64,
}

impl EmEstimate {
    pub fn priors(&self) -> Result<ClassPriors> {
        ClassPriors::new(self.q.clone())
    }
}

struct EmMap<'a> {
    posteriors: &'a PosteriorTable,
    source_priors: &'a [f64],
    target_marginal: &'a [f64],
}

impl EmMap<'_> {
    fn apply(&self, q: &[f64]) -> Vec<f64> {
        let d = q.len();
        let ratios: Vec<f64> = q.iter().zip(self.source_priors).map(|(q, p)| q / p).collect();
        let mut out = vec![0.0; d];
        for (x, &t) in self.target_marginal.iter().enumerate() {
            if !(t > 0.0) {
                continue;
            }
            let row = self.posteriors.row(x);
            let den: f64 = row.iter().zip(&ratios).map(|(post, r)| r * post).sum();
            if den > 0.0 {
                for ((o, post), r) in out.iter_mut().zip(row).zip(&ratios) {
                    *o += t * r * post / den;
                }
            }
        }
        out
    }

    fn log_likelihood(&self, q: &[f64]) -> f64 {
        let mut ll = 0.0;
        for (x, &t) in self.target_marginal.iter().enumerate() {
            if t > 0.0 {
                let den: f64 = self
                    .posteriors
                    .row(x)
                    .iter()
                    .zip(q.iter().zip(self.source_priors))
                    .map(|(post, (q, p))| q / p * post)
                    .sum();
                ll += t * libm::log(den);
            }
        }
        ll
    }

    /// Gradient and negated Hessian of the log-likelihood in
    /// `q_1..q_{d-1}` with `q_d = 1 - Σ_{j<d} q_j`.
    fn derivatives(&self, q: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = q.len() - 1;
        let mut grad = vec![0.0; n];
        let mut hess = vec![0.0; n * n];
        for (x, &t) in self.target_marginal.iter().enumerate() {
            if !(t > 0.0) {
                continue;
            }
            let row = self.posteriors.row(x);
            let a: Vec<f64> = row.iter().zip(self.source_priors).map(|(post, p)| post / p).collect();
            let s: f64 = a.iter().zip(q).map(|(a, q)| a * q).sum();
            if !(s > 0.0) {
                continue;
            }
            for j in 0..n {
                let dj = (a[j] - a[n]) / s;
                grad[j] += t * dj;
                for k in 0..n {
                    hess[j * n + k] += t * dj * (a[k] - a[n]) / s;
                }
            }
        }
        (grad, hess)
    }

    /// Newton steps on the concave log-likelihood, kept interior and
    /// accepted while the likelihood rises or the gradient shrinks.
    fn polish(&self, mut q: Vec<f64>) -> Vec<f64> {
        let d = q.len();
        if d < 2 {
            return q;
        }
        let n = d - 1;
        let mut ll = self.log_likelihood(&q);
        let (mut grad, mut hess) = self.derivatives(&q);
        for _ in 0..50 {
            let Some(delta) = solve_linear(hess.clone(), grad.clone()) else {
                break;
            };
            let gnorm = norm(&grad);
            let mut lambda = 1.0;
            let mut accepted = None;
            for _ in 0..30 {
                let mut cand = q.clone();
                for j in 0..n {
                    cand[j] += lambda * delta[j];
                }
                cand[n] = 1.0 - cand[..n].iter().sum::<f64>();
                if cand.iter().all(|&v| v > 0.0) {
                    let l = self.log_likelihood(&cand);
                    let (g, h) = self.derivatives(&cand);
                    if l > ll || (l >= ll - 1e-15 * libm::fabs(ll).max(1.0) && norm(&g) < gnorm) {
                        accepted = Some((cand, l, g, h));
                        break;
                    }
                }
                lambda *= 0.5;
            }
            let Some((cand, l, g, h)) = accepted else {
                break;
            };
            let moved = max_abs_diff(&cand, &q);
            (q, ll, grad, hess) = (cand, l, g, h);
            if moved <= 1e-17 {
                break;
            }
        }
        q
    }
}

/// Gaussian elimination with partial pivoting on a row-major `n × n`
/// system; `None` when singular.
fn solve_linear(mut a: Vec<f64>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))?;
        if !(a[pivot * n + col].abs() > 0.0) {
            return None;
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        for row in col + 1..n {
            let f = a[row * n + col] / a[col * n + col];
            for k in col..n {
                a[row * n + k] -= f * a[col * n + k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| a[row * n + k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row * n + row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn norm(v: &[f64]) -> f64 {
    libm::sqrt(v.iter().map(|x| x * x).sum())
}

/// Maximum-likelihood target priors under prior probability shift from
/// the target feature marginal, by EM started at the source priors.
///
/// The fixed point solves the `ρ ≡ 1` equation system. An interior
/// estimate is finished with Newton steps on the log-likelihood, and
/// `step` is the EM step measured there. Running out of
/// iterations is an error unless some prior has collapsed towards zero,
/// where EM is sublinear; the estimate is then returned with
/// `boundary_collapse` set.
pub fn estimate_priors_em(
    source_posteriors: &PosteriorTable,
    source_priors: &ClassPriors,
    target_marginal: &[f64],
    opts: &EmOptions,
) -> Result<EmEstimate> {
    let m = source_posteriors.num_cells();
    if target_marginal.len() != m || source_posteriors.num_classes() != source_priors.len() {
        return Err(Error::ShapeMismatch {
            expected: (m, source_priors.len()),
            found: (target_marginal.len(), source_posteriors.num_classes()),
        });
    }
    let total: f64 = target_marginal.iter().sum();
    if target_marginal.iter().any(|&t| !(t >= 0.0)) || !((total - 1.0).abs() <= 1e-10) {
        return Err(Error::PreconditionFailed("target marginal must be a probability vector"));
    }
    if (0..m).any(|x| target_marginal[x] > 0.0 && !source_posteriors.is_defined(x)) {
        return Err(Error::PreconditionFailed(
            "target marginal has mass on source-null cells",
        ));
    }
    let map = EmMap {
        posteriors: source_posteriors,
        source_priors: source_priors.values(),
        target_marginal,
    };
    let mut q = source_priors.values().to_vec();
    let mut iterations = 0;
    let mut step = f64::INFINITY;
    while iterations < opts.max_iter {
        iterations += 1;
        let q1 = map.apply(&q);
        step = max_abs_diff(&q1, &q);
        if step <= opts.tol {
            q = q1;
            break;
        }
        if !opts.accelerate {
            q = q1;
            continue;
        }
        let q2 = map.apply(&q1);
        let r: Vec<f64> = q1.iter().zip(&q).map(|(a, b)| a - b).collect();
        let v: Vec<f64> = q2
            .iter()
            .zip(&q1)
            .zip(&q)
            .map(|((c, b), a)| c - 2.0 * b + a)
            .collect();
        let nv = norm(&v);
        let alpha = if nv > 0.0 { (-norm(&r) / nv).min(-1.0) } else { -1.0 };
        let mut candidate: Vec<f64> = q
            .iter()
            .zip(&r)
            .zip(&v)
            .map(|((a, r), v)| a - 2.0 * alpha * r + alpha * alpha * v)
            .collect();
        let feasible = candidate.iter().all(|&c| c > 0.0 && c.is_finite());
        if !feasible || map.log_likelihood(&candidate) < map.log_likelihood(&q2) {
            candidate = q2;
        }
        q = map.apply(&candidate);
    }
    let total: f64 = q.iter().sum();
    q.iter_mut().for_each(|v| *v /= total);
    if q.iter().all(|&v| v >= BOUNDARY_COLLAPSE) {
        q = map.polish(q);
        step = max_abs_diff(&map.apply(&q), &q);
    }
    let converged = step <= opts.tol;
    let boundary_collapse = q.iter().any(|&v| v < BOUNDARY_COLLAPSE);
    if !converged && !boundary_collapse {
        return Err(Error::NoConvergence {
            iterations,
            residual: step,
        });
    }
    Ok(EmEstimate {
        q,
        iterations,
        converged,
        boundary_collapse,
        step,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhiPoint {
    pub q: f64,
    pub rho: f64,
    pub residual: f64,
}

/// The map `q ↦ ρ` for two classes and a fixed feature density.
#[derive(Clone, Debug, PartialEq)]
pub struct PhiCurve {
    pub points: Vec<PhiPoint>,
    /// `1 / E_P[h R_1 / R_2]`, the limit as `q → 0` and a strict lower
    /// bound of every `ρ`.
    pub limit_q_to_0: f64,
    /// `E_P[h R_2 / R_1]`, the limit as `q → 1` and a strict upper bound.
    pub limit_q_to_1: f64,
    /// The class is independent of the features under the source, so the
    /// map is constant rather than strictly increasing.
    pub non_unique: bool,
}

/// Evaluates `φ(q)` on a grid of positive-class target priors, with
/// `R_1 = P[A|x]/p` and `R_2 = (1 - P[A|x])/(1 - p)`.
pub fn binary_phi(
    source: &FiniteJointDistribution,
    h: &FeatureDensity,
    q_grid: &[f64],
) -> Result<PhiCurve> {
    if source.num_classes() != 2 {
        return Err(Error::NotBinary {
            classes: source.num_classes(),
        });
    }
    let view = SourceView::of(source);
    for x in 0..source.num_cells() {
        let post = view.posteriors.get(x, 0);
        if view.marginal[x] > 0.0 && (post <= 0.0 || post >= 1.0) {
            return Err(Error::BoundaryPosterior { cell: x });
        }
    }
    let p = view.priors.get(0);
    let (mut ratio_12, mut ratio_21) = (0.0, 0.0);
    for x in 0..source.num_cells() {
        let w = view.marginal[x] * h.values()[x];
        if w > 0.0 {
            let r1 = view.posteriors.get(x, 0) / p;
            let r2 = view.posteriors.get(x, 1) / (1.0 - p);
            ratio_12 += w * r1 / r2;
            ratio_21 += w * r2 / r1;
        }
    }
    let opts = SolverOptions::default();
    let mut points = Vec::with_capacity(q_grid.len());
    for &q in q_grid {
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::InvalidPriors);
        }
        let priors = ClassPriors::new(vec![q, 1.0 - q])?;
        let system = view.system(h, &priors)?;
        let (rho, residual, _) = system.solve(&opts)?;
        points.push(PhiPoint {
            q,
            rho: rho[0],
            residual,
        });
    }
    let non_unique = view.system(h, &view.priors)?.degenerate();
    Ok(PhiCurve {
        points,
        limit_q_to_0: 1.0 / ratio_12,
        limit_q_to_1: ratio_21,
        non_unique,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Table;

    fn d1() -> FiniteJointDistribution {
        FiniteJointDistribution::unlabeled(Table::from_rows(&[[0.4, 0.1], [0.1, 0.4]]).unwrap())
            .unwrap()
    }

    fn priors(v: &[f64]) -> ClassPriors {
        ClassPriors::new(v.to_vec()).unwrap()
    }

    fn density(p: &FiniteJointDistribution, v: &[f64]) -> FeatureDensity {
        FeatureDensity::new(v.to_vec(), p).unwrap()
    }

    const COVARIATE_RHO: f64 = (0.38 / 0.5) * (0.5 / 0.62);

    #[test]
    fn no_shift_solves_with_unit_rho() {
        let p = d1();
        let c = solve_rho(&p, &density(&p, &[1.0, 1.0]), &p.priors(), &SolverOptions::default())
            .unwrap();
        assert_eq!(c.rho, vec![1.0]);
        assert!(c.residual <= 1e-15);
    }

    #[test]
    fn prior_shift_gives_unit_rho() {
        let p = d1();
        let q = priors(&[0.7, 0.3]);
        let h = density(&p, &[1.24, 0.76]);
        let c = solve_rho(&p, &h, &q, &SolverOptions::default()).unwrap();
        assert!((c.rho[0] - 1.0).abs() < 1e-12, "{:?}", c.rho);
        // residual of rho = 1 by direct arithmetic: E_P[h P1 / D] with
        // D(a) = 1.4 * 0.8 + 0.6 * 0.2 = 1.24, D(b) = 1.4 * 0.2 + 0.6 * 0.8 = 0.76
        let e1 = 0.5 * 1.24 * 0.8 / 1.24 + 0.5 * 0.76 * 0.2 / 0.76;
        assert!((e1 - 0.5_f64).abs() < 1e-15);
    }

    #[test]
    fn covariate_shift_rho() {
        let p = d1();
        let c = solve_rho(
            &p,
            &density(&p, &[1.4, 0.6]),
            &priors(&[0.62, 0.38]),
            &SolverOptions::default(),
        )
        .unwrap();
        assert!((c.rho[0] - COVARIATE_RHO).abs() < 1e-12);
        assert!(c.residual <= 1e-12);
    }

    /// Log-spaced scan of the binary residual function over [1e-6, 1e6]
    /// for sign changes, independent of the solver.
    #[test]
    fn covariate_root_is_unique_on_grid() {
        let (p1, p2) = (0.5, 0.5);
        let (q1, q2) = (0.62, 0.38);
        let post = [[0.8, 0.2], [0.2, 0.8]];
        let marg = [0.5, 0.5];
        let h = [1.4, 0.6];
        let f = |rho: f64| {
            let mut e = 0.0;
            for x in 0..2 {
                let den = rho * q1 / p1 * post[x][0] + q2 / p2 * post[x][1];
                e += marg[x] * h[x] * post[x][0] / den;
            }
            p1 - rho * e
        };
        let mut changes = Vec::new();
        let n = 12_000;
        let mut prev = f(1e-6);
        for k in 1..=n {
            let rho = libm::pow(10.0, -6.0 + 12.0 * k as f64 / n as f64);
            let cur = f(rho);
            if prev.signum() != cur.signum() {
                changes.push(rho);
            }
            prev = cur;
        }
        assert_eq!(changes.len(), 1);
        assert!((changes[0] / COVARIATE_RHO - 1.0).abs() < 3e-3);
    }

    #[test]
    fn construct_examples() {
        let p = d1();
        let same = construct_fjs_target(&p, &density(&p, &[1.0, 1.0]), &p.priors(), &[1.0], 1e-12)
            .unwrap();
        assert!(same.weights().max_abs_diff(p.weights()) < 1e-15);

        let prior = construct_fjs_target(
            &p,
            &density(&p, &[1.24, 0.76]),
            &priors(&[0.7, 0.3]),
            &[1.0],
            1e-12,
        )
        .unwrap();
        let oracle = Table::from_rows(&[[0.56, 0.06], [0.14, 0.24]]).unwrap();
        assert!(prior.weights().max_abs_diff(&oracle) < 1e-14);

        // rounded rho: residual about 1e-7
        let cov = construct_fjs_target(
            &p,
            &density(&p, &[1.4, 0.6]),
            &priors(&[0.62, 0.38]),
            &[0.612903],
            1e-6,
        )
        .unwrap();
        // Q[x][i] = P[A_i|x] t(x)
        let oracle = Table::from_rows(&[[0.56, 0.14], [0.06, 0.24]]).unwrap();
        assert!(cov.weights().max_abs_diff(&oracle) < 1e-6);
    }

    #[test]
    fn construct_rejects_inconsistent_rho() {
        let p = d1();
        let err = construct_fjs_target(
            &p,
            &density(&p, &[1.4, 0.6]),
            &priors(&[0.62, 0.38]),
            &[1.0],
            1e-10,
        )
        .unwrap_err();
        assert!(matches!(err, Error::InconsistentInputs { .. }));
    }

    #[test]
    fn factorizable_examples() {
        let p = d1();
        let prior = p.with_weights(Table::from_rows(&[[0.56, 0.06], [0.14, 0.24]]).unwrap()).unwrap();
        match is_factorizable(&p, &prior, 1e-9).unwrap() {
            Factorizability::Factorizable { rho } => assert!((rho[0] - 1.0).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
        let cov = p.with_weights(Table::from_rows(&[[0.56, 0.14], [0.06, 0.24]]).unwrap()).unwrap();
        match is_factorizable(&p, &cov, 1e-9).unwrap() {
            Factorizability::Factorizable { rho } => {
                assert!((rho[0] - COVARIATE_RHO).abs() < 1e-12);
                assert!((rho[0] - 0.612903).abs() < 1e-6);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn perturbed_three_class_pair_is_not_factorizable() {
        let w = Table::from_rows(&[
            [0.10, 0.05, 0.05],
            [0.05, 0.10, 0.05],
            [0.05, 0.05, 0.10],
            [0.10, 0.10, 0.20],
        ])
        .unwrap();
        let p = FiniteJointDistribution::unlabeled(w).unwrap();
        let mut q = p.weights().clone();
        // prior shift, then move mass inside class 1 from cell 0 to cell 1
        for x in 0..4 {
            q[(x, 0)] *= 1.5;
            q[(x, 2)] *= 0.75;
        }
        q[(0, 0)] -= 0.05;
        q[(1, 0)] += 0.05;
        let total = q.total();
        let q = p.with_weights(q.map(|_, _, v| v / total)).unwrap();
        match is_factorizable(&p, &q, 1e-9).unwrap() {
            Factorizability::NotFactorizable { class, cells } => {
                assert_eq!(class, 0);
                assert_eq!(cells, (0, 1));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn undetermined_without_overlap() {
        let p = FiniteJointDistribution::unlabeled(Table::from_rows(&[[0.5, 0.0], [0.0, 0.5]]).unwrap())
            .unwrap();
        assert_eq!(is_factorizable(&p, &p, 1e-9), Err(Error::Undetermined { class: 0 }));
    }

    #[test]
    fn fjs_correction_examples() {
        let p = d1();
        let post = p.posteriors();
        let q = priors(&[0.7, 0.3]);
        let fjs = correct_posteriors_fjs(&post, &p.priors(), &q, &[1.0]).unwrap();
        let expected = [1.12 / 1.24, 0.28 / 0.76];
        for x in 0..2 {
            assert!((fjs.get(x, 0) - expected[x]).abs() < 1e-14);
        }
        let cov = correct_posteriors_fjs(&post, &p.priors(), &priors(&[0.62, 0.38]), &[COVARIATE_RHO])
            .unwrap();
        assert!(cov.max_abs_diff(&post) < 1e-14);
    }

    #[test]
    fn em_examples() {
        let p = d1();
        let post = p.posteriors();
        let same = estimate_priors_em(&post, &p.priors(), &[0.5, 0.5], &EmOptions::default()).unwrap();
        assert_eq!(same.q, vec![0.5, 0.5]);
        assert!(same.converged);

        let shifted =
            estimate_priors_em(&post, &p.priors(), &[0.62, 0.38], &EmOptions::default()).unwrap();
        assert!((shifted.q[0] - 0.7).abs() < 1e-8 && (shifted.q[1] - 0.3).abs() < 1e-8);

        let plain = EmOptions {
            accelerate: false,
            ..EmOptions::default()
        };
        let slow = estimate_priors_em(&post, &p.priors(), &[0.62, 0.38], &plain).unwrap();
        assert!((slow.q[0] - 0.7).abs() < 1e-8);
        assert!(slow.iterations > shifted.iterations);
    }

    #[test]
    fn em_on_covariate_marginal_solves_unit_rho_system() {
        let p = d1();
        let est = estimate_priors_em(&p.posteriors(), &p.priors(), &[0.7, 0.3], &EmOptions::default())
            .unwrap();
        let q = est.priors().unwrap();
        // h = t / P-marginal
        let h = density(&p, &[1.4, 0.6]);
        let view = SourceView::of(&p);
        let system = view.system(&h, &q).unwrap();
        assert!(system.residual(&[1.0]) <= 1e-10);
    }

    #[test]
    fn em_on_nearly_flat_posteriors() {
        // class conditionals (0.52, 0.48) and (0.48, 0.52); q_1 = (t_a - 0.48) / 0.04
        let p = FiniteJointDistribution::unlabeled(Table::from_rows(&[[0.26, 0.24], [0.24, 0.26]]).unwrap())
            .unwrap();
        let t = [0.7 * 0.52 + 0.3 * 0.48, 0.7 * 0.48 + 0.3 * 0.52];
        for accelerate in [true, false] {
            let opts = EmOptions {
                accelerate,
                ..EmOptions::default()
            };
            let est = estimate_priors_em(&p.posteriors(), &p.priors(), &t, &opts).unwrap();
            assert!(est.converged);
            assert!((est.q[0] - 0.7).abs() < 1e-12, "{:?}", est);
        }
    }

    #[test]
    fn em_boundary_collapse() {
        let p = d1();
        // marginal outside the convex hull of the class conditionals (0.8, 0.2)/(0.2, 0.8)
        let est = estimate_priors_em(&p.posteriors(), &p.priors(), &[0.95, 0.05], &EmOptions {
            max_iter: 200_000,
            ..EmOptions::default()
        })
        .unwrap();
        assert!(est.q[1] < 1e-6, "{:?}", est);
    }

    #[test]
    fn phi_examples() {
        let p = d1();
        let unit = binary_phi(&p, &density(&p, &[1.0, 1.0]), &[0.5]).unwrap();
        assert!((unit.points[0].rho - 1.0).abs() < 1e-12);

        let grid: Vec<f64> = (1..=9).map(|k| k as f64 / 10.0).collect();
        let curve = binary_phi(&p, &density(&p, &[1.24, 0.76]), &grid).unwrap();
        for w in curve.points.windows(2) {
            assert!(w[1].rho > w[0].rho);
        }
        for pt in &curve.points {
            assert!(curve.limit_q_to_0 < pt.rho && pt.rho < curve.limit_q_to_1);
        }

        let ends = binary_phi(&p, &density(&p, &[1.24, 0.76]), &[1e-6, 1.0 - 1e-6]).unwrap();
        // closed forms on D1: R1/R2 = (4, 1/4) on (a, b)
        let lim0 = 1.0 / (0.5 * 1.24 * 4.0 + 0.5 * 0.76 * 0.25);
        let lim1 = 0.5 * 1.24 * 0.25 + 0.5 * 0.76 * 4.0;
        assert!((ends.limit_q_to_0 - lim0).abs() < 1e-14);
        assert!((ends.limit_q_to_1 - lim1).abs() < 1e-14);
        assert!((ends.points[0].rho / lim0 - 1.0).abs() < 1e-3);
        assert!((ends.points[1].rho / lim1 - 1.0).abs() < 1e-3);
    }

    #[test]
    fn phi_flags_independence_and_rejects_boundaries() {
        let indep = FiniteJointDistribution::unlabeled(
            Table::from_rows(&[[0.3, 0.2], [0.3, 0.2]]).unwrap(),
        )
        .unwrap();
        let curve = binary_phi(&indep, &density(&indep, &[1.2, 0.8]), &[0.3, 0.7]).unwrap();
        assert!(curve.non_unique);

        let edge = FiniteJointDistribution::unlabeled(
            Table::from_rows(&[[0.5, 0.0], [0.2, 0.3]]).unwrap(),
        )
        .unwrap();
        assert_eq!(
            binary_phi(&edge, &density(&edge, &[1.0, 1.0]), &[0.5]),
            Err(Error::BoundaryPosterior { cell: 0 })
        );
        let three = FiniteJointDistribution::unlabeled(Table::filled(1, 3, 1.0 / 3.0)).unwrap();
        assert_eq!(
            binary_phi(&three, &density(&three, &[1.0]), &[0.5]),
            Err(Error::NotBinary { classes: 3 })
        );
    }
}
