//! Numerical tolerances shared across modules.

/// Normalisation of probability tables and priors.
pub const STRUCTURAL: f64 = 1e-12;

/// `E_P[h] = 1` for densities.
pub const DENSITY_MASS: f64 = 1e-10;

/// Default relative tolerance of the shift-type checks.
pub const CHECK: f64 = 1e-9;

/// A posterior column is treated as constant (class independent of the
/// features) when its spread stays below this.
pub const INDEPENDENCE: f64 = 1e-12;

/// Class-wise selection probabilities may exceed one by this much.
pub const ADMISSIBILITY: f64 = 1e-12;

/// Priors below this after EM are reported as collapsed onto the boundary.
pub const BOUNDARY_COLLAPSE: f64 = 1e-12;

/// `|a - b| <= tol * max(1, |a|, |b|)`.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    let scale = 1.0_f64.max(a.abs()).max(b.abs());
    (a - b).abs() <= tol * scale
}
