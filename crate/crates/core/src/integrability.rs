//! Liouville integrability for Reeb-invariant Hamiltonians, and recovery of
//! the mapping-torus monodromy from the Reeb flow.
//!
//! The extra periodic action variable is realized as the θ coordinate
//! itself: its differential is `η`, it brackets to zero with every leafwise
//! function, and its level sets are the leaves. Along the combined flow
//! `X_H + ξ` it advances at unit rate, so the θ-circle is the free direction
//! of each invariant `(n+1)`-torus.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{flow_with_trajectory, hamiltonian_vector_field, poisson_bracket_with, Isotopy, Scheme, VectorField};
use crate::error::{Error, Result};
use crate::fields;
use crate::forms::{FiniteDifference, ScalarField};
use crate::manifold::{wrap_centered, ManifoldKind, Monodromy, ModelManifold, Point};
use crate::sampling::random_points;

pub const REEB_ACTION_LABEL: &str = "reeb_action";

/// `n` leafwise integrals plus the θ action.
#[derive(Debug, Clone)]
pub struct IntegralSet {
    pub labels: Vec<String>,
    pub integrals: Vec<ScalarField>,
    pub fd: FiniteDifference,
}

impl IntegralSet {
    /// Rejects sets of the wrong size or whose members depend on θ (checked
    /// on 64 random samples, tolerance `1e-10`).
    pub fn new(m: &ModelManifold, labels: Vec<String>, integrals: Vec<ScalarField>) -> Result<Self> {
        if integrals.len() != m.n() || labels.len() != m.n() {
            return Err(Error::domain(format!("expected {} integrals with labels, got {}", m.n(), integrals.len())));
        }
        if integrals.iter().any(|f| f.dim() != m.dim()) {
            return Err(Error::domain("integral dimension does not match the manifold"));
        }
        let fd = FiniteDifference::richardson(1e-4);
        let samples = random_points(m, 64, 7);
        for (label, f) in labels.iter().zip(&integrals) {
            let drift = f.reeb_derivative_max(0.0, &samples, fd);
            if drift > 1e-10 {
                return Err(Error::precondition(format!("integral {label} depends on theta (|d/dtheta| = {drift:e})")));
            }
        }
        Ok(Self { labels, integrals, fd })
    }

    /// `I_k = cos 2πx_k + cos 2πy_k`.
    pub fn pendulum(m: &ModelManifold) -> Self {
        let integrals = (0..m.n()).map(|k| fields::pendulum_integral(m, k)).collect();
        Self::new(m, (1..=m.n()).map(|k| format!("pendulum_{k}")).collect(), integrals).expect("pendulum integrals are leafwise")
    }

    /// `I_k = sin 2πx_k`.
    pub fn separable_sines(m: &ModelManifold) -> Self {
        let integrals = (0..m.n()).map(|k| fields::sine(m, m.x_index(k), 1.0)).collect();
        Self::new(m, (1..=m.n()).map(|k| format!("sin_x{k}")).collect(), integrals).expect("sine integrals are leafwise")
    }

    /// Labels of all `n + 1` integrals, the θ action last.
    pub fn all_labels(&self) -> Vec<String> {
        let mut l = self.labels.clone();
        l.push(REEB_ACTION_LABEL.into());
        l
    }

    /// Gradients of all `n + 1` integrals at `p`, one per row.
    pub fn gradient_matrix(&self, m: &ModelManifold, p: &Point) -> DMatrix<f64> {
        let d = m.dim();
        let mut g = DMatrix::zeros(self.integrals.len() + 1, d);
        for (row, f) in self.integrals.iter().enumerate() {
            for (j, v) in f.gradient(0.0, p.coords(), self.fd).into_iter().enumerate() {
                g[(row, j)] = v;
            }
        }
        g[(self.integrals.len(), 0)] = 1.0;
        g
    }
}

fn numeric_rank(mat: &DMatrix<f64>, relative_tol: f64) -> usize {
    let sv = mat.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    sv.iter().filter(|&&s| s > relative_tol * max).count()
}

#[derive(Debug, Clone, Serialize)]
pub struct BracketEntry {
    pub first: String,
    pub second: String,
    pub max_abs: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CommutingReport {
    pub samples: usize,
    pub brackets: Vec<BracketEntry>,
    pub max_bracket: f64,
    /// Smallest numeric rank of the `n+1` gradients over the samples.
    pub min_gradient_rank: usize,
    pub expected_rank: usize,
    /// Largest `|ω(v_i, v_j)|` over orthonormal frames of the level sets.
    pub isotropy_residual: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Orthonormal basis of the common kernel of the leafwise gradients, i.e. a
/// tangent frame of the `(n+1)`-dimensional level set through the point.
fn level_set_frame(gradients: &DMatrix<f64>) -> DMatrix<f64> {
    let gram = gradients.transpose() * gradients;
    let eig = gram.symmetric_eigen();
    let max = eig.eigenvalues.amax();
    let kernel: Vec<usize> = (0..eig.eigenvalues.len()).filter(|&i| eig.eigenvalues[i] <= 1e-12 * max).collect();
    DMatrix::from_fn(gradients.ncols(), kernel.len(), |r, c| eig.eigenvectors[(r, kernel[c])])
}

/// Pairwise brackets (θ action included), gradient rank and isotropy of the
/// level sets on `samples`.
pub fn verify_commuting(m: &ModelManifold, set: &IntegralSet, samples: &[Point], tolerance: f64) -> Result<CommutingReport> {
    if samples.is_empty() {
        return Err(Error::precondition("commuting check needs samples"));
    }
    let theta = fields::coordinate(m, 0);
    let mut all = set.integrals.clone();
    all.push(theta);
    let labels = set.all_labels();
    let mut brackets = Vec::new();
    for i in 0..all.len() {
        for j in i + 1..all.len() {
            let bracket = poisson_bracket_with(m, &all[i], &all[j], set.fd);
            let max_abs = samples
                .par_iter()
                .map(|p| bracket.value_at(0.0, p).abs())
                .reduce(|| 0.0, f64::max);
            brackets.push(BracketEntry {
                first: labels[i].clone(),
                second: labels[j].clone(),
                max_abs,
            });
        }
    }
    let max_bracket = brackets.iter().map(|b| b.max_abs).fold(0.0, f64::max);
    let omega = m.omega_matrix();
    let (min_gradient_rank, isotropy_residual) = samples
        .par_iter()
        .map(|p| {
            let g = set.gradient_matrix(m, p);
            let rank = numeric_rank(&g, 1e-8);
            let leafwise = g.rows(0, set.integrals.len()).into_owned();
            let frame = level_set_frame(&leafwise);
            let iso = (frame.transpose() * &omega * &frame).amax();
            (rank, iso)
        })
        .reduce(|| (usize::MAX, 0.0), |a, b| (a.0.min(b.0), a.1.max(b.1)));
    let expected_rank = m.n() + 1;
    Ok(CommutingReport {
        samples: samples.len(),
        brackets,
        max_bracket,
        min_gradient_rank,
        expected_rank,
        isotropy_residual,
        tolerance,
        passed: max_bracket <= tolerance && min_gradient_rank == expected_rank && isotropy_residual <= 1e-6,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct DriftReport {
    pub labels: Vec<String>,
    pub drifts: Vec<f64>,
    pub hamiltonian_drift: f64,
    /// θ advance of the combined flow, unwrapped.
    pub theta_advance: f64,
    pub steps: usize,
    pub max_drift: f64,
}

/// Integrates `X_H + ξ` from `p0` and reports the drift of each integral and
/// of `H` along the trajectory.
///
/// `H` must be Reeb-invariant and bracket to at most `1e-8` with every
/// integral on 64 random samples; otherwise a precondition error names the
/// offending integral and the witness point.
pub fn conservation_along_flow(m: &ModelManifold, h: &ScalarField, set: &IntegralSet, p0: &Point, duration: f64, step: f64) -> Result<DriftReport> {
    let probes = random_points(m, 64, 11);
    let theta_dep = h.reeb_derivative_max(0.0, &probes, set.fd);
    if theta_dep > 1e-10 {
        return Err(Error::precondition(format!("Hamiltonian depends on theta (|d/dtheta| = {theta_dep:e})")));
    }
    for (label, f) in set.labels.iter().zip(&set.integrals) {
        let bracket = poisson_bracket_with(m, h, f, set.fd);
        for p in &probes {
            let v = bracket.value_at(0.0, p);
            if v.abs() > 1e-8 {
                return Err(Error::precondition(format!(
                    "Hamiltonian does not commute with {label}: bracket {v:e} at {:?}",
                    p.coords()
                )));
            }
        }
    }
    let generator = hamiltonian_vector_field(m, h).add(&VectorField::reeb(m, 1.0));
    let iso = Isotopy::new(generator, 0.0, duration, step, Scheme::Rk4)?;
    let traj = flow_with_trajectory(&iso, p0)?.trajectory.expect("trajectory requested");
    let drift_of = |f: &ScalarField| {
        let start = f.value_at(0.0, p0);
        traj.iter().map(|(_, q)| (f.value_at(0.0, q) - start).abs()).fold(0.0, f64::max)
    };
    let drifts: Vec<f64> = set.integrals.iter().map(drift_of).collect();
    let hamiltonian_drift = drift_of(h);
    let theta_advance = traj
        .windows(2)
        .map(|w| wrap_centered(w[1].1.theta() - w[0].1.theta(), m.reeb_period()))
        .sum();
    let max_drift = drifts.iter().cloned().fold(hamiltonian_drift, f64::max);
    Ok(DriftReport {
        labels: set.labels.clone(),
        drifts,
        hamiltonian_drift,
        theta_advance,
        steps: iso.steps(),
        max_drift,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MonodromyReport {
    pub matrix: Monodromy,
    pub fitted: [[f64; 2]; 2],
    pub determinant: i64,
    /// `max |fitted − stored|`.
    pub residual: f64,
    /// Deviation of the return map from the recovered linear map on random
    /// fiber points.
    pub linearity_residual: f64,
}

/// Recovers the fiber return map `ψ_T` on `θ = 0` as an integer matrix.
///
/// Product tori of dimension 3 report the identity.
pub fn extract_monodromy(m: &ModelManifold) -> Result<MonodromyReport> {
    if m.n() != 1 {
        return Err(Error::domain("monodromy extraction needs a 3-dimensional model"));
    }
    let stored = match m.kind() {
        ManifoldKind::MappingTorus => m.monodromy().expect("mapping torus has a monodromy"),
        ManifoldKind::ProductTorus => [[1, 0], [0, 1]],
    };
    let t = m.reeb_period();
    let ret = |b: [f64; 2]| -> Result<[f64; 2]> {
        let q = m.reeb_flow(&m.canonicalize(&[0.0, b[0], b[1]])?, t);
        Ok([q.coords()[1], q.coords()[2]])
    };
    let delta = 1e-3;
    let origin = ret([0.0, 0.0])?;
    let mut fitted = [[0.0; 2]; 2];
    for j in 0..2 {
        let mut e = [0.0; 2];
        e[j] = delta;
        let image = ret(e)?;
        for i in 0..2 {
            fitted[i][j] = wrap_centered(image[i] - origin[i], 1.0) / delta;
        }
    }
    let matrix: Monodromy = [
        [fitted[0][0].round() as i64, fitted[0][1].round() as i64],
        [fitted[1][0].round() as i64, fitted[1][1].round() as i64],
    ];
    let residual = (0..2)
        .flat_map(|i| (0..2).map(move |j| (i, j)))
        .map(|(i, j)| (fitted[i][j] - stored[i][j] as f64).abs())
        .fold(0.0, f64::max);
    let mut linearity_residual: f64 = 0.0;
    for p in random_points(m, 32, 5) {
        let b = [p.coords()[1], p.coords()[2]];
        let image = ret(b)?;
        for i in 0..2 {
            let predicted = matrix[i][0] as f64 * b[0] + matrix[i][1] as f64 * b[1] + origin[i];
            linearity_residual = linearity_residual.max(wrap_centered(image[i] - predicted, 1.0).abs());
        }
    }
    if linearity_residual > 1e-8 {
        return Err(Error::Structural(format!("fiber return map is not linear (residual {linearity_residual:e})")));
    }
    Ok(MonodromyReport {
        matrix,
        fitted,
        determinant: matrix[0][0] * matrix[1][1] - matrix[0][1] * matrix[1][0],
        residual,
        linearity_residual,
    })
}
