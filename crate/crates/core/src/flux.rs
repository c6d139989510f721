//! Flux of isotopies and loops, pairings with the coordinate cycles, the
//! flux lattice and period integrals.
//!
//! The flux form of an isotopy `φ_t` on `[0, 1]` is
//! `α = ∫₀¹ φ_t*(ι_{X_t}ω + η(X_t)η) dt`. The Jacobian of `φ_t` is taken by
//! central differences of the numerical flow; the time integral uses
//! composite Simpson. Setting [`FluxOptions::pullback`] to `false` drops the
//! pullback and averages `Ĩ(X_t)` at the fixed point instead.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{flow_at_nodes, flow_point, Isotopy, Scheme, VectorField};
use crate::error::{Error, Result};
use crate::forms::{CovectorField, FiniteDifference, OneForm, TwoForm};
use crate::manifold::{ManifoldKind, ModelManifold, Point};
use crate::quadrature::{simpson_nodes, simpson_unit_square};
use crate::sampling::grid_or_random;

/// Straight loop `s ↦ start + s·displacement`, `s ∈ [0, 1]`, in raw
/// coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cycle {
    pub label: String,
    pub start: Vec<f64>,
    pub displacement: Vec<f64>,
}

impl Cycle {
    pub fn straight(label: impl Into<String>, start: Vec<f64>, displacement: Vec<f64>) -> Self {
        Self {
            label: label.into(),
            start,
            displacement,
        }
    }

    /// One full turn of coordinate `index`, based at the origin (a fixed
    /// point of every monodromy).
    pub fn coordinate(m: &ModelManifold, index: usize) -> Self {
        let mut displacement = vec![0.0; m.dim()];
        displacement[index] = m.coordinate_period(index);
        Self::straight(format!("gamma_{}", m.coordinate_labels()[index]), vec![0.0; m.dim()], displacement)
    }

    /// Canonical point at parameter `s` and its seam-crossing count.
    pub fn point_at(&self, m: &ModelManifold, s: f64) -> Result<(Point, i64)> {
        let raw: Vec<f64> = self.start.iter().zip(&self.displacement).map(|(a, d)| a + s * d).collect();
        m.canonicalize_with_crossings(&raw)
    }

    pub fn is_closed(&self, m: &ModelManifold, tol: f64) -> Result<bool> {
        let (a, _) = self.point_at(m, 0.0)?;
        let (b, _) = self.point_at(m, 1.0)?;
        Ok(m.distance(&a, &b) <= tol)
    }
}

/// `generators[0]` is the Reeb loop `γ_θ`; the rest are `γ_{x₁}..γ_{xₙ},
/// γ_{y₁}..γ_{yₙ}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CycleBasis {
    pub generators: Vec<Cycle>,
    /// Simpson panels per line integral.
    pub panels: usize,
}

impl CycleBasis {
    pub fn coordinate(m: &ModelManifold) -> Self {
        Self::coordinate_with_panels(m, 128)
    }

    pub fn coordinate_with_panels(m: &ModelManifold, panels: usize) -> Self {
        Self {
            generators: (0..m.dim()).map(|i| Cycle::coordinate(m, i)).collect(),
            panels,
        }
    }

    pub fn reeb_cycle(&self) -> &Cycle {
        &self.generators[0]
    }

    pub fn h1_cycles(&self) -> &[Cycle] {
        &self.generators[1..]
    }
}

/// Line integral of `alpha` along `gamma` with `panels` Simpson panels.
pub fn pair_with_cycle(m: &ModelManifold, alpha: &dyn CovectorField, gamma: &Cycle, panels: usize) -> Result<f64> {
    if gamma.start.len() != m.dim() || gamma.displacement.len() != m.dim() || alpha.dim() != m.dim() {
        return Err(Error::domain("cycle and form dimensions must match the manifold"));
    }
    if !gamma.is_closed(m, 1e-12)? {
        return Err(Error::precondition(format!("cycle {} is not closed", gamma.label)));
    }
    let (nodes, weights) = simpson_nodes(0.0, 1.0, panels.max(1));
    let values = nodes
        .par_iter()
        .map(|&s| -> Result<f64> {
            let (p, k) = gamma.point_at(m, s)?;
            let mut velocity = gamma.displacement.clone();
            m.tangent_from_raw_chart(&mut velocity, k);
            let covector = alpha.covector(&p)?;
            let value: f64 = covector.iter().zip(&velocity).map(|(a, v)| a * v).sum();
            if !value.is_finite() {
                return Err(Error::Integration {
                    time: s,
                    reason: format!("non-finite form value along {}", gamma.label),
                });
            }
            Ok(value)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(values.iter().zip(&weights).map(|(v, w)| v * w).sum())
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct FluxOptions {
    /// Simpson panels in time.
    pub time_panels: usize,
    /// Integrate `φ_t*(Ĩ(X_t))` rather than `Ĩ(X_t)`.
    pub pullback: bool,
    pub fd: FiniteDifference,
    /// Largest tolerated displacement of the time-one map of a loop.
    pub loop_tolerance: f64,
}

impl Default for FluxOptions {
    fn default() -> Self {
        Self {
            time_panels: 8,
            pullback: true,
            fd: FiniteDifference::default(),
            loop_tolerance: 1e-8,
        }
    }
}

fn flux_covector(iso: &Isotopy, opts: &FluxOptions, z: &[f64]) -> Result<Vec<f64>> {
    let m = iso.manifold();
    let dim = m.dim();
    let p = m.canonicalize(z)?;
    let (nodes, weights) = simpson_nodes(0.0, 1.0, opts.time_panels.max(1));
    let musical_t = m.musical_matrix().transpose();
    let centers = flow_at_nodes(iso, &p, &nodes)?;
    let jacobians = if opts.pullback {
        // Flatten the per-node Jacobians so the extrapolation acts entrywise.
        let at_step = |h: f64| -> Result<Vec<f64>> {
            let mut flat = vec![0.0; nodes.len() * dim * dim];
            for j in 0..dim {
                let mut e = vec![0.0; dim];
                e[j] = h;
                let plus = flow_at_nodes(iso, &m.offset(&p, &e)?, &nodes)?;
                e[j] = -h;
                let minus = flow_at_nodes(iso, &m.offset(&p, &e)?, &nodes)?;
                for (i, c) in centers.iter().enumerate() {
                    let (dp, dm) = (m.displacement(c, &plus[i]), m.displacement(c, &minus[i]));
                    for r in 0..dim {
                        flat[(i * dim + j) * dim + r] = (dp[r] - dm[r]) / (2.0 * h);
                    }
                }
            }
            Ok(flat)
        };
        let flat = opts.fd.extrapolate(at_step)?;
        Some(
            (0..nodes.len())
                .map(|i| DMatrix::from_column_slice(dim, dim, &flat[i * dim * dim..(i + 1) * dim * dim]))
                .collect::<Vec<_>>(),
        )
    } else {
        None
    };
    let mut alpha = DVector::zeros(dim);
    for (i, (&t, &w)) in nodes.iter().zip(&weights).enumerate() {
        let q = if opts.pullback { &centers[i] } else { &p };
        let x = DVector::from_vec(iso.generator.at(t, q));
        let covector = &musical_t * x;
        match &jacobians {
            Some(jac) => alpha += w * (jac[i].transpose() * covector),
            None => alpha += w * covector,
        }
    }
    Ok(alpha.as_slice().to_vec())
}

/// Flux form of an isotopy on `[0, 1]`. Coefficients are given in the chart
/// of the canonical representative of the evaluation point; evaluation
/// failures surface as non-finite coefficients.
pub fn flux_one_form(iso: &Isotopy, opts: FluxOptions) -> Result<OneForm> {
    if iso.t_start != 0.0 || iso.t_end != 1.0 {
        return Err(Error::precondition("flux needs an isotopy on [0, 1]"));
    }
    let dim = iso.manifold().dim();
    let iso = iso.clone();
    Ok(OneForm::new(
        dim,
        move |z| flux_covector(&iso, &opts, z).unwrap_or_else(|_| vec![f64::NAN; dim]),
        true,
    ))
}

/// Pairings of the flux form with every cycle of `basis`, in basis order.
pub fn flux_pairings(iso: &Isotopy, basis: &CycleBasis, opts: FluxOptions) -> Result<Vec<f64>> {
    let m = iso.manifold();
    let alpha = flux_one_form(iso, opts)?;
    basis
        .generators
        .iter()
        .map(|gamma| pair_with_cycle(m, &alpha, gamma, basis.panels))
        .collect()
}

/// Flux class: pairings with `γ_{xₖ}, γ_{yₖ}` and, separately, with `γ_θ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluxClass {
    pub basis_labels: Vec<String>,
    pub h1_pairings: Vec<f64>,
    pub eta_component: f64,
}

impl FluxClass {
    pub fn max_abs_difference(&self, other: &FluxClass) -> f64 {
        self.h1_pairings
            .iter()
            .zip(&other.h1_pairings)
            .map(|(a, b)| (a - b).abs())
            .fold((self.eta_component - other.eta_component).abs(), f64::max)
    }

    pub fn sum(&self, other: &FluxClass) -> FluxClass {
        FluxClass {
            basis_labels: self.basis_labels.clone(),
            h1_pairings: self.h1_pairings.iter().zip(&other.h1_pairings).map(|(a, b)| a + b).collect(),
            eta_component: self.eta_component + other.eta_component,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.h1_pairings.iter().fold(self.eta_component.abs(), |acc, v| acc.max(v.abs()))
    }
}

/// Check that the time-one map of `iso` is the identity within `tol` on a
/// `5^(2n+1)` grid (capped at 3125 points, random beyond that).
pub fn check_loop(iso: &Isotopy, tol: f64) -> Result<()> {
    let m = iso.manifold();
    let samples = grid_or_random(m, 5, 3125, 0);
    let worst = samples
        .par_iter()
        .map(|p| -> Result<(f64, Vec<f64>)> {
            let q = flow_point(iso, p)?;
            Ok((m.distance(p, &q), p.coords().to_vec()))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold((0.0, Vec::new()), |acc, r| if r.0 > acc.0 { r } else { acc });
    if worst.0 > tol {
        return Err(Error::precondition(format!(
            "isotopy is not a loop: time-one map moves {:?} by {:e}",
            worst.1, worst.0
        )));
    }
    Ok(())
}

pub fn flux_class(lp: &Isotopy, basis: &CycleBasis, opts: FluxOptions) -> Result<FluxClass> {
    check_loop(lp, opts.loop_tolerance)?;
    let pairings = flux_pairings(lp, basis, opts)?;
    Ok(FluxClass {
        basis_labels: basis.h1_cycles().iter().map(|c| c.label.clone()).collect(),
        h1_pairings: pairings[1..].to_vec(),
        eta_component: pairings[0],
    })
}

/// Loop translating coordinate `index` once around its circle.
pub fn translation_loop(m: &ModelManifold, index: usize, steps: usize) -> Result<Isotopy> {
    if index >= m.dim() {
        return Err(Error::domain(format!("coordinate index {index} out of range")));
    }
    if index != 0 && m.kind() == ManifoldKind::MappingTorus {
        return Err(Error::domain("fiber translations are not global on a mapping torus"));
    }
    let mut v = vec![0.0; m.dim()];
    v[index] = m.coordinate_period(index);
    Isotopy::with_steps(VectorField::constant(m, v), 0.0, 1.0, steps, Scheme::Rk4)
}

/// `g ∘ φ_t ∘ g⁻¹` for the translation `g(p) = p + shift` on a product torus.
pub fn conjugate_by_translation(iso: &Isotopy, shift: &[f64]) -> Result<Isotopy> {
    let m = iso.manifold().clone();
    if m.kind() != ManifoldKind::ProductTorus {
        return Err(Error::domain("translation conjugation needs a product torus"));
    }
    if shift.len() != m.dim() {
        return Err(Error::domain("shift dimension mismatch"));
    }
    let inner = iso.generator.clone();
    let back: Vec<f64> = shift.iter().map(|s| -s).collect();
    let manifold = m.clone();
    let generator = VectorField::new(&m, move |t, q| match manifold.offset(q, &back) {
        Ok(pre) => inner.at(t, &pre),
        Err(_) => vec![f64::NAN; q.dim()],
    });
    Isotopy::with_steps(generator, iso.t_start, iso.t_end, iso.steps(), iso.scheme)
}

/// Reconstructed flux lattice with its discreteness diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct Lattice {
    pub generator_vectors: Vec<Vec<f64>>,
    pub tolerance: f64,
    /// Generators are linearly dependent within tolerance.
    pub degenerate: bool,
    /// Coordinates with respect to `⊕ aₖ(ℤ[dxₖ] ⊕ ℤ[dyₖ])`.
    pub coefficients: Vec<Vec<f64>>,
    /// Every generator lies in the weighted lattice.
    pub in_weighted_lattice: bool,
    /// The generators span the whole weighted lattice.
    pub spans_weighted_lattice: bool,
    /// Shortest nonzero lattice vector; `None` for empty or degenerate sets.
    pub min_norm: Option<f64>,
}

impl Lattice {
    pub fn from_vectors(m: &ModelManifold, vectors: Vec<Vec<f64>>, tolerance: f64) -> Result<Self> {
        let rank = 2 * m.n();
        if vectors.iter().any(|v| v.len() != rank) {
            return Err(Error::domain(format!("flux vectors must have {rank} entries")));
        }
        let weight = |i: usize| m.weights()[i % m.n()];
        let coefficients: Vec<Vec<f64>> = vectors
            .iter()
            .map(|v| v.iter().enumerate().map(|(i, c)| c / weight(i)).collect())
            .collect();
        let in_weighted_lattice = coefficients
            .iter()
            .flatten()
            .all(|c| (c - c.round()).abs() <= tolerance);
        let count = vectors.len();
        let basis = DMatrix::from_fn(rank, count, |r, c| vectors[c][r]);
        let degenerate = count > 0 && {
            let sv = basis.clone().svd(false, false).singular_values;
            let largest = sv.max();
            count > rank || sv.iter().any(|s| *s <= tolerance * largest.max(1.0))
        };
        let spans_weighted_lattice = in_weighted_lattice && count == rank && !degenerate && {
            let c = DMatrix::from_fn(rank, count, |r, col| coefficients[col][r].round());
            (c.determinant().abs() - 1.0).abs() < 0.5
        };
        let min_norm = if count == 0 || degenerate {
            None
        } else {
            Some(shortest_vector(&basis)?)
        };
        Ok(Self {
            generator_vectors: vectors,
            tolerance,
            degenerate,
            coefficients,
            in_weighted_lattice,
            spans_weighted_lattice,
            min_norm,
        })
    }
}

/// Exact shortest nonzero vector of the lattice spanned by the (independent)
/// columns of `basis`, by enumeration inside the box the pseudo-inverse
/// allows.
fn shortest_vector(basis: &DMatrix<f64>) -> Result<f64> {
    let count = basis.ncols();
    let radius = (0..count).map(|j| basis.column(j).norm()).fold(f64::INFINITY, f64::min);
    let pinv = basis
        .clone()
        .pseudo_inverse(1e-12)
        .map_err(|e| Error::Structural(e.to_string()))?;
    let bounds: Vec<i64> = (0..count)
        .map(|i| (radius * pinv.row(i).norm() + 1e-9).floor() as i64)
        .collect();
    let total: f64 = bounds.iter().map(|b| (2 * b + 1) as f64).product();
    if total > 1e7 {
        return Err(Error::Structural(format!(
            "lattice basis too skewed for exact enumeration ({total:e} candidates)"
        )));
    }
    let mut best = radius;
    let mut coeffs: Vec<i64> = bounds.iter().map(|b| -b).collect();
    loop {
        if coeffs.iter().any(|&c| c != 0) {
            let v = basis * DVector::from_iterator(count, coeffs.iter().map(|&c| c as f64));
            best = best.min(v.norm());
        }
        let mut i = 0;
        loop {
            if i == count {
                return Ok(best);
            }
            if coeffs[i] < bounds[i] {
                coeffs[i] += 1;
                break;
            }
            coeffs[i] = -bounds[i];
            i += 1;
        }
    }
}

/// Flux classes of `loops` assembled into a [`Lattice`].
pub fn flux_lattice(
    m: &ModelManifold,
    loops: &[Isotopy],
    basis: &CycleBasis,
    opts: FluxOptions,
    tolerance: f64,
) -> Result<Lattice> {
    let vectors = loops
        .iter()
        .map(|lp| flux_class(lp, basis, opts).map(|c| c.h1_pairings))
        .collect::<Result<Vec<_>>>()?;
    Lattice::from_vectors(m, vectors, tolerance)
}

/// `∫ form` over the coordinate 2-torus spanned by directions `i` and `j`
/// through the origin, with `panels × panels` Simpson panels.
pub fn coordinate_torus_period(m: &ModelManifold, form: &TwoForm, i: usize, j: usize, panels: usize) -> Result<f64> {
    if i >= m.dim() || j >= m.dim() || i == j {
        return Err(Error::domain("need two distinct coordinate directions"));
    }
    let (pi, pj) = (m.coordinate_period(i), m.coordinate_period(j));
    let mut u = vec![0.0; m.dim()];
    let mut v = vec![0.0; m.dim()];
    u[i] = pi;
    v[j] = pj;
    let value = simpson_unit_square(
        |s, r| {
            let mut raw = vec![0.0; m.dim()];
            raw[i] = s * pi;
            raw[j] = r * pj;
            let p = m.canonicalize(&raw).expect("finite coordinates");
            form.apply(&p, &u, &v)
        },
        panels,
    );
    Ok(value)
}

/// `∫ ω` over the `(xₖ, yₖ)` coordinate torus; equals `aₖ`.
pub fn period_over_2cycle(m: &ModelManifold, k: usize) -> Result<f64> {
    if k >= m.n() {
        return Err(Error::domain(format!("pair index {k} out of range")));
    }
    coordinate_torus_period(m, &TwoForm::omega(m), m.x_index(k), m.y_index(k), 64)
}

/// Periods of `η` over the coordinate cycles (`T` on `γ_θ`, 0 elsewhere).
pub fn eta_periods(m: &ModelManifold, basis: &CycleBasis) -> Result<Vec<f64>> {
    let eta = OneForm::eta(m);
    basis
        .generators
        .iter()
        .map(|g| pair_with_cycle(m, &eta, g, basis.panels))
        .collect()
}
