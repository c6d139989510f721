//! The symplectization `M × S¹` with `Ω = ω + η∧du`, lifts of isotopies and
//! Hamiltonians, and symplecticity checks.
//!
//! Lifted coordinates are `(θ, x₁..xₙ, y₁..yₙ, u)` with `u ∈ [0, 2π)`. The
//! lift of `φ_t` is `(p, u) ↦ (φ_t(p), u − Λ_t(p))` with
//! `Λ_t(p) = ∫₀ᵗ η(X_s)(φ_s(p)) ds`; its generator is `X − η(X)∂_u`, which
//! satisfies `ι_{X̃}Ω = dF̃` for `F̃ = F + η(X)·u` whenever `η(X)` is constant
//! in space. `F̃` is only single-valued on the branch `u ∈ [0, 2π)`; `dF̃` is
//! the invariant object.

use std::f64::consts::TAU;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{flow_at_nodes, Isotopy};
use crate::error::{Error, Result};
use crate::flux::{pair_with_cycle, Cycle};
use crate::forms::{FiniteDifference, OneForm, ScalarField};
use crate::manifold::{wrap, wrap_centered, ModelManifold, Point};
use crate::quadrature::{simpson_nodes, simpson_unit_square};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LiftedPoint {
    pub base_point: Point,
    pub u: f64,
}

impl LiftedPoint {
    pub fn new(base_point: Point, u: f64) -> Result<Self> {
        if !u.is_finite() {
            return Err(Error::domain("non-finite fiber coordinate"));
        }
        Ok(Self {
            base_point,
            u: wrap(u, TAU),
        })
    }

    /// Raw coordinates `(θ, x.., y.., u)`.
    pub fn coords(&self) -> Vec<f64> {
        let mut c = self.base_point.coords().to_vec();
        c.push(self.u);
        c
    }
}

/// `Ω = ω + η∧du` on `M × S¹`.
#[derive(Debug, Clone)]
pub struct SymplectizationForm {
    manifold: ModelManifold,
}

impl SymplectizationForm {
    pub fn new(m: &ModelManifold) -> Self {
        Self { manifold: m.clone() }
    }

    pub fn dim(&self) -> usize {
        self.manifold.dim() + 1
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let d = self.manifold.dim();
        let w = self.manifold.omega_matrix();
        let eta = self.manifold.eta();
        DMatrix::from_fn(d + 1, d + 1, |i, j| match (i == d, j == d) {
            (false, false) => w[(i, j)],
            (false, true) => eta[i],
            (true, false) => -eta[j],
            (true, true) => 0.0,
        })
    }

    pub fn determinant(&self) -> f64 {
        self.matrix().determinant()
    }

    /// `Ω(v, w)`.
    pub fn apply(&self, v: &[f64], w: &[f64]) -> f64 {
        let mat = self.matrix();
        let (v, w) = (nalgebra::DVector::from_column_slice(v), nalgebra::DVector::from_column_slice(w));
        (v.transpose() * mat * w)[(0, 0)]
    }

    /// Shortest displacement between lifted points, in the chart of `from`.
    pub fn displacement(&self, from: &LiftedPoint, to: &LiftedPoint) -> Vec<f64> {
        let mut d = self.manifold.displacement(&from.base_point, &to.base_point);
        d.push(wrap_centered(to.u - from.u, TAU));
        d
    }

    pub fn offset(&self, lp: &LiftedPoint, v: &[f64]) -> Result<LiftedPoint> {
        let d = self.manifold.dim();
        LiftedPoint::new(self.manifold.offset(&lp.base_point, &v[..d])?, lp.u + v[d])
    }
}

/// `η(X_t)(φ_t(p))` at each of the Simpson sub-nodes of `[0, t]`.
fn vertical_speed(iso: &Isotopy, p: &Point, nodes: &[f64]) -> Result<Vec<f64>> {
    let m = iso.manifold();
    let eta = m.eta();
    let points = flow_at_nodes(iso, p, nodes)?;
    Ok(nodes
        .iter()
        .zip(&points)
        .map(|(&t, q)| iso.generator.at(t, q).iter().zip(&eta).map(|(a, b)| a * b).sum())
        .collect())
}

/// `Λ_t(p) = ∫₀ᵗ η(X_s)(φ_s(p)) ds` by composite Simpson with `panels`
/// panels; the integrand is evaluated along the numerical trajectory.
pub fn rotation_factor(iso: &Isotopy, p: &Point, t: f64, panels: usize) -> Result<f64> {
    if t == iso.t_start {
        return Ok(0.0);
    }
    let (nodes, weights) = simpson_nodes(iso.t_start, t, panels.max(1));
    let speeds = vertical_speed(iso, p, &nodes)?;
    Ok(speeds.iter().zip(&weights).map(|(s, w)| s * w).sum())
}

/// Lift `(p, u) ↦ (φ_t(p), u − Λ_t(p))` of an isotopy.
#[derive(Debug, Clone)]
pub struct LiftedIsotopy {
    pub iso: Isotopy,
    /// Simpson panels for `Λ_t`.
    pub panels: usize,
}

pub fn lift_isotopy(iso: &Isotopy) -> LiftedIsotopy {
    LiftedIsotopy {
        iso: iso.clone(),
        panels: 64,
    }
}

impl LiftedIsotopy {
    pub fn at(&self, t: f64, lp: &LiftedPoint) -> Result<LiftedPoint> {
        if t == self.iso.t_start {
            return Ok(lp.clone());
        }
        let (nodes, weights) = simpson_nodes(self.iso.t_start, t, self.panels.max(1));
        let points = flow_at_nodes(&self.iso, &lp.base_point, &nodes)?;
        let eta = self.iso.manifold().eta();
        let lambda: f64 = nodes
            .iter()
            .zip(&points)
            .zip(&weights)
            .map(|((&s, q), w)| w * self.iso.generator.at(s, q).iter().zip(&eta).map(|(a, b)| a * b).sum::<f64>())
            .sum();
        let end = points.last().expect("at least one node").clone();
        LiftedPoint::new(end, lp.u - lambda)
    }

    pub fn time_one(&self, lp: &LiftedPoint) -> Result<LiftedPoint> {
        self.at(self.iso.t_end, lp)
    }

    /// Generator `X̃_t = (X_t, −η(X_t))` at a lifted point.
    pub fn generator(&self, t: f64, lp: &LiftedPoint) -> Vec<f64> {
        let mut v = self.iso.generator.at(t, &lp.base_point);
        let eta_x: f64 = v.iter().zip(self.iso.manifold().eta()).map(|(a, b)| a * b).sum();
        v.push(-eta_x);
        v
    }
}

/// `F̃_t(p, u) = F_t(p) + η(X_t)(p)·u` as a field on `2n+2` coordinates
/// (the last one being `u`, read on the branch `[0, 2π)`).
pub fn lift_hamiltonian(f: &ScalarField, iso: &Isotopy) -> ScalarField {
    let (f, iso) = (f.clone(), iso.clone());
    let dim = iso.manifold().dim();
    ScalarField::new(dim + 1, move |t, z| {
        let m = iso.manifold();
        let base = &z[..dim];
        let vertical = match m.canonicalize(base) {
            Ok(p) => iso.generator.at(t, &p).iter().zip(m.eta()).map(|(a, b)| a * b).sum::<f64>(),
            Err(_) => f64::NAN,
        };
        f.value(t, base) + vertical * wrap(z[dim], TAU)
    })
}

/// Restriction of a lifted Hamiltonian to the section `p ↦ (p, level)`.
pub fn restrict_to_section(lifted: &ScalarField, level: f64) -> ScalarField {
    let lifted = lifted.clone();
    let dim = lifted.dim() - 1;
    ScalarField::new(dim, move |t, z| {
        let mut c = z.to_vec();
        c.push(level);
        lifted.value(t, &c)
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SymplecticReport {
    pub samples: usize,
    /// `max |JᵀΩJ − Ω|` entrywise.
    pub max_residual: f64,
    pub min_abs_det: f64,
}

/// Finite-difference Jacobian of a map of `M × S¹`.
pub fn lifted_jacobian<F>(form: &SymplectizationForm, map: F, lp: &LiftedPoint, fd: FiniteDifference) -> Result<DMatrix<f64>>
where
    F: Fn(&LiftedPoint) -> Result<LiftedPoint>,
{
    let dim = form.dim();
    let center = map(lp)?;
    let mut jac = DMatrix::zeros(dim, dim);
    for j in 0..dim {
        let col = fd.extrapolate(|h| -> Result<Vec<f64>> {
            let mut e = vec![0.0; dim];
            e[j] = h;
            let plus = map(&form.offset(lp, &e)?)?;
            e[j] = -h;
            let minus = map(&form.offset(lp, &e)?)?;
            let (dp, dm) = (form.displacement(&center, &plus), form.displacement(&center, &minus));
            Ok(dp.iter().zip(&dm).map(|(a, b)| (a - b) / (2.0 * h)).collect())
        })?;
        for i in 0..dim {
            jac[(i, j)] = col[i];
        }
    }
    Ok(jac)
}

/// `max |JᵀΩJ − Ω|` of `map` over `samples`.
pub fn verify_symplectic<F>(m: &ModelManifold, map: F, samples: &[LiftedPoint], fd: FiniteDifference) -> Result<SymplecticReport>
where
    F: Fn(&LiftedPoint) -> Result<LiftedPoint> + Sync,
{
    if samples.is_empty() {
        return Err(Error::precondition("symplecticity check needs samples"));
    }
    let form = SymplectizationForm::new(m);
    let omega = form.matrix();
    let min_abs_det = omega.determinant().abs();
    let residuals = samples
        .par_iter()
        .map(|lp| -> Result<f64> {
            let jac = lifted_jacobian(&form, &map, lp, fd)?;
            Ok((jac.transpose() * &omega * &jac - &omega).amax())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SymplecticReport {
        samples: samples.len(),
        max_residual: residuals.into_iter().fold(0.0, f64::max),
        min_abs_det,
    })
}

/// `∫_{γ×S¹} Ω` over the product of a straight cycle with the fiber circle,
/// by `panels × panels` Simpson quadrature.
pub fn mixed_cycle_period(m: &ModelManifold, gamma: &Cycle, panels: usize) -> Result<f64> {
    if !gamma.is_closed(m, 1e-12)? {
        return Err(Error::precondition(format!("cycle {} is not closed", gamma.label)));
    }
    let form = SymplectizationForm::new(m);
    let d = m.dim();
    let mut fiber = vec![0.0; d + 1];
    fiber[d] = TAU;
    let mut failure = None;
    let value = simpson_unit_square(
        |s, _| match gamma.point_at(m, s) {
            Ok((_, k)) => {
                let mut velocity = gamma.displacement.clone();
                m.tangent_from_raw_chart(&mut velocity, k);
                velocity.push(0.0);
                form.apply(&velocity, &fiber)
            }
            Err(e) => {
                failure = Some(e);
                0.0
            }
        },
        panels,
    );
    match failure {
        Some(e) => Err(e),
        None => Ok(value),
    }
}

/// `2π ∫_γ η`.
pub fn mixed_cycle_prediction(m: &ModelManifold, gamma: &Cycle, panels: usize) -> Result<f64> {
    Ok(TAU * pair_with_cycle(m, &OneForm::eta(m), gamma, panels)?)
}

/// Pairing of the symplectic flux `∫₀¹ φ̃_t*(ι_{X̃_t}Ω) dt` of the lifted
/// isotopy with the fiber circle through `(p, u)`.
///
/// For a loop this equals `2π ∫_{γ_p} η`, with `γ_p` the orbit of `p`.
pub fn lifted_fiber_flux(lift: &LiftedIsotopy, lp: &LiftedPoint, time_panels: usize, fiber_panels: usize, fd: FiniteDifference) -> Result<f64> {
    let iso = &lift.iso;
    if iso.t_start != 0.0 || iso.t_end != 1.0 {
        return Err(Error::precondition("lifted flux needs an isotopy on [0, 1]"));
    }
    let m = iso.manifold();
    let form = SymplectizationForm::new(m);
    let omega_t = form.matrix().transpose();
    let d = m.dim();
    let (times, time_weights) = simpson_nodes(0.0, 1.0, time_panels.max(1));
    let (us, u_weights) = simpson_nodes(0.0, TAU, fiber_panels.max(1));
    let values = us
        .par_iter()
        .map(|&u| -> Result<f64> {
            let start = LiftedPoint::new(lp.base_point.clone(), lp.u + u)?;
            let mut total = 0.0;
            for (&t, &w) in times.iter().zip(&time_weights) {
                let image = lift.at(t, &start)?;
                // Image of ∂u under the time-t lift, by central differences.
                let pushed = fd.extrapolate(|h| -> Result<Vec<f64>> {
                    let mut e = vec![0.0; d + 1];
                    e[d] = h;
                    let plus = lift.at(t, &form.offset(&start, &e)?)?;
                    e[d] = -h;
                    let minus = lift.at(t, &form.offset(&start, &e)?)?;
                    let (a, b) = (form.displacement(&image, &plus), form.displacement(&image, &minus));
                    Ok(a.iter().zip(&b).map(|(x, y)| (x - y) / (2.0 * h)).collect())
                })?;
                let covector = &omega_t * nalgebra::DVector::from_vec(lift.generator(t, &image));
                total += w * covector.iter().zip(&pushed).map(|(a, b)| a * b).sum::<f64>();
            }
            Ok(total)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(values.iter().zip(&u_weights).map(|(v, w)| v * w).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{hamiltonian_vector_field, Scheme, VectorField};
    use crate::fields;
    use crate::flux::translation_loop;
    use crate::sampling::random_points;

    fn lifted_samples(m: &ModelManifold, count: usize) -> Vec<LiftedPoint> {
        random_points(m, count, 21)
            .into_iter()
            .enumerate()
            .map(|(i, p)| LiftedPoint::new(p, 1.0 + 0.37 * i as f64).unwrap())
            .collect()
    }

    #[test]
    fn form_is_antisymmetric_and_nondegenerate() {
        for a in [1.0, 2.5] {
            let m = ModelManifold::product_torus(vec![a, 3.0], 1.0).unwrap();
            let form = SymplectizationForm::new(&m);
            let mat = form.matrix();
            assert_eq!(mat.clone() + mat.transpose(), DMatrix::zeros(6, 6));
            assert!((form.determinant() - (3.0 * a).powi(2)).abs() < 1e-10);
        }
    }

    #[test]
    fn rotation_factor_examples() {
        let m = ModelManifold::standard_torus(1);
        let p = m.canonicalize(&[0.1, 0.2, 0.3]).unwrap();
        let reeb = Isotopy::unit(VectorField::reeb(&m, 1.0), 10);
        assert!((rotation_factor(&reeb, &p, 0.7, 8).unwrap() - 0.7).abs() < 1e-14);
        assert_eq!(rotation_factor(&reeb, &p, 0.0, 8).unwrap(), 0.0);
        let h = fields::pendulum_integral(&m, 0);
        let horizontal = Isotopy::unit(hamiltonian_vector_field(&m, &h), 50);
        assert!(rotation_factor(&horizontal, &p, 1.0, 8).unwrap().abs() < 1e-14);
    }

    #[test]
    fn lift_examples() {
        let m = ModelManifold::standard_torus(1);
        let lp = LiftedPoint::new(m.canonicalize(&[0.1, 0.2, 0.3]).unwrap(), 1.0).unwrap();
        let zero = lift_isotopy(&Isotopy::unit(VectorField::zero(&m), 4));
        assert_eq!(zero.time_one(&lp).unwrap(), lp);
        let reeb = lift_isotopy(&Isotopy::unit(VectorField::reeb(&m, 1.0), 10));
        let image = reeb.at(0.4, &lp).unwrap();
        assert!((image.base_point.theta() - 0.5).abs() < 1e-14);
        assert!((image.u - 0.6).abs() < 1e-14);
        let u_wrap = LiftedPoint::new(lp.base_point.clone(), -0.5).unwrap();
        assert!((u_wrap.u - (TAU - 0.5)).abs() < 1e-15);
    }

    #[test]
    fn lifted_hamiltonian_examples() {
        let m = ModelManifold::standard_torus(1);
        let z = [0.1, 0.2, 0.3, 1.5];
        let h = fields::pendulum_integral(&m, 0);
        let iso = Isotopy::unit(hamiltonian_vector_field(&m, &h), 4);
        let lifted = lift_hamiltonian(&h, &iso);
        assert!((lifted.value(0.0, &z) - h.value(0.0, &z[..3])).abs() < 1e-14);

        // F = cθ + bump generates η(X) = c.
        let c = 0.3;
        let f = fields::coordinate(&m, 0).scale(c).add(&fields::bump_hamiltonian(&m, &[0.5, 0.5], 0.05, 0.3, 0.5).unwrap());
        let iso = Isotopy::unit(hamiltonian_vector_field(&m, &f), 4);
        let lifted = lift_hamiltonian(&f, &iso);
        for level in [0.0, 1.0, 4.0] {
            let section = restrict_to_section(&lifted, level);
            for p in random_points(&m, 20, 3) {
                let expected = f.value(0.0, p.coords()) + c * level;
                assert!((section.value(0.0, p.coords()) - expected).abs() <= 1e-12);
            }
        }
        let zero = lift_hamiltonian(&ScalarField::constant(3, 0.0), &Isotopy::unit(VectorField::zero(&m), 1));
        assert_eq!(zero.value(0.0, &z), 0.0);
    }

    #[test]
    fn lifted_generator_is_hamiltonian_for_lifted_function() {
        let m = ModelManifold::product_torus(vec![2.0], 1.0).unwrap();
        let c = -0.4;
        let f = fields::coordinate(&m, 0).scale(c).add(&fields::sine(&m, 1, 1.0).scale(0.2));
        let iso = Isotopy::unit(hamiltonian_vector_field(&m, &f), 4);
        let lift = lift_isotopy(&iso);
        let lifted = lift_hamiltonian(&f, &iso);
        let form = SymplectizationForm::new(&m);
        let omega = form.matrix();
        for lp in lifted_samples(&m, 10) {
            let x = nalgebra::DVector::from_vec(lift.generator(0.0, &lp));
            let contracted = omega.transpose() * x;
            let grad = lifted.gradient(0.0, &lp.coords(), FiniteDifference::richardson(1e-4));
            for (a, b) in contracted.iter().zip(&grad) {
                assert!((a - b).abs() < 1e-8, "{contracted:?} vs {grad:?}");
            }
        }
    }

    #[test]
    fn identity_and_reeb_lifts_are_symplectic() {
        let m = ModelManifold::standard_torus(1);
        let samples = lifted_samples(&m, 10);
        let id = verify_symplectic(&m, |lp| Ok(lp.clone()), &samples, FiniteDifference::default()).unwrap();
        assert!(id.max_residual <= 1e-9);
        let reeb = lift_isotopy(&Isotopy::unit(VectorField::reeb(&m, 0.7), 10));
        let r = verify_symplectic(&m, |lp| reeb.time_one(lp), &samples, FiniteDifference::default()).unwrap();
        assert!(r.max_residual <= 1e-6);
        assert!(verify_symplectic(&m, |lp| Ok(lp.clone()), &[], FiniteDifference::default()).is_err());
    }

    #[test]
    fn non_constant_vertical_speed_breaks_symplecticity() {
        // η(X) varying in space: the lift is not symplectic.
        let m = ModelManifold::standard_torus(1);
        let f = fields::coordinate(&m, 0).mul(&fields::sine(&m, 1, 1.0)).scale(0.3);
        let iso = Isotopy::with_steps(hamiltonian_vector_field(&m, &f), 0.0, 0.2, 20, Scheme::Rk4).unwrap();
        let lift = lift_isotopy(&iso);
        let r = verify_symplectic(&m, |lp| lift.time_one(lp), &lifted_samples(&m, 6), FiniteDifference::default()).unwrap();
        assert!(r.max_residual > 1e-3);
    }

    #[test]
    fn mixed_cycles_and_fiber_flux() {
        let m = ModelManifold::product_torus(vec![1.5], 2.0).unwrap();
        for i in 0..3 {
            let gamma = Cycle::coordinate(&m, i);
            let period = mixed_cycle_period(&m, &gamma, 16).unwrap();
            let predicted = mixed_cycle_prediction(&m, &gamma, 16).unwrap();
            assert!((period - predicted).abs() < 1e-12);
        }
        assert!((mixed_cycle_period(&m, &Cycle::coordinate(&m, 0), 16).unwrap() - 2.0 * TAU).abs() < 1e-12);

        let lp = LiftedPoint::new(m.canonicalize(&[0.3, 0.1, 0.6]).unwrap(), 0.2).unwrap();
        let reeb_loop = lift_isotopy(&translation_loop(&m, 0, 8).unwrap());
        let flux = lifted_fiber_flux(&reeb_loop, &lp, 4, 4, FiniteDifference::default()).unwrap();
        assert!((flux - TAU * 2.0).abs() < 1e-8, "{flux}");
        let x_loop = lift_isotopy(&translation_loop(&m, 1, 8).unwrap());
        assert!(lifted_fiber_flux(&x_loop, &lp, 4, 4, FiniteDifference::default()).unwrap().abs() < 1e-8);
    }
}
