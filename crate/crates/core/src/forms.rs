//! Scalar fields, 1-forms and 2-forms on the models, the map
//! `Ĩ = ω + η⊗η` with its inverse, and the volume check for `η∧ωⁿ`.
//!
//! Covector coefficients use the coordinate order `(θ, x₁..xₙ, y₁..yₙ)` of
//! [`crate::manifold`]. Evaluators receive raw coordinate slices: the flow
//! and finite-difference code may probe slightly outside the fundamental
//! domain, so fields must either be periodic or only be used away from the
//! seams.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::manifold::{ModelManifold, Point, TangentVector};

pub type ValueFn = dyn Fn(f64, &[f64]) -> f64 + Send + Sync;
pub type GradientFn = dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync;

/// Central finite differences, optionally refined by Richardson
/// extrapolation over the steps `step, step/2, …, step/2^levels`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FiniteDifference {
    pub step: f64,
    /// Extrapolation levels; each one removes the next even power of the
    /// step from the error.
    pub levels: usize,
}

impl Default for FiniteDifference {
    fn default() -> Self {
        Self::central(1e-5)
    }
}

impl FiniteDifference {
    pub fn central(step: f64) -> Self {
        Self { step, levels: 0 }
    }

    /// One extrapolation level: fourth-order accurate.
    pub fn richardson(step: f64) -> Self {
        Self { step, levels: 1 }
    }

    pub fn extrapolated(step: f64, levels: usize) -> Self {
        Self { step, levels }
    }

    /// Extrapolate the vector-valued central difference `central(h)` to
    /// `h → 0`.
    pub fn extrapolate<E, F>(&self, mut central: F) -> std::result::Result<Vec<f64>, E>
    where
        F: FnMut(f64) -> std::result::Result<Vec<f64>, E>,
    {
        // Richardson tableau, one row per step size.
        let mut prev: Vec<Vec<f64>> = Vec::new();
        let mut h = self.step;
        for _ in 0..=self.levels {
            let mut row = vec![central(h)?];
            let mut factor = 4.0;
            for below in &prev {
                let last = row.last().expect("row starts non-empty");
                let next = last.iter().zip(below).map(|(a, b)| (factor * a - b) / (factor - 1.0)).collect();
                row.push(next);
                factor *= 4.0;
            }
            prev = row;
            h *= 0.5;
        }
        Ok(prev.pop().unwrap_or_default())
    }

    /// Derivative of a scalar function of one variable at 0.
    pub fn derivative<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        let result: std::result::Result<Vec<f64>, ()> =
            self.extrapolate(|h| Ok(vec![(f(h) - f(-h)) / (2.0 * h)]));
        result.map(|v| v[0]).unwrap_or(f64::NAN)
    }
}

/// Time-dependent real function on the manifold.
#[derive(Clone)]
pub struct ScalarField {
    dim: usize,
    value: Arc<ValueFn>,
    gradient: Option<Arc<GradientFn>>,
    reeb_invariant: bool,
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarField")
            .field("dim", &self.dim)
            .field("analytic_gradient", &self.gradient.is_some())
            .field("reeb_invariant", &self.reeb_invariant)
            .finish()
    }
}

impl ScalarField {
    pub fn new<F>(dim: usize, value: F) -> Self
    where
        F: Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
    {
        Self {
            dim,
            value: Arc::new(value),
            gradient: None,
            reeb_invariant: false,
        }
    }

    pub fn with_gradient<G>(mut self, gradient: G) -> Self
    where
        G: Fn(f64, &[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        self.gradient = Some(Arc::new(gradient));
        self
    }

    /// Mark the field as independent of `θ`.
    pub fn reeb_invariant(mut self) -> Self {
        self.reeb_invariant = true;
        self
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        Self::new(dim, move |_, _| c)
            .with_gradient(move |_, z| vec![0.0; z.len()])
            .reeb_invariant()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_reeb_invariant(&self) -> bool {
        self.reeb_invariant
    }

    pub fn has_analytic_gradient(&self) -> bool {
        self.gradient.is_some()
    }

    pub fn value(&self, t: f64, coords: &[f64]) -> f64 {
        (self.value)(t, coords)
    }

    pub fn value_at(&self, t: f64, p: &Point) -> f64 {
        (self.value)(t, p.coords())
    }

    /// Analytic gradient when available, central differences otherwise.
    pub fn gradient(&self, t: f64, coords: &[f64], fd: FiniteDifference) -> Vec<f64> {
        match &self.gradient {
            Some(g) => g(t, coords),
            None => self.fd_gradient(t, coords, fd),
        }
    }

    /// Central-difference gradient, ignoring any analytic gradient.
    pub fn fd_gradient(&self, t: f64, coords: &[f64], fd: FiniteDifference) -> Vec<f64> {
        let mut probe = coords.to_vec();
        (0..coords.len())
            .map(|i| {
                fd.derivative(|h| {
                    probe[i] = coords[i] + h;
                    let v = (self.value)(t, &probe);
                    probe[i] = coords[i];
                    v
                })
            })
            .collect()
    }

    pub fn scale(&self, c: f64) -> Self {
        let value = self.value.clone();
        let mut out = Self::new(self.dim, move |t, z| c * value(t, z));
        if let Some(g) = self.gradient.clone() {
            out = out.with_gradient(move |t, z| g(t, z).into_iter().map(|v| c * v).collect());
        }
        out.reeb_invariant = self.reeb_invariant;
        out
    }

    pub fn add(&self, other: &ScalarField) -> Self {
        Self::sum(&[self.clone(), other.clone()])
    }

    /// Pointwise sum; keeps an analytic gradient when every term has one.
    pub fn sum(fields: &[ScalarField]) -> Self {
        let dim = fields.first().map_or(0, |f| f.dim);
        let values: Vec<Arc<ValueFn>> = fields.iter().map(|f| f.value.clone()).collect();
        let mut out = Self::new(dim, move |t, z| values.iter().map(|v| v(t, z)).sum());
        if let Some(grads) = fields
            .iter()
            .map(|f| f.gradient.clone())
            .collect::<Option<Vec<_>>>()
        {
            out = out.with_gradient(move |t, z| {
                let mut acc = vec![0.0; z.len()];
                for g in &grads {
                    for (a, v) in acc.iter_mut().zip(g(t, z)) {
                        *a += v;
                    }
                }
                acc
            });
        }
        out.reeb_invariant = fields.iter().all(|f| f.reeb_invariant);
        out
    }

    /// Pointwise product with the product rule for gradients.
    pub fn mul(&self, other: &ScalarField) -> Self {
        let (fa, fb) = (self.value.clone(), other.value.clone());
        let mut out = Self::new(self.dim, move |t, z| fa(t, z) * fb(t, z));
        if let (Some(ga), Some(gb)) = (self.gradient.clone(), other.gradient.clone()) {
            let (fa, fb) = (self.value.clone(), other.value.clone());
            out = out.with_gradient(move |t, z| {
                let (a, b) = (fa(t, z), fb(t, z));
                ga(t, z)
                    .into_iter()
                    .zip(gb(t, z))
                    .map(|(da, db)| da * b + a * db)
                    .collect()
            });
        }
        out.reeb_invariant = self.reeb_invariant && other.reeb_invariant;
        out
    }

    /// Largest `|∂H/∂θ|` over `samples` at time `t`.
    pub fn reeb_derivative_max(&self, t: f64, samples: &[Point], fd: FiniteDifference) -> f64 {
        samples
            .iter()
            .map(|p| self.gradient(t, p.coords(), fd)[0].abs())
            .fold(0.0, f64::max)
    }
}

/// Anything that yields a covector at a point.
pub trait CovectorField: Sync {
    fn dim(&self) -> usize;
    fn covector(&self, p: &Point) -> Result<Vec<f64>>;
}

type CovectorFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;

#[derive(Clone)]
pub struct OneForm {
    dim: usize,
    coefficients: Arc<CovectorFn>,
    closed: bool,
}

impl fmt::Debug for OneForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OneForm")
            .field("dim", &self.dim)
            .field("closed", &self.closed)
            .finish()
    }
}

impl OneForm {
    pub fn new<F>(dim: usize, coefficients: F, closed: bool) -> Self
    where
        F: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        Self {
            dim,
            coefficients: Arc::new(coefficients),
            closed,
        }
    }

    pub fn constant(coefficients: Vec<f64>) -> Self {
        let dim = coefficients.len();
        Self::new(dim, move |_| coefficients.clone(), true)
    }

    pub fn eta(m: &ModelManifold) -> Self {
        Self::constant(m.eta())
    }

    pub fn is_closed_hint(&self) -> bool {
        self.closed
    }

    pub fn at(&self, p: &Point) -> Vec<f64> {
        (self.coefficients)(p.coords())
    }

    pub fn at_coords(&self, coords: &[f64]) -> Vec<f64> {
        (self.coefficients)(coords)
    }

    /// `α(X)` at `p`.
    pub fn apply(&self, p: &Point, x: &TangentVector) -> f64 {
        dot(&self.at(p), x.components())
    }
}

impl CovectorField for OneForm {
    fn dim(&self) -> usize {
        self.dim
    }

    fn covector(&self, p: &Point) -> Result<Vec<f64>> {
        Ok(self.at(p))
    }
}

type MatrixFn = dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync;

#[derive(Clone)]
pub struct TwoForm {
    dim: usize,
    matrix: Arc<MatrixFn>,
}

impl fmt::Debug for TwoForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TwoForm").field("dim", &self.dim).finish()
    }
}

impl TwoForm {
    /// Constant form `Σ c (dz_i ∧ dz_j)` from `(i, j, c)` triples.
    pub fn from_pairs(dim: usize, pairs: &[(usize, usize, f64)]) -> Self {
        let mut w = DMatrix::zeros(dim, dim);
        for &(i, j, c) in pairs {
            w[(i, j)] += c;
            w[(j, i)] -= c;
        }
        Self {
            dim,
            matrix: Arc::new(move |_| w.clone()),
        }
    }

    pub fn omega(m: &ModelManifold) -> Self {
        let pairs: Vec<_> = (0..m.n())
            .map(|k| (m.x_index(k), m.y_index(k), m.weights()[k]))
            .collect();
        Self::from_pairs(m.dim(), &pairs)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn at(&self, p: &Point) -> DMatrix<f64> {
        (self.matrix)(p.coords())
    }

    /// `w(u, v)` at `p`.
    pub fn apply(&self, p: &Point, u: &[f64], v: &[f64]) -> f64 {
        let w = self.at(p);
        let (u, v) = (DVector::from_column_slice(u), DVector::from_column_slice(v));
        (u.transpose() * w * v)[(0, 0)]
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Exterior derivative of `scalar` at time `t`.
pub fn d(scalar: &ScalarField, t: f64, fd: FiniteDifference) -> OneForm {
    let field = scalar.clone();
    OneForm::new(scalar.dim(), move |z| field.gradient(t, z, fd), true)
}

/// `(ι_X w)_j = Σ_i X_i w_ij` at `p`.
pub fn interior_product(x: &TangentVector, w: &TwoForm, p: &Point) -> Vec<f64> {
    let mat = w.at(p);
    let xv = DVector::from_column_slice(x.components());
    (mat.transpose() * xv).as_slice().to_vec()
}

/// `Ĩ(X) = ι_X ω + η(X) η` at `p`.
pub fn tilde_i(m: &ModelManifold, x: &TangentVector, p: &Point) -> Vec<f64> {
    let mut out = interior_product(x, &TwoForm::omega(m), p);
    let eta = m.eta();
    let eta_x = dot(&eta, x.components());
    for (o, e) in out.iter_mut().zip(&eta) {
        *o += eta_x * e;
    }
    out
}

/// Unique `X` with `Ĩ(X) = α`.
pub fn tilde_i_inverse(m: &ModelManifold, alpha: &[f64], _p: &Point) -> Result<TangentVector> {
    TangentVector::new(sharp(m, alpha)?)
}

pub(crate) fn sharp(m: &ModelManifold, alpha: &[f64]) -> Result<Vec<f64>> {
    if alpha.len() != m.dim() {
        return Err(Error::domain(format!(
            "covector has {} components, expected {}",
            alpha.len(),
            m.dim()
        )));
    }
    if alpha.iter().any(|a| !a.is_finite()) {
        return Err(Error::domain("non-finite covector"));
    }
    let a = DVector::from_column_slice(alpha);
    Ok((m.sharp_matrix() * a).as_slice().to_vec())
}

fn pfaffian(a: &DMatrix<f64>) -> f64 {
    let size = a.nrows();
    if size == 0 {
        return 1.0;
    }
    if size % 2 == 1 {
        return 0.0;
    }
    let mut total = 0.0;
    for j in 1..size {
        if a[(0, j)] == 0.0 {
            continue;
        }
        let keep: Vec<usize> = (1..size).filter(|&k| k != j).collect();
        let minor = DMatrix::from_fn(keep.len(), keep.len(), |r, c| a[(keep[r], keep[c])]);
        let sign = if j % 2 == 1 { 1.0 } else { -1.0 };
        total += sign * a[(0, j)] * pfaffian(&minor);
    }
    total
}

/// `(η∧ωⁿ / n!)` on the frame `(∂θ, ∂x₁, ∂y₁, …, ∂xₙ, ∂yₙ)` at `p`.
///
/// Its square equals `det(ω + η⊗η)`; on the product torus the value is
/// `Π aₖ`.
pub fn volume_density(m: &ModelManifold, p: &Point) -> f64 {
    let w = TwoForm::omega(m).at(p);
    let eta = m.eta();
    let mut frame = vec![0];
    for k in 0..m.n() {
        frame.push(m.x_index(k));
        frame.push(m.y_index(k));
    }
    let mut value = 0.0;
    for (pos, &i) in frame.iter().enumerate() {
        if eta[i] == 0.0 {
            continue;
        }
        let rest: Vec<usize> = frame.iter().copied().filter(|&k| k != i).collect();
        let minor = DMatrix::from_fn(rest.len(), rest.len(), |r, c| w[(rest[r], rest[c])]);
        let sign = if pos % 2 == 0 { 1.0 } else { -1.0 };
        value += sign * eta[i] * pfaffian(&minor);
    }
    value
}

#[derive(Debug, Clone, Serialize)]
pub struct VolumeReport {
    pub samples: usize,
    pub min_abs: f64,
    pub max_abs: f64,
    pub passed: bool,
}

/// Nondegeneracy of `η∧ωⁿ` over `samples`.
pub fn volume_check(m: &ModelManifold, samples: &[Point]) -> Result<VolumeReport> {
    if samples.is_empty() {
        return Err(Error::precondition("volume check needs at least one sample"));
    }
    let values: Vec<f64> = samples.iter().map(|p| volume_density(m, p).abs()).collect();
    let min_abs = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max_abs = values.iter().copied().fold(0.0, f64::max);
    Ok(VolumeReport {
        samples: samples.len(),
        min_abs,
        max_abs,
        passed: min_abs > 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn torus(a: f64) -> ModelManifold {
        ModelManifold::product_torus(vec![a], 1.0).unwrap()
    }

    #[test]
    fn d_of_constant_and_coordinate() {
        let m = torus(1.0);
        let p = m.canonicalize(&[0.3, 0.4, 0.5]).unwrap();
        assert_eq!(d(&ScalarField::constant(3, 2.0), 0.0, FiniteDifference::default()).at(&p), vec![0.0; 3]);
        let theta = ScalarField::new(3, |_, z| z[0]);
        let dtheta = d(&theta, 0.0, FiniteDifference::default()).at(&p);
        assert!((dtheta[0] - 1.0).abs() < 1e-10 && dtheta[1].abs() < 1e-12 && dtheta[2].abs() < 1e-12);
    }

    #[test]
    fn d_of_sine_matches_analytic_derivative() {
        let m = torus(1.0);
        let h = ScalarField::new(3, |_, z| (2.0 * PI * z[1]).sin());
        let p = m.canonicalize(&[0.0, 0.0, 0.0]).unwrap();
        let dh = d(&h, 0.0, FiniteDifference::default()).at(&p);
        assert!(dh[0].abs() < 1e-12);
        assert!((dh[1] - 2.0 * PI).abs() / (2.0 * PI) < 1e-9, "{dh:?}");
        assert!(dh[2].abs() < 1e-12);
        let rich = d(&h, 0.0, FiniteDifference::richardson(1e-3)).at(&p);
        assert!((rich[1] - 2.0 * PI).abs() < 1e-10);
    }

    #[test]
    fn interior_products_on_the_torus() {
        let m = torus(1.0);
        let p = m.canonicalize(&[0.1, 0.2, 0.3]).unwrap();
        let w = TwoForm::omega(&m);
        assert_eq!(interior_product(&m.reeb_vector(&p), &w, &p), vec![0.0; 3]);
        assert_eq!(interior_product(&TangentVector::basis(3, 1), &w, &p), vec![0.0, 0.0, 1.0]);
        assert_eq!(interior_product(&TangentVector::zero(3), &w, &p), vec![0.0; 3]);
    }

    #[test]
    fn tilde_i_examples() {
        let a = 2.5;
        let m = torus(a);
        let p = m.canonicalize(&[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(tilde_i(&m, &m.reeb_vector(&p), &p), vec![1.0, 0.0, 0.0]);
        assert_eq!(tilde_i(&m, &TangentVector::basis(3, 1), &p), vec![0.0, 0.0, a]);
        assert_eq!(tilde_i(&m, &TangentVector::basis(3, 2), &p), vec![0.0, -a, 0.0]);
    }

    #[test]
    fn tilde_i_inverse_examples() {
        let m = torus(1.0);
        let p = m.canonicalize(&[0.1, 0.2, 0.3]).unwrap();
        let xi = tilde_i_inverse(&m, &[1.0, 0.0, 0.0], &p).unwrap();
        assert!((xi.components()[0] - 1.0).abs() < 1e-15);
        let dx = tilde_i_inverse(&m, &[0.0, 0.0, 1.0], &p).unwrap();
        assert!((dx.components()[1] - 1.0).abs() < 1e-15 && dx.components()[2].abs() < 1e-15);
        assert_eq!(tilde_i_inverse(&m, &[0.0; 3], &p).unwrap().components(), &[0.0; 3]);
        assert!(tilde_i_inverse(&m, &[f64::NAN, 0.0, 0.0], &p).is_err());
    }

    #[test]
    fn pfaffian_small_cases() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 3.0, -3.0, 0.0]);
        assert_eq!(pfaffian(&a), 3.0);
        // Pf of the 4×4 block diag(J·a, J·b) = a·b
        let mut b = DMatrix::zeros(4, 4);
        b[(0, 1)] = 2.0;
        b[(1, 0)] = -2.0;
        b[(2, 3)] = 5.0;
        b[(3, 2)] = -5.0;
        assert_eq!(pfaffian(&b), 10.0);
    }

    #[test]
    fn volume_is_product_of_weights() {
        let m1 = torus(1.0);
        let m2 = torus(2.0);
        let p = m1.canonicalize(&[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(volume_density(&m1, &p), 1.0);
        assert_eq!(volume_density(&m2, &p), 2.0);
        let m3 = ModelManifold::product_torus(vec![1.5, 3.0], 1.0).unwrap();
        let q = m3.canonicalize(&[0.0; 5]).unwrap();
        assert!((volume_density(&m3, &q) - 4.5).abs() < 1e-14);
        assert!(volume_check(&m1, &[]).is_err());
        let report = volume_check(&m2, &[p]).unwrap();
        assert!(report.passed && report.min_abs == 2.0);
    }
}
