//! Weakly Hamiltonian vector fields, fixed-step flows and the checks built
//! on them.
//!
//! `X_H` is defined by `Ĩ(X_H) = dH`, hence `η(X_H) = ξ(H)` and
//! `ι_{X_H}ω = dH − ξ(H)η`. The alternative convention `η(X_H) = −ξ(H)` (same
//! horizontal part, reversed vertical part) is available through
//! [`SignConvention::ReversedVertical`].

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forms::{sharp, FiniteDifference, ScalarField};
use crate::manifold::{ModelManifold, Point};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignConvention {
    /// `Ĩ(X_H) = dH`: vertical speed `+∂H/∂θ`.
    #[default]
    Definitional,
    /// `η(X_H) = −ξ(H)`, `ι_{X_H}ω = dH − ξ(H)η`: vertical speed `−∂H/∂θ`.
    ReversedVertical,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    Rk4,
    Midpoint,
}

type FieldFn = dyn Fn(f64, &Point) -> Vec<f64> + Send + Sync;

/// Time-dependent vector field on a model.
#[derive(Clone)]
pub struct VectorField {
    manifold: ModelManifold,
    eval: Arc<FieldFn>,
    /// Chart the field is supported in, when known.
    pub support_hint: Option<usize>,
}

impl fmt::Debug for VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VectorField")
            .field("dim", &self.manifold.dim())
            .field("support_hint", &self.support_hint)
            .finish()
    }
}

impl VectorField {
    pub fn new<F>(m: &ModelManifold, eval: F) -> Self
    where
        F: Fn(f64, &Point) -> Vec<f64> + Send + Sync + 'static,
    {
        Self {
            manifold: m.clone(),
            eval: Arc::new(eval),
            support_hint: None,
        }
    }

    pub fn constant(m: &ModelManifold, v: Vec<f64>) -> Self {
        Self::new(m, move |_, _| v.clone())
    }

    pub fn zero(m: &ModelManifold) -> Self {
        Self::constant(m, vec![0.0; m.dim()])
    }

    /// `c·ξ`.
    pub fn reeb(m: &ModelManifold, c: f64) -> Self {
        let mut v = vec![0.0; m.dim()];
        v[0] = c;
        Self::constant(m, v)
    }

    pub fn manifold(&self) -> &ModelManifold {
        &self.manifold
    }

    pub fn at(&self, t: f64, p: &Point) -> Vec<f64> {
        (self.eval)(t, p)
    }

    pub fn scaled(&self, c: f64) -> Self {
        let inner = self.eval.clone();
        let mut out = Self::new(&self.manifold, move |t, p| {
            inner(t, p).into_iter().map(|v| c * v).collect()
        });
        out.support_hint = self.support_hint;
        out
    }

    pub fn add(&self, other: &VectorField) -> Self {
        let (a, b) = (self.eval.clone(), other.eval.clone());
        Self::new(&self.manifold, move |t, p| {
            a(t, p).into_iter().zip(b(t, p)).map(|(x, y)| x + y).collect()
        })
    }

    /// `s ↦ X_{t0 + rate·s}` scaled by `rate`: the generator of the
    /// reparametrised isotopy `s ↦ φ_{t0 + rate·s}`.
    pub fn reparametrized<F, G>(&self, time_map: F, rate: G) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        G: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let inner = self.eval.clone();
        Self::new(&self.manifold, move |s, p| {
            let r = rate(s);
            if r == 0.0 {
                return vec![0.0; p.dim()];
            }
            inner(time_map(s), p).into_iter().map(|v| r * v).collect()
        })
    }
}

/// `X_H` with the default sign convention and finite-difference settings.
pub fn hamiltonian_vector_field(m: &ModelManifold, h: &ScalarField) -> VectorField {
    hamiltonian_vector_field_with(m, h, SignConvention::Definitional, FiniteDifference::default())
}

pub fn hamiltonian_vector_field_with(
    m: &ModelManifold,
    h: &ScalarField,
    convention: SignConvention,
    fd: FiniteDifference,
) -> VectorField {
    let (field, manifold) = (h.clone(), m.clone());
    VectorField::new(m, move |t, p| {
        let mut dh = field.gradient(t, p.coords(), fd);
        if convention == SignConvention::ReversedVertical {
            // Ĩ(X) = dH − 2ξ(H)η flips only the θ-component of X.
            dh[0] = -dh[0];
        }
        sharp(&manifold, &dh).unwrap_or_else(|_| vec![f64::NAN; dh.len()])
    })
}

/// Time-dependent generator integrated from `t_start` to `t_end` in
/// `steps` equal steps. `t_end < t_start` integrates backwards, which
/// yields the inverse of the forward time-`(t_start..t_end)` map.
#[derive(Debug, Clone)]
pub struct Isotopy {
    pub generator: VectorField,
    pub t_start: f64,
    pub t_end: f64,
    steps: usize,
    pub scheme: Scheme,
}

impl Isotopy {
    /// Requires `step` to divide `t_end − t_start` to within `1e-9`.
    pub fn new(generator: VectorField, t_start: f64, t_end: f64, step: f64, scheme: Scheme) -> Result<Self> {
        if !(step.is_finite() && step > 0.0) {
            return Err(Error::domain(format!("step must be positive, got {step}")));
        }
        let span = (t_end - t_start).abs();
        let steps = (span / step).round();
        if (steps * step - span).abs() > 1e-9 * span.max(1.0) {
            return Err(Error::domain(format!(
                "step {step} does not divide the interval [{t_start}, {t_end}]"
            )));
        }
        Self::with_steps(generator, t_start, t_end, steps as usize, scheme)
    }

    pub fn with_steps(generator: VectorField, t_start: f64, t_end: f64, steps: usize, scheme: Scheme) -> Result<Self> {
        if !(t_start.is_finite() && t_end.is_finite()) {
            return Err(Error::domain("non-finite time interval"));
        }
        let steps = if t_start == t_end { 0 } else { steps.max(1) };
        Ok(Self {
            generator,
            t_start,
            t_end,
            steps,
            scheme,
        })
    }

    /// Unit-time isotopy on `[0, 1]`.
    pub fn unit(generator: VectorField, steps: usize) -> Self {
        Self::with_steps(generator, 0.0, 1.0, steps, Scheme::Rk4).expect("finite interval")
    }

    pub fn manifold(&self) -> &ModelManifold {
        self.generator.manifold()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Signed step size.
    pub fn step(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            (self.t_end - self.t_start) / self.steps as f64
        }
    }

    /// Same generator on `[t0, t1]` with (approximately) the same step size.
    pub fn restricted(&self, t0: f64, t1: f64) -> Self {
        let h = self.step().abs();
        let steps = if h > 0.0 {
            ((t1 - t0).abs() / h).round().max(1.0) as usize
        } else {
            1
        };
        Self {
            generator: self.generator.clone(),
            t_start: t0,
            t_end: t1,
            steps,
            scheme: self.scheme,
        }
    }

    /// The inverse isotopy endpoint: integrate from `t_end` back to `t_start`.
    pub fn reversed(&self) -> Self {
        Self {
            t_start: self.t_end,
            t_end: self.t_start,
            ..self.clone()
        }
    }

    /// `b` after `a`, both on `[0, 1]`, as one isotopy on `[0, 1]`.
    ///
    /// Each half is run through `τ(u) = u − sin(2πu)/2π`, whose derivative
    /// vanishes at the junction, so the generator stays smooth and the
    /// time-one map and flux are unchanged.
    pub fn concatenate(a: &Isotopy, b: &Isotopy) -> Result<Self> {
        for iso in [a, b] {
            if iso.t_start != 0.0 || iso.t_end != 1.0 {
                return Err(Error::precondition("concatenation expects isotopies on [0, 1]"));
            }
        }
        let tau = |u: f64| u - (2.0 * std::f64::consts::PI * u).sin() / (2.0 * std::f64::consts::PI);
        let tau_rate = |u: f64| 1.0 - (2.0 * std::f64::consts::PI * u).cos();
        let (fa, fb) = (a.generator.eval.clone(), b.generator.eval.clone());
        let generator = VectorField::new(a.manifold(), move |t, p| {
            let (f, u) = if t <= 0.5 { (&fa, 2.0 * t) } else { (&fb, 2.0 * t - 1.0) };
            let rate = 2.0 * tau_rate(u);
            if rate == 0.0 {
                return vec![0.0; p.dim()];
            }
            f(tau(u), p).into_iter().map(|v| rate * v).collect()
        });
        Self::with_steps(generator, 0.0, 1.0, 2 * (a.steps + b.steps), a.scheme)
    }
}

/// Endpoint, optional trajectory and the largest per-step RK4 − midpoint
/// update difference.
#[derive(Debug, Clone)]
pub struct FlowResult {
    pub endpoint: Point,
    pub trajectory: Option<Vec<(f64, Point)>>,
    pub max_step_residual: f64,
}

fn stage(gen: &VectorField, t: f64, p: &Point, offset: &[f64]) -> Result<Vec<f64>> {
    let m = gen.manifold();
    let raw: Vec<f64> = p.coords().iter().zip(offset).map(|(a, b)| a + b).collect();
    let (q, k) = m
        .canonicalize_with_crossings(&raw)
        .map_err(|_| Error::Integration {
            time: t,
            reason: "state became non-finite".into(),
        })?;
    let mut v = gen.at(t, &q);
    if v.len() != m.dim() || v.iter().any(|c| !c.is_finite()) {
        return Err(Error::Integration {
            time: t,
            reason: "vector field returned non-finite values".into(),
        });
    }
    m.tangent_to_raw_chart(&mut v, k);
    Ok(v)
}

fn axpy(a: f64, x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| a * v).collect()
}

/// One step from `(t, p)`; returns the increment and the RK4 − midpoint gap.
fn step(gen: &VectorField, scheme: Scheme, t: f64, h: f64, p: &Point) -> Result<(Vec<f64>, f64)> {
    let zero = vec![0.0; p.dim()];
    let k1 = stage(gen, t, p, &zero)?;
    let k2 = stage(gen, t + 0.5 * h, p, &axpy(0.5 * h, &k1))?;
    match scheme {
        Scheme::Midpoint => Ok((axpy(h, &k2), 0.0)),
        Scheme::Rk4 => {
            let k3 = stage(gen, t + 0.5 * h, p, &axpy(0.5 * h, &k2))?;
            let k4 = stage(gen, t + h, p, &axpy(h, &k3))?;
            let mut residual: f64 = 0.0;
            let inc = (0..p.dim())
                .map(|i| {
                    let avg = (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) / 6.0;
                    residual = residual.max((h * (avg - k2[i])).abs());
                    h * avg
                })
                .collect();
            Ok((inc, residual))
        }
    }
}

fn integrate(iso: &Isotopy, p: &Point, record: bool) -> Result<FlowResult> {
    let m = iso.manifold();
    if p.dim() != m.dim() {
        return Err(Error::domain("point dimension does not match the isotopy"));
    }
    let h = iso.step();
    let mut state = p.clone();
    let mut max_residual: f64 = 0.0;
    let mut trajectory = record.then(|| vec![(iso.t_start, p.clone())]);
    for i in 0..iso.steps {
        let t = iso.t_start + h * i as f64;
        let (inc, residual) = step(&iso.generator, iso.scheme, t, h, &state)?;
        max_residual = max_residual.max(residual);
        state = m.offset(&state, &inc).map_err(|_| Error::Integration {
            time: t + h,
            reason: "state became non-finite".into(),
        })?;
        if let Some(traj) = trajectory.as_mut() {
            let time = if i + 1 == iso.steps { iso.t_end } else { t + h };
            traj.push((time, state.clone()));
        }
    }
    Ok(FlowResult {
        endpoint: state,
        trajectory,
        max_step_residual: max_residual,
    })
}

/// Integrate the isotopy from `p`, canonicalizing after each step.
pub fn flow(iso: &Isotopy, p: &Point) -> Result<FlowResult> {
    integrate(iso, p, false)
}

pub fn flow_with_trajectory(iso: &Isotopy, p: &Point) -> Result<FlowResult> {
    integrate(iso, p, true)
}

/// Endpoint only.
pub fn flow_point(iso: &Isotopy, p: &Point) -> Result<Point> {
    integrate(iso, p, false).map(|r| r.endpoint)
}

/// Positions at each of `nodes` (increasing or decreasing, starting at
/// `nodes[0]`), integrating piecewise with the isotopy's step size.
pub fn flow_at_nodes(iso: &Isotopy, p: &Point, nodes: &[f64]) -> Result<Vec<Point>> {
    let mut out = Vec::with_capacity(nodes.len());
    let mut state = p.clone();
    if let Some(&first) = nodes.first() {
        if first != iso.t_start {
            state = flow_point(&iso.restricted(iso.t_start, first), &state)?;
        }
        out.push(state.clone());
    }
    for pair in nodes.windows(2) {
        state = flow_point(&iso.restricted(pair[0], pair[1]), &state)?;
        out.push(state.clone());
    }
    Ok(out)
}

/// Central-difference Jacobian of `map` at `p`, in the charts of `p` and
/// `map(p)`.
pub fn map_jacobian<F>(m: &ModelManifold, map: F, p: &Point, fd: FiniteDifference) -> Result<DMatrix<f64>>
where
    F: Fn(&Point) -> Result<Point>,
{
    let dim = m.dim();
    let center = map(p)?;
    let mut jac = DMatrix::zeros(dim, dim);
    let column = |j: usize, h: f64| -> Result<Vec<f64>> {
        let mut e = vec![0.0; dim];
        e[j] = h;
        let plus = map(&m.offset(p, &e)?)?;
        e[j] = -h;
        let minus = map(&m.offset(p, &e)?)?;
        let (dp, dm) = (m.displacement(&center, &plus), m.displacement(&center, &minus));
        Ok(dp.iter().zip(&dm).map(|(a, b)| (a - b) / (2.0 * h)).collect())
    };
    for j in 0..dim {
        let col = fd.extrapolate(|h| column(j, h))?;
        for i in 0..dim {
            jac[(i, j)] = col[i];
        }
    }
    Ok(jac)
}

/// Central-difference derivative `DX` of the generator at `(t, q)`.
fn field_jacobian(gen: &VectorField, t: f64, q: &Point, fd: FiniteDifference) -> Result<DMatrix<f64>> {
    let m = gen.manifold();
    let dim = m.dim();
    let mut jac = DMatrix::zeros(dim, dim);
    for j in 0..dim {
        let col = fd.extrapolate(|h| -> Result<Vec<f64>> {
            let mut e = vec![0.0; dim];
            e[j] = h;
            let plus = stage(gen, t, q, &e)?;
            e[j] = -h;
            let minus = stage(gen, t, q, &e)?;
            Ok(plus.iter().zip(&minus).map(|(a, b)| (a - b) / (2.0 * h)).collect())
        })?;
        for i in 0..dim {
            jac[(i, j)] = col[i];
        }
    }
    Ok(jac)
}

fn transport_columns(m: &ModelManifold, mat: &mut DMatrix<f64>, k: i64, to_raw: bool) {
    if k == 0 {
        return;
    }
    for mut col in mat.column_iter_mut() {
        let mut v: Vec<f64> = col.iter().copied().collect();
        if to_raw {
            m.tangent_to_raw_chart(&mut v, k);
        } else {
            m.tangent_from_raw_chart(&mut v, k);
        }
        col.copy_from_slice(&v);
    }
}

/// One step of the scheme applied to the state together with its tangent
/// map; returns the increments of both.
fn tangent_step(
    gen: &VectorField,
    scheme: Scheme,
    t: f64,
    h: f64,
    p: &Point,
    jac: &DMatrix<f64>,
    fd: FiniteDifference,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let m = gen.manifold();
    let eval = |time: f64, offset: &[f64], tangent: &DMatrix<f64>| -> Result<(Vec<f64>, DMatrix<f64>)> {
        let raw: Vec<f64> = p.coords().iter().zip(offset).map(|(a, b)| a + b).collect();
        let (q, k) = m.canonicalize_with_crossings(&raw).map_err(|_| Error::Integration {
            time,
            reason: "state became non-finite".into(),
        })?;
        let v = stage(gen, time, p, offset)?;
        let mut tangent = tangent.clone();
        transport_columns(m, &mut tangent, k, false);
        let mut dj = field_jacobian(gen, time, &q, fd)? * tangent;
        transport_columns(m, &mut dj, k, true);
        Ok((v, dj))
    };
    let zero = vec![0.0; p.dim()];
    let (k1, j1) = eval(t, &zero, jac)?;
    let (k2, j2) = eval(t + 0.5 * h, &axpy(0.5 * h, &k1), &(jac + &j1 * (0.5 * h)))?;
    match scheme {
        Scheme::Midpoint => Ok((axpy(h, &k2), j2 * h)),
        Scheme::Rk4 => {
            let (k3, j3) = eval(t + 0.5 * h, &axpy(0.5 * h, &k2), &(jac + &j2 * (0.5 * h)))?;
            let (k4, j4) = eval(t + h, &axpy(h, &k3), &(jac + &j3 * h))?;
            let inc = (0..p.dim())
                .map(|i| h * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) / 6.0)
                .collect();
            let dj = (j1 + j2 * 2.0 + j3 * 2.0 + j4) * (h / 6.0);
            Ok((inc, dj))
        }
    }
}

/// Endpoint of the flow together with the Jacobian of the discrete flow map,
/// obtained by integrating the variational equation `J' = DX·J` with the
/// same scheme and steps (so `J` is the derivative of the numerical map,
/// up to the error in `DX`).
pub fn flow_with_jacobian(iso: &Isotopy, p: &Point, fd: FiniteDifference) -> Result<(Point, DMatrix<f64>)> {
    let m = iso.manifold();
    let h = iso.step();
    let mut state = p.clone();
    let mut jac = DMatrix::identity(m.dim(), m.dim());
    for i in 0..iso.steps {
        let t = iso.t_start + h * i as f64;
        let (inc, dj) = tangent_step(&iso.generator, iso.scheme, t, h, &state, &jac, fd)?;
        let raw: Vec<f64> = state.coords().iter().zip(&inc).map(|(a, b)| a + b).collect();
        let (next, k) = m.canonicalize_with_crossings(&raw).map_err(|_| Error::Integration {
            time: t + h,
            reason: "state became non-finite".into(),
        })?;
        jac += dj;
        transport_columns(m, &mut jac, k, false);
        state = next;
    }
    Ok((state, jac))
}

/// How the differential of the time-one map is approximated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum JacobianMethod {
    /// Central differences of the time-one map.
    MapDifferences(FiniteDifference),
    /// Variational equation along the numerical flow, with `DX` from
    /// central differences of the generator.
    Variational(FiniteDifference),
}

impl Default for JacobianMethod {
    fn default() -> Self {
        JacobianMethod::MapDifferences(FiniteDifference::default())
    }
}

/// Differential of the time-one map of `iso` at `p`.
pub fn time_one_jacobian(iso: &Isotopy, p: &Point, method: JacobianMethod) -> Result<DMatrix<f64>> {
    match method {
        JacobianMethod::MapDifferences(fd) => map_jacobian(iso.manifold(), |q| flow_point(iso, q), p, fd),
        JacobianMethod::Variational(fd) => flow_with_jacobian(iso, p, fd).map(|r| r.1),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConservationReport {
    pub samples: usize,
    /// `max |φ*η − η|` entrywise.
    pub eta_residual: f64,
    /// `max |φ*ω − ω|` entrywise.
    pub omega_residual: f64,
}

impl ConservationReport {
    pub fn max_residual(&self) -> f64 {
        self.eta_residual.max(self.omega_residual)
    }
}

/// Pullback residuals of `η` and `ω` under the endpoint map of `iso`.
pub fn conservation_check(
    m: &ModelManifold,
    iso: &Isotopy,
    samples: &[Point],
    method: JacobianMethod,
) -> Result<ConservationReport> {
    if samples.is_empty() {
        return Err(Error::precondition("conservation check needs samples"));
    }
    let w = m.omega_matrix();
    let eta = m.eta();
    let residuals = samples
        .par_iter()
        .map(|p| -> Result<(f64, f64)> {
            let jac = time_one_jacobian(iso, p, method)?;
            // (φ*η)_j = Σ_i η_i J_ij
            let mut eta_res: f64 = 0.0;
            for j in 0..m.dim() {
                let pulled: f64 = (0..m.dim()).map(|i| eta[i] * jac[(i, j)]).sum();
                eta_res = eta_res.max((pulled - eta[j]).abs());
            }
            let pulled_w = jac.transpose() * &w * &jac;
            let omega_res = (pulled_w - &w).amax();
            Ok((eta_res, omega_res))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConservationReport {
        samples: samples.len(),
        eta_residual: residuals.iter().map(|r| r.0).fold(0.0, f64::max),
        omega_residual: residuals.iter().map(|r| r.1).fold(0.0, f64::max),
    })
}

/// Leafwise bracket `{H,K} = Σ_j (1/a_j)(∂H/∂x_j ∂K/∂y_j − ∂H/∂y_j ∂K/∂x_j)`.
///
/// With this sign, `φ_H^ε ∘ φ_K^ε ∘ φ_H^{−ε} ∘ φ_K^{−ε} = id + ε² X_{H,K} + O(ε³)`.
pub fn poisson_bracket(m: &ModelManifold, h: &ScalarField, k: &ScalarField) -> ScalarField {
    poisson_bracket_with(m, h, k, FiniteDifference::default())
}

pub fn poisson_bracket_with(m: &ModelManifold, h: &ScalarField, k: &ScalarField, fd: FiniteDifference) -> ScalarField {
    let (h, k, manifold) = (h.clone(), k.clone(), m.clone());
    let invariant = h.is_reeb_invariant() && k.is_reeb_invariant();
    let field = ScalarField::new(m.dim(), move |t, z| {
        let (gh, gk) = (h.gradient(t, z, fd), k.gradient(t, z, fd));
        (0..manifold.n())
            .map(|j| {
                let (x, y) = (manifold.x_index(j), manifold.y_index(j));
                (gh[x] * gk[y] - gh[y] * gk[x]) / manifold.weights()[j]
            })
            .sum()
    });
    if invariant {
        field.reeb_invariant()
    } else {
        field
    }
}

/// Time-`eps` flow of `X_H` resolved with about `eps/step` RK4 steps.
fn short_flow(field: &VectorField, eps: f64, step: f64) -> Result<Isotopy> {
    let steps = (eps.abs() / step).ceil().max(1.0) as usize;
    Isotopy::with_steps(field.clone(), 0.0, eps, steps, Scheme::Rk4)
}

#[derive(Debug, Clone, Serialize)]
pub struct CommutatorSample {
    pub eps: f64,
    pub points: Vec<Vec<f64>>,
    /// `C_ε(p) − p` in the chart of `p`.
    pub displacements: Vec<Vec<f64>>,
    /// `ε² X_{H,K}(p)`.
    pub predicted: Vec<Vec<f64>>,
    pub max_displacement: f64,
    /// `max ‖C_ε(p) − p − ε² X_{H,K}(p)‖₂`.
    pub max_residual: f64,
}

/// Evaluate `C_ε = φ_H^ε ∘ φ_K^ε ∘ (φ_H^ε)⁻¹ ∘ (φ_K^ε)⁻¹` on `samples`.
pub fn commutator_flow(
    m: &ModelManifold,
    h: &ScalarField,
    k: &ScalarField,
    eps: f64,
    step: f64,
    samples: &[Point],
) -> Result<CommutatorSample> {
    if !(eps >= 0.0 && step > 0.0) {
        return Err(Error::domain("commutator needs eps ≥ 0 and step > 0"));
    }
    let xh = hamiltonian_vector_field(m, h);
    let xk = hamiltonian_vector_field(m, k);
    let bracket_field = hamiltonian_vector_field(m, &poisson_bracket(m, h, k));
    let (fh, fk) = (short_flow(&xh, eps, step)?, short_flow(&xk, eps, step)?);
    let (fh_inv, fk_inv) = (fh.reversed(), fk.reversed());
    let rows = samples
        .par_iter()
        .map(|p| -> Result<(Vec<f64>, Vec<f64>)> {
            let mut q = p.clone();
            if eps > 0.0 {
                for iso in [&fk_inv, &fh_inv, &fk, &fh] {
                    q = flow_point(iso, &q)?;
                }
            }
            let disp = m.displacement(p, &q);
            let predicted = bracket_field.at(0.0, p).into_iter().map(|v| eps * eps * v).collect();
            Ok((disp, predicted))
        })
        .collect::<Result<Vec<_>>>()?;
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut max_displacement: f64 = 0.0;
    let mut max_residual: f64 = 0.0;
    for (d, pr) in &rows {
        max_displacement = max_displacement.max(norm(d));
        let r: Vec<f64> = d.iter().zip(pr).map(|(a, b)| a - b).collect();
        max_residual = max_residual.max(norm(&r));
    }
    let (displacements, predicted) = rows.into_iter().unzip();
    Ok(CommutatorSample {
        eps,
        points: samples.iter().map(|p| p.coords().to_vec()).collect(),
        displacements,
        predicted,
        max_displacement,
        max_residual,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CommutatorOrderReport {
    pub eps: Vec<f64>,
    pub max_residual: Vec<f64>,
    pub max_displacement: Vec<f64>,
    /// Least-squares slope of `log max_residual` against `log ε`.
    pub slope: f64,
}

/// Residual of the `ε²` prediction over several `ε`; the flows use steps of
/// `eps · step_fraction`.
pub fn commutator_order(
    m: &ModelManifold,
    h: &ScalarField,
    k: &ScalarField,
    eps_values: &[f64],
    step_fraction: f64,
    samples: &[Point],
) -> Result<CommutatorOrderReport> {
    let runs = eps_values
        .iter()
        .map(|&eps| commutator_flow(m, h, k, eps, eps * step_fraction, samples))
        .collect::<Result<Vec<_>>>()?;
    let max_residual: Vec<f64> = runs.iter().map(|r| r.max_residual).collect();
    let slope = loglog_slope(eps_values, &max_residual);
    Ok(CommutatorOrderReport {
        eps: eps_values.to_vec(),
        max_displacement: runs.iter().map(|r| r.max_displacement).collect(),
        max_residual,
        slope,
    })
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = x.iter().zip(y).map(|(a, b)| (a.ln(), b.ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// The `c` for which the vertical-transport flow moves `θ₀` to `θ₁` where
/// `ρ ≡ 1`.
pub fn transport_constant(convention: SignConvention, theta0: f64, theta1: f64) -> f64 {
    match convention {
        SignConvention::Definitional => theta0 - theta1,
        SignConvention::ReversedVertical => theta1 - theta0,
    }
}

/// Time-one flow of `K = −c·θ·ρ` from `z0`.
///
/// Where `ρ ≡ 1` the generator is `∓c·ξ` (sign by convention), so the flow
/// is a pure Reeb translation of `θ`.
pub fn vertical_transport(
    m: &ModelManifold,
    z0: &Point,
    z1: &Point,
    rho: &ScalarField,
    c: f64,
    convention: SignConvention,
    steps: usize,
) -> Result<FlowResult> {
    let base_gap = m
        .displacement(z0, z1)
        .iter()
        .skip(1)
        .fold(0.0f64, |acc, d| acc.max(d.abs()));
    if base_gap > 1e-12 {
        return Err(Error::precondition(format!(
            "z0 and z1 must share base coordinates (gap {base_gap:e})"
        )));
    }
    let plateau = rho.value_at(0.0, z0);
    if (plateau - 1.0).abs() > 1e-12 {
        return Err(Error::precondition(format!(
            "ρ must equal 1 at the base point, got {plateau}"
        )));
    }
    let k = crate::fields::vertical_hamiltonian(m, rho, c);
    let field = hamiltonian_vector_field_with(m, &k, convention, FiniteDifference::default());
    let iso = Isotopy::with_steps(field, 0.0, 1.0, steps, Scheme::Rk4)?;
    flow_with_trajectory(&iso, z0)
}

/// Write a trajectory as CSV with columns `time, theta, x1.., y1..`.
pub fn write_trajectory_csv<W: Write>(m: &ModelManifold, trajectory: &[(f64, Point)], out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    let mut header = vec!["time".to_string()];
    header.extend(m.coordinate_labels());
    writer.write_record(&header)?;
    for (t, p) in trajectory {
        let mut row = vec![format!("{t}")];
        row.extend(p.coords().iter().map(|c| format!("{c}")));
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields;
    use crate::sampling::{grid, random_points};
    use std::f64::consts::PI;

    #[test]
    fn step_must_divide_interval() {
        let m = ModelManifold::standard_torus(1);
        assert!(Isotopy::new(VectorField::zero(&m), 0.0, 1.0, 0.3, Scheme::Rk4).is_err());
        let iso = Isotopy::new(VectorField::zero(&m), 0.0, 1.0, 0.25, Scheme::Rk4).unwrap();
        assert_eq!(iso.steps(), 4);
        assert!(Isotopy::new(VectorField::zero(&m), 0.0, 1.0, 0.0, Scheme::Rk4).is_err());
    }

    #[test]
    fn zero_reeb_and_translation_flows() {
        let m = ModelManifold::standard_torus(1);
        let p = m.canonicalize(&[0.3, 0.1, 0.9]).unwrap();
        let zero = Isotopy::unit(VectorField::zero(&m), 10);
        assert_eq!(flow_point(&zero, &p).unwrap(), p);
        let reeb = Isotopy::unit(VectorField::reeb(&m, 1.0), 10);
        assert!(m.distance(&flow_point(&reeb, &p).unwrap(), &p) < 1e-14);
        let shift = Isotopy::unit(VectorField::constant(&m, vec![0.0, 1.0, 0.0]), 7);
        assert!(m.distance(&flow_point(&shift, &p).unwrap(), &p) < 1e-14);
    }

    #[test]
    fn nan_generator_reports_failing_time() {
        let m = ModelManifold::standard_torus(1);
        let bad = VectorField::new(&m, |t, _| if t >= 0.5 { vec![f64::NAN; 3] } else { vec![0.0; 3] });
        let iso = Isotopy::unit(bad, 4);
        let p = m.canonicalize(&[0.0, 0.0, 0.0]).unwrap();
        match flow(&iso, &p) {
            Err(Error::Integration { time, .. }) => assert!((time - 0.5).abs() < 1e-12 || (time - 0.25).abs() < 1e-12),
            other => panic!("expected integration error, got {other:?}"),
        }
    }

    #[test]
    fn trajectory_times_are_monotone() {
        let m = ModelManifold::standard_torus(1);
        let iso = Isotopy::unit(VectorField::reeb(&m, 0.5), 8);
        let p = m.canonicalize(&[0.0, 0.2, 0.2]).unwrap();
        let traj = flow_with_trajectory(&iso, &p).unwrap().trajectory.unwrap();
        assert_eq!(traj.len(), 9);
        assert!(traj.windows(2).all(|w| w[1].0 > w[0].0));
        assert_eq!(traj.last().unwrap().0, 1.0);
    }

    #[test]
    fn constant_hamiltonian_gives_zero_field() {
        let m = ModelManifold::standard_torus(1);
        let x = hamiltonian_vector_field(&m, &ScalarField::constant(3, 4.0));
        let p = m.canonicalize(&[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(x.at(0.0, &p), vec![0.0; 3]);
    }

    #[test]
    fn reeb_invariant_hamiltonians_are_horizontal() {
        let m = ModelManifold::product_torus(vec![1.0, 3.0], 1.0).unwrap();
        let h = fields::pendulum_integral(&m, 0).add(&fields::sine(&m, m.y_index(1), 1.0));
        let x = hamiltonian_vector_field(&m, &h);
        for p in random_points(&m, 50, 1) {
            assert!(x.at(0.0, &p)[0].abs() <= 1e-10);
        }
    }

    #[test]
    fn vertical_field_on_plateau_follows_convention() {
        let m = ModelManifold::standard_torus(1);
        let rho = fields::radial_bump(&m, &[0.5, 0.5], 0.1, 0.3).unwrap();
        let k = fields::vertical_hamiltonian(&m, &rho, 0.7);
        let p = m.canonicalize(&[0.4, 0.52, 0.5]).unwrap();
        let def = hamiltonian_vector_field(&m, &k).at(0.0, &p);
        assert!((def[0] + 0.7).abs() < 1e-14 && def[1] == 0.0 && def[2] == 0.0);
        let rev = hamiltonian_vector_field_with(&m, &k, SignConvention::ReversedVertical, FiniteDifference::default()).at(0.0, &p);
        assert!((rev[0] - 0.7).abs() < 1e-14);
    }

    #[test]
    fn bracket_of_sines_matches_closed_form() {
        let m = ModelManifold::standard_torus(1);
        let h = fields::sine(&m, 1, 1.0);
        let k = fields::sine(&m, 2, 1.0);
        let b = poisson_bracket(&m, &h, &k);
        for p in random_points(&m, 30, 5) {
            let (x, y) = (p.coords()[1], p.coords()[2]);
            let expected = 4.0 * PI * PI * (2.0 * PI * x).cos() * (2.0 * PI * y).cos();
            assert!((b.value_at(0.0, &p) - expected).abs() < 1e-11);
        }
        let hh = poisson_bracket(&m, &h, &h);
        let hc = poisson_bracket(&m, &h, &ScalarField::constant(3, 1.0));
        for p in grid(&m, 3) {
            assert_eq!(hh.value_at(0.0, &p), 0.0);
            assert_eq!(hc.value_at(0.0, &p), 0.0);
        }
    }

    #[test]
    fn zero_epsilon_commutator_is_identity() {
        let m = ModelManifold::standard_torus(1);
        let h = fields::sine(&m, 1, 1.0);
        let k = fields::sine(&m, 2, 1.0);
        let s = commutator_flow(&m, &h, &k, 0.0, 0.01, &grid(&m, 2)).unwrap();
        assert_eq!(s.max_displacement, 0.0);
    }

    #[test]
    fn transport_reaches_target() {
        let m = ModelManifold::standard_torus(1);
        let rho = fields::radial_bump(&m, &[0.5, 0.5], 0.1, 0.3).unwrap();
        let z0 = m.canonicalize(&[0.2, 0.5, 0.5]).unwrap();
        let z1 = m.canonicalize(&[0.7, 0.5, 0.5]).unwrap();
        for conv in [SignConvention::Definitional, SignConvention::ReversedVertical] {
            let c = transport_constant(conv, 0.2, 0.7);
            let r = vertical_transport(&m, &z0, &z1, &rho, c, conv, 20).unwrap();
            assert!(m.distance(&r.endpoint, &z1) < 1e-8);
        }
        let off = m.canonicalize(&[0.7, 0.5, 0.1]).unwrap();
        assert!(vertical_transport(&m, &z0, &off, &rho, 0.5, SignConvention::Definitional, 10).is_err());
    }

    #[test]
    fn trajectory_csv_has_header_and_rows() {
        let m = ModelManifold::standard_torus(1);
        let iso = Isotopy::unit(VectorField::reeb(&m, 1.0), 2);
        let p = m.canonicalize(&[0.0, 0.5, 0.5]).unwrap();
        let traj = flow_with_trajectory(&iso, &p).unwrap().trajectory.unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&m, &traj, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "time,theta,x1,y1");
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[1], "0,0,0.5,0.5");
    }

    fn pendulum_iso(m: &ModelManifold, steps: usize, scheme: Scheme) -> Isotopy {
        let h = fields::pendulum_integral(m, 0).scale(0.1);
        Isotopy::with_steps(hamiltonian_vector_field(m, &h), 0.0, 1.0, steps, scheme).unwrap()
    }

    fn endpoint_error(m: &ModelManifold, steps: usize, scheme: Scheme, p: &Point) -> f64 {
        let reference = flow_point(&pendulum_iso(m, 4096, Scheme::Rk4), p).unwrap();
        m.distance(&flow_point(&pendulum_iso(m, steps, scheme), p).unwrap(), &reference)
    }

    #[test]
    fn rk4_and_midpoint_orders() {
        let m = ModelManifold::standard_torus(1);
        let p = m.canonicalize(&[0.1, 0.13, 0.41]).unwrap();
        let rk4 = endpoint_error(&m, 16, Scheme::Rk4, &p) / endpoint_error(&m, 32, Scheme::Rk4, &p);
        assert!((12.0..=20.0).contains(&rk4), "{rk4}");
        let mid = endpoint_error(&m, 32, Scheme::Midpoint, &p) / endpoint_error(&m, 64, Scheme::Midpoint, &p);
        assert!((3.0..=5.0).contains(&mid), "{mid}");
    }

    #[test]
    fn step_residual_is_reported() {
        let m = ModelManifold::standard_torus(1);
        let p = m.canonicalize(&[0.1, 0.13, 0.41]).unwrap();
        let coarse = flow(&pendulum_iso(&m, 8, Scheme::Rk4), &p).unwrap().max_step_residual;
        let fine = flow(&pendulum_iso(&m, 16, Scheme::Rk4), &p).unwrap().max_step_residual;
        assert!(coarse > fine && fine > 0.0);
        assert_eq!(flow(&Isotopy::unit(VectorField::reeb(&m, 1.0), 4), &p).unwrap().max_step_residual, 0.0);
    }

    #[test]
    fn variational_jacobian_matches_map_differences() {
        let m = ModelManifold::standard_torus(1);
        let h = fields::bump_hamiltonian(&m, &[0.5, 0.5], 0.05, 0.3, 0.5).unwrap();
        let iso = Isotopy::unit(hamiltonian_vector_field(&m, &h), 50);
        for p in random_points(&m, 8, 4) {
            let (end, var) = flow_with_jacobian(&iso, &p, FiniteDifference::richardson(1e-4)).unwrap();
            assert!(m.distance(&end, &flow_point(&iso, &p).unwrap()) < 1e-14);
            let fd = map_jacobian(&m, |q| flow_point(&iso, q), &p, FiniteDifference::richardson(1e-4)).unwrap();
            assert!((var - fd).amax() < 1e-7);
        }
    }

    #[test]
    fn variational_jacobian_across_the_seam() {
        let m = ModelManifold::cat_map_torus();
        let iso = Isotopy::unit(VectorField::reeb(&m, 0.5), 5);
        let p = m.canonicalize(&[0.9, 0.2, 0.3]).unwrap();
        let (_, var) = flow_with_jacobian(&iso, &p, FiniteDifference::default()).unwrap();
        let fd = map_jacobian(&m, |q| flow_point(&iso, q), &p, FiniteDifference::default()).unwrap();
        assert!((&var - &fd).amax() < 1e-8, "{var} {fd}");
        // One upward crossing: the fiber block is the cat map.
        assert!((var[(1, 1)] - 2.0).abs() < 1e-12 && (var[(1, 2)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn conservation_of_trivial_flows() {
        let m = ModelManifold::product_torus(vec![1.5], 2.0).unwrap();
        let samples = random_points(&m, 10, 5);
        for method in [JacobianMethod::default(), JacobianMethod::Variational(FiniteDifference::default())] {
            let zero = conservation_check(&m, &Isotopy::unit(VectorField::zero(&m), 4), &samples, method).unwrap();
            assert!(zero.max_residual() <= 1e-10);
            let reeb = conservation_check(&m, &Isotopy::unit(VectorField::reeb(&m, 0.7), 4), &samples, method).unwrap();
            assert!(reeb.max_residual() <= 1e-10);
        }
        assert!(conservation_check(&m, &Isotopy::unit(VectorField::zero(&m), 4), &[], JacobianMethod::default()).is_err());
    }

    #[test]
    fn concatenation_and_reversal() {
        let m = ModelManifold::standard_torus(1);
        let p = m.canonicalize(&[0.1, 0.13, 0.41]).unwrap();
        let a = pendulum_iso(&m, 256, Scheme::Rk4);
        let back = flow_point(&a.reversed(), &flow_point(&a, &p).unwrap()).unwrap();
        assert!(m.distance(&back, &p) < 1e-9, "{}", m.distance(&back, &p));
        // Autonomous field: the inverse on [0, 1] is generated by −X.
        let inverse = Isotopy { generator: a.generator.scaled(-1.0), ..a.clone() };
        let both = Isotopy::concatenate(&a, &inverse).unwrap();
        assert_eq!(both.steps(), 1024);
        assert!(m.distance(&flow_point(&both, &p).unwrap(), &p) < 1e-9);
    }
}
