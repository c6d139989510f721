//! Built-in scalar fields with analytic gradients.
//!
//! Base-coordinate distances are measured on the torus (nearest periodic
//! image), so every bump here is a genuine function on the models as long
//! as its support radius stays below 1/2.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::forms::ScalarField;
use crate::manifold::{wrap_centered, ModelManifold};

fn flat(t: f64) -> f64 {
    if t > 0.0 {
        (-1.0 / t).exp()
    } else {
        0.0
    }
}

fn flat_derivative(t: f64) -> f64 {
    if t > 0.0 {
        flat(t) / (t * t)
    } else {
        0.0
    }
}

/// C^∞ transition: 1 for `s ≤ 0`, 0 for `s ≥ 1`.
pub fn smooth_step(s: f64) -> f64 {
    if s <= 0.0 {
        1.0
    } else if s >= 1.0 {
        0.0
    } else {
        let (a, b) = (flat(1.0 - s), flat(s));
        a / (a + b)
    }
}

pub fn smooth_step_derivative(s: f64) -> f64 {
    if s <= 0.0 || s >= 1.0 {
        return 0.0;
    }
    let (a, b) = (flat(1.0 - s), flat(s));
    let (da, db) = (-flat_derivative(1.0 - s), flat_derivative(s));
    (da * b - a * db) / ((a + b) * (a + b))
}

/// Shape of the descent from the plateau to zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Transition {
    /// [`smooth_step`]: C^∞, but high derivatives grow factorially near
    /// the ends.
    #[default]
    Flat,
    /// Polynomial smoothstep of degree `2k+1`, C^k at both ends, with
    /// moderate derivatives throughout.
    Polynomial(u32),
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `S_k(s) = s^{k+1} Σ_j C(k+j, j) C(2k+1, k−j) (−s)^j` and its derivative.
fn polynomial_step(k: u32, s: f64) -> (f64, f64) {
    let (mut value, mut slope) = (0.0, 0.0);
    for j in 0..=k {
        let c = binomial(k + j, j) * binomial(2 * k + 1, k - j) * if j % 2 == 0 { 1.0 } else { -1.0 };
        let power = (k + 1 + j) as i32;
        value += c * s.powi(power);
        slope += c * power as f64 * s.powi(power - 1);
    }
    (value, slope)
}

/// Plateau profile: 1 on `[0, inner]`, 0 beyond `outer`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plateau {
    pub inner: f64,
    pub outer: f64,
    pub transition: Transition,
}

impl Plateau {
    pub fn new(inner: f64, outer: f64) -> Result<Self> {
        Self::with_transition(inner, outer, Transition::Flat)
    }

    pub fn with_transition(inner: f64, outer: f64, transition: Transition) -> Result<Self> {
        if !(inner >= 0.0 && outer > inner && outer.is_finite()) {
            return Err(Error::domain(format!(
                "plateau needs 0 ≤ inner < outer, got {inner}, {outer}"
            )));
        }
        Ok(Self {
            inner,
            outer,
            transition,
        })
    }

    pub fn value(&self, r: f64) -> f64 {
        let s = (r - self.inner) / (self.outer - self.inner);
        match self.transition {
            Transition::Flat => smooth_step(s),
            Transition::Polynomial(_) if s <= 0.0 => 1.0,
            Transition::Polynomial(_) if s >= 1.0 => 0.0,
            Transition::Polynomial(k) => 1.0 - polynomial_step(k, s).0,
        }
    }

    pub fn derivative(&self, r: f64) -> f64 {
        let width = self.outer - self.inner;
        let s = (r - self.inner) / width;
        match self.transition {
            Transition::Flat => smooth_step_derivative(s) / width,
            Transition::Polynomial(_) if s <= 0.0 || s >= 1.0 => 0.0,
            Transition::Polynomial(k) => -polynomial_step(k, s).1 / width,
        }
    }
}

/// Reeb-invariant radial bump on the base torus centred at `center`,
/// equal to 1 within distance `inner` and vanishing beyond `outer`.
pub fn radial_bump(m: &ModelManifold, center: &[f64], inner: f64, outer: f64) -> Result<ScalarField> {
    let plateau = Plateau::new(inner, outer)?;
    if center.len() != 2 * m.n() {
        return Err(Error::domain("bump centre must have 2n base coordinates"));
    }
    if outer >= 0.5 {
        return Err(Error::domain("bump support radius must be below 1/2"));
    }
    let c = center.to_vec();
    let c2 = c.clone();
    let value = move |_: f64, z: &[f64]| {
        let r2: f64 = z[1..]
            .iter()
            .zip(&c)
            .map(|(zi, ci)| wrap_centered(zi - ci, 1.0).powi(2))
            .sum();
        plateau.value(r2.sqrt())
    };
    let gradient = move |_: f64, z: &[f64]| {
        let deltas: Vec<f64> = z[1..]
            .iter()
            .zip(&c2)
            .map(|(zi, ci)| wrap_centered(zi - ci, 1.0))
            .collect();
        let r = deltas.iter().map(|d| d * d).sum::<f64>().sqrt();
        let mut g = vec![0.0; z.len()];
        if r > plateau.inner && r < plateau.outer {
            let dr = plateau.derivative(r);
            for (gi, di) in g[1..].iter_mut().zip(&deltas) {
                *gi = dr * di / r;
            }
        }
        g
    };
    Ok(ScalarField::new(m.dim(), value)
        .with_gradient(gradient)
        .reeb_invariant())
}

/// `sin(2π·freq·z_index)`.
pub fn sine(m: &ModelManifold, index: usize, freq: f64) -> ScalarField {
    let w = 2.0 * PI * freq;
    ScalarField::new(m.dim(), move |_, z| (w * z[index]).sin())
        .with_gradient(move |_, z| {
            let mut g = vec![0.0; z.len()];
            g[index] = w * (w * z[index]).cos();
            g
        })
        .with_reeb_flag(index != 0)
}

/// `cos(2π·freq·z_index)`.
pub fn cosine(m: &ModelManifold, index: usize, freq: f64) -> ScalarField {
    let w = 2.0 * PI * freq;
    ScalarField::new(m.dim(), move |_, z| (w * z[index]).cos())
        .with_gradient(move |_, z| {
            let mut g = vec![0.0; z.len()];
            g[index] = -w * (w * z[index]).sin();
            g
        })
        .with_reeb_flag(index != 0)
}

/// Chart coordinate `z_index − origin`, taken on the periodic image nearest
/// to `origin`. Only smooth away from the antipode of `origin`.
pub fn chart_coordinate(m: &ModelManifold, index: usize, origin: f64) -> ScalarField {
    let period = m.coordinate_period(index);
    ScalarField::new(m.dim(), move |_, z| wrap_centered(z[index] - origin, period))
        .with_gradient(move |_, z| {
            let mut g = vec![0.0; z.len()];
            g[index] = 1.0;
            g
        })
        .with_reeb_flag(index != 0)
}

/// Raw coordinate `z_index`; its differential `dz_index` is global even
/// though the function itself is only chart-local.
pub fn coordinate(m: &ModelManifold, index: usize) -> ScalarField {
    ScalarField::new(m.dim(), move |_, z| z[index])
        .with_gradient(move |_, z| {
            let mut g = vec![0.0; z.len()];
            g[index] = 1.0;
            g
        })
        .with_reeb_flag(index != 0)
}

/// Vertical-transport Hamiltonian `K(t, θ, b) = −c·t·ρ(b)`, where the time
/// variable of the chart is the Reeb angle `θ`.
pub fn vertical_hamiltonian(m: &ModelManifold, rho: &ScalarField, c: f64) -> ScalarField {
    let theta = coordinate(m, 0);
    theta.mul(rho).scale(-c)
}

/// Compactly supported Reeb-invariant Hamiltonian `amplitude · ρ(b) · (x₁ − c_x)`,
/// with `ρ` a radial bump around `center`.
pub fn bump_hamiltonian(m: &ModelManifold, center: &[f64], inner: f64, outer: f64, amplitude: f64) -> Result<ScalarField> {
    let rho = radial_bump(m, center, inner, outer)?;
    let x = chart_coordinate(m, m.x_index(0), center[0]);
    Ok(rho.mul(&x).scale(amplitude))
}

/// `rate · ρ(r) · r²/2` with `r` the periodic base distance to `center`:
/// on the plateau of `ρ` the flow rotates every `(xₖ, yₖ)` plane about the
/// centre at angular speed `rate/aₖ`.
pub fn rotation_hamiltonian(m: &ModelManifold, center: &[f64], plateau: Plateau, rate: f64) -> Result<ScalarField> {
    let outer = plateau.outer;
    if center.len() != 2 * m.n() {
        return Err(Error::domain("rotation centre must have 2n base coordinates"));
    }
    if outer >= 0.5 {
        return Err(Error::domain("rotation support radius must be below 1/2"));
    }
    let c = center.to_vec();
    let c2 = c.clone();
    let deltas = |z: &[f64], c: &[f64]| -> Vec<f64> {
        z[1..].iter().zip(c).map(|(zi, ci)| wrap_centered(zi - ci, 1.0)).collect()
    };
    let value = move |_: f64, z: &[f64]| {
        let r2: f64 = deltas(z, &c).iter().map(|d| d * d).sum();
        rate * plateau.value(r2.sqrt()) * r2 / 2.0
    };
    let gradient = move |_: f64, z: &[f64]| {
        let d = deltas(z, &c2);
        let r = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        let factor = rate * (plateau.value(r) + plateau.derivative(r) * r / 2.0);
        let mut g = vec![0.0; z.len()];
        for (gi, di) in g[1..].iter_mut().zip(&d) {
            *gi = factor * di;
        }
        g
    };
    Ok(ScalarField::new(m.dim(), value)
        .with_gradient(gradient)
        .reeb_invariant())
}

/// Analytic localized bump `amplitude · exp(κ Σ_c (cos 2π(z_c − center_c) − 1))`
/// over the base coordinates. Not compactly supported, but it decays like
/// `e^{−2κ}` away from `center` and all its derivatives stay moderate, which
/// keeps finite-difference Jacobians of its flow accurate.
pub fn periodic_gaussian(m: &ModelManifold, center: &[f64], concentration: f64, amplitude: f64) -> Result<ScalarField> {
    if center.len() != 2 * m.n() {
        return Err(Error::domain("bump centre must have 2n base coordinates"));
    }
    if !(concentration > 0.0 && concentration.is_finite()) {
        return Err(Error::domain("concentration must be positive"));
    }
    let (c, c2) = (center.to_vec(), center.to_vec());
    let k = concentration;
    let exponent = move |z: &[f64], c: &[f64]| -> f64 {
        z[1..].iter().zip(c).map(|(zi, ci)| (2.0 * PI * (zi - ci)).cos() - 1.0).sum::<f64>() * k
    };
    let value = move |_: f64, z: &[f64]| amplitude * exponent(z, &c).exp();
    let gradient = move |_: f64, z: &[f64]| {
        let v = amplitude * exponent(z, &c2).exp();
        let mut g = vec![0.0; z.len()];
        for ((gi, zi), ci) in g[1..].iter_mut().zip(&z[1..]).zip(&c2) {
            *gi = -v * k * 2.0 * PI * (2.0 * PI * (zi - ci)).sin();
        }
        g
    };
    Ok(ScalarField::new(m.dim(), value)
        .with_gradient(gradient)
        .reeb_invariant())
}

/// Separable integrals `I_k = cos(2π x_k) + cos(2π y_k)`.
pub fn pendulum_integral(m: &ModelManifold, k: usize) -> ScalarField {
    cosine(m, m.x_index(k), 1.0).add(&cosine(m, m.y_index(k), 1.0))
}

trait ReebFlag {
    fn with_reeb_flag(self, invariant: bool) -> Self;
}

impl ReebFlag for ScalarField {
    fn with_reeb_flag(self, invariant: bool) -> Self {
        if invariant {
            self.reeb_invariant()
        } else {
            self
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forms::FiniteDifference;
    use crate::sampling::random_points;

    #[test]
    fn smooth_step_limits_and_symmetry() {
        assert_eq!(smooth_step(-0.1), 1.0);
        assert_eq!(smooth_step(1.2), 0.0);
        assert!((smooth_step(0.5) - 0.5).abs() < 1e-15);
        for s in [0.1, 0.3, 0.7] {
            assert!((smooth_step(s) + smooth_step(1.0 - s) - 1.0).abs() < 1e-14);
            let fd = (smooth_step(s + 1e-6) - smooth_step(s - 1e-6)) / 2e-6;
            assert!((fd - smooth_step_derivative(s)).abs() < 1e-7);
        }
    }

    #[test]
    fn analytic_gradients_match_differences() {
        let m = ModelManifold::product_torus(vec![1.0, 2.0], 1.0).unwrap();
        let fields = vec![
            radial_bump(&m, &[0.5, 0.5, 0.5, 0.5], 0.05, 0.3).unwrap(),
            sine(&m, 1, 1.0),
            cosine(&m, 4, 2.0),
            pendulum_integral(&m, 1),
            bump_hamiltonian(&m, &[0.4, 0.6, 0.5, 0.5], 0.05, 0.35, 0.7).unwrap(),
        ];
        let fd = FiniteDifference::default();
        for p in random_points(&m, 40, 3) {
            for f in &fields {
                let exact = f.gradient(0.0, p.coords(), fd);
                let approx = f.fd_gradient(0.0, p.coords(), fd);
                for (a, b) in exact.iter().zip(&approx) {
                    assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0), "{exact:?} vs {approx:?}");
                }
            }
        }
    }

    #[test]
    fn bump_plateau_and_support() {
        let m = ModelManifold::standard_torus(1);
        let rho = radial_bump(&m, &[0.5, 0.5], 0.1, 0.3).unwrap();
        assert_eq!(rho.value(0.0, &[0.2, 0.55, 0.45]), 1.0);
        assert_eq!(rho.value(0.0, &[0.2, 0.05, 0.5]), 0.0);
        // periodic distance: 0.98 is 0.02 away from 0.0
        let edge = radial_bump(&m, &[0.0, 0.0], 0.1, 0.3).unwrap();
        assert_eq!(edge.value(0.0, &[0.0, 0.98, 0.01]), 1.0);
        assert!(radial_bump(&m, &[0.5, 0.5], 0.3, 0.1).is_err());
        assert!(radial_bump(&m, &[0.5, 0.5], 0.1, 0.6).is_err());
    }

    #[test]
    fn vertical_hamiltonian_derivative_on_plateau() {
        let m = ModelManifold::standard_torus(1);
        let rho = radial_bump(&m, &[0.5, 0.5], 0.1, 0.3).unwrap();
        let k = vertical_hamiltonian(&m, &rho, 0.4);
        let g = k.gradient(0.0, &[0.3, 0.5, 0.5], FiniteDifference::default());
        assert_eq!(g, vec![-0.4, 0.0, 0.0]);
        assert!(!k.is_reeb_invariant());
    }

    #[test]
    fn polynomial_profile() {
        for k in [1, 2, 3] {
            let plateau = Plateau::with_transition(0.1, 0.3, Transition::Polynomial(k)).unwrap();
            assert_eq!(plateau.value(0.05), 1.0);
            assert_eq!(plateau.value(0.35), 0.0);
            assert!((plateau.value(0.2) - 0.5).abs() < 1e-14);
            for r in [0.12, 0.17, 0.26] {
                assert!((plateau.value(r) + plateau.value(0.4 - r) - 1.0).abs() < 1e-13);
                let fd = (plateau.value(r + 1e-6) - plateau.value(r - 1e-6)) / 2e-6;
                assert!((fd - plateau.derivative(r)).abs() < 1e-6);
            }
            // Value and slope continuous at both ends.
            assert!((plateau.value(0.1 + 1e-9) - 1.0).abs() < 1e-8);
            assert!(plateau.derivative(0.3 - 1e-9).abs() < 1e-6);
        }
    }

    #[test]
    fn new_profiles_match_differences() {
        let m = ModelManifold::product_torus(vec![1.0, 2.0], 1.0).unwrap();
        let center = [0.5, 0.4, 0.5, 0.6];
        let fields = vec![
            rotation_hamiltonian(&m, &center, Plateau::new(0.1, 0.4).unwrap(), 3.0).unwrap(),
            rotation_hamiltonian(&m, &center, Plateau::with_transition(0.1, 0.4, Transition::Polynomial(3)).unwrap(), 3.0).unwrap(),
            periodic_gaussian(&m, &center, 4.0, 0.5).unwrap(),
        ];
        let fd = FiniteDifference::richardson(1e-4);
        for p in random_points(&m, 40, 8) {
            for f in &fields {
                let exact = f.gradient(0.0, p.coords(), fd);
                let approx = f.fd_gradient(0.0, p.coords(), fd);
                for (a, b) in exact.iter().zip(&approx) {
                    assert!((a - b).abs() <= 1e-7 * a.abs().max(1.0), "{exact:?} vs {approx:?}");
                }
            }
        }
        assert!(rotation_hamiltonian(&m, &center, Plateau::new(0.1, 0.5).unwrap(), 1.0).is_err());
        assert!(periodic_gaussian(&m, &center, 0.0, 1.0).is_err());
    }

    #[test]
    fn rotation_field_on_plateau() {
        let m = ModelManifold::product_torus(vec![2.0], 1.0).unwrap();
        let h = rotation_hamiltonian(&m, &[0.5, 0.5], Plateau::new(0.2, 0.4).unwrap(), 3.0).unwrap();
        let g = h.gradient(0.0, &[0.7, 0.55, 0.4], FiniteDifference::default());
        // rate · (Δx, Δy) inside the plateau.
        assert!((g[1] - 0.15).abs() < 1e-14 && (g[2] + 0.3).abs() < 1e-14 && g[0] == 0.0);
        assert_eq!(h.value(0.0, &[0.0, 0.0, 0.0]), 0.0);
    }

    #[test]
    fn gaussian_peak_and_decay() {
        let m = ModelManifold::standard_torus(1);
        let g = periodic_gaussian(&m, &[0.25, 0.75], 3.0, 2.0).unwrap();
        assert_eq!(g.value(0.0, &[0.4, 0.25, 0.75]), 2.0);
        assert!((g.value(0.0, &[0.0, 0.75, 0.25]) - 2.0 * (-12.0f64).exp()).abs() < 1e-15);
    }
}
