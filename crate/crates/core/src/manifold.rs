//! Explicit closed cosymplectic models.
//!
//! Coordinates are ordered `(θ, x₁..xₙ, y₁..yₙ)` everywhere in the crate:
//! index 0 is the Reeb angle, indices `1..=n` are the `x` coordinates and
//! `n+1..=2n` the `y` coordinates. On both models `η = dθ`,
//! `ω = Σ aₖ dxₖ∧dyₖ` and the Reeb field is `ξ = ∂/∂θ`.
//!
//! The mapping torus is `T² × [0,T] / (b, T) ∼ (φ(b), 0)` with `φ` an integer
//! matrix of determinant one, so the fundamental domain is `[0,T) × [0,1)²`
//! and crossing the seam `θ = T` upwards applies the monodromy to the fiber
//! coordinates.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManifoldKind {
    /// `S¹_T × T²ⁿ` with `ω = Σ aₖ dxₖ∧dyₖ`.
    ProductTorus,
    /// Mapping torus of a linear symplectomorphism of `T²`.
    MappingTorus,
}

/// 2×2 integer matrix acting on fiber coordinates `(x, y)`.
pub type Monodromy = [[i64; 2]; 2];

/// Key-value description of a model, as read from a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifoldConfig {
    pub kind: ManifoldKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reeb_period: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monodromy: Option<Vec<Vec<i64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ManifoldConfig", into = "ManifoldConfig")]
pub struct ModelManifold {
    kind: ManifoldKind,
    n: usize,
    weights: Vec<f64>,
    reeb_period: f64,
    monodromy: Option<Monodromy>,
    /// Inverse of the transposed matrix of `ω + η⊗η`, so that
    /// `sharp * α` solves `(ω + η⊗η)(X, ·) = α`.
    #[serde(skip)]
    sharp: DMatrix<f64>,
}

/// Canonical point: `θ ∈ [0, T)`, base coordinates in `[0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Point {
    coords: Vec<f64>,
}

/// Tangent vector in the coordinate frame `(∂θ, ∂x₁.., ∂y₁..)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TangentVector {
    components: Vec<f64>,
}

impl Point {
    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn theta(&self) -> f64 {
        self.coords[0]
    }

    pub fn base(&self) -> &[f64] {
        &self.coords[1..]
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }
}

impl TangentVector {
    pub fn new(components: Vec<f64>) -> Result<Self> {
        if components.iter().any(|c| !c.is_finite()) {
            return Err(Error::domain("tangent vector has non-finite components"));
        }
        Ok(Self { components })
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            components: vec![0.0; dim],
        }
    }

    pub fn basis(dim: usize, index: usize) -> Self {
        let mut components = vec![0.0; dim];
        components[index] = 1.0;
        Self { components }
    }

    pub fn components(&self) -> &[f64] {
        &self.components
    }

    pub fn d_theta(&self) -> f64 {
        self.components[0]
    }

    pub fn d_base(&self) -> &[f64] {
        &self.components[1..]
    }

    pub fn into_components(self) -> Vec<f64> {
        self.components
    }
}

impl From<TangentVector> for Vec<f64> {
    fn from(v: TangentVector) -> Self {
        v.components
    }
}

/// Reduce `value` into `[0, period)`, mapping the rounding case `period` to 0.
pub(crate) fn wrap(value: f64, period: f64) -> f64 {
    let r = value.rem_euclid(period);
    if r >= period {
        0.0
    } else {
        r
    }
}

/// Representative of `value` in `(-period/2, period/2]`.
pub(crate) fn wrap_centered(value: f64, period: f64) -> f64 {
    let r = wrap(value, period);
    if r > 0.5 * period {
        r - period
    } else {
        r
    }
}

fn inverse_monodromy(m: &Monodromy) -> Monodromy {
    [[m[1][1], -m[0][1]], [-m[1][0], m[0][0]]]
}

fn apply_monodromy(m: &Monodromy, b: &[f64]) -> [f64; 2] {
    [
        m[0][0] as f64 * b[0] + m[0][1] as f64 * b[1],
        m[1][0] as f64 * b[0] + m[1][1] as f64 * b[1],
    ]
}

impl ModelManifold {
    /// `S¹_T × T²ⁿ` with `ω = Σ aₖ dxₖ∧dyₖ`, `n = weights.len()`.
    pub fn product_torus(weights: Vec<f64>, reeb_period: f64) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::domain("product torus needs at least one weight"));
        }
        if let Some(a) = weights.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
            return Err(Error::domain(format!("weights must be positive, got {a}")));
        }
        Self::build(ManifoldKind::ProductTorus, weights, reeb_period, None)
    }

    /// Standard `S¹ × T²` with unit weights.
    pub fn standard_torus(n: usize) -> Self {
        Self::product_torus(vec![1.0; n.max(1)], 1.0).expect("unit weights are valid")
    }

    /// Mapping torus of the linear map `monodromy` on `(T², dx∧dy)`.
    pub fn mapping_torus(monodromy: Monodromy, reeb_period: f64) -> Result<Self> {
        let det = monodromy[0][0] * monodromy[1][1] - monodromy[0][1] * monodromy[1][0];
        if det != 1 {
            return Err(Error::domain(format!(
                "monodromy must have determinant 1, got {det}"
            )));
        }
        Self::build(
            ManifoldKind::MappingTorus,
            vec![1.0],
            reeb_period,
            Some(monodromy),
        )
    }

    /// The Arnold cat map torus, monodromy `[[2,1],[1,1]]`, `T = 1`.
    pub fn cat_map_torus() -> Self {
        Self::mapping_torus([[2, 1], [1, 1]], 1.0).expect("cat map is unimodular")
    }

    fn build(
        kind: ManifoldKind,
        weights: Vec<f64>,
        reeb_period: f64,
        monodromy: Option<Monodromy>,
    ) -> Result<Self> {
        if !(reeb_period.is_finite() && reeb_period > 0.0) {
            return Err(Error::domain(format!(
                "reeb_period must be positive, got {reeb_period}"
            )));
        }
        let n = weights.len();
        let mut m = Self {
            kind,
            n,
            weights,
            reeb_period,
            monodromy,
            sharp: DMatrix::zeros(0, 0),
        };
        let musical = m.musical_matrix();
        m.sharp = musical
            .transpose()
            .try_inverse()
            .ok_or_else(|| Error::Structural("ω + η⊗η is singular".into()))?;
        Ok(m)
    }

    pub fn kind(&self) -> ManifoldKind {
        self.kind
    }

    /// Half-dimension of the symplectic distribution.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        2 * self.n + 1
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn reeb_period(&self) -> f64 {
        self.reeb_period
    }

    pub fn monodromy(&self) -> Option<Monodromy> {
        self.monodromy
    }

    /// Coordinate index of `x_k` (`k` zero-based).
    pub fn x_index(&self, k: usize) -> usize {
        1 + k
    }

    /// Coordinate index of `y_k` (`k` zero-based).
    pub fn y_index(&self, k: usize) -> usize {
        1 + self.n + k
    }

    /// Period of each coordinate on the fundamental domain.
    pub fn coordinate_period(&self, index: usize) -> f64 {
        if index == 0 {
            self.reeb_period
        } else {
            1.0
        }
    }

    /// Coordinate names in canonical order: `theta, x1.., y1..`.
    pub fn coordinate_labels(&self) -> Vec<String> {
        let mut labels = vec!["theta".to_string()];
        labels.extend((1..=self.n).map(|k| format!("x{k}")));
        labels.extend((1..=self.n).map(|k| format!("y{k}")));
        labels
    }

    /// Coefficients of `η = dθ`.
    pub fn eta(&self) -> Vec<f64> {
        let mut eta = vec![0.0; self.dim()];
        eta[0] = 1.0;
        eta
    }

    /// Matrix of `ω`: `ω(u, v) = uᵀ W v`.
    pub fn omega_matrix(&self) -> DMatrix<f64> {
        let mut w = DMatrix::zeros(self.dim(), self.dim());
        for k in 0..self.n {
            let (x, y) = (self.x_index(k), self.y_index(k));
            w[(x, y)] = self.weights[k];
            w[(y, x)] = -self.weights[k];
        }
        w
    }

    /// Matrix of `ω + η⊗η`.
    pub fn musical_matrix(&self) -> DMatrix<f64> {
        let eta = DVector::from_vec(self.eta());
        self.omega_matrix() + &eta * eta.transpose()
    }

    pub(crate) fn sharp_matrix(&self) -> &DMatrix<f64> {
        &self.sharp
    }

    /// Point from raw coordinates without any validation other than length.
    pub fn point(&self, raw: &[f64]) -> Result<Point> {
        self.canonicalize(raw)
    }

    /// Reduce raw coordinates to the fundamental domain.
    pub fn canonicalize(&self, raw: &[f64]) -> Result<Point> {
        self.canonicalize_with_crossings(raw).map(|(p, _)| p)
    }

    /// Canonical point plus the signed number of seam crossings in `θ`.
    ///
    /// For the mapping torus, the fiber coordinates of the result equal
    /// `monodromy^k` applied to the raw fiber coordinates (mod 1).
    pub fn canonicalize_with_crossings(&self, raw: &[f64]) -> Result<(Point, i64)> {
        if raw.len() != self.dim() {
            return Err(Error::domain(format!(
                "expected {} coordinates, got {}",
                self.dim(),
                raw.len()
            )));
        }
        if raw.iter().any(|c| !c.is_finite()) {
            return Err(Error::domain("non-finite coordinate"));
        }
        let t = self.reeb_period;
        let crossings = (raw[0] / t).floor();
        let mut coords = Vec::with_capacity(raw.len());
        coords.push(wrap(raw[0] - crossings * t, t));
        let k = crossings as i64;
        match (self.kind, self.monodromy) {
            (ManifoldKind::MappingTorus, Some(mono)) => {
                let base = self.apply_monodromy_power(&mono, &raw[1..], k);
                coords.extend(base);
            }
            _ => coords.extend(raw[1..].iter().map(|&c| wrap(c, 1.0))),
        }
        Ok((Point { coords }, k))
    }

    /// `monodromy^k` on the fiber torus, reducing mod 1 after each factor.
    fn apply_monodromy_power(&self, mono: &Monodromy, base: &[f64], k: i64) -> Vec<f64> {
        let factor = if k >= 0 { *mono } else { inverse_monodromy(mono) };
        let mut b = [wrap(base[0], 1.0), wrap(base[1], 1.0)];
        for _ in 0..k.unsigned_abs() {
            let next = apply_monodromy(&factor, &b);
            b = [wrap(next[0], 1.0), wrap(next[1], 1.0)];
        }
        b.to_vec()
    }

    /// Apply the gluing map `monodromy^k` to fiber coordinates (identity on
    /// the product torus).
    pub fn fiber_map(&self, base: &[f64], k: i64) -> Vec<f64> {
        match self.monodromy {
            Some(mono) => self.apply_monodromy_power(&mono, base, k),
            None => base.iter().map(|&c| wrap(c, 1.0)).collect(),
        }
    }

    /// Transport tangent components from the chart of a canonical point back
    /// into the chart of a raw point that crossed the seam `k` times.
    pub(crate) fn tangent_to_raw_chart(&self, v: &mut [f64], k: i64) {
        if k == 0 {
            return;
        }
        if let Some(mono) = self.monodromy {
            let factor = if k > 0 { inverse_monodromy(&mono) } else { mono };
            for _ in 0..k.unsigned_abs() {
                let next = apply_monodromy(&factor, &v[1..3]);
                v[1] = next[0];
                v[2] = next[1];
            }
        }
    }

    /// Inverse of [`tangent_to_raw_chart`](Self::tangent_to_raw_chart).
    pub(crate) fn tangent_from_raw_chart(&self, v: &mut [f64], k: i64) {
        self.tangent_to_raw_chart(v, -k);
    }

    /// `ξ = ∂/∂θ` in the coordinate frame.
    pub fn reeb_vector(&self, _p: &Point) -> TangentVector {
        TangentVector::basis(self.dim(), 0)
    }

    /// Exact Reeb flow `ψ_s`: translation of `θ` by `s`, with the monodromy
    /// applied for every seam crossing.
    pub fn reeb_flow(&self, p: &Point, s: f64) -> Point {
        let mut raw = p.coords.clone();
        raw[0] += s;
        self.canonicalize(&raw)
            .expect("translation of a canonical point stays finite")
    }

    /// Move `p` by the raw coordinate increment `v` and re-canonicalize.
    pub fn offset(&self, p: &Point, v: &[f64]) -> Result<Point> {
        let raw: Vec<f64> = p.coords.iter().zip(v).map(|(a, b)| a + b).collect();
        self.canonicalize(&raw)
    }

    /// Shortest coordinate displacement from `from` to `to`, expressed in the
    /// chart of `from`.
    pub fn displacement(&self, from: &Point, to: &Point) -> Vec<f64> {
        let t = self.reeb_period;
        match self.monodromy {
            None => from
                .coords
                .iter()
                .zip(&to.coords)
                .enumerate()
                .map(|(i, (a, b))| wrap_centered(b - a, self.coordinate_period(i)))
                .collect(),
            Some(mono) => {
                // (θ, b) ∼ (θ + jT, φ^{-j} b); pick the sheet nearest in θ.
                let j = ((from.coords[0] - to.coords[0]) / t).round() as i64;
                let mut base = [to.coords[1], to.coords[2]];
                let step = if j >= 0 { inverse_monodromy(&mono) } else { mono };
                for _ in 0..j.unsigned_abs() {
                    base = apply_monodromy(&step, &base);
                }
                vec![
                    to.coords[0] + j as f64 * t - from.coords[0],
                    wrap_centered(base[0] - from.coords[1], 1.0),
                    wrap_centered(base[1] - from.coords[2], 1.0),
                ]
            }
        }
    }

    /// Maximum coordinate distance between two points (via [`displacement`]).
    ///
    /// [`displacement`]: ModelManifold::displacement
    pub fn distance(&self, a: &Point, b: &Point) -> f64 {
        self.displacement(a, b)
            .into_iter()
            .fold(0.0, |acc, d| acc.max(d.abs()))
    }

    pub fn to_config(&self) -> ManifoldConfig {
        ManifoldConfig {
            kind: self.kind,
            n: Some(self.n),
            weights: match self.kind {
                ManifoldKind::ProductTorus => Some(self.weights.clone()),
                ManifoldKind::MappingTorus => None,
            },
            reeb_period: Some(self.reeb_period),
            monodromy: self
                .monodromy
                .map(|m| m.iter().map(|row| row.to_vec()).collect()),
        }
    }
}

impl TryFrom<ManifoldConfig> for ModelManifold {
    type Error = Error;

    fn try_from(cfg: ManifoldConfig) -> Result<Self> {
        let period = cfg.reeb_period.unwrap_or(1.0);
        match cfg.kind {
            ManifoldKind::ProductTorus => {
                let weights = match (cfg.weights, cfg.n) {
                    (Some(w), Some(n)) if w.len() != n => {
                        return Err(Error::Config(format!(
                            "n = {n} but {} weights given",
                            w.len()
                        )))
                    }
                    (Some(w), _) => w,
                    (None, Some(n)) => vec![1.0; n],
                    (None, None) => vec![1.0],
                };
                if cfg.monodromy.is_some() {
                    return Err(Error::Config(
                        "monodromy is only valid for a mapping torus".into(),
                    ));
                }
                Self::product_torus(weights, period)
            }
            ManifoldKind::MappingTorus => {
                if cfg.n.is_some_and(|n| n != 1) {
                    return Err(Error::Config("mapping torus requires n = 1".into()));
                }
                if cfg.weights.is_some() {
                    return Err(Error::Config(
                        "weights are only valid for a product torus".into(),
                    ));
                }
                let rows = cfg
                    .monodromy
                    .ok_or_else(|| Error::Config("mapping torus needs monodromy".into()))?;
                if rows.len() != 2 || rows.iter().any(|r| r.len() != 2) {
                    return Err(Error::Config("monodromy must be 2×2".into()));
                }
                Self::mapping_torus([[rows[0][0], rows[0][1]], [rows[1][0], rows[1][1]]], period)
            }
        }
    }
}

impl From<ModelManifold> for ManifoldConfig {
    fn from(m: ModelManifold) -> Self {
        m.to_config()
    }
}
