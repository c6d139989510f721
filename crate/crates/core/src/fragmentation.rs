//! Reeb-invariant chart covers, partitions of unity, fragmentation of
//! Hamiltonians into chart-supported pieces, and reconstruction of the global
//! flow from the local ones by operator splitting.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{flow_point, hamiltonian_vector_field, loglog_slope, Isotopy, Scheme, VectorField};
use crate::error::{Error, Result};
use crate::fields::Plateau;
use crate::forms::ScalarField;
use crate::manifold::{wrap_centered, ManifoldKind, ModelManifold, Point};

/// Base box `Π [center_c − half_width, center_c + half_width]` times the full
/// Reeb circle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Chart {
    pub center: Vec<f64>,
    pub half_width: f64,
}

impl Chart {
    /// Membership of the closed box, with slack `tol`.
    pub fn contains(&self, p: &Point, tol: f64) -> bool {
        p.base()
            .iter()
            .zip(&self.center)
            .all(|(z, c)| wrap_centered(z - c, 1.0).abs() <= self.half_width + tol)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ChartCover {
    pub divisions: usize,
    pub overlap: f64,
    /// Width of the tiling cells, `1/divisions`.
    pub cell_width: f64,
    /// Side of each chart box, `cell_width·(1 + 2·overlap)`.
    pub side: f64,
    pub charts: Vec<Chart>,
}

impl ChartCover {
    /// Indices of the charts whose closed box contains `p`.
    pub fn charts_containing(&self, p: &Point) -> Vec<usize> {
        (0..self.charts.len()).filter(|&i| self.charts[i].contains(p, 0.0)).collect()
    }
}

/// `divisions^{2n}` boxes, one around each cell of the uniform base grid,
/// enlarged by `overlap` cell widths on every side.
pub fn build_cover(m: &ModelManifold, divisions: usize, overlap: f64) -> Result<ChartCover> {
    if m.kind() != ManifoldKind::ProductTorus {
        return Err(Error::domain("chart covers are built on product tori only"));
    }
    if divisions < 2 {
        return Err(Error::precondition("a cover needs at least 2 divisions per axis"));
    }
    if !(overlap > 0.0 && overlap < 1.0) {
        return Err(Error::domain(format!("overlap must lie in (0, 1), got {overlap}")));
    }
    let cell_width = 1.0 / divisions as f64;
    let side = cell_width * (1.0 + 2.0 * overlap);
    if side >= 1.0 {
        return Err(Error::domain(format!(
            "chart side {side} must be smaller than the fundamental domain"
        )));
    }
    let axes = 2 * m.n();
    let count = divisions.pow(axes as u32);
    let charts = (0..count)
        .map(|mut idx| {
            let center = (0..axes)
                .map(|_| {
                    let cell = idx % divisions;
                    idx /= divisions;
                    (cell as f64 + 0.5) * cell_width
                })
                .collect();
            Chart {
                center,
                half_width: side / 2.0,
            }
        })
        .collect();
    Ok(ChartCover {
        divisions,
        overlap,
        cell_width,
        side,
        charts,
    })
}

/// Raw plateau bumps of every chart, shared by the normalized fields.
struct CoverBumps {
    centers: Vec<Vec<f64>>,
    profile: Plateau,
}

impl CoverBumps {
    fn factors(&self, chart: usize, z: &[f64]) -> Vec<(f64, f64, f64)> {
        z[1..]
            .iter()
            .zip(&self.centers[chart])
            .map(|(zi, ci)| {
                let d = wrap_centered(zi - ci, 1.0);
                (self.profile.value(d.abs()), self.profile.derivative(d.abs()), d.signum())
            })
            .collect()
    }

    fn value(&self, chart: usize, z: &[f64]) -> f64 {
        self.factors(chart, z).iter().map(|f| f.0).product()
    }

    fn gradient(&self, chart: usize, z: &[f64]) -> Vec<f64> {
        let f = self.factors(chart, z);
        let mut g = vec![0.0; z.len()];
        for (c, gi) in g[1..].iter_mut().enumerate() {
            let others: f64 = f.iter().enumerate().filter(|(k, _)| *k != c).map(|(_, v)| v.0).product();
            *gi = f[c].1 * f[c].2 * others;
        }
        g
    }

    fn total(&self, z: &[f64]) -> f64 {
        (0..self.centers.len()).map(|i| self.value(i, z)).sum()
    }

    fn total_gradient(&self, z: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; z.len()];
        for i in 0..self.centers.len() {
            for (a, b) in g.iter_mut().zip(self.gradient(i, z)) {
                *a += b;
            }
        }
        g
    }
}

/// Reeb-invariant bumps `ρ_i`, one per chart.
#[derive(Debug, Clone)]
pub struct PartitionOfUnity {
    pub bumps: Vec<ScalarField>,
}

impl PartitionOfUnity {
    /// `max |Σ ρ_i − 1|` over `samples`.
    pub fn sum_defect(&self, samples: &[Point]) -> f64 {
        samples
            .iter()
            .map(|p| (self.bumps.iter().map(|b| b.value_at(0.0, p)).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Product plateau bumps (1 on the cell, 0 on the chart boundary) divided by
/// their pointwise sum.
pub fn partition_of_unity(m: &ModelManifold, cover: &ChartCover) -> Result<PartitionOfUnity> {
    let profile = Plateau::new(cover.cell_width / 2.0, cover.side / 2.0)?;
    let bumps = Arc::new(CoverBumps {
        centers: cover.charts.iter().map(|c| c.center.clone()).collect(),
        profile,
    });
    // Every point lies in some cell, where that chart's bump is 1.
    let probe = crate::sampling::grid(m, 4 * cover.divisions);
    if let Some(p) = probe.iter().find(|p| bumps.total(p.coords()) < 1.0 - 1e-12) {
        return Err(Error::Structural(format!("cover leaves {:?} uncovered", p.coords())));
    }
    let fields = (0..cover.charts.len())
        .map(|i| {
            let (vb, gb) = (bumps.clone(), bumps.clone());
            ScalarField::new(m.dim(), move |_, z| vb.value(i, z) / vb.total(z))
                .with_gradient(move |_, z| {
                    let (b, s) = (gb.value(i, z), gb.total(z));
                    let (db, ds) = (gb.gradient(i, z), gb.total_gradient(z));
                    db.iter().zip(&ds).map(|(a, c)| (a * s - b * c) / (s * s)).collect()
                })
                .reeb_invariant()
        })
        .collect();
    Ok(PartitionOfUnity { bumps: fields })
}

/// Pieces `ρ_i·H`.
pub fn fragment_hamiltonian(h: &ScalarField, pou: &PartitionOfUnity) -> Vec<ScalarField> {
    pou.bumps.iter().map(|rho| rho.mul(h)).collect()
}

/// `max |Σ pieces − H|` over `samples` at time 0.
pub fn reconstruction_defect(h: &ScalarField, pieces: &[ScalarField], samples: &[Point]) -> f64 {
    samples
        .iter()
        .map(|p| {
            let sum: f64 = pieces.iter().map(|k| k.value_at(0.0, p)).sum();
            (sum - h.value_at(0.0, p)).abs()
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Splitting {
    LieTrotter,
    Strang,
}

/// Numerical settings for the local flows and the global reference flow.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SplittingOptions {
    /// Total flow time.
    pub duration: f64,
    /// RK4 steps per local substep.
    pub substeps: usize,
    /// RK4 steps of the global reference flow.
    pub reference_steps: usize,
}

impl Default for SplittingOptions {
    fn default() -> Self {
        Self {
            duration: 1.0,
            substeps: 4,
            reference_steps: 1024,
        }
    }
}

/// Time-`duration` map obtained by composing the piece flows over `steps`
/// splitting steps.
pub fn fragmented_flow(
    fields: &[VectorField],
    scheme: Splitting,
    steps: usize,
    opts: SplittingOptions,
    p: &Point,
) -> Result<Point> {
    let h = opts.duration / steps.max(1) as f64;
    let sub = |field: &VectorField, dt: f64, q: &Point| -> Result<Point> {
        let iso = Isotopy::with_steps(field.clone(), 0.0, dt, opts.substeps, Scheme::Rk4)?;
        flow_point(&iso, q)
    };
    let mut q = p.clone();
    let last = fields.len().saturating_sub(1);
    for _ in 0..steps.max(1) {
        match scheme {
            Splitting::LieTrotter => {
                for f in fields {
                    q = sub(f, h, &q)?;
                }
            }
            Splitting::Strang => {
                for f in &fields[..last] {
                    q = sub(f, 0.5 * h, &q)?;
                }
                if let Some(f) = fields.last() {
                    q = sub(f, h, &q)?;
                }
                for f in fields[..last].iter().rev() {
                    q = sub(f, 0.5 * h, &q)?;
                }
            }
        }
    }
    Ok(q)
}

#[derive(Debug, Clone, Serialize)]
pub struct SplittingReport {
    pub scheme: Splitting,
    pub steps: usize,
    /// Deviation from the global flow at `steps`.
    pub max_deviation: f64,
    /// Order fitted over `steps`, `2·steps`, `4·steps`.
    pub empirical_order: f64,
    pub refinement: Vec<(usize, f64)>,
}

/// Compare the split flow of `pieces` with the global flow of `global` on
/// `samples`.
pub fn compose_local_flows(
    m: &ModelManifold,
    global: &ScalarField,
    pieces: &[ScalarField],
    scheme: Splitting,
    steps: usize,
    samples: &[Point],
    opts: SplittingOptions,
) -> Result<SplittingReport> {
    if pieces.is_empty() || samples.is_empty() || steps == 0 {
        return Err(Error::precondition("splitting needs pieces, samples and steps ≥ 1"));
    }
    let defect = reconstruction_defect(global, pieces, samples);
    if defect > 1e-10 {
        return Err(Error::precondition(format!(
            "pieces do not sum to the Hamiltonian (defect {defect:e})"
        )));
    }
    let fields: Vec<VectorField> = pieces.iter().map(|k| hamiltonian_vector_field(m, k)).collect();
    let reference = Isotopy::with_steps(
        hamiltonian_vector_field(m, global),
        0.0,
        opts.duration,
        opts.reference_steps,
        Scheme::Rk4,
    )?;
    let targets = samples
        .par_iter()
        .map(|p| flow_point(&reference, p))
        .collect::<Result<Vec<_>>>()?;
    let refinement = [steps, 2 * steps, 4 * steps]
        .iter()
        .map(|&n| -> Result<(usize, f64)> {
            let dev = samples
                .par_iter()
                .zip(&targets)
                .map(|(p, target)| Ok(m.distance(&fragmented_flow(&fields, scheme, n, opts, p)?, target)))
                .collect::<Result<Vec<f64>>>()?
                .into_iter()
                .fold(0.0, f64::max);
            Ok((n, dev))
        })
        .collect::<Result<Vec<_>>>()?;
    let ns: Vec<f64> = refinement.iter().map(|r| r.0 as f64).collect();
    let devs: Vec<f64> = refinement.iter().map(|r| r.1.max(f64::MIN_POSITIVE)).collect();
    Ok(SplittingReport {
        scheme,
        steps,
        max_deviation: refinement[0].1,
        empirical_order: -loglog_slope(&ns, &devs),
        refinement,
    })
}

/// Largest displacement, under the time-`duration` flow of each piece, of
/// sample points lying outside that piece's chart.
pub fn support_violation(
    m: &ModelManifold,
    cover: &ChartCover,
    pieces: &[ScalarField],
    samples: &[Point],
    duration: f64,
    steps: usize,
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (chart, piece) in cover.charts.iter().zip(pieces) {
        let iso = Isotopy::with_steps(hamiltonian_vector_field(m, piece), 0.0, duration, steps, Scheme::Rk4)?;
        let outside: Vec<&Point> = samples.iter().filter(|p| !chart.contains(p, 0.0)).collect();
        let moved = outside
            .par_iter()
            .map(|p| flow_point(&iso, p).map(|q| m.distance(p, &q)))
            .collect::<Result<Vec<f64>>>()?;
        worst = moved.into_iter().fold(worst, f64::max);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields;
    use crate::sampling::{grid, random_points};

    #[test]
    fn cover_box_arithmetic() {
        let m = ModelManifold::standard_torus(1);
        let cover = build_cover(&m, 2, 0.25).unwrap();
        assert_eq!(cover.charts.len(), 4);
        assert!((cover.side - 0.75).abs() < 1e-15);
        assert!(build_cover(&m, 1, 0.25).is_err());
        assert!(build_cover(&m, 2, 0.0).is_err());
        assert!(build_cover(&m, 2, 1.0).is_err());
        assert!(build_cover(&m, 2, 0.6).is_err());
        assert!(build_cover(&ModelManifold::cat_map_torus(), 2, 0.25).is_err());
        assert_eq!(build_cover(&ModelManifold::standard_torus(2), 3, 0.2).unwrap().charts.len(), 81);
    }

    #[test]
    fn cover_reaches_every_grid_point() {
        let m = ModelManifold::standard_torus(1);
        let cover = build_cover(&m, 3, 0.2).unwrap();
        for i in 0..100 {
            for j in 0..100 {
                let p = m.canonicalize(&[0.0, i as f64 / 100.0, j as f64 / 100.0]).unwrap();
                assert!(!cover.charts_containing(&p).is_empty());
            }
        }
    }

    #[test]
    fn partition_values() {
        let m = ModelManifold::standard_torus(1);
        let cover = build_cover(&m, 2, 0.25).unwrap();
        let pou = partition_of_unity(&m, &cover).unwrap();
        assert!(pou.sum_defect(&random_points(&m, 500, 2)) <= 1e-12);
        let lone = m.canonicalize(&[0.3, 0.25, 0.25]).unwrap();
        let values: Vec<f64> = pou.bumps.iter().map(|b| b.value_at(0.0, &lone)).collect();
        assert_eq!(values.iter().filter(|v| **v == 1.0).count(), 1);
        assert_eq!(values.iter().filter(|v| **v == 0.0).count(), 3);
        let shared = m.canonicalize(&[0.3, 0.55, 0.25]).unwrap();
        let values: Vec<f64> = pou.bumps.iter().map(|b| b.value_at(0.0, &shared)).collect();
        assert_eq!(values.iter().filter(|v| **v > 0.0).count(), 2);
        assert!((values.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        for b in &pou.bumps {
            assert!(b.is_reeb_invariant());
            for p in random_points(&m, 50, 4) {
                assert!(b.value_at(0.0, &p) >= 0.0);
            }
        }
    }

    #[test]
    fn partition_gradients_match_differences() {
        let m = ModelManifold::standard_torus(1);
        let pou = partition_of_unity(&m, &build_cover(&m, 3, 0.3).unwrap()).unwrap();
        let fd = crate::forms::FiniteDifference::default();
        for p in random_points(&m, 30, 8) {
            for b in &pou.bumps {
                let (g, n) = (b.gradient(0.0, p.coords(), fd), b.fd_gradient(0.0, p.coords(), fd));
                for (a, c) in g.iter().zip(&n) {
                    assert!((a - c).abs() < 1e-5 * a.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn fragments_sum_and_vanish() {
        let m = ModelManifold::standard_torus(1);
        let pou = partition_of_unity(&m, &build_cover(&m, 2, 0.25).unwrap()).unwrap();
        let zero = fragment_hamiltonian(&ScalarField::constant(3, 0.0), &pou);
        let h = fields::pendulum_integral(&m, 0);
        let pieces = fragment_hamiltonian(&h, &pou);
        let samples = grid(&m, 10);
        assert!(reconstruction_defect(&h, &pieces, &samples) <= 1e-12);
        assert!(pieces.iter().all(|k| k.is_reeb_invariant()));
        for p in &samples {
            assert!(zero.iter().all(|k| k.value_at(0.0, p) == 0.0));
        }
    }

    #[test]
    fn commuting_pieces_compose_exactly() {
        let m = ModelManifold::standard_torus(1);
        let pieces = vec![fields::sine(&m, 1, 1.0), fields::cosine(&m, 1, 2.0).scale(0.3)];
        let h = ScalarField::sum(&pieces);
        let report = compose_local_flows(
            &m,
            &h,
            &pieces,
            Splitting::LieTrotter,
            3,
            &grid(&m, 4),
            SplittingOptions::default(),
        )
        .unwrap();
        assert!(report.max_deviation <= 1e-10, "{report:?}");
    }

    #[test]
    fn single_piece_matches_reference() {
        let m = ModelManifold::standard_torus(1);
        let h = fields::bump_hamiltonian(&m, &[0.5, 0.5], 0.05, 0.3, 0.5).unwrap();
        let report = compose_local_flows(
            &m,
            &h,
            &[h.clone()],
            Splitting::Strang,
            16,
            &grid(&m, 3),
            SplittingOptions { substeps: 64, ..Default::default() },
        )
        .unwrap();
        assert!(report.max_deviation <= 1e-9, "{report:?}");
    }

    #[test]
    fn mismatched_pieces_are_rejected() {
        let m = ModelManifold::standard_torus(1);
        let h = fields::sine(&m, 1, 1.0);
        let err = compose_local_flows(
            &m,
            &h,
            &[fields::sine(&m, 2, 1.0)],
            Splitting::Strang,
            2,
            &grid(&m, 2),
            SplittingOptions::default(),
        );
        assert!(matches!(err, Err(Error::Precondition(_))));
    }
}
