//! One function per subcommand. Each returns whether all checks passed and
//! the JSON payload of the report.

use std::f64::consts::TAU;

use cosymplectic::dynamics::{
    commutator_flow, commutator_order, flow_with_trajectory, hamiltonian_vector_field, write_trajectory_csv, Isotopy,
    Scheme, VectorField,
};
use cosymplectic::fields;
use cosymplectic::flux::{
    eta_periods, flux_class, translation_loop, Cycle, CycleBasis, FluxClass, FluxOptions, Lattice,
};
use cosymplectic::forms::{volume_check, FiniteDifference, ScalarField};
use cosymplectic::fragmentation::{
    build_cover, compose_local_flows, fragment_hamiltonian, partition_of_unity, reconstruction_defect,
    support_violation, Splitting, SplittingOptions,
};
use cosymplectic::integrability::{conservation_along_flow, extract_monodromy, verify_commuting, IntegralSet};
use cosymplectic::sampling::{grid, random_points};
use cosymplectic::symplectization::{
    lift_isotopy, lifted_fiber_flux, mixed_cycle_period, mixed_cycle_prediction, verify_symplectic, LiftedPoint,
};
use cosymplectic::{Error, ManifoldKind, ModelManifold, Result};
use serde_json::{json, Value};

use crate::config::{
    CommutatorConfig, FluxConfig, FragmentConfig, IntegralSetName, IntegralsConfig, LiftConfig, ReebCheckConfig,
    SchemeName, VolumeConfig,
};

pub type Outcome = (bool, Value);

fn require_product(m: &ModelManifold, command: &str) -> Result<()> {
    if m.kind() != ManifoldKind::ProductTorus {
        return Err(Error::Domain(format!("{command} needs a product torus")));
    }
    Ok(())
}

fn base_center(m: &ModelManifold, center: &[f64]) -> Result<Vec<f64>> {
    match center.len() {
        0 => Ok(vec![0.5; 2 * m.n()]),
        l if l == 2 * m.n() => Ok(center.to_vec()),
        l => Err(Error::Domain(format!("center needs {} base coordinates, got {l}", 2 * m.n()))),
    }
}

pub fn reeb_check(m: &ModelManifold, cfg: &ReebCheckConfig, seed: u64) -> Result<Outcome> {
    let samples = random_points(m, cfg.samples.max(1), seed);
    match m.kind() {
        ManifoldKind::ProductTorus => {
            let deviation = samples
                .iter()
                .map(|p| m.distance(&m.reeb_flow(p, m.reeb_period()), p))
                .fold(0.0, f64::max);
            let passed = deviation <= cfg.tolerance;
            Ok((
                passed,
                json!({ "samples": samples.len(), "max_deviation": deviation, "tolerance": cfg.tolerance }),
            ))
        }
        ManifoldKind::MappingTorus => {
            let report = extract_monodromy(m)?;
            let stored = m.monodromy().expect("mapping torus has a monodromy");
            let passed = report.matrix == stored && report.determinant == 1 && report.residual <= 1e-8;
            Ok((passed, json!({ "monodromy": report, "stored": stored })))
        }
    }
}

/// Flux expected for the translation loop along coordinate `index`.
fn expected_translation_flux(m: &ModelManifold, index: usize) -> (Vec<f64>, f64) {
    let n = m.n();
    let mut h1 = vec![0.0; 2 * n];
    let mut eta = 0.0;
    if index == 0 {
        eta = m.reeb_period();
    } else if index <= n {
        // ι_{∂x_k}ω = a_k dy_k
        h1[n + index - 1] = m.weights()[index - 1];
    } else {
        h1[index - n - 1] = -m.weights()[index - n - 1];
    }
    (h1, eta)
}

pub fn flux(m: &ModelManifold, cfg: &FluxConfig) -> Result<Outcome> {
    let labels = m.coordinate_labels();
    let loops: Vec<String> = if cfg.loops.is_empty() {
        match m.kind() {
            ManifoldKind::ProductTorus => labels[1..].to_vec(),
            ManifoldKind::MappingTorus => vec!["theta".into()],
        }
    } else {
        cfg.loops.clone()
    };
    let basis = CycleBasis::coordinate_with_panels(m, cfg.panels);
    let opts = FluxOptions::default();
    let mut classes: Vec<(String, FluxClass, f64)> = Vec::new();
    for name in &loops {
        let index = labels
            .iter()
            .position(|l| l == name)
            .ok_or_else(|| Error::Domain(format!("unknown loop coordinate {name:?}; expected one of {labels:?}")))?;
        let class = flux_class(&translation_loop(m, index, cfg.steps)?, &basis, opts)?;
        let (h1, eta) = expected_translation_flux(m, index);
        let deviation = class
            .h1_pairings
            .iter()
            .zip(&h1)
            .map(|(a, b)| (a - b).abs())
            .fold((class.eta_component - eta).abs(), f64::max);
        classes.push((name.clone(), class, deviation));
    }
    let vectors: Vec<Vec<f64>> = classes
        .iter()
        .map(|c| c.1.h1_pairings.clone())
        .filter(|v| v.iter().any(|x| x.abs() > cfg.tolerance))
        .collect();
    let lattice = if vectors.is_empty() {
        None
    } else {
        Some(Lattice::from_vectors(m, vectors, cfg.tolerance)?)
    };
    let max_deviation = classes.iter().map(|c| c.2).fold(0.0, f64::max);
    let lattice_ok = lattice.as_ref().is_none_or(|l| l.in_weighted_lattice);
    let eta = eta_periods(m, &basis)?;
    let loops_json: Vec<Value> = classes
        .iter()
        .map(|(name, class, deviation)| json!({ "loop": name, "flux": class, "deviation": deviation }))
        .collect();
    Ok((
        max_deviation <= cfg.tolerance && lattice_ok,
        json!({
            "loops": loops_json,
            "lattice": lattice,
            "eta_periods": eta,
            "max_deviation": max_deviation,
            "tolerance": cfg.tolerance,
        }),
    ))
}

pub fn fragment(m: &ModelManifold, cfg: &FragmentConfig) -> Result<Outcome> {
    require_product(m, "fragment")?;
    let center = base_center(m, &cfg.center)?;
    let h = fields::bump_hamiltonian(m, &center, cfg.inner, cfg.outer, cfg.amplitude)?;
    let cover = build_cover(m, cfg.divisions, cfg.overlap)?;
    let pou = partition_of_unity(m, &cover)?;
    let pieces = fragment_hamiltonian(&h, &pou);
    let checks = random_points(m, 500, 17);
    let sum_defect = reconstruction_defect(&h, &pieces, &checks).max(pou.sum_defect(&checks));
    let support = support_violation(m, &cover, &pieces, &checks, 1.0, 32)?;
    let scheme = match cfg.scheme {
        SchemeName::LieTrotter => Splitting::LieTrotter,
        SchemeName::Strang => Splitting::Strang,
    };
    let min_order = cfg.min_order.unwrap_or(match scheme {
        Splitting::LieTrotter => 0.8,
        Splitting::Strang => 1.8,
    });
    let opts = SplittingOptions { substeps: cfg.substeps, ..Default::default() };
    let samples = grid(m, cfg.samples_per_axis);
    let report = compose_local_flows(m, &h, &pieces, scheme, cfg.steps, &samples, opts)?;
    let passed = report.empirical_order >= min_order && sum_defect <= cfg.tolerance && support <= cfg.tolerance;
    Ok((
        passed,
        json!({
            "charts": cover.charts.len(),
            "splitting": report,
            "min_order": min_order,
            "sum_defect": sum_defect,
            "support_violation": support,
            "tolerance": cfg.tolerance,
        }),
    ))
}

pub fn lift(m: &ModelManifold, cfg: &LiftConfig, seed: u64) -> Result<Outcome> {
    let samples: Vec<LiftedPoint> = random_points(m, cfg.samples.max(1), seed)
        .into_iter()
        .enumerate()
        .map(|(i, p)| LiftedPoint::new(p, 0.4 * i as f64))
        .collect::<Result<_>>()?;
    let fd = FiniteDifference::default();
    let mut flows = vec![("reeb", Isotopy::unit(VectorField::reeb(m, cfg.reeb_speed), 10))];
    if m.kind() == ManifoldKind::ProductTorus {
        let center = vec![0.5; 2 * m.n()];
        let bump = fields::bump_hamiltonian(m, &center, 0.05, 0.3, cfg.amplitude)?;
        flows.push(("bump", Isotopy::unit(hamiltonian_vector_field(m, &bump), cfg.steps.max(1))));
        let tilted = fields::coordinate(m, 0).scale(0.3).add(&bump);
        flows.push(("tilted_bump", Isotopy::unit(hamiltonian_vector_field(m, &tilted), cfg.steps.max(1))));
    }
    let mut residuals = serde_json::Map::new();
    let mut worst: f64 = 0.0;
    for (label, iso) in &flows {
        let lifted = lift_isotopy(iso);
        let r = verify_symplectic(m, |lp| lifted.time_one(lp), &samples, fd)?;
        worst = worst.max(r.max_residual);
        residuals.insert(label.to_string(), json!(r));
    }
    let mut mixed = Vec::new();
    let mut mixed_worst: f64 = 0.0;
    for i in 0..m.dim() {
        let gamma = Cycle::coordinate(m, i);
        if !gamma.is_closed(m, 1e-12)? {
            continue;
        }
        let period = mixed_cycle_period(m, &gamma, 32)?;
        let predicted = mixed_cycle_prediction(m, &gamma, 32)?;
        mixed_worst = mixed_worst.max((period - predicted).abs());
        mixed.push(json!({ "cycle": gamma.label, "period": period, "predicted": predicted }));
    }
    let reeb_loop = lift_isotopy(&translation_loop(m, 0, 8)?);
    let fiber_flux = lifted_fiber_flux(&reeb_loop, &samples[0], 4, 4, fd)?;
    let fiber_predicted = TAU * m.reeb_period();
    mixed_worst = mixed_worst.max((fiber_flux - fiber_predicted).abs());
    let passed = worst <= cfg.tolerance && mixed_worst <= cfg.mixed_tolerance;
    Ok((
        passed,
        json!({
            "symplectic": residuals,
            "max_residual": worst,
            "mixed_cycles": mixed,
            "reeb_loop_fiber_flux": { "value": fiber_flux, "predicted": fiber_predicted },
            "max_mixed_deviation": mixed_worst,
            "tolerance": cfg.tolerance,
            "mixed_tolerance": cfg.mixed_tolerance,
        }),
    ))
}

pub fn integrals(m: &ModelManifold, cfg: &IntegralsConfig, seed: u64) -> Result<Outcome> {
    require_product(m, "integrals")?;
    let set = match cfg.set {
        IntegralSetName::Pendulum => IntegralSet::pendulum(m),
        IntegralSetName::Sines => IntegralSet::separable_sines(m),
    };
    let samples = random_points(m, cfg.samples.max(1), seed);
    let commuting = verify_commuting(m, &set, &samples, cfg.bracket_tolerance)?;
    let h = ScalarField::sum(&set.integrals);
    let p0 = match &cfg.start {
        Some(raw) => m.canonicalize(raw)?,
        None => random_points(m, 1, seed.wrapping_add(1)).remove(0),
    };
    if cfg.steps == 0 || !(cfg.duration > 0.0) {
        return Err(Error::Domain("integrals needs steps ≥ 1 and a positive duration".into()));
    }
    let step = cfg.duration / cfg.steps as f64;
    let drift = conservation_along_flow(m, &h, &set, &p0, cfg.duration, step)?;
    if let Some(path) = &cfg.trajectory_csv {
        let generator = hamiltonian_vector_field(m, &h).add(&VectorField::reeb(m, 1.0));
        let iso = Isotopy::with_steps(generator, 0.0, cfg.duration, cfg.steps, Scheme::Rk4)?;
        let traj = flow_with_trajectory(&iso, &p0)?.trajectory.expect("trajectory requested");
        write_trajectory_csv(m, &traj, std::fs::File::create(path)?)?;
    }
    let passed = commuting.passed && drift.max_drift <= cfg.tolerance;
    Ok((
        passed,
        json!({
            "integrals": set.all_labels(),
            "commuting": commuting,
            "start": p0.coords(),
            "step": step,
            "conservation": drift,
            "tolerance": cfg.tolerance,
        }),
    ))
}

pub fn commutator(m: &ModelManifold, cfg: &CommutatorConfig) -> Result<Outcome> {
    require_product(m, "commutator")?;
    if cfg.eps.len() < 2 {
        return Err(Error::Domain("commutator needs at least two eps values".into()));
    }
    let samples = grid(m, cfg.samples_per_axis);
    let (x, y) = (m.x_index(0), m.y_index(0));
    let h = fields::sine(m, x, 1.0).scale(1.0 / TAU);
    let k = fields::sine(m, y, 1.0).scale(1.0 / TAU);
    let report = commutator_order(m, &h, &k, &cfg.eps, cfg.step_fraction, &samples)?;
    let partner = fields::cosine(m, x, 1.0).scale(1.0 / TAU);
    let commuting = commutator_flow(m, &h, &partner, cfg.commuting_eps, cfg.commuting_eps * cfg.step_fraction, &samples)?;
    let passed = report.slope >= cfg.min_slope && commuting.max_displacement <= cfg.tolerance;
    Ok((
        passed,
        json!({
            "order": report,
            "min_slope": cfg.min_slope,
            "commuting_eps": cfg.commuting_eps,
            "commuting_displacement": commuting.max_displacement,
            "tolerance": cfg.tolerance,
        }),
    ))
}

pub fn volume(m: &ModelManifold, cfg: &VolumeConfig, seed: u64) -> Result<Outcome> {
    let samples = random_points(m, cfg.samples.max(1), seed);
    let report = volume_check(m, &samples)?;
    let expected: f64 = m.weights().iter().product();
    let deviation = (report.max_abs - expected).abs().max((report.min_abs - expected).abs());
    let passed = report.passed && deviation <= cfg.tolerance * expected.max(1.0);
    Ok((
        passed,
        json!({ "volume": report, "expected": expected, "deviation": deviation, "tolerance": cfg.tolerance }),
    ))
}
