//! One instantaneous measurement: the ontic kick, the likelihood of the
//! record, the two epistemic updates and the precision/disturbance figures.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::apparatus::{pointer_to_record, sample_ready_state, ApparatusConfig, StreamRng};
use crate::error::{Error, Result};
use crate::observable::ObservableSpec;
use crate::phase_space::{advect_along_flow, flow_point, DensityField};

/// Quadrature order used to marginalise over the pointer momentum.
pub const DEFAULT_HERMITE_NODES: usize = 21;
/// Posterior mass below which an outcome is declared incompatible.
pub const POSTERIOR_MASS_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementOutcome {
    pub a_star: f64,
    pub cfg: ApparatusConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementDiagnostics {
    /// Precision `1 / sqrt(beta k Omega^2)`.
    pub epsilon: f64,
    /// Disturbance `sqrt(k / beta)`, the spread of the flow time.
    pub eta: f64,
    pub product: f64,
    pub ml_mean: f64,
    pub ml_std: f64,
}

/// Result of an ontic interaction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interaction {
    pub new_state: (f64, f64),
    pub outcome: MeasurementOutcome,
    /// Flow time `sqrt(k) P` applied to the system.
    pub flow_time: f64,
}

/// Couples the system at `state` to a freshly readied apparatus: samples
/// `(Q, P)`, flows the system along `A` for `sqrt(k) P` and reads the record
/// `(Q + sqrt(k) A(state)) / sqrt(k)`.
pub fn simulate_interaction(
    state: (f64, f64),
    a: &ObservableSpec,
    cfg: &ApparatusConfig,
    rng: &mut StreamRng,
) -> Result<Interaction> {
    cfg.validate()?;
    let (q_ready, p_ready) = sample_ready_state(cfg, rng);
    interact_with_pointer(state, a, cfg, q_ready, p_ready)
}

/// [`simulate_interaction`] with the pointer's ready state given explicitly.
pub fn interact_with_pointer(
    state: (f64, f64),
    a: &ObservableSpec,
    cfg: &ApparatusConfig,
    q_ready: f64,
    p_ready: f64,
) -> Result<Interaction> {
    cfg.validate()?;
    let grid = a.grid();
    if !grid.contains(state.0, state.1) {
        return Err(Error::InvalidParameter(format!(
            "state ({}, {}) lies outside the grid",
            state.0, state.1
        )));
    }
    let root_k = cfg.k.sqrt();
    let a_before = a.value_at(state.0, state.1)?;
    let flow_time = root_k * p_ready;
    let new_state = flow_point(a, state, flow_time, grid)?;
    let a_star = pointer_to_record(q_ready + root_k * a_before, cfg.k)?;
    Ok(Interaction {
        new_state,
        outcome: MeasurementOutcome { a_star, cfg: *cfg },
        flow_time,
    })
}

/// Gaussian likelihood of record `a_star` given true value `a`.
pub fn likelihood_eval(a_star: f64, a: f64, cfg: &ApparatusConfig) -> f64 {
    let rate = cfg.information_rate();
    let d = a_star - a;
    (rate / (2.0 * std::f64::consts::PI)).sqrt() * (-0.5 * rate * d * d).exp()
}

/// Nodes and weights of `n`-point Gauss-Hermite quadrature for the weight
/// `exp(-x^2)` (Golub-Welsch).
pub fn gauss_hermite(n: usize) -> Vec<(f64, f64)> {
    assert!(n >= 1);
    let mut jacobi = DMatrix::zeros(n, n);
    for i in 1..n {
        let b = (i as f64 / 2.0).sqrt();
        jacobi[(i, i - 1)] = b;
        jacobi[(i - 1, i)] = b;
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut rule: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let v0 = eig.eigenvectors[(0, k)];
            (eig.eigenvalues[k], std::f64::consts::PI.sqrt() * v0 * v0)
        })
        .collect();
    rule.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Symmetrise: the exact rule is symmetric about zero.
    for k in 0..n / 2 {
        let (lo, hi) = (rule[k], rule[n - 1 - k]);
        let x = 0.5 * (hi.0 - lo.0);
        let w = 0.5 * (lo.1 + hi.1);
        rule[k] = (-x, w);
        rule[n - 1 - k] = (x, w);
    }
    if n % 2 == 1 {
        rule[n / 2].0 = 0.0;
    }
    rule
}

/// Update for the fact of a measurement, outcome unknown: average of the
/// push-forwards along `A` over the unknown flow time `sqrt(k) P`,
/// `P ~ N(0, 1/beta)`.
pub fn disturbance_update(rho: &DensityField, a: &ObservableSpec, cfg: &ApparatusConfig) -> Result<DensityField> {
    disturbance_update_with(rho, a, cfg, DEFAULT_HERMITE_NODES)
}

pub fn disturbance_update_with(
    rho: &DensityField,
    a: &ObservableSpec,
    cfg: &ApparatusConfig,
    nodes: usize,
) -> Result<DensityField> {
    cfg.validate()?;
    if nodes == 0 {
        return Err(Error::InvalidParameter("need at least one quadrature node".into()));
    }
    if cfg.k == 0.0 || a.is_zero() {
        return Ok(rho.clone());
    }
    let scale = (2.0 / cfg.beta).sqrt() * cfg.k.sqrt();
    let norm = 1.0 / std::f64::consts::PI.sqrt();
    let grid = *rho.grid();
    let mut acc = vec![0.0; grid.len()];
    for (x, w) in gauss_hermite(nodes) {
        let pushed = advect_along_flow(rho, a, scale * x)?;
        for (s, v) in acc.iter_mut().zip(pushed.density.values()) {
            *s += w * norm * v;
        }
    }
    DensityField::new(grid, acc)
}

/// Bayesian update on the record `a_star`: multiply by the likelihood as a
/// function of `A(q, p)` and renormalise.
pub fn bayes_update(rho: &DensityField, a: &ObservableSpec, a_star: f64, cfg: &ApparatusConfig) -> Result<DensityField> {
    cfg.validate()?;
    rho.field().ensure_same_grid(&a.sampled, ("rho", "A"))?;
    let rate = cfg.information_rate();
    let values: Vec<f64> = rho
        .values()
        .iter()
        .zip(a.sampled.values())
        .map(|(r, av)| {
            let d = a_star - av;
            r * (-0.5 * rate * d * d).exp()
        })
        .collect();
    let mut post = DensityField::from_raw(*rho.grid(), values);
    let mass = post.mass();
    if !(mass > POSTERIOR_MASS_FLOOR) {
        return Err(Error::IncompatibleOutcome { mass });
    }
    post.normalize()?;
    Ok(post)
}

pub fn measurement_diagnostics(a_star: f64, cfg: &ApparatusConfig) -> Result<MeasurementDiagnostics> {
    cfg.validate()?;
    if !(cfg.k > 0.0) {
        return Err(Error::InvalidParameter("diagnostics need k > 0".into()));
    }
    let epsilon = 1.0 / cfg.information_rate().sqrt();
    let eta = (cfg.k / cfg.beta).sqrt();
    Ok(MeasurementDiagnostics {
        epsilon,
        eta,
        product: epsilon * eta,
        ml_mean: a_star,
        ml_std: epsilon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase_space::Grid2D;

    #[test]
    fn hermite_rule_integrates_moments() {
        let rule = gauss_hermite(21);
        let sqrt_pi = std::f64::consts::PI.sqrt();
        let m0: f64 = rule.iter().map(|(_, w)| w).sum();
        let m2: f64 = rule.iter().map(|(x, w)| w * x * x).sum();
        let m4: f64 = rule.iter().map(|(x, w)| w * x.powi(4)).sum();
        let m1: f64 = rule.iter().map(|(x, w)| w * x).sum();
        assert!((m0 - sqrt_pi).abs() < 1e-12);
        assert!(m1.abs() < 1e-14);
        assert!((m2 - sqrt_pi / 2.0).abs() < 1e-12);
        assert!((m4 - 3.0 * sqrt_pi / 4.0).abs() < 1e-12);
    }

    #[test]
    fn likelihood_values() {
        let cfg = ApparatusConfig::new(1.0, 1.0, 1.0).unwrap();
        let peak = likelihood_eval(0.3, 0.3, &cfg);
        assert!((peak - (1.0 / (2.0 * std::f64::consts::PI)).sqrt()).abs() < 1e-15);
        assert!((likelihood_eval(1.0, 0.0, &cfg) - 0.24197072451914337).abs() < 1e-12);
        // Normalised in a*: trapezoid over a wide range.
        let cfg = ApparatusConfig::new(2.0, 1.5, 0.7).unwrap();
        let h = 1e-3;
        let total: f64 = (-10_000..=10_000).map(|i| likelihood_eval(i as f64 * h, 0.4, &cfg) * h).sum();
        assert!((total - 1.0).abs() < 1e-6);
    }

    #[test]
    fn diagnostics_identity() {
        let cfg = ApparatusConfig::new(1.0, 2.0, 1.0).unwrap();
        let d = measurement_diagnostics(1.3, &cfg).unwrap();
        assert!((d.epsilon - 0.5).abs() < 1e-15);
        assert!((d.eta - 1.0).abs() < 1e-15);
        assert!((d.product - 0.5).abs() < 1e-15);
        assert_eq!(d.ml_mean, 1.3);
        assert_eq!(d.ml_std, d.epsilon);
        let d4 = measurement_diagnostics(1.3, &ApparatusConfig { k: 4.0, ..cfg }).unwrap();
        assert!((d4.epsilon - d.epsilon / 2.0).abs() < 1e-15);
        assert!((d4.eta - 2.0 * d.eta).abs() < 1e-15);
        assert!((d4.product - d.product).abs() < 1e-15);
        assert!(measurement_diagnostics(0.0, &ApparatusConfig { k: 0.0, ..cfg }).is_err());
    }

    #[test]
    fn linear_kick() {
        let g = Grid2D::square(4.0, 64).unwrap();
        let a = ObservableSpec::parse("q", &g, 0.0).unwrap();
        let cfg = ApparatusConfig::new(1.0, 1.0, 4.0).unwrap();
        let hit = interact_with_pointer((1.0, 0.0), &a, &cfg, 0.0, 0.5).unwrap();
        assert!((hit.new_state.0 - 1.0).abs() < 1e-12);
        assert!((hit.new_state.1 + 1.0).abs() < 1e-12);
        // Pointer moved by sqrt(k) q = 2, so the record is 2 / sqrt(k) = 1.
        assert!((hit.outcome.a_star - 1.0).abs() < 1e-12);
    }

    #[test]
    fn energy_conserved_under_own_flow() {
        let g = Grid2D::square(4.0, 64).unwrap();
        let a = ObservableSpec::parse("0.5*(2.25*q^2 + p^2)", &g, 0.0).unwrap();
        let cfg = ApparatusConfig::new(1.0, 1.0, 2.0).unwrap();
        let hit = interact_with_pointer((1.0, 0.5), &a, &cfg, 0.1, 1.3).unwrap();
        let before = a.value_at(1.0, 0.5).unwrap();
        let after = a.value_at(hit.new_state.0, hit.new_state.1).unwrap();
        assert!((before - after).abs() < 1e-8);
    }

    #[test]
    fn zero_strength_has_no_record() {
        let g = Grid2D::square(4.0, 64).unwrap();
        let a = ObservableSpec::parse("q", &g, 0.0).unwrap();
        let cfg = ApparatusConfig::new(1.0, 1.0, 0.0).unwrap();
        assert!(interact_with_pointer((1.0, 0.0), &a, &cfg, 0.3, 0.5).is_err());
        // The flow itself is trivial.
        let pushed = flow_point(&a, (1.0, 0.0), 0.0, &g).unwrap();
        assert_eq!(pushed, (1.0, 0.0));
    }

    #[test]
    fn kick_outside_grid_names_boundary() {
        let g = Grid2D::square(2.0, 32).unwrap();
        let a = ObservableSpec::parse("q", &g, 0.0).unwrap();
        let cfg = ApparatusConfig::new(1.0, 1.0, 4.0).unwrap();
        match interact_with_pointer((1.0, 0.0), &a, &cfg, 0.0, 2.0) {
            Err(Error::FlowExit { boundary, .. }) => assert_eq!(boundary, "p_min"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn incompatible_outcome() {
        let g = Grid2D::square(4.0, 32).unwrap();
        let rho = DensityField::gaussian(g, (0.0, 0.0), (0.3, 0.3)).unwrap();
        let a = ObservableSpec::parse("q", &g, 0.0).unwrap();
        let cfg = ApparatusConfig::new(100.0, 10.0, 10.0).unwrap();
        assert!(matches!(
            bayes_update(&rho, &a, 3.9, &cfg),
            Err(Error::IncompatibleOutcome { .. })
        ));
    }
}
