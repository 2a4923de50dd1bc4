use crate::apparatus::channel_rng;
use crate::error::{Error, Result};
use crate::phase_space::{cumulants_of_marginal, pairwise_sum_by, shannon_entropy, DensityField, Marginal};
use crate::scenario::Scenario;

use super::Propagator;

/// Per-channel columns of a trajectory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChannelSeries {
    pub a_star: Vec<f64>,
    pub dw: Vec<f64>,
    /// `kappa[n]` holds the cumulant of order `n + 1` of `rho(A_j; t)`.
    pub kappa: [Vec<f64>; 4],
}

/// Everything recorded along one run. Row 0 is the initial state, where the
/// record and increment columns are `NaN`.
#[derive(Debug, Default)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub entropy: Vec<f64>,
    pub mass_drift: Vec<f64>,
    pub q_mean: Vec<f64>,
    pub q_var: Vec<f64>,
    pub p_mean: Vec<f64>,
    pub p_var: Vec<f64>,
    pub channels: Vec<ChannelSeries>,
    pub snapshots: Vec<(f64, DensityField)>,
    pub complete: bool,
    /// The error that stopped the run early, if any.
    pub failure: Option<Error>,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    fn push_state(&mut self, t: f64, rho: &DensityField, observables: &[&crate::ObservableSpec]) -> Result<()> {
        let g = rho.grid();
        let v = rho.values();
        let area = g.cell_area();
        let moment = |f: &dyn Fn(usize) -> f64| pairwise_sum_by(v.len(), &|k| v[k] * f(k)) * area;
        let qm = moment(&|k| g.point(k).0);
        let pm = moment(&|k| g.point(k).1);
        self.times.push(t);
        self.entropy.push(shannon_entropy(rho));
        self.q_mean.push(qm);
        self.p_mean.push(pm);
        self.q_var.push(moment(&|k| (g.point(k).0 - qm).powi(2)));
        self.p_var.push(moment(&|k| (g.point(k).1 - pm).powi(2)));
        for (series, a) in self.channels.iter_mut().zip(observables) {
            let kappa = cumulants_of_marginal(&Marginal::from_cells(rho, a)?, 4)?;
            for (col, value) in series.kappa.iter_mut().zip(kappa) {
                col.push(value);
            }
        }
        Ok(())
    }
}

/// Integrates a scenario from `t = 0` to `t_end`.
///
/// Failures before the first step (for instance a `dt` above the diffusion
/// bound) are returned as errors. A failure part-way through stops the run
/// and is stored in the record, which is then marked incomplete.
pub fn run_trajectory(scenario: &Scenario) -> Result<TrajectoryRecord> {
    let evo = scenario.evolution;
    let mut prop = Propagator::new(
        scenario.hamiltonian.clone(),
        scenario.channels.clone(),
        evo.dt,
        evo.substeps_diffusion,
    )?
    .with_record_update(evo.record_update)
    .with_stencil(evo.stencil);
    let stochastic = prop.has_read_channels();
    let mut rngs: Vec<_> = (0..scenario.channels.len())
        .map(|j| channel_rng(evo.seed, j as u64))
        .collect();
    let steps = evo.steps();
    let snap_steps = scenario.output.snapshot_steps(evo.dt, steps);
    let every = scenario.output.series_every.max(1);

    let mut rec = TrajectoryRecord {
        channels: vec![ChannelSeries::default(); scenario.channels.len()],
        ..Default::default()
    };
    let mut rho = scenario.initial.clone();
    rho.check_margin(crate::phase_space::DEFAULT_MARGIN_CELLS)?;
    let observables: Vec<_> = prop.channels().iter().map(|c| c.observable.clone()).collect();
    let refs: Vec<_> = observables.iter().collect();
    rec.push_state(0.0, &rho, &refs)?;
    rec.mass_drift.push(0.0);
    for c in &mut rec.channels {
        c.a_star.push(f64::NAN);
        c.dw.push(f64::NAN);
    }
    if snap_steps.contains(&0) {
        rec.snapshots.push((0.0, rho.clone()));
    }

    let mut drift_since_row = 0.0;
    for n in 0..steps {
        let t = n as f64 * evo.dt;
        let stepped = if stochastic {
            prop.step_stochastic(&rho, t, &mut rngs)
        } else {
            prop.step_deterministic(&rho, t)
        };
        let stepped = match stepped {
            Ok(s) => s,
            Err(e) => {
                rec.failure = Some(e);
                return Ok(rec);
            }
        };
        rho = stepped.density;
        drift_since_row += stepped.mass_drift;
        let t_next = (n + 1) as f64 * evo.dt;
        if (n + 1) % every == 0 || n + 1 == steps {
            let observables: Vec<_> = prop.channels().iter().map(|c| &c.observable).collect();
            if let Err(e) = rec.push_state(t_next, &rho, &observables) {
                rec.failure = Some(e);
                return Ok(rec);
            }
            rec.mass_drift.push(drift_since_row);
            drift_since_row = 0.0;
            for (series, (a, dw)) in rec.channels.iter_mut().zip(stepped.a_star.iter().zip(&stepped.dw)) {
                series.a_star.push(*a);
                series.dw.push(*dw);
            }
        }
        if snap_steps.contains(&(n + 1)) {
            rec.snapshots.push((t_next, rho.clone()));
        }
    }
    rec.complete = true;
    Ok(rec)
}
