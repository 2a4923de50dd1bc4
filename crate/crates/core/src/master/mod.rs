//! Continuous measurement: the master equation for discarded records
//! (Liouville flow plus double-bracket diffusion) and its stochastic
//! counterpart for read records, with any number of channels.

mod trajectory;

pub use trajectory::{run_trajectory, ChannelSeries, TrajectoryRecord};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::apparatus::{ApparatusConfig, StreamRng};
use crate::error::{Error, Result};
use crate::observable::ObservableSpec;
use crate::phase_space::{advect_along_flow, phase_space_average, DensityField, DiffOrder, FlowDerivative, Grid2D};

/// Safety factor in the explicit diffusion stability bound.
pub const CFL_SAFETY: f64 = 0.4;
/// Substeps per step that `Substeps::Auto` may use before refusing `dt`.
pub const MAX_AUTO_SUBSTEPS: usize = 1000;
/// Largest fraction of the mass one stochastic step may clip.
pub const CLIP_LIMIT: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelMode {
    #[default]
    Read,
    Discard,
}

/// One continuously running measurement of `observable`.
#[derive(Debug, Clone)]
pub struct MeasurementChannel {
    pub observable: ObservableSpec,
    pub cfg: ApparatusConfig,
    pub mode: ChannelMode,
}

impl MeasurementChannel {
    pub fn new(observable: ObservableSpec, cfg: ApparatusConfig, mode: ChannelMode) -> Result<Self> {
        cfg.validate()?;
        observable.sampled.check_finite("observable")?;
        if mode == ChannelMode::Read && !(cfg.k > 0.0) {
            return Err(Error::InvalidParameter(
                "a read channel needs k > 0 to produce a record".into(),
            ));
        }
        Ok(MeasurementChannel { observable, cfg, mode })
    }

    pub fn is_read(&self) -> bool {
        self.mode == ChannelMode::Read
    }

    fn at_time(&self, t: f64) -> Result<Self> {
        Ok(MeasurementChannel {
            observable: self.observable.at_time(t)?,
            ..self.clone()
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Strang splitting with semi-Lagrangian advection.
    #[default]
    SplittingSl,
}

/// Diffusion substeps per time step: chosen from the stability bound, or a
/// fixed count. Serialised as `"auto"` or an integer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "SubstepsRepr", into = "SubstepsRepr")]
pub enum Substeps {
    #[default]
    Auto,
    Fixed(usize),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum SubstepsRepr {
    Count(usize),
    Word(String),
}

impl TryFrom<SubstepsRepr> for Substeps {
    type Error = String;

    fn try_from(r: SubstepsRepr) -> std::result::Result<Self, String> {
        match r {
            SubstepsRepr::Count(0) => Err("substep count must be positive".into()),
            SubstepsRepr::Count(n) => Ok(Substeps::Fixed(n)),
            SubstepsRepr::Word(w) if w == "auto" => Ok(Substeps::Auto),
            SubstepsRepr::Word(w) => Err(format!("expected \"auto\" or a positive integer, got \"{w}\"")),
        }
    }
}

impl From<Substeps> for SubstepsRepr {
    fn from(s: Substeps) -> Self {
        match s {
            Substeps::Auto => SubstepsRepr::Word("auto".into()),
            Substeps::Fixed(n) => SubstepsRepr::Count(n),
        }
    }
}

/// How a read channel's record reweights the density.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordUpdate {
    /// `rho *= exp(-c dt (A - a*)^2 / 2)`: the Gaussian likelihood of the
    /// step's record. Agrees with the Euler-Maruyama factor to Ito order,
    /// keeps `rho` positive and updates Gaussian variances deterministically.
    #[default]
    Likelihood,
    /// `rho *= 1 + sqrt(c) (A - <A>) dW`, negative values clipped.
    EulerMaruyama,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionConfig {
    pub dt: f64,
    pub t_end: f64,
    pub seed: u64,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default)]
    pub substeps_diffusion: Substeps,
    #[serde(default)]
    pub record_update: RecordUpdate,
    /// Stencil of the diffusion operator.
    #[serde(default = "fourth_order")]
    pub stencil: DiffOrder,
}

fn fourth_order() -> DiffOrder {
    DiffOrder::Fourth
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::config("evolution.dt", format!("must be positive, got {}", self.dt)));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::config("evolution.t_end", format!("must be positive, got {}", self.t_end)));
        }
        Ok(())
    }

    /// Number of steps to reach `t_end` (the last step may overshoot by
    /// less than `1e-9 dt`).
    pub fn steps(&self) -> usize {
        ((self.t_end / self.dt) - 1e-9).ceil().max(1.0) as usize
    }
}

/// Largest stable explicit diffusion substep,
/// `0.4 min(h)^2 / sum_j (k_j / 2 beta_j) max|grad A_j|^2`. Infinite when no
/// channel diffuses.
pub fn diffusion_cfl_bound(grid: &Grid2D, channels: &[MeasurementChannel]) -> f64 {
    let h = grid.hq().min(grid.hp());
    let rate: f64 = channels
        .iter()
        .map(|c| c.cfg.diffusion_coefficient() * c.observable.max_gradient_sq())
        .sum();
    if rate > 0.0 {
        CFL_SAFETY * h * h / rate
    } else {
        f64::INFINITY
    }
}

/// How one diffusion step of length `dt` is divided.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffusionPlan {
    pub substeps: usize,
    pub dt_sub: f64,
    /// The stability bound on `dt_sub`.
    pub dt_sub_max: f64,
}

pub fn plan_diffusion(grid: &Grid2D, channels: &[MeasurementChannel], dt: f64, substeps: Substeps) -> Result<DiffusionPlan> {
    let dt_sub_max = diffusion_cfl_bound(grid, channels);
    if dt_sub_max.is_infinite() {
        return Ok(DiffusionPlan {
            substeps: 0,
            dt_sub: 0.0,
            dt_sub_max,
        });
    }
    let (n, limit) = match substeps {
        Substeps::Auto => (((dt / dt_sub_max) * (1.0 - 1e-12)).ceil().max(1.0) as usize, MAX_AUTO_SUBSTEPS),
        Substeps::Fixed(n) => (n.max(1), n.max(1)),
    };
    if n > limit || dt / n as f64 > dt_sub_max * (1.0 + 1e-12) {
        return Err(Error::Cfl {
            dt,
            bound: limit as f64 * dt_sub_max,
            substeps: limit,
            dt_sub: dt_sub_max,
        });
    }
    Ok(DiffusionPlan {
        substeps: n,
        dt_sub: dt / n as f64,
        dt_sub_max,
    })
}

/// Result of one time step.
#[derive(Debug, Clone)]
pub struct Stepped {
    pub density: DensityField,
    /// Mass change over the step before the final renormalisation.
    pub mass_drift: f64,
    /// Record values per channel; `NaN` for discard channels.
    pub a_star: Vec<f64>,
    /// Wiener increments per channel; `NaN` for discard channels.
    pub dw: Vec<f64>,
    /// Fraction of the mass removed by clipping negative values.
    pub clipped: f64,
}

/// Steps the master equation for a fixed Hamiltonian and channel set,
/// keeping the diffusion operators and scratch buffers between steps.
/// Time-dependent observables are re-sampled every step.
#[derive(Debug, Clone)]
pub struct Propagator {
    grid: Grid2D,
    hamiltonian: ObservableSpec,
    channels: Vec<MeasurementChannel>,
    dt: f64,
    plan: DiffusionPlan,
    substeps: Substeps,
    record_update: RecordUpdate,
    stencil: DiffOrder,
    ops: Vec<(f64, FlowDerivative)>,
    scratch: [Vec<f64>; 3],
}

impl Propagator {
    /// Fails with a CFL error when `dt` cannot be resolved by the diffusion
    /// substeps allowed.
    pub fn new(hamiltonian: ObservableSpec, channels: Vec<MeasurementChannel>, dt: f64, substeps: Substeps) -> Result<Self> {
        let grid = *hamiltonian.grid();
        for c in &channels {
            c.observable.sampled.ensure_same_grid(&hamiltonian.sampled, ("A", "H"))?;
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
        }
        let plan = plan_diffusion(&grid, &channels, dt, substeps)?;
        let mut prop = Propagator {
            grid,
            hamiltonian,
            channels,
            dt,
            plan,
            substeps,
            record_update: RecordUpdate::default(),
            stencil: DiffOrder::Fourth,
            ops: Vec::new(),
            scratch: [vec![0.0; grid.len()], vec![0.0; grid.len()], vec![0.0; grid.len()]],
        };
        prop.rebuild_ops();
        Ok(prop)
    }

    pub fn with_record_update(mut self, update: RecordUpdate) -> Self {
        self.record_update = update;
        self
    }

    /// Stencil of the diffusion operator; fourth order unless set.
    pub fn with_stencil(mut self, order: DiffOrder) -> Self {
        self.stencil = order;
        self.rebuild_ops();
        self
    }

    fn rebuild_ops(&mut self) {
        self.ops = self
            .channels
            .iter()
            .filter(|c| c.cfg.k > 0.0)
            .map(|c| {
                let op = FlowDerivative::new(&self.grid, c.observable.d_dq.values(), c.observable.d_dp.values(), self.stencil);
                (c.cfg.diffusion_coefficient(), op)
            })
            .collect();
    }

    pub fn channels(&self) -> &[MeasurementChannel] {
        &self.channels
    }

    pub fn hamiltonian(&self) -> &ObservableSpec {
        &self.hamiltonian
    }

    pub fn plan(&self) -> DiffusionPlan {
        self.plan
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn has_read_channels(&self) -> bool {
        self.channels.iter().any(MeasurementChannel::is_read)
    }

    fn update_channels(&mut self, t: f64) -> Result<()> {
        if self.channels.iter().any(|c| c.observable.is_time_dependent()) {
            for c in &mut self.channels {
                *c = c.at_time(t)?;
            }
            self.plan = plan_diffusion(&self.grid, &self.channels, self.dt, self.substeps)?;
            self.rebuild_ops();
        }
        Ok(())
    }

    /// Strang splitting over `[t, t + dt]`: half-step flow under `H`,
    /// diffusion for the full step, half-step flow. Returns the density and
    /// the mass drift accumulated before the final renormalisation.
    fn drift_diffusion(&mut self, rho: &DensityField, t: f64) -> Result<(DensityField, f64)> {
        let dt = self.dt;
        self.update_channels(t + 0.5 * dt)?;
        let h_first;
        let h_second;
        let (h1, h2) = if self.hamiltonian.is_time_dependent() {
            h_first = self.hamiltonian.at_time(t + 0.25 * dt)?;
            h_second = self.hamiltonian.at_time(t + 0.75 * dt)?;
            (&h_first, &h_second)
        } else {
            (&self.hamiltonian, &self.hamiltonian)
        };
        let first = advect_along_flow(rho, h1, 0.5 * dt)?;
        let mut drift = first.mass_drift;
        let mut density = first.density;
        if self.plan.substeps > 0 {
            let mut values = density.field().clone().into_values();
            diffuse(&mut self.ops, self.plan, &mut self.scratch, &mut values);
            for v in values.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            density = DensityField::from_raw(self.grid, values);
            drift += density.normalize()? - 1.0;
        }
        // The second half-flow reuses the same operator when H is static.
        let second = advect_along_flow(&density, h2, 0.5 * dt)?;
        drift += second.mass_drift;
        let mut density = second.density;
        density.check_margin(crate::phase_space::DEFAULT_MARGIN_CELLS)?;
        density.normalize()?;
        Ok((density, drift))
    }

    /// One step of the master equation with the records discarded.
    pub fn step_deterministic(&mut self, rho: &DensityField, t: f64) -> Result<Stepped> {
        let (density, mass_drift) = self.drift_diffusion(rho, t)?;
        let n = self.channels.len();
        Ok(Stepped {
            density,
            mass_drift,
            a_star: vec![f64::NAN; n],
            dw: vec![f64::NAN; n],
            clipped: 0.0,
        })
    }

    /// One step of the stochastic master equation, drawing `dW_j ~ N(0, dt)`
    /// for every read channel from its own stream `rngs[j]`.
    pub fn step_stochastic(&mut self, rho: &DensityField, t: f64, rngs: &mut [StreamRng]) -> Result<Stepped> {
        if rngs.len() != self.channels.len() {
            return Err(Error::InvalidParameter(format!(
                "{} random streams for {} channels",
                rngs.len(),
                self.channels.len()
            )));
        }
        let sd = self.dt.sqrt();
        let dw: Vec<f64> = self
            .channels
            .iter()
            .zip(rngs.iter_mut())
            .map(|(c, rng)| {
                if c.is_read() {
                    let z: f64 = StandardNormal.sample(rng);
                    z * sd
                } else {
                    f64::NAN
                }
            })
            .collect();
        self.step_with_increments(rho, t, &dw)
    }

    /// As [`Propagator::step_stochastic`] with prescribed increments
    /// (entries for discard channels are ignored).
    pub fn step_with_increments(&mut self, rho: &DensityField, t: f64, dw: &[f64]) -> Result<Stepped> {
        if !self.has_read_channels() {
            return Err(Error::InvalidParameter("stochastic step needs at least one read channel".into()));
        }
        if dw.len() != self.channels.len() {
            return Err(Error::InvalidParameter(format!(
                "{} increments for {} channels",
                dw.len(),
                self.channels.len()
            )));
        }
        let (mut density, mass_drift) = self.drift_diffusion(rho, t)?;
        let dt = self.dt;

        // (sqrt(c_j) dW_j, <A_j>) for read channels.
        let mut terms = Vec::new();
        let mut a_star = vec![f64::NAN; self.channels.len()];
        let mut dw_out = vec![f64::NAN; self.channels.len()];
        for (j, c) in self.channels.iter().enumerate() {
            if c.is_read() {
                let mean = phase_space_average(&density, &c.observable.sampled)?;
                let root_c = c.cfg.information_rate().sqrt();
                a_star[j] = mean + dw[j] / (root_c * dt);
                dw_out[j] = dw[j];
                terms.push((root_c * dw[j], mean, c.observable.sampled.values()));
            }
        }

        let fraction = match self.record_update {
            RecordUpdate::Likelihood => {
                // Log-weights, shifted so the largest is zero.
                let terms: Vec<_> = self
                    .channels
                    .iter()
                    .enumerate()
                    .filter(|(_, c)| c.is_read())
                    .map(|(j, c)| (0.5 * c.cfg.information_rate() * dt, a_star[j], c.observable.sampled.values()))
                    .collect();
                let log_w = |k: usize| -> f64 { terms.iter().map(|(h, a, v)| -h * (v[k] - a) * (v[k] - a)).sum() };
                let values = density.values_mut();
                let top = (0..values.len())
                    .filter(|&k| values[k] > 0.0)
                    .map(log_w)
                    .fold(f64::NEG_INFINITY, f64::max);
                for (k, v) in values.iter_mut().enumerate() {
                    if *v > 0.0 {
                        *v *= (log_w(k) - top).exp();
                    }
                }
                0.0
            }
            RecordUpdate::EulerMaruyama => {
                let values = density.values_mut();
                let mut clipped = 0.0;
                let mut kept = 0.0;
                for (k, v) in values.iter_mut().enumerate() {
                    let mut factor = 1.0;
                    for (s, mean, a) in &terms {
                        factor += s * (a[k] - mean);
                    }
                    let w = *v * factor;
                    if w < 0.0 {
                        clipped -= w;
                        *v = 0.0;
                    } else {
                        kept += w;
                        *v = w;
                    }
                }
                let fraction = if kept + clipped > 0.0 { clipped / (kept + clipped) } else { 1.0 };
                if fraction > CLIP_LIMIT {
                    return Err(Error::Clipping { fraction });
                }
                fraction
            }
        };
        density.normalize()?;
        Ok(Stepped {
            density,
            mass_drift,
            a_star,
            dw: dw_out,
            clipped: fraction,
        })
    }
}

/// Explicit Euler substeps of `d rho/dt = sum_j (k_j/2 beta_j) D_j D_j rho`.
fn diffuse(ops: &mut [(f64, FlowDerivative)], plan: DiffusionPlan, scratch: &mut [Vec<f64>; 3], values: &mut [f64]) {
    let [d1, d2, acc] = scratch;
    for _ in 0..plan.substeps {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for (coef, op) in ops.iter_mut() {
            op.apply(values, d1);
            op.apply(d1, d2);
            let c = *coef * plan.dt_sub;
            for (a, d) in acc.iter_mut().zip(d2.iter()) {
                *a += c * d;
            }
        }
        for (v, a) in values.iter_mut().zip(acc.iter()) {
            *v += a;
        }
    }
}

/// One deterministic step from the observables' own sampling time.
pub fn step_deterministic(rho: &DensityField, h: &ObservableSpec, channels: &[MeasurementChannel], dt: f64) -> Result<Stepped> {
    let t = h.time();
    Propagator::new(h.clone(), channels.to_vec(), dt, Substeps::Auto)?.step_deterministic(rho, t)
}

/// One stochastic step; `rngs` holds one stream per channel.
pub fn step_stochastic(
    rho: &DensityField,
    h: &ObservableSpec,
    channels: &[MeasurementChannel],
    dt: f64,
    rngs: &mut [StreamRng],
) -> Result<Stepped> {
    let t = h.time();
    Propagator::new(h.clone(), channels.to_vec(), dt, Substeps::Auto)?.step_stochastic(rho, t, rngs)
}

/// Record value implied by an increment: `<A> + dW / (sqrt(beta k Omega^2) dt)`.
pub fn synthetic_record(rho: &DensityField, channel: &MeasurementChannel, dw: f64, dt: f64) -> Result<f64> {
    if !channel.is_read() {
        return Err(Error::InvalidParameter("synthetic record requested for a discard channel".into()));
    }
    let mean = phase_space_average(rho, &channel.observable.sampled)?;
    Ok(mean + dw / (channel.cfg.information_rate().sqrt() * dt))
}

/// Characteristic times of a measured oscillator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Timescales {
    /// `1 / omega`.
    pub tau_dyn: f64,
    /// `beta / (k omega^2)`.
    pub tau_dif: f64,
    /// `1 / (beta k Omega^2 dE^2)`.
    pub tau_col: f64,
}

pub fn timescales(omega: f64, cfg: &ApparatusConfig, delta_e: f64) -> Result<Timescales> {
    if !(omega > 0.0) {
        return Err(Error::InvalidParameter(format!("omega must be positive, got {omega}")));
    }
    if !(delta_e > 0.0) {
        return Err(Error::InvalidParameter(format!("target spread must be positive, got {delta_e}")));
    }
    cfg.validate()?;
    Ok(Timescales {
        tau_dyn: 1.0 / omega,
        tau_dif: cfg.beta / (cfg.k * omega * omega),
        tau_col: 1.0 / (cfg.information_rate() * delta_e * delta_e),
    })
}
