//! Checks of trajectories against the analytic results they should obey,
//! and closed-form references.

use serde::Serialize;

use crate::apparatus::ApparatusConfig;
use crate::error::{Error, Result};
use crate::master::{MeasurementChannel, TrajectoryRecord};
use crate::observable::ObservableSpec;
use crate::phase_space::{
    gradient, pairwise_sum_by, shannon_entropy, BoundaryMode, DensityField, DiffOrder, ScalarField,
};

/// `{A, log rho}` is only evaluated where `rho` exceeds this fraction of its
/// maximum.
pub const LOG_DENSITY_FLOOR: f64 = 1e-12;
/// Minimum snapshots per diffusion time for rate checks.
pub const MIN_SNAPSHOTS_PER_TAU_DIF: f64 = 8.0;
/// Minimum number of trajectories for ensemble statistics.
pub const MIN_ENSEMBLE: usize = 30;
/// Bands holding less than this mass are ignored by the uniformity check.
pub const LEVELSET_MASS_FLOOR: f64 = 1e-3;

/// Boltzmann constant, J/K (CODATA 2018, exact).
pub const BOLTZMANN: f64 = 1.380_649e-23;
/// Reduced Planck constant, J s (CODATA 2018, exact).
pub const HBAR: f64 = 1.054_571_817e-34;

/// `log rho` floored at `LOG_DENSITY_FLOOR * max rho`, its gradient, and
/// the mass in cells at or below the floor.
struct LogDensity {
    d_dq: ScalarField,
    d_dp: ScalarField,
    log: Vec<f64>,
    mask: Vec<bool>,
    excluded_mass: f64,
}

fn log_density(rho: &DensityField) -> LogDensity {
    let grid = *rho.grid();
    let v = rho.values();
    let floor = LOG_DENSITY_FLOOR * rho.field().max();
    let mask: Vec<bool> = v.iter().map(|&r| r > floor).collect();
    let log: Vec<f64> = v.iter().map(|&r| r.max(floor).max(f64::MIN_POSITIVE).ln()).collect();
    let field = ScalarField::new(grid, log.clone()).expect("floored log is finite");
    let (d_dq, d_dp) = gradient(&field, DiffOrder::Second);
    let excluded_mass = pairwise_sum_by(v.len(), &|k| if mask[k] { 0.0 } else { v[k] }) * grid.cell_area();
    LogDensity {
        d_dq,
        d_dp,
        log,
        mask,
        excluded_mass,
    }
}

/// `{A, log rho}` at node `k`.
#[inline]
fn bracket_a_log(a: &ObservableSpec, l: &LogDensity, k: usize) -> f64 {
    a.d_dq.values()[k] * l.d_dp.values()[k] - a.d_dp.values()[k] * l.d_dq.values()[k]
}

/// `<F>` over the cells above the log floor.
fn masked_average(rho: &DensityField, l: &LogDensity, f: &dyn Fn(usize) -> f64) -> f64 {
    let v = rho.values();
    pairwise_sum_by(v.len(), &|k| if l.mask[k] { v[k] * f(k) } else { 0.0 }) * rho.grid().cell_area()
}

fn average(rho: &DensityField, f: &ScalarField) -> f64 {
    let (r, v) = (rho.values(), f.values());
    pairwise_sum_by(r.len(), &|k| r[k] * v[k]) * rho.grid().cell_area()
}

/// Entropy production of the diffusion terms,
/// `sum_j (k_j / 2 beta_j) <{A_j, log rho}^2>`, with the excluded mass.
pub fn diffusive_entropy_rate(rho: &DensityField, channels: &[MeasurementChannel]) -> (f64, f64) {
    let l = log_density(rho);
    let rate = channels
        .iter()
        .filter(|c| c.cfg.k > 0.0)
        .map(|c| {
            c.cfg.diffusion_coefficient()
                * masked_average(rho, &l, &|k| bracket_a_log(&c.observable, &l, k).powi(2))
        })
        .sum();
    (rate, l.excluded_mass)
}

/// Time series comparing a measured rate with its predicted value.
#[derive(Debug, Clone, Default, Serialize)]
pub struct ResidualSeries {
    pub times: Vec<f64>,
    /// Finite-difference rate from the stored data.
    pub measured: Vec<f64>,
    /// The analytic right-hand side.
    pub predicted: Vec<f64>,
    pub residual: Vec<f64>,
    pub max_abs_residual: f64,
    /// Largest `|residual| / |predicted|` over points with
    /// `|predicted| >= 0.1 max |predicted|`.
    pub max_rel_residual: f64,
    /// Largest mass excluded from log-density averages.
    pub max_excluded_mass: f64,
    /// Mean residual over its standard error (stochastic checks only).
    pub mean_z: Option<f64>,
}

impl ResidualSeries {
    fn finish(mut self) -> Self {
        self.residual = self.measured.iter().zip(&self.predicted).map(|(m, p)| m - p).collect();
        self.max_abs_residual = self.residual.iter().fold(0.0, |a, r| a.max(r.abs()));
        let scale = self.predicted.iter().fold(0.0f64, |a, p| a.max(p.abs()));
        self.max_rel_residual = self
            .residual
            .iter()
            .zip(&self.predicted)
            .filter(|(_, p)| scale > 0.0 && p.abs() >= 0.1 * scale)
            .fold(0.0, |a, (r, p)| a.max((r / p).abs()));
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyMode {
    /// Records discarded: `dS/dt = sum (k/2 beta) <{A, log rho}^2>`.
    Deterministic,
    /// Records read: adds `-c sigma_A^2 / 2 - sqrt(c) <(A - <A>) log rho> dW/dt`.
    Stochastic,
}

fn check_cadence(times: &[f64], tau_dif: f64) -> Result<()> {
    if times.len() < 3 {
        return Err(Error::CoarseCadence { per_tau: 0.0 });
    }
    if tau_dif.is_finite() {
        let widest = times.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
        let per_tau = tau_dif / widest;
        if per_tau < MIN_SNAPSHOTS_PER_TAU_DIF {
            return Err(Error::CoarseCadence { per_tau });
        }
    }
    Ok(())
}

/// Centred differences of `y(t)` at the interior points.
fn centred_rates(t: &[f64], y: &[f64]) -> Vec<f64> {
    (1..t.len() - 1).map(|i| (y[i + 1] - y[i - 1]) / (t[i + 1] - t[i - 1])).collect()
}

/// Diffusion time `beta / (k omega^2)` of the fastest-diffusing channel.
pub fn diffusion_time(channels: &[MeasurementChannel], omega: f64) -> f64 {
    channels
        .iter()
        .filter(|c| c.cfg.k > 0.0)
        .map(|c| c.cfg.beta / (c.cfg.k * omega * omega))
        .fold(f64::INFINITY, f64::min)
}

/// Entropy balance along a trajectory.
///
/// Deterministic mode differentiates `S` over the stored snapshots (centred
/// differences) and compares with the diffusive production rate at each
/// interior snapshot. Stochastic mode compares the one-step change of `S`
/// after each snapshot with the three-term decomposition evaluated on the
/// snapshot and the recorded increments; it needs a series row every step.
pub fn entropy_rate_residual(
    traj: &TrajectoryRecord,
    channels: &[MeasurementChannel],
    tau_dif: f64,
    mode: EntropyMode,
) -> Result<ResidualSeries> {
    let times: Vec<f64> = traj.snapshots.iter().map(|(t, _)| *t).collect();
    check_cadence(&times, tau_dif)?;
    let mut out = ResidualSeries::default();
    match mode {
        EntropyMode::Deterministic => {
            let s: Vec<f64> = traj.snapshots.iter().map(|(_, r)| shannon_entropy(r)).collect();
            let fd = centred_rates(&times, &s);
            for (i, rate) in fd.into_iter().enumerate() {
                let (t, rho) = &traj.snapshots[i + 1];
                let (pred, excluded) = diffusive_entropy_rate(rho, channels);
                out.times.push(*t);
                out.measured.push(rate);
                out.predicted.push(pred);
                out.max_excluded_mass = out.max_excluded_mass.max(excluded);
            }
            Ok(out.finish())
        }
        EntropyMode::Stochastic => {
            for (t, rho) in &traj.snapshots {
                let Some(r) = traj.times.iter().position(|x| (x - t).abs() < 1e-9 * t.abs().max(1.0)) else {
                    continue;
                };
                if r + 1 >= traj.times.len() {
                    continue;
                }
                let dt = traj.times[r + 1] - traj.times[r];
                let l = log_density(rho);
                let mut pred = 0.0;
                for (j, c) in channels.iter().enumerate() {
                    let a = &c.observable;
                    if c.cfg.k > 0.0 {
                        pred += c.cfg.diffusion_coefficient()
                            * masked_average(rho, &l, &|k| bracket_a_log(a, &l, k).powi(2));
                    }
                    if c.is_read() {
                        let dw = traj.channels[j].dw[r + 1];
                        if !dw.is_finite() {
                            return Err(Error::InvalidParameter(
                                "stochastic entropy check needs a recorded increment for every step".into(),
                            ));
                        }
                        let rate = c.cfg.information_rate();
                        let mean = average(rho, &a.sampled);
                        let var = average(rho, &a.sampled.map(|x| (x - mean) * (x - mean)));
                        let cross = masked_average(rho, &l, &|k| (a.sampled.values()[k] - mean) * l.log[k]);
                        pred += -0.5 * rate * var - rate.sqrt() * cross * dw / dt;
                    }
                }
                out.times.push(*t);
                out.measured.push((traj.entropy[r + 1] - traj.entropy[r]) / dt);
                out.predicted.push(pred);
                out.max_excluded_mass = out.max_excluded_mass.max(l.excluded_mass);
            }
            let mut out = out.finish();
            let n = out.residual.len() as f64;
            if n >= 2.0 {
                let mean = out.residual.iter().sum::<f64>() / n;
                let var = out.residual.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
                out.mean_z = Some(if var > 0.0 { mean / (var / n).sqrt() } else { 0.0 });
            }
            Ok(out)
        }
    }
}

/// `d<B>/dt` over the snapshots against
/// `<{B, H}> + <dB/dt> - sum_j (k_j / 2 beta_j) <{A_j, log rho}{A_j, B}>`.
pub fn mean_evolution_residual(
    traj: &TrajectoryRecord,
    hamiltonian: &ObservableSpec,
    channels: &[MeasurementChannel],
    b: &ObservableSpec,
    tau_dif: f64,
) -> Result<ResidualSeries> {
    let times: Vec<f64> = traj.snapshots.iter().map(|(t, _)| *t).collect();
    check_cadence(&times, tau_dif)?;
    let mut means = Vec::with_capacity(times.len());
    for (t, rho) in &traj.snapshots {
        means.push(average(rho, &b.at_time(*t)?.sampled));
    }
    let fd = centred_rates(&times, &means);
    let mut out = ResidualSeries::default();
    for (i, rate) in fd.into_iter().enumerate() {
        let (t, rho) = &traj.snapshots[i + 1];
        let bt = b.at_time(*t)?;
        let h = hamiltonian.at_time(*t)?;
        let l = log_density(rho);
        let (bq, bp) = (bt.d_dq.values(), bt.d_dp.values());
        let (hq, hp) = (h.d_dq.values(), h.d_dp.values());
        let mut pred = average(rho, &bt.d_dt()?);
        let r = rho.values();
        pred += pairwise_sum_by(r.len(), &|k| r[k] * (bq[k] * hp[k] - bp[k] * hq[k])) * rho.grid().cell_area();
        for c in channels.iter().filter(|c| c.cfg.k > 0.0) {
            let a = c.observable.at_time(*t)?;
            let (aq, ap) = (a.d_dq.values(), a.d_dp.values());
            let term = masked_average(rho, &l, &|k| bracket_a_log(&a, &l, k) * (aq[k] * bp[k] - ap[k] * bq[k]));
            pred -= c.cfg.diffusion_coefficient() * term;
        }
        out.times.push(*t);
        out.measured.push(rate);
        out.predicted.push(pred);
        out.max_excluded_mass = out.max_excluded_mass.max(l.excluded_mass);
    }
    Ok(out.finish())
}

/// Ensemble statistics of the marginal cumulants of one channel against the
/// drift terms of their hierarchy.
#[derive(Debug, Clone, Serialize)]
pub struct HierarchyReport {
    pub seeds: usize,
    pub times: Vec<f64>,
    pub kappa2_mean: Vec<f64>,
    pub kappa2_se: Vec<f64>,
    /// `1 / (1/kappa2(0) + beta k Omega^2 t)`.
    pub kappa2_reference: Vec<f64>,
    pub kappa2_z: Vec<f64>,
    /// Ensemble mean of `kappa1(t) - kappa1(0)`.
    pub kappa1_drift: Vec<f64>,
    pub kappa1_se: Vec<f64>,
    pub kappa1_z: Vec<f64>,
    /// Ensemble mean of `|kappa_n(t)|` over `|kappa_n(0)|`, n = 3, 4.
    pub kappa3_ratio: Vec<f64>,
    pub kappa4_ratio: Vec<f64>,
    pub max_abs_z_kappa2: f64,
    pub max_abs_z_kappa1: f64,
    /// z-score of the summed one-step residuals
    /// `dkappa2 + beta k Omega^2 kappa2^2 dt` over all seeds and steps.
    pub dkappa2_z: f64,
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn z(diff: f64, se: f64) -> f64 {
    if se > 0.0 {
        diff / se
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

pub fn cumulant_hierarchy_residual(
    ensemble: &[&TrajectoryRecord],
    channel: usize,
    cfg: &ApparatusConfig,
) -> Result<HierarchyReport> {
    if ensemble.len() < MIN_ENSEMBLE {
        return Err(Error::EnsembleTooSmall {
            got: ensemble.len(),
            need: MIN_ENSEMBLE,
        });
    }
    let first = ensemble[0];
    let rows = ensemble.iter().map(|t| t.len()).min().unwrap_or(0);
    if rows < 2 || ensemble.iter().any(|t| t.channels.len() <= channel) {
        return Err(Error::InvalidParameter("trajectories lack the requested channel series".into()));
    }
    let c = cfg.information_rate();
    let col = |t: &TrajectoryRecord, n: usize| -> Vec<f64> { t.channels[channel].kappa[n - 1].clone() };
    let k1: Vec<Vec<f64>> = ensemble.iter().map(|t| col(t, 1)).collect();
    let k2: Vec<Vec<f64>> = ensemble.iter().map(|t| col(t, 2)).collect();
    let k3: Vec<Vec<f64>> = ensemble.iter().map(|t| col(t, 3)).collect();
    let k4: Vec<Vec<f64>> = ensemble.iter().map(|t| col(t, 4)).collect();
    let at = |m: &[Vec<f64>], i: usize| -> Vec<f64> { m.iter().map(|s| s[i]).collect() };
    let (k2_0, _) = mean_se(&at(&k2, 0));
    let abs_mean = |m: &[Vec<f64>], i: usize| m.iter().map(|s| s[i].abs()).sum::<f64>() / m.len() as f64;
    let (k3_0, k4_0) = (abs_mean(&k3, 0), abs_mean(&k4, 0));

    let mut rep = HierarchyReport {
        seeds: ensemble.len(),
        times: first.times[..rows].to_vec(),
        kappa2_mean: Vec::new(),
        kappa2_se: Vec::new(),
        kappa2_reference: Vec::new(),
        kappa2_z: Vec::new(),
        kappa1_drift: Vec::new(),
        kappa1_se: Vec::new(),
        kappa1_z: Vec::new(),
        kappa3_ratio: Vec::new(),
        kappa4_ratio: Vec::new(),
        max_abs_z_kappa2: 0.0,
        max_abs_z_kappa1: 0.0,
        dkappa2_z: 0.0,
    };
    for i in 0..rows {
        let t = rep.times[i];
        let (m2, se2) = mean_se(&at(&k2, i));
        let reference = 1.0 / (1.0 / k2_0 + c * t);
        let z2 = if i == 0 { 0.0 } else { z(m2 - reference, se2) };
        let drift: Vec<f64> = k1.iter().map(|s| s[i] - s[0]).collect();
        let (m1, se1) = mean_se(&drift);
        let z1 = if i == 0 { 0.0 } else { z(m1, se1) };
        rep.kappa2_mean.push(m2);
        rep.kappa2_se.push(se2);
        rep.kappa2_reference.push(reference);
        rep.kappa2_z.push(z2);
        rep.kappa1_drift.push(m1);
        rep.kappa1_se.push(se1);
        rep.kappa1_z.push(z1);
        rep.kappa3_ratio.push(if k3_0 > 0.0 { abs_mean(&k3, i) / k3_0 } else { 0.0 });
        rep.kappa4_ratio.push(if k4_0 > 0.0 { abs_mean(&k4, i) / k4_0 } else { 0.0 });
        rep.max_abs_z_kappa2 = rep.max_abs_z_kappa2.max(z2.abs());
        rep.max_abs_z_kappa1 = rep.max_abs_z_kappa1.max(z1.abs());
    }
    // One-step residuals, summed per trajectory so that the samples are
    // independent across seeds.
    let sums: Vec<f64> = k2
        .iter()
        .map(|s| {
            (1..rows)
                .map(|i| {
                    let dt = rep.times[i] - rep.times[i - 1];
                    s[i] - s[i - 1] + c * s[i - 1] * s[i - 1] * dt
                })
                .sum()
        })
        .collect();
    let (m, se) = mean_se(&sums);
    rep.dkappa2_z = z(m, se);
    Ok(rep)
}

/// Branch of the closed-form variance: `+1` starts from ignorance at `t0`,
/// `-1` from certainty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Branch {
    Plus,
    Minus,
}

impl Branch {
    fn exponent(self) -> i32 {
        match self {
            Branch::Plus => 1,
            Branch::Minus => -1,
        }
    }
}

/// Settings of a simultaneous measurement of a conjugate pair `(A, B)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConjugateGaussianParams {
    pub beta_a: f64,
    pub k_a: f64,
    pub omega_a: f64,
    pub beta_b: f64,
    pub k_b: f64,
    pub omega_b: f64,
    pub t0: f64,
    pub l_a: Branch,
    pub l_b: Branch,
}

/// Reference values at one time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConjugateGaussianState {
    pub sigma2_a: f64,
    pub sigma2_b: f64,
    /// `1 / sqrt(beta_A Omega_A beta_B Omega_B)`.
    pub floor: f64,
    /// `sigma_A sigma_B >= (1 - 1e-9) floor`.
    pub above_floor: bool,
}

impl ConjugateGaussianParams {
    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("beta_A", self.beta_a),
            ("k_A", self.k_a),
            ("Omega_A", self.omega_a),
            ("beta_B", self.beta_b),
            ("k_B", self.k_b),
            ("Omega_B", self.omega_b),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Completion limits `(sigma_A^2, sigma_B^2)` as `t -> infinity`.
    pub fn limits(&self) -> (f64, f64) {
        (
            1.0 / (self.beta_a * self.beta_b * (self.k_a / self.k_b) * self.omega_a.powi(2)).sqrt(),
            1.0 / (self.beta_a * self.beta_b * (self.k_b / self.k_a) * self.omega_b.powi(2)).sqrt(),
        )
    }

    /// Relaxation rates `(gamma_A, gamma_B)` inside the `coth`.
    pub fn rates(&self) -> (f64, f64) {
        (
            ((self.beta_a / self.beta_b) * self.k_a * self.k_b * self.omega_a.powi(2)).sqrt(),
            ((self.beta_b / self.beta_a) * self.k_a * self.k_b * self.omega_b.powi(2)).sqrt(),
        )
    }
}

pub fn conjugate_gaussian_reference(params: &ConjugateGaussianParams, t: f64) -> Result<ConjugateGaussianState> {
    params.validate()?;
    if !(t > params.t0) {
        return Err(Error::InvalidParameter(format!("need t > t0, got t = {t}, t0 = {}", params.t0)));
    }
    let (lim_a, lim_b) = params.limits();
    let (g_a, g_b) = params.rates();
    let coth = |x: f64| 1.0 / x.tanh();
    let sigma2_a = coth(g_a * (t - params.t0)).powi(params.l_a.exponent()) * lim_a;
    let sigma2_b = coth(g_b * (t - params.t0)).powi(params.l_b.exponent()) * lim_b;
    let floor = 1.0 / (params.beta_a * params.omega_a * params.beta_b * params.omega_b).sqrt();
    Ok(ConjugateGaussianState {
        sigma2_a,
        sigma2_b,
        floor,
        above_floor: (sigma2_a * sigma2_b).sqrt() >= (1.0 - 1e-9) * floor,
    })
}

/// Integration constant and branch that make the closed form equal `s0` at
/// `t = 0`, given the completion limit `s_inf` and rate `gamma`.
pub fn fit_t0(s0: f64, s_inf: f64, gamma: f64) -> Result<(f64, Branch)> {
    if !(s0 > 0.0 && s_inf > 0.0 && gamma > 0.0) {
        return Err(Error::InvalidParameter("variances and rate must be positive".into()));
    }
    if s0 == s_inf {
        return Ok((f64::NEG_INFINITY, Branch::Plus));
    }
    if s0 > s_inf {
        Ok((-(s_inf / s0).atanh() / gamma, Branch::Plus))
    } else {
        Ok((-(s0 / s_inf).atanh() / gamma, Branch::Minus))
    }
}

/// Per-band spread of the density over level sets of `A`.
#[derive(Debug, Clone, Serialize)]
pub struct LevelBand {
    pub center: f64,
    pub mass: f64,
    pub cells: usize,
    /// Standard deviation over mean of `rho` across the band's cells.
    pub cv: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LevelsetReport {
    /// Largest CV over bands holding at least `LEVELSET_MASS_FLOOR` of the mass.
    pub max_cv: f64,
    pub bands: Vec<LevelBand>,
}

/// Coefficient of variation of `rho` within each of `bins` equal-width bands
/// of `A` (spanning its range on the grid).
pub fn levelset_uniformity(rho: &DensityField, a: &ObservableSpec, bins: usize) -> Result<LevelsetReport> {
    if bins == 0 {
        return Err(Error::InvalidParameter("need at least one band".into()));
    }
    let (lo, hi) = (a.sampled.min(), a.sampled.max());
    if !(hi > lo) {
        return Err(Error::InvalidParameter("observable is constant on the grid".into()));
    }
    let width = (hi - lo) / bins as f64;
    let mut members: Vec<Vec<f64>> = vec![Vec::new(); bins];
    for (r, &v) in rho.values().iter().zip(a.sampled.values()) {
        members[(((v - lo) / width) as usize).min(bins - 1)].push(*r);
    }
    let area = rho.grid().cell_area();
    let mut bands = Vec::new();
    let mut max_cv: f64 = 0.0;
    for (b, vals) in members.iter().enumerate() {
        if vals.is_empty() {
            continue;
        }
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let cv = if mean > 0.0 { var.sqrt() / mean } else { 0.0 };
        let mass = mean * n * area;
        if mass >= LEVELSET_MASS_FLOOR {
            max_cv = max_cv.max(cv);
        }
        bands.push(LevelBand {
            center: lo + (b as f64 + 0.5) * width,
            mass,
            cells: vals.len(),
            cv,
        });
    }
    Ok(LevelsetReport { max_cv, bands })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Classical,
    Quantum,
}

/// Obstruction `k_B T / Omega` (J s) of a trap at temperature `t_kelvin`
/// and frequency `f_hz`, with `Omega = 2 pi f`.
pub fn classical_obstruction(t_kelvin: f64, f_hz: f64) -> f64 {
    BOLTZMANN * t_kelvin / (2.0 * std::f64::consts::PI * f_hz)
}

/// Obstruction values on a log-spaced temperature/frequency grid.
#[derive(Debug, Clone, Serialize)]
pub struct RegimeGrid {
    pub temperatures_k: Vec<f64>,
    pub frequencies_hz: Vec<f64>,
    /// `obstruction[i][j]` at `temperatures_k[i]`, `frequencies_hz[j]`.
    pub obstruction: Vec<Vec<f64>>,
    pub regime: Vec<Vec<Regime>>,
    pub hbar_half: f64,
    pub boltzmann: f64,
    pub hbar: f64,
}

impl RegimeGrid {
    pub fn max_obstruction(&self) -> f64 {
        self.obstruction.iter().flatten().fold(0.0, |a, &b| a.max(b))
    }
}

fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..n).map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64)).collect()
}

/// Labels each point classical (`k_B T / Omega > hbar / 2`) or
/// quantum-dominated.
pub fn classical_quantum_boundary(t_range: (f64, f64), f_range: (f64, f64), n_t: usize, n_f: usize) -> Result<RegimeGrid> {
    for (name, (lo, hi)) in [("temperature", t_range), ("frequency", f_range)] {
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::InvalidParameter(format!("{name} range must be positive and ordered")));
        }
    }
    if n_t == 0 || n_f == 0 {
        return Err(Error::InvalidParameter("grid needs at least one point per axis".into()));
    }
    let temperatures_k = log_space(t_range.0, t_range.1, n_t);
    let frequencies_hz = log_space(f_range.0, f_range.1, n_f);
    let hbar_half = 0.5 * HBAR;
    let obstruction: Vec<Vec<f64>> = temperatures_k
        .iter()
        .map(|&t| frequencies_hz.iter().map(|&f| classical_obstruction(t, f)).collect())
        .collect();
    let regime = obstruction
        .iter()
        .map(|row| {
            row.iter()
                .map(|&o| if o > hbar_half { Regime::Classical } else { Regime::Quantum })
                .collect()
        })
        .collect();
    Ok(RegimeGrid {
        temperatures_k,
        frequencies_hz,
        obstruction,
        regime,
        hbar_half,
        boltzmann: BOLTZMANN,
        hbar: HBAR,
    })
}

/// Default chart range: 1 mK to 10^4 K, 10 mHz to 1 PHz.
pub const DEFAULT_TEMPERATURE_RANGE: (f64, f64) = (1e-3, 1e4);
pub const DEFAULT_FREQUENCY_RANGE: (f64, f64) = (1e-2, 1e15);

/// Whether `grid` uses periodic boundaries (level-set checks then see
/// every band in full).
pub fn is_periodic(rho: &DensityField) -> bool {
    rho.grid().boundary == BoundaryMode::Periodic
}
