//! Checks applied to stored runs. Which checks apply depends on the
//! scenario: Liouville runs, discarded-record runs, heat-kernel runs,
//! conjugate joint read-outs and seed ensembles each get their own.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::phase_space::phase_space_average;
use crate::analysis::{
    conjugate_gaussian_reference, cumulant_hierarchy_residual, diffusion_time, entropy_rate_residual, fit_t0,
    levelset_uniformity, mean_evolution_residual, Branch, ConjugateGaussianParams, EntropyMode, ResidualSeries,
};
use crate::artifacts::load_run;
use crate::error::{Error, Result};
use crate::master::{MeasurementChannel, TrajectoryRecord};
use crate::observable::ObservableSpec;
use crate::scenario::{Scenario, ScenarioConfig};

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";

/// Bands used for the level-set uniformity check.
pub const LEVELSET_BINS: usize = 2048;

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl CheckResult {
    /// Passes when `measured <= tolerance`.
    fn at_most(name: &str, measured: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        CheckResult {
            name: name.into(),
            passed: measured <= tolerance,
            measured,
            tolerance,
            detail: detail.into(),
        }
    }

    /// Passes when `measured >= tolerance`.
    fn at_least(name: &str, measured: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        CheckResult {
            name: name.into(),
            passed: measured >= tolerance,
            measured,
            tolerance,
            detail: detail.into(),
        }
    }

    fn failed(name: &str, err: &Error) -> Self {
        CheckResult {
            name: name.into(),
            passed: false,
            measured: f64::NAN,
            tolerance: f64::NAN,
            detail: err.to_string(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub scenario: String,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("scenario {}\n", self.scenario);
        for c in &self.checks {
            let _ = writeln!(
                s,
                "{} {:<32} measured {:<12.4e} tolerance {:<12.4e} {}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.measured,
                c.tolerance,
                c.detail
            );
        }
        let _ = writeln!(s, "{}", if self.passed() { "all checks passed" } else { "some checks failed" });
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let json = dir.join(REPORT_JSON);
        let text = serde_json::to_string_pretty(self).expect("report serialises") + "\n";
        fs::write(&json, text).map_err(|e| Error::io(&json, e))?;
        let txt = dir.join(REPORT_TEXT);
        fs::write(&txt, self.to_text()).map_err(|e| Error::io(&txt, e))
    }
}

fn is_coordinate(a: &ObservableSpec, name: &str) -> bool {
    a.source().trim() == name
}

/// The floor allows `<B>` to drift by 1e-5 of its size over the run, which
/// is what renormalisation and clipping leave on a conserved observable.
fn mean_evolution_check(name: &str, res: &ResidualSeries, level: f64, span: f64) -> CheckResult {
    let scale = res
        .predicted
        .iter()
        .chain(&res.measured)
        .fold(0.0f64, |a, v| a.max(v.abs()));
    let floor = if span > 0.0 { 1e-5 * level.abs().max(1.0) / span } else { 0.0 };
    CheckResult::at_most(
        name,
        res.max_abs_residual,
        0.02 * scale + floor,
        format!("2% of the largest rate {scale:.3e} plus a drift floor {floor:.1e}"),
    )
}

/// Snapshot cadence limits how well a centred difference follows a fast
/// early transient. Points whose own third difference says the truncation
/// error exceeds 1% of the rate are left out and counted.
fn entropy_rate_check(res: &ResidualSeries) -> CheckResult {
    let peak = res.predicted.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let n = res.times.len();
    let (mut worst, mut used, mut unresolved) = (0.0f64, 0, 0);
    for i in 0..n {
        if res.predicted[i].abs() < 0.1 * peak {
            continue;
        }
        let m = &res.measured;
        let curvature = if i > 0 && i + 1 < n {
            (m[i + 1] - 2.0 * m[i] + m[i - 1]).abs() / 6.0
        } else {
            f64::INFINITY
        };
        if curvature > 0.01 * m[i].abs() {
            unresolved += 1;
            continue;
        }
        used += 1;
        worst = worst.max((res.residual[i] / res.predicted[i]).abs());
    }
    let detail = format!(
        "finite-difference dS/dt against the bracket average while the rate exceeds 10% of its peak; \
         {used} points, {unresolved} left out as unresolved by the cadence; excluded mass {:.1e}",
        res.max_excluded_mass
    );
    if used == 0 {
        return CheckResult {
            name: "entropy_rate".into(),
            passed: false,
            measured: f64::NAN,
            tolerance: 0.05,
            detail,
        };
    }
    CheckResult::at_most("entropy_rate", worst, 0.05, detail)
}

/// Runs every check that applies to a single trajectory of `scenario`.
pub fn verify_record(scenario: &Scenario, rec: &TrajectoryRecord) -> Vec<CheckResult> {
    let mut checks = Vec::new();
    let channels = &scenario.channels;
    let every = scenario.output.series_every.max(1) as f64;
    let diffusing = channels.iter().any(|c| c.cfg.k > 0.0);
    let reading = channels.iter().any(MeasurementChannel::is_read);
    let tau_dif = diffusion_time(channels, scenario.system_omega);
    let s0 = rec.entropy[0];
    let s_last = *rec.entropy.last().expect("non-empty record");

    if !diffusing {
        let drift = rec.mass_drift.iter().fold(0.0f64, |a, d| a.max(d.abs()));
        checks.push(CheckResult::at_most(
            "liouville_mass_drift",
            drift,
            1e-8 * every,
            "largest mass drift per recorded row before renormalisation",
        ));
        checks.push(CheckResult::at_most(
            "liouville_entropy",
            (s_last - s0).abs(),
            1e-3,
            "|S(end) - S(0)|",
        ));
    }

    if diffusing && !reading {
        let worst = rec.entropy.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
        checks.push(CheckResult::at_least(
            "entropy_non_decreasing",
            worst,
            -1e-6 * every,
            "smallest entropy change between rows",
        ));
        match entropy_rate_residual(rec, channels, tau_dif, EntropyMode::Deterministic) {
            Ok(res) => checks.push(entropy_rate_check(&res)),
            Err(e) => checks.push(CheckResult::failed("entropy_rate", &e)),
        }
        let mut observables = Vec::new();
        for src in ["q", "p"] {
            match ObservableSpec::parse(src, &scenario.grid, 0.0) {
                Ok(b) => observables.push((src.to_string(), b)),
                Err(e) => checks.push(CheckResult::failed("mean_evolution", &e)),
            }
        }
        for (j, c) in channels.iter().enumerate() {
            observables.push((format!("A_{j}"), c.observable.clone()));
        }
        for (label, b) in observables {
            let name = format!("mean_evolution_{label}");
            let level = rec
                .snapshots
                .first()
                .map_or(Ok(0.0), |(_, rho)| phase_space_average(rho, &b.sampled))
                .unwrap_or(0.0);
            let span = rec.times.last().copied().unwrap_or(0.0) - rec.times[0];
            match mean_evolution_residual(rec, &scenario.hamiltonian, channels, &b, tau_dif) {
                Ok(res) => checks.push(mean_evolution_check(&name, &res, level, span)),
                Err(e) => checks.push(CheckResult::failed(&name, &e)),
            }
        }
    }

    if scenario.hamiltonian.is_zero() && channels.len() == 1 && !reading && diffusing {
        let c = &channels[0];
        let spread = if is_coordinate(&c.observable, "q") {
            Some(("heat_kernel_p", &rec.p_var))
        } else if is_coordinate(&c.observable, "p") {
            Some(("heat_kernel_q", &rec.q_var))
        } else {
            None
        };
        if let Some((name, var)) = spread {
            let rate = c.cfg.k / c.cfg.beta;
            let worst = rec
                .times
                .iter()
                .zip(var)
                .map(|(t, v)| {
                    let want = var[0] + rate * t;
                    ((v - want) / want).abs()
                })
                .fold(0.0, f64::max);
            checks.push(CheckResult::at_most(
                name,
                worst,
                0.01,
                "relative error of the variance against var(0) + (k/beta) t",
            ));
        }
        if let Some((t, rho)) = rec.snapshots.last().filter(|(t, _)| *t >= 10.0 * tau_dif * (1.0 - 1e-9)) {
            match levelset_uniformity(rho, &c.observable, LEVELSET_BINS) {
                Ok(rep) => checks.push(CheckResult::at_most(
                    "levelset_uniformity",
                    rep.max_cv,
                    0.05,
                    format!("largest CV over occupied bands at t = {t:.3} ({:.1} diffusion times)", t / tau_dif),
                )),
                Err(e) => checks.push(CheckResult::failed("levelset_uniformity", &e)),
            }
        }
    }

    if reading && scenario.output.series_every == 1 && rec.snapshots.len() >= 3 {
        match entropy_rate_residual(rec, channels, f64::INFINITY, EntropyMode::Stochastic) {
            Ok(res) => {
                let z = res.mean_z.unwrap_or(f64::NAN);
                checks.push(CheckResult::at_most(
                    "stochastic_entropy_balance",
                    z.abs(),
                    4.0,
                    format!(
                        "|mean residual| / standard error over {} snapshot steps",
                        res.times.len()
                    ),
                ));
            }
            Err(e) => checks.push(CheckResult::failed("stochastic_entropy_balance", &e)),
        }
    }

    if let Some(found) = joint_pair(scenario) {
        checks.extend(joint_checks(scenario, rec, found));
    }
    checks
}

/// Indices of read channels measuring `q` and `p` with `H = 0`.
fn joint_pair(scenario: &Scenario) -> Option<(usize, usize)> {
    let ch = &scenario.channels;
    if !scenario.hamiltonian.is_zero() || ch.len() != 2 || !ch.iter().all(MeasurementChannel::is_read) {
        return None;
    }
    let qi = ch.iter().position(|c| is_coordinate(&c.observable, "q"))?;
    let pi = ch.iter().position(|c| is_coordinate(&c.observable, "p"))?;
    Some((qi, pi))
}

fn joint_checks(scenario: &Scenario, rec: &TrajectoryRecord, (qi, pi): (usize, usize)) -> Vec<CheckResult> {
    let (a, b) = (scenario.channels[qi].cfg, scenario.channels[pi].cfg);
    let mut params = ConjugateGaussianParams {
        beta_a: a.beta,
        k_a: a.k,
        omega_a: a.omega,
        beta_b: b.beta,
        k_b: b.k,
        omega_b: b.omega,
        t0: 0.0,
        l_a: Branch::Plus,
        l_b: Branch::Plus,
    };
    let (lim_q, lim_p) = params.limits();
    let (g_q, g_p) = params.rates();
    // One integration constant serves both closed forms; it is fitted to
    // sigma_q^2(0) and the p-branch follows from sigma_p^2(0).
    let (t0, l_a) = match fit_t0(rec.q_var[0], lim_q, g_q) {
        Ok(v) => v,
        Err(e) => return vec![CheckResult::failed("joint_closed_form", &e)],
    };
    let (t0_p, l_b) = match fit_t0(rec.p_var[0], lim_p, g_p) {
        Ok(v) => v,
        Err(e) => return vec![CheckResult::failed("joint_closed_form", &e)],
    };
    params.t0 = t0;
    params.l_a = l_a;
    params.l_b = l_b;
    let mut checks = Vec::new();
    let mut worst: f64 = 0.0;
    let mut floor_ratio = f64::INFINITY;
    let mut floor = f64::NAN;
    for i in 1..rec.len() {
        let t = rec.times[i];
        match conjugate_gaussian_reference(&params, t) {
            Ok(r) => {
                worst = worst
                    .max((rec.q_var[i].sqrt() / r.sigma2_a.sqrt() - 1.0).abs())
                    .max((rec.p_var[i].sqrt() / r.sigma2_b.sqrt() - 1.0).abs());
                floor = r.floor;
            }
            Err(e) => return vec![CheckResult::failed("joint_closed_form", &e)],
        }
    }
    for i in 0..rec.len() {
        floor_ratio = floor_ratio.min((rec.q_var[i] * rec.p_var[i]).sqrt() / floor);
    }
    checks.push(CheckResult::at_most(
        "joint_closed_form",
        worst,
        0.03,
        format!(
            "largest relative error of sigma_q, sigma_p against the coth forms (t0 = {t0:.4}; from sigma_p(0): {t0_p:.4})"
        ),
    ));
    checks.push(CheckResult::at_least(
        "joint_uncertainty_floor",
        floor_ratio,
        1.0 - 1e-3,
        format!("smallest sigma_q sigma_p over the floor {floor:.4e}"),
    ));
    let n = rec.len() - 1;
    let limit_err = ((rec.q_var[n] - lim_q) / lim_q).abs().max(((rec.p_var[n] - lim_p) / lim_p).abs());
    checks.push(CheckResult::at_most(
        "joint_completion_limit",
        limit_err,
        0.03,
        format!("final variances against the limits {lim_q:.4}, {lim_p:.4}"),
    ));
    let kurt = [qi, pi]
        .iter()
        .flat_map(|&j| {
            let k = &rec.channels[j].kappa;
            (0..rec.len()).map(move |i| (k[3][i] / (k[1][i] * k[1][i])).abs())
        })
        .fold(0.0, f64::max);
    checks.push(CheckResult::at_most(
        "joint_gaussian_closure",
        kurt,
        0.05,
        "largest |excess kurtosis| of the q and p marginals",
    ));
    checks
}

/// Ensemble checks over runs of one scenario that differ only in seed.
pub fn verify_ensemble(scenario: &Scenario, recs: &[&TrajectoryRecord]) -> Vec<CheckResult> {
    let mut checks = Vec::new();
    for (j, c) in scenario.channels.iter().enumerate() {
        if !c.is_read() {
            continue;
        }
        let rep = match cumulant_hierarchy_residual(recs, j, &c.cfg) {
            Ok(r) => r,
            Err(e) => {
                checks.push(CheckResult::failed(&format!("hierarchy_{j}"), &e));
                continue;
            }
        };
        let n = rep.times.len() - 1;
        checks.push(CheckResult::at_most(
            &format!("hierarchy_kappa2_{j}"),
            rep.max_abs_z_kappa2,
            3.0,
            format!("largest |z| of the ensemble-mean kappa2 against 1/(1/kappa2(0) + c t), {} seeds", rep.seeds),
        ));
        checks.push(CheckResult::at_most(
            &format!("hierarchy_kappa1_{j}"),
            rep.max_abs_z_kappa1,
            3.0,
            "largest |z| of the ensemble-mean kappa1 drift",
        ));
        checks.push(CheckResult::at_most(
            &format!("hierarchy_kappa3_{j}"),
            rep.kappa3_ratio[n],
            0.1,
            format!("mean |kappa3| at t = {:.3} over its initial value", rep.times[n]),
        ));
        checks.push(CheckResult::at_most(
            &format!("hierarchy_kappa4_{j}"),
            rep.kappa4_ratio[n],
            0.1,
            format!("mean |kappa4| at t = {:.3} over its initial value", rep.times[n]),
        ));
    }
    checks
}

/// Loads the run in `dir` against `config_bytes`, checks it and writes the
/// report next to it.
pub fn verify_dir(dir: &Path, config_bytes: &[u8]) -> Result<VerifyReport> {
    let cfg = ScenarioConfig::from_json(config_bytes)?;
    let (manifest, rec) = load_run(dir, config_bytes)?;
    let scenario = manifest.overrides.apply(&cfg).build()?;
    let report = VerifyReport {
        scenario: scenario.name.clone(),
        checks: verify_record(&scenario, &rec),
    };
    report.write(dir)?;
    Ok(report)
}
