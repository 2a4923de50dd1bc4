//! Acceptance criteria 1-9. Runs without the test harness so that every
//! criterion prints one PASS or FAIL line whatever the outcome; exits
//! nonzero if any fails.

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rayon::prelude::*;

use phasemeas::analysis::{classical_quantum_boundary, cumulant_hierarchy_residual, HBAR};
use phasemeas::apparatus::{channel_rng, sample_ready_state};
use phasemeas::master::{run_trajectory, timescales, TrajectoryRecord};
use phasemeas::scenario::{Scenario, ScenarioConfig};
use phasemeas::single_shot::{bayes_update, disturbance_update, measurement_diagnostics};
use phasemeas::verify::{verify_record, CheckResult};
use phasemeas::{ApparatusConfig, DensityField, Grid2D, ObservableSpec};

struct Outcome {
    passed: bool,
    summary: String,
}

fn outcome(parts: &[(bool, String)]) -> Outcome {
    Outcome {
        passed: parts.iter().all(|(ok, _)| *ok),
        summary: parts.iter().map(|(_, s)| s.as_str()).collect::<Vec<_>>().join("; "),
    }
}

fn scenario(name: &str) -> Scenario {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(format!("{name}.json"));
    let (cfg, _) = ScenarioConfig::load(&path).expect("bundled scenario loads");
    cfg.build().expect("bundled scenario builds")
}

fn run(name: &str) -> (Scenario, TrajectoryRecord) {
    let sc = scenario(name);
    let rec = run_trajectory(&sc).expect("run completes");
    (sc, rec)
}

/// The named checks of `verify_record`, each required to pass.
fn checks(sc: &Scenario, rec: &TrajectoryRecord, names: &[&str]) -> Vec<(bool, String)> {
    let all = verify_record(sc, rec);
    names
        .iter()
        .map(|n| match all.iter().find(|c| c.name == *n) {
            Some(c) => (c.passed, describe(c)),
            None => (false, format!("{n}: not applicable to the run")),
        })
        .collect()
}

fn describe(c: &CheckResult) -> String {
    format!("{} {:.3e} (tolerance {:.3e})", c.name, c.measured, c.tolerance)
}

fn bound(name: &str, measured: f64, tolerance: f64) -> (bool, String) {
    (measured <= tolerance, format!("{name} {measured:.3e} (tolerance {tolerance:.3e})"))
}

fn precision_disturbance() -> Outcome {
    let mut rng = channel_rng(2024, 0);
    let mut worst: f64 = 0.0;
    let mut settings = Vec::new();
    for _ in 0..10 {
        use rand::Rng;
        let beta = 10f64.powf(rng.gen_range(-1.0..1.0));
        let k = 10f64.powf(rng.gen_range(-2.0..1.0));
        let omega = 10f64.powf(rng.gen_range(-1.0..1.0));
        let cfg = ApparatusConfig::new(beta, omega, k).unwrap();
        let d = measurement_diagnostics(0.0, &cfg).unwrap();
        let want = 1.0 / (beta * omega);
        worst = worst.max((d.product - want).abs() / want);
        settings.push(cfg);
    }
    // Flow time sqrt(k) P with P from the ready state.
    let cfg = settings[0];
    let n = 100_000;
    let mut rng = channel_rng(7, 1);
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..n {
        let (_, p) = sample_ready_state(&cfg, &mut rng);
        let tau = cfg.k.sqrt() * p;
        s += tau;
        s2 += tau * tau;
    }
    let mean = s / n as f64;
    let std = (s2 / n as f64 - mean * mean).sqrt();
    let eta = (cfg.k / cfg.beta).sqrt();
    outcome(&[
        bound("max relative error of eps*eta against 1/(beta Omega)", worst, 1e-12),
        bound("relative error of the flow-time std against sqrt(k/beta)", (std - eta).abs() / eta, 0.02),
    ])
}

fn liouville() -> Outcome {
    let (sc, rec) = run("fig1b");
    let drift = rec.mass_drift.iter().fold(0.0f64, |a, d| a.max(d.abs()));
    let s0 = rec.entropy[0];
    let ds = rec.entropy.iter().fold(0.0f64, |a, s| a.max((s - s0).abs()));
    let grid = (sc.grid.nq, sc.grid.np);
    outcome(&[
        bound(&format!("mass drift per step at {}x{}", grid.0, grid.1), drift, 1e-8),
        bound("max |S(t) - S(0)| over the period", ds, 1e-3),
    ])
}

fn h_theorem() -> Outcome {
    let (sc, rec) = run("fig1c");
    outcome(&checks(&sc, &rec, &["entropy_non_decreasing", "entropy_rate"]))
}

fn heat_kernel() -> Outcome {
    let (sc, rec) = run("heat_q");
    outcome(&checks(&sc, &rec, &["heat_kernel_p"]))
}

fn hierarchy() -> Outcome {
    let sc = scenario("collapse");
    let seeds = 200;
    let recs: Vec<TrajectoryRecord> = (1..=seeds as u64)
        .into_par_iter()
        .map(|seed| {
            let mut s = sc.clone();
            s.evolution.seed = seed;
            run_trajectory(&s).expect("collapse run completes")
        })
        .collect();
    let refs: Vec<&TrajectoryRecord> = recs.iter().collect();
    let cfg = sc.channels[0].cfg;
    let rep = cumulant_hierarchy_residual(&refs, 0, &cfg).unwrap();
    let ts = timescales(sc.system_omega, &cfg, rep.kappa2_mean[0].sqrt()).unwrap();
    let at = 3.0 * ts.tau_col;
    let Some(i) = rep.times.iter().position(|t| *t >= at * (1.0 - 1e-9)) else {
        return Outcome {
            passed: false,
            summary: format!("run ends at t = {:.3} before 3 tau_col = {at:.3}", rep.times.last().unwrap()),
        };
    };
    outcome(&[
        bound(&format!("max |z| of mean kappa2 against 1/(1/kappa2(0) + c t), {seeds} seeds"), rep.max_abs_z_kappa2, 3.0),
        bound("max |z| of mean kappa1 drift", rep.max_abs_z_kappa1, 3.0),
        bound(&format!("mean |kappa3| ratio at t = {:.2} (3 tau_col = {at:.2})", rep.times[i]), rep.kappa3_ratio[i], 0.1),
        bound("mean |kappa4| ratio there", rep.kappa4_ratio[i], 0.1),
    ])
}

fn joint() -> Outcome {
    let (sc, rec) = run("joint_qp");
    outcome(&checks(&sc, &rec, &["joint_closed_form", "joint_uncertainty_floor", "joint_completion_limit"]))
}

fn microcanonical() -> Outcome {
    let (sc, rec) = run("microcanonical");
    outcome(&checks(&sc, &rec, &["levelset_uniformity"]))
}

fn commutativity() -> Outcome {
    let grid = Grid2D::square(6.0, 192).unwrap();
    let rho = DensityField::gaussian_correlated(grid, (0.6, -0.4), [[0.5, 0.1], [0.1, 0.4]]).unwrap();
    let cfg = ApparatusConfig::new(1.0, 1.0, 0.3).unwrap();
    let mut parts = Vec::new();
    for (src, a_star) in [("q", 0.9), ("p", -0.2), ("0.5*(q^2 + p^2)", 0.7)] {
        let a = ObservableSpec::parse(src, &grid, 0.0).unwrap();
        let db = disturbance_update(&bayes_update(&rho, &a, a_star, &cfg).unwrap(), &a, &cfg).unwrap();
        let bd = bayes_update(&disturbance_update(&rho, &a, &cfg).unwrap(), &a, a_star, &cfg).unwrap();
        parts.push(bound(&format!("L1 gap for A = {src}"), db.l1_distance(&bd).unwrap(), 1e-6));
    }
    outcome(&parts)
}

fn regime_boundary() -> Outcome {
    // Nodes fall exactly on 300 K and 12 THz.
    let grid = classical_quantum_boundary((3.0, 3e4), (1.2e11, 1.2e15), 5, 5).unwrap();
    let (i, j) = (2, 2);
    let t = grid.temperatures_k[i];
    let f = grid.frequencies_hz[j];
    let ratio = grid.obstruction[i][j] / (0.5 * HBAR);
    outcome(&[bound(
        &format!("|k_B T / Omega over hbar/2 - 1| at {t:.0} K, {:.1} THz", f / 1e12),
        (ratio - 1.0).abs(),
        0.1,
    )])
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("precision-disturbance identity", precision_disturbance),
        ("Liouville conservation", liouville),
        ("H-theorem", h_theorem),
        ("heat-kernel oracle", heat_kernel),
        ("cumulant hierarchy", hierarchy),
        ("conjugate joint measurement", joint),
        ("micro-canonical convergence", microcanonical),
        ("update commutativity", commutativity),
        ("regime boundary", regime_boundary),
    ];
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failed = 0;
    for (n, (name, check)) in criteria.iter().enumerate() {
        let n = n + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let start = Instant::now();
        let out = check();
        let verdict = if out.passed { "PASS" } else { "FAIL" };
        if !out.passed {
            failed += 1;
        }
        println!("{verdict} {n} {name} [{:.1} s]: {}", start.elapsed().as_secs_f64(), out.summary);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
