//! Hamiltonian flows: RK4 integration of characteristics and
//! semi-Lagrangian push-forward of densities.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::observable::ObservableSpec;

use super::field::DensityField;
use super::grid::{BoundaryMode, Grid2D};

/// Boundary-cell density above which an exiting characteristic is an error.
pub const BOUNDARY_FLUX_TOLERANCE: f64 = 1e-9;

/// Result of pushing a density forward along a flow.
#[derive(Debug, Clone)]
pub struct Advected {
    /// Renormalised density.
    pub density: DensityField,
    /// Mass after interpolation minus mass before, prior to renormalising.
    pub mass_drift: f64,
}

/// Velocity of the flow generated by `G`: `(dG/dp, -dG/dq)`.
#[inline]
fn velocity(g: &ObservableSpec, q: f64, p: f64) -> Result<(f64, f64)> {
    let (gq, gp) = g.gradient_at(q, p)?;
    Ok((gp, -gq))
}

/// Substeps needed so one substep moves at most one cell at the current speed.
#[inline]
fn substeps_for(grid: &Grid2D, v: (f64, f64), tau: f64) -> usize {
    let cells = tau.abs() * (v.0.abs() / grid.hq()).max(v.1.abs() / grid.hp());
    (cells.ceil() as usize).max(1)
}

#[inline]
fn rk4_step(g: &ObservableSpec, (q, p): (f64, f64), h: f64, k1: (f64, f64)) -> Result<(f64, f64)> {
    let k2 = velocity(g, q + 0.5 * h * k1.0, p + 0.5 * h * k1.1)?;
    let k3 = velocity(g, q + 0.5 * h * k2.0, p + 0.5 * h * k2.1)?;
    let k4 = velocity(g, q + h * k3.0, p + h * k3.1)?;
    Ok((
        q + h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
        p + h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
    ))
}

/// Integrates Hamilton's equations with Hamiltonian `G` for flow time `tau`
/// (negative runs backwards) without regard to the grid boundary.
fn integrate(g: &ObservableSpec, start: (f64, f64), tau: f64, grid: &Grid2D) -> Result<(f64, f64)> {
    if tau == 0.0 {
        return Ok(start);
    }
    let v0 = velocity(g, start.0, start.1)?;
    let n = substeps_for(grid, v0, tau);
    let h = tau / n as f64;
    let mut x = start;
    let mut v = v0;
    for step in 0..n {
        if step > 0 {
            v = velocity(g, x.0, x.1)?;
        }
        x = rk4_step(g, x, h, v)?;
    }
    Ok(x)
}

/// Image of a point under the flow of `G` for time `tau`. Substeps start at
/// one cell of `grid` each and are halved until the end point agrees with
/// the previous refinement to `1e-11`. In compact-support mode leaving the
/// grid is an error naming the edge crossed; in periodic mode the result is
/// wrapped.
pub fn flow_point(g: &ObservableSpec, start: (f64, f64), tau: f64, grid: &Grid2D) -> Result<(f64, f64)> {
    const TOL: f64 = 1e-11;
    const MAX_SUBSTEPS: usize = 1 << 20;
    if tau == 0.0 {
        return Ok(start);
    }
    let v0 = velocity(g, start.0, start.1)?;
    let mut n = substeps_for(grid, v0, tau);
    let mut x = trace(g, start, tau, n, grid)?;
    while n < MAX_SUBSTEPS {
        n *= 2;
        let finer = trace(g, start, tau, n, grid)?;
        let scale = 1.0 + finer.0.abs().max(finer.1.abs());
        let converged = (finer.0 - x.0).abs().max((finer.1 - x.1).abs()) < TOL * scale;
        x = finer;
        if converged {
            break;
        }
    }
    Ok(grid.wrap(x.0, x.1))
}

/// `n` fixed RK4 substeps, checking the boundary after each.
fn trace(g: &ObservableSpec, start: (f64, f64), tau: f64, n: usize, grid: &Grid2D) -> Result<(f64, f64)> {
    let periodic = grid.boundary == BoundaryMode::Periodic;
    let h = tau / n as f64;
    let mut x = start;
    for _ in 0..n {
        let v = velocity(g, x.0, x.1)?;
        x = rk4_step(g, x, h, v)?;
        if !periodic && !grid.contains(x.0, x.1) {
            return Err(Error::FlowExit {
                boundary: grid.exit_side(x.0, x.1),
                q: x.0,
                p: x.1,
            });
        }
    }
    Ok(x)
}

/// Offsets of the interpolation stencil relative to the node below the point.
const OFFSETS: [f64; 6] = [-2.0, -1.0, 0.0, 1.0, 2.0, 3.0];

/// Quintic Lagrange weights for offsets -2..=3 at fractional position `t`.
#[inline]
fn lagrange_weights(t: f64) -> [f64; 6] {
    let mut w = [1.0; 6];
    for (k, wk) in w.iter_mut().enumerate() {
        for (m, &om) in OFFSETS.iter().enumerate() {
            if m != k {
                *wk *= (t - om) / (OFFSETS[k] - om);
            }
        }
    }
    w
}

/// Tensor quintic Lagrange interpolation of node values, clamped to the range
/// of the 6x6 stencil widened by the overshoot a smooth extremum can have,
/// and never below zero when the nodes are non-negative. Outside the grid the field is zero in
/// compact-support mode and wraps in periodic mode.
pub struct Interpolator<'a> {
    grid: &'a Grid2D,
    values: &'a [f64],
}

impl<'a> Interpolator<'a> {
    pub fn new(grid: &'a Grid2D, values: &'a [f64]) -> Self {
        Interpolator { grid, values }
    }

    #[inline]
    fn node(&self, i: isize, j: isize) -> f64 {
        let g = self.grid;
        match g.boundary {
            BoundaryMode::Periodic => {
                let i = i.rem_euclid(g.nq as isize) as usize;
                let j = j.rem_euclid(g.np as isize) as usize;
                self.values[i * g.np + j]
            }
            BoundaryMode::CompactSupport => {
                if i < 0 || j < 0 || i >= g.nq as isize || j >= g.np as isize {
                    0.0
                } else {
                    self.values[i as usize * g.np + j as usize]
                }
            }
        }
    }

    pub fn sample(&self, q: f64, p: f64) -> f64 {
        let g = self.grid;
        let x = (q - g.q_min) / g.hq() - 0.5;
        let y = (p - g.p_min) / g.hp() - 0.5;
        let (i0, j0) = (x.floor(), y.floor());
        let (tx, ty) = (x - i0, y - j0);
        let (i0, j0) = (i0 as isize, j0 as isize);
        let wx = lagrange_weights(tx);
        let wy = lagrange_weights(ty);

        let interior = g.boundary == BoundaryMode::CompactSupport
            && i0 >= 2
            && j0 >= 2
            && i0 + 3 < g.nq as isize
            && j0 + 3 < g.np as isize;
        let mut m = [[0.0; 6]; 6];
        if interior {
            let base = (i0 - 2) as usize * g.np + (j0 - 2) as usize;
            for (a, row) in m.iter_mut().enumerate() {
                row.copy_from_slice(&self.values[base + a * g.np..base + a * g.np + 6]);
            }
        } else {
            for (a, row) in m.iter_mut().enumerate() {
                for (b, v) in row.iter_mut().enumerate() {
                    *v = self.node(i0 - 2 + a as isize, j0 - 2 + b as isize);
                }
            }
        }
        let mut acc = 0.0;
        // The bracketing range and curvature come from the inner 4x4 block.
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut curv_q, mut curv_p) = (0.0f64, 0.0f64);
        for a in 0..6 {
            let row = &m[a];
            acc += wx[a] * row.iter().zip(&wy).map(|(v, w)| v * w).sum::<f64>();
        }
        for a in 1..5 {
            for b in 1..5 {
                lo = lo.min(m[a][b]);
                hi = hi.max(m[a][b]);
            }
            for b in 2..4 {
                curv_p = curv_p.max((m[a][b - 1] - 2.0 * m[a][b] + m[a][b + 1]).abs());
                curv_q = curv_q.max((m[b - 1][a] - 2.0 * m[b][a] + m[b + 1][a]).abs());
            }
        }
        // A smooth extremum between nodes may exceed the node range by about
        // an eighth of the second difference in each direction.
        let slack = 0.125 * (curv_q + curv_p);
        acc.clamp((lo - slack).max(0.0_f64.min(lo)), hi + slack)
    }

    /// Value of the boundary node nearest to an outside point.
    fn nearest_edge_value(&self, q: f64, p: f64) -> f64 {
        let g = self.grid;
        let i = (((q - g.q_min) / g.hq() - 0.5).round().max(0.0) as usize).min(g.nq - 1);
        let j = (((p - g.p_min) / g.hp() - 0.5).round().max(0.0) as usize).min(g.np - 1);
        self.values[i * g.np + j]
    }
}

/// Push-forward `(Phi^G_tau)_* rho = rho o Phi^G_{-tau}` by semi-Lagrangian
/// backtracking: every node is traced back along the flow of `G` for time
/// `tau` with RK4 (at most one cell per substep) and `rho` is interpolated
/// at the foot. The result is renormalised; the mass drift is reported.
pub fn advect_along_flow(rho: &DensityField, g: &ObservableSpec, tau: f64) -> Result<Advected> {
    let grid = *rho.grid();
    rho.field().ensure_same_grid(&g.sampled, ("rho", "G"))?;
    if tau == 0.0 || g.is_zero() {
        return Ok(Advected {
            density: rho.clone(),
            mass_drift: 0.0,
        });
    }
    let mass_before = rho.mass();
    let interp = Interpolator::new(&grid, rho.values());
    let compact = grid.boundary == BoundaryMode::CompactSupport;

    let rows: Vec<Result<Vec<f64>>> = (0..grid.nq)
        .into_par_iter()
        .map(|i| {
            let mut row = Vec::with_capacity(grid.np);
            for j in 0..grid.np {
                let (q, p) = (grid.q(i), grid.p(j));
                let foot = integrate(g, (q, p), -tau, &grid)?;
                let value = if compact && !grid.contains(foot.0, foot.1) {
                    let edge = interp.nearest_edge_value(foot.0, foot.1);
                    if edge > BOUNDARY_FLUX_TOLERANCE {
                        return Err(Error::BoundaryFlux(format!(
                            "characteristic from (q = {q:.4}, p = {p:.4}) exits through {} where the density is {edge:.3e}",
                            grid.exit_side(foot.0, foot.1)
                        )));
                    }
                    0.0
                } else {
                    let (fq, fp) = grid.wrap(foot.0, foot.1);
                    interp.sample(fq, fp)
                };
                row.push(value);
            }
            Ok(row)
        })
        .collect();
    let mut values = Vec::with_capacity(grid.len());
    for row in rows {
        values.extend(row?);
    }
    let mut density = DensityField::from_raw(grid, values);
    let mass_after = density.normalize()?;
    Ok(Advected {
        density,
        mass_drift: mass_after - mass_before,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_partition_unity() {
        for t in [0.0, 0.1, 0.5, 0.77, 0.999] {
            let w = lagrange_weights(t);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            // Exact on quintics.
            let quintic: f64 = w.iter().zip(OFFSETS).map(|(w, o)| w * o.powi(5)).sum();
            assert!((quintic - t.powi(5)).abs() < 1e-12);
        }
        assert_eq!(lagrange_weights(0.0), [0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn interpolation_reproduces_nodes_and_stays_non_negative() {
        let g = Grid2D::square(1.0, 16).unwrap();
        let v: Vec<f64> = (0..g.len()).map(|k| ((k % 5) as f64).powi(2)).collect();
        let it = Interpolator::new(&g, &v);
        for k in [0, 17, 100, 255] {
            let (q, p) = g.point(k);
            assert_eq!(it.sample(q, p), v[k]);
        }
        // A step in the data: the raw interpolant undershoots below zero, the
        // clamped one never does.
        let step: Vec<f64> = (0..g.len()).map(|k| if k / g.np < 8 { 0.0 } else { 1.0 }).collect();
        let it = Interpolator::new(&g, &step);
        for a in 0..60 {
            let q = g.q_min + (a as f64 + 0.37) * (g.q_max - g.q_min) / 60.0;
            let s = it.sample(q, 0.1);
            assert!((0.0..=1.25).contains(&s), "{q} {s}");
        }
    }

    #[test]
    fn flow_point_exits_with_named_edge() {
        let g = Grid2D::square(1.0, 16).unwrap();
        let gen = ObservableSpec::parse("p", &g, 0.0).unwrap();
        match flow_point(&gen, (0.0, 0.0), 2.0, &g) {
            Err(Error::FlowExit { boundary, .. }) => assert_eq!(boundary, "q_max"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rotation_flow_point() {
        let g = Grid2D::square(3.0, 64).unwrap();
        let gen = ObservableSpec::parse("0.5*(q^2+p^2)", &g, 0.0).unwrap();
        // dq/dt = p, dp/dt = -q: clockwise rotation.
        let (q, p) = flow_point(&gen, (1.0, 0.0), std::f64::consts::FRAC_PI_2, &g).unwrap();
        assert!((q - 0.0).abs() < 1e-9 && (p + 1.0).abs() < 1e-9, "{q} {p}");
    }
}
