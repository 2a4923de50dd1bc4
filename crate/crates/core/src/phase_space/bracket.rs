use serde::{Deserialize, Serialize};

use crate::error::Result;

use super::field::{pairwise_sum_by, DensityField, ScalarField};
use super::grid::{BoundaryMode, Grid2D};

/// Accuracy of the centred difference stencils.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffOrder {
    #[default]
    Second,
    Fourth,
}

/// Derivative of a strided line of values. Interior nodes use centred
/// stencils; in compact-support mode the edges fall back to second-order
/// one-sided differences, in periodic mode the stencil wraps.
fn diff_line(line: &[f64], h: f64, periodic: bool, order: DiffOrder, out: &mut [f64]) {
    let n = line.len();
    let at = |k: isize| -> f64 { line[k.rem_euclid(n as isize) as usize] };
    for i in 0..n {
        let ii = i as isize;
        let interior2 = i >= 1 && i + 1 < n;
        let interior4 = i >= 2 && i + 2 < n;
        out[i] = match order {
            DiffOrder::Fourth if periodic || interior4 => {
                (-at(ii + 2) + 8.0 * at(ii + 1) - 8.0 * at(ii - 1) + at(ii - 2)) / (12.0 * h)
            }
            _ if periodic || interior2 => (at(ii + 1) - at(ii - 1)) / (2.0 * h),
            _ if i == 0 => (-3.0 * line[0] + 4.0 * line[1] - line[2]) / (2.0 * h),
            _ => (3.0 * line[n - 1] - 4.0 * line[n - 2] + line[n - 3]) / (2.0 * h),
        };
    }
}

/// `(dF/dq, dF/dp)` by finite differences.
pub fn gradient(f: &ScalarField, order: DiffOrder) -> (ScalarField, ScalarField) {
    let g = *f.grid();
    let periodic = g.boundary == BoundaryMode::Periodic;
    let v = f.values();
    let mut dq = vec![0.0; g.len()];
    let mut dp = vec![0.0; g.len()];

    let mut line = vec![0.0; g.nq];
    let mut out = vec![0.0; g.nq];
    for j in 0..g.np {
        for i in 0..g.nq {
            line[i] = v[g.index(i, j)];
        }
        diff_line(&line, g.hq(), periodic, order, &mut out);
        for i in 0..g.nq {
            dq[g.index(i, j)] = out[i];
        }
    }
    for i in 0..g.nq {
        let row = &v[g.index(i, 0)..g.index(i, 0) + g.np];
        diff_line(row, g.hp(), periodic, order, &mut dp[g.index(i, 0)..g.index(i, 0) + g.np]);
    }
    (ScalarField::from_raw(g, dq), ScalarField::from_raw(g, dp))
}

/// `{F, G} = dF/dq dG/dp - dF/dp dG/dq` with second-order centred differences.
pub fn poisson_bracket(f: &ScalarField, g: &ScalarField) -> Result<ScalarField> {
    poisson_bracket_with(f, g, DiffOrder::Second)
}

pub fn poisson_bracket_with(f: &ScalarField, g: &ScalarField, order: DiffOrder) -> Result<ScalarField> {
    f.ensure_same_grid(g, ("F", "G"))?;
    f.check_finite("F")?;
    g.check_finite("G")?;
    let (fq, fp) = gradient(f, order);
    let (gq, gp) = gradient(g, order);
    Ok(bracket_from_partials((&fq, &fp), (&gq, &gp)))
}

/// Bracket from precomputed partials. Written as `a*d - b*c` so that
/// swapping the arguments flips the sign bit and nothing else.
pub(crate) fn bracket_from_partials(
    (fq, fp): (&ScalarField, &ScalarField),
    (gq, gp): (&ScalarField, &ScalarField),
) -> ScalarField {
    let grid = *fq.grid();
    let values = (0..grid.len())
        .map(|k| fq.values()[k] * gp.values()[k] - fp.values()[k] * gq.values()[k])
        .collect();
    ScalarField::from_raw(grid, values)
}

/// `<B> = sum rho B h_q h_p`.
pub fn phase_space_average(rho: &DensityField, b: &ScalarField) -> Result<f64> {
    rho.field().ensure_same_grid(b, ("rho", "B"))?;
    let (r, v) = (rho.values(), b.values());
    Ok(pairwise_sum_by(r.len(), &|k| r[k] * v[k]) * rho.grid().cell_area())
}

/// Skew-adjoint discretisation of `f -> {A, f}` given the partials of `A`:
///
/// `D f = 1/2 (a_q dp f + dp(a_q f)) - 1/2 (a_p dq f + dq(a_p f))`
///
/// with centred differences of the chosen order and zero values outside the
/// grid in compact-support mode (wrapping in periodic mode). `D^T = -D`
/// exactly, so `D D` is symmetric negative semi-definite. `D A` vanishes
/// only to the order of the stencil, so with `DiffOrder::Second` functions
/// of `A` drift at O(h^2) wherever `D rho` is large.
#[derive(Debug, Clone)]
pub(crate) struct FlowDerivative {
    grid: Grid2D,
    order: DiffOrder,
    /// Row stride of the padded arrays.
    stride: usize,
    a_q: Vec<f64>,
    a_p: Vec<f64>,
    pad: Vec<f64>,
}

/// Halo width of the padded arrays; enough for the fourth-order stencil.
const HALO: usize = 2;

impl FlowDerivative {
    pub(crate) fn new(grid: &Grid2D, a_q: &[f64], a_p: &[f64], order: DiffOrder) -> Self {
        let stride = grid.np + 2 * HALO;
        let len = (grid.nq + 2 * HALO) * stride;
        let mut op = FlowDerivative {
            grid: *grid,
            order,
            stride,
            a_q: vec![0.0; len],
            a_p: vec![0.0; len],
            pad: vec![0.0; len],
        };
        let mut buf = vec![0.0; len];
        op.fill_padded(a_q, &mut buf);
        op.a_q.copy_from_slice(&buf);
        op.fill_padded(a_p, &mut buf);
        op.a_p.copy_from_slice(&buf);
        op
    }

    fn fill_padded(&self, src: &[f64], dst: &mut [f64]) {
        let (nq, np, s) = (self.grid.nq, self.grid.np, self.stride);
        for i in 0..nq {
            let row = (i + HALO) * s + HALO;
            dst[row..row + np].copy_from_slice(&src[i * np..(i + 1) * np]);
        }
        match self.grid.boundary {
            BoundaryMode::CompactSupport => {
                for i in HALO..nq + HALO {
                    for h in 0..HALO {
                        dst[i * s + h] = 0.0;
                        dst[i * s + np + HALO + h] = 0.0;
                    }
                }
                for h in 0..HALO {
                    dst[h * s..(h + 1) * s].iter_mut().for_each(|v| *v = 0.0);
                    let r = (nq + HALO + h) * s;
                    dst[r..r + s].iter_mut().for_each(|v| *v = 0.0);
                }
            }
            BoundaryMode::Periodic => {
                for i in HALO..nq + HALO {
                    for h in 0..HALO {
                        dst[i * s + h] = dst[i * s + np + h];
                        dst[i * s + np + HALO + h] = dst[i * s + HALO + h];
                    }
                }
                for h in 0..HALO {
                    dst.copy_within((nq + h) * s..(nq + h + 1) * s, h * s);
                    dst.copy_within((HALO + h) * s..(HALO + h + 1) * s, (nq + HALO + h) * s);
                }
            }
        }
    }

    /// `out = D f`.
    pub(crate) fn apply(&mut self, f: &[f64], out: &mut [f64]) {
        let mut pad = std::mem::take(&mut self.pad);
        self.fill_padded(f, &mut pad);
        let (nq, np, s) = (self.grid.nq, self.grid.np, self.stride);
        let (aq, ap) = (&self.a_q, &self.a_p);
        match self.order {
            DiffOrder::Second => {
                let (iq, ip) = (0.25 / self.grid.hq(), 0.25 / self.grid.hp());
                for i in 0..nq {
                    let row = (i + HALO) * s + HALO;
                    let o = &mut out[i * np..(i + 1) * np];
                    for j in 0..np {
                        let c = row + j;
                        let (fpp, fpm, fqp, fqm) = (pad[c + 1], pad[c - 1], pad[c + s], pad[c - s]);
                        let t_p = aq[c] * (fpp - fpm) + (aq[c + 1] * fpp - aq[c - 1] * fpm);
                        let t_q = ap[c] * (fqp - fqm) + (ap[c + s] * fqp - ap[c - s] * fqm);
                        o[j] = t_p * ip - t_q * iq;
                    }
                }
            }
            DiffOrder::Fourth => {
                let (iq, ip) = (1.0 / (24.0 * self.grid.hq()), 1.0 / (24.0 * self.grid.hp()));
                let s2 = 2 * s;
                for i in 0..nq {
                    let row = (i + HALO) * s + HALO;
                    let o = &mut out[i * np..(i + 1) * np];
                    for j in 0..np {
                        let c = row + j;
                        let (p1, m1, p2, m2) = (pad[c + 1], pad[c - 1], pad[c + 2], pad[c - 2]);
                        let t_p = aq[c] * (8.0 * (p1 - m1) - (p2 - m2))
                            + (8.0 * (aq[c + 1] * p1 - aq[c - 1] * m1) - (aq[c + 2] * p2 - aq[c - 2] * m2));
                        let (p1, m1, p2, m2) = (pad[c + s], pad[c - s], pad[c + s2], pad[c - s2]);
                        let t_q = ap[c] * (8.0 * (p1 - m1) - (p2 - m2))
                            + (8.0 * (ap[c + s] * p1 - ap[c - s] * m1) - (ap[c + s2] * p2 - ap[c - s2] * m2));
                        o[j] = t_p * ip - t_q * iq;
                    }
                }
            }
        }
        self.pad = pad;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coord_fields(g: Grid2D) -> (ScalarField, ScalarField) {
        (
            ScalarField::from_fn(g, |q, _| q).unwrap(),
            ScalarField::from_fn(g, |_, p| p).unwrap(),
        )
    }

    #[test]
    fn canonical_relation() {
        let g = Grid2D::square(3.0, 32).unwrap();
        let (q, p) = coord_fields(g);
        let b = poisson_bracket(&q, &p).unwrap();
        for v in b.values() {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn self_bracket_vanishes() {
        let g = Grid2D::square(3.0, 32).unwrap();
        let f = ScalarField::from_fn(g, |q, p| (q * p).sin() + q * q).unwrap();
        assert!(poisson_bracket(&f, &f).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn grid_mismatch_is_an_error() {
        let a = ScalarField::zeros(Grid2D::square(1.0, 16).unwrap());
        let b = ScalarField::zeros(Grid2D::square(1.0, 32).unwrap());
        assert!(poisson_bracket(&a, &b).is_err());
    }

    #[test]
    fn fourth_order_is_exact_on_cubics() {
        let g = Grid2D::square(2.0, 32).unwrap();
        let f = ScalarField::from_fn(g, |q, p| q * q * q + p * p * p).unwrap();
        let (_, p) = coord_fields(g);
        let b = poisson_bracket_with(&f, &p, DiffOrder::Fourth).unwrap();
        let exact = ScalarField::from_fn(g, |q, _| 3.0 * q * q).unwrap();
        assert!(b.max_abs_diff_interior(&exact, 2).unwrap() < 1e-10);
    }

    #[test]
    fn flow_derivative_is_skew() {
        // <u, D v> = -<D u, v> for arbitrary u, v, in both boundary modes.
        for boundary in [BoundaryMode::CompactSupport, BoundaryMode::Periodic] {
            let g = Grid2D::new((-2.0, 2.0), (-2.0, 2.0), 20, 24, boundary).unwrap();
            let a_q: Vec<f64> = (0..g.len()).map(|k| g.point(k).0 * 1.3 + 0.2).collect();
            let a_p: Vec<f64> = (0..g.len()).map(|k| (g.point(k).1).sin()).collect();
            let u: Vec<f64> = (0..g.len()).map(|k| ((k * 7919) % 101) as f64 / 101.0).collect();
            let v: Vec<f64> = (0..g.len()).map(|k| ((k * 104_729) % 97) as f64 / 97.0).collect();
            for order in [DiffOrder::Second, DiffOrder::Fourth] {
                let mut op = FlowDerivative::new(&g, &a_q, &a_p, order);
                let mut du = vec![0.0; g.len()];
                let mut dv = vec![0.0; g.len()];
                op.apply(&u, &mut du);
                op.apply(&v, &mut dv);
                let lhs: f64 = u.iter().zip(&dv).map(|(a, b)| a * b).sum();
                let rhs: f64 = du.iter().zip(&v).map(|(a, b)| a * b).sum();
                assert!((lhs + rhs).abs() < 1e-9 * lhs.abs().max(1.0), "{boundary:?} {order:?}");
            }
        }
    }

    #[test]
    fn flow_derivative_matches_bracket_in_the_interior() {
        let g = Grid2D::square(2.0, 64).unwrap();
        let a = ScalarField::from_fn(g, |q, p| 0.5 * (q * q + p * p)).unwrap();
        let f = ScalarField::from_fn(g, |q, p| (-(q - 0.3).powi(2) - p * p).exp()).unwrap();
        let (aq, ap) = gradient(&a, DiffOrder::Second);
        let mut op = FlowDerivative::new(&g, aq.values(), ap.values(), DiffOrder::Second);
        let mut out = vec![0.0; g.len()];
        op.apply(f.values(), &mut out);
        let reference = poisson_bracket(&a, &f).unwrap();
        let d = ScalarField::from_raw(g, out).max_abs_diff_interior(&reference, 2).unwrap();
        assert!(d < 1e-12, "{d}");
    }

    #[test]
    fn fourth_order_flow_derivative_converges() {
        // Error against the exact bracket of a smooth f falls 16-fold per
        // halving of h; D A^2 then vanishes to the same order.
        let err = |n: usize| {
            let g = Grid2D::square(6.0, n).unwrap();
            let f = ScalarField::from_fn(g, |q, p| (-(q - 0.5).powi(2) - 0.5 * p * p).exp()).unwrap();
            let aq: Vec<f64> = (0..g.len()).map(|k| g.point(k).0).collect();
            let ap: Vec<f64> = (0..g.len()).map(|k| g.point(k).1).collect();
            let mut op = FlowDerivative::new(&g, &aq, &ap, DiffOrder::Fourth);
            let mut out = vec![0.0; g.len()];
            op.apply(f.values(), &mut out);
            (0..g.len())
                .map(|k| {
                    let (q, p) = g.point(k);
                    let e = (-(q - 0.5).powi(2) - 0.5 * p * p).exp();
                    // {A, f} = q df/dp - p df/dq for A = (q^2 + p^2) / 2.
                    let exact = q * (-p * e) - p * (-2.0 * (q - 0.5) * e);
                    (out[k] - exact).abs()
                })
                .fold(0.0, f64::max)
        };
        let (coarse, fine) = (err(64), err(128));
        assert!(coarse / fine > 12.0, "{coarse} {fine}");
    }
}
