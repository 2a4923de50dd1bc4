use crate::error::{Error, Result};

use super::grid::{BoundaryMode, Grid2D};

/// Default width, in cells, of the edge band watched for leaking mass.
pub const DEFAULT_MARGIN_CELLS: usize = 3;
/// Largest mass tolerated inside the edge band in compact-support mode.
pub const MARGIN_MASS_LIMIT: f64 = 1e-6;

/// Fixed-order pairwise summation. The split points depend only on the
/// length, so the result is reproducible regardless of how callers
/// parallelise the producers of `values`.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 64;
    if values.len() <= BLOCK {
        let mut acc = 0.0;
        for v in values {
            acc += v;
        }
        acc
    } else {
        let mid = values.len() / 2;
        pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
    }
}

/// Pairwise sum of `f(i)` over `0..n` without materialising a buffer.
pub(crate) fn pairwise_sum_by(n: usize, f: &impl Fn(usize) -> f64) -> f64 {
    fn rec(lo: usize, hi: usize, f: &impl Fn(usize) -> f64) -> f64 {
        if hi - lo <= 64 {
            let mut acc = 0.0;
            for i in lo..hi {
                acc += f(i);
            }
            acc
        } else {
            let mid = lo + (hi - lo) / 2;
            rec(lo, mid, f) + rec(mid, hi, f)
        }
    }
    rec(0, n, f)
}

/// Any real function sampled on the nodes of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid2D,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid2D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidParameter(format!(
                "field has {} values, grid has {} nodes",
                values.len(),
                grid.len()
            )));
        }
        let field = ScalarField { grid, values };
        field.check_finite("field")?;
        Ok(field)
    }

    pub(crate) fn from_raw(grid: Grid2D, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        ScalarField { grid, values }
    }

    pub fn zeros(grid: Grid2D) -> Self {
        ScalarField {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn from_fn(grid: Grid2D, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let values = (0..grid.len())
            .map(|idx| {
                let (q, p) = grid.point(idx);
                f(q, p)
            })
            .collect();
        Self::new(grid, values)
    }

    #[inline]
    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    pub fn check_finite(&self, name: &str) -> Result<()> {
        if let Some(idx) = self.values.iter().position(|v| !v.is_finite()) {
            let (q, p) = self.grid.point(idx);
            return Err(Error::NonFinite {
                field: name.to_string(),
                q,
                p,
            });
        }
        Ok(())
    }

    pub(crate) fn ensure_same_grid(&self, other: &ScalarField, names: (&str, &str)) -> Result<()> {
        if self.grid.same_as(&other.grid) {
            Ok(())
        } else {
            Err(Error::GridMismatch {
                left: names.0.to_string(),
                right: names.1.to_string(),
            })
        }
    }

    /// Quadrature of the field over the grid, `sum(values) h_q h_p`.
    pub fn integral(&self) -> f64 {
        pairwise_sum(&self.values) * self.grid.cell_area()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Result<ScalarField> {
        self.ensure_same_grid(other, ("lhs", "rhs"))?;
        Ok(ScalarField {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Largest absolute difference over nodes at least `margin` cells from the edge.
    pub fn max_abs_diff_interior(&self, other: &ScalarField, margin: usize) -> Result<f64> {
        self.ensure_same_grid(other, ("lhs", "rhs"))?;
        let g = &self.grid;
        let mut worst: f64 = 0.0;
        for i in margin..g.nq.saturating_sub(margin) {
            for j in margin..g.np.saturating_sub(margin) {
                let idx = g.index(i, j);
                worst = worst.max((self.values[idx] - other.values[idx]).abs());
            }
        }
        Ok(worst)
    }
}

/// A probability density over the grid: non-negative, unit quadrature mass
/// once normalised.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    base: ScalarField,
}

impl DensityField {
    /// Wraps `values` as a density and normalises it.
    pub fn new(grid: Grid2D, values: Vec<f64>) -> Result<Self> {
        let base = ScalarField::new(grid, values)?;
        Self::from_field(base)
    }

    pub fn from_field(base: ScalarField) -> Result<Self> {
        base.check_finite("density")?;
        if let Some(idx) = base.values.iter().position(|&v| v < 0.0) {
            return Err(Error::InvalidParameter(format!(
                "density is negative ({:e}) at node {idx}",
                base.values[idx]
            )));
        }
        let mut rho = DensityField { base };
        rho.normalize()?;
        Ok(rho)
    }

    pub fn from_fn(grid: Grid2D, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        Self::from_field(ScalarField::from_fn(grid, f)?)
    }

    /// Internal constructor for values already known to be valid.
    pub(crate) fn from_raw(grid: Grid2D, values: Vec<f64>) -> Self {
        DensityField {
            base: ScalarField::from_raw(grid, values),
        }
    }

    pub fn uniform(grid: Grid2D) -> Self {
        let v = 1.0 / grid.area();
        DensityField::from_raw(grid, vec![v; grid.len()])
    }

    /// Product of independent normals in q and p.
    pub fn gaussian(grid: Grid2D, mean: (f64, f64), std: (f64, f64)) -> Result<Self> {
        Self::gaussian_correlated(grid, mean, [[std.0 * std.0, 0.0], [0.0, std.1 * std.1]])
    }

    /// Bivariate normal with covariance `cov` (rows/cols ordered q, p).
    pub fn gaussian_correlated(grid: Grid2D, mean: (f64, f64), cov: [[f64; 2]; 2]) -> Result<Self> {
        let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
        if !(cov[0][0] > 0.0 && det > 0.0) || (cov[0][1] - cov[1][0]).abs() > 1e-12 {
            return Err(Error::InvalidParameter(
                "gaussian covariance must be symmetric positive definite".into(),
            ));
        }
        let inv = [
            [cov[1][1] / det, -cov[0][1] / det],
            [-cov[1][0] / det, cov[0][0] / det],
        ];
        Self::from_fn(grid, |q, p| {
            let (dq, dp) = (q - mean.0, p - mean.1);
            let quad = dq * (inv[0][0] * dq + inv[0][1] * dp) + dp * (inv[1][0] * dq + inv[1][1] * dp);
            (-0.5 * quad).exp()
        })
    }

    #[inline]
    pub fn field(&self) -> &ScalarField {
        &self.base
    }

    #[inline]
    pub fn grid(&self) -> &Grid2D {
        self.base.grid()
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        self.base.values()
    }

    #[inline]
    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        self.base.values_mut()
    }

    pub fn mass(&self) -> f64 {
        self.base.integral()
    }

    /// Rescales to unit mass; returns the mass found before rescaling.
    pub fn normalize(&mut self) -> Result<f64> {
        let mass = self.mass();
        if !(mass.is_finite() && mass > 0.0) {
            return Err(Error::DegenerateDensity(mass));
        }
        let inv = 1.0 / mass;
        for v in self.base.values_mut() {
            *v *= inv;
        }
        Ok(mass)
    }

    /// Mass within `cells` of the grid edge (zero in periodic mode).
    pub fn margin_mass(&self, cells: usize) -> f64 {
        let g = self.grid();
        if g.boundary == BoundaryMode::Periodic {
            return 0.0;
        }
        let vals = self.values();
        let in_band = |idx: usize| {
            let (i, j) = (idx / g.np, idx % g.np);
            i < cells || j < cells || i + cells >= g.nq || j + cells >= g.np
        };
        pairwise_sum_by(vals.len(), &|idx| if in_band(idx) { vals[idx] } else { 0.0 })
            * g.cell_area()
    }

    /// Errors when the edge band holds more than `MARGIN_MASS_LIMIT`.
    pub fn check_margin(&self, cells: usize) -> Result<()> {
        let m = self.margin_mass(cells);
        if m > MARGIN_MASS_LIMIT {
            return Err(Error::BoundaryFlux(format!(
                "{m:.3e} of the mass lies within {cells} cells of the grid edge (limit {MARGIN_MASS_LIMIT:e})"
            )));
        }
        Ok(())
    }

    /// L1 distance between two densities on the same grid.
    pub fn l1_distance(&self, other: &DensityField) -> Result<f64> {
        self.base.ensure_same_grid(&other.base, ("lhs", "rhs"))?;
        let (a, b) = (self.values(), other.values());
        Ok(pairwise_sum_by(a.len(), &|i| (a[i] - b[i]).abs()) * self.grid().cell_area())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_small_input() {
        let v: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&v), 499_500.0);
        assert_eq!(pairwise_sum_by(1000, &|i| v[i]), 499_500.0);
    }

    #[test]
    fn normalisation_to_unit_mass() {
        let g = Grid2D::square(5.0, 64).unwrap();
        let rho = DensityField::gaussian(g, (0.3, -0.2), (0.7, 0.9)).unwrap();
        assert!((rho.mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_negative_density() {
        let g = Grid2D::square(1.0, 16).unwrap();
        let mut v = vec![1.0; g.len()];
        v[5] = -1e-3;
        assert!(DensityField::new(g, v).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        let g = Grid2D::square(1.0, 16).unwrap();
        let mut v = vec![1.0; g.len()];
        v[5] = f64::NAN;
        assert!(matches!(ScalarField::new(g, v), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn margin_guard() {
        let g = Grid2D::square(5.0, 64).unwrap();
        let centred = DensityField::gaussian(g, (0.0, 0.0), (0.5, 0.5)).unwrap();
        assert!(centred.check_margin(DEFAULT_MARGIN_CELLS).is_ok());
        let edge = DensityField::gaussian(g, (4.8, 0.0), (0.5, 0.5)).unwrap();
        assert!(matches!(
            edge.check_margin(DEFAULT_MARGIN_CELLS),
            Err(Error::BoundaryFlux(_))
        ));
    }
}
