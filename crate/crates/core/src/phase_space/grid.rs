use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest accepted cell count along either axis.
pub const MIN_CELLS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryMode {
    /// Density must vanish near the edges; anything outside the grid is zero.
    #[default]
    CompactSupport,
    /// Both axes wrap around.
    Periodic,
}

/// Cell-centred uniform grid over a rectangle of the (q, p) plane.
///
/// Node `(i, j)` sits at `q_min + (i + 1/2) h_q`, `p_min + (j + 1/2) h_p`;
/// field values are stored row-major with `q` as the slow index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    pub q_min: f64,
    pub q_max: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub nq: usize,
    pub np: usize,
    #[serde(default)]
    pub boundary: BoundaryMode,
}

impl Grid2D {
    pub fn new(
        (q_min, q_max): (f64, f64),
        (p_min, p_max): (f64, f64),
        nq: usize,
        np: usize,
        boundary: BoundaryMode,
    ) -> Result<Self> {
        let grid = Grid2D {
            q_min,
            q_max,
            p_min,
            p_max,
            nq,
            np,
            boundary,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Square grid `[-half_width, half_width]^2` with `n` cells per side.
    pub fn square(half_width: f64, n: usize) -> Result<Self> {
        Self::new(
            (-half_width, half_width),
            (-half_width, half_width),
            n,
            n,
            BoundaryMode::CompactSupport,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let bounds = [self.q_min, self.q_max, self.p_min, self.p_max];
        if bounds.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidGrid("bounds must be finite".into()));
        }
        if self.q_max <= self.q_min || self.p_max <= self.p_min {
            return Err(Error::InvalidGrid(format!(
                "empty extent q: [{}, {}], p: [{}, {}]",
                self.q_min, self.q_max, self.p_min, self.p_max
            )));
        }
        if self.nq < MIN_CELLS || self.np < MIN_CELLS {
            return Err(Error::InvalidGrid(format!(
                "need at least {MIN_CELLS} cells per axis, got {} x {}",
                self.nq, self.np
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn hq(&self) -> f64 {
        (self.q_max - self.q_min) / self.nq as f64
    }

    #[inline]
    pub fn hp(&self) -> f64 {
        (self.p_max - self.p_min) / self.np as f64
    }

    #[inline]
    pub fn cell_area(&self) -> f64 {
        self.hq() * self.hp()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nq * self.np
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn q(&self, i: usize) -> f64 {
        self.q_min + (i as f64 + 0.5) * self.hq()
    }

    #[inline]
    pub fn p(&self, j: usize) -> f64 {
        self.p_min + (j as f64 + 0.5) * self.hp()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.np + j
    }

    /// `(q, p)` of a flat index.
    #[inline]
    pub fn point(&self, idx: usize) -> (f64, f64) {
        (self.q(idx / self.np), self.p(idx % self.np))
    }

    pub fn area(&self) -> f64 {
        (self.q_max - self.q_min) * (self.p_max - self.p_min)
    }

    pub fn contains(&self, q: f64, p: f64) -> bool {
        q >= self.q_min && q <= self.q_max && p >= self.p_min && p <= self.p_max
    }

    /// Wraps a point back into the domain in periodic mode; identity otherwise.
    pub fn wrap(&self, q: f64, p: f64) -> (f64, f64) {
        match self.boundary {
            BoundaryMode::CompactSupport => (q, p),
            BoundaryMode::Periodic => (
                self.q_min + (q - self.q_min).rem_euclid(self.q_max - self.q_min),
                self.p_min + (p - self.p_min).rem_euclid(self.p_max - self.p_min),
            ),
        }
    }

    /// Which edge a point outside the domain crossed, for error messages.
    pub fn exit_side(&self, q: f64, p: f64) -> &'static str {
        if q < self.q_min {
            "q_min"
        } else if q > self.q_max {
            "q_max"
        } else if p < self.p_min {
            "p_min"
        } else {
            "p_max"
        }
    }

    /// Grid with the same extent and `factor` times as many cells per axis.
    pub fn refined(&self, factor: usize) -> Self {
        Grid2D {
            nq: self.nq * factor,
            np: self.np * factor,
            ..*self
        }
    }

    pub(crate) fn same_as(&self, other: &Grid2D) -> bool {
        self == other
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_degenerate_grids() {
        assert!(Grid2D::new((1.0, 1.0), (0.0, 1.0), 32, 32, BoundaryMode::Periodic).is_err());
        assert!(Grid2D::new((0.0, 1.0), (0.0, 1.0), 8, 32, BoundaryMode::Periodic).is_err());
        assert!(Grid2D::new((0.0, f64::NAN), (0.0, 1.0), 32, 32, BoundaryMode::Periodic).is_err());
    }

    #[test]
    fn cell_centres() {
        let g = Grid2D::new((0.0, 4.0), (-1.0, 1.0), 16, 20, BoundaryMode::CompactSupport).unwrap();
        assert_eq!(g.hq(), 0.25);
        assert_eq!(g.hp(), 0.1);
        assert_eq!(g.q(0), 0.125);
        assert!((g.p(19) - 0.95).abs() < 1e-15);
        assert_eq!(g.point(g.index(3, 7)), (g.q(3), g.p(7)));
    }

    #[test]
    fn periodic_wrap() {
        let g = Grid2D::new((0.0, 1.0), (0.0, 2.0), 16, 16, BoundaryMode::Periodic).unwrap();
        let (q, p) = g.wrap(1.25, -0.5);
        assert!((q - 0.25).abs() < 1e-15 && (p - 1.5).abs() < 1e-15);
    }
}
