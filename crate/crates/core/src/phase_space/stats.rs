use crate::error::{Error, Result};
use crate::observable::ObservableSpec;

use super::field::{pairwise_sum, pairwise_sum_by, DensityField};

/// Densities at or below this are treated as exactly zero in `-rho log rho`.
pub const ENTROPY_FLOOR: f64 = 1e-300;

/// Differential Shannon entropy `-sum rho log rho h_q h_p`.
pub fn shannon_entropy(rho: &DensityField) -> f64 {
    let v = rho.values();
    let s = pairwise_sum_by(v.len(), &|k| {
        let r = v[k];
        if r > ENTROPY_FLOOR {
            -r * r.ln()
        } else {
            0.0
        }
    });
    s * rho.grid().cell_area()
}

/// A one-dimensional distribution given as point masses.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginal {
    pub centers: Vec<f64>,
    pub masses: Vec<f64>,
}

impl Marginal {
    pub fn total(&self) -> f64 {
        pairwise_sum(&self.masses)
    }

    pub fn mean(&self) -> f64 {
        pairwise_sum_by(self.masses.len(), &|k| self.masses[k] * self.centers[k]) / self.total()
    }

    /// Every grid cell as an atom at its value of `A`; no binning error.
    pub fn from_cells(rho: &DensityField, a: &ObservableSpec) -> Result<Self> {
        rho.field().ensure_same_grid(&a.sampled, ("rho", "A"))?;
        let area = rho.grid().cell_area();
        Ok(Marginal {
            centers: a.sampled.values().to_vec(),
            masses: rho.values().iter().map(|r| r * area).collect(),
        })
    }
}

/// Histogram of `rho` over the level sets of `A` with `bins` equal-width
/// bins spanning the range of `A` on the grid. A constant observable puts
/// all the mass in one bin at that constant.
pub fn marginal_over_observable(rho: &DensityField, a: &ObservableSpec, bins: usize) -> Result<Marginal> {
    if bins < 8 {
        return Err(Error::InvalidParameter(format!("need at least 8 bins, got {bins}")));
    }
    rho.field().ensure_same_grid(&a.sampled, ("rho", "A"))?;
    let vals = a.sampled.values();
    let (lo, hi) = (a.sampled.min(), a.sampled.max());
    let area = rho.grid().cell_area();
    let total = rho.mass();
    if hi - lo <= f64::EPSILON * lo.abs().max(hi.abs()).max(1.0) {
        return Ok(Marginal {
            centers: vec![lo],
            masses: vec![1.0],
        });
    }
    let width = (hi - lo) / bins as f64;
    let mut masses = vec![0.0; bins];
    for (r, &v) in rho.values().iter().zip(vals) {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        masses[b] += r * area / total;
    }
    let centers = (0..bins).map(|b| lo + (b as f64 + 0.5) * width).collect();
    Ok(Marginal { centers, masses })
}

/// Cumulants `kappa_1 ..= kappa_max_order` (max order 6) from central
/// moments via the moment-to-cumulant recursion
/// `kappa_n = mu_n - sum_{m=1}^{n-1} C(n-1, m-1) kappa_m mu_{n-m}`.
pub fn cumulants_of_marginal(dist: &Marginal, max_order: usize) -> Result<Vec<f64>> {
    if !(1..=6).contains(&max_order) {
        return Err(Error::InvalidParameter(format!(
            "cumulant order must be in 1..=6, got {max_order}"
        )));
    }
    let total = dist.total();
    if !(total > 0.0) {
        return Err(Error::DegenerateDensity(total));
    }
    let n = dist.masses.len();
    let mean = pairwise_sum_by(n, &|k| dist.masses[k] * dist.centers[k]) / total;
    // mu[k] = k-th central moment, mu[0] = 1, mu[1] = 0.
    let mut mu = [0.0; 7];
    mu[0] = 1.0;
    for (order, slot) in mu.iter_mut().enumerate().take(max_order + 1).skip(2) {
        *slot = pairwise_sum_by(n, &|k| dist.masses[k] * (dist.centers[k] - mean).powi(order as i32)) / total;
    }
    // Central cumulants; shifting by the mean only changes kappa_1.
    let mut kappa = [0.0; 7];
    for order in 2..=max_order {
        let mut acc = mu[order];
        for m in 1..order {
            acc -= binomial(order - 1, m - 1) * kappa[m] * mu[order - m];
        }
        kappa[order] = acc;
    }
    kappa[1] = mean;
    Ok(kappa[1..=max_order].to_vec())
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase_space::Grid2D;

    #[test]
    fn binomials() {
        assert_eq!(binomial(5, 2), 10.0);
        assert_eq!(binomial(5, 0), 1.0);
        assert_eq!(binomial(5, 5), 1.0);
    }

    #[test]
    fn uniform_entropy_is_log_area() {
        let g = Grid2D::new((0.0, 3.0), (-1.0, 1.0), 32, 32, Default::default()).unwrap();
        let rho = DensityField::uniform(g);
        assert!((shannon_entropy(&rho) - 6.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gaussian_entropy() {
        let sigma = 0.8;
        let g = Grid2D::square(8.0, 128).unwrap();
        let rho = DensityField::gaussian(g, (0.0, 0.0), (sigma, sigma)).unwrap();
        let exact = 1.0 + (2.0 * std::f64::consts::PI * sigma * sigma).ln();
        assert!((shannon_entropy(&rho) - exact).abs() < 1e-8);
        let narrow = DensityField::gaussian(g, (0.0, 0.0), (sigma / 2.0, sigma / 2.0)).unwrap();
        assert!(shannon_entropy(&narrow) < shannon_entropy(&rho));
    }

    #[test]
    fn order_out_of_range() {
        let d = Marginal {
            centers: vec![0.0, 1.0],
            masses: vec![0.5, 0.5],
        };
        assert!(cumulants_of_marginal(&d, 0).is_err());
        assert!(cumulants_of_marginal(&d, 7).is_err());
    }

    #[test]
    fn delta_cumulants() {
        let d = Marginal {
            centers: vec![2.5],
            masses: vec![1.0],
        };
        let k = cumulants_of_marginal(&d, 6).unwrap();
        assert_eq!(k[0], 2.5);
        assert!(k[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bernoulli_cumulants() {
        // Bernoulli(1/2): kappa = 1/2, 1/4, 0, -1/8, 0, 1/4.
        let d = Marginal {
            centers: vec![0.0, 1.0],
            masses: vec![0.5, 0.5],
        };
        let k = cumulants_of_marginal(&d, 6).unwrap();
        let want = [0.5, 0.25, 0.0, -0.125, 0.0, 0.25];
        for (a, b) in k.iter().zip(want) {
            assert!((a - b).abs() < 1e-14, "{k:?}");
        }
    }

    #[test]
    fn constant_observable_marginal() {
        let g = Grid2D::square(2.0, 16).unwrap();
        let rho = DensityField::gaussian(g, (0.0, 0.0), (0.5, 0.5)).unwrap();
        let a = ObservableSpec::parse("1.5", &g, 0.0).unwrap();
        let m = marginal_over_observable(&rho, &a, 10).unwrap();
        assert_eq!(m.centers, vec![1.5]);
        assert_eq!(m.masses, vec![1.0]);
        assert!(marginal_over_observable(&rho, &a, 4).is_err());
    }
}
