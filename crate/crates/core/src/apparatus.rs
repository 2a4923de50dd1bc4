//! The measuring apparatus: thermal ready state of the pointer, normal-mode
//! frequencies of the trap, and conversion of pointer readings to records.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Random stream used everywhere randomness enters: PCG-XSL-RR 128/64.
pub type StreamRng = rand_pcg::Pcg64;

/// Recorded in run manifests so that streams can be reproduced.
pub const RNG_ALGORITHM: &str = "pcg64 (Lcg128Xsl64, rand_pcg 0.3) + rand_distr 0.4 StandardNormal (ziggurat)";

/// Seeds the stream for logical channel `stream` of a run.
pub fn channel_rng(seed: u64, stream: u64) -> StreamRng {
    // SplitMix64 whitening so nearby seeds give unrelated PCG states.
    let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    let state = ((z as u128) << 64) | seed as u128;
    rand_pcg::Pcg64::new(state, 2 * stream as u128 + 1)
}

/// A seeded stream for code that needs just one.
pub fn seeded_rng(seed: u64) -> StreamRng {
    StreamRng::seed_from_u64(seed)
}

/// Measurement settings: inverse temperature `beta`, trap frequency `omega`,
/// strength `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApparatusConfig {
    pub beta: f64,
    pub omega: f64,
    pub k: f64,
}

impl ApparatusConfig {
    pub fn new(beta: f64, omega: f64, k: f64) -> Result<Self> {
        let cfg = ApparatusConfig { beta, omega, k };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidParameter(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.omega > 0.0 && self.omega.is_finite()) {
            return Err(Error::InvalidParameter(format!("omega must be positive, got {}", self.omega)));
        }
        if !(self.k >= 0.0 && self.k.is_finite()) {
            return Err(Error::InvalidParameter(format!("k must be non-negative, got {}", self.k)));
        }
        Ok(())
    }

    /// `beta k Omega^2`, the collapse rate that sets the likelihood width.
    #[inline]
    pub fn information_rate(&self) -> f64 {
        self.beta * self.k * self.omega * self.omega
    }

    /// `k / (2 beta)`, the coefficient of the double-bracket diffusion.
    #[inline]
    pub fn diffusion_coefficient(&self) -> f64 {
        self.k / (2.0 * self.beta)
    }
}

/// Boltzmann marginal of the pointer `Q` and its conjugate `P` in the trap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReadyState {
    pub var_q: f64,
    pub var_p: f64,
}

impl From<&ApparatusConfig> for ReadyState {
    fn from(cfg: &ApparatusConfig) -> Self {
        ReadyState {
            var_q: 1.0 / (cfg.beta * cfg.omega * cfg.omega),
            var_p: 1.0 / cfg.beta,
        }
    }
}

/// Draws `(Q, P)` from the ready state: independent zero-mean normals with
/// variances `1/(beta Omega^2)` and `1/beta`.
pub fn sample_ready_state(cfg: &ApparatusConfig, rng: &mut StreamRng) -> (f64, f64) {
    let ready = ReadyState::from(cfg);
    let zq: f64 = StandardNormal.sample(rng);
    let zp: f64 = StandardNormal.sample(rng);
    (zq * ready.var_q.sqrt(), zp * ready.var_p.sqrt())
}

/// Record value `A* = Q* / sqrt(k)` read off the pointer.
pub fn pointer_to_record(q_star: f64, k: f64) -> Result<f64> {
    if !(k > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "record is undefined for measurement strength k = {k}"
        )));
    }
    Ok(q_star / k.sqrt())
}

/// Quadratic part of a trapped apparatus Hamiltonian, `1/2 x^T M x` on a
/// `2m`-dimensional phase space ordered `(x_1..x_m, y_1..y_m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrapQuadraticForm {
    matrix: DMatrix<f64>,
}

impl TrapQuadraticForm {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        let n = matrix.nrows();
        if n != matrix.ncols() {
            return Err(Error::InvalidParameter("trap matrix must be square".into()));
        }
        if n == 0 || n % 2 == 1 {
            return Err(Error::InvalidParameter(format!(
                "trap matrix must have even dimension 2m, got {n}"
            )));
        }
        let scale = matrix.amax().max(1.0);
        if (&matrix - matrix.transpose()).amax() > 1e-12 * scale {
            return Err(Error::InvalidParameter("trap matrix must be symmetric".into()));
        }
        if matrix.clone().cholesky().is_none() {
            return Err(Error::InvalidParameter("trap matrix must be positive definite".into()));
        }
        Ok(TrapQuadraticForm { matrix })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn degrees_of_freedom(&self) -> usize {
        self.matrix.nrows() / 2
    }
}

/// Standard symplectic form `J = [[0, I], [-I, 0]]`.
pub fn symplectic_form(m: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2 * m, 2 * m);
    for i in 0..m {
        j[(i, m + i)] = 1.0;
        j[(m + i, i)] = -1.0;
    }
    j
}

/// Normal-mode frequencies `b_1 >= ... >= b_m > 0` of the trap.
///
/// The eigenvalues of `J M` are `+/- i b_k`. They are obtained here through
/// the similar skew-symmetric matrix `K = M^{1/2} J M^{1/2}`: `K^T K` is
/// symmetric positive definite with every `b_k^2` appearing twice, so only
/// symmetric eigensolvers are needed.
pub fn williamson_frequencies(form: &TrapQuadraticForm) -> Vec<f64> {
    let m = form.degrees_of_freedom();
    let eig = SymmetricEigen::new(form.matrix.clone());
    let sqrt_vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let root = &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose();
    let k = &root * symplectic_form(m) * &root;
    let gram = k.transpose() * &k;
    let mut squares: Vec<f64> = SymmetricEigen::new(gram).eigenvalues.iter().copied().collect();
    squares.sort_by(|a, b| b.total_cmp(a));
    // Eigenvalues come in equal pairs; average each pair.
    squares
        .chunks_exact(2)
        .map(|pair| (0.5 * (pair[0] + pair[1])).max(0.0).sqrt())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_oscillator() {
        let f = TrapQuadraticForm::new(DMatrix::identity(2, 2)).unwrap();
        let b = williamson_frequencies(&f);
        assert_eq!(b.len(), 1);
        assert!((b[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn reads_off_normal_form() {
        let omega: f64 = 2.7;
        let f = TrapQuadraticForm::new(DMatrix::from_diagonal(&nalgebra::dvector![omega * omega, 1.0])).unwrap();
        assert!((williamson_frequencies(&f)[0] - omega).abs() < 1e-12);
    }

    #[test]
    fn degenerate_modes_keep_multiplicity() {
        let f = TrapQuadraticForm::new(DMatrix::from_diagonal(&nalgebra::dvector![4.0, 4.0, 1.0, 1.0])).unwrap();
        let b = williamson_frequencies(&f);
        assert_eq!(b.len(), 2);
        assert!((b[0] - 2.0).abs() < 1e-12 && (b[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_forms() {
        assert!(TrapQuadraticForm::new(DMatrix::identity(3, 3)).is_err());
        assert!(TrapQuadraticForm::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0])).is_err());
        assert!(TrapQuadraticForm::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0])).is_err());
    }

    #[test]
    fn pointer_records() {
        assert_eq!(pointer_to_record(3.0, 9.0).unwrap(), 1.0);
        assert_eq!(pointer_to_record(0.0, 9.0).unwrap(), 0.0);
        assert_eq!(pointer_to_record(2.0 * 1.7, 5.0).unwrap(), 2.0 * pointer_to_record(1.7, 5.0).unwrap());
        assert!(pointer_to_record(1.0, 0.0).is_err());
        assert!(pointer_to_record(1.0, -1.0).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(ApparatusConfig::new(0.0, 1.0, 1.0).is_err());
        assert!(ApparatusConfig::new(1.0, -1.0, 1.0).is_err());
        assert!(ApparatusConfig::new(1.0, 1.0, -0.1).is_err());
        assert!(ApparatusConfig::new(1.0, 1.0, 0.0).is_ok());
        let ready = ReadyState::from(&ApparatusConfig::new(2.0, 3.0, 1.0).unwrap());
        assert!((ready.var_q * ready.var_p - 1.0 / (2.0f64 * 3.0).powi(2)).abs() < 1e-15);
    }

    #[test]
    fn same_seed_same_stream() {
        let cfg = ApparatusConfig::new(1.0, 2.0, 1.0).unwrap();
        let mut a = channel_rng(42, 0);
        let mut b = channel_rng(42, 0);
        let mut c = channel_rng(42, 1);
        let xa: Vec<_> = (0..10).map(|_| sample_ready_state(&cfg, &mut a)).collect();
        let xb: Vec<_> = (0..10).map(|_| sample_ready_state(&cfg, &mut b)).collect();
        let xc: Vec<_> = (0..10).map(|_| sample_ready_state(&cfg, &mut c)).collect();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
    }

    #[test]
    fn cold_limit_concentrates() {
        let cfg = ApparatusConfig::new(1e6, 1.0, 1.0).unwrap();
        let mut rng = seeded_rng(3);
        for _ in 0..1000 {
            let (q, p) = sample_ready_state(&cfg, &mut rng);
            assert!(q.abs() < 6e-3 && p.abs() < 6e-3);
        }
    }
}
