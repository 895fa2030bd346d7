//! Zero-mean Gaussian random fields with a squared-exponential kernel.
//!
//! Up to [`DENSE_LIMIT`] nodes the full covariance `K + jitter I` is
//! Cholesky-factored. Larger tensor grids use the separability of the kernel:
//! `K = Kx (x) Ky`, so a sample is `Ly Z Lx^T` with per-axis factors.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::grid::{Grid, PointSet};
use crate::error::{Error, Result};

pub const DENSE_LIMIT: usize = 2500;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrfConfig {
    pub length_scale: f64,
    pub variance: f64,
    pub jitter: f64,
}

impl GrfConfig {
    pub fn new(length_scale: f64) -> Self {
        GrfConfig { length_scale, variance: 1.0, jitter: 1e-8 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length_scale > 0.0) {
            return Err(Error::Validation(format!("GRF length scale must be > 0, got {}", self.length_scale)));
        }
        if !(self.jitter >= 0.0) || !(self.variance >= 0.0) {
            return Err(Error::Validation("GRF jitter and variance must be >= 0".into()));
        }
        Ok(())
    }

    /// `variance * exp(-|a-b|^2 / (2 l^2))`
    pub fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        let r2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        self.variance * (-r2 / (2.0 * self.length_scale * self.length_scale)).exp()
    }
}

enum Factor {
    Dense(DMatrix<f64>),
    /// Per-axis lower factors, axis 0 first.
    Kronecker(Vec<DMatrix<f64>>),
}

/// Factorised covariance, reusable for many draws.
pub struct GrfSampler {
    config: GrfConfig,
    n: usize,
    factor: Factor,
}

fn cholesky(points: &PointSet, unit: &GrfConfig, scale: f64) -> Result<DMatrix<f64>> {
    let n = points.len();
    let mut k = DMatrix::from_fn(n, n, |i, j| scale * unit.kernel(points.point(i), points.point(j)));
    for i in 0..n {
        k[(i, i)] += unit.jitter;
    }
    match k.cholesky() {
        Some(c) => Ok(c.l()),
        None => Err(Error::Factorization {
            nodes: n,
            jitter: unit.jitter,
            detail: format!("covariance not positive definite (length scale {})", unit.length_scale),
        }),
    }
}

impl GrfSampler {
    pub fn for_points(config: GrfConfig, points: &PointSet) -> Result<Self> {
        config.validate()?;
        if points.len() > DENSE_LIMIT {
            return Err(Error::Validation(format!(
                "{} nodes exceed the dense covariance limit of {DENSE_LIMIT}",
                points.len()
            )));
        }
        let unit = GrfConfig { variance: 1.0, ..config };
        let l = cholesky(points, &unit, 1.0)?;
        Ok(GrfSampler { config, n: points.len(), factor: Factor::Dense(l) })
    }

    pub fn for_grid(config: GrfConfig, grid: &Grid) -> Result<Self> {
        config.validate()?;
        if grid.n_points() <= DENSE_LIMIT {
            return Self::for_points(config, &grid.points());
        }
        let unit = GrfConfig { variance: 1.0, ..config };
        let factors = grid
            .axes
            .iter()
            .map(|a| cholesky(&PointSet { dim: 1, coords: a.clone() }, &unit, 1.0))
            .collect::<Result<Vec<_>>>()?;
        Ok(GrfSampler { config, n: grid.n_points(), factor: Factor::Kronecker(factors) })
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    pub fn sample(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sd = self.config.variance.sqrt();
        let z: Vec<f64> = (0..self.n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let field: Vec<f64> = match &self.factor {
            Factor::Dense(l) => (l * DVector::from_vec(z)).iter().copied().collect(),
            Factor::Kronecker(fs) => match fs.as_slice() {
                [lx] => (lx * DVector::from_vec(z)).iter().copied().collect(),
                [lx, ly] => {
                    // storage index = iy * nx + ix, i.e. a column-major (nx, ny) matrix
                    let zm = DMatrix::from_vec(lx.nrows(), ly.nrows(), z);
                    let f = lx * zm * ly.transpose();
                    f.as_slice().to_vec()
                }
                _ => unreachable!("grids are 1-d or 2-d"),
            },
        };
        field.into_iter().map(|v| v * sd).collect()
    }
}

/// One draw on `grid`, deterministic per `seed`.
pub fn grf_sample(config: &GrfConfig, grid: &Grid, seed: u64) -> Result<Vec<f64>> {
    Ok(GrfSampler::for_grid(*config, grid)?.sample(seed))
}
