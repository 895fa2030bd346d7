//! Benchmark PDE descriptors, residual operators and loss assembly.
//!
//! Residuals exist in two forms that are tested against each other:
//! graph form ([`interior_residual`], [`boundary_residual`]) builds nodes from
//! jets so the residual is differentiable in the network parameters, and
//! local form ([`interior_residual_local`], [`boundary_residual_local`])
//! evaluates the same expression on plain numbers together with its partial
//! derivatives, which the batched trainer uses.

mod collocation;
mod loss;
mod residual;

pub use collocation::CollocationSet;
pub use loss::{assemble_losses, LossNodes, LossValues, LossWeights, ResidualTerms};
pub use residual::{
    boundary_residual, boundary_residual_local, interior_residual, interior_residual_local, FieldJet, LocalJet,
};

use serde::{Deserialize, Serialize};

use crate::autodiff::DirSpec;
use crate::error::{Error, Result};

pub const BOUNDARY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    ReactionDiffusion,
    Helmholtz,
    Darcy,
}

impl ProblemKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rd" | "reaction-diffusion" => Ok(ProblemKind::ReactionDiffusion),
            "helmholtz" => Ok(ProblemKind::Helmholtz),
            "darcy" => Ok(ProblemKind::Darcy),
            other => Err(Error::Validation(format!("unknown problem '{other}' (rd | helmholtz | darcy)"))),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            ProblemKind::ReactionDiffusion => "rd",
            ProblemKind::Helmholtz => "helmholtz",
            ProblemKind::Darcy => "darcy",
        }
    }
}

/// Known temporal factor `g(t)` of the separable reaction-diffusion source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeProfile {
    /// `g = 1`
    Constant,
    /// `g = exp(-t)`
    ExpDecay,
    /// `g = 1 + t/2`
    Linear,
}

impl TimeProfile {
    pub fn eval(self, t: f64) -> f64 {
        match self {
            TimeProfile::Constant => 1.0,
            TimeProfile::ExpDecay => (-t).exp(),
            TimeProfile::Linear => 1.0 + 0.5 * t,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(TimeProfile::Constant),
            "exp-decay" => Ok(TimeProfile::ExpDecay),
            "linear" => Ok(TimeProfile::Linear),
            other => Err(Error::Validation(format!("unknown time profile '{other}'"))),
        }
    }
}

/// Sign of the diffusion term in the reaction-diffusion equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RdSign {
    /// `u_t - u_xx = f g` (well-posed forward in time).
    Forward,
    /// `u_t + u_xx = f g`.
    Literal,
}

impl RdSign {
    /// Coefficient `k` in `u_t - k u_xx`.
    pub fn diffusion(self) -> f64 {
        match self {
            RdSign::Forward => 1.0,
            RdSign::Literal => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PdeProblem {
    /// `u_t - k u_xx = s(x) g(t)` on `[0,1] x [0,T]`, `u = 0` at `x = 0, 1`.
    /// Points are `(x, t)`; the unknown `s` depends on `x` only.
    ReactionDiffusion { g: TimeProfile, sign: RdSign, horizon: f64 },
    /// `-div(sigma grad u) + c u = s` on the unit square,
    /// `sigma du/dnu = flux` on the boundary.
    Helmholtz { sigma: f64, c: f64, flux: f64 },
    /// `-div(s grad u) = f` on the unit square, `u = 0` on the boundary,
    /// with `f = 100 x(1-x) y(1-y)`.
    Darcy,
}

impl PdeProblem {
    pub fn default_for(kind: ProblemKind) -> Self {
        match kind {
            ProblemKind::ReactionDiffusion => {
                PdeProblem::ReactionDiffusion { g: TimeProfile::Constant, sign: RdSign::Forward, horizon: 1.0 }
            }
            ProblemKind::Helmholtz => PdeProblem::Helmholtz { sigma: 1.0, c: 1.0, flux: 0.0 },
            ProblemKind::Darcy => PdeProblem::Darcy,
        }
    }

    pub fn kind(&self) -> ProblemKind {
        match self {
            PdeProblem::ReactionDiffusion { .. } => ProblemKind::ReactionDiffusion,
            PdeProblem::Helmholtz { .. } => ProblemKind::Helmholtz,
            PdeProblem::Darcy => ProblemKind::Darcy,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            PdeProblem::ReactionDiffusion { g, horizon, .. } => {
                if !(horizon > 0.0) {
                    return Err(Error::Validation(format!("time horizon must be positive, got {horizon}")));
                }
                // 0 < g- <= g(t) <= g+ on [0, T], checked on a fine sample
                let vals: Vec<f64> = (0..=1000).map(|i| g.eval(horizon * i as f64 / 1000.0)).collect();
                let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
                if !(lo > 0.0) || vals.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Validation(format!("g(t) must stay bounded away from zero, min {lo}")));
                }
                Ok(())
            }
            PdeProblem::Helmholtz { sigma, c, flux } => {
                if !(sigma > 0.0) || !(c > 0.0) || !flux.is_finite() {
                    return Err(Error::Validation("Helmholtz needs sigma > 0, c > 0, finite flux".into()));
                }
                Ok(())
            }
            PdeProblem::Darcy => Ok(()),
        }
    }

    /// Dimension of the points where `u` lives.
    pub fn u_dim(&self) -> usize {
        2
    }

    /// Dimension of the points where `s` lives.
    pub fn s_dim(&self) -> usize {
        match self {
            PdeProblem::ReactionDiffusion { .. } => 1,
            _ => 2,
        }
    }

    /// Map an interior collocation point to the point where `s` is evaluated.
    pub fn s_point<'a>(&self, point: &'a [f64]) -> &'a [f64] {
        match self {
            PdeProblem::ReactionDiffusion { .. } => &point[..1],
            _ => point,
        }
    }

    /// Jet directions of `u` the interior residual reads.
    pub fn interior_u_dirs(&self) -> Vec<DirSpec> {
        match self {
            PdeProblem::ReactionDiffusion { .. } => vec![DirSpec::second(0), DirSpec::first(1)],
            _ => vec![DirSpec::second(0), DirSpec::second(1)],
        }
    }

    /// Jet directions of `s` the interior residual reads.
    pub fn interior_s_dirs(&self) -> Vec<DirSpec> {
        match self {
            PdeProblem::Darcy => vec![DirSpec::first(0), DirSpec::first(1)],
            _ => Vec::new(),
        }
    }

    pub fn boundary_u_dirs(&self) -> Vec<DirSpec> {
        match self {
            PdeProblem::Helmholtz { .. } => vec![DirSpec::first(0), DirSpec::first(1)],
            _ => Vec::new(),
        }
    }

    /// Known source term of the Darcy problem.
    pub fn darcy_source(point: &[f64]) -> f64 {
        let (x, y) = (point[0], point[1]);
        100.0 * x * (1.0 - x) * y * (1.0 - y)
    }

    /// Outward unit normal at a boundary point of the spatial domain
    /// (corners get the normalised diagonal).
    pub fn boundary_normal(&self, point: &[f64]) -> Result<[f64; 2]> {
        let on = |v: f64, target: f64| (v - target).abs() <= BOUNDARY_TOL;
        match self {
            PdeProblem::ReactionDiffusion { .. } => {
                let x = point[0];
                if on(x, 0.0) {
                    Ok([-1.0, 0.0])
                } else if on(x, 1.0) {
                    Ok([1.0, 0.0])
                } else {
                    Err(Error::Domain(format!("point {point:?} is not on x = 0 or x = 1")))
                }
            }
            _ => {
                let mut n = [0.0f64, 0.0];
                for axis in 0..2 {
                    if on(point[axis], 0.0) {
                        n[axis] = -1.0;
                    } else if on(point[axis], 1.0) {
                        n[axis] = 1.0;
                    }
                }
                let norm = (n[0] * n[0] + n[1] * n[1]).sqrt();
                if norm == 0.0 {
                    return Err(Error::Domain(format!("point {point:?} is not on the unit-square boundary")));
                }
                Ok([n[0] / norm, n[1] / norm])
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_profiles_are_admissible() {
        for g in [TimeProfile::Constant, TimeProfile::ExpDecay, TimeProfile::Linear] {
            PdeProblem::ReactionDiffusion { g, sign: RdSign::Forward, horizon: 1.0 }.validate().unwrap();
        }
        assert!(PdeProblem::ReactionDiffusion { g: TimeProfile::Constant, sign: RdSign::Forward, horizon: 0.0 }
            .validate()
            .is_err());
    }

    #[test]
    fn normals() {
        let h = PdeProblem::default_for(ProblemKind::Helmholtz);
        assert_eq!(h.boundary_normal(&[0.0, 0.4]).unwrap(), [-1.0, 0.0]);
        assert_eq!(h.boundary_normal(&[0.3, 1.0]).unwrap(), [0.0, 1.0]);
        let c = h.boundary_normal(&[1.0, 1.0]).unwrap();
        assert!((c[0] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert!(matches!(h.boundary_normal(&[0.5, 0.5]), Err(Error::Domain(_))));
    }

    #[test]
    fn helmholtz_defaults() {
        assert_eq!(
            PdeProblem::default_for(ProblemKind::Helmholtz),
            PdeProblem::Helmholtz { sigma: 1.0, c: 1.0, flux: 0.0 }
        );
        assert_eq!(PdeProblem::darcy_source(&[0.5, 0.5]), 6.25);
    }
}
