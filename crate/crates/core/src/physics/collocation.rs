use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{PdeProblem, BOUNDARY_TOL};
use crate::datagen::{Grid, PointSet};
use crate::error::{Error, Result};

/// Points where the residual, boundary and data terms are evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct CollocationSet {
    pub interior: PointSet,
    pub boundary: PointSet,
    pub measurement: PointSet,
    /// Points of the s grid, used for s labels and s evaluation.
    pub s_points: PointSet,
    /// The same points serve every sample.
    pub shared: bool,
}

fn on_spatial_boundary(problem: &PdeProblem, p: &[f64]) -> bool {
    let edge = |v: f64| v.abs() <= BOUNDARY_TOL || (v - 1.0).abs() <= BOUNDARY_TOL;
    match problem {
        PdeProblem::ReactionDiffusion { .. } => edge(p[0]),
        _ => edge(p[0]) || edge(p[1]),
    }
}

impl CollocationSet {
    /// Grid-node collocation: interior nodes, boundary nodes of the spatial
    /// domain (all times for reaction-diffusion), and the measured nodes.
    /// Reaction-diffusion residuals start after the initial time, where the
    /// initial data enters through the measurements instead.
    pub fn from_grids(problem: &PdeProblem, u_grid: &Grid, s_grid: &Grid, measurement_index: &[usize]) -> Result<Self> {
        let pts = u_grid.points();
        let (mut interior, mut boundary) = (Vec::new(), Vec::new());
        for p in pts.iter() {
            if on_spatial_boundary(problem, p) {
                boundary.extend_from_slice(p);
            } else if !is_initial(problem, p) {
                interior.extend_from_slice(p);
            }
        }
        let set = CollocationSet {
            interior: PointSet::new(2, interior)?,
            boundary: PointSet::new(2, boundary)?,
            measurement: pts.subset(measurement_index),
            s_points: s_grid.points(),
            shared: true,
        };
        set.validate(problem)?;
        Ok(set)
    }

    pub fn validate(&self, problem: &PdeProblem) -> Result<()> {
        for (name, set) in [("interior", &self.interior), ("boundary", &self.boundary), ("measurement", &self.measurement)] {
            if set.is_empty() {
                return Err(Error::Contract(format!("{name} collocation set is empty")));
            }
        }
        if self.interior.dim != problem.u_dim() || self.s_points.dim != problem.s_dim() {
            return Err(Error::Dimension("collocation point dimensions do not match the problem".into()));
        }
        if let Some(p) =
            self.interior.iter().find(|p| on_spatial_boundary(problem, p) || is_initial(problem, p) || !in_closure(problem, p))
        {
            return Err(Error::Domain(format!("interior point {p:?} is not inside the domain")));
        }
        for p in self.boundary.iter() {
            problem.boundary_normal(p)?;
        }
        Ok(())
    }

    /// Same set with the interior points replaced by uniform draws.
    pub fn resample_interior(&self, problem: &PdeProblem, seed: u64) -> CollocationSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let horizon = match problem {
            PdeProblem::ReactionDiffusion { horizon, .. } => *horizon,
            _ => 1.0,
        };
        let mut coords = Vec::with_capacity(self.interior.coords.len());
        for _ in 0..self.interior.len() {
            // open interval in space keeps points off the boundary
            let x: f64 = rng.gen_range(f64::EPSILON..1.0);
            let y: f64 = match problem {
                PdeProblem::ReactionDiffusion { .. } => horizon - rng.gen_range(0.0..horizon),
                _ => rng.gen_range(f64::EPSILON..1.0),
            };
            coords.push(x);
            coords.push(y);
        }
        CollocationSet { interior: PointSet { dim: 2, coords }, ..self.clone() }
    }
}

fn is_initial(problem: &PdeProblem, p: &[f64]) -> bool {
    matches!(problem, PdeProblem::ReactionDiffusion { .. }) && p[1] <= BOUNDARY_TOL
}

fn in_closure(problem: &PdeProblem, p: &[f64]) -> bool {
    let upper = match problem {
        PdeProblem::ReactionDiffusion { horizon, .. } => *horizon,
        _ => 1.0,
    };
    (0.0..=1.0).contains(&p[0]) && (0.0..=upper).contains(&p[1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{measurement_indices, DataConfig};
    use crate::datagen::problem_grids;
    use crate::physics::ProblemKind;

    fn set_for(kind: ProblemKind) -> CollocationSet {
        let c = DataConfig::default_for(kind);
        let (ug, sg) = problem_grids(&c).unwrap();
        let idx = measurement_indices(kind, &ug, c.measure_block).unwrap();
        CollocationSet::from_grids(&c.problem, &ug, &sg, &idx).unwrap()
    }

    #[test]
    fn default_counts() {
        let rd = set_for(ProblemKind::ReactionDiffusion);
        assert_eq!((rd.interior.len(), rd.boundary.len(), rd.measurement.len(), rd.s_points.len()), (28 * 29, 60, 60, 30));
        assert!(rd.interior.iter().all(|p| p[1] > 0.0));
        let h = set_for(ProblemKind::Helmholtz);
        assert_eq!((h.interior.len(), h.boundary.len(), h.measurement.len()), (48 * 48, 196, 1600));
        let d = set_for(ProblemKind::Darcy);
        assert_eq!((d.interior.len(), d.boundary.len(), d.measurement.len()), (28 * 28, 116, 900));
    }

    #[test]
    fn resampled_interior_stays_inside() {
        for kind in [ProblemKind::Darcy, ProblemKind::ReactionDiffusion] {
            let prob = PdeProblem::default_for(kind);
            let base = set_for(kind);
            let s = base.resample_interior(&prob, 5);
            s.validate(&prob).unwrap();
            assert_eq!(s.interior.len(), base.interior.len());
        }
    }

    #[test]
    fn empty_subset_is_a_contract_error() {
        let prob = PdeProblem::default_for(ProblemKind::Helmholtz);
        let mut s = set_for(ProblemKind::Helmholtz);
        s.boundary = PointSet { dim: 2, coords: vec![] };
        assert!(matches!(s.validate(&prob), Err(Error::Contract(_))));
    }
}
