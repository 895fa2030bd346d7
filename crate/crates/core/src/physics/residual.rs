use super::PdeProblem;
use crate::autodiff::{DirSpec, Graph, Jet, NodeId};
use crate::error::{Error, Result};

/// A jet together with the directions its components refer to.
#[derive(Debug, Clone, Copy)]
pub struct FieldJet<'a> {
    pub jet: &'a Jet,
    pub dirs: &'a [DirSpec],
}

impl<'a> FieldJet<'a> {
    pub fn new(jet: &'a Jet, dirs: &'a [DirSpec]) -> Self {
        FieldJet { jet, dirs }
    }

    pub fn value(&self) -> NodeId {
        self.jet.value
    }

    fn slot(&self, axis: usize, second: bool) -> Result<usize> {
        self.dirs
            .iter()
            .position(|d| d.axis == axis && (d.second || !second))
            .ok_or_else(|| {
                Error::Contract(format!(
                    "residual needs the {} derivative along axis {axis}, which the jet does not carry",
                    if second { "second" } else { "first" }
                ))
            })
    }

    pub fn d1(&self, g: &mut Graph, axis: usize) -> Result<NodeId> {
        let k = self.slot(axis, false)?;
        Ok(self.jet.d1_node(g, k))
    }

    pub fn d2(&self, g: &mut Graph, axis: usize) -> Result<NodeId> {
        let k = self.slot(axis, true)?;
        Ok(self.jet.d2_node(g, k))
    }
}

/// Value, gradient and pure second derivatives of a field at one point,
/// indexed by coordinate axis. Also used for partial derivatives of a
/// residual with respect to those quantities.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LocalJet {
    pub v: f64,
    pub d1: [f64; 2],
    pub d2: [f64; 2],
}

/// Interior residual as a graph node.
///
/// * reaction-diffusion: `u_t - k u_xx - s g(t)`
/// * Helmholtz: `-sigma Lap u + c u - s`
/// * Darcy: `-(grad s . grad u + s Lap u) - f`
pub fn interior_residual(
    g: &mut Graph,
    problem: &PdeProblem,
    u: &FieldJet,
    s: &FieldJet,
    point: &[f64],
) -> Result<NodeId> {
    match *problem {
        PdeProblem::ReactionDiffusion { g: profile, sign, .. } => {
            let ut = u.d1(g, 1)?;
            let uxx = u.d2(g, 0)?;
            let diff = g.scale(uxx, sign.diffusion());
            let lhs = g.sub(ut, diff);
            let src = g.scale(s.value(), profile.eval(point[1]));
            Ok(g.sub(lhs, src))
        }
        PdeProblem::Helmholtz { sigma, c, .. } => {
            let uxx = u.d2(g, 0)?;
            let uyy = u.d2(g, 1)?;
            let lap = g.add(uxx, uyy);
            let a = g.scale(lap, -sigma);
            let b = g.scale(u.value(), c);
            let ab = g.add(a, b);
            Ok(g.sub(ab, s.value()))
        }
        PdeProblem::Darcy => {
            let (ux, uy) = (u.d1(g, 0)?, u.d1(g, 1)?);
            let (uxx, uyy) = (u.d2(g, 0)?, u.d2(g, 1)?);
            let (sx, sy) = (s.d1(g, 0)?, s.d1(g, 1)?);
            let gx = g.mul(sx, ux);
            let gy = g.mul(sy, uy);
            let lap = g.add(uxx, uyy);
            let slap = g.mul(s.value(), lap);
            let t = g.add(gx, gy);
            let div = g.add(t, slap);
            let neg = g.neg(div);
            let f = g.constant(PdeProblem::darcy_source(point));
            Ok(g.sub(neg, f))
        }
    }
}

/// Interior residual on numbers, with its partials with respect to the
/// `u` and `s` jet components.
pub fn interior_residual_local(problem: &PdeProblem, u: &LocalJet, s: &LocalJet, point: &[f64]) -> (f64, LocalJet, LocalJet) {
    let mut du = LocalJet::default();
    let mut ds = LocalJet::default();
    let r = match *problem {
        PdeProblem::ReactionDiffusion { g, sign, .. } => {
            let k = sign.diffusion();
            let gt = g.eval(point[1]);
            du.d1[1] = 1.0;
            du.d2[0] = -k;
            ds.v = -gt;
            u.d1[1] - k * u.d2[0] - s.v * gt
        }
        PdeProblem::Helmholtz { sigma, c, .. } => {
            du.d2 = [-sigma, -sigma];
            du.v = c;
            ds.v = -1.0;
            -sigma * (u.d2[0] + u.d2[1]) + c * u.v - s.v
        }
        PdeProblem::Darcy => {
            let lap = u.d2[0] + u.d2[1];
            du.d1 = [-s.d1[0], -s.d1[1]];
            du.d2 = [-s.v, -s.v];
            ds.d1 = [-u.d1[0], -u.d1[1]];
            ds.v = -lap;
            -(s.d1[0] * u.d1[0] + s.d1[1] * u.d1[1] + s.v * lap) - PdeProblem::darcy_source(point)
        }
    };
    (r, du, ds)
}

/// Boundary residual as a graph node: `u` for Dirichlet problems,
/// `sigma du/dnu - flux` for Helmholtz.
pub fn boundary_residual(g: &mut Graph, problem: &PdeProblem, u: &FieldJet, point: &[f64]) -> Result<NodeId> {
    let normal = problem.boundary_normal(point)?;
    match *problem {
        PdeProblem::Helmholtz { sigma, flux, .. } => {
            let ux = u.d1(g, 0)?;
            let uy = u.d1(g, 1)?;
            let a = g.scale(ux, sigma * normal[0]);
            let b = g.scale(uy, sigma * normal[1]);
            let dn = g.add(a, b);
            let gf = g.constant(flux);
            Ok(g.sub(dn, gf))
        }
        _ => Ok(u.value()),
    }
}

pub fn boundary_residual_local(problem: &PdeProblem, u: &LocalJet, point: &[f64]) -> Result<(f64, LocalJet)> {
    let normal = problem.boundary_normal(point)?;
    let mut du = LocalJet::default();
    match *problem {
        PdeProblem::Helmholtz { sigma, flux, .. } => {
            du.d1 = [sigma * normal[0], sigma * normal[1]];
            Ok((sigma * (normal[0] * u.d1[0] + normal[1] * u.d1[1]) - flux, du))
        }
        _ => {
            du.v = 1.0;
            Ok((u.v, du))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::jet_propagate;
    use crate::physics::{ProblemKind, RdSign, TimeProfile};
    use std::f64::consts::PI;

    /// Build jets of closed-form fields by composing graph ops on the point
    /// coordinates, so the jet pipeline is exercised without any network.
    fn field_jets<F>(g: &mut Graph, point: &[f64], dirs: &[DirSpec], f: F) -> Jet
    where
        F: FnOnce(&mut Graph, &[Jet]) -> Jet,
    {
        let p: Vec<NodeId> = point.iter().map(|&v| g.constant(v)).collect();
        jet_propagate(g, &p, dirs, |g, xs| Ok(vec![f(g, xs)])).unwrap().remove(0)
    }

    #[test]
    fn helmholtz_constant_pair_has_zero_residual() {
        let prob = PdeProblem::default_for(ProblemKind::Helmholtz);
        let dirs = prob.interior_u_dirs();
        let mut g = Graph::new();
        let pt = [0.3, 0.7];
        let one = g.one();
        let u = field_jets(&mut g, &pt, &dirs, |_, xs| Jet::constant(one, &xs[0]));
        let s = u.clone();
        let r = interior_residual(&mut g, &prob, &FieldJet::new(&u, &dirs), &FieldJet::new(&s, &[]), &pt).unwrap();
        g.bind_params(&[]).unwrap();
        g.bind_inputs(&[]).unwrap();
        g.eval().unwrap();
        assert_eq!(g.value(r), 0.0);
    }

    #[test]
    fn rd_zero_pair() {
        let prob = PdeProblem::default_for(ProblemKind::ReactionDiffusion);
        let (r, ..) = interior_residual_local(&prob, &LocalJet::default(), &LocalJet::default(), &[0.4, 0.2]);
        assert_eq!(r, 0.0);
    }

    #[test]
    fn darcy_manufactured_symbolic() {
        // sigma = 1, u = sin(pi x) sin(pi y): -Lap u = 2 pi^2 u. With the
        // fixed Darcy source the residual is 2 pi^2 u - f; check the
        // identity against the symbolic derivatives instead.
        let (x, y) = (0.37, 0.81);
        let u = LocalJet {
            v: (PI * x).sin() * (PI * y).sin(),
            d1: [PI * (PI * x).cos() * (PI * y).sin(), PI * (PI * x).sin() * (PI * y).cos()],
            d2: [-PI * PI * (PI * x).sin() * (PI * y).sin(); 2],
        };
        let s = LocalJet { v: 1.0, ..Default::default() };
        let (r, ..) = interior_residual_local(&PdeProblem::Darcy, &u, &s, &[x, y]);
        let expected = 2.0 * PI * PI * u.v - PdeProblem::darcy_source(&[x, y]);
        assert!((r - expected).abs() < 1e-12);
    }

    #[test]
    fn rd_requires_time_derivative() {
        let prob = PdeProblem::ReactionDiffusion { g: TimeProfile::Constant, sign: RdSign::Forward, horizon: 1.0 };
        let dirs = [DirSpec::second(0)];
        let mut g = Graph::new();
        let u = field_jets(&mut g, &[0.5, 0.5], &dirs, |_, xs| xs[0].clone());
        let s = u.clone();
        let err = interior_residual(&mut g, &prob, &FieldJet::new(&u, &dirs), &FieldJet::new(&s, &[]), &[0.5, 0.5]);
        assert!(matches!(err, Err(Error::Contract(_))));
    }

    #[test]
    fn boundary_cases() {
        let h = PdeProblem::default_for(ProblemKind::Helmholtz);
        let dirs = h.boundary_u_dirs();
        // u = cos(pi x) cos(pi y) on the x = 0 face: du/dnu = 0
        let pt = [0.0, 0.35];
        let lu = LocalJet {
            v: (PI * pt[1]).cos(),
            d1: [-PI * (PI * pt[0]).sin() * (PI * pt[1]).cos(), -PI * (PI * pt[1]).sin()],
            d2: [0.0; 2],
        };
        let (r, _) = boundary_residual_local(&h, &lu, &pt).unwrap();
        assert!(r.abs() < 1e-15);

        // u = x at the x = 1 face: residual 1
        let pt = [1.0, 0.5];
        let mut g = Graph::new();
        let u = field_jets(&mut g, &pt, &dirs, |_, xs| xs[0].clone());
        let r = boundary_residual(&mut g, &h, &FieldJet::new(&u, &dirs), &pt).unwrap();
        g.bind_params(&[]).unwrap();
        g.bind_inputs(&[]).unwrap();
        g.eval().unwrap();
        assert_eq!(g.value(r), 1.0);

        // Dirichlet with u = 0
        let rd = PdeProblem::default_for(ProblemKind::ReactionDiffusion);
        assert_eq!(boundary_residual_local(&rd, &LocalJet::default(), &[0.0, 0.3]).unwrap().0, 0.0);
        assert!(matches!(
            boundary_residual_local(&rd, &LocalJet::default(), &[0.5, 0.3]),
            Err(Error::Domain(_))
        ));
    }
}
