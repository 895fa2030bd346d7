//! Finite-difference forward solvers for the three benchmarks.

use super::grid::{Grid, GridKind};
use super::linalg::{conjugate_gradient, solve_tridiagonal};
use crate::error::{Error, Result};
use crate::physics::{RdSign, TimeProfile};

pub const CG_TOL: f64 = 1e-10;

/// Advance `u` (Dirichlet ends kept) from `t0` to `t1` with Crank-Nicolson
/// substeps of at most `h^2 / 2`, so grid-scale modes are damped instead of
/// flipping sign.
fn rd_advance(u: &mut [f64], f: &[f64], g: TimeProfile, k: f64, h: f64, t0: f64, t1: f64) -> Result<()> {
    let nx = u.len();
    let m = nx - 2;
    let subs = (2.0 * (t1 - t0) / (h * h)).ceil().max(1.0) as usize;
    let dt = (t1 - t0) / subs as f64;
    let r = k * dt / (2.0 * h * h);
    let off = vec![-r; m];
    let diag = vec![1.0 + 2.0 * r; m];
    let mut rhs = vec![0.0; m];
    for j in 0..subs {
        let ta = t0 + j as f64 * dt;
        let (g0, g1) = (g.eval(ta), g.eval(ta + dt));
        for i in 1..nx - 1 {
            let lap = u[i - 1] - 2.0 * u[i] + u[i + 1];
            rhs[i - 1] = u[i] + r * lap + 0.5 * dt * f[i] * (g0 + g1);
        }
        let next = solve_tridiagonal(&off, &diag, &off, &rhs)?;
        u[1..nx - 1].copy_from_slice(&next);
    }
    Ok(())
}

/// Crank-Nicolson for `u_t - k u_xx = f(x) g(t)` on a space-time grid with
/// homogeneous Dirichlet ends, where `k = +1` for [`RdSign::Forward`] and
/// `k = -1` for the literal `u_t + u_xx` convention.
///
/// `u0` and `f` live on the spatial axis; the returned field is time-major and
/// sampled at the grid times.
/// The endpoints of `u0` are clamped to zero.
pub fn solve_reaction_diffusion(grid: &Grid, u0: &[f64], f: &[f64], g: TimeProfile, sign: RdSign) -> Result<Vec<f64>> {
    if grid.kind != GridKind::SpaceTime {
        return Err(Error::Domain("reaction-diffusion needs a space-time grid".into()));
    }
    let (xs, ts) = (&grid.axes[0], &grid.axes[1]);
    let (nx, nt) = (xs.len(), ts.len());
    if u0.len() != nx || f.len() != nx {
        return Err(Error::Dimension(format!("u0/f must have {nx} spatial values")));
    }
    let h = grid.spacing(0);
    let k = match sign {
        RdSign::Forward => 1.0,
        RdSign::Literal => -1.0,
    };
    let mut out = vec![0.0; nx * nt];
    let mut u: Vec<f64> = u0.to_vec();
    u[0] = 0.0;
    u[nx - 1] = 0.0;
    out[..nx].copy_from_slice(&u);
    if nx == 2 {
        return Ok(out);
    }
    for step in 1..nt {
        rd_advance(&mut u, f, g, k, h, ts[step - 1], ts[step])?;
        out[step * nx..(step + 1) * nx].copy_from_slice(&u);
    }
    Ok(out)
}

/// Trapezoid-like weights that symmetrise the ghost-node Neumann stencil.
fn neumann_weight(i: usize, n: usize) -> f64 {
    if i == 0 || i == n - 1 {
        0.5
    } else {
        1.0
    }
}

fn check_unit_rect(grid: &Grid) -> Result<(usize, usize, f64)> {
    if grid.kind != GridKind::Rectangle || !grid.is_uniform() {
        return Err(Error::Domain("expected a uniform rectangular grid".into()));
    }
    let (hx, hy) = (grid.spacing(0), grid.spacing(1));
    if (hx - hy).abs() > 1e-12 * hx {
        return Err(Error::Domain(format!("expected equal spacing, got {hx} and {hy}")));
    }
    Ok((grid.axes[0].len(), grid.axes[1].len(), hx))
}

/// Apply the (unsymmetrised) ghost-node Neumann operator
/// `sigma * (4u - sum of neighbours) / h^2 + c u`.
fn helmholtz_operator(nx: usize, ny: usize, h: f64, sigma: f64, c: f64, u: &[f64], out: &mut [f64]) {
    let ih2 = sigma / (h * h);
    for j in 0..ny {
        for i in 0..nx {
            let at = |ii: usize, jj: usize| u[jj * nx + ii];
            let left = if i == 0 { at(1, j) } else { at(i - 1, j) };
            let right = if i == nx - 1 { at(nx - 2, j) } else { at(i + 1, j) };
            let down = if j == 0 { at(i, 1) } else { at(i, j - 1) };
            let up = if j == ny - 1 { at(i, ny - 2) } else { at(i, j + 1) };
            out[j * nx + i] = ih2 * (4.0 * at(i, j) - left - right - down - up) + c * at(i, j);
        }
    }
}

/// Solve `-sigma Lap u + c u = f` on a uniform rectangle with
/// `sigma du/dnu = flux` on every face (ghost-node closure, second order).
pub fn solve_helmholtz_with(grid: &Grid, f: &[f64], sigma: f64, c: f64, flux: f64) -> Result<Vec<f64>> {
    let (nx, ny, h) = check_unit_rect(grid)?;
    if f.len() != nx * ny {
        return Err(Error::Dimension(format!("source has {} values, grid {}", f.len(), nx * ny)));
    }
    if !(sigma > 0.0) || !(c > 0.0) {
        return Err(Error::Domain("Helmholtz solver needs sigma > 0 and c > 0".into()));
    }
    let n = nx * ny;
    let weight = |k: usize| neumann_weight(k % nx, nx) * neumann_weight(k / nx, ny);
    let mut b = vec![0.0; n];
    for j in 0..ny {
        for i in 0..nx {
            let faces = [i == 0, i == nx - 1, j == 0, j == ny - 1].iter().filter(|&&x| x).count();
            let k = j * nx + i;
            b[k] = weight(k) * (f[k] + faces as f64 * 2.0 * flux / h);
        }
    }
    let diag: Vec<f64> = (0..n).map(|k| weight(k) * (4.0 * sigma / (h * h) + c)).collect();
    let apply = |x: &[f64], y: &mut [f64]| {
        helmholtz_operator(nx, ny, h, sigma, c, x, y);
        for (k, v) in y.iter_mut().enumerate() {
            *v *= weight(k);
        }
    };
    let (u, _) = conjugate_gradient(apply, &diag, &b, CG_TOL, 10 * n)?;
    Ok(u)
}

/// Default Helmholtz benchmark: `sigma = c = 1`, zero flux.
pub fn solve_helmholtz(grid: &Grid, f: &[f64]) -> Result<Vec<f64>> {
    solve_helmholtz_with(grid, f, 1.0, 1.0, 0.0)
}

/// Relative residual `|A u - f| / |f|` of the Helmholtz system before
/// symmetrisation (zero flux).
pub fn helmholtz_residual(grid: &Grid, u: &[f64], f: &[f64], sigma: f64, c: f64) -> Result<f64> {
    helmholtz_residual_with(grid, u, f, sigma, c, 0.0)
}

/// As [`helmholtz_residual`], with the boundary flux folded into the right-hand side.
pub fn helmholtz_residual_with(grid: &Grid, u: &[f64], f: &[f64], sigma: f64, c: f64, flux: f64) -> Result<f64> {
    let (nx, ny, h) = check_unit_rect(grid)?;
    if u.len() != nx * ny || f.len() != nx * ny {
        return Err(Error::Dimension("field does not match the grid".into()));
    }
    let mut au = vec![0.0; nx * ny];
    helmholtz_operator(nx, ny, h, sigma, c, u, &mut au);
    let b: Vec<f64> = (0..nx * ny)
        .map(|k| {
            let (i, j) = (k % nx, k / nx);
            let faces = [i == 0, i == nx - 1, j == 0, j == ny - 1].iter().filter(|&&x| x).count();
            f[k] + faces as f64 * 2.0 * flux / h
        })
        .collect();
    Ok(relative_residual(&au, &b))
}

fn relative_residual(au: &[f64], b: &[f64]) -> f64 {
    let num: f64 = au.iter().zip(b).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

#[inline]
fn harmonic(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

/// Apply `-div(sigma grad u)` on interior unknowns with zero Dirichlet data.
/// `u` and `out` are full-grid vectors; boundary entries of `out` are set to zero.
fn darcy_operator(nx: usize, ny: usize, h: f64, sigma: &[f64], u: &[f64], out: &mut [f64]) {
    let ih2 = 1.0 / (h * h);
    out.iter_mut().for_each(|v| *v = 0.0);
    for j in 1..ny - 1 {
        for i in 1..nx - 1 {
            let k = j * nx + i;
            let mut acc = 0.0;
            for nb in [k - 1, k + 1, k - nx, k + nx] {
                acc += harmonic(sigma[k], sigma[nb]) * (u[k] - u[nb]);
            }
            out[k] = acc * ih2;
        }
    }
}

/// Solve `-div(sigma grad u) = f` with `u = 0` on the boundary using
/// harmonic-mean face coefficients. Returns the full-grid field.
pub fn solve_darcy(grid: &Grid, sigma: &[f64], f: &[f64]) -> Result<Vec<f64>> {
    let (nx, ny, h) = check_unit_rect(grid)?;
    let n = nx * ny;
    if sigma.len() != n || f.len() != n {
        return Err(Error::Dimension("sigma and f must match the grid".into()));
    }
    if let Some(bad) = sigma.iter().find(|&&s| !(s > 0.0)) {
        return Err(Error::Domain(format!("permeability must be positive, found {bad}")));
    }
    let interior = |k: usize| {
        let (i, j) = (k % nx, k / nx);
        i > 0 && j > 0 && i < nx - 1 && j < ny - 1
    };
    let b: Vec<f64> = (0..n).map(|k| if interior(k) { f[k] } else { 0.0 }).collect();
    let diag: Vec<f64> = (0..n)
        .map(|k| {
            if interior(k) {
                [k - 1, k + 1, k - nx, k + nx].iter().map(|&nb| harmonic(sigma[k], sigma[nb])).sum::<f64>() / (h * h)
            } else {
                1.0
            }
        })
        .collect();
    let apply = |x: &[f64], y: &mut [f64]| {
        // Boundary unknowns are pinned to zero: identity rows, no coupling.
        let mut masked = x.to_vec();
        for (k, v) in masked.iter_mut().enumerate() {
            if !interior(k) {
                *v = 0.0;
            }
        }
        darcy_operator(nx, ny, h, sigma, &masked, y);
        for k in 0..n {
            if !interior(k) {
                y[k] = x[k];
            }
        }
    };
    let (u, _) = conjugate_gradient(apply, &diag, &b, CG_TOL, 10 * n)?;
    Ok(u)
}

pub fn darcy_residual(grid: &Grid, sigma: &[f64], u: &[f64], f: &[f64]) -> Result<f64> {
    let (nx, ny, h) = check_unit_rect(grid)?;
    let mut au = vec![0.0; nx * ny];
    darcy_operator(nx, ny, h, sigma, u, &mut au);
    let b: Vec<f64> = (0..nx * ny)
        .map(|k| {
            let (i, j) = (k % nx, k / nx);
            if i > 0 && j > 0 && i < nx - 1 && j < ny - 1 {
                f[k]
            } else {
                0.0
            }
        })
        .collect();
    Ok(relative_residual(&au, &b))
}

/// Indices `round(i (n_fine - 1) / (n_coarse - 1))`, which always include both ends.
pub fn stride_indices(n_fine: usize, n_coarse: usize) -> Vec<usize> {
    (0..n_coarse)
        .map(|i| ((i * (n_fine - 1)) as f64 / (n_coarse - 1) as f64).round() as usize)
        .collect()
}

/// Restrict a 2-D field to the sub-grid selected by `ix` x `iy`.
pub fn downsample(field: &[f64], nx: usize, ix: &[usize], iy: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(ix.len() * iy.len());
    for &j in iy {
        for &i in ix {
            out.push(field[j * nx + i]);
        }
    }
    out
}

/// Reaction-diffusion audit: each stored time row re-integrated from the
/// previous one, max-abs deviation relative to the largest stored value.
pub fn rd_step_residual(grid: &Grid, u: &[f64], f: &[f64], g: TimeProfile, sign: RdSign) -> Result<f64> {
    let (nx, ts) = (grid.axes[0].len(), &grid.axes[1]);
    if u.len() != nx * ts.len() || f.len() != nx {
        return Err(Error::Dimension("field does not match the space-time grid".into()));
    }
    let h = grid.spacing(0);
    let k = if sign == RdSign::Forward { 1.0 } else { -1.0 };
    let scale = u.iter().fold(1e-300_f64, |a, v| a.max(v.abs()));
    let mut worst: f64 = 0.0;
    for n in 1..ts.len() {
        let mut row = u[(n - 1) * nx..n * nx].to_vec();
        rd_advance(&mut row, f, g, k, h, ts[n - 1], ts[n])?;
        for (a, b) in row.iter().zip(&u[n * nx..(n + 1) * nx]) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst / scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn rd_manufactured_error(n: usize) -> f64 {
        let grid = Grid::space_time(n, n, 1.0, 1.0).unwrap();
        let xs = &grid.axes[0];
        let u0: Vec<f64> = xs.iter().map(|&x| (PI * x).sin()).collect();
        let f: Vec<f64> = xs.iter().map(|&x| (PI * PI - 1.0) * (PI * x).sin()).collect();
        let u = solve_reaction_diffusion(&grid, &u0, &f, TimeProfile::ExpDecay, RdSign::Forward).unwrap();
        let pts = grid.points();
        pts.iter()
            .zip(&u)
            .map(|(p, v)| (v - (-p[1]).exp() * (PI * p[0]).sin()).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn rd_zero_forcing_stays_zero() {
        let grid = Grid::space_time(30, 30, 1.0, 1.0).unwrap();
        let u = solve_reaction_diffusion(&grid, &[0.0; 30], &[0.0; 30], TimeProfile::Constant, RdSign::Forward).unwrap();
        assert!(u.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rd_manufactured_second_order() {
        let e30 = rd_manufactured_error(30);
        let e60 = rd_manufactured_error(60);
        assert!(e30 < 5e-3, "error {e30}");
        let ratio = e30 / e60;
        assert!((3.0..=5.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn rd_steady_state_preserved() {
        let grid = Grid::space_time(30, 30, 1.0, 1.0).unwrap();
        let xs = &grid.axes[0];
        let f: Vec<f64> = xs.iter().map(|&x| (PI * x).sin()).collect();
        // discrete equilibrium of the 3-point Laplacian
        let h = grid.spacing(0);
        let lam = 4.0 / (h * h) * (PI * h / 2.0).sin().powi(2);
        let u0: Vec<f64> = f.iter().map(|v| v / lam).collect();
        let u = solve_reaction_diffusion(&grid, &u0, &f, TimeProfile::Constant, RdSign::Forward).unwrap();
        for t in 0..30 {
            for i in 0..30 {
                assert!((u[t * 30 + i] - u0[i]).abs() < 1e-12);
            }
        }
        // and the continuous equilibrium sin(pi x)/pi^2 is within discretisation error
        for i in 0..30 {
            assert!((u[29 * 30 + i] - f[i] / (PI * PI)).abs() < 1e-3);
        }
    }

    #[test]
    fn rd_wrong_grid_kind() {
        let g = Grid::unit_square(5).unwrap();
        assert!(solve_reaction_diffusion(&g, &[0.0; 5], &[0.0; 5], TimeProfile::Constant, RdSign::Forward).is_err());
    }

    fn helmholtz_error(n: usize) -> f64 {
        let grid = Grid::unit_square(n).unwrap();
        let pts = grid.points();
        let exact: Vec<f64> = pts.iter().map(|p| (PI * p[0]).cos() * (PI * p[1]).cos()).collect();
        let f: Vec<f64> = exact.iter().map(|v| (2.0 * PI * PI + 1.0) * v).collect();
        let u = solve_helmholtz(&grid, &f).unwrap();
        assert!(helmholtz_residual(&grid, &u, &f, 1.0, 1.0).unwrap() < 1e-9);
        u.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn helmholtz_constant_solution() {
        let grid = Grid::unit_square(20).unwrap();
        let u = solve_helmholtz(&grid, &vec![1.0; 400]).unwrap();
        assert!(u.iter().all(|v| (v - 1.0).abs() < 1e-9));
    }

    #[test]
    fn helmholtz_manufactured_second_order() {
        let e50 = helmholtz_error(50);
        let e99 = helmholtz_error(99);
        assert!(e50 < 2e-3, "error {e50}");
        let ratio = e50 / e99;
        assert!((3.0..=5.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn helmholtz_is_linear() {
        let grid = Grid::unit_square(25).unwrap();
        let pts = grid.points();
        let f1: Vec<f64> = pts.iter().map(|p| p[0] * p[1]).collect();
        let f2: Vec<f64> = pts.iter().map(|p| (3.0 * p[0]).sin() - p[1]).collect();
        let sum: Vec<f64> = f1.iter().zip(&f2).map(|(a, b)| a + b).collect();
        let (u1, u2, u12) = (
            solve_helmholtz(&grid, &f1).unwrap(),
            solve_helmholtz(&grid, &f2).unwrap(),
            solve_helmholtz(&grid, &sum).unwrap(),
        );
        for k in 0..u1.len() {
            assert!((u12[k] - u1[k] - u2[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn helmholtz_uniform_flux_matches_cosh_profile() {
        // -Lap u + u = 0, du/dnu = g on every face: u = g (cosh(x-1/2) + cosh(y-1/2)) / sinh(1/2)
        let (n, flux) = (41, 0.5);
        let grid = Grid::unit_square(n).unwrap();
        let u = solve_helmholtz_with(&grid, &vec![0.0; n * n], 1.0, 1.0, flux).unwrap();
        let a = flux / 0.5f64.sinh();
        let err = grid
            .points()
            .iter()
            .zip(&u)
            .map(|(p, v)| (v - a * ((p[0] - 0.5).cosh() + (p[1] - 0.5).cosh())).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-3, "error {err}");
    }

    fn darcy_error(n: usize) -> f64 {
        let grid = Grid::unit_square(n).unwrap();
        let pts = grid.points();
        let exact: Vec<f64> = pts.iter().map(|p| (PI * p[0]).sin() * (PI * p[1]).sin()).collect();
        let f: Vec<f64> = exact.iter().map(|v| 2.0 * PI * PI * v).collect();
        let sigma = vec![1.0; n * n];
        let u = solve_darcy(&grid, &sigma, &f).unwrap();
        assert!(darcy_residual(&grid, &sigma, &u, &f).unwrap() < 1e-9);
        u.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn darcy_manufactured_second_order() {
        let e100 = darcy_error(100);
        assert!(e100 < 1e-3, "error {e100}");
        let ratio = darcy_error(50) / e100;
        // h ratio 99/49
        let expected = (99.0f64 / 49.0).powi(2);
        assert!((ratio / expected - 1.0).abs() < 0.25, "ratio {ratio}");
    }

    #[test]
    fn darcy_scaling_and_positivity() {
        let grid = Grid::unit_square(30).unwrap();
        let pts = grid.points();
        let f: Vec<f64> = pts.iter().map(|p| 100.0 * p[0] * (1.0 - p[0]) * p[1] * (1.0 - p[1])).collect();
        let sigma: Vec<f64> = pts.iter().map(|p| 0.3 + p[0] * p[1]).collect();
        let u1 = solve_darcy(&grid, &sigma, &f).unwrap();
        let s3: Vec<f64> = sigma.iter().map(|s| 3.0 * s).collect();
        let u3 = solve_darcy(&grid, &s3, &f).unwrap();
        for k in 0..u1.len() {
            assert!((u3[k] - u1[k] / 3.0).abs() < 1e-9);
        }
        let mut bad = sigma.clone();
        bad[40] = 0.0;
        assert!(matches!(solve_darcy(&grid, &bad, &f), Err(Error::Domain(_))));
    }

    #[test]
    fn darcy_matches_dense_lu() {
        use nalgebra::{DMatrix, DVector};
        let n = 30;
        let grid = Grid::unit_square(n).unwrap();
        let pts = grid.points();
        let f: Vec<f64> = pts.iter().map(|p| 100.0 * p[0] * (1.0 - p[0]) * p[1] * (1.0 - p[1])).collect();
        let u = solve_darcy(&grid, &vec![1.0; n * n], &f).unwrap();
        // assemble the 5-point Dirichlet Laplacian on interior unknowns
        let m = n - 2;
        let h = grid.spacing(0);
        let mut a = DMatrix::zeros(m * m, m * m);
        let mut b = DVector::zeros(m * m);
        for j in 0..m {
            for i in 0..m {
                let r = j * m + i;
                a[(r, r)] = 4.0 / (h * h);
                if i > 0 {
                    a[(r, r - 1)] = -1.0 / (h * h);
                }
                if i + 1 < m {
                    a[(r, r + 1)] = -1.0 / (h * h);
                }
                if j > 0 {
                    a[(r, r - m)] = -1.0 / (h * h);
                }
                if j + 1 < m {
                    a[(r, r + m)] = -1.0 / (h * h);
                }
                b[r] = f[(j + 1) * n + i + 1];
            }
        }
        let x = a.lu().solve(&b).unwrap();
        for j in 0..m {
            for i in 0..m {
                assert!((x[j * m + i] - u[(j + 1) * n + i + 1]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn stride_indices_cover_both_ends() {
        let idx = stride_indices(100, 30);
        assert_eq!(idx.len(), 30);
        assert_eq!(idx[0], 0);
        assert_eq!(idx[29], 99);
        assert!(idx.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn rd_audit_accepts_solver_output_and_flags_edits() {
        let grid = Grid::space_time(30, 30, 1.0, 1.0).unwrap();
        let xs = &grid.axes[0];
        let u0: Vec<f64> = xs.iter().map(|&x| (3.0 * x).sin()).collect();
        let f: Vec<f64> = xs.iter().map(|&x| x * x - 0.3).collect();
        let mut u = solve_reaction_diffusion(&grid, &u0, &f, TimeProfile::Constant, RdSign::Forward).unwrap();
        assert!(rd_step_residual(&grid, &u, &f, TimeProfile::Constant, RdSign::Forward).unwrap() < 1e-12);
        u[5 * 30 + 7] += 1e-3;
        assert!(rd_step_residual(&grid, &u, &f, TimeProfile::Constant, RdSign::Forward).unwrap() > 1e-4);
    }
}
