use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Flat list of points of a common dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSet {
    pub dim: usize,
    pub coords: Vec<f64>,
}

impl PointSet {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 || !coords.len().is_multiple_of(dim) {
            return Err(Error::Dimension(format!("{} coordinates do not form {dim}-d points", coords.len())));
        }
        Ok(PointSet { dim, coords })
    }

    pub fn from_points(dim: usize, points: impl IntoIterator<Item = Vec<f64>>) -> Result<Self> {
        let mut coords = Vec::new();
        for p in points {
            if p.len() != dim {
                return Err(Error::Dimension(format!("point {p:?} is not {dim}-dimensional")));
            }
            coords.extend(p);
        }
        Ok(PointSet { dim, coords })
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn subset(&self, indices: &[usize]) -> PointSet {
        let mut coords = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            coords.extend_from_slice(self.point(i));
        }
        PointSet { dim: self.dim, coords }
    }

    /// Keep only coordinate `axis` of every point.
    pub fn project(&self, axis: usize) -> PointSet {
        PointSet { dim: 1, coords: self.iter().map(|p| p[axis]).collect() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    Line,
    Rectangle,
    /// Axis 0 is space, axis 1 is time.
    SpaceTime,
}

/// Tensor-product grid. Axis 0 varies fastest in flattened storage, so 2-D
/// fields are y-major and space-time fields are time-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub kind: GridKind,
    pub axes: Vec<Vec<f64>>,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let h = (hi - lo) / (n - 1) as f64;
    (0..n).map(|i| if i == n - 1 { hi } else { lo + i as f64 * h }).collect()
}

impl Grid {
    pub fn line(n: usize, lo: f64, hi: f64) -> Result<Self> {
        check_nodes(n)?;
        Ok(Grid { kind: GridKind::Line, axes: vec![linspace(lo, hi, n)] })
    }

    pub fn unit_square(n: usize) -> Result<Self> {
        Self::rectangle(n, n, [0.0, 1.0], [0.0, 1.0])
    }

    pub fn rectangle(nx: usize, ny: usize, xr: [f64; 2], yr: [f64; 2]) -> Result<Self> {
        check_nodes(nx)?;
        check_nodes(ny)?;
        Ok(Grid { kind: GridKind::Rectangle, axes: vec![linspace(xr[0], xr[1], nx), linspace(yr[0], yr[1], ny)] })
    }

    pub fn space_time(nx: usize, nt: usize, length: f64, horizon: f64) -> Result<Self> {
        check_nodes(nx)?;
        check_nodes(nt)?;
        Ok(Grid { kind: GridKind::SpaceTime, axes: vec![linspace(0.0, length, nx), linspace(0.0, horizon, nt)] })
    }

    /// Sub-grid keeping the given node indices on every axis.
    pub fn select(&self, indices: &[Vec<usize>]) -> Grid {
        Grid {
            kind: self.kind,
            axes: self.axes.iter().zip(indices).map(|(a, idx)| idx.iter().map(|&i| a[i]).collect()).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(Vec::len).collect()
    }

    pub fn n_points(&self) -> usize {
        self.axes.iter().map(Vec::len).product()
    }

    /// Uniform spacing along `axis` (`extent / (n - 1)`).
    pub fn spacing(&self, axis: usize) -> f64 {
        let a = &self.axes[axis];
        (a[a.len() - 1] - a[0]) / (a.len() - 1) as f64
    }

    pub fn is_uniform(&self) -> bool {
        self.axes.iter().all(|a| {
            let h = (a[a.len() - 1] - a[0]) / (a.len() - 1) as f64;
            a.windows(2).all(|w| ((w[1] - w[0]) - h).abs() <= 1e-12 * h.abs().max(1.0))
        })
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        let mut stride = 1;
        let mut flat = 0;
        for (a, &i) in self.axes.iter().zip(idx) {
            flat += i * stride;
            stride *= a.len();
        }
        flat
    }

    pub fn points(&self) -> PointSet {
        let mut coords = Vec::with_capacity(self.n_points() * self.dim());
        match self.axes.as_slice() {
            [x] => coords.extend_from_slice(x),
            [x, y] => {
                for &yv in y {
                    for &xv in x {
                        coords.push(xv);
                        coords.push(yv);
                    }
                }
            }
            _ => unreachable!("grids are 1-d or 2-d"),
        }
        PointSet { dim: self.dim(), coords }
    }
}

fn check_nodes(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::Validation(format!("a grid axis needs at least 2 nodes, got {n}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_spacing() {
        let g = Grid::space_time(30, 30, 1.0, 1.0).unwrap();
        assert_eq!(g.axes[0][0], 0.0);
        assert_eq!(g.axes[0][29], 1.0);
        assert!((g.spacing(0) - 1.0 / 29.0).abs() < 1e-16);
        assert!(g.is_uniform());
        assert_eq!(g.n_points(), 900);
    }

    #[test]
    fn storage_is_axis0_fastest() {
        let g = Grid::rectangle(3, 2, [0.0, 1.0], [0.0, 2.0]).unwrap();
        let p = g.points();
        assert_eq!(p.point(1), &[0.5, 0.0]);
        assert_eq!(p.point(3), &[0.0, 2.0]);
        assert_eq!(g.flat_index(&[1, 1]), 4);
    }

    #[test]
    fn too_few_nodes() {
        assert!(Grid::line(1, 0.0, 1.0).is_err());
    }
}
