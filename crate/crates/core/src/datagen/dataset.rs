use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::grf::{GrfConfig, GrfSampler};
use super::grid::Grid;
use super::solvers::{
    darcy_residual, downsample, helmholtz_residual_with, rd_step_residual, solve_darcy, solve_helmholtz_with,
    solve_reaction_diffusion, stride_indices,
};
use super::store::{fingerprint, read_f64, read_json, write_dir_atomic, write_f64, write_json, MANIFEST};
use crate::error::{Error, Result};
use crate::physics::{PdeProblem, ProblemKind};

const FORMAT: &str = "invop-dataset";
const FORMAT_VERSION: u32 = 1;
const MAX_REJECTIONS: u64 = 16;

/// Recipe for a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub problem: PdeProblem,
    pub n_samples: usize,
    pub seed: u64,
    /// Nodes per axis of the stored grid (space and time for reaction-diffusion).
    pub grid: usize,
    /// Nodes per axis of the Darcy solve before downsampling.
    pub fine_grid: usize,
    /// Side of the centred Helmholtz measurement block.
    pub measure_block: usize,
    pub length_scale: f64,
    /// Darcy permeability range after min-max scaling.
    pub sigma_range: [f64; 2],
}

impl DataConfig {
    pub fn default_for(kind: ProblemKind) -> Self {
        let problem = PdeProblem::default_for(kind);
        let (grid, length_scale) = match kind {
            ProblemKind::ReactionDiffusion => (30, 0.15),
            ProblemKind::Helmholtz => (50, 0.2),
            ProblemKind::Darcy => (30, 0.2),
        };
        DataConfig {
            problem,
            n_samples: 100,
            seed: 0,
            grid,
            fine_grid: 100,
            measure_block: 40,
            length_scale,
            sigma_range: [0.05, 1.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.problem.validate()?;
        if self.n_samples == 0 {
            return Err(Error::Validation("number of samples must be positive".into()));
        }
        if self.grid < 3 {
            return Err(Error::Validation(format!("grid needs at least 3 nodes per axis, got {}", self.grid)));
        }
        match self.problem.kind() {
            ProblemKind::Helmholtz => {
                if self.measure_block == 0 || self.measure_block > self.grid || !(self.grid - self.measure_block).is_multiple_of(2) {
                    return Err(Error::Validation(format!(
                        "measurement block {} must fit centred in a {} grid",
                        self.measure_block, self.grid
                    )));
                }
            }
            ProblemKind::Darcy => {
                if self.fine_grid < self.grid {
                    return Err(Error::Validation("fine grid must not be coarser than the stored grid".into()));
                }
                let [lo, hi] = self.sigma_range;
                if !(lo > 0.0 && hi > lo) {
                    return Err(Error::Validation(format!("permeability range [{lo}, {hi}] must satisfy 0 < lo < hi")));
                }
            }
            ProblemKind::ReactionDiffusion => {}
        }
        GrfConfig::new(self.length_scale).validate()
    }

    pub fn grf(&self) -> GrfConfig {
        GrfConfig::new(self.length_scale)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub seed: u64,
    /// Ground-truth target on the s grid.
    pub s: Vec<f64>,
    /// Solution on the u grid.
    pub u: Vec<f64>,
    pub measurement: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: DataConfig,
    pub u_grid: Grid,
    pub s_grid: Grid,
    /// Positions of the measured values inside the u field.
    pub measurement_index: Vec<usize>,
    pub samples: Vec<Sample>,
}

/// SplitMix64 finaliser, used to derive independent per-sample seeds.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Affine map of `[min, max]` onto `[lo, hi]`; endpoints land exactly.
pub fn min_max_scale(field: &[f64], lo: f64, hi: f64) -> Result<Vec<f64>> {
    let min = field.iter().copied().fold(f64::INFINITY, f64::min);
    let max = field.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max - min >= 1e-12) {
        return Err(Error::Domain(format!("field is constant (range {:e}); resample", max - min)));
    }
    Ok(field
        .iter()
        .map(|&v| {
            let t = (v - min) / (max - min);
            lo * (1.0 - t) + hi * t
        })
        .collect())
}

/// Storage grids for a problem: `(u grid, s grid)`.
pub fn problem_grids(config: &DataConfig) -> Result<(Grid, Grid)> {
    let n = config.grid;
    match config.problem {
        PdeProblem::ReactionDiffusion { horizon, .. } => Ok((Grid::space_time(n, n, 1.0, horizon)?, Grid::line(n, 0.0, 1.0)?)),
        PdeProblem::Helmholtz { .. } => {
            let g = Grid::unit_square(n)?;
            Ok((g.clone(), g))
        }
        PdeProblem::Darcy => {
            let fine = Grid::unit_square(config.fine_grid)?;
            let idx = stride_indices(config.fine_grid, n);
            let coarse = fine.select(&[idx.clone(), idx]);
            Ok((coarse.clone(), coarse))
        }
    }
}

/// Indices into the u field that make up the measurement vector:
/// the `t = 0` row followed by the `t = T` row (reaction-diffusion), the
/// centred `block x block` square in y-major order (Helmholtz), or every
/// node (Darcy).
pub fn measurement_indices(kind: ProblemKind, u_grid: &Grid, block: usize) -> Result<Vec<usize>> {
    let shape = u_grid.shape();
    match kind {
        ProblemKind::ReactionDiffusion => {
            let (nx, nt) = (shape[0], shape[1]);
            Ok((0..nx).chain((nt - 1) * nx..nt * nx).collect())
        }
        ProblemKind::Helmholtz => {
            let (nx, ny) = (shape[0], shape[1]);
            if block > nx.min(ny) || !(nx - block).is_multiple_of(2) || !(ny - block).is_multiple_of(2) {
                return Err(Error::Validation(format!("cannot centre a {block}x{block} block in {nx}x{ny}")));
            }
            let (mx, my) = ((nx - block) / 2, (ny - block) / 2);
            Ok((my..my + block).flat_map(|j| (mx..mx + block).map(move |i| j * nx + i)).collect())
        }
        ProblemKind::Darcy => Ok((0..u_grid.n_points()).collect()),
    }
}

pub fn extract_measurement(indices: &[usize], u: &[f64]) -> Vec<f64> {
    indices.iter().map(|&i| u[i]).collect()
}

struct Generator {
    config: DataConfig,
    u_grid: Grid,
    index: Vec<usize>,
    sampler: GrfSampler,
    fine: Option<Grid>,
}

impl Generator {
    fn new(config: &DataConfig) -> Result<Self> {
        config.validate()?;
        let (u_grid, s_grid) = problem_grids(config)?;
        let index = measurement_indices(config.problem.kind(), &u_grid, config.measure_block)?;
        let (sampler, fine) = match config.problem {
            PdeProblem::Darcy => {
                let fine = Grid::unit_square(config.fine_grid)?;
                (GrfSampler::for_grid(config.grf(), &fine)?, Some(fine))
            }
            _ => (GrfSampler::for_grid(config.grf(), &s_grid)?, None),
        };
        Ok(Generator { config: config.clone(), u_grid, index, sampler, fine })
    }

    fn sample(&self, i: usize) -> Result<Sample> {
        self.sample_from(derive_seed(self.config.seed, i as u64))
            .map_err(|e| match e {
                Error::Solver(d) => Error::Solver(format!("sample {i}: {d}")),
                e => e,
            })
    }

    /// The fine-grid Darcy fields `(sigma, u, f)` drawn from `seed`.
    fn darcy_fine(&self, seed: u64) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let fine = self.fine.as_ref().expect("fine grid");
        let [lo, hi] = self.config.sigma_range;
        let mut sigma = None;
        for attempt in 0..MAX_REJECTIONS {
            let raw = self.sampler.sample(derive_seed(seed, 16 + attempt));
            if let Ok(scaled) = min_max_scale(&raw, lo, hi) {
                sigma = Some(scaled);
                break;
            }
        }
        let sigma = sigma.ok_or_else(|| Error::Solver("every permeability draw was constant".into()))?;
        let f: Vec<f64> = fine.points().iter().map(PdeProblem::darcy_source).collect();
        let u = solve_darcy(fine, &sigma, &f)?;
        Ok((sigma, u, f))
    }

    fn sample_from(&self, seed: u64) -> Result<Sample> {
        let (s, u) = match self.config.problem {
            PdeProblem::ReactionDiffusion { g, sign, .. } => {
                let u0 = self.sampler.sample(derive_seed(seed, 0));
                let f = self.sampler.sample(derive_seed(seed, 1));
                let u = solve_reaction_diffusion(&self.u_grid, &u0, &f, g, sign)?;
                (f, u)
            }
            PdeProblem::Helmholtz { sigma, c, flux } => {
                let f = self.sampler.sample(derive_seed(seed, 1));
                let u = solve_helmholtz_with(&self.u_grid, &f, sigma, c, flux)?;
                (f, u)
            }
            PdeProblem::Darcy => {
                let (sigma, u, _) = self.darcy_fine(seed)?;
                let idx = stride_indices(self.config.fine_grid, self.config.grid);
                let nf = self.config.fine_grid;
                (downsample(&sigma, nf, &idx, &idx), downsample(&u, nf, &idx, &idx))
            }
        };
        if let Some(bad) = s.iter().chain(&u).find(|v| !v.is_finite()) {
            return Err(Error::Solver(format!("non-finite value {bad}")));
        }
        let measurement = extract_measurement(&self.index, &u);
        Ok(Sample { seed, s, u, measurement })
    }
}

/// Generate `config.n_samples` samples in parallel. Each sample draws from its
/// own derived seed, so the result does not depend on the thread count.
pub fn generate(config: &DataConfig) -> Result<Dataset> {
    let gen = Generator::new(config)?;
    let samples = (0..config.n_samples).into_par_iter().map(|i| gen.sample(i)).collect::<Result<Vec<_>>>()?;
    let (u_grid, s_grid) = problem_grids(config)?;
    Ok(Dataset { config: config.clone(), u_grid, s_grid, measurement_index: gen.index, samples })
}

/// Relative solver residual of every sample, recomputed from the stored
/// fields. Stored Darcy fields are restrictions of a fine solve, so those
/// samples are re-solved from their seed: the figure is the larger of the
/// fine-grid residual and the relative gap to the stored values.
pub fn solver_residuals(data: &Dataset) -> Result<Vec<f64>> {
    let check = |s: &Sample| -> Result<f64> {
        match data.config.problem {
            PdeProblem::ReactionDiffusion { g, sign, .. } => rd_step_residual(&data.u_grid, &s.u, &s.s, g, sign),
            PdeProblem::Helmholtz { sigma, c, flux } => helmholtz_residual_with(&data.u_grid, &s.u, &s.s, sigma, c, flux),
            PdeProblem::Darcy => unreachable!("handled below"),
        }
    };
    if data.config.problem != PdeProblem::Darcy {
        return data.samples.par_iter().map(check).collect();
    }
    let gen = Generator::new(&data.config)?;
    let fine = gen.fine.as_ref().expect("fine grid");
    let nf = data.config.fine_grid;
    let idx = stride_indices(nf, data.config.grid);
    data.samples
        .par_iter()
        .map(|s| {
            let (sigma, u, f) = gen.darcy_fine(s.seed)?;
            let res = darcy_residual(fine, &sigma, &u, &f)?;
            let scale = |v: &[f64]| v.iter().fold(1e-300_f64, |m, x| m.max(x.abs()));
            let gap = |a: &[f64], b: &[f64]| {
                if a.len() != b.len() {
                    return f64::INFINITY;
                }
                a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs())) / scale(b)
            };
            let du = gap(&downsample(&u, nf, &idx, &idx), &s.u);
            let ds = gap(&downsample(&sigma, nf, &idx, &idx), &s.s);
            Ok(res.max(du).max(ds))
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct ArrayEntry {
    role: String,
    file: String,
    values_per_sample: usize,
    sample_stride_bytes: usize,
    total_values: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    tool_version: String,
    dtype: String,
    layout: String,
    config: DataConfig,
    u_grid: Grid,
    s_grid: Grid,
    n_samples: usize,
    seeds: Vec<u64>,
    measurement_index: Vec<usize>,
    arrays: Vec<ArrayEntry>,
    fingerprint: String,
}

/// Per-role summary statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub rms: f64,
}

fn stats<'a>(values: impl Iterator<Item = &'a f64>) -> FieldStats {
    let (mut min, mut max, mut sum, mut sq, mut n) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0.0, 0usize);
    for &v in values {
        min = min.min(v);
        max = max.max(v);
        sum += v;
        sq += v * v;
        n += 1;
    }
    let n = n.max(1) as f64;
    FieldStats { min, max, mean: sum / n, rms: (sq / n).sqrt() }
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn problem(&self) -> &PdeProblem {
        &self.config.problem
    }

    pub fn measurement_len(&self) -> usize {
        self.measurement_index.len()
    }

    /// Copy of the dataset restricted to the given samples.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut d = Dataset { samples: Vec::with_capacity(indices.len()), ..self.clone_header() };
        d.samples.extend(indices.iter().map(|&i| self.samples[i].clone()));
        d
    }

    /// First `n_train` samples and the rest.
    pub fn split(&self, n_train: usize) -> Result<(Dataset, Dataset)> {
        if n_train > self.len() {
            return Err(Error::Validation(format!("cannot take {n_train} training samples from {}", self.len())));
        }
        let train: Vec<usize> = (0..n_train).collect();
        let test: Vec<usize> = (n_train..self.len()).collect();
        Ok((self.subset(&train), self.subset(&test)))
    }

    fn clone_header(&self) -> Dataset {
        Dataset {
            config: self.config.clone(),
            u_grid: self.u_grid.clone(),
            s_grid: self.s_grid.clone(),
            measurement_index: self.measurement_index.clone(),
            samples: Vec::new(),
        }
    }

    pub fn fingerprint(&self) -> String {
        let header = serde_json::to_string(&(&self.config, &self.u_grid, &self.s_grid, &self.measurement_index))
            .expect("dataset header serialises");
        fingerprint(&header, self.samples.iter().flat_map(|s| [&s.s[..], &s.u[..], &s.measurement[..]]))
    }

    pub fn stats(&self) -> [(&'static str, FieldStats); 3] {
        [
            ("s", stats(self.samples.iter().flat_map(|s| s.s.iter()))),
            ("u", stats(self.samples.iter().flat_map(|s| s.u.iter()))),
            ("measurement", stats(self.samples.iter().flat_map(|s| s.measurement.iter()))),
        ]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let roles: [(&str, usize, Box<dyn Fn(&Sample) -> &[f64]>); 3] = [
            ("s", self.s_grid.n_points(), Box::new(|s: &Sample| &s.s[..])),
            ("u", self.u_grid.n_points(), Box::new(|s: &Sample| &s.u[..])),
            ("measurement", self.measurement_len(), Box::new(|s: &Sample| &s.measurement[..])),
        ];
        let n = self.len();
        let arrays = roles
            .iter()
            .map(|(role, per, _)| ArrayEntry {
                role: role.to_string(),
                file: format!("{role}.f64"),
                values_per_sample: *per,
                sample_stride_bytes: per * 8,
                total_values: per * n,
            })
            .collect();
        let manifest = Manifest {
            format: FORMAT.into(),
            version: FORMAT_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            dtype: "f64-le".into(),
            layout: "per-sample records back to back; axis 0 fastest (space-time fields time-major, 2-d fields y-major)"
                .into(),
            config: self.config.clone(),
            u_grid: self.u_grid.clone(),
            s_grid: self.s_grid.clone(),
            n_samples: n,
            seeds: self.samples.iter().map(|s| s.seed).collect(),
            measurement_index: self.measurement_index.clone(),
            arrays,
            fingerprint: self.fingerprint(),
        };
        write_dir_atomic(path, |dir| {
            for (role, per, get) in &roles {
                let mut flat = Vec::with_capacity(per * n);
                for s in &self.samples {
                    let v = get(s);
                    if v.len() != *per {
                        return Err(Error::Dimension(format!("sample {role} has {} values, expected {per}", v.len())));
                    }
                    flat.extend_from_slice(v);
                }
                write_f64(&dir.join(format!("{role}.f64")), &flat)?;
            }
            write_json(&dir.join(MANIFEST), &manifest)
        })
    }

    pub fn load(path: &Path) -> Result<Dataset> {
        let manifest_path = path.join(MANIFEST);
        let m: Manifest = read_json(&manifest_path)?;
        let corrupt = |detail: String| Error::Corruption { path: manifest_path.clone(), detail };
        if m.format != FORMAT || m.version != FORMAT_VERSION {
            return Err(corrupt(format!("unsupported format {} v{}", m.format, m.version)));
        }
        if m.seeds.len() != m.n_samples {
            return Err(corrupt(format!("{} seeds for {} samples", m.seeds.len(), m.n_samples)));
        }
        let expected = [
            ("s", m.s_grid.n_points()),
            ("u", m.u_grid.n_points()),
            ("measurement", m.measurement_index.len()),
        ];
        let mut data = Vec::new();
        for (role, per) in expected {
            let entry = m
                .arrays
                .iter()
                .find(|a| a.role == role)
                .ok_or_else(|| corrupt(format!("missing array '{role}'")))?;
            if entry.values_per_sample != per || entry.total_values != per * m.n_samples {
                return Err(corrupt(format!("array '{role}' sizes disagree with the grids")));
            }
            data.push(read_f64(&path.join(&entry.file), per * m.n_samples)?);
        }
        let (sv, uv, mv) = (&data[0], &data[1], &data[2]);
        let (ps, pu, pm) = (m.s_grid.n_points(), m.u_grid.n_points(), m.measurement_index.len());
        let samples = (0..m.n_samples)
            .map(|i| Sample {
                seed: m.seeds[i],
                s: sv[i * ps..(i + 1) * ps].to_vec(),
                u: uv[i * pu..(i + 1) * pu].to_vec(),
                measurement: mv[i * pm..(i + 1) * pm].to_vec(),
            })
            .collect();
        let d = Dataset { config: m.config, u_grid: m.u_grid, s_grid: m.s_grid, measurement_index: m.measurement_index, samples };
        if d.fingerprint() != m.fingerprint {
            return Err(corrupt("content fingerprint does not match the manifest".into()));
        }
        Ok(d)
    }
}
