use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::error::Result;

/// How per-job gradient contributions are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MergeOrder {
    /// Summed in job order; results do not depend on the thread count.
    #[default]
    Ordered,
    /// Summed as workers finish; faster to drain, not reproducible bit-for-bit.
    Arrival,
}

/// Run `n_jobs` jobs over a pool of structurally identical graphs. Job `j`
/// runs on graph `j % graphs.len()`; results come back in job order.
pub fn run_jobs<T, F>(graphs: &mut [Graph], n_jobs: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&mut Graph, usize) -> Result<T> + Sync,
{
    let stride = graphs.len();
    let per: Vec<Vec<(usize, T)>> = graphs
        .par_iter_mut()
        .enumerate()
        .map(|(gi, g)| (gi..n_jobs).step_by(stride).map(|j| f(g, j).map(|t| (j, t))).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let mut out: Vec<Option<T>> = (0..n_jobs).map(|_| None).collect();
    for (j, t) in per.into_iter().flatten() {
        out[j] = Some(t);
    }
    Ok(out.into_iter().map(|t| t.expect("every job ran")).collect())
}

/// Run `n_jobs` gradient-producing jobs in parallel and merge them into one
/// vector of length `len`.
pub fn merge_grad_jobs<F>(n_jobs: usize, len: usize, merge: MergeOrder, f: F) -> Result<Vec<f64>>
where
    F: Fn(usize, &mut [f64]) -> Result<()> + Sync,
{
    match merge {
        MergeOrder::Ordered => {
            let parts: Vec<Vec<f64>> = (0..n_jobs)
                .into_par_iter()
                .map(|j| {
                    let mut buf = vec![0.0; len];
                    f(j, &mut buf)?;
                    Ok(buf)
                })
                .collect::<Result<_>>()?;
            let mut total = vec![0.0; len];
            for part in parts {
                for (t, v) in total.iter_mut().zip(part) {
                    *t += v;
                }
            }
            Ok(total)
        }
        MergeOrder::Arrival => {
            let total = Mutex::new(vec![0.0; len]);
            (0..n_jobs).into_par_iter().try_for_each(|j| {
                let mut buf = vec![0.0; len];
                f(j, &mut buf)?;
                let mut t = total.lock().expect("gradient lock");
                for (a, b) in t.iter_mut().zip(&buf) {
                    *a += b;
                }
                Ok::<(), crate::Error>(())
            })?;
            Ok(total.into_inner().expect("gradient lock"))
        }
    }
}
