use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::model::{ModelKind, PidionModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    U,
    S,
}

impl Target {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "u" => Ok(Target::U),
            "s" => Ok(Target::S),
            other => Err(Error::Validation(format!("unknown target '{other}' (u | s)"))),
        }
    }
}

/// Per-sample relative errors and their mean over the scored samples.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mean: f64,
    /// `None` where the true field has zero norm.
    pub per_sample: Vec<Option<f64>>,
    pub skipped: usize,
}

/// `||pred - truth|| / ||truth||`, or `None` when `truth` is zero.
pub fn relative_l2(pred: &[f64], truth: &[f64]) -> Option<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for (p, t) in pred.iter().zip(truth) {
        num += (p - t) * (p - t);
        den += t * t;
    }
    (den > 0.0).then(|| (num / den).sqrt())
}

fn report(preds: &[Vec<f64>], truths: &[&[f64]], label: &str) -> Result<EvalReport> {
    let per_sample: Vec<Option<f64>> = preds.iter().zip(truths).map(|(p, t)| relative_l2(p, t)).collect();
    let scored: Vec<f64> = per_sample.iter().flatten().copied().collect();
    let skipped = per_sample.len() - scored.len();
    if skipped > 0 {
        log::warn!("{skipped} sample(s) with a zero true {label} field were skipped");
    }
    if scored.is_empty() {
        return Err(Error::Domain(format!("every true {label} field has zero norm")));
    }
    // sort so the mean does not depend on sample order
    let mut sorted = scored;
    sorted.sort_by(f64::total_cmp);
    let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
    Ok(EvalReport { mean, per_sample, skipped })
}

/// Predicted `(u, s)` fields on the dataset grids for every sample.
pub fn predict_dataset(model: &PidionModel, data: &Dataset) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let meas: Vec<&[f64]> = data.samples.iter().map(|s| &s.measurement[..]).collect();
    let (u_pts, s_pts) = (data.u_grid.points(), data.s_grid.points());
    if model.kind() == ModelKind::V0 && model.branch_spec(crate::model::Branch::U).map(|(s, _)| s.input_len()) != Some(s_pts.len()) {
        return Err(Error::Incompatible("the forward branch does not match the dataset s grid".into()));
    }
    model.predict_batch(&meas, &u_pts, &s_pts)
}

/// Relative L2 errors of u and s over a dataset.
pub fn evaluate_both(model: &PidionModel, data: &Dataset) -> Result<(EvalReport, EvalReport)> {
    if data.is_empty() {
        return Err(Error::Contract("evaluation needs at least one sample".into()));
    }
    let (u, s) = predict_dataset(model, data)?;
    let tu: Vec<&[f64]> = data.samples.iter().map(|x| &x.u[..]).collect();
    let ts: Vec<&[f64]> = data.samples.iter().map(|x| &x.s[..]).collect();
    Ok((report(&u, &tu, "u")?, report(&s, &ts, "s")?))
}

pub fn evaluate_relative_l2(model: &PidionModel, data: &Dataset, target: Target) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::Contract("evaluation needs at least one sample".into()));
    }
    let (u, s) = predict_dataset(model, data)?;
    match target {
        Target::U => report(&u, &data.samples.iter().map(|x| &x.u[..]).collect::<Vec<_>>(), "u"),
        Target::S => report(&s, &data.samples.iter().map(|x| &x.s[..]).collect::<Vec<_>>(), "s"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_and_zero_predictions() {
        let t = [1.0, -2.0, 3.0];
        assert_eq!(relative_l2(&t, &t), Some(0.0));
        assert_eq!(relative_l2(&[0.0; 3], &t), Some(1.0));
        assert_eq!(relative_l2(&[1.0; 3], &[0.0; 3]), None);
    }

    #[test]
    fn zero_truth_is_skipped_and_counted() {
        let preds = vec![vec![1.0, 1.0], vec![0.0, 0.0]];
        let r = report(&preds, &[&[0.0, 0.0], &[1.0, 0.0]], "s").unwrap();
        assert_eq!(r.skipped, 1);
        assert_eq!(r.mean, 1.0);
        assert!(report(&preds[..1], &[&[0.0, 0.0]], "s").is_err());
    }

    proptest! {
        #[test]
        fn mean_is_order_invariant(
            rows in proptest::collection::vec((proptest::collection::vec(-2.0f64..2.0, 3), proptest::collection::vec(0.1f64..2.0, 3)), 1..8),
            rot in 0usize..8,
        ) {
            let preds: Vec<Vec<f64>> = rows.iter().map(|r| r.0.clone()).collect();
            let truths: Vec<&[f64]> = rows.iter().map(|r| &r.1[..]).collect();
            let a = report(&preds, &truths, "s").unwrap();
            let k = rot % rows.len();
            let mut p2 = preds.clone();
            let mut t2 = truths.clone();
            p2.rotate_left(k);
            t2.rotate_left(k);
            let b = report(&p2, &t2, "s").unwrap();
            prop_assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        }
    }
}
