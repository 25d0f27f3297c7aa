use std::io::Write;

use serde::{Deserialize, Serialize};

use super::RunError;

/// Per-step ratios use `max(reference, DENOMINATOR_EPS)` as the denominator.
pub const DENOMINATOR_EPS: f64 = 1e-6;

/// One row of `metrics.csv`, written at the end of every training episode.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    /// Environment steps taken so far, pre-training included.
    pub step: u64,
    pub episode: u64,
    pub phase: String,
    pub true_return: f64,
    pub learned_return: f64,
    pub eval_return: Option<f64>,
    /// Ground-truth reward of the last evaluation state, averaged over episodes.
    pub eval_terminal_reward: Option<f64>,
    pub critic_loss: Option<f64>,
    pub actor_loss: Option<f64>,
    pub alpha: f64,
    pub reward_loss: Option<f64>,
    pub reward_accuracy: Option<f64>,
    pub reed_loss: Option<f64>,
    pub reed_degenerate: u64,
    pub disagreement_mean: Option<f64>,
    pub embedding_variance: Option<f64>,
    pub labels: u64,
    pub queries: u64,
    pub spr_ops: u64,
}

/// One row of `labels_audit.csv` per query shown to a teacher.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub session: u64,
    pub step: u64,
    pub query: u64,
    pub first_episode: u64,
    pub first_start: u64,
    pub second_episode: u64,
    pub second_start: u64,
    pub score: Option<f64>,
    pub label: String,
    pub return_first: Option<f64>,
    pub return_second: Option<f64>,
    pub perturbed: bool,
}

/// A learning curve on a fixed step grid.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub steps: Vec<u64>,
    pub returns: Vec<f64>,
}

impl Curve {
    pub fn new(steps: Vec<u64>, returns: Vec<f64>) -> Self {
        assert_eq!(steps.len(), returns.len(), "one return per step");
        Self { steps, returns }
    }

    /// Evaluation points of a metrics table.
    pub fn from_records(records: &[MetricsRecord]) -> Self {
        let (steps, returns) = records.iter().filter_map(|r| r.eval_return.map(|v| (r.step, v))).unzip();
        Self { steps, returns }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Adds `offset` to every return.
    pub fn shifted(&self, offset: f64) -> Self {
        Self {
            steps: self.steps.clone(),
            returns: self.returns.iter().map(|r| r + offset).collect(),
        }
    }
}

fn ratios(learned: &Curve, reference: &Curve) -> Result<Vec<f64>, RunError> {
    if learned.steps != reference.steps {
        return Err(RunError::GridMismatch {
            learned: learned.len(),
            reference: reference.len(),
        });
    }
    if learned.is_empty() {
        return Err(RunError::GridMismatch {
            learned: 0,
            reference: 0,
        });
    }
    Ok(learned
        .returns
        .iter()
        .zip(&reference.returns)
        .map(|(l, r)| l / r.max(DENOMINATOR_EPS))
        .collect())
}

/// Mean over the grid of learned return / reference return.
pub fn normalized_return(learned: &Curve, reference: &Curve) -> Result<f64, RunError> {
    let r = ratios(learned, reference)?;
    Ok(r.iter().sum::<f64>() / r.len() as f64)
}

/// Number of trailing grid points in the final window: `⌈0.1·n⌉`.
pub fn final_window_len(n: usize) -> usize {
    n.div_ceil(10)
}

/// [`normalized_return`] restricted to the last 10% of the grid.
pub fn final_window_return(learned: &Curve, reference: &Curve) -> Result<f64, RunError> {
    let r = ratios(learned, reference)?;
    if r.len() < 10 {
        return Err(RunError::ShortRun(r.len()));
    }
    let w = final_window_len(r.len());
    Ok(r[r.len() - w..].iter().sum::<f64>() / w as f64)
}

/// Sample mean and standard deviation (`n − 1`; zero for a single value).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

/// `"0.74±0.18"`.
pub fn format_mean_sd(values: &[f64]) -> String {
    let (m, s) = mean_sd(values);
    format!("{m:.2}±{s:.2}")
}

pub fn write_csv<T: Serialize, W: Write>(rows: &[T], out: W) -> Result<(), RunError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics(path: &std::path::Path) -> Result<Vec<MetricsRecord>, RunError> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(RunError::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(returns: &[f64]) -> Curve {
        Curve::new((1..=returns.len() as u64).collect(), returns.to_vec())
    }

    #[test]
    fn identical_runs_normalize_to_one() {
        let c = curve(&[3.0, 5.0, 8.0, 2.0]);
        assert_eq!(normalized_return(&c, &c).unwrap(), 1.0);
    }

    #[test]
    fn half_returns_normalize_to_half() {
        let r = curve(&[2.0, 4.0, 6.0]);
        let l = curve(&[1.0, 2.0, 3.0]);
        assert_eq!(normalized_return(&l, &r).unwrap(), 0.5);
    }

    #[test]
    fn tiny_denominators_are_clipped() {
        let r = curve(&[0.0, -1.0]);
        let l = curve(&[1e-6, 0.0]);
        assert_eq!(normalized_return(&l, &r).unwrap(), 0.5);
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let a = curve(&[1.0, 2.0]);
        let b = Curve::new(vec![1, 3], vec![1.0, 2.0]);
        assert!(matches!(normalized_return(&a, &b), Err(RunError::GridMismatch { .. })));
    }

    #[test]
    fn final_window_matches_full_curve_on_constant_returns() {
        let r = curve(&[4.0; 23]);
        let l = curve(&[3.0; 23]);
        assert_eq!(final_window_return(&l, &r).unwrap(), normalized_return(&l, &r).unwrap());
    }

    #[test]
    fn final_window_size_is_ceiling_of_a_tenth() {
        assert_eq!(final_window_len(10), 1);
        assert_eq!(final_window_len(11), 2);
        assert_eq!(final_window_len(50), 5);
        assert_eq!(final_window_len(51), 6);
        let r = curve(&[1.0; 11]);
        let mut vals = vec![0.0; 9];
        vals.extend([0.5, 0.7]);
        assert!((final_window_return(&curve(&vals), &r).unwrap() - 0.6).abs() < 1e-15);
    }

    #[test]
    fn short_runs_have_no_final_window() {
        let c = curve(&[1.0; 9]);
        assert!(matches!(final_window_return(&c, &c), Err(RunError::ShortRun(9))));
    }

    #[test]
    fn table_format() {
        assert_eq!(format_mean_sd(&[0.56, 0.92]), "0.74±0.25");
        assert_eq!(format_mean_sd(&[0.5]), "0.50±0.00");
    }

    #[test]
    fn csv_leaves_missing_values_empty() {
        let rec = MetricsRecord {
            step: 100,
            phase: "explore".into(),
            ..Default::default()
        };
        let mut out = Vec::new();
        write_csv(std::slice::from_ref(&rec), &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let line = text.lines().nth(1).unwrap();
        assert!(line.starts_with("100,0,explore,0.0,0.0,,,"));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        std::fs::write(&p, &text).unwrap();
        assert_eq!(read_metrics(&p).unwrap(), vec![rec]);
    }
}
