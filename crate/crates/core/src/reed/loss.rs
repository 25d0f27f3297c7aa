use serde::{Deserialize, Serialize};

use crate::nn::{cosine_similarity, cosine_similarity_grad, Matrix};

use super::ReedError;

/// Loss value with its gradient with respect to the predictions `ŷ`.
#[derive(Clone, Debug, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub grad: Matrix,
    /// Cosines skipped because a vector had (near) zero norm.
    pub degenerate: usize,
}

/// Denominator used by the contrastive objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContrastiveForm {
    /// Anchor `ŷ_i`; candidates are all targets `y_j` whose raw next state
    /// differs from the anchor's, plus the positive `y_i`.
    #[default]
    NtXent,
    /// Anchor `y_i`; candidates are predictions `ŷ_k` whose raw next state
    /// differs from the anchor's. The positive appears only in the numerator.
    Literal,
}

/// Mean over rows of `−cos(ŷ_i, y_i)`.
pub fn simsiam_loss(pred: &Matrix, target: &Matrix) -> Result<LossOutput, ReedError> {
    check(pred, target, 1)?;
    let b = pred.rows();
    let mut grad = Matrix::zeros(b, pred.cols());
    let mut loss = 0.0;
    let mut degenerate = 0;
    for i in 0..b {
        let c = cosine_similarity(pred.row(i), target.row(i));
        if c.degenerate {
            degenerate += 1;
            continue;
        }
        loss -= c.value;
        let g = cosine_similarity_grad(pred.row(i), target.row(i));
        for (o, v) in grad.row_mut(i).iter_mut().zip(g) {
            *o = -v / b as f64;
        }
    }
    Ok(LossOutput {
        loss: loss / b as f64,
        grad,
        degenerate,
    })
}

/// NT-Xent over the batch. `next_states` rows identify duplicate candidates.
pub fn contrastive_loss(
    pred: &Matrix,
    target: &Matrix,
    next_states: &Matrix,
    temperature: f64,
    form: ContrastiveForm,
) -> Result<LossOutput, ReedError> {
    check(pred, target, 2)?;
    if !(temperature > 0.0) {
        return Err(ReedError::Temperature(temperature));
    }
    if next_states.rows() != pred.rows() {
        return Err(ReedError::BatchShape {
            expected: pred.rows(),
            found: next_states.rows(),
        });
    }
    let b = pred.rows();
    let inv_t = 1.0 / temperature;
    let mut grad = Matrix::zeros(b, pred.cols());
    let mut loss = 0.0;
    let mut degenerate = 0;
    let mut cos = vec![0.0; b * b];
    for i in 0..b {
        for j in 0..b {
            let c = cosine_similarity(pred.row(i), target.row(j));
            degenerate += usize::from(c.degenerate && i == j);
            cos[i * b + j] = c.value;
        }
    }
    let distinct = |i: usize, j: usize| next_states.row(i) != next_states.row(j);
    for i in 0..b {
        // c(k) = cos between the anchor's pair k; (pred row, target row) indices.
        let (cands, pos): (Vec<(usize, usize)>, (usize, usize)) = match form {
            ContrastiveForm::NtXent => (
                (0..b).filter(|&j| j == i || distinct(i, j)).map(|j| (i, j)).collect(),
                (i, i),
            ),
            ContrastiveForm::Literal => (
                (0..b).filter(|&k| distinct(i, k)).map(|k| (k, i)).collect(),
                (i, i),
            ),
        };
        if cands.is_empty() {
            continue;
        }
        let logits: Vec<f64> = cands.iter().map(|&(p, t)| cos[p * b + t] * inv_t).collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - cos[pos.0 * b + pos.1] * inv_t;
        let scale = inv_t / b as f64;
        for (&(p, t), l) in cands.iter().zip(&logits) {
            let w = (l - lse).exp() * scale;
            let g = cosine_similarity_grad(pred.row(p), target.row(t));
            for (o, v) in grad.row_mut(p).iter_mut().zip(g) {
                *o += w * v;
            }
        }
        let g = cosine_similarity_grad(pred.row(pos.0), target.row(pos.1));
        for (o, v) in grad.row_mut(pos.0).iter_mut().zip(g) {
            *o -= scale * v;
        }
    }
    Ok(LossOutput {
        loss: loss / b as f64,
        grad,
        degenerate,
    })
}

fn check(pred: &Matrix, target: &Matrix, min_rows: usize) -> Result<(), ReedError> {
    if pred.rows() < min_rows {
        return Err(ReedError::BatchTooSmall {
            needed: min_rows,
            found: pred.rows(),
        });
    }
    if pred.rows() != target.rows() || pred.cols() != target.cols() {
        return Err(ReedError::BatchShape {
            expected: pred.rows() * pred.cols(),
            found: target.rows() * target.cols(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn loss_only(pred: &Matrix, target: &Matrix, ns: &Matrix, t: f64, form: ContrastiveForm) -> f64 {
        contrastive_loss(pred, target, ns, t, form).unwrap().loss
    }

    #[test]
    fn simsiam_reference_values() {
        let y = Matrix::from_rows(&[[1.0, 2.0, -0.5]]);
        assert!((simsiam_loss(&y, &y).unwrap().loss + 1.0).abs() < 1e-15);
        let p = Matrix::from_rows(&[[2.0, -1.0, 0.0]]);
        assert_eq!(simsiam_loss(&p, &y).unwrap().loss, 0.0);
        let scaled = y.map(|v| 7.5 * v);
        assert_eq!(simsiam_loss(&scaled, &y).unwrap().loss, simsiam_loss(&y, &y).unwrap().loss);
    }

    #[test]
    fn simsiam_zero_vector_counts_as_degenerate() {
        let p = Matrix::from_rows(&[[0.0, 0.0], [1.0, 0.0]]);
        let y = Matrix::from_rows(&[[1.0, 1.0], [1.0, 0.0]]);
        let out = simsiam_loss(&p, &y).unwrap();
        assert_eq!(out.degenerate, 1);
        assert!((out.loss + 0.5).abs() < 1e-15);
        assert!(out.grad.row(0).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn contrastive_single_negative_closed_form() {
        // Exact: -ln(e / (e + 1)) = ln(1 + 1/e).
        let oracle = (1.0 + (-1.0f64).exp()).ln();
        let pred = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]);
        let target = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]);
        let ns = Matrix::from_rows(&[[0.0], [1.0]]);
        let l = loss_only(&pred, &target, &ns, 1.0, ContrastiveForm::NtXent);
        assert!((l - oracle).abs() < 1e-12);
        assert!((l - 0.313262).abs() < 1e-6);
    }

    #[test]
    fn contrastive_duplicates_are_excluded() {
        let pred = Matrix::from_rows(&[[1.0, 0.2], [0.3, 1.0], [-1.0, 0.5]]);
        let target = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]);
        let same = Matrix::from_rows(&[[4.0], [4.0], [4.0]]);
        let out = contrastive_loss(&pred, &target, &same, 0.1, ContrastiveForm::NtXent).unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(out.grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn contrastive_rejects_single_row_and_bad_temperature() {
        let m = Matrix::from_rows(&[[1.0, 0.0]]);
        assert!(matches!(
            contrastive_loss(&m, &m, &Matrix::zeros(1, 1), 0.1, ContrastiveForm::NtXent),
            Err(ReedError::BatchTooSmall { .. })
        ));
        let m2 = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]);
        assert!(matches!(
            contrastive_loss(&m2, &m2, &Matrix::from_rows(&[[0.0], [1.0]]), 0.0, ContrastiveForm::NtXent),
            Err(ReedError::Temperature(_))
        ));
    }

    #[test]
    fn contrastive_decreases_with_positive_cosine() {
        let target = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]);
        let ns = Matrix::from_rows(&[[0.0], [1.0]]);
        let mut prev = f64::INFINITY;
        for k in 0..=20 {
            // Anchor rotates from orthogonal-to-positive towards it, negative fixed.
            let theta = std::f64::consts::FRAC_PI_2 * (1.0 - k as f64 / 20.0);
            let pred = Matrix::from_rows(&[[theta.cos(), theta.sin()], [0.0, 1.0]]);
            let out = contrastive_loss(&pred, &target, &ns, 1.0, ContrastiveForm::NtXent).unwrap();
            let l0 = out.loss * 2.0 - (1.0 + (-1.0f64).exp()).ln();
            assert!(l0 < prev);
            prev = l0;
        }
    }

    fn fd_check(form: ContrastiveForm, seed: u64) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let (b, d) = (5, 4);
        let mut rand_m = |r, c| {
            Matrix::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
        };
        let pred = rand_m(b, d);
        let target = rand_m(b, d);
        let ns = Matrix::from_rows(&[[0.0], [1.0], [1.0], [2.0], [3.0]]);
        let out = contrastive_loss(&pred, &target, &ns, 0.5, form).unwrap();
        let h = 1e-6;
        for idx in 0..b * d {
            let mut p = pred.clone();
            p.data_mut()[idx] += h;
            let up = loss_only(&p, &target, &ns, 0.5, form);
            p.data_mut()[idx] -= 2.0 * h;
            let down = loss_only(&p, &target, &ns, 0.5, form);
            let fd = (up - down) / (2.0 * h);
            let an = out.grad.data()[idx];
            assert!((fd - an).abs() <= 1e-6 + 1e-4 * fd.abs(), "{form:?} {idx}: {fd} vs {an}");
        }
    }

    #[test]
    fn contrastive_gradients_match_finite_differences() {
        fd_check(ContrastiveForm::NtXent, 1);
        fd_check(ContrastiveForm::Literal, 2);
    }

    #[test]
    fn simsiam_gradient_matches_finite_differences() {
        let pred = Matrix::from_rows(&[[0.3, -0.8, 1.1], [2.0, 0.1, -0.4]]);
        let target = Matrix::from_rows(&[[1.0, 0.5, -0.2], [-0.3, 0.9, 0.7]]);
        let out = simsiam_loss(&pred, &target).unwrap();
        let h = 1e-6;
        for idx in 0..6 {
            let mut p = pred.clone();
            p.data_mut()[idx] += h;
            let up = simsiam_loss(&p, &target).unwrap().loss;
            p.data_mut()[idx] -= 2.0 * h;
            let down = simsiam_loss(&p, &target).unwrap().loss;
            assert!(((up - down) / (2.0 * h) - out.grad.data()[idx]).abs() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn simsiam_is_bounded(
            p in proptest::collection::vec(-100.0f64..100.0, 12),
            y in proptest::collection::vec(-100.0f64..100.0, 12),
        ) {
            let pm = Matrix::from_vec(4, 3, p).unwrap();
            let ym = Matrix::from_vec(4, 3, y).unwrap();
            let l = simsiam_loss(&pm, &ym).unwrap().loss;
            prop_assert!((-1.0..=1.0).contains(&l));
        }
    }
}
