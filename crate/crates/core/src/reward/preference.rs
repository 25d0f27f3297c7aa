use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{sigmoid, NnError};
use crate::replay::Segment;

use super::net::RewardNet;

#[derive(Debug, Error, PartialEq)]
pub enum PreferenceError {
    #[error("segments differ in length ({first} vs {second})")]
    LengthMismatch { first: usize, second: usize },
    #[error("label budget of {budget} exhausted")]
    BudgetExhausted { budget: usize },
    #[error("empty preference dataset")]
    Empty,
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// A usable preference over an ordered pair of segments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preference {
    First,
    Second,
    Equal,
}

impl Preference {
    /// Target distribution `(y₀, y₁)` over (first preferred, second preferred).
    pub fn target(self) -> [f64; 2] {
        match self {
            Preference::First => [1.0, 0.0],
            Preference::Second => [0.0, 1.0],
            Preference::Equal => [0.5, 0.5],
        }
    }
}

/// `(σ¹, σ², y)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreferenceTriplet {
    pub first: Segment,
    pub second: Segment,
    pub label: Preference,
}

impl PreferenceTriplet {
    pub fn new(first: Segment, second: Segment, label: Preference) -> Result<Self, PreferenceError> {
        if first.len() != second.len() {
            return Err(PreferenceError::LengthMismatch {
                first: first.len(),
                second: second.len(),
            });
        }
        Ok(Self {
            first,
            second,
            label,
        })
    }
}

/// Label store bounded by the total feedback budget.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct PreferenceDataset {
    budget: usize,
    triplets: Vec<PreferenceTriplet>,
}

impl PreferenceDataset {
    pub fn new(budget: usize) -> Self {
        Self {
            budget,
            triplets: Vec::new(),
        }
    }

    pub fn push(&mut self, t: PreferenceTriplet) -> Result<(), PreferenceError> {
        if self.triplets.len() >= self.budget {
            return Err(PreferenceError::BudgetExhausted {
                budget: self.budget,
            });
        }
        self.triplets.push(t);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn remaining(&self) -> usize {
        self.budget - self.triplets.len()
    }

    pub fn triplets(&self) -> &[PreferenceTriplet] {
        &self.triplets
    }
}

/// `ln σ(x)` without overflow.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// `P[σ¹ ≻ σ²] = exp R¹ / (exp R¹ + exp R²)`.
pub fn preference_probability_from_returns(r1: f64, r2: f64) -> f64 {
    sigmoid(r1 - r2)
}

/// `−y₀ ln P[σ¹ ≻ σ²] − y₁ ln P[σ² ≻ σ¹]`.
pub fn preference_loss_from_returns(r1: f64, r2: f64, target: [f64; 2]) -> f64 {
    let d = r1 - r2;
    let mut loss = 0.0;
    if target[0] != 0.0 {
        loss -= target[0] * log_sigmoid(d);
    }
    if target[1] != 0.0 {
        loss -= target[1] * log_sigmoid(-d);
    }
    loss
}

/// Derivative of the loss with respect to `R¹ − R²`.
pub fn preference_loss_grad(r1: f64, r2: f64, target: [f64; 2]) -> f64 {
    let p = sigmoid(r1 - r2);
    (target[0] + target[1]) * p - target[0]
}

/// Predicted return of a segment under one reward network.
pub fn segment_return(net: &RewardNet, segment: &Segment) -> Result<f64, NnError> {
    Ok(net.predict(&segment.states(), &segment.actions())?.iter().sum())
}

pub fn preference_probability(
    net: &RewardNet,
    first: &Segment,
    second: &Segment,
) -> Result<f64, PreferenceError> {
    if first.len() != second.len() {
        return Err(PreferenceError::LengthMismatch {
            first: first.len(),
            second: second.len(),
        });
    }
    Ok(preference_probability_from_returns(
        segment_return(net, first)?,
        segment_return(net, second)?,
    ))
}

/// Mean loss over a set of triplets.
pub fn preference_loss(
    net: &RewardNet,
    triplets: &[PreferenceTriplet],
) -> Result<f64, PreferenceError> {
    if triplets.is_empty() {
        return Err(PreferenceError::Empty);
    }
    let mut total = 0.0;
    for t in triplets {
        let r1 = segment_return(net, &t.first)?;
        let r2 = segment_return(net, &t.second)?;
        total += preference_loss_from_returns(r1, r2, t.label.target());
    }
    Ok(total / triplets.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probability_closed_forms() {
        assert_eq!(preference_probability_from_returns(1.0, 1.0), 0.5);
        let p = preference_probability_from_returns(3f64.ln(), 0.0);
        assert!((p - 0.75).abs() < 1e-12);
        let q = preference_probability_from_returns(0.0, 3f64.ln());
        assert!((p + q - 1.0).abs() < 1e-12);
    }

    #[test]
    fn probability_is_finite_for_huge_gaps() {
        for (a, b) in [(1000.0, -1000.0), (-1000.0, 1000.0), (1e6, 0.0)] {
            let p = preference_probability_from_returns(a, b);
            assert!(p.is_finite() && (0.0..=1.0).contains(&p));
        }
    }

    #[test]
    fn loss_closed_forms() {
        let ln2 = 2f64.ln();
        assert!((preference_loss_from_returns(0.5, 0.5, [1.0, 0.0]) - ln2).abs() < 1e-12);
        let l = preference_loss_from_returns(0.0, 3f64.ln(), [0.0, 1.0]);
        assert!((l + 0.75f64.ln()).abs() < 1e-12);
        let equal = preference_loss_from_returns(2.0, 2.0, [0.5, 0.5]);
        assert!((equal - ln2).abs() < 1e-12);
        assert!(preference_loss_from_returns(50.0, 0.0, [1.0, 0.0]) < 1e-20);
        assert!((preference_loss_from_returns(-50.0, 0.0, [1.0, 0.0]) - 50.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_difference() {
        for target in [[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]] {
            for d in [-4.0, -0.3, 0.0, 0.7, 3.0] {
                let h = 1e-6;
                let fd = (preference_loss_from_returns(d + h, 0.0, target)
                    - preference_loss_from_returns(d - h, 0.0, target))
                    / (2.0 * h);
                assert!((fd - preference_loss_grad(d, 0.0, target)).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn label_targets() {
        assert_eq!(Preference::First.target(), [1.0, 0.0]);
        assert_eq!(Preference::Second.target(), [0.0, 1.0]);
        assert_eq!(Preference::Equal.target(), [0.5, 0.5]);
    }
}
