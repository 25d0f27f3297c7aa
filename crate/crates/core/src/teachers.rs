//! Simulated labellers that answer preference queries from true returns.

use std::collections::VecDeque;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::sigmoid;
use crate::replay::{GroundTruthAccess, Segment};
use crate::reward::Preference;

#[derive(Debug, Error, PartialEq)]
pub enum TeacherError {
    #[error("the equal teacher needs recent episode returns")]
    MissingStats,
    #[error("invalid teacher config: {0}")]
    Config(String),
    #[error("query {0} pairs segments of different length")]
    LengthMismatch(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherStyle {
    Oracle,
    Skip,
    Myopic,
    Equal,
    Mistake,
    Noisy,
}

impl TeacherStyle {
    pub const ALL: [TeacherStyle; 6] = [
        TeacherStyle::Oracle,
        TeacherStyle::Skip,
        TeacherStyle::Myopic,
        TeacherStyle::Equal,
        TeacherStyle::Mistake,
        TeacherStyle::Noisy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TeacherStyle::Oracle => "oracle",
            TeacherStyle::Skip => "skip",
            TeacherStyle::Myopic => "myopic",
            TeacherStyle::Equal => "equal",
            TeacherStyle::Mistake => "mistake",
            TeacherStyle::Noisy => "noisy",
        }
    }
}

/// Which end of a segment the myopic teacher emphasises.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MyopicWeighting {
    /// `w_t = γ^(l−1−t)`.
    #[default]
    Late,
    /// `w_t = γ^t`.
    Early,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TeacherConfig {
    pub style: TeacherStyle,
    pub gamma: f64,
    pub myopic_weighting: MyopicWeighting,
    pub skip_rate: f64,
    pub mistake_rate: f64,
    pub equal_fraction: f64,
    pub beta: f64,
    pub seed: u64,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            style: TeacherStyle::Oracle,
            gamma: 0.9,
            myopic_weighting: MyopicWeighting::Late,
            skip_rate: 0.1,
            mistake_rate: 0.1,
            equal_fraction: 0.005,
            beta: 1.0,
            seed: 0,
        }
    }
}

impl TeacherConfig {
    pub fn with_style(style: TeacherStyle) -> Self {
        Self {
            style,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), TeacherError> {
        let bad = |m: &str| Err(TeacherError::Config(m.into()));
        if !(0.0..=1.0).contains(&self.skip_rate) || !(0.0..=1.0).contains(&self.mistake_rate) {
            return bad("rates must lie in [0, 1]");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(self.beta > 0.0) {
            return bad("beta must be positive");
        }
        if !(self.equal_fraction >= 0.0) {
            return bad("equal fraction must be non-negative");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    PreferFirst,
    PreferSecond,
    Equal,
    Discard,
}

impl Label {
    /// `None` for `Discard`, which never enters the preference dataset.
    pub fn preference(self) -> Option<Preference> {
        match self {
            Label::PreferFirst => Some(Preference::First),
            Label::PreferSecond => Some(Preference::Second),
            Label::Equal => Some(Preference::Equal),
            Label::Discard => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::PreferFirst => "prefer_first",
            Label::PreferSecond => "prefer_second",
            Label::Equal => "equal",
            Label::Discard => "discard",
        }
    }

    fn inverted(self) -> Self {
        match self {
            Label::PreferFirst => Label::PreferSecond,
            Label::PreferSecond => Label::PreferFirst,
            other => other,
        }
    }
}

/// One labelling decision with the quantities it was based on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelDecision {
    pub label: Label,
    /// Returns the decision compared (weighted for myopic, per-step for noisy).
    pub return_first: f64,
    pub return_second: f64,
    /// Selected for skipping or a mistake.
    pub perturbed: bool,
}

/// True episode returns that ended within the last `window` policy steps.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReturnStats {
    window: u64,
    entries: VecDeque<(u64, f64)>,
}

impl ReturnStats {
    pub fn new(window: u64) -> Self {
        Self {
            window,
            entries: VecDeque::new(),
        }
    }

    /// Records an episode that finished at policy step `step`.
    pub fn record(&mut self, step: u64, episode_return: f64) {
        self.entries.push_back((step, episode_return));
        self.evict(step);
    }

    /// Drops episodes older than the window, but always keeps the latest.
    pub fn evict(&mut self, now: u64) {
        while self.entries.len() > 1 && self.entries[0].0 + self.window <= now {
            self.entries.pop_front();
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn mean(&self) -> Option<f64> {
        if self.entries.is_empty() {
            None
        } else {
            Some(self.entries.iter().map(|e| e.1).sum::<f64>() / self.entries.len() as f64)
        }
    }
}

/// Number of queries perturbed at `rate`: nearest integer to `rate·m`.
pub fn perturbed_count(rate: f64, m: usize) -> usize {
    (rate * m as f64).round().max(0.0) as usize
}

fn compare(r1: f64, r2: f64) -> Label {
    if r1 > r2 {
        Label::PreferFirst
    } else if r2 > r1 {
        Label::PreferSecond
    } else {
        Label::Equal
    }
}

#[derive(Clone, Debug)]
pub struct Teacher {
    config: TeacherConfig,
    rng: ChaCha8Rng,
}

impl Teacher {
    pub fn new(config: TeacherConfig) -> Result<Self, TeacherError> {
        config.validate()?;
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
        })
    }

    pub fn config(&self) -> &TeacherConfig {
        &self.config
    }

    fn segment_return(&self, seg: &Segment) -> f64 {
        let r = seg.true_rewards(GroundTruthAccess::grant());
        let l = r.len();
        match self.config.style {
            TeacherStyle::Myopic => r
                .iter()
                .enumerate()
                .map(|(t, x)| {
                    let k = match self.config.myopic_weighting {
                        MyopicWeighting::Late => l - 1 - t,
                        MyopicWeighting::Early => t,
                    };
                    self.config.gamma.powi(k as i32) * x
                })
                .sum(),
            TeacherStyle::Noisy => r.iter().sum::<f64>() / l as f64,
            _ => r.iter().sum(),
        }
    }

    /// Labels every query; the rng advances identically for identical inputs.
    pub fn label_batch(
        &mut self,
        queries: &[(Segment, Segment)],
        stats: Option<&ReturnStats>,
    ) -> Result<Vec<LabelDecision>, TeacherError> {
        let cfg = self.config;
        let threshold = if cfg.style == TeacherStyle::Equal {
            let mean = stats.and_then(ReturnStats::mean).ok_or(TeacherError::MissingStats)?;
            cfg.equal_fraction * mean.abs()
        } else {
            0.0
        };
        let mut out = Vec::with_capacity(queries.len());
        for (i, (a, b)) in queries.iter().enumerate() {
            if a.len() != b.len() {
                return Err(TeacherError::LengthMismatch(i));
            }
            let (r1, r2) = (self.segment_return(a), self.segment_return(b));
            let label = match cfg.style {
                TeacherStyle::Noisy if r1 != r2 => {
                    let p = sigmoid(cfg.beta * (r1 - r2));
                    if self.rng.random::<f64>() < p {
                        Label::PreferFirst
                    } else {
                        Label::PreferSecond
                    }
                }
                TeacherStyle::Equal if (r1 - r2).abs() < threshold => Label::Equal,
                _ => compare(r1, r2),
            };
            out.push(LabelDecision {
                label,
                return_first: r1,
                return_second: r2,
                perturbed: false,
            });
        }
        let rate = match cfg.style {
            TeacherStyle::Skip => Some(cfg.skip_rate),
            TeacherStyle::Mistake => Some(cfg.mistake_rate),
            _ => None,
        };
        if let Some(rate) = rate {
            let m = out.len();
            let k = perturbed_count(rate, m).min(m);
            for i in index::sample(&mut self.rng, m, k) {
                let d = &mut out[i];
                if d.return_first == d.return_second {
                    continue;
                }
                d.perturbed = true;
                d.label = match cfg.style {
                    TeacherStyle::Skip => Label::Discard,
                    _ => d.label.inverted(),
                };
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::replay::Transition;
    use proptest::prelude::*;
    use rand::Rng;

    fn seg(rewards: &[f64], episode: u64) -> Segment {
        Segment::new(
            rewards
                .iter()
                .enumerate()
                .map(|(t, &r)| Transition::new(vec![t as f64], vec![0.0], vec![t as f64 + 1.0], r, false, episode, t))
                .collect(),
        )
        .unwrap()
    }

    fn distinct_queries(m: usize, seed: u64) -> Vec<(Segment, Segment)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..m as u64)
            .map(|i| {
                let a: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..0.0)).collect();
                let b: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..0.0)).collect();
                (seg(&a, 2 * i), seg(&b, 2 * i + 1))
            })
            .collect()
    }

    fn stats(mean: f64) -> ReturnStats {
        let mut s = ReturnStats::new(100);
        s.record(10, mean);
        s
    }

    fn oracle_labels(q: &[(Segment, Segment)]) -> Vec<Label> {
        let mut t = Teacher::new(TeacherConfig::default()).unwrap();
        t.label_batch(q, None).unwrap().iter().map(|d| d.label).collect()
    }

    #[test]
    fn oracle_prefers_larger_return() {
        let mut t = Teacher::new(TeacherConfig::default()).unwrap();
        let q = [(seg(&[2.0, 3.0], 0), seg(&[1.0, 2.0], 1))];
        assert_eq!(t.label_batch(&q, None).unwrap()[0].label, Label::PreferFirst);
        let q = [(seg(&[1.0, 2.0], 0), seg(&[2.0, 3.0], 1))];
        assert_eq!(t.label_batch(&q, None).unwrap()[0].label, Label::PreferSecond);
    }

    #[test]
    fn every_style_returns_equal_on_exact_ties() {
        let q: Vec<_> = (0..20).map(|i| (seg(&[-0.5, -0.25], 2 * i), seg(&[-0.25, -0.5], 2 * i + 1))).collect();
        let q_flat: Vec<_> = (0..20).map(|i| (seg(&[-0.5, -0.5], 2 * i), seg(&[-0.5, -0.5], 2 * i + 1))).collect();
        for style in TeacherStyle::ALL {
            let mut t = Teacher::new(TeacherConfig::with_style(style)).unwrap();
            for d in t.label_batch(&q_flat, Some(&stats(-50.0))).unwrap() {
                assert_eq!(d.label, Label::Equal, "{style:?}");
            }
            if style != TeacherStyle::Myopic {
                for d in t.label_batch(&q, Some(&stats(-50.0))).unwrap() {
                    assert_eq!(d.label, Label::Equal, "{style:?}");
                }
            }
        }
    }

    #[test]
    fn perturbation_counts_are_exact() {
        for (m, expected) in [(20, 2), (10, 1), (5, 1), (4, 0), (50, 5), (15, 2)] {
            assert_eq!(perturbed_count(0.1, m), expected, "m = {m}");
            let q = distinct_queries(m, m as u64);
            let oracle = oracle_labels(&q);
            for style in [TeacherStyle::Skip, TeacherStyle::Mistake] {
                let mut t = Teacher::new(TeacherConfig {
                    style,
                    seed: 3,
                    ..Default::default()
                })
                .unwrap();
                let ds = t.label_batch(&q, None).unwrap();
                let changed = ds.iter().zip(&oracle).filter(|(d, o)| d.label != **o).count();
                assert_eq!(changed, expected, "{style:?} m = {m}");
                assert_eq!(ds.iter().filter(|d| d.perturbed).count(), expected);
                for (d, o) in ds.iter().zip(&oracle) {
                    if d.perturbed {
                        let want = if style == TeacherStyle::Skip { Label::Discard } else { o.inverted() };
                        assert_eq!(d.label, want);
                    } else {
                        assert_eq!(d.label, *o);
                    }
                }
            }
        }
    }

    #[test]
    fn labels_are_deterministic_per_seed() {
        let q = distinct_queries(30, 9);
        for style in TeacherStyle::ALL {
            let cfg = TeacherConfig {
                style,
                seed: 11,
                ..Default::default()
            };
            let a = Teacher::new(cfg).unwrap().label_batch(&q, Some(&stats(-40.0))).unwrap();
            let b = Teacher::new(cfg).unwrap().label_batch(&q, Some(&stats(-40.0))).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn noisy_frequency_matches_softmax() {
        let (a, b) = (seg(&[-0.2, -0.4, -0.1, -0.3], 0), seg(&[-0.9, -0.5, -0.8, -0.6], 1));
        // Per-step returns -0.25 and -0.7: P = 1 / (1 + e^{-0.45}).
        let p = 1.0 / (1.0 + (-0.45f64).exp());
        let q = vec![(a, b); 10_000];
        let mut t = Teacher::new(TeacherConfig {
            style: TeacherStyle::Noisy,
            seed: 5,
            ..Default::default()
        })
        .unwrap();
        let ds = t.label_batch(&q, None).unwrap();
        let first = ds.iter().filter(|d| d.label == Label::PreferFirst).count() as f64 / 1e4;
        assert!((first - p).abs() < 0.02, "{first} vs {p}");
    }

    #[test]
    fn myopic_weights_late_steps() {
        // Equal sums; the second segment is better at the end.
        let q = [(seg(&[0.0, -1.0], 0), seg(&[-1.0, 0.0], 1))];
        let mut late = Teacher::new(TeacherConfig::with_style(TeacherStyle::Myopic)).unwrap();
        let d = late.label_batch(&q, None).unwrap()[0];
        assert_eq!(d.label, Label::PreferSecond);
        assert!((d.return_first + 1.0).abs() < 1e-15);
        assert!((d.return_second + 0.9).abs() < 1e-15);
        let mut early = Teacher::new(TeacherConfig {
            style: TeacherStyle::Myopic,
            myopic_weighting: MyopicWeighting::Early,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(early.label_batch(&q, None).unwrap()[0].label, Label::PreferFirst);
    }

    #[test]
    fn myopic_agrees_with_oracle_for_constant_rewards() {
        let q: Vec<_> = (0..10)
            .map(|i| (seg(&[-0.1 * i as f64; 5], 2 * i), seg(&[-0.35; 5], 2 * i + 1)))
            .collect();
        let mut t = Teacher::new(TeacherConfig::with_style(TeacherStyle::Myopic)).unwrap();
        let got: Vec<_> = t.label_batch(&q, None).unwrap().iter().map(|d| d.label).collect();
        assert_eq!(got, oracle_labels(&q));
    }

    #[test]
    fn equal_teacher_threshold() {
        let mut t = Teacher::new(TeacherConfig::with_style(TeacherStyle::Equal)).unwrap();
        // Threshold 0.005 · 100 = 0.5.
        let close = (seg(&[-1.0, -1.0], 0), seg(&[-1.2, -1.2], 1));
        let far = (seg(&[-1.0, -1.0], 2), seg(&[-1.3, -1.3], 3));
        let ds = t.label_batch(&[close, far], Some(&stats(-100.0))).unwrap();
        assert_eq!(ds[0].label, Label::Equal);
        assert_eq!(ds[1].label, Label::PreferFirst);
        assert_eq!(t.label_batch(&[], None).unwrap_err(), TeacherError::MissingStats);
    }

    #[test]
    fn return_stats_window() {
        let mut s = ReturnStats::new(100);
        assert_eq!(s.mean(), None);
        s.record(100, -30.0);
        assert_eq!(s.mean(), Some(-30.0));
        s.record(150, -10.0);
        assert_eq!(s.mean(), Some(-20.0));
        s.record(200, -20.0);
        // The episode ending at 100 is now a full window old.
        assert_eq!(s.len(), 2);
        assert_eq!(s.mean(), Some(-15.0));
        s.evict(10_000);
        assert_eq!(s.mean(), Some(-20.0));
    }

    #[test]
    fn discard_never_becomes_a_preference() {
        assert_eq!(Label::Discard.preference(), None);
        assert_eq!(Label::PreferFirst.preference(), Some(Preference::First));
        assert_eq!(Label::Equal.preference(), Some(Preference::Equal));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for cfg in [
            TeacherConfig { skip_rate: 1.5, ..Default::default() },
            TeacherConfig { gamma: 0.0, ..Default::default() },
            TeacherConfig { beta: -1.0, ..Default::default() },
        ] {
            assert!(Teacher::new(cfg).is_err());
        }
    }

    proptest! {
        #[test]
        fn return_stats_mean_matches_naive(
            returns in proptest::collection::vec((1u64..50, -100.0f64..0.0), 1..40),
        ) {
            let window = 120;
            let mut s = ReturnStats::new(window);
            let mut log = Vec::new();
            let mut step = 0;
            for (dt, r) in returns {
                step += dt;
                s.record(step, r);
                log.push((step, r));
            }
            let kept: Vec<f64> = log.iter().filter(|(t, _)| t + window > step).map(|e| e.1).collect();
            let naive = if kept.is_empty() { log.last().unwrap().1 } else { kept.iter().sum::<f64>() / kept.len() as f64 };
            prop_assert!((s.mean().unwrap() - naive).abs() < 1e-9);
        }

        #[test]
        fn oracle_labels_are_scale_invariant(
            a in proptest::collection::vec(-1.0f64..1.0, 3),
            b in proptest::collection::vec(-1.0f64..1.0, 3),
            c in 0.01f64..100.0,
        ) {
            let q = [(seg(&a, 0), seg(&b, 1))];
            let sa: Vec<f64> = a.iter().map(|x| x * c).collect();
            let sb: Vec<f64> = b.iter().map(|x| x * c).collect();
            let qs = [(seg(&sa, 0), seg(&sb, 1))];
            prop_assert_eq!(oracle_labels(&q), oracle_labels(&qs));
        }
    }
}
