use wasm_bindgen::prelude::*;

use reed_core::env::{render_trace, Environment, PointMass2D};
use reed_core::replay::{Segment, Transition};
use reed_core::reward::{preference_loss_from_returns, preference_probability_from_returns, Preference};
use reed_core::teachers::{Teacher, TeacherConfig, TeacherStyle};

/// `P[σ¹ ≻ σ²]` under the Bradley-Terry model, and the cross-entropy of `label`
/// ("first", "second" or "equal") against it.
#[wasm_bindgen]
pub fn bradley_terry(return_first: f64, return_second: f64, label: &str) -> Result<Vec<f64>, JsError> {
    let pref = match label {
        "first" => Preference::First,
        "second" => Preference::Second,
        "equal" => Preference::Equal,
        other => return Err(JsError::new(&format!("unknown label {other:?}"))),
    };
    let p = preference_probability_from_returns(return_first, return_second);
    let loss = preference_loss_from_returns(return_first, return_second, pref.target());
    Ok(vec![p, loss])
}

fn rollout(env: &mut PointMass2D, seed: u64, force: [f64; 2], len: usize) -> Segment {
    let mut state = env.reset(seed);
    let mut ts = Vec::with_capacity(len);
    for t in 0..len {
        let out = env.step(&force).expect("episode longer than segment");
        ts.push(Transition::new(
            state.observation,
            force.to_vec(),
            out.state.observation.clone(),
            out.reward,
            out.state.done,
            0,
            t,
        ));
        state = out.state;
    }
    Segment::new(ts).expect("contiguous rollout")
}

/// Rolls out two constant forces from the same start and asks a simulated
/// teacher which segment it prefers. Returns JSON with both render traces.
#[wasm_bindgen]
pub fn compare_forces(seed: u32, style: &str, first: Vec<f64>, second: Vec<f64>, len: u32) -> Result<String, JsError> {
    let style = TeacherStyle::ALL
        .into_iter()
        .find(|s| s.as_str() == style)
        .ok_or_else(|| JsError::new(&format!("unknown teacher style {style:?}")))?;
    if first.len() != 2 || second.len() != 2 {
        return Err(JsError::new("forces are 2D"));
    }
    let len = (len as usize).clamp(1, 100);
    let mut env = PointMass2D::default();
    let a = rollout(&mut env, seed as u64, [first[0], first[1]], len);
    let b = rollout(&mut env, seed as u64, [second[0], second[1]], len);
    let mut teacher = Teacher::new(TeacherConfig {
        seed: seed as u64,
        ..TeacherConfig::with_style(style)
    })
    .map_err(|e| JsError::new(&e.to_string()))?;
    // The equal teacher's threshold scales with a typical episode return.
    let mut stats = reed_core::teachers::ReturnStats::new(1);
    stats.record(0, -50.0);
    let pair = [(a, b)];
    let decision = teacher
        .label_batch(&pair, Some(&stats))
        .map_err(|e| JsError::new(&e.to_string()))?[0];
    let spec = env.spec();
    let out = serde_json::json!({
        "label": decision.label.as_str(),
        "return_first": decision.return_first,
        "return_second": decision.return_second,
        "trace_first": render_trace(spec, &pair[0].0).map_err(|e| JsError::new(&e.to_string()))?,
        "trace_second": render_trace(spec, &pair[0].1).map_err(|e| JsError::new(&e.to_string()))?,
    });
    Ok(out.to_string())
}

/// An interactive point mass driven from the page.
#[wasm_bindgen]
pub struct PointMassDemo {
    env: PointMass2D,
    observation: Vec<f64>,
    done: bool,
    total: f64,
}

#[wasm_bindgen]
impl PointMassDemo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32) -> PointMassDemo {
        let mut env = PointMass2D::default();
        let observation = env.reset(seed as u64).observation;
        PointMassDemo {
            env,
            observation,
            done: false,
            total: 0.0,
        }
    }

    /// Applies a force, returns the ground-truth reward (NaN once the episode is over).
    pub fn step(&mut self, fx: f64, fy: f64) -> f64 {
        if self.done {
            return f64::NAN;
        }
        let out = self.env.step(&[fx, fy]).expect("checked above");
        self.observation = out.state.observation;
        self.done = out.state.done;
        self.total += out.reward;
        out.reward
    }

    /// `[px, py, vx, vy, gx, gy]`.
    pub fn observation(&self) -> Vec<f64> {
        self.observation.clone()
    }

    pub fn episode_return(&self) -> f64 {
        self.total
    }

    pub fn done(&self) -> bool {
        self.done
    }

    pub fn arena(&self) -> f64 {
        self.env.arena
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_returns_give_one_half_and_ln2() {
        let v = bradley_terry(-3.0, -3.0, "first").unwrap();
        assert_eq!(v[0], 0.5);
        assert!((v[1] - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn oracle_prefers_pushing_towards_the_goal() {
        let mut env = PointMass2D::default();
        let obs = env.reset(9).observation;
        let towards = [obs[4] - obs[0], obs[5] - obs[1]];
        let n = (towards[0].powi(2) + towards[1].powi(2)).sqrt();
        let toward = vec![towards[0] / n, towards[1] / n];
        let away = vec![-toward[0], -toward[1]];
        let json = compare_forces(9, "oracle", toward, away, 30).unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["label"], "prefer_first");
        assert_eq!(v["trace_first"]["frames"].as_array().unwrap().len(), 30);
    }

    #[test]
    fn demo_episode_ends_at_the_horizon() {
        let mut d = PointMassDemo::new(1);
        for _ in 0..100 {
            assert!(d.step(0.1, 0.0).is_finite());
        }
        assert!(d.done());
        assert!(d.step(0.0, 0.0).is_nan());
        assert!(d.episode_return() < 0.0);
    }
}
