use serde::{Deserialize, Serialize};

use super::{EnvError, EnvSpec};
use crate::replay::Segment;

pub const TRACE_VERSION: u32 = 1;

/// One drawable timestep: where the mass is and where the goal is.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub t: usize,
    pub position: [f64; 2],
    pub goal: [f64; 2],
}

/// JSON-serializable playback data for one segment.
///
/// ```json
/// {"version":1,"env":"point_mass","half_extent":1.5,
///  "frames":[{"t":0,"position":[0.1,0.2],"goal":[0.5,-0.3]}, ...]}
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub version: u32,
    pub env: String,
    pub half_extent: f64,
    pub frames: Vec<Frame>,
}

/// Renders each transition's pre-step state of `segment` as a frame.
pub fn render_trace(spec: &EnvSpec, segment: &Segment) -> Result<Trace, EnvError> {
    let layout = spec
        .render
        .ok_or_else(|| EnvError::Unsupported(spec.id.clone()))?;
    let frames = segment
        .transitions()
        .iter()
        .enumerate()
        .map(|(t, tr)| {
            let s = &tr.state;
            Frame {
                t,
                position: [s[layout.position], s[layout.position + 1]],
                goal: [s[layout.goal], s[layout.goal + 1]],
            }
        })
        .collect();
    Ok(Trace {
        version: TRACE_VERSION,
        env: spec.id.clone(),
        half_extent: layout.half_extent,
        frames,
    })
}
