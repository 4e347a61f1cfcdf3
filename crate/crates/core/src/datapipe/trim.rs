use serde::{Deserialize, Serialize};

use super::annotation::VideoAnnotation;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrimSegment {
    pub event_index: usize,
    pub start_frame: usize,
    pub end_frame: usize,
}

/// Frame windows, one per event, used to cut synchronized clips.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrimPlan {
    pub video_id: String,
    pub segments: Vec<TrimSegment>,
}

/// `seconds * fps` with float noise near whole frames snapped away, so
/// `2.3 s * 10 fps` counts as frame 23.
fn frame_position(seconds: f64, fps: f64) -> f64 {
    let x = seconds * fps;
    let r = x.round();
    if (x - r).abs() < 1e-9 * r.abs().max(1.0) {
        r
    } else {
        x
    }
}

/// Each event becomes `[floor(start*fps), min(ceil(end*fps), floor(duration*fps)))`.
///
/// When clamping to the last frame would leave an empty window, the start is
/// pulled back by one frame.
pub fn compute_trim_plan(ann: &VideoAnnotation) -> TrimPlan {
    let total = frame_position(ann.duration, ann.fps).floor() as usize;
    let segments = ann
        .events
        .iter()
        .enumerate()
        .map(|(event_index, ev)| {
            let mut start_frame = frame_position(ev.start_time, ann.fps).floor() as usize;
            let end_frame = (frame_position(ev.end_time, ann.fps).ceil() as usize).min(total);
            if start_frame >= end_frame {
                start_frame = end_frame.saturating_sub(1);
            }
            TrimSegment {
                event_index,
                start_frame,
                end_frame,
            }
        })
        .collect();
    TrimPlan {
        video_id: ann.video_id.clone(),
        segments,
    }
}
