use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraView {
    Vehicle,
    Overhead,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    WtsNormal,
    WtsEvent,
    Bdd,
}

impl Domain {
    pub const ALL: [Domain; 3] = [Domain::WtsNormal, Domain::WtsEvent, Domain::Bdd];

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::WtsNormal => "wts_normal",
            Domain::WtsEvent => "wts_event",
            Domain::Bdd => "bdd",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Domain::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown domain `{s}`")))
    }
}

/// Which caption stream a model is trained on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Agent {
    Pedestrian,
    Vehicle,
}

impl Agent {
    pub fn as_str(self) -> &'static str {
        match self {
            Agent::Pedestrian => "pedestrian",
            Agent::Vehicle => "vehicle",
        }
    }
}

impl fmt::Display for Agent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Agent {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pedestrian" => Ok(Agent::Pedestrian),
            "vehicle" => Ok(Agent::Vehicle),
            _ => Err(Error::invalid(format!("unknown agent `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventAnnotation {
    pub start_time: f64,
    pub end_time: f64,
    pub caption_pedestrian: String,
    pub caption_vehicle: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase_label: Option<String>,
}

impl EventAnnotation {
    pub fn caption(&self, agent: Agent) -> &str {
        match agent {
            Agent::Pedestrian => &self.caption_pedestrian,
            Agent::Vehicle => &self.caption_vehicle,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoAnnotation {
    pub video_id: String,
    pub fps: f64,
    pub duration: f64,
    pub camera_view: CameraView,
    pub domain: Domain,
    pub events: Vec<EventAnnotation>,
}

fn field_err(field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Annotation {
        field: field.into(),
        message: message.into(),
    }
}

fn get<'a>(obj: &'a Map<String, Value>, key: &str, path: &str) -> Result<&'a Value> {
    obj.get(key).ok_or_else(|| field_err(path, "missing field"))
}

fn number(obj: &Map<String, Value>, key: &str, path: &str) -> Result<f64> {
    get(obj, key, path)?
        .as_f64()
        .filter(|v| v.is_finite())
        .ok_or_else(|| field_err(path, "expected a finite number"))
}

fn string(obj: &Map<String, Value>, key: &str, path: &str) -> Result<String> {
    get(obj, key, path)?
        .as_str()
        .map(str::to_owned)
        .ok_or_else(|| field_err(path, "expected a string"))
}

fn enumerated<T: for<'de> Deserialize<'de>>(obj: &Map<String, Value>, key: &str, allowed: &str) -> Result<T> {
    let v = get(obj, key, key)?;
    serde_json::from_value(v.clone()).map_err(|_| field_err(key, format!("expected one of {allowed}, got {v}")))
}

impl VideoAnnotation {
    /// Validates a parsed JSON document; events come back sorted by start time.
    pub fn from_json(value: &Value) -> Result<Self> {
        let obj = value.as_object().ok_or_else(|| field_err("$", "expected a JSON object"))?;
        let video_id = string(obj, "video_id", "video_id")?;
        if video_id.is_empty() {
            return Err(field_err("video_id", "must not be empty"));
        }
        let fps = number(obj, "fps", "fps")?;
        if fps <= 0.0 {
            return Err(field_err("fps", "must be > 0"));
        }
        let duration = number(obj, "duration", "duration")?;
        if duration <= 0.0 {
            return Err(field_err("duration", "must be > 0"));
        }
        if (duration * fps).floor() < 1.0 {
            return Err(field_err("duration", "video is shorter than one frame"));
        }
        let camera_view = enumerated(obj, "camera_view", "\"vehicle\", \"overhead\"")?;
        let domain = enumerated(obj, "domain", "\"wts_normal\", \"wts_event\", \"bdd\"")?;

        let raw_events = get(obj, "events", "events")?
            .as_array()
            .ok_or_else(|| field_err("events", "expected an array"))?;
        let mut events = Vec::with_capacity(raw_events.len());
        for (i, ev) in raw_events.iter().enumerate() {
            let p = |k: &str| format!("events[{i}].{k}");
            let eo = ev.as_object().ok_or_else(|| field_err(format!("events[{i}]"), "expected an object"))?;
            let start_time = number(eo, "start_time", &p("start_time"))?;
            let end_time = number(eo, "end_time", &p("end_time"))?;
            if start_time < 0.0 {
                return Err(field_err(p("start_time"), "must be >= 0"));
            }
            if end_time == start_time {
                return Err(field_err(p("end_time"), "degenerate event: end_time equals start_time"));
            }
            if end_time < start_time {
                return Err(field_err(p("end_time"), "non-monotone times: end_time before start_time"));
            }
            if end_time > duration {
                return Err(field_err(p("end_time"), format!("exceeds duration {duration}")));
            }
            let phase_label = match eo.get("phase_label") {
                None | Some(Value::Null) => None,
                Some(Value::String(s)) => Some(s.clone()),
                Some(_) => return Err(field_err(p("phase_label"), "expected a string")),
            };
            events.push(EventAnnotation {
                start_time,
                end_time,
                caption_pedestrian: string(eo, "caption_pedestrian", &p("caption_pedestrian"))?,
                caption_vehicle: string(eo, "caption_vehicle", &p("caption_vehicle"))?,
                phase_label,
            });
        }
        events.sort_by(|a, b| a.start_time.total_cmp(&b.start_time));

        Ok(VideoAnnotation {
            video_id,
            fps,
            duration,
            camera_view,
            domain,
            events,
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text)?;
        Self::from_json(&value)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("annotation serializes")
    }
}

/// Reads and validates one annotation file.
pub fn parse_annotations(path: impl AsRef<Path>) -> Result<VideoAnnotation> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    VideoAnnotation::from_json_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"video_id": "v1", "fps": 10, "duration": 5, "camera_view": "vehicle",
        "domain": "wts_normal", "events": [{"start_time": 1.0, "end_time": 2.0,
        "caption_pedestrian": "a man walks", "caption_vehicle": "the car stops"}]}"#;

    fn with_events(events: &str) -> String {
        format!(
            r#"{{"video_id": "v", "fps": 10, "duration": 5, "camera_view": "overhead", "domain": "bdd", "events": {events}}}"#
        )
    }

    #[test]
    fn minimal_file_echoes_values() {
        let a = VideoAnnotation::from_json_str(MINIMAL).unwrap();
        assert_eq!(a.video_id, "v1");
        assert_eq!(a.fps, 10.0);
        assert_eq!(a.duration, 5.0);
        assert_eq!(a.camera_view, CameraView::Vehicle);
        assert_eq!(a.domain, Domain::WtsNormal);
        assert_eq!(a.events.len(), 1);
        assert_eq!((a.events[0].start_time, a.events[0].end_time), (1.0, 2.0));
        assert_eq!(a.events[0].caption(Agent::Vehicle), "the car stops");
        assert_eq!(a.events[0].phase_label, None);
    }

    #[test]
    fn degenerate_event_rejected() {
        let text = with_events(r#"[{"start_time": 1.0, "end_time": 1.0, "caption_pedestrian": "", "caption_vehicle": ""}]"#);
        match VideoAnnotation::from_json_str(&text) {
            Err(Error::Annotation { field, message }) => {
                assert_eq!(field, "events[0].end_time");
                assert!(message.contains("degenerate event"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn events_are_sorted() {
        let text = with_events(
            r#"[{"start_time": 3.0, "end_time": 4.0, "caption_pedestrian": "b", "caption_vehicle": "b"},
                {"start_time": 0.5, "end_time": 1.0, "caption_pedestrian": "a", "caption_vehicle": "a", "phase_label": "pre"}]"#,
        );
        let a = VideoAnnotation::from_json_str(&text).unwrap();
        let starts: Vec<f64> = a.events.iter().map(|e| e.start_time).collect();
        assert_eq!(starts, vec![0.5, 3.0]);
        assert_eq!(a.events[0].phase_label.as_deref(), Some("pre"));
    }

    #[test]
    fn errors_name_the_field() {
        let cases = [
            (r#"{"fps": 1, "duration": 1, "camera_view": "vehicle", "domain": "bdd", "events": []}"#, "video_id"),
            (&with_events(r#"[{"start_time": 2.0, "end_time": 1.0, "caption_pedestrian": "", "caption_vehicle": ""}]"#), "events[0].end_time"),
            (&with_events(r#"[{"start_time": 2.0, "end_time": 6.0, "caption_pedestrian": "", "caption_vehicle": ""}]"#), "events[0].end_time"),
            (&with_events(r#"[{"start_time": 2.0, "end_time": 3.0, "caption_vehicle": ""}]"#), "events[0].caption_pedestrian"),
            (r#"{"video_id": "x", "fps": 1, "duration": 1, "camera_view": "drone", "domain": "bdd", "events": []}"#, "camera_view"),
            (r#"{"video_id": "x", "fps": 0, "duration": 1, "camera_view": "vehicle", "domain": "bdd", "events": []}"#, "fps"),
        ];
        for (text, want) in cases {
            match VideoAnnotation::from_json_str(text) {
                Err(Error::Annotation { field, .. }) => assert_eq!(field, want),
                other => panic!("{want}: unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn round_trips_through_serde() {
        let a = VideoAnnotation::from_json_str(MINIMAL).unwrap();
        let b = VideoAnnotation::from_json_str(&a.to_json_string()).unwrap();
        assert_eq!(a, b);
    }
}
