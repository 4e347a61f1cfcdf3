//! Desk-scale synthetic videos whose captions are recoverable from their
//! features.
//!
//! Every caption slot value (subject, action, place, manoeuvre, speed) owns a
//! fixed random "concept" vector. Frames inside an event hold the sum of the
//! concept vectors of that event's captions; every frame gets Gaussian noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::annotation::{CameraView, Domain, EventAnnotation, VideoAnnotation};
use super::features::FeatureSequence;
use crate::diffcore::Tensor;

const SUBJECTS: [&str; 5] = ["the pedestrian", "the child", "the cyclist", "the woman", "the man"];
const ACTIONS: [&str; 5] = ["walks", "stands still", "runs", "crosses the road", "looks at the vehicle"];
const PLACES: [&str; 4] = ["on the left", "on the right", "in front of the vehicle", "near the curb"];
const MANOEUVRES: [&str; 5] = [
    "the vehicle goes straight",
    "the vehicle turns left",
    "the vehicle turns right",
    "the vehicle slows down",
    "the vehicle stops",
];
const SPEEDS: [&str; 4] = ["5", "10", "20", "30"];

const PHASES: [&str; 3] = ["recognition", "judgement", "action"];

/// Slot values each domain draws from; overlapping but not identical, so
/// domain vocabularies differ.
fn domain_slots(domain: Domain) -> [&'static [usize]; 5] {
    match domain {
        Domain::Bdd => [&[0, 1, 2], &[0, 1, 2, 3], &[0, 1, 2], &[0, 1, 2, 3], &[1, 2, 3]],
        Domain::WtsNormal => [&[0, 3], &[0, 1, 3], &[0, 1, 3], &[0, 1, 2], &[0, 1, 2]],
        Domain::WtsEvent => [&[0, 4], &[2, 3, 4], &[1, 2, 3], &[3, 4], &[0, 1, 3]],
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub videos: usize,
    pub feature_dim: usize,
    pub fps: f64,
    /// Inclusive frame-count range per video.
    pub min_frames: usize,
    pub max_frames: usize,
    pub max_events: usize,
    pub sigma: f64,
    pub domain: Domain,
    pub camera_view: CameraView,
    /// Seed of the concept vectors; shared across datasets so that different
    /// domains describe the same visual world.
    pub concept_seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            videos: 8,
            feature_dim: 32,
            fps: 2.0,
            min_frames: 12,
            max_frames: 20,
            max_events: 3,
            sigma: 0.05,
            domain: Domain::WtsNormal,
            camera_view: CameraView::Vehicle,
            concept_seed: 0x5eed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceCaption {
    pub video_id: String,
    pub event_index: usize,
    pub caption_pedestrian: String,
    pub caption_vehicle: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset {
    pub annotations: Vec<VideoAnnotation>,
    pub features: Vec<FeatureSequence>,
    pub references: Vec<ReferenceCaption>,
}

struct Concepts {
    /// One table per slot kind, one vector per slot value.
    tables: [Vec<Vec<f64>>; 5],
}

impl Concepts {
    fn new(seed: u64, dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sizes = [SUBJECTS.len(), ACTIONS.len(), PLACES.len(), MANOEUVRES.len(), SPEEDS.len()];
        let tables = sizes.map(|n| {
            (0..n)
                .map(|_| (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect())
                .collect()
        });
        Concepts { tables }
    }
}

/// Generates a dataset; identical `(spec, seed)` give identical output.
pub fn generate_synthetic_dataset(spec: &SyntheticSpec, seed: u64) -> SyntheticDataset {
    assert!(spec.videos > 0 && spec.feature_dim > 0 && spec.fps > 0.0);
    assert!(spec.min_frames >= 1 && spec.min_frames <= spec.max_frames && spec.max_events >= 1);

    let concepts = Concepts::new(spec.concept_seed, spec.feature_dim);
    let slots = domain_slots(spec.domain);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spec.sigma.max(0.0)).expect("valid sigma");

    let mut out = SyntheticDataset {
        annotations: Vec::with_capacity(spec.videos),
        features: Vec::with_capacity(spec.videos),
        references: Vec::new(),
    };
    for v in 0..spec.videos {
        let video_id = format!("{}_{seed}_{v:04}", spec.domain);
        let frames = rng.random_range(spec.min_frames..=spec.max_frames);
        let k = rng.random_range(1..=spec.max_events.min(frames));
        let d = spec.feature_dim;

        let mut matrix = vec![0.0; frames * d];
        if spec.sigma > 0.0 {
            for x in matrix.iter_mut() {
                *x = noise.sample(&mut rng);
            }
        }

        let mut events = Vec::with_capacity(k);
        for e in 0..k {
            let (lo, hi) = (e * frames / k, (e + 1) * frames / k);
            let width = hi - lo;
            let min_len = ((0.4 * width as f64).ceil() as usize).max(1);
            let max_len = ((0.9 * width as f64).floor() as usize).max(min_len);
            let len = rng.random_range(min_len..=max_len);
            let start = rng.random_range(lo..=hi - len);

            let pick: Vec<usize> = slots.iter().map(|s| s[rng.random_range(0..s.len())]).collect();
            let caption_pedestrian = format!("{} {} {} .", SUBJECTS[pick[0]], ACTIONS[pick[1]], PLACES[pick[2]]);
            let caption_vehicle = format!("{} at {} km / h .", MANOEUVRES[pick[3]], SPEEDS[pick[4]]);

            for t in start..start + len {
                for (kind, &value) in pick.iter().enumerate() {
                    let c = &concepts.tables[kind][value];
                    for j in 0..d {
                        matrix[t * d + j] += c[j];
                    }
                }
            }
            events.push(EventAnnotation {
                start_time: start as f64 / spec.fps,
                end_time: (start + len) as f64 / spec.fps,
                caption_pedestrian: caption_pedestrian.clone(),
                caption_vehicle: caption_vehicle.clone(),
                phase_label: Some(PHASES[e % PHASES.len()].to_string()),
            });
            out.references.push(ReferenceCaption {
                video_id: video_id.clone(),
                event_index: e,
                caption_pedestrian,
                caption_vehicle,
            });
        }

        out.annotations.push(VideoAnnotation {
            video_id: video_id.clone(),
            fps: spec.fps,
            duration: frames as f64 / spec.fps,
            camera_view: spec.camera_view,
            domain: spec.domain,
            events,
        });
        let m = Tensor::matrix(frames, d, matrix).expect("shape");
        out.features
            .push(FeatureSequence::new(video_id, spec.fps, m).expect("finite features"));
    }
    out
}
