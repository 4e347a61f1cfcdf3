use std::fs;
use std::path::Path;

use super::annotation::{parse_annotations, Agent, Domain, VideoAnnotation};
use super::features::FeatureSequence;
use super::synthetic::SyntheticDataset;
use crate::error::{Error, Result};

/// An annotated video paired with its frame features.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoSample {
    pub annotation: VideoAnnotation,
    pub features: FeatureSequence,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<VideoSample>,
}

impl Dataset {
    pub fn from_synthetic(ds: &SyntheticDataset) -> Self {
        let samples = ds
            .annotations
            .iter()
            .zip(&ds.features)
            .map(|(a, f)| VideoSample {
                annotation: a.clone(),
                features: f.clone(),
            })
            .collect();
        Dataset { samples }
    }

    /// Pairs `<id>.json` annotations with `<id>.dcft` feature files, ordered
    /// by video id.
    pub fn load(annotations_dir: impl AsRef<Path>, features_dir: impl AsRef<Path>) -> Result<Self> {
        let adir = annotations_dir.as_ref();
        let fdir = features_dir.as_ref();
        let mut paths: Vec<_> = fs::read_dir(adir)
            .map_err(|e| Error::io(adir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        let mut samples = Vec::with_capacity(paths.len());
        for p in paths {
            let annotation = parse_annotations(&p)?;
            let fpath = fdir.join(format!("{}.dcft", annotation.video_id));
            let mut features = FeatureSequence::load(&fpath)?;
            features.video_id = annotation.video_id.clone();
            samples.push(VideoSample { annotation, features });
        }
        samples.sort_by(|a, b| a.annotation.video_id.cmp(&b.annotation.video_id));
        Ok(Dataset { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn filter_domain(&self, domain: Domain) -> Dataset {
        Dataset {
            samples: self
                .samples
                .iter()
                .filter(|s| s.annotation.domain == domain)
                .cloned()
                .collect(),
        }
    }

    /// Every caption of `agent`, in dataset order.
    pub fn captions(&self, agent: Agent) -> Vec<String> {
        self.samples
            .iter()
            .flat_map(|s| s.annotation.events.iter().map(move |e| e.caption(agent).to_string()))
            .collect()
    }
}

/// Writes `annotations/<id>.json`, `features/<id>.dcft` and
/// `references.json` under `dir`.
pub fn write_synthetic(ds: &SyntheticDataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let adir = dir.join("annotations");
    let fdir = dir.join("features");
    for d in [&adir, &fdir] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    for (a, f) in ds.annotations.iter().zip(&ds.features) {
        let p = adir.join(format!("{}.json", a.video_id));
        fs::write(&p, a.to_json_string()).map_err(|e| Error::io(&p, e))?;
        f.save(fdir.join(format!("{}.dcft", f.video_id)))?;
    }
    let p = dir.join("references.json");
    fs::write(&p, serde_json::to_string_pretty(&ds.references)?).map_err(|e| Error::io(&p, e))
}
