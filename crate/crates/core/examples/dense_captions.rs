//! Trains a small model, then produces dense captions for one video in both
//! modes: free (event counter picks N) and fixed target segments.

use densecap::datapipe::{build_vocabulary, generate_synthetic_dataset, Agent, Dataset, SyntheticSpec};
use densecap::inference::{match_proposals_to_segments, predict_video, render_output, Selection};
use densecap::model::ModelConfig;
use densecap::postproc::PostprocRules;
use densecap::trainer::{train, TrainConfig};

fn main() -> densecap::Result<()> {
    let ds = Dataset::from_synthetic(&generate_synthetic_dataset(&SyntheticSpec::default(), 7));
    let agent = Agent::Vehicle;
    let vocab = build_vocabulary(&ds.captions(agent), 1, "wts_normal")?;
    let cfg = TrainConfig { epochs: 120, agent, seed: 7, ..TrainConfig::default() };
    let ckpt = train(&cfg, &ds, &ModelConfig::desk(32, vocab.len()), &vocab)?;
    let model = ckpt.to_model()?;

    let video = &ds.samples[0];
    let duration = video.annotation.duration;
    let rules = PostprocRules::default();
    println!("ground truth:");
    for e in &video.annotation.events {
        println!("  [{:.2}, {:.2}] {}", e.start_time, e.end_time, e.caption_vehicle);
    }

    let free = predict_video(&model, &video.features, 0.0, Selection::Counter)?;
    let out = render_output(&free, &video.annotation.video_id, agent, duration, &vocab, &rules)?;
    println!("free mode:\n{}", out.to_json());

    let all = predict_video(&model, &video.features, 0.0, Selection::AllQueries)?;
    let segments = [(0.0, 0.5), (0.5, 1.0)];
    for (i, (s, e)) in match_proposals_to_segments(&all, &segments)?.into_iter().zip(segments) {
        let one = render_output(&all[i..=i], "", agent, duration, &vocab, &rules)?;
        println!("segment [{:.2}, {:.2}] <- query {}: {}", s * duration, e * duration, all[i].query, one.events[0].caption);
    }
    Ok(())
}
