//! Scores candidate captions with BLEU-4, METEOR, ROUGE-L and CIDEr.

use densecap::metrics::{score_pairs, EvalPair, MeteorMode, MetricConfig};

fn main() -> densecap::Result<()> {
    let pair = |id: &str, c: &str, r: &[&str]| EvalPair {
        id: id.into(),
        candidate: c.into(),
        references: r.iter().map(|s| s.to_string()).collect(),
    };
    let pairs = vec![
        pair("v1", "the vehicle turns left at 10 km/h.", &["the vehicle turns left at 10 km/h."]),
        pair("v2", "the man walks on the right.", &["the man walks near the curb.", "a man walks on the right."]),
        pair("v3", "the child runs.", &["the pedestrian stands still in front of the vehicle."]),
    ];
    let report = score_pairs(&pairs, &MetricConfig::default())?;
    print!("{}", report.to_table());

    let fmean = MetricConfig { meteor_mode: MeteorMode::Fmean, ..MetricConfig::default() };
    println!("METEOR, standard F-mean mode: {:.4}", score_pairs(&pairs, &fmean)?.meteor);
    Ok(())
}
