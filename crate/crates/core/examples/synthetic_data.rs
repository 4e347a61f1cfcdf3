//! Generates a synthetic dataset, writes it to disk, reads it back and
//! builds a per-domain vocabulary and trim plans.
//!
//! cargo run --example synthetic_data -- [out_dir]

use densecap::datapipe::{
    build_vocabulary, compute_trim_plan, generate_synthetic_dataset, tokenize, write_synthetic, Agent, Dataset,
    SyntheticSpec,
};

fn main() -> densecap::Result<()> {
    let out = std::env::args().nth(1).map(std::path::PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("densecap_synthetic"));
    let synth = generate_synthetic_dataset(&SyntheticSpec::default(), 7);
    write_synthetic(&synth, &out)?;
    let ds = Dataset::load(out.join("annotations"), out.join("features"))?;
    println!("{} videos under {}", ds.len(), out.display());

    for agent in [Agent::Pedestrian, Agent::Vehicle] {
        let vocab = build_vocabulary(&ds.captions(agent), 1, "wts_normal")?;
        println!("{agent} vocabulary: {} tokens", vocab.len());
        let first = &ds.samples[0].annotation.events[0];
        println!("  {:?} -> {:?}", first.caption(agent), tokenize(first.caption(agent), &vocab));
    }

    let s = &ds.samples[0];
    println!(
        "{}: {} frames x {} dims, {:.1}s",
        s.annotation.video_id,
        s.features.frames(),
        s.features.dim(),
        s.features.duration()
    );
    for seg in compute_trim_plan(&s.annotation).segments {
        println!("  event {} -> frames [{}, {})", seg.event_index, seg.start_frame, seg.end_frame);
    }
    Ok(())
}
