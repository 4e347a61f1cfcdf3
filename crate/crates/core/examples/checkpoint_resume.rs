//! Saves a checkpoint mid-training, reloads it and resumes; the result is
//! identical to training straight through.

use densecap::datapipe::{build_vocabulary, generate_synthetic_dataset, Agent, Dataset, SyntheticSpec};
use densecap::model::ModelConfig;
use densecap::trainer::{load_checkpoint, resume, save_checkpoint, train, TrainConfig};

fn main() -> densecap::Result<()> {
    let ds = Dataset::from_synthetic(&generate_synthetic_dataset(&SyntheticSpec::default(), 3));
    let vocab = build_vocabulary(&ds.captions(Agent::Pedestrian), 1, "wts_normal")?;
    let model_cfg = ModelConfig::micro(32, vocab.len());
    let cfg = |epochs| TrainConfig { epochs, seed: 1, ..TrainConfig::default() };

    let straight = train(&cfg(4), &ds, &model_cfg, &vocab)?;

    let path = std::env::temp_dir().join("densecap_resume_demo.dckp");
    save_checkpoint(&train(&cfg(2), &ds, &model_cfg, &vocab)?, &path)?;
    let resumed = resume(load_checkpoint(&path)?, &ds, 2)?;

    println!("epoch losses (straight): {:?}", straight.history.iter().map(|h| h.total).collect::<Vec<_>>());
    println!("epoch losses (resumed):  {:?}", resumed.history.iter().map(|h| h.total).collect::<Vec<_>>());
    println!("parameters identical: {}", resumed.params == straight.params);
    println!("optimiser state identical: {}", resumed.adam == straight.adam);
    Ok(())
}
