//! Pretrains on the large source domain, then fine-tunes on a target domain
//! with a different vocabulary. Shared tokens keep their pretrained rows.

use densecap::datapipe::{build_vocabulary, generate_synthetic_dataset, Agent, Dataset, Domain, SyntheticSpec};
use densecap::model::{ModelConfig, WORD_EMBED};
use densecap::trainer::{finetune, train, TrainConfig};

fn main() -> densecap::Result<()> {
    let source_spec = SyntheticSpec { videos: 16, domain: Domain::Bdd, ..SyntheticSpec::default() };
    let target_spec = SyntheticSpec { videos: 6, domain: Domain::WtsEvent, ..SyntheticSpec::default() };
    let source = Dataset::from_synthetic(&generate_synthetic_dataset(&source_spec, 1));
    let target = Dataset::from_synthetic(&generate_synthetic_dataset(&target_spec, 2));
    let agent = Agent::Vehicle;
    let sv = build_vocabulary(&source.captions(agent), 1, "bdd")?;
    let tv = build_vocabulary(&target.captions(agent), 1, "wts_event")?;

    let pre_cfg = TrainConfig { epochs: 20, batch_size: 8, domain: Domain::Bdd, agent, ..TrainConfig::default() };
    let pre = train(&pre_cfg, &source, &ModelConfig::desk(32, sv.len()), &sv)?;
    println!("pretrained: loss {:.3} -> {:.3}", pre.history[0].total, pre.history.last().unwrap().total);

    let ft_cfg = TrainConfig { epochs: 20, domain: Domain::WtsEvent, agent, ..TrainConfig::default() };
    let ft = finetune(&pre, &tv, &target, &ft_cfg)?;
    println!("fine-tuned at lr {}: loss {:.3} -> {:.3}", ft_cfg.lr_finetune, ft.history[0].total, ft.history.last().unwrap().total);

    let shared: Vec<&str> = tv.tokens()[4..].iter().filter(|t| sv.id(t).is_some()).map(String::as_str).collect();
    let fresh = tv.len() - 4 - shared.len();
    println!("{} shared tokens, {fresh} new tokens", shared.len());
    if let Some(tok) = shared.first() {
        let before = pre.params.by_name(WORD_EMBED).unwrap().row(sv.id(tok).unwrap())[0];
        let after = ft.params.by_name(WORD_EMBED).unwrap().row(tv.id(tok).unwrap())[0];
        println!("`{tok}` embedding[0]: pretrained {before:.4}, after fine-tuning {after:.4}");
    }
    Ok(())
}
