use super::*;
use crate::datapipe::{build_vocabulary, generate_synthetic_dataset, Agent, Dataset, SyntheticSpec, Vocabulary, SPECIALS};
use crate::error::Error;
use crate::model::{ModelConfig, Pdvc, VOCAB_OUT_BIAS, VOCAB_OUT_WEIGHT, WORD_EMBED};

fn setup(videos: usize) -> (Dataset, Vocabulary, ModelConfig) {
    let spec = SyntheticSpec {
        videos,
        ..SyntheticSpec::default()
    };
    let ds = Dataset::from_synthetic(&generate_synthetic_dataset(&spec, 11));
    let vocab = build_vocabulary(&ds.captions(Agent::Pedestrian), 1, "wts_normal").unwrap();
    let cfg = ModelConfig::micro(spec.feature_dim, vocab.len());
    (ds, vocab, cfg)
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 2,
        lr: 5e-3,
        seed: 4,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_epochs_returns_the_initialisation() {
    let (ds, vocab, cfg) = setup(3);
    let ck = train(&quick(0), &ds, &cfg, &vocab).unwrap();
    assert_eq!(ck.params, Pdvc::new(cfg, 4).unwrap().params);
    assert!(ck.history.is_empty() && ck.batch_losses.is_empty());
    assert_eq!(ck.adam.step, 0);
}

#[test]
fn training_is_deterministic_and_steps_per_batch() {
    let (ds, vocab, cfg) = setup(5);
    let a = train(&quick(2), &ds, &cfg, &vocab).unwrap();
    let b = train(&quick(2), &ds, &cfg, &vocab).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.history.len(), 2);
    // 5 videos in batches of 2 -> 3 steps per epoch
    assert_eq!(a.adam.step, 6);
    assert_eq!(a.batch_losses.len(), 6);
    let threaded = train(&TrainConfig { workers: 3, ..quick(2) }, &ds, &cfg, &vocab).unwrap();
    assert_eq!(threaded.params, a.params);
    assert_eq!(threaded.history, a.history);
    let other = train(&TrainConfig { seed: 5, ..quick(2) }, &ds, &cfg, &vocab).unwrap();
    assert_ne!(a.history, other.history);
}

#[test]
fn empty_dataset_and_bad_dims_are_errors() {
    let (ds, vocab, cfg) = setup(2);
    assert!(train(&quick(1), &Dataset::default(), &cfg, &vocab).is_err());
    let wrong = ModelConfig {
        feature_dim: cfg.feature_dim * 2,
        ..cfg
    };
    assert!(matches!(train(&quick(1), &ds, &wrong, &vocab), Err(Error::Shape(_))));
}

#[test]
fn epoch_orders_are_permutations_that_differ_between_epochs() {
    let a = epoch_order(1, 0, 20);
    let b = epoch_order(1, 1, 20);
    let mut s = a.clone();
    s.sort();
    assert_eq!(s, (0..20).collect::<Vec<_>>());
    assert_ne!(a, b);
    assert_eq!(a, epoch_order(1, 0, 20));
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let (ds, vocab, cfg) = setup(3);
    let ck = train(&quick(1), &ds, &cfg, &vocab).unwrap();
    let bytes = ck.to_bytes();
    assert_eq!(&bytes[..4], CHECKPOINT_MAGIC);
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back, ck);
    for (a, b) in back.params.tensors().iter().zip(ck.params.tensors()) {
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    assert_eq!(back.to_bytes(), bytes);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.dckp");
    save_checkpoint(&ck, &path).unwrap();
    assert_eq!(load_checkpoint(&path).unwrap(), ck);
}

#[test]
fn corrupt_truncated_and_foreign_checkpoints_are_rejected() {
    let (ds, vocab, cfg) = setup(2);
    let bytes = train(&quick(0), &ds, &cfg, &vocab).unwrap().to_bytes();

    let mut bad = bytes.clone();
    let mid = bad.len() / 2;
    bad[mid] ^= 0x40;
    assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Checksum { .. })));

    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 9]).is_err());
    assert!(Checkpoint::from_bytes(&bytes[..10]).is_err());

    let mut newer = bytes[..bytes.len() - 4].to_vec();
    newer[4..8].copy_from_slice(&(CHECKPOINT_VERSION + 1).to_le_bytes());
    let crc = crc32fast::hash(&newer);
    newer.extend_from_slice(&crc.to_le_bytes());
    assert!(matches!(Checkpoint::from_bytes(&newer), Err(Error::Version { found: 2, .. })));

    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&magic), Err(Error::Format(_))));
}

#[test]
fn resuming_matches_an_uninterrupted_run() {
    let (ds, vocab, cfg) = setup(5);
    let full = train(&quick(3), &ds, &cfg, &vocab).unwrap();
    let first = train(&quick(1), &ds, &cfg, &vocab).unwrap();
    let reloaded = Checkpoint::from_bytes(&first.to_bytes()).unwrap();
    let resumed = resume(reloaded, &ds, 2).unwrap();
    assert_eq!(resumed.params, full.params);
    assert_eq!(resumed.adam, full.adam);
    assert_eq!(resumed.history, full.history);
    assert_eq!(resumed.batch_losses, full.batch_losses);
}

#[test]
fn finetune_with_identical_vocabulary_preserves_the_first_loss() {
    let (ds, vocab, cfg) = setup(4);
    let pre = train(&quick(1), &ds, &cfg, &vocab).unwrap();
    let moved = transfer_parameters(&pre, &cfg, &vocab, 99).unwrap();
    assert_eq!(moved.params, pre.params);

    let ft_cfg = TrainConfig { epochs: 1, ..quick(1) };
    let ft = finetune(&pre, &vocab, &ds, &ft_cfg).unwrap();
    assert_eq!(ft.stage, Stage::Finetune);
    let examples = prepare_examples(&ds, &vocab, &cfg, Agent::Pedestrian).unwrap();
    let order = epoch_order(ft_cfg.seed, 0, examples.len());
    let first: Vec<TrainingExample> = order[..ft_cfg.batch_size].iter().map(|&i| examples[i].clone()).collect();
    let expected = evaluate_loss(&pre.to_model().unwrap(), &first, &ft_cfg.loss).unwrap();
    assert_eq!(ft.batch_losses[0], expected.total);
}

#[test]
fn finetune_remaps_vocabulary_rows() {
    let (ds, vocab, cfg) = setup(2);
    let pre = train(&quick(0), &ds, &cfg, &vocab).unwrap();
    let shared = vocab.token(SPECIALS.len() + 1).unwrap().to_string();
    let target_vocab = build_vocabulary(&[format!("zebra {shared} quokka")], 1, "wts_event").unwrap();
    let target = ModelConfig {
        vocab_size: target_vocab.len(),
        ..cfg.clone()
    };
    let moved = transfer_parameters(&pre, &target, &target_vocab, 7).unwrap();
    let fresh = Pdvc::new(target.clone(), 7).unwrap();
    let (s, t) = (vocab.id(&shared).unwrap(), target_vocab.id(&shared).unwrap());
    let emb = moved.params.by_name(WORD_EMBED).unwrap();
    assert_eq!(emb.row(t), pre.params.by_name(WORD_EMBED).unwrap().row(s));
    assert_eq!(
        moved.params.by_name(VOCAB_OUT_BIAS).unwrap().data()[t],
        pre.params.by_name(VOCAB_OUT_BIAS).unwrap().data()[s]
    );
    let (mw, pw) = (moved.params.by_name(VOCAB_OUT_WEIGHT).unwrap(), pre.params.by_name(VOCAB_OUT_WEIGHT).unwrap());
    for r in 0..mw.rows() {
        assert_eq!(mw.row(r)[t], pw.row(r)[s]);
    }
    for tok in ["zebra", "quokka"] {
        let id = target_vocab.id(tok).unwrap();
        assert_eq!(emb.row(id), fresh.params.by_name(WORD_EMBED).unwrap().row(id));
    }
    for sp in 0..SPECIALS.len() {
        assert_eq!(emb.row(sp), pre.params.by_name(WORD_EMBED).unwrap().row(sp));
    }
    assert_eq!(moved.params.by_name("loc.2.weight"), pre.params.by_name("loc.2.weight"));
}

#[test]
fn disjoint_vocabularies_copy_only_vocabulary_free_parameters() {
    let (ds, vocab, cfg) = setup(2);
    let pre = train(&quick(0), &ds, &cfg, &vocab).unwrap();
    let target_vocab = build_vocabulary(&["zebra quokka okapi"], 1, "x").unwrap();
    let target = ModelConfig {
        vocab_size: target_vocab.len(),
        ..cfg
    };
    let moved = transfer_parameters(&pre, &target, &target_vocab, 3).unwrap();
    let fresh = Pdvc::new(target, 3).unwrap();
    for (name, t) in moved.params.iter() {
        if name == WORD_EMBED {
            for id in SPECIALS.len()..target_vocab.len() {
                assert_eq!(t.row(id), fresh.params.by_name(name).unwrap().row(id));
            }
        } else if name != VOCAB_OUT_WEIGHT && name != VOCAB_OUT_BIAS {
            assert_eq!(Some(t), pre.params.by_name(name), "{name}");
        }
    }
}

#[test]
fn transfer_rejects_incompatible_models() {
    let (ds, vocab, cfg) = setup(2);
    let pre = train(&quick(0), &ds, &cfg, &vocab).unwrap();
    let wide = ModelConfig {
        d_model: cfg.d_model * 2,
        ..cfg.clone()
    };
    assert!(matches!(transfer_parameters(&pre, &wide, &vocab, 0), Err(Error::Shape(_))));
    let deeper = ModelConfig {
        dec_layers: cfg.dec_layers + 1,
        ..cfg
    };
    assert!(transfer_parameters(&pre, &deeper, &vocab, 0).is_err());
}
