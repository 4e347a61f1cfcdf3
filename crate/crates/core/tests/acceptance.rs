//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::time::Instant;

use densecap::datapipe::{
    build_vocabulary, generate_synthetic_dataset, Agent, Dataset, Domain, FeatureSequence, SyntheticSpec, Vocabulary,
    SPECIALS,
};
use densecap::diffcore::Tensor;
use densecap::inference::fit_report;
use densecap::matching::{counter_loss, focal_loss, hungarian_match, temporal_giou, LossWeights};
use densecap::metrics::{bleu4, cider, lcs_len, meteor, rouge_l, MeteorMode};
use densecap::model::{ModelConfig, VOCAB_OUT_BIAS, VOCAB_OUT_WEIGHT, WORD_EMBED};
use densecap::trainer::{
    check_loss_gradients, epoch_order, evaluate_loss, finetune, prepare_examples, resume, train, transfer_parameters,
    Checkpoint, TrainConfig, TrainingExample, GRAD_CHECK_EPS,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn err(e: densecap::Error) -> String {
    e.to_string()
}

fn gradient_integrity() -> Outcome {
    let cfg = ModelConfig::micro(8, 20);
    let t0 = Instant::now();
    let r = check_loss_gradients(&cfg, 0, GRAD_CHECK_EPS).map_err(err)?;
    let secs = t0.elapsed().as_secs_f64();
    let detail = format!("max rel err {:.3e} over {} entries, {secs:.1}s", r.max_rel_error, r.entries);
    ensure(r.max_rel_error < 1e-4 && r.max_rel_error.is_finite(), detail.clone())?;
    ensure(secs < 60.0, detail.clone())?;
    Ok(detail)
}

fn overfit() -> Outcome {
    let spec = SyntheticSpec {
        videos: 8,
        sigma: 0.05,
        ..SyntheticSpec::default()
    };
    let ds = Dataset::from_synthetic(&generate_synthetic_dataset(&spec, 7));
    let vocab = build_vocabulary(&ds.captions(Agent::Pedestrian), 1, "wts_normal").map_err(err)?;
    let model_cfg = ModelConfig::desk(spec.feature_dim, vocab.len());
    let cfg = TrainConfig {
        epochs: 200,
        seed: 7,
        workers: 1,
        ..TrainConfig::default()
    };
    let t0 = Instant::now();
    let ckpt = train(&cfg, &ds, &model_cfg, &vocab).map_err(err)?;
    let secs = t0.elapsed().as_secs_f64();

    let examples = prepare_examples(&ds, &vocab, &model_cfg, cfg.agent).map_err(err)?;
    let videos: Vec<_> = examples.into_iter().map(|e| (e.features, e.targets)).collect();
    let fit = fit_report(&ckpt.to_model().map_err(err)?, &videos, &cfg.loss).map_err(err)?;
    let ratio = ckpt.history.last().unwrap().total / ckpt.history[0].total;
    let blocks: Vec<f64> = ckpt.history.chunks(20).map(|c| c.iter().map(|h| h.total).sum::<f64>() / c.len() as f64).collect();
    let detail = format!(
        "loss ratio {ratio:.4}, captions {}/{} exact, mean IoU {:.4}, {secs:.1}s; 20-epoch means {:?}",
        fit.exact_captions,
        fit.events,
        fit.mean_iou,
        blocks.iter().map(|b| format!("{b:.3}")).collect::<Vec<_>>()
    );
    ensure(ratio < 0.1, format!("loss ratio: {detail}"))?;
    ensure(fit.caption_accuracy() >= 7.0 / 8.0, format!("captions: {detail}"))?;
    ensure(fit.mean_iou >= 0.9, format!("IoU: {detail}"))?;
    ensure(secs < 600.0, format!("runtime: {detail}"))?;
    Ok(detail)
}

fn brute_force_min(cost: &[Vec<f64>]) -> f64 {
    // assign every row of the smaller side to a distinct column
    let (n, m) = (cost.len(), cost[0].len());
    let at = |i: usize, j: usize| if n <= m { cost[i][j] } else { cost[j][i] };
    let (small, large) = (n.min(m), n.max(m));
    fn rec(i: usize, small: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64, at: &dyn Fn(usize, usize) -> f64) {
        if i == small {
            *best = best.min(acc);
            return;
        }
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                rec(i + 1, small, used, acc + at(i, j), best, at);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    rec(0, small, &mut vec![false; large], 0.0, &mut best, &at);
    best
}

fn matching_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut mismatches = 0;
    for k in 0..500 {
        let small = rng.random_range(1..=7);
        let large = rng.random_range(small..=8);
        let (n, m) = if rng.random_bool(0.5) { (small, large) } else { (large, small) };
        // every fifth matrix has small integer entries, so ties are common
        let cost: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..m)
                    .map(|_| if k % 5 == 0 { rng.random_range(0..4) as f64 } else { rng.random_range(-5.0..5.0) })
                    .collect()
            })
            .collect();
        let got = hungarian_match(&cost).map_err(err)?;
        let mut rows: Vec<usize> = got.queries();
        let mut cols: Vec<usize> = got.targets();
        rows.sort_unstable();
        rows.dedup();
        cols.sort_unstable();
        cols.dedup();
        let valid = got.pairs.len() == n.min(m) && rows.len() == n.min(m) && cols.len() == n.min(m);
        if !valid || (got.cost(&cost) - brute_force_min(&cost)).abs() > 1e-9 {
            mismatches += 1;
        }
    }
    ensure(mismatches == 0, format!("{mismatches} mismatches in 500 matrices"))?;
    Ok("500 matrices, 0 mismatches".into())
}

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

fn is_subsequence(sub: &[u8], seq: &[u8]) -> bool {
    let mut it = seq.iter();
    sub.iter().all(|x| it.any(|y| y == x))
}

fn lcs_brute(a: &[u8], b: &[u8]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let mut best = 0;
    for mask in 0u32..(1 << short.len()) {
        let len = mask.count_ones() as usize;
        if len <= best {
            continue;
        }
        let sub: Vec<u8> = (0..short.len()).filter(|i| mask >> i & 1 == 1).map(|i| short[i]).collect();
        if is_subsequence(&sub, long) {
            best = len;
        }
    }
    best
}

fn all_lists(max_len: usize) -> Vec<Vec<u8>> {
    let mut out = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for l in &frontier {
            for s in 0..3u8 {
                let mut v: Vec<u8> = l.clone();
                v.push(s);
                next.push(v);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

fn metric_oracles() -> Outcome {
    let b = bleu4(&toks("a b c d"), &[toks("a b c d e")]).map_err(err)?;
    ensure((b - 0.778801).abs() <= 1e-6, format!("bleu4 = {b}"))?;
    let r = rouge_l(&toks("a b c d"), &toks("a c b d"), 1.2);
    ensure(r == 0.75, format!("rouge_l = {r}"))?;
    let s = toks("the vehicle slows down");
    let m = meteor(&s, &s, 0.9, MeteorMode::Damped);
    ensure(m == 0.5, format!("meteor at P=R=1 = {m}"))?;
    let refs = vec![vec![toks("the car turns left now")], vec![toks("a man walks on road")]];
    let (items, _) = cider(&[toks("the car turns left now"), toks("x y z")], &refs, 4, 10.0).map_err(err)?;
    ensure((items[0] - 10.0).abs() <= 1e-9, format!("cider = {}", items[0]))?;

    // every pair of lists up to length 6, then every list up to length 10
    // against a random partner of length up to 10
    let short = all_lists(6);
    let mut checked = 0usize;
    for a in &short {
        for b in &short {
            if lcs_len(a, b) != lcs_brute(a, b) {
                return Err(format!("lcs mismatch on {a:?} / {b:?}"));
            }
            checked += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for a in all_lists(10) {
        let len = rng.random_range(0..=10);
        let b: Vec<u8> = (0..len).map(|_| rng.random_range(0..3)).collect();
        if lcs_len(&a, &b) != lcs_brute(&a, &b) {
            return Err(format!("lcs mismatch on {a:?} / {b:?}"));
        }
        checked += 1;
    }
    Ok(format!("bleu4 {b:.6}, rouge_l {r}, meteor {m}, cider {:.9}; {checked} LCS pairs agree", items[0]))
}

fn loss_terms() -> Outcome {
    let f = focal_loss(0.5, true, 0.25, 2.0).map_err(err)?;
    ensure((f - 0.043322).abs() <= 1e-6, format!("focal = {f}"))?;
    let c = counter_loss(&[1.0 / 11.0; 11], 4);
    ensure((c - 11f64.ln()).abs() <= 1e-9, format!("counter CE = {c}"))?;
    let g = temporal_giou((0.0, 2.0), (1.0, 3.0)).map_err(err)?;
    ensure(g == 1.0 / 3.0, format!("giou = {g}"))?;
    let w = LossWeights::default();
    let total = w.combine(1.0, 1.0, 1.0, 1.0);
    ensure(total == 5.0, format!("combined = {total}"))?;
    Ok(format!("focal {f:.6}, counter {c:.9}, giou {g}, combined {total}"))
}

fn small_setup(videos: usize, seed: u64, domain: Domain) -> (Dataset, Vocabulary, ModelConfig) {
    let spec = SyntheticSpec {
        videos,
        domain,
        ..SyntheticSpec::default()
    };
    let ds = Dataset::from_synthetic(&generate_synthetic_dataset(&spec, seed));
    let vocab = build_vocabulary(&ds.captions(Agent::Pedestrian), 1, domain.as_str()).expect("vocabulary");
    let cfg = ModelConfig::micro(spec.feature_dim, vocab.len());
    (ds, vocab, cfg)
}

fn quick(epochs: usize, domain: Domain) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 2,
        lr: 5e-3,
        seed: 4,
        domain,
        ..TrainConfig::default()
    }
}

fn knowledge_transfer() -> Outcome {
    let (src, sv, cfg) = small_setup(6, 1, Domain::Bdd);
    let pre = train(&quick(2, Domain::Bdd), &src, &cfg, &sv).map_err(err)?;

    // identical vocabularies: the first fine-tuning batch sees the pretrained model
    let ft_cfg = quick(1, Domain::Bdd);
    let ft = finetune(&pre, &sv, &src, &ft_cfg).map_err(err)?;
    let examples = prepare_examples(&src, &sv, &cfg, Agent::Pedestrian).map_err(err)?;
    let order = epoch_order(ft_cfg.seed, 0, examples.len());
    let first: Vec<TrainingExample> = order[..ft_cfg.batch_size].iter().map(|&i| examples[i].clone()).collect();
    let expected = evaluate_loss(&pre.to_model().map_err(err)?, &first, &ft_cfg.loss).map_err(err)?.total;
    ensure(
        ft.batch_losses[0].to_bits() == expected.to_bits(),
        format!("first batch {} vs pretrained {expected}", ft.batch_losses[0]),
    )?;

    // partial overlap: shared rows carried over bit for bit
    let (tgt, tv, _) = small_setup(4, 2, Domain::WtsEvent);
    let target_cfg = ModelConfig {
        vocab_size: tv.len(),
        ..cfg.clone()
    };
    let moved = transfer_parameters(&pre, &target_cfg, &tv, quick(0, Domain::WtsEvent).seed).map_err(err)?;
    let shared: Vec<&String> = tv.tokens()[SPECIALS.len()..].iter().filter(|t| sv.id(t).is_some()).collect();
    let fresh = tv.len() - SPECIALS.len() - shared.len();
    ensure(!shared.is_empty() && fresh > 0, format!("overlap is not partial: {} shared, {fresh} new", shared.len()))?;
    let p = |ck: &densecap::model::ParamStore, n: &str| ck.by_name(n).cloned().expect("parameter");
    let (pe, pw, pb) = (p(&pre.params, WORD_EMBED), p(&pre.params, VOCAB_OUT_WEIGHT), p(&pre.params, VOCAB_OUT_BIAS));
    let (me, mw, mb) = (p(&moved.params, WORD_EMBED), p(&moved.params, VOCAB_OUT_WEIGHT), p(&moved.params, VOCAB_OUT_BIAS));
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    for tok in &shared {
        let (s, t) = (sv.id(tok).unwrap(), tv.id(tok).unwrap());
        ensure(bits(me.row(t)) == bits(pe.row(s)), format!("embedding row of `{tok}` differs"))?;
        ensure(mb.data()[t].to_bits() == pb.data()[s].to_bits(), format!("output bias of `{tok}` differs"))?;
        ensure(
            (0..mw.rows()).all(|r| mw.row(r)[t].to_bits() == pw.row(r)[s].to_bits()),
            format!("output column of `{tok}` differs"),
        )?;
    }
    // and the fine-tuning run starts from exactly that model
    let start = finetune(&pre, &tv, &tgt, &TrainConfig { epochs: 0, ..quick(0, Domain::WtsEvent) }).map_err(err)?;
    ensure(start.params == moved.params, "finetune initialisation differs from the transferred parameters")?;
    Ok(format!(
        "first batch loss {expected:.6} reproduced bit-exactly; {} shared rows equal, {fresh} new tokens",
        shared.len()
    ))
}

fn determinism() -> Outcome {
    let (ds, vocab, cfg) = small_setup(5, 11, Domain::WtsNormal);
    let tc = quick(4, Domain::WtsNormal);
    let a = train(&tc, &ds, &cfg, &vocab).map_err(err)?;
    let b = train(&tc, &ds, &cfg, &vocab).map_err(err)?;
    let hist = |c: &Checkpoint| c.history.iter().map(|h| h.total.to_bits()).collect::<Vec<_>>();
    ensure(hist(&a) == hist(&b) && a.batch_losses == b.batch_losses, "loss histories differ")?;

    let bytes = a.to_bytes();
    let back = Checkpoint::from_bytes(&bytes).map_err(err)?;
    ensure(back.to_bytes() == bytes, "checkpoint bytes change on round trip")?;
    ensure(back.params == a.params && back.adam == a.adam, "checkpoint state changes on round trip")?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("half.dckp");
    densecap::trainer::save_checkpoint(&train(&quick(2, Domain::WtsNormal), &ds, &cfg, &vocab).map_err(err)?, &path).map_err(err)?;
    let resumed = resume(densecap::trainer::load_checkpoint(&path).map_err(err)?, &ds, 2).map_err(err)?;
    let same = resumed.params == a.params
        && resumed.adam == a.adam
        && hist(&resumed) == hist(&a)
        && resumed.batch_losses == a.batch_losses;
    ensure(same, "resumed run differs from the uninterrupted run")?;
    Ok(format!("{} epochs, {} checkpoint bytes, resume identical", a.history.len(), bytes.len()))
}

fn format_conformance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let m = Tensor::matrix(6, 5, (0..30).map(|_| rng.random_range(-2.0..2.0f32) as f64).collect()).map_err(err)?;
    let fs = FeatureSequence::new("v", 2.5, m).map_err(err)?;
    let fb = fs.to_bytes();
    ensure(FeatureSequence::from_bytes("v", &fb).map_err(err)? == fs, "feature file does not round-trip")?;
    for cut in 0..fb.len() {
        ensure(FeatureSequence::from_bytes("v", &fb[..cut]).is_err(), format!("feature file truncated to {cut} accepted"))?;
    }
    let mut extra = fb.clone();
    extra.push(0);
    ensure(FeatureSequence::from_bytes("v", &extra).is_err(), "feature file with trailing byte accepted")?;
    let corrupt = |at: usize, val: &[u8]| {
        let mut c = fb.clone();
        c[at..at + val.len()].copy_from_slice(val);
        c
    };
    for (what, bad) in [
        ("magic", corrupt(0, b"XCFT")),
        ("version", corrupt(4, &2u32.to_le_bytes())),
        ("frame count", corrupt(8, &7u32.to_le_bytes())),
        ("dimension", corrupt(12, &0u32.to_le_bytes())),
        ("fps", corrupt(16, &(-1.0f32).to_le_bytes())),
        ("payload", corrupt(24, &f32::NAN.to_le_bytes())),
    ] {
        ensure(FeatureSequence::from_bytes("v", &bad).is_err(), format!("feature file with bad {what} accepted"))?;
    }

    let (ds, vocab, cfg) = small_setup(2, 3, Domain::WtsNormal);
    let ck = train(&quick(1, Domain::WtsNormal), &ds, &cfg, &vocab).map_err(err)?;
    let cb = ck.to_bytes();
    ensure(Checkpoint::from_bytes(&cb).map_err(err)?.to_bytes() == cb, "checkpoint does not round-trip")?;
    let step = (cb.len() / 97).max(1);
    let mut cuts = 0;
    for cut in (0..cb.len()).step_by(step).chain([cb.len() - 1]) {
        ensure(Checkpoint::from_bytes(&cb[..cut]).is_err(), format!("checkpoint truncated to {cut} accepted"))?;
        cuts += 1;
    }
    let mut flips = 0;
    for at in (0..cb.len()).step_by(step).chain([cb.len() - 1]) {
        let mut c = cb.clone();
        c[at] ^= 0x10;
        ensure(Checkpoint::from_bytes(&c).is_err(), format!("checkpoint with flipped byte {at} accepted"))?;
        flips += 1;
    }
    Ok(format!(
        "feature file: {} truncations and 7 corruptions rejected; checkpoint: {cuts} truncations and {flips} bit flips rejected",
        fb.len()
    ))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("gradient integrity", gradient_integrity),
        ("overfit", overfit),
        ("matching oracle", matching_oracle),
        ("metric oracles", metric_oracles),
        ("loss-term values", loss_terms),
        ("knowledge-transfer exactness", knowledge_transfer),
        ("determinism and persistence", determinism),
        ("format conformance", format_conformance),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        match run() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
