use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{GradCheckConfig, RunConfig};
use super::Command;
use crate::datapipe::{
    build_vocabulary, compute_trim_plan, generate_synthetic_dataset, parse_annotations, write_synthetic, Agent, Dataset,
    Domain, FeatureSequence, SyntheticSpec, Vocabulary,
};
use crate::error::{Error, Result};
use crate::inference::{match_proposals_to_segments, predict_video, render_output, EventPrediction, Selection};
use crate::matching::LossBreakdown;
use crate::metrics::{load_eval_pairs, score_pairs, MetricConfig};
use crate::model::{ModelConfig, Pdvc};
use crate::postproc::PostprocRules;
use crate::trainer::{
    check_loss_gradients, evaluate_loss, finetune, load_checkpoint, prepare_examples, epoch_order, save_checkpoint,
    train, Checkpoint,
};

/// Files written by `train` and `finetune` into the output directory.
pub struct TrainOutputs;

impl TrainOutputs {
    pub const CHECKPOINT: &'static str = "checkpoint.dckp";
    pub const VOCAB: &'static str = "vocab.json";
    pub const HISTORY: &'static str = "loss_history.json";
    pub const RESOLVED_CONFIG: &'static str = "resolved_config.json";
}

#[derive(Serialize, Deserialize)]
struct LossHistory {
    epochs: Vec<LossBreakdown>,
    batches: Vec<f64>,
    /// Fine-tuning only: the pretrained model's loss on the first batch.
    #[serde(skip_serializing_if = "Option::is_none")]
    pretrained_first_batch: Option<f64>,
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn load_annotations(dir: &Path) -> Result<Vec<crate::datapipe::VideoAnnotation>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths.iter().map(parse_annotations).collect()
}

fn domain_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let ds = Dataset::load(&cfg.data.annotations, &cfg.data.features)?.filter_domain(cfg.train.domain);
    if ds.is_empty() {
        return Err(Error::invalid(format!("no {} videos under {}", cfg.train.domain, cfg.data.annotations.display())));
    }
    Ok(ds)
}

fn domain_vocab(cfg: &RunConfig, ds: &Dataset) -> Result<Vocabulary> {
    match &cfg.data.vocab {
        Some(p) => Vocabulary::load(p),
        None => build_vocabulary(&ds.captions(cfg.train.agent), cfg.data.min_freq, cfg.train.domain.as_str()),
    }
}

fn write_outputs(cfg: &RunConfig, ckpt: &Checkpoint, pretrained_first_batch: Option<f64>) -> Result<()> {
    let out = &cfg.output_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    save_checkpoint(ckpt, out.join(TrainOutputs::CHECKPOINT))?;
    write(&out.join(TrainOutputs::VOCAB), &ckpt.vocab.to_json_string())?;
    let history = LossHistory {
        epochs: ckpt.history.clone(),
        batches: ckpt.batch_losses.clone(),
        pretrained_first_batch,
    };
    write(&out.join(TrainOutputs::HISTORY), &json(&history))?;
    write(&out.join(TrainOutputs::RESOLVED_CONFIG), &cfg.to_json_string())
}

fn cmd_train(config: &Path) -> Result<()> {
    let mut cfg = RunConfig::load(config)?;
    let ds = domain_dataset(&cfg)?;
    let vocab = domain_vocab(&cfg, &ds)?;
    cfg.model.feature_dim = ds.samples[0].features.dim();
    cfg.model.vocab_size = vocab.len();
    log::info!(
        "training {} / {} on {} videos, vocabulary {}",
        cfg.train.domain,
        cfg.train.agent,
        ds.len(),
        vocab.len()
    );
    let ckpt = train(&cfg.train, &ds, &cfg.model, &vocab)?;
    write_outputs(&cfg, &ckpt, None)
}

fn cmd_finetune(from: &Path, config: &Path) -> Result<()> {
    let mut cfg = RunConfig::load(config)?;
    let pre = load_checkpoint(from)?;
    let ds = domain_dataset(&cfg)?;
    let vocab = domain_vocab(&cfg, &ds)?;
    cfg.model = ModelConfig {
        vocab_size: vocab.len(),
        ..pre.model.clone()
    };
    if ds.samples[0].features.dim() != cfg.model.feature_dim {
        return Err(Error::shape(format!(
            "target features have dimension {}, pretrained model expects {}",
            ds.samples[0].features.dim(),
            cfg.model.feature_dim
        )));
    }
    // loss of the unchanged pretrained model on the first batch, for comparison
    let reference = if pre.vocab == vocab {
        let examples = prepare_examples(&ds, &vocab, &pre.model, cfg.train.agent)?;
        let order = epoch_order(cfg.train.seed, 0, examples.len());
        let first: Vec<_> = order.iter().take(cfg.train.batch_size).map(|&i| examples[i].clone()).collect();
        let l = evaluate_loss(&pre.to_model()?, &first, &cfg.train.loss)?.total;
        log::info!("pretrained loss on the first batch: {l}");
        Some(l)
    } else {
        None
    };
    let ckpt = finetune(&pre, &vocab, &ds, &cfg.train)?;
    if let Some(first) = ckpt.batch_losses.first() {
        log::info!("fine-tuning loss on the first batch: {first}");
    }
    write_outputs(&cfg, &ckpt, reference)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SegmentSpec {
    start_time: f64,
    end_time: f64,
}

fn infer_one(
    model: &Pdvc,
    ckpt: &Checkpoint,
    path: &Path,
    segments: Option<&[SegmentSpec]>,
    lambda: f64,
    rules: &PostprocRules,
) -> Result<String> {
    let video_id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::invalid(format!("cannot derive a video id from {}", path.display())))?
        .to_string();
    let mut fs = FeatureSequence::load(path)?;
    fs.video_id = video_id.clone();
    if fs.dim() != model.config.feature_dim {
        return Err(Error::shape(format!(
            "{}: feature dimension {}, model expects {}",
            path.display(),
            fs.dim(),
            model.config.feature_dim
        )));
    }
    let duration = fs.duration();
    let selected: Vec<EventPrediction> = match segments {
        None => predict_video(model, &fs, lambda, Selection::Counter)?,
        Some(segs) => {
            let preds = predict_video(model, &fs, lambda, Selection::AllQueries)?;
            let mut targets = Vec::with_capacity(segs.len());
            for s in segs {
                if !(0.0 <= s.start_time && s.start_time < s.end_time && s.end_time <= duration) {
                    return Err(Error::invalid(format!(
                        "segment [{}, {}] is not inside [0, {duration}]",
                        s.start_time, s.end_time
                    )));
                }
                targets.push((s.start_time / duration, s.end_time / duration));
            }
            let picks = match_proposals_to_segments(&preds, &targets)?;
            picks
                .iter()
                .zip(&targets)
                .map(|(&i, &(s, e))| EventPrediction {
                    center: (s + e) / 2.0,
                    width: e - s,
                    ..preds[i].clone()
                })
                .collect()
        }
    };
    let out = render_output(&selected, &video_id, ckpt.train.agent, duration, &ckpt.vocab, rules)?;
    Ok(out.to_json())
}

fn cmd_infer(ckpt: &Path, features: &Path, out: &Path, segments: Option<&Path>, lambda: f64, rules: Option<&Path>) -> Result<()> {
    if !lambda.is_finite() {
        return Err(Error::invalid("lambda must be finite"));
    }
    let ck = load_checkpoint(ckpt)?;
    let model = ck.to_model()?;
    let rules = match rules {
        Some(p) => PostprocRules::load(p)?,
        None => PostprocRules::default(),
    };
    let segs: Option<Vec<SegmentSpec>> = match segments {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            Some(serde_json::from_str(&text)?)
        }
        None => None,
    };
    if features.is_dir() {
        if segs.is_some() {
            return Err(Error::invalid("--segments needs a single feature file"));
        }
        let mut files: Vec<PathBuf> = fs::read_dir(features)
            .map_err(|e| Error::io(features, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "dcft"))
            .collect();
        files.sort();
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        for f in &files {
            let text = infer_one(&model, &ck, f, None, lambda, &rules)?;
            let stem = f.file_stem().expect("file name").to_string_lossy();
            write(&out.join(format!("{stem}.json")), &text)?;
        }
        log::info!("wrote {} caption files to {}", files.len(), out.display());
        Ok(())
    } else {
        let text = infer_one(&model, &ck, features, segs.as_deref(), lambda, &rules)?;
        write(out, &text)
    }
}

fn cmd_evaluate(pairs: &Path, report: &Path, config: Option<&Path>) -> Result<()> {
    let cfg: MetricConfig = match config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
        }
        None => MetricConfig::default(),
    };
    let pairs = load_eval_pairs(pairs)?;
    let r = score_pairs(&pairs, &cfg)?;
    write(report, &r.to_json())?;
    print!("{}", r.to_table());
    Ok(())
}

fn cmd_grad_check(config: Option<&Path>) -> Result<()> {
    let cfg: GradCheckConfig = match config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
        }
        None => GradCheckConfig::default(),
    };
    let model_cfg = ModelConfig::micro(cfg.feature_dim, cfg.vocab_size);
    let t0 = Instant::now();
    let r = check_loss_gradients(&model_cfg, cfg.seed, cfg.eps)?;
    let names = Pdvc::new(model_cfg, cfg.seed)?.params.names().to_vec();
    let worst = r.worst.map_or("-".to_string(), |(p, i)| format!("{}[{i}]", names[p]));
    println!(
        "grad-check: {} entries, max relative error {:.3e} at {worst}, {:.1}s",
        r.entries,
        r.max_rel_error,
        t0.elapsed().as_secs_f64()
    );
    if r.max_rel_error < cfg.tolerance {
        println!("PASS (tolerance {:e})", cfg.tolerance);
        Ok(())
    } else {
        Err(Error::invalid(format!("max relative error {:.3e} exceeds {:e}", r.max_rel_error, cfg.tolerance)))
    }
}

pub fn run(cmd: &Command) -> Result<()> {
    match cmd {
        Command::GenSynthetic {
            out,
            videos,
            seed,
            sigma,
            domain,
            feature_dim,
        } => {
            if *videos == 0 || *feature_dim == 0 || !(*sigma >= 0.0) {
                return Err(Error::invalid("videos and feature_dim must be >= 1, sigma >= 0"));
            }
            let spec = SyntheticSpec {
                videos: *videos,
                sigma: *sigma,
                domain: *domain,
                feature_dim: *feature_dim,
                ..SyntheticSpec::default()
            };
            write_synthetic(&generate_synthetic_dataset(&spec, *seed), out)
        }
        Command::BuildVocab {
            annotations,
            domain,
            agent,
            min_freq,
            out,
        } => {
            let anns = load_annotations(annotations)?;
            let corpus = captions_for(&anns, *domain, *agent);
            let v = build_vocabulary(&corpus, *min_freq, domain.as_str())?;
            log::info!("{} tokens from {} captions", v.len(), corpus.len());
            write(out, &v.to_json_string())
        }
        Command::TrimPlan { annotation, out } => {
            let plan = compute_trim_plan(&parse_annotations(annotation)?);
            let text = json(&plan);
            match out {
                Some(p) => write(p, &text),
                None => {
                    print!("{text}");
                    Ok(())
                }
            }
        }
        Command::Train { config } => cmd_train(config),
        Command::Finetune { from, config } => cmd_finetune(from, config),
        Command::Infer {
            ckpt,
            features,
            out,
            segments,
            lambda,
            rules,
        } => cmd_infer(ckpt, features, out, segments.as_deref(), *lambda, rules.as_deref()),
        Command::Evaluate { pairs, report, config } => cmd_evaluate(pairs, report, config.as_deref()),
        Command::GradCheck { config } => cmd_grad_check(config.as_deref()),
    }
}

fn captions_for(anns: &[crate::datapipe::VideoAnnotation], domain: Domain, agent: Agent) -> Vec<String> {
    anns.iter()
        .filter(|a| a.domain == domain)
        .flat_map(|a| a.events.iter().map(move |e| e.caption(agent).to_string()))
        .collect()
}
