use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::layers::{sinusoidal_positions, DeformAttn, FeedForward, LayerNorm, Linear, SelfAttn};
use super::params::{linear_bound, uniform, Bound, ParamId, ParamStore};
use crate::datapipe::{BOS, EOS, PAD};
use crate::diffcore::nn::{lstm_step, LstmWeights};
use crate::diffcore::{DeformLayout, Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const WORD_EMBED: &str = "caption.word_embed";
pub const VOCAB_OUT_WEIGHT: &str = "caption.out.weight";
pub const VOCAB_OUT_BIAS: &str = "caption.out.bias";

#[derive(Clone, Debug)]
struct EncoderLayer {
    attn: DeformAttn,
    norm1: LayerNorm,
    ffn: FeedForward,
    norm2: LayerNorm,
}

#[derive(Clone, Debug)]
struct DecoderLayer {
    self_attn: SelfAttn,
    norm1: LayerNorm,
    cross: DeformAttn,
    norm2: LayerNorm,
    ffn: FeedForward,
    norm3: LayerNorm,
}

#[derive(Clone, Debug)]
struct Arch {
    input_proj: Linear,
    downsample: Vec<Linear>,
    level_embed: ParamId,
    encoder: Vec<EncoderLayer>,
    query_pos: ParamId,
    query_tgt: ParamId,
    ref_proj: Linear,
    decoder: Vec<DecoderLayer>,
    loc: [Linear; 3],
    counter: Linear,
    word_embed: ParamId,
    lstm_w_ih: ParamId,
    lstm_w_hh: ParamId,
    lstm_bias: ParamId,
    vocab_out: Linear,
}

/// Predictions of one decoder layer. Vectors are `[num_queries]`.
#[derive(Clone, Copy, Debug)]
pub struct LayerOutput {
    /// `[num_queries, d_model]`
    pub queries: Var,
    pub center: Var,
    pub width: Var,
    /// Confidence logit; confidence is its sigmoid.
    pub score: Var,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub layers: Vec<LayerOutput>,
    /// `[num_queries, 1]`, in `(0, 1)`.
    pub reference: Var,
    /// `[1, max_count + 1]`, from the final layer.
    pub counter_logits: Var,
}

impl ForwardOutput {
    pub fn last(&self) -> &LayerOutput {
        self.layers.last().expect("at least one decoder layer")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedCaption {
    /// Emitted tokens, ending in `<eos>` unless cut at the length limit.
    pub ids: Vec<usize>,
    /// Sum of the log-probabilities of the emitted tokens.
    pub logprob: f64,
}

/// Parallel-decoding captioner: deformable encoder and decoder with
/// localization, counting and captioning heads shared by all decoder layers.
#[derive(Clone, Debug)]
pub struct Pdvc {
    pub config: ModelConfig,
    pub params: ParamStore,
    arch: Arch,
}

impl Pdvc {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let c = &config;
        let d = c.d_model;

        let input_proj = Linear::new(&mut s, &mut rng, "input_proj", c.feature_dim, d);
        let downsample = (1..c.levels)
            .map(|l| Linear::new(&mut s, &mut rng, &format!("downsample.{l}"), 2 * d, d))
            .collect();
        let level_embed = s.add("level_embed", uniform(&mut rng, &[c.levels, d], 1.0));
        let encoder = (0..c.enc_layers)
            .map(|i| {
                let n = format!("encoder.{i}");
                EncoderLayer {
                    attn: DeformAttn::new(&mut s, &mut rng, &format!("{n}.attn"), d, c.heads, c.levels, c.points),
                    norm1: LayerNorm::new(&mut s, &format!("{n}.norm1"), d),
                    ffn: FeedForward::new(&mut s, &mut rng, &format!("{n}.ffn"), d, c.d_ffn),
                    norm2: LayerNorm::new(&mut s, &format!("{n}.norm2"), d),
                }
            })
            .collect();
        let query_pos = s.add("query.pos", uniform(&mut rng, &[c.num_queries, d], 1.0));
        let query_tgt = s.add("query.tgt", uniform(&mut rng, &[c.num_queries, d], 1.0));
        let ref_proj = Linear::new(&mut s, &mut rng, "query.ref", d, 1);
        let decoder = (0..c.dec_layers)
            .map(|i| {
                let n = format!("decoder.{i}");
                DecoderLayer {
                    self_attn: SelfAttn::new(&mut s, &mut rng, &format!("{n}.self_attn"), d, c.heads),
                    norm1: LayerNorm::new(&mut s, &format!("{n}.norm1"), d),
                    cross: DeformAttn::new(&mut s, &mut rng, &format!("{n}.cross"), d, c.heads, c.levels, c.points),
                    norm2: LayerNorm::new(&mut s, &format!("{n}.norm2"), d),
                    ffn: FeedForward::new(&mut s, &mut rng, &format!("{n}.ffn"), d, c.d_ffn),
                    norm3: LayerNorm::new(&mut s, &format!("{n}.norm3"), d),
                }
            })
            .collect();
        let loc = [
            Linear::new(&mut s, &mut rng, "loc.0", d, d),
            Linear::new(&mut s, &mut rng, "loc.1", d, d),
            Linear::new(&mut s, &mut rng, "loc.2", d, 3),
        ];
        let counter = Linear::new(&mut s, &mut rng, "counter", d, c.max_count + 1);
        let word_embed = s.add(WORD_EMBED, uniform(&mut rng, &[c.vocab_size, d], 1.0));
        let h = c.lstm_hidden;
        let lb = linear_bound(h);
        let lstm_w_ih = s.add("caption.lstm.w_ih", uniform(&mut rng, &[2 * d, 4 * h], lb));
        let lstm_w_hh = s.add("caption.lstm.w_hh", uniform(&mut rng, &[h, 4 * h], lb));
        let lstm_bias = s.add("caption.lstm.bias", Tensor::zeros(&[4 * h]));
        let vocab_out = Linear::new(&mut s, &mut rng, "caption.out", h, c.vocab_size);

        let arch = Arch {
            input_proj,
            downsample,
            level_embed,
            encoder,
            query_pos,
            query_tgt,
            ref_proj,
            decoder,
            loc,
            counter,
            word_embed,
            lstm_w_ih,
            lstm_w_hh,
            lstm_bias,
            vocab_out,
        };
        Ok(Pdvc {
            config,
            params: s,
            arch,
        })
    }

    /// Rebuilds the architecture for `config` and installs `params`, which
    /// must match it name for name and shape for shape.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let mut m = Pdvc::new(config, 0)?;
        m.params.copy_from(&params)?;
        Ok(m)
    }

    /// Fresh-init draw for one word-embedding row (the init law of `new`).
    pub fn fresh_embedding_row(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        uniform(rng, &[self.config.d_model], 1.0).into_data()
    }

    /// Fresh-init draw for one output-projection column.
    pub fn fresh_output_column(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        uniform(rng, &[self.config.lstm_hidden], linear_bound(self.config.lstm_hidden)).into_data()
    }

    /// Parameters as trainable leaves.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        self.params.bind(tape)
    }

    /// Parameters as constants, for inference.
    pub fn bind_constant(&self, tape: &mut Tape) -> Bound {
        self.params.bind_constant(tape)
    }

    pub fn layout(&self, frames: usize) -> DeformLayout {
        let sizes = (0..self.config.levels).map(|l| frames >> l).collect();
        DeformLayout::new(sizes, self.config.heads, self.config.points)
    }

    /// Projected input followed by stride-2 learned downsampling; no
    /// position or level embeddings. `features: [T, feature_dim]`.
    pub fn pyramid(&self, tape: &mut Tape, p: &Bound, features: Var) -> Result<Vec<Var>> {
        let shape = tape.shape(features).to_vec();
        if shape.len() != 2 || shape[1] != self.config.feature_dim {
            return Err(Error::shape(format!(
                "features {shape:?}, expected [T, {}]",
                self.config.feature_dim
            )));
        }
        let t = shape[0];
        if t < 1 << (self.config.levels - 1) {
            return Err(Error::shape(format!("{t} frames too short for {} levels", self.config.levels)));
        }
        let d = self.config.d_model;
        let mut levels = vec![self.arch.input_proj.apply(tape, p, features)?];
        for conv in &self.arch.downsample {
            let prev = *levels.last().unwrap();
            let len = tape.shape(prev)[0];
            let half = len / 2;
            let even = if len.is_multiple_of(2) {
                prev
            } else {
                tape.narrow(prev, 0, 0, 2 * half)?
            };
            let pairs = tape.reshape(even, &[half, 2 * d])?;
            levels.push(conv.apply(tape, p, pairs)?);
        }
        Ok(levels)
    }

    /// Pyramid levels `[T >> l, d_model]` with sinusoidal positions and a
    /// learned per-level embedding added.
    pub fn build_multiscale(&self, tape: &mut Tape, p: &Bound, features: Var) -> Result<Vec<Var>> {
        let d = self.config.d_model;
        let content = self.pyramid(tape, p, features)?;
        let mut out = Vec::with_capacity(content.len());
        for (l, x) in content.into_iter().enumerate() {
            let len = tape.shape(x)[0];
            let pe = tape.constant(sinusoidal_positions(len, d));
            let x = tape.add(x, pe)?;
            let emb = tape.narrow(p.var(self.arch.level_embed), 0, l, 1)?;
            let emb = tape.reshape(emb, &[d])?;
            out.push(tape.add_row(x, emb)?);
        }
        Ok(out)
    }

    /// Encoded memory, levels stacked: `[sum_l T >> l, d_model]`.
    pub fn encode(&self, tape: &mut Tape, p: &Bound, features: Var) -> Result<(Var, DeformLayout)> {
        let levels = self.build_multiscale(tape, p, features)?;
        let layout = self.layout(tape.shape(features)[0]);
        let mut src = tape.concat(&levels, 0)?;
        if self.arch.encoder.is_empty() {
            return Ok((src, layout));
        }
        let mut refs = Vec::with_capacity(layout.total_rows());
        for &len in &layout.level_sizes {
            for t in 0..len {
                refs.push(if len == 1 { 0.5 } else { t as f64 / (len - 1) as f64 });
            }
        }
        let reference = tape.constant(Tensor::matrix(refs.len(), 1, refs)?);
        for layer in &self.arch.encoder {
            let a = layer.attn.apply(tape, p, src, reference, src, &layout)?;
            let x = tape.add(src, a)?;
            let x = layer.norm1.apply(tape, p, x)?;
            let f = layer.ffn.apply(tape, p, x)?;
            let y = tape.add(x, f)?;
            src = layer.norm2.apply(tape, p, y)?;
        }
        Ok((src, layout))
    }

    /// Query states after each decoder layer, plus the reference logits
    /// `[num_queries, 1]`.
    pub fn decode(&self, tape: &mut Tape, p: &Bound, memory: Var, layout: &DeformLayout) -> Result<(Vec<Var>, Var)> {
        let pos = p.var(self.arch.query_pos);
        let mut tgt = p.var(self.arch.query_tgt);
        let ref_logit = self.arch.ref_proj.apply(tape, p, pos)?;
        let reference = tape.sigmoid(ref_logit);
        let mut outs = Vec::with_capacity(self.arch.decoder.len());
        for layer in &self.arch.decoder {
            let qk = tape.add(tgt, pos)?;
            let sa = layer.self_attn.apply(tape, p, qk, tgt)?;
            let x = tape.add(tgt, sa)?;
            let x = layer.norm1.apply(tape, p, x)?;
            let q = tape.add(x, pos)?;
            let ca = layer.cross.apply(tape, p, q, reference, memory, layout)?;
            let y = tape.add(x, ca)?;
            let y = layer.norm2.apply(tape, p, y)?;
            let f = layer.ffn.apply(tape, p, y)?;
            let z = tape.add(y, f)?;
            tgt = layer.norm3.apply(tape, p, z)?;
            outs.push(tgt);
        }
        Ok((outs, ref_logit))
    }

    /// `(center, width, score_logit)`, each `[n]`, from query states `[n, d]`
    /// and reference logits `[n, 1]`.
    pub fn localization_head(&self, tape: &mut Tape, p: &Bound, queries: Var, ref_logit: Var) -> Result<(Var, Var, Var)> {
        let n = tape.shape(queries)[0];
        let h = self.arch.loc[0].apply(tape, p, queries)?;
        let h = tape.gelu(h);
        let h = self.arch.loc[1].apply(tape, p, h)?;
        let h = tape.gelu(h);
        let raw = self.arch.loc[2].apply(tape, p, h)?;
        let col = |tape: &mut Tape, j: usize| -> Result<Var> {
            let c = tape.narrow(raw, 1, j, 1)?;
            tape.reshape(c, &[n])
        };
        let delta = col(tape, 0)?;
        let w_raw = col(tape, 1)?;
        let score = col(tape, 2)?;
        let base = tape.reshape(ref_logit, &[n])?;
        let c = tape.add(base, delta)?;
        let center = tape.sigmoid(c);
        let width = tape.sigmoid(w_raw);
        Ok((center, width, score))
    }

    /// Count logits `[1, max_count + 1]` from max-pooled query states.
    pub fn event_counter(&self, tape: &mut Tape, p: &Bound, queries: Var) -> Result<Var> {
        let pooled = tape.max_rows(queries)?;
        let pooled = tape.reshape(pooled, &[1, self.config.d_model])?;
        self.arch.counter.apply(tape, p, pooled)
    }

    /// Full forward pass for one video, `features: [T, feature_dim]`.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, features: &Tensor) -> Result<ForwardOutput> {
        let x = tape.constant(features.clone());
        let (memory, layout) = self.encode(tape, p, x)?;
        let (states, ref_logit) = self.decode(tape, p, memory, &layout)?;
        let reference = tape.sigmoid(ref_logit);
        let mut layers = Vec::with_capacity(states.len());
        for &queries in &states {
            let (center, width, score) = self.localization_head(tape, p, queries, ref_logit)?;
            layers.push(LayerOutput {
                queries,
                center,
                width,
                score,
            });
        }
        let counter_logits = self.event_counter(tape, p, *states.last().expect("dec_layers >= 1"))?;
        Ok(ForwardOutput {
            layers,
            reference,
            counter_logits,
        })
    }

    fn lstm(&self, p: &Bound) -> LstmWeights {
        LstmWeights {
            w_ih: p.var(self.arch.lstm_w_ih),
            w_hh: p.var(self.arch.lstm_w_hh),
            bias: p.var(self.arch.lstm_bias),
        }
    }

    fn caption_step(&self, tape: &mut Tape, p: &Bound, cond: Var, tokens: &[usize], h: Var, c: Var) -> Result<(Var, Var, Var)> {
        let emb = tape.gather_rows(p.var(self.arch.word_embed), tokens)?;
        let x = tape.concat(&[emb, cond], 1)?;
        let (h, c) = lstm_step(tape, x, h, c, &self.lstm(p))?;
        let logits = self.arch.vocab_out.apply(tape, p, h)?;
        Ok((logits, h, c))
    }

    /// Teacher-forced step logits for captions conditioned on the query rows
    /// `rows` of `queries`.
    ///
    /// Each sequence is a full `<bos> ... <eos>` id list; step `s` feeds
    /// token `s` and predicts token `s + 1`. Returns one `[rows.len(), vocab]`
    /// matrix per step; finished captions are fed `<pad>`.
    pub fn caption_logits(
        &self,
        tape: &mut Tape,
        p: &Bound,
        queries: Var,
        rows: &[usize],
        sequences: &[Vec<usize>],
    ) -> Result<Vec<Var>> {
        if rows.len() != sequences.len() || rows.is_empty() {
            return Err(Error::shape(format!("{} query rows for {} captions", rows.len(), sequences.len())));
        }
        for s in sequences {
            if s.len() < 2 {
                return Err(Error::invalid("caption sequence needs at least <bos> and one target"));
            }
            if let Some(bad) = s.iter().find(|&&id| id >= self.config.vocab_size) {
                return Err(Error::invalid(format!("token id {bad} outside vocabulary of {}", self.config.vocab_size)));
            }
        }
        let n = rows.len();
        let h0 = self.config.lstm_hidden;
        let cond = tape.gather_rows(queries, rows)?;
        let mut h = tape.constant(Tensor::zeros(&[n, h0]));
        let mut c = h;
        let steps = sequences.iter().map(|s| s.len() - 1).max().unwrap_or(0);
        let mut out = Vec::with_capacity(steps);
        for step in 0..steps {
            let tokens: Vec<usize> = sequences
                .iter()
                .map(|s| if step + 1 < s.len() { s[step] } else { PAD })
                .collect();
            let (logits, h1, c1) = self.caption_step(tape, p, cond, &tokens, h, c)?;
            out.push(logits);
            h = h1;
            c = c1;
        }
        Ok(out)
    }

    /// Greedy decoding for the query rows `rows`, batched.
    pub fn generate(&self, tape: &mut Tape, p: &Bound, queries: Var, rows: &[usize]) -> Result<Vec<GeneratedCaption>> {
        let n = rows.len();
        let mut out: Vec<GeneratedCaption> = (0..n)
            .map(|_| GeneratedCaption {
                ids: Vec::new(),
                logprob: 0.0,
            })
            .collect();
        if n == 0 {
            return Ok(out);
        }
        let cond = tape.gather_rows(queries, rows)?;
        let mut h = tape.constant(Tensor::zeros(&[n, self.config.lstm_hidden]));
        let mut c = h;
        let mut prev = vec![BOS; n];
        let mut done = vec![false; n];
        for _ in 0..self.config.max_caption_len {
            let (logits, h1, c1) = self.caption_step(tape, p, cond, &prev, h, c)?;
            let logp = tape.log_softmax(logits, 1)?;
            let lp = tape.value(logp);
            for i in 0..n {
                if done[i] {
                    prev[i] = PAD;
                    continue;
                }
                let row = lp.row(i);
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                out[i].ids.push(best);
                out[i].logprob += row[best];
                prev[i] = best;
                done[i] = best == EOS;
            }
            if done.iter().all(|&d| d) {
                break;
            }
            h = h1;
            c = c1;
        }
        Ok(out)
    }

    pub fn word_embed_id(&self) -> ParamId {
        self.arch.word_embed
    }
}
