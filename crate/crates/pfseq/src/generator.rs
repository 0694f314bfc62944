//! Attention-based autoregressive encoder-decoder, the "TTS model" half of
//! the adversarial pair. Supports teacher-forced, free-running, and
//! scheduled-sampling decoding over the same graph code path, with prenet
//! feedback dropout that stays active at inference. Every decode exposes the
//! behavior sequence (attention-RNN and decoder-RNN hidden states per step)
//! that the discriminator classifies.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{NodeId, Tape};
use crate::optim::Params;
use crate::rng::{derive_seed, seeded, SeededRng};
use crate::tensor::Tensor;

/// Recurrent cell flavor for the encoder and both decoder RNNs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CellKind {
    /// Gated cell with update/reset gates.
    #[default]
    Gru,
    /// Plain tanh recurrence.
    Tanh,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub vocab_size: usize,
    pub frame_dim: usize,
    pub embed_dim: usize,
    /// Encoder hidden size per direction; memory dim M = 2 * encoder_hidden.
    pub encoder_hidden: usize,
    pub prenet_dims: Vec<usize>,
    pub prenet_dropout: f64,
    pub attn_rnn_hidden: usize,
    pub dec_rnn_hidden: usize,
    pub attention_dim: usize,
    pub cell: CellKind,
    /// When set, the predicted frame is appended to each behavior row.
    pub behavior_includes_output: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            vocab_size: 12,
            frame_dim: 16,
            embed_dim: 32,
            encoder_hidden: 32,
            prenet_dims: vec![32, 32],
            prenet_dropout: 0.5,
            attn_rnn_hidden: 64,
            dec_rnn_hidden: 64,
            attention_dim: 32,
            cell: CellKind::Gru,
            behavior_includes_output: false,
        }
    }
}

impl GeneratorConfig {
    pub fn memory_dim(&self) -> usize {
        2 * self.encoder_hidden
    }

    /// Width of one behavior-sequence row.
    pub fn behavior_dim(&self) -> usize {
        self.attn_rnn_hidden
            + self.dec_rnn_hidden
            + if self.behavior_includes_output {
                self.frame_dim
            } else {
                0
            }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.vocab_size,
            self.frame_dim,
            self.embed_dim,
            self.encoder_hidden,
            self.attn_rnn_hidden,
            self.dec_rnn_hidden,
            self.attention_dim,
        ];
        if dims.iter().any(|&d| d == 0) || self.prenet_dims.iter().any(|&d| d == 0) {
            return Err(Error::config("all generator dimensions must be >= 1"));
        }
        if self.prenet_dims.is_empty() {
            return Err(Error::config("prenet needs at least one layer"));
        }
        if !(0.0..1.0).contains(&self.prenet_dropout) {
            return Err(Error::config("prenet_dropout must be in [0, 1)"));
        }
        Ok(())
    }
}

/// How the decoder obtains its feedback frame at each step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DecodeMode {
    /// Feed the real previous target frame (Eq. "training" factorization).
    TeacherForcing,
    /// Feed the model's own previous prediction.
    FreeRunning,
    /// Feed the real frame with probability p, else the prediction.
    ScheduledSampling(f64),
}

/// Linear anneal for the scheduled-sampling probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsSchedule {
    pub p_start: f64,
    pub p_end: f64,
    pub decay_steps: u64,
}

impl Default for SsSchedule {
    fn default() -> Self {
        SsSchedule {
            p_start: 1.0,
            p_end: 0.5,
            decay_steps: 1500,
        }
    }
}

impl SsSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_end)
            || !(0.0..=1.0).contains(&self.p_start)
            || self.p_end > self.p_start
        {
            return Err(Error::config("schedule must satisfy 0 <= p_end <= p_start <= 1"));
        }
        if self.decay_steps == 0 {
            return Err(Error::config("ss decay_steps must be >= 1"));
        }
        Ok(())
    }
}

/// p(step) = max(p_end, p_start - (p_start - p_end) * step / decay_steps).
pub fn ss_probability(schedule: &SsSchedule, step: u64) -> f64 {
    let frac = step as f64 / schedule.decay_steps as f64;
    let p = schedule.p_start - (schedule.p_start - schedule.p_end) * frac;
    p.max(schedule.p_end)
}

/// What was fed back at each decode step (first step is always the go frame,
/// recorded as real data).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Feedback {
    Real,
    Predicted,
}

/// Independent seeded streams for feedback dropout and scheduled-sampling
/// coins, so degenerate schedules (p = 1, p = 0) are bitwise equal to pure
/// teacher forcing / free running under the same dropout masks.
pub struct DecodeRng {
    dropout: SeededRng,
    coins: SeededRng,
}

impl DecodeRng {
    pub fn from_seed(seed: u64) -> Self {
        DecodeRng {
            dropout: seeded(derive_seed(seed, "decode.dropout")),
            coins: seeded(derive_seed(seed, "decode.coins")),
        }
    }

    fn prenet_masks(&mut self, config: &GeneratorConfig) -> Vec<Tensor> {
        let rate = config.prenet_dropout;
        config
            .prenet_dims
            .iter()
            .map(|&dim| {
                let values = (0..dim)
                    .map(|_| {
                        let u: f64 = self.dropout.gen();
                        if u >= rate {
                            1.0 / (1.0 - rate)
                        } else {
                            0.0
                        }
                    })
                    .collect();
                Tensor::new(vec![1, dim], values).expect("mask shape")
            })
            .collect()
    }

    fn coin(&mut self) -> f64 {
        self.coins.gen()
    }
}

#[derive(Debug, Clone, Copy)]
struct CellIds {
    wx: usize,
    wh: usize,
    b: usize,
    hidden: usize,
}

#[derive(Debug, Clone)]
struct GenParamIds {
    embed: usize,
    enc_fwd: CellIds,
    enc_bwd: CellIds,
    prenet: Vec<(usize, usize)>,
    attn_rnn: CellIds,
    att_query: usize,
    att_memory: usize,
    att_score: usize,
    dec_rnn: CellIds,
    out_w: usize,
    out_b: usize,
}

/// Decoder recurrent state threaded through `decode_step`.
#[derive(Debug, Clone, Copy)]
pub struct DecodeState {
    pub attn_hidden: NodeId,
    pub dec_hidden: NodeId,
    pub context: NodeId,
}

/// One decoder step's outputs as tape nodes.
pub struct StepOutput {
    pub frame: NodeId,
    pub attn_hidden: NodeId,
    pub dec_hidden: NodeId,
    pub align_row: NodeId,
    pub state: DecodeState,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeOptions {
    pub mode: DecodeMode,
    /// Required for free-running decodes (no stop token at this scale).
    pub free_running_len: Option<usize>,
    /// Diagnostic: feed back a detached copy of the prediction so no gradient
    /// flows through the feedback loop. Off everywhere except tests probing
    /// that the feedback path carries gradient.
    pub detach_feedback: bool,
}

impl DecodeOptions {
    pub fn new(mode: DecodeMode) -> Self {
        DecodeOptions {
            mode,
            free_running_len: None,
            detach_feedback: false,
        }
    }

    pub fn free_running(len: usize) -> Self {
        DecodeOptions {
            mode: DecodeMode::FreeRunning,
            free_running_len: Some(len),
            detach_feedback: false,
        }
    }
}

/// Full decode of one utterance, as tape nodes plus copied-out diagnostics.
pub struct DecodeResult {
    /// [T, F] predicted frames.
    pub predicted: NodeId,
    /// [T, behavior_dim] concatenated hidden states per step.
    pub behavior: NodeId,
    /// [T, S] attention weights (copied values; rows sum to 1).
    pub alignment: Tensor,
    pub feedback_trace: Vec<Feedback>,
}

pub struct Generator {
    pub config: GeneratorConfig,
    pub params: Params,
    ids: GenParamIds,
}

fn xavier(rng: &mut SeededRng, rows: usize, cols: usize) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let values = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(vec![rows, cols], values).expect("xavier shape")
}

fn add_cell(
    params: &mut Params,
    rng: &mut SeededRng,
    prefix: &str,
    input: usize,
    hidden: usize,
    kind: CellKind,
) -> Result<CellIds> {
    let gates = match kind {
        CellKind::Gru => 3 * hidden,
        CellKind::Tanh => hidden,
    };
    Ok(CellIds {
        wx: params.add(&format!("{prefix}.wx"), xavier(rng, input, gates))?,
        wh: params.add(&format!("{prefix}.wh"), xavier(rng, hidden, gates))?,
        b: params.add(&format!("{prefix}.b"), Tensor::zeros(vec![1, gates]))?,
        hidden,
    })
}

impl Generator {
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded(derive_seed(seed, "generator.init"));
        let mut params = Params::new();
        let m = config.memory_dim();
        let embed = params.add("embed", xavier(&mut rng, config.vocab_size, config.embed_dim))?;
        let enc_fwd = add_cell(
            &mut params,
            &mut rng,
            "enc.fwd",
            config.embed_dim,
            config.encoder_hidden,
            config.cell,
        )?;
        let enc_bwd = add_cell(
            &mut params,
            &mut rng,
            "enc.bwd",
            config.embed_dim,
            config.encoder_hidden,
            config.cell,
        )?;
        let mut prenet = Vec::new();
        let mut in_dim = config.frame_dim;
        for (i, &dim) in config.prenet_dims.iter().enumerate() {
            let w = params.add(&format!("prenet.{i}.w"), xavier(&mut rng, in_dim, dim))?;
            let b = params.add(&format!("prenet.{i}.b"), Tensor::zeros(vec![1, dim]))?;
            prenet.push((w, b));
            in_dim = dim;
        }
        let attn_rnn = add_cell(
            &mut params,
            &mut rng,
            "attn_rnn",
            in_dim + m,
            config.attn_rnn_hidden,
            config.cell,
        )?;
        let att_query = params.add(
            "att.query",
            xavier(&mut rng, config.attn_rnn_hidden, config.attention_dim),
        )?;
        let att_memory = params.add("att.memory", xavier(&mut rng, m, config.attention_dim))?;
        let att_score = params.add("att.score", xavier(&mut rng, config.attention_dim, 1))?;
        let dec_rnn = add_cell(
            &mut params,
            &mut rng,
            "dec_rnn",
            config.attn_rnn_hidden + m,
            config.dec_rnn_hidden,
            config.cell,
        )?;
        let out_w = params.add(
            "out.w",
            xavier(&mut rng, config.dec_rnn_hidden + m, config.frame_dim),
        )?;
        let out_b = params.add("out.b", Tensor::zeros(vec![1, config.frame_dim]))?;
        Ok(Generator {
            config,
            params,
            ids: GenParamIds {
                embed,
                enc_fwd,
                enc_bwd,
                prenet,
                attn_rnn,
                att_query,
                att_memory,
                att_score,
                dec_rnn,
                out_w,
                out_b,
            },
        })
    }

    fn cell_step(
        &self,
        tape: &mut Tape,
        leaves: &[NodeId],
        ids: &CellIds,
        x: NodeId,
        h: NodeId,
    ) -> Result<NodeId> {
        let hidden = ids.hidden;
        match self.config.cell {
            CellKind::Gru => {
                let pre_x = tape.matmul(x, leaves[ids.wx])?;
                let pre_x = tape.add_row(pre_x, leaves[ids.b])?;
                let pre_h = tape.matmul(h, leaves[ids.wh])?;
                let rx = tape.slice_cols(pre_x, 0, hidden)?;
                let rh = tape.slice_cols(pre_h, 0, hidden)?;
                let r_pre = tape.add(rx, rh)?;
                let r = tape.sigmoid(r_pre)?;
                let zx = tape.slice_cols(pre_x, hidden, hidden)?;
                let zh = tape.slice_cols(pre_h, hidden, hidden)?;
                let z_pre = tape.add(zx, zh)?;
                let z = tape.sigmoid(z_pre)?;
                let nx = tape.slice_cols(pre_x, 2 * hidden, hidden)?;
                let nh = tape.slice_cols(pre_h, 2 * hidden, hidden)?;
                let gated = tape.mul(r, nh)?;
                let n_pre = tape.add(nx, gated)?;
                let n = tape.tanh(n_pre)?;
                let one = tape.constant(Tensor::filled(vec![1, hidden], 1.0))?;
                let keep_new = tape.sub(one, z)?;
                let new_part = tape.mul(keep_new, n)?;
                let old_part = tape.mul(z, h)?;
                tape.add(new_part, old_part)
            }
            CellKind::Tanh => {
                let pre_x = tape.matmul(x, leaves[ids.wx])?;
                let pre_x = tape.add_row(pre_x, leaves[ids.b])?;
                let pre_h = tape.matmul(h, leaves[ids.wh])?;
                let pre = tape.add(pre_x, pre_h)?;
                tape.tanh(pre)
            }
        }
    }

    /// Encode a symbol sequence into the attention memory, shape
    /// [S, 2 * encoder_hidden]: embedding plus one bidirectional recurrent
    /// pass.
    pub fn encode(&self, tape: &mut Tape, leaves: &[NodeId], symbols: &[usize]) -> Result<NodeId> {
        if symbols.is_empty() {
            return Err(Error::input("encode: empty symbol sequence"));
        }
        if let Some(&bad) = symbols.iter().find(|&&s| s >= self.config.vocab_size) {
            return Err(Error::input(format!(
                "symbol {bad} out of vocabulary (K = {})",
                self.config.vocab_size
            )));
        }
        let s_len = symbols.len();
        let embedded = tape.gather_rows(leaves[self.ids.embed], symbols)?;
        let h0 = tape.constant(Tensor::zeros(vec![1, self.config.encoder_hidden]))?;

        let mut fwd = Vec::with_capacity(s_len);
        let mut h = h0;
        for t in 0..s_len {
            let x = tape.slice_rows(embedded, t, 1)?;
            h = self.cell_step(tape, leaves, &self.ids.enc_fwd, x, h)?;
            fwd.push(h);
        }
        let mut bwd = vec![h0; s_len];
        let mut h = h0;
        for t in (0..s_len).rev() {
            let x = tape.slice_rows(embedded, t, 1)?;
            h = self.cell_step(tape, leaves, &self.ids.enc_bwd, x, h)?;
            bwd[t] = h;
        }
        let rows: Vec<NodeId> = (0..s_len)
            .map(|t| tape.concat_cols(&[fwd[t], bwd[t]]))
            .collect::<Result<_>>()?;
        tape.stack_rows(&rows)
    }

    /// Fresh zero decoder state (go-frame convention: everything starts at 0).
    pub fn initial_state(&self, tape: &mut Tape) -> Result<DecodeState> {
        Ok(DecodeState {
            attn_hidden: tape.constant(Tensor::zeros(vec![1, self.config.attn_rnn_hidden]))?,
            dec_hidden: tape.constant(Tensor::zeros(vec![1, self.config.dec_rnn_hidden]))?,
            context: tape.constant(Tensor::zeros(vec![1, self.config.memory_dim()]))?,
        })
    }

    /// Project the memory once per utterance for the additive attention.
    pub fn memory_projection(
        &self,
        tape: &mut Tape,
        leaves: &[NodeId],
        memory: NodeId,
    ) -> Result<NodeId> {
        tape.matmul(memory, leaves[self.ids.att_memory])
    }

    /// One decoder step: prenet (dropout always on) -> attention RNN ->
    /// additive attention -> decoder RNN -> frame projection.
    pub fn decode_step(
        &self,
        tape: &mut Tape,
        leaves: &[NodeId],
        prev_frame: NodeId,
        state: &DecodeState,
        memory: NodeId,
        memory_proj: NodeId,
        dropout_masks: &[Tensor],
    ) -> Result<StepOutput> {
        if tape.value(prev_frame).numel() != self.config.frame_dim {
            return Err(Error::config(format!(
                "decode_step: feedback frame has {} values, expected F = {}",
                tape.value(prev_frame).numel(),
                self.config.frame_dim
            )));
        }
        if dropout_masks.len() != self.ids.prenet.len() {
            return Err(Error::config(format!(
                "decode_step: {} dropout masks for {} prenet layers",
                dropout_masks.len(),
                self.ids.prenet.len()
            )));
        }
        let mut h = prev_frame;
        for ((w, b), mask) in self.ids.prenet.iter().zip(dropout_masks) {
            let lin = tape.matmul(h, leaves[*w])?;
            let lin = tape.add_row(lin, leaves[*b])?;
            let act = tape.tanh(lin)?;
            let mask_node = tape.constant(mask.clone())?;
            h = tape.mul(act, mask_node)?;
        }
        let attn_in = tape.concat_cols(&[h, state.context])?;
        let attn_hidden = self.cell_step(tape, leaves, &self.ids.attn_rnn, attn_in, state.attn_hidden)?;

        let query = tape.matmul(attn_hidden, leaves[self.ids.att_query])?;
        let combined = tape.add_row(memory_proj, query)?;
        let combined = tape.tanh(combined)?;
        let scores = tape.matmul(combined, leaves[self.ids.att_score])?;
        let scores_row = tape.transpose(scores)?;
        let align_row = tape.masked_softmax_rows(scores_row, None)?;
        let context = tape.matmul(align_row, memory)?;

        let dec_in = tape.concat_cols(&[attn_hidden, context])?;
        let dec_hidden = self.cell_step(tape, leaves, &self.ids.dec_rnn, dec_in, state.dec_hidden)?;
        let proj_in = tape.concat_cols(&[dec_hidden, context])?;
        let frame = tape.matmul(proj_in, leaves[self.ids.out_w])?;
        let frame = tape.add_row(frame, leaves[self.ids.out_b])?;

        Ok(StepOutput {
            frame,
            attn_hidden,
            dec_hidden,
            align_row,
            state: DecodeState {
                attn_hidden,
                dec_hidden,
                context,
            },
        })
    }

    /// Decode a full utterance in the requested mode. In teacher-forcing and
    /// scheduled-sampling modes the decode length equals the target length;
    /// free running requires an explicit length. The graph through fed-back
    /// predictions is retained, so gradients flow through the unrolled
    /// feedback loop.
    pub fn run(
        &self,
        tape: &mut Tape,
        leaves: &[NodeId],
        symbols: &[usize],
        targets: Option<&Tensor>,
        opts: DecodeOptions,
        rng: &mut DecodeRng,
    ) -> Result<DecodeResult> {
        let t_total = match opts.mode {
            DecodeMode::TeacherForcing | DecodeMode::ScheduledSampling(_) => {
                let targets = targets.ok_or_else(|| {
                    Error::input("teacher-forcing/scheduled-sampling decode requires targets")
                })?;
                if targets.cols() != self.config.frame_dim {
                    return Err(Error::input(format!(
                        "targets have {} channels, model frame_dim is {}",
                        targets.cols(),
                        self.config.frame_dim
                    )));
                }
                if let DecodeMode::ScheduledSampling(p) = opts.mode {
                    if !(0.0..=1.0).contains(&p) {
                        return Err(Error::input(format!("sampling probability {p} not in [0,1]")));
                    }
                }
                targets.rows()
            }
            DecodeMode::FreeRunning => opts
                .free_running_len
                .ok_or_else(|| Error::input("free-running decode requires an explicit length"))?,
        };
        if t_total == 0 {
            return Err(Error::input("decode length must be >= 1"));
        }

        let memory = self.encode(tape, leaves, symbols)?;
        let memory_proj = self.memory_projection(tape, leaves, memory)?;
        let mut state = self.initial_state(tape)?;
        let go = tape.constant(Tensor::zeros(vec![1, self.config.frame_dim]))?;

        let s_len = symbols.len();
        let mut frames: Vec<NodeId> = Vec::with_capacity(t_total);
        let mut behavior_rows: Vec<NodeId> = Vec::with_capacity(t_total);
        let mut alignment = Vec::with_capacity(t_total * s_len);
        let mut trace = Vec::with_capacity(t_total);

        for t in 0..t_total {
            let (prev, fed) = if t == 0 {
                (go, Feedback::Real)
            } else {
                let feed_real = match opts.mode {
                    DecodeMode::TeacherForcing => true,
                    DecodeMode::FreeRunning => false,
                    DecodeMode::ScheduledSampling(p) => rng.coin() < p,
                };
                if feed_real {
                    let row = targets.expect("targets checked above").row(t - 1).to_vec();
                    let node = tape.constant(Tensor::new(vec![1, self.config.frame_dim], row)?)?;
                    (node, Feedback::Real)
                } else {
                    let prev_pred = frames[t - 1];
                    let node = if opts.detach_feedback {
                        tape.constant(tape.value(prev_pred).clone())?
                    } else {
                        prev_pred
                    };
                    (node, Feedback::Predicted)
                }
            };
            let masks = rng.prenet_masks(&self.config);
            let step = self.decode_step(tape, leaves, prev, &state, memory, memory_proj, &masks)?;
            alignment.extend_from_slice(tape.value(step.align_row).values());
            let mut parts = vec![step.attn_hidden, step.dec_hidden];
            if self.config.behavior_includes_output {
                parts.push(step.frame);
            }
            behavior_rows.push(tape.concat_cols(&parts)?);
            frames.push(step.frame);
            state = step.state;
            trace.push(fed);
        }

        Ok(DecodeResult {
            predicted: tape.stack_rows(&frames)?,
            behavior: tape.stack_rows(&behavior_rows)?,
            alignment: Tensor::new(vec![t_total, s_len], alignment)?,
            feedback_trace: trace,
        })
    }

    /// Convenience decode on a private tape; returns copied values only.
    pub fn decode_to_values(
        &self,
        symbols: &[usize],
        targets: Option<&Tensor>,
        opts: DecodeOptions,
        seed: u64,
    ) -> Result<DecodeValues> {
        let mut tape = Tape::new();
        let leaves = tape.bind_frozen(&self.params)?;
        let mut rng = DecodeRng::from_seed(seed);
        let result = self.run(&mut tape, &leaves, symbols, targets, opts, &mut rng)?;
        Ok(DecodeValues {
            frames: tape.value(result.predicted).clone(),
            behavior: tape.value(result.behavior).clone(),
            alignment: result.alignment,
            feedback_trace: result.feedback_trace,
        })
    }
}

/// Value-level decode output (no tape attached).
#[derive(Debug, Clone)]
pub struct DecodeValues {
    pub frames: Tensor,
    pub behavior: Tensor,
    pub alignment: Tensor,
    pub feedback_trace: Vec<Feedback>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> GeneratorConfig {
        GeneratorConfig {
            vocab_size: 6,
            frame_dim: 5,
            embed_dim: 7,
            encoder_hidden: 4,
            prenet_dims: vec![6, 6],
            prenet_dropout: 0.5,
            attn_rnn_hidden: 8,
            dec_rnn_hidden: 9,
            attention_dim: 5,
            cell: CellKind::Gru,
            behavior_includes_output: false,
        }
    }

    fn targets_for(gen: &Generator, t: usize) -> Tensor {
        let mut rng = seeded(99);
        let values = (0..t * gen.config.frame_dim).map(|_| rng.gen_range(0.0..1.0)).collect();
        Tensor::new(vec![t, gen.config.frame_dim], values).unwrap()
    }

    #[test]
    fn encode_shape_and_determinism() {
        let gen = Generator::new(tiny_config(), 1).unwrap();
        let mut tape = Tape::new();
        let leaves = tape.bind_frozen(&gen.params).unwrap();
        let mem = gen.encode(&mut tape, &leaves, &[2]).unwrap();
        assert_eq!(tape.value(mem).shape(), &[1, 8]);
        let mem2 = gen.encode(&mut tape, &leaves, &[2]).unwrap();
        assert_eq!(tape.value(mem), tape.value(mem2));
    }

    #[test]
    fn encode_rejects_oov_and_empty() {
        let gen = Generator::new(tiny_config(), 1).unwrap();
        let mut tape = Tape::new();
        let leaves = tape.bind_frozen(&gen.params).unwrap();
        assert!(gen.encode(&mut tape, &leaves, &[]).is_err());
        assert!(gen.encode(&mut tape, &leaves, &[6]).is_err());
    }

    #[test]
    fn permuting_distinct_symbols_changes_memory() {
        let gen = Generator::new(tiny_config(), 7).unwrap();
        let mut tape = Tape::new();
        let leaves = tape.bind_frozen(&gen.params).unwrap();
        let a = gen.encode(&mut tape, &leaves, &[1, 2, 3]).unwrap();
        let b = gen.encode(&mut tape, &leaves, &[1, 3, 2]).unwrap();
        assert!(tape.value(a).max_abs_diff(tape.value(b)) > 1e-9);
    }

    #[test]
    fn alignment_rows_sum_to_one_and_single_key_is_exact() {
        let gen = Generator::new(tiny_config(), 3).unwrap();
        let targets = targets_for(&gen, 4);
        let out = gen
            .decode_to_values(&[2], Some(&targets), DecodeOptions::new(DecodeMode::TeacherForcing), 5)
            .unwrap();
        // S = 1: every attention row is exactly [1.0]
        for t in 0..out.alignment.rows() {
            assert_eq!(out.alignment.row(t), &[1.0]);
        }
        let out = gen
            .decode_to_values(
                &[2, 4, 1],
                Some(&targets),
                DecodeOptions::new(DecodeMode::TeacherForcing),
                5,
            )
            .unwrap();
        for t in 0..out.alignment.rows() {
            let s: f64 = out.alignment.row(t).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(out.alignment.row(t).iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn behavior_rows_are_the_concatenated_hiddens() {
        let gen = Generator::new(tiny_config(), 3).unwrap();
        let targets = targets_for(&gen, 3);
        let out = gen
            .decode_to_values(
                &[1, 2],
                Some(&targets),
                DecodeOptions::new(DecodeMode::TeacherForcing),
                5,
            )
            .unwrap();
        assert_eq!(out.behavior.shape(), &[3, gen.config.behavior_dim()]);
        assert_eq!(gen.config.behavior_dim(), 8 + 9);
    }

    #[test]
    fn behavior_can_include_outputs_via_config_flag() {
        let config = GeneratorConfig {
            behavior_includes_output: true,
            ..tiny_config()
        };
        let gen = Generator::new(config, 3).unwrap();
        let targets = targets_for(&gen, 3);
        let out = gen
            .decode_to_values(
                &[1],
                Some(&targets),
                DecodeOptions::new(DecodeMode::TeacherForcing),
                5,
            )
            .unwrap();
        assert_eq!(out.behavior.shape(), &[3, 8 + 9 + 5]);
    }

    #[test]
    fn same_seed_same_decode() {
        let gen = Generator::new(tiny_config(), 3).unwrap();
        let targets = targets_for(&gen, 4);
        let opts = DecodeOptions::new(DecodeMode::TeacherForcing);
        let a = gen.decode_to_values(&[1, 5], Some(&targets), opts, 5).unwrap();
        let b = gen.decode_to_values(&[1, 5], Some(&targets), opts, 5).unwrap();
        assert_eq!(a.frames, b.frames);
        assert_eq!(a.behavior, b.behavior);
    }

    #[test]
    fn scheduled_sampling_p1_is_teacher_forcing_bitwise() {
        let gen = Generator::new(tiny_config(), 3).unwrap();
        let targets = targets_for(&gen, 5);
        let tf = gen
            .decode_to_values(&[0, 3], Some(&targets), DecodeOptions::new(DecodeMode::TeacherForcing), 11)
            .unwrap();
        let ss = gen
            .decode_to_values(
                &[0, 3],
                Some(&targets),
                DecodeOptions::new(DecodeMode::ScheduledSampling(1.0)),
                11,
            )
            .unwrap();
        assert_eq!(tf.frames, ss.frames);
        assert_eq!(tf.behavior, ss.behavior);
        assert_eq!(tf.alignment, ss.alignment);
        assert_eq!(tf.feedback_trace, ss.feedback_trace);
    }

    #[test]
    fn scheduled_sampling_p0_is_free_running_bitwise() {
        let gen = Generator::new(tiny_config(), 3).unwrap();
        let targets = targets_for(&gen, 5);
        let fr = gen
            .decode_to_values(&[0, 3], None, DecodeOptions::free_running(5), 11)
            .unwrap();
        let ss = gen
            .decode_to_values(
                &[0, 3],
                Some(&targets),
                DecodeOptions::new(DecodeMode::ScheduledSampling(0.0)),
                11,
            )
            .unwrap();
        assert_eq!(fr.frames, ss.frames);
        assert_eq!(fr.behavior, ss.behavior);
        assert_eq!(fr.feedback_trace, ss.feedback_trace);
    }

    #[test]
    fn feedback_equivalence_when_targets_equal_prior_prediction() {
        // Run FR once; then TF with targets set to the FR prediction and the
        // same dropout seed feeds identical vectors at every step.
        let gen = Generator::new(tiny_config(), 3).unwrap();
        let fr = gen
            .decode_to_values(&[2, 1], None, DecodeOptions::free_running(6), 21)
            .unwrap();
        let tf = gen
            .decode_to_values(
                &[2, 1],
                Some(&fr.frames),
                DecodeOptions::new(DecodeMode::TeacherForcing),
                21,
            )
            .unwrap();
        assert_eq!(fr.behavior, tf.behavior);
        assert_eq!(fr.frames, tf.frames);
    }

    #[test]
    fn teacher_forcing_locality_is_exact() {
        // Perturbing target frame j changes predictions only at steps t > j.
        let gen = Generator::new(tiny_config(), 13).unwrap();
        let targets = targets_for(&gen, 6);
        let opts = DecodeOptions::new(DecodeMode::TeacherForcing);
        let base = gen.decode_to_values(&[1, 4, 2], Some(&targets), opts, 31).unwrap();
        let j = 3;
        let mut perturbed = targets.clone();
        perturbed.values_mut()[j * gen.config.frame_dim] += 0.25;
        let out = gen.decode_to_values(&[1, 4, 2], Some(&perturbed), opts, 31).unwrap();
        for t in 0..6 {
            let diff: f64 = base
                .frames
                .row(t)
                .iter()
                .zip(out.frames.row(t))
                .map(|(a, b)| (a - b).abs())
                .sum();
            if t <= j {
                assert_eq!(diff, 0.0, "step {t} must be bitwise unchanged");
            }
        }
        let diff_after: f64 = base
            .frames
            .row(j + 1)
            .iter()
            .zip(out.frames.row(j + 1))
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(diff_after > 0.0, "perturbation must reach step j+1");
    }

    #[test]
    fn missing_targets_and_zero_length_are_input_errors() {
        let gen = Generator::new(tiny_config(), 3).unwrap();
        let err = gen
            .decode_to_values(&[1], None, DecodeOptions::new(DecodeMode::TeacherForcing), 5)
            .unwrap_err();
        assert!(matches!(err, Error::Input(_)));
        let err = gen
            .decode_to_values(&[1], None, DecodeOptions::new(DecodeMode::FreeRunning), 5)
            .unwrap_err();
        assert!(matches!(err, Error::Input(_)));
        let err = gen
            .decode_to_values(&[1], None, DecodeOptions::free_running(0), 5)
            .unwrap_err();
        assert!(matches!(err, Error::Input(_)));
    }

    #[test]
    fn ss_probability_anchors_and_midpoint() {
        let s = SsSchedule {
            p_start: 1.0,
            p_end: 0.5,
            decay_steps: 50_000,
        };
        assert_eq!(ss_probability(&s, 0), 1.0);
        assert_eq!(ss_probability(&s, 50_000), 0.5);
        assert_eq!(ss_probability(&s, 80_000), 0.5);
        assert!((ss_probability(&s, 25_000) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn gradients_flow_through_free_running_feedback() {
        use crate::graph::forward_backward;
        // Compare FR gradients with and without the feedback path detached;
        // they must differ, i.e. the fed-back prediction carries gradient.
        let gen = Generator::new(tiny_config(), 17).unwrap();
        let targets = targets_for(&gen, 5);
        let grads_for = |detach: bool| {
            let mut params = gen.params.clone();
            forward_backward(&mut params, |tape, leaves| {
                let mut rng = DecodeRng::from_seed(77);
                let opts = DecodeOptions {
                    mode: DecodeMode::FreeRunning,
                    free_running_len: Some(5),
                    detach_feedback: detach,
                };
                let out = gen.run(tape, leaves, &[1, 2], None, opts, &mut rng)?;
                let tgt = tape.constant(targets.clone())?;
                tape.mse(out.predicted, tgt)
            })
            .unwrap();
            params
        };
        let attached = grads_for(false);
        let detached = grads_for(true);
        let idx = attached.index_of("out.w").unwrap();
        let diff = attached.get(idx).grad.max_abs_diff(&detached.get(idx).grad);
        assert!(diff > 1e-12, "feedback path carries no gradient (diff {diff})");
    }
}
