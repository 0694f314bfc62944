//! Two-phase training: teacher-forced pretraining, then accuracy-gated
//! alternating generator/discriminator updates. Per step the batch is decoded
//! in the real-data mode (teacher forcing, or scheduled sampling in the SS
//! variants) and in free-running mode; the generator is moved by the gradient
//! of L_T or, when the adversarial gate is open, of L_G; the discriminator is
//! moved by the hinge loss while its gate is open. Gates are refreshed every
//! `probe_period` steps from the discriminator's accuracy on a fixed probe
//! subset of the training data.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::corpus::Corpus;
use crate::discriminator::{accuracy, Discriminator, DiscriminatorConfig};
use crate::error::{Error, Result};
use crate::generator::{
    ss_probability, DecodeMode, DecodeOptions, DecodeRng, Generator, GeneratorConfig, SsSchedule,
};
use crate::graph::{NodeId, Tape};
use crate::optim::{AdamState, LrSchedule, Params};
use crate::rng::{derive_seed, derive_seed_n, derive_seed_nn, derive_seed_str, seeded};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Tf,
    Ss,
    TfGan,
    SsGan,
}

impl TrainMode {
    pub fn is_gan(self) -> bool {
        matches!(self, TrainMode::TfGan | TrainMode::SsGan)
    }

    pub fn uses_scheduled_sampling(self) -> bool {
        matches!(self, TrainMode::Ss | TrainMode::SsGan)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::Tf => "tf",
            TrainMode::Ss => "ss",
            TrainMode::TfGan => "tf-gan",
            TrainMode::SsGan => "ss-gan",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tf" => Ok(TrainMode::Tf),
            "ss" => Ok(TrainMode::Ss),
            "tf-gan" => Ok(TrainMode::TfGan),
            "ss-gan" => Ok(TrainMode::SsGan),
            other => Err(Error::input(format!(
                "unknown mode `{other}` (expected tf|ss|tf-gan|ss-gan)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub mode: TrainMode,
    /// Adversarial weight alpha in L_G.
    pub alpha: f64,
    pub pretrain_steps: u64,
    pub gan_steps: u64,
    /// Probe the discriminator accuracy every this many steps.
    pub probe_period: u64,
    /// Accuracy band [lower, upper): generator receives adversarial gradient
    /// above lower, discriminator trains below upper.
    pub acc_lower: f64,
    pub acc_upper: f64,
    pub batch_size: usize,
    pub lr_g: LrSchedule,
    pub lr_d: LrSchedule,
    pub ss: SsSchedule,
    pub seed: u64,
    /// Probe set size in batches.
    pub probe_batches: usize,
    /// Test hook: when set, every probe reports this accuracy instead of
    /// scoring the probe set.
    pub probe_override: Option<f64>,
}

impl Default for TrainConfig {
    /// Desk-scale defaults: the full teacher-forcing vs adversarial
    /// comparison fits in minutes on one CPU core.
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::Tf,
            alpha: 1e-3,
            pretrain_steps: 1500,
            gan_steps: 1500,
            probe_period: 50,
            acc_lower: 0.75,
            acc_upper: 0.97,
            batch_size: 16,
            lr_g: LrSchedule {
                lr0: 1e-3,
                lr_final: 1e-5,
                decay_steps: 3000,
            },
            lr_d: LrSchedule {
                lr0: 1e-3,
                lr_final: 1e-5,
                decay_steps: 3000,
            },
            ss: SsSchedule {
                p_start: 1.0,
                p_end: 0.5,
                decay_steps: 1500,
            },
            seed: 0,
            probe_batches: 4,
            probe_override: None,
        }
    }
}

impl TrainConfig {
    /// Reference-scale hyperparameters (50k+50k steps, batch 128).
    pub fn paper_scale() -> Self {
        TrainConfig {
            pretrain_steps: 50_000,
            gan_steps: 50_000,
            probe_period: 500,
            batch_size: 128,
            lr_g: LrSchedule {
                lr0: 1e-3,
                lr_final: 1e-5,
                decay_steps: 50_000,
            },
            lr_d: LrSchedule {
                lr0: 1e-3,
                lr_final: 1e-5,
                decay_steps: 50_000,
            },
            ss: SsSchedule {
                p_start: 1.0,
                p_end: 0.5,
                decay_steps: 50_000,
            },
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.acc_lower && self.acc_lower < self.acc_upper && self.acc_upper <= 1.0) {
            return Err(Error::config(
                "accuracy band must satisfy 0 <= lower < upper <= 1",
            ));
        }
        if self.probe_period == 0 {
            return Err(Error::config("probe_period must be >= 1"));
        }
        if self.alpha < 0.0 {
            return Err(Error::config("alpha must be >= 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if self.probe_batches == 0 {
            return Err(Error::config("probe_batches must be >= 1"));
        }
        self.ss.validate()
    }
}

/// Gate state from Algorithm-style accuracy thresholds: `adversarial` is the
/// generator's s_g, `train_disc` the discriminator's s_d.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GateState {
    pub adversarial: bool,
    pub train_disc: bool,
}

impl Default for GateState {
    fn default() -> Self {
        GateState {
            adversarial: false,
            train_disc: true,
        }
    }
}

/// Strict comparisons: s_g = accuracy > lower, s_d = accuracy < upper.
pub fn update_gates(accuracy: f64, lower: f64, upper: f64) -> GateState {
    GateState {
        adversarial: accuracy > lower,
        train_disc: accuracy < upper,
    }
}

pub const METRICS_HEADER: &str =
    "step,phase,mode,L_T,L_D,L_G,score_t,score_f,accuracy,s_g,s_d,lr_g,lr_d";

/// One metrics row; `None` serializes as an empty field.
#[derive(Debug, Clone, Default)]
pub struct LossReport {
    pub step: u64,
    pub phase: &'static str,
    pub mode: &'static str,
    pub l_t: Option<f64>,
    pub l_d: Option<f64>,
    pub l_g: Option<f64>,
    pub score_t: Option<f64>,
    pub score_f: Option<f64>,
    pub accuracy: Option<f64>,
    pub s_g: Option<bool>,
    pub s_d: Option<bool>,
    pub lr_g: Option<f64>,
    pub lr_d: Option<f64>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn fmt_flag(v: Option<bool>) -> String {
    v.map(|b| if b { "1" } else { "0" }.to_string()).unwrap_or_default()
}

impl LossReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.step,
            self.phase,
            self.mode,
            fmt_opt(self.l_t),
            fmt_opt(self.l_d),
            fmt_opt(self.l_g),
            fmt_opt(self.score_t),
            fmt_opt(self.score_f),
            fmt_opt(self.accuracy),
            fmt_flag(self.s_g),
            fmt_flag(self.s_d),
            fmt_opt(self.lr_g),
            fmt_opt(self.lr_d),
        )
    }
}

struct MetricsWriter {
    writer: BufWriter<fs::File>,
}

impl MetricsWriter {
    fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut writer = BufWriter::new(file);
        writeln!(writer, "{METRICS_HEADER}").map_err(|e| Error::io(path, e))?;
        Ok(MetricsWriter { writer })
    }

    fn row(&mut self, report: &LossReport) -> Result<()> {
        writeln!(self.writer, "{}", report.csv_row())
            .map_err(|e| Error::io("metrics stream", e))
    }

    fn finish(mut self) -> Result<()> {
        self.writer.flush().map_err(|e| Error::io("metrics stream", e))
    }
}

/// Endless deterministic shuffled index stream; reshuffles per epoch.
struct BatchStream {
    n: usize,
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
    pos: usize,
}

impl BatchStream {
    fn new(n: usize, seed: u64) -> Self {
        let mut s = BatchStream {
            n,
            seed,
            epoch: 0,
            order: Vec::new(),
            pos: 0,
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        let mut rng = seeded(derive_seed_n(self.seed, "epoch", self.epoch));
        self.order = (0..self.n).collect();
        self.order.shuffle(&mut rng);
        self.pos = 0;
        self.epoch += 1;
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut batch = Vec::with_capacity(size);
        while batch.len() < size {
            if self.pos == self.order.len() {
                self.reshuffle();
            }
            batch.push(self.order[self.pos]);
            self.pos += 1;
        }
        batch
    }
}

fn apply_leaf_grads(params: &mut Params, leaves: &[NodeId], tape: &Tape, loss: NodeId) -> Result<()> {
    let grads = tape.backward(loss)?;
    for (i, &leaf) in leaves.iter().enumerate() {
        if let Some(g) = grads.get(leaf) {
            if !g.is_finite() {
                return Err(Error::numeric(format!(
                    "non-finite gradient for parameter `{}`",
                    params.get(i).name
                )));
            }
            let p = params.get_mut(i);
            for (o, c) in p.grad.values_mut().iter_mut().zip(g.values()) {
                *o += c;
            }
        }
    }
    Ok(())
}

/// Teacher-forced pretraining: `pretrain_steps` reconstruction-only updates.
/// Writes a metrics CSV and an (atomic) checkpoint with the optimizer state;
/// on a numeric failure the checkpoint of the last valid step is retained.
pub fn pretrain(
    cfg: &TrainConfig,
    gcfg: &GeneratorConfig,
    corpus: &Corpus,
    out_ckpt: &Path,
    metrics_path: &Path,
) -> Result<Generator> {
    cfg.validate()?;
    check_corpus_match(gcfg, corpus)?;
    let mut gen = Generator::new(gcfg.clone(), cfg.seed)?;
    let mut adam = AdamState::new(&gen.params);
    let mut metrics = MetricsWriter::create(metrics_path)?;
    let mut stream = BatchStream::new(corpus.utterances.len(), derive_seed(cfg.seed, "pretrain.order"));

    for step in 0..cfg.pretrain_steps {
        let batch = stream.next_batch(cfg.batch_size);
        let lr = cfg.lr_g.lr_at(step);
        let result = pretrain_step(cfg, &mut gen, &mut adam, corpus, &batch, step, lr);
        let l_t = match result {
            Ok(l) => l,
            Err(e) => {
                // keep the last valid parameters on disk
                save_checkpoint(&gen.params, Some(&adam), out_ckpt)?;
                metrics.finish()?;
                return Err(e);
            }
        };
        metrics.row(&LossReport {
            step,
            phase: "pretrain",
            mode: "tf",
            l_t: Some(l_t),
            lr_g: Some(lr),
            ..LossReport::default()
        })?;
    }
    save_checkpoint(&gen.params, Some(&adam), out_ckpt)?;
    metrics.finish()?;
    Ok(gen)
}

fn pretrain_step(
    cfg: &TrainConfig,
    gen: &mut Generator,
    adam: &mut AdamState,
    corpus: &Corpus,
    batch: &[usize],
    step: u64,
    lr: f64,
) -> Result<f64> {
    let mut tape = Tape::new();
    let leaves = tape.bind_params(&gen.params)?;
    let mut per_utt = Vec::with_capacity(batch.len());
    for (ui, &idx) in batch.iter().enumerate() {
        let utt = &corpus.utterances[idx];
        let mut rng = DecodeRng::from_seed(derive_seed_nn(cfg.seed, "pretrain.drop", step, ui as u64));
        let out = gen.run(
            &mut tape,
            &leaves,
            &utt.symbols,
            Some(&utt.frames),
            DecodeOptions::new(DecodeMode::TeacherForcing),
            &mut rng,
        )?;
        let tgt = tape.constant(utt.frames.clone())?;
        per_utt.push(tape.mse(out.predicted, tgt)?);
    }
    let stacked = tape.stack_rows(&per_utt)?;
    let l_t = tape.mean_all(stacked)?;
    let loss = tape.value(l_t).item();
    apply_leaf_grads(&mut gen.params, &leaves, &tape, l_t)?;
    drop(tape);
    adam.apply(&mut gen.params, lr)?;
    Ok(loss)
}

/// Result of the second phase; the discriminator exists only in GAN modes.
pub struct GanOutcome {
    pub generator: Generator,
    pub discriminator: Option<Discriminator>,
    pub final_gates: GateState,
}

/// Second training phase per the gated-update procedure. `init_ckpt` is the
/// pretrained generator; in `tf`/`ss` modes no discriminator is constructed
/// and training continues on the reconstruction loss alone. Learning-rate
/// schedules continue from global step `pretrain_steps + i`.
pub fn train_gan(
    cfg: &TrainConfig,
    gcfg: &GeneratorConfig,
    dcfg: &DiscriminatorConfig,
    corpus: &Corpus,
    init_ckpt: &Path,
    out_ckpt: &Path,
    metrics_path: &Path,
) -> Result<GanOutcome> {
    cfg.validate()?;
    check_corpus_match(gcfg, corpus)?;
    let mut gen = Generator::new(gcfg.clone(), cfg.seed)?;
    let (loaded, opt_state) = load_checkpoint(init_ckpt)?;
    load_params_into(&mut gen.params, &loaded)?;
    let mut adam_g = opt_state.unwrap_or_else(|| AdamState::new(&gen.params));

    let mut disc = if cfg.mode.is_gan() {
        if dcfg.input_dim != gcfg.behavior_dim() {
            return Err(Error::config(format!(
                "discriminator input_dim {} does not match behavior dim {}",
                dcfg.input_dim,
                gcfg.behavior_dim()
            )));
        }
        Some(Discriminator::new(dcfg.clone(), cfg.seed)?)
    } else {
        None
    };
    let mut adam_d = disc.as_ref().map(|d| AdamState::new(&d.params));

    let probe_ids: Vec<usize> = {
        let mut ids: Vec<usize> = (0..corpus.utterances.len()).collect();
        let mut rng = seeded(derive_seed(cfg.seed, "probe.order"));
        ids.shuffle(&mut rng);
        ids.truncate((cfg.probe_batches * cfg.batch_size).min(ids.len()));
        ids
    };

    let mut metrics = MetricsWriter::create(metrics_path)?;
    let mut stream = BatchStream::new(corpus.utterances.len(), derive_seed(cfg.seed, "gan.order"));
    let mut gates = GateState::default();

    for i in 0..cfg.gan_steps {
        let batch = stream.next_batch(cfg.batch_size);
        let global_step = cfg.pretrain_steps + i;
        let result = gan_step(
            cfg,
            &mut gen,
            &mut adam_g,
            disc.as_mut(),
            adam_d.as_mut(),
            corpus,
            &batch,
            i,
            global_step,
            gates,
        );
        let mut report = match result {
            Ok(r) => r,
            Err(e) => {
                save_checkpoint(&gen.params, Some(&adam_g), out_ckpt)?;
                metrics.finish()?;
                return Err(e);
            }
        };
        if let Some(d) = disc.as_ref() {
            if i % cfg.probe_period == 0 {
                let acc = match cfg.probe_override {
                    Some(a) => a,
                    None => probe_accuracy(cfg, &gen, d, corpus, &probe_ids, i)?,
                };
                gates = update_gates(acc, cfg.acc_lower, cfg.acc_upper);
                report.accuracy = Some(acc);
            }
            report.s_g = Some(gates.adversarial);
            report.s_d = Some(gates.train_disc);
        }
        metrics.row(&report)?;
    }
    save_checkpoint(&gen.params, Some(&adam_g), out_ckpt)?;
    metrics.finish()?;
    Ok(GanOutcome {
        generator: gen,
        discriminator: disc,
        final_gates: gates,
    })
}

#[allow(clippy::too_many_arguments)]
fn gan_step(
    cfg: &TrainConfig,
    gen: &mut Generator,
    adam_g: &mut AdamState,
    mut disc: Option<&mut Discriminator>,
    adam_d: Option<&mut AdamState>,
    corpus: &Corpus,
    batch: &[usize],
    i: u64,
    global_step: u64,
    gates: GateState,
) -> Result<LossReport> {
    let real_mode = if cfg.mode.uses_scheduled_sampling() {
        DecodeMode::ScheduledSampling(ss_probability(&cfg.ss, i))
    } else {
        DecodeMode::TeacherForcing
    };
    let is_gan = disc.is_some();

    // ---- decode the batch in both modes and update the generator ----
    let mut tape = Tape::new();
    let leaves = tape.bind_params(&gen.params)?;
    let mut per_utt_mse = Vec::with_capacity(batch.len());
    let mut real_behaviors_nodes = Vec::with_capacity(batch.len());
    let mut fr_behaviors_nodes = Vec::with_capacity(batch.len());
    let mut real_behaviors = Vec::with_capacity(batch.len());
    let mut fr_behaviors = Vec::with_capacity(batch.len());

    for (ui, &idx) in batch.iter().enumerate() {
        let utt = &corpus.utterances[idx];
        let mut rng = DecodeRng::from_seed(derive_seed_nn(cfg.seed, "gan.real", i, ui as u64));
        let real = gen.run(
            &mut tape,
            &leaves,
            &utt.symbols,
            Some(&utt.frames),
            DecodeOptions::new(real_mode),
            &mut rng,
        )?;
        let tgt = tape.constant(utt.frames.clone())?;
        per_utt_mse.push(tape.mse(real.predicted, tgt)?);
        if is_gan {
            let mut fr_rng = DecodeRng::from_seed(derive_seed_nn(cfg.seed, "gan.fr", i, ui as u64));
            let fr = gen.run(
                &mut tape,
                &leaves,
                &utt.symbols,
                None,
                DecodeOptions::free_running(utt.frame_count()),
                &mut fr_rng,
            )?;
            real_behaviors.push(tape.value(real.behavior).clone());
            fr_behaviors.push(tape.value(fr.behavior).clone());
            real_behaviors_nodes.push(real.behavior);
            fr_behaviors_nodes.push(fr.behavior);
        }
    }
    let stacked = tape.stack_rows(&per_utt_mse)?;
    let l_t = tape.mean_all(stacked)?;
    let l_t_value = tape.value(l_t).item();

    let mut report = LossReport {
        step: i,
        phase: "gan",
        mode: cfg.mode.as_str(),
        l_t: Some(l_t_value),
        lr_g: Some(cfg.lr_g.lr_at(global_step)),
        ..LossReport::default()
    };

    let gen_loss_node = if is_gan && gates.adversarial {
        // L_G = L_T - alpha * (mean D(B_f) - mean D(B_t)); theta_d frozen.
        let d = disc.as_deref().expect("gan mode");
        let d_leaves = tape.bind_frozen(&d.params)?;
        let mut t_scores = Vec::with_capacity(batch.len());
        let mut f_scores = Vec::with_capacity(batch.len());
        for (bt, bf) in real_behaviors_nodes.iter().zip(&fr_behaviors_nodes) {
            t_scores.push(d.score(&mut tape, &d_leaves, *bt)?.score);
            f_scores.push(d.score(&mut tape, &d_leaves, *bf)?.score);
        }
        let t_stack = tape.stack_rows(&t_scores)?;
        let f_stack = tape.stack_rows(&f_scores)?;
        let mean_t = tape.mean_all(t_stack)?;
        let mean_f = tape.mean_all(f_stack)?;
        let adv = tape.sub(mean_f, mean_t)?;
        let weighted = tape.scale_const(adv, -cfg.alpha)?;
        let l_g = tape.add(l_t, weighted)?;
        report.l_g = Some(tape.value(l_g).item());
        report.score_t = Some(tape.value(mean_t).item());
        report.score_f = Some(tape.value(mean_f).item());
        l_g
    } else {
        l_t
    };
    apply_leaf_grads(&mut gen.params, &leaves, &tape, gen_loss_node)?;
    drop(tape);
    adam_g.apply(&mut gen.params, cfg.lr_g.lr_at(global_step))?;

    // ---- discriminator update on fresh scores, generator frozen ----
    if let Some(d) = disc.as_deref_mut() {
        if gates.train_disc {
            d.refresh_u()?;
            let mut tape = Tape::new();
            let d_leaves = tape.bind_params(&d.params)?;
            let one = tape.constant(Tensor::scalar(1.0))?;
            let mut pair_losses = Vec::with_capacity(batch.len());
            let mut t_vals = Vec::with_capacity(batch.len());
            let mut f_vals = Vec::with_capacity(batch.len());
            for (bt, bf) in real_behaviors.iter().zip(&fr_behaviors) {
                let bt_node = tape.constant(bt.clone())?;
                let bf_node = tape.constant(bf.clone())?;
                let s_t = d.score(&mut tape, &d_leaves, bt_node)?.score;
                let s_f = d.score(&mut tape, &d_leaves, bf_node)?.score;
                t_vals.push(tape.value(s_t).item());
                f_vals.push(tape.value(s_f).item());
                // hinge: relu(1 - s_t) + relu(1 + s_f)
                let t_margin = tape.sub(one, s_t)?;
                let t_term = tape.leaky_relu(t_margin, 0.0)?;
                let f_margin = tape.add(one, s_f)?;
                let f_term = tape.leaky_relu(f_margin, 0.0)?;
                pair_losses.push(tape.add(t_term, f_term)?);
            }
            let stacked = tape.stack_rows(&pair_losses)?;
            let l_d = tape.mean_all(stacked)?;
            report.l_d = Some(tape.value(l_d).item());
            report.score_t = Some(t_vals.iter().sum::<f64>() / t_vals.len() as f64);
            report.score_f = Some(f_vals.iter().sum::<f64>() / f_vals.len() as f64);
            apply_leaf_grads(&mut d.params, &d_leaves, &tape, l_d)?;
            drop(tape);
            let lr_d = cfg.lr_d.lr_at(global_step);
            report.lr_d = Some(lr_d);
            adam_d.expect("optimizer exists with discriminator").apply(&mut d.params, lr_d)?;
        }
    }
    Ok(report)
}

/// Discriminator accuracy on the fixed probe subset, scored with frozen
/// weights and singular-vector estimates.
fn probe_accuracy(
    cfg: &TrainConfig,
    gen: &Generator,
    disc: &Discriminator,
    corpus: &Corpus,
    probe_ids: &[usize],
    step: u64,
) -> Result<f64> {
    let real_mode = if cfg.mode.uses_scheduled_sampling() {
        DecodeMode::ScheduledSampling(ss_probability(&cfg.ss, step))
    } else {
        DecodeMode::TeacherForcing
    };
    let mut tf_scores = Vec::with_capacity(probe_ids.len());
    let mut fr_scores = Vec::with_capacity(probe_ids.len());
    for &idx in probe_ids {
        let utt = &corpus.utterances[idx];
        let real = gen.decode_to_values(
            &utt.symbols,
            Some(&utt.frames),
            DecodeOptions::new(real_mode),
            derive_seed_str(cfg.seed, "probe.real", &utt.id),
        )?;
        let fr = gen.decode_to_values(
            &utt.symbols,
            None,
            DecodeOptions::free_running(utt.frame_count()),
            derive_seed_str(cfg.seed, "probe.fr", &utt.id),
        )?;
        tf_scores.push(disc.score_value(&real.behavior)?);
        fr_scores.push(disc.score_value(&fr.behavior)?);
    }
    accuracy(&tf_scores, &fr_scores)
}

/// Copy values from a loaded parameter collection into `target`, requiring an
/// exact name/shape match in both directions.
pub fn load_params_into(target: &mut Params, source: &Params) -> Result<()> {
    if source.len() != target.len() {
        return Err(Error::config(format!(
            "checkpoint has {} tensors, model expects {}",
            source.len(),
            target.len()
        )));
    }
    for i in 0..target.len() {
        let name = target.get(i).name.clone();
        let Some(j) = source.index_of(&name) else {
            return Err(Error::config(format!("checkpoint is missing tensor `{name}`")));
        };
        let src = source.get(j);
        if src.value.shape() != target.get(i).value.shape() {
            return Err(Error::config(format!(
                "checkpoint tensor `{name}` has shape {:?}, expected {:?}",
                src.value.shape(),
                target.get(i).value.shape()
            )));
        }
        let values = src.value.values().to_vec();
        target.get_mut(i).value.values_mut().copy_from_slice(&values);
    }
    Ok(())
}

fn check_corpus_match(gcfg: &GeneratorConfig, corpus: &Corpus) -> Result<()> {
    if gcfg.vocab_size != corpus.vocab_size || gcfg.frame_dim != corpus.frame_dim {
        return Err(Error::config(format!(
            "generator config (K={}, F={}) does not match corpus (K={}, F={})",
            gcfg.vocab_size, gcfg.frame_dim, corpus.vocab_size, corpus.frame_dim
        )));
    }
    if corpus.utterances.is_empty() {
        return Err(Error::input("corpus has no utterances"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gate_truth_table_with_strict_inequalities() {
        let cases = [
            (0.70, false, true),
            (0.75, false, true), // exactly at the lower bound: strict >
            (0.80, true, true),
            (0.97, true, false), // exactly at the upper bound: strict <
            (0.98, true, false),
        ];
        for (acc, s_g, s_d) in cases {
            let g = update_gates(acc, 0.75, 0.97);
            assert_eq!(g.adversarial, s_g, "accuracy {acc}");
            assert_eq!(g.train_disc, s_d, "accuracy {acc}");
        }
        assert_eq!(GateState::default(), GateState { adversarial: false, train_disc: true });
    }

    #[test]
    fn batch_stream_is_deterministic_and_covers_epochs() {
        let mut a = BatchStream::new(10, 7);
        let mut b = BatchStream::new(10, 7);
        let batch_a: Vec<usize> = (0..4).flat_map(|_| a.next_batch(3)).collect();
        let batch_b: Vec<usize> = (0..4).flat_map(|_| b.next_batch(3)).collect();
        assert_eq!(batch_a, batch_b);
        // first epoch (10 items) is a permutation
        let mut seen: Vec<usize> = batch_a[..10].to_vec();
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn csv_rows_have_empty_fields_where_not_applicable() {
        let report = LossReport {
            step: 3,
            phase: "pretrain",
            mode: "tf",
            l_t: Some(0.5),
            lr_g: Some(1e-3),
            ..LossReport::default()
        };
        assert_eq!(report.csv_row(), "3,pretrain,tf,0.5,,,,,,,,0.001,");
        assert_eq!(METRICS_HEADER.split(',').count(), report.csv_row().split(',').count());
    }
}
