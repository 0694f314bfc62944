//! Deterministic synthetic corpus: symbol sequences rendered to smooth
//! frame matrices with a first-order recurrence, so the target at frame t
//! genuinely depends on frame t-1 and free-running decode errors compound.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{derive_seed_n, derive_seed_str, seeded};
use crate::tensor::Tensor;

pub const CORPUS_MAGIC: &str = "PFDATA 1";

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    /// Symbol vocabulary size K.
    pub vocab_size: usize,
    /// Channels per frame F.
    pub frame_dim: usize,
    /// Per-symbol duration range [d_min, d_max] in frames.
    pub dur_min: usize,
    pub dur_max: usize,
    /// Recurrence coefficient lambda in [0, 1).
    pub smoothing: f64,
    /// Uniform noise amplitude a (noise in [-a, a]).
    pub noise_amp: f64,
    /// Utterance length range in symbols.
    pub len_min: usize,
    pub len_max: usize,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            vocab_size: 12,
            frame_dim: 16,
            dur_min: 3,
            dur_max: 6,
            smoothing: 0.6,
            noise_amp: 0.01,
            len_min: 4,
            len_max: 12,
            seed: 0,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::config("vocab_size must be >= 2"));
        }
        if self.frame_dim < 2 {
            return Err(Error::config("frame_dim must be >= 2"));
        }
        if self.dur_min < 1 || self.dur_max < self.dur_min {
            return Err(Error::config("duration range must satisfy 1 <= d_min <= d_max"));
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return Err(Error::config("smoothing must be in [0, 1)"));
        }
        if self.noise_amp < 0.0 {
            return Err(Error::config("noise amplitude must be >= 0"));
        }
        if self.len_min < 1 || self.len_max < self.len_min {
            return Err(Error::config("length range must satisfy 1 <= l_min <= l_max"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub symbols: Vec<usize>,
    /// T x F frame matrix, values in [0, 1].
    pub frames: Tensor,
}

impl Utterance {
    pub fn frame_count(&self) -> usize {
        self.frames.rows()
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub vocab_size: usize,
    pub frame_dim: usize,
    pub utterances: Vec<Utterance>,
}

/// Per-symbol spectral envelope (a Gaussian bump over channels) and its fixed
/// duration, both seeded from (config.seed, symbol).
pub fn symbol_profile(config: &CorpusConfig, symbol: usize) -> (Vec<f64>, usize) {
    let mut rng = seeded(derive_seed_n(config.seed, "symbol", symbol as u64));
    let f = config.frame_dim as f64;
    let center = rng.gen_range(0.0..f - 1.0);
    let width = rng.gen_range(0.8..(f / 4.0).max(1.0));
    let amp = rng.gen_range(0.6..1.0);
    let envelope = (0..config.frame_dim)
        .map(|ch| {
            let d = ch as f64 - center;
            amp * (-d * d / (2.0 * width * width)).exp()
        })
        .collect();
    let duration = rng.gen_range(config.dur_min..=config.dur_max);
    (envelope, duration)
}

fn symbols_key(symbols: &[usize]) -> String {
    symbols
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// Render the target frame matrix for a symbol sequence:
/// y_t = lambda * y_{t-1} + (1 - lambda) * e_{sigma(t)} + noise_t, clamped to
/// [0, 1], y_0 the zero vector. Pure function of (symbols, config.seed).
pub fn render_target(symbols: &[usize], config: &CorpusConfig) -> Result<Tensor> {
    config.validate()?;
    if symbols.is_empty() {
        return Err(Error::input("render_target: empty symbol sequence"));
    }
    if let Some(&bad) = symbols.iter().find(|&&s| s >= config.vocab_size) {
        return Err(Error::input(format!(
            "symbol {bad} out of vocabulary (K = {})",
            config.vocab_size
        )));
    }
    let profiles: Vec<(Vec<f64>, usize)> = symbols
        .iter()
        .map(|&s| symbol_profile(config, s))
        .collect();
    let total_frames: usize = profiles.iter().map(|(_, d)| d).sum();
    let f_dim = config.frame_dim;
    let lam = config.smoothing;

    let mut noise_rng = seeded(derive_seed_str(config.seed, "render", &symbols_key(symbols)));
    let mut frames = Vec::with_capacity(total_frames * f_dim);
    let mut prev = vec![0.0; f_dim];
    for (envelope, duration) in &profiles {
        for _ in 0..*duration {
            for ch in 0..f_dim {
                let noise = if config.noise_amp > 0.0 {
                    noise_rng.gen_range(-config.noise_amp..=config.noise_amp)
                } else {
                    0.0
                };
                let v = lam * prev[ch] + (1.0 - lam) * envelope[ch] + noise;
                frames.push(v.clamp(0.0, 1.0));
            }
            let start = frames.len() - f_dim;
            prev.copy_from_slice(&frames[start..]);
        }
    }
    Tensor::new(vec![total_frames, f_dim], frames)
}

fn random_utterance(
    config: &CorpusConfig,
    split: &str,
    index: usize,
    len_min: usize,
    len_max: usize,
) -> Result<Utterance> {
    let id = format!("{split}-{index:05}");
    let mut rng = seeded(derive_seed_str(config.seed, "utterance", &id));
    let len = rng.gen_range(len_min..=len_max);
    let symbols: Vec<usize> = (0..len).map(|_| rng.gen_range(0..config.vocab_size)).collect();
    let frames = render_target(&symbols, config)?;
    Ok(Utterance { id, symbols, frames })
}

#[derive(Debug, Clone)]
pub struct CorpusPaths {
    pub train: PathBuf,
    pub dev: PathBuf,
    pub eval: PathBuf,
}

/// Generate train/dev/eval splits and write them under `out_dir`. The eval
/// split draws symbol counts from [len_min, len_max] * multiplier to stress
/// long, unseen contexts; train and dev use the configured range.
pub fn make_corpus(
    config: &CorpusConfig,
    out_dir: &Path,
    n_train: usize,
    n_dev: usize,
    n_eval: usize,
    eval_length_multiplier: usize,
) -> Result<CorpusPaths> {
    config.validate()?;
    if n_train < 1 || n_dev < 1 || n_eval < 1 {
        return Err(Error::input("split sizes must be >= 1"));
    }
    if eval_length_multiplier < 1 {
        return Err(Error::input("eval_length_multiplier must be >= 1"));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut gen_split = |split: &str, count: usize, lmin: usize, lmax: usize| -> Result<Vec<Utterance>> {
        (0..count)
            .map(|i| random_utterance(config, split, i, lmin, lmax))
            .collect()
    };
    let train = gen_split("train", n_train, config.len_min, config.len_max)?;
    let dev = gen_split("dev", n_dev, config.len_min, config.len_max)?;
    let eval = gen_split(
        "eval",
        n_eval,
        config.len_min * eval_length_multiplier,
        config.len_max * eval_length_multiplier,
    )?;

    let paths = CorpusPaths {
        train: out_dir.join("train.pfdata"),
        dev: out_dir.join("dev.pfdata"),
        eval: out_dir.join("eval.pfdata"),
    };
    write_split(&paths.train, config.vocab_size, config.frame_dim, &train)?;
    write_split(&paths.dev, config.vocab_size, config.frame_dim, &dev)?;
    write_split(&paths.eval, config.vocab_size, config.frame_dim, &eval)?;
    Ok(paths)
}

/// Write one split. Values are serialized with 9 significant digits; the file
/// round-trips bit-exactly at that precision.
pub fn write_split(
    path: &Path,
    vocab_size: usize,
    frame_dim: usize,
    utterances: &[Utterance],
) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(path, e);
    writeln!(w, "{CORPUS_MAGIC}").map_err(io_err)?;
    writeln!(w, "{vocab_size} {frame_dim}").map_err(io_err)?;
    for utt in utterances {
        writeln!(w, "{}", utt.id).map_err(io_err)?;
        let syms: Vec<String> = utt.symbols.iter().map(|s| s.to_string()).collect();
        writeln!(w, "{}", syms.join(" ")).map_err(io_err)?;
        writeln!(w, "{}", utt.frame_count()).map_err(io_err)?;
        for t in 0..utt.frame_count() {
            let row: Vec<String> = utt.frames.row(t).iter().map(|v| format!("{v:.8e}")).collect();
            writeln!(w, "{}", row.join(" ")).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

pub fn read_split(path: &Path) -> Result<Corpus> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines();
    let format_err = |msg: String| Error::CorpusFormat {
        path: path.to_path_buf(),
        msg,
    };
    let mut next_line = |what: &str| -> Result<Option<String>> {
        match lines.next() {
            Some(Ok(l)) => Ok(Some(l)),
            Some(Err(e)) => Err(Error::io(path, e)),
            None if what.is_empty() => Ok(None),
            None => Err(format_err(format!("unexpected end of file, expected {what}"))),
        }
    };

    let magic = next_line("magic line")?.unwrap();
    if magic != CORPUS_MAGIC {
        return Err(format_err(format!(
            "bad magic line `{magic}` (expected `{CORPUS_MAGIC}`)"
        )));
    }
    let header = next_line("K F header")?.unwrap();
    let mut it = header.split_whitespace();
    let vocab_size: usize = it
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| format_err("bad K in header".into()))?;
    let frame_dim: usize = it
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| format_err("bad F in header".into()))?;

    let mut utterances = Vec::new();
    loop {
        let Some(id) = next_line("")? else { break };
        if id.trim().is_empty() {
            continue;
        }
        let sym_line = next_line("symbol list")?.unwrap();
        let symbols: Vec<usize> = sym_line
            .split_whitespace()
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|_| format_err(format!("bad symbol `{t}` in `{id}`")))
            })
            .collect::<Result<_>>()?;
        if symbols.iter().any(|&s| s >= vocab_size) {
            return Err(format_err(format!("symbol out of vocabulary in `{id}`")));
        }
        let t_line = next_line("frame count")?.unwrap();
        let frame_count: usize = t_line
            .trim()
            .parse()
            .map_err(|_| format_err(format!("bad frame count `{t_line}` in `{id}`")))?;
        let mut values = Vec::with_capacity(frame_count * frame_dim);
        for t in 0..frame_count {
            let row = next_line("frame row")?.unwrap();
            let mut count = 0;
            for tok in row.split_whitespace() {
                let v: f64 = tok
                    .parse()
                    .map_err(|_| format_err(format!("bad value `{tok}` in `{id}` frame {t}")))?;
                values.push(v);
                count += 1;
            }
            if count != frame_dim {
                return Err(format_err(format!(
                    "frame {t} of `{id}` has {count} values, expected {frame_dim}"
                )));
            }
        }
        let frames = Tensor::new(vec![frame_count, frame_dim], values)?;
        utterances.push(Utterance { id, symbols, frames });
    }
    Ok(Corpus {
        vocab_size,
        frame_dim,
        utterances,
    })
}
