//! Experiment orchestration: configuration, the full pipeline, the
//! encoder-decoder baseline, filter-count sweeps, evaluation of saved
//! checkpoints and latent-space export.
//!
//! Every random choice is drawn from a stream derived from the run seed, so
//! a configuration plus a seed determines every reported number.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::{Checkpoint, CheckpointKind};
use crate::data::{read_geoquery, read_tsv_pairs, ParallelCorpus, TextCorpus, TextPair, Vocab};
use crate::error::{Error, Result, StageExt};
use crate::filterbank::{
    decode_hard_encoded, decode_soft_encoded, partition, train_filters, FilterBank,
};
use crate::gmm::{fit_em, silhouette, EmConfig};
use crate::latent::{export_scatter, Projection};
use crate::metrics::{bleu, denotation_match_proxy, token_accuracy, BrevityMode};
use crate::seq2seq::{
    default_max_len, extract_representations, greedy_decode, train_autoencoder,
    train_encdec_baseline, Decoder, Encoder, ModelDims, TrainConfig, TrainLog,
};
use crate::tensor::Tensor;

/// Relative data paths are resolved against this directory when it is set.
pub const DATA_DIR_ENV: &str = "MGMAE_DATA_DIR";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Question → logical form.
    #[default]
    Geoquery,
    /// Sentence → sentence.
    Translation,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    /// Route each sentence to its most probable filter.
    #[default]
    Hard,
    /// Mix all filters by posterior weight at every step.
    Soft,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    /// Separate train and dev files.
    pub train_path: Option<PathBuf>,
    pub dev_path: Option<PathBuf>,
    /// A single file, shuffled with the base seed and split into train and
    /// dev. Used when `train_path` is absent.
    pub data_path: Option<PathBuf>,
    pub train_size: Option<usize>,
    pub dev_size: Option<usize>,
    pub min_count: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub lr: f64,
    pub dropout: f64,
    /// Training epochs for every stage; defaults to 10 (geoquery) or 20
    /// (translation).
    pub epochs: Option<usize>,
    pub clip_norm: f64,
    pub num_filters: usize,
    pub decode_mode: DecodeMode,
    pub bp_mode: BrevityMode,
    pub seed: u64,
    /// Runs use seeds `seed, seed + 1, …, seed + num_seeds - 1`.
    pub num_seeds: usize,
    /// Filter counts visited by `sweep-filters`.
    pub k_range: Vec<usize>,
    /// Decoding cap; defaults to `max(20, ceil(1.5 × longest train target))`.
    pub max_len: Option<usize>,
    pub em_max_iter: usize,
    pub em_tol: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            task: Task::Geoquery,
            train_path: None,
            dev_path: None,
            data_path: None,
            train_size: None,
            dev_size: None,
            min_count: 1,
            embed_dim: 150,
            hidden_dim: 200,
            lr: 0.001,
            dropout: 0.2,
            epochs: None,
            clip_norm: 5.0,
            num_filters: 2,
            decode_mode: DecodeMode::Hard,
            bp_mode: BrevityMode::Standard,
            seed: 0,
            num_seeds: 5,
            k_range: (2..=6).collect(),
            max_len: None,
            em_max_iter: 200,
            em_tol: 1e-6,
        }
    }
}

impl ExperimentConfig {
    pub fn for_task(task: Task) -> Self {
        ExperimentConfig {
            task,
            ..ExperimentConfig::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ExperimentConfig::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes to TOML")
    }

    /// Overrides one field from `key=value` text. The value is read as a
    /// TOML value, falling back to a bare string.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut table: toml::Table = toml::from_str(&self.to_toml()).expect("own TOML parses");
        let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_owned()));
        table.insert(key.to_owned(), parsed);
        let cfg: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("{key}={value}: {e}")))?;
        cfg.validate()?;
        *self = cfg;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_owned()));
        if self.embed_dim == 0 || self.hidden_dim == 0 {
            return fail("embed_dim and hidden_dim must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail("lr must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must lie in [0, 1)");
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return fail("clip_norm must be positive");
        }
        if self.num_filters == 0 {
            return fail("num_filters must be at least 1");
        }
        if self.num_seeds == 0 {
            return fail("num_seeds must be at least 1");
        }
        if self.k_range.is_empty() || self.k_range.contains(&0) {
            return fail("k_range must be non-empty with every k at least 1");
        }
        if self.max_len == Some(0) {
            return fail("max_len must be at least 1");
        }
        if self.em_max_iter == 0 || self.em_tol.is_nan() || self.em_tol < 0.0 {
            return fail("em_max_iter must be positive and em_tol nonnegative");
        }
        Ok(())
    }

    pub fn epochs(&self) -> usize {
        self.epochs.unwrap_or(match self.task {
            Task::Geoquery => 10,
            Task::Translation => 20,
        })
    }

    /// Train and dev sizes used when splitting a single `data_path`.
    pub fn split_sizes(&self) -> (usize, usize) {
        let (t, d) = match self.task {
            Task::Geoquery => (480, 120),
            Task::Translation => (10_000, 2_000),
        };
        (self.train_size.unwrap_or(t), self.dev_size.unwrap_or(d))
    }

    fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs(),
            lr: self.lr,
            dropout: self.dropout,
            seed,
            clip_norm: self.clip_norm,
        }
    }
}

/// Resolves `path` against the data directory variable when it is relative.
pub fn resolve_data_path(path: &Path) -> PathBuf {
    match std::env::var_os(DATA_DIR_ENV) {
        Some(dir) if path.is_relative() => Path::new(&dir).join(path),
        _ => path.to_path_buf(),
    }
}

/// Independent seed for one named use of the run seed.
pub fn derive_seed(base: u64, stream: Stream) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(stream as u64);
    rng.next_u64()
}

#[derive(Clone, Copy, Debug)]
pub enum Stream {
    Encoder = 1,
    AutoencoderDecoder = 2,
    AutoencoderTraining = 3,
    Mixture = 4,
    Filters = 5,
    FilterTraining = 6,
    BaselineDecoder = 7,
    BaselineTraining = 8,
    Split = 9,
}

/// Encoded train and dev sets plus the raw dev references.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: ParallelCorpus,
    pub dev: ParallelCorpus,
    /// Dev targets as tokens; metrics compare against these, so an unknown
    /// reference word never matches `<unk>`.
    pub dev_references: Vec<Vec<String>>,
    pub max_len: usize,
}

/// Reads train and dev text pairs as configured.
pub fn load_text(cfg: &ExperimentConfig) -> Result<(Vec<TextPair>, Vec<TextPair>)> {
    let read = |p: &Path, limit| -> Result<TextCorpus> {
        let p = resolve_data_path(p);
        match cfg.task {
            Task::Geoquery => read_geoquery(&p, limit),
            Task::Translation => read_tsv_pairs(&p, limit),
        }
    };
    let (train, dev) = if let Some(train_path) = &cfg.train_path {
        let dev_path = cfg
            .dev_path
            .as_ref()
            .ok_or_else(|| Error::Config("train_path is set but dev_path is not".into()))?;
        (
            read(train_path, cfg.train_size)?.pairs,
            read(dev_path, cfg.dev_size)?.pairs,
        )
    } else if let Some(data_path) = &cfg.data_path {
        let (n_train, n_dev) = cfg.split_sizes();
        let mut all = read(data_path, None)?.pairs;
        all.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            cfg.seed,
            Stream::Split,
        )));
        if all.len() < n_train + n_dev {
            log::warn!(
                "{} holds {} pairs, fewer than the requested {n_train} + {n_dev}",
                data_path.display(),
                all.len()
            );
        }
        let dev: Vec<TextPair> = all.iter().skip(n_train).take(n_dev).cloned().collect();
        all.truncate(n_train);
        (all, dev)
    } else {
        return Err(Error::Config(
            "no data configured: set train_path/dev_path or data_path".into(),
        ));
    };
    if train.is_empty() || dev.is_empty() {
        return Err(Error::Config(format!(
            "empty split: {} train / {} dev pairs",
            train.len(),
            dev.len()
        )));
    }
    log::info!("{} train / {} dev pairs", train.len(), dev.len());
    Ok((train, dev))
}

/// Encodes text pairs with the given vocabularies (built from `train` when
/// absent).
pub fn build_dataset(
    cfg: &ExperimentConfig,
    train: &[TextPair],
    dev: &[TextPair],
    vocabs: Option<(Vocab, Vocab)>,
) -> Dataset {
    let train = match vocabs {
        Some((s, t)) => ParallelCorpus::encode(train, s, t),
        None => ParallelCorpus::build(train, cfg.min_count),
    };
    let dev_corpus = ParallelCorpus::encode(dev, train.src_vocab.clone(), train.tgt_vocab.clone());
    let targets: Vec<&[usize]> = train.pairs.iter().map(|(_, t)| t.as_slice()).collect();
    let max_len = cfg.max_len.unwrap_or_else(|| default_max_len(&targets));
    Dataset {
        train,
        dev: dev_corpus,
        dev_references: dev.iter().map(|p| p.target.clone()).collect(),
        max_len,
    }
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let (train, dev) = load_text(cfg)?;
    Ok(build_dataset(cfg, &train, &dev, None))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    /// Percent.
    pub token_accuracy: f64,
    /// Whole-sequence exact match, percent.
    pub denotation_proxy: f64,
    pub bleu: f64,
}

/// Decodes every dev source with `decode` and scores the outputs.
pub fn evaluate<F>(data: &Dataset, bp_mode: BrevityMode, mut decode: F) -> Result<Metrics>
where
    F: FnMut(&[usize]) -> Result<Vec<usize>>,
{
    let candidates: Vec<Vec<String>> = data
        .dev
        .pairs
        .iter()
        .map(|(src, _)| decode(src).map(|ids| data.train.tgt_vocab.decode(&ids)))
        .collect::<Result<_>>()?;
    let refs = &data.dev_references;
    Ok(Metrics {
        token_accuracy: token_accuracy(&candidates, refs)?,
        denotation_proxy: denotation_match_proxy(&candidates, refs)?,
        bleu: bleu(&candidates, refs, bp_mode)?,
    })
}

fn evaluate_bank(
    data: &Dataset,
    enc: &Encoder,
    bank: &FilterBank,
    cfg: &ExperimentConfig,
) -> Result<Metrics> {
    evaluate(data, cfg.bp_mode, |src| {
        let es = enc.encode_values(src)?;
        match cfg.decode_mode {
            DecodeMode::Hard => decode_hard_encoded(bank, &es, data.max_len),
            DecodeMode::Soft => Ok(decode_soft_encoded(bank, &es, data.max_len)?.tokens),
        }
    })
}

fn evaluate_decoder(
    data: &Dataset,
    enc: &Encoder,
    dec: &Decoder,
    cfg: &ExperimentConfig,
) -> Result<Metrics> {
    evaluate(data, cfg.bp_mode, |src| {
        greedy_decode(dec, &enc.encode_values(src)?, data.max_len)
    })
}

/// Wall-clock seconds per stage, kept out of the CSV reports so those stay
/// reproducible.
#[derive(Clone, Debug, Default)]
pub struct Timings(pub Vec<(String, f64)>);

impl Timings {
    fn time<T>(
        &mut self,
        stage: &'static str,
        label: &str,
        f: impl FnOnce() -> Result<T>,
    ) -> Result<T> {
        let start = Instant::now();
        let out = f().stage(stage);
        self.0
            .push((format!("{label}{stage}"), start.elapsed().as_secs_f64()));
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("stage,seconds\n");
        for (k, v) in &self.0 {
            writeln!(s, "{k},{v:.3}").expect("write to String");
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    pub metrics: Metrics,
    /// On training representations; absent with fewer than two clusters.
    pub silhouette: Option<f64>,
    /// Training pairs per filter (empty for the baseline).
    pub cluster_sizes: Vec<usize>,
}

/// Mean and sample standard deviation (the latter only with ≥ 2 values).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std: Option<f64>,
    pub count: usize,
}

pub fn summarize(values: &[f64]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.len() >= 2)
        .then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    Some(Summary {
        mean,
        std,
        count: values.len(),
    })
}

#[derive(Clone, Debug)]
pub struct RunReport {
    /// e.g. `mgmae k=2 hard` or `baseline`.
    pub label: String,
    pub train_pairs: usize,
    pub dev_pairs: usize,
    pub seeds: Vec<SeedResult>,
    pub timings: Timings,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_owned(), |x| x.to_string())
}

impl RunReport {
    pub fn token_accuracy(&self) -> Option<Summary> {
        summarize(
            &self
                .seeds
                .iter()
                .map(|s| s.metrics.token_accuracy)
                .collect::<Vec<_>>(),
        )
    }

    pub fn denotation_proxy(&self) -> Option<Summary> {
        summarize(
            &self
                .seeds
                .iter()
                .map(|s| s.metrics.denotation_proxy)
                .collect::<Vec<_>>(),
        )
    }

    pub fn bleu(&self) -> Option<Summary> {
        summarize(
            &self
                .seeds
                .iter()
                .map(|s| s.metrics.bleu)
                .collect::<Vec<_>>(),
        )
    }

    pub fn silhouette(&self) -> Option<Summary> {
        summarize(
            &self
                .seeds
                .iter()
                .filter_map(|s| s.silhouette)
                .collect::<Vec<_>>(),
        )
    }

    /// One row per seed, then `mean` and `std` rows.
    pub fn to_csv(&self) -> String {
        let mut s =
            String::from("seed,token_accuracy,denotation_proxy,bleu,silhouette,cluster_sizes\n");
        for r in &self.seeds {
            let sizes: Vec<String> = r.cluster_sizes.iter().map(usize::to_string).collect();
            writeln!(
                s,
                "{},{},{},{},{},{}",
                r.seed,
                r.metrics.token_accuracy,
                r.metrics.denotation_proxy,
                r.metrics.bleu,
                fmt_opt(r.silhouette),
                sizes.join(";")
            )
            .expect("write to String");
        }
        let cols = [
            self.token_accuracy(),
            self.denotation_proxy(),
            self.bleu(),
            self.silhouette(),
        ];
        let mean: Vec<String> = cols.iter().map(|c| fmt_opt(c.map(|c| c.mean))).collect();
        let std: Vec<String> = cols
            .iter()
            .map(|c| fmt_opt(c.and_then(|c| c.std)))
            .collect();
        writeln!(s, "mean,{},", mean.join(",")).expect("write to String");
        writeln!(s, "std,{},", std.join(",")).expect("write to String");
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let line = |s: &mut String, name: &str, v: Option<Summary>| {
            let text = match v {
                Some(Summary {
                    mean,
                    std: Some(sd),
                    ..
                }) => format!("{mean:.2} ± {sd:.2}"),
                Some(Summary {
                    mean, std: None, ..
                }) => format!("{mean:.2}"),
                None => "n/a".to_owned(),
            };
            writeln!(s, "  {name:<28} {text}").expect("write to String");
        };
        writeln!(s, "{}", self.label).expect("write to String");
        writeln!(
            s,
            "  {} train / {} dev pairs, {} seed(s)",
            self.train_pairs,
            self.dev_pairs,
            self.seeds.len()
        )
        .expect("write to String");
        line(&mut s, "token accuracy (%)", self.token_accuracy());
        line(
            &mut s,
            "denotation match, proxy (%)",
            self.denotation_proxy(),
        );
        line(&mut s, "BLEU", self.bleu());
        line(&mut s, "silhouette", self.silhouette());
        for r in &self.seeds {
            if !r.cluster_sizes.is_empty() {
                writeln!(s, "  seed {} cluster sizes: {:?}", r.seed, r.cluster_sizes)
                    .expect("write to String");
            }
        }
        s
    }

    /// Writes `<stem>.csv`, `<stem>.txt` and `<stem>.timings.csv` in `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        write_file(&dir.join(format!("{stem}.csv")), &self.to_csv())?;
        write_file(&dir.join(format!("{stem}.txt")), &self.to_text())?;
        write_file(
            &dir.join(format!("{stem}.timings.csv")),
            &self.timings.to_csv(),
        )
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn model_dims(cfg: &ExperimentConfig, vocab: &Vocab) -> ModelDims {
    ModelDims {
        vocab_size: vocab.len(),
        embed_dim: cfg.embed_dim,
        hidden_dim: cfg.hidden_dim,
    }
}

/// The trained autoencoder of one seed and the training representations.
pub struct Latent {
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub log: TrainLog,
    pub representations: Tensor,
}

/// Trains the autoencoder on the training sources and extracts their
/// representations.
pub fn train_latent(
    cfg: &ExperimentConfig,
    data: &Dataset,
    seed: u64,
    timings: &mut Timings,
) -> Result<Latent> {
    let label = format!("seed {seed}: ");
    let dims = model_dims(cfg, &data.train.src_vocab);
    let mut encoder = Encoder::new(dims, derive_seed(seed, Stream::Encoder));
    let mut decoder = Decoder::new(dims, derive_seed(seed, Stream::AutoencoderDecoder));
    let sources = data.train.sources();
    let tc = cfg.train_config(derive_seed(seed, Stream::AutoencoderTraining));
    let log = timings.time("train-autoencoder", &label, || {
        train_autoencoder(&mut encoder, &mut decoder, &sources, &tc)
    })?;
    let representations = timings.time("extract-representations", &label, || {
        extract_representations(&encoder, &sources)
    })?;
    Ok(Latent {
        encoder,
        decoder,
        log,
        representations,
    })
}

/// Result of the mixture and filter stages for one k.
pub struct Filters {
    pub bank: FilterBank,
    pub labels: Vec<usize>,
    pub logs: Vec<TrainLog>,
    pub silhouette: Option<f64>,
    pub cluster_sizes: Vec<usize>,
}

/// Fits a k-component mixture to the representations, partitions the
/// training pairs and trains one filter per component.
pub fn train_filter_bank(
    cfg: &ExperimentConfig,
    data: &Dataset,
    latent: &Latent,
    seed: u64,
    k: usize,
    timings: &mut Timings,
) -> Result<Filters> {
    let label = format!("seed {seed} k {k}: ");
    let reps = &latent.representations;
    let em = EmConfig {
        components: k,
        seed: derive_seed(seed, Stream::Mixture),
        max_iter: cfg.em_max_iter,
        tol: cfg.em_tol,
    };
    let fit = timings.time("fit-gmm", &label, || fit_em(reps, &em))?;
    if !fit.converged {
        log::warn!(
            "EM stopped after {} iterations without converging",
            fit.iterations
        );
    }
    let parts = timings.time("partition", &label, || partition(&fit.model, reps))?;
    let mut labels = vec![0; reps.rows()];
    for (j, p) in parts.iter().enumerate() {
        p.iter().for_each(|&i| labels[i] = j);
    }
    let cluster_sizes: Vec<usize> = parts.iter().map(Vec::len).collect();
    let silhouette = if cluster_sizes.iter().filter(|&&s| s > 0).count() >= 2 {
        Some(timings.time("silhouette", &label, || silhouette(reps, &labels))?)
    } else {
        None
    };
    let tgt_dims = model_dims(cfg, &data.train.tgt_vocab);
    let mut bank = FilterBank::new(fit.model, tgt_dims, derive_seed(seed, Stream::Filters))
        .stage("train-filters")?;
    let tc = cfg.train_config(derive_seed(seed, Stream::FilterTraining));
    let logs = timings.time("train-filters", &label, || {
        train_filters(&mut bank, &latent.encoder, &data.train.pairs, &parts, &tc)
    })?;
    Ok(Filters {
        bank,
        labels,
        logs,
        silhouette,
        cluster_sizes,
    })
}

fn checkpoint_path(dir: &Path, stem: &str) -> PathBuf {
    dir.join(format!("{stem}.ckpt"))
}

fn save(ckpt: &Checkpoint, path: &Path, timings: &mut Timings) -> Result<()> {
    timings.time("checkpoint", "", || ckpt.save(path))
}

fn prepare(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Dataset> {
    cfg.validate().stage("config")?;
    fs::create_dir_all(out_dir)
        .map_err(|e| Error::io(out_dir, e))
        .stage("config")?;
    load_dataset(cfg).stage("load-data")
}

fn seed_config(cfg: &ExperimentConfig, seed: u64, k: usize) -> String {
    ExperimentConfig {
        seed,
        num_filters: k,
        ..cfg.clone()
    }
    .to_toml()
}

/// One full pipeline run for `seed` with `k` filters, checkpointing after
/// each stage into `<out_dir>/<stem>.ckpt`.
fn run_seed(
    cfg: &ExperimentConfig,
    data: &Dataset,
    seed: u64,
    out_dir: &Path,
    timings: &mut Timings,
) -> Result<SeedResult> {
    let k = cfg.num_filters;
    let path = checkpoint_path(out_dir, &format!("run-seed{seed}"));
    let latent = train_latent(cfg, data, seed, timings)?;
    let mut ckpt = Checkpoint {
        kind: CheckpointKind::Mgmae,
        config: seed_config(cfg, seed, k),
        seed,
        src_vocab: data.train.src_vocab.clone(),
        tgt_vocab: data.train.tgt_vocab.clone(),
        encoder: latent.encoder.clone(),
        decoder: Some(latent.decoder.clone()),
        bank: None,
        representations: Some(latent.representations.clone()),
        labels: Vec::new(),
        logs: vec![("autoencoder".into(), latent.log.clone())],
    };
    save(&ckpt, &path, timings)?;
    let filters = train_filter_bank(cfg, data, &latent, seed, k, timings)?;
    ckpt.labels = filters.labels.clone();
    ckpt.bank = Some(filters.bank.clone());
    for (j, l) in filters.logs.iter().enumerate() {
        ckpt.logs.push((format!("filter {j}"), l.clone()));
    }
    save(&ckpt, &path, timings)?;
    let metrics = timings.time("evaluate", &format!("seed {seed}: "), || {
        evaluate_bank(data, &latent.encoder, &filters.bank, cfg)
    })?;
    Ok(SeedResult {
        seed,
        metrics,
        silhouette: filters.silhouette,
        cluster_sizes: filters.cluster_sizes,
    })
}

fn seeds(cfg: &ExperimentConfig) -> impl Iterator<Item = u64> {
    let base = cfg.seed;
    (0..cfg.num_seeds as u64).map(move |s| base.wrapping_add(s))
}

/// Autoencoder → representations → mixture → partition → filters →
/// evaluation, once per seed. Writes `run.csv`, `run.txt`,
/// `run.timings.csv` and one checkpoint per seed to `out_dir`.
pub fn cmd_run(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunReport> {
    let data = prepare(cfg, out_dir)?;
    let mut timings = Timings::default();
    let mut results = Vec::new();
    for seed in seeds(cfg) {
        log::info!("run: seed {seed}, {} filter(s)", cfg.num_filters);
        results.push(run_seed(cfg, &data, seed, out_dir, &mut timings)?);
    }
    let mode = match cfg.decode_mode {
        DecodeMode::Hard => "hard",
        DecodeMode::Soft => "soft",
    };
    let report = RunReport {
        label: format!("mgmae k={} {mode}", cfg.num_filters),
        train_pairs: data.train.len(),
        dev_pairs: data.dev.len(),
        seeds: results,
        timings,
    };
    report.write(out_dir, "run").stage("report")?;
    Ok(report)
}

/// The ordinary encoder-decoder trained end to end on source → target.
/// Writes `baseline.*` reports and checkpoints to `out_dir`.
pub fn cmd_baseline(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunReport> {
    let data = prepare(cfg, out_dir)?;
    let mut timings = Timings::default();
    let mut results = Vec::new();
    for seed in seeds(cfg) {
        log::info!("baseline: seed {seed}");
        let label = format!("seed {seed}: ");
        let mut enc = Encoder::new(
            model_dims(cfg, &data.train.src_vocab),
            derive_seed(seed, Stream::Encoder),
        );
        let mut dec = Decoder::new(
            model_dims(cfg, &data.train.tgt_vocab),
            derive_seed(seed, Stream::BaselineDecoder),
        );
        let tc = cfg.train_config(derive_seed(seed, Stream::BaselineTraining));
        let log = timings.time("train-baseline", &label, || {
            train_encdec_baseline(&mut enc, &mut dec, &data.train.pairs, &tc)
        })?;
        let metrics = timings.time("evaluate", &label, || {
            evaluate_decoder(&data, &enc, &dec, cfg)
        })?;
        let ckpt = Checkpoint {
            kind: CheckpointKind::Baseline,
            config: seed_config(cfg, seed, cfg.num_filters),
            seed,
            src_vocab: data.train.src_vocab.clone(),
            tgt_vocab: data.train.tgt_vocab.clone(),
            encoder: enc,
            decoder: Some(dec),
            bank: None,
            representations: None,
            labels: Vec::new(),
            logs: vec![("baseline".into(), log)],
        };
        save(
            &ckpt,
            &checkpoint_path(out_dir, &format!("baseline-seed{seed}")),
            &mut timings,
        )?;
        results.push(SeedResult {
            seed,
            metrics,
            silhouette: None,
            cluster_sizes: Vec::new(),
        });
    }
    let report = RunReport {
        label: "baseline".into(),
        train_pairs: data.train.len(),
        dev_pairs: data.dev.len(),
        seeds: results,
        timings,
    };
    report.write(out_dir, "baseline").stage("report")?;
    Ok(report)
}

/// One row of the filter-count sweep, averaged over seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub k: usize,
    pub silhouette: Option<f64>,
    pub token_accuracy: f64,
    pub denotation_proxy: f64,
    pub bleu: f64,
    /// SHA-256 of the representations used for this row, over all seeds.
    pub repr_hash: String,
}

#[derive(Clone, Debug)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    /// Per (seed, k) results.
    pub cells: Vec<(usize, SeedResult)>,
    pub timings: Timings,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,silhouette,token_accuracy,denotation_proxy,bleu,repr_hash\n");
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{},{},{},{}",
                r.k,
                fmt_opt(r.silhouette),
                r.token_accuracy,
                r.denotation_proxy,
                r.bleu,
                r.repr_hash
            )
            .expect("write to String");
        }
        s
    }

    /// Rank correlation of silhouette with token accuracy across k.
    pub fn silhouette_accuracy_spearman(&self) -> Option<f64> {
        let (s, a): (Vec<f64>, Vec<f64>) = self
            .rows
            .iter()
            .filter_map(|r| r.silhouette.map(|s| (s, r.token_accuracy)))
            .unzip();
        spearman(&s, &a)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("k  silhouette  token acc  denotation (proxy)  BLEU\n");
        for r in &self.rows {
            writeln!(
                s,
                "{:<2} {:>10}  {:>9.2}  {:>18.2}  {:>6.2}",
                r.k,
                r.silhouette.map_or("n/a".into(), |v| format!("{v:.4}")),
                r.token_accuracy,
                r.denotation_proxy,
                r.bleu
            )
            .expect("write to String");
        }
        match self.silhouette_accuracy_spearman() {
            Some(rho) => writeln!(s, "Spearman rho (silhouette vs token accuracy): {rho:.4}"),
            None => writeln!(s, "Spearman rho (silhouette vs token accuracy): undefined"),
        }
        .expect("write to String");
        s
    }
}

/// SHA-256 of the little-endian bit patterns of `t`, as hex.
pub fn tensor_hash(t: &Tensor) -> String {
    let mut h = Sha256::new();
    update_hash(&mut h, t);
    hex(&h.finalize())
}

fn update_hash(h: &mut Sha256, t: &Tensor) {
    for d in t.shape() {
        h.update((*d as u64).to_le_bytes());
    }
    for v in t.data() {
        h.update(v.to_bits().to_le_bytes());
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        write!(s, "{b:02x}").expect("write to String");
        s
    })
}

/// For every seed, trains one autoencoder and reuses it for every k in
/// `cfg.k_range`. Writes `sweep.csv`, `sweep.txt`, `sweep.timings.csv` and
/// a checkpoint per (seed, k).
pub fn cmd_sweep_filters(cfg: &ExperimentConfig, out_dir: &Path) -> Result<SweepTable> {
    let data = prepare(cfg, out_dir)?;
    let mut timings = Timings::default();
    let mut cells: Vec<(usize, SeedResult)> = Vec::new();
    let mut hashers: Vec<Sha256> = cfg.k_range.iter().map(|_| Sha256::new()).collect();
    for seed in seeds(cfg) {
        let latent = train_latent(cfg, &data, seed, &mut timings)?;
        for (slot, &k) in cfg.k_range.iter().enumerate() {
            log::info!("sweep: seed {seed}, k = {k}");
            update_hash(&mut hashers[slot], &latent.representations);
            let filters = train_filter_bank(cfg, &data, &latent, seed, k, &mut timings)?;
            let metrics = timings.time("evaluate", &format!("seed {seed} k {k}: "), || {
                evaluate_bank(&data, &latent.encoder, &filters.bank, cfg)
            })?;
            let mut logs = vec![("autoencoder".to_owned(), latent.log.clone())];
            logs.extend(
                filters
                    .logs
                    .iter()
                    .enumerate()
                    .map(|(j, l)| (format!("filter {j}"), l.clone())),
            );
            let ckpt = Checkpoint {
                kind: CheckpointKind::Mgmae,
                config: seed_config(cfg, seed, k),
                seed,
                src_vocab: data.train.src_vocab.clone(),
                tgt_vocab: data.train.tgt_vocab.clone(),
                encoder: latent.encoder.clone(),
                decoder: Some(latent.decoder.clone()),
                bank: Some(filters.bank),
                representations: Some(latent.representations.clone()),
                labels: filters.labels,
                logs,
            };
            save(
                &ckpt,
                &checkpoint_path(out_dir, &format!("sweep-seed{seed}-k{k}")),
                &mut timings,
            )?;
            cells.push((
                k,
                SeedResult {
                    seed,
                    metrics,
                    silhouette: filters.silhouette,
                    cluster_sizes: filters.cluster_sizes,
                },
            ));
        }
    }
    let rows = cfg
        .k_range
        .iter()
        .zip(hashers)
        .map(|(&k, h)| {
            let of_k: Vec<&SeedResult> = cells
                .iter()
                .filter(|(kk, _)| *kk == k)
                .map(|(_, r)| r)
                .collect();
            let mean = |f: fn(&SeedResult) -> f64| {
                of_k.iter().map(|r| f(r)).sum::<f64>() / of_k.len() as f64
            };
            SweepRow {
                k,
                silhouette: summarize(
                    &of_k.iter().filter_map(|r| r.silhouette).collect::<Vec<_>>(),
                )
                .map(|s| s.mean),
                token_accuracy: mean(|r| r.metrics.token_accuracy),
                denotation_proxy: mean(|r| r.metrics.denotation_proxy),
                bleu: mean(|r| r.metrics.bleu),
                repr_hash: hex(&h.finalize()),
            }
        })
        .collect();
    let table = SweepTable {
        rows,
        cells,
        timings,
    };
    (|| {
        write_file(&out_dir.join("sweep.csv"), &table.to_csv())?;
        write_file(&out_dir.join("sweep.txt"), &table.to_text())?;
        write_file(&out_dir.join("sweep.timings.csv"), &table.timings.to_csv())
    })()
    .stage("report")?;
    Ok(table)
}

/// Re-evaluates a saved model on the dev set named by its stored
/// configuration, with optional `key=value` overrides (for instance a
/// different `decode_mode` or `bp_mode`).
pub fn cmd_eval(checkpoint: &Path, overrides: &[(String, String)]) -> Result<SeedResult> {
    let ckpt = Checkpoint::load(checkpoint).stage("load-checkpoint")?;
    let mut cfg = ExperimentConfig::from_toml_str(&ckpt.config).stage("config")?;
    for (k, v) in overrides {
        cfg.set(k, v).stage("config")?;
    }
    let (train, dev) = load_text(&cfg).stage("load-data")?;
    let data = build_dataset(
        &cfg,
        &train,
        &dev,
        Some((ckpt.src_vocab.clone(), ckpt.tgt_vocab.clone())),
    );
    let metrics = match (ckpt.kind, &ckpt.bank, &ckpt.decoder) {
        (CheckpointKind::Mgmae, Some(bank), _) => evaluate_bank(&data, &ckpt.encoder, bank, &cfg),
        (CheckpointKind::Baseline, _, Some(dec)) => {
            evaluate_decoder(&data, &ckpt.encoder, dec, &cfg)
        }
        _ => Err(Error::Format(
            "checkpoint holds no trained output decoder (incomplete run?)".into(),
        )),
    }
    .stage("evaluate")?;
    let silhouette = match &ckpt.representations {
        Some(r)
            if ckpt.labels.len() == r.rows()
                && ckpt.labels.iter().any(|&l| l != ckpt.labels[0]) =>
        {
            Some(silhouette(r, &ckpt.labels).stage("evaluate")?)
        }
        _ => None,
    };
    let cluster_sizes = match &ckpt.bank {
        Some(b) => (0..b.len())
            .map(|j| ckpt.labels.iter().filter(|&&l| l == j).count())
            .collect(),
        None => Vec::new(),
    };
    Ok(SeedResult {
        seed: ckpt.seed,
        metrics,
        silhouette,
        cluster_sizes,
    })
}

/// PCA scatter of the checkpointed training representations, colored by
/// cluster; writes `<stem>.csv` and `<stem>.svg`.
pub fn export_latent_scatter(checkpoint: &Path, out_stem: &Path) -> Result<Projection> {
    let ckpt = Checkpoint::load(checkpoint).stage("load-checkpoint")?;
    let reps = ckpt
        .representations
        .ok_or_else(|| Error::contract("checkpoint holds no representations"))
        .stage("plot-latent")?;
    let labels = if ckpt.labels.is_empty() {
        vec![0; reps.rows()]
    } else {
        ckpt.labels
    };
    if let Some(dir) = out_stem.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)
            .map_err(|e| Error::io(dir, e))
            .stage("plot-latent")?;
    }
    export_scatter(&reps, &labels, out_stem).stage("plot-latent")
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        // tied values share the average of their 1-based ranks
        let avg = (i + j) as f64 / 2.0 + 1.0;
        idx[i..=j].iter().for_each(|&k| r[k] = avg);
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties; `None` when
/// either side is constant or fewer than two pairs are given.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        None
    } else {
        Some(cov / (va * vb).sqrt())
    }
}
