//! Attention encoder-decoder: encoding, decoding, training and
//! representation extraction.
//!
//! The encoder is an embedding, a bidirectional LSTM and a learned `2H → H`
//! projection applied to every output and to the final concatenated state.
//! The projected final state is the sentence's latent representation; it
//! also seeds the decoder's hidden state (the cell state starts at zero).
//!
//! Each decoder step embeds the previous token, advances an LSTM, attends
//! over the projected encoder outputs with a dot product, and maps
//! `[h; context]` to log-probabilities over the output vocabulary.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{EOS, PAD, SOS};
use crate::error::{Error, Result};
use crate::layers::{dot_attention, BiLstm, Embedding, Linear, Lstm, Mode, ParamStore};
use crate::metrics::{nll_loss, LossWeights};
use crate::optim::{clip_global_norm, Adam, AdamConfig};
use crate::tape::{Tape, Var};
use crate::tensor::{argmax, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
}

fn init_bound(hidden_dim: usize) -> f64 {
    1.0 / (hidden_dim as f64).sqrt()
}

#[derive(Clone, Debug)]
pub struct Encoder {
    dims: ModelDims,
    store: ParamStore,
    embedding: Embedding,
    bilstm: BiLstm,
    proj: Linear,
}

/// Encoder results recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct EncoderOutput {
    /// Projected per-step outputs, `[T × H]`.
    pub outputs: Var,
    /// Projected final state, `[H]`.
    pub representation: Var,
}

/// Encoder results as plain values, for a frozen encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSequence {
    pub outputs: Tensor,
    pub representation: Tensor,
}

impl EncodedSequence {
    /// Records the values on `tape` as untracked constants.
    pub fn bind(&self, tape: &mut Tape<'_>) -> EncoderOutput {
        EncoderOutput {
            outputs: tape.constant(self.outputs.clone()),
            representation: tape.constant(self.representation.clone()),
        }
    }
}

impl Encoder {
    pub fn new(dims: ModelDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = init_bound(dims.hidden_dim);
        let mut store = ParamStore::new();
        let embedding = Embedding::new(
            &mut store,
            "embed",
            dims.vocab_size,
            dims.embed_dim,
            bound,
            &mut rng,
        );
        let bilstm = BiLstm::new(
            &mut store,
            "bilstm",
            dims.embed_dim,
            dims.hidden_dim,
            &mut rng,
        );
        let proj = Linear::new(
            &mut store,
            "proj",
            2 * dims.hidden_dim,
            dims.hidden_dim,
            bound,
            &mut rng,
        );
        Encoder {
            dims,
            store,
            embedding,
            bilstm,
            proj,
        }
    }

    /// Rebuilds an encoder from saved parameters.
    pub fn from_store(dims: ModelDims, store: ParamStore) -> Result<Self> {
        let mut enc = Encoder::new(dims, 0);
        enc.store.load_from(store)?;
        Ok(enc)
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Encodes a non-empty, EOS-terminated id sequence.
    pub fn encode<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        tokens: &[usize],
        mode: &mut Mode<'_>,
    ) -> Result<EncoderOutput> {
        self.encode_in(&self.store, tape, tokens, mode)
    }

    /// [`Encoder::encode`] with parameters read from `store`, which must
    /// share this encoder's layout.
    pub(crate) fn encode_in<'a>(
        &self,
        store: &'a ParamStore,
        tape: &mut Tape<'a>,
        tokens: &[usize],
        mode: &mut Mode<'_>,
    ) -> Result<EncoderOutput> {
        if tokens.is_empty() {
            return Err(Error::contract("encode of an empty sequence"));
        }
        if tokens.last() != Some(&EOS) {
            return Err(Error::contract("encoder input must end with EOS"));
        }
        let embedded = self.embedding.forward(store, tape, tokens)?;
        let embedded = mode.dropout(tape, embedded)?;
        let (outs, last) = self.bilstm.encode(store, tape, embedded)?;
        let projected: Vec<Var> = (0..tokens.len())
            .map(|t| {
                let row = tape.row(outs, t)?;
                self.proj.forward(store, tape, row)
            })
            .collect::<Result<_>>()?;
        let outputs = tape.stack(&projected)?;
        let representation = self.proj.forward(store, tape, last)?;
        Ok(EncoderOutput {
            outputs,
            representation,
        })
    }

    /// Evaluation-mode encoding, returned as values.
    pub fn encode_values(&self, tokens: &[usize]) -> Result<EncodedSequence> {
        let mut tape = Tape::new();
        let out = self.encode(&mut tape, tokens, &mut Mode::Eval)?;
        Ok(EncodedSequence {
            outputs: tape.value(out.outputs).clone(),
            representation: tape.value(out.representation).clone(),
        })
    }
}

/// One decoder's parameters. The autoencoder decoder, the baseline decoder
/// and every filter share this structure.
#[derive(Clone, Debug)]
pub struct Decoder {
    dims: ModelDims,
    store: ParamStore,
    embedding: Embedding,
    lstm: Lstm,
    out: Linear,
}

#[derive(Clone, Copy, Debug)]
pub struct DecoderState {
    pub h: Var,
    pub c: Var,
    pub prev_token: usize,
}

impl Decoder {
    pub fn new(dims: ModelDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = init_bound(dims.hidden_dim);
        let mut store = ParamStore::new();
        let embedding = Embedding::new(
            &mut store,
            "embed",
            dims.vocab_size,
            dims.embed_dim,
            bound,
            &mut rng,
        );
        let lstm = Lstm::new(
            &mut store,
            "lstm",
            dims.embed_dim,
            dims.hidden_dim,
            &mut rng,
        );
        let out = Linear::new(
            &mut store,
            "out",
            2 * dims.hidden_dim,
            dims.vocab_size,
            bound,
            &mut rng,
        );
        Decoder {
            dims,
            store,
            embedding,
            lstm,
            out,
        }
    }

    pub fn from_store(dims: ModelDims, store: ParamStore) -> Result<Self> {
        let mut dec = Decoder::new(dims, 0);
        dec.store.load_from(store)?;
        Ok(dec)
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Output-layer bias, exposed for tests that force particular tokens.
    pub fn output_bias_mut(&mut self) -> &mut Tensor {
        self.store.get_mut(self.out.b)
    }

    /// `h = representation`, `c = 0`, previous token SOS.
    pub fn initial_state(&self, tape: &mut Tape<'_>, enc: &EncoderOutput) -> Result<DecoderState> {
        let rep_shape = tape.value(enc.representation).shape();
        if rep_shape != [self.dims.hidden_dim] {
            return Err(Error::Shape {
                op: "decoder initial state",
                lhs: vec![self.dims.hidden_dim],
                rhs: rep_shape.to_vec(),
            });
        }
        let c = tape.constant(Tensor::zeros(&[self.dims.hidden_dim]));
        Ok(DecoderState {
            h: enc.representation,
            c,
            prev_token: SOS,
        })
    }

    /// Advances one step from `state`; returns log-probabilities over the
    /// output vocabulary and the next state (whose `prev_token` is left for
    /// the caller to set).
    pub fn step<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        state: &DecoderState,
        enc: &EncoderOutput,
        mode: &mut Mode<'_>,
    ) -> Result<(Var, DecoderState)> {
        self.step_in(&self.store, tape, state, enc, mode)
    }

    fn step_in<'a>(
        &self,
        store: &'a ParamStore,
        tape: &mut Tape<'a>,
        state: &DecoderState,
        enc: &EncoderOutput,
        mode: &mut Mode<'_>,
    ) -> Result<(Var, DecoderState)> {
        let x = self.embedding.forward(store, tape, &[state.prev_token])?;
        let x = mode.dropout(tape, x)?;
        let x = tape.row(x, 0)?;
        let (h, c) = self.lstm.step(store, tape, x, state.h, state.c)?;
        let hd = mode.dropout(tape, h)?;
        let (context, _) = dot_attention(tape, enc.outputs, hd)?;
        let combined = tape.concat(&[hd, context])?;
        let logits = self.out.forward(store, tape, combined)?;
        let log_probs = tape.log_softmax(logits)?;
        Ok((
            log_probs,
            DecoderState {
                h,
                c,
                prev_token: state.prev_token,
            },
        ))
    }

    /// Teacher-forced mean NLL of `target` (EOS-terminated).
    pub fn sequence_loss<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        enc: &EncoderOutput,
        target: &[usize],
        mode: &mut Mode<'_>,
    ) -> Result<Var> {
        self.sequence_loss_in(&self.store, tape, enc, target, mode)
    }

    pub(crate) fn sequence_loss_in<'a>(
        &self,
        store: &'a ParamStore,
        tape: &mut Tape<'a>,
        enc: &EncoderOutput,
        target: &[usize],
        mode: &mut Mode<'_>,
    ) -> Result<Var> {
        if target.is_empty() {
            return Err(Error::contract("empty target sequence"));
        }
        let mut state = self.initial_state(tape, enc)?;
        let mut rows = Vec::with_capacity(target.len());
        for &gold in target {
            let (lp, mut next) = self.step_in(store, tape, &state, enc, mode)?;
            rows.push(lp);
            next.prev_token = gold;
            state = next;
        }
        let lp = tape.stack(&rows)?;
        nll_loss(tape, lp, target, &LossWeights::uniform())
    }
}

/// Highest-scoring token other than PAD and SOS; ties go to the lowest id.
pub fn pick_token(log_probs: &[f64]) -> usize {
    let mut masked = log_probs.to_vec();
    for special in [PAD, SOS] {
        if special < masked.len() {
            masked[special] = f64::NEG_INFINITY;
        }
    }
    argmax(&masked)
}

/// Greedy decoding: feeds back the argmax token until EOS (not included in
/// the output) or `max_len` tokens.
pub fn greedy_decode(dec: &Decoder, enc: &EncodedSequence, max_len: usize) -> Result<Vec<usize>> {
    if max_len == 0 {
        return Err(Error::contract("max_len must be at least 1"));
    }
    let mut tape = Tape::new();
    let enc_out = enc.bind(&mut tape);
    let mut state = dec.initial_state(&mut tape, &enc_out)?;
    let mut out = Vec::new();
    while out.len() < max_len {
        let (lp, mut next) = dec.step(&mut tape, &state, &enc_out, &mut Mode::Eval)?;
        let tok = pick_token(tape.value(lp).data());
        if tok == EOS {
            break;
        }
        out.push(tok);
        next.prev_token = tok;
        state = next;
    }
    Ok(out)
}

/// `max(20, ceil(1.5 × longest target))`, target lengths without EOS.
pub fn default_max_len<S: AsRef<[usize]>>(targets: &[S]) -> usize {
    let longest = targets
        .iter()
        .map(|t| t.as_ref().iter().filter(|&&x| x != EOS).count())
        .max()
        .unwrap_or(0);
    ((longest as f64 * 1.5).ceil() as usize).max(20)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub dropout: f64,
    pub seed: u64,
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            lr: 1e-3,
            dropout: 0.2,
            seed: 0,
            clip_norm: 5.0,
        }
    }
}

/// Mean training loss per epoch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub epoch_losses: Vec<f64>,
}

impl TrainLog {
    pub fn bit_eq(&self, other: &TrainLog) -> bool {
        self.epoch_losses.len() == other.epoch_losses.len()
            && self
                .epoch_losses
                .iter()
                .zip(&other.epoch_losses)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

fn check_loss(loss: f64, epoch: usize, sample: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteLoss {
            epoch,
            sample,
            loss,
        })
    }
}

/// Trains encoder and decoder end to end with teacher forcing, one update
/// per pair (Adam, global-norm clipping). Pair order is reshuffled every
/// epoch from `cfg.seed`.
pub fn train_seq2seq(
    enc: &mut Encoder,
    dec: &mut Decoder,
    pairs: &[(Vec<usize>, Vec<usize>)],
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    if pairs.is_empty() {
        return Err(Error::contract("training corpus is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt_enc = Adam::new(AdamConfig::with_lr(cfg.lr), enc.store());
    let mut opt_dec = Adam::new(AdamConfig::with_lr(cfg.lr), dec.store());
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let (src, tgt) = &pairs[i];
            let (loss, mut g_enc, mut g_dec) = {
                let mut tape = Tape::new();
                let mut mode = Mode::Train {
                    dropout: cfg.dropout,
                    rng: &mut rng,
                };
                let enc_out = enc.encode(&mut tape, src, &mut mode)?;
                let loss = dec.sequence_loss(&mut tape, &enc_out, tgt, &mut mode)?;
                let grads = tape.backward(loss)?;
                (
                    tape.value(loss).item(),
                    enc.store().gradients(&tape, &grads),
                    dec.store().gradients(&tape, &grads),
                )
            };
            check_loss(loss, epoch, i)?;
            clip_global_norm(&mut [&mut g_enc, &mut g_dec], cfg.clip_norm);
            opt_enc.step(enc.store_mut(), &g_enc);
            opt_dec.step(dec.store_mut(), &g_dec);
            total += loss;
        }
        log.epoch_losses.push(total / pairs.len() as f64);
        log::debug!("epoch {epoch}: mean loss {:.6}", total / pairs.len() as f64);
    }
    Ok(log)
}

/// Self-supervised training: every sentence is its own target.
pub fn train_autoencoder(
    enc: &mut Encoder,
    dec: &mut Decoder,
    corpus: &[Vec<usize>],
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    let pairs: Vec<(Vec<usize>, Vec<usize>)> =
        corpus.iter().map(|s| (s.clone(), s.clone())).collect();
    train_seq2seq(enc, dec, &pairs, cfg)
}

/// The ordinary encoder-decoder: source → target, trained end to end.
pub fn train_encdec_baseline(
    enc: &mut Encoder,
    dec: &mut Decoder,
    pairs: &[(Vec<usize>, Vec<usize>)],
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    train_seq2seq(enc, dec, pairs, cfg)
}

/// Trains only `dec` on precomputed (frozen) encoder outputs.
pub fn train_decoder_frozen(
    dec: &mut Decoder,
    encoded: &[EncodedSequence],
    targets: &[Vec<usize>],
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    if encoded.len() != targets.len() {
        return Err(Error::contract("one encoded source per target"));
    }
    if encoded.is_empty() {
        return Err(Error::contract("training corpus is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(AdamConfig::with_lr(cfg.lr), dec.store());
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..targets.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let (loss, mut grads) = {
                let mut tape = Tape::new();
                let enc_out = encoded[i].bind(&mut tape);
                let mut mode = Mode::Train {
                    dropout: cfg.dropout,
                    rng: &mut rng,
                };
                let loss = dec.sequence_loss(&mut tape, &enc_out, &targets[i], &mut mode)?;
                let g = tape.backward(loss)?;
                (tape.value(loss).item(), dec.store().gradients(&tape, &g))
            };
            check_loss(loss, epoch, i)?;
            clip_global_norm(&mut [&mut grads], cfg.clip_norm);
            opt.step(dec.store_mut(), &grads);
            total += loss;
        }
        log.epoch_losses.push(total / targets.len() as f64);
    }
    Ok(log)
}

/// Representations of every sentence as rows of an `[N × H]` matrix
/// (evaluation mode).
pub fn extract_representations(enc: &Encoder, corpus: &[Vec<usize>]) -> Result<Tensor> {
    let rows: Vec<Vec<f64>> = corpus
        .iter()
        .map(|s| enc.encode_values(s).map(|e| e.representation.into_data()))
        .collect::<Result<_>>()?;
    Tensor::from_rows(&rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck;

    fn dims(v: usize) -> ModelDims {
        ModelDims {
            vocab_size: v,
            embed_dim: 4,
            hidden_dim: 3,
        }
    }

    fn zeroed(dec: &mut Decoder) {
        for t in dec.store_mut().tensors_mut() {
            t.data_mut().fill(0.0);
        }
    }

    #[test]
    fn encode_is_deterministic() {
        let enc = Encoder::new(dims(8), 1);
        let a = enc.encode_values(&[4, 5, EOS]).unwrap();
        let b = enc.encode_values(&[4, 5, EOS]).unwrap();
        assert!(a.representation.bit_eq(&b.representation));
        assert!(a.outputs.bit_eq(&b.outputs));
        assert_eq!(a.outputs.shape(), &[3, 3]);
    }

    #[test]
    fn encode_single_step_representation_is_projected_output() {
        let enc = Encoder::new(dims(8), 1);
        let e = enc.encode_values(&[EOS]).unwrap();
        assert_eq!(e.outputs.row(0), e.representation.data());
    }

    #[test]
    fn encode_rejects_bad_input() {
        let enc = Encoder::new(dims(8), 1);
        assert!(enc.encode_values(&[]).is_err());
        assert!(enc.encode_values(&[4, 5]).is_err());
        assert!(matches!(
            enc.encode_values(&[9, EOS]),
            Err(Error::Vocabulary { .. })
        ));
    }

    #[test]
    fn zero_decoder_is_uniform() {
        let enc = Encoder::new(dims(8), 1);
        let mut dec = Decoder::new(dims(6), 2);
        zeroed(&mut dec);
        let e = enc.encode_values(&[4, EOS]).unwrap();
        let mut tape = Tape::new();
        let eo = e.bind(&mut tape);
        let s = dec.initial_state(&mut tape, &eo).unwrap();
        let (lp, _) = dec.step(&mut tape, &s, &eo, &mut Mode::Eval).unwrap();
        for v in tape.value(lp).data() {
            assert!((v + 6f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn decode_step_normalized_and_replayable() {
        let enc = Encoder::new(dims(8), 1);
        let dec = Decoder::new(dims(7), 2);
        let e = enc.encode_values(&[4, 6, EOS]).unwrap();
        let run = || {
            let mut tape = Tape::new();
            let eo = e.bind(&mut tape);
            let s = dec.initial_state(&mut tape, &eo).unwrap();
            let (lp, _) = dec.step(&mut tape, &s, &eo, &mut Mode::Eval).unwrap();
            tape.value(lp).clone()
        };
        let (a, b) = (run(), run());
        assert!(a.bit_eq(&b));
        let total: f64 = a.data().iter().map(|v| v.exp()).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn greedy_stops_on_eos_or_cap() {
        let enc = Encoder::new(dims(8), 1);
        let e = enc.encode_values(&[4, EOS]).unwrap();
        let mut dec = Decoder::new(dims(6), 2);
        dec.output_bias_mut().data_mut()[EOS] = 100.0;
        assert!(greedy_decode(&dec, &e, 5).unwrap().is_empty());

        let mut dec = Decoder::new(dims(6), 2);
        dec.output_bias_mut().data_mut()[5] = 100.0;
        assert_eq!(greedy_decode(&dec, &e, 3).unwrap(), vec![5, 5, 5]);
        assert!(greedy_decode(&dec, &e, 0).is_err());
    }

    #[test]
    fn greedy_never_emits_pad_or_sos() {
        let enc = Encoder::new(dims(8), 1);
        let e = enc.encode_values(&[4, EOS]).unwrap();
        let mut dec = Decoder::new(dims(6), 2);
        dec.output_bias_mut().data_mut()[PAD] = 100.0;
        dec.output_bias_mut().data_mut()[SOS] = 90.0;
        let out = greedy_decode(&dec, &e, 4).unwrap();
        assert!(out.iter().all(|&t| t != PAD && t != SOS));
    }

    #[test]
    fn max_len_rule() {
        assert_eq!(default_max_len(&[vec![4, 5, EOS]]), 20);
        assert_eq!(default_max_len(&[vec![4; 30]]), 45);
        assert_eq!(default_max_len(&[vec![4; 15], vec![4; 3]]), 23);
    }

    #[test]
    fn zero_epochs_changes_nothing() {
        let mut enc = Encoder::new(dims(8), 1);
        let mut dec = Decoder::new(dims(8), 2);
        let (e0, d0) = (enc.store().clone(), dec.store().clone());
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let log = train_autoencoder(&mut enc, &mut dec, &[vec![4, 5, EOS]], &cfg).unwrap();
        assert!(log.epoch_losses.is_empty());
        assert!(enc.store().bit_eq(&e0) && dec.store().bit_eq(&d0));
    }

    #[test]
    fn empty_corpus_rejected() {
        let mut enc = Encoder::new(dims(8), 1);
        let mut dec = Decoder::new(dims(8), 2);
        assert!(train_autoencoder(&mut enc, &mut dec, &[], &TrainConfig::default()).is_err());
    }

    #[test]
    fn baseline_on_identical_pairs_matches_autoencoder() {
        let corpus = vec![vec![4, 5, EOS], vec![6, 7, 4, EOS]];
        let cfg = TrainConfig {
            epochs: 3,
            lr: 0.01,
            ..TrainConfig::default()
        };
        let (mut e1, mut d1) = (Encoder::new(dims(8), 1), Decoder::new(dims(8), 2));
        let (mut e2, mut d2) = (Encoder::new(dims(8), 1), Decoder::new(dims(8), 2));
        let a = train_autoencoder(&mut e1, &mut d1, &corpus, &cfg).unwrap();
        let pairs: Vec<_> = corpus.iter().map(|s| (s.clone(), s.clone())).collect();
        let b = train_encdec_baseline(&mut e2, &mut d2, &pairs, &cfg).unwrap();
        assert!(a.bit_eq(&b));
        assert!(e1.store().bit_eq(e2.store()) && d1.store().bit_eq(d2.store()));
    }

    #[test]
    fn extract_matches_per_call() {
        let enc = Encoder::new(dims(8), 1);
        let corpus = vec![vec![4, 5, EOS], vec![6, EOS], vec![4, 5, EOS]];
        let reps = extract_representations(&enc, &corpus).unwrap();
        assert_eq!(reps.shape(), &[3, 3]);
        for (i, s) in corpus.iter().enumerate() {
            assert_eq!(
                reps.row(i),
                enc.encode_values(s).unwrap().representation.data()
            );
        }
        assert_eq!(reps.row(0), reps.row(2));
    }

    #[test]
    fn dropout_only_affects_training_mode() {
        let enc = Encoder::new(dims(8), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut tape = Tape::new();
        let mut mode = Mode::Train {
            dropout: 0.5,
            rng: &mut rng,
        };
        let train = enc.encode(&mut tape, &[4, 5, 6, EOS], &mut mode).unwrap();
        let train_rep = tape.value(train.representation).clone();
        let eval = enc.encode_values(&[4, 5, 6, EOS]).unwrap();
        assert!(!train_rep.bit_eq(&eval.representation));
        assert!(eval
            .representation
            .bit_eq(&enc.encode_values(&[4, 5, 6, EOS]).unwrap().representation));
    }

    #[test]
    fn encoder_gradients() {
        let enc = Encoder::new(dims(6), 3);
        for take_outputs in [false, true] {
            let report = gradcheck::check_params(
                enc.store(),
                |s, tape| {
                    let out = enc.encode_in(s, tape, &[4, 5, 4, EOS], &mut Mode::Eval)?;
                    Ok(if take_outputs {
                        out.outputs
                    } else {
                        out.representation
                    })
                },
                1e-4,
                5,
            )
            .unwrap();
            assert!(report.max_relative_error < 1e-4, "{report:?}");
        }
    }

    #[test]
    fn decoder_loss_gradients() {
        let enc = Encoder::new(dims(6), 3);
        let dec = Decoder::new(dims(5), 4);
        let e = enc.encode_values(&[4, 5, EOS]).unwrap();
        let report = gradcheck::check_params(
            dec.store(),
            |s, tape| {
                let eo = e.bind(tape);
                dec.sequence_loss_in(s, tape, &eo, &[3, 4, EOS], &mut Mode::Eval)
            },
            1e-4,
            6,
        )
        .unwrap();
        assert!(report.max_relative_error < 1e-4, "{report:?}");
    }
}
