//! One decoder ("filter") per mixture component.
//!
//! Training data is split by hard assignment of each sentence's
//! representation; each filter sees only its own share. At inference a
//! sentence is either routed to its most probable filter or decoded by all
//! filters at once with their per-step output distributions mixed by the
//! posterior.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::EOS;
use crate::error::{Error, Result};
use crate::gmm::GmmModel;
use crate::layers::Mode;
use crate::seq2seq::{
    greedy_decode, pick_token, train_decoder_frozen, Decoder, EncodedSequence, Encoder, ModelDims,
    TrainConfig, TrainLog,
};
use crate::tape::Tape;
use crate::tensor::{logsumexp, Tensor};

/// Seed for filter `j`, derived from `master`.
pub fn filter_seed(master: u64, j: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(j as u64 + 1);
    rng.next_u64()
}

#[derive(Clone, Debug)]
pub struct FilterBank {
    gmm: GmmModel,
    filters: Vec<Decoder>,
}

impl FilterBank {
    /// One freshly initialized filter per component of `gmm`.
    pub fn new(gmm: GmmModel, dims: ModelDims, seed: u64) -> Result<Self> {
        let filters = (0..gmm.len())
            .map(|j| Decoder::new(dims, filter_seed(seed, j)))
            .collect();
        FilterBank::from_parts(gmm, filters)
    }

    pub fn from_parts(gmm: GmmModel, filters: Vec<Decoder>) -> Result<Self> {
        if filters.len() != gmm.len() {
            return Err(Error::contract(format!(
                "{} filters for {} mixture components",
                filters.len(),
                gmm.len()
            )));
        }
        let dims = filters[0].dims();
        if filters.iter().any(|f| f.dims() != dims) {
            return Err(Error::contract("filters differ in structure"));
        }
        if dims.hidden_dim != gmm.dim() {
            return Err(Error::Shape {
                op: "filter bank",
                lhs: vec![gmm.dim()],
                rhs: vec![dims.hidden_dim],
            });
        }
        Ok(FilterBank { gmm, filters })
    }

    pub fn gmm(&self) -> &GmmModel {
        &self.gmm
    }

    pub fn filters(&self) -> &[Decoder] {
        &self.filters
    }

    pub fn filters_mut(&mut self) -> &mut [Decoder] {
        &mut self.filters
    }

    /// Number of filters k.
    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }
}

/// Indices of the rows of `representations` grouped by assigned component.
pub fn partition(gmm: &GmmModel, representations: &Tensor) -> Result<Vec<Vec<usize>>> {
    if representations.ndim() != 2 {
        return Err(Error::Shape {
            op: "partition",
            lhs: vec![0, gmm.dim()],
            rhs: representations.shape().to_vec(),
        });
    }
    let mut parts = vec![Vec::new(); gmm.len()];
    for i in 0..representations.rows() {
        parts[gmm.assign(representations.row(i))?].push(i);
    }
    for (j, p) in parts.iter().enumerate() {
        if p.is_empty() {
            log::warn!("mixture component {j} received no training samples");
        }
    }
    Ok(parts)
}

/// Trains filter `j` on exactly the pairs listed in `parts[j]`, with the
/// encoder frozen. Filters with an empty share keep their initial weights
/// and get an empty log.
pub fn train_filters(
    bank: &mut FilterBank,
    enc: &Encoder,
    pairs: &[(Vec<usize>, Vec<usize>)],
    parts: &[Vec<usize>],
    cfg: &TrainConfig,
) -> Result<Vec<TrainLog>> {
    if parts.len() != bank.len() {
        return Err(Error::contract(format!(
            "{} partitions for {} filters",
            parts.len(),
            bank.len()
        )));
    }
    let mut seen = vec![false; pairs.len()];
    for &i in parts.iter().flatten() {
        if i >= pairs.len() || std::mem::replace(&mut seen[i], true) {
            return Err(Error::contract(format!(
                "partition index {i} out of range or repeated"
            )));
        }
    }
    let frozen = enc.store().clone();
    let encoded: Vec<EncodedSequence> = pairs
        .iter()
        .map(|(src, _)| enc.encode_values(src))
        .collect::<Result<_>>()?;
    let mut logs = Vec::with_capacity(bank.len());
    for (j, (filter, part)) in bank.filters.iter_mut().zip(parts).enumerate() {
        if part.is_empty() {
            log::warn!("filter {j} has no training data and stays at initialization");
            logs.push(TrainLog::default());
            continue;
        }
        let enc_j: Vec<EncodedSequence> = part.iter().map(|&i| encoded[i].clone()).collect();
        let tgt_j: Vec<Vec<usize>> = part.iter().map(|&i| pairs[i].1.clone()).collect();
        let cfg_j = TrainConfig {
            seed: filter_seed(cfg.seed, j),
            ..cfg.clone()
        };
        log::info!("training filter {j} on {} pairs", part.len());
        logs.push(train_decoder_frozen(filter, &enc_j, &tgt_j, &cfg_j)?);
    }
    if !enc.store().bit_eq(&frozen) {
        return Err(Error::contract(
            "encoder parameters changed during filter training",
        ));
    }
    Ok(logs)
}

/// Routes `enc_seq` to its most probable filter and decodes greedily.
pub fn decode_hard_encoded(
    bank: &FilterBank,
    enc_seq: &EncodedSequence,
    max_len: usize,
) -> Result<Vec<usize>> {
    let j = bank.gmm.assign(enc_seq.representation.data())?;
    greedy_decode(&bank.filters[j], enc_seq, max_len)
}

pub fn decode_hard(
    bank: &FilterBank,
    enc: &Encoder,
    tokens: &[usize],
    max_len: usize,
) -> Result<Vec<usize>> {
    decode_hard_encoded(bank, &enc.encode_values(tokens)?, max_len)
}

/// Output of a soft decode with its intermediate distributions.
#[derive(Clone, Debug)]
pub struct SoftDecode {
    pub tokens: Vec<usize>,
    /// Mixing weights used for every step.
    pub posterior: Vec<f64>,
    /// Normalized log of the mixed distribution at each emitted step,
    /// including the step that produced EOS.
    pub step_log_probs: Vec<Vec<f64>>,
}

/// Soft decoding with explicit mixing weights. Every filter with nonzero
/// weight advances on the shared previous token; the step distribution is
/// `Σᵢ wᵢ pᵢ`, mixed in probability space.
pub fn decode_soft_weighted(
    bank: &FilterBank,
    enc_seq: &EncodedSequence,
    weights: &[f64],
    max_len: usize,
) -> Result<SoftDecode> {
    if weights.len() != bank.len() {
        return Err(Error::contract(format!(
            "{} weights for {} filters",
            weights.len(),
            bank.len()
        )));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || !weights.iter().any(|&w| w > 0.0) {
        return Err(Error::contract(
            "mixing weights must be nonnegative with a positive entry",
        ));
    }
    if max_len == 0 {
        return Err(Error::contract("max_len must be at least 1"));
    }
    let active: Vec<usize> = (0..bank.len()).filter(|&i| weights[i] > 0.0).collect();
    let log_w: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
    let mut tape = Tape::new();
    let enc_out = enc_seq.bind(&mut tape);
    let mut states = Vec::with_capacity(active.len());
    for &i in &active {
        states.push(bank.filters[i].initial_state(&mut tape, &enc_out)?);
    }
    let mut out = SoftDecode {
        tokens: Vec::new(),
        posterior: weights.to_vec(),
        step_log_probs: Vec::new(),
    };
    while out.tokens.len() < max_len {
        let mut per_filter = Vec::with_capacity(active.len());
        for (s, &i) in states.iter_mut().zip(&active) {
            let (lp, next) = bank.filters[i].step(&mut tape, s, &enc_out, &mut Mode::Eval)?;
            *s = next;
            per_filter.push(lp);
        }
        let vocab = tape.value(per_filter[0]).len();
        let mut terms = vec![0.0; active.len()];
        let mixed: Vec<f64> = (0..vocab)
            .map(|v| {
                for (t, (&i, lp)) in terms.iter_mut().zip(active.iter().zip(&per_filter)) {
                    *t = log_w[i] + tape.value(*lp).data()[v];
                }
                logsumexp(&terms)
            })
            .collect();
        let tok = pick_token(&mixed);
        let z = logsumexp(&mixed);
        out.step_log_probs
            .push(mixed.iter().map(|m| m - z).collect());
        if tok == EOS {
            break;
        }
        out.tokens.push(tok);
        states.iter_mut().for_each(|s| s.prev_token = tok);
    }
    Ok(out)
}

/// Soft decoding with the mixture posterior of the representation as
/// weights.
pub fn decode_soft_encoded(
    bank: &FilterBank,
    enc_seq: &EncodedSequence,
    max_len: usize,
) -> Result<SoftDecode> {
    let post = bank.gmm.posterior(enc_seq.representation.data())?;
    decode_soft_weighted(bank, enc_seq, &post, max_len)
}

pub fn decode_soft(
    bank: &FilterBank,
    enc: &Encoder,
    tokens: &[usize],
    max_len: usize,
) -> Result<Vec<usize>> {
    Ok(decode_soft_encoded(bank, &enc.encode_values(tokens)?, max_len)?.tokens)
}
