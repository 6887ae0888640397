//! Training loss and evaluation metrics.
//!
//! All sequence metrics compare token sequences without EOS. BLEU is
//! corpus-level: n-gram statistics are pooled over every pair before the
//! precisions are formed.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::data::PAD;
use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Per-class weights for the negative log-likelihood.
#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights {
    weights: Option<Vec<f64>>,
}

impl LossWeights {
    /// Every class weighted 1.
    pub fn uniform() -> Self {
        LossWeights { weights: None }
    }

    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::contract(
                "loss weights must be finite and nonnegative",
            ));
        }
        Ok(LossWeights {
            weights: Some(weights),
        })
    }

    pub fn weight(&self, class: usize) -> f64 {
        match &self.weights {
            None => 1.0,
            Some(w) => w[class],
        }
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights::uniform()
    }
}

/// Weighted negative log-likelihood over the rows of `log_probs`
/// (`[N × V]`): `l_n = -w[y_n] * x[n, y_n]`, returning `Σ l_n / Σ w[y_n]`.
/// Positions whose target is PAD are excluded.
pub fn nll_loss(
    tape: &mut Tape<'_>,
    log_probs: Var,
    targets: &[usize],
    weights: &LossWeights,
) -> Result<Var> {
    let shape = tape.value(log_probs).shape().to_vec();
    if shape.len() != 2 || shape[0] != targets.len() {
        return Err(Error::Shape {
            op: "nll_loss",
            lhs: shape,
            rhs: vec![targets.len()],
        });
    }
    let vocab = shape[1];
    if let Some(&bad) = targets.iter().find(|&&t| t >= vocab) {
        return Err(Error::contract(format!(
            "target {bad} out of range for {vocab} classes"
        )));
    }
    if let Some(w) = &weights.weights {
        if w.len() != vocab {
            return Err(Error::Shape {
                op: "nll_loss weights",
                lhs: vec![vocab],
                rhs: vec![w.len()],
            });
        }
    }
    let w: Vec<f64> = targets
        .iter()
        .map(|&t| if t == PAD { 0.0 } else { weights.weight(t) })
        .collect();
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return Err(Error::contract("nll_loss has no weighted targets"));
    }
    let picked = tape.select(log_probs, targets)?;
    let wv = tape.constant(Tensor::vector(w));
    let s = tape.dot(picked, wv)?;
    Ok(tape.scale(s, -1.0 / total))
}

/// How the brevity penalty treats candidates longer than the references.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum BrevityMode {
    /// `min(1, exp(1 - r/c))`.
    #[default]
    #[serde(rename = "standard")]
    Standard,
    /// `exp(1 - r/c)` without the clamp.
    #[serde(rename = "paper-exact", alias = "unclamped")]
    Unclamped,
}

impl std::str::FromStr for BrevityMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(BrevityMode::Standard),
            "paper-exact" | "unclamped" => Ok(BrevityMode::Unclamped),
            other => Err(Error::Config(format!("unknown bp_mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for BrevityMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BrevityMode::Standard => "standard",
            BrevityMode::Unclamped => "paper-exact",
        })
    }
}

/// Brevity penalty for reference length `r` and candidate length `c`.
pub fn brevity_penalty(r: usize, c: usize, mode: BrevityMode) -> Result<f64> {
    if c == 0 {
        return Err(Error::contract(
            "brevity penalty undefined for empty candidate corpus",
        ));
    }
    let bp = (1.0 - r as f64 / c as f64).exp();
    Ok(match mode {
        BrevityMode::Standard => bp.min(1.0),
        BrevityMode::Unclamped => bp,
    })
}

pub const BLEU_ORDER: usize = 4;

/// Pooled corpus statistics for BLEU.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub reference_len: usize,
    pub candidate_len: usize,
    /// Clipped n-gram matches for n = 1..=4.
    pub matches: [usize; BLEU_ORDER],
    /// Candidate n-gram counts for n = 1..=4.
    pub totals: [usize; BLEU_ORDER],
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

impl BleuStats {
    pub fn add_pair<T: Eq + Hash>(&mut self, candidate: &[T], reference: &[T]) {
        self.reference_len += reference.len();
        self.candidate_len += candidate.len();
        for n in 1..=BLEU_ORDER {
            let cand = ngram_counts(candidate, n);
            let refc = ngram_counts(reference, n);
            for (g, &c) in &cand {
                self.matches[n - 1] += c.min(refc.get(g).copied().unwrap_or(0));
            }
            self.totals[n - 1] += candidate.len().saturating_sub(n - 1);
        }
    }

    pub fn from_corpus<T: Eq + Hash, S: AsRef<[T]>>(
        candidates: &[S],
        references: &[S],
    ) -> Result<Self> {
        if candidates.len() != references.len() {
            return Err(Error::contract(format!(
                "{} candidates but {} references",
                candidates.len(),
                references.len()
            )));
        }
        if candidates.is_empty() {
            return Err(Error::contract("BLEU of an empty corpus"));
        }
        let mut s = BleuStats::default();
        for (c, r) in candidates.iter().zip(references) {
            s.add_pair(c.as_ref(), r.as_ref());
        }
        Ok(s)
    }

    /// Precision for order `n` (1-based). A zero match count is smoothed by
    /// adding one to it, `1 / total`; an order with no candidate n-grams at
    /// all counts as 1.
    pub fn precision(&self, n: usize) -> f64 {
        let (m, t) = (self.matches[n - 1], self.totals[n - 1]);
        if t == 0 {
            1.0
        } else if m == 0 {
            1.0 / t as f64
        } else {
            m as f64 / t as f64
        }
    }

    /// BLEU on a 0-100 scale with uniform weights 1/4.
    pub fn score(&self, mode: BrevityMode) -> Result<f64> {
        if self.candidate_len == 0 {
            // Nothing was generated: every precision is undefined and the
            // brevity penalty tends to zero.
            return Ok(0.0);
        }
        let bp = brevity_penalty(self.reference_len, self.candidate_len, mode)?;
        let log_mean = (1..=BLEU_ORDER)
            .map(|n| self.precision(n).ln())
            .sum::<f64>()
            / BLEU_ORDER as f64;
        Ok(100.0 * bp * log_mean.exp())
    }
}

/// Corpus BLEU (percentage) of `candidates` against paired `references`.
pub fn bleu<T: Eq + Hash, S: AsRef<[T]>>(
    candidates: &[S],
    references: &[S],
    mode: BrevityMode,
) -> Result<f64> {
    BleuStats::from_corpus(candidates, references)?.score(mode)
}

/// Mean positional agreement (percentage): per pair, matches at aligned
/// positions divided by the longer length.
pub fn token_accuracy<T: Eq, S: AsRef<[T]>>(candidates: &[S], references: &[S]) -> Result<f64> {
    if candidates.len() != references.len() {
        return Err(Error::contract("token_accuracy needs paired sequences"));
    }
    if candidates.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = candidates
        .iter()
        .zip(references)
        .map(|(c, r)| {
            let (c, r) = (c.as_ref(), r.as_ref());
            let len = c.len().max(r.len());
            if len == 0 {
                return 1.0;
            }
            let hits = c.iter().zip(r).filter(|(a, b)| a == b).count();
            hits as f64 / len as f64
        })
        .sum();
    Ok(100.0 * total / candidates.len() as f64)
}

/// Whole-sequence exact-match rate (percentage). Stands in for execution
/// based denotation accuracy, so reports label it as a proxy.
pub fn denotation_match_proxy<T: Eq, S: AsRef<[T]>>(
    candidates: &[S],
    references: &[S],
) -> Result<f64> {
    if candidates.len() != references.len() {
        return Err(Error::contract(
            "denotation_match_proxy needs paired sequences",
        ));
    }
    if candidates.is_empty() {
        return Ok(0.0);
    }
    let hits = candidates
        .iter()
        .zip(references)
        .filter(|(c, r)| c.as_ref() == r.as_ref())
        .count();
    Ok(100.0 * hits as f64 / candidates.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(text: &str) -> Vec<&str> {
        text.split_whitespace().collect()
    }

    #[test]
    fn nll_reads_target_log_prob() {
        let mut tape = Tape::new();
        let lp = tape.constant(Tensor::matrix(1, 3, vec![-1.0, -2.0, -0.5]).unwrap());
        let l = nll_loss(&mut tape, lp, &[1], &LossWeights::uniform()).unwrap();
        assert_eq!(tape.value(l).item(), 2.0);

        let lp = tape.constant(Tensor::matrix(1, 2, vec![0.0, f64::NEG_INFINITY]).unwrap());
        let l = nll_loss(&mut tape, lp, &[0], &LossWeights::uniform());
        // PAD-only targets carry no weight.
        assert!(l.is_err());
        let lp = tape.constant(Tensor::matrix(1, 5, vec![-9.0, -9.0, -9.0, -9.0, 0.0]).unwrap());
        let l = nll_loss(&mut tape, lp, &[4], &LossWeights::uniform()).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);
    }

    #[test]
    fn nll_weighted_by_hand() {
        let lp = vec![
            -0.5, -1.0, -2.0, -3.0, -4.0, //
            -1.5, -0.2, -2.5, -3.5, -1.0, //
            -0.1, -0.3, -0.7, -0.9, -1.1,
        ];
        let w = LossWeights::new(vec![1.0, 1.0, 1.0, 2.0, 0.5]).unwrap();
        // targets 4, 3, 1 -> weights 0.5, 2, 1
        let expected = (0.5 * 4.0 + 2.0 * 3.5 + 1.0 * 0.3) / 3.5;
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::matrix(3, 5, lp.clone()).unwrap());
        let l = nll_loss(&mut tape, v, &[4, 3, 1], &w).unwrap();
        assert!((tape.value(l).item() - expected).abs() < 1e-12);

        // a PAD target carries no weight
        let v = tape.constant(Tensor::matrix(3, 5, lp).unwrap());
        let l = nll_loss(&mut tape, v, &[4, 3, 0], &w).unwrap();
        assert!((tape.value(l).item() - (0.5 * 4.0 + 2.0 * 3.5) / 2.5).abs() < 1e-12);

        let v2 = tape.constant(Tensor::matrix(1, 5, vec![0.0; 5]).unwrap());
        assert!(nll_loss(&mut tape, v2, &[5], &w).is_err());
    }

    #[test]
    fn brevity_penalty_cases() {
        assert_eq!(brevity_penalty(7, 7, BrevityMode::Standard).unwrap(), 1.0);
        let v = brevity_penalty(20, 10, BrevityMode::Unclamped).unwrap();
        assert!((v - (-1f64).exp()).abs() < 1e-12);
        assert_eq!(brevity_penalty(5, 10, BrevityMode::Standard).unwrap(), 1.0);
        let v = brevity_penalty(5, 10, BrevityMode::Unclamped).unwrap();
        assert!((v - 0.5f64.exp()).abs() < 1e-12);
        assert!(brevity_penalty(5, 0, BrevityMode::Standard).is_err());
    }

    #[test]
    fn bleu_identical_is_100() {
        let c = vec![s("the cat sat on the mat"), s("a b"), s("x")];
        assert_eq!(bleu(&c, &c, BrevityMode::Standard).unwrap(), 100.0);
    }

    #[test]
    fn bleu_disjoint_uses_smoothing() {
        let cand: Vec<Vec<String>> = (0..10)
            .map(|i| (0..8).map(|j| format!("c{i}_{j}")).collect())
            .collect();
        let refs: Vec<Vec<String>> = (0..10)
            .map(|i| (0..8).map(|j| format!("r{i}_{j}")).collect())
            .collect();
        // 80 unigrams, 70 bigrams, 60 trigrams, 50 four-grams, no matches.
        let expected =
            100.0 * ((1.0f64 / 80.0) * (1.0 / 70.0) * (1.0 / 60.0) * (1.0 / 50.0)).powf(0.25);
        let v = bleu(&cand, &refs, BrevityMode::Standard).unwrap();
        assert!((v - expected).abs() < 1e-9);
        assert!(v < 5.0);
    }

    #[test]
    fn bleu_smoothing_adds_one_to_the_match_count() {
        // unigrams 2/3, bigrams 0/2 -> 1/2, trigrams 0/1 -> 1, no four-grams at all
        let st = BleuStats::from_corpus(&[s("a b c")], &[s("a x c")]).unwrap();
        assert_eq!(st.totals, [3, 2, 1, 0]);
        assert_eq!(st.precision(4), 1.0);
        assert_eq!(st.precision(2), 0.5);
        assert_eq!(st.precision(3), 1.0);
    }

    #[test]
    fn bleu_hand_tallied() {
        let cand = vec![s("the cat the cat on the mat"), s("a quick fox")];
        let refs = vec![s("the cat is on the mat"), s("the quick brown fox")];
        let st = BleuStats::from_corpus(&cand, &refs).unwrap();
        // sentence 1: unigrams the×3 (ref 2) cat×2 (1) on mat -> 2+1+1+1 = 5 / 7
        //   bigrams: the-cat×2 (ref 1), cat-the (0), cat-on (0), on-the (1), the-mat (1) -> 3 / 6
        //   trigrams: on-the-mat (1) -> 1 / 5; four-grams: 0 / 4
        // sentence 2: unigrams quick fox -> 2 / 3; no higher-order matches; 0/2, 0/1, 0/0
        assert_eq!(st.matches, [7, 3, 1, 0]);
        assert_eq!(st.totals, [10, 8, 6, 4]);
        assert_eq!((st.reference_len, st.candidate_len), (10, 10));
        let expected =
            100.0 * ((7.0f64 / 10.0) * (3.0 / 8.0) * (1.0 / 6.0) * (1.0 / 4.0)).powf(0.25);
        assert!((st.score(BrevityMode::Standard).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn bleu_errors() {
        let empty: Vec<Vec<&str>> = vec![];
        assert!(bleu(&empty, &empty, BrevityMode::Standard).is_err());
        assert!(bleu(&[s("a")], &[s("a"), s("b")], BrevityMode::Standard).is_err());
    }

    #[test]
    fn bleu_below_100_when_different() {
        let refs = vec![s("a b c d e"), s("x y")];
        for cand in [
            vec![s("a b c d"), s("x y")],
            vec![s("b a c d e"), s("x y")],
            vec![s("a b c d e"), s("y x")],
            vec![s("a b c d e f"), s("x y")],
        ] {
            assert!(bleu(&cand, &refs, BrevityMode::Standard).unwrap() < 100.0);
        }
    }

    #[test]
    fn token_accuracy_cases() {
        assert_eq!(token_accuracy(&[s("a b")], &[s("a b")]).unwrap(), 100.0);
        assert_eq!(token_accuracy(&[s("a b")], &[s("c d")]).unwrap(), 0.0);
        assert_eq!(
            token_accuracy(&[s("a b c")], &[s("a x c d")]).unwrap(),
            50.0
        );
    }

    #[test]
    fn denotation_proxy_cases() {
        let r = vec![s("a b"), s("c d")];
        assert_eq!(denotation_match_proxy(&r, &r).unwrap(), 100.0);
        assert_eq!(
            denotation_match_proxy(&[s("a b"), s("c e")], &r).unwrap(),
            50.0
        );
        // The proxy is all-or-nothing per pair while token accuracy is
        // partial, so they move independently.
        let c = vec![s("a b"), s("c x")];
        let r2 = vec![s("a y"), s("c x")];
        assert_eq!(denotation_match_proxy(&c, &r2).unwrap(), 50.0);
        assert_eq!(token_accuracy(&c, &r2).unwrap(), 75.0);
        let c = vec![s("a b c d"), s("q")];
        let r3 = vec![s("a b c d"), s("z z z z")];
        assert_eq!(denotation_match_proxy(&c, &r3).unwrap(), 50.0);
        assert_eq!(token_accuracy(&c, &r3).unwrap(), 50.0);
    }
}
