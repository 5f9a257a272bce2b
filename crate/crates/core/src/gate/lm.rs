//! Interpolated 5-gram language model.
//!
//! `P(w | h) = Σ_n λ_n P_n(w | h)` where `P_n` is the maximum-likelihood
//! estimate from `n`-gram counts and `P_1` is add-one smoothed over the
//! vocabulary (training tokens plus EOS and UNK). Orders whose history never
//! occurred drop out and the remaining weights are rescaled, so every
//! conditional distribution sums to one.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ORDER: usize = 5;

const BOS: u32 = 0;
const EOS: u32 = 1;
const UNK: u32 = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct NgramLM {
    lambdas: [f64; ORDER],
    /// Index 0 is BOS (history only), 1 EOS, 2 UNK.
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
    unigrams: Vec<u64>,
    total: u64,
    /// `ngrams[n - 2]`: counts of full `n`-grams, `n = 2..=ORDER`.
    ngrams: Vec<HashMap<Vec<u32>, u64>>,
    /// `histories[n - 2]`: how often each `n - 1` history was followed by
    /// any event.
    histories: Vec<HashMap<Vec<u32>, u64>>,
}

#[derive(Serialize, Deserialize)]
struct Stored {
    lambdas: Vec<f64>,
    tokens: Vec<String>,
    unigrams: Vec<u64>,
    ngrams: Vec<Vec<(Vec<u32>, u64)>>,
}

/// Fits counts on tokenized texts; every text is framed as
/// `BOS^4 w_1 .. w_m EOS`.
pub fn train_lm<S: AsRef<[String]>>(texts: &[S]) -> Result<NgramLM> {
    if texts.iter().all(|t| t.as_ref().is_empty()) {
        return Err(Error::EmptyCorpus);
    }
    let mut vocab: Vec<&str> = texts.iter().flat_map(|t| t.as_ref().iter().map(String::as_str)).collect();
    vocab.sort_unstable();
    vocab.dedup();
    let mut tokens: Vec<String> = ["<s>", "</s>", "<unk>"].iter().map(|s| s.to_string()).collect();
    tokens.extend(vocab.into_iter().filter(|t| !matches!(*t, "<s>" | "</s>" | "<unk>")).map(str::to_owned));
    let mut lm = NgramLM::empty(tokens);
    for t in texts {
        let ids = lm.ids_of(t.as_ref());
        lm.count_sentence(&ids, 1);
    }
    Ok(lm)
}

impl NgramLM {
    fn empty(tokens: Vec<String>) -> Self {
        let ids = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Self {
            lambdas: [1.0 / ORDER as f64; ORDER],
            unigrams: vec![0; tokens.len()],
            tokens,
            ids,
            total: 0,
            ngrams: vec![HashMap::new(); ORDER - 1],
            histories: vec![HashMap::new(); ORDER - 1],
        }
    }

    fn ids_of(&self, text: &[String]) -> Vec<u32> {
        text.iter().map(|w| *self.ids.get(w).unwrap_or(&UNK)).collect()
    }

    fn framed(ids: &[u32]) -> Vec<u32> {
        let mut f = vec![BOS; ORDER - 1];
        f.extend_from_slice(ids);
        f.push(EOS);
        f
    }

    fn count_sentence(&mut self, ids: &[u32], times: u64) {
        let f = Self::framed(ids);
        for pos in ORDER - 1..f.len() {
            self.unigrams[f[pos] as usize] += times;
            self.total += times;
            for n in 2..=ORDER {
                let gram = &f[pos + 1 - n..=pos];
                *self.ngrams[n - 2].entry(gram.to_vec()).or_default() += times;
                *self.histories[n - 2].entry(gram[..n - 1].to_vec()).or_default() += times;
            }
        }
    }

    /// Size of the predicted vocabulary (tokens, EOS and UNK).
    pub fn vocab_size(&self) -> usize {
        self.tokens.len() - 1
    }

    pub fn lambdas(&self) -> &[f64; ORDER] {
        &self.lambdas
    }

    fn unigram(&self, w: u32) -> f64 {
        (self.unigrams[w as usize] + 1) as f64 / (self.total + self.vocab_size() as u64) as f64
    }

    /// `P(w | history)` over ids; `history` holds the preceding ids with
    /// BOS padding and may be longer than needed.
    fn prob_ids(&self, history: &[u32], w: u32) -> f64 {
        let mut num = self.lambdas[0] * self.unigram(w);
        let mut weight = self.lambdas[0];
        let mut gram = Vec::with_capacity(ORDER);
        for n in 2..=ORDER {
            let h = &history[history.len() + 1 - n..];
            if let Some(&c) = self.histories[n - 2].get(h) {
                gram.clear();
                gram.extend_from_slice(h);
                gram.push(w);
                let hits = self.ngrams[n - 2].get(&gram).copied().unwrap_or(0);
                num += self.lambdas[n - 1] * hits as f64 / c as f64;
                weight += self.lambdas[n - 1];
            }
        }
        num / weight
    }

    /// `P(word | context)` for string tokens; `None` as the word means EOS.
    /// Unknown words map to UNK.
    pub fn prob(&self, context: &[String], word: Option<&str>) -> f64 {
        let ids = self.ids_of(context);
        let mut history = vec![BOS; ORDER - 1];
        history.extend(ids);
        let w = match word {
            None => EOS,
            Some(w) => *self.ids.get(w).unwrap_or(&UNK),
        };
        self.prob_ids(&history, w)
    }

    /// Every predictable symbol: the training tokens, then EOS as `None` and
    /// UNK as `Some("<unk>")`.
    pub fn predictable(&self) -> Vec<Option<&str>> {
        let mut out: Vec<Option<&str>> = self.tokens[3..].iter().map(|t| Some(t.as_str())).collect();
        out.push(None);
        out.push(Some("<unk>"));
        out
    }

    /// `exp` of the mean negative log probability of the tokens and EOS.
    pub fn perplexity(&self, text: &[String]) -> Result<f64> {
        if text.is_empty() {
            return Err(Error::EmptyText);
        }
        let f = Self::framed(&self.ids_of(text));
        let mut nll = 0.0;
        for pos in ORDER - 1..f.len() {
            nll -= self.prob_ids(&f[..pos], f[pos]).ln();
        }
        Ok((nll / (f.len() - (ORDER - 1)) as f64).exp())
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut ngrams: Vec<Vec<(Vec<u32>, u64)>> = self
            .ngrams
            .iter()
            .map(|m| m.iter().map(|(k, v)| (k.clone(), *v)).collect())
            .collect();
        for g in &mut ngrams {
            g.sort_unstable();
        }
        serde_json::to_value(Stored {
            lambdas: self.lambdas.to_vec(),
            tokens: self.tokens.clone(),
            unigrams: self.unigrams.clone(),
            ngrams,
        })
        .expect("plain data serializes")
    }

    pub fn from_json(value: serde_json::Value) -> Result<Self> {
        let s: Stored = serde_json::from_value(value).map_err(|e| Error::Checkpoint(format!("language model: {e}")))?;
        if s.lambdas.len() != ORDER || s.ngrams.len() != ORDER - 1 || s.unigrams.len() != s.tokens.len() {
            return Err(Error::Checkpoint("language model: inconsistent sizes".into()));
        }
        let mut lm = Self::empty(s.tokens);
        lm.lambdas.copy_from_slice(&s.lambdas);
        lm.total = s.unigrams.iter().sum();
        lm.unigrams = s.unigrams;
        for (n, grams) in s.ngrams.into_iter().enumerate() {
            for (g, c) in grams {
                if g.len() != n + 2 || g.iter().any(|&i| i as usize >= lm.tokens.len()) {
                    return Err(Error::Checkpoint("language model: malformed n-gram".into()));
                }
                *lm.histories[n].entry(g[..n + 1].to_vec()).or_default() += c;
                lm.ngrams[n].insert(g, c);
            }
        }
        Ok(lm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tokenize;

    fn corpus(lines: &[&str]) -> Vec<Vec<String>> {
        lines.iter().map(|l| tokenize(l)).collect()
    }

    #[test]
    fn empty_corpus_is_rejected() {
        assert!(matches!(train_lm::<Vec<String>>(&[]), Err(Error::EmptyCorpus)));
        assert!(matches!(train_lm(&[Vec::<String>::new()]), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn repeated_two_token_sentence() {
        let lm = train_lm(&corpus(&["a b", "a b", "a b"])).unwrap();
        // V = {a, b, EOS, UNK}; 9 events, b seen 3 times
        let p1_b = 4.0 / 13.0;
        let p = lm.prob(&tokenize("a"), Some("b"));
        assert!((p - (0.8 + 0.2 * p1_b)).abs() < 1e-15);
        assert!(p >= 0.2 + 0.2 * p1_b);
    }

    #[test]
    fn unseen_word_keeps_add_one_floor() {
        let lm = train_lm(&corpus(&["a b c"])).unwrap();
        let p = lm.prob(&tokenize("a"), Some("zzz"));
        assert!(p >= 0.2 / (4.0 + lm.vocab_size() as f64));
        assert!(p > 0.0);
    }

    #[test]
    fn conditionals_sum_to_one() {
        let lm = train_lm(&corpus(&[
            "a b c d e f g h",
            "a b c a b c",
            "h g f e d c b a",
            "a c e g",
            "b d f h b d",
        ]))
        .unwrap();
        assert_eq!(lm.vocab_size(), 10);
        for ctx in ["", "a", "a b", "a b c", "b c a b", "x y z", "h g f e d", "c e"] {
            let ctx = tokenize(ctx);
            let total: f64 = lm.predictable().into_iter().map(|w| lm.prob(&ctx, w)).sum();
            assert!((total - 1.0).abs() < 1e-12, "context {ctx:?} sums to {total}");
        }
    }

    #[test]
    fn training_sentence_beats_swapped_variant() {
        let lm = train_lm(&corpus(&["the bag is red and the strap is long"])).unwrap();
        let orig = lm.perplexity(&tokenize("the bag is red and the strap is long")).unwrap();
        let swapped = lm.perplexity(&tokenize("the bag is red and the is strap long")).unwrap();
        assert!(orig < swapped);
        assert!(orig > 1.0);
    }

    #[test]
    fn unseen_histories_fall_back_to_unigrams() {
        // one training sentence "x"; scoring ten unknown words only ever sees
        // unigram probabilities after the first step
        let lm = train_lm(&corpus(&["x"])).unwrap();
        // V = {x, EOS, UNK}, 2 events
        let v: f64 = 3.0;
        let p_unk = 1.0 / (2.0 + v);
        let text: Vec<String> = (0..10).map(|i| format!("w{i}")).collect();
        // first word: BOS-history orders are all seen, none predicts UNK
        let first = 0.2 * p_unk;
        // EOS after unknown words: history unseen at every higher order
        let p_eos = 2.0 / (2.0 + v);
        let nll = -(first.ln() + 9.0 * p_unk.ln() + p_eos.ln());
        let expected = (nll / 11.0).exp();
        assert!((lm.perplexity(&text).unwrap() - expected).abs() < 1e-9);
        assert!(matches!(lm.perplexity(&[]), Err(Error::EmptyText)));
    }

    #[test]
    fn json_round_trip() {
        let lm = train_lm(&corpus(&["a b c", "c b a d"])).unwrap();
        let back = NgramLM::from_json(lm.to_json()).unwrap();
        assert_eq!(lm, back);
    }
}
