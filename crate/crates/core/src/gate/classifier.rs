//! Bag-of-n-grams style classifier: multinomial logistic regression over
//! hashed, averaged unigram and bigram features, fitted with seeded SGD.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HASH_BITS: u32 = 16;
const BUCKETS: usize = 1 << HASH_BITS;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    /// Largest n-gram order hashed (1 or 2).
    pub max_n: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            max_n: 2,
            epochs: 5,
            learning_rate: 0.5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StyleClassifier {
    pub num_styles: usize,
    pub max_n: usize,
    /// `BUCKETS x num_styles`, row-major.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

fn fnv1a(parts: &[&str]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for (i, p) in parts.iter().enumerate() {
        if i > 0 {
            h ^= 0x1f;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        for b in p.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

/// Sparse averaged features: bucket ids with weight `1 / count` each
/// (repeats appear repeatedly).
fn features(tokens: &[String], max_n: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(tokens.len() * max_n);
    for n in 1..=max_n {
        for w in tokens.windows(n) {
            let parts: Vec<&str> = w.iter().map(String::as_str).collect();
            out.push(((fnv1a(&parts) ^ (n as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)) % BUCKETS as u64) as usize);
        }
    }
    // a fixed summation order makes the bag truly order-free
    out.sort_unstable();
    out
}

fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in z.iter_mut() {
        *v /= s;
    }
}

/// Fits on `(tokens, style)` examples. Needs at least two distinct styles.
pub fn train_gate_classifier<S: AsRef<[String]>>(
    examples: &[(S, usize)],
    num_styles: usize,
    config: &ClassifierConfig,
) -> Result<StyleClassifier> {
    let mut seen: Vec<usize> = examples.iter().map(|e| e.1).collect();
    seen.sort_unstable();
    seen.dedup();
    if seen.len() < 2 {
        return Err(Error::SingleStyleCorpus(seen.len()));
    }
    if let Some(&bad) = seen.iter().find(|&&s| s >= num_styles) {
        return Err(Error::ConfigInvalid(format!("style {bad} out of range for {num_styles} styles")));
    }
    if !(1..=2).contains(&config.max_n) {
        return Err(Error::ConfigInvalid("classifier n-gram order must be 1 or 2".into()));
    }
    let mut clf = StyleClassifier {
        num_styles,
        max_n: config.max_n,
        weights: vec![0.0; BUCKETS * num_styles],
        bias: vec![0.0; num_styles],
    };
    let feats: Vec<Vec<usize>> = examples.iter().map(|(t, _)| features(t.as_ref(), config.max_n)).collect();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let f = &feats[i];
            let mut p = clf.logits_of(f);
            softmax_in_place(&mut p);
            p[examples[i].1] -= 1.0;
            let scale = if f.is_empty() { 0.0 } else { 1.0 / f.len() as f64 };
            for (c, g) in p.iter().enumerate() {
                let step = config.learning_rate * g;
                clf.bias[c] -= step;
                for &b in f {
                    clf.weights[b * num_styles + c] -= step * scale;
                }
            }
        }
    }
    Ok(clf)
}

impl StyleClassifier {
    fn logits_of(&self, f: &[usize]) -> Vec<f64> {
        let mut z = self.bias.clone();
        if !f.is_empty() {
            let scale = 1.0 / f.len() as f64;
            for &b in f {
                for (c, zc) in z.iter_mut().enumerate() {
                    *zc += scale * self.weights[b * self.num_styles + c];
                }
            }
        }
        z
    }

    pub fn predict_proba(&self, tokens: &[String]) -> Vec<f64> {
        let mut z = self.logits_of(&features(tokens, self.max_n));
        softmax_in_place(&mut z);
        z
    }

    /// Most probable style; ties go to the smaller id.
    pub fn predict(&self, tokens: &[String]) -> usize {
        styled2t_autograd::tensor::argmax(&self.predict_proba(tokens))
    }

    /// Little-endian `f64` weights followed by the biases.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * (self.weights.len() + self.bias.len()));
        out.extend_from_slice(&(self.num_styles as u64).to_le_bytes());
        out.extend_from_slice(&(self.max_n as u64).to_le_bytes());
        for v in self.weights.iter().chain(&self.bias) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = || Error::Checkpoint("classifier weights are truncated or malformed".into());
        let word = |i: usize| -> Result<[u8; 8]> {
            bytes.get(8 * i..8 * i + 8).and_then(|s| s.try_into().ok()).ok_or_else(bad)
        };
        let num_styles = u64::from_le_bytes(word(0)?) as usize;
        let max_n = u64::from_le_bytes(word(1)?) as usize;
        let n = BUCKETS.checked_mul(num_styles).ok_or_else(bad)?;
        if bytes.len() != 8 * (2 + n + num_styles) || !(1..=2).contains(&max_n) {
            return Err(bad());
        }
        let vals: Vec<f64> = (0..n + num_styles)
            .map(|i| word(2 + i).map(f64::from_le_bytes))
            .collect::<Result<_>>()?;
        Ok(Self {
            num_styles,
            max_n,
            weights: vals[..n].to_vec(),
            bias: vals[n..].to_vec(),
        })
    }
}
