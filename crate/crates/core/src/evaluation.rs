//! Style accuracy, coverage, ROUGE-L and corpus BLEU-4, plus the protocol
//! that generates every style for every test instance.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::corpus::Triplet;
use crate::error::{Error, Result};
use crate::exec;
use crate::gate::{coverage, train_gate_classifier, ClassifierConfig, StyleClassifier};
use crate::training::encode_corpus;

/// Fraction of texts the classifier assigns to their intended style.
pub fn style_accuracy<S: AsRef<[String]>>(generated: &[(S, usize)], classifier: &StyleClassifier) -> Result<f64> {
    if generated.is_empty() {
        return Err(Error::EmptyInput);
    }
    let hits = generated.iter().filter(|(t, s)| classifier.predict(t.as_ref()) == *s).count();
    Ok(hits as f64 / generated.len() as f64)
}

fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS F-measure `2PR / (P + R)`; 0 when nothing is shared.
pub fn rouge_l(candidate: &[String], reference: &[String]) -> Result<f64> {
    if candidate.is_empty() || reference.is_empty() {
        return Err(Error::EmptyInput);
    }
    let lcs = lcs_len(candidate, reference) as f64;
    if lcs == 0.0 {
        return Ok(0.0);
    }
    let p = lcs / candidate.len() as f64;
    let r = lcs / reference.len() as f64;
    Ok(2.0 * p * r / (p + r))
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    for w in tokens.windows(n) {
        *m.entry(w).or_insert(0) += 1;
    }
    m
}

/// Corpus BLEU with uniform weights over 1..4-gram clipped precisions and a
/// brevity penalty; any zero precision gives 0.
pub fn bleu_4<C: AsRef<[String]>, R: AsRef<[String]>>(candidates: &[C], references: &[R]) -> Result<f64> {
    if candidates.is_empty() || candidates.len() != references.len() {
        return Err(Error::EmptyInput);
    }
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let (mut c_len, mut r_len) = (0usize, 0usize);
    for (c, r) in candidates.iter().zip(references) {
        let (c, r) = (c.as_ref(), r.as_ref());
        c_len += c.len();
        r_len += r.len();
        for n in 1..=4 {
            let rc = ngram_counts(r, n);
            for (g, k) in ngram_counts(c, n) {
                matched[n - 1] += k.min(rc.get(g).copied().unwrap_or(0));
            }
            total[n - 1] += c.len().saturating_sub(n - 1);
        }
    }
    if matched.iter().any(|&m| m == 0) {
        return Ok(0.0);
    }
    let log_p: f64 = (0..4).map(|i| (matched[i] as f64 / total[i] as f64).ln()).sum::<f64>() / 4.0;
    let bp = if c_len >= r_len { 1.0 } else { (1.0 - r_len as f64 / c_len as f64).exp() };
    Ok(bp * log_p.exp())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub instance: usize,
    pub style: usize,
    pub text: String,
    pub predicted_style: usize,
    pub coverage: f64,
    /// Present only for the generation in the instance's own style.
    pub rouge_l: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub style_accuracy: f64,
    pub coverage: f64,
    pub rouge_l: f64,
    pub bleu_4: f64,
}

impl Metrics {
    pub fn percent(&self) -> Metrics {
        Metrics {
            style_accuracy: 100.0 * self.style_accuracy,
            coverage: 100.0 * self.coverage,
            rouge_l: 100.0 * self.rouge_l,
            bleu_4: 100.0 * self.bleu_4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub metrics: Metrics,
    pub percent: Metrics,
    /// Style accuracy restricted to generations of each style.
    pub per_style_accuracy: Vec<f64>,
    pub samples: Vec<SampleRow>,
}

/// Scores `generate(instance, style)` for every test instance and style.
pub fn evaluate_with<F>(test: &[Triplet], num_styles: usize, classifier: &StyleClassifier, generate: F) -> Result<EvaluationReport>
where
    F: Fn(usize, usize) -> Result<Vec<String>> + Sync + Send,
{
    if test.is_empty() {
        return Err(Error::EmptyInput);
    }
    let jobs: Vec<(usize, usize)> = (0..test.len()).flat_map(|i| (0..num_styles).map(move |s| (i, s))).collect();
    let texts: Vec<Result<Vec<String>>> = exec::map(&jobs, |&(i, s)| generate(i, s));
    let mut rows = Vec::with_capacity(jobs.len());
    let mut cands = Vec::new();
    let mut refs = Vec::new();
    let mut rouge_sum = 0.0;
    for (&(i, s), text) in jobs.iter().zip(texts) {
        let text = text?;
        let t = &test[i];
        let rouge = match (&t.target, s == t.style) {
            (Some(gold), true) => {
                let r = if text.is_empty() { 0.0 } else { rouge_l(&text, gold)? };
                rouge_sum += r;
                cands.push(text.clone());
                refs.push(gold.clone());
                Some(r)
            }
            _ => None,
        };
        rows.push(SampleRow {
            instance: i,
            style: s,
            predicted_style: classifier.predict(&text),
            coverage: coverage(&text, &t.data),
            text: text.join(" "),
            rouge_l: rouge,
        });
    }
    let n = rows.len() as f64;
    let mut per_style = vec![(0usize, 0usize); num_styles];
    for r in &rows {
        per_style[r.style].1 += 1;
        if r.predicted_style == r.style {
            per_style[r.style].0 += 1;
        }
    }
    let metrics = Metrics {
        style_accuracy: rows.iter().filter(|r| r.predicted_style == r.style).count() as f64 / n,
        coverage: rows.iter().map(|r| r.coverage).sum::<f64>() / n,
        rouge_l: if cands.is_empty() { 0.0 } else { rouge_sum / cands.len() as f64 },
        bleu_4: if cands.is_empty() { 0.0 } else { bleu_4(&cands, &refs)? },
    };
    Ok(EvaluationReport {
        percent: metrics.percent(),
        metrics,
        per_style_accuracy: per_style
            .into_iter()
            .map(|(h, t)| if t == 0 { 0.0 } else { h as f64 / t as f64 })
            .collect(),
        samples: rows,
    })
}

/// Style classifier for evaluation, fitted separately from the gate's.
pub fn train_eval_classifier(train: &[Triplet], num_styles: usize, seed: u64, epochs: usize) -> Result<StyleClassifier> {
    let examples: Vec<(&[String], usize)> = train
        .iter()
        .map(|t| t.target().map(|x| (x, t.style)))
        .collect::<Result<_>>()?;
    train_gate_classifier(
        &examples,
        num_styles,
        &ClassifierConfig {
            seed: seed ^ 0x00e7_a1c1,
            epochs,
            ..Default::default()
        },
    )
}

/// Seeded draws of training targets to serve as style references.
pub struct ReferencePicker<'c> {
    by_style: Vec<Vec<&'c Triplet>>,
    rng: ChaCha8Rng,
}

impl<'c> ReferencePicker<'c> {
    pub fn new(corpus: &'c [Triplet], num_styles: usize, seed: u64) -> Self {
        let by_style = (0..num_styles)
            .map(|s| corpus.iter().filter(|t| t.style == s && t.target.is_some()).collect())
            .collect();
        ReferencePicker {
            by_style,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn draw(&mut self, style: usize) -> Result<Vec<String>> {
        let pool = self.by_style.get(style).ok_or(Error::DataMissingStyle(style))?;
        let t = pool.choose(&mut self.rng).ok_or(Error::DataMissingStyle(style))?;
        Ok(t.target.clone().expect("filtered"))
    }
}

/// Generates both styles for each test instance with references drawn by
/// `seed` from the checkpoint's training texts of that style.
pub fn evaluate(ckpt: &Checkpoint, test: &[Triplet], seed: u64, max_len: usize) -> Result<EvaluationReport> {
    let n_s = ckpt.model.config.num_styles;
    let classifier = train_eval_classifier(&ckpt.corpus, n_s, seed, ckpt.config.gate.classifier_epochs)?;
    let encoded = encode_corpus(&ckpt.model, test, &ckpt.corpus)?;
    let mut pick = ReferencePicker::new(&ckpt.corpus, n_s, seed);
    let refs: Vec<Vec<Vec<usize>>> = test
        .iter()
        .map(|_| {
            (0..n_s)
                .map(|s| Ok(ckpt.model.vocab.encode(&pick.draw(s)?)))
                .collect::<Result<_>>()
        })
        .collect::<Result<_>>()?;
    evaluate_with(test, n_s, &classifier, |i, s| {
        let g = ckpt.model.generate(&encoded[i], &refs[i][s], s, max_len)?;
        Ok(ckpt.model.vocab.decode(&g.decoded.tokens))
    })
}
