//! Confidence gate for pseudo triplets: a candidate text passes only when its
//! length, perplexity, predicted style and coverage all clear thresholds.

mod classifier;
mod lm;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use classifier::{train_gate_classifier, ClassifierConfig, StyleClassifier, HASH_BITS};
pub use lm::{train_lm, NgramLM, ORDER};

use crate::corpus::{find_subsequence, AttributeValuePair};
use crate::error::{Error, Result};

/// Fraction of pairs whose value occurs contiguously in `text`. An empty
/// pair list covers nothing.
pub fn coverage(text: &[String], pairs: &[AttributeValuePair]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let hit = pairs.iter().filter(|p| find_subsequence(text, &p.value).is_some()).count();
    hit as f64 / pairs.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    pub l_min: f64,
    pub l_max: f64,
    pub pl: f64,
    pub c: f64,
    /// Compare against the reference's known label instead of classifying it.
    #[serde(default)]
    pub use_known_ref_style: bool,
}

impl GateConfig {
    /// Thresholds reported for the original corpus.
    pub fn published() -> Self {
        Self {
            l_min: 60.0,
            l_max: 160.0,
            pl: 50.0,
            c: 0.95,
            use_known_ref_style: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.l_min && self.l_min < self.l_max) {
            return Err(Error::ConfigInvalid(format!(
                "gate length bounds need 0 < l_min < l_max, got {} and {}",
                self.l_min, self.l_max
            )));
        }
        if !(self.pl > 1.0) {
            return Err(Error::ConfigInvalid(format!("perplexity threshold must exceed 1, got {}", self.pl)));
        }
        if !(0.0..=1.0).contains(&self.c) {
            return Err(Error::ConfigInvalid(format!("coverage threshold must lie in [0, 1], got {}", self.c)));
        }
        Ok(())
    }

    /// Thresholds fitted to the training targets: PL is the `ppl_quantile`
    /// perplexity quantile, and the length window is the central
    /// `length_mass` of target lengths widened by one token on each side so
    /// those lengths sit strictly inside. C stays at 0.95.
    pub fn calibrate<S: AsRef<[String]>>(lm: &NgramLM, targets: &[S], ppl_quantile: f64, length_mass: f64) -> Result<Self> {
        let texts: Vec<&[String]> = targets.iter().map(|t| t.as_ref()).filter(|t| !t.is_empty()).collect();
        let ppl = texts.iter().map(|t| lm.perplexity(t)).collect::<Result<Vec<_>>>()?;
        Self::from_samples(ppl, &texts, ppl_quantile, length_mass)
    }

    /// Two-fold cross-fitted variant: each half is scored by a model trained
    /// on the other half, so PL reflects unseen but fluent text rather than
    /// memorized training sentences.
    pub fn calibrate_heldout<S: AsRef<[String]>>(targets: &[S], ppl_quantile: f64, length_mass: f64) -> Result<Self> {
        let texts: Vec<&[String]> = targets.iter().map(|t| t.as_ref()).filter(|t| !t.is_empty()).collect();
        if texts.len() < 2 {
            return Err(Error::EmptyCorpus);
        }
        let fold = |parity: usize| -> Vec<&[String]> {
            texts.iter().enumerate().filter(|(i, _)| i % 2 == parity).map(|(_, t)| *t).collect()
        };
        let (even, odd) = (fold(0), fold(1));
        let (lm_even, lm_odd) = (train_lm(&even)?, train_lm(&odd)?);
        let ppl = texts
            .iter()
            .enumerate()
            .map(|(i, t)| if i % 2 == 0 { lm_odd.perplexity(t) } else { lm_even.perplexity(t) })
            .collect::<Result<Vec<_>>>()?;
        Self::from_samples(ppl, &texts, ppl_quantile, length_mass)
    }

    fn from_samples(mut ppl: Vec<f64>, texts: &[&[String]], ppl_quantile: f64, length_mass: f64) -> Result<Self> {
        if ppl.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut lens: Vec<f64> = texts.iter().map(|t| t.len() as f64).collect();
        let tail = (1.0 - length_mass) / 2.0;
        let cfg = Self {
            l_min: (quantile(&mut lens, tail) - 1.0).max(0.5),
            l_max: quantile(&mut lens, 1.0 - tail) + 1.0,
            pl: quantile(&mut ppl, ppl_quantile).max(1.0 + 1e-9),
            c: 0.95,
            use_known_ref_style: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Nearest-rank quantile.
pub fn quantile(xs: &mut [f64], q: f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let rank = (q.clamp(0.0, 1.0) * xs.len() as f64).ceil() as usize;
    xs[rank.clamp(1, xs.len()) - 1]
}

/// Raw measurements behind a verdict.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateScores {
    pub length: usize,
    /// Infinite for an empty candidate.
    pub perplexity: f64,
    pub candidate_style: usize,
    pub reference_style: usize,
    pub coverage: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceVerdict {
    pub tau: bool,
    pub length_ok: bool,
    pub ppl_ok: bool,
    pub style_ok: bool,
    pub coverage_ok: bool,
    pub scores: GateScores,
}

/// Applies the four strict conditions to measured scores.
pub fn verdict_from_scores(scores: GateScores, config: &GateConfig) -> ConfidenceVerdict {
    let len = scores.length as f64;
    let length_ok = config.l_min < len && len < config.l_max;
    let ppl_ok = scores.perplexity < config.pl;
    let style_ok = scores.candidate_style == scores.reference_style;
    let coverage_ok = scores.coverage > config.c;
    ConfidenceVerdict {
        tau: length_ok && ppl_ok && style_ok && coverage_ok,
        length_ok,
        ppl_ok,
        style_ok,
        coverage_ok,
        scores,
    }
}

/// Trained scorers plus thresholds.
#[derive(Clone, Debug, PartialEq)]
pub struct Gate {
    pub lm: NgramLM,
    pub classifier: StyleClassifier,
    pub config: GateConfig,
}

impl Gate {
    /// Scores a candidate `Y'` written for reference `X'` over `pairs`.
    /// `reference_label` is used only when the config asks for it.
    pub fn assign_confidence(
        &self,
        candidate: &[String],
        reference: &[String],
        reference_label: Option<usize>,
        pairs: &[AttributeValuePair],
    ) -> ConfidenceVerdict {
        let perplexity = if candidate.is_empty() {
            f64::INFINITY
        } else {
            self.lm.perplexity(candidate).unwrap_or(f64::INFINITY)
        };
        let reference_style = match (self.config.use_known_ref_style, reference_label) {
            (true, Some(label)) => label,
            _ => self.classifier.predict(reference),
        };
        let scores = GateScores {
            length: candidate.len(),
            perplexity,
            candidate_style: self.classifier.predict(candidate),
            reference_style,
            coverage: coverage(candidate, pairs),
        };
        verdict_from_scores(scores, &self.config)
    }

    /// Writes `lm.json`, `classifier.bin` and `config.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, bytes: &[u8]| {
            let p = dir.join(name);
            fs::write(&p, bytes).map_err(|e| Error::io(p, e))
        };
        write("lm.json", serde_json::to_string(&self.lm.to_json()).expect("json").as_bytes())?;
        write("classifier.bin", &self.classifier.to_bytes())?;
        write("config.json", serde_json::to_string_pretty(&self.config).expect("json").as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            let p = dir.join(name);
            fs::read(&p).map_err(|e| Error::io(p, e))
        };
        let lm_json: serde_json::Value = serde_json::from_slice(&read("lm.json")?)
            .map_err(|e| Error::Checkpoint(format!("lm.json: {e}")))?;
        let config: GateConfig = serde_json::from_slice(&read("config.json")?)
            .map_err(|e| Error::Checkpoint(format!("gate config: {e}")))?;
        config.validate()?;
        Ok(Self {
            lm: NgramLM::from_json(lm_json)?,
            classifier: StyleClassifier::from_bytes(&read("classifier.bin")?)?,
            config,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tokenize;

    fn pairs(values: &[&str]) -> Vec<AttributeValuePair> {
        values
            .iter()
            .enumerate()
            .map(|(i, v)| AttributeValuePair::new("attr", v, i + 1))
            .collect()
    }

    #[test]
    fn coverage_counts_contiguous_values() {
        let text = tokenize("the bag is dark red and made of soft leather");
        assert_eq!(coverage(&text, &pairs(&["dark red", "soft leather"])), 1.0);
        assert_eq!(coverage(&text, &pairs(&["blue", "cotton"])), 0.0);
        assert_eq!(coverage(&text, &pairs(&["dark red", "leather", "wool"])), 2.0 / 3.0);
        assert_eq!(coverage(&text, &pairs(&["red dark"])), 0.0);
    }

    fn scores(length: usize, ppl: f64, same: bool, cov: f64) -> GateScores {
        GateScores {
            length,
            perplexity: ppl,
            candidate_style: 0,
            reference_style: if same { 0 } else { 1 },
            coverage: cov,
        }
    }

    #[test]
    fn strict_boundaries() {
        let cfg = GateConfig::published();
        assert!(verdict_from_scores(scores(70, 30.0, true, 1.0), &cfg).tau);
        assert!(!verdict_from_scores(scores(60, 30.0, true, 1.0), &cfg).tau);
        assert!(!verdict_from_scores(scores(160, 30.0, true, 1.0), &cfg).tau);
        assert!(!verdict_from_scores(scores(70, 50.0, true, 1.0), &cfg).tau);
        assert!(!verdict_from_scores(scores(70, 30.0, true, 0.95), &cfg).tau);
        assert!(!verdict_from_scores(scores(70, 30.0, false, 1.0), &cfg).tau);
    }

    #[test]
    fn config_validation() {
        assert!(GateConfig::published().validate().is_ok());
        let bad = [
            GateConfig { l_min: 0.0, ..GateConfig::published() },
            GateConfig { l_max: 60.0, ..GateConfig::published() },
            GateConfig { pl: 1.0, ..GateConfig::published() },
            GateConfig { c: 1.5, ..GateConfig::published() },
        ];
        for b in bad {
            assert!(b.validate().is_err());
        }
    }

    #[test]
    fn quantiles() {
        let mut xs = vec![5.0, 1.0, 3.0, 2.0, 4.0];
        assert_eq!(quantile(&mut xs, 0.0), 1.0);
        assert_eq!(quantile(&mut xs, 0.5), 3.0);
        assert_eq!(quantile(&mut xs, 0.95), 5.0);
    }

    #[test]
    fn calibration_keeps_training_lengths_inside() {
        let texts: Vec<Vec<String>> = (3..20).map(|n| (0..n).map(|i| format!("w{}", i % 4)).collect()).collect();
        let lm = train_lm(&texts).unwrap();
        let cfg = GateConfig::calibrate(&lm, &texts, 0.95, 1.0).unwrap();
        for t in &texts {
            let n = t.len() as f64;
            assert!(cfg.l_min < n && n < cfg.l_max);
        }
        assert!(cfg.pl > 1.0);
    }

    proptest::proptest! {
        #[test]
        fn monotone_in_thresholds(
            len in 0usize..200, ppl in 1.0f64..100.0, same: bool, cov in 0.0f64..=1.0,
            l_min in 1.0f64..100.0, span in 1.0f64..100.0, pl in 1.5f64..80.0, c in 0.0f64..=1.0,
            bump in 0.0f64..50.0,
        ) {
            let cfg = GateConfig { l_min, l_max: l_min + span, pl, c, use_known_ref_style: false };
            let base = verdict_from_scores(scores(len, ppl, same, cov), &cfg).tau;
            let s = || scores(len, ppl, same, cov);
            let looser = [
                GateConfig { l_max: cfg.l_max + bump, ..cfg.clone() },
                GateConfig { pl: cfg.pl + bump, ..cfg.clone() },
                GateConfig { l_min: (cfg.l_min - bump).max(0.5), ..cfg.clone() },
                GateConfig { c: (cfg.c - bump / 50.0).max(0.0), ..cfg.clone() },
            ];
            for l in &looser {
                proptest::prop_assert!(!base || verdict_from_scores(s(), l).tau);
            }
            let v = verdict_from_scores(s(), &cfg);
            proptest::prop_assert_eq!(v.tau, v.length_ok && v.ppl_ok && v.style_ok && v.coverage_ok);
        }
    }
}
