//! Two-style synthetic product-description corpus.
//!
//! Style 0 is formal, style 1 is informal. Both describe the same kind of
//! data with disjoint marker vocabularies and different sentence templates.
//! Attributes are mentioned in a canonical priority order perturbed by random
//! adjacent swaps, so plans are learnable but not trivial, and every value
//! appears verbatim in its target.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{tokenize, AttributeValuePair, Triplet};
use crate::error::{Error, Result};

/// Attributes in canonical mention order, each with its value pool. Every
/// value token is unique across the lexicon and absent from the templates.
pub const LEXICON: [(&str, [&str; 8]); 12] = [
    ("brand", ["aurora", "zenith", "nimbus", "vertex", "polar peak", "solace", "kestrel", "orbit"]),
    ("material", ["leather", "linen", "merino wool", "bamboo", "canvas", "suede", "denim", "recycled nylon"]),
    ("color", ["crimson", "teal", "ivory", "amber", "charcoal", "navy blue", "olive green", "lilac"]),
    ("pattern", ["striped", "plaid", "floral", "polka dot", "checkered", "paisley", "houndstooth", "camouflage"]),
    ("texture", ["silky", "velvety", "ribbed", "quilted", "brushed", "smooth", "soft touch", "grainy"]),
    ("finish", ["matte", "glossy", "satin", "polished", "lacquered", "hand painted", "enameled", "frosted"]),
    ("size", ["compact", "oversized", "extra large", "petite", "midsize", "jumbo", "slim", "mini"]),
    ("fit", ["tailored", "relaxed", "loose cut", "fitted", "cropped", "high waist", "boxy", "stretchy"]),
    ("weight", ["lightweight", "featherlight", "ultra light", "hefty", "sturdy", "airy", "midweight", "dense"]),
    ("capacity", ["spacious", "roomy", "twenty liters", "double pocket", "expandable", "modular", "two compartments", "capacious"]),
    ("season", ["summer", "winter", "early spring", "autumn", "year round", "monsoon", "holiday", "festive"]),
    ("origin", ["italian", "japanese", "handcrafted", "nordic", "french", "korean", "artisanal", "imported"]),
];

pub struct StyleTemplates {
    pub name: &'static str,
    pub opening: &'static str,
    pub closing: &'static str,
    pub connectors: [&'static str; 3],
    /// `{a}` is replaced by the attribute, `{v}` by the value.
    pub sentences: [&'static str; 3],
}

pub const STYLES: [StyleTemplates; 2] = [
    StyleTemplates {
        name: "formal",
        opening: "we present this item .",
        closing: "we sincerely recommend it .",
        connectors: ["moreover ,", "furthermore ,", "additionally ,"],
        sentences: ["the {a} is {v} .", "it provides {v} {a} .", "its {a} features {v} ."],
    },
    StyleTemplates {
        name: "informal",
        opening: "hey guys look here !",
        closing: "u gonna love it !!",
        connectors: ["also", "plus", "oh and"],
        sentences: ["wow {v} {a} !", "the {a} is like {v} lol", "{v} {a} , so cool !"],
    },
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// Number of triplets per style; the length fixes the style count.
    pub per_style: Vec<usize>,
    /// How many attributes of [`LEXICON`] are in play.
    pub attribute_pool: usize,
    pub min_pairs: usize,
    pub max_pairs: usize,
    /// Probability of swapping each adjacent pair of the canonical order.
    pub swap_prob: f64,
    /// Probability of using a random sentence template instead of the
    /// attribute's preferred one.
    pub template_noise: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            per_style: vec![1000, 1000],
            attribute_pool: 12,
            min_pairs: 3,
            max_pairs: 5,
            swap_prob: 0.15,
            template_noise: 0.25,
            seed: 7,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::ConfigInvalid(m.to_owned()));
        if self.per_style.len() != STYLES.len() {
            return bad("the synthetic generator produces exactly two styles");
        }
        if self.per_style.iter().any(|&n| n < 2) {
            return bad("every style needs at least two triplets (references come from other samples)");
        }
        if self.attribute_pool == 0 || self.attribute_pool > LEXICON.len() {
            return bad("attribute_pool must lie in 1..=12");
        }
        if self.min_pairs == 0 || self.min_pairs > self.max_pairs {
            return bad("pair range must satisfy 1 <= min_pairs <= max_pairs");
        }
        if self.max_pairs > self.attribute_pool {
            return bad("max_pairs cannot exceed attribute_pool");
        }
        if !(0.0..=1.0).contains(&self.swap_prob) || !(0.0..=1.0).contains(&self.template_noise) {
            return bad("probabilities must lie in [0, 1]");
        }
        Ok(())
    }
}

fn render_target(style: &StyleTemplates, mentions: &[(usize, &str)], rng: &mut ChaCha8Rng, noise: f64) -> String {
    let mut parts = vec![style.opening.to_owned()];
    for (n, &(attr, value)) in mentions.iter().enumerate() {
        if n > 0 {
            parts.push(style.connectors[rng.gen_range(0..3)].to_owned());
        }
        let template = if rng.gen_bool(noise) {
            style.sentences[rng.gen_range(0..3)]
        } else {
            style.sentences[attr % 3]
        };
        parts.push(template.replace("{a}", LEXICON[attr].0).replace("{v}", value));
    }
    parts.push(style.closing.to_owned());
    parts.join(" ")
}

/// Deterministic for a fixed config. Output holds all style-0 triplets first,
/// then style 1.
pub fn generate_synthetic_corpus(config: &GeneratorConfig) -> Result<Vec<Triplet>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out = Vec::with_capacity(config.per_style.iter().sum());
    for (style_id, &count) in config.per_style.iter().enumerate() {
        let style = &STYLES[style_id];
        let start = out.len();
        for _ in 0..count {
            let k = rng.gen_range(config.min_pairs..=config.max_pairs);
            let mut attrs: Vec<usize> = (0..config.attribute_pool).collect();
            attrs.shuffle(&mut rng);
            attrs.truncate(k);
            attrs.sort_unstable();
            for i in 0..k.saturating_sub(1) {
                if rng.gen_bool(config.swap_prob) {
                    attrs.swap(i, i + 1);
                }
            }
            let mentions: Vec<(usize, &str)> = attrs
                .iter()
                .map(|&a| (a, LEXICON[a].1[rng.gen_range(0..8)]))
                .collect();
            let target = render_target(style, &mentions, &mut rng, config.template_noise);
            let mut data_order = mentions.clone();
            data_order.shuffle(&mut rng);
            let data = data_order
                .iter()
                .enumerate()
                .map(|(i, &(a, v))| AttributeValuePair::new(LEXICON[a].0, v, i + 1))
                .collect();
            out.push(Triplet {
                data,
                style_ref: Vec::new(),
                target: Some(tokenize(&target)),
                style: style_id,
            });
        }
        for i in 0..count {
            let mut j = rng.gen_range(0..count - 1);
            if j >= i {
                j += 1;
            }
            out[start + i].style_ref = out[start + j].target.clone().unwrap_or_default();
        }
    }
    Ok(out)
}

/// Moves the last `per_style` triplets of each style into a held-out split.
pub fn hold_out(triplets: Vec<Triplet>, per_style: usize) -> (Vec<Triplet>, Vec<Triplet>) {
    let num_styles = triplets.iter().map(|t| t.style + 1).max().unwrap_or(0);
    let mut remaining = vec![0usize; num_styles];
    for t in &triplets {
        remaining[t.style] += 1;
    }
    let mut seen = vec![0usize; num_styles];
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for t in triplets {
        seen[t.style] += 1;
        if seen[t.style] + per_style > remaining[t.style] {
            test.push(t);
        } else {
            train.push(t);
        }
    }
    (train, test)
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::*;
    use crate::corpus::{extract_plan, Plan};

    fn small(seed: u64) -> GeneratorConfig {
        GeneratorConfig {
            per_style: vec![40, 40],
            seed,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn same_seed_same_corpus() {
        let a = generate_synthetic_corpus(&small(7)).unwrap();
        let b = generate_synthetic_corpus(&small(7)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_synthetic_corpus(&small(8)).unwrap());
    }

    #[test]
    fn pair_count_within_range() {
        let cfg = GeneratorConfig {
            min_pairs: 3,
            max_pairs: 6,
            ..small(3)
        };
        for t in generate_synthetic_corpus(&cfg).unwrap() {
            assert!((3..=6).contains(&t.num_pairs()));
        }
    }

    #[test]
    fn every_value_appears_and_plans_are_permutations() {
        for t in generate_synthetic_corpus(&small(5)).unwrap() {
            t.validate(2).unwrap();
            let plan: Plan = extract_plan(&t).unwrap();
            assert!(plan.is_permutation_of(t.num_pairs()));
        }
    }

    #[test]
    fn references_come_from_other_same_style_samples() {
        let corpus = generate_synthetic_corpus(&small(9)).unwrap();
        for (i, t) in corpus.iter().enumerate() {
            let donors: Vec<usize> = corpus
                .iter()
                .enumerate()
                .filter(|(j, u)| *j != i && u.style == t.style && u.target.as_ref() == Some(&t.style_ref))
                .map(|(j, _)| j)
                .collect();
            assert!(!donors.is_empty());
        }
    }

    #[test]
    fn lexicon_values_are_unambiguous() {
        let mut seen = HashSet::new();
        let template_tokens: HashSet<&str> = STYLES
            .iter()
            .flat_map(|s| {
                let mut v = vec![s.opening, s.closing];
                v.extend(s.connectors);
                v.extend(s.sentences);
                v
            })
            .flat_map(str::split_whitespace)
            .collect();
        for (attr, values) in LEXICON {
            assert!(!template_tokens.contains(attr) || attr.is_empty());
            for v in values {
                for tok in v.split_whitespace() {
                    assert!(seen.insert(tok), "value token {tok} reused");
                    assert!(!template_tokens.contains(tok));
                    assert!(LEXICON.iter().all(|(a, _)| *a != tok));
                }
            }
        }
    }

    #[test]
    fn style_markers_are_disjoint() {
        let shared: HashSet<&str> = ["the", "is", "it", ",", ".", "{a}", "{v}"].into();
        let markers = |s: &StyleTemplates| -> HashSet<&'static str> {
            let mut v = vec![s.opening, s.closing];
            v.extend(s.connectors);
            v.extend(s.sentences);
            v.into_iter()
                .flat_map(str::split_whitespace)
                .filter(|t| !shared.contains(t))
                .collect()
        };
        let (a, b) = (markers(&STYLES[0]), markers(&STYLES[1]));
        assert!(a.is_disjoint(&b), "{:?}", a.intersection(&b).collect::<Vec<_>>());
    }

    #[test]
    fn rejects_bad_configs() {
        for cfg in [
            GeneratorConfig { per_style: vec![0, 10], ..small(1) },
            GeneratorConfig { per_style: vec![10], ..small(1) },
            GeneratorConfig { min_pairs: 0, ..small(1) },
            GeneratorConfig { max_pairs: 13, attribute_pool: 12, ..small(1) },
        ] {
            assert!(matches!(generate_synthetic_corpus(&cfg), Err(Error::ConfigInvalid(_))));
        }
    }

    #[test]
    fn hold_out_takes_tail_of_each_style() {
        let corpus = generate_synthetic_corpus(&small(2)).unwrap();
        let (train, test) = hold_out(corpus.clone(), 5);
        assert_eq!(train.len(), 70);
        assert_eq!(test.len(), 10);
        assert_eq!(test.iter().filter(|t| t.style == 0).count(), 5);
        assert_eq!(test[0], corpus[35]);
    }
}
