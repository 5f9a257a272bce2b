//! Data model: attribute-value pairs, triplets, vocabularies, mention ranks
//! and ground-truth plans.

mod jsonl;
pub mod synthetic;

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use jsonl::{read_jsonl, triplet_from_json, triplet_to_json, write_jsonl};
pub use synthetic::{generate_synthetic_corpus, GeneratorConfig};

pub type Tokens = Vec<String>;

/// Splits on whitespace. Unknown tokens become UNK only at encoding time.
pub fn tokenize(text: &str) -> Tokens {
    text.split_whitespace().map(str::to_owned).collect()
}

pub fn detokenize(tokens: &[String]) -> String {
    tokens.join(" ")
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeValuePair {
    pub attribute: Tokens,
    pub value: Tokens,
    /// 1-based position within its instance.
    pub index: usize,
}

impl AttributeValuePair {
    pub fn new(attribute: &str, value: &str, index: usize) -> Self {
        Self {
            attribute: tokenize(attribute),
            value: tokenize(value),
            index,
        }
    }
}

/// One sample: data `P`, style reference `X`, optional target `Y`, style id.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub data: Vec<AttributeValuePair>,
    pub style_ref: Tokens,
    pub target: Option<Tokens>,
    /// 0-based style id; the one-hot label is [`Triplet::style_label`].
    pub style: usize,
}

impl Triplet {
    /// One-hot style label of length `num_styles`.
    pub fn style_label(&self, num_styles: usize) -> Vec<f64> {
        (0..num_styles)
            .map(|i| if i == self.style { 1.0 } else { 0.0 })
            .collect()
    }

    pub fn num_pairs(&self) -> usize {
        self.data.len()
    }

    pub fn values(&self) -> Vec<&[String]> {
        self.data.iter().map(|p| p.value.as_slice()).collect()
    }

    pub fn target(&self) -> Result<&[String]> {
        self.target.as_deref().ok_or(Error::MissingTarget)
    }

    /// Checks the structural invariants of the data model.
    pub fn validate(&self, num_styles: usize) -> Result<()> {
        let bad = |m: String| Error::ConfigInvalid(m);
        if self.data.is_empty() {
            return Err(bad("triplet has no attribute-value pairs".into()));
        }
        let mut seen = vec![false; self.data.len()];
        for p in &self.data {
            if p.attribute.is_empty() || p.value.is_empty() {
                return Err(bad(format!("pair {} has an empty attribute or value", p.index)));
            }
            if p.index == 0 || p.index > self.data.len() || seen[p.index - 1] {
                return Err(bad(format!("pair index {} is invalid or repeated", p.index)));
            }
            seen[p.index - 1] = true;
        }
        if self.style >= num_styles {
            return Err(bad(format!("style {} outside 0..{num_styles}", self.style)));
        }
        if self.target.is_some() {
            extract_ranks(self)?;
        }
        Ok(())
    }
}

/// Position of the first contiguous occurrence of `needle` in `hay`.
pub fn find_subsequence<T: PartialEq>(hay: &[T], needle: &[T]) -> Option<usize> {
    if needle.is_empty() || needle.len() > hay.len() {
        return None;
    }
    hay.windows(needle.len()).position(|w| w == needle)
}

/// Mention rank of each pair in one text: 0 for absent pairs, otherwise
/// 1.. by first-occurrence position with ties going to the lower pair index.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankVector(pub Vec<usize>);

impl RankVector {
    /// Ranks of `values` (in pair order) inside `text`; never fails.
    pub fn from_text<T: PartialEq>(values: &[&[T]], text: &[T]) -> Self {
        let positions: Vec<Option<usize>> =
            values.iter().map(|v| find_subsequence(text, v)).collect();
        Self::from_positions(&positions)
    }

    /// Ranks from first-occurrence positions (`None` = absent).
    pub fn from_positions(positions: &[Option<usize>]) -> Self {
        let mut present: Vec<(usize, usize)> = positions
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.map(|pos| (pos, i)))
            .collect();
        present.sort_unstable();
        let mut ranks = vec![0; positions.len()];
        for (r, &(_, i)) in present.iter().enumerate() {
            ranks[i] = r + 1;
        }
        RankVector(ranks)
    }

    pub fn num_present(&self) -> usize {
        self.0.iter().filter(|&&r| r > 0).count()
    }

    /// Pair indices (1-based) with nonzero rank, in rank order.
    pub fn to_plan(&self) -> Plan {
        let mut ranked: Vec<(usize, usize)> = self
            .0
            .iter()
            .enumerate()
            .filter(|(_, &r)| r > 0)
            .map(|(i, &r)| (r, i + 1))
            .collect();
        ranked.sort_unstable();
        Plan {
            order: ranked.into_iter().map(|(_, i)| i).collect(),
        }
    }
}

/// Ordering of an instance's pairs as 1-based indices, without repeats.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub order: Vec<usize>,
}

impl Plan {
    pub fn identity(k: usize) -> Self {
        Self {
            order: (1..=k).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// 0-based indices for array access.
    pub fn zero_based(&self) -> Vec<usize> {
        self.order.iter().map(|i| i - 1).collect()
    }

    pub fn is_valid_for(&self, k: usize) -> bool {
        let mut seen = vec![false; k];
        self.order.iter().all(|&i| {
            if i == 0 || i > k || seen[i - 1] {
                false
            } else {
                seen[i - 1] = true;
                true
            }
        })
    }

    pub fn is_permutation_of(&self, k: usize) -> bool {
        self.order.len() == k && self.is_valid_for(k)
    }
}

pub fn extract_ranks(triplet: &Triplet) -> Result<RankVector> {
    let target = triplet.target()?;
    let ranks = RankVector::from_text(&triplet.values(), target);
    if ranks.num_present() == 0 {
        return Err(Error::PlanUnderivable);
    }
    Ok(ranks)
}

pub fn extract_plan(triplet: &Triplet) -> Result<Plan> {
    Ok(extract_ranks(triplet)?.to_plan())
}

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const SEP: usize = 4;
pub const NUM_RESERVED: usize = 5;
const RESERVED: [&str; NUM_RESERVED] = ["<pad>", "<bos>", "<eos>", "<unk>", "<sep>"];

/// Dense token ids with the five reserved ids first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds from the given tokens; duplicates and reserved names are skipped
    /// and ids follow lexicographic order.
    pub fn from_tokens<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Self {
        let set: BTreeSet<&str> = tokens
            .into_iter()
            .filter(|t| !RESERVED.contains(t))
            .collect();
        let mut all: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        all.extend(set.into_iter().map(str::to_owned));
        let index = all.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens: all, index }
    }

    /// Every token of every pair, reference and target.
    pub fn from_triplets(triplets: &[Triplet]) -> Self {
        let mut toks: Vec<&str> = Vec::new();
        for t in triplets {
            for p in &t.data {
                toks.extend(p.attribute.iter().map(String::as_str));
                toks.extend(p.value.iter().map(String::as_str));
            }
            toks.extend(t.style_ref.iter().map(String::as_str));
            if let Some(y) = &t.target {
                toks.extend(y.iter().map(String::as_str));
            }
        }
        Self::from_tokens(toks)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map_or("<unk>", String::as_str)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Tokens {
        ids.iter().map(|&i| self.token(i).to_owned()).collect()
    }

    /// One token per line, reserved ids omitted.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = String::new();
        for t in &self.tokens[NUM_RESERVED..] {
            s.push_str(t);
            s.push('\n');
        }
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut all: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        for (n, line) in s.lines().enumerate() {
            if line.is_empty() || line.contains(char::is_whitespace) {
                return Err(Error::Schema {
                    line: n + 1,
                    message: "vocabulary line must hold exactly one token".into(),
                });
            }
            all.push(line.to_owned());
        }
        let index: HashMap<String, usize> =
            all.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        if index.len() != all.len() {
            return Err(Error::Schema {
                line: 0,
                message: "vocabulary contains duplicate tokens".into(),
            });
        }
        Ok(Self { tokens: all, index })
    }
}
