//! Flat `key = value` configuration files mirroring [`TrainConfig`].
//!
//! Files are parsed as TOML tables with scalar values only. Later sources
//! override earlier ones, so callers layer defaults, a file and command-line
//! overrides by applying them in that order.

use std::fmt::Write as _;

use toml::Value;

use crate::error::{Error, Result};
use crate::model::StyleMode;
use crate::training::TrainConfig;

/// Every accepted key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("dim", "model width d1"),
    ("heads", "attention heads"),
    ("ff_dim", "feed-forward width"),
    ("layers", "layers in each transformer stack"),
    ("gcn_layers", "graph convolution layers"),
    ("max_positions", "learned positions"),
    ("num_styles", "number of styles"),
    ("init_std", "embedding init standard deviation"),
    ("style_mode", "masked | average | fixed | learnable"),
    ("no_style", "plain mean instead of the masked style vector"),
    ("w_fixed", "fixed one-hot style vectors"),
    ("w_learnable", "learned per-style vectors"),
    ("no_graph", "planner reads raw pair embeddings"),
    ("no_weight", "all logic-graph edges weigh 1"),
    ("no_planner", "no planner: original order, no planning loss"),
    ("no_gru", "same as no_planner"),
    ("ignore_plan_order", "train the planner but encode in original order"),
    ("no_style_con", "drop classifier and clustering losses"),
    ("no_pseudo", "drop pseudo triplets"),
    ("alpha", "planning loss weight"),
    ("beta", "style classifier loss weight"),
    ("gamma", "style clustering loss weight"),
    ("delta", "pseudo triplet loss weight"),
    ("batch_per_style", "samples per style per iteration"),
    ("epochs", "training epochs"),
    ("iters_per_epoch", "iterations per epoch (0 = derive from data)"),
    ("learning_rate", "optimizer step size"),
    ("clip_norm", "gradient norm ceiling (0 = off)"),
    ("seed", "random seed"),
    ("max_decode_len", "greedy decoding limit"),
    ("gate_ppl_quantile", "perplexity quantile used as PL"),
    ("gate_length_mass", "central mass of target lengths kept by the length window"),
    ("gate_l_min", "explicit lower length bound"),
    ("gate_l_max", "explicit upper length bound"),
    ("gate_pl", "explicit perplexity threshold"),
    ("gate_c", "explicit coverage threshold"),
    ("gate_known_ref_style", "use the reference's label instead of classifying it"),
    ("classifier_epochs", "SGD epochs for the style classifiers"),
];

fn bad(key: &str, want: &str, v: &Value) -> Error {
    Error::ConfigInvalid(format!("`{key}` expects {want}, got {v}"))
}

fn as_usize(key: &str, v: &Value) -> Result<usize> {
    v.as_integer()
        .filter(|&i| i >= 0)
        .map(|i| i as usize)
        .ok_or_else(|| bad(key, "a non-negative integer", v))
}

fn as_f64(key: &str, v: &Value) -> Result<f64> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(bad(key, "a number", v)),
    }
}

fn as_bool(key: &str, v: &Value) -> Result<bool> {
    v.as_bool().ok_or_else(|| bad(key, "true or false", v))
}

fn set_mode(cfg: &mut TrainConfig, key: &str, on: bool, mode: StyleMode) -> Result<()> {
    let cur = &mut cfg.model.ablations.style_mode;
    if on {
        if *cur != StyleMode::Masked && *cur != mode {
            return Err(Error::ConfigInvalid(format!(
                "`{key}` conflicts with style mode {cur:?}; choose one style replacement"
            )));
        }
        *cur = mode;
    } else if *cur == mode {
        *cur = StyleMode::Masked;
    }
    Ok(())
}

/// Applies one key. Unknown keys are errors.
pub fn apply(cfg: &mut TrainConfig, key: &str, v: &Value) -> Result<()> {
    let m = &mut cfg.model;
    let ab = &mut m.ablations;
    match key {
        "dim" => m.dim = as_usize(key, v)?,
        "heads" => m.heads = as_usize(key, v)?,
        "ff_dim" => m.ff_dim = as_usize(key, v)?,
        "layers" => m.layers = as_usize(key, v)?,
        "gcn_layers" => m.gcn_layers = as_usize(key, v)?,
        "max_positions" => m.max_positions = as_usize(key, v)?,
        "num_styles" => m.num_styles = as_usize(key, v)?,
        "init_std" => m.init_std = as_f64(key, v)?,
        "style_mode" => {
            let s = v.as_str().ok_or_else(|| bad(key, "a string", v))?;
            ab.style_mode = match s {
                "masked" => StyleMode::Masked,
                "average" => StyleMode::Average,
                "fixed" => StyleMode::Fixed,
                "learnable" => StyleMode::Learnable,
                _ => return Err(bad(key, "masked, average, fixed or learnable", v)),
            }
        }
        "no_style" => set_mode(cfg, key, as_bool(key, v)?, StyleMode::Average)?,
        "w_fixed" => set_mode(cfg, key, as_bool(key, v)?, StyleMode::Fixed)?,
        "w_learnable" => set_mode(cfg, key, as_bool(key, v)?, StyleMode::Learnable)?,
        "no_graph" => ab.no_graph = as_bool(key, v)?,
        "no_weight" => ab.no_weight = as_bool(key, v)?,
        "no_planner" | "no_gru" => ab.no_planner = as_bool(key, v)?,
        "ignore_plan_order" => ab.ignore_plan_order = as_bool(key, v)?,
        "no_style_con" => cfg.no_style_con = as_bool(key, v)?,
        "no_pseudo" => cfg.no_pseudo = as_bool(key, v)?,
        "alpha" => cfg.alpha = as_f64(key, v)?,
        "beta" => cfg.beta = as_f64(key, v)?,
        "gamma" => cfg.gamma = as_f64(key, v)?,
        "delta" => cfg.delta = as_f64(key, v)?,
        "batch_per_style" => cfg.batch_per_style = as_usize(key, v)?,
        "epochs" => cfg.epochs = as_usize(key, v)?,
        "iters_per_epoch" => cfg.iters_per_epoch = Some(as_usize(key, v)?).filter(|&n| n > 0),
        "learning_rate" => cfg.learning_rate = as_f64(key, v)?,
        "clip_norm" => cfg.clip_norm = Some(as_f64(key, v)?).filter(|&c| c > 0.0),
        "seed" => cfg.seed = as_usize(key, v)? as u64,
        "max_decode_len" => cfg.max_decode_len = as_usize(key, v)?,
        "gate_ppl_quantile" => cfg.gate.ppl_quantile = as_f64(key, v)?,
        "gate_length_mass" => cfg.gate.length_mass = as_f64(key, v)?,
        "gate_l_min" => cfg.gate.l_min = Some(as_f64(key, v)?),
        "gate_l_max" => cfg.gate.l_max = Some(as_f64(key, v)?),
        "gate_pl" => cfg.gate.pl = Some(as_f64(key, v)?),
        "gate_c" => cfg.gate.c = Some(as_f64(key, v)?),
        "gate_known_ref_style" => cfg.gate.use_known_ref_style = as_bool(key, v)?,
        "classifier_epochs" => cfg.gate.classifier_epochs = as_usize(key, v)?,
        _ => return Err(Error::ConfigInvalid(format!("unknown configuration key `{key}`"))),
    }
    Ok(())
}

/// Parses `text` and applies its keys on top of `base`.
pub fn apply_text(base: &mut TrainConfig, text: &str) -> Result<()> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::ConfigInvalid(format!("config file: {}", e.message())))?;
    let mut seen_fixed = false;
    let mut seen_learnable = false;
    for (k, v) in &table {
        if v.is_table() || v.is_array() {
            return Err(Error::ConfigInvalid(format!("`{k}` must be a scalar; the file is flat")));
        }
        seen_fixed |= k == "w_fixed" && v.as_bool() == Some(true);
        seen_learnable |= k == "w_learnable" && v.as_bool() == Some(true);
    }
    if seen_fixed && seen_learnable {
        return Err(Error::ConfigInvalid("w_fixed and w_learnable are mutually exclusive".into()));
    }
    for (k, v) in &table {
        apply(base, k, v)?;
    }
    Ok(())
}

/// Parses a `key=value` override; the value is read as a TOML scalar and
/// falls back to a bare string.
pub fn apply_override(cfg: &mut TrainConfig, spec: &str) -> Result<()> {
    let (k, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::ConfigInvalid(format!("override `{spec}` is not key=value")))?;
    let (k, raw) = (k.trim(), raw.trim());
    let v = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    apply(cfg, k, &v)
}

pub fn parse(text: &str) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    apply_text(&mut cfg, text)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Flat rendering that [`parse`] reads back to an equal config.
pub fn to_flat(cfg: &TrainConfig) -> String {
    let m = &cfg.model;
    let ab = &m.ablations;
    let mode = match ab.style_mode {
        StyleMode::Masked => "masked",
        StyleMode::Average => "average",
        StyleMode::Fixed => "fixed",
        StyleMode::Learnable => "learnable",
    };
    let f = |x: f64| Value::Float(x).to_string();
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k} = {v}");
    };
    kv("dim", m.dim.to_string());
    kv("heads", m.heads.to_string());
    kv("ff_dim", m.ff_dim.to_string());
    kv("layers", m.layers.to_string());
    kv("gcn_layers", m.gcn_layers.to_string());
    kv("max_positions", m.max_positions.to_string());
    kv("num_styles", m.num_styles.to_string());
    kv("init_std", f(m.init_std));
    kv("style_mode", format!("\"{mode}\""));
    kv("no_graph", ab.no_graph.to_string());
    kv("no_weight", ab.no_weight.to_string());
    kv("no_planner", ab.no_planner.to_string());
    kv("ignore_plan_order", ab.ignore_plan_order.to_string());
    kv("no_style_con", cfg.no_style_con.to_string());
    kv("no_pseudo", cfg.no_pseudo.to_string());
    kv("alpha", f(cfg.alpha));
    kv("beta", f(cfg.beta));
    kv("gamma", f(cfg.gamma));
    kv("delta", f(cfg.delta));
    kv("batch_per_style", cfg.batch_per_style.to_string());
    kv("epochs", cfg.epochs.to_string());
    kv("iters_per_epoch", cfg.iters_per_epoch.unwrap_or(0).to_string());
    kv("learning_rate", f(cfg.learning_rate));
    kv("clip_norm", f(cfg.clip_norm.unwrap_or(0.0)));
    kv("seed", cfg.seed.to_string());
    kv("max_decode_len", cfg.max_decode_len.to_string());
    let g = &cfg.gate;
    kv("gate_ppl_quantile", f(g.ppl_quantile));
    kv("gate_length_mass", f(g.length_mass));
    for (k, v) in [("gate_l_min", g.l_min), ("gate_l_max", g.l_max), ("gate_pl", g.pl), ("gate_c", g.c)] {
        if let Some(v) = v {
            kv(k, f(v));
        }
    }
    kv("gate_known_ref_style", g.use_known_ref_style.to_string());
    kv("classifier_epochs", g.classifier_epochs.to_string());
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_round_trip() {
        let mut cfg = TrainConfig::default();
        cfg.model.ablations.no_graph = true;
        cfg.model.ablations.style_mode = StyleMode::Learnable;
        cfg.gate.pl = Some(12.5);
        cfg.clip_norm = None;
        cfg.learning_rate = 3e-4;
        assert_eq!(parse(&to_flat(&cfg)).unwrap(), cfg);
        assert_eq!(parse(&to_flat(&TrainConfig::default())).unwrap(), TrainConfig::default());
    }

    #[test]
    fn unknown_and_conflicting_keys_fail() {
        assert!(matches!(parse("bogus = 1"), Err(Error::ConfigInvalid(_))));
        assert!(parse("w_fixed = true\nw_learnable = true").is_err());
        assert!(parse("epochs = -3").is_err());
        assert!(parse("[section]\nx = 1").is_err());
        assert!(parse("heads = 5").is_err());
    }

    #[test]
    fn overrides_take_precedence() {
        let mut cfg = parse("epochs = 4\nseed = 1").unwrap();
        apply_override(&mut cfg, "epochs=9").unwrap();
        apply_override(&mut cfg, "style_mode=average").unwrap();
        assert_eq!(cfg.epochs, 9);
        assert_eq!(cfg.seed, 1);
        assert_eq!(cfg.model.ablations.style_mode, StyleMode::Average);
        assert!(apply_override(&mut cfg, "epochs").is_err());
    }

    #[test]
    fn every_documented_key_is_accepted() {
        let sample = |k: &str| match k {
            "style_mode" => "\"masked\"".to_string(),
            k if k.starts_with("no_") || k.starts_with("w_") || k == "ignore_plan_order" || k == "gate_known_ref_style" => {
                "false".into()
            }
            _ => "1".into(),
        };
        for (k, _) in KEYS {
            let mut cfg = TrainConfig::default();
            apply_override(&mut cfg, &format!("{k}={}", sample(k))).unwrap();
        }
    }
}
