//! Checkpoint directory:
//!
//! ```text
//! params/manifest.json   tensor names and shapes in registration order
//! params/<name>.bin      little-endian f64, row-major
//! vocab.txt              one token per line, reserved ids omitted
//! config.snapshot        flat key = value training config
//! gate/                  language model, classifier weights, thresholds
//! corpus.jsonl           training triplets (logic graphs and references)
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use styled2t_autograd::{ParamStore, Tensor};

use crate::config;
use crate::corpus::{read_jsonl, write_jsonl, Triplet, Vocabulary};
use crate::error::{Error, Result};
use crate::gate::Gate;
use crate::model::Model;
use crate::training::TrainConfig;

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    rows: usize,
    cols: usize,
}

pub struct Checkpoint {
    pub model: Model,
    pub gate: Gate,
    pub config: TrainConfig,
    pub corpus: Vec<Triplet>,
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn save_params(dir: &Path, store: &ParamStore) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = Vec::with_capacity(store.len());
    for (_, name, t) in store.iter() {
        let mut bytes = Vec::with_capacity(8 * t.len());
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        write(&dir.join(format!("{name}.bin")), &bytes)?;
        manifest.push(ManifestEntry {
            name: name.to_string(),
            rows: t.rows(),
            cols: t.cols(),
        });
    }
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write(&dir.join("manifest.json"), json.as_bytes())
}

pub fn load_params(dir: &Path) -> Result<ParamStore> {
    let manifest: Vec<ManifestEntry> = serde_json::from_slice(&read(&dir.join("manifest.json"))?)
        .map_err(|e| Error::Checkpoint(format!("params manifest: {e}")))?;
    let mut store = ParamStore::new();
    for e in manifest {
        let bytes = read(&dir.join(format!("{}.bin", e.name)))?;
        if bytes.len() != 8 * e.rows * e.cols {
            return Err(Error::Checkpoint(format!(
                "tensor `{}` holds {} bytes, expected {}",
                e.name,
                bytes.len(),
                8 * e.rows * e.cols
            )));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        store.insert(e.name, Tensor::from_vec(e.rows, e.cols, data)?)?;
    }
    Ok(store)
}

pub fn save(dir: &Path, model: &Model, gate: &Gate, config: &TrainConfig, corpus: &[Triplet]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_params(&dir.join("params"), &model.params)?;
    model.vocab.save(&dir.join("vocab.txt"))?;
    let mut snapshot = config.clone();
    snapshot.model = model.config.clone();
    write(&dir.join("config.snapshot"), config::to_flat(&snapshot).as_bytes())?;
    gate.save(&dir.join("gate"))?;
    write_jsonl(&dir.join("corpus.jsonl"), corpus)
}

pub fn load(dir: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(dir.join("config.snapshot")).map_err(|e| Error::io(dir.join("config.snapshot"), e))?;
    let config = config::parse(&text)?;
    let vocab = Vocabulary::load(&dir.join("vocab.txt"))?;
    let mut model = Model::new(config.model.clone(), vocab, 0)?;
    model.load_params(&load_params(&dir.join("params"))?)?;
    Ok(Checkpoint {
        model,
        gate: Gate::load(&dir.join("gate"))?,
        config,
        corpus: read_jsonl(&dir.join("corpus.jsonl"))?,
    })
}
