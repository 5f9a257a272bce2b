//! Per-style batching, the combined objective, gated pseudo triplets and the
//! optimization loop.
//!
//! Each step runs in two phases. The first computes everything discrete with
//! the current parameters and no gradients: predicted plans, batch style
//! centers, the other-style reference `X'` for every sample, the greedy
//! pseudo text `Y'` and its gate verdict. The second evaluates the weighted
//! losses sample by sample on independent tapes, averages them over the
//! batch and takes one optimizer step.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use styled2t_autograd::{Adam, AdamConfig, Gradients, Tape, Tensor, Var};

use crate::corpus::{Plan, Triplet, Vocabulary};
use crate::error::{Error, Result};
use crate::exec;
use crate::gate::{self, ClassifierConfig, ConfidenceVerdict, Gate, GateConfig};
use crate::logic_graph::build_graphs;
use crate::model::{Encoded, Model, ModelConfig};
use crate::planner;
use crate::style_embedder::{self, StyleCenters};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    /// Samples drawn per style in every iteration.
    pub batch_per_style: usize,
    pub epochs: usize,
    /// Defaults to `ceil(smallest style count / batch_per_style)`.
    pub iters_per_epoch: Option<usize>,
    pub learning_rate: f64,
    /// `None` disables gradient clipping.
    pub clip_norm: Option<f64>,
    pub seed: u64,
    /// Zero the classifier and clustering terms.
    pub no_style_con: bool,
    /// Skip pseudo triplets entirely.
    pub no_pseudo: bool,
    pub max_decode_len: usize,
    pub gate: GateSettings,
}

/// How the gate is fitted before training. Explicit thresholds override the
/// calibrated ones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GateSettings {
    pub ppl_quantile: f64,
    pub length_mass: f64,
    pub l_min: Option<f64>,
    pub l_max: Option<f64>,
    pub pl: Option<f64>,
    pub c: Option<f64>,
    pub use_known_ref_style: bool,
    pub classifier_epochs: usize,
}

impl Default for GateSettings {
    fn default() -> Self {
        Self {
            ppl_quantile: 0.95,
            length_mass: 0.99,
            l_min: None,
            l_max: None,
            pl: None,
            c: None,
            use_known_ref_style: false,
            classifier_epochs: 5,
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            delta: 0.1,
            batch_per_style: 8,
            epochs: 10,
            iters_per_epoch: None,
            learning_rate: 3e-3,
            clip_norm: Some(1.0),
            seed: 7,
            no_style_con: false,
            no_pseudo: false,
            max_decode_len: 200,
            gate: GateSettings::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        for (name, w) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma), ("delta", self.delta)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::ConfigInvalid(format!("{name} must be a finite non-negative weight, got {w}")));
            }
        }
        if self.batch_per_style == 0 {
            return Err(Error::ConfigInvalid("batch_per_style must be at least 1".into()));
        }
        if self.iters_per_epoch == Some(0) {
            return Err(Error::ConfigInvalid("iters_per_epoch must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::ConfigInvalid("learning_rate must be positive".into()));
        }
        if matches!(self.clip_norm, Some(c) if !(c > 0.0)) {
            return Err(Error::ConfigInvalid("clip_norm must be positive when set".into()));
        }
        if self.max_decode_len == 0 {
            return Err(Error::ConfigInvalid("max_decode_len must be at least 1".into()));
        }
        let g = &self.gate;
        if !(0.0..=1.0).contains(&g.ppl_quantile) || !(g.length_mass > 0.0 && g.length_mass <= 1.0) {
            return Err(Error::ConfigInvalid("gate quantiles must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// Effective classifier and clustering weights.
    pub fn style_weights(&self) -> (f64, f64) {
        if self.no_style_con {
            (0.0, 0.0)
        } else {
            (self.beta, self.gamma)
        }
    }

    pub fn pseudo_enabled(&self) -> bool {
        !self.no_pseudo && self.delta > 0.0
    }
}

/// A gated pseudo target for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoTriplet {
    pub reference: Vec<usize>,
    pub style: usize,
    pub target: Vec<usize>,
    pub verdict: ConfidenceVerdict,
}

/// Everything the gradient phase needs besides parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchContext {
    pub samples: Vec<usize>,
    pub plans: Vec<Plan>,
    pub centers: StyleCenters,
    pub pseudo: Vec<Option<PseudoTriplet>>,
}

impl BatchContext {
    pub fn tau_rate(&self) -> f64 {
        let passed = self.pseudo.iter().flatten().filter(|p| p.verdict.tau).count();
        passed as f64 / self.samples.len().max(1) as f64
    }
}

/// Per-term batch means and the weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    #[serde(rename = "L_gen")]
    pub l_gen: f64,
    #[serde(rename = "L_plan")]
    pub l_plan: f64,
    #[serde(rename = "L_cla")]
    pub l_cla: f64,
    #[serde(rename = "L_clu")]
    pub l_clu: f64,
    #[serde(rename = "L_pseudo")]
    pub l_pseudo: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn add_scaled(&mut self, o: &LossBreakdown, c: f64) {
        self.l_gen += c * o.l_gen;
        self.l_plan += c * o.l_plan;
        self.l_cla += c * o.l_cla;
        self.l_clu += c * o.l_clu;
        self.l_pseudo += c * o.l_pseudo;
        self.total += c * o.total;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub epoch: usize,
    #[serde(flatten)]
    pub losses: LossBreakdown,
    pub tau_rate: f64,
    pub grad_norm: f64,
}

/// Phase one: plans, centers, `X'` choice and gated pseudo texts under the
/// current parameters. Consumes randomness only here.
pub fn prepare_batch<R: Rng>(
    model: &Model,
    gate: &Gate,
    data: &[Encoded],
    samples: &[usize],
    config: &TrainConfig,
    rng: &mut R,
) -> Result<BatchContext> {
    let firsts: Vec<Result<(Plan, Tensor)>> = exec::map(samples, |&i| {
        let enc = &data[i];
        let mut tape = Tape::new(&model.params);
        let refined = model.refine(&mut tape, enc)?;
        let plan = model.encoding_plan(&mut tape, refined, enc.pairs.len())?;
        let s = model.style_vector(&mut tape, &enc.reference, enc.style)?;
        Ok((plan, tape.value(s).clone()))
    });
    let firsts: Vec<(Plan, Tensor)> = firsts.into_iter().collect::<Result<_>>()?;
    let labelled: Vec<(usize, &Tensor)> = samples.iter().zip(&firsts).map(|(&i, f)| (data[i].style, &f.1)).collect();
    let centers = StyleCenters::from_batch(&labelled, model.config.num_styles);
    let plans: Vec<Plan> = firsts.into_iter().map(|f| f.0).collect();

    let pseudo = if config.pseudo_enabled() {
        // X' for sample j: a uniformly drawn batch sample of another style
        let mut jobs = Vec::with_capacity(samples.len());
        for (j, &i) in samples.iter().enumerate() {
            let own = data[i].style;
            let others: Vec<usize> = samples.iter().copied().filter(|&o| data[o].style != own).collect();
            let other = *others.choose(rng).ok_or(Error::DataMissingStyle(own))?;
            jobs.push((j, i, other));
        }
        let cap = config.max_decode_len.min(gate.config.l_max.ceil().max(1.0) as usize);
        let made: Vec<Result<PseudoTriplet>> = exec::map(&jobs, |&(j, i, other)| {
            make_pseudo_triplet(model, gate, &data[i], &plans[j], &data[other], cap)
        });
        made.into_iter().map(|r| r.map(Some)).collect::<Result<_>>()?
    } else {
        vec![None; samples.len()]
    };
    Ok(BatchContext {
        samples: samples.to_vec(),
        plans,
        centers,
        pseudo,
    })
}

/// Greedy `Y'` for instance `enc` in the style of `other`'s reference, with
/// its gate verdict. No gradients are involved.
pub fn make_pseudo_triplet(
    model: &Model,
    gate: &Gate,
    enc: &Encoded,
    plan: &Plan,
    other: &Encoded,
    max_len: usize,
) -> Result<PseudoTriplet> {
    let mut tape = Tape::new(&model.params);
    let f = model.forward(&mut tape, enc, &other.reference, other.style, Some(plan))?;
    let memory = tape.value(f.memory).clone();
    let decoded = model.greedy(&memory, max_len)?;
    let candidate = model.vocab.decode(&decoded.tokens);
    let reference = model.vocab.decode(&other.reference);
    let verdict = gate.assign_confidence(&candidate, &reference, Some(other.style), &enc.data);
    Ok(PseudoTriplet {
        reference: other.reference.clone(),
        style: other.style,
        target: decoded.tokens,
        verdict,
    })
}

struct SampleTerms {
    l_gen: Var,
    l_plan: Option<Var>,
    l_cla: Option<Var>,
    l_clu: Option<Var>,
    l_pseudo: Option<Var>,
}

fn sample_terms(
    tape: &mut Tape,
    model: &Model,
    enc: &Encoded,
    plan: &Plan,
    centers: &StyleCenters,
    pseudo: Option<&PseudoTriplet>,
    config: &TrainConfig,
) -> Result<SampleTerms> {
    let target = enc.target.as_deref().ok_or(Error::MissingTarget)?;
    let (beta, gamma) = config.style_weights();
    let refined = model.refine(tape, enc)?;
    let h_o = model.encode_data(tape, enc, plan)?;
    let s = model.style_vector(tape, &enc.reference, enc.style)?;
    let memory = crate::generator::build_memory(tape, h_o, s)?;
    let l_gen = model.generation_loss(tape, memory, target)?;
    let l_plan = if model.config.ablations.no_planner || config.alpha == 0.0 {
        None
    } else {
        let gold = enc.gold_plan.as_ref().ok_or(Error::MissingTarget)?;
        Some(planner::planning_loss(tape, refined, gold, &model.layout.planner)?)
    };
    let l_cla = (beta > 0.0).then(|| style_embedder::style_cla_loss(tape, &model.layout.style_head, s, enc.style));
    let l_clu = if gamma > 0.0 {
        Some(style_embedder::style_clu_loss(tape, s, enc.style, centers)?)
    } else {
        None
    };
    let l_pseudo = match pseudo {
        Some(p) if p.verdict.tau && config.pseudo_enabled() => {
            let s2 = model.style_vector(tape, &p.reference, p.style)?;
            let memory2 = crate::generator::build_memory(tape, h_o, s2)?;
            Some(model.generation_loss(tape, memory2, &p.target)?)
        }
        _ => None,
    };
    Ok(SampleTerms {
        l_gen,
        l_plan,
        l_cla,
        l_clu,
        l_pseudo,
    })
}

/// Weighted objective of one sample on `tape`, with its unweighted terms.
pub fn sample_loss(
    tape: &mut Tape,
    model: &Model,
    data: &[Encoded],
    ctx: &BatchContext,
    j: usize,
    config: &TrainConfig,
) -> Result<(Var, LossBreakdown)> {
    let t = sample_terms(
        tape,
        model,
        &data[ctx.samples[j]],
        &ctx.plans[j],
        &ctx.centers,
        ctx.pseudo[j].as_ref(),
        config,
    )?;
    let (beta, gamma) = config.style_weights();
    let mut total = t.l_gen;
    let mut b = LossBreakdown {
        l_gen: tape.value(t.l_gen).item(),
        ..Default::default()
    };
    let mut add = |tape: &mut Tape, term: Option<Var>, w: f64, slot: &mut f64| {
        if let Some(v) = term {
            *slot = tape.value(v).item();
            if w != 0.0 {
                let sv = tape.scale(v, w);
                total = tape.add(total, sv);
            }
        }
    };
    add(tape, t.l_plan, config.alpha, &mut b.l_plan);
    add(tape, t.l_cla, beta, &mut b.l_cla);
    add(tape, t.l_clu, gamma, &mut b.l_clu);
    add(tape, t.l_pseudo, config.delta, &mut b.l_pseudo);
    b.total = tape.value(total).item();
    Ok((total, b))
}

/// The batch objective on a single tape (mean over samples). Used for
/// gradient checks; training evaluates samples on separate tapes.
pub fn total_loss(
    tape: &mut Tape,
    model: &Model,
    data: &[Encoded],
    ctx: &BatchContext,
    config: &TrainConfig,
) -> Result<(Var, LossBreakdown)> {
    let n = ctx.samples.len();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let mut parts = Vec::with_capacity(n);
    let mut b = LossBreakdown::default();
    for j in 0..n {
        let (v, bj) = sample_loss(tape, model, data, ctx, j, config)?;
        parts.push(v);
        b.add_scaled(&bj, 1.0 / n as f64);
    }
    let stacked = tape.concat_rows(&parts);
    let sum = tape.sum(stacked);
    let mean = tape.scale(sum, 1.0 / n as f64);
    b.total = tape.value(mean).item();
    Ok((mean, b))
}

/// Batch-mean gradients, reduced in sample order.
pub fn batch_gradients(
    model: &Model,
    data: &[Encoded],
    ctx: &BatchContext,
    config: &TrainConfig,
) -> Result<(Gradients, LossBreakdown)> {
    let n = ctx.samples.len();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let idx: Vec<usize> = (0..n).collect();
    let per: Vec<Result<(Gradients, LossBreakdown)>> = exec::map(&idx, |&j| {
        let mut tape = Tape::new(&model.params);
        let (loss, b) = sample_loss(&mut tape, model, data, ctx, j, config)?;
        Ok((tape.backward(loss), b))
    });
    let mut grads = Gradients::new(model.params.len());
    let mut b = LossBreakdown::default();
    for r in per {
        let (g, bj) = r?;
        grads.merge(&g);
        b.add_scaled(&bj, 1.0 / n as f64);
    }
    grads.scale(1.0 / n as f64);
    Ok((grads, b))
}

/// Sample indices grouped by style.
pub fn style_buckets(data: &[Encoded], num_styles: usize) -> Result<Vec<Vec<usize>>> {
    let mut buckets = vec![Vec::new(); num_styles];
    for (i, e) in data.iter().enumerate() {
        buckets
            .get_mut(e.style)
            .ok_or_else(|| Error::ShapeMismatch(format!("style {} out of range", e.style)))?
            .push(i);
    }
    if let Some(u) = buckets.iter().position(Vec::is_empty) {
        return Err(Error::DataMissingStyle(u));
    }
    Ok(buckets)
}

/// Fits the language model, the style classifier and the thresholds on the
/// training targets.
pub fn fit_gate(corpus: &[Triplet], num_styles: usize, config: &TrainConfig) -> Result<Gate> {
    let targets: Vec<&[String]> = corpus.iter().map(|t| t.target()).collect::<Result<_>>()?;
    let lm = gate::train_lm(&targets)?;
    let examples: Vec<(&[String], usize)> = targets.iter().zip(corpus).map(|(t, c)| (*t, c.style)).collect();
    let classifier = gate::train_gate_classifier(
        &examples,
        num_styles,
        &ClassifierConfig {
            epochs: config.gate.classifier_epochs,
            seed: config.seed,
            ..Default::default()
        },
    )?;
    let s = &config.gate;
    let cal = GateConfig::calibrate_heldout(&targets, s.ppl_quantile, s.length_mass)?;
    let gate_config = GateConfig {
        l_min: s.l_min.unwrap_or(cal.l_min),
        l_max: s.l_max.unwrap_or(cal.l_max),
        pl: s.pl.unwrap_or(cal.pl),
        c: s.c.unwrap_or(cal.c),
        use_known_ref_style: s.use_known_ref_style,
    };
    gate_config.validate()?;
    Ok(Gate {
        lm,
        classifier,
        config: gate_config,
    })
}

/// Model, gate and encoded training data ready for optimization.
pub struct Trainer {
    pub config: TrainConfig,
    pub model: Model,
    pub gate: Gate,
    pub data: Vec<Encoded>,
    pub corpus: Vec<Triplet>,
    buckets: Vec<Vec<usize>>,
    optimizer: Adam,
    rng: ChaCha8Rng,
    step: usize,
    epoch: usize,
}

impl Trainer {
    pub fn new(corpus: &[Triplet], config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let n_s = config.model.num_styles;
        if corpus.is_empty() {
            return Err(Error::EmptyInput);
        }
        for t in corpus {
            t.validate(n_s)?;
            t.target()?;
        }
        let mut counts = vec![0usize; n_s];
        for t in corpus {
            counts[t.style] += 1;
        }
        if let Some(u) = counts.iter().position(|&c| c == 0) {
            return Err(Error::DataMissingStyle(u));
        }
        let vocab = Vocabulary::from_triplets(corpus);
        let model = Model::new(config.model.clone(), vocab, config.seed)?;
        let gate = fit_gate(corpus, n_s, &config)?;
        let data = encode_corpus(&model, corpus, corpus)?;
        let buckets = style_buckets(&data, n_s)?;
        let optimizer = Adam::new(
            &model.params,
            AdamConfig {
                lr: config.learning_rate,
                clip_norm: config.clip_norm,
                ..AdamConfig::default()
            },
        );
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed)),
            config,
            model,
            gate,
            data,
            corpus: corpus.to_vec(),
            buckets,
            optimizer,
            step: 0,
            epoch: 0,
        })
    }

    pub fn iters_per_epoch(&self) -> usize {
        self.config.iters_per_epoch.unwrap_or_else(|| {
            let min = self.buckets.iter().map(Vec::len).min().unwrap_or(1);
            min.div_ceil(self.config.batch_per_style)
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    /// Batches for one epoch: per style a fresh shuffle, read cyclically.
    pub fn epoch_batches(&mut self) -> Vec<Vec<usize>> {
        let b = self.config.batch_per_style;
        let orders: Vec<Vec<usize>> = self
            .buckets
            .iter()
            .map(|bucket| {
                let mut o = bucket.clone();
                o.shuffle(&mut self.rng);
                o
            })
            .collect();
        (0..self.iters_per_epoch())
            .map(|it| {
                orders
                    .iter()
                    .flat_map(|o| (0..b).map(move |k| o[(it * b + k) % o.len()]))
                    .collect()
            })
            .collect()
    }

    /// One optimizer step on `samples`.
    pub fn step_on(&mut self, samples: &[usize]) -> Result<StepMetrics> {
        let ctx = prepare_batch(&self.model, &self.gate, &self.data, samples, &self.config, &mut self.rng)?;
        let (grads, losses) = batch_gradients(&self.model, &self.data, &ctx, &self.config)?;
        let grad_norm = self.optimizer.step(&mut self.model.params, &grads);
        self.step += 1;
        Ok(StepMetrics {
            step: self.step,
            epoch: self.epoch + 1,
            losses,
            tau_rate: ctx.tau_rate(),
            grad_norm,
        })
    }

    pub fn run_epoch(&mut self) -> Result<Vec<StepMetrics>> {
        let batches = self.epoch_batches();
        let mut out = Vec::with_capacity(batches.len());
        for batch in batches {
            out.push(self.step_on(&batch)?);
        }
        self.epoch += 1;
        Ok(out)
    }

    /// Mean teacher-forced `L_gen` over the training data using predicted
    /// plans.
    pub fn mean_generation_loss(&self) -> Result<f64> {
        let losses: Vec<Result<f64>> = exec::map(&self.data, |enc| {
            let mut tape = Tape::new(&self.model.params);
            let f = self.model.forward(&mut tape, enc, &enc.reference, enc.style, None)?;
            let target = enc.target.as_deref().ok_or(Error::MissingTarget)?;
            let l = self.model.generation_loss(&mut tape, f.memory, target)?;
            Ok(tape.value(l).item())
        });
        let total: f64 = losses.into_iter().sum::<Result<f64>>()?;
        Ok(total / self.data.len() as f64)
    }
}

/// Converts `triplets` to ids with logic graphs built over `graph_corpus`'s
/// targets.
pub fn encode_corpus(model: &Model, triplets: &[Triplet], graph_corpus: &[Triplet]) -> Result<Vec<Encoded>> {
    let texts: Vec<Vec<String>> = graph_corpus.iter().filter_map(|t| t.target.clone()).collect();
    let instances: Vec<&[crate::corpus::AttributeValuePair]> = triplets.iter().map(|t| t.data.as_slice()).collect();
    let graphs = build_graphs(&instances, &texts);
    triplets
        .iter()
        .zip(graphs)
        .map(|(t, g)| model.encode_triplet(t, g))
        .collect()
}

pub struct Trained {
    pub model: Model,
    pub gate: Gate,
    pub metrics: Vec<StepMetrics>,
}

/// Runs every epoch. With `out_dir`, metrics stream to `metrics.jsonl` and a
/// checkpoint is written after each epoch.
pub fn train(corpus: &[Triplet], config: &TrainConfig, out_dir: Option<&Path>) -> Result<Trained> {
    let mut trainer = Trainer::new(corpus, config.clone())?;
    let mut log = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let p = dir.join("metrics.jsonl");
            Some((BufWriter::new(File::create(&p).map_err(|e| Error::io(&p, e))?), p))
        }
        None => None,
    };
    let mut metrics = Vec::new();
    for _ in 0..config.epochs {
        let epoch = trainer.run_epoch()?;
        if let Some((w, p)) = &mut log {
            for m in &epoch {
                let line = serde_json::to_string(m).expect("metrics serialize");
                writeln!(w, "{line}").map_err(|e| Error::io(&*p, e))?;
            }
            w.flush().map_err(|e| Error::io(&*p, e))?;
        }
        metrics.extend(epoch);
        if let Some(dir) = out_dir {
            crate::checkpoint::save(dir, &trainer.model, &trainer.gate, &trainer.config, &trainer.corpus)?;
        }
    }
    Ok(Trained {
        model: trainer.model,
        gate: trainer.gate,
        metrics,
    })
}
