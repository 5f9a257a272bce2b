//! The full parameter set and the forward passes that wire the components.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use styled2t_autograd::{ParamId, ParamStore, Tape, Tensor, Var};

use crate::corpus::{extract_plan, AttributeValuePair, Plan, Triplet, Vocabulary};
use crate::data_encoder::{self, EmbeddingTable};
use crate::error::{Error, Result};
use crate::generator::{self, Decoded, DecoderParams};
use crate::logic_graph::{gcn_propagate, GcnParams, LogicGraph};
use crate::nn::{self, EncoderLayerParams, StackShape};
use crate::planner::{self, PlannerParams};
use crate::style_embedder::{self, StyleHeadParams};

/// Where the style vector comes from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StyleMode {
    /// Masked mean of the encoded reference.
    #[default]
    Masked,
    /// Plain mean of the encoded reference, no mask.
    Average,
    /// One-hot style label padded with zeros to the model width.
    Fixed,
    /// One trainable vector per style.
    Learnable,
}

/// Switches that change the forward pass. Loss-weight ablations live in the
/// training config.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablations {
    /// Feed raw pair embeddings to the planner instead of GCN outputs.
    pub no_graph: bool,
    /// Replace corpus edge weights by 1 on every edge.
    pub no_weight: bool,
    /// Drop the planner entirely: no planning loss, original pair order.
    pub no_planner: bool,
    /// Keep training the planner but encode pairs in their original order.
    pub ignore_plan_order: bool,
    pub style_mode: StyleMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub dim: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub layers: usize,
    pub gcn_layers: usize,
    pub max_positions: usize,
    pub num_styles: usize,
    pub init_std: f64,
    pub ablations: Ablations,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            heads: 4,
            ff_dim: 128,
            layers: 2,
            gcn_layers: 1,
            max_positions: 256,
            num_styles: 2,
            init_std: 0.02,
            ablations: Ablations::default(),
        }
    }
}

impl ModelConfig {
    /// Sizes reported for the full-scale setting.
    pub fn full_scale() -> Self {
        Self {
            dim: 768,
            heads: 12,
            ff_dim: 3072,
            layers: 6,
            max_positions: 1024,
            ..Self::default()
        }
    }

    fn stack(&self) -> StackShape {
        StackShape {
            dim: self.dim,
            heads: self.heads,
            ff_dim: self.ff_dim,
            layers: self.layers,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.stack().validate()?;
        if self.num_styles < 2 {
            return Err(Error::ConfigInvalid("at least two styles are required".into()));
        }
        if self.max_positions == 0 {
            return Err(Error::ConfigInvalid("max_positions must be positive".into()));
        }
        if self.ablations.style_mode == StyleMode::Fixed && self.dim < self.num_styles {
            return Err(Error::ConfigInvalid("fixed style vectors need dim >= num_styles".into()));
        }
        if !(self.init_std > 0.0) {
            return Err(Error::ConfigInvalid("init_std must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub embed: EmbeddingTable,
    pub gcn: GcnParams,
    pub planner: PlannerParams,
    pub data_encoder: Vec<EncoderLayerParams>,
    pub style_encoder: Vec<EncoderLayerParams>,
    pub style_head: StyleHeadParams,
    /// Present only with [`StyleMode::Learnable`].
    pub learned_styles: Option<ParamId>,
    pub decoder: DecoderParams,
}

/// An instance converted to ids, with its logic graph.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoded {
    pub data: Vec<AttributeValuePair>,
    pub pairs: Vec<Vec<usize>>,
    pub graph: LogicGraph,
    pub reference: Vec<usize>,
    pub target: Option<Vec<usize>>,
    pub gold_plan: Option<Plan>,
    pub style: usize,
}

#[derive(Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub layout: Layout,
    pub params: ParamStore,
}

/// Intermediate results of one forward pass.
pub struct Forward {
    pub refined: Var,
    pub plan: Plan,
    pub h_o: Var,
    pub style: Var,
    pub memory: Var,
}

impl Model {
    pub fn new(config: ModelConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let v = vocab.len();
        let d = config.dim;
        let embed = EmbeddingTable::register(&mut store, v, d, config.max_positions, config.init_std, &mut rng)?;
        let gcn = GcnParams::register(&mut store, d, config.gcn_layers, &mut rng)?;
        let planner = PlannerParams::register(&mut store, d, &mut rng)?;
        let data_encoder = nn::register_encoder(&mut store, "data_encoder", config.stack(), &mut rng)?;
        let style_encoder = nn::register_encoder(&mut store, "style_encoder", config.stack(), &mut rng)?;
        let style_head = StyleHeadParams::register(&mut store, d, config.num_styles, &mut rng)?;
        let learned_styles = match config.ablations.style_mode {
            StyleMode::Learnable => Some(store.normal("style.learned", config.num_styles, d, 0.1, &mut rng)?),
            _ => None,
        };
        let decoder = DecoderParams::register(&mut store, config.stack(), v, &mut rng)?;
        Ok(Self {
            config,
            vocab,
            layout: Layout {
                embed,
                gcn,
                planner,
                data_encoder,
                style_encoder,
                style_head,
                learned_styles,
                decoder,
            },
            params: store,
        })
    }

    pub fn encode_triplet(&self, triplet: &Triplet, graph: LogicGraph) -> Result<Encoded> {
        if graph.num_nodes != triplet.num_pairs() {
            return Err(Error::ShapeMismatch(format!(
                "graph has {} nodes for {} pairs",
                graph.num_nodes,
                triplet.num_pairs()
            )));
        }
        let pairs = triplet
            .data
            .iter()
            .map(|p| data_encoder::pair_token_ids(p, &self.vocab))
            .collect();
        let (target, gold_plan) = match &triplet.target {
            Some(t) => (Some(self.vocab.encode(t)), Some(extract_plan(triplet)?)),
            None => (None, None),
        };
        Ok(Encoded {
            data: triplet.data.clone(),
            pairs,
            graph,
            reference: self.vocab.encode(&triplet.style_ref),
            target,
            gold_plan,
            style: triplet.style,
        })
    }

    /// Refined pair embeddings `a_i` fed to the planner (`K x d`).
    pub fn refine(&self, tape: &mut Tape, enc: &Encoded) -> Result<Var> {
        if enc.pairs.is_empty() {
            return Err(Error::EmptyInput);
        }
        let embedded = data_encoder::embed_pairs(tape, &self.layout.embed, &enc.pairs);
        let inits = data_encoder::node_inits(tape, &embedded);
        let ab = self.config.ablations;
        if ab.no_graph {
            return Ok(inits);
        }
        if ab.no_weight {
            gcn_propagate(tape, inits, &LogicGraph::uniform(enc.pairs.len()), &self.layout.gcn)
        } else {
            gcn_propagate(tape, inits, &enc.graph, &self.layout.gcn)
        }
    }

    /// The order used to lay out pairs for the data encoder.
    pub fn encoding_plan(&self, tape: &mut Tape, refined: Var, k: usize) -> Result<Plan> {
        let ab = self.config.ablations;
        if ab.no_planner || ab.ignore_plan_order {
            Ok(Plan::identity(k))
        } else {
            planner::decode_plan(tape, refined, &self.layout.planner)
        }
    }

    pub fn encode_data(&self, tape: &mut Tape, enc: &Encoded, plan: &Plan) -> Result<Var> {
        data_encoder::encode_planned(
            tape,
            &self.layout.embed,
            &self.layout.data_encoder,
            self.config.heads,
            &enc.pairs,
            plan,
        )
    }

    /// The style vector `s` (`1 x d`) for a reference text and its label.
    pub fn style_vector(&self, tape: &mut Tape, reference: &[usize], style: usize) -> Result<Var> {
        if style >= self.config.num_styles {
            return Err(Error::ShapeMismatch(format!(
                "style {style} out of range for {} styles",
                self.config.num_styles
            )));
        }
        match self.config.ablations.style_mode {
            StyleMode::Fixed => {
                let mut v = Tensor::zeros(1, self.config.dim);
                v.set(0, style, 1.0);
                Ok(tape.constant(v))
            }
            StyleMode::Learnable => {
                let id = self.layout.learned_styles.expect("registered in learnable mode");
                let table = tape.param(id);
                Ok(tape.select_rows(table, &[style]))
            }
            mode @ (StyleMode::Masked | StyleMode::Average) => {
                if reference.is_empty() {
                    return Err(Error::EmptyReference);
                }
                let x = self.layout.embed.with_positions(tape, reference)?;
                let h_x = nn::encode(
                    tape,
                    &self.layout.style_encoder,
                    x,
                    self.config.heads,
                    &styled2t_autograd::Mask::Full,
                );
                if mode == StyleMode::Average {
                    Ok(tape.mean_rows(h_x))
                } else {
                    Ok(style_embedder::masked_style(tape, &self.layout.style_head, h_x)?.s)
                }
            }
        }
    }

    /// Everything up to the decoder memory. `plan` overrides the plan used
    /// for encoding.
    pub fn forward(
        &self,
        tape: &mut Tape,
        enc: &Encoded,
        reference: &[usize],
        style: usize,
        plan: Option<&Plan>,
    ) -> Result<Forward> {
        let refined = self.refine(tape, enc)?;
        let plan = match plan {
            Some(p) => p.clone(),
            None => self.encoding_plan(tape, refined, enc.pairs.len())?,
        };
        let h_o = self.encode_data(tape, enc, &plan)?;
        let s = self.style_vector(tape, reference, style)?;
        let memory = generator::build_memory(tape, h_o, s)?;
        Ok(Forward {
            refined,
            plan,
            h_o,
            style: s,
            memory,
        })
    }

    pub fn generation_loss(&self, tape: &mut Tape, memory: Var, target: &[usize]) -> Result<Var> {
        generator::generation_loss(tape, &self.layout.embed, &self.layout.decoder, memory, target)
    }

    pub fn greedy(&self, memory: &Tensor, max_len: usize) -> Result<Decoded> {
        generator::greedy_decode(&self.params, &self.layout.embed, &self.layout.decoder, memory, max_len)
    }

    /// Plans, encodes and greedily decodes one instance in the requested
    /// style.
    pub fn generate(&self, enc: &Encoded, reference: &[usize], style: usize, max_len: usize) -> Result<Generated> {
        let mut tape = Tape::new(&self.params);
        let f = self.forward(&mut tape, enc, reference, style, None)?;
        let memory = tape.value(f.memory).clone();
        let decoded = self.greedy(&memory, max_len)?;
        Ok(Generated {
            plan: f.plan,
            decoded,
        })
    }

    /// The planner's greedy order, regardless of ablation switches.
    pub fn predict_plan(&self, enc: &Encoded) -> Result<Plan> {
        let mut tape = Tape::new(&self.params);
        let refined = self.refine(&mut tape, enc)?;
        planner::decode_plan(&mut tape, refined, &self.layout.planner)
    }

    /// Replaces every parameter by the tensor of the same name in `other`.
    pub fn load_params(&mut self, other: &ParamStore) -> Result<()> {
        if other.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                self.params.len(),
                other.len()
            )));
        }
        let ids: Vec<ParamId> = self.params.ids().collect();
        for id in ids {
            let name = self.params.name(id).to_string();
            let src = other
                .by_name(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
            if src.shape() != self.params.get(id).shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    src.shape(),
                    self.params.get(id).shape()
                )));
            }
            *self.params.get_mut(id) = src.clone();
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Generated {
    pub plan: Plan,
    pub decoded: Decoded,
}
