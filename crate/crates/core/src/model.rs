//! Full network: parameters, forward pass and inspection traces.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{AggregationMode, InteractionMode, ModelConfig};
use crate::corpus::{random_embeddings, Dialogue, Role, Utterance, Vocabulary, PAD_INDEX};
use crate::decoders::{
    decode_handoff, decode_satisfaction, HandoffDecoderParams, SatisfactionDecoderParams,
    SatisfactionOutput,
};
use crate::encoder::{shared_encode, EncoderParams};
use crate::error::{Error, Result};
use crate::interaction::{interact, InteractionOutput, InteractionParams};
use crate::layers::Dropout;
use crate::numerics::{Graph, ParamStore, Tensor, Var};

/// Every trainable block of the network (collectively `Θ`).
#[derive(Clone, Debug)]
pub struct ModelParams {
    pub store: ParamStore,
    pub encoder: EncoderParams,
    pub interaction: InteractionParams,
    pub handoff: HandoffDecoderParams,
    pub satisfaction: SatisfactionDecoderParams,
}

impl ModelParams {
    /// Glorot-uniform weights, zero biases, unit layer-norm gains. When
    /// `embeddings` is `None` the table is random with a zero padding row.
    pub fn init(config: &ModelConfig, vocab_size: usize, embeddings: Option<Tensor>, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embeddings = match embeddings {
            Some(e) => {
                if e.shape() != [vocab_size, config.embed_dim] {
                    return Err(Error::config(format!(
                        "embedding table is {:?}, expected [{vocab_size}, {}]",
                        e.shape(),
                        config.embed_dim
                    )));
                }
                e
            }
            None => random_embeddings(vocab_size, config.embed_dim, &mut rng),
        };
        let mut store = ParamStore::new();
        let k = config.hidden;
        let encoder = EncoderParams::register(&mut store, embeddings, k, &mut rng)?;
        let interaction = InteractionParams::register(&mut store, config.shared_width(), config.dense, &mut rng)?;
        let handoff = HandoffDecoderParams::register(&mut store, config.dense, k, &mut rng)?;
        let satisfaction = SatisfactionDecoderParams::register(
            &mut store,
            config.dense,
            k,
            config.heads,
            config.ff_width(),
            config.attention_units,
            config.positional_encoding,
            &mut rng,
        )?;
        Ok(ModelParams {
            store,
            encoder,
            interaction,
            handoff,
            satisfaction,
        })
    }
}

/// A trained or freshly initialized network together with its vocabulary.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ModelParams,
}

/// Token indices and roles of one dialogue, ready for the forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedDialogue {
    pub tokens: Vec<Vec<usize>>,
    pub roles: Vec<Role>,
}

impl EncodedDialogue {
    pub fn len(&self) -> usize {
        self.roles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roles.is_empty()
    }

    pub fn prefix(&self, len: usize) -> EncodedDialogue {
        EncodedDialogue {
            tokens: self.tokens[..len].to_vec(),
            roles: self.roles[..len].to_vec(),
        }
    }
}

/// Graph nodes of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardNodes {
    pub shared: Var,
    pub interaction: InteractionOutput,
    /// `L x 2` handoff distributions.
    pub handoff: Var,
    /// Absent when the dialogue has no customer utterance.
    pub satisfaction: Option<SatisfactionOutput>,
}

impl Model {
    pub fn new(config: ModelConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        let params = ModelParams::init(&config, vocab.len(), None, seed)?;
        Ok(Model { config, vocab, params })
    }

    pub fn with_embeddings(config: ModelConfig, vocab: Vocabulary, embeddings: Tensor, seed: u64) -> Result<Self> {
        let params = ModelParams::init(&config, vocab.len(), Some(embeddings), seed)?;
        Ok(Model { config, vocab, params })
    }

    pub fn store(&self) -> &ParamStore {
        &self.params.store
    }

    pub fn encode_utterances(&self, utterances: &[Utterance]) -> EncodedDialogue {
        EncodedDialogue {
            tokens: utterances.iter().map(|u| self.vocab.encode(&u.tokens)).collect(),
            roles: utterances.iter().map(|u| u.role).collect(),
        }
    }

    pub fn encode(&self, d: &Dialogue) -> EncodedDialogue {
        self.encode_utterances(&d.utterances)
    }

    /// Builds the forward pass on `g`, which must borrow this model's store
    /// (or a perturbed copy of it with the same layout).
    pub fn forward(&self, g: &mut Graph, d: &EncodedDialogue, dropout: Option<&mut Dropout>) -> Result<ForwardNodes> {
        if d.is_empty() {
            return Err(Error::data("dialogue has no utterances"));
        }
        if d.tokens.iter().flatten().any(|&t| t == PAD_INDEX) {
            return Err(Error::contract("padding index inside an utterance"));
        }
        let p = &self.params;
        let c = &self.config;
        let shared = shared_encode(g, &d.tokens, &p.encoder, c.max_dialogue_len, dropout)?;
        let inter = interact(g, shared, shared, &d.roles, &p.interaction, c.dense_activation, c.interaction)?;
        let handoff = decode_handoff(g, inter.m, &p.handoff)?;
        let satisfaction = if d.roles.contains(&Role::Customer) {
            Some(decode_satisfaction(g, inter.q, &d.roles, &p.satisfaction, c.aggregation)?)
        } else {
            None
        };
        Ok(ForwardNodes {
            shared,
            interaction: inter,
            handoff,
            satisfaction,
        })
    }

    /// Inference-mode forward pass returning every intermediate distribution.
    pub fn trace(&self, d: &EncodedDialogue) -> Result<ForwardTrace> {
        let mut g = Graph::new(self.store());
        let nodes = self.forward(&mut g, d, None)?;
        Ok(ForwardTrace::collect(&g, &nodes, &d.roles, &self.config))
    }

    pub fn predict(&self, d: &Dialogue) -> Result<ForwardTrace> {
        let mut t = self.trace(&self.encode(d))?;
        t.id = Some(d.id.clone());
        Ok(t)
    }
}

/// Serializable snapshot of all attention maps and predictions for one dialogue.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForwardTrace {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub roles: Vec<Role>,
    pub interaction_mode: InteractionMode,
    pub aggregation_mode: AggregationMode,
    /// SSA→MHCH attention, `L x L` (absent without interaction).
    pub alpha_s: Option<Vec<Vec<f64>>>,
    /// MHCH→SSA attention, `L x L`.
    pub alpha_m: Option<Vec<Vec<f64>>>,
    /// Positional weights `Γ`, `L x L`.
    pub gamma: Option<Vec<Vec<f64>>>,
    /// Customer importance weights, length `L`.
    pub alpha: Option<Vec<f64>>,
    /// Local satisfaction distributions, `L x 3`.
    pub z: Option<Vec<Vec<f64>>>,
    /// Handoff distributions `(normal, transferable)`, `L x 2`.
    pub handoff: Vec<Vec<f64>>,
    /// Dialogue satisfaction `(well_satisfied, met, unsatisfied)`.
    pub satisfaction: Option<Vec<f64>>,
}

impl ForwardTrace {
    pub fn collect(g: &Graph, n: &ForwardNodes, roles: &[Role], config: &ModelConfig) -> Self {
        let rows = |v: Var| g.value(v).to_rows();
        ForwardTrace {
            id: None,
            roles: roles.to_vec(),
            interaction_mode: config.interaction,
            aggregation_mode: config.aggregation,
            alpha_s: n.interaction.alpha_s.map(rows),
            alpha_m: n.interaction.alpha_m.map(rows),
            gamma: n.interaction.gamma.as_ref().map(Tensor::to_rows),
            alpha: n.satisfaction.as_ref().map(|s| g.value(s.alpha).data().to_vec()),
            z: n.satisfaction.as_ref().map(|s| rows(s.z)),
            handoff: rows(n.handoff),
            satisfaction: n.satisfaction.as_ref().map(|s| s.prediction.clone()),
        }
    }

    pub fn len(&self) -> usize {
        self.roles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roles.is_empty()
    }

    pub fn handoff_predictions(&self) -> Vec<crate::corpus::HandoffLabel> {
        self.handoff
            .iter()
            .map(|r| crate::corpus::HandoffLabel::from_index(crate::decoders::argmax(r)).unwrap())
            .collect()
    }

    pub fn satisfaction_prediction(&self) -> Option<crate::corpus::SatisfactionLabel> {
        self.satisfaction
            .as_ref()
            .map(|s| crate::corpus::SatisfactionLabel::from_index(crate::decoders::argmax(s)).unwrap())
    }

    pub fn z_tensor(&self) -> Option<Tensor> {
        self.z.as_ref().map(|z| Tensor::from_rows(z).expect("rectangular"))
    }
}
