//! The full model: token encoder with its heads, class hyperspheres and the
//! three energy networks, plus batching and the differentiable forward pass.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::corpus::{enumerate_pairs, Document, LabelSpaces};
use crate::encoders::{
    pair_features_graph, relation_probs_graph, token_features_graph, token_probs_graph, Backbone,
    Encoder, EncoderConfig, EncoderVars, TokenIds, Vocab,
};
use crate::energy::{EnergyParams, EnergyVars};
use crate::error::{Error, Result};
use crate::hypersphere::{
    init_centroids, measure_graph, HypersphereSet, SphereVars, DEFAULT_RADIUS,
};
use crate::losses::{
    l2_penalty_graph, label_level_graph, token_level_graph, LevelTerms, LossBreakdown, LossWeights,
};
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub radius: f64,
    #[serde(default)]
    pub trainable_radius: bool,
    #[serde(default)]
    pub backbone: Backbone,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            radius: DEFAULT_RADIUS,
            trainable_radius: false,
            backbone: Backbone::ToyContext,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub spaces: LabelSpaces,
    pub encoder: Encoder,
    pub spheres: HypersphereSet,
    pub energy: EnergyParams,
}

/// Number of parameter tensors, in the order of [`Model::tensors`].
pub const PARAM_TENSORS: usize = 19;

impl Model {
    pub fn new(config: ModelConfig, spaces: LabelSpaces, vocab: Vocab) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let encoder = Encoder::new(
            EncoderConfig {
                embed_dim: config.embed_dim,
                backbone: config.backbone,
                seed: config.seed,
            },
            vocab,
            spaces.token_label_count(),
            spaces.num_relations(),
            &mut rng,
        )?;
        let mut spheres = init_centroids(spaces.num_classes(), config.embed_dim, &mut rng);
        spheres = HypersphereSet {
            radii: Matrix::filled(1, spaces.num_classes(), config.radius),
            trainable_radius: config.trainable_radius,
            ..spheres
        };
        HypersphereSet::new(spheres.centroids.clone(), config.radius)?;
        let energy = EnergyParams::init(
            config.embed_dim,
            spaces.num_classes(),
            spaces.num_relations(),
            &mut rng,
        );
        Ok(Self {
            config,
            spaces,
            encoder,
            spheres,
            energy,
        })
    }

    /// Checks every tensor against the label spaces and embedding width.
    pub fn validate(&self) -> Result<()> {
        let d = self.config.embed_dim;
        let (n_e, n_r) = (self.spaces.num_classes(), self.spaces.num_relations());
        self.encoder
            .validate(self.spaces.token_label_count(), n_r)?;
        if self.encoder.config.embed_dim != d {
            return Err(Error::Shape("encoder and model embed_dim differ".into()));
        }
        if self.spheres.centroids.shape() != (n_e, d) || self.spheres.radii.shape() != (1, n_e) {
            return Err(Error::Shape(format!(
                "centroids {:?} / radii {:?} do not match {n_e} classes of width {d}",
                self.spheres.centroids.shape(),
                self.spheres.radii.shape()
            )));
        }
        if self
            .spheres
            .radii
            .data()
            .iter()
            .any(|&r| !(r > 0.0 && r.is_finite()))
        {
            return Err(Error::Validation("radii must be positive".into()));
        }
        self.energy.check_shapes(d, n_e, n_r)?;
        if self.tensors().iter().any(|(_, m)| !m.is_finite()) {
            return Err(Error::Validation("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn tensors(&self) -> Vec<(&'static str, &Matrix)> {
        let mut out: Vec<_> = self.encoder.params.tensors().into();
        out.push(("spheres.centroids", &self.spheres.centroids));
        out.push(("spheres.radii", &self.spheres.radii));
        out.extend(self.energy.tensors());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<_> = self.encoder.params.tensors_mut().into();
        out.push(&mut self.spheres.centroids);
        out.push(&mut self.spheres.radii);
        out.extend(self.energy.tensors_mut());
        out
    }

    /// Whether each tensor of [`Model::tensors`] is updated during training.
    pub fn trainable(&self) -> Vec<bool> {
        let mut out = vec![true; PARAM_TENSORS];
        out[10] = self.spheres.trainable_radius;
        out
    }

    pub fn register(&self, tape: &mut Tape) -> ModelVars {
        ModelVars {
            encoder: self.encoder.params.register(tape),
            spheres: SphereVars::register(&self.spheres, tape),
            energy: self.energy.register(tape),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.len()).sum()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ModelVars {
    pub encoder: EncoderVars,
    pub spheres: SphereVars,
    pub energy: EnergyVars,
}

impl ModelVars {
    /// Handles aligned with [`Model::tensors`].
    pub fn all(&self) -> Vec<Var> {
        let mut out: Vec<Var> = self.encoder.all().into();
        out.push(self.spheres.centroids);
        out.push(self.spheres.radii);
        out.extend(self.energy.all());
        out
    }
}

/// Several documents flattened into padded token rows, mentions and pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub doc_ids: Vec<String>,
    pub tokens: TokenIds,
    /// Gold token label per row; padding rows carry the padding label.
    pub token_gold: Vec<usize>,
    /// 1 for real tokens, 0 for padding.
    pub token_mask: Vec<f64>,
    /// Row of each mention's trigger within the token rows.
    pub trigger_rows: Vec<usize>,
    pub mention_gold: Vec<usize>,
    /// Index into `doc_ids` for each mention.
    pub mention_doc: Vec<usize>,
    /// Position of each mention within its document.
    pub mention_pos: Vec<usize>,
    /// Batch mention indices of each pair.
    pub pair_left: Vec<usize>,
    pub pair_right: Vec<usize>,
    pub pair_gold: Vec<usize>,
}

impl Batch {
    /// Mentions past `cap` in each document are dropped.
    pub fn new(docs: &[&Document], model: &Model, cap: usize) -> Result<Self> {
        if cap < 2 {
            return Err(Error::Config("mention cap must be at least 2".into()));
        }
        let spaces = &model.spaces;
        let mut sequences = Vec::new();
        let mut batch = Batch {
            doc_ids: Vec::with_capacity(docs.len()),
            tokens: TokenIds::new(&[], 1),
            token_gold: Vec::new(),
            token_mask: Vec::new(),
            trigger_rows: Vec::new(),
            mention_gold: Vec::new(),
            mention_doc: Vec::new(),
            mention_pos: Vec::new(),
            pair_left: Vec::new(),
            pair_right: Vec::new(),
            pair_gold: Vec::new(),
        };
        let mut triggers = Vec::new();
        for (d, doc) in docs.iter().enumerate() {
            batch.doc_ids.push(doc.doc_id.clone());
            let offset = batch.mention_gold.len();
            for (pos, m) in doc.mentions.iter().take(cap).enumerate() {
                if m.event_class >= spaces.num_classes() {
                    return Err(Error::Validation(format!(
                        "{}: class index {} outside the label space",
                        m.id(&doc.doc_id, pos),
                        m.event_class
                    )));
                }
                sequences.push(model.encoder.ids(&m.tokens));
                triggers.push(m.trigger_index);
                batch.mention_gold.push(m.event_class);
                batch.mention_doc.push(d);
                batch.mention_pos.push(pos);
            }
            for (i, j, label) in enumerate_pairs(doc, cap, spaces.na_index()) {
                if label >= spaces.num_relations() {
                    return Err(Error::Validation(format!(
                        "{}: relation index {label} outside the label space",
                        doc.doc_id
                    )));
                }
                batch.pair_left.push(offset + i);
                batch.pair_right.push(offset + j);
                batch.pair_gold.push(label);
            }
        }
        let block = sequences.iter().map(Vec::len).max().unwrap_or(1).max(1);
        for (k, (seq, &t)) in sequences.iter().zip(&triggers).enumerate() {
            for p in 0..block {
                let label = if p >= seq.len() {
                    spaces.padding_label()
                } else if p + 1 == t {
                    batch.mention_gold[k]
                } else {
                    spaces.non_trigger_label()
                };
                batch.token_gold.push(label);
                batch.token_mask.push(if p < seq.len() { 1.0 } else { 0.0 });
            }
            batch.trigger_rows.push(k * block + t - 1);
        }
        batch.tokens = TokenIds::new(&sequences, block);
        Ok(batch)
    }

    pub fn block(&self) -> usize {
        self.tokens.block
    }

    pub fn num_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn num_mentions(&self) -> usize {
        self.mention_gold.len()
    }

    pub fn num_pairs(&self) -> usize {
        self.pair_gold.len()
    }
}

/// Graph handles produced by [`forward_graph`].
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    /// `f1`, one row per padded token position.
    pub features: Var,
    pub token_probs: Var,
    /// `f2`, one row per mention.
    pub mentions: Var,
    pub sphere_hinge: Var,
    pub class_probs: Var,
    /// `f3`, one row per pair.
    pub pairs: Var,
    pub relation_probs: Var,
}

pub fn forward_graph(tape: &mut Tape, vars: &ModelVars, batch: &Batch) -> ForwardVars {
    let features = token_features_graph(tape, &vars.encoder, &batch.tokens);
    let token_probs = token_probs_graph(tape, &vars.encoder, features);
    let mentions = tape.gather_rows(features, &batch.trigger_rows);
    let (sphere_hinge, class_probs) = measure_graph(tape, &vars.spheres, mentions);
    let pairs = pair_features_graph(tape, mentions, &batch.pair_left, &batch.pair_right);
    let relation_probs = relation_probs_graph(tape, &vars.encoder, pairs);
    ForwardVars {
        features,
        token_probs,
        mentions,
        sphere_hinge,
        class_probs,
        pairs,
        relation_probs,
    }
}

/// Graph handles of the joint objective.
#[derive(Clone, Copy, Debug)]
pub struct LossGraph {
    pub token: LevelTerms,
    pub sentence: LevelTerms,
    pub document: LevelTerms,
    pub penalty: Var,
    pub total: Var,
}

/// `λ1 L_tok + λ2 L_sen + λ3 L_doc + l2 ‖Φ‖²`, with each level summed per
/// document and averaged over the batch's documents.
pub fn joint_loss_graph(
    tape: &mut Tape,
    vars: &ModelVars,
    fwd: &ForwardVars,
    batch: &Batch,
    weights: &LossWeights,
) -> LossGraph {
    let token = token_level_graph(
        tape,
        &vars.energy.token,
        fwd.features,
        fwd.token_probs,
        &batch.token_gold,
        &batch.token_mask,
        batch.block(),
        weights.mu_token,
        weights.cost,
    );
    let sentence = label_level_graph(
        tape,
        &vars.energy.sentence,
        fwd.mentions,
        fwd.class_probs,
        &batch.mention_gold,
        weights.mu_sentence,
        weights.cost,
    );
    let document = label_level_graph(
        tape,
        &vars.energy.document,
        fwd.pairs,
        fwd.relation_probs,
        &batch.pair_gold,
        weights.mu_document,
        weights.cost,
    );
    let params = vars.all();
    let penalty = l2_penalty_graph(tape, &params, weights.l2_coeff);
    let inv_docs = 1.0 / batch.num_docs().max(1) as f64;
    let t = tape.scale(token.total, weights.lambda_token * inv_docs);
    let s = tape.scale(sentence.total, weights.lambda_sentence * inv_docs);
    let d = tape.scale(document.total, weights.lambda_document * inv_docs);
    let ts = tape.add(t, s);
    let tsd = tape.add(ts, d);
    let total = tape.add(tsd, penalty);
    LossGraph {
        token,
        sentence,
        document,
        penalty,
        total,
    }
}

impl LossGraph {
    /// Unweighted per-document level losses plus the penalty and weighted total.
    pub fn breakdown(&self, tape: &Tape, n_docs: usize) -> LossBreakdown {
        let inv = 1.0 / n_docs.max(1) as f64;
        LossBreakdown {
            token: tape.scalar(self.token.total) * inv,
            sentence: tape.scalar(self.sentence.total) * inv,
            document: tape.scalar(self.document.total) * inv,
            token_hinge: tape.scalar(self.token.hinge_sum) * inv,
            sentence_hinge: tape.scalar(self.sentence.hinge_sum) * inv,
            document_hinge: tape.scalar(self.document.hinge_sum) * inv,
            penalty: tape.scalar(self.penalty),
            total: tape.scalar(self.total),
        }
    }
}

/// Value of the joint objective on one batch.
pub fn joint_loss(model: &Model, batch: &Batch, weights: &LossWeights) -> LossBreakdown {
    let mut tape = Tape::new();
    let vars = model.register(&mut tape);
    let fwd = forward_graph(&mut tape, &vars, batch);
    let graph = joint_loss_graph(&mut tape, &vars, &fwd, batch, weights);
    graph.breakdown(&tape, batch.num_docs())
}

/// Joint objective and its gradient for every tensor of [`Model::tensors`].
pub fn joint_loss_with_grad(
    model: &Model,
    batch: &Batch,
    weights: &LossWeights,
) -> (LossBreakdown, Vec<Matrix>) {
    let mut tape = Tape::new();
    let vars = model.register(&mut tape);
    let fwd = forward_graph(&mut tape, &vars, batch);
    let graph = joint_loss_graph(&mut tape, &vars, &fwd, batch, weights);
    let mut grads = tape.backward(graph.total);
    let params = vars
        .all()
        .into_iter()
        .map(|v| {
            grads.take(v).unwrap_or_else(|| {
                let (r, c) = tape.value(v).shape();
                Matrix::zeros(r, c)
            })
        })
        .collect();
    (graph.breakdown(&tape, batch.num_docs()), params)
}

/// Inference-mode outputs for a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchOutputs {
    pub token_probs: Matrix,
    pub mentions: Matrix,
    pub class_probs: Matrix,
    pub relation_probs: Matrix,
}

pub fn infer(model: &Model, batch: &Batch) -> BatchOutputs {
    let mut tape = Tape::new();
    let vars = model.register(&mut tape);
    let fwd = forward_graph(&mut tape, &vars, batch);
    BatchOutputs {
        token_probs: tape.value(fwd.token_probs).clone(),
        mentions: tape.value(fwd.mentions).clone(),
        class_probs: tape.value(fwd.class_probs).clone(),
        relation_probs: tape.value(fwd.relation_probs).clone(),
    }
}
