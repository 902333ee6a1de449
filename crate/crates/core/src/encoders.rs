//! Feature encoders and classifier heads.
//!
//! * token features `f1`: a trainable embedding plus one width-3 context
//!   mixing layer with a residual connection,
//!   `f1(x_n) = e(x_n) + tanh(e(x_{n-1}) A + e(x_n) B + e(x_{n+1}) C + b)`,
//!   where positions outside the sequence read the padding embedding;
//! * mention features `f2`: the trigger row of `f1`;
//! * pair features `f3 = [f2(X_i), f2(X_j), f2(X_i) * f2(X_j)]`;
//! * linear + softmax heads over token labels and relations.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const PAD_TOKEN: &str = "<pad>";
pub const OOV_TOKEN: &str = "<unk>";
pub const PAD_ID: usize = 0;
pub const OOV_ID: usize = 1;

/// Which token encoder produces `f1`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backbone {
    /// Embedding plus windowed context mixer, trained from scratch.
    #[default]
    ToyContext,
    /// Slot for an external pretrained transformer. Not available in this
    /// build; models refuse to construct with it.
    PluggablePretrained,
}

/// Token vocabulary with reserved padding and OOV entries at ids 0 and 1.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    /// Builds a vocabulary from the given tokens, sorted for determinism.
    pub fn build<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Self {
        let mut uniq: Vec<&str> = tokens
            .into_iter()
            .filter(|t| *t != PAD_TOKEN && *t != OOV_TOKEN)
            .collect();
        uniq.sort_unstable();
        uniq.dedup();
        let all = [PAD_TOKEN, OOV_TOKEN]
            .into_iter()
            .chain(uniq)
            .map(str::to_string)
            .collect::<Vec<_>>();
        Vocab::from(all)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(OOV_ID)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    fn is_well_formed(&self) -> bool {
        self.tokens.get(PAD_ID).map(String::as_str) == Some(PAD_TOKEN)
            && self.tokens.get(OOV_ID).map(String::as_str) == Some(OOV_TOKEN)
            && self.index.len() == self.tokens.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub embed_dim: usize,
    pub backbone: Backbone,
    pub seed: u64,
}

/// Trainable tensors of the token encoder and both linear heads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    /// `|V| x d`
    pub embedding: Matrix,
    /// `d x d` each
    pub mix_prev: Matrix,
    pub mix_self: Matrix,
    pub mix_next: Matrix,
    /// `1 x d`
    pub mix_bias: Matrix,
    /// `d x (|E| + 2)` and `1 x (|E| + 2)`
    pub token_head: Matrix,
    pub token_bias: Matrix,
    /// `3d x |R|` and `1 x |R|`
    pub relation_head: Matrix,
    pub relation_bias: Matrix,
}

impl EncoderParams {
    pub fn init<R: Rng + ?Sized>(
        vocab_size: usize,
        d: usize,
        token_labels: usize,
        relations: usize,
        rng: &mut R,
    ) -> Self {
        let mix_std = 0.5 / (d as f64).sqrt();
        Self {
            embedding: Matrix::random_normal(vocab_size, d, 1.0 / (d as f64).sqrt(), rng),
            mix_prev: Matrix::random_normal(d, d, mix_std, rng),
            mix_self: Matrix::random_normal(d, d, mix_std, rng),
            mix_next: Matrix::random_normal(d, d, mix_std, rng),
            mix_bias: Matrix::zeros(1, d),
            token_head: Matrix::random_normal(d, token_labels, 0.1, rng),
            token_bias: Matrix::zeros(1, token_labels),
            relation_head: Matrix::random_normal(3 * d, relations, 0.1, rng),
            relation_bias: Matrix::zeros(1, relations),
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.embedding.cols()
    }

    pub fn tensors(&self) -> [(&'static str, &Matrix); 9] {
        [
            ("encoder.embedding", &self.embedding),
            ("encoder.mix_prev", &self.mix_prev),
            ("encoder.mix_self", &self.mix_self),
            ("encoder.mix_next", &self.mix_next),
            ("encoder.mix_bias", &self.mix_bias),
            ("encoder.token_head", &self.token_head),
            ("encoder.token_bias", &self.token_bias),
            ("encoder.relation_head", &self.relation_head),
            ("encoder.relation_bias", &self.relation_bias),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Matrix; 9] {
        [
            &mut self.embedding,
            &mut self.mix_prev,
            &mut self.mix_self,
            &mut self.mix_next,
            &mut self.mix_bias,
            &mut self.token_head,
            &mut self.token_bias,
            &mut self.relation_head,
            &mut self.relation_bias,
        ]
    }

    pub fn register(&self, tape: &mut Tape) -> EncoderVars {
        EncoderVars {
            embedding: tape.leaf(self.embedding.clone()),
            mix_prev: tape.leaf(self.mix_prev.clone()),
            mix_self: tape.leaf(self.mix_self.clone()),
            mix_next: tape.leaf(self.mix_next.clone()),
            mix_bias: tape.leaf(self.mix_bias.clone()),
            token_head: tape.leaf(self.token_head.clone()),
            token_bias: tape.leaf(self.token_bias.clone()),
            relation_head: tape.leaf(self.relation_head.clone()),
            relation_bias: tape.leaf(self.relation_bias.clone()),
        }
    }

    fn check_shapes(&self, vocab: usize, token_labels: usize, relations: usize) -> Result<()> {
        let d = self.embed_dim();
        let expect = [
            (vocab, d),
            (d, d),
            (d, d),
            (d, d),
            (1, d),
            (d, token_labels),
            (1, token_labels),
            (3 * d, relations),
            (1, relations),
        ];
        for ((name, m), want) in self.tensors().iter().zip(expect) {
            if m.shape() != want {
                return Err(Error::Shape(format!(
                    "{name} is {:?}, expected {want:?}",
                    m.shape()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EncoderVars {
    pub embedding: Var,
    pub mix_prev: Var,
    pub mix_self: Var,
    pub mix_next: Var,
    pub mix_bias: Var,
    pub token_head: Var,
    pub token_bias: Var,
    pub relation_head: Var,
    pub relation_bias: Var,
}

impl EncoderVars {
    pub fn all(&self) -> [Var; 9] {
        [
            self.embedding,
            self.mix_prev,
            self.mix_self,
            self.mix_next,
            self.mix_bias,
            self.token_head,
            self.token_bias,
            self.relation_head,
            self.relation_bias,
        ]
    }
}

/// Token ids of one or more sequences padded to a common block length, with
/// each position's left and right neighbour precomputed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenIds {
    pub block: usize,
    pub ids: Vec<usize>,
    pub prev: Vec<usize>,
    pub next: Vec<usize>,
}

impl TokenIds {
    /// `sequences` are vocabulary ids; each is padded to `block` with [`PAD_ID`].
    pub fn new(sequences: &[Vec<usize>], block: usize) -> Self {
        let mut ids = Vec::with_capacity(sequences.len() * block);
        for seq in sequences {
            assert!(seq.len() <= block, "sequence longer than block");
            ids.extend_from_slice(seq);
            ids.extend(std::iter::repeat_n(PAD_ID, block - seq.len()));
        }
        let neighbour = |r: usize, offset: isize| {
            let pos = (r % block) as isize + offset;
            if pos < 0 || pos >= block as isize {
                PAD_ID
            } else {
                ids[(r as isize + offset) as usize]
            }
        };
        let prev = (0..ids.len()).map(|r| neighbour(r, -1)).collect();
        let next = (0..ids.len()).map(|r| neighbour(r, 1)).collect();
        TokenIds {
            block,
            ids,
            prev,
            next,
        }
    }
}

/// Contextual token features `f1(x)`: one row per (padded) position.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenFeatures(pub Matrix);

/// `f3 = [f_i, f_j, f_i * f_j]`, length `3d`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairFeature(pub Vec<f64>);

/// Graph for `f1` over every row of `ids`.
pub fn token_features_graph(tape: &mut Tape, vars: &EncoderVars, ids: &TokenIds) -> Var {
    let cur = tape.gather_rows(vars.embedding, &ids.ids);
    let prev = tape.gather_rows(vars.embedding, &ids.prev);
    let next = tape.gather_rows(vars.embedding, &ids.next);
    let a = tape.matmul(prev, vars.mix_prev);
    let b = tape.matmul(cur, vars.mix_self);
    let c = tape.matmul(next, vars.mix_next);
    let ab = tape.add(a, b);
    let abc = tape.add(ab, c);
    let pre = tape.add_row(abc, vars.mix_bias);
    let mixed = tape.tanh(pre);
    tape.add(cur, mixed)
}

pub fn token_probs_graph(tape: &mut Tape, vars: &EncoderVars, features: Var) -> Var {
    let logits = tape.matmul(features, vars.token_head);
    let logits = tape.add_row(logits, vars.token_bias);
    tape.softmax_rows(logits)
}

/// Pair features for `(left[k], right[k])` rows of the mention matrix.
pub fn pair_features_graph(tape: &mut Tape, mentions: Var, left: &[usize], right: &[usize]) -> Var {
    let fi = tape.gather_rows(mentions, left);
    let fj = tape.gather_rows(mentions, right);
    let prod = tape.mul(fi, fj);
    tape.concat_cols(&[fi, fj, prod])
}

pub fn relation_probs_graph(tape: &mut Tape, vars: &EncoderVars, pairs: Var) -> Var {
    let logits = tape.matmul(pairs, vars.relation_head);
    let logits = tape.add_row(logits, vars.relation_bias);
    tape.softmax_rows(logits)
}

/// Token encoder plus heads, bundled with its vocabulary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub vocab: Vocab,
    pub params: EncoderParams,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(
        config: EncoderConfig,
        vocab: Vocab,
        token_labels: usize,
        relations: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if config.embed_dim < 2 {
            return Err(Error::Config("embed_dim must be at least 2".into()));
        }
        if config.backbone != Backbone::ToyContext {
            return Err(Error::Config(
                "the pluggable pretrained backbone is not available in this build".into(),
            ));
        }
        let params =
            EncoderParams::init(vocab.len(), config.embed_dim, token_labels, relations, rng);
        Ok(Self {
            config,
            vocab,
            params,
        })
    }

    pub fn validate(&self, token_labels: usize, relations: usize) -> Result<()> {
        if !self.vocab.is_well_formed() {
            return Err(Error::Shape(
                "vocabulary lacks padding / OOV entries".into(),
            ));
        }
        if self.params.embed_dim() != self.config.embed_dim {
            return Err(Error::Shape(
                "embedding width differs from embed_dim".into(),
            ));
        }
        self.params
            .check_shapes(self.vocab.len(), token_labels, relations)
    }

    pub fn ids(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.vocab.id(t)).collect()
    }

    /// `f1` for a token sequence, padded with padding rows up to `pad_to`.
    pub fn encode_tokens(&self, tokens: &[String], pad_to: Option<usize>) -> TokenFeatures {
        let block = pad_to.unwrap_or(tokens.len()).max(tokens.len()).max(1);
        let ids = TokenIds::new(&[self.ids(tokens)], block);
        let mut tape = Tape::new();
        let vars = self.params.register(&mut tape);
        let f = token_features_graph(&mut tape, &vars, &ids);
        TokenFeatures(tape.value(f).clone())
    }

    /// Row-wise probabilities over the `|E| + 2` token labels.
    pub fn classify_tokens(&self, features: &TokenFeatures) -> Result<Matrix> {
        if features.0.cols() != self.params.token_head.rows() {
            return Err(Error::Shape(
                "feature width differs from classifier input".into(),
            ));
        }
        let mut tape = Tape::new();
        let vars = self.params.register(&mut tape);
        let f = tape.leaf(features.0.clone());
        let p = token_probs_graph(&mut tape, &vars, f);
        Ok(tape.value(p).clone())
    }

    /// Probabilities over relations for one pair feature.
    pub fn classify_relations(&self, pair: &PairFeature) -> Result<Vec<f64>> {
        if pair.0.len() != self.params.relation_head.rows() {
            return Err(Error::Shape(format!(
                "pair feature has length {}, expected {}",
                pair.0.len(),
                self.params.relation_head.rows()
            )));
        }
        let mut tape = Tape::new();
        let vars = self.params.register(&mut tape);
        let f = tape.leaf(Matrix::row_vector(&pair.0));
        let p = relation_probs_graph(&mut tape, &vars, f);
        Ok(tape.value(p).row(0).to_vec())
    }
}

/// `f2(X)`: row `trigger_index` (1-based) of the token features.
pub fn encode_mention(features: &TokenFeatures, trigger_index: usize) -> Result<Vec<f64>> {
    if trigger_index == 0 || trigger_index > features.0.rows() {
        return Err(Error::Shape(format!(
            "trigger index {trigger_index} outside 1..={}",
            features.0.rows()
        )));
    }
    Ok(features.0.row(trigger_index - 1).to_vec())
}

/// `[fi, fj, fi * fj]`.
pub fn encode_pair(fi: &[f64], fj: &[f64]) -> Result<PairFeature> {
    if fi.len() != fj.len() {
        return Err(Error::Shape(format!(
            "mention embeddings of length {} and {}",
            fi.len(),
            fj.len()
        )));
    }
    let mut out = Vec::with_capacity(3 * fi.len());
    out.extend_from_slice(fi);
    out.extend_from_slice(fj);
    out.extend(fi.iter().zip(fj).map(|(a, b)| a * b));
    Ok(PairFeature(out))
}
