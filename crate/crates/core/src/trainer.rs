//! Joint training loop, regimes, checkpoints, evaluation and post-training
//! diagnostics.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{split_indices, Document, LabelSpaces, Split, DEFAULT_MENTION_CAP};
use crate::encoders::{encode_pair, Backbone, TokenFeatures, Vocab};
use crate::energy::{
    document_energy, minimize_label_energy, minimize_token_energy, sentence_energy, token_energy,
};
use crate::error::{Error, Result};
use crate::hypersphere::hinge_distance;
use crate::losses::{LossBreakdown, LossWeights, StructuredCost};
use crate::metrics::{ere_regime_eval, micro_prf, EreRegime, MetricsReport};
use crate::model::{infer, joint_loss_with_grad, Batch, Model, ModelConfig};
use crate::optim::{clip_global_norm, Adam};
use crate::tensor::{argmax, Matrix};

/// Named task-weight presets `(λ_token, λ_sentence, λ_document)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Trigger,
    EventMaven,
    EventOnto,
    EreTemporal,
    EreCausal,
    EreSubevent,
    /// All relation tasks trained together, scored per family.
    #[serde(rename = "ere-joint", alias = "+joint")]
    EreJoint,
    /// All relation tasks treated as one task.
    EreAllJoint,
    Uniform,
}

impl Regime {
    pub const ALL: [Regime; 9] = [
        Regime::Trigger,
        Regime::EventMaven,
        Regime::EventOnto,
        Regime::EreTemporal,
        Regime::EreCausal,
        Regime::EreSubevent,
        Regime::EreJoint,
        Regime::EreAllJoint,
        Regime::Uniform,
    ];

    pub fn lambdas(self) -> [f64; 3] {
        match self {
            Regime::Trigger | Regime::EventMaven | Regime::EreTemporal | Regime::EreCausal => {
                [1.0, 0.1, 0.1]
            }
            Regime::EventOnto => [0.1, 1.0, 0.1],
            Regime::EreSubevent => [1.0, 0.1, 0.08],
            Regime::EreJoint => [1.0, 1.0, 4.0],
            Regime::EreAllJoint => [0.1, 0.1, 1.0],
            Regime::Uniform => [1.0, 1.0, 1.0],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Regime::Trigger => "trigger",
            Regime::EventMaven => "event-maven",
            Regime::EventOnto => "event-onto",
            Regime::EreTemporal => "ere-temporal",
            Regime::EreCausal => "ere-causal",
            Regime::EreSubevent => "ere-subevent",
            Regime::EreJoint => "ere-joint",
            Regime::EreAllJoint => "ere-all-joint",
            Regime::Uniform => "uniform",
        }
    }

    /// How relation predictions are scored under this regime.
    pub fn ere_regime(self) -> EreRegime {
        match self {
            Regime::EreAllJoint | Regime::Uniform => EreRegime::AllJoint,
            _ => EreRegime::PerFamily,
        }
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "+joint" {
            return Ok(Regime::EreJoint);
        }
        Regime::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Regime::ALL.iter().map(|r| r.name()).collect();
                Error::Config(format!(
                    "unknown regime '{s}', expected one of {}",
                    names.join(", ")
                ))
            })
    }
}

/// Training hyperparameters. Read from a flat `key = value` file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    /// Documents per optimization step.
    pub batch_size: usize,
    pub seed: u64,
    pub regime: Regime,
    pub lambda_token: Option<f64>,
    pub lambda_sentence: Option<f64>,
    pub lambda_document: Option<f64>,
    pub mu_token: f64,
    pub mu_sentence: f64,
    pub mu_document: f64,
    pub l2_coeff: f64,
    pub cost: StructuredCost,
    pub clip_norm: f64,
    pub embed_dim: usize,
    pub radius: f64,
    pub trainable_radius: bool,
    pub backbone: Backbone,
    pub mention_cap: usize,
    /// Alternate steps that update only the energy networks with steps that
    /// update only everything else.
    pub alternating: bool,
    /// Evaluate on the validation split every this many epochs; 0 disables.
    pub eval_every: usize,
    pub valid_fraction: f64,
    pub test_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-5,
            epochs: 30,
            batch_size: 8,
            seed: 0,
            regime: Regime::Trigger,
            lambda_token: None,
            lambda_sentence: None,
            lambda_document: None,
            mu_token: 1.0,
            mu_sentence: 1.0,
            mu_document: 1.0,
            l2_coeff: 1e-5,
            cost: StructuredCost::SquaredL2,
            clip_norm: 5.0,
            embed_dim: 32,
            radius: 1.0,
            trainable_radius: false,
            backbone: Backbone::ToyContext,
            mention_cap: DEFAULT_MENTION_CAP,
            alternating: false,
            eval_every: 0,
            valid_fraction: 0.0,
            test_fraction: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.mention_cap < 2 {
            return Err(Error::Config("mention_cap must be >= 2".into()));
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return Err(Error::Config("clip_norm must be > 0".into()));
        }
        let fr = [self.valid_fraction, self.test_fraction];
        if fr.iter().any(|f| !(0.0..1.0).contains(f)) || fr[0] + fr[1] >= 1.0 {
            return Err(Error::Config(
                "split fractions must be in [0, 1) and sum below 1".into(),
            ));
        }
        self.weights().validate()
    }

    /// Regime preset with any explicit λ overrides applied.
    pub fn weights(&self) -> LossWeights {
        let [t, s, d] = self.regime.lambdas();
        LossWeights {
            mu_token: self.mu_token,
            mu_sentence: self.mu_sentence,
            mu_document: self.mu_document,
            lambda_token: self.lambda_token.unwrap_or(t),
            lambda_sentence: self.lambda_sentence.unwrap_or(s),
            lambda_document: self.lambda_document.unwrap_or(d),
            l2_coeff: self.l2_coeff,
            cost: self.cost,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            embed_dim: self.embed_dim,
            radius: self.radius,
            trainable_radius: self.trainable_radius,
            backbone: self.backbone,
            seed: self.seed,
        }
    }

    /// `[train, valid, test]` document indices for a corpus of `n` documents.
    pub fn split(&self, n: usize) -> [Vec<usize>; 3] {
        split_indices(n, self.valid_fraction, self.test_fraction, self.seed)
    }

    pub fn split_docs(&self, docs: &[Document], split: Split) -> Vec<Document> {
        let [train, valid, test] = self.split(docs.len());
        let idx = match split {
            Split::Train => train,
            Split::Valid => valid,
            Split::Test => test,
        };
        idx.into_iter().map(|i| docs[i].clone()).collect()
    }
}

/// One optimization step's losses. Level losses are per document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub epoch: usize,
    pub l_tok: f64,
    pub l_sen: f64,
    pub l_doc: f64,
    pub penalty: f64,
    pub total: f64,
    pub hinge_tok: f64,
    pub hinge_sen: f64,
    pub hinge_doc: f64,
}

impl LogRecord {
    fn new(step: usize, epoch: usize, b: &LossBreakdown) -> Self {
        Self {
            step,
            epoch,
            l_tok: b.token,
            l_sen: b.sentence,
            l_doc: b.document,
            penalty: b.penalty,
            total: b.total,
            hinge_tok: b.token_hinge,
            hinge_sen: b.sentence_hinge,
            hinge_doc: b.document_hinge,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub epoch: usize,
    pub reports: Vec<MetricsReport>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub records: Vec<LogRecord>,
    pub evals: Vec<EvalRecord>,
}

/// Mean hinge per level over one epoch's steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochHinge {
    pub token: f64,
    pub sentence: f64,
    pub document: f64,
}

impl TrainingLog {
    pub fn epochs(&self) -> usize {
        self.records.iter().map(|r| r.epoch + 1).max().unwrap_or(0)
    }

    pub fn epoch_hinge(&self, epoch: usize) -> Option<EpochHinge> {
        let rows: Vec<&LogRecord> = self.records.iter().filter(|r| r.epoch == epoch).collect();
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        Some(EpochHinge {
            token: rows.iter().map(|r| r.hinge_tok).sum::<f64>() / n,
            sentence: rows.iter().map(|r| r.hinge_sen).sum::<f64>() / n,
            document: rows.iter().map(|r| r.hinge_doc).sum::<f64>() / n,
        })
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.records {
            w.serialize(r)
                .map_err(|e| Error::Validation(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io("<training log>", e))
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Parse {
            line: 0,
            message: format!("{}: {e}", path.display()),
        })?;
        let mut records = Vec::new();
        for (i, row) in reader.deserialize().enumerate() {
            records.push(row.map_err(|e| Error::Parse {
                line: i + 2,
                message: e.to_string(),
            })?);
        }
        Ok(Self {
            records,
            evals: Vec::new(),
        })
    }
}

pub const CHECKPOINT_FORMAT: &str = "event-energy-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub train: TrainConfig,
    pub model: Model,
}

impl Checkpoint {
    pub fn new(model: Model, train: TrainConfig) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            train,
            model,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("checkpoint serializes")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let ck: Checkpoint =
            serde_json::from_slice(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unrecognized format '{}'",
                ck.format
            )));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {}",
                ck.version
            )));
        }
        ck.model
            .validate()
            .map_err(|e| Error::Checkpoint(format!("incompatible model: {e}")))?;
        Ok(ck)
    }

    /// Hex SHA-256 of the serialized checkpoint.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.to_bytes()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: TrainingLog,
}

/// Vocabulary of every token in `docs`.
pub fn build_vocab(docs: &[Document]) -> Vocab {
    Vocab::build(
        docs.iter()
            .flat_map(|d| &d.mentions)
            .flat_map(|m| m.tokens.iter().map(String::as_str)),
    )
}

/// Trains on `train_docs`; `valid_docs` are only used for periodic evaluation.
pub fn train(
    train_docs: &[Document],
    valid_docs: &[Document],
    spaces: &LabelSpaces,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_docs.is_empty() {
        return Err(Error::Validation("no training documents".into()));
    }
    let mut model = Model::new(
        config.model_config(),
        spaces.clone(),
        build_vocab(train_docs),
    )?;
    let weights = config.weights();
    let trainable = model.trainable();
    let energy_start = trainable.len() - 8;
    let mut adam = Adam::new(config.lr, model.tensors().iter().map(|(_, m)| *m));
    let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x0dd5));
    let mut order: Vec<usize> = (0..train_docs.len()).collect();
    let mut log = TrainingLog::default();
    let mut step = 0;

    for epoch in 0..config.epochs {
        order.shuffle(&mut order_rng);
        for chunk in order.chunks(config.batch_size) {
            let docs: Vec<&Document> = chunk.iter().map(|&i| &train_docs[i]).collect();
            let batch = Batch::new(&docs, &model, config.mention_cap)?;
            let (loss, mut grads) = joint_loss_with_grad(&model, &batch, &weights);
            if !loss.total.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite {
                    step,
                    doc_ids: batch.doc_ids.clone(),
                    detail: format!("{loss:?}"),
                });
            }
            clip_global_norm(&mut grads, config.clip_norm);
            let active: Vec<bool> = trainable
                .iter()
                .enumerate()
                .map(|(k, &t)| {
                    let in_energy = k >= energy_start;
                    t && (!config.alternating || (step % 2 == 1) == in_energy)
                })
                .collect();
            adam.step(&mut model.tensors_mut(), &grads, &active);
            log.records.push(LogRecord::new(step, epoch, &loss));
            step += 1;
        }
        if config.eval_every > 0 && (epoch + 1) % config.eval_every == 0 && !valid_docs.is_empty() {
            let preds = predict(
                &model,
                valid_docs,
                config.mention_cap,
                InferenceMode::Classifier,
            )?;
            let mut reports = Vec::new();
            for task in Task::ALL {
                reports.extend(score(&model, &preds, task, config.regime)?);
            }
            log.evals.push(EvalRecord { epoch, reports });
        }
    }
    Ok(TrainOutcome {
        checkpoint: Checkpoint::new(model, config.clone()),
        log,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Trigger,
    Event,
    Ere,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Trigger, Task::Event, Task::Ere];
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trigger" => Ok(Task::Trigger),
            "event" => Ok(Task::Event),
            "ere" => Ok(Task::Ere),
            other => Err(Error::Config(format!("unknown task '{other}'"))),
        }
    }
}

/// How labels are read off the model.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum InferenceMode {
    /// Argmax of the classifier heads and the hypersphere measurement.
    #[default]
    Classifier,
    /// Argmax of the relaxed labels that minimize each level's energy.
    EnergyDescent { steps: usize, step_size: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MentionPrediction {
    pub doc_id: String,
    pub mention_id: String,
    pub gold: usize,
    pub pred: usize,
    pub score: f64,
    /// Token-level label predicted at the gold trigger position.
    pub trigger_pred: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairPrediction {
    pub doc_id: String,
    pub i: usize,
    pub j: usize,
    pub gold: usize,
    pub pred: usize,
    pub score: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Predictions {
    /// Predicted and gold labels of every real (unpadded) token.
    pub token_pred: Vec<usize>,
    pub token_gold: Vec<usize>,
    pub mentions: Vec<MentionPrediction>,
    pub pairs: Vec<PairPrediction>,
}

const EVAL_CHUNK: usize = 16;

fn descent_label(labels: &Matrix, row: usize) -> (usize, f64) {
    let r = labels.row(row);
    let k = argmax(r);
    (k, r[k])
}

pub fn predict(
    model: &Model,
    docs: &[Document],
    cap: usize,
    mode: InferenceMode,
) -> Result<Predictions> {
    let mut out = Predictions::default();
    let token_labels = model.spaces.token_label_count();
    for chunk in docs.chunks(EVAL_CHUNK) {
        let refs: Vec<&Document> = chunk.iter().collect();
        let batch = Batch::new(&refs, model, cap)?;
        let outputs = infer(model, &batch);
        let block = batch.block();
        let mut token_argmax: Vec<usize> = (0..outputs.token_probs.rows())
            .map(|r| outputs.token_probs.row_argmax(r))
            .collect();
        if let InferenceMode::EnergyDescent { steps, step_size } = mode {
            let features = model_features(model, &batch);
            for k in 0..batch.num_mentions() {
                let len = batch.token_mask[k * block..(k + 1) * block]
                    .iter()
                    .filter(|&&m| m > 0.0)
                    .count();
                let rows: Vec<Vec<f64>> = (0..len)
                    .map(|p| features.row(k * block + p).to_vec())
                    .collect();
                let d = minimize_token_energy(
                    &TokenFeatures(Matrix::from_rows(&rows)),
                    &model.energy.token,
                    steps,
                    step_size,
                )?;
                for p in 0..len {
                    token_argmax[k * block + p] = descent_label(&d.labels, p).0;
                }
            }
        }
        for ((&pred, &gold), &mask) in token_argmax
            .iter()
            .zip(&batch.token_gold)
            .zip(&batch.token_mask)
        {
            if mask > 0.0 {
                out.token_pred.push(pred.min(token_labels - 1));
                out.token_gold.push(gold);
            }
        }
        for k in 0..batch.num_mentions() {
            let (pred, score) = match mode {
                InferenceMode::Classifier => descent_label(&outputs.class_probs, k),
                InferenceMode::EnergyDescent { steps, step_size } => {
                    let d = minimize_label_energy(
                        outputs.mentions.row(k),
                        &model.energy.sentence,
                        steps,
                        step_size,
                    )?;
                    descent_label(&d.labels, 0)
                }
            };
            let doc = chunk[batch.mention_doc[k]].clone();
            let pos = batch.mention_pos[k];
            out.mentions.push(MentionPrediction {
                mention_id: doc.mentions[pos].id(&doc.doc_id, pos),
                doc_id: doc.doc_id,
                gold: batch.mention_gold[k],
                pred,
                score,
                trigger_pred: token_argmax[batch.trigger_rows[k]],
            });
        }
        for p in 0..batch.num_pairs() {
            let (pred, score) = match mode {
                InferenceMode::Classifier => descent_label(&outputs.relation_probs, p),
                InferenceMode::EnergyDescent { steps, step_size } => {
                    let f = encode_pair(
                        outputs.mentions.row(batch.pair_left[p]),
                        outputs.mentions.row(batch.pair_right[p]),
                    )?;
                    let d = minimize_label_energy(&f.0, &model.energy.document, steps, step_size)?;
                    descent_label(&d.labels, 0)
                }
            };
            let (l, r) = (batch.pair_left[p], batch.pair_right[p]);
            out.pairs.push(PairPrediction {
                doc_id: batch.doc_ids[batch.mention_doc[l]].clone(),
                i: batch.mention_pos[l],
                j: batch.mention_pos[r],
                gold: batch.pair_gold[p],
                pred,
                score,
            });
        }
    }
    Ok(out)
}

fn model_features(model: &Model, batch: &Batch) -> Matrix {
    let mut tape = crate::autodiff::Tape::new();
    let vars = model.register(&mut tape);
    let f = crate::encoders::token_features_graph(&mut tape, &vars.encoder, &batch.tokens);
    tape.value(f).clone()
}

/// Metrics for one task. Relation extraction yields one report per family
/// or a single pooled report depending on `regime`.
pub fn score(
    model: &Model,
    preds: &Predictions,
    task: Task,
    regime: Regime,
) -> Result<Vec<MetricsReport>> {
    let spaces = &model.spaces;
    match task {
        Task::Trigger => {
            let mut names: Vec<String> = spaces.event_classes().to_vec();
            names.push("<non-trigger>".into());
            names.push("<pad>".into());
            Ok(vec![micro_prf(
                "trigger",
                &preds.token_pred,
                &preds.token_gold,
                &[spaces.non_trigger_label(), spaces.padding_label()],
                &names,
            )?])
        }
        Task::Event => {
            let pred: Vec<usize> = preds.mentions.iter().map(|m| m.pred).collect();
            let gold: Vec<usize> = preds.mentions.iter().map(|m| m.gold).collect();
            Ok(vec![micro_prf(
                "event",
                &pred,
                &gold,
                &[spaces.none_index()],
                spaces.event_classes(),
            )?])
        }
        Task::Ere => {
            let pred: Vec<usize> = preds.pairs.iter().map(|p| p.pred).collect();
            let gold: Vec<usize> = preds.pairs.iter().map(|p| p.gold).collect();
            ere_regime_eval(
                &pred,
                &gold,
                spaces.relations(),
                spaces.na_index(),
                regime.ere_regime(),
            )
        }
    }
}

pub fn evaluate(
    checkpoint: &Checkpoint,
    docs: &[Document],
    task: Task,
    mode: InferenceMode,
) -> Result<Vec<MetricsReport>> {
    let model = &checkpoint.model;
    check_label_space(model, docs)?;
    let preds = predict(model, docs, checkpoint.train.mention_cap, mode)?;
    score(model, &preds, task, checkpoint.train.regime)
}

/// Rejects documents whose labels fall outside the model's label spaces.
pub fn check_label_space(model: &Model, docs: &[Document]) -> Result<()> {
    for doc in docs {
        if let Some(m) = doc
            .mentions
            .iter()
            .find(|m| m.event_class >= model.spaces.num_classes())
        {
            return Err(Error::Validation(format!(
                "{}: event class {} unknown to the model",
                doc.doc_id, m.event_class
            )));
        }
        if doc
            .relations
            .values()
            .any(|&r| r >= model.spaces.num_relations())
        {
            return Err(Error::Validation(format!(
                "{}: relation unknown to the model",
                doc.doc_id
            )));
        }
    }
    Ok(())
}

/// Mean energy of gold labels and of random wrong labels at one level.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyGap {
    pub gold: f64,
    pub wrong: f64,
    pub instances: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergySeparation {
    pub token: EnergyGap,
    pub sentence: EnergyGap,
    pub document: EnergyGap,
}

fn wrong_label<R: Rng>(gold: usize, n: usize, rng: &mut R) -> usize {
    let k = rng.random_range(0..n - 1);
    if k >= gold {
        k + 1
    } else {
        k
    }
}

/// Compares gold energies with energies of uniformly drawn wrong one-hots.
///
/// At the token level every real position of a mention gets a wrong label
/// (never padding), and the whole sequence's energy is compared.
pub fn energy_separation(
    model: &Model,
    docs: &[Document],
    cap: usize,
    seed: u64,
) -> Result<EnergySeparation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spaces = &model.spaces;
    let n_tok = spaces.token_label_count() - 1;
    let (mut tok, mut sen, mut doc) = ([0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]);
    for chunk in docs.chunks(EVAL_CHUNK) {
        let refs: Vec<&Document> = chunk.iter().collect();
        let batch = Batch::new(&refs, model, cap)?;
        let features = model_features(model, &batch);
        let outputs = infer(model, &batch);
        let block = batch.block();
        for k in 0..batch.num_mentions() {
            let rows: Vec<usize> = (k * block..(k + 1) * block)
                .filter(|&r| batch.token_mask[r] > 0.0)
                .collect();
            let f = TokenFeatures(Matrix::from_rows(
                &rows
                    .iter()
                    .map(|&r| features.row(r).to_vec())
                    .collect::<Vec<_>>(),
            ));
            let gold: Vec<usize> = rows.iter().map(|&r| batch.token_gold[r]).collect();
            let wrong: Vec<usize> = gold
                .iter()
                .map(|&g| wrong_label(g, n_tok, &mut rng))
                .collect();
            let t = spaces.token_label_count();
            tok[0] += token_energy(&f, &Matrix::one_hot(&gold, t), &model.energy.token)?;
            tok[1] += token_energy(&f, &Matrix::one_hot(&wrong, t), &model.energy.token)?;
            tok[2] += 1.0;

            let n = spaces.num_classes();
            let g = batch.mention_gold[k];
            let w = wrong_label(g, n, &mut rng);
            let m = outputs.mentions.row(k);
            sen[0] += sentence_energy(m, Matrix::one_hot(&[g], n).row(0), &model.energy.sentence)?;
            sen[1] += sentence_energy(m, Matrix::one_hot(&[w], n).row(0), &model.energy.sentence)?;
            sen[2] += 1.0;
        }
        let n = spaces.num_relations();
        for p in 0..batch.num_pairs() {
            let f = encode_pair(
                outputs.mentions.row(batch.pair_left[p]),
                outputs.mentions.row(batch.pair_right[p]),
            )?;
            let g = batch.pair_gold[p];
            let w = wrong_label(g, n, &mut rng);
            doc[0] += document_energy(&f, Matrix::one_hot(&[g], n).row(0), &model.energy.document)?;
            doc[1] += document_energy(&f, Matrix::one_hot(&[w], n).row(0), &model.energy.document)?;
            doc[2] += 1.0;
        }
    }
    let gap = |a: [f64; 3]| EnergyGap {
        gold: a[0] / a[2].max(1.0),
        wrong: a[1] / a[2].max(1.0),
        instances: a[2] as usize,
    };
    Ok(EnergySeparation {
        token: gap(tok),
        sentence: gap(sen),
        document: gap(doc),
    })
}

/// How tightly mention embeddings sit around their gold centroid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Concentration {
    /// Share of mentions whose hinge distance to the gold centroid is strictly
    /// below that to the nearest other centroid.
    pub fraction_closer: f64,
    pub mean_gold_hinge: f64,
    pub mean_nearest_other_hinge: f64,
    pub mentions: usize,
}

pub fn sphere_concentration(model: &Model, docs: &[Document], cap: usize) -> Result<Concentration> {
    let (mut closer, mut gold_sum, mut other_sum, mut n) = (0usize, 0.0, 0.0, 0usize);
    for chunk in docs.chunks(EVAL_CHUNK) {
        let refs: Vec<&Document> = chunk.iter().collect();
        let batch = Batch::new(&refs, model, cap)?;
        let outputs = infer(model, &batch);
        for k in 0..batch.num_mentions() {
            let e = outputs.mentions.row(k);
            let g = batch.mention_gold[k];
            let own = hinge_distance(e, g, &model.spheres)?;
            let mut nearest = f64::INFINITY;
            for c in (0..model.spheres.num_classes()).filter(|&c| c != g) {
                nearest = nearest.min(hinge_distance(e, c, &model.spheres)?);
            }
            closer += usize::from(own < nearest);
            gold_sum += own;
            other_sum += nearest;
            n += 1;
        }
    }
    let denom = n.max(1) as f64;
    Ok(Concentration {
        fraction_closer: closer as f64 / denom,
        mean_gold_hinge: gold_sum / denom,
        mean_nearest_other_hinge: other_sum / denom,
        mentions: n,
    })
}

/// Mention embeddings of one class, one row per mention.
pub fn class_embeddings(
    model: &Model,
    docs: &[Document],
    cap: usize,
    class: usize,
) -> Result<Matrix> {
    let mut rows = Vec::new();
    for chunk in docs.chunks(EVAL_CHUNK) {
        let refs: Vec<&Document> = chunk.iter().collect();
        let batch = Batch::new(&refs, model, cap)?;
        let outputs = infer(model, &batch);
        for k in 0..batch.num_mentions() {
            if batch.mention_gold[k] == class {
                rows.push(outputs.mentions.row(k).to_vec());
            }
        }
    }
    Ok(Matrix::from_rows(&rows))
}
