//! Margin-rescaled structured hinge losses, cross-entropy terms and the joint
//! objective.
//!
//! For every instance (token, mention or mention pair) with classifier output
//! `ỹ` and gold one-hot `y`:
//!
//! ```text
//! [Δ(ỹ, y) − E(x, ỹ) + E(x, y)]₊ + μ · CE(ỹ, y)
//! ```
//!
//! Token-level energies are decomposed per position (local term plus the
//! transition into the position), so the token hinge is applied per token.
//! Level losses are summed over a document's instances and averaged over the
//! documents of a batch.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::energy::{
    label_energy_graph, token_energy_graph, EnergyParams, LabelEnergyVars, TokenEnergyVars,
};
use crate::error::{Error, Result};
use crate::tensor::{argmax, Matrix};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StructuredCost {
    /// `Σ (ỹ − y)²`, differentiable in `ỹ`.
    #[default]
    SquaredL2,
    /// `1[argmax ỹ ≠ argmax y]`, constant with respect to `ỹ`.
    Hamming,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub mu_token: f64,
    pub mu_sentence: f64,
    pub mu_document: f64,
    pub lambda_token: f64,
    pub lambda_sentence: f64,
    pub lambda_document: f64,
    pub l2_coeff: f64,
    #[serde(default)]
    pub cost: StructuredCost,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            mu_token: 1.0,
            mu_sentence: 1.0,
            mu_document: 1.0,
            lambda_token: 1.0,
            lambda_sentence: 1.0,
            lambda_document: 1.0,
            l2_coeff: 1e-5,
            cost: StructuredCost::SquaredL2,
        }
    }
}

impl LossWeights {
    pub fn with_lambdas(mut self, lambdas: [f64; 3]) -> Self {
        [
            self.lambda_token,
            self.lambda_sentence,
            self.lambda_document,
        ] = lambdas;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.mu_token,
            self.mu_sentence,
            self.mu_document,
            self.lambda_token,
            self.lambda_sentence,
            self.lambda_document,
            self.l2_coeff,
        ];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config("loss weights must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Token,
    Sentence,
    Document,
}

/// `Σ (pred − gold)²`.
pub fn structured_cost(pred: &[f64], gold: &[f64]) -> Result<f64> {
    if pred.len() != gold.len() {
        return Err(Error::Shape(format!(
            "structured cost over vectors of length {} and {}",
            pred.len(),
            gold.len()
        )));
    }
    Ok(pred.iter().zip(gold).map(|(p, g)| (p - g) * (p - g)).sum())
}

/// Graph handles of one level's loss.
#[derive(Clone, Copy, Debug)]
pub struct LevelTerms {
    /// `rows x 1` clamped hinge per instance.
    pub hinge: Var,
    /// `rows x 1` cross-entropy per instance.
    pub ce: Var,
    /// `Σ hinge + μ Σ ce`.
    pub total: Var,
    pub hinge_sum: Var,
}

fn cost_graph(tape: &mut Tape, cost: StructuredCost, pred: Var, gold: Var) -> Var {
    match cost {
        StructuredCost::SquaredL2 => {
            let diff = tape.sub(pred, gold);
            let sq = tape.mul(diff, diff);
            tape.row_sum(sq)
        }
        StructuredCost::Hamming => {
            let (p, g) = (tape.value(pred), tape.value(gold));
            let vals: Vec<f64> = (0..p.rows())
                .map(|r| {
                    let empty = g.row(r).iter().all(|&x| x == 0.0);
                    if empty || argmax(p.row(r)) == argmax(g.row(r)) {
                        0.0
                    } else {
                        1.0
                    }
                })
                .collect();
            tape.leaf(Matrix::column_vector(&vals))
        }
    }
}

fn finish(tape: &mut Tape, delta: Var, e_pred: Var, e_gold: Var, ce: Var, mu: f64) -> LevelTerms {
    let margin = tape.sub(delta, e_pred);
    let margin = tape.add(margin, e_gold);
    let hinge = tape.relu(margin);
    let hinge_sum = tape.sum_all(hinge);
    let ce_sum = tape.sum_all(ce);
    let ce_scaled = tape.scale(ce_sum, mu);
    let total = tape.add(hinge_sum, ce_scaled);
    LevelTerms {
        hinge,
        ce,
        total,
        hinge_sum,
    }
}

/// Token-level loss over sequences tiled into `block` rows.
///
/// `mask[r]` is 1 for real tokens and 0 for padding; padded rows of both the
/// prediction and the gold labels are zeroed so they carry no energy.
#[allow(clippy::too_many_arguments)]
pub fn token_level_graph(
    tape: &mut Tape,
    vars: &TokenEnergyVars,
    features: Var,
    pred: Var,
    gold: &[usize],
    mask: &[f64],
    block: usize,
    mu: f64,
    cost: StructuredCost,
) -> LevelTerms {
    let (rows, n_labels) = tape.value(pred).shape();
    let mut mask_rows = Matrix::zeros(rows, n_labels);
    for (r, &m) in mask.iter().enumerate() {
        mask_rows.row_mut(r).fill(m);
    }
    let gold_m = Matrix::one_hot(gold, n_labels).zip_map(&mask_rows, |a, b| a * b);
    let mask_rows = tape.leaf(mask_rows);
    let pred_m = tape.mul(pred, mask_rows);
    let gold_m = tape.leaf(gold_m);

    let e_pred = token_energy_graph(tape, vars, features, pred_m, block);
    let e_gold = token_energy_graph(tape, vars, features, gold_m, block);
    let delta = cost_graph(tape, cost, pred_m, gold_m);
    let ce_raw = tape.nll_probs(pred, gold);
    let mask_col = tape.leaf(Matrix::column_vector(mask));
    let ce = tape.mul(ce_raw, mask_col);
    finish(tape, delta, e_pred, e_gold, ce, mu)
}

/// Sentence- or document-level loss, one instance per row.
pub fn label_level_graph(
    tape: &mut Tape,
    vars: &LabelEnergyVars,
    features: Var,
    pred: Var,
    gold: &[usize],
    mu: f64,
    cost: StructuredCost,
) -> LevelTerms {
    let n_labels = tape.value(pred).cols();
    let gold_m = tape.leaf(Matrix::one_hot(gold, n_labels));
    let e_pred = label_energy_graph(tape, vars, features, pred);
    let e_gold = label_energy_graph(tape, vars, features, gold_m);
    let delta = cost_graph(tape, cost, pred, gold_m);
    let ce = tape.nll_probs(pred, gold);
    finish(tape, delta, e_pred, e_gold, ce, mu)
}

/// Per-instance hinge and CE values plus their weighted sum.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelLoss {
    pub hinge: Vec<f64>,
    pub ce: Vec<f64>,
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct LevelLossGradients {
    pub loss: LevelLoss,
    pub inputs: Matrix,
    pub pred: Matrix,
}

/// Loss of one level for a single sequence (token level) or a set of
/// mentions / pairs (sentence and document levels).
///
/// `inputs` are `f1` rows, `f2` rows or `f3` rows respectively; `pred` holds
/// the matching classifier outputs (token head, hypersphere measurement,
/// relation head).
pub fn hinge_loss_level(
    level: Level,
    inputs: &Matrix,
    pred: &Matrix,
    gold: &[usize],
    energy: &EnergyParams,
    mu: f64,
) -> Result<LevelLoss> {
    hinge_loss_level_with_grad(
        level,
        inputs,
        pred,
        gold,
        energy,
        mu,
        StructuredCost::SquaredL2,
    )
    .map(|g| g.loss)
}

pub fn hinge_loss_level_with_grad(
    level: Level,
    inputs: &Matrix,
    pred: &Matrix,
    gold: &[usize],
    energy: &EnergyParams,
    mu: f64,
    cost: StructuredCost,
) -> Result<LevelLossGradients> {
    let (in_dim, n_labels) = match level {
        Level::Token => (energy.token.emission.cols(), energy.token.labels()),
        Level::Sentence => (energy.sentence.input_dim(), energy.sentence.labels()),
        Level::Document => (energy.document.input_dim(), energy.document.labels()),
    };
    if inputs.cols() != in_dim || inputs.rows() != pred.rows() || pred.cols() != n_labels {
        return Err(Error::Shape(format!(
            "{level:?} loss: inputs {:?}, predictions {:?}, expected width {in_dim} and {n_labels} labels",
            inputs.shape(),
            pred.shape()
        )));
    }
    if gold.len() != pred.rows() || gold.iter().any(|&g| g >= n_labels) {
        return Err(Error::Shape("gold labels do not match predictions".into()));
    }
    let mut tape = Tape::new();
    let x = tape.leaf(inputs.clone());
    let p = tape.leaf(pred.clone());
    let terms = match level {
        Level::Token => {
            let vars = TokenEnergyVars::register(&energy.token, &mut tape);
            let mask = vec![1.0; pred.rows()];
            let block = pred.rows().max(1);
            token_level_graph(&mut tape, &vars, x, p, gold, &mask, block, mu, cost)
        }
        Level::Sentence => {
            let vars = LabelEnergyVars::register(&energy.sentence, &mut tape);
            label_level_graph(&mut tape, &vars, x, p, gold, mu, cost)
        }
        Level::Document => {
            let vars = LabelEnergyVars::register(&energy.document, &mut tape);
            label_level_graph(&mut tape, &vars, x, p, gold, mu, cost)
        }
    };
    let grads = tape.backward(terms.total);
    Ok(LevelLossGradients {
        loss: LevelLoss {
            hinge: tape.value(terms.hinge).data().to_vec(),
            ce: tape.value(terms.ce).data().to_vec(),
            total: tape.scalar(terms.total),
        },
        inputs: grads.get_or_zeros(&tape, x),
        pred: grads.get_or_zeros(&tape, p),
    })
}

/// Per-term values of the joint objective for one batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub token: f64,
    pub sentence: f64,
    pub document: f64,
    pub token_hinge: f64,
    pub sentence_hinge: f64,
    pub document_hinge: f64,
    pub penalty: f64,
    pub total: f64,
}

/// `l2 · Σ ‖θ‖²` over the given parameter handles.
pub fn l2_penalty_graph(tape: &mut Tape, params: &[Var], l2: f64) -> Var {
    let mut acc = tape.leaf(Matrix::zeros(1, 1));
    for &p in params {
        let sq = tape.mul(p, p);
        let s = tape.sum_all(sq);
        acc = tape.add(acc, s);
    }
    tape.scale(acc, l2)
}
