//! Energy functions over (input, relaxed label) pairs. Lower energy means a
//! more compatible pair.
//!
//! All three levels share the local + label decomposition:
//!
//! * token:    `E(x, y) = −( Σ_n Σ_i y_n^i V1_i·f1(x_n) + Σ_n y_{n−1}ᵀ W1 y_n )`
//! * sentence: `E(X, Y) = −( Σ_i Y_i V2_i·f2(X) + w2ᵀ g(W2 Y) )`
//! * document: `E(Ẍ, z) = −( Σ_i z_i V3_i·f3(Ẍ) + w3ᵀ g(W3 z) )`
//!
//! with `g = softplus` and `y_0` the padding one-hot. Labels may be any rows
//! on the probability simplex; gold labels are one-hot.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::encoders::{PairFeature, TokenFeatures};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// `(V1, W1)` of the token-level energy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenEnergyParams {
    /// `(|E| + 2) x d`
    pub emission: Matrix,
    /// `(|E| + 2) x (|E| + 2)`, indexed `[previous label, current label]`.
    pub transition: Matrix,
}

/// `(V, w, W)` of the sentence- and document-level energies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelEnergyParams {
    /// `n_labels x input_dim`
    pub emission: Matrix,
    /// `1 x n_labels`
    pub label_weights: Matrix,
    /// `n_labels x n_labels`
    pub interaction: Matrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyParams {
    pub token: TokenEnergyParams,
    pub sentence: LabelEnergyParams,
    pub document: LabelEnergyParams,
}

impl TokenEnergyParams {
    pub fn zeros(labels: usize, d: usize) -> Self {
        Self {
            emission: Matrix::zeros(labels, d),
            transition: Matrix::zeros(labels, labels),
        }
    }

    pub fn labels(&self) -> usize {
        self.transition.rows()
    }

    /// The last token label is padding.
    pub fn padding_label(&self) -> usize {
        self.labels() - 1
    }
}

impl LabelEnergyParams {
    pub fn zeros(labels: usize, input_dim: usize) -> Self {
        Self {
            emission: Matrix::zeros(labels, input_dim),
            label_weights: Matrix::zeros(1, labels),
            interaction: Matrix::zeros(labels, labels),
        }
    }

    pub fn labels(&self) -> usize {
        self.interaction.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.emission.cols()
    }
}

impl EnergyParams {
    pub fn init<R: Rng + ?Sized>(
        d: usize,
        n_classes: usize,
        n_relations: usize,
        rng: &mut R,
    ) -> Self {
        let t = n_classes + 2;
        let std = 0.1;
        Self {
            token: TokenEnergyParams {
                emission: Matrix::random_normal(t, d, std, rng),
                transition: Matrix::random_normal(t, t, std, rng),
            },
            sentence: LabelEnergyParams {
                emission: Matrix::random_normal(n_classes, d, std, rng),
                label_weights: Matrix::random_normal(1, n_classes, std, rng),
                interaction: Matrix::random_normal(n_classes, n_classes, std, rng),
            },
            document: LabelEnergyParams {
                emission: Matrix::random_normal(n_relations, 3 * d, std, rng),
                label_weights: Matrix::random_normal(1, n_relations, std, rng),
                interaction: Matrix::random_normal(n_relations, n_relations, std, rng),
            },
        }
    }

    pub fn tensors(&self) -> [(&'static str, &Matrix); 8] {
        [
            ("energy.token.emission", &self.token.emission),
            ("energy.token.transition", &self.token.transition),
            ("energy.sentence.emission", &self.sentence.emission),
            (
                "energy.sentence.label_weights",
                &self.sentence.label_weights,
            ),
            ("energy.sentence.interaction", &self.sentence.interaction),
            ("energy.document.emission", &self.document.emission),
            (
                "energy.document.label_weights",
                &self.document.label_weights,
            ),
            ("energy.document.interaction", &self.document.interaction),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Matrix; 8] {
        [
            &mut self.token.emission,
            &mut self.token.transition,
            &mut self.sentence.emission,
            &mut self.sentence.label_weights,
            &mut self.sentence.interaction,
            &mut self.document.emission,
            &mut self.document.label_weights,
            &mut self.document.interaction,
        ]
    }

    pub fn register(&self, tape: &mut Tape) -> EnergyVars {
        EnergyVars {
            token: TokenEnergyVars::register(&self.token, tape),
            sentence: LabelEnergyVars::register(&self.sentence, tape),
            document: LabelEnergyVars::register(&self.document, tape),
        }
    }

    pub fn check_shapes(&self, d: usize, n_classes: usize, n_relations: usize) -> Result<()> {
        let t = n_classes + 2;
        let expect = [
            (t, d),
            (t, t),
            (n_classes, d),
            (1, n_classes),
            (n_classes, n_classes),
            (n_relations, 3 * d),
            (1, n_relations),
            (n_relations, n_relations),
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
pub struct TokenEnergyVars {
    pub emission: Var,
    pub transition: Var,
}

impl TokenEnergyVars {
    pub fn register(p: &TokenEnergyParams, tape: &mut Tape) -> Self {
        Self {
            emission: tape.leaf(p.emission.clone()),
            transition: tape.leaf(p.transition.clone()),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LabelEnergyVars {
    pub emission: Var,
    pub label_weights: Var,
    pub interaction: Var,
}

impl LabelEnergyVars {
    pub fn register(p: &LabelEnergyParams, tape: &mut Tape) -> Self {
        Self {
            emission: tape.leaf(p.emission.clone()),
            label_weights: tape.leaf(p.label_weights.clone()),
            interaction: tape.leaf(p.interaction.clone()),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EnergyVars {
    pub token: TokenEnergyVars,
    pub sentence: LabelEnergyVars,
    pub document: LabelEnergyVars,
}

impl EnergyVars {
    pub fn all(&self) -> [Var; 8] {
        [
            self.token.emission,
            self.token.transition,
            self.sentence.emission,
            self.sentence.label_weights,
            self.sentence.interaction,
            self.document.emission,
            self.document.label_weights,
            self.document.interaction,
        ]
    }
}

/// Per-position token energies (`rows x 1`); they sum to the sequence energy.
///
/// Position `n` carries its local term and the transition from `n − 1`.
/// Rows are tiled into sequences of `block` positions; the first position of
/// each sequence transitions from the padding one-hot.
pub fn token_energy_graph(
    tape: &mut Tape,
    vars: &TokenEnergyVars,
    features: Var,
    labels: Var,
    block: usize,
) -> Var {
    let (rows, n_labels) = tape.value(labels).shape();
    let scores = tape.matmul_t(features, vars.emission);
    let local = tape.row_dot(labels, scores);

    let mut boundary = Matrix::zeros(rows, n_labels);
    for r in (0..rows).step_by(block) {
        boundary.set(r, n_labels - 1, 1.0);
    }
    let boundary = tape.leaf(boundary);
    let shifted = tape.shift_down(labels, block);
    let prev = tape.add(shifted, boundary);
    let prev_w = tape.matmul(prev, vars.transition);
    let pair = tape.row_dot(prev_w, labels);

    let total = tape.add(local, pair);
    tape.neg(total)
}

/// Per-row sentence or document energies (`rows x 1`).
pub fn label_energy_graph(
    tape: &mut Tape,
    vars: &LabelEnergyVars,
    features: Var,
    labels: Var,
) -> Var {
    let scores = tape.matmul_t(features, vars.emission);
    let local = tape.row_dot(labels, scores);
    let mixed = tape.matmul_t(labels, vars.interaction);
    let activated = tape.softplus(mixed);
    let label = tape.matmul_t(activated, vars.label_weights);
    let total = tape.add(local, label);
    tape.neg(total)
}

fn check_simplex_shape(labels: &Matrix, rows: usize, cols: usize) -> Result<()> {
    if labels.shape() != (rows, cols) {
        return Err(Error::Shape(format!(
            "labels are {:?}, expected {:?}",
            labels.shape(),
            (rows, cols)
        )));
    }
    Ok(())
}

/// Energy together with its gradients.
#[derive(Clone, Debug)]
pub struct EnergyGradients {
    pub value: f64,
    pub features: Matrix,
    pub labels: Matrix,
    /// In the order of the parameter struct's fields.
    pub params: Vec<Matrix>,
}

pub fn token_energy_with_grad(
    features: &TokenFeatures,
    labels: &Matrix,
    params: &TokenEnergyParams,
) -> Result<EnergyGradients> {
    let f = &features.0;
    if f.cols() != params.emission.cols() {
        return Err(Error::Shape("feature width differs from V1".into()));
    }
    check_simplex_shape(labels, f.rows(), params.labels())?;
    let mut tape = Tape::new();
    let vars = TokenEnergyVars::register(params, &mut tape);
    let fv = tape.leaf(f.clone());
    let yv = tape.leaf(labels.clone());
    let rows = token_energy_graph(&mut tape, &vars, fv, yv, f.rows().max(1));
    let total = tape.sum_all(rows);
    let grads = tape.backward(total);
    Ok(EnergyGradients {
        value: tape.scalar(total),
        features: grads.get_or_zeros(&tape, fv),
        labels: grads.get_or_zeros(&tape, yv),
        params: vec![
            grads.get_or_zeros(&tape, vars.emission),
            grads.get_or_zeros(&tape, vars.transition),
        ],
    })
}

fn label_energy_with_grad(
    features: &[f64],
    labels: &[f64],
    params: &LabelEnergyParams,
) -> Result<EnergyGradients> {
    if features.len() != params.input_dim() {
        return Err(Error::Shape(format!(
            "input of length {}, expected {}",
            features.len(),
            params.input_dim()
        )));
    }
    if labels.len() != params.labels() {
        return Err(Error::Shape(format!(
            "label vector of length {}, expected {}",
            labels.len(),
            params.labels()
        )));
    }
    let mut tape = Tape::new();
    let vars = LabelEnergyVars::register(params, &mut tape);
    let fv = tape.leaf(Matrix::row_vector(features));
    let yv = tape.leaf(Matrix::row_vector(labels));
    let e = label_energy_graph(&mut tape, &vars, fv, yv);
    let total = tape.sum_all(e);
    let grads = tape.backward(total);
    Ok(EnergyGradients {
        value: tape.scalar(total),
        features: grads.get_or_zeros(&tape, fv),
        labels: grads.get_or_zeros(&tape, yv),
        params: vec![
            grads.get_or_zeros(&tape, vars.emission),
            grads.get_or_zeros(&tape, vars.label_weights),
            grads.get_or_zeros(&tape, vars.interaction),
        ],
    })
}

pub fn sentence_energy_with_grad(
    mention: &[f64],
    labels: &[f64],
    params: &LabelEnergyParams,
) -> Result<EnergyGradients> {
    label_energy_with_grad(mention, labels, params)
}

pub fn document_energy_with_grad(
    pair: &PairFeature,
    labels: &[f64],
    params: &LabelEnergyParams,
) -> Result<EnergyGradients> {
    label_energy_with_grad(&pair.0, labels, params)
}

/// Token-level energy of one sequence.
pub fn token_energy(
    features: &TokenFeatures,
    labels: &Matrix,
    params: &TokenEnergyParams,
) -> Result<f64> {
    token_energy_with_grad(features, labels, params).map(|g| g.value)
}

pub fn sentence_energy(mention: &[f64], labels: &[f64], params: &LabelEnergyParams) -> Result<f64> {
    label_energy_with_grad(mention, labels, params).map(|g| g.value)
}

pub fn document_energy(
    pair: &PairFeature,
    labels: &[f64],
    params: &LabelEnergyParams,
) -> Result<f64> {
    label_energy_with_grad(&pair.0, labels, params).map(|g| g.value)
}

/// Euclidean projection of `v` onto the probability simplex.
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// Outcome of [`minimize_energy`].
#[derive(Clone, Debug)]
pub struct Descent {
    /// Lowest-energy iterate; every row lies on the simplex.
    pub labels: Matrix,
    pub energy: f64,
    /// Energy of every accepted iterate, starting with the uniform start.
    pub trace: Vec<f64>,
}

/// Projected gradient descent over row-wise simplex labels, starting from
/// uniform rows. A step is accepted only if it lowers the energy; otherwise
/// the step size is halved.
pub fn minimize_energy(
    objective: impl Fn(&Matrix) -> Result<(f64, Matrix)>,
    rows: usize,
    n_labels: usize,
    steps: usize,
    step_size: f64,
) -> Result<Descent> {
    if steps == 0 {
        return Err(Error::Config(
            "energy minimization needs at least one step".into(),
        ));
    }
    if step_size.is_nan() || step_size <= 0.0 {
        return Err(Error::Config("step size must be positive".into()));
    }
    let mut current = Matrix::filled(rows, n_labels, 1.0 / n_labels as f64);
    let (mut energy, mut grad) = objective(&current)?;
    let mut trace = vec![energy];
    let mut eta = step_size;
    for _ in 0..steps {
        let mut candidate = Matrix::zeros(rows, n_labels);
        for r in 0..rows {
            let stepped: Vec<f64> = current
                .row(r)
                .iter()
                .zip(grad.row(r))
                .map(|(y, g)| y - eta * g)
                .collect();
            candidate
                .row_mut(r)
                .copy_from_slice(&project_to_simplex(&stepped));
        }
        let (e, g) = objective(&candidate)?;
        if e < energy {
            current = candidate;
            energy = e;
            grad = g;
            trace.push(e);
        } else {
            eta *= 0.5;
        }
    }
    Ok(Descent {
        labels: current,
        energy,
        trace,
    })
}

pub fn minimize_token_energy(
    features: &TokenFeatures,
    params: &TokenEnergyParams,
    steps: usize,
    step_size: f64,
) -> Result<Descent> {
    minimize_energy(
        |y| token_energy_with_grad(features, y, params).map(|g| (g.value, g.labels)),
        features.0.rows(),
        params.labels(),
        steps,
        step_size,
    )
}

/// Energy-minimizing relaxed label vector for a sentence- or document-level
/// input (`mention` embedding or flattened pair feature).
pub fn minimize_label_energy(
    features: &[f64],
    params: &LabelEnergyParams,
    steps: usize,
    step_size: f64,
) -> Result<Descent> {
    minimize_energy(
        |y| label_energy_with_grad(features, y.row(0), params).map(|g| (g.value, g.labels)),
        1,
        params.labels(),
        steps,
        step_size,
    )
}
