//! Oracles shared by the integration tests and the acceptance runner.

#![allow(dead_code)]

use event_energy::autodiff::Tape;
use event_energy::corpus::{synthesize_corpus, Document, LabelSpaces, Split, SynthConfig};
use event_energy::encoders::{PairFeature, TokenFeatures};
use event_energy::energy::{
    document_energy_with_grad, sentence_energy_with_grad, token_energy_with_grad, EnergyParams,
    LabelEnergyParams, TokenEnergyParams,
};
use event_energy::losses::{hinge_loss_level_with_grad, structured_cost, Level, StructuredCost};
use event_energy::tensor::{softmax, Matrix};
use event_energy::trainer::{Regime, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;

/// Central differences of `f` at `x`.
pub fn numeric_grad(f: &dyn Fn(&Matrix) -> f64, x: &Matrix, h: f64) -> Matrix {
    let mut g = Matrix::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        g.data_mut()[i] = (up - down) / (2.0 * h);
    }
    g
}

/// `‖a − n‖ / max(‖a‖, ‖n‖)`, and 0 when both vanish.
pub fn relative_error(analytic: &Matrix, numeric: &Matrix) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    let diff = analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let scale = analytic
        .sum_squares()
        .sqrt()
        .max(numeric.sum_squares().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

pub fn random_simplex_rows<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let logits = Matrix::random_normal(rows, cols, 1.0, rng);
    let data: Vec<Vec<f64>> = (0..rows).map(|r| softmax(logits.row(r))).collect();
    Matrix::from_rows(&data)
}

pub fn random_energy<R: Rng>(d: usize, n_e: usize, n_r: usize, rng: &mut R) -> EnergyParams {
    let t = n_e + 2;
    EnergyParams {
        token: TokenEnergyParams {
            emission: Matrix::random_normal(t, d, 1.0, rng),
            transition: Matrix::random_normal(t, t, 1.0, rng),
        },
        sentence: LabelEnergyParams {
            emission: Matrix::random_normal(n_e, d, 1.0, rng),
            label_weights: Matrix::random_normal(1, n_e, 1.0, rng),
            interaction: Matrix::random_normal(n_e, n_e, 1.0, rng),
        },
        document: LabelEnergyParams {
            emission: Matrix::random_normal(n_r, 3 * d, 1.0, rng),
            label_weights: Matrix::random_normal(1, n_r, 1.0, rng),
            interaction: Matrix::random_normal(n_r, n_r, 1.0, rng),
        },
    }
}

/// Worst relative error over a batch of gradient comparisons.
#[derive(Clone, Copy, Debug, Default)]
pub struct GradReport {
    pub instances: usize,
    pub comparisons: usize,
    pub worst: f64,
}

impl GradReport {
    fn record(&mut self, analytic: &Matrix, numeric: &Matrix) {
        self.comparisons += 1;
        self.worst = self.worst.max(relative_error(analytic, numeric));
    }

    pub fn passed(&self, min_instances: usize) -> bool {
        self.instances >= min_instances && self.worst <= FD_TOLERANCE
    }
}

struct Dims {
    d: usize,
    l: usize,
    n_e: usize,
    n_r: usize,
}

fn dims<R: Rng>(rng: &mut R) -> Dims {
    Dims {
        d: rng.random_range(2..=8),
        l: rng.random_range(1..=6),
        n_e: rng.random_range(2..=4),
        n_r: rng.random_range(2..=3),
    }
}

/// Token energy against features, labels, V1 and W1.
pub fn check_token_energy(instances: usize, seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = GradReport::default();
    for _ in 0..instances {
        let Dims { d, l, n_e, .. } = dims(&mut rng);
        let p = random_energy(d, n_e, 2, &mut rng).token;
        let f = Matrix::random_normal(l, d, 1.0, &mut rng);
        let y = random_simplex_rows(l, n_e + 2, &mut rng);
        let g = token_energy_with_grad(&TokenFeatures(f.clone()), &y, &p).unwrap();
        let e = |f: &Matrix, y: &Matrix, p: &TokenEnergyParams| {
            token_energy_with_grad(&TokenFeatures(f.clone()), y, p)
                .unwrap()
                .value
        };
        rep.record(&g.features, &numeric_grad(&|x| e(x, &y, &p), &f, FD_STEP));
        rep.record(&g.labels, &numeric_grad(&|x| e(&f, x, &p), &y, FD_STEP));
        let with = |em: &Matrix, tr: &Matrix| TokenEnergyParams {
            emission: em.clone(),
            transition: tr.clone(),
        };
        rep.record(
            &g.params[0],
            &numeric_grad(
                &|x| e(&f, &y, &with(x, &p.transition)),
                &p.emission,
                FD_STEP,
            ),
        );
        rep.record(
            &g.params[1],
            &numeric_grad(
                &|x| e(&f, &y, &with(&p.emission, x)),
                &p.transition,
                FD_STEP,
            ),
        );
        rep.instances += 1;
    }
    rep
}

type LabelEnergyFn =
    dyn Fn(&[f64], &[f64], &LabelEnergyParams) -> event_energy::energy::EnergyGradients;

fn check_label_energy(
    rep: &mut GradReport,
    input: &Matrix,
    y: &Matrix,
    p: &LabelEnergyParams,
    eval: &LabelEnergyFn,
) {
    let g = eval(input.row(0), y.row(0), p);
    let e = |x: &Matrix, y: &Matrix, p: &LabelEnergyParams| eval(x.row(0), y.row(0), p).value;
    rep.record(&g.features, &numeric_grad(&|x| e(x, y, p), input, FD_STEP));
    rep.record(&g.labels, &numeric_grad(&|x| e(input, x, p), y, FD_STEP));
    let fields = [&p.emission, &p.label_weights, &p.interaction];
    for (k, field) in fields.iter().enumerate() {
        let numeric = numeric_grad(
            &|x| {
                let mut q = p.clone();
                *[&mut q.emission, &mut q.label_weights, &mut q.interaction][k] = x.clone();
                e(input, y, &q)
            },
            field,
            FD_STEP,
        );
        rep.record(&g.params[k], &numeric);
    }
}

/// Sentence energy against the mention embedding, labels, V2, w2 and W2.
pub fn check_sentence_energy(instances: usize, seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = GradReport::default();
    for _ in 0..instances {
        let Dims { d, n_e, .. } = dims(&mut rng);
        let p = random_energy(d, n_e, 2, &mut rng).sentence;
        let x = Matrix::random_normal(1, d, 1.0, &mut rng);
        let y = random_simplex_rows(1, n_e, &mut rng);
        check_label_energy(&mut rep, &x, &y, &p, &|f, y, p| {
            sentence_energy_with_grad(f, y, p).unwrap()
        });
        rep.instances += 1;
    }
    rep
}

/// Document energy against the pair feature, labels, V3, w3 and W3.
pub fn check_document_energy(instances: usize, seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = GradReport::default();
    for _ in 0..instances {
        let Dims { d, n_r, .. } = dims(&mut rng);
        let p = random_energy(d, 2, n_r, &mut rng).document;
        let x = Matrix::random_normal(1, 3 * d, 1.0, &mut rng);
        let y = random_simplex_rows(1, n_r, &mut rng);
        check_label_energy(&mut rep, &x, &y, &p, &|f, y, p| {
            document_energy_with_grad(&PairFeature(f.to_vec()), y, p).unwrap()
        });
        rep.instances += 1;
    }
    rep
}

/// Hypersphere hinge distances against embeddings and centroids. Instances
/// whose finite-difference stencil crosses a sphere surface are redrawn.
pub fn check_hinge_distance(instances: usize, seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = GradReport::default();
    while rep.instances < instances {
        let Dims { d, n_e, .. } = dims(&mut rng);
        let k = rng.random_range(1..=4);
        let points = Matrix::random_normal(k, d, 1.5, &mut rng);
        let centroids = Matrix::random_normal(n_e, d, 1.0, &mut rng);
        let radii = Matrix::filled(1, n_e, 1.0);
        // random upstream weights so every entry of the hinge matrix matters
        let w = Matrix::random_normal(k, n_e, 1.0, &mut rng);
        let eval = |p: &Matrix, c: &Matrix| {
            let mut t = Tape::new();
            let (pv, cv, rv, wv) = (
                t.leaf(p.clone()),
                t.leaf(c.clone()),
                t.leaf(radii.clone()),
                t.leaf(w.clone()),
            );
            let h = t.hinge_dist(pv, cv, rv);
            let weighted = t.mul(h, wv);
            let s = t.sum_all(weighted);
            let grads = t.backward(s);
            let active: Vec<bool> = t.value(h).data().iter().map(|&v| v > 0.0).collect();
            (
                t.scalar(s),
                active,
                grads.get_or_zeros(&t, pv),
                grads.get_or_zeros(&t, cv),
            )
        };
        let (_, active, gp, gc) = eval(&points, &centroids);
        if straddles_kink(&points, &active, &|p| eval(p, &centroids).1)
            || straddles_kink(&centroids, &active, &|c| eval(&points, c).1)
        {
            continue;
        }
        rep.record(
            &gp,
            &numeric_grad(&|p| eval(p, &centroids).0, &points, FD_STEP),
        );
        rep.record(
            &gc,
            &numeric_grad(&|c| eval(&points, c).0, &centroids, FD_STEP),
        );
        rep.instances += 1;
    }
    rep
}

/// Whether perturbing any coordinate by ±h flips which hinge terms are active.
fn straddles_kink(x: &Matrix, base: &[bool], active: &dyn Fn(&Matrix) -> Vec<bool>) -> bool {
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        for s in [FD_STEP, -FD_STEP] {
            probe.data_mut()[i] = orig + s;
            if active(&probe) != base {
                return true;
            }
        }
        probe.data_mut()[i] = orig;
    }
    false
}

/// `Δ` against its prediction argument, with the analytic gradient read from
/// a zero-energy, zero-CE loss and the numeric one from `structured_cost`.
pub fn check_structured_cost(instances: usize, seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = GradReport::default();
    for _ in 0..instances {
        let Dims { d, n_e, .. } = dims(&mut rng);
        let mut energy = random_energy(d, n_e, 2, &mut rng);
        energy.sentence = LabelEnergyParams::zeros(n_e, d);
        let pred = random_simplex_rows(1, n_e, &mut rng);
        let gold = rng.random_range(0..n_e);
        let gold_row = Matrix::one_hot(&[gold], n_e);
        let x = Matrix::random_normal(1, d, 1.0, &mut rng);
        let g = hinge_loss_level_with_grad(
            Level::Sentence,
            &x,
            &pred,
            &[gold],
            &energy,
            0.0,
            StructuredCost::SquaredL2,
        )
        .unwrap();
        let numeric = numeric_grad(
            &|p| structured_cost(p.row(0), gold_row.row(0)).unwrap(),
            &pred,
            FD_STEP,
        );
        rep.record(&g.pred, &numeric);
        rep.instances += 1;
    }
    rep
}

/// Hinge plus CE loss of one level against its inputs and predictions.
pub fn check_hinge_loss(level: Level, instances: usize, seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = GradReport::default();
    while rep.instances < instances {
        let Dims { d, l, n_e, n_r } = dims(&mut rng);
        let energy = random_energy(d, n_e, n_r, &mut rng);
        let (rows, width, labels) = match level {
            Level::Token => (l, d, n_e + 2),
            Level::Sentence => (rng.random_range(1..=4), d, n_e),
            Level::Document => (rng.random_range(1..=4), 3 * d, n_r),
        };
        let x = Matrix::random_normal(rows, width, 1.0, &mut rng);
        let pred = random_simplex_rows(rows, labels, &mut rng);
        let gold: Vec<usize> = (0..rows).map(|_| rng.random_range(0..labels)).collect();
        let mu = rng.random_range(0.0..2.0);
        let eval = |x: &Matrix, p: &Matrix| {
            hinge_loss_level_with_grad(level, x, p, &gold, &energy, mu, StructuredCost::SquaredL2)
                .unwrap()
        };
        let base = eval(&x, &pred);
        let active = |l: &event_energy::losses::LevelLoss| {
            l.hinge.iter().map(|&h| h > 0.0).collect::<Vec<_>>()
        };
        let base_active = active(&base.loss);
        if straddles_kink(&x, &base_active, &|v| active(&eval(v, &pred).loss))
            || straddles_kink(&pred, &base_active, &|v| active(&eval(&x, v).loss))
        {
            continue;
        }
        rep.record(
            &base.inputs,
            &numeric_grad(&|v| eval(v, &pred).loss.total, &x, FD_STEP),
        );
        rep.record(
            &base.pred,
            &numeric_grad(&|v| eval(&x, v).loss.total, &pred, FD_STEP),
        );
        rep.instances += 1;
    }
    rep
}

/// TP/FP/FN by explicit case analysis over every instance.
pub fn brute_force_counts(
    pred: &[usize],
    gold: &[usize],
    excluded: &[usize],
) -> (usize, usize, usize) {
    let mut tp = 0;
    let mut fp = 0;
    let mut fn_ = 0;
    for i in 0..pred.len() {
        let p_ex = excluded.iter().any(|&e| e == pred[i]);
        let g_ex = excluded.iter().any(|&e| e == gold[i]);
        match (p_ex, g_ex, pred[i] == gold[i]) {
            (false, _, true) => tp += 1,
            (true, _, true) => {}
            (false, false, false) => {
                fp += 1;
                fn_ += 1;
            }
            (false, true, false) => fp += 1,
            (true, false, false) => fn_ += 1,
            (true, true, false) => {}
        }
    }
    (tp, fp, fn_)
}

/// The synthetic corpus and training setup of the end-to-end experiment.
pub fn end_to_end_corpus() -> (Vec<Document>, LabelSpaces) {
    synthesize_corpus(&SynthConfig {
        n_docs: 200,
        n_classes: 5,
        n_relations: 4,
        vocab_size: 100,
        mentions_per_doc: 6,
        seed: 7,
    })
    .unwrap()
}

pub fn end_to_end_config() -> TrainConfig {
    TrainConfig {
        lr: 1e-3,
        epochs: 30,
        batch_size: 8,
        embed_dim: 32,
        regime: Regime::Uniform,
        seed: 7,
        valid_fraction: 0.0,
        test_fraction: 0.2,
        ..TrainConfig::default()
    }
}

pub fn split(cfg: &TrainConfig, docs: &[Document]) -> (Vec<Document>, Vec<Document>) {
    (
        cfg.split_docs(docs, Split::Train),
        cfg.split_docs(docs, Split::Test),
    )
}
