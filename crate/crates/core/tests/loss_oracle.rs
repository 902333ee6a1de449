//! Level losses recomputed with plain loops.

#![allow(clippy::needless_range_loop)]

use event_energy::corpus::{synthesize_corpus, SynthConfig};
use event_energy::energy::{EnergyParams, LabelEnergyParams, TokenEnergyParams};
use event_energy::losses::{hinge_loss_level, structured_cost, Level, LossWeights};
use event_energy::model::{joint_loss, Batch, Model, ModelConfig};
use event_energy::tensor::Matrix;
use event_energy::trainer::build_vocab;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn softplus(x: f64) -> f64 {
    (1.0 + x.exp()).ln()
}

fn token_energy_at(x: &Matrix, y: &[Vec<f64>], n: usize, p: &TokenEnergyParams) -> f64 {
    let k = p.labels();
    let mut prev = vec![0.0; k];
    if n == 0 {
        prev[k - 1] = 1.0;
    } else {
        prev.clone_from(&y[n - 1]);
    }
    let mut local = 0.0;
    for a in 0..k {
        let mut s = 0.0;
        for c in 0..x.cols() {
            s += p.emission.get(a, c) * x.get(n, c);
        }
        local += y[n][a] * s;
    }
    let mut trans = 0.0;
    for a in 0..k {
        for b in 0..k {
            trans += prev[a] * p.transition.get(a, b) * y[n][b];
        }
    }
    -(local + trans)
}

fn label_energy(x: &[f64], y: &[f64], p: &LabelEnergyParams) -> f64 {
    let k = y.len();
    let mut local = 0.0;
    for a in 0..k {
        for (c, xc) in x.iter().enumerate() {
            local += y[a] * p.emission.get(a, c) * xc;
        }
    }
    let mut label = 0.0;
    for a in 0..k {
        let mut z = 0.0;
        for b in 0..k {
            z += p.interaction.get(a, b) * y[b];
        }
        label += p.label_weights.get(0, a) * softplus(z);
    }
    -(local + label)
}

fn one_hot(g: usize, k: usize) -> Vec<f64> {
    (0..k).map(|i| f64::from(u8::from(i == g))).collect()
}

fn reference(
    level: Level,
    x: &Matrix,
    pred: &Matrix,
    gold: &[usize],
    e: &EnergyParams,
    mu: f64,
) -> (Vec<f64>, Vec<f64>, f64) {
    let k = pred.cols();
    let p_rows: Vec<Vec<f64>> = (0..pred.rows()).map(|r| pred.row(r).to_vec()).collect();
    let g_rows: Vec<Vec<f64>> = gold.iter().map(|&g| one_hot(g, k)).collect();
    let mut hinge = Vec::new();
    let mut ce = Vec::new();
    for r in 0..pred.rows() {
        let delta: f64 = p_rows[r]
            .iter()
            .zip(&g_rows[r])
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        let (ep, eg) = match level {
            Level::Token => (
                token_energy_at(x, &p_rows, r, &e.token),
                token_energy_at(x, &g_rows, r, &e.token),
            ),
            Level::Sentence => (
                label_energy(x.row(r), &p_rows[r], &e.sentence),
                label_energy(x.row(r), &g_rows[r], &e.sentence),
            ),
            Level::Document => (
                label_energy(x.row(r), &p_rows[r], &e.document),
                label_energy(x.row(r), &g_rows[r], &e.document),
            ),
        };
        hinge.push((delta - ep + eg).max(0.0));
        ce.push(-p_rows[r][gold[r]].ln());
    }
    let total = hinge.iter().sum::<f64>() + mu * ce.iter().sum::<f64>();
    (hinge, ce, total)
}

fn random_params(d: usize, n_e: usize, n_r: usize, rng: &mut ChaCha8Rng) -> EnergyParams {
    let mut m = |r, c| Matrix::random_normal(r, c, 0.7, rng);
    EnergyParams {
        token: TokenEnergyParams {
            emission: m(n_e + 2, d),
            transition: m(n_e + 2, n_e + 2),
        },
        sentence: LabelEnergyParams {
            emission: m(n_e, d),
            label_weights: m(1, n_e),
            interaction: m(n_e, n_e),
        },
        document: LabelEnergyParams {
            emission: m(n_r, 3 * d),
            label_weights: m(1, n_r),
            interaction: m(n_r, n_r),
        },
    }
}

fn simplex_rows(rows: usize, k: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let mut m = Matrix::zeros(rows, k);
    for r in 0..rows {
        let v: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
        let s: f64 = v.iter().sum();
        for (c, x) in v.iter().enumerate() {
            m.set(r, c, x / s);
        }
    }
    m
}

#[test]
fn level_losses_match_loop_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..300 {
        let d = rng.random_range(2..=6);
        let (n_e, n_r) = (rng.random_range(2..=5), rng.random_range(2..=4));
        let e = random_params(d, n_e, n_r, &mut rng);
        for level in [Level::Token, Level::Sentence, Level::Document] {
            let (rows, width, k) = match level {
                Level::Token => (rng.random_range(1..=7), d, n_e + 2),
                Level::Sentence => (rng.random_range(1..=5), d, n_e),
                Level::Document => (rng.random_range(1..=5), 3 * d, n_r),
            };
            let x = Matrix::random_normal(rows, width, 1.0, &mut rng);
            let pred = simplex_rows(rows, k, &mut rng);
            let gold: Vec<usize> = (0..rows).map(|_| rng.random_range(0..k)).collect();
            let mu = rng.random_range(0.0..2.0);
            let got = hinge_loss_level(level, &x, &pred, &gold, &e, mu).unwrap();
            let (hinge, ce, total) = reference(level, &x, &pred, &gold, &e, mu);
            for (a, b) in got.hinge.iter().zip(&hinge).chain(got.ce.iter().zip(&ce)) {
                assert!(
                    (a - b).abs() <= 1e-9 * b.abs().max(1.0),
                    "{level:?}: {a} vs {b}"
                );
            }
            assert!((got.total - total).abs() <= 1e-9 * total.abs().max(1.0));
        }
    }
}

#[test]
fn structured_cost_matches_loop_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..500 {
        let k = rng.random_range(1..=9);
        let a: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
        let b: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut want = 0.0;
        for i in 0..k {
            want += (a[i] - b[i]) * (a[i] - b[i]);
        }
        assert!((structured_cost(&a, &b).unwrap() - want).abs() < 1e-12);
    }
    assert!(structured_cost(&[1.0], &[1.0, 0.0]).is_err());
}

#[test]
fn joint_loss_is_the_weighted_sum_of_levels() {
    let (docs, spaces) = synthesize_corpus(&SynthConfig {
        n_docs: 4,
        n_classes: 4,
        n_relations: 3,
        vocab_size: 30,
        mentions_per_doc: 4,
        seed: 1,
    })
    .unwrap();
    let model = Model::new(
        ModelConfig {
            embed_dim: 6,
            seed: 2,
            ..ModelConfig::default()
        },
        spaces,
        build_vocab(&docs),
    )
    .unwrap();
    let refs: Vec<_> = docs.iter().collect();
    let batch = Batch::new(&refs, &model, 40).unwrap();
    let base = LossWeights {
        l2_coeff: 0.0,
        ..LossWeights::default()
    };
    let levels: Vec<_> = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
        .into_iter()
        .map(|l| joint_loss(&model, &batch, &base.clone().with_lambdas(l)).total)
        .collect();
    let lambdas = [0.3, 1.7, 2.5];
    let mixed = joint_loss(&model, &batch, &base.clone().with_lambdas(lambdas));
    let want: f64 = lambdas.iter().zip(&levels).map(|(l, v)| l * v).sum();
    assert!((mixed.total - want).abs() < 1e-9 * want.abs().max(1.0));
    let token_only = joint_loss(&model, &batch, &base.with_lambdas([1.0, 0.0, 0.0]));
    assert!((token_only.total - token_only.token).abs() < 1e-12);
    let w = mixed.token * lambdas[0] + mixed.sentence * lambdas[1] + mixed.document * lambdas[2];
    assert!((mixed.total - w).abs() < 1e-9 * w.abs().max(1.0));
}
