//! Browser demo for `event-energy`.
//!
//! The exports return JSON strings. The computations live in plain functions
//! so they run (and are tested) natively as well.

use event_energy::corpus::{synthesize_corpus, SynthConfig};
use event_energy::energy::{minimize_energy, sentence_energy_with_grad, LabelEnergyParams};
use event_energy::hypersphere::{measure, HypersphereSet};
use event_energy::pca::Pca2;
use event_energy::tensor::{argmax, Matrix};
use event_energy::trainer::{
    class_embeddings, evaluate, train, InferenceMode, Regime, Task, TrainConfig,
};
use event_energy::Result;
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Class decisions of the hypersphere measurement over a square grid.
#[derive(Debug, Serialize)]
pub struct Field {
    pub steps: usize,
    pub extent: f64,
    pub classes: usize,
    /// Row-major, `steps * steps`, top row first.
    pub argmax: Vec<usize>,
    pub confidence: Vec<f64>,
}

/// `centroids` holds 2-D points flattened as `x0, y0, x1, y1, ...`.
pub fn measure_field(centroids: &[f64], radius: f64, extent: f64, steps: usize) -> Result<Field> {
    if centroids.is_empty() || !centroids.len().is_multiple_of(2) {
        return Err(event_energy::Error::Shape(
            "centroids must be (x, y) pairs".into(),
        ));
    }
    let spheres = HypersphereSet::new(
        Matrix::from_vec(centroids.len() / 2, 2, centroids.to_vec()),
        radius,
    )?;
    let steps = steps.max(2);
    let mut field = Field {
        steps,
        extent,
        classes: spheres.num_classes(),
        argmax: Vec::with_capacity(steps * steps),
        confidence: Vec::with_capacity(steps * steps),
    };
    let coord = |i: usize| -extent + 2.0 * extent * i as f64 / (steps - 1) as f64;
    for row in 0..steps {
        for col in 0..steps {
            let p = measure(&[coord(col), coord(steps - 1 - row)], &spheres)?;
            let k = argmax(&p);
            field.argmax.push(k);
            field.confidence.push(p[k]);
        }
    }
    Ok(field)
}

/// Accepted iterates of energy descent over a three-label simplex.
#[derive(Debug, Serialize)]
pub struct Trajectory {
    pub points: Vec<Vec<f64>>,
    pub energies: Vec<f64>,
    /// Energy of each vertex (one-hot label).
    pub vertex_energies: Vec<f64>,
    pub label: usize,
}

/// A fixed three-label energy over 2-D inputs: each label's emission row
/// points 120 degrees apart, with a mild label interaction.
pub fn demo_energy() -> LabelEnergyParams {
    let dirs: Vec<f64> = (0..3)
        .flat_map(|k| {
            let a = std::f64::consts::FRAC_PI_2 + k as f64 * 2.0 * std::f64::consts::PI / 3.0;
            [2.0 * a.cos(), 2.0 * a.sin()]
        })
        .collect();
    LabelEnergyParams {
        emission: Matrix::from_vec(3, 2, dirs),
        label_weights: Matrix::from_vec(1, 3, vec![0.6, 0.6, 0.6]),
        interaction: Matrix::from_vec(
            3,
            3,
            vec![1.5, -0.8, -0.8, -0.8, 1.5, -0.8, -0.8, -0.8, 1.5],
        ),
    }
}

pub fn descent_trajectory(x: f64, y: f64, steps: usize, step_size: f64) -> Result<Trajectory> {
    let params = demo_energy();
    let input = [x, y];
    let calls = std::cell::RefCell::new(Vec::new());
    let descent = minimize_energy(
        |labels| {
            let g = sentence_energy_with_grad(&input, labels.row(0), &params)?;
            calls.borrow_mut().push((labels.row(0).to_vec(), g.value));
            Ok((g.value, g.labels))
        },
        1,
        3,
        steps,
        step_size,
    )?;
    // The minimizer keeps a candidate only if it lowers the energy, so the
    // accepted path is the running strict minimum of the evaluated points.
    let mut points = Vec::new();
    let mut energies: Vec<f64> = Vec::new();
    for (p, e) in calls.into_inner() {
        if energies.last().is_none_or(|&best| e < best) {
            points.push(p);
            energies.push(e);
        }
    }
    let vertex_energies = (0..3)
        .map(|k| {
            let mut y = [0.0; 3];
            y[k] = 1.0;
            sentence_energy_with_grad(&input, &y, &params).map(|g| g.value)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Trajectory {
        points,
        energies,
        vertex_energies,
        label: argmax(descent.labels.row(0)),
    })
}

#[derive(Debug, Serialize)]
pub struct ProjectedMention {
    pub x: f64,
    pub y: f64,
    pub class: usize,
}

#[derive(Debug, Serialize)]
pub struct TrainSummary {
    pub class_names: Vec<String>,
    /// Mean hinge per epoch: token, sentence, document.
    pub hinge: Vec<[f64; 3]>,
    pub event_f1: f64,
    pub ere_f1: f64,
    pub mentions: Vec<ProjectedMention>,
    pub centroids: Vec<[f64; 2]>,
}

pub fn train_demo(seed: u64, docs: usize, epochs: usize) -> Result<TrainSummary> {
    let (corpus, spaces) = synthesize_corpus(&SynthConfig {
        n_docs: docs.max(4),
        n_classes: 5,
        n_relations: 4,
        vocab_size: 60,
        mentions_per_doc: 5,
        seed,
    })?;
    let cfg = TrainConfig {
        lr: 1e-3,
        epochs: epochs.max(1),
        embed_dim: 16,
        regime: Regime::Uniform,
        seed,
        ..TrainConfig::default()
    };
    let outcome = train(&corpus, &[], &spaces, &cfg)?;
    let model = &outcome.checkpoint.model;
    let hinge = (0..outcome.log.epochs())
        .filter_map(|e| outcome.log.epoch_hinge(e))
        .map(|h| [h.token, h.sentence, h.document])
        .collect();
    let f1 = |task| -> Result<f64> {
        Ok(evaluate(
            &outcome.checkpoint,
            &corpus,
            task,
            InferenceMode::Classifier,
        )?[0]
            .f1)
    };

    let mut rows = Vec::new();
    let mut classes = Vec::new();
    for c in 0..spaces.num_classes() {
        let e = class_embeddings(model, &corpus, cfg.mention_cap, c)?;
        for r in 0..e.rows() {
            rows.push(e.row(r).to_vec());
            classes.push(c);
        }
    }
    let pca = Pca2::fit(&Matrix::from_rows(&rows))?;
    let mentions = rows
        .iter()
        .zip(classes)
        .map(|(r, class)| {
            let (x, y) = pca.project(r);
            ProjectedMention { x, y, class }
        })
        .collect();
    let centroids = (0..spaces.num_classes())
        .map(|c| {
            let (x, y) = pca.project(model.spheres.centroid(c));
            [x, y]
        })
        .collect();
    Ok(TrainSummary {
        class_names: spaces.event_classes().to_vec(),
        hinge,
        event_f1: f1(Task::Event)?,
        ere_f1: f1(Task::Ere)?,
        mentions,
        centroids,
    })
}

fn to_js<T: Serialize>(value: Result<T>) -> std::result::Result<String, JsError> {
    let value = value.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = measureField)]
pub fn measure_field_js(
    centroids: &[f64],
    radius: f64,
    extent: f64,
    steps: usize,
) -> std::result::Result<String, JsError> {
    to_js(measure_field(centroids, radius, extent, steps))
}

#[wasm_bindgen(js_name = descentTrajectory)]
pub fn descent_trajectory_js(
    x: f64,
    y: f64,
    steps: usize,
    step_size: f64,
) -> std::result::Result<String, JsError> {
    to_js(descent_trajectory(x, y, steps, step_size))
}

#[wasm_bindgen(js_name = trainDemo)]
pub fn train_demo_js(
    seed: u32,
    docs: usize,
    epochs: usize,
) -> std::result::Result<String, JsError> {
    to_js(train_demo(u64::from(seed), docs, epochs))
}
