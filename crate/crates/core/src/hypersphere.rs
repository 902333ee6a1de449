//! Event classes as hyperspheres: one learnable centroid per class and a
//! radius `γ`.
//!
//! The measurement of a mention embedding `f` against class `i` is a softmax
//! over classes of the negated hinge distance `[‖P_i − f‖ − γ]₊`, so every
//! point on or inside a sphere gets the maximal logit 0 for that class.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{euclidean, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{softmax, Matrix};

pub const DEFAULT_RADIUS: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypersphereSet {
    /// `|E| x d`, one row per event class (None included).
    pub centroids: Matrix,
    /// `1 x |E|`. All equal to `γ` unless radii are trainable.
    pub radii: Matrix,
    /// When set the radii are trained along with the centroids.
    pub trainable_radius: bool,
}

impl HypersphereSet {
    pub fn new(centroids: Matrix, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::Config(format!(
                "radius must be positive, got {radius}"
            )));
        }
        if !centroids.is_finite() {
            return Err(Error::Validation("non-finite centroid".into()));
        }
        let radii = Matrix::filled(1, centroids.rows(), radius);
        Ok(Self {
            centroids,
            radii,
            trainable_radius: false,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.centroids.rows()
    }

    pub fn dim(&self) -> usize {
        self.centroids.cols()
    }

    pub fn radius(&self, class: usize) -> f64 {
        self.radii.get(0, class)
    }

    pub fn centroid(&self, class: usize) -> &[f64] {
        self.centroids.row(class)
    }
}

/// Centroids drawn i.i.d. standard normal and scaled to unit norm.
///
/// # Panics
/// If `n_classes == 0` or `d < 2`.
pub fn init_centroids<R: Rng + ?Sized>(n_classes: usize, d: usize, rng: &mut R) -> HypersphereSet {
    assert!(
        n_classes >= 1 && d >= 2,
        "need at least one class and d >= 2"
    );
    let mut centroids = Matrix::random_normal(n_classes, d, 1.0, rng);
    for r in 0..n_classes {
        let row = centroids.row_mut(r);
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        row.iter_mut().for_each(|x| *x /= norm);
    }
    HypersphereSet::new(centroids, DEFAULT_RADIUS).expect("unit centroids are valid")
}

/// `max(0, ‖P_class − f‖₂ − γ_class)`.
pub fn hinge_distance(embedding: &[f64], class: usize, spheres: &HypersphereSet) -> Result<f64> {
    if class >= spheres.num_classes() {
        return Err(Error::Shape(format!("class {class} out of range")));
    }
    if embedding.len() != spheres.dim() {
        return Err(Error::Shape(format!(
            "embedding length {} vs centroid dimension {}",
            embedding.len(),
            spheres.dim()
        )));
    }
    let d = euclidean(embedding, spheres.centroid(class));
    Ok((d - spheres.radius(class)).max(0.0))
}

/// Class probabilities `S(X, P_i)` for one mention embedding.
pub fn measure(embedding: &[f64], spheres: &HypersphereSet) -> Result<Vec<f64>> {
    let logits = (0..spheres.num_classes())
        .map(|c| hinge_distance(embedding, c, spheres).map(|h| -h))
        .collect::<Result<Vec<_>>>()?;
    Ok(softmax(&logits))
}

#[derive(Clone, Copy, Debug)]
pub struct SphereVars {
    pub centroids: Var,
    pub radii: Var,
}

impl SphereVars {
    pub fn register(spheres: &HypersphereSet, tape: &mut Tape) -> Self {
        SphereVars {
            centroids: tape.leaf(spheres.centroids.clone()),
            radii: tape.leaf(spheres.radii.clone()),
        }
    }
}

/// Graph returning `(hinge distances K x |E|, probabilities K x |E|)`.
pub fn measure_graph(tape: &mut Tape, vars: &SphereVars, mentions: Var) -> (Var, Var) {
    let hinge = tape.hinge_dist(mentions, vars.centroids, vars.radii);
    let logits = tape.neg(hinge);
    let probs = tape.softmax_rows(logits);
    (hinge, probs)
}
