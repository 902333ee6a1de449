//! Two-component PCA for the hypersphere plots.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct Pca2 {
    pub mean: Vec<f64>,
    /// Unit principal axes, largest variance first.
    pub axes: [Vec<f64>; 2],
    pub explained_variance: [f64; 2],
}

impl Pca2 {
    /// Fits on the rows of `points`. Each axis is sign-normalized so its
    /// largest-magnitude component is positive.
    pub fn fit(points: &Matrix) -> Result<Self> {
        let (n, d) = points.shape();
        if n == 0 {
            return Err(Error::Plot("PCA needs at least one point".into()));
        }
        if d < 2 {
            return Err(Error::Plot(
                "PCA to 2-D needs at least two dimensions".into(),
            ));
        }
        let mut mean = vec![0.0; d];
        for r in 0..n {
            for (m, x) in mean.iter_mut().zip(points.row(r)) {
                *m += x / n as f64;
            }
        }
        let centered = DMatrix::from_fn(n, d, |r, c| points.get(r, c) - mean[c]);
        let cov = centered.transpose() * &centered / (n.max(2) - 1) as f64;
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .total_cmp(&eig.eigenvalues[a])
                .then(a.cmp(&b))
        });
        let axis = |k: usize| {
            let mut v: Vec<f64> = eig.eigenvectors.column(order[k]).iter().copied().collect();
            let big = v
                .iter()
                .copied()
                .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
            if big < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        };
        Ok(Self {
            mean,
            axes: [axis(0), axis(1)],
            explained_variance: [
                eig.eigenvalues[order[0]].max(0.0),
                eig.eigenvalues[order[1]].max(0.0),
            ],
        })
    }

    pub fn project(&self, point: &[f64]) -> (f64, f64) {
        let c: Vec<f64> = point.iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        let dot = |a: &[f64]| a.iter().zip(&c).map(|(x, y)| x * y).sum::<f64>();
        (dot(&self.axes[0]), dot(&self.axes[1]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_the_dominant_direction() {
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|i| {
                let t = i as f64 - 10.0;
                vec![t, 0.1 * (i % 3) as f64, 0.0]
            })
            .collect();
        let pca = Pca2::fit(&Matrix::from_rows(&rows)).unwrap();
        assert!((pca.axes[0][0] - 1.0).abs() < 1e-6);
        assert!(pca.explained_variance[0] > pca.explained_variance[1]);
    }

    #[test]
    fn projection_preserves_distances_within_the_plane() {
        let rows = vec![
            vec![1.0, 2.0, 0.0],
            vec![4.0, 6.0, 0.0],
            vec![0.0, 1.0, 0.0],
        ];
        let pca = Pca2::fit(&Matrix::from_rows(&rows)).unwrap();
        let (a, b) = (pca.project(&rows[0]), pca.project(&rows[1]));
        let d2 = ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
        assert!((d2 - 5.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(Pca2::fit(&Matrix::zeros(0, 3)).is_err());
        assert!(Pca2::fit(&Matrix::zeros(3, 1)).is_err());
        let one = Pca2::fit(&Matrix::from_rows(&[vec![1.0, 1.0]])).unwrap();
        assert_eq!(one.project(&[1.0, 1.0]), (0.0, 0.0));
    }
}
