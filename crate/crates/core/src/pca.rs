//! Two-component PCA for plot export.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::cluster::Points;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    /// One `(pc1, pc2)` pair per input point.
    pub coords: Vec<[f64; 2]>,
    pub explained_variance: [f64; 2],
    /// Share of total variance carried by each component.
    pub explained_ratio: [f64; 2],
}

/// Projects onto the two leading principal axes. Each axis is signed so
/// that its largest-magnitude loading is positive.
pub fn pca_2d<T: Scalar>(points: &Points<'_, T>) -> Result<Projection> {
    let n = points.len();
    let d = points.dim();
    if n < 2 {
        return Err(Error::InvalidArgument("PCA needs at least 2 points".into()));
    }
    if d < 2 {
        return Err(Error::InvalidArgument("PCA to 2 components needs dimension >= 2".into()));
    }
    let mut mean = vec![0.0f64; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(points.row(i)) {
            *m += v.widen();
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, d, |i, j| points.row(i)[j].widen() - mean[j]);
    let cov = (centered.transpose() * &centered) / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();

    let mut axes = Vec::with_capacity(2);
    let mut variance = [0.0; 2];
    for (slot, &idx) in order.iter().take(2).enumerate() {
        let mut axis: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
        let lead = axis
            .iter()
            .copied()
            .fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        if lead < 0.0 {
            axis.iter_mut().for_each(|v| *v = -*v);
        }
        axes.push(axis);
        variance[slot] = eig.eigenvalues[idx].max(0.0);
    }
    let coords = (0..n)
        .map(|i| {
            let row = centered.row(i);
            let mut out = [0.0; 2];
            for (o, axis) in out.iter_mut().zip(&axes) {
                *o = row.iter().zip(axis).map(|(a, b)| a * b).sum();
            }
            out
        })
        .collect();
    let ratio = if total > 0.0 {
        [variance[0] / total, variance[1] / total]
    } else {
        [0.0, 0.0]
    };
    Ok(Projection {
        coords,
        explained_variance: variance,
        explained_ratio: ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn points_on_a_line() {
        // along (1, 1, 0) with a small offset in z
        let data = [0.0, 0.0, 0.0, 1.0, 1.0, 0.1, 2.0, 2.0, 0.0, 3.0, 3.0, 0.1];
        let pts = Points::new(&data[..], 3).unwrap();
        let p = pca_2d(&pts).unwrap();
        assert!(p.explained_ratio[0] > 0.99);
        assert!(p.coords[3][0] > p.coords[0][0]);
        assert_abs_diff_eq!(p.coords[3][0] - p.coords[0][0], 3.0 * 2f64.sqrt(), epsilon = 1e-2);
        assert_eq!(p, pca_2d(&pts).unwrap());
    }

    #[test]
    fn rejects_tiny_inputs() {
        let one = [1.0, 2.0];
        assert!(pca_2d(&Points::new(&one[..], 2).unwrap()).is_err());
        let flat = [1.0, 2.0, 3.0];
        assert!(pca_2d(&Points::new(&flat[..], 1).unwrap()).is_err());
    }
}
