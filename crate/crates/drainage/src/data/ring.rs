//! Synthetic 2D datasets and the fixed radial-basis feature expansion.

use super::LabeledDataset;
use crate::mat::Matrix;
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::f64::consts::PI;

/// Fixed Gaussian kernel feature map Φ(x) = (exp(−γ‖x − q‖²))_q over a set
/// of centers.
#[derive(Debug, Clone)]
pub struct RbfExpansion {
    centers: Matrix,
    gamma: f64,
}

impl RbfExpansion {
    pub fn new(centers: Matrix, gamma: f64) -> Result<Self> {
        if centers.cols() != 2 {
            return Err(Error::ShapeMismatch(format!(
                "rbf centers must be 2D points, got width {}",
                centers.cols()
            )));
        }
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "rbf gamma must be finite and > 0, got {gamma}"
            )));
        }
        Ok(RbfExpansion { centers, gamma })
    }

    /// `grid × grid` mesh of centers spanning `[−span, span]²`. The standard
    /// configuration is a 20×20 mesh over `[−5, 5]²` with γ = 0.25.
    pub fn grid(grid: usize, span: f64, gamma: f64) -> Result<Self> {
        if grid < 2 {
            return Err(Error::InvalidParameter(format!(
                "rbf grid needs at least 2 points per side, got {grid}"
            )));
        }
        let mut rows = Vec::with_capacity(grid * grid);
        for i in 0..grid {
            for j in 0..grid {
                let step = 2.0 * span / (grid as f64 - 1.0);
                rows.push(vec![-span + i as f64 * step, -span + j as f64 * step]);
            }
        }
        Self::new(Matrix::from_rows(&rows)?, gamma)
    }

    pub fn num_centers(&self) -> usize {
        self.centers.rows()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn centers(&self) -> &Matrix {
        &self.centers
    }
}

/// Expands a 2D point into one Gaussian response per center; entries lie in
/// (0, 1].
pub fn rbf_expand(x: &[f64], expansion: &RbfExpansion) -> Vec<f64> {
    debug_assert_eq!(x.len(), 2);
    let mut out = Vec::with_capacity(expansion.num_centers());
    for i in 0..expansion.num_centers() {
        let q = expansion.centers.row(i);
        let dx = x[0] - q[0];
        let dy = x[1] - q[1];
        out.push((-expansion.gamma * (dx * dx + dy * dy)).exp());
    }
    out
}

/// Parameters for the ring toy dataset.
#[derive(Debug, Clone)]
pub struct RingSpec {
    pub n: usize,
    pub num_classes: usize,
    pub radius_mean: f64,
    pub radius_std: f64,
    pub relabel_prob: f64,
    pub seed: u64,
}

impl Default for RingSpec {
    fn default() -> Self {
        RingSpec {
            n: 2000,
            num_classes: 4,
            radius_mean: 3.0,
            radius_std: 0.5,
            relabel_prob: 0.5,
            seed: 0,
        }
    }
}

/// Points on a ring centered at the origin: radius Gaussian, angle uniform
/// within the class's sector (the sectors partition `[0, 2π)` equally, one
/// per class, assigned round-robin so classes are balanced). Points of class
/// 0 are relabeled to class 1 with probability `relabel_prob`; clean labels
/// are preserved.
pub fn make_ring_dataset(spec: &RingSpec) -> Result<LabeledDataset> {
    if spec.n == 0 {
        return Err(Error::InvalidParameter("ring dataset needs n > 0".into()));
    }
    if spec.num_classes < 2 {
        return Err(Error::InvalidParameter(
            "ring dataset needs at least 2 classes".into(),
        ));
    }
    if !(spec.radius_std.is_finite() && spec.radius_std > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "radius_std must be > 0, got {}",
            spec.radius_std
        )));
    }
    if !(0.0..=1.0).contains(&spec.relabel_prob) {
        return Err(Error::InvalidParameter(format!(
            "relabel_prob {} outside [0, 1]",
            spec.relabel_prob
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let radius = Normal::new(spec.radius_mean, spec.radius_std)
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let sector = 2.0 * PI / spec.num_classes as f64;

    let mut rows = Vec::with_capacity(spec.n);
    let mut clean = Vec::with_capacity(spec.n);
    let mut labels = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let class = i % spec.num_classes;
        let r = radius.sample(&mut rng);
        let theta = sector * (class as f64 + rng.gen::<f64>());
        rows.push(vec![r * theta.cos(), r * theta.sin()]);
        clean.push(class);
        let label = if class == 0 && rng.gen::<f64>() < spec.relabel_prob {
            1
        } else {
            class
        };
        labels.push(label);
    }

    let mut ds = LabeledDataset::new(Matrix::from_rows(&rows)?, labels, spec.num_classes)?;
    ds.clean_labels = Some(clean);
    Ok(ds)
}

/// Isotropic Gaussian blobs with centers equally spaced on a circle; the
/// 10-class variant serves as a stand-in for class-conditional noise
/// experiments.
pub fn make_blobs_dataset(
    n: usize,
    num_classes: usize,
    center_radius: f64,
    std: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if n == 0 || num_classes < 2 {
        return Err(Error::InvalidParameter(
            "blobs need n > 0 and at least 2 classes".into(),
        ));
    }
    if !(std.is_finite() && std > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "blob std must be > 0, got {std}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, std).map_err(|e| Error::InvalidParameter(e.to_string()))?;

    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % num_classes;
        let angle = 2.0 * PI * class as f64 / num_classes as f64;
        rows.push(vec![
            center_radius * angle.cos() + noise.sample(&mut rng),
            center_radius * angle.sin() + noise.sample(&mut rng),
        ]);
        labels.push(class);
    }
    LabeledDataset::new(Matrix::from_rows(&rows)?, labels, num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rbf_is_one_at_a_center() {
        let exp = RbfExpansion::grid(20, 5.0, 0.25).unwrap();
        assert_eq!(exp.num_centers(), 400);
        let q = exp.centers().row(137).to_vec();
        let phi = rbf_expand(&q, &exp);
        assert_eq!(phi[137], 1.0);
        assert!(phi.iter().all(|&v| v > 0.0 && v <= 1.0));
    }

    #[test]
    fn rbf_hand_evaluation() {
        let centers = Matrix::from_rows(&[vec![2.0, 0.0]]).unwrap();
        let exp = RbfExpansion::new(centers, 0.25).unwrap();
        let phi = rbf_expand(&[0.0, 0.0], &exp);
        assert!((phi[0] - 0.36787944117144233).abs() < 1e-15);
    }

    #[test]
    fn rbf_decreases_with_distance() {
        let centers = Matrix::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let exp = RbfExpansion::new(centers, 0.25).unwrap();
        let mut last = f64::INFINITY;
        for k in 0..10 {
            let v = rbf_expand(&[k as f64 * 0.5, 0.0], &exp)[0];
            assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn ring_without_relabel_matches_clean() {
        let ds = make_ring_dataset(&RingSpec {
            relabel_prob: 0.0,
            ..RingSpec::default()
        })
        .unwrap();
        assert_eq!(&ds.labels, ds.clean_labels.as_ref().unwrap());
    }

    #[test]
    fn ring_relabel_fraction_concentrates() {
        let ds = make_ring_dataset(&RingSpec {
            n: 10_000,
            seed: 4,
            ..RingSpec::default()
        })
        .unwrap();
        let clean = ds.clean_labels.as_ref().unwrap();
        let class0 = clean.iter().filter(|&&c| c == 0).count();
        let relabeled = clean
            .iter()
            .zip(&ds.labels)
            .filter(|(&c, &l)| c == 0 && l == 1)
            .count();
        let frac = relabeled as f64 / class0 as f64;
        assert!((0.47..=0.53).contains(&frac), "relabel fraction {frac}");
    }

    #[test]
    fn ring_sectors_are_disjoint_quadrants() {
        let ds = make_ring_dataset(&RingSpec {
            n: 400,
            num_classes: 4,
            relabel_prob: 0.0,
            seed: 8,
            ..RingSpec::default()
        })
        .unwrap();
        for i in 0..ds.len() {
            let p = ds.features.row(i);
            let mut theta = p[1].atan2(p[0]);
            if theta < 0.0 {
                theta += 2.0 * PI;
            }
            // Gaussian radius can be negative (flipping the angle by π), but
            // with mean 3 and std 0.5 that is a >6σ event; quadrant must
            // match the label.
            assert_eq!((theta / (PI / 2.0)).floor() as usize % 4, ds.labels[i]);
        }
    }

    #[test]
    fn ring_is_deterministic() {
        let spec = RingSpec {
            n: 100,
            seed: 12,
            ..RingSpec::default()
        };
        let a = make_ring_dataset(&spec).unwrap();
        let b = make_ring_dataset(&spec).unwrap();
        assert_eq!(a.features, b.features);
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn ring_rejects_bad_parameters() {
        assert!(make_ring_dataset(&RingSpec {
            n: 0,
            ..RingSpec::default()
        })
        .is_err());
        assert!(make_ring_dataset(&RingSpec {
            radius_std: 0.0,
            ..RingSpec::default()
        })
        .is_err());
        assert!(make_ring_dataset(&RingSpec {
            relabel_prob: 1.5,
            ..RingSpec::default()
        })
        .is_err());
    }

    #[test]
    fn blobs_are_balanced() {
        let ds = make_blobs_dataset(1000, 10, 6.0, 0.8, 3).unwrap();
        for c in 0..10 {
            assert_eq!(ds.labels.iter().filter(|&&l| l == c).count(), 100);
        }
    }
}
