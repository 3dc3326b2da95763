//! Weighted similarity registration between corresponded point sets.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::camera::{orthonormalize, Pose};

#[derive(Debug, Error, PartialEq)]
pub enum ProcrustesError {
    #[error("source has {source_len} points, target {target}, weights {weights}")]
    Length { source_len: usize, target: usize, weights: usize },
    #[error("only {0} points carry positive weight; at least 3 are required")]
    TooFew(usize),
    #[error("point configuration is degenerate (covariance rank below 2)")]
    Degenerate,
}

/// `p ↦ scale · R · p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Similarity {
    pub fn identity() -> Self {
        Self { scale: 1.0, rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * p) + self.translation
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Similarity) -> Similarity {
        Similarity {
            scale: self.scale * other.scale,
            rotation: orthonormalize(&(self.rotation * other.rotation)),
            translation: self.scale * (self.rotation * other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> Similarity {
        let rt = self.rotation.transpose();
        Similarity { scale: 1.0 / self.scale, rotation: rt, translation: -(rt * self.translation) / self.scale }
    }

    /// The rigid part, read as a camera-to-world pose.
    pub fn rigid(&self) -> Pose {
        Pose::new(self.rotation, self.translation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Registration {
    pub transform: Similarity,
    /// Weighted root-mean-square distance after registration.
    pub residual: f64,
}

/// Weighted objective `Σ w ‖S(p) − q‖²`.
pub fn similarity_objective(s: &Similarity, source: &[Vector3<f64>], target: &[Vector3<f64>], weights: &[f64]) -> f64 {
    source.iter().zip(target).zip(weights).map(|((p, q), w)| w * (s.apply(p) - q).norm_squared()).sum()
}

/// Closed-form weighted least-squares similarity taking `source` onto `target`.
pub fn procrustes_similarity(
    source: &[Vector3<f64>],
    target: &[Vector3<f64>],
    weights: &[f64],
) -> Result<Registration, ProcrustesError> {
    if source.len() != target.len() || source.len() != weights.len() {
        return Err(ProcrustesError::Length { source_len: source.len(), target: target.len(), weights: weights.len() });
    }
    let used = weights.iter().filter(|w| **w > 0.0).count();
    if used < 3 {
        return Err(ProcrustesError::TooFew(used));
    }
    let total: f64 = weights.iter().filter(|w| **w > 0.0).sum();
    let mut mu_s = Vector3::zeros();
    let mut mu_t = Vector3::zeros();
    for ((p, q), w) in source.iter().zip(target).zip(weights) {
        if *w > 0.0 {
            mu_s += *w * p;
            mu_t += *w * q;
        }
    }
    mu_s /= total;
    mu_t /= total;
    let mut cov = Matrix3::zeros();
    let mut var_s = 0.0;
    for ((p, q), w) in source.iter().zip(target).zip(weights) {
        if *w > 0.0 {
            let a = p - mu_s;
            let b = q - mu_t;
            cov += *w * b * a.transpose();
            var_s += *w * a.norm_squared();
        }
    }
    cov /= total;
    var_s /= total;
    let svd = cov.svd(true, true);
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let largest = svd.singular_values[order[0]];
    if !(largest > 0.0) || svd.singular_values[order[1]] <= 1e-12 * largest || !(var_s > 0.0) {
        return Err(ProcrustesError::Degenerate);
    }
    let u = svd.u.expect("svd u");
    let vt = svd.v_t.expect("svd v_t");
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        // flip the axis of the smallest singular value
        d[(order[2], order[2])] = -1.0;
    }
    let rotation = u * d * vt;
    let trace: f64 = (0..3).map(|k| svd.singular_values[k] * d[(k, k)]).sum();
    let scale = trace / var_s;
    let translation = mu_t - scale * (rotation * mu_s);
    let transform = Similarity { scale, rotation, translation };
    let residual = (similarity_objective(&transform, source, target, weights) / total).max(0.0).sqrt();
    Ok(Registration { transform, residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn random_points(rng: &mut impl Rng, n: usize) -> Vec<Vector3<f64>> {
        (0..n)
            .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect()
    }

    #[test]
    fn identity_registration() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let pts = random_points(&mut rng, 20);
        let reg = procrustes_similarity(&pts, &pts, &[1.0; 20]).unwrap();
        assert!((reg.transform.scale - 1.0).abs() < 1e-12);
        assert!((reg.transform.rotation - Matrix3::identity()).abs().max() < 1e-12);
        assert!(reg.residual < 1e-12);
    }

    #[test]
    fn recovers_constructed_similarity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let src = random_points(&mut rng, 30);
        let truth = Similarity {
            scale: 2.0,
            rotation: *Rotation3::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2).matrix(),
            translation: Vector3::new(1.0, 2.0, 3.0),
        };
        let dst: Vec<_> = src.iter().map(|p| truth.apply(p)).collect();
        let reg = procrustes_similarity(&src, &dst, &[1.0; 30]).unwrap();
        assert!((reg.transform.scale - 2.0).abs() < 1e-9);
        assert!((reg.transform.rotation - truth.rotation).abs().max() < 1e-9);
        assert!((reg.transform.translation - truth.translation).norm() < 1e-9);
        assert!(reg.residual < 1e-9);
    }

    #[test]
    fn reflection_is_corrected() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let src = random_points(&mut rng, 12);
        let dst: Vec<_> = src.iter().map(|p| Vector3::new(-p.x, p.y, p.z)).collect();
        let reg = procrustes_similarity(&src, &dst, &[1.0; 12]).unwrap();
        assert!((reg.transform.rotation.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        let line: Vec<_> = (0..5).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
        assert_eq!(procrustes_similarity(&line, &line, &[1.0; 5]).unwrap_err(), ProcrustesError::Degenerate);
        let pts = random_points(&mut rand_chacha::ChaCha8Rng::seed_from_u64(4), 5);
        assert_eq!(
            procrustes_similarity(&pts, &pts, &[1.0, 1.0, 0.0, 0.0, 0.0]).unwrap_err(),
            ProcrustesError::TooFew(2)
        );
    }

    #[test]
    fn beats_random_probes_on_noisy_input() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let src = random_points(&mut rng, 40);
        let truth = Similarity {
            scale: 0.7,
            rotation: *Rotation3::from_euler_angles(0.4, -0.3, 0.9).matrix(),
            translation: Vector3::new(-0.5, 0.2, 1.5),
        };
        let dst: Vec<_> = src
            .iter()
            .map(|p| truth.apply(p) + Vector3::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05), 0.0))
            .collect();
        let w: Vec<f64> = (0..40).map(|_| rng.random_range(0.1..1.0)).collect();
        let reg = procrustes_similarity(&src, &dst, &w).unwrap();
        let best = similarity_objective(&reg.transform, &src, &dst, &w);
        for _ in 0..1000 {
            let delta = Rotation3::from_euler_angles(
                rng.random_range(-0.05..0.05),
                rng.random_range(-0.05..0.05),
                rng.random_range(-0.05..0.05),
            );
            let probe = Similarity {
                scale: reg.transform.scale * rng.random_range(0.95..1.05),
                rotation: delta.matrix() * reg.transform.rotation,
                translation: reg.transform.translation
                    + Vector3::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05)),
            };
            assert!(similarity_objective(&probe, &src, &dst, &w) >= best);
        }
    }

    proptest! {
        #[test]
        fn conjugation_invariance(seed in any::<u64>()) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let src = random_points(&mut rng, 15);
            let dst: Vec<_> = random_points(&mut rng, 15);
            let w: Vec<f64> = (0..15).map(|_| rng.random_range(0.1..1.0)).collect();
            let g = Similarity {
                scale: rng.random_range(0.5..2.0),
                rotation: *Rotation3::from_euler_angles(rng.random_range(-3.0..3.0), rng.random_range(-1.5..1.5), rng.random_range(-3.0..3.0)).matrix(),
                translation: Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)),
            };
            let base = procrustes_similarity(&src, &dst, &w).unwrap();
            let src2: Vec<_> = src.iter().map(|p| g.apply(p)).collect();
            let dst2: Vec<_> = dst.iter().map(|p| g.apply(p)).collect();
            let moved = procrustes_similarity(&src2, &dst2, &w).unwrap();
            // residual scales with g, the optimum is conjugated by g
            prop_assert!((moved.residual - g.scale * base.residual).abs() < 1e-9);
            let conj = g.compose(&base.transform).compose(&g.inverse());
            prop_assert!((conj.scale - moved.transform.scale).abs() < 1e-9);
            prop_assert!((conj.rotation - moved.transform.rotation).abs().max() < 1e-9);
            prop_assert!((conj.translation - moved.transform.translation).norm() < 1e-9);
        }

        #[test]
        fn composition_stays_orthonormal(angles in prop::collection::vec((-3.0f64..3.0, -1.5f64..1.5, -3.0f64..3.0), 1..200)) {
            let mut acc = Similarity::identity();
            for (a, b, c) in angles {
                let step = Similarity { scale: 1.0, rotation: *Rotation3::from_euler_angles(a, b, c).matrix(), translation: Vector3::new(0.1, 0.0, 0.0) };
                acc = acc.compose(&step);
            }
            prop_assert!(acc.rigid().rotation_deviation() < 1e-9);
        }
    }
}
