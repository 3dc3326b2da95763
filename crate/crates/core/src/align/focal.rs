//! Robust focal length from a camera-frame pointmap.

use nalgebra::Vector3;
use thiserror::Error;

use crate::numeric::median;

#[derive(Debug, Error, PartialEq)]
pub enum FocalError {
    #[error("only {0} points lie in front of the camera off the principal point; need 10")]
    TooFew(usize),
    #[error("pointmap has {got} entries, expected {expected}")]
    Size { got: usize, expected: usize },
}

const MIN_POINTS: usize = 10;
const DISTANCE_FLOOR: f64 = 1e-12;

/// One pixel offset `a = (u − cx, v − cy)` and its normalized ray `b = (x/z, y/z)`.
struct Sample {
    a: [f64; 2],
    b: [f64; 2],
}

fn samples(points: &[Vector3<f64>], width: usize, cx: f64, cy: f64) -> Vec<Sample> {
    points
        .iter()
        .enumerate()
        .filter(|(_, p)| p.z > 0.0 && p.iter().all(|c| c.is_finite()))
        .map(|(idx, p)| Sample {
            a: [(idx % width) as f64 - cx, (idx / width) as f64 - cy],
            b: [p.x / p.z, p.y / p.z],
        })
        .filter(|s| s.b[0] * s.b[0] + s.b[1] * s.b[1] > 0.0)
        .collect()
}

fn dot(x: [f64; 2], y: [f64; 2]) -> f64 {
    x[0] * y[0] + x[1] * y[1]
}

/// Minimizes `Σ ‖a − f·b‖` over pixels by iteratively reweighted least
/// squares, starting from the median of per-pixel ratios `a·b / b·b`.
/// `points` is row-major over a `width`-wide image.
pub fn weiszfeld_focal(
    points: &[Vector3<f64>],
    width: usize,
    height: usize,
    principal: (f64, f64),
    iterations: usize,
) -> Result<f64, FocalError> {
    if points.len() != width * height {
        return Err(FocalError::Size { got: points.len(), expected: width * height });
    }
    let s = samples(points, width, principal.0, principal.1);
    if s.len() < MIN_POINTS {
        return Err(FocalError::TooFew(s.len()));
    }
    let mut ratios: Vec<f64> = s.iter().map(|p| dot(p.a, p.b) / dot(p.b, p.b)).collect();
    let mut focal = median(&mut ratios);
    for _ in 0..iterations {
        let mut num = 0.0;
        let mut den = 0.0;
        for p in &s {
            let r = [p.a[0] - focal * p.b[0], p.a[1] - focal * p.b[1]];
            let w = 1.0 / dot(r, r).sqrt().max(DISTANCE_FLOOR);
            num += w * dot(p.a, p.b);
            den += w * dot(p.b, p.b);
        }
        focal = num / den;
    }
    Ok(focal)
}

/// Plain least-squares ratio `Σ a·b / Σ b·b`, the non-robust counterpart.
pub fn least_squares_focal(points: &[Vector3<f64>], width: usize, principal: (f64, f64)) -> f64 {
    let s = samples(points, width, principal.0, principal.1);
    s.iter().map(|p| dot(p.a, p.b)).sum::<f64>() / s.iter().map(|p| dot(p.b, p.b)).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Intrinsics;
    use rand::{Rng, SeedableRng};

    fn pinhole_pointmap(f: f64, w: usize, h: usize, depth: impl Fn(usize, usize) -> f64) -> Vec<Vector3<f64>> {
        let k = Intrinsics::new(f, f, (w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
        (0..w * h).map(|i| k.backproject((i % w) as f64, (i / w) as f64, depth(i % w, i / w))).collect()
    }

    #[test]
    fn clean_pointmap_recovers_focal() {
        let (w, h) = (32, 24);
        let pts = pinhole_pointmap(500.0, w, h, |x, y| 2.0 + 0.05 * x as f64 + 0.02 * y as f64);
        let f = weiszfeld_focal(&pts, w, h, (15.5, 11.5), 10).unwrap();
        assert!((f - 500.0).abs() <= 0.5, "{f}");
    }

    #[test]
    fn symmetric_four_points() {
        let (w, h) = (5, 5);
        let mut pts = vec![Vector3::new(0.0, 0.0, -1.0); w * h];
        // ten points at the same ratio
        for (k, idx) in [0usize, 4, 20, 24, 2, 10, 14, 22, 6, 18].iter().enumerate() {
            let (u, v) = ((idx % w) as f64 - 2.0, (idx / w) as f64 - 2.0);
            let z = 1.0 + k as f64;
            pts[*idx] = Vector3::new(u / 300.0 * z, v / 300.0 * z, z);
        }
        let f = weiszfeld_focal(&pts, w, h, (2.0, 2.0), 10).unwrap();
        assert!((f - 300.0).abs() < 1e-9);
    }

    #[test]
    fn outliers_do_not_pull_estimate() {
        let (w, h) = (40, 30);
        let mut pts = pinhole_pointmap(420.0, w, h, |x, _| 3.0 + 0.01 * x as f64);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for p in pts.iter_mut() {
            if rng.random_bool(0.1) {
                *p = Vector3::new(p.x * 3.0, p.y * 3.0, p.z * rng.random_range(0.2..0.5));
            }
        }
        let robust = weiszfeld_focal(&pts, w, h, (19.5, 14.5), 10).unwrap();
        let plain = least_squares_focal(&pts, w, (19.5, 14.5));
        assert!((robust - 420.0).abs() / 420.0 < 0.01, "{robust}");
        assert!((plain - 420.0).abs() / 420.0 >= 0.05, "{plain}");
    }

    #[test]
    fn rejects_points_behind_camera() {
        let pts = vec![Vector3::new(0.1, 0.1, -1.0); 100];
        assert_eq!(weiszfeld_focal(&pts, 10, 10, (4.5, 4.5), 10), Err(FocalError::TooFew(0)));
    }
}
