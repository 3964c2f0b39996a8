//! Evaluation metrics: image quality, semantic overlap, geometry and depth.

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Image;
use crate::scene::SceneGraph;

/// Peak signal-to-noise ratio with peak 1; `+inf` for identical images.
pub fn psnr(img: &Image, reference: &Image) -> Result<f64> {
    img.same_shape(reference)?;
    let mse = img.data.iter().zip(&reference.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / img.data.len() as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

/// Mean SSIM over pixels and channels.
pub fn ssim(img: &Image, reference: &Image) -> Result<f64> {
    img.same_shape(reference)?;
    Ok(crate::ssim::ssim(&img.data, &reference.data, img.width, img.height, img.channels))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiouReport {
    /// IoU per class; `None` when the class appears in neither map.
    pub per_class: Vec<Option<f64>>,
    /// Mean over the classes that appear.
    pub mean: f64,
}

/// Per-class intersection over union of two label maps.
pub fn miou(pred: &[u32], gt: &[u32], classes: usize) -> Result<MiouReport> {
    if pred.len() != gt.len() {
        return Err(Error::Dimension(format!("{} predicted vs {} ground-truth labels", pred.len(), gt.len())));
    }
    if let Some(l) = pred.iter().chain(gt).find(|l| **l as usize >= classes) {
        return Err(Error::Usage(format!("label {l} out of range for {classes} classes")));
    }
    let mut inter = vec![0usize; classes];
    let mut union = vec![0usize; classes];
    for (p, g) in pred.iter().zip(gt) {
        let (p, g) = (*p as usize, *g as usize);
        if p == g {
            inter[p] += 1;
            union[p] += 1;
        } else {
            union[p] += 1;
            union[g] += 1;
        }
    }
    let per_class: Vec<Option<f64>> =
        (0..classes).map(|k| (union[k] > 0).then(|| inter[k] as f64 / union[k] as f64)).collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let mean = if present.is_empty() { 1.0 } else { present.iter().sum::<f64>() / present.len() as f64 };
    Ok(MiouReport { per_class, mean })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Chamfer {
    /// Mean distance from each predicted point to the nearest reference point.
    pub accuracy: f64,
    /// Mean distance from each reference point to the nearest predicted point.
    pub completeness: f64,
}

/// Mean nearest-neighbor distance from every query point to `targets`.
pub fn mean_nearest_distance(queries: &[[f64; 3]], targets: &[[f64; 3]]) -> Result<f64> {
    if queries.is_empty() || targets.is_empty() {
        return Err(Error::Usage("empty point set".into()));
    }
    let tree: ImmutableKdTree<f64, 3> = ImmutableKdTree::new_from_slice(targets)
        .map_err(|e| Error::Invalid(format!("k-d tree construction: {e:?}")))?;
    let found = tree.query_batch(queries).nearest_one::<SquaredEuclidean<f64>>().execute();
    Ok(found.iter().map(|n| n.distance.sqrt()).sum::<f64>() / queries.len() as f64)
}

/// Label of the nearest reference point for every query.
pub fn nearest_labels(queries: &[[f64; 3]], reference: &[LabeledPoint]) -> Result<Vec<u32>> {
    if reference.is_empty() {
        return Err(Error::Usage("empty point set".into()));
    }
    let pts: Vec<[f64; 3]> = reference.iter().map(|p| p.position).collect();
    let tree: ImmutableKdTree<f64, 3> =
        ImmutableKdTree::new_from_slice(&pts).map_err(|e| Error::Invalid(format!("k-d tree construction: {e:?}")))?;
    let found = tree.query_batch(queries).nearest_one::<SquaredEuclidean<f64>>().execute();
    Ok(found.iter().map(|n| reference[n.item as usize].label).collect())
}

pub fn chamfer(pred: &[[f64; 3]], gt: &[[f64; 3]]) -> Result<Chamfer> {
    Ok(Chamfer { accuracy: mean_nearest_distance(pred, gt)?, completeness: mean_nearest_distance(gt, pred)? })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthError {
    /// Root-mean-square depth difference over evaluated pixels.
    pub rmse: f64,
    /// Pixels with a reference depth and a finite rendered depth.
    pub evaluated: usize,
    /// Pixels with a reference depth but nothing rendered.
    pub missing: usize,
}

/// Depth error restricted to pixels where `reference` holds a value.
pub fn depth_error(rendered: &[f64], reference: &[Option<f64>]) -> Result<DepthError> {
    if rendered.len() != reference.len() {
        return Err(Error::Dimension(format!("{} rendered vs {} reference depths", rendered.len(), reference.len())));
    }
    let (mut sum, mut evaluated, mut missing) = (0.0, 0usize, 0usize);
    for (r, g) in rendered.iter().zip(reference) {
        if let Some(g) = g {
            if r.is_finite() {
                sum += (r - g) * (r - g);
                evaluated += 1;
            } else {
                missing += 1;
            }
        }
    }
    let rmse = if evaluated == 0 { 0.0 } else { (sum / evaluated as f64).sqrt() };
    Ok(DepthError { rmse, evaluated, missing })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledPoint {
    pub position: [f64; 3],
    pub label: u32,
}

/// Centers and argmax labels of the Gaussians with opacity at least
/// `threshold`. Object Gaussians are included, placed at `time`, when a
/// timestamp is given.
pub fn extract_semantic_pointcloud(scene: &SceneGraph, threshold: f64, time: Option<f64>) -> Result<Vec<LabeledPoint>> {
    // Comparing logits avoids sigmoid saturating to exactly 1.
    let cut = if threshold <= 0.0 {
        f64::NEG_INFINITY
    } else if threshold >= 1.0 {
        f64::INFINITY
    } else {
        crate::scene::logit(threshold)
    };
    let gaussians: Vec<crate::scene::Gaussian3D> = match time {
        Some(t) => scene.instantiate_world(t)?.into_iter().map(|w| w.gaussian).collect(),
        None => scene.static_gaussians.clone(),
    };
    Ok(gaussians
        .iter()
        .filter(|g| g.opacity_logit >= cut)
        .map(|g| LabeledPoint { position: [g.mu.x, g.mu.y, g.mu.z], label: argmax(&g.logits) as u32 })
        .collect())
}

/// Index of the largest value; the first one on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{sigmoid, Gaussian3D};
    use approx::assert_relative_eq;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn points(n: usize, seed: u64) -> Vec<[f64; 3]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect()
    }

    fn brute(q: &[[f64; 3]], t: &[[f64; 3]]) -> f64 {
        q.iter()
            .map(|a| {
                t.iter()
                    .map(|b| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt())
                    .fold(f64::INFINITY, f64::min)
            })
            .sum::<f64>()
            / q.len() as f64
    }

    #[test]
    fn psnr_and_ssim_examples() {
        let a = Image::filled(4, 3, 3, 0.25);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        let b = Image::filled(4, 3, 3, 0.35);
        // MSE 0.01 -> 20 dB.
        assert_relative_eq!(psnr(&a, &b).unwrap(), 20.0, epsilon = 1e-9);
    }

    #[test]
    fn miou_examples() {
        let gt = [0, 0, 1, 1];
        assert_eq!(miou(&gt, &gt, 2).unwrap().mean, 1.0);
        assert_eq!(miou(&[1, 1, 0, 0], &gt, 2).unwrap().mean, 0.0);
        let r = miou(&[0, 1, 1, 1], &gt, 3).unwrap();
        assert_eq!(r.per_class, vec![Some(0.5), Some(2.0 / 3.0), None]);
        assert_relative_eq!(r.mean, (0.5 + 2.0 / 3.0) / 2.0);
        assert_eq!(miou(&[0, 5], &[0, 0], 2).unwrap_err().kind(), "usage");
    }

    #[test]
    fn chamfer_matches_brute_force() {
        let a = points(400, 1);
        let b = points(300, 2);
        let c = chamfer(&a, &b).unwrap();
        assert_relative_eq!(c.accuracy, brute(&a, &b), epsilon = 1e-12);
        assert_relative_eq!(c.completeness, brute(&b, &a), epsilon = 1e-12);
        assert_eq!(chamfer(&a, &a).unwrap(), Chamfer { accuracy: 0.0, completeness: 0.0 });
        assert_eq!(chamfer(&a, &[]).unwrap_err().kind(), "usage");
    }

    #[test]
    fn chamfer_handles_many_coincident_coordinates() {
        let mut a: Vec<[f64; 3]> = (0..500).map(|i| [0.0, 0.0, i as f64 * 0.01]).collect();
        a.extend((0..500).map(|_| [0.0, 0.0, 0.0]));
        let b = points(50, 3);
        assert_relative_eq!(mean_nearest_distance(&b, &a).unwrap(), brute(&b, &a), epsilon = 1e-12);
    }

    #[test]
    fn nearest_labels_match_brute_force() {
        let refs: Vec<LabeledPoint> = points(200, 5)
            .into_iter()
            .enumerate()
            .map(|(i, p)| LabeledPoint { position: p, label: (i % 7) as u32 })
            .collect();
        let q = points(100, 6);
        let got = nearest_labels(&q, &refs).unwrap();
        for (a, l) in q.iter().zip(got) {
            let d = |b: &[f64; 3]| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2);
            let best = refs.iter().min_by(|x, y| d(&x.position).total_cmp(&d(&y.position))).unwrap();
            assert_eq!(l, best.label);
        }
    }

    #[test]
    fn depth_error_masks_missing_reference() {
        let r = [1.0, 2.0, f64::INFINITY, 5.0];
        let g = [Some(2.0), None, Some(1.0), Some(5.0)];
        let e = depth_error(&r, &g).unwrap();
        assert_eq!((e.evaluated, e.missing), (2, 1));
        assert_relative_eq!(e.rmse, (0.5f64).sqrt());
    }

    #[test]
    fn pointcloud_threshold_matches_brute_force_filter() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut scene = SceneGraph::new(3, Vector3::zeros());
        for _ in 0..200 {
            let o = rng.random_range(0.01..0.99);
            let logits = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            scene.static_gaussians.push(Gaussian3D::isotropic(
                Vector3::new(rng.random(), 0.0, 1.0),
                0.1,
                o,
                [0.5; 3],
                logits,
            ));
        }
        assert_eq!(extract_semantic_pointcloud(&scene, 0.0, None).unwrap().len(), 200);
        assert!(extract_semantic_pointcloud(&scene, 1.0, None).unwrap().is_empty());
        let got = extract_semantic_pointcloud(&scene, 0.5, None).unwrap();
        let expect: Vec<LabeledPoint> = scene
            .static_gaussians
            .iter()
            .filter(|g| sigmoid(g.opacity_logit) >= 0.5)
            .map(|g| {
                let mut best = 0;
                for k in 1..3 {
                    if g.logits[k] > g.logits[best] {
                        best = k;
                    }
                }
                LabeledPoint { position: [g.mu.x, g.mu.y, g.mu.z], label: best as u32 }
            })
            .collect();
        assert_eq!(got, expect);
    }
}
