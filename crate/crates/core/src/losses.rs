//! Image-space training losses and the weighted total.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Image;
use crate::ssim::{ssim, ssim_with_grad};

/// Cross-entropy clamps rendered probabilities at this floor.
pub const PROB_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_ssim: f64,
    pub lambda_s: f64,
    pub lambda_f: f64,
    pub lambda_t: f64,
    pub lambda_uni: f64,
    pub lambda_reg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_ssim: 0.2, lambda_s: 0.01, lambda_f: 0.01, lambda_t: 0.1, lambda_uni: 0.1, lambda_reg: 0.1 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_ssim, self.lambda_s, self.lambda_f, self.lambda_t, self.lambda_uni, self.lambda_reg];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Invalid(format!("loss weights must be finite and non-negative: {self:?}")));
        }
        if self.lambda_ssim > 1.0 {
            return Err(Error::Invalid("lambda_ssim must not exceed 1".into()));
        }
        Ok(())
    }

    pub fn motion(&self) -> crate::unicycle::MotionWeights {
        crate::unicycle::MotionWeights {
            lambda_t: self.lambda_t,
            lambda_uni: self.lambda_uni,
            lambda_reg: self.lambda_reg,
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `(1 - lambda) mean|x - y| + lambda (1 - SSIM(x, y))`.
pub fn loss_image(rendered: &Image, target: &Image, lambda_ssim: f64) -> Result<f64> {
    rendered.same_shape(target)?;
    let n = rendered.data.len() as f64;
    let l1 = rendered.data.iter().zip(&target.data).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
    let mut loss = (1.0 - lambda_ssim) * l1;
    if lambda_ssim != 0.0 {
        loss += lambda_ssim
            * (1.0 - ssim(&rendered.data, &target.data, rendered.width, rendered.height, rendered.channels));
    }
    Ok(loss)
}

/// [`loss_image`] and its gradient with respect to `rendered`.
pub fn loss_image_grad(rendered: &Image, target: &Image, lambda_ssim: f64) -> Result<(f64, Vec<f64>)> {
    rendered.same_shape(target)?;
    let n = rendered.data.len() as f64;
    let mut l1 = 0.0;
    let mut g: Vec<f64> = rendered
        .data
        .iter()
        .zip(&target.data)
        .map(|(a, b)| {
            l1 += (a - b).abs();
            (1.0 - lambda_ssim) * sign(a - b) / n
        })
        .collect();
    let mut loss = (1.0 - lambda_ssim) * l1 / n;
    if lambda_ssim != 0.0 {
        let (s, gs) = ssim_with_grad(&rendered.data, &target.data, rendered.width, rendered.height, rendered.channels);
        loss += lambda_ssim * (1.0 - s);
        for (a, b) in g.iter_mut().zip(gs) {
            *a -= lambda_ssim * b;
        }
    }
    Ok((loss, g))
}

fn check_semantic(probs: &[f64], classes: usize, labels: &[Option<u32>]) -> Result<()> {
    if classes == 0 || probs.len() != labels.len() * classes {
        return Err(Error::Dimension(format!(
            "{} probabilities for {} pixels x {classes} classes",
            probs.len(),
            labels.len()
        )));
    }
    if let Some(l) = labels.iter().flatten().find(|l| **l as usize >= classes) {
        return Err(Error::Usage(format!("label {l} out of range for {classes} classes")));
    }
    Ok(())
}

/// Mean cross-entropy `-log S_label` over pixels with a label.
pub fn loss_semantic(probs: &[f64], classes: usize, labels: &[Option<u32>]) -> Result<f64> {
    Ok(loss_semantic_grad(probs, classes, labels)?.0)
}

/// [`loss_semantic`] and its gradient with respect to `probs`.
pub fn loss_semantic_grad(probs: &[f64], classes: usize, labels: &[Option<u32>]) -> Result<(f64, Vec<f64>)> {
    check_semantic(probs, classes, labels)?;
    let supervised = labels.iter().filter(|l| l.is_some()).count();
    let mut g = vec![0.0; probs.len()];
    if supervised == 0 {
        return Ok((0.0, g));
    }
    let inv = 1.0 / supervised as f64;
    let mut loss = 0.0;
    for (i, l) in labels.iter().enumerate() {
        if let Some(l) = l {
            let k = i * classes + *l as usize;
            let p = probs[k];
            loss -= p.max(PROB_FLOOR).ln();
            if p > PROB_FLOOR {
                g[k] = -inv / p;
            }
        }
    }
    Ok((loss * inv, g))
}

fn check_flow(rendered: &[f64], target: &[f64], valid: &[bool]) -> Result<()> {
    if rendered.len() != target.len() || rendered.len() != 2 * valid.len() {
        return Err(Error::Dimension(format!(
            "flow buffers of {} and {} samples for {} pixels",
            rendered.len(),
            target.len(),
            valid.len()
        )));
    }
    Ok(())
}

/// Mean per-pixel `|du| + |dv|` over valid pixels.
pub fn loss_flow(rendered: &[f64], target: &[f64], valid: &[bool]) -> Result<f64> {
    Ok(loss_flow_grad(rendered, target, valid)?.0)
}

pub fn loss_flow_grad(rendered: &[f64], target: &[f64], valid: &[bool]) -> Result<(f64, Vec<f64>)> {
    check_flow(rendered, target, valid)?;
    let count = valid.iter().filter(|v| **v).count();
    let mut g = vec![0.0; rendered.len()];
    if count == 0 {
        return Ok((0.0, g));
    }
    let inv = 1.0 / count as f64;
    let mut loss = 0.0;
    for (i, ok) in valid.iter().enumerate() {
        if *ok {
            for c in 0..2 {
                let d = rendered[2 * i + c] - target[2 * i + c];
                loss += d.abs();
                g[2 * i + c] = inv * sign(d);
            }
        }
    }
    Ok((loss * inv, g))
}

/// Unweighted loss components.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub image: f64,
    pub semantic: f64,
    pub flow: f64,
    pub track: f64,
    pub unicycle: f64,
    pub smooth: f64,
}

impl LossBreakdown {
    /// `L_I + lambda_S L_S + lambda_F L_F + lambda_t L_t + lambda_uni L_uni + lambda_reg L_reg`.
    pub fn total(&self, w: &LossWeights) -> f64 {
        self.image
            + w.lambda_s * self.semantic
            + w.lambda_f * self.flow
            + w.lambda_t * self.track
            + w.lambda_uni * self.unicycle
            + w.lambda_reg * self.smooth
    }

    pub fn add(&mut self, o: &LossBreakdown) {
        self.image += o.image;
        self.semantic += o.semantic;
        self.flow += o.flow;
        self.track += o.track;
        self.unicycle += o.unicycle;
        self.smooth += o.smooth;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::new(w, h, 3, (0..w * h * 3).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn image_loss_examples() {
        let x = random(12, 9, 0);
        assert_eq!(loss_image(&x, &x, 0.2).unwrap(), 0.0);
        assert_eq!(loss_image(&x, &x, 1.0).unwrap(), 0.0);
        let ones = Image::filled(5, 4, 3, 1.0);
        let zeros = Image::filled(5, 4, 3, 0.0);
        assert_eq!(loss_image(&ones, &zeros, 0.0).unwrap(), 1.0);
        let other = Image::filled(5, 5, 3, 0.0);
        assert_eq!(loss_image(&ones, &other, 0.2).unwrap_err().kind(), "dimension");
    }

    #[test]
    fn image_loss_gradient_matches_finite_differences() {
        let x = random(14, 11, 1);
        let y = random(14, 11, 2);
        let (l, g) = loss_image_grad(&x, &y, 0.2).unwrap();
        assert_relative_eq!(l, loss_image(&x, &y, 0.2).unwrap(), epsilon = 1e-15);
        for i in (0..x.data.len()).step_by(13) {
            let h = 1e-7;
            let mut p = x.clone();
            p.data[i] += h;
            let mut m = x.clone();
            m.data[i] -= h;
            let fd = (loss_image(&p, &y, 0.2).unwrap() - loss_image(&m, &y, 0.2).unwrap()) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6 * (1.0 + g[i].abs()), "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn semantic_loss_examples() {
        assert_eq!(loss_semantic(&[0.0, 1.0, 0.0], 3, &[Some(1)]).unwrap(), 0.0);
        assert_relative_eq!(loss_semantic(&[0.5, 0.5], 2, &[Some(0)]).unwrap(), 2f64.ln(), epsilon = 1e-15);
        let uniform = vec![1.0 / 19.0; 19];
        assert_relative_eq!(loss_semantic(&uniform, 19, &[Some(7)]).unwrap(), 19f64.ln(), epsilon = 1e-12);
        assert_relative_eq!(loss_semantic(&[0.0, 1.0], 2, &[Some(0)]).unwrap(), -(1e-8f64).ln(), epsilon = 1e-12);
        assert_eq!(loss_semantic(&[0.5, 0.5], 2, &[Some(2)]).unwrap_err().kind(), "usage");
        let two = [0.5, 0.5, 1.0, 0.0];
        assert_relative_eq!(loss_semantic(&two, 2, &[Some(0), None]).unwrap(), 2f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn semantic_gradient() {
        let p = [0.2, 0.7, 0.1, 0.6, 0.3, 0.1];
        let labels = [Some(1), Some(0)];
        let (_, g) = loss_semantic_grad(&p, 3, &labels).unwrap();
        assert_relative_eq!(g[1], -0.5 / 0.7, epsilon = 1e-15);
        assert_relative_eq!(g[3], -0.5 / 0.6, epsilon = 1e-15);
        assert_eq!(g.iter().filter(|v| **v != 0.0).count(), 2);
    }

    #[test]
    fn flow_loss_examples() {
        let f = vec![0.3, -1.0, 2.0, 0.5];
        assert_eq!(loss_flow(&f, &f, &[true, true]).unwrap(), 0.0);
        let shifted: Vec<f64> = f.iter().enumerate().map(|(i, v)| v + if i % 2 == 0 { 1.0 } else { 2.0 }).collect();
        assert_relative_eq!(loss_flow(&shifted, &f, &[true, true]).unwrap(), 3.0, epsilon = 1e-12);
        let mut half = shifted.clone();
        half[2] += 100.0;
        assert_relative_eq!(loss_flow(&half, &f, &[true, false]).unwrap(), 3.0, epsilon = 1e-12);
        assert_eq!(loss_flow(&f, &f, &[true]).unwrap_err().kind(), "dimension");
    }

    #[test]
    fn total_loss_examples() {
        let w = LossWeights::default();
        assert_eq!(LossBreakdown::default().total(&w), 0.0);
        assert_eq!(LossBreakdown { image: 1.0, ..Default::default() }.total(&w), 1.0);
        assert_eq!(LossBreakdown { semantic: 1.0, ..Default::default() }.total(&w), 0.01);
        assert!(LossWeights { lambda_f: -1.0, ..w }.validate().is_err());
    }
}
