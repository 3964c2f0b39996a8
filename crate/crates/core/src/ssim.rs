//! Structural similarity with an 11x11 Gaussian window (sigma 1.5) and its
//! gradient with respect to the first image.
//!
//! Local statistics use a separable zero-padded "same" convolution. The
//! kernel is symmetric, so that convolution is its own adjoint.

use rayon::prelude::*;

pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
pub const K1: f64 = 0.01;
pub const K2: f64 = 0.03;

const C1: f64 = K1 * K1;
const C2: f64 = K2 * K2;

/// Normalized 1D Gaussian taps.
pub fn kernel() -> [f64; WINDOW] {
    let r = (WINDOW / 2) as f64;
    let mut k = [0.0; WINDOW];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable zero-padded convolution of one `h x w` plane.
fn blur(src: &[f64], w: usize, h: usize, k: &[f64; WINDOW]) -> Vec<f64> {
    let r = (WINDOW / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    tmp.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, out) in row.iter_mut().enumerate() {
            let mut s = 0.0;
            for (j, kv) in k.iter().enumerate() {
                let xx = x as isize + j as isize - r;
                if xx >= 0 && (xx as usize) < w {
                    s += kv * src[y * w + xx as usize];
                }
            }
            *out = s;
        }
    });
    let mut out = vec![0.0; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, o) in row.iter_mut().enumerate() {
            let mut s = 0.0;
            for (j, kv) in k.iter().enumerate() {
                let yy = y as isize + j as isize - r;
                if yy >= 0 && (yy as usize) < h {
                    s += kv * tmp[yy as usize * w + x];
                }
            }
            *o = s;
        }
    });
    out
}

fn plane(data: &[f64], channels: usize, c: usize) -> Vec<f64> {
    data.iter().skip(c).step_by(channels).copied().collect()
}

/// Per-pixel statistics of one channel.
struct Stats {
    mx: Vec<f64>,
    my: Vec<f64>,
    exx: Vec<f64>,
    eyy: Vec<f64>,
    exy: Vec<f64>,
}

fn stats(x: &[f64], y: &[f64], w: usize, h: usize, k: &[f64; WINDOW]) -> Stats {
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<f64>>();
    Stats {
        mx: blur(x, w, h, k),
        my: blur(y, w, h, k),
        exx: blur(&sq(x, x), w, h, k),
        eyy: blur(&sq(y, y), w, h, k),
        exy: blur(&sq(x, y), w, h, k),
    }
}

/// Mean SSIM over all pixels and channels of two `H x W x C` images.
pub fn ssim(x: &[f64], y: &[f64], w: usize, h: usize, channels: usize) -> f64 {
    ssim_impl(x, y, w, h, channels, false).0
}

/// Mean SSIM and its gradient with respect to `x`.
pub fn ssim_with_grad(x: &[f64], y: &[f64], w: usize, h: usize, channels: usize) -> (f64, Vec<f64>) {
    let (v, g) = ssim_impl(x, y, w, h, channels, true);
    (v, g.expect("gradient requested"))
}

fn ssim_impl(x: &[f64], y: &[f64], w: usize, h: usize, channels: usize, grad: bool) -> (f64, Option<Vec<f64>>) {
    let k = kernel();
    let n = w * h;
    let norm = 1.0 / (n * channels) as f64;
    let mut total = 0.0;
    let mut g = grad.then(|| vec![0.0; n * channels]);
    for c in 0..channels {
        let xp = plane(x, channels, c);
        let yp = plane(y, channels, c);
        let s = stats(&xp, &yp, w, h, &k);
        let mut d_mx = vec![0.0; if grad { n } else { 0 }];
        let mut d_exx = d_mx.clone();
        let mut d_exy = d_mx.clone();
        for i in 0..n {
            let (mx, my) = (s.mx[i], s.my[i]);
            let a1 = 2.0 * mx * my + C1;
            let a2 = 2.0 * (s.exy[i] - mx * my) + C2;
            let b1 = mx * mx + my * my + C1;
            let b2 = (s.exx[i] - mx * mx) + (s.eyy[i] - my * my) + C2;
            let v = (a1 * a2) / (b1 * b2);
            total += v;
            if grad {
                d_mx[i] = norm * v * (2.0 * my / a1 - 2.0 * my / a2 - 2.0 * mx / b1 + 2.0 * mx / b2);
                d_exx[i] = -norm * v / b2;
                d_exy[i] = norm * v * 2.0 / a2;
            }
        }
        if let Some(g) = g.as_mut() {
            let bm = blur(&d_mx, w, h, &k);
            let bxx = blur(&d_exx, w, h, &k);
            let bxy = blur(&d_exy, w, h, &k);
            for i in 0..n {
                g[i * channels + c] = bm[i] + 2.0 * xp[i] * bxx[i] + yp[i] * bxy[i];
            }
        }
    }
    (total * norm, g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(0.0..1.0)).collect()
    }

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        let k = kernel();
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..WINDOW {
            assert_eq!(k[i], k[WINDOW - 1 - i]);
        }
    }

    #[test]
    fn identical_images_score_exactly_one() {
        let x = random(17 * 13 * 3, 1);
        assert_eq!(ssim(&x, &x, 17, 13, 3), 1.0);
    }

    #[test]
    fn blur_is_self_adjoint() {
        let (w, h) = (19, 14);
        let a = random(w * h, 2);
        let b = random(w * h, 3);
        let k = kernel();
        let lhs: f64 = blur(&a, w, h, &k).iter().zip(&b).map(|(p, q)| p * q).sum();
        let rhs: f64 = a.iter().zip(blur(&b, w, h, &k)).map(|(p, q)| p * q).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (w, h, c) = (16, 12, 2);
        let x = random(w * h * c, 4);
        let y = random(w * h * c, 5);
        let (_, g) = ssim_with_grad(&x, &y, w, h, c);
        let step = 1e-6;
        for i in (0..x.len()).step_by(7) {
            let mut p = x.clone();
            p[i] += step;
            let mut m = x.clone();
            m[i] -= step;
            let fd = (ssim(&p, &y, w, h, c) - ssim(&m, &y, w, h, c)) / (2.0 * step);
            assert!((fd - g[i]).abs() < 1e-7 * (1.0 + g[i].abs()), "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn oracle_direct_window_sum() {
        // Direct 2D windowed statistics at one interior and one border pixel.
        let (w, h) = (15, 15);
        let x = random(w * h, 6);
        let y = random(w * h, 7);
        let k = kernel();
        let s = stats(&x, &y, w, h, &k);
        for (px, py) in [(7usize, 7usize), (0, 3)] {
            let (mut mx, mut exy) = (0.0, 0.0);
            for j in 0..WINDOW {
                for i in 0..WINDOW {
                    let xx = px as isize + i as isize - 5;
                    let yy = py as isize + j as isize - 5;
                    if xx < 0 || yy < 0 || xx >= w as isize || yy >= h as isize {
                        continue;
                    }
                    let idx = yy as usize * w + xx as usize;
                    mx += k[i] * k[j] * x[idx];
                    exy += k[i] * k[j] * x[idx] * y[idx];
                }
            }
            assert!((s.mx[py * w + px] - mx).abs() < 1e-13);
            assert!((s.exy[py * w + px] - exy).abs() < 1e-13);
        }
    }
}
