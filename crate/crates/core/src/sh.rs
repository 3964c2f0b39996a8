//! Real spherical-harmonic color evaluation (degrees 0 through 3).
//!
//! Basis functions are ordered by degree `l` and then `m = -l..=l`, with the
//! Condon-Shortley phase, matching the usual Gaussian-splatting layout.
//! Colors are the raw basis expansion; clamping happens only at 8-bit output.

use nalgebra::Vector3;

pub const MAX_DEGREE: usize = 3;

const C0: f64 = 0.282_094_791_773_878_14;
const C1: f64 = 0.488_602_511_902_919_9;
const C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Number of basis functions for `degree`.
pub const fn basis_len(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Degree for a coefficient count, if it is a supported square.
pub fn degree_checked(len: usize) -> Option<usize> {
    (0..=MAX_DEGREE).find(|&d| basis_len(d) == len)
}

pub fn degree_for_len(len: usize) -> usize {
    degree_checked(len).unwrap_or_else(|| panic!("unsupported SH coefficient count {len}"))
}

/// DC coefficient that reproduces `rgb` for every view direction.
pub fn dc_from_rgb(rgb: [f64; 3]) -> [f64; 3] {
    [rgb[0] / C0, rgb[1] / C0, rgb[2] / C0]
}

/// Basis values at `dir` (assumed unit length) for all functions up to `degree`.
pub fn eval_basis(degree: usize, dir: &Vector3<f64>, out: &mut [f64]) {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    out[0] = C0;
    if degree < 1 {
        return;
    }
    out[1] = -C1 * y;
    out[2] = C1 * z;
    out[3] = -C1 * x;
    if degree < 2 {
        return;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    out[4] = C2[0] * x * y;
    out[5] = C2[1] * y * z;
    out[6] = C2[2] * (2.0 * zz - xx - yy);
    out[7] = C2[3] * x * z;
    out[8] = C2[4] * (xx - yy);
    if degree < 3 {
        return;
    }
    out[9] = C3[0] * y * (3.0 * xx - yy);
    out[10] = C3[1] * x * y * z;
    out[11] = C3[2] * y * (4.0 * zz - xx - yy);
    out[12] = C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
    out[13] = C3[4] * x * (4.0 * zz - xx - yy);
    out[14] = C3[5] * z * (xx - yy);
    out[15] = C3[6] * x * (xx - 3.0 * yy);
}

/// Partial derivatives of each basis polynomial with respect to `(x, y, z)`.
pub fn eval_basis_grad(degree: usize, dir: &Vector3<f64>, out: &mut [[f64; 3]]) {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    out[0] = [0.0; 3];
    if degree < 1 {
        return;
    }
    out[1] = [0.0, -C1, 0.0];
    out[2] = [0.0, 0.0, C1];
    out[3] = [-C1, 0.0, 0.0];
    if degree < 2 {
        return;
    }
    out[4] = [C2[0] * y, C2[0] * x, 0.0];
    out[5] = [0.0, C2[1] * z, C2[1] * y];
    out[6] = [-2.0 * C2[2] * x, -2.0 * C2[2] * y, 4.0 * C2[2] * z];
    out[7] = [C2[3] * z, 0.0, C2[3] * x];
    out[8] = [2.0 * C2[4] * x, -2.0 * C2[4] * y, 0.0];
    if degree < 3 {
        return;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    out[9] = [C3[0] * 6.0 * x * y, C3[0] * (3.0 * xx - 3.0 * yy), 0.0];
    out[10] = [C3[1] * y * z, C3[1] * x * z, C3[1] * x * y];
    out[11] = [-2.0 * C3[2] * x * y, C3[2] * (4.0 * zz - xx - 3.0 * yy), 8.0 * C3[2] * y * z];
    out[12] = [-6.0 * C3[3] * x * z, -6.0 * C3[3] * y * z, C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy)];
    out[13] = [C3[4] * (4.0 * zz - 3.0 * xx - yy), -2.0 * C3[4] * x * y, 8.0 * C3[4] * x * z];
    out[14] = [2.0 * C3[5] * x * z, -2.0 * C3[5] * y * z, C3[5] * (xx - yy)];
    out[15] = [C3[6] * (3.0 * xx - 3.0 * yy), -6.0 * C3[6] * x * y, 0.0];
}

/// View-dependent color of a coefficient set for a unit view direction.
pub fn evaluate_sh(coeffs: &[[f64; 3]], view_dir: &Vector3<f64>) -> Vector3<f64> {
    let degree = degree_for_len(coeffs.len());
    let mut basis = [0.0; 16];
    eval_basis(degree, view_dir, &mut basis);
    let mut c = Vector3::zeros();
    for (k, coef) in coeffs.iter().enumerate() {
        c += Vector3::new(coef[0], coef[1], coef[2]) * basis[k];
    }
    c
}

/// Backward pass of [`evaluate_sh`] with the direction computed as
/// `normalize(mu - eye)`.
///
/// Accumulates `dL/dcoeffs` into `d_coeffs` and returns `dL/dmu`.
pub fn evaluate_sh_backward(
    coeffs: &[[f64; 3]],
    offset: &Vector3<f64>,
    d_color: &Vector3<f64>,
    d_coeffs: &mut [[f64; 3]],
) -> Vector3<f64> {
    let degree = degree_for_len(coeffs.len());
    let len = offset.norm();
    let dir = offset / len;
    let mut basis = [0.0; 16];
    eval_basis(degree, &dir, &mut basis);
    for (k, d) in d_coeffs.iter_mut().enumerate() {
        for c in 0..3 {
            d[c] += basis[k] * d_color[c];
        }
    }
    if degree == 0 {
        return Vector3::zeros();
    }
    let mut grads = [[0.0; 3]; 16];
    eval_basis_grad(degree, &dir, &mut grads);
    let mut d_dir = Vector3::zeros();
    for (k, coef) in coeffs.iter().enumerate() {
        let w = coef[0] * d_color[0] + coef[1] * d_color[1] + coef[2] * d_color[2];
        d_dir += Vector3::new(grads[k][0], grads[k][1], grads[k][2]) * w;
    }
    // d normalize(v) / dv = (I - d d^T) / |v|
    (d_dir - dir * dir.dot(&d_dir)) / len
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    /// Associated Legendre P_l^m(x) with the Condon-Shortley phase, by recurrence.
    fn legendre(l: usize, m: usize, x: f64) -> f64 {
        let mut pmm = 1.0;
        if m > 0 {
            let somx2 = ((1.0 - x) * (1.0 + x)).sqrt();
            let mut fact = 1.0;
            for _ in 0..m {
                pmm *= -fact * somx2;
                fact += 2.0;
            }
        }
        if l == m {
            return pmm;
        }
        let mut pmmp1 = x * (2 * m + 1) as f64 * pmm;
        if l == m + 1 {
            return pmmp1;
        }
        let mut pll = 0.0;
        for ll in (m + 2)..=l {
            pll = ((2 * ll - 1) as f64 * x * pmmp1 - (ll + m - 1) as f64 * pmm) / (ll - m) as f64;
            pmm = pmmp1;
            pmmp1 = pll;
        }
        pll
    }

    fn factorial(n: usize) -> f64 {
        (1..=n).map(|k| k as f64).product()
    }

    /// Real SH from spherical coordinates; an independent route to the table.
    fn real_sh(l: usize, m: i64, dir: &Vector3<f64>) -> f64 {
        let theta = dir.z.clamp(-1.0, 1.0).acos();
        let phi = dir.y.atan2(dir.x);
        let am = m.unsigned_abs() as usize;
        let k = (((2 * l + 1) as f64) / (4.0 * std::f64::consts::PI) * factorial(l - am) / factorial(l + am)).sqrt();
        let p = legendre(l, am, theta.cos());
        match m.signum() {
            0 => k * p,
            1 => std::f64::consts::SQRT_2 * k * (am as f64 * phi).cos() * p,
            _ => std::f64::consts::SQRT_2 * k * (am as f64 * phi).sin() * p,
        }
    }

    #[test]
    fn dc_is_constant() {
        let c = evaluate_sh(&[[1.0, 2.0, -3.0]], &Vector3::new(0.0, 0.6, 0.8));
        assert_relative_eq!(c, Vector3::new(0.28209479, 2.0 * 0.28209479, -3.0 * 0.28209479), epsilon = 1e-8);
    }

    #[test]
    fn degree_one_z_term_is_odd() {
        let mut coeffs = vec![[0.0; 3]; 4];
        coeffs[2] = [1.0, 1.0, 1.0];
        let up = evaluate_sh(&coeffs, &Vector3::new(0.0, 0.0, 1.0));
        let down = evaluate_sh(&coeffs, &Vector3::new(0.0, 0.0, -1.0));
        assert!(up[0] > 0.0);
        assert_relative_eq!(up, -down, epsilon = 1e-15);
    }

    #[test]
    fn table_matches_spherical_coordinate_formula() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            if v.norm() < 1e-3 {
                continue;
            }
            let dir = v.normalize();
            let mut basis = [0.0; 16];
            eval_basis(3, &dir, &mut basis);
            let mut k = 0;
            for l in 0..=3usize {
                for m in -(l as i64)..=(l as i64) {
                    assert_relative_eq!(basis[k], real_sh(l, m, &dir), epsilon = 1e-12);
                    k += 1;
                }
            }
        }
    }

    #[test]
    fn seeded_degree_one_color_matches_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let coeffs: Vec<[f64; 3]> = (0..4)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let dir = Vector3::new(1.0, 0.0, 0.0);
        let got = evaluate_sh(&coeffs, &dir);
        let mut k = 0;
        let mut expect = Vector3::zeros();
        for l in 0..=1usize {
            for m in -(l as i64)..=(l as i64) {
                let y = real_sh(l, m, &dir);
                expect += Vector3::new(coeffs[k][0], coeffs[k][1], coeffs[k][2]) * y;
                k += 1;
            }
        }
        assert_relative_eq!(got, expect, epsilon = 1e-12);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let coeffs: Vec<[f64; 3]> = (0..16)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let offset = Vector3::new(0.3, -1.2, 2.0);
        let d_color = Vector3::new(0.7, -0.4, 1.1);
        let f = |o: &Vector3<f64>| evaluate_sh(&coeffs, &o.normalize()).dot(&d_color);
        let mut d_coeffs = vec![[0.0; 3]; 16];
        let d_mu = evaluate_sh_backward(&coeffs, &offset, &d_color, &mut d_coeffs);
        let h = 1e-6;
        for c in 0..3 {
            let mut e = Vector3::zeros();
            e[c] = h;
            let fd = (f(&(offset + e)) - f(&(offset - e))) / (2.0 * h);
            assert_relative_eq!(fd, d_mu[c], epsilon = 1e-8);
        }
        let mut basis = [0.0; 16];
        eval_basis(3, &offset.normalize(), &mut basis);
        assert_relative_eq!(d_coeffs[5][1], basis[5] * d_color[1], epsilon = 1e-15);
    }
}
