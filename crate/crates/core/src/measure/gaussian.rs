//! One-dimensional Gaussian helpers and 𝕎₂ to an analytic Gaussian.

use statrs::function::erf::{erfc, erfc_inv};

use super::empirical::EmpiricalMeasure;
use super::grid::GridDensity1D;
use super::wasserstein::QuantileFn;

const SQRT_2: f64 = std::f64::consts::SQRT_2;

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

/// Standard normal quantile from the lower-tail probability `p` and its
/// complement `s = 1 - p`; whichever is smaller is used so neither tail
/// loses precision.
pub fn normal_quantile_pair(p: f64, s: f64) -> f64 {
    if p <= 0.0 {
        f64::NEG_INFINITY
    } else if s <= 0.0 {
        f64::INFINITY
    } else if p < s {
        -SQRT_2 * erfc_inv(2.0 * p)
    } else {
        SQRT_2 * erfc_inv(2.0 * s)
    }
}

pub fn normal_quantile(p: f64) -> f64 {
    normal_quantile_pair(p, 1.0 - p)
}

/// Closed-form 𝕎₂ between N(m₁, v₁) and N(m₂, v₂) on ℝ.
pub fn w2_gaussians(m1: f64, v1: f64, m2: f64, v2: f64) -> f64 {
    ((m1 - m2).powi(2) + (v1.sqrt() - v2.sqrt()).powi(2)).sqrt()
}

fn phi_at(z: f64) -> f64 {
    if z.is_finite() {
        normal_pdf(z)
    } else {
        0.0
    }
}

fn z_phi(z: f64) -> f64 {
    if z.is_finite() {
        z * normal_pdf(z)
    } else {
        0.0
    }
}

/// Squared 𝕎₂ between a 1-D quantile function and N(mean, var), integrating
/// against the analytic normal quantile (no sampling of the reference).
pub fn w2_squared_quantile_to_gaussian(q: &QuantileFn, mean: f64, var: f64) -> f64 {
    let sd = var.sqrt();
    // 8-point Gauss–Legendre on [0, 1]
    const GL_X: [f64; 8] = [
        0.019_855_071_751_231_856,
        0.101_666_761_293_186_63,
        0.237_233_795_041_835_5,
        0.408_282_678_752_175_1,
        0.591_717_321_247_825,
        0.762_766_204_958_164_5,
        0.898_333_238_706_813_4,
        0.980_144_928_248_768_1,
    ];
    const GL_W: [f64; 8] = [
        0.050_614_268_145_188_13,
        0.111_190_517_226_687_24,
        0.156_853_322_938_943_64,
        0.181_341_891_689_181,
        0.181_341_891_689_181,
        0.156_853_322_938_943_64,
        0.111_190_517_226_687_24,
        0.050_614_268_145_188_13,
    ];
    let mut total = 0.0;
    for seg in q.segments() {
        let (qa, qb) = (seg.q0, seg.q1);
        let w = qb - qa;
        if w <= 0.0 {
            continue;
        }
        if seg.x0 == seg.x1 {
            let x = seg.x0;
            let za = normal_quantile_pair(qa, seg.s0);
            let zb = normal_quantile_pair(qb, seg.s1);
            let int_z = phi_at(za) - phi_at(zb);
            let int_z2 = w - (z_phi(zb) - z_phi(za));
            let int_q = mean * w + sd * int_z;
            let int_q2 = mean * mean * w + 2.0 * mean * sd * int_z + var * int_z2;
            total += (x * x * w - 2.0 * x * int_q + int_q2).max(0.0);
        } else {
            let mut acc = 0.0;
            for (t, gw) in GL_X.iter().zip(GL_W) {
                let p = qa + t * w;
                let s = seg.s0 - t * (seg.s0 - seg.s1);
                let x = seg.x0 + t * (seg.x1 - seg.x0);
                let y = mean + sd * normal_quantile_pair(p, s);
                acc += gw * (x - y) * (x - y);
            }
            total += acc * w;
        }
    }
    total
}

pub fn w2_cloud_to_gaussian(mu: &EmpiricalMeasure, mean: f64, var: f64) -> f64 {
    w2_squared_quantile_to_gaussian(&QuantileFn::from_cloud(mu), mean, var).sqrt()
}

pub fn w2_grid_to_gaussian(rho: &GridDensity1D, mean: f64, var: f64) -> f64 {
    w2_squared_quantile_to_gaussian(&QuantileFn::from_grid(rho), mean, var).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::grid::GridSpec;

    #[test]
    fn quantile_inverts_cdf() {
        for z in [-6.0, -2.5, -0.3, 0.0, 0.7, 3.1, 7.0] {
            let p = normal_cdf(z);
            let back = normal_quantile_pair(p, normal_cdf(-z));
            assert!((back - z).abs() < 1e-9, "{z} -> {back}");
        }
    }

    #[test]
    fn dirac_to_gaussian_matches_closed_form() {
        let mu = EmpiricalMeasure::dirac(&[1.0]);
        let w = w2_cloud_to_gaussian(&mu, 0.0, 0.5);
        assert!((w - w2_gaussians(1.0, 0.0, 0.0, 0.5)).abs() < 1e-12);
    }

    #[test]
    fn fine_grid_gaussian_is_close_to_reference() {
        let g = GridSpec::centered(10.0, 0.01).unwrap();
        let rho = GridDensity1D::gaussian(g, 0.3, 0.5).unwrap();
        let w = w2_grid_to_gaussian(&rho, 0.3, 0.5);
        assert!(w < 1e-4, "w2 = {w}");
        let shifted = w2_grid_to_gaussian(&rho, 0.0, 0.5);
        assert!((shifted - 0.3).abs() < 1e-4, "w2 = {shifted}");
    }
}
