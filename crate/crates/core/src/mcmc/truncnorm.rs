//! Truncated normal sampling and density.

use std::f64::consts::SQRT_2;

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use statrs::function::erf::{erfc, erfc_inv};

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Standard normal CDF.
#[inline]
pub(crate) fn norm_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

#[inline]
fn norm_quantile(p: f64) -> f64 {
    -SQRT_2 * erfc_inv(2.0 * p)
}

/// `ln Phi(z)`, accurate far into both tails.
pub(crate) fn ln_norm_cdf(z: f64) -> f64 {
    if z < -35.0 {
        let z2 = z * z;
        let mut term = 1.0;
        let mut series = 1.0;
        for k in 1..6 {
            term *= -((2 * k - 1) as f64) / z2;
            series += term;
        }
        -0.5 * z2 - (-z).ln() - LN_SQRT_2PI + series.ln()
    } else if z > 5.0 {
        (-0.5 * erfc(z / SQRT_2)).ln_1p()
    } else {
        norm_cdf(z).ln()
    }
}

/// `ln(Phi(b) - Phi(a))` for `a < b`.
fn ln_norm_mass(a: f64, b: f64) -> f64 {
    // work in the lower tail where Phi has full relative precision
    let (a, b) = if a > 0.0 { (-b, -a) } else { (a, b) };
    if b > 0.0 {
        // interval straddles zero
        return (1.0 - norm_cdf(a) - norm_cdf(-b)).ln();
    }
    let lb = ln_norm_cdf(b);
    let la = ln_norm_cdf(a);
    lb + (-(la - lb).exp()).ln_1p()
}

fn check(mean: f64, sd: f64, lo: f64, hi: f64) -> Result<()> {
    if !mean.is_finite() || !(sd > 0.0) || !sd.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "truncated normal needs finite mean and sd > 0, got mean={mean} sd={sd}"
        )));
    }
    if lo.is_nan() || hi.is_nan() || lo >= hi {
        return Err(Error::InvalidParameter(format!(
            "truncation needs lo < hi, got ({lo}, {hi})"
        )));
    }
    Ok(())
}

/// Draw from `Normal(mean, sd)` restricted to the open interval `(lo, hi)`.
///
/// Uses the inverse CDF on the truncated uniform interval, oriented so the
/// computation happens in the lower tail. Intervals so far out that the CDF
/// difference underflows fall back to exponential rejection.
pub fn truncated_normal_sample<R: Rng + ?Sized>(mean: f64, sd: f64, lo: f64, hi: f64, rng: &mut R) -> Result<f64> {
    check(mean, sd, lo, hi)?;
    if lo == f64::NEG_INFINITY && hi == f64::INFINITY {
        let z: f64 = StandardNormal.sample(rng);
        return Ok(mean + sd * z);
    }
    let a = (lo - mean) / sd;
    let b = (hi - mean) / sd;
    let flip = a > 0.0;
    let (a, b) = if flip { (-b, -a) } else { (a, b) };
    loop {
        let z = if b < -35.0 {
            upper_tail_rejection(-b, -a, rng).map(|z| -z)
        } else {
            let pa = norm_cdf(a);
            let pb = norm_cdf(b);
            let u: f64 = rng.random();
            let p = pa + u * (pb - pa);
            if p > 0.0 && p < 1.0 {
                Some(norm_quantile(p))
            } else {
                None
            }
        };
        let Some(z) = z else { continue };
        let z = if flip { -z } else { z };
        let x = mean + sd * z;
        if x > lo && x < hi {
            return Ok(x);
        }
    }
}

/// Exponential-proposal rejection sampler for `Z > a` (and `Z < b`), `a > 0`.
fn upper_tail_rejection<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> Option<f64> {
    let rate = 0.5 * (a + (a * a + 4.0).sqrt());
    let e: f64 = Exp1.sample(rng);
    let z = a + e / rate;
    let u: f64 = rng.random();
    if z < b && u.ln() <= -0.5 * (z - rate) * (z - rate) {
        Some(z)
    } else {
        None
    }
}

/// Log density of the truncated normal, normalized over `(lo, hi)`;
/// `-inf` outside the support.
pub fn truncated_normal_log_density(x: f64, mean: f64, sd: f64, lo: f64, hi: f64) -> Result<f64> {
    check(mean, sd, lo, hi)?;
    if !(x > lo && x < hi) {
        return Ok(f64::NEG_INFINITY);
    }
    let z = (x - mean) / sd;
    let base = -0.5 * z * z - LN_SQRT_2PI - sd.ln();
    if lo == f64::NEG_INFINITY && hi == f64::INFINITY {
        return Ok(base);
    }
    Ok(base - ln_norm_mass((lo - mean) / sd, (hi - mean) / sd))
}
