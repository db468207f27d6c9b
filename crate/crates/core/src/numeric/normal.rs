use libm::erfc;
use statrs::function::erf::erfc_inv;
use std::f64::consts::SQRT_2;

/// Standard normal CDF.
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    if x == f64::INFINITY {
        1.0
    } else if x == f64::NEG_INFINITY {
        0.0
    } else {
        0.5 * erfc(-x / SQRT_2)
    }
}

/// Standard normal survival function `1 - Phi(x)`, accurate in the upper tail.
#[inline]
pub fn norm_sf(x: f64) -> f64 {
    norm_cdf(-x)
}

/// `ln Phi(x)`, finite for every finite `x`.
pub fn norm_logcdf(x: f64) -> f64 {
    if x >= -37.0 {
        return norm_cdf(x).ln();
    }
    // Asymptotic expansion of the Mills ratio; relative error below 1e-12 here.
    let z2 = x * x;
    let inv = 1.0 / z2;
    let series = 1.0 - inv * (1.0 - 3.0 * inv * (1.0 - 5.0 * inv * (1.0 - 7.0 * inv)));
    -0.5 * z2 - (-x).ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() + series.ln()
}

/// `ln(Phi(b) - Phi(a))` for `a < b`, without cancellation in either tail.
pub fn norm_log_interval(a: f64, b: f64) -> f64 {
    if a >= b {
        return f64::NEG_INFINITY;
    }
    if b <= 0.0 {
        let lb = norm_logcdf(b);
        lb + (-(norm_logcdf(a) - lb).exp()).ln_1p()
    } else if a >= 0.0 {
        norm_log_interval(-b, -a)
    } else {
        (-(norm_cdf(a) + norm_sf(b))).ln_1p()
    }
}

/// Standard normal quantile. Returns `-inf`/`inf` at 0 and 1.
pub fn norm_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        f64::NEG_INFINITY
    } else if p >= 1.0 {
        f64::INFINITY
    } else {
        let x = -SQRT_2 * erfc_inv(2.0 * p);
        // One Halley step against the accurate CDF.
        let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        if pdf == 0.0 {
            return x;
        }
        let err = if x > 0.0 { p - 1.0 + norm_sf(x) } else { norm_cdf(x) - p };
        let u = err / pdf;
        x - u / (1.0 + 0.5 * x * u)
    }
}
