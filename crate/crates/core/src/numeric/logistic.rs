/// Inverse logit, `1 / (1 + e^-x)`, evaluated without overflow for any finite `x`.
#[inline]
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(p / (1 - p))`.
#[inline]
pub fn logit(p: f64) -> f64 {
    p.ln() - (-p).ln_1p()
}

/// `log(1 + e^x)`.
#[inline]
pub fn log1p_exp(x: f64) -> f64 {
    if x > 35.0 {
        x
    } else if x < -37.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expit_center_and_inverse() {
        assert_eq!(expit(0.0), 0.5);
        let l = logit(0.02);
        assert!((l - (-3.891820298110627)).abs() < 1e-12);
        assert!((expit(l) - 0.02).abs() < 1e-15);
    }

    #[test]
    fn expit_tails() {
        let v = expit(-40.0);
        assert!(v > 0.0 && v < 1e-17);
        assert!(expit(700.0) == 1.0);
        assert!(expit(-700.0) > 0.0);
        assert!(expit(-700.0).is_finite());
    }

    #[test]
    fn expit_monotone_on_grid() {
        let mut prev = 0.0;
        for i in -7000..=7000 {
            let v = expit(i as f64 * 0.1);
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn log1p_exp_matches_naive() {
        for &x in &[-1.0, 0.0, 1.0, 10.0, 30.0, 40.0] {
            let naive = (1.0 + f64::exp(x)).ln();
            assert!((log1p_exp(x) - naive).abs() <= 1e-14 * naive.abs());
        }
        let e = f64::exp(-10.0);
        assert!((log1p_exp(-10.0) / (e - e * e / 2.0 + e.powi(3) / 3.0 - e.powi(4) / 4.0) - 1.0).abs() < 1e-15);
        assert!((log1p_exp(-50.0) / f64::exp(-50.0) - 1.0).abs() < 1e-15);
    }
}
