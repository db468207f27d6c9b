//! Quadrature against the standard normal density.
//!
//! A [`QuadratureRule`] carries the probabilists' Gauss-Hermite nodes and
//! weights of a given order, normalized so that the weights sum to one:
//!
//! ```text
//!     E[f(X)] ~ sum_i w_i f(x_i),    X ~ N(0, 1)
//! ```
//!
//! Integrands of the form `expit(a + s X)` have poles at imaginary distance
//! `pi / s`. Gauss-Hermite converges slowly once `s` exceeds one, so the rule
//! also carries a trapezoid grid over the standard logistic density, used by
//! callers through the identity
//!
//! ```text
//!     E[expit(a + s X)] = P(Z < a + s X) = E[Phi((a - Z) / s)],   Z ~ Logistic(0, 1)
//! ```
//!
//! whose integrand is entire. Both grids refine with `order`.

use super::norm_cdf;
use crate::error::{Error, Result};

/// Half-width of the logistic trapezoid grid; `exp(-37)` is below f64 resolution at 1.
const LOGISTIC_HALF_WIDTH: f64 = 37.0;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    logistic_nodes: Vec<f64>,
    logistic_weights: Vec<f64>,
    /// `logistic_cumulative[i]` is the sum of the first `i` logistic weights.
    logistic_cumulative: Vec<f64>,
    logistic_step: f64,
}

impl QuadratureRule {
    /// Gauss-Hermite rule of the given order (number of nodes).
    pub fn gauss_hermite(order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::invalid("quadrature order must be >= 1"));
        }
        if order > 400 {
            return Err(Error::invalid("quadrature order above 400 is not supported"));
        }
        let (nodes, weights) = hermite_nodes(order)?;
        let (logistic_nodes, logistic_weights) = logistic_grid(order);
        let mut logistic_cumulative = Vec::with_capacity(logistic_weights.len() + 1);
        let mut acc = 0.0;
        logistic_cumulative.push(acc);
        for w in &logistic_weights {
            acc += w;
            logistic_cumulative.push(acc);
        }
        Ok(Self {
            nodes,
            weights,
            logistic_nodes,
            logistic_weights,
            logistic_cumulative,
            logistic_step: logistic_step(order),
        })
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `E[f(X)]` for `X ~ N(0, 1)`.
    #[inline]
    pub fn expect<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    /// `E[g(Z)]` for `Z` standard logistic, by the trapezoid grid.
    #[inline]
    pub fn expect_logistic<F: FnMut(f64) -> f64>(&self, mut g: F) -> f64 {
        self.logistic_nodes
            .iter()
            .zip(&self.logistic_weights)
            .map(|(&z, &w)| w * g(z))
            .sum()
    }

    /// `E[Phi((a - Z) / s)]` for `Z` standard logistic and `s > 0`, on the
    /// trapezoid grid.
    ///
    /// Nodes where the integrand is within 1e-17 of 1 or 0 are summed from
    /// cumulative weights instead of being evaluated.
    pub fn expect_logistic_normal_cdf(&self, a: f64, s: f64) -> f64 {
        let n = self.logistic_nodes.len();
        let first = self.logistic_nodes[0];
        let index = |z: f64| -> usize {
            let k = ((z - first) / self.logistic_step).ceil();
            if k <= 0.0 {
                0
            } else {
                (k as usize).min(n)
            }
        };
        // Phi(8.5) rounds to one; Phi(-9) is below 1e-18.
        let lo = index(a - 8.5 * s);
        let hi = index(a + 9.0 * s).max(lo);
        let inv = 1.0 / s;
        let mut total = self.logistic_cumulative[lo];
        for i in lo..hi {
            total += self.logistic_weights[i] * norm_cdf((a - self.logistic_nodes[i]) * inv);
        }
        total
    }
}

impl Default for QuadratureRule {
    fn default() -> Self {
        Self::gauss_hermite(30).expect("order 30 is valid")
    }
}

/// Newton iteration on the orthonormal Hermite recurrence, in physicists'
/// convention, then rescaled to the standard normal weight.
fn hermite_nodes(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    const PIM4: f64 = 0.751_125_544_464_942_5; // pi^(-1/4)
    const EPS: f64 = 1e-15;
    const MAX_ITER: usize = 100;

    let mut t = vec![0.0; n];
    let mut w = vec![0.0; n];
    let half = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0;
    for i in 0..half {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.855_75 * (2.0 * nf + 1.0).powf(-0.166_67),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * t[0],
            3 => 1.91 * z - 0.91 * t[1],
            _ => 2.0 * z - t[i - 2],
        };
        let mut pp = 0.0;
        let mut converged = false;
        for _ in 0..MAX_ITER {
            let mut p1 = PIM4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= EPS * z.abs().max(1.0) {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::RootFinding(format!(
                "Hermite node {i} of order {n} did not converge"
            )));
        }
        t[i] = z;
        t[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    if n % 2 == 1 {
        t[half - 1] = 0.0;
    }

    let total: f64 = w.iter().sum();
    let mut pairs: Vec<(f64, f64)> = t
        .iter()
        .zip(&w)
        .map(|(&ti, &wi)| (ti * std::f64::consts::SQRT_2, wi / total))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(pairs.into_iter().unzip())
}

fn logistic_step(order: usize) -> f64 {
    15.0 / order as f64
}

fn logistic_grid(order: usize) -> (Vec<f64>, Vec<f64>) {
    let h = logistic_step(order);
    let k_max = (LOGISTIC_HALF_WIDTH / h).floor() as i64;
    (-k_max..=k_max)
        .map(|k| {
            let z = k as f64 * h;
            let e = (-z.abs()).exp();
            (z, h * e / ((1.0 + e) * (1.0 + e)))
        })
        .unzip()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_integrates_to_one() {
        for order in 1..=120 {
            let rule = QuadratureRule::gauss_hermite(order).unwrap();
            assert_eq!(rule.nodes().len(), order);
            assert_eq!(rule.weights().len(), order);
            assert!((rule.expect(|_| 1.0) - 1.0).abs() < 1e-12, "order {order}");
        }
    }

    #[test]
    fn normal_moments() {
        let rule = QuadratureRule::gauss_hermite(30).unwrap();
        assert!(rule.expect(|x| x).abs() < 1e-13);
        assert!((rule.expect(|x| x * x) - 1.0).abs() < 1e-12);
        assert!((rule.expect(|x| x.powi(4)) - 3.0).abs() < 1e-11);
        assert!((rule.expect(|x| x.powi(6)) - 15.0).abs() < 1e-10);
    }

    #[test]
    fn small_orders_match_closed_form() {
        let r1 = QuadratureRule::gauss_hermite(1).unwrap();
        assert_eq!(r1.nodes(), &[0.0]);
        let r2 = QuadratureRule::gauss_hermite(2).unwrap();
        assert!((r2.nodes()[1] - 1.0).abs() < 1e-14);
        assert!((r2.weights()[0] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn logistic_grid_moments() {
        let rule = QuadratureRule::default();
        assert!((rule.expect_logistic(|_| 1.0) - 1.0).abs() < 1e-13);
        let var = std::f64::consts::PI.powi(2) / 3.0;
        assert!((rule.expect_logistic(|z| z * z) - var).abs() < 1e-10);
    }

    #[test]
    fn truncated_cdf_sum_matches_full_sum() {
        for order in [10, 30, 61] {
            let rule = QuadratureRule::gauss_hermite(order).unwrap();
            for &a in &[-40.0, -8.0, -3.9, 0.0, 2.5, 40.0] {
                for &s in &[1.0, 1.7, 3.0, 10.0] {
                    let full = rule.expect_logistic(|z| norm_cdf((a - z) / s));
                    let fast = rule.expect_logistic_normal_cdf(a, s);
                    assert!((full - fast).abs() < 1e-15, "order {order} a {a} s {s}: {full} vs {fast}");
                }
            }
        }
    }

    #[test]
    fn rejects_order_zero() {
        assert!(QuadratureRule::gauss_hermite(0).is_err());
    }
}
