use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct RootOptions {
    /// Absolute tolerance on the function value.
    pub f_tol: f64,
    pub max_iter: usize,
    /// Bracket expansions attempted on each side before giving up.
    pub max_expand: usize,
}

impl Default for RootOptions {
    fn default() -> Self {
        Self {
            f_tol: 1e-10,
            max_iter: 200,
            max_expand: 60,
        }
    }
}

/// Solves `f(x) = target` for an increasing `f`, starting from `[lo, hi]`.
///
/// The bracket is widened geometrically until it straddles the target, then
/// refined with the Illinois variant of regula falsi, which keeps the bracket
/// and converges superlinearly.
pub fn solve_increasing<F>(mut f: F, target: f64, lo: f64, hi: f64, opts: RootOptions) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    if !(lo.is_finite() && hi.is_finite() && target.is_finite()) || lo >= hi {
        return Err(Error::RootFinding(format!(
            "invalid bracket [{lo}, {hi}] for target {target}"
        )));
    }
    let mut a = lo;
    let mut b = hi;
    let mut fa = f(a) - target;
    let mut fb = f(b) - target;
    let mut step = (b - a).max(1.0);
    let mut expansions = 0;
    while fa > 0.0 || fb < 0.0 {
        if !(fa.is_finite() && fb.is_finite()) || expansions >= opts.max_expand {
            return Err(Error::RootFinding(format!(
                "could not bracket target {target} from [{lo}, {hi}]"
            )));
        }
        if fa > 0.0 {
            b = a;
            fb = fa;
            a -= step;
            fa = f(a) - target;
        } else {
            a = b;
            fa = fb;
            b += step;
            fb = f(b) - target;
        }
        step *= 2.0;
        expansions += 1;
    }
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }

    let mut side = 0i8;
    for _ in 0..opts.max_iter {
        let mut x = (a * fb - b * fa) / (fb - fa);
        if !(x > a && x < b) {
            x = 0.5 * (a + b);
        }
        let fx = f(x) - target;
        if !fx.is_finite() {
            return Err(Error::RootFinding(format!("non-finite value at {x}")));
        }
        if fx.abs() <= opts.f_tol || (b - a) <= 4.0 * f64::EPSILON * x.abs().max(1.0) {
            return Ok(x);
        }
        if fx < 0.0 {
            a = x;
            fa = fx;
            if side == -1 {
                fb *= 0.5;
            }
            side = -1;
        } else {
            b = x;
            fb = fx;
            if side == 1 {
                fa *= 0.5;
            }
            side = 1;
        }
    }
    Err(Error::RootFinding(format!(
        "no convergence after {} iterations",
        opts.max_iter
    )))
}
