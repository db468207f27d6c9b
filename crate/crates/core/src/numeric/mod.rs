//! Scalar numerics shared by every other module: the logistic link, the
//! standard normal distribution, quadrature rules and a bracketing root finder.

mod logistic;
mod normal;
mod quadrature;
mod roots;

pub use logistic::{expit, log1p_exp, logit};
pub use normal::{norm_cdf, norm_log_interval, norm_logcdf, norm_quantile, norm_sf};
pub use quadrature::QuadratureRule;
pub use roots::{solve_increasing, RootOptions};
