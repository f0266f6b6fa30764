//! Estimators: linear/exponential/sinusoid least squares, the global
//! rate-model fit, SPAM estimation, and transient-recovery extraction.

pub mod exponential;
pub mod linear;
pub mod lm;
pub mod ratefit;
pub mod sinusoid;

pub use exponential::{extract_transient_recovery, fit_exponential, fit_exponential_weighted, ExpFit};
pub use linear::{fit_linear, fit_through_origin, LinearFit, OriginFit};
pub use lm::{fit_least_squares, numerical_jacobian, LmOptions, LmResult};
pub use ratefit::{
    estimate_spam, fit_rate_model, weighted_mean_t1, BaselineSeries, RateFitResult, RateTrace,
};
pub use sinusoid::{fit_decaying_cosine, fit_decaying_sinusoid, fit_decaying_sinusoid_with_init, SinusoidFit};
