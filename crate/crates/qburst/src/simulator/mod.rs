//! Shot-stream simulation: per-trigger impact sampling plus basis-prep and
//! Ramsey run generation.

pub mod impacts;
pub mod ramsey;
pub mod run;

pub use impacts::{
    magnitude_bucket, quantize_magnitude, sample_impacts, sample_trigger_stream, TriggerTruth,
    MAGNITUDE_QUANT,
};
pub use ramsey::simulate_ramsey_run;
pub use run::{
    simulate_control_test, simulate_run, simulate_run_with_lambda, GroundTruth, MagnetState,
};
