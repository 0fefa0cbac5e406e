//! Context steering: influence, combination, sampling and generation.

pub mod combine;
pub mod generate;
pub mod sampler;
pub mod spec;
pub mod stability;

pub use combine::{
    combine_logits, combine_passes, contextual_influence, cos_next_distribution, run_passes, InfluenceVector,
    StepPasses,
};
pub use generate::{generate, generate_with, GenerateOptions, GenerationTrace, StepRecord};
pub use sampler::{sample_token, SamplerConfig, Strategy, DEFAULT_TEMPERATURE};
pub use spec::{ContextPlacement, ContextTarget, Convention, SteeringSpec, WeightedContext};
pub use stability::{stability_check, stability_check_with, StabilityBounds, StabilityWarning};
