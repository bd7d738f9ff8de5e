//! Synthetic labeled-text generation for a binary text construct (sarcasm by
//! default), with grounding and taxonomy-guided prompting, discriminator-based
//! filtering and evaluation of classifiers trained on the synthetic data.

pub mod classifier;
pub mod cleaning;
pub mod corpus;
pub mod evaluation;
pub mod filtering;
pub mod generation;
pub mod io;
pub mod pipeline;
pub mod prompting;
