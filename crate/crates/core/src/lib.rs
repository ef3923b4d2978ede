//! Persona-conditioned dialogue models: corpus handling, the ranking and
//! generative next-utterance models, and their evaluation harness.

pub mod corpus;
pub mod eval;
pub mod generative;
pub mod numeric;
pub mod rankers;
pub mod textrep;
