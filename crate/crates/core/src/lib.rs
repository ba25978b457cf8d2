//! Desk-scale laboratory for socially conditioned human-motion prediction.
//!
//! The pipeline: continuous body-motion trajectories are tokenized with
//! factorized vector-quantized codebooks, a causal transformer predicts the
//! next token triplet (pose / orientation / translation) for one dancer, and
//! an evaluation suite measures whether conditioning on the partner's motion
//! improves prediction. Everything runs on CPU with 64-bit reals and is
//! bit-deterministic under a fixed seed.

pub mod baselines;
pub mod container;
pub mod geometry;
pub mod metrics;
pub mod motion;
pub mod predictor;
pub mod quantizer;
pub mod rollout;
pub mod seeding;
pub mod synth;
pub mod tensor;
