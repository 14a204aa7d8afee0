//! Text routing: predicts which app function a piece of free text is meant
//! for, from a personal usage memory with an LLM fallback.

pub mod config;
pub mod encoder;
pub mod eval;
pub mod integrator;
pub mod llm;
pub mod memory;
pub mod portal;
pub mod trainer;
