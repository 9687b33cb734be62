//! Prompt-driven prosody control: phone features, LLM scale suggestions,
//! their mapping to modification coefficients, and listening-test analysis.

// `!(x > 0.0)` is used deliberately so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod eval;
pub mod features;
pub mod llm;
pub mod mapping;
pub mod modifier;
pub mod prompting;
pub mod response;
