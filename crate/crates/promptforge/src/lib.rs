//! Execution-driven prompt optimization for LLM code tasks.
//!
//! The engine iteratively mutates a seed instruction into a population of
//! candidate prompts, scores every candidate by generating code with it and
//! running that code against an executable training set, and carries the
//! best scorers forward until the top score stabilizes. The winning prompt
//! is frozen and can then be evaluated on a held-out corpus with a pass@1
//! harness.
//!
//! Module map:
//! - [`dataset`]: corpus ingestion, sampling, LLM-mutated task generation,
//!   and training-set assembly.
//! - [`llm`]: provider-agnostic chat-completion client with retries, token
//!   accounting, response caching, and a deterministic scripted provider.
//! - [`sandbox`]: code extraction from model responses and isolated
//!   subprocess execution of test suites.
//! - [`optimizer`]: the mutate / evaluate / select loop with exact-rational
//!   weighted scoring and convergence detection.
//! - [`runner`]: configuration, CLI commands, run-directory persistence,
//!   and the post-optimization pass@1 evaluation.

pub mod dataset;
pub mod llm;
pub mod optimizer;
pub mod runner;
pub mod sandbox;
