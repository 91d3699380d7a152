//! Deterministic orchestration and virtual-clock simulation for spoken
//! dialogue models that think while the user is still talking.
//!
//! A user turn is cut into fixed-duration speech chunks. After each chunk
//! the model may produce a budgeted block of unspoken reasoning, call tools,
//! or decide to interrupt. [`orchestrator`] drives one turn against a
//! [`backend::Backend`] and records a [`trace::TurnTrace`]; [`metrics`]
//! scores traces; [`trainset`] assembles masked training sequences.

pub mod backend;
pub mod jsonl;
pub mod metrics;
pub mod orchestrator;
pub mod scenario_io;
pub mod timeline;
pub mod tokens;
pub mod tool_runtime;
pub mod trace;
pub mod trainset;
