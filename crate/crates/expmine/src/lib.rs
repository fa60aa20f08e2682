//! Experience mining and serving for tool-calling search agents.
//!
//! The pipeline turns raw rollout trajectories into a leveled experience
//! knowledge base and feeds that knowledge back into new episodes:
//!
//! 1. [`trajectory`] — the rollout data model and its line-delimited file format.
//! 2. [`distill`] — contrastive reflection over each question's successful vs
//!    failed rollouts, producing case experiences (level 1).
//! 3. [`cluster`] — agglomerative clustering of experience embeddings plus LLM
//!    summarization, iterated into strategy levels (level 2 and up).
//! 4. [`hek`] — persistence and exact parent-child retrieval over the leveled
//!    base: short titles are matched, full records are returned.
//! 5. [`rollout`] — the agent episode loop with strategy injection at episode
//!    start and threshold-filtered case injection next to tool responses.
//! 6. [`grpo`] — outcome rewards, group-relative advantages, and the clipped
//!    masked surrogate objective as exact reference numerics (no training).
//! 7. [`eval`] — EM / cover-EM / word-F1 metrics and the judge harness.
//!
//! Clients (chat, embedding, document search) are pluggable: each has an HTTP
//! implementation and a deterministic offline mock, so the whole pipeline runs
//! bit-reproducibly without any network access.
//!
//! Data-parallel stages (distillation, batch rollouts, batch evaluation) run
//! on rayon when the default `parallel` feature is enabled and fall back to
//! sequential iteration without it.

pub mod clients;
pub mod cluster;
pub mod distill;
pub mod error;
pub mod eval;
pub mod experience;
pub mod grpo;
pub mod hek;
mod jsonscan;
mod par;
pub mod rollout;
pub mod templates;
pub mod trajectory;
pub mod vecmath;

pub use error::{Error, Result};

/// Label for the compiled execution mode, used by benches and `--version` output.
pub fn parallelism_mode() -> &'static str {
    if cfg!(feature = "parallel") {
        "parallel"
    } else {
        "sequential"
    }
}
