//! Dataset-grounded synthetic QA corpus construction and benchmarking.
//!
//! The pipeline runs in stages: dataset/paper curation ([`curation`]),
//! taxonomy-guided QA generation ([`qagen`]), belief-shift answer filtering
//! ([`seper`]), and retrieval / QA evaluation ([`retrieval`], [`evalqa`]).
//! Every model call goes through [`gateway::Gateway`], which can be backed by
//! an HTTP inference server or by the deterministic [`gateway::MockBackend`].

pub mod curation;
pub mod error;
pub mod evalqa;
pub mod gateway;
pub mod jsonl;
pub mod pipeline;
pub mod qagen;
pub mod retrieval;
pub mod seper;
pub mod template;
pub mod types;
pub mod util;

pub use error::{Error, Result};
pub use types::*;
