//! Document-level role-filler entity extraction.
//!
//! * [`ree`] and [`io`]: documents, templates and the JSONL interchange format.
//! * [`ceaf`]: the CEAF-REE entity-alignment metric.
//! * [`linearize`]: templates to pointer sequences and back.
//! * [`model`]: a small generative pointer transformer with constrained greedy decoding.
//! * [`analysis`]: coreference buckets, nested-role subsets, decoding ablations and paired bootstrap.
//! * [`synth`]: a synthetic corpus generator.

pub mod error;
pub mod ree;
pub mod io;
pub mod ceaf;
pub mod linearize;
pub mod model;
pub mod synth;
pub mod analysis;

pub use error::{Error, Result};
pub use ree::{normalize_mention, Corpus, Document, Entity, Mention, RoleId, Span, Template};
