//! Measurements over datasets, checkpoints and representations.

pub mod correlate;
pub mod dci;
pub mod embeddings;
pub mod eval;
pub mod nmi;
pub mod pscore;

pub use correlate::{correlate, Correlation};
pub use dci::{dci, Dci, ProbeConfig};
pub use embeddings::{EmbeddingMeta, EmbeddingRecord, EmbeddingSet};
pub use eval::{evaluate, extract_embeddings, extract_representation, EvalOptions, EvalReport, ExtractOptions, Scorer};
pub use nmi::{nmi, JointTable, Normalization};
pub use pscore::{pscore, PScore, PScoreOptions, PairingOrder};
