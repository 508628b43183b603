//! Aspect and opinion term extraction with a linear-chain CRF over subword
//! sequences.
//!
//! Word-level BIO labels are projected onto subwords with auxiliary tags for
//! the sentence markers and trailing pieces ([`align`]), scored by a CRF
//! ([`crf`]) fed either by a hashed-feature emitter ([`emit`]) or by external
//! per-subword logits ([`external`]), trained with AdamW ([`train`]) and
//! evaluated at token and entity level ([`eval`]).

pub mod align;
pub mod cli;
pub mod corpus;
pub mod crf;
pub mod emit;
pub mod eval;
pub mod external;
pub mod labelspace;
pub mod model;
pub mod optim;
pub mod segment;
pub mod synth;
pub mod train;

pub use align::{collapse, project, AlignedSentence};
pub use crf::{CrfParams, EmissionMatrix, PathMask};
pub use labelspace::{default_constraint_mask, parse_tag, LabelSpace, Tag};
pub use model::Model;
