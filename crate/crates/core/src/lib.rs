//! Incomplete utterance rewriting as edit-matrix prediction.
//!
//! A dialogue is flattened into `[query | history | incomplete | [END]]`.
//! Every (context token, incomplete position) pair is scored for two edit
//! operations, thresholded into spans and applied to the incomplete
//! utterance to produce the rewrite.
//!
//! - [`datamodel`]: tokens, dialogues, the flattened input sequence
//! - [`querygen`]: coreference/ellipsis query templates
//! - [`supervision`]: gold edit matrices from LCS alignment
//! - [`scoring`]: the token-pair scorer, circle loss and training
//! - [`rewrite`]: decoding scores into edits and applying them
//! - [`metrics`]: BLEU, ROUGE and exact match

pub mod datamodel;
pub mod error;
pub mod metrics;
pub mod querygen;
pub mod rewrite;
pub mod scoring;
pub mod supervision;

pub use error::{Error, Result};
