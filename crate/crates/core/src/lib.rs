//! Theory-agnostic tomography of prepare-and-measure data.
//!
//! The crate fits generalized probabilistic theory (GPT) models to tables of
//! outcome frequencies, extracts their state and effect spaces, and measures
//! how far a fitted fragment is from admitting a noncontextual model.

pub mod error;
pub mod gptmodel;
pub mod io;
pub mod linalg;
pub mod lp;
pub mod nonclassicality;
pub mod pipeline;
pub mod polytope;
pub mod qp;
pub mod reparam;
pub mod synthdata;
pub mod tomofit;

pub use error::{Error, Result};
