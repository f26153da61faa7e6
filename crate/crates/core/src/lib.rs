//! GRAFT-Net: early fusion of knowledge-base facts and entity-linked text
//! for open-domain question answering, at desk scale.

pub mod config;
pub mod error;
pub mod ids;
pub mod model;
pub mod pipeline;
pub mod retrieval;
pub mod store;
pub mod synth;
pub mod trainer;

pub use error::{GraftError, Result};
pub use ids::{DocId, EntityId, RelationId};
