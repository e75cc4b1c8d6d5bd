//! Curation kernel for counterfactual image-caption data.
//!
//! The crate is `no_std` (with `alloc`) and contains no IO. It covers:
//!
//! * [`grounded`]: entity-tagged caption parsing and image records,
//! * [`spatial`]: box relations, overlap tests, flips and recentering,
//! * [`positions`], [`counting`], [`attributes`]: the three curation tracks,
//! * [`jobs`]: content-addressed generation work orders,
//! * [`assemble`]: train/test split, grouped batches, conversations,
//! * [`eval`]: scoring protocols, aggregation, retrieval precision.
//!
//! The `countercurate` crate wires these into file formats, generator
//! clients and the CLI.

#![no_std]
#![warn(missing_docs)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod assemble;
pub mod attributes;
pub mod counting;
pub mod eval;
pub mod grounded;
pub mod jobs;
pub mod positions;
pub mod rng;
pub mod spatial;
pub mod text;

pub use grounded::{BoundingBox, EntityId, EntitySpan, GroundedCaption, ImageRecord};
pub use jobs::{GenerationJob, JobId, JobKind, JobSpec, JobStatus};
pub use spatial::{Relation, RelationFact};
