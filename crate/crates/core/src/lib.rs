//! Streaming fusion of single-view oriented 3D box proposals into a global,
//! queryable set of object boxes, without dense reconstruction.

pub mod association;
pub mod eval;
pub mod fusion;
pub mod geometry;
pub mod semantics;
pub mod stream;
pub mod dataio;
