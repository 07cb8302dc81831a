//! Verification toolkit for FIFO machines whose control graph is flat,
//! i.e. no control state lies on two distinct cycles.
//!
//! Flatness makes the usually-undecidable FIFO verification questions
//! tractable: every run follows one of finitely many path schemas
//! `p0 l1* p1 ... lk* pk`, and the channel contents produced by iterating a
//! loop admit an exact periodic closed form. The crates' layers build on
//! that observation:
//!
//! * [`model`]: machine representation, the text/JSON formats, stepping
//!   under perfect, lossy and front-lossy semantics, products, flatness
//!   checking and path-schema enumeration.
//! * [`words`]: the word-combinatorics kernel (primitive roots, the
//!   `x^w = w . y^w` prefix equation, loop projections, iterability,
//!   acceleration of channel contents, cyclicity).
//! * [`explorer`]: bounded explicit-state exploration, used as the ground
//!   -truth oracle for everything else.
//! * [`symbolic`]: periodic content descriptors with affine iteration
//!   counts, symbolic post and acceleration, and the decision procedures
//!   for reachability, control-state reachability (plain and repeated),
//!   termination, boundedness and letter/channel boundedness.
//! * [`lossy`]: simple regular expressions for downward-closed sets, the
//!   lossy reachability set computation, and the two-head pushdown
//!   recognizer used for front-lossy control-state reachability.
//! * [`counters`]: the counting abstraction into flat counter machines,
//!   per-channel order machines, their synchronized product, and the
//!   trace-flattening pipeline.
//! * [`reductions`]: complexity gadgets (3-SAT encodings, reachability vs
//!   control-state reachability transfers) and corpus generation.

pub mod counters;
pub mod explorer;
#[cfg(test)]
pub(crate) mod fixtures;
pub mod lossy;
pub mod model;
pub mod reductions;
pub mod symbolic;
pub mod words;
