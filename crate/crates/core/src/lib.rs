//! Identifiability analysis for latent class models in multiple-systems
//! (capture-recapture) estimation.
//!
//! The crate is organised bottom-up:
//!
//! * [`pattern`] and [`model`] hold the domain types (inclusion patterns,
//!   latent class models, cell probabilities, moments, contingency tables)
//!   and the direct cell-probability computation.
//! * [`moments`] maps between cell probabilities and mixed moments and tests
//!   two moment vectors for proportionality.
//! * [`identifiability`] decides whether a `J`-class family is identifiable
//!   from `K` sources, builds explicit counterexample pairs and checks the
//!   rank of the class-product matrix.
//! * [`simulation`] draws seeded capture tables.
//! * [`estimation`] fits models by conditional-likelihood EM and probes for
//!   nonidentifiability across random starts.
//! * [`io`] reads and writes the model JSON and table CSV formats.
//! * [`cli`] implements the `lcm-ident` command-line tool.

pub mod cli;
pub mod error;
pub mod estimation;
pub mod identifiability;
pub mod io;
pub mod model;
pub mod moments;
pub mod pattern;
pub mod rng;
pub mod simulation;
pub mod warnings;

pub use error::{Error, Result};
pub use model::{CellProbabilityVector, ContingencyTable, LatentClassModel, MomentVector};
pub use pattern::{enumerate_patterns, InclusionPattern, PatternOrder, MAX_SOURCES, MIN_SOURCES};
