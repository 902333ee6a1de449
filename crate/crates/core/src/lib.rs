//! Joint event detection and event-relation extraction with structured
//! energy networks and per-class hypersphere prototypes.
//!
//! Three levels share one token encoder:
//!
//! * token level: per-token trigger labels,
//! * sentence level: the event class of each mention, predicted by distance
//!   to class hyperspheres,
//! * document level: relations between pairs of mentions.
//!
//! Each level has an energy network that scores (input, label) pairs and is
//! trained with a margin-rescaled hinge alongside cross-entropy.

pub mod autodiff;
pub mod cli;
pub mod corpus;
pub mod encoders;
pub mod energy;
pub mod error;
pub mod hypersphere;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod pca;
pub mod plot;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
