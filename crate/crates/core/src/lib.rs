//! Compatibility of finite-outcome quantum observables.
//!
//! The crate works with discrete POVMs on finite-dimensional Hilbert spaces
//! and decides, certifies and constructs the standard compatibility notions
//! between them:
//!
//! - joint measurability (an observable on the product outcome set with the
//!   given marginals),
//! - coexistence (a mother observable whose range contains both ranges),
//! - joint measurability of all binarizations,
//! - relabelings and post-processings,
//! - extremality through minimal Naimark dilations,
//! - steering and local-hidden-state models.
//!
//! Exact statements (commutation, PVM shortcuts, rank-one packing bounds,
//! mother-based joint constructions) are evaluated directly. Existence
//! questions without a closed form are encoded as block-PSD feasibility
//! problems and handed to an alternating-projection engine in [`feasibility`]
//! whose three-valued verdict never claims more than the numerics support.

// Index loops read closer to the matrix formulas than iterator chains.
#![allow(clippy::needless_range_loop)]

pub mod compatibility;
pub mod dilation;
pub mod feasibility;
pub mod fixtures;
pub mod io;
pub mod observable;
pub mod operator;
pub mod repro;
pub mod steering;
pub mod timing;

mod error;

pub use error::{Error, Result};
pub use observable::{DiscreteObservable, RelabelingMap, StochasticMatrix, SubsetMask};
pub use operator::{CMatrix, Tolerance, C64};
