//! Reverse-mode automatic differentiation on dynamically shaped f64 arrays.
//!
//! The tape records every primitive operation eagerly. Backward passes are
//! themselves expressed through the same primitives, so gradients are ordinary
//! tape variables and can be differentiated again (needed for gradient
//! penalties and for checking analytic gradients of gradient-based losses).

pub mod check;
pub mod optim;
pub mod store;
pub mod tape;

pub use optim::Adam;
pub use store::ParamStore;
pub use tape::{Tape, Var};
