#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod demo_corpus;
pub mod design;
pub mod error;
pub mod gp;
pub mod hgp;
pub mod linalg;
pub mod lmi;
pub mod lpv;
pub mod optim;
pub mod preference;
pub mod sdp;
pub mod search;
pub mod sim;
pub mod stiffness;

pub use error::{Error, Result};
