//! DPG ultraweak solver for steady 2D viscoelastic flow.

pub mod adapt;
pub mod bench;
pub mod checks;
pub mod dpg;
pub mod error;
pub mod forms;
pub mod mesh;
pub mod mms;
pub mod nonlinear;
pub mod params;
pub mod spaces;

pub use error::{Error, Result};
pub use params::{Model, ModelParams};
