//! Two-stage echocardiography pipeline: view classification followed by
//! multi-view feature fusion for HCM / CA / NORMAL discrimination.

pub mod autograd;
pub mod cli;
pub mod diseasehead;
pub mod domain;
pub mod error;
pub mod eval;
pub mod explain;
pub mod featnet;
mod init;
pub mod ingest;
pub mod tensor;
pub mod train;
pub mod viewnet;

pub use error::{Error, Result};
