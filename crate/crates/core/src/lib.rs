//! Energy minimization for UAV-assisted mobile edge computing: bit
//! allocation, subslot scheduling, transmit power and UAV trajectory.

pub mod channel;
pub mod cli;
pub mod dual;
pub mod energy;
pub mod error;
pub mod joint;
pub mod kernel;
pub mod model;
pub mod oracle;
pub mod output;
pub mod scenario;
pub mod trajectory;
pub mod validate;

pub use error::{MecError, Result};
