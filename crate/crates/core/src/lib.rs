pub mod error;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod motion;
pub mod oracle;
pub mod pipeline;
pub mod partition;
pub mod posegraph;
pub mod registration;

pub use error::{Error, Result};
