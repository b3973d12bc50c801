//! Chemical reaction networks as electrical networks, and quantum walks for
//! flow detection, finding and energy estimation on them.

pub mod altnet;
pub mod crn;
pub mod electric;
pub mod error;
pub mod linalg;
pub mod masg;
pub mod presets;
pub mod qwalk;

pub use error::{Error, Result};
