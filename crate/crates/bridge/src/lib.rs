//! Real-time bridge: runs the simulator against the wall clock and lets a
//! browser steer the virtual user over a web socket.

pub mod driver;
pub mod protocol;
pub mod server;

pub use driver::{Applied, Input, SimDriver};
pub use server::{serve, BridgeOptions};
