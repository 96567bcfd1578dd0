//! Runtime entry point: hosts the simulation loop as a service and speaks a
//! JSON protocol over a WebSocket.

pub mod engine;
pub mod protocol;
pub mod server;

pub use engine::{Engine, EngineConfig, Rejection, Reply};
pub use protocol::{CommandMessage, DecodeError, ServerMessage, StateMessage};
pub use server::{start, GatewayError, LoopStats, ServeConfig, ServerHandle};
