//! Real-time WebSocket service: a remote operator steers the simulated
//! robot through `/session` while arbitration runs every tick.
//!
//! JSON schemas for the six message types live in `docs/schemas/`.

pub mod protocol;
pub mod server;
pub mod session;

pub use protocol::{ClientMessage, ErrorCode, ServerBody, ServerMessage, MESSAGE_TYPES, PROTOCOL_VERSION};
pub use server::{router, serve, ServiceConfig};
pub use session::Session;
