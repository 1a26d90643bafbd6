//! Newline-delimited JSON tool server over stdio or TCP.
//!
//! Each line in is one [`ToolRequest`]; each line out is the matching
//! [`ToolResponse`], in request order. A connection owns one [`Handler`].

pub mod client;
pub mod protocol;
mod session;
mod transport;

pub use protocol::{codes, ToolError, ToolRequest, ToolResponse};
pub use session::{
    replay_events, LoggedCall, Session, BATCH_ALIAS, DEFAULT_GROUND_SIZE, DEFAULT_TIME_OF_DAY, TOOLS,
};
pub use transport::{serve, serve_connection, HandlerFactory, Transport, TransportError};

/// Anything that answers tool requests: scene sessions, the navigation env, policies.
pub trait Handler: Send {
    fn handle(&mut self, req: &ToolRequest) -> ToolResponse;
}
