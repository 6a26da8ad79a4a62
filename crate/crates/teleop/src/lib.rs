//! Live teleoperation: a WebSocket server that feeds operator commands into
//! the ACC closed loop and streams the resulting state at the controller rate.

pub mod protocol;
pub mod server;
pub mod session;

pub use protocol::{
    parse_command, ClientMessage, CommandMessage, ServerMessage, SessionInfo, StateMessage,
    PROTOCOL_VERSION,
};
pub use server::{bind, router, serve, Health};
pub use session::{Mailbox, Session};
