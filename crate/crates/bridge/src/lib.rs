//! Live bridge: streams simulator state over a WebSocket and takes hand
//! positions (and free-drive pulls) from clients in real time.

pub mod input;
pub mod protocol;
pub mod server;
pub mod session;

pub use input::{apply_hand_input, HandInput, SharedInput, DEFAULT_HAND};
pub use protocol::{parse_client_frame, ClientMessage, ConfigMessage, HandMessage, ServerMessage, StateMessage};
pub use server::{serve, Bridge, ServeOptions, DEFAULT_PORT};
pub use session::{run_paced, LiveSession, LoopControl, TickStats};

#[derive(Debug, thiserror::Error)]
pub enum BridgeError {
    #[error("port {0} is already in use")]
    PortInUse(u16),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] apfsim_core::Error),
}
