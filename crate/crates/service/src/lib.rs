//! Live deployment over WebSocket.
//!
//! One operator at a time connects, receives a `state_update` per environment
//! step and an `assist_request` whenever the deployment loop asks for help,
//! then answers with `proposal` or `abandon` messages. Each frame holds one
//! JSON object followed by a newline.

pub mod protocol;
mod server;

pub use protocol::{
    health_pct, snapshot_payload, ActionSpec, ClientMessage, CloseOutcome, LegalActions, ServerMessage, StatePayload,
    UnitView, VarianceView,
};
pub use server::{ServeConfig, Server, ServiceChannel};
