//! Network layer of the shared splat space: length-prefixed JSON framing,
//! the message schema, the session hub that orders operations and fans out
//! deltas, a tokio TCP server and a blocking client.

pub mod client;
pub mod config;
pub mod frame;
pub mod hub;
pub mod images;
pub mod message;
pub mod schema;
pub mod server;

pub use client::{Client, ClientError, Welcome};
pub use config::{ConfigError, ServerConfig};
pub use frame::{FrameDecoder, FrameError, MAX_FRAME_LEN};
pub use hub::{Clock, Hub, HubConfig};
pub use message::{Attachment, Body, DeltaBody, InvalidMessage, JobBody, JobPayload, Message, MESSAGE_TYPES};
pub use server::{BackgroundServer, Server, ServerHandle};
