//! Serves a backend over TCP and connects to one remotely.
//!
//! Per connection the client sends `Hello`, the server answers `VocabReply`,
//! and afterwards every `Query` is answered with one `DistReply`. Only one
//! request is in flight per connection.

mod client;
mod server;
pub mod wire;

pub use client::RemoteBackend;
pub use server::{serve, LogitServer, ShutdownHandle};
pub use wire::{WireMessage, PROTOCOL_VERSION};
