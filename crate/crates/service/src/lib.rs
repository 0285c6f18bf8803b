//! Real-time study server: sessions of merging trials against a live client.

pub mod commands;
pub mod protocol;
pub mod server;
pub mod session;
