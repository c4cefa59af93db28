pub mod access;
pub mod compute;
pub mod config;
pub mod engine;
pub mod fog;
pub mod forwarder;
pub mod harness;
pub mod metrics;
pub mod naming;
pub mod packet;
pub mod roles;
pub mod sim;
pub mod time;
pub mod trace;
