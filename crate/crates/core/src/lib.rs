pub mod agent;
pub mod attest;
pub mod bench;
pub mod crypto;
pub mod gateway;
pub mod image;
pub mod kat;
pub mod keymgr;
pub mod logger;
pub mod memguard;
pub mod net;
pub mod sim;
pub mod wire;

pub use wire::NodeId;

/// Milliseconds on the injected clock.
pub type Millis = u64;
