//! HTTP surface of the findings agent: blocking clients for the model
//! backends, the evaluation service API and a local stub backend.

pub mod clients;
pub mod server;
pub mod stub;

pub use clients::{HttpGenerator, HttpGrounder};
pub use server::{router, serve, AppState};
pub use stub::stub_router;
