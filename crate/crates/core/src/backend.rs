//! Errors shared by every scoring backend, local or remote.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("request timed out")]
    Timeout,
    #[error("backend answered with HTTP status {0}")]
    BadStatus(u16),
    #[error("response does not match the wire schema: {0}")]
    Schema(String),
    #[error("transport failure: {0}")]
    Transport(String),
}
