//! HTTP and WebSocket front end for interactive fusion saliency.
//!
//! | Method | Path | |
//! |---|---|---|
//! | GET | `/models` | model names |
//! | GET | `/pairs` | available image pairs |
//! | POST | `/sessions` | `{"model", "pair"?}`: run and retain a forward pass |
//! | GET | `/sessions/{id}` | session images and display settings |
//! | POST | `/sessions/{id}/display` | `{"gamma_corr1", "gamma_corr2"}` in `[0.1, 2]` |
//! | WS | `/sessions/{id}/hover` | send `{"pixel": i}`, receive Jacobian frames |
//! | POST/GET | `/sessions/{id}/guidance` | start the guidance job / fetch the cached result |
//! | GET | `/sessions/{id}/bench?hovers=N` | hover latency benchmark |
//! | GET | `/sessions/{id}/export/{artifact}` | PNG or CSV exports |
//! | GET/POST | `/jobs/{id}`, `/jobs/{id}/cancel` | job status and cancellation |

mod api;
pub mod config;
mod error;
pub mod payload;
pub mod state;

use std::sync::Arc;

pub use api::{router, run_bench, BenchReport};
pub use config::Config;
pub use error::ServiceError;
pub use state::AppState;

/// Binds the configured address and serves until the process ends.
pub async fn serve(config: Config) -> Result<(), ServiceError> {
    let addr = config.addr()?;
    let state = Arc::new(AppState::new(config)?);
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, pairs = state.pairs.len(), "listening");
    serve_on(listener, state).await
}

pub async fn serve_on(listener: tokio::net::TcpListener, state: Arc<AppState>) -> Result<(), ServiceError> {
    axum::serve(listener, router(state)).await?;
    Ok(())
}
