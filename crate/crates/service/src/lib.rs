//! HTTP workbench over relation-extraction workspaces: upload data, browse
//! ranked trigrams and samples, record reviewer verdicts and retrain.

pub mod api;
pub mod error;
pub mod state;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use tower_http::cors::CorsLayer;

pub use api::router;
pub use error::{ApiError, ApiResult, ErrorBody};
pub use state::AppState;


pub const DEFAULT_PORT: u16 = 8080;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub port: u16,
    pub data_dir: PathBuf,
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Core(#[from] rexloop_core::Error),
    #[error("cannot bind port {port}: {source}")]
    Bind { port: u16, source: std::io::Error },
    #[error("server error: {0}")]
    Serve(#[source] std::io::Error),
}

/// Full application with permissive CORS for a browser front end.
pub fn app(state: Arc<AppState>) -> axum::Router {
    router(state).layer(CorsLayer::permissive())
}

/// Serves until the process is stopped.
pub async fn serve(config: ServiceConfig) -> Result<(), ServeError> {
    let state = Arc::new(AppState::new(&config.data_dir)?);
    let addr = SocketAddr::from(([0, 0, 0, 0], config.port));
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| ServeError::Bind { port: config.port, source })?;
    tracing::info!(%addr, data_dir = %config.data_dir.display(), "workbench listening");
    axum::serve(listener, app(state)).await.map_err(ServeError::Serve)
}
