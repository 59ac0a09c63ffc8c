//! HTTP API and command-line interface for the lifecycle governance engine.

pub mod api;
pub mod cli;
pub mod config_file;

use std::sync::Arc;

use stagegate_core::EngineConfig;

/// Opens the configured store and serves the API until interrupted.
pub fn serve(config: EngineConfig) -> std::io::Result<()> {
    let addr = config.listen_address.clone();
    let store: Arc<dyn stagegate_core::Store> = match &config.storage_path {
        Some(dir) => Arc::new(stagegate_core::FileStore::open(dir).map_err(std::io::Error::other)?),
        None => Arc::new(stagegate_core::MemoryStore::new()),
    };
    let engine = stagegate_core::Engine::open(config, store).map_err(std::io::Error::other)?;
    let app = api::router(Arc::new(engine));
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?
        .block_on(async move {
            let listener = tokio::net::TcpListener::bind(&addr).await?;
            eprintln!("listening on {}", listener.local_addr()?);
            axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = tokio::signal::ctrl_c().await;
                })
                .await
        })
}
