//! The mock endpoint behind a real HTTP socket, for exercising the HTTP
//! transport and for pointing other tools at a deterministic model.

use std::collections::HashMap;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{Context, Result};
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::IntoResponse;
use axum::routing::post;
use axum::Router;
use clap::Args;
use mtprompt::llmclient::{MockConfig, MockMode, MockResponder};

#[derive(Args)]
pub struct ServerArgs {
    #[arg(long, default_value = "127.0.0.1:8089")]
    addr: String,
    #[arg(long, default_value = "planted")]
    mode: MockMode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    latency_ms: u64,
    /// Tab-separated `source<TAB>reference` lines to answer with.
    #[arg(long)]
    planted: Option<PathBuf>,
}

fn load_table(path: &PathBuf) -> Result<HashMap<String, String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let (s, r) = l
                .split_once('\t')
                .with_context(|| format!("{}:{}: expected source<TAB>reference", path.display(), i + 1))?;
            Ok((s.trim().to_string(), r.trim().to_string()))
        })
        .collect()
}

async fn completions(State(responder): State<Arc<MockResponder>>, body: String) -> impl IntoResponse {
    let (status, text) = match serde_json::from_str::<serde_json::Value>(&body) {
        Ok(value) => tokio::task::spawn_blocking(move || responder.respond(&value))
            .await
            .unwrap_or_else(|e| (500, format!("{{\"error\":\"{e}\"}}"))),
        Err(e) => (400, serde_json::json!({ "error": { "message": e.to_string() } }).to_string()),
    };
    let status = StatusCode::from_u16(status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (status, [(header::CONTENT_TYPE, "application/json")], text)
}

pub fn serve(args: ServerArgs) -> Result<()> {
    let table = match &args.planted {
        Some(path) => load_table(path)?,
        None => HashMap::new(),
    };
    let config = MockConfig { mode: args.mode, seed: args.seed, latency_ms: args.latency_ms };
    let responder = Arc::new(MockResponder::new(config, table));
    let app = Router::new()
        .route("/chat/completions", post(completions))
        .route("/v1/chat/completions", post(completions))
        .with_state(responder);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener =
            tokio::net::TcpListener::bind(&args.addr).await.with_context(|| format!("cannot bind {}", args.addr))?;
        let addr = listener.local_addr()?;
        println!("listening on http://{addr}");
        std::io::stdout().flush()?;
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
