//! `blendlab serve`: the WebSocket service on a TCP port.

use std::sync::Arc;

use blendlab::arbitration::{ArbitratorRegistry, Method};
use blendlab::simulator::{EpisodeConfig, Scenario};
use blendlab_service::ServiceConfig;

use crate::{CliError, ServeArgs, EXIT_OK};

pub fn service_config(args: &ServeArgs) -> Result<ServiceConfig, CliError> {
    let scenario = Scenario::load(&args.scenario).map_err(|e| CliError::config(e.to_string()))?;
    let registry = ArbitratorRegistry::standard();
    let method: Method = args.method.parse().map_err(|_| {
        CliError::config(format!(
            "unknown method {:?}; valid methods: {}",
            args.method,
            registry.names().join(", ")
        ))
    })?;
    if args.tick_ms == 0 {
        return Err(CliError::config("--tick-ms must be at least 1"));
    }
    let mut episode = EpisodeConfig::new(method);
    episode.seed = args.seed;
    Ok(ServiceConfig {
        scenario,
        episode,
        tick_ms: args.tick_ms,
        registry: Arc::new(registry),
    })
}

/// Binds before starting the runtime so that a busy port fails fast, then
/// serves until the process is stopped. Prints the session URL on stdout.
pub fn cmd_serve(args: &ServeArgs) -> Result<i32, CliError> {
    let config = service_config(args)?;
    let listener = std::net::TcpListener::bind((args.host.as_str(), args.port))
        .map_err(|e| CliError::config(format!("cannot listen on {}:{}: {e}", args.host, args.port)))?;
    listener
        .set_nonblocking(true)
        .map_err(|e| CliError::config(e.to_string()))?;
    let addr = listener.local_addr().map_err(|e| CliError::config(e.to_string()))?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::config(e.to_string()))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::from_std(listener).map_err(|e| CliError::config(e.to_string()))?;
        println!("serving ws://{addr}/session ({} Hz)", 1000.0 / config.tick_ms as f64);
        blendlab_service::serve(listener, config)
            .await
            .map_err(|e| CliError::config(format!("server stopped: {e}")))
    })?;
    Ok(EXIT_OK)
}
