//! Starting the daemons named on the command line.

use std::sync::Arc;

use anyhow::{Context, Result};
use oairelay_aggregator::Aggregator;
use oairelay_core::SystemClock;
use oairelay_gateway::GatewayState;
use oairelay_proxy::ProxyState;
use tokio::net::TcpListener;
use tokio::sync::watch;
use tokio::task::JoinSet;

use crate::config::RelayConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Component {
    Proxy,
    Aggregator,
    Gateway,
    All,
}

impl Component {
    fn includes(self, name: Component) -> bool {
        self == Component::All || self == name
    }
}

fn stopped(mut rx: watch::Receiver<bool>) -> impl std::future::Future<Output = ()> + Send + 'static {
    async move {
        let _ = rx.wait_for(|stop| *stop).await;
    }
}

/// Resolves on SIGINT or SIGTERM.
async fn interrupted() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        let mut term = signal(SignalKind::terminate()).expect("installing SIGTERM handler");
        tokio::select! {
            _ = tokio::signal::ctrl_c() => {}
            _ = term.recv() => {}
        }
    }
    #[cfg(not(unix))]
    {
        let _ = tokio::signal::ctrl_c().await;
    }
}

/// Runs until interrupted. Every listener is bound before any daemon
/// starts serving, so a taken port fails the whole launch.
pub async fn run(component: Component, config: RelayConfig) -> Result<()> {
    let (tx, rx) = watch::channel(false);
    let mut tasks = JoinSet::new();
    let mut aggregator = None;

    let proxy = match config.proxy.filter(|_| component.includes(Component::Proxy)) {
        Some(c) => {
            let listener = bind("proxy", c.listen).await?;
            Some((listener, Arc::new(ProxyState::new(&c)?)))
        }
        None => None,
    };
    let agg = match config.aggregator.filter(|_| component.includes(Component::Aggregator)) {
        Some(c) => {
            let listener = bind("aggregator", c.listen).await?;
            let agg = Aggregator::new(c, Arc::new(SystemClock)).context("opening aggregator store")?;
            Some((listener, Arc::new(agg)))
        }
        None => None,
    };
    let gateway = match config.gateway.filter(|_| component.includes(Component::Gateway)) {
        Some(c) => {
            let listener = bind("gateway", c.listen).await?;
            Some((listener, Arc::new(GatewayState::new(c))))
        }
        None => None,
    };
    if proxy.is_none() && agg.is_none() && gateway.is_none() {
        anyhow::bail!("nothing to run: the config has no matching section");
    }

    if let Some((listener, state)) = proxy {
        tasks.spawn(oairelay_proxy::serve(listener, state, stopped(rx.clone())));
    }
    if let Some((listener, agg)) = agg {
        tasks.spawn(oairelay_aggregator::serve(listener, agg.clone(), stopped(rx.clone())));
        let scheduler = agg.clone().run_scheduler(stopped(rx.clone()));
        tasks.spawn(async move {
            scheduler.await;
            Ok(())
        });
        aggregator = Some(agg);
    }
    if let Some((listener, state)) = gateway {
        tasks.spawn(oairelay_gateway::serve(listener, state, stopped(rx.clone())));
    }

    let mut failure = None;
    tokio::select! {
        _ = interrupted() => tracing::info!("shutting down"),
        Some(res) = tasks.join_next() => {
            failure = Some(match res {
                Ok(Ok(())) => anyhow::anyhow!("a daemon stopped unexpectedly"),
                Ok(Err(e)) => anyhow::Error::from(e).context("daemon failed"),
                Err(e) => anyhow::Error::from(e).context("daemon panicked"),
            });
        }
    }
    let _ = tx.send(true);
    while let Some(res) = tasks.join_next().await {
        if let Ok(Err(e)) = res {
            tracing::warn!("during shutdown: {e}");
        }
    }
    if let Some(agg) = aggregator {
        agg.flush().context("flushing aggregator store")?;
    }
    match failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

async fn bind(name: &str, addr: std::net::SocketAddr) -> Result<TcpListener> {
    let listener = TcpListener::bind(addr)
        .await
        .with_context(|| format!("{name}: cannot listen on {addr}"))?;
    println!("{name} listening on http://{}", listener.local_addr()?);
    Ok(listener)
}
