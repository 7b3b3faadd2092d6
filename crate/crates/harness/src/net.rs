use std::future::Future;
use std::io;
use std::net::SocketAddr;
use std::time::Duration;

use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

pub async fn bind_local() -> io::Result<TcpListener> {
    TcpListener::bind(("127.0.0.1", 0)).await
}

/// A spawned HTTP server that can be stopped and waited for.
#[derive(Debug)]
pub struct ServerTask {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    join: Option<JoinHandle<()>>,
}

impl ServerTask {
    pub fn spawn<F, Fut>(listener: TcpListener, serve: F) -> io::Result<Self>
    where
        F: FnOnce(TcpListener, oneshot::Receiver<()>) -> Fut,
        Fut: Future<Output = io::Result<()>> + Send + 'static,
    {
        let addr = listener.local_addr()?;
        let (tx, rx) = oneshot::channel();
        let fut = serve(listener, rx);
        let join = tokio::spawn(async move {
            if let Err(e) = fut.await {
                tracing::error!("server on {addr} failed: {e}");
            }
        });
        Ok(Self {
            addr,
            shutdown: Some(tx),
            join: Some(join),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn is_running(&self) -> bool {
        self.join.is_some()
    }

    /// Stops accepting, lets in-flight requests finish, closes idle
    /// connections.
    pub async fn stop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(mut join) = self.join.take() {
            if tokio::time::timeout(Duration::from_secs(5), &mut join).await.is_err() {
                join.abort();
            }
        }
    }
}

/// Adapts a oneshot receiver into the shutdown future the servers take.
pub fn on_signal(rx: oneshot::Receiver<()>) -> impl Future<Output = ()> + Send + 'static {
    async move {
        let _ = rx.await;
    }
}
