//! Web socket front end: one session per connection.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use futures_util::{SinkExt, StreamExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, watch};
use tokio::task::JoinHandle;
use tokio_tungstenite::tungstenite::Message;

use crate::protocol::ServerMessage;
use crate::session::{self, Inbox, Link, Routed, ServiceError, SessionPlan, SessionReport};

/// Accepts connections until the listener fails. Session `n` (counting from
/// zero) is seeded with `plan.seed + n` and writes to `out_dir/<session id>`.
pub async fn serve(listener: TcpListener, plan: Arc<SessionPlan>, out_dir: PathBuf) -> std::io::Result<()> {
    let counter = AtomicU64::new(0);
    loop {
        let (stream, _) = listener.accept().await?;
        let n = counter.fetch_add(1, Ordering::SeqCst);
        let (plan, out_dir) = (plan.clone(), out_dir.clone());
        tokio::spawn(async move {
            if let Err(e) = handle(stream, &plan, &out_dir, n).await {
                eprintln!("session {n}: {e}");
            }
        });
    }
}

/// Binds `addr` and serves in the background.
pub async fn spawn(addr: &str, plan: SessionPlan, out_dir: PathBuf) -> std::io::Result<(SocketAddr, JoinHandle<std::io::Result<()>>)> {
    plan.validate().map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, e.to_string()))?;
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    Ok((local, tokio::spawn(serve(listener, Arc::new(plan), out_dir))))
}

pub fn session_id(seed: u64, n: u64) -> String {
    format!("s{n:04}-{seed}")
}

async fn handle(stream: TcpStream, plan: &SessionPlan, out_dir: &std::path::Path, n: u64) -> Result<SessionReport, ServiceError> {
    let ws = tokio_tungstenite::accept_async(stream)
        .await
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::ConnectionAborted, e))?;
    let (mut sink, mut source) = ws.split();
    let (out_tx, mut out_rx) = mpsc::unbounded_channel::<ServerMessage>();
    let (answer_tx, answer_rx) = mpsc::unbounded_channel();
    let (closed_tx, closed_rx) = watch::channel(false);
    let inbox = Arc::new(Inbox::default());

    let writer = tokio::spawn(async move {
        while let Some(msg) = out_rx.recv().await {
            let text = serde_json::to_string(&msg).expect("server messages serialize");
            if sink.send(Message::text(text)).await.is_err() {
                break;
            }
        }
        let _ = sink.close().await;
    });

    let reader = {
        let (inbox, out_tx) = (inbox.clone(), out_tx.clone());
        tokio::spawn(async move {
            while let Some(frame) = source.next().await {
                let text = match frame {
                    Ok(Message::Text(t)) => t,
                    Ok(Message::Binary(_)) => {
                        let _ = out_tx.send(ServerMessage::Error { message: "binary frames are not accepted".into() });
                        continue;
                    }
                    Ok(Message::Close(_)) | Err(_) => break,
                    Ok(_) => continue,
                };
                match inbox.route(text.as_str()) {
                    Routed::Latched(_) => {}
                    Routed::Answer { q1, q2 } => {
                        let _ = answer_tx.send((q1, q2));
                    }
                    Routed::Rejected(message) => {
                        let _ = out_tx.send(ServerMessage::Error { message });
                    }
                }
            }
            let _ = closed_tx.send(true);
        })
    };

    let seed = plan.seed.wrapping_add(n);
    let id = session_id(plan.seed, n);
    let link = Link { out: out_tx, inbox, answers: answer_rx, closed: closed_rx };
    let report = session::run_session(plan, &id, seed, &out_dir.join(&id), link).await;
    // The link's sender is gone now, so the writer drains and closes the socket.
    let _ = writer.await;
    reader.abort();
    report
}
