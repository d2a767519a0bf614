//! WebSocket endpoint. One paced simulation thread publishes frames into a
//! bounded broadcast channel; each client gets its own sender and receiver
//! tasks. A slow client only ever loses its own oldest frames.

use std::future::Future;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::PathBuf;

use apfsim_core::scenario::Scenario;
use axum::extract::ws::{Message, Utf8Bytes, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use futures::{SinkExt, StreamExt};
use tokio::net::TcpListener;
use tokio::sync::{broadcast, watch};
use tokio::task::JoinHandle;
use tower_http::services::ServeDir;

use crate::input::SharedInput;
use crate::protocol::ServerMessage;
use crate::session::{run_paced, LiveSession, LoopControl, TickStats};
use crate::BridgeError;

pub const DEFAULT_PORT: u16 = 8090;

/// Frames buffered per client before the oldest are dropped.
const CHANNEL_DEPTH: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct ServeOptions {
    pub host: IpAddr,
    pub port: u16,
    /// Directory served at `/` next to the socket, e.g. a built UI.
    pub static_dir: Option<PathBuf>,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            host: IpAddr::V4(Ipv4Addr::LOCALHOST),
            port: DEFAULT_PORT,
            static_dir: None,
        }
    }
}

#[derive(Clone)]
struct AppState {
    frames: broadcast::Sender<Utf8Bytes>,
    config: Utf8Bytes,
    input: SharedInput,
    shutdown: watch::Receiver<bool>,
}

pub struct Bridge {
    addr: SocketAddr,
    input: SharedInput,
    control: LoopControl,
    sim: Option<JoinHandle<apfsim_core::Result<()>>>,
    server: JoinHandle<std::io::Result<()>>,
    shutdown: watch::Sender<bool>,
}

impl Bridge {
    /// Binds the socket and starts the simulation clock.
    pub async fn start(scenario: &Scenario, opts: &ServeOptions) -> Result<Self, BridgeError> {
        let session = LiveSession::new(scenario)?;
        let addr = SocketAddr::new(opts.host, opts.port);
        let listener = TcpListener::bind(addr).await.map_err(|e| match e.kind() {
            std::io::ErrorKind::AddrInUse => BridgeError::PortInUse(opts.port),
            _ => BridgeError::Io(format!("{addr}: {e}")),
        })?;
        let addr = listener.local_addr().map_err(|e| BridgeError::Io(e.to_string()))?;

        let input = session.input().clone();
        let config = ServerMessage::Config(session.config().clone()).to_json().into();
        let (frames, _) = broadcast::channel(CHANNEL_DEPTH);
        let (shutdown_tx, shutdown_rx) = watch::channel(false);
        let state = AppState {
            frames: frames.clone(),
            config,
            input: input.clone(),
            shutdown: shutdown_rx.clone(),
        };
        let mut app = Router::new().route("/ws", get(upgrade)).with_state(state);
        if let Some(dir) = &opts.static_dir {
            app = app.fallback_service(ServeDir::new(dir));
        }
        let mut stop_server = shutdown_rx;
        let server = tokio::spawn(async move {
            axum::serve(listener, app)
                .with_graceful_shutdown(async move {
                    let _ = stop_server.wait_for(|s| *s).await;
                })
                .await
        });

        let control = LoopControl::default();
        let ctl = control.clone();
        let sim = tokio::task::spawn_blocking(move || {
            run_paced(session, &ctl.stop, &ctl.stats, |msg| {
                // No subscribers is fine; the loop never waits on clients.
                let _ = frames.send(msg.to_json().into());
            })
        });

        Ok(Self {
            addr,
            input,
            control,
            sim: Some(sim),
            server,
            shutdown: shutdown_tx,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn input(&self) -> &SharedInput {
        &self.input
    }

    pub fn stats(&self) -> TickStats {
        self.control.stats()
    }

    /// Serves until `signal` resolves or the simulation ends, then shuts
    /// down. A simulation error is returned after the server has stopped.
    pub async fn run_until(mut self, signal: impl Future<Output = ()>) -> Result<(), BridgeError> {
        let mut sim = self.sim.take().expect("simulation handle present until shutdown");
        let sim_result = tokio::select! {
            _ = signal => None,
            r = &mut sim => Some(r),
        };
        self.control.request_stop();
        let sim_result = match sim_result {
            Some(r) => r,
            None => sim.await,
        };
        let _ = self.shutdown.send(true);
        let served = self.server.await;
        sim_result.map_err(|e| BridgeError::Io(e.to_string()))??;
        served
            .map_err(|e| BridgeError::Io(e.to_string()))?
            .map_err(|e| BridgeError::Io(e.to_string()))
    }

    pub async fn shutdown(self) -> Result<(), BridgeError> {
        self.run_until(async {}).await
    }
}

/// Runs the bridge until Ctrl-C or the end of the scenario.
pub async fn serve(scenario: &Scenario, opts: &ServeOptions) -> Result<(), BridgeError> {
    let bridge = Bridge::start(scenario, opts).await?;
    log::info!("live bridge on ws://{}/ws", bridge.local_addr());
    bridge
        .run_until(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

async fn upgrade(ws: WebSocketUpgrade, State(state): State<AppState>) -> Response {
    ws.on_upgrade(move |socket| client(socket, state))
}

async fn client(socket: WebSocket, state: AppState) {
    let (mut sink, mut stream) = socket.split();
    let mut frames = state.frames.subscribe();
    let mut shutdown = state.shutdown.clone();
    let input = state.input.clone();

    let outgoing = async move {
        if sink.send(Message::Text(state.config.clone())).await.is_err() {
            return;
        }
        loop {
            match frames.recv().await {
                Ok(frame) => {
                    if sink.send(Message::Text(frame)).await.is_err() {
                        return;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    log::debug!("client lagging, dropped {n} frames");
                }
                Err(broadcast::error::RecvError::Closed) => {
                    let _ = sink.send(Message::Close(None)).await;
                    return;
                }
            }
        }
    };
    let incoming = async {
        while let Some(Ok(msg)) = stream.next().await {
            match msg {
                Message::Text(text) => {
                    if let Err(e) = input.apply_frame(text.as_str()) {
                        log::debug!("dropped client frame: {e}");
                    }
                }
                Message::Binary(_) => input.count_malformed(),
                Message::Close(_) => return,
                Message::Ping(_) | Message::Pong(_) => {}
            }
        }
    };
    tokio::select! {
        _ = outgoing => {}
        _ = incoming => {}
        _ = shutdown.wait_for(|s| *s) => {}
    }
    // A vanished client must not keep pulling the arm.
    input.clear_drag();
}
