//! HTTP and web-socket front end around a [`SimDriver`].

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use futures::{SinkExt, StreamExt};
use tokio::net::TcpListener;
use tokio::sync::{broadcast, mpsc, watch};
use tokio::time::{Instant, MissedTickBehavior};

use crate::driver::{Applied, Input, SimDriver};
use crate::protocol::{
    parse_request, Ack, CommandError, ErrorCode, ErrorReply, Role, ServerMessage, PROTOCOL_VERSION,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BridgeOptions {
    /// Simulated seconds per wall-clock second.
    pub time_scale: f64,
    /// State broadcasts per wall-clock second.
    pub broadcast_hz: f64,
}

impl Default for BridgeOptions {
    fn default() -> Self {
        Self {
            time_scale: 1.0,
            broadcast_hz: 30.0,
        }
    }
}

/// Broadcasts a client may fall behind before it is dropped.
const BROADCAST_BACKLOG: usize = 16;
/// Replies a client may have outstanding before it is dropped.
const REPLY_BACKLOG: usize = 64;
/// Wall-clock pacing of the simulation loop.
const LOOP_PERIOD: Duration = Duration::from_millis(2);

struct Shared {
    inputs: mpsc::UnboundedSender<Input>,
    states: broadcast::Sender<Arc<str>>,
    controller: Mutex<Option<u64>>,
    clients: Mutex<HashMap<u64, mpsc::Sender<String>>>,
    next_client: AtomicU64,
    sim_time: watch::Receiver<f64>,
}

impl Shared {
    fn send_to(&self, client: u64, msg: &ServerMessage) {
        let sender = self.clients.lock().unwrap().get(&client).cloned();
        if let Some(tx) = sender {
            // A full reply queue means the client is not reading; drop it.
            if tx.try_send(msg.to_json()).is_err() {
                self.clients.lock().unwrap().remove(&client);
            }
        }
    }

    fn role(&self, client: u64) -> Role {
        if *self.controller.lock().unwrap() == Some(client) {
            Role::Controller
        } else {
            Role::Observer
        }
    }
}

/// Next broadcast for a subscriber, or `None` once it has fallen behind
/// (or the server shut down).
pub async fn next_state(rx: &mut broadcast::Receiver<Arc<str>>) -> Option<Arc<str>> {
    rx.recv().await.ok()
}

/// Serves until the simulation loop fails. The loop owns the driver; all
/// network tasks talk to it through queues.
pub async fn serve(listener: TcpListener, driver: SimDriver, options: BridgeOptions) -> anyhow::Result<()> {
    let (inputs_tx, inputs_rx) = mpsc::unbounded_channel();
    let (states_tx, _) = broadcast::channel(BROADCAST_BACKLOG);
    let (time_tx, time_rx) = watch::channel(driver.time());
    let shared = Arc::new(Shared {
        inputs: inputs_tx,
        states: states_tx,
        controller: Mutex::new(None),
        clients: Mutex::new(HashMap::new()),
        next_client: AtomicU64::new(1),
        sim_time: time_rx,
    });
    let app = Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/ws", get(ws_handler))
        .with_state(shared.clone());
    let sim = tokio::spawn(sim_loop(driver, inputs_rx, shared, time_tx, options));
    tokio::select! {
        served = axum::serve(listener, app) => served?,
        ended = sim => ended??,
    }
    Ok(())
}

async fn sim_loop(
    mut driver: SimDriver,
    mut inputs: mpsc::UnboundedReceiver<Input>,
    shared: Arc<Shared>,
    time_tx: watch::Sender<f64>,
    options: BridgeOptions,
) -> anyhow::Result<()> {
    let origin = Instant::now();
    let sim_origin = driver.time();
    let broadcast_period = Duration::from_secs_f64(1.0 / options.broadcast_hz);
    let mut next_broadcast = origin;
    let mut ticker = tokio::time::interval(LOOP_PERIOD);
    ticker.set_missed_tick_behavior(MissedTickBehavior::Skip);
    loop {
        ticker.tick().await;
        while let Ok(input) = inputs.try_recv() {
            driver.submit(input);
        }
        let target = sim_origin + origin.elapsed().as_secs_f64() * options.time_scale;
        let applied = driver.advance_to(target).map_err(|e| {
            tracing::error!("simulation stopped: {e}");
            e
        })?;
        for a in applied {
            reply(&shared, a);
        }
        time_tx.send_replace(driver.time());
        let now = Instant::now();
        if now >= next_broadcast {
            let json: Arc<str> = ServerMessage::State(driver.snapshot()).to_json().into();
            // No subscribers is fine.
            let _ = shared.states.send(json);
            next_broadcast += broadcast_period;
            if next_broadcast < now {
                next_broadcast = now + broadcast_period;
            }
        }
    }
}

fn reply(shared: &Shared, a: Applied) {
    let msg = match a.result {
        Ok(()) => ServerMessage::Ack(Ack {
            v: PROTOCOL_VERSION,
            id: a.id,
            cmd: a.cmd.into(),
            t: a.t,
            role: shared.role(a.client),
        }),
        Err((code, message)) => ServerMessage::Err(ErrorReply {
            v: PROTOCOL_VERSION,
            id: a.id,
            code,
            message,
        }),
    };
    shared.send_to(a.client, &msg);
}

async fn ws_handler(ws: WebSocketUpgrade, State(shared): State<Arc<Shared>>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| client_session(socket, shared))
}

async fn client_session(socket: WebSocket, shared: Arc<Shared>) {
    let client = shared.next_client.fetch_add(1, Ordering::Relaxed);
    let role = {
        let mut controller = shared.controller.lock().unwrap();
        if controller.is_none() {
            *controller = Some(client);
            Role::Controller
        } else {
            Role::Observer
        }
    };
    let (reply_tx, mut reply_rx) = mpsc::channel::<String>(REPLY_BACKLOG);
    // The map holds the only sender, so removing the entry ends the session.
    shared.clients.lock().unwrap().insert(client, reply_tx);
    let mut states = shared.states.subscribe();
    tracing::info!(client, ?role, "client connected");

    let greeting = ServerMessage::Ack(Ack {
        v: PROTOCOL_VERSION,
        id: None,
        cmd: "connect".into(),
        t: *shared.sim_time.borrow(),
        role,
    });
    let (mut sink, mut stream) = socket.split();

    let writer = async {
        if sink.send(Message::Text(greeting.to_json().into())).await.is_err() {
            return;
        }
        loop {
            let text: String = tokio::select! {
                state = next_state(&mut states) => match state {
                    Some(s) => s.to_string(),
                    None => {
                        tracing::warn!(client, "dropping client that fell behind");
                        return;
                    }
                },
                r = reply_rx.recv() => match r {
                    Some(r) => r,
                    None => return,
                },
            };
            if sink.send(Message::Text(text.into())).await.is_err() {
                return;
            }
        }
    };

    let reader = async {
        while let Some(Ok(frame)) = stream.next().await {
            let text = match frame {
                Message::Text(t) => t.to_string(),
                Message::Close(_) => break,
                Message::Binary(_) => {
                    let e = CommandError {
                        id: None,
                        code: ErrorCode::Malformed,
                        message: "binary frames are not supported".into(),
                    };
                    shared.send_to(client, &ServerMessage::Err(e.into()));
                    continue;
                }
                _ => continue,
            };
            let request = match parse_request(&text) {
                Ok(r) => r,
                Err(e) => {
                    shared.send_to(client, &ServerMessage::Err(e.into()));
                    continue;
                }
            };
            if shared.role(client) != Role::Controller {
                let e = CommandError {
                    id: request.id,
                    code: ErrorCode::ReadOnly,
                    message: "another client holds control".into(),
                };
                shared.send_to(client, &ServerMessage::Err(e.into()));
                continue;
            }
            let input = Input::Command {
                client,
                id: request.id,
                command: request.command,
            };
            if shared.inputs.send(input).is_err() {
                break;
            }
        }
    };

    tokio::select! {
        _ = writer => {}
        _ = reader => {}
    }
    shared.clients.lock().unwrap().remove(&client);
    let was_controller = {
        let mut controller = shared.controller.lock().unwrap();
        if *controller == Some(client) {
            *controller = None;
            true
        } else {
            false
        }
    };
    if was_controller {
        tracing::info!(client, "controller left, engaging fail-safe");
        let _ = shared.inputs.send(Input::Failsafe);
    } else {
        tracing::info!(client, "observer left");
    }
}
