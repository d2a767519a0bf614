use std::net::{Ipv4Addr, TcpListener};
use std::time::Duration;

use apfsim_bridge::{Bridge, BridgeError, ClientMessage, HandMessage, ServeOptions, ServerMessage, StateMessage};
use apfsim_core::scenario::Scenario;
use apfsim_core::supervisor::Mode;
use futures::{SinkExt, StreamExt};
use nalgebra::Vector3;
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

fn any_port() -> ServeOptions {
    ServeOptions {
        port: 0,
        ..ServeOptions::default()
    }
}

async fn start() -> Bridge {
    Bridge::start(&Scenario::builtin("live").unwrap(), &any_port()).await.unwrap()
}

async fn connect(bridge: &Bridge) -> Ws {
    let (ws, _) = connect_async(format!("ws://{}/ws", bridge.local_addr())).await.unwrap();
    ws
}

async fn next_message(ws: &mut Ws) -> ServerMessage {
    loop {
        let msg = tokio::time::timeout(Duration::from_secs(5), ws.next())
            .await
            .expect("frame within 5 s")
            .unwrap()
            .unwrap();
        if let Message::Text(text) = msg {
            return serde_json::from_str(text.as_str()).unwrap();
        }
    }
}

async fn next_state(ws: &mut Ws) -> StateMessage {
    loop {
        if let ServerMessage::State(s) = next_message(ws).await {
            return s;
        }
    }
}

async fn send_hand(ws: &mut Ws, pos: Vector3<f64>, drag: Option<Vector3<f64>>) {
    let frame = ClientMessage::Hand(HandMessage::new(pos, drag)).to_json();
    ws.send(Message::text(frame)).await.unwrap();
}

/// Sends a hand position relative to the latest TCP and returns the first
/// state that reflects it, plus how many ticks it took.
async fn probe(ws: &mut Ws, offset: Vector3<f64>) -> (StateMessage, f64) {
    let seen = next_state(ws).await;
    let pos = Vector3::from(seen.tcp) + offset;
    send_hand(ws, pos, None).await;
    loop {
        let s = next_state(ws).await;
        if s.hand == <[f64; 3]>::from(pos) {
            return (s.clone(), (s.t - seen.t) / 0.1);
        }
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn config_comes_first_then_states_in_order() {
    let bridge = start().await;
    let mut ws = connect(&bridge).await;
    match next_message(&mut ws).await {
        ServerMessage::Config(c) => {
            assert_eq!(c.dt, 0.1);
            assert_eq!((c.d_at, c.d_act, c.d_dct), (0.2, 0.1, 0.2));
            assert_eq!(c.waypoints.len(), 3);
        }
        other => panic!("expected config, got {other:?}"),
    }
    let mut last = -1.0;
    for _ in 0..5 {
        let s = next_state(&mut ws).await;
        assert!(s.t > last);
        assert_eq!(s.hand, [10.0; 3]);
        last = s.t;
    }
    bridge.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn hand_in_avoidance_band() {
    let bridge = start().await;
    let mut ws = connect(&bridge).await;
    let (s, ticks) = probe(&mut ws, Vector3::new(0.15, 0.0, 0.0)).await;
    assert!(s.mode.is_avoiding(), "mode {}", s.mode);
    // The frame in flight when the hand was sent may already be queued.
    assert!(ticks <= 2.0 + 1e-9, "applied after {ticks} ticks");
    bridge.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn close_hand_gives_freedrive() {
    let bridge = start().await;
    let mut ws = connect(&bridge).await;
    let (s, ticks) = probe(&mut ws, Vector3::new(0.05, 0.0, 0.0)).await;
    assert_eq!(s.mode, Mode::FreeDrive);
    assert!(ticks <= 2.0 + 1e-9);
    bridge.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn slow_consumer_does_not_slow_the_clock() {
    let bridge = start().await;
    let mut slow = connect(&bridge).await;
    let mut fast = connect(&bridge).await;
    let _ = next_message(&mut slow).await;
    let _ = next_message(&mut fast).await;
    let fast_reader = tokio::spawn(async move {
        let mut ts = Vec::new();
        for _ in 0..25 {
            ts.push(next_state(&mut fast).await.t);
        }
        ts
    });
    let mut slow_ts = Vec::new();
    for _ in 0..6 {
        slow_ts.push(next_state(&mut slow).await.t);
        tokio::time::sleep(Duration::from_millis(450)).await;
    }
    let fast_ts = fast_reader.await.unwrap();
    // The fast client sees every tick.
    for w in fast_ts.windows(2) {
        assert!((w[1] - w[0] - 0.1).abs() < 1e-9, "gap in {fast_ts:?}");
    }
    assert!(slow_ts.windows(2).all(|w| w[1] > w[0]));

    let stats = bridge.stats();
    assert!(stats.ticks >= 25, "{stats:?}");
    let worst = stats.worst_deviation(Duration::from_millis(100)).unwrap();
    assert!(worst < 0.10, "tick interval off by {:.1}%: {stats:?}", worst * 100.0);
    bridge.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn bad_frames_are_counted_and_connection_survives() {
    let bridge = start().await;
    let mut ws = connect(&bridge).await;
    ws.send(Message::text("{not json")).await.unwrap();
    ws.send(Message::text(r#"{"pos":[0,0,0]}"#)).await.unwrap();
    ws.send(Message::text(r#"{"type":"hand","pos":[11,0,0]}"#)).await.unwrap();
    ws.send(Message::binary(vec![1u8, 2, 3])).await.unwrap();
    let pos = Vector3::new(0.5, 0.5, 0.5);
    send_hand(&mut ws, pos, None).await;
    loop {
        let s = next_state(&mut ws).await;
        if s.hand == [0.5, 0.5, 0.5] {
            break;
        }
    }
    assert_eq!(bridge.input().malformed_frames(), 4);
    bridge.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn disconnect_clears_drag() {
    let bridge = start().await;
    let mut ws = connect(&bridge).await;
    let s = next_state(&mut ws).await;
    let pos = Vector3::from(s.tcp) + Vector3::new(0.05, 0.0, 0.0);
    send_hand(&mut ws, pos, Some(Vector3::new(0.0, 0.0, 0.02))).await;
    loop {
        let s = next_state(&mut ws).await;
        if s.mode == Mode::FreeDrive {
            assert_eq!(s.v, [0.0, 0.0, 0.02]);
            break;
        }
    }
    ws.close(None).await.unwrap();
    drop(ws);
    let deadline = tokio::time::Instant::now() + Duration::from_secs(2);
    while bridge.input().latest().drag.is_some() {
        assert!(tokio::time::Instant::now() < deadline, "drag still set after disconnect");
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    bridge.shutdown().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn busy_port_is_reported() {
    let held = TcpListener::bind((Ipv4Addr::LOCALHOST, 0)).unwrap();
    let port = held.local_addr().unwrap().port();
    let opts = ServeOptions {
        port,
        ..ServeOptions::default()
    };
    let err = Bridge::start(&Scenario::builtin("live").unwrap(), &opts).await.err().unwrap();
    assert!(matches!(err, BridgeError::PortInUse(p) if p == port), "{err}");
}

#[tokio::test(flavor = "multi_thread")]
async fn non_live_scenario_is_rejected() {
    let err = Bridge::start(&Scenario::builtin("triangle").unwrap(), &any_port()).await.err().unwrap();
    assert!(matches!(err, BridgeError::Core(apfsim_core::Error::Validation { .. })));
}
