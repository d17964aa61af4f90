mod common;

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use predserve_core::wire::{encode_message, ErrorMessage, Handshake, PredictResponse, WireMessage};
use predserve_core::{Error, InputPayload, InputType, ReplicaId};
use predserve_server::container::{spawn_container, ContainerOptions, NoopModel};
use predserve_server::transport::{read_message, ReplicaConnection, TransportConfig};
use tokio::io::AsyncWriteExt;
use tokio::net::{TcpListener, TcpStream};

async fn listener() -> (TcpListener, std::net::SocketAddr) {
    let l = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let a = l.local_addr().unwrap();
    (l, a)
}

async fn send(s: &mut TcpStream, m: &WireMessage) {
    s.write_all(&encode_message(m).unwrap()).await.unwrap();
}

fn handshake() -> WireMessage {
    WireMessage::Handshake(Handshake { model_name: "fake".into(), model_version: 1, input_type: InputType::String })
}

fn strings(n: usize) -> Vec<InputPayload> {
    (0..n).map(|i| InputPayload::String(format!("q{i}"))).collect()
}

async fn connect_fake(cfg: TransportConfig) -> (Arc<ReplicaConnection>, TcpStream) {
    let (l, addr) = listener().await;
    let mut c = TcpStream::connect(addr).await.unwrap();
    send(&mut c, &handshake()).await;
    let (s, _) = l.accept().await.unwrap();
    let conn = ReplicaConnection::accept(s, ReplicaId(1), cfg).await.unwrap();
    (conn, c)
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn noop_batch_of_three() {
    let _g = common::serial().await;
    let (l, addr) = listener().await;
    let _c = spawn_container(
        Box::new(NoopModel),
        ContainerOptions { core_addr: addr, name: "noop".into(), version: 1, input_type: InputType::String },
    );
    let (s, _) = l.accept().await.unwrap();
    let conn = ReplicaConnection::accept(s, ReplicaId(1), TransportConfig::default()).await.unwrap();
    assert_eq!(conn.handshake().model_name, "noop");
    let out = conn.predict(&strings(3), Duration::from_secs(2)).await.unwrap();
    assert_eq!(out, vec![vec!["q0".to_string()], vec!["q1".to_string()], vec!["q2".to_string()]]);
}

#[tokio::test]
async fn short_response_is_a_protocol_error() {
    let (conn, mut c) = connect_fake(TransportConfig::default()).await;
    let fake = tokio::spawn(async move {
        let WireMessage::PredictRequest(r) = read_message(&mut c).await.unwrap() else { panic!() };
        let outputs = vec![vec!["x".to_string()]; r.inputs.len() - 1];
        send(&mut c, &WireMessage::PredictResponse(PredictResponse { request_id: r.request_id, outputs })).await;
        c
    });
    let e = conn.predict(&strings(3), Duration::from_secs(2)).await.unwrap_err();
    assert!(matches!(e, Error::Protocol(_)), "{e:?}");
    let _c = fake.await.unwrap();
    tokio::time::timeout(Duration::from_secs(1), conn.closed()).await.unwrap();
}

#[tokio::test]
async fn wrong_request_id_is_a_protocol_error() {
    let (conn, mut c) = connect_fake(TransportConfig::default()).await;
    tokio::spawn(async move {
        let WireMessage::PredictRequest(r) = read_message(&mut c).await.unwrap() else { panic!() };
        let outputs = vec![vec!["x".to_string()]; r.inputs.len()];
        send(&mut c, &WireMessage::PredictResponse(PredictResponse { request_id: r.request_id + 1, outputs })).await;
        c
    });
    let e = conn.predict(&strings(2), Duration::from_secs(2)).await.unwrap_err();
    assert!(matches!(e, Error::Protocol(_)), "{e:?}");
}

#[tokio::test]
async fn handshake_must_come_first() {
    let (l, addr) = listener().await;
    let mut c = TcpStream::connect(addr).await.unwrap();
    send(&mut c, &WireMessage::Heartbeat).await;
    let (s, _) = l.accept().await.unwrap();
    assert!(ReplicaConnection::accept(s, ReplicaId(1), TransportConfig::default()).await.is_err());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn never_two_requests_in_flight() {
    let _g = common::serial().await;
    let (conn, mut c) = connect_fake(TransportConfig::default()).await;
    let overlap = Arc::new(AtomicBool::new(false));
    let seen = overlap.clone();
    tokio::spawn(async move {
        loop {
            let Ok(WireMessage::PredictRequest(r)) = read_message(&mut c).await else { return };
            // anything arriving while this request is open is a violation
            if let Ok(Ok(WireMessage::PredictRequest(_))) = tokio::time::timeout(Duration::from_millis(15), read_message(&mut c)).await {
                seen.store(true, Ordering::SeqCst);
                return;
            }
            let outputs = vec![vec!["ok".to_string()]; r.inputs.len()];
            send(&mut c, &WireMessage::PredictResponse(PredictResponse { request_id: r.request_id, outputs })).await;
        }
    });

    // the first caller gives up early; its slot stays taken until the late reply
    let first = conn.predict(&strings(1), Duration::from_millis(3)).await.unwrap_err();
    assert!(matches!(first, Error::ReplicaTimeout(_)));
    assert!(conn.is_suspect());
    assert!(conn.is_busy());

    let mut calls = Vec::new();
    for _ in 0..6 {
        let conn = conn.clone();
        calls.push(tokio::spawn(async move { conn.predict(&strings(2), Duration::from_secs(5)).await }));
    }
    for c in calls {
        assert_eq!(c.await.unwrap().unwrap().len(), 2);
    }
    assert!(!overlap.load(Ordering::SeqCst));
    assert!(!conn.is_suspect());
}

#[tokio::test]
async fn disconnect_mid_request_closes() {
    let (conn, mut c) = connect_fake(TransportConfig::default()).await;
    tokio::spawn(async move {
        let _ = read_message(&mut c).await;
        drop(c);
    });
    let e = conn.predict(&strings(1), Duration::from_secs(2)).await.unwrap_err();
    assert_eq!(e, Error::ConnectionClosed);
    assert!(conn.is_closed());
    assert_eq!(conn.predict(&strings(1), Duration::from_secs(1)).await.unwrap_err(), Error::ConnectionClosed);
}

#[tokio::test]
async fn container_errors_fail_only_that_batch() {
    let (conn, mut c) = connect_fake(TransportConfig::default()).await;
    tokio::spawn(async move {
        let WireMessage::PredictRequest(r) = read_message(&mut c).await.unwrap() else { panic!() };
        let e = ErrorMessage { request_id: r.request_id, message: "bad batch".into() };
        send(&mut c, &WireMessage::Error(e)).await;
        let WireMessage::PredictRequest(r) = read_message(&mut c).await.unwrap() else { panic!() };
        let outputs = vec![vec!["fine".to_string()]];
        send(&mut c, &WireMessage::PredictResponse(PredictResponse { request_id: r.request_id, outputs })).await;
        let _ = read_message(&mut c).await;
    });
    let e = conn.predict(&strings(1), Duration::from_secs(2)).await.unwrap_err();
    assert_eq!(e, Error::Container("bad batch".into()));
    assert_eq!(conn.predict(&strings(1), Duration::from_secs(2)).await.unwrap(), vec![vec!["fine".to_string()]]);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn silent_containers_are_dropped() {
    let _g = common::serial().await;
    let cfg = TransportConfig { heartbeat_interval: Duration::from_millis(40), ..TransportConfig::default() };

    // answers heartbeats
    let (alive, mut c) = connect_fake(cfg).await;
    tokio::spawn(async move {
        while let Ok(m) = read_message(&mut c).await {
            if m == WireMessage::Heartbeat {
                send(&mut c, &WireMessage::Heartbeat).await;
            }
        }
    });
    // reads but never answers
    let (mute, mut c2) = connect_fake(cfg).await;
    let heartbeats = tokio::spawn(async move {
        let mut n = 0;
        while let Ok(WireMessage::Heartbeat) = read_message(&mut c2).await {
            n += 1;
        }
        n
    });

    let start = Instant::now();
    tokio::time::timeout(Duration::from_secs(2), mute.closed()).await.unwrap();
    // three missed heartbeats plus the idle interval before the first
    assert!(start.elapsed() >= Duration::from_millis(150), "{:?}", start.elapsed());
    assert!(heartbeats.await.unwrap() >= 3);
    assert!(!alive.is_closed());
}
