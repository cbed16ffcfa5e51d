use std::fs;
use std::io::{Read, Write};
use std::net::{TcpStream, UdpSocket};
use std::path::Path;
use std::time::{Duration, Instant};

use ave_cli::serve::{self, Running, ServeOptions};
use ave_core::ingest::{parse_overpass, parse_terrain, Sidecar};
use ave_core::pipeline::{build_geometry, ingest_images, place_detections, AnchorChoice, ImageInput};
use ave_core::protocol::{AckBody, ClientEvent, ClientSession, EventBody, Message, MsgType, SetPoseBody};
use ave_core::scene::{SceneSettings, SceneState};
use tungstenite::stream::MaybeTlsStream;
use tungstenite::WebSocket;

fn fixture(name: &str) -> Vec<u8> {
    fs::read(Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/e2e").join(name)).unwrap()
}

fn fixture_scene() -> SceneState {
    let osm = parse_overpass(&fixture("osm.json")).unwrap();
    let terrain = parse_terrain(std::str::from_utf8(&fixture("terrain.asc")).unwrap()).unwrap();
    let s = SceneState::new(SceneSettings::default());
    let s = build_geometry(&s, osm.footprints, Some(terrain), Default::default(), AnchorChoice::Auto)
        .unwrap()
        .scene;
    let inputs: Vec<_> = ["img_a", "img_b"]
        .iter()
        .map(|n| ImageInput {
            image_id: n.to_string(),
            source_path: format!("{n}.jpg"),
            jpeg: Some(fixture(&format!("{n}.jpg"))),
            sidecar: Some(Sidecar::from_json(&fixture(&format!("{n}.json"))).unwrap()),
        })
        .collect();
    let s = ingest_images(&s, &inputs).unwrap().scene;
    place_detections(&s, &fixture("detections.json")).unwrap().scene
}

fn start(scene: SceneState, path: Option<&Path>) -> Running {
    serve::start(
        scene,
        ServeOptions {
            bind: [127, 0, 0, 1].into(),
            udp_port: 0,
            ws_port: 0,
            scene_path: path.map(Path::to_path_buf),
            log: false,
        },
    )
    .unwrap()
}

struct UdpClient {
    sock: UdpSocket,
    session: ClientSession,
    epoch: Instant,
}

impl UdpClient {
    fn new(server: &Running) -> Self {
        let sock = UdpSocket::bind("127.0.0.1:0").unwrap();
        sock.connect(server.udp_addr).unwrap();
        sock.set_read_timeout(Some(Duration::from_millis(10))).unwrap();
        Self {
            sock,
            session: ClientSession::new(),
            epoch: Instant::now(),
        }
    }

    /// Pump until `done` says so or five seconds pass.
    fn pump(&mut self, mut done: impl FnMut(&ClientSession, &[ClientEvent]) -> bool) -> Vec<ClientEvent> {
        let mut events = Vec::new();
        let mut buf = vec![0u8; 65_536];
        let deadline = Instant::now() + Duration::from_secs(5);
        loop {
            let now = self.epoch.elapsed();
            self.session.poll(now);
            for d in self.session.drain_outbox() {
                self.sock.send(&d).unwrap();
            }
            if let Ok(n) = self.sock.recv(&mut buf) {
                events.extend(self.session.handle_datagram(&buf[..n], self.epoch.elapsed()));
            }
            if done(&self.session, &events) {
                return events;
            }
            assert!(Instant::now() < deadline, "timed out; events so far: {events:?}");
        }
    }

    fn sync(&mut self) -> SceneState {
        self.session.hello(self.epoch.elapsed());
        self.session.get_scene(self.epoch.elapsed());
        self.pump(|s, _| s.pending_requests() == 0 && s.mirror().is_some());
        self.session.mirror().unwrap().clone()
    }
}

type Ws = WebSocket<MaybeTlsStream<TcpStream>>;

fn ws_connect(server: &Running) -> Ws {
    let (ws, _) = tungstenite::connect(format!("ws://{}", server.ws_addr)).unwrap();
    ws
}

fn ws_request(ws: &mut Ws, msg: Message) -> Message {
    ws.send(tungstenite::Message::binary(msg.to_stream())).unwrap();
    loop {
        let frame = ws.read().unwrap();
        if let tungstenite::Message::Binary(b) = frame {
            let m = Message::from_stream(&b).unwrap();
            // Skip broadcasts; a reply either echoes our id or is the
            // snapshot that answers GET_SCENE.
            if m.kind() != Some(MsgType::SceneEvent) {
                return m;
            }
        }
    }
}

#[test]
fn stream_snapshot_matches_datagram_snapshot() {
    let server = start(fixture_scene(), None);
    let mut udp = UdpClient::new(&server);
    let mirror = udp.sync();

    let mut ws = ws_connect(&server);
    let reply = ws_request(&mut ws, Message::new(7, MsgType::GetScene, Vec::new()));
    assert_eq!(reply.kind(), Some(MsgType::SceneSnapshot));
    assert_eq!(reply.body, mirror.save().unwrap());
    assert_eq!(reply.body, fixture_scene().save().unwrap());
    server.shutdown().unwrap();
}

#[test]
fn stream_set_pose_reaches_datagram_clients_and_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scene.json");
    let scene = fixture_scene();
    let start_rev = scene.revision;
    let server = start(scene, Some(&path));
    let mut udp = UdpClient::new(&server);
    let before = udp.sync();

    let mut ws = ws_connect(&server);
    let mut pose = before.projectors[1].pose;
    pose.yaw += 10.0;
    let body = serde_json::to_vec(&SetPoseBody { projector_id: 1, pose }).unwrap();
    let reply = ws_request(&mut ws, Message::new(42, MsgType::SetPose, body));
    assert_eq!(reply.kind(), Some(MsgType::Ack));
    let ack: AckBody = serde_json::from_slice(&reply.body).unwrap();
    assert_eq!((ack.ack, ack.revision), (42, start_rev + 1));

    // The datagram client hears the broadcast and replays it.
    let events = udp.pump(|_, ev| ev.iter().any(|e| matches!(e, ClientEvent::Applied { .. })));
    let applied: Vec<u64> = events
        .iter()
        .filter_map(|e| match e {
            ClientEvent::Applied { revision, .. } => Some(*revision),
            _ => None,
        })
        .collect();
    assert_eq!(applied, [start_rev + 1]);
    let mirror = udp.session.mirror().unwrap().clone();
    assert_eq!(mirror.projectors[1].pose, pose);

    // The owner saved the commit before broadcasting it.
    let on_disk = SceneState::load(&fs::read(&path).unwrap()).unwrap();
    assert_eq!(on_disk, mirror);

    let final_scene = server.shutdown().unwrap();
    assert_eq!(final_scene.save().unwrap(), mirror.save().unwrap());
}

#[test]
fn datagram_set_pose_is_broadcast_to_stream_clients() {
    let server = start(fixture_scene(), None);
    let mut ws = ws_connect(&server);
    // Any message registers the stream peer for broadcasts.
    let hello = ws_request(&mut ws, Message::new(1, MsgType::Hello, Vec::new()));
    assert_eq!(hello.kind(), Some(MsgType::Ack));

    let mut udp = UdpClient::new(&server);
    let scene = udp.sync();
    let mut pose = scene.projectors[0].pose;
    pose.pitch = -5.0;
    let id = udp.session.set_pose(0, pose, udp.epoch.elapsed()).unwrap();
    udp.pump(|_, ev| ev.iter().any(|e| matches!(e, ClientEvent::Acked { msg_id, .. } if *msg_id == id)));

    let event = loop {
        if let tungstenite::Message::Binary(b) = ws.read().unwrap() {
            let m = Message::from_stream(&b).unwrap();
            if m.kind() == Some(MsgType::SceneEvent) {
                break serde_json::from_slice::<EventBody>(&m.body).unwrap();
            }
        }
    };
    assert_eq!(event.revision, scene.revision + 1);
    server.shutdown().unwrap();
}

#[test]
fn malformed_stream_body_gets_err() {
    let server = start(fixture_scene(), None);
    let mut ws = ws_connect(&server);
    let reply = ws_request(&mut ws, Message::new(5, MsgType::SetPose, b"{\"projector_id\": 0}".to_vec()));
    assert_eq!(reply.kind(), Some(MsgType::Err));
    let unknown = Message {
        msg_id: 6,
        msg_type: 200,
        body: Vec::new(),
    };
    let reply = ws_request(&mut ws, unknown);
    assert_eq!(reply.kind(), Some(MsgType::Err));
    let s = server.shutdown().unwrap();
    assert_eq!(s.save().unwrap(), fixture_scene().save().unwrap());
}

#[test]
fn mid_message_disconnect_leaves_scene_alone() {
    let scene = fixture_scene();
    let server = start(scene.clone(), None);
    let mut ws = ws_connect(&server);
    let mut pose = scene.projectors[0].pose;
    pose.yaw = 1.0;
    let body = serde_json::to_vec(&SetPoseBody { projector_id: 0, pose }).unwrap();
    let payload = Message::new(9, MsgType::SetPose, body).to_stream();

    // Hand-rolled masked binary frame header promising the whole payload,
    // followed by only half of it.
    let mut frame = vec![0x82, 0x80 | 126];
    frame.extend_from_slice(&(payload.len() as u16).to_be_bytes());
    frame.extend_from_slice(&[0, 0, 0, 0]);
    frame.extend_from_slice(&payload[..payload.len() / 2]);
    let stream = match ws.get_mut() {
        MaybeTlsStream::Plain(s) => s,
        _ => unreachable!(),
    };
    stream.write_all(&frame).unwrap();
    stream.shutdown(std::net::Shutdown::Both).unwrap();
    drop(ws);

    let mut udp = UdpClient::new(&server);
    std::thread::sleep(Duration::from_millis(200));
    assert_eq!(udp.sync().save().unwrap(), scene.save().unwrap());
    server.shutdown().unwrap();
}

#[test]
fn bad_handshake_is_refused_with_status() {
    let server = start(fixture_scene(), None);
    let mut s = TcpStream::connect(server.ws_addr).unwrap();
    s.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    s.write_all(b"GET / HTTP/1.1\r\nHost: x\r\n\r\n").unwrap();
    let mut reply = String::new();
    let _ = s.read_to_string(&mut reply);
    assert!(reply.starts_with("HTTP/1.1 400"), "{reply}");
    server.shutdown().unwrap();
}

#[test]
fn datagram_garbage_is_ignored() {
    let server = start(fixture_scene(), None);
    let junk = UdpSocket::bind("127.0.0.1:0").unwrap();
    for i in 0..200u32 {
        let mut d = i.to_be_bytes().repeat(1 + (i as usize % 40));
        if i % 2 == 0 {
            d.splice(0..0, *b"AVE1");
        }
        junk.send_to(&d, server.udp_addr).unwrap();
    }
    junk.set_read_timeout(Some(Duration::from_millis(200))).unwrap();
    let mut buf = [0u8; 2048];
    assert!(junk.recv_from(&mut buf).is_err(), "server answered garbage");
    let mut udp = UdpClient::new(&server);
    assert_eq!(udp.sync().revision, fixture_scene().revision);
    server.shutdown().unwrap();
}
