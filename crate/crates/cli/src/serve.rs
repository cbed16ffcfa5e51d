//! `ave serve`: the datagram endpoint and the web-socket bridge, both
//! feeding one scene-owner thread.

use std::io::{ErrorKind, Write};
use std::net::{IpAddr, SocketAddr, TcpListener, TcpStream, UdpSocket};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use anyhow::{Context, Result};
use ave_core::protocol::{Message, ServerCore};
use ave_core::scene::SceneState;
use tungstenite::handshake::HandshakeError;

use crate::commands::save_scene;

const POLL: Duration = Duration::from_millis(50);
const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Peer {
    Udp(SocketAddr),
    Stream(u64),
}

enum Input {
    Datagram(SocketAddr, Vec<u8>),
    Open(u64, Sender<Vec<u8>>),
    Message(u64, Message),
    Closed(u64),
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub bind: IpAddr,
    pub udp_port: u16,
    pub ws_port: u16,
    /// Saved after every commit.
    pub scene_path: Option<PathBuf>,
    pub log: bool,
}

pub struct Running {
    pub udp_addr: SocketAddr,
    pub ws_addr: SocketAddr,
    stop: Arc<AtomicBool>,
    owner: JoinHandle<Result<SceneState>>,
    io_threads: Vec<JoinHandle<()>>,
}

impl Running {
    /// Block until the owner thread exits, which only happens on error.
    pub fn wait(self) -> Result<SceneState> {
        let r = self.owner.join().expect("scene owner panicked");
        self.stop.store(true, Ordering::SeqCst);
        for t in self.io_threads {
            let _ = t.join();
        }
        r
    }

    pub fn shutdown(self) -> Result<SceneState> {
        self.stop.store(true, Ordering::SeqCst);
        self.wait()
    }
}

pub fn start(scene: SceneState, opts: ServeOptions) -> Result<Running> {
    let udp = UdpSocket::bind((opts.bind, opts.udp_port))
        .with_context(|| format!("binding datagram endpoint {}:{}", opts.bind, opts.udp_port))?;
    let tcp = TcpListener::bind((opts.bind, opts.ws_port))
        .with_context(|| format!("binding stream endpoint {}:{}", opts.bind, opts.ws_port))?;
    let udp_addr = udp.local_addr()?;
    let ws_addr = tcp.local_addr()?;
    udp.set_read_timeout(Some(POLL))?;
    tcp.set_nonblocking(true)?;

    let stop = Arc::new(AtomicBool::new(false));
    let (tx, rx) = mpsc::channel();

    let recv_sock = udp.try_clone()?;
    let udp_thread = {
        let (tx, stop) = (tx.clone(), stop.clone());
        thread::Builder::new()
            .name("ave-udp".into())
            .spawn(move || udp_loop(recv_sock, tx, stop))?
    };
    let ws_thread = {
        let (tx, stop) = (tx.clone(), stop.clone());
        thread::Builder::new()
            .name("ave-ws".into())
            .spawn(move || accept_loop(tcp, tx, stop))?
    };
    drop(tx);
    let owner = {
        let stop = stop.clone();
        thread::Builder::new()
            .name("ave-scene".into())
            .spawn(move || owner_loop(scene, udp, rx, stop, opts))?
    };
    Ok(Running {
        udp_addr,
        ws_addr,
        stop,
        owner,
        io_threads: vec![udp_thread, ws_thread],
    })
}

fn owner_loop(
    scene: SceneState,
    udp: UdpSocket,
    rx: Receiver<Input>,
    stop: Arc<AtomicBool>,
    opts: ServeOptions,
) -> Result<SceneState> {
    let epoch = Instant::now();
    let mut server: ServerCore<Peer> = ServerCore::new(scene);
    let mut streams: std::collections::BTreeMap<u64, Sender<Vec<u8>>> = Default::default();
    while !stop.load(Ordering::SeqCst) {
        let input = match rx.recv_timeout(POLL) {
            Ok(i) => i,
            Err(RecvTimeoutError::Timeout) => continue,
            Err(RecvTimeoutError::Disconnected) => break,
        };
        let now = epoch.elapsed();
        let step = match input {
            Input::Datagram(from, bytes) => server.handle_datagram(&Peer::Udp(from), &bytes, now),
            Input::Message(id, m) => server.handle_message(&Peer::Stream(id), m, now),
            Input::Open(id, out) => {
                streams.insert(id, out);
                continue;
            }
            Input::Closed(id) => {
                streams.remove(&id);
                server.disconnect(&Peer::Stream(id));
                continue;
            }
        };
        if let Some(rev) = step.committed {
            if let Some(p) = &opts.scene_path {
                save_scene(p, server.scene()).with_context(|| format!("saving revision {rev}"))?;
            }
            if opts.log {
                eprintln!("revision {rev} committed");
            }
        }
        if opts.log {
            for w in &step.warnings {
                eprintln!("warning: {w}");
            }
        }
        for out in step.outbound {
            match out.to {
                Peer::Udp(addr) => {
                    // Bodies are bounded by the scene file size; encoding only
                    // fails past 78 MB.
                    if let Ok(datagrams) = out.message.to_datagrams() {
                        for d in datagrams {
                            let _ = udp.send_to(&d, addr);
                        }
                    }
                }
                Peer::Stream(id) => {
                    if let Some(s) = streams.get(&id) {
                        let _ = s.send(out.message.to_stream());
                    }
                }
            }
        }
    }
    Ok(server.scene().clone())
}

fn udp_loop(sock: UdpSocket, tx: Sender<Input>, stop: Arc<AtomicBool>) {
    let mut buf = vec![0u8; 65_536];
    while !stop.load(Ordering::SeqCst) {
        match sock.recv_from(&mut buf) {
            Ok((n, from)) => {
                if tx.send(Input::Datagram(from, buf[..n].to_vec())).is_err() {
                    return;
                }
            }
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut | ErrorKind::Interrupted) => {}
            // ICMP port-unreachable from a departed peer surfaces here on
            // some platforms.
            Err(_) => {}
        }
    }
}

fn accept_loop(listener: TcpListener, tx: Sender<Input>, stop: Arc<AtomicBool>) {
    let mut next_id = 0u64;
    let mut conns = Vec::new();
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let id = next_id;
                next_id += 1;
                let (tx, stop) = (tx.clone(), stop.clone());
                if let Ok(h) = thread::Builder::new()
                    .name(format!("ave-ws-{id}"))
                    .spawn(move || connection(stream, id, tx, stop))
                {
                    conns.push(h);
                }
                conns.retain(|h| !h.is_finished());
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(10)),
            Err(_) => thread::sleep(Duration::from_millis(10)),
        }
    }
    for h in conns {
        let _ = h.join();
    }
}

fn connection(stream: TcpStream, id: u64, tx: Sender<Input>, stop: Arc<AtomicBool>) {
    if stream.set_nonblocking(false).is_err() || stream.set_read_timeout(Some(HANDSHAKE_TIMEOUT)).is_err() {
        return;
    }
    let Ok(mut raw) = stream.try_clone() else { return };
    let mut ws = match tungstenite::accept(stream) {
        Ok(ws) => ws,
        Err(HandshakeError::Failure(e)) => {
            let body = format!("{e}\n");
            let _ = write!(
                raw,
                "HTTP/1.1 400 Bad Request\r\nContent-Type: text/plain\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            return;
        }
        Err(HandshakeError::Interrupted(_)) => return,
    };
    if raw.set_read_timeout(Some(POLL)).is_err() {
        return;
    }
    let (out_tx, out_rx) = mpsc::channel::<Vec<u8>>();
    if tx.send(Input::Open(id, out_tx)).is_err() {
        return;
    }
    loop {
        if stop.load(Ordering::SeqCst) {
            let _ = ws.close(None);
            let _ = ws.flush();
            break;
        }
        let mut failed = false;
        while let Ok(bytes) = out_rx.try_recv() {
            if ws.write(tungstenite::Message::binary(bytes)).is_err() {
                failed = true;
                break;
            }
        }
        if failed || matches!(ws.flush(), Err(ref e) if !would_block(e)) {
            break;
        }
        match ws.read() {
            Ok(tungstenite::Message::Binary(b)) => {
                // A message too short for its header is dropped; the client
                // retries or gives up.
                if let Ok(m) = Message::from_stream(&b) {
                    if tx.send(Input::Message(id, m)).is_err() {
                        break;
                    }
                }
            }
            Ok(_) => {}
            Err(e) if would_block(&e) => {}
            Err(_) => break,
        }
    }
    let _ = tx.send(Input::Closed(id));
}

fn would_block(e: &tungstenite::Error) -> bool {
    matches!(e, tungstenite::Error::Io(io) if matches!(io.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut))
}
