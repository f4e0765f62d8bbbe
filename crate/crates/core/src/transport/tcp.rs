//! Socket transport and rank-0 rendezvous.
//!
//! Every rank runs one [`TcpNode`]: a data listener plus an acceptor thread.
//! Connections are opened lazily per (backend, directed pair); the first
//! frame on each connection is a bootstrap frame naming the backend and the
//! sending rank, after which a reader thread moves frames into the inbox for
//! that (backend, src) pair.

use std::collections::HashMap;
use std::io::{ErrorKind, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, RecvTimeoutError, Sender};
use serde::{Deserialize, Serialize};

use super::{Endpoint, FrameKind, RankAddressBook, Transport, WireFrame};
use crate::error::{Error, Result};

const CONNECT_RETRIES: usize = 10;
const CONNECT_BACKOFF: Duration = Duration::from_millis(100);

#[derive(Serialize, Deserialize)]
struct Hello {
    rank: usize,
    address: String,
}

#[derive(Serialize, Deserialize)]
struct Handshake {
    backend: String,
    src: usize,
}

struct Inbox {
    tx: Sender<WireFrame>,
    rx: Receiver<WireFrame>,
    closed: Arc<AtomicBool>,
}

type Key = (String, usize);

struct Shared {
    inboxes: Mutex<HashMap<Key, Inbox>>,
    outgoing: Mutex<HashMap<Key, Arc<Mutex<TcpStream>>>>,
    shutdown: AtomicBool,
}

impl Shared {
    fn inbox(&self, key: &Key) -> (Sender<WireFrame>, Receiver<WireFrame>, Arc<AtomicBool>) {
        let mut map = self.inboxes.lock().unwrap();
        let entry = map.entry(key.clone()).or_insert_with(|| {
            let (tx, rx) = unbounded();
            Inbox {
                tx,
                rx,
                closed: Arc::new(AtomicBool::new(false)),
            }
        });
        (entry.tx.clone(), entry.rx.clone(), Arc::clone(&entry.closed))
    }
}

/// One rank's socket endpoint, shared by all tcp backends of a runtime.
pub struct TcpNode {
    rank: usize,
    world_size: usize,
    book: RankAddressBook,
    listen_addr: Option<SocketAddr>,
    shared: Arc<Shared>,
}

impl TcpNode {
    /// Rendezvous with the other ranks through rank 0's listener at `master`.
    pub fn bootstrap(rank: usize, world_size: usize, master: &str, timeout: Duration) -> Result<Arc<Self>> {
        if world_size == 0 || rank >= world_size {
            return Err(Error::Config(format!(
                "rank {rank} out of range for world size {world_size}"
            )));
        }
        let shared = Arc::new(Shared {
            inboxes: Mutex::new(HashMap::new()),
            outgoing: Mutex::new(HashMap::new()),
            shutdown: AtomicBool::new(false),
        });
        if world_size == 1 {
            let book = RankAddressBook {
                world_size: 1,
                endpoints: vec![Endpoint {
                    rank: 0,
                    address: "self".into(),
                }],
            };
            return Ok(Arc::new(TcpNode {
                rank,
                world_size,
                book,
                listen_addr: None,
                shared,
            }));
        }

        let deadline = Instant::now() + timeout;
        let master_addr = resolve(master)?;
        let (book, listener) = if rank == 0 {
            rendezvous_master(master_addr, world_size, deadline)?
        } else {
            rendezvous_peer(rank, master_addr, deadline)?
        };
        let listen_addr = listener.local_addr()?;
        let acceptor_shared = Arc::clone(&shared);
        thread::Builder::new()
            .name(format!("mcrdl-accept-{rank}"))
            .spawn(move || accept_loop(listener, acceptor_shared))?;
        Ok(Arc::new(TcpNode {
            rank,
            world_size,
            book,
            listen_addr: Some(listen_addr),
            shared,
        }))
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn world_size(&self) -> usize {
        self.world_size
    }

    pub fn book(&self) -> &RankAddressBook {
        &self.book
    }

    /// A transport for `backend` over this node's sockets.
    pub fn transport(self: &Arc<Self>, backend: &str) -> TcpTransport {
        TcpTransport {
            node: Arc::clone(self),
            backend: backend.to_string(),
        }
    }

    fn stream_to(&self, backend: &str, dst: usize) -> Result<Arc<Mutex<TcpStream>>> {
        let key = (backend.to_string(), dst);
        if let Some(s) = self.shared.outgoing.lock().unwrap().get(&key) {
            return Ok(Arc::clone(s));
        }
        let addr = self
            .book
            .address(dst)
            .ok_or(Error::PeerDisconnected(dst))?
            .to_string();
        let mut stream = connect_with_retry(&addr).map_err(|_| Error::PeerDisconnected(dst))?;
        stream.set_nodelay(true)?;
        let hello = serde_json::to_vec(&Handshake {
            backend: backend.to_string(),
            src: self.rank,
        })?;
        stream.write_all(&WireFrame::new(FrameKind::Bootstrap, 0, hello).encode())?;
        let stream = Arc::new(Mutex::new(stream));
        let mut map = self.shared.outgoing.lock().unwrap();
        Ok(Arc::clone(map.entry(key).or_insert(stream)))
    }
}

impl Drop for TcpNode {
    fn drop(&mut self) {
        self.shared.shutdown.store(true, Ordering::SeqCst);
        for s in self.shared.outgoing.lock().unwrap().values() {
            let _ = s.lock().unwrap().shutdown(Shutdown::Both);
        }
        if let Some(addr) = self.listen_addr {
            // Wake the acceptor so it observes the shutdown flag.
            let _ = TcpStream::connect_timeout(&addr, Duration::from_millis(200));
        }
    }
}

/// Run the rendezvous and return the agreed address book.
pub fn bootstrap(rank: usize, world_size: usize, master: &str, timeout: Duration) -> Result<RankAddressBook> {
    Ok(TcpNode::bootstrap(rank, world_size, master, timeout)?.book.clone())
}

pub struct TcpTransport {
    node: Arc<TcpNode>,
    backend: String,
}

impl Transport for TcpTransport {
    fn rank(&self) -> usize {
        self.node.rank
    }

    fn world_size(&self) -> usize {
        self.node.world_size
    }

    fn send_frame(&self, dst: usize, frame: WireFrame) -> Result<()> {
        let stream = self.node.stream_to(&self.backend, dst)?;
        let mut s = stream.lock().unwrap();
        s.write_all(&frame.header_bytes())
            .and_then(|_| s.write_all(&frame.payload))
            .map_err(|_| Error::PeerDisconnected(dst))
    }

    fn recv_frame(&self, src: usize, deadline: Instant) -> Result<WireFrame> {
        let (_, rx, closed) = self.node.shared.inbox(&(self.backend.clone(), src));
        loop {
            let slice = (Instant::now() + Duration::from_millis(50)).min(deadline);
            match rx.recv_deadline(slice) {
                Ok(frame) => return Ok(frame),
                Err(RecvTimeoutError::Disconnected) => return Err(Error::PeerDisconnected(src)),
                Err(RecvTimeoutError::Timeout) => {
                    if closed.load(Ordering::SeqCst) && rx.is_empty() {
                        return Err(Error::PeerDisconnected(src));
                    }
                    if Instant::now() >= deadline {
                        return Err(Error::Timeout(Duration::ZERO));
                    }
                }
            }
        }
    }

    fn name(&self) -> &'static str {
        "tcp"
    }
}

fn resolve(addr: &str) -> Result<SocketAddr> {
    addr.to_socket_addrs()
        .map_err(|e| Error::Config(format!("bad address `{addr}`: {e}")))?
        .next()
        .ok_or_else(|| Error::Config(format!("address `{addr}` did not resolve")))
}

fn connect_with_retry(addr: &str) -> std::io::Result<TcpStream> {
    let mut last = None;
    for _ in 0..CONNECT_RETRIES {
        match TcpStream::connect(addr) {
            Ok(s) => return Ok(s),
            Err(e) => {
                last = Some(e);
                thread::sleep(CONNECT_BACKOFF);
            }
        }
    }
    Err(last.unwrap())
}

fn bind(addr: SocketAddr) -> Result<TcpListener> {
    TcpListener::bind(addr).map_err(|e| match e.kind() {
        ErrorKind::AddrInUse => Error::AddressInUse(addr.to_string()),
        _ => Error::Io(e.to_string()),
    })
}

fn timed_out(what: impl Into<String>) -> Error {
    Error::BootstrapTimeout(what.into())
}

fn read_frame_before(stream: &mut TcpStream, deadline: Instant) -> Result<WireFrame> {
    let left = deadline.saturating_duration_since(Instant::now());
    if left.is_zero() {
        return Err(timed_out("deadline passed during rendezvous"));
    }
    stream.set_read_timeout(Some(left))?;
    WireFrame::read_from(stream).map_err(|e| match e {
        Error::Io(msg) => timed_out(format!("rendezvous read failed: {msg}")),
        other => other,
    })
}

fn rendezvous_master(
    master: SocketAddr,
    world_size: usize,
    deadline: Instant,
) -> Result<(RankAddressBook, TcpListener)> {
    let control = bind(master)?;
    let data = bind(SocketAddr::new(master.ip(), 0))?;
    control.set_nonblocking(true)?;
    let mut peers: Vec<Option<(TcpStream, String)>> = (0..world_size).map(|_| None).collect();
    let mut joined = 1;
    while joined < world_size {
        match control.accept() {
            Ok((mut stream, _)) => {
                stream.set_nonblocking(false)?;
                let frame = read_frame_before(&mut stream, deadline)?;
                let hello: Hello = serde_json::from_slice(&frame.payload)?;
                if hello.rank == 0 || hello.rank >= world_size || peers[hello.rank].is_some() {
                    return Err(Error::Config(format!(
                        "bad or duplicate rank {} at rendezvous",
                        hello.rank
                    )));
                }
                peers[hello.rank] = Some((stream, hello.address));
                joined += 1;
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => {
                if Instant::now() >= deadline {
                    let missing: Vec<usize> = (1..world_size).filter(|&r| peers[r].is_none()).collect();
                    return Err(timed_out(format!("ranks {missing:?} never joined")));
                }
                thread::sleep(Duration::from_millis(5));
            }
            Err(e) => return Err(e.into()),
        }
    }
    let mut endpoints = vec![Endpoint {
        rank: 0,
        address: data.local_addr()?.to_string(),
    }];
    endpoints.extend(peers.iter().skip(1).enumerate().map(|(i, p)| Endpoint {
        rank: i + 1,
        address: p.as_ref().unwrap().1.clone(),
    }));
    let book = RankAddressBook {
        world_size,
        endpoints,
    };
    let payload = book.to_json().into_bytes();
    for (stream, _) in peers.iter_mut().flatten() {
        stream.write_all(&WireFrame::new(FrameKind::Bootstrap, 0, payload.clone()).encode())?;
    }
    Ok((book, data))
}

fn rendezvous_peer(rank: usize, master: SocketAddr, deadline: Instant) -> Result<(RankAddressBook, TcpListener)> {
    let mut stream = loop {
        match TcpStream::connect_timeout(&master, Duration::from_millis(500)) {
            Ok(s) => break s,
            Err(_) if Instant::now() < deadline => thread::sleep(CONNECT_BACKOFF),
            Err(e) => return Err(timed_out(format!("master {master} unreachable: {e}"))),
        }
    };
    let data = bind(SocketAddr::new(stream.local_addr()?.ip(), 0))?;
    let hello = serde_json::to_vec(&Hello {
        rank,
        address: data.local_addr()?.to_string(),
    })?;
    stream.write_all(&WireFrame::new(FrameKind::Bootstrap, 0, hello).encode())?;
    let frame = read_frame_before(&mut stream, deadline)?;
    let book: RankAddressBook = serde_json::from_slice(&frame.payload)?;
    Ok((book, data))
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>) {
    for conn in listener.incoming() {
        if shared.shutdown.load(Ordering::SeqCst) {
            break;
        }
        let Ok(stream) = conn else { continue };
        let shared = Arc::clone(&shared);
        let _ = thread::Builder::new()
            .name("mcrdl-reader".into())
            .spawn(move || read_loop(stream, shared));
    }
}

fn read_loop(mut stream: TcpStream, shared: Arc<Shared>) {
    let Ok(first) = WireFrame::read_from(&mut stream) else { return };
    if first.kind != FrameKind::Bootstrap {
        log::warn!("dropping connection that did not start with a handshake");
        return;
    }
    let Ok(hs) = serde_json::from_slice::<Handshake>(&first.payload) else { return };
    let (tx, _, closed) = shared.inbox(&(hs.backend, hs.src));
    let _ = stream.set_nodelay(true);
    let mut reader = std::io::BufReader::with_capacity(1 << 16, stream);
    while let Ok(frame) = WireFrame::read_from(&mut reader) {
        if tx.send(frame).is_err() {
            break;
        }
    }
    closed.store(true, Ordering::SeqCst);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn world_of_one_needs_no_network() {
        let book = bootstrap(0, 1, "127.0.0.1:1", Duration::from_millis(10)).unwrap();
        assert_eq!(book.world_size, 1);
        assert_eq!(book.endpoints.len(), 1);
    }

    #[test]
    fn rank_out_of_range_fails_fast() {
        let start = Instant::now();
        assert!(bootstrap(2, 2, "127.0.0.1:1", Duration::from_secs(30)).is_err());
        assert!(start.elapsed() < Duration::from_secs(1));
    }

    #[test]
    fn missing_peer_times_out() {
        let port = crate::launch::free_port();
        let r = bootstrap(0, 2, &format!("127.0.0.1:{port}"), Duration::from_millis(200));
        assert!(matches!(r, Err(Error::BootstrapTimeout(_))), "{r:?}");
    }
}
