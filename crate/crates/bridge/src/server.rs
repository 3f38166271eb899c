//! WebSocket front end. One thread per connection plus one tick thread; they share only the
//! bounded mailbox, per-client outboxes and a shutdown flag.

use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{sync_channel, Receiver, SyncSender, TryRecvError, TrySendError};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use tungstenite::{Message, WebSocket};

use crate::hub::{ClientId, Hub, Inbound, Outgoing};
use crate::protocol::ServerMessage;
use crate::Error;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    /// Wall-clock tick rate, Hz. `None` runs at the simulation rate, i.e. real time.
    pub tick_rate: Option<f64>,
    /// Capacity of the shared input mailbox; input beyond it is dropped.
    pub mailbox: usize,
    /// Frames queued per client before snapshots to it are dropped.
    pub outbox: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            tick_rate: None,
            mailbox: 256,
            outbox: 64,
        }
    }
}

/// A running bridge.
pub struct Server {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    ticker: JoinHandle<Hub>,
    acceptor: JoinHandle<()>,
}

const POLL: Duration = Duration::from_millis(5);

impl Server {
    /// Binds `addr` and starts ticking `hub` immediately.
    pub fn start(addr: &str, hub: Hub, config: ServerConfig) -> Result<Server, Error> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let (mail_tx, mail_rx) = sync_channel(config.mailbox.max(1));
        let period = Duration::from_secs_f64(1.0 / config.tick_rate.unwrap_or(hub.rate()));
        let ticker = {
            let stop = stop.clone();
            std::thread::spawn(move || tick_loop(hub, mail_rx, period, &stop))
        };
        let acceptor = {
            let stop = stop.clone();
            std::thread::spawn(move || accept_loop(listener, mail_tx, config.outbox.max(1), &stop))
        };
        Ok(Server {
            addr,
            stop,
            ticker,
            acceptor,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting, closes connections and returns the hub with its state at shutdown.
    pub fn shutdown(self) -> Hub {
        self.stop.store(true, Ordering::SeqCst);
        let _ = self.acceptor.join();
        self.ticker.join().expect("tick thread panicked")
    }

    /// Blocks until the tick thread ends, which only happens on shutdown.
    pub fn wait(self) -> Hub {
        let hub = self.ticker.join().expect("tick thread panicked");
        let _ = self.acceptor.join();
        hub
    }
}

fn tick_loop(mut hub: Hub, mailbox: Receiver<Inbound>, period: Duration, stop: &AtomicBool) -> Hub {
    let start = Instant::now();
    let mut n: u32 = 0;
    while !stop.load(Ordering::SeqCst) {
        loop {
            match mailbox.try_recv() {
                Ok(msg) => hub.handle(msg),
                Err(TryRecvError::Empty | TryRecvError::Disconnected) => break,
            }
        }
        hub.tick();
        n += 1;
        let next = start + period * n;
        if let Some(wait) = next.checked_duration_since(Instant::now()) {
            std::thread::sleep(wait);
        }
    }
    let _ = hub.save();
    hub
}

fn accept_loop(listener: TcpListener, mailbox: SyncSender<Inbound>, outbox: usize, stop: &Arc<AtomicBool>) {
    let ids = AtomicU64::new(1);
    let mut conns = Vec::new();
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let id = ids.fetch_add(1, Ordering::SeqCst);
                let (mailbox, stop) = (mailbox.clone(), stop.clone());
                conns.push(std::thread::spawn(move || connection(id, stream, mailbox, outbox, &stop)));
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => std::thread::sleep(POLL),
            Err(_) => std::thread::sleep(POLL),
        }
        conns.retain(|c: &JoinHandle<()>| !c.is_finished());
    }
    for c in conns {
        let _ = c.join();
    }
}

fn timed_out(e: &tungstenite::Error) -> bool {
    matches!(e, tungstenite::Error::Io(io) if matches!(io.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut))
}

fn connection(id: ClientId, stream: TcpStream, mailbox: SyncSender<Inbound>, outbox: usize, stop: &AtomicBool) {
    if stream.set_nonblocking(false).is_err() {
        return;
    }
    let Ok(mut ws) = tungstenite::accept(stream) else { return };
    if ws.get_ref().set_read_timeout(Some(POLL)).is_err() {
        return;
    }
    let (tx, rx) = sync_channel(outbox);
    if mailbox.send(Inbound::Join { id, outbox: tx }).is_err() {
        return;
    }
    serve_client(id, &mut ws, &mailbox, &rx, stop);
    let _ = ws.close(None);
    let _ = ws.flush();
    let _ = mailbox.send(Inbound::Leave { id });
}

fn serve_client(
    id: ClientId,
    ws: &mut WebSocket<TcpStream>,
    mailbox: &SyncSender<Inbound>,
    outbox: &Receiver<Outgoing>,
    stop: &AtomicBool,
) {
    while !stop.load(Ordering::SeqCst) {
        match ws.read() {
            Ok(Message::Text(text)) => {
                let msg = Inbound::Text {
                    id,
                    text: text.to_string(),
                };
                match mailbox.try_send(msg) {
                    Ok(()) | Err(TrySendError::Full(_)) => {}
                    Err(TrySendError::Disconnected(_)) => return,
                }
            }
            Ok(Message::Binary(_)) => {
                let reply = ServerMessage::error("binary frames are not supported; send JSON text").to_wire();
                if ws.send(Message::text(reply)).is_err() {
                    return;
                }
            }
            Ok(Message::Close(_)) => return,
            Ok(_) => {}
            Err(e) if timed_out(&e) => {}
            Err(_) => return,
        }
        loop {
            match outbox.try_recv() {
                Ok(Outgoing::Text(frame)) => {
                    if ws.send(Message::text(frame.as_ref())).is_err() {
                        return;
                    }
                }
                Ok(Outgoing::Close) | Err(TryRecvError::Disconnected) => return,
                Err(TryRecvError::Empty) => break,
            }
        }
    }
}
