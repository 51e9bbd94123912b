//! Trial server: one blind session per connection.
//!
//! Clients speak JSON either over WebSocket or as newline-delimited lines on
//! a plain TCP socket; a connection that opens with `GET` is upgraded. The
//! session ticks on a fixed wall-clock interval and outbound messages go
//! through a bounded [`Outbox`], so a slow client loses frames but never
//! acks or reveals, and never stalls the simulation.

use std::sync::{Arc, Mutex};
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use obsim::config::ScenarioConfig;
use obsim::session::{start_session, Outbound, Outbox, Phase};
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, Notify};
use tokio_tungstenite::tungstenite::Message;

#[derive(Debug, Clone)]
pub struct ServeOptions {
    /// Seed of the first session; later connections use `seed + k`.
    pub seed: u64,
    pub tick: Duration,
    pub outbox_cap: usize,
    pub verbose: bool,
}

impl Default for ServeOptions {
    fn default() -> Self {
        ServeOptions {
            seed: 0,
            tick: Duration::from_millis(50),
            outbox_cap: 256,
            verbose: false,
        }
    }
}

/// Accept connections forever.
pub async fn serve(listener: TcpListener, config: ScenarioConfig, opts: ServeOptions) -> std::io::Result<()> {
    let mut k: u64 = 0;
    loop {
        let (stream, peer) = listener.accept().await?;
        let seed = opts.seed.wrapping_add(k);
        k += 1;
        if opts.verbose {
            eprintln!("connection from {peer}, session seed {seed}");
        }
        let config = config.clone();
        let opts = opts.clone();
        tokio::spawn(async move {
            if let Err(e) = connection(stream, config, seed, opts.clone()).await {
                if opts.verbose {
                    eprintln!("{peer}: {e}");
                }
            }
        });
    }
}

struct Shared {
    outbox: Mutex<Outbox>,
    ready: Notify,
}

impl Shared {
    fn send(&self, msgs: impl IntoIterator<Item = Outbound>) {
        self.outbox.lock().expect("outbox lock").extend(msgs);
        self.ready.notify_one();
    }

    fn pop(&self) -> Option<Outbound> {
        self.outbox.lock().expect("outbox lock").pop()
    }
}

/// WebSocket clients speak first with `GET`; line clients may wait for the
/// opening state, so silence past a short grace period means plain TCP.
async fn is_http(stream: &TcpStream) -> std::io::Result<bool> {
    let sniff = async {
        let mut buf = [0u8; 3];
        loop {
            let n = stream.peek(&mut buf).await?;
            if n == 0 || n == buf.len() || buf[..n] != b"GET"[..n] {
                return Ok(n == buf.len() && &buf == b"GET");
            }
            tokio::time::sleep(Duration::from_millis(1)).await;
        }
    };
    match tokio::time::timeout(Duration::from_millis(250), sniff).await {
        Ok(r) => r,
        Err(_) => Ok(false),
    }
}

async fn connection(stream: TcpStream, config: ScenarioConfig, seed: u64, opts: ServeOptions) -> anyhow::Result<()> {
    let shared = Arc::new(Shared {
        outbox: Mutex::new(Outbox::new(opts.outbox_cap)),
        ready: Notify::new(),
    });
    let (tx, rx) = mpsc::channel::<String>(64);
    let (done_tx, done_rx) = tokio::sync::oneshot::channel::<()>();

    if is_http(&stream).await? {
        let ws = tokio_tungstenite::accept_async(stream).await?;
        let (mut sink, mut source) = ws.split();
        let out = shared.clone();
        tokio::spawn(async move {
            let mut done_rx = done_rx;
            loop {
                while let Some(m) = out.pop() {
                    if sink.send(Message::Text(m.to_json())).await.is_err() {
                        return;
                    }
                }
                tokio::select! {
                    _ = out.ready.notified() => {}
                    _ = &mut done_rx => {
                        while let Some(m) = out.pop() {
                            let _ = sink.send(Message::Text(m.to_json())).await;
                        }
                        let _ = sink.close().await;
                        return;
                    }
                }
            }
        });
        tokio::spawn(async move {
            while let Some(Ok(msg)) = source.next().await {
                match msg {
                    Message::Text(t) => {
                        if tx.send(t).await.is_err() {
                            break;
                        }
                    }
                    Message::Close(_) => break,
                    _ => {}
                }
            }
        });
    } else {
        let (read, mut write) = stream.into_split();
        let out = shared.clone();
        tokio::spawn(async move {
            let mut done_rx = done_rx;
            loop {
                while let Some(m) = out.pop() {
                    let line = m.to_json() + "\n";
                    if write.write_all(line.as_bytes()).await.is_err() {
                        return;
                    }
                }
                tokio::select! {
                    _ = out.ready.notified() => {}
                    _ = &mut done_rx => {
                        while let Some(m) = out.pop() {
                            let _ = write.write_all((m.to_json() + "\n").as_bytes()).await;
                        }
                        let _ = write.shutdown().await;
                        return;
                    }
                }
            }
        });
        tokio::spawn(async move {
            let mut lines = BufReader::new(read).lines();
            while let Ok(Some(line)) = lines.next_line().await {
                if line.trim().is_empty() {
                    continue;
                }
                if tx.send(line).await.is_err() {
                    break;
                }
            }
        });
    }

    run_session(config, seed, opts.tick, rx, &shared).await;
    let _ = done_tx.send(());
    Ok(())
}

/// Own the session: tick it and apply inbound messages in arrival order.
async fn run_session(config: ScenarioConfig, seed: u64, tick: Duration, mut inbound: mpsc::Receiver<String>, out: &Shared) {
    let mut session = match start_session(&config, seed) {
        Ok(s) => s,
        Err(e) => {
            out.send([Outbound::Error {
                msg: format!("cannot start session: {e}"),
            }]);
            return;
        }
    };
    out.send(session.opening());
    let mut ticker = tokio::time::interval(tick.max(Duration::from_millis(1)));
    ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    let mut ticking = true;
    loop {
        tokio::select! {
            _ = ticker.tick(), if ticking => {
                let msgs = session.advance();
                // A lone error means the clock stopped; say so once.
                if matches!(msgs[..], [Outbound::Error { .. }]) {
                    ticking = false;
                }
                out.send(msgs);
            }
            line = inbound.recv() => {
                let Some(line) = line else { return };
                out.send(session.handle_line(&line));
                if session.phase() != Phase::Running {
                    ticking = false;
                }
            }
        }
    }
}
