use std::io::BufReader;
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;

use log::{debug, warn};

use super::wire::{read_frame, write_frame, FrameError, WireMessage, PROTOCOL_VERSION};
use crate::backends::{Backend, Query};
use crate::Result;

/// A bound listener serving one backend; each connection gets its own thread.
pub struct LogitServer {
    listener: TcpListener,
    backend: Arc<dyn Backend>,
    stop: Arc<AtomicBool>,
}

/// Stops a running [`LogitServer`] from another thread.
#[derive(Clone)]
pub struct ShutdownHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
}

impl ShutdownHandle {
    pub fn shutdown(&self) {
        self.stop.store(true, Ordering::SeqCst);
        // wake the blocking accept
        let _ = TcpStream::connect(self.addr);
    }
}

impl LogitServer {
    pub fn bind(backend: Arc<dyn Backend>, addr: impl ToSocketAddrs) -> Result<Self> {
        Ok(Self {
            listener: TcpListener::bind(addr)?,
            backend,
            stop: Arc::new(AtomicBool::new(false)),
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    pub fn shutdown_handle(&self) -> Result<ShutdownHandle> {
        Ok(ShutdownHandle {
            addr: self.local_addr()?,
            stop: self.stop.clone(),
        })
    }

    /// Accepts connections until [`ShutdownHandle::shutdown`] is called.
    pub fn run(self) -> Result<()> {
        for stream in self.listener.incoming() {
            if self.stop.load(Ordering::SeqCst) {
                break;
            }
            match stream {
                Ok(stream) => {
                    let backend = self.backend.clone();
                    thread::spawn(move || {
                        if let Err(e) = handle_connection(stream, backend.as_ref()) {
                            debug!("connection ended: {e}");
                        }
                    });
                }
                Err(e) => warn!("accept failed: {e}"),
            }
        }
        Ok(())
    }

    /// Runs the accept loop on a background thread.
    pub fn spawn(self) -> Result<(ShutdownHandle, thread::JoinHandle<Result<()>>)> {
        let handle = self.shutdown_handle()?;
        Ok((handle, thread::spawn(move || self.run())))
    }
}

/// Binds `address` and serves `backend` until the process is stopped.
pub fn serve(backend: Arc<dyn Backend>, address: &str) -> Result<()> {
    let server = LogitServer::bind(backend, address)?;
    log::info!("serving on {}", server.local_addr()?);
    server.run()
}

fn handle_connection(stream: TcpStream, backend: &dyn Backend) -> std::io::Result<()> {
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = stream;
    let mut greeted = false;
    loop {
        let reply = match read_frame(&mut reader) {
            Err(FrameError::Closed) => return Ok(()),
            Err(FrameError::Io(e)) => return Err(e),
            Err(FrameError::BadFrame(msg)) => {
                write_frame(&mut writer, &WireMessage::error("bad_frame", msg))?;
                return Ok(());
            }
            Err(FrameError::BadKind(kind)) => {
                WireMessage::error("bad_kind", format!("unknown message kind {kind:?}"))
            }
            Ok(WireMessage::Hello { protocol_version }) => {
                if protocol_version != PROTOCOL_VERSION {
                    write_frame(
                        &mut writer,
                        &WireMessage::error(
                            "version_mismatch",
                            format!("server speaks version {PROTOCOL_VERSION}, client sent {protocol_version}"),
                        ),
                    )?;
                    return Ok(());
                }
                greeted = true;
                WireMessage::VocabReply {
                    tokens: backend.vocab().tokens().to_vec(),
                }
            }
            Ok(WireMessage::Query { .. }) if !greeted => {
                WireMessage::error("no_handshake", "send Hello before Query")
            }
            Ok(WireMessage::Query { context }) => {
                match backend.next_distribution(&Query::new(context)) {
                    Ok(pred) => WireMessage::DistReply {
                        probs: pred.dist.into_probs(),
                        fallback: pred.fallback,
                    },
                    Err(e) => WireMessage::error("backend_error", e.to_string()),
                }
            }
            Ok(_) => {
                WireMessage::error("bad_kind", "only Hello and Query are accepted by a server")
            }
        };
        write_frame(&mut writer, &reply)?;
    }
}
