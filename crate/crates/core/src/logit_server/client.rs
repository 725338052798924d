use std::io::BufReader;
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::Mutex;
use std::time::Duration;

use super::wire::{read_frame, write_frame, FrameError, WireMessage, PROTOCOL_VERSION};
use crate::backends::{Backend, Prediction, Query, Tokenizer};
use crate::vocab::{TokenDistribution, Vocab};
use crate::{Error, Result};

struct Connection {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

/// A backend living in another process, reached over the logit wire protocol.
///
/// Requests are serialized through an internal lock: one request in flight.
pub struct RemoteBackend {
    name: String,
    vocab: Vocab,
    tokenizer: Tokenizer,
    conn: Mutex<Connection>,
}

impl RemoteBackend {
    /// Connects and performs the handshake. `timeout` bounds the connect and
    /// every subsequent read and write.
    pub fn connect(address: &str, timeout: Duration, tokenizer: Tokenizer) -> Result<Self> {
        let transport = |e: std::io::Error| Error::transport(address, e.to_string());
        let addr = address
            .to_socket_addrs()
            .map_err(transport)?
            .next()
            .ok_or_else(|| Error::transport(address, "address resolved to nothing"))?;
        let stream = TcpStream::connect_timeout(&addr, timeout).map_err(transport)?;
        stream.set_read_timeout(Some(timeout)).map_err(transport)?;
        stream.set_write_timeout(Some(timeout)).map_err(transport)?;
        stream.set_nodelay(true).map_err(transport)?;
        let mut conn = Connection {
            reader: BufReader::new(stream.try_clone().map_err(transport)?),
            writer: stream,
        };

        write_frame(
            &mut conn.writer,
            &WireMessage::Hello {
                protocol_version: PROTOCOL_VERSION,
            },
        )
        .map_err(transport)?;
        let vocab = match read_frame(&mut conn.reader) {
            Ok(WireMessage::VocabReply { tokens }) => {
                Vocab::new(tokens).map_err(|e| Error::Handshake(format!("{address}: {e}")))?
            }
            Ok(WireMessage::Error { code, message }) => {
                return Err(Error::Handshake(format!("{address}: {code}: {message}")))
            }
            Ok(other) => {
                return Err(Error::Handshake(format!(
                    "{address}: unexpected reply {other:?}"
                )))
            }
            Err(e) => return Err(Error::Handshake(format!("{address}: {e}"))),
        };
        Ok(Self {
            name: address.to_owned(),
            vocab,
            tokenizer,
            conn: Mutex::new(conn),
        })
    }
}

impl Backend for RemoteBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn tokenizer(&self) -> Tokenizer {
        self.tokenizer
    }

    fn next_distribution(&self, query: &Query) -> Result<Prediction> {
        let mut conn = self.conn.lock().unwrap_or_else(|p| p.into_inner());
        let fail = |msg: String| Error::transport(&self.name, msg);
        write_frame(
            &mut conn.writer,
            &WireMessage::Query {
                context: query.context.clone(),
            },
        )
        .map_err(|e| fail(e.to_string()))?;
        match read_frame(&mut conn.reader) {
            Ok(WireMessage::DistReply { probs, fallback }) => {
                if probs.len() != self.vocab.len() {
                    return Err(fail(format!(
                        "reply has {} probabilities, vocabulary has {}",
                        probs.len(),
                        self.vocab.len()
                    )));
                }
                Ok(Prediction {
                    dist: TokenDistribution::from_raw(probs),
                    fallback,
                })
            }
            Ok(WireMessage::Error { code, message }) => Err(fail(format!("{code}: {message}"))),
            Ok(other) => Err(fail(format!("unexpected reply {other:?}"))),
            Err(FrameError::Closed) => Err(fail("connection closed by server".into())),
            Err(e) => Err(fail(e.to_string())),
        }
    }
}
