//! LLM exchange over newline-delimited JSON.
//!
//! One request per line: `{"id", "system", "user", "temperature", "top_p"}`.
//! One reply per line: `{"id", "text"}` with an optional `"prob"` score that,
//! when present, is used verbatim instead of parsing `text`.

use std::collections::HashMap;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LlmRequest {
    pub id: u64,
    pub system: String,
    pub user: String,
    pub temperature: f64,
    pub top_p: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct LlmResponse {
    pub id: u64,
    pub text: String,
    #[serde(default)]
    pub prob: Option<f64>,
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("no reply within {0:?}")]
    Timeout(Duration),
    #[error("peer closed the connection")]
    Closed,
    #[error("protocol: {0}")]
    Protocol(String),
}

pub trait LlmClient {
    fn exchange(&mut self, request: &LlmRequest) -> Result<LlmResponse, ClientError>;
}

impl<C: LlmClient + ?Sized> LlmClient for Box<C> {
    fn exchange(&mut self, request: &LlmRequest) -> Result<LlmResponse, ClientError> {
        (**self).exchange(request)
    }
}

/// NDJSON client over any byte stream pair. A background thread drains the
/// read side so that per-exchange timeouts work for pipes and sockets alike.
pub struct NdjsonClient {
    writer: Option<Box<dyn Write + Send>>,
    lines: mpsc::Receiver<io::Result<String>>,
    timeout: Option<Duration>,
    child: Option<Child>,
    /// Shut down on drop so the reader thread and the peer both see EOF.
    #[cfg(unix)]
    socket: Option<std::os::unix::net::UnixStream>,
}

impl NdjsonClient {
    pub fn from_streams<R, W>(reader: R, writer: W, timeout: Option<Duration>) -> Self
    where
        R: Read + Send + 'static,
        W: Write + Send + 'static,
    {
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(reader).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        Self {
            writer: Some(Box::new(writer)),
            lines: rx,
            timeout,
            child: None,
            #[cfg(unix)]
            socket: None,
        }
    }

    /// Runs `program` and talks to it over its stdin/stdout.
    pub fn spawn(program: &str, args: &[String], timeout: Option<Duration>) -> io::Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let mut client = Self::from_streams(stdout, stdin, timeout);
        client.child = Some(child);
        Ok(client)
    }

    #[cfg(unix)]
    pub fn connect_unix(path: impl AsRef<Path>, timeout: Option<Duration>) -> io::Result<Self> {
        let stream = std::os::unix::net::UnixStream::connect(path)?;
        let reader = stream.try_clone()?;
        let control = stream.try_clone()?;
        let mut client = Self::from_streams(reader, stream, timeout);
        client.socket = Some(control);
        Ok(client)
    }

    fn read_line(&self) -> Result<String, ClientError> {
        let next = match self.timeout {
            Some(t) => self.lines.recv_timeout(t).map_err(|e| match e {
                mpsc::RecvTimeoutError::Timeout => ClientError::Timeout(t),
                mpsc::RecvTimeoutError::Disconnected => ClientError::Closed,
            })?,
            None => self.lines.recv().map_err(|_| ClientError::Closed)?,
        };
        Ok(next?)
    }
}

impl LlmClient for NdjsonClient {
    fn exchange(&mut self, request: &LlmRequest) -> Result<LlmResponse, ClientError> {
        let writer = self.writer.as_mut().ok_or(ClientError::Closed)?;
        let mut line = serde_json::to_string(request)
            .map_err(|e| ClientError::Protocol(e.to_string()))?;
        line.push('\n');
        writer.write_all(line.as_bytes())?;
        writer.flush()?;

        let reply = loop {
            let l = self.read_line()?;
            if !l.trim().is_empty() {
                break l;
            }
        };
        let resp: LlmResponse = serde_json::from_str(&reply)
            .map_err(|e| ClientError::Protocol(format!("bad reply `{}`: {e}", reply.trim())))?;
        if resp.id != request.id {
            return Err(ClientError::Protocol(format!(
                "reply id {} does not match request id {}",
                resp.id, request.id
            )));
        }
        Ok(resp)
    }
}

impl Drop for NdjsonClient {
    fn drop(&mut self) {
        self.writer.take();
        #[cfg(unix)]
        if let Some(s) = self.socket.take() {
            let _ = s.shutdown(std::net::Shutdown::Both);
        }
        if let Some(mut child) = self.child.take() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// Offline client answering from a CSV of recorded replies (`id,text`, with an
/// optional trailing `prob` column).
#[derive(Debug, Clone, Default)]
pub struct ReplayClient {
    replies: HashMap<u64, (String, Option<f64>)>,
}

impl ReplayClient {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (u64, String)>) -> Self {
        Self {
            replies: pairs.into_iter().map(|(id, t)| (id, (t, None))).collect(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ClientError> {
        let mut rdr = csv::Reader::from_path(path.as_ref())
            .map_err(|e| ClientError::Protocol(e.to_string()))?;
        let headers = rdr
            .headers()
            .map_err(|e| ClientError::Protocol(e.to_string()))?
            .clone();
        let has_prob = match headers.iter().collect::<Vec<_>>().as_slice() {
            ["id", "text"] => false,
            ["id", "text", "prob"] => true,
            other => {
                return Err(ClientError::Protocol(format!(
                    "replay header must be `id,text[,prob]`, found `{}`",
                    other.join(",")
                )))
            }
        };
        let mut replies = HashMap::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| ClientError::Protocol(e.to_string()))?;
            let id: u64 = rec[0]
                .trim()
                .parse()
                .map_err(|_| ClientError::Protocol(format!("bad replay id `{}`", &rec[0])))?;
            let prob = if has_prob && !rec[2].trim().is_empty() {
                Some(rec[2].trim().parse().map_err(|_| {
                    ClientError::Protocol(format!("bad replay prob `{}`", &rec[2]))
                })?)
            } else {
                None
            };
            replies.insert(id, (rec[1].to_string(), prob));
        }
        Ok(Self { replies })
    }
}

impl LlmClient for ReplayClient {
    fn exchange(&mut self, request: &LlmRequest) -> Result<LlmResponse, ClientError> {
        let (text, prob) = self
            .replies
            .get(&request.id)
            .ok_or_else(|| ClientError::Protocol(format!("no recorded reply for id {}", request.id)))?;
        Ok(LlmResponse {
            id: request.id,
            text: text.clone(),
            prob: *prob,
        })
    }
}
