//! Blocking client for the NDJSON tool protocol.

use std::io::{self, BufRead, BufReader, Write};
use std::net::TcpStream;

use serde_json::Value;
use thiserror::Error;

use super::protocol::{ToolRequest, ToolResponse};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("undecodable response: {0}")]
    Decode(#[from] serde_json::Error),
    #[error("connection closed before a response arrived")]
    Closed,
    #[error("response id {got:?} does not match request id {want}")]
    IdMismatch { want: u64, got: Option<u64> },
}

pub struct NdjsonClient {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    next_id: u64,
}

impl NdjsonClient {
    pub fn connect(addr: &str) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self {
            reader: BufReader::new(stream.try_clone()?),
            writer: stream,
            next_id: 1,
        })
    }

    /// Sends one pre-built frame and reads one response line.
    pub fn send(&mut self, req: &ToolRequest) -> Result<ToolResponse, ClientError> {
        let line = serde_json::to_string(req)?;
        self.send_raw(&line)
    }

    /// Sends an arbitrary line, e.g. to probe malformed-frame handling.
    pub fn send_raw(&mut self, line: &str) -> Result<ToolResponse, ClientError> {
        self.writer.write_all(line.as_bytes())?;
        self.writer.write_all(b"\n")?;
        self.writer.flush()?;
        let mut buf = String::new();
        if self.reader.read_line(&mut buf)? == 0 {
            return Err(ClientError::Closed);
        }
        Ok(serde_json::from_str(&buf)?)
    }

    pub fn call(&mut self, tool: &str, args: Value) -> Result<ToolResponse, ClientError> {
        let id = self.next_id;
        self.next_id += 1;
        let resp = self.send(&ToolRequest::new(id, tool, args))?;
        if resp.id.is_some_and(|got| got != id) {
            return Err(ClientError::IdMismatch { want: id, got: resp.id });
        }
        Ok(resp)
    }
}
