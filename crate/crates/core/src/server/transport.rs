use std::io::{self, BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::str::FromStr;
use std::sync::Arc;
use std::thread;

use thiserror::Error;

use super::protocol::{codes, ToolError, ToolRequest, ToolResponse};
use super::Handler;

/// Builds the handler for a new connection; the argument is the connection index.
pub type HandlerFactory = Arc<dyn Fn(usize) -> Box<dyn Handler> + Send + Sync>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Transport {
    Stdio,
    Tcp(String),
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("transport must be `stdio` or `tcp:host:port`, got {0:?}")]
    BadSpec(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl FromStr for Transport {
    type Err = TransportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "stdio" => Ok(Transport::Stdio),
            _ => match s.strip_prefix("tcp:") {
                Some(addr) if addr.contains(':') => Ok(Transport::Tcp(addr.to_string())),
                _ => Err(TransportError::BadSpec(s.to_string())),
            },
        }
    }
}

/// Answers every frame on `reader` until EOF. Malformed frames get an error
/// response with a null id and the connection stays open.
pub fn serve_connection<R: BufRead, W: Write>(
    reader: R,
    mut writer: W,
    handler: &mut dyn Handler,
) -> io::Result<()> {
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let resp = match serde_json::from_str::<ToolRequest>(&line) {
            Ok(req) => handler.handle(&req),
            Err(e) => ToolResponse::failure(None, ToolError::new(codes::MALFORMED_FRAME, e.to_string())),
        };
        writer.write_all(resp.to_line().as_bytes())?;
        writer.write_all(b"\n")?;
        writer.flush()?;
    }
    Ok(())
}

fn handle_stream(stream: TcpStream, mut handler: Box<dyn Handler>) -> io::Result<()> {
    let reader = BufReader::new(stream.try_clone()?);
    serve_connection(reader, stream, handler.as_mut())
}

/// Runs until stdin closes (stdio) or forever (tcp). With tcp, `on_bound` receives
/// the bound address, which is useful with port 0.
pub fn serve(
    transport: &Transport,
    factory: HandlerFactory,
    on_bound: impl FnOnce(std::net::SocketAddr),
) -> Result<(), TransportError> {
    match transport {
        Transport::Stdio => {
            let mut h = factory(0);
            let stdin = io::stdin();
            serve_connection(stdin.lock(), io::stdout().lock(), h.as_mut())?;
            Ok(())
        }
        Transport::Tcp(addr) => {
            let listener = TcpListener::bind(addr)?;
            on_bound(listener.local_addr()?);
            for (n, stream) in listener.incoming().enumerate() {
                let stream = stream?;
                let handler = factory(n);
                thread::spawn(move || {
                    let _ = handle_stream(stream, handler);
                });
            }
            Ok(())
        }
    }
}
