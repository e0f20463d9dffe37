//! Newline-delimited JSON protocol for out-of-process noise predictors.
//!
//! The client opens with `{"id":0,"op":"hello"}` and the server answers
//! `{"id":0,"op":"hello","d":..,"m":..,"concurrent":..}`. Each prediction is
//! `{"id":n,"op":"predict_noise","x":[..],"c":[..],"t":..,"alpha_bar":..}`
//! answered by `{"id":n,"eps":[..]}` or `{"id":n,"error":".."}`.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::process::{Child, Command, Stdio};
use std::str::FromStr;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use mdp_core::{ConditionEmbedding, Denoiser, DenoiserError, Latent, NoisePrediction};
use serde::{Deserialize, Serialize};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Request {
    Hello {
        id: u64,
    },
    PredictNoise {
        id: u64,
        x: Vec<f64>,
        c: Vec<f64>,
        t: usize,
        alpha_bar: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Response {
    Hello {
        id: u64,
        op: String,
        d: usize,
        m: usize,
        #[serde(default)]
        concurrent: bool,
    },
    Eps {
        id: u64,
        eps: Vec<f64>,
    },
    Error {
        id: Option<u64>,
        error: String,
    },
}

/// Where the remote predictor lives: `tcp:HOST:PORT` or `cmd:PROGRAM ARGS...`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    Tcp(String),
    Child { program: String, args: Vec<String> },
}

impl FromStr for Endpoint {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if let Some(addr) = s.strip_prefix("tcp:") {
            return Ok(Endpoint::Tcp(addr.to_string()));
        }
        if let Some(cmd) = s.strip_prefix("cmd:") {
            let mut parts = cmd.split_whitespace().map(str::to_string);
            let program = parts.next().ok_or("empty command")?;
            return Ok(Endpoint::Child {
                program,
                args: parts.collect(),
            });
        }
        Err(format!("endpoint `{s}` must start with `tcp:` or `cmd:`"))
    }
}

struct Connection {
    writer: Box<dyn Write + Send>,
    lines: Receiver<std::io::Result<String>>,
    next_id: u64,
}

/// A [`Denoiser`] that forwards every prediction over one connection, one
/// request in flight at a time.
pub struct RemoteDenoiser {
    conn: Mutex<Connection>,
    child: Mutex<Option<Child>>,
    socket: Option<TcpStream>,
    d: usize,
    m: usize,
    server_concurrent: bool,
    timeout: Duration,
}

fn transport(e: impl std::fmt::Display) -> DenoiserError {
    DenoiserError::Transport(e.to_string())
}

impl RemoteDenoiser {
    pub fn connect(endpoint: &Endpoint, timeout: Duration) -> Result<Self, DenoiserError> {
        match endpoint {
            Endpoint::Tcp(addr) => {
                let stream = TcpStream::connect(addr).map_err(transport)?;
                stream.set_nodelay(true).map_err(transport)?;
                let reader = stream.try_clone().map_err(transport)?;
                let socket = stream.try_clone().map_err(transport)?;
                let mut remote = Self::over(reader, stream, None, timeout)?;
                remote.socket = Some(socket);
                Ok(remote)
            }
            Endpoint::Child { program, args } => {
                let mut child = Command::new(program)
                    .args(args)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(|e| transport(format!("cannot start `{program}`: {e}")))?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                Self::over(stdout, stdin, Some(child), timeout)
            }
        }
    }

    /// Runs the handshake over an already open byte stream.
    pub fn over(
        reader: impl std::io::Read + Send + 'static,
        writer: impl Write + Send + 'static,
        child: Option<Child>,
        timeout: Duration,
    ) -> Result<Self, DenoiserError> {
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(reader).lines() {
                let failed = line.is_err();
                if tx.send(line).is_err() || failed {
                    break;
                }
            }
        });
        let mut conn = Connection {
            writer: Box::new(writer),
            lines: rx,
            next_id: 0,
        };
        let handshake = match round_trip(&mut conn, timeout, &Request::Hello { id: 0 }) {
            Ok(Response::Hello {
                op,
                d,
                m,
                concurrent,
                ..
            }) if op == "hello" => Ok((d, m, concurrent)),
            Ok(Response::Error { error, .. }) => Err(DenoiserError::Remote(error)),
            Ok(other) => Err(DenoiserError::MalformedFrame(format!(
                "expected hello, got {other:?}"
            ))),
            Err(e) => Err(e),
        };
        let (d, m, server_concurrent) = match handshake {
            Ok(dims) => dims,
            Err(e) => {
                if let Some(mut child) = child {
                    let _ = child.kill();
                    let _ = child.wait();
                }
                return Err(e);
            }
        };
        conn.next_id = 1;
        Ok(Self {
            conn: Mutex::new(conn),
            child: Mutex::new(child),
            socket: None,
            d,
            m,
            server_concurrent,
            timeout,
        })
    }

    /// Whether the server said it can take several connections at once.
    pub fn server_concurrent(&self) -> bool {
        self.server_concurrent
    }

    /// Fails unless the handshake dimensions equal the run's.
    pub fn expect_dims(&self, d: usize, m: usize) -> Result<(), DenoiserError> {
        if self.d != d {
            return Err(DenoiserError::DimensionMismatch {
                what: "remote latent",
                expected: d,
                found: self.d,
            });
        }
        if self.m != m {
            return Err(DenoiserError::DimensionMismatch {
                what: "remote condition",
                expected: m,
                found: self.m,
            });
        }
        Ok(())
    }
}

fn round_trip(
    conn: &mut Connection,
    timeout: Duration,
    req: &Request,
) -> Result<Response, DenoiserError> {
    let id = match req {
        Request::Hello { id } | Request::PredictNoise { id, .. } => *id,
    };
    let mut line = serde_json::to_string(req).expect("requests serialize");
    line.push('\n');
    conn.writer
        .write_all(line.as_bytes())
        .and_then(|_| conn.writer.flush())
        .map_err(transport)?;
    let reply = match conn.lines.recv_timeout(timeout) {
        Ok(Ok(reply)) => reply,
        Ok(Err(e)) => return Err(transport(e)),
        Err(RecvTimeoutError::Timeout) => {
            return Err(DenoiserError::Timeout {
                millis: timeout.as_millis() as u64,
            })
        }
        Err(RecvTimeoutError::Disconnected) => {
            return Err(transport("connection closed by server"))
        }
    };
    let resp: Response = serde_json::from_str(&reply)
        .map_err(|e| DenoiserError::MalformedFrame(format!("{e}: {reply}")))?;
    let found = match &resp {
        Response::Hello { id, .. } | Response::Eps { id, .. } => Some(*id),
        Response::Error { id, .. } => *id,
    };
    match found {
        Some(found) if found != id => Err(DenoiserError::IdMismatch {
            expected: id,
            found,
        }),
        _ => Ok(resp),
    }
}

impl Denoiser for RemoteDenoiser {
    fn latent_dim(&self) -> usize {
        self.d
    }

    fn condition_dim(&self) -> usize {
        self.m
    }

    fn predict_noise(
        &self,
        x: &Latent,
        c: &ConditionEmbedding,
        step: usize,
        alpha_bar: f64,
    ) -> Result<NoisePrediction, DenoiserError> {
        if x.len() != self.d {
            return Err(DenoiserError::DimensionMismatch {
                what: "latent",
                expected: self.d,
                found: x.len(),
            });
        }
        if c.dim() != self.m {
            return Err(DenoiserError::DimensionMismatch {
                what: "condition",
                expected: self.m,
                found: c.dim(),
            });
        }
        let mut conn = self
            .conn
            .lock()
            .map_err(|_| transport("connection poisoned"))?;
        let id = conn.next_id;
        conn.next_id += 1;
        let req = Request::PredictNoise {
            id,
            x: x.to_vec(),
            c: c.values().to_vec(),
            t: step,
            alpha_bar,
        };
        match round_trip(&mut conn, self.timeout, &req)? {
            Response::Eps { eps, .. } if eps.len() != self.d => {
                Err(DenoiserError::DimensionMismatch {
                    what: "eps",
                    expected: self.d,
                    found: eps.len(),
                })
            }
            Response::Eps { eps, .. } => Ok(NoisePrediction(eps)),
            Response::Error { error, .. } => Err(DenoiserError::Remote(error)),
            Response::Hello { .. } => Err(DenoiserError::MalformedFrame("unexpected hello".into())),
        }
    }

    /// One connection carries one request at a time.
    fn concurrent(&self) -> bool {
        false
    }
}

impl Drop for RemoteDenoiser {
    fn drop(&mut self) {
        if let Ok(conn) = self.conn.get_mut() {
            conn.writer = Box::new(std::io::sink());
        }
        if let Some(socket) = &self.socket {
            let _ = socket.shutdown(std::net::Shutdown::Both);
        }
        if let Some(mut child) = self.child.get_mut().ok().and_then(Option::take) {
            for _ in 0..50 {
                if matches!(child.try_wait(), Ok(Some(_))) {
                    return;
                }
                thread::sleep(Duration::from_millis(10));
            }
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// Answers requests from `reader` until EOF. With `max_requests`, the
/// server hangs up after that many predictions (used to exercise client
/// failure paths).
pub fn serve(
    denoiser: &dyn Denoiser,
    reader: impl BufRead,
    mut writer: impl Write,
    max_requests: Option<usize>,
) -> std::io::Result<()> {
    let mut served = 0;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let resp = match serde_json::from_str::<Request>(&line) {
            Ok(Request::Hello { id }) => Response::Hello {
                id,
                op: "hello".into(),
                d: denoiser.latent_dim(),
                m: denoiser.condition_dim(),
                concurrent: false,
            },
            Ok(Request::PredictNoise {
                id,
                x,
                c,
                t,
                alpha_bar,
            }) => {
                if max_requests.is_some_and(|n| served >= n) {
                    return Ok(());
                }
                served += 1;
                match denoiser.predict_noise(&Latent(x), &ConditionEmbedding::new(c), t, alpha_bar)
                {
                    Ok(eps) => Response::Eps {
                        id,
                        eps: eps.into_inner(),
                    },
                    Err(e) => Response::Error {
                        id: Some(id),
                        error: e.to_string(),
                    },
                }
            }
            Err(e) => Response::Error {
                id: serde_json::from_str::<serde_json::Value>(&line)
                    .ok()
                    .and_then(|v| v.get("id").and_then(serde_json::Value::as_u64)),
                error: format!("bad request: {e}"),
            },
        };
        let mut out = serde_json::to_string(&resp).expect("responses serialize");
        out.push('\n');
        writer.write_all(out.as_bytes())?;
        writer.flush()?;
    }
    Ok(())
}

/// Serves connections one after another.
pub fn serve_tcp(
    denoiser: &dyn Denoiser,
    listener: TcpListener,
    max_requests: Option<usize>,
) -> std::io::Result<()> {
    for stream in listener.incoming() {
        let stream = stream?;
        let reader = BufReader::new(stream.try_clone()?);
        if let Err(e) = serve(denoiser, reader, &stream, max_requests) {
            log::warn!("connection ended: {e}");
        }
    }
    Ok(())
}
