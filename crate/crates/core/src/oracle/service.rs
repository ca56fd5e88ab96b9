//! Minimal HTTP front end for a [`LocalOracle`] and the matching client.
//!
//! * `GET /meta` returns `{"classes": C, "frames": k, "dim": D}`.
//! * `POST /predict` takes `{"mode": "soft" | "hard", "sequences": [[[D reals] x k] ..]}`
//!   and returns `{"probs": [[C reals] ..]}`.
//!
//! Errors come back as `{"error": ".."}` with a 4xx status.

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};
use tiny_http::{Header, Method, Request, Response, Server};

use super::{BlackBox, LocalOracle, ModelMeta, OutputMode};
use crate::backbone::FrameFeatureSequence;
use crate::binio::{Access, AccessLog};
use crate::error::{Error, Result};
use crate::numerics::ProbVector;

/// Largest number of sequences accepted per request.
pub const MAX_BATCH: usize = 64;

#[derive(Serialize, Deserialize)]
struct PredictRequest {
    #[serde(default)]
    mode: OutputMode,
    sequences: Vec<Vec<Vec<f32>>>,
}

#[derive(Serialize, Deserialize)]
struct PredictResponse {
    probs: Vec<Vec<f32>>,
}

#[derive(Serialize, Deserialize)]
struct ErrorBody {
    error: String,
}

/// A running prediction service. Dropping it stops the workers.
pub struct Service {
    server: Arc<Server>,
    workers: Vec<JoinHandle<()>>,
    addr: SocketAddr,
}

impl Service {
    /// Binds `addr` (e.g. `127.0.0.1:0`) and starts `workers` handler threads.
    pub fn start(oracle: LocalOracle, addr: &str, workers: usize) -> Result<Self> {
        let server = Server::http(addr).map_err(|e| Error::Config(format!("cannot bind {addr}: {e}")))?;
        let bound = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| Error::Config("service is not bound to an IP socket".into()))?;
        let server = Arc::new(server);
        let oracle = Arc::new(oracle);
        let workers = (0..workers.max(1))
            .map(|_| {
                let server = Arc::clone(&server);
                let oracle = Arc::clone(&oracle);
                std::thread::spawn(move || {
                    for req in server.incoming_requests() {
                        handle(&oracle, req);
                    }
                })
            })
            .collect();
        Ok(Self {
            server,
            workers,
            addr: bound,
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the service is stopped from another thread.
    pub fn wait(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for Service {
    fn drop(&mut self) {
        for _ in &self.workers {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

fn json_response<T: Serialize>(status: u16, body: &T) -> Response<std::io::Cursor<Vec<u8>>> {
    let bytes = serde_json::to_vec(body).expect("serializable body");
    let header = Header::from_bytes("Content-Type", "application/json").expect("static header");
    Response::from_data(bytes).with_status_code(status).with_header(header)
}

fn error_response(status: u16, msg: impl Into<String>) -> Response<std::io::Cursor<Vec<u8>>> {
    json_response(status, &ErrorBody { error: msg.into() })
}

fn handle(oracle: &LocalOracle, mut req: Request) {
    let url = req.url().split('?').next().unwrap_or("").to_string();
    let resp = match (req.method(), url.as_str()) {
        (Method::Get, "/meta") => match oracle.meta() {
            Ok(m) => json_response(200, &m),
            Err(e) => error_response(500, e.to_string()),
        },
        (Method::Post, "/predict") => {
            let mut body = String::new();
            match req.as_reader().read_to_string(&mut body) {
                Ok(_) => predict(oracle, &body),
                Err(e) => error_response(400, format!("unreadable body: {e}")),
            }
        }
        _ => error_response(404, format!("no route {url}")),
    };
    let _ = req.respond(resp);
}

fn predict(oracle: &LocalOracle, body: &str) -> Response<std::io::Cursor<Vec<u8>>> {
    let req: PredictRequest = match serde_json::from_str(body) {
        Ok(r) => r,
        Err(e) => return error_response(400, format!("malformed request: {e}")),
    };
    if req.sequences.len() > MAX_BATCH {
        return error_response(413, format!("batch of {} exceeds the limit of {MAX_BATCH}", req.sequences.len()));
    }
    let meta = oracle.meta().expect("local meta");
    let mut videos = Vec::with_capacity(req.sequences.len());
    for (i, rows) in req.sequences.iter().enumerate() {
        if rows.len() != meta.frames || rows.iter().any(|r| r.len() != meta.dim) {
            let got_d = rows.first().map_or(0, Vec::len);
            return error_response(
                400,
                format!(
                    "sequence {i} has shape ({}, {got_d}), expected (k, D) = ({}, {})",
                    rows.len(),
                    meta.frames,
                    meta.dim
                ),
            );
        }
        match FrameFeatureSequence::from_rows(format!("req{i}"), rows, None) {
            Ok(v) => videos.push(v),
            Err(e) => return error_response(400, format!("sequence {i}: {e}")),
        }
    }
    let refs: Vec<&FrameFeatureSequence> = videos.iter().collect();
    match oracle.predict(&refs, req.mode) {
        Ok(probs) => json_response(
            200,
            &PredictResponse {
                probs: probs.iter().map(|p| p.as_slice().iter().map(|&x| x as f32).collect()).collect(),
            },
        ),
        Err(e) => error_response(400, e.to_string()),
    }
}

/// HTTP client for a running [`Service`]; records every route it calls.
pub struct RemoteTeacher {
    base: String,
    agent: ureq::Agent,
    log: Option<AccessLog>,
}

impl RemoteTeacher {
    pub fn new(base_url: impl Into<String>, log: Option<AccessLog>) -> Self {
        Self {
            base: base_url.into().trim_end_matches('/').to_string(),
            agent: ureq::AgentBuilder::new().build(),
            log,
        }
    }

    fn call(&self, route: &str, body: Option<String>) -> Result<String> {
        if let Some(log) = &self.log {
            log.record(Access::Route(route.to_string()));
        }
        let url = format!("{}{route}", self.base);
        let res = match body {
            Some(b) => self
                .agent
                .post(&url)
                .set("Content-Type", "application/json")
                .send_string(&b),
            None => self.agent.get(&url).call(),
        };
        match res {
            Ok(r) => r
                .into_string()
                .map_err(|e| Error::Protocol(format!("{route}: unreadable response: {e}"))),
            Err(ureq::Error::Status(code, r)) => {
                let text = r.into_string().unwrap_or_default();
                let msg = serde_json::from_str::<ErrorBody>(&text).map(|b| b.error).unwrap_or(text);
                Err(Error::Protocol(format!("{route} returned {code}: {msg}")))
            }
            Err(e) => Err(Error::Protocol(format!("{route}: {e}"))),
        }
    }
}

impl BlackBox for RemoteTeacher {
    fn meta(&self) -> Result<ModelMeta> {
        let text = self.call("/meta", None)?;
        serde_json::from_str(&text).map_err(|e| Error::Protocol(format!("/meta: {e}")))
    }

    fn predict(&self, videos: &[&FrameFeatureSequence], mode: OutputMode) -> Result<Vec<ProbVector>> {
        let mut out = Vec::with_capacity(videos.len());
        for chunk in videos.chunks(MAX_BATCH) {
            let req = PredictRequest {
                mode,
                sequences: chunk
                    .iter()
                    .map(|v| (0..v.frames()).map(|j| v.frame(j).to_vec()).collect())
                    .collect(),
            };
            let text = self.call("/predict", Some(serde_json::to_string(&req).expect("serializable")))?;
            let resp: PredictResponse =
                serde_json::from_str(&text).map_err(|e| Error::Protocol(format!("/predict: {e}")))?;
            if resp.probs.len() != chunk.len() {
                return Err(Error::Protocol(format!(
                    "/predict answered {} rows for {} sequences",
                    resp.probs.len(),
                    chunk.len()
                )));
            }
            for row in resp.probs {
                let p = ProbVector::new(row.into_iter().map(f64::from).collect())
                    .map_err(|e| Error::Protocol(format!("/predict: {e}")))?;
                out.push(p);
            }
        }
        Ok(out)
    }
}
