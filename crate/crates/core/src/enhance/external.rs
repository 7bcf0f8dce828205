//! Enhancement delegated to worker processes over stdin/stdout.

use std::io::Write;
use std::path::PathBuf;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::protocol::{self, Frame, FrameType};
use super::{EnhanceError, EnhanceRequest, Enhancer, EnhancerDescriptor};
use crate::raster::Image;

/// How long a worker whose stdout closed gets to report its exit status.
const EXIT_GRACE: Duration = Duration::from_secs(2);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExternalConfig {
    pub command: PathBuf,
    pub args: Vec<String>,
    pub timeout_secs: f64,
    /// Worker processes kept by the pool.
    pub workers: usize,
}

impl Default for ExternalConfig {
    fn default() -> Self {
        ExternalConfig {
            command: PathBuf::new(),
            args: Vec::new(),
            timeout_secs: 300.0,
            workers: 1,
        }
    }
}

impl ExternalConfig {
    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs.max(0.0))
    }
}

type Incoming = Result<Option<Frame>, EnhanceError>;

struct Worker {
    child: Child,
    stdin: ChildStdin,
    rx: Receiver<Incoming>,
}

impl Worker {
    fn spawn(config: &ExternalConfig) -> Result<Worker, EnhanceError> {
        let mut child = Command::new(&config.command)
            .args(&config.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let mut stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || loop {
            let msg = protocol::read_frame(&mut stdout);
            let done = !matches!(msg, Ok(Some(_)));
            if tx.send(msg).is_err() || done {
                break;
            }
        });
        Ok(Worker { child, stdin, rx })
    }

    fn exit_status(&mut self) -> Option<String> {
        let deadline = Instant::now() + EXIT_GRACE;
        loop {
            if let Ok(Some(status)) = self.child.try_wait() {
                return Some(status.to_string());
            }
            if Instant::now() >= deadline {
                return None;
            }
            thread::sleep(Duration::from_millis(10));
        }
    }

    /// Maps a dead stream to `WorkerExit` when the process is gone.
    fn stream_error(&mut self, fallback: EnhanceError) -> EnhanceError {
        match self.exit_status() {
            Some(status) => EnhanceError::WorkerExit(status),
            None => fallback,
        }
    }

    fn send(&mut self, kind: FrameType, id: u64, payload: &[u8]) -> Result<(), EnhanceError> {
        if let Err(e) = protocol::write_frame(&mut self.stdin, kind, id, payload) {
            return Err(self.stream_error(EnhanceError::Io(e)));
        }
        Ok(())
    }

    fn receive(&mut self, timeout: Duration) -> Result<Frame, EnhanceError> {
        match self.rx.recv_timeout(timeout) {
            Ok(Ok(Some(f))) => Ok(f),
            Ok(Ok(None)) | Err(RecvTimeoutError::Disconnected) => {
                Err(self.stream_error(EnhanceError::Protocol("worker closed its output".into())))
            }
            Ok(Err(e)) => Err(self.stream_error(e)),
            Err(RecvTimeoutError::Timeout) => Err(EnhanceError::Timeout(timeout)),
        }
    }

    fn handshake(&mut self, timeout: Duration) -> Result<EnhancerDescriptor, EnhanceError> {
        self.send(FrameType::Hello, 0, br#"{"protocol":1}"#)?;
        let f = self.receive(timeout)?;
        if f.kind != FrameType::Caps {
            return Err(EnhanceError::Protocol(format!("expected CAPS, got {:?}", f.kind)));
        }
        serde_json::from_slice(&f.payload).map_err(|e| EnhanceError::Protocol(format!("CAPS: {e}")))
    }
}

impl Drop for Worker {
    fn drop(&mut self) {
        let _ = self.stdin.flush();
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

struct Pool {
    idle: Vec<Worker>,
    /// Slots with no live worker.
    vacant: usize,
}

/// Enhancer backed by a pool of worker processes, one request in flight per
/// worker. A worker that fails at the protocol level is killed and replaced
/// on the next request.
pub struct ExternalEnhancer {
    config: ExternalConfig,
    descriptor: EnhancerDescriptor,
    pool: Mutex<Pool>,
    ready: Condvar,
    next_id: AtomicU64,
}

impl ExternalEnhancer {
    /// Starts one worker and completes the handshake.
    pub fn start(config: ExternalConfig) -> Result<ExternalEnhancer, EnhanceError> {
        let workers = config.workers.max(1);
        let mut first = Worker::spawn(&config)?;
        let descriptor = first.handshake(config.timeout())?;
        Ok(ExternalEnhancer {
            config,
            descriptor,
            pool: Mutex::new(Pool {
                idle: vec![first],
                vacant: workers - 1,
            }),
            ready: Condvar::new(),
            next_id: AtomicU64::new(1),
        })
    }

    pub fn config(&self) -> &ExternalConfig {
        &self.config
    }

    fn acquire(&self) -> Result<Worker, EnhanceError> {
        let mut pool = self.pool.lock().unwrap();
        loop {
            if let Some(w) = pool.idle.pop() {
                return Ok(w);
            }
            if pool.vacant > 0 {
                pool.vacant -= 1;
                drop(pool);
                let started = Worker::spawn(&self.config).and_then(|mut w| {
                    w.handshake(self.config.timeout())?;
                    Ok(w)
                });
                if started.is_err() {
                    self.release(None);
                }
                return started;
            }
            pool = self.ready.wait(pool).unwrap();
        }
    }

    fn release(&self, worker: Option<Worker>) {
        let mut pool = self.pool.lock().unwrap();
        match worker {
            Some(w) => pool.idle.push(w),
            None => pool.vacant += 1,
        }
        self.ready.notify_one();
    }

    fn exchange(&self, worker: &mut Worker, request: &EnhanceRequest) -> Result<Image, EnhanceError> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        worker.send(FrameType::Enhance, id, &protocol::encode_enhance(request))?;
        let f = worker.receive(self.config.timeout())?;
        if f.id != id {
            return Err(EnhanceError::Protocol(format!("reply to request {}, expected {id}", f.id)));
        }
        match f.kind {
            FrameType::Result => {}
            FrameType::Error => return Err(EnhanceError::Worker(String::from_utf8_lossy(&f.payload).into_owned())),
            k => return Err(EnhanceError::Protocol(format!("expected RESULT, got {k:?}"))),
        }
        let img = protocol::decode_result(&f.payload)?;
        let expected = request.output_dims();
        if img.dims() != expected {
            return Err(EnhanceError::Protocol(format!(
                "result is {:?}, expected {expected:?}",
                img.dims()
            )));
        }
        Ok(img.clamp01())
    }
}

impl Enhancer for ExternalEnhancer {
    fn descriptor(&self) -> EnhancerDescriptor {
        self.descriptor.clone()
    }

    fn enhance(&self, request: &EnhanceRequest) -> Result<Image, EnhanceError> {
        request.validate(&self.descriptor)?;
        let mut worker = self.acquire()?;
        let out = self.exchange(&mut worker, request);
        // A worker-reported error leaves the stream in sync; anything else
        // does not.
        match &out {
            Ok(_) | Err(EnhanceError::Worker(_)) => self.release(Some(worker)),
            Err(_) => {
                drop(worker);
                self.release(None);
            }
        }
        out
    }
}
