//! Reference enhancer worker: answers every ENHANCE frame with a bicubic
//! upsample. A few flags make it misbehave, for exercising client error
//! paths:
//!
//!   --wrong-dims      reply one pixel too narrow
//!   --die-mid-frame   write half a RESULT frame, then exit
//!   --bad-magic       corrupt the RESULT magic
//!   --wrong-id        reply with another request id
//!   --error           reply with an ERROR frame
//!   --sleep-ms N      delay every reply

use std::io::{self, BufReader, BufWriter, Write};
use std::process::ExitCode;
use std::thread;
use std::time::Duration;

use gigazoom::degrade::resample_to;
use gigazoom::enhance::protocol::{self, FrameType};
use gigazoom::enhance::{EnhancerDescriptor, Mode, DEFAULT_MAX_INPUT};

#[derive(Default)]
struct Faults {
    wrong_dims: bool,
    die_mid_frame: bool,
    bad_magic: bool,
    wrong_id: bool,
    error: bool,
    sleep: Duration,
}

fn parse_args() -> Result<Faults, String> {
    let mut f = Faults::default();
    let mut args = std::env::args().skip(1);
    while let Some(a) = args.next() {
        match a.as_str() {
            "--wrong-dims" => f.wrong_dims = true,
            "--die-mid-frame" => f.die_mid_frame = true,
            "--bad-magic" => f.bad_magic = true,
            "--wrong-id" => f.wrong_id = true,
            "--error" => f.error = true,
            "--sleep-ms" => {
                let ms = args.next().and_then(|v| v.parse().ok()).ok_or("--sleep-ms needs a number")?;
                f.sleep = Duration::from_millis(ms);
            }
            other => return Err(format!("unknown flag {other}")),
        }
    }
    Ok(f)
}

fn serve(faults: &Faults) -> Result<(), Box<dyn std::error::Error>> {
    let mut input = BufReader::new(io::stdin().lock());
    let mut out = BufWriter::new(io::stdout().lock());
    while let Some(frame) = protocol::read_frame(&mut input)? {
        match frame.kind {
            FrameType::Hello => {
                let caps = EnhancerDescriptor {
                    name: "echo-bicubic".into(),
                    mode: Mode::OneShot,
                    max_input: DEFAULT_MAX_INPUT,
                    deterministic: true,
                };
                protocol::write_frame(&mut out, FrameType::Caps, frame.id, &serde_json::to_vec(&caps)?)?;
            }
            FrameType::Enhance => {
                thread::sleep(faults.sleep);
                let id = if faults.wrong_id { frame.id + 1000 } else { frame.id };
                if faults.error {
                    protocol::write_frame(&mut out, FrameType::Error, id, b"refused")?;
                    continue;
                }
                let req = protocol::decode_enhance(&frame.payload)?;
                let (mut w, h) = req.output_dims();
                if faults.wrong_dims {
                    w -= 1;
                }
                let payload = protocol::encode_result(&resample_to(&req.lr, w, h));
                if faults.die_mid_frame || faults.bad_magic {
                    let mut bytes = Vec::new();
                    protocol::write_frame(&mut bytes, FrameType::Result, id, &payload)?;
                    if faults.bad_magic {
                        bytes[0] = b'X';
                    } else {
                        bytes.truncate(bytes.len() / 2);
                    }
                    out.write_all(&bytes)?;
                    out.flush()?;
                    if faults.die_mid_frame {
                        std::process::exit(1);
                    }
                    continue;
                }
                protocol::write_frame(&mut out, FrameType::Result, id, &payload)?;
            }
            other => {
                let msg = format!("unexpected {other:?} frame");
                protocol::write_frame(&mut out, FrameType::Error, frame.id, msg.as_bytes())?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let faults = match parse_args() {
        Ok(f) => f,
        Err(e) => {
            eprintln!("echo-worker: {e}");
            return ExitCode::from(2);
        }
    };
    match serve(&faults) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("echo-worker: {e}");
            ExitCode::FAILURE
        }
    }
}
