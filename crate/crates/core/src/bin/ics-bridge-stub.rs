//! Minimal bridge child for exercising the host side of the protocol.
//!
//! Usage: `ics-bridge-stub [MODE] [--size WxH] [--max-support N]`
//!
//! Requests that violate the announced size or support limit are answered
//! with an `error` message.
//!
//! Modes:
//! - `echo` (default): returns the query clamped to `[0, 1]`
//! - `label-mean`: per-pixel mean of the support labels
//! - `half`: 0.5 everywhere
//! - `wrong-length`: one value short
//! - `out-of-range`: 1.5 at pixel 0
//! - `version2`: announces protocol version 2
//! - `exit`: exits on the first request without answering
//! - `hang`: never answers a request
//! - `mute`: never answers the hello

use std::io;
use std::process::ExitCode;
use std::thread;
use std::time::Duration;

use ics_core::bridge::{serve, BridgeHandshake, SegmentRequest, PROTOCOL_VERSION};

const MODES: [&str; 9] = [
    "echo",
    "label-mean",
    "half",
    "wrong-length",
    "out-of-range",
    "version2",
    "exit",
    "hang",
    "mute",
];

fn usage(msg: &str) -> ExitCode {
    eprintln!("ics-bridge-stub: {msg}");
    eprintln!(
        "usage: ics-bridge-stub [{}] [--size WxH] [--max-support N]",
        MODES.join("|")
    );
    ExitCode::from(2)
}

fn parse_size(s: &str) -> Option<(u32, u32)> {
    let (w, h) = s.split_once('x')?;
    Some((w.parse().ok()?, h.parse().ok()?))
}

fn label_mean(req: &SegmentRequest) -> Vec<f32> {
    if req.support.is_empty() {
        return vec![0.0; req.query.len()];
    }
    let mut acc = vec![0.0f32; req.query.len()];
    for (_, label) in &req.support {
        for (a, &l) in acc.iter_mut().zip(label) {
            *a += f32::from(l);
        }
    }
    let n = req.support.len() as f32;
    acc.iter().map(|a| (a / n).min(1.0)).collect()
}

fn main() -> ExitCode {
    let mut mode = "echo".to_string();
    let mut size = (0, 0);
    let mut max_support = 0;
    let mut args = std::env::args().skip(1);
    while let Some(arg) = args.next() {
        match arg.as_str() {
            "--size" => match args.next().as_deref().and_then(parse_size) {
                Some(s) => size = s,
                None => return usage("--size expects WxH"),
            },
            "--max-support" => match args.next().and_then(|v| v.parse().ok()) {
                Some(n) => max_support = n,
                None => return usage("--max-support expects an integer"),
            },
            m if MODES.contains(&m) => mode = m.to_string(),
            other => return usage(&format!("unknown argument {other}")),
        }
    }

    let handshake = BridgeHandshake {
        protocol_version: if mode == "version2" {
            2
        } else {
            PROTOCOL_VERSION
        },
        backend_name: format!("stub-{mode}"),
        required_width: size.0,
        required_height: size.1,
        max_support,
    };

    if mode == "mute" {
        // Hold the pipes open until stdin closes.
        let _ = io::copy(&mut io::stdin().lock(), &mut io::sink());
        return ExitCode::SUCCESS;
    }

    let handler = |req: SegmentRequest| -> Result<Vec<f32>, String> {
        if size != (0, 0) && (req.width, req.height) != (size.0 as usize, size.1 as usize) {
            return Err(format!(
                "expected {}x{}, got {}x{}",
                size.0, size.1, req.width, req.height
            ));
        }
        if max_support > 0 && req.support.len() > max_support as usize {
            return Err(format!(
                "{} support entries exceed the limit of {max_support}",
                req.support.len()
            ));
        }
        match mode.as_str() {
            "echo" | "version2" => Ok(req.query.iter().map(|v| v.clamp(0.0, 1.0)).collect()),
            "label-mean" => Ok(label_mean(&req)),
            "half" => Ok(vec![0.5; req.query.len()]),
            "wrong-length" => Ok(vec![0.5; req.query.len().saturating_sub(1)]),
            "out-of-range" => {
                let mut v = vec![0.5; req.query.len()];
                if let Some(first) = v.first_mut() {
                    *first = 1.5;
                }
                Ok(v)
            }
            "exit" => std::process::exit(3),
            "hang" => loop {
                thread::sleep(Duration::from_secs(3600));
            },
            _ => unreachable!("mode validated above"),
        }
    };

    match serve(&handshake, io::stdin().lock(), io::stdout().lock(), handler) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ics-bridge-stub: {e}");
            ExitCode::from(1)
        }
    }
}
