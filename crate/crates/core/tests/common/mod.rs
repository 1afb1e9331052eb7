//! Helpers shared by the integration tests.

#![allow(dead_code)]

use std::io::{Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::thread;

use scarecrow_core::geometry::BoundingBox;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// What a fake endpoint saw: the status it answered and the request body.
pub type Exchanges = Arc<Mutex<Vec<(u16, String)>>>;

/// HTTP/1.1 endpoint on an ephemeral port answering with the scripted
/// statuses in turn; the last status repeats.
pub fn fake_endpoint(statuses: Vec<u16>) -> (String, Exchanges) {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind loopback");
    let url = format!("http://{}/alerts", listener.local_addr().unwrap());
    let seen: Exchanges = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        for (i, stream) in listener.incoming().enumerate() {
            let Ok(mut stream) = stream else { break };
            let body = read_request_body(&mut stream);
            let status = statuses[i.min(statuses.len() - 1)];
            log.lock().unwrap().push((status, body));
            let _ = write!(
                stream,
                "HTTP/1.1 {status} Scripted\r\ncontent-length: 0\r\nconnection: close\r\n\r\n"
            );
        }
    });
    (url, seen)
}

fn read_request_body(stream: &mut impl Read) -> String {
    let mut buf = Vec::new();
    let mut chunk = [0u8; 4096];
    loop {
        let n = stream.read(&mut chunk).unwrap_or(0);
        if n == 0 {
            return String::new();
        }
        buf.extend_from_slice(&chunk[..n]);
        let Some(end) = buf.windows(4).position(|w| w == b"\r\n\r\n") else {
            continue;
        };
        let head = String::from_utf8_lossy(&buf[..end]).to_ascii_lowercase();
        let len = head
            .lines()
            .find_map(|l| l.strip_prefix("content-length:"))
            .and_then(|v| v.trim().parse::<usize>().ok())
            .unwrap_or(0);
        if buf.len() >= end + 4 + len {
            return String::from_utf8_lossy(&buf[end + 4..end + 4 + len]).into_owned();
        }
    }
}

/// Share of `[lo, hi]` that falls inside each of `n` equal cells of the
/// unit interval.
fn cell_occupancy(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let step = 1.0 / n as f64;
    (0..n)
        .map(|i| {
            let a = i as f64 * step;
            let b = a + step;
            ((hi.min(b) - lo.max(a)).max(0.0)) / step
        })
        .collect()
}

/// IoU measured on an `n`×`n` raster of the unit square. Each cell adds the
/// area the box (or both boxes) covers inside it; because the boxes are
/// axis aligned the per-cell area factors into x and y occupancies, so the
/// double sum over cells is a product of two sums.
pub fn raster_iou(a: &BoundingBox, b: &BoundingBox, n: usize) -> f64 {
    let cell_area = 1.0 / (n * n) as f64;
    let area = |bx: &BoundingBox| {
        let x: f64 = cell_occupancy(bx.xmin(), bx.xmax(), n).iter().sum();
        let y: f64 = cell_occupancy(bx.ymin(), bx.ymax(), n).iter().sum();
        x * y * cell_area
    };
    let both = |lo1: f64, hi1: f64, lo2: f64, hi2: f64| -> f64 {
        // Inside one cell both boxes cover a sub-interval; their overlap is
        // what the cell contributes.
        let step = 1.0 / n as f64;
        (0..n)
            .map(|i| {
                let c0 = i as f64 * step;
                let c1 = c0 + step;
                let (s1, e1) = (lo1.max(c0), hi1.min(c1));
                let (s2, e2) = (lo2.max(c0), hi2.min(c1));
                ((e1.min(e2) - s1.max(s2)).max(0.0)) / step
            })
            .sum()
    };
    let inter = both(a.xmin(), a.xmax(), b.xmin(), b.xmax()) * both(a.ymin(), a.ymax(), b.ymin(), b.ymax()) * cell_area;
    let union = area(a) + area(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}
