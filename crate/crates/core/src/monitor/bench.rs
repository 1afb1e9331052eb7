//! End-to-end throughput measurement on synthetic frames.

use std::fmt;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backbone::{DetectError, Detector, Image};

use super::events::Hysteresis;
use super::policy::{decide_action, PolicyConfig};
use super::ppm::{read_ppm, write_ppm};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchConfig {
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            frames: 200,
            width: 160,
            height: 160,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub frames: usize,
    pub elapsed: Duration,
    pub fps: f64,
    pub p50: Duration,
    pub p99: Duration,
    pub max: Duration,
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ms = |d: Duration| d.as_secs_f64() * 1000.0;
        write!(
            f,
            "frames={} elapsed_s={:.3} fps={:.1} p50_ms={:.2} p99_ms={:.2} max_ms={:.2}",
            self.frames,
            self.elapsed.as_secs_f64(),
            self.fps,
            ms(self.p50),
            ms(self.p99),
            ms(self.max)
        )
    }
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[Duration], p: f64) -> Duration {
    if sorted.is_empty() {
        return Duration::ZERO;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Per frame: PPM decode, detection and the hysteresis update, timed from
/// encoded bytes to decision. Frames are seeded noise encoded up front.
pub fn run_bench(cfg: &BenchConfig, detector: &dyn Detector) -> Result<BenchReport, DetectError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let encoded: Vec<Vec<u8>> = (0..cfg.frames.clamp(1, 16))
        .map(|_| {
            let data = (0..cfg.width * cfg.height * 3).map(|_| rng.random::<f32>()).collect();
            write_ppm(&Image::new(cfg.width, cfg.height, data).expect("noise image"))
        })
        .collect();
    let policy = PolicyConfig::default();
    let mut hysteresis = Hysteresis::new(policy.hysteresis);
    let mut latencies = Vec::with_capacity(cfg.frames);
    let start = Instant::now();
    for i in 0..cfg.frames {
        let t = Instant::now();
        let image = read_ppm(&encoded[i % encoded.len()]).expect("bench frames are valid");
        let dets = detector.detect(i as u64, &image)?;
        hysteresis.update(i as u64, &dets, |l| decide_action(&policy, l));
        latencies.push(t.elapsed());
    }
    let elapsed = start.elapsed();
    latencies.sort();
    Ok(BenchReport {
        frames: cfg.frames,
        elapsed,
        fps: if elapsed.is_zero() {
            f64::INFINITY
        } else {
            cfg.frames as f64 / elapsed.as_secs_f64()
        },
        p50: percentile(&latencies, 50.0),
        p99: percentile(&latencies, 99.0),
        max: latencies.last().copied().unwrap_or_default(),
    })
}
