//! Subcommand dispatch.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use scarecrow_core::backbone::{load_weights, synthetic_network, DefaultNetSpec};
use scarecrow_core::dataset::{has_errors, load_dataset_dir, split, stats, SplitSpec};
use scarecrow_core::evaluation::{pr_curves, pr_curves_csv, run_harness, samples_from_dataset, HarnessConfig};
use scarecrow_core::geometry::generate_anchors;
use scarecrow_core::monitor::{
    read_ppm, replay_spool, run_bench, run_pipeline, AlertSink, BenchConfig, FileSink, FrameSource, PipelineConfig, StdoutSink,
    WebhookSink,
};
use scarecrow_core::{Detector, DetectorScript, NetDetector, ScriptedDetector, SsdModel};

use crate::config::{load_config, GlobalConfig, PolicySource, CONFIG_ENV};

pub const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (weights format SCRW1)");

#[derive(Debug, Parser)]
#[command(name = "scarecrow", version = VERSION, about = "Animal detection and deterrence toolkit")]
pub struct Cli {
    /// JSON configuration file (falls back to $SCARECROW_CONFIG).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Log more (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct DetectorArgs {
    /// SCRW1 weights file.
    #[arg(long, conflicts_with = "stub")]
    pub weights: Option<PathBuf>,
    /// JSON script of canned detections per frame.
    #[arg(long)]
    pub stub: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the prior boxes as CSV.
    Priors {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a LabelImg dataset directory (annotations/ and images/).
    Validate {
        dataset: PathBuf,
        #[arg(long)]
        min_per_class: Option<usize>,
    },
    /// Write a seeded, label-stratified train/validation split.
    Split {
        dataset: PathBuf,
        #[arg(long, default_value_t = 0.8)]
        train_frac: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the detector on one PPM frame and print detections as JSON lines.
    Detect {
        image: PathBuf,
        #[command(flatten)]
        detector: DetectorArgs,
        /// Frame index handed to the detector.
        #[arg(long, default_value_t = 0)]
        frame: u64,
        #[arg(long)]
        score: Option<f64>,
    },
    /// Run the stepped evaluation harness over a dataset.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        steps: usize,
        #[arg(long)]
        iou: Option<f64>,
        #[arg(long)]
        score: Option<f64>,
        #[command(flatten)]
        detector: DetectorArgs,
        /// Write precision/recall points as CSV.
        #[arg(long)]
        pr_csv: Option<PathBuf>,
        /// Write one line per step.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Watch a frame source and act on threats.
    Monitor {
        /// Directory of .ppm frames or a manifest listing them.
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        policy: Option<PathBuf>,
        /// `stdout`, `file:PATH` or an http(s) webhook URL.
        #[arg(long, default_value = "stdout")]
        sink: String,
        #[arg(long)]
        fps: Option<f64>,
        /// JSONL event log.
        #[arg(long, default_value = "events.jsonl")]
        log: PathBuf,
        #[command(flatten)]
        detector: DetectorArgs,
        /// Process every frame as fast as possible instead of at the frame rate.
        #[arg(long)]
        no_realtime: bool,
    },
    /// Measure end-to-end frames per second and tail latency.
    Bench {
        #[arg(long, default_value_t = 200)]
        frames: usize,
        #[arg(long, default_value = "160x160", value_parser = parse_size)]
        size: (usize, usize),
        /// Weights to benchmark instead of the seeded default network.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Deliver alerts spooled by an unreachable webhook.
    Replay {
        #[arg(long)]
        spool: Option<PathBuf>,
        #[arg(long)]
        url: String,
    },
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected WxH, got {s:?}"))?;
    let w: usize = w.parse().map_err(|_| format!("bad width in {s:?}"))?;
    let h: usize = h.parse().map_err(|_| format!("bad height in {s:?}"))?;
    if w == 0 || h == 0 {
        return Err("size must be at least 1x1".into());
    }
    Ok((w, h))
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failed(_) => 1,
        }
    }
}

fn fail(e: impl std::fmt::Display) -> CliError {
    CliError::Failed(e.to_string())
}

fn config_for(cli: &Cli) -> Result<GlobalConfig, CliError> {
    let path = cli.config.clone().or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
    match path {
        Some(p) => load_config(&p).map_err(fail),
        None => Ok(GlobalConfig::default()),
    }
}

fn build_detector(cfg: &GlobalConfig, args: &DetectorArgs, score: f64) -> Result<Box<dyn Detector>, CliError> {
    let (weights, stub) = match (&args.weights, &args.stub) {
        (None, None) => (cfg.weights.as_ref(), cfg.stub.as_ref()),
        (w, s) => (w.as_ref(), s.as_ref()),
    };
    if let Some(w) = weights {
        let net = load_weights(w).map_err(|e| fail(format!("{}: {e}", w.display())))?;
        let model =
            SsdModel::new(net, cfg.anchors.clone(), cfg.labels.clone()).map_err(|e| fail(format!("{}: {e}", w.display())))?;
        return Ok(Box::new(NetDetector::new(model, cfg.variances, score, cfg.nms)));
    }
    if let Some(s) = stub {
        return Ok(Box::new(ScriptedDetector::new(DetectorScript::load(s).map_err(fail)?)));
    }
    Err(CliError::Usage(
        "no detector: pass --weights or --stub, or set one in the config".into(),
    ))
}

fn write_out(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| fail(format!("{}: {e}", p.display()))),
        None => io::stdout().write_all(text.as_bytes()).map_err(fail),
    }
}

fn make_sink(spec: &str, spool: &Path) -> Result<Box<dyn AlertSink>, CliError> {
    if spec == "stdout" {
        Ok(Box::new(StdoutSink))
    } else if let Some(path) = spec.strip_prefix("file:") {
        Ok(Box::new(FileSink::new(path)))
    } else if spec.starts_with("http://") || spec.starts_with("https://") {
        Ok(Box::new(WebhookSink::new(spec, spool)))
    } else {
        Err(CliError::Usage(format!(
            "unknown sink {spec:?}: use stdout, file:PATH or an http(s) URL"
        )))
    }
}

/// Runs one parsed command line.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = config_for(&cli)?;
    match cli.command {
        Command::Priors { out } => {
            let anchors = generate_anchors(&cfg.anchors).map_err(fail)?;
            write_out(out.as_deref(), &anchors.to_csv())
        }
        Command::Validate { dataset, min_per_class } => {
            let loaded = load_dataset_dir(&dataset).map_err(|e| fail(format!("{}: {e}", dataset.display())))?;
            let mut findings = loaded.findings.clone();
            findings.extend(scarecrow_core::dataset::validate_dataset(
                &loaded.dataset,
                min_per_class.unwrap_or(cfg.min_images_per_class),
            ));
            let mut out = String::new();
            for f in &findings {
                out.push_str(&format!("{f}\n"));
            }
            write_out(None, &out)?;
            if has_errors(&findings) {
                let n = findings
                    .iter()
                    .filter(|f| f.level == scarecrow_core::dataset::Level::Error)
                    .count();
                return Err(fail(format!("{} has {n} error(s)", dataset.display())));
            }
            let s = stats(&loaded.dataset);
            log::info!("{} images, objects per class {:?}", loaded.dataset.len(), s.counts);
            Ok(())
        }
        Command::Split {
            dataset,
            train_frac,
            seed,
            out,
        } => {
            let spec = SplitSpec::new(train_frac, seed).map_err(CliError::Usage)?;
            let loaded = load_dataset_dir(&dataset).map_err(|e| fail(format!("{}: {e}", dataset.display())))?;
            if has_errors(&loaded.findings) {
                return Err(fail(format!(
                    "{}: fix annotation errors first (run validate)",
                    dataset.display()
                )));
            }
            let (train, val) = split(&loaded.dataset, spec);
            fs::create_dir_all(&out).map_err(|e| fail(format!("{}: {e}", out.display())))?;
            for (name, part) in [("train.txt", &train), ("val.txt", &val)] {
                let list: String = part.images().iter().map(|i| format!("{}\n", i.filename)).collect();
                write_out(Some(&out.join(name)), &list)?;
            }
            println!("train={} val={}", train.len(), val.len());
            Ok(())
        }
        Command::Detect {
            image,
            detector,
            frame,
            score,
        } => {
            let score = score.unwrap_or(cfg.score_threshold);
            let det = build_detector(&cfg, &detector, score)?;
            let bytes = fs::read(&image).map_err(|e| fail(format!("{}: {e}", image.display())))?;
            let img = read_ppm(&bytes).map_err(|e| fail(format!("{}: {e}", image.display())))?;
            let mut out = String::new();
            for d in det
                .detect(frame, &img)
                .map_err(fail)?
                .into_iter()
                .filter(|d| d.score >= score)
            {
                out.push_str(&serde_json::to_string(&d).map_err(fail)?);
                out.push('\n');
            }
            write_out(None, &out)
        }
        Command::Eval {
            dataset,
            steps,
            iou,
            score,
            detector,
            pr_csv,
            log,
        } => {
            let hc = HarnessConfig {
                steps,
                iou_threshold: iou.unwrap_or(cfg.iou_threshold),
                score_threshold: score.unwrap_or(cfg.score_threshold),
            };
            let det = build_detector(&cfg, &detector, hc.score_threshold)?;
            let loaded = load_dataset_dir(&dataset).map_err(|e| fail(format!("{}: {e}", dataset.display())))?;
            for f in &loaded.findings {
                log::warn!("{f}");
            }
            let samples = samples_from_dataset(&loaded, det.needs_pixels()).map_err(fail)?;
            let report = run_harness(&hc, &samples, det.as_ref()).map_err(fail)?;
            if let Some(p) = pr_csv {
                write_out(Some(&p), &pr_curves_csv(&pr_curves(&report.outcomes)))?;
            }
            if let Some(p) = log {
                let text: String = report.log.iter().map(|r| format!("{r}\n")).collect();
                write_out(Some(&p), &text)?;
            }
            println!("{}", report.metrics);
            print!("{}", report.metrics.confusion);
            Ok(())
        }
        Command::Monitor {
            source,
            policy,
            sink,
            fps,
            log,
            detector,
            no_realtime,
        } => {
            let fps = fps.unwrap_or(cfg.fps);
            if !(fps > 0.0 && fps.is_finite()) {
                return Err(CliError::Usage(format!("--fps must be positive, got {fps}")));
            }
            let mut cfg = cfg;
            if let Some(p) = policy {
                cfg.policy = Some(PolicySource::Path(p));
            }
            let policy = cfg.policy().map_err(fail)?;
            let det = build_detector(&cfg, &detector, policy.score_threshold)?;
            let interval_ms = (1000.0 / fps).round() as u64;
            let frames = FrameSource::open(&source, interval_ms).map_err(|e| fail(format!("{}: {e}", source.display())))?;
            let sink = make_sink(&sink, &cfg.spool)?;
            let log_file = fs::File::create(&log).map_err(|e| fail(format!("{}: {e}", log.display())))?;

            let stop = Arc::new(AtomicBool::new(false));
            let flag = stop.clone();
            if let Err(e) = ctrlc::set_handler(move || flag.store(true, Ordering::SeqCst)) {
                log::warn!("cannot install interrupt handler: {e}");
            }
            let pc = PipelineConfig {
                policy,
                realtime: !no_realtime,
                ..Default::default()
            };
            let report =
                run_pipeline(&pc, frames, det.as_ref(), sink, Box::new(io::BufWriter::new(log_file)), &stop).map_err(fail)?;
            eprintln!(
                "frames={} processed={} dropped={} errors={} opened={} closed={} commands={} alerts_delivered={} alerts_spooled={}{}",
                report.frames_ingested,
                report.processed.len(),
                report.frames_dropped,
                report.frame_errors,
                report.events_opened,
                report.events_closed,
                report.commands,
                report.alerts_delivered,
                report.alerts_spooled,
                if report.interrupted { " interrupted" } else { "" }
            );
            Ok(())
        }
        Command::Bench { frames, size, weights } => {
            if frames == 0 {
                return Err(CliError::Usage("--frames must be at least 1".into()));
            }
            let net = match weights.or(cfg.weights.clone()) {
                Some(w) => load_weights(&w).map_err(|e| fail(format!("{}: {e}", w.display())))?,
                None => {
                    let boxes = [
                        cfg.anchors.boxes_per_location(0),
                        cfg.anchors.boxes_per_location(1.min(cfg.anchors.num_layers() - 1)),
                    ];
                    synthetic_network(
                        DefaultNetSpec {
                            boxes_per_location: boxes,
                            num_classes: cfg.labels.len(),
                        },
                        0,
                    )
                }
            };
            let model = SsdModel::new(net, cfg.anchors.clone(), cfg.labels.clone()).map_err(fail)?;
            let det = NetDetector::new(model, cfg.variances, cfg.score_threshold, cfg.nms);
            let report = run_bench(
                &BenchConfig {
                    frames,
                    width: size.0,
                    height: size.1,
                    seed: 0,
                },
                &det,
            )
            .map_err(fail)?;
            println!("{report}");
            Ok(())
        }
        Command::Replay { spool, url } => {
            let spool = spool.unwrap_or(cfg.spool);
            let r = replay_spool(&spool, &url).map_err(|e| fail(format!("{}: {e}", spool.display())))?;
            println!("delivered={} remaining={}", r.delivered, r.remaining);
            if r.remaining > 0 {
                return Err(fail(format!("{} alert(s) still undelivered", r.remaining)));
            }
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;
    use scarecrow_core::backbone::WEIGHTS_VERSION;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn version_names_weights_format() {
        assert!(VERSION.contains(&format!("SCRW{WEIGHTS_VERSION}")));
    }

    #[test]
    fn size_parsing() {
        assert_eq!(parse_size("160x120"), Ok((160, 120)));
        assert!(parse_size("160").is_err());
        assert!(parse_size("0x5").is_err());
    }
}
