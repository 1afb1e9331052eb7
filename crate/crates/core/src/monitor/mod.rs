//! The live loop: frames in, threat events, deterrent commands and alerts out.

pub mod alert;
pub mod bench;
pub mod events;
pub mod pipeline;
pub mod policy;
pub mod ppm;
pub mod source;

pub use alert::{replay_spool, AlertSink, Delivery, FileSink, MemorySink, StdoutSink, WebhookSink};
pub use bench::{run_bench, BenchConfig, BenchReport};
pub use events::{DeterrenceCommand, EventStatus, Hysteresis, LogRecord, MonitorEvent, RecordKind, Scheduler};
pub use pipeline::{run_pipeline, DropOldestQueue, PipelineConfig, PipelineReport};
pub use policy::{decide_action, Action, PolicyConfig, Taxonomy, Tier};
pub use ppm::{read_ppm, write_ppm};
pub use source::{Frame, FrameSource};
