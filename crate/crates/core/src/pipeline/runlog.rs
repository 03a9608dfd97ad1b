use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

/// Timestamps for log events and elapsed time for deadlines.
pub trait Clock: Send + Sync {
    /// Timestamp for the next event.
    fn stamp(&self) -> String;
    fn elapsed_ms(&self) -> u64;
}

pub struct WallClock {
    start: Instant,
}

impl WallClock {
    pub fn new() -> Self {
        Self { start: Instant::now() }
    }
}

impl Default for WallClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for WallClock {
    fn stamp(&self) -> String {
        Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
    }

    fn elapsed_ms(&self) -> u64 {
        self.start.elapsed().as_millis() as u64
    }
}

/// Advances one millisecond per stamped event, starting at the Unix epoch.
/// Logs produced under it depend only on the sequence of events.
#[derive(Default)]
pub struct LogicalClock {
    ticks: AtomicU64,
}

impl LogicalClock {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Clock for LogicalClock {
    fn stamp(&self) -> String {
        let t = self.ticks.fetch_add(1, Ordering::SeqCst);
        let at = DateTime::<Utc>::from_timestamp_millis(t as i64).expect("small tick count");
        at.to_rfc3339_opts(SecondsFormat::Millis, true)
    }

    fn elapsed_ms(&self) -> u64 {
        self.ticks.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ClockKind {
    #[default]
    Wall,
    Logical,
}

impl ClockKind {
    pub fn make(self) -> Box<dyn Clock> {
        match self {
            ClockKind::Wall => Box::new(WallClock::new()),
            ClockKind::Logical => Box::new(LogicalClock::new()),
        }
    }
}

/// Line-oriented run log: `EVENT <timestamp> <kind> <json>` lines plus raw
/// lines such as weight trajectories. Lines are kept in memory and, when a
/// file sink is attached, written through as they arrive.
pub struct RunLog {
    clock: Box<dyn Clock>,
    sink: Option<BufWriter<File>>,
    lines: Vec<String>,
    write_error: Option<io::Error>,
}

impl RunLog {
    pub fn in_memory(clock: Box<dyn Clock>) -> Self {
        Self {
            clock,
            sink: None,
            lines: Vec::new(),
            write_error: None,
        }
    }

    pub fn to_file(path: &Path, clock: Box<dyn Clock>) -> io::Result<Self> {
        let mut log = Self::in_memory(clock);
        log.sink = Some(BufWriter::new(File::create(path)?));
        Ok(log)
    }

    pub fn clock(&self) -> &dyn Clock {
        self.clock.as_ref()
    }

    pub fn event<T: Serialize + ?Sized>(&mut self, kind: &str, payload: &T) {
        let json = serde_json::to_string(payload).expect("log payload serializes");
        let line = format!("EVENT {} {kind} {json}", self.clock.stamp());
        self.raw(line);
    }

    pub fn raw(&mut self, line: String) {
        if let Some(sink) = &mut self.sink {
            if let Err(e) = writeln!(sink, "{line}") {
                self.write_error.get_or_insert(e);
            }
        }
        self.lines.push(line);
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    pub fn events_of<'a>(&'a self, kind: &'a str) -> impl Iterator<Item = serde_json::Value> + 'a {
        self.lines.iter().filter_map(move |l| {
            let mut parts = l.splitn(4, ' ');
            (parts.next() == Some("EVENT") && parts.nth(1) == Some(kind))
                .then(|| parts.next())
                .flatten()
                .and_then(|json| serde_json::from_str(json).ok())
        })
    }

    /// Flush the file sink, reporting the first write error seen.
    pub fn finish(&mut self) -> io::Result<()> {
        if let Some(e) = self.write_error.take() {
            return Err(e);
        }
        match &mut self.sink {
            Some(sink) => sink.flush(),
            None => Ok(()),
        }
    }
}
