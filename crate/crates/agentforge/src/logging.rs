//! Structured event logging: one JSON record per line (timestamp, level,
//! module, message) appended to a file under the workspace directory, with a
//! human-readable mirror on stderr.
//!
//! The logger is installed process-wide on first use; calling
//! [`init_logging`] again just redirects the sink, so tests and embedding
//! applications can re-point it freely.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use crate::config::LogLevel;

/// File the JSON event stream is appended to, under the workspace dir.
pub const LOG_FILE_NAME: &str = "events.jsonl";

struct Sink {
    file: File,
    mirror_to_stderr: bool,
}

struct JsonLogger {
    sink: Mutex<Option<Sink>>,
}

static LOGGER: JsonLogger = JsonLogger { sink: Mutex::new(None) };

impl log::Log for JsonLogger {
    fn enabled(&self, metadata: &log::Metadata) -> bool {
        metadata.level() <= log::max_level()
    }

    fn log(&self, record: &log::Record) {
        if !self.enabled(record.metadata()) {
            return;
        }
        let event = serde_json::json!({
            "ts": chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Micros, true),
            "level": record.level().to_string().to_lowercase(),
            "module": record.target(),
            "message": record.args().to_string(),
        });
        let mut guard = self.sink.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(sink) = guard.as_mut() {
            let _ = writeln!(sink.file, "{event}");
            if sink.mirror_to_stderr {
                eprintln!("[{}] {}: {}", record.level(), record.target(), record.args());
            }
        }
    }

    fn flush(&self) {
        let mut guard = self.sink.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(sink) = guard.as_mut() {
            let _ = sink.file.flush();
        }
    }
}

/// Points the global logger at `<workspace_dir>/events.jsonl`, creating the
/// directory if needed, and sets the level floor. Returns the log file path.
pub fn init_logging(workspace_dir: &Path, level: LogLevel) -> std::io::Result<PathBuf> {
    init_logging_with(workspace_dir, level, true)
}

/// As [`init_logging`], with control over the stderr mirror (tests turn it
/// off to keep output clean).
pub fn init_logging_with(
    workspace_dir: &Path,
    level: LogLevel,
    mirror_to_stderr: bool,
) -> std::io::Result<PathBuf> {
    std::fs::create_dir_all(workspace_dir)?;
    let path = workspace_dir.join(LOG_FILE_NAME);
    let file = OpenOptions::new().create(true).append(true).open(&path)?;
    {
        let mut guard = LOGGER.sink.lock().unwrap_or_else(|p| p.into_inner());
        *guard = Some(Sink { file, mirror_to_stderr });
    }
    // Succeeds once; later calls only adjust the sink and level above/below.
    let _ = log::set_logger(&LOGGER);
    log::set_max_level(level.to_filter());
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn events_are_json_lines_with_expected_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = init_logging_with(dir.path(), LogLevel::Debug, false).unwrap();

        log::info!(target: "logging_test", "workflow started id=w1");
        log::debug!(target: "logging_test", "noise at debug");
        log::logger().flush();

        let text = std::fs::read_to_string(&path).unwrap();
        let mine: Vec<serde_json::Value> = text
            .lines()
            .map(|l| serde_json::from_str::<serde_json::Value>(l).expect("every line is JSON"))
            .filter(|v| v["module"] == "logging_test")
            .collect();
        assert_eq!(mine.len(), 2);
        assert_eq!(mine[0]["level"], "info");
        assert_eq!(mine[0]["message"], "workflow started id=w1");
        assert!(mine[0]["ts"].as_str().unwrap().ends_with('Z'));

        // Raising the floor suppresses lower levels.
        log::set_max_level(log::LevelFilter::Warn);
        log::info!(target: "logging_test", "should be filtered");
        log::logger().flush();
        log::set_max_level(log::LevelFilter::Debug);

        let text = std::fs::read_to_string(&path).unwrap();
        assert!(!text.contains("should be filtered"));
    }
}
