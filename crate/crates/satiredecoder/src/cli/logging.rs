//! Minimal leveled logger: human-readable lines at info and above,
//! structured JSON lines at debug.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogLevel {
    Debug,
    #[default]
    Info,
    Warn,
    Error,
}

#[derive(Debug, Clone, Copy)]
pub struct Logger {
    level: LogLevel,
}

impl Logger {
    pub fn new(level: LogLevel) -> Self {
        Self { level }
    }

    fn enabled(&self, level: LogLevel) -> bool {
        level >= self.level
    }

    pub fn debug(&self, event: &str, fields: &[(&str, String)]) {
        if self.enabled(LogLevel::Debug) {
            let mut object = serde_json::Map::new();
            object.insert("event".into(), serde_json::Value::String(event.into()));
            for (k, v) in fields {
                object.insert((*k).into(), serde_json::Value::String(v.clone()));
            }
            eprintln!("{}", serde_json::Value::Object(object));
        }
    }

    pub fn info(&self, message: impl std::fmt::Display) {
        if self.enabled(LogLevel::Info) {
            eprintln!("[info] {message}");
        }
    }

    pub fn warn(&self, message: impl std::fmt::Display) {
        if self.enabled(LogLevel::Warn) {
            eprintln!("[warn] {message}");
        }
    }

    pub fn error(&self, message: impl std::fmt::Display) {
        if self.enabled(LogLevel::Error) {
            eprintln!("[error] {message}");
        }
    }
}
