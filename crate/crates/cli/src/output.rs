//! Rendering for the two output modes. JSON mode prints exactly one object
//! per line, each tagged with a `record` field naming its type.

use std::io::Write;

use serde::Serialize;
use serde_json::Value;
use thinktank_core::model::{MeetingEvent, MeetingRecord, MeetingStatus, ProjectRecord};

use crate::args::OutputFormat;

pub struct Output {
    format: OutputFormat,
}

impl Output {
    pub fn new(format: OutputFormat) -> Self {
        Self { format }
    }

    pub fn is_json(&self) -> bool {
        self.format == OutputFormat::Json
    }

    /// Prints `value` as a tagged JSON line, or `human()` in human mode.
    pub fn emit<T: Serialize>(&self, kind: &str, value: &T, human: impl FnOnce() -> String) {
        let line = match self.format {
            OutputFormat::Json => json_line(kind, value),
            OutputFormat::Human => human(),
        };
        let mut out = std::io::stdout().lock();
        let _ = writeln!(out, "{line}");
        let _ = out.flush();
    }

    pub fn event(&self, event: &MeetingEvent) {
        self.emit("event", event, || human_event(event));
    }

    pub fn meeting(&self, record: &MeetingRecord) {
        self.emit("meeting", record, || human_meeting(record));
    }

    pub fn project(&self, project: &ProjectRecord) {
        self.emit("project", project, || human_project(project));
    }
}

fn json_line<T: Serialize>(kind: &str, value: &T) -> String {
    let mut value = serde_json::to_value(value).expect("records serialize");
    match &mut value {
        Value::Object(map) => {
            map.insert("record".into(), Value::String(kind.into()));
        }
        other => {
            let inner = other.take();
            *other = serde_json::json!({ "record": kind, "value": inner });
        }
    }
    value.to_string()
}

pub fn human_event(event: &MeetingEvent) -> String {
    let round = if event.round == 0 {
        String::new()
    } else {
        format!("[round {}] ", event.round)
    };
    let content = event.content.trim_end();
    if content.is_empty() {
        format!("{round}{} - {}", event.phase.as_str(), event.speaker)
    } else {
        format!("{round}{} - {}\n{content}\n", event.phase.as_str(), event.speaker)
    }
}

pub fn status_text(status: &MeetingStatus) -> String {
    match status {
        MeetingStatus::Running => "running".into(),
        MeetingStatus::Completed => "completed".into(),
        MeetingStatus::Failed { reason } => format!("failed ({reason})"),
    }
}

pub fn human_meeting(record: &MeetingRecord) -> String {
    let c = &record.config;
    format!(
        "{}  {}  {:?} meeting, {} round(s), participants: {}",
        record.id,
        status_text(&record.status),
        c.kind,
        c.rounds,
        c.participants.join(", ")
    )
}

pub fn human_project(p: &ProjectRecord) -> String {
    let mut s = format!("{}  {}\n", p.id, p.title);
    if !p.description.is_empty() {
        s += &format!("  {}\n", p.description);
    }
    for o in &p.objectives {
        s += &format!("  objective: {o}\n");
    }
    for e in &p.experts {
        let kb = e.knowledge_base_id.as_ref().map_or("no knowledge base".to_owned(), |k| k.to_string());
        let warm = if e.warmup_done { ", warmed up" } else { "" };
        s += &format!("  expert {} ({}): {}{warm}\n", e.name, e.id, kb);
    }
    s += &format!("  documents: {}, meetings: {}", p.corpus.len(), p.meetings.len());
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_lines_are_tagged_single_lines() {
        let line = json_line("thing", &serde_json::json!({"a": "x\ny"}));
        assert!(!line.contains('\n'));
        let v: Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["record"], "thing");
        assert_eq!(v["a"], "x\ny");
        let wrapped: Value = serde_json::from_str(&json_line("n", &3)).unwrap();
        assert_eq!(wrapped["value"], 3);
    }
}
