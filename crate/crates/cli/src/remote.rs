//! Client for the HTTP service, including the live event stream.

use std::io::{BufRead, BufReader};
use std::time::{Duration, Instant};

use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};
use thinktank_core::llm::BackendStatus;
use thinktank_core::model::{
    AgentProfile, Media, MeetingConfig, MeetingEvent, MeetingId, MeetingMinutes, MeetingRecord, ProjectId,
    ProjectRecord,
};
use ureq::http::Response;
use ureq::Body;

use crate::backend::{failed, Backend, IngestSummary, OnEvent};
use crate::error::{CliError, CliResult, EXIT_BACKEND, EXIT_FAILURE};

/// Reconnects allowed in a row without receiving a new event.
const MAX_STALLED_RECONNECTS: u32 = 10;
const SETTLE_TIMEOUT: Duration = Duration::from_secs(10);

pub struct Remote {
    base: String,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct ErrorBody {
    error: String,
    message: String,
    #[serde(default)]
    violations: Vec<ViolationBody>,
}

#[derive(Deserialize)]
struct ViolationBody {
    field: String,
    message: String,
}

#[derive(Deserialize)]
struct Started {
    meeting_id: MeetingId,
}

#[derive(Deserialize)]
struct Health {
    backend: BackendStatus,
}

enum Frame {
    Event(MeetingEvent),
    Resume(u64),
}

impl Remote {
    pub fn new(base: &str) -> Self {
        let agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
        Self {
            base: base.trim_end_matches('/').to_owned(),
            agent,
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn unreachable(&self, err: ureq::Error) -> CliError {
        CliError::new(EXIT_BACKEND, format!("cannot reach service at {}: {err}", self.base))
    }

    /// Passes 2xx responses through and turns the rest into errors.
    fn check(&self, resp: Result<Response<Body>, ureq::Error>) -> CliResult<Response<Body>> {
        let mut resp = resp.map_err(|e| self.unreachable(e))?;
        let status = resp.status().as_u16();
        if (200..300).contains(&status) {
            return Ok(resp);
        }
        let text = resp.body_mut().read_to_string().unwrap_or_default();
        Err(match serde_json::from_str::<ErrorBody>(&text) {
            Ok(body) => CliError {
                code: CliError::code_for_kind(&body.error),
                message: if body.violations.is_empty() {
                    body.message
                } else {
                    "validation failed".into()
                },
                details: body.violations.into_iter().map(|v| format!("{}: {}", v.field, v.message)).collect(),
            },
            Err(_) => CliError::new(EXIT_FAILURE, format!("service answered {status}: {text}")),
        })
    }

    fn get<T: DeserializeOwned>(&self, path: &str) -> CliResult<T> {
        let mut resp = self.check(self.agent.get(&self.url(path)).call())?;
        resp.body_mut().read_json().map_err(|e| self.bad_reply(e))
    }

    fn post<T: DeserializeOwned>(&self, path: &str, body: &Value) -> CliResult<T> {
        let mut resp = self.check(self.agent.post(&self.url(path)).send_json(body))?;
        resp.body_mut().read_json().map_err(|e| self.bad_reply(e))
    }

    fn bad_reply(&self, err: ureq::Error) -> CliError {
        CliError::new(EXIT_FAILURE, format!("unexpected reply from {}: {err}", self.base))
    }

    /// Streams the meeting's events until its terminal event, reconnecting
    /// from the next expected seq whenever the service asks for a resume or
    /// the connection drops.
    fn follow(&self, id: &MeetingId, on_event: OnEvent) -> CliResult<MeetingRecord> {
        let mut next = 1;
        let mut stalled = 0;
        loop {
            let before = next;
            let path = format!("/meetings/{id}/events");
            let resp = self.check(
                self.agent
                    .get(&self.url(&path))
                    .query("from_seq", next.to_string())
                    .call(),
            )?;
            let mut reader = BufReader::new(resp.into_body().into_reader());
            let mut finished = false;
            while let Some(frame) = read_frame(&mut reader)? {
                match frame {
                    Frame::Event(event) => {
                        if event.seq < next {
                            continue;
                        }
                        next = event.seq + 1;
                        on_event(&event);
                        if event.phase.is_terminal() {
                            finished = true;
                            break;
                        }
                    }
                    Frame::Resume(from) => {
                        next = next.min(from.max(1));
                        break;
                    }
                }
            }
            if finished {
                return self.settled(id);
            }
            stalled = if next > before { 0 } else { stalled + 1 };
            if stalled > MAX_STALLED_RECONNECTS {
                return Err(CliError::new(EXIT_BACKEND, format!("event stream for {id} keeps closing early")));
            }
        }
    }

    /// The record is saved just after the terminal event goes out, so it
    /// may briefly still read as running.
    fn settled(&self, id: &MeetingId) -> CliResult<MeetingRecord> {
        let deadline = Instant::now() + SETTLE_TIMEOUT;
        loop {
            let record = self.meeting(id)?;
            if !record.status.is_running() || Instant::now() >= deadline {
                return Ok(record);
            }
            std::thread::sleep(Duration::from_millis(20));
        }
    }

    fn finish(&self, started: Started, on_event: OnEvent) -> CliResult<MeetingRecord> {
        let record = self.follow(&started.meeting_id, on_event)?;
        match failed(&record) {
            Some(err) => Err(err),
            None => Ok(record),
        }
    }
}

/// Reads one server-sent event; `None` at end of stream.
fn read_frame(reader: &mut impl BufRead) -> CliResult<Option<Frame>> {
    let mut name = String::new();
    let mut data = String::new();
    let mut line = String::new();
    loop {
        line.clear();
        let n = reader
            .read_line(&mut line)
            .map_err(|e| CliError::new(EXIT_BACKEND, format!("event stream interrupted: {e}")))?;
        if n == 0 {
            return Ok(None);
        }
        let line = line.trim_end_matches(['\r', '\n']);
        if line.is_empty() {
            if data.is_empty() {
                name.clear();
                continue;
            }
            let frame = if name == "resume" {
                let v: Value = parse_data(&data)?;
                Frame::Resume(v["from_seq"].as_u64().unwrap_or(1))
            } else {
                Frame::Event(parse_data(&data)?)
            };
            return Ok(Some(frame));
        }
        if line.starts_with(':') {
            continue;
        }
        let (field, value) = line.split_once(':').unwrap_or((line, ""));
        let value = value.strip_prefix(' ').unwrap_or(value);
        match field {
            "event" => name = value.to_owned(),
            "data" => {
                if !data.is_empty() {
                    data.push('\n');
                }
                data.push_str(value);
            }
            _ => {}
        }
    }
}

fn parse_data<T: DeserializeOwned>(data: &str) -> CliResult<T> {
    serde_json::from_str(data).map_err(|e| CliError::new(EXIT_FAILURE, format!("malformed stream frame: {e}")))
}

impl Backend for Remote {
    fn create_project(&self, title: &str, description: &str, objectives: Vec<String>) -> CliResult<ProjectRecord> {
        self.post(
            "/projects",
            &json!({"title": title, "description": description, "objectives": objectives}),
        )
    }

    fn projects(&self) -> CliResult<Vec<ProjectRecord>> {
        self.get("/projects")
    }

    fn project(&self, id: &ProjectId) -> CliResult<ProjectRecord> {
        self.get(&format!("/projects/{id}"))
    }

    fn add_expert(&self, project: &ProjectId, name: &str, persona: &str) -> CliResult<AgentProfile> {
        self.post(
            &format!("/projects/{project}/experts"),
            &json!({"name": name, "persona": persona}),
        )
    }

    fn ingest(
        &self,
        project: &ProjectId,
        expert: &str,
        source: &str,
        content: &str,
        media: Media,
    ) -> CliResult<IngestSummary> {
        let media = serde_json::to_value(media).expect("media serializes");
        self.post(
            &format!("/projects/{project}/documents"),
            &json!({"expert": expert, "source_name": source, "media": media, "content": content}),
        )
    }

    fn run_meeting(&self, config: MeetingConfig, on_event: OnEvent) -> CliResult<MeetingRecord> {
        let started = self.post(
            &format!("/projects/{}/meetings", config.project_id),
            &json!({
                "agenda": config.agenda,
                "rounds": config.rounds,
                "participants": config.participants,
                "retrieval_k": config.retrieval_k,
                "context_budget": config.context_budget,
            }),
        )?;
        self.finish(started, on_event)
    }

    fn run_warmup(&self, project: &ProjectId, expert: &str, on_event: OnEvent) -> CliResult<MeetingRecord> {
        let profile = self
            .project(project)?
            .expert(expert)
            .cloned()
            .ok_or_else(|| CliError::from(thinktank_core::Error::not_found("expert", expert)))?;
        let started = self.post(&format!("/experts/{}/warmup", profile.id), &json!({}))?;
        self.finish(started, on_event)
    }

    fn meetings(&self, project: &ProjectId) -> CliResult<Vec<MeetingRecord>> {
        self.get(&format!("/projects/{project}/meetings"))
    }

    fn meeting(&self, id: &MeetingId) -> CliResult<MeetingRecord> {
        self.get(&format!("/meetings/{id}"))
    }

    fn minutes(&self, id: &MeetingId) -> CliResult<MeetingMinutes> {
        self.get(&format!("/meetings/{id}/minutes"))
    }

    fn export_minutes(&self, id: &MeetingId) -> CliResult<String> {
        let path = format!("/meetings/{id}/minutes");
        let mut resp = self.check(self.agent.get(&self.url(&path)).query("format", "markdown").call())?;
        resp.body_mut().read_to_string().map_err(|e| self.bad_reply(e))
    }

    fn health(&self) -> CliResult<BackendStatus> {
        Ok(self.get::<Health>("/health")?.backend)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frames_are_parsed_across_comments_and_multiline_data() {
        let text = ": keep-alive\n\nevent: resume\ndata: {\"from_seq\": 7}\n\nid: 1\nevent: guidance\ndata: {\"seq\":1,\ndata: \"x\":2}\n\n";
        let mut reader = BufReader::new(text.as_bytes());
        assert!(matches!(read_frame(&mut reader).unwrap(), Some(Frame::Resume(7))));
        // Not a meeting event, so it is a malformed frame.
        assert!(read_frame(&mut reader).is_err());
        assert!(read_frame(&mut reader).unwrap().is_none());
    }
}
