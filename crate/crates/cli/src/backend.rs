//! The operations every command needs, served either in-process or by a
//! running service.

use std::sync::mpsc;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thinktank_core::llm::{BackendStatus, LlmGateway, OllamaConfig, OllamaGateway, Script, ScriptedGateway};
use thinktank_core::model::{
    AgentProfile, DocumentRef, Media, MeetingConfig, MeetingEvent, MeetingId, MeetingMinutes, MeetingRecord,
    MeetingStatus, ProjectId, ProjectRecord,
};
use thinktank_core::knowledge::ChunkParams;
use thinktank_core::{Engine, EngineSettings, EventSink, IdGenerator, Store, SystemClock};

use crate::args::{BackendKind, Global};
use crate::error::{CliError, CliResult, EXIT_BACKEND};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestSummary {
    pub document: DocumentRef,
    pub chunk_count: usize,
}

pub type OnEvent<'a> = &'a mut dyn FnMut(&MeetingEvent);

pub trait Backend {
    fn create_project(&self, title: &str, description: &str, objectives: Vec<String>) -> CliResult<ProjectRecord>;
    fn projects(&self) -> CliResult<Vec<ProjectRecord>>;
    fn project(&self, id: &ProjectId) -> CliResult<ProjectRecord>;
    fn add_expert(&self, project: &ProjectId, name: &str, persona: &str) -> CliResult<AgentProfile>;
    fn ingest(&self, project: &ProjectId, expert: &str, source: &str, content: &str, media: Media)
        -> CliResult<IngestSummary>;
    /// Runs the meeting to its end, passing each event to `on_event` as it
    /// happens. A meeting that ends in failure is an error.
    fn run_meeting(&self, config: MeetingConfig, on_event: OnEvent) -> CliResult<MeetingRecord>;
    fn run_warmup(&self, project: &ProjectId, expert: &str, on_event: OnEvent) -> CliResult<MeetingRecord>;
    fn meetings(&self, project: &ProjectId) -> CliResult<Vec<MeetingRecord>>;
    fn meeting(&self, id: &MeetingId) -> CliResult<MeetingRecord>;
    fn minutes(&self, id: &MeetingId) -> CliResult<MeetingMinutes>;
    fn export_minutes(&self, id: &MeetingId) -> CliResult<String>;
    fn health(&self) -> CliResult<BackendStatus>;
}

/// Builds the LLM gateway selected by the global flags.
pub fn gateway(global: &Global) -> CliResult<Arc<dyn LlmGateway>> {
    Ok(match global.backend {
        BackendKind::Ollama => Arc::new(OllamaGateway::new(OllamaConfig::new(&global.llm_url, &global.model))),
        BackendKind::Scripted => {
            let script = match &global.script {
                Some(path) => Script::load(path).map_err(|e| CliError::new(EXIT_BACKEND, e.to_string()))?,
                None => Script::standard(),
            };
            Arc::new(ScriptedGateway::new(script))
        }
    })
}

/// Opens the data directory and builds an engine over it.
pub fn engine(global: &Global) -> CliResult<Engine> {
    let store = Arc::new(Store::open(&global.data_dir)?);
    let ids = Arc::new(IdGenerator::new(Arc::new(SystemClock)));
    let settings = EngineSettings {
        model: global.model.clone(),
        chunk_params: ChunkParams::new(global.chunk_size, global.chunk_overlap)?,
        ..EngineSettings::default()
    };
    Ok(Engine::new(store, gateway(global)?, ids).with_settings(settings))
}

pub fn failed(record: &MeetingRecord) -> Option<CliError> {
    match &record.status {
        MeetingStatus::Failed { reason } => Some(CliError::new(
            EXIT_BACKEND,
            format!("meeting {} failed: {reason}", record.id),
        )),
        _ => None,
    }
}

pub struct Embedded {
    engine: Engine,
}

struct ChannelSink(mpsc::Sender<MeetingEvent>);

impl EventSink for ChannelSink {
    fn publish(&self, event: &MeetingEvent) {
        let _ = self.0.send(event.clone());
    }
}

impl Embedded {
    pub fn open(global: &Global) -> CliResult<Self> {
        let engine = engine(global)?;
        // Meetings left running by a process that died are settled first so
        // their minutes become readable. Live ones hold their slot and are skipped.
        engine.store().fail_interrupted_meetings(engine.ids().now())?;
        Ok(Self { engine })
    }

    /// Runs `prepare` and the meeting on a worker thread while this thread
    /// renders events.
    fn drive(
        &self,
        on_event: OnEvent,
        prepare: impl FnOnce(&Engine) -> thinktank_core::Result<thinktank_core::PreparedMeeting> + Send,
    ) -> CliResult<MeetingRecord> {
        let (tx, rx) = mpsc::channel();
        let engine = self.engine.clone().with_sink(Arc::new(ChannelSink(tx)));
        let outcome = std::thread::scope(|scope| {
            let worker = scope.spawn(move || {
                let prepared = prepare(&engine)?;
                let id = prepared.record().id.clone();
                let result = prepared.run().map(|_| ());
                Ok::<_, thinktank_core::Error>((id, result))
            });
            for event in rx {
                on_event(&event);
            }
            worker.join().expect("meeting thread panicked")
        });
        let (id, result) = outcome?;
        let record = self.engine.meeting(&id)?;
        match result {
            Ok(()) => Ok(record),
            Err(err) => {
                let mut cli = CliError::from(err);
                cli.message = format!("meeting {id} failed: {}", cli.message);
                Err(cli)
            }
        }
    }
}

impl Backend for Embedded {
    fn create_project(&self, title: &str, description: &str, objectives: Vec<String>) -> CliResult<ProjectRecord> {
        Ok(self.engine.create_project(title, description, objectives)?)
    }

    fn projects(&self) -> CliResult<Vec<ProjectRecord>> {
        Ok(self.engine.projects()?)
    }

    fn project(&self, id: &ProjectId) -> CliResult<ProjectRecord> {
        Ok(self.engine.project(id)?)
    }

    fn add_expert(&self, project: &ProjectId, name: &str, persona: &str) -> CliResult<AgentProfile> {
        Ok(self.engine.add_expert(project, name, persona)?)
    }

    fn ingest(
        &self,
        project: &ProjectId,
        expert: &str,
        source: &str,
        content: &str,
        media: Media,
    ) -> CliResult<IngestSummary> {
        let out = self.engine.ingest_document(project, expert, source, content, media)?;
        Ok(IngestSummary {
            document: out.document,
            chunk_count: out.chunk_count,
        })
    }

    fn run_meeting(&self, config: MeetingConfig, on_event: OnEvent) -> CliResult<MeetingRecord> {
        self.drive(on_event, move |e| e.prepare_meeting(config))
    }

    fn run_warmup(&self, project: &ProjectId, expert: &str, on_event: OnEvent) -> CliResult<MeetingRecord> {
        self.drive(on_event, move |e| e.prepare_warmup(project, expert))
    }

    fn meetings(&self, project: &ProjectId) -> CliResult<Vec<MeetingRecord>> {
        Ok(self.engine.store().list_meetings(project)?)
    }

    fn meeting(&self, id: &MeetingId) -> CliResult<MeetingRecord> {
        Ok(self.engine.meeting(id)?)
    }

    fn minutes(&self, id: &MeetingId) -> CliResult<MeetingMinutes> {
        Ok(self.engine.minutes(id)?)
    }

    fn export_minutes(&self, id: &MeetingId) -> CliResult<String> {
        Ok(self.engine.export_minutes(id)?)
    }

    fn health(&self) -> CliResult<BackendStatus> {
        Ok(self.engine.gateway().health_check())
    }
}
