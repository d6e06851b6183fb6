//! Orchestration of projects, experts, documents and meetings on top of the
//! store and an LLM gateway.

mod meeting;
pub mod prompts;
pub mod synthesis;

use std::sync::Arc;
use std::time::Duration;

use crate::error::{Error, Result};
use crate::ids::IdGenerator;
use crate::knowledge::{ChunkParams, Ingested};
use crate::llm::LlmGateway;
use crate::memory::LongTermNote;
use crate::model::{
    validate_meeting_config, AgentProfile, KnowledgeBaseId, Media, MeetingConfig, MeetingEvent, MeetingId,
    MeetingKind, MeetingMinutes, MeetingRecord, MeetingStatus, ProjectId, ProjectRecord,
};
use crate::persistence::Store;

pub use meeting::PreparedMeeting;

/// Receives every meeting event right after it has been persisted.
pub trait EventSink: Send + Sync {
    fn publish(&self, event: &MeetingEvent);
}

pub struct NullSink;

impl EventSink for NullSink {
    fn publish(&self, _event: &MeetingEvent) {}
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineSettings {
    pub model: String,
    pub coordinator_temperature: f32,
    pub critic_temperature: f32,
    pub expert_temperature: f32,
    pub max_output_chars: usize,
    pub request_timeout: Duration,
    /// Chunks per warm-up batch.
    pub warmup_batch: usize,
    /// Parameters for newly created knowledge bases.
    pub chunk_params: ChunkParams,
}

impl Default for EngineSettings {
    fn default() -> Self {
        Self {
            model: "llama3.1".into(),
            coordinator_temperature: 0.2,
            critic_temperature: 0.2,
            expert_temperature: 0.7,
            max_output_chars: 8_000,
            request_timeout: Duration::from_secs(120),
            warmup_batch: 10,
            chunk_params: ChunkParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WarmupReport {
    pub minutes: MeetingMinutes,
    pub notes: Vec<LongTermNote>,
}

#[derive(Clone)]
pub struct Engine {
    store: Arc<Store>,
    gateway: Arc<dyn LlmGateway>,
    ids: Arc<IdGenerator>,
    sink: Arc<dyn EventSink>,
    settings: Arc<EngineSettings>,
}

impl Engine {
    pub fn new(store: Arc<Store>, gateway: Arc<dyn LlmGateway>, ids: Arc<IdGenerator>) -> Self {
        Self {
            store,
            gateway,
            ids,
            sink: Arc::new(NullSink),
            settings: Arc::new(EngineSettings::default()),
        }
    }

    pub fn with_settings(mut self, settings: EngineSettings) -> Self {
        self.settings = Arc::new(settings);
        self
    }

    pub fn with_sink(mut self, sink: Arc<dyn EventSink>) -> Self {
        self.sink = sink;
        self
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn gateway(&self) -> &dyn LlmGateway {
        &*self.gateway
    }

    pub fn ids(&self) -> &IdGenerator {
        &self.ids
    }

    pub fn settings(&self) -> &EngineSettings {
        &self.settings
    }

    // -- projects ---------------------------------------------------------

    pub fn create_project(&self, title: &str, description: &str, objectives: Vec<String>) -> Result<ProjectRecord> {
        let project = ProjectRecord::create(&self.ids, title, description, objectives)?;
        self.store.save_project(&project)?;
        Ok(project)
    }

    pub fn project(&self, id: &ProjectId) -> Result<ProjectRecord> {
        self.store.load_project(id)
    }

    pub fn projects(&self) -> Result<Vec<ProjectRecord>> {
        self.store.list_projects()
    }

    pub fn add_expert(&self, project: &ProjectId, name: &str, persona: &str) -> Result<AgentProfile> {
        self.store
            .update_project(project, |p| p.add_expert(&self.ids, name, persona).cloned())
    }

    /// Ingests a document into the expert's knowledge base, creating and
    /// binding one on first use, and records it in the project corpus.
    pub fn ingest_document(
        &self,
        project: &ProjectId,
        expert: &str,
        source_name: &str,
        content: &str,
        media: Media,
    ) -> Result<Ingested> {
        self.store.update_project(project, |p| {
            let profile = p
                .expert(expert)
                .ok_or_else(|| Error::not_found("expert", expert))?;
            let kb = match &profile.knowledge_base_id {
                Some(id) => self.store.knowledge_base(id)?,
                None => {
                    let id = KnowledgeBaseId(self.ids.next("kb"));
                    self.store
                        .create_knowledge_base(&p.id, id, self.settings.chunk_params)?
                }
            };
            let ingested = kb.ingest_document(&*self.gateway, &self.ids, source_name, content, media)?;
            let profile = p.expert_mut(expert).expect("expert checked above");
            profile.knowledge_base_id = Some(kb.id());
            p.corpus.push(ingested.document.clone());
            Ok(ingested)
        })
    }

    // -- meetings ---------------------------------------------------------

    /// Validates `config` and claims the project's meeting slot. Nothing is
    /// persisted when this fails.
    pub fn prepare_meeting(&self, config: MeetingConfig) -> Result<PreparedMeeting> {
        let project = self.store.load_project(&config.project_id)?;
        validate_meeting_config(&config, &project).map_err(Error::Validation)?;
        for name in &config.participants {
            let expert = project.expert(name).expect("participants validated");
            match (&expert.knowledge_base_id, config.kind) {
                (Some(kb), MeetingKind::Team) => {
                    self.store.knowledge_base(kb)?;
                }
                (Some(kb), MeetingKind::Warmup) => {
                    if self.store.knowledge_base(kb)?.chunk_count() == 0 {
                        return Err(Error::Precondition(format!("knowledge base of {name} is empty")));
                    }
                }
                (None, MeetingKind::Team) => {}
                (None, MeetingKind::Warmup) => {
                    return Err(Error::Precondition(format!("{name} has no knowledge base to warm up on")));
                }
            }
        }
        let slot = self
            .store
            .try_lock_meeting_slot(&project.id)?
            .ok_or_else(|| Error::Conflict(format!("project {} already has a meeting in progress", project.id)))?;

        let record = MeetingRecord {
            id: MeetingId(self.ids.next("mtg")),
            config,
            status: MeetingStatus::Running,
            created_at: self.ids.now(),
            finished_at: None,
        };
        self.store.create_meeting(&record)?;
        let project = self.store.update_project(&project.id, |p| {
            p.meetings.push(record.id.clone());
            Ok(p.clone())
        })?;
        let log = self.store.open_event_log(&record.id)?;
        Ok(PreparedMeeting::new(self.clone(), record, project, log, slot))
    }

    pub fn run_meeting(&self, config: MeetingConfig) -> Result<MeetingMinutes> {
        self.prepare_meeting(config)?.run()
    }

    pub fn prepare_warmup(&self, project: &ProjectId, expert: &str) -> Result<PreparedMeeting> {
        self.prepare_meeting(MeetingConfig::warmup(project.clone(), expert))
    }

    pub fn run_warmup(&self, project: &ProjectId, expert: &str) -> Result<WarmupReport> {
        self.prepare_warmup(project, expert)?.run_warmup()
    }

    pub fn meeting(&self, id: &MeetingId) -> Result<MeetingRecord> {
        self.store.load_meeting(id)
    }

    pub fn events(&self, id: &MeetingId, from_seq: u64) -> Result<Vec<MeetingEvent>> {
        self.store.read_events(id, from_seq)
    }

    pub fn minutes(&self, id: &MeetingId) -> Result<MeetingMinutes> {
        self.store.load_minutes(id)
    }

    pub fn export_minutes(&self, id: &MeetingId) -> Result<String> {
        self.store.export_minutes(id)
    }
}
