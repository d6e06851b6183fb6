//! Domain types shared by every subsystem: projects, agent profiles, meeting
//! configuration, minutes and the meeting event record.

use std::collections::HashSet;
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation};
use crate::ids::IdGenerator;

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

string_id!(ProjectId);
string_id!(MeetingId);
string_id!(ExpertId);
string_id!(
    /// Identifies a knowledge base; unique across the data directory.
    KnowledgeBaseId
);
string_id!(DocId);
string_id!(ChunkId);
string_id!(NoteId);

pub const COORDINATOR_NAME: &str = "Coordinator";
pub const CRITIC_NAME: &str = "Critical Thinker";
pub const SYSTEM_SPEAKER: &str = "system";

const COORDINATOR_PERSONA: &str = "You are the Generalized Coordinator. You lead the meeting the way a \
principal investigator leads a research team: you keep every contribution on the meeting's central \
topic, integrate the experts' findings into one coherent position, resolve disagreements explicitly, \
and decide what the team must examine next.";

const CRITIC_PERSONA: &str = "You are the Critical Thinker. You act as the team's reviewer and quality \
gate. You hold every argument and plan to a high analytical standard and point out concrete weaknesses \
rather than restating what was said.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    Coordinator,
    DomainExpert,
    CriticalThinker,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub id: ExpertId,
    pub name: String,
    pub role: AgentRole,
    pub persona: String,
    #[serde(default)]
    pub knowledge_base_id: Option<KnowledgeBaseId>,
    #[serde(default)]
    pub warmup_done: bool,
}

impl AgentProfile {
    pub fn coordinator() -> Self {
        Self {
            id: ExpertId::from("system-coordinator"),
            name: COORDINATOR_NAME.to_owned(),
            role: AgentRole::Coordinator,
            persona: COORDINATOR_PERSONA.to_owned(),
            knowledge_base_id: None,
            warmup_done: false,
        }
    }

    pub fn critical_thinker() -> Self {
        Self {
            id: ExpertId::from("system-critic"),
            name: CRITIC_NAME.to_owned(),
            role: AgentRole::CriticalThinker,
            persona: CRITIC_PERSONA.to_owned(),
            knowledge_base_id: None,
            warmup_done: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Media {
    PlainText,
    Markdown,
    PdfExtracted,
}

impl std::str::FromStr for Media {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain_text" | "text" | "txt" => Ok(Media::PlainText),
            "markdown" | "md" => Ok(Media::Markdown),
            "pdf_extracted" | "pdf" => Ok(Media::PdfExtracted),
            other => Err(Error::invalid(
                "media",
                format!("unknown media `{other}` (expected plain_text, markdown or pdf_extracted)"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentRef {
    pub doc_id: DocId,
    pub knowledge_base_id: KnowledgeBaseId,
    pub source_name: String,
    pub media: Media,
    pub char_count: usize,
    pub ingested_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectRecord {
    pub id: ProjectId,
    pub title: String,
    pub description: String,
    pub objectives: Vec<String>,
    pub experts: Vec<AgentProfile>,
    pub corpus: Vec<DocumentRef>,
    pub meetings: Vec<MeetingId>,
    pub created_at: DateTime<Utc>,
}

impl ProjectRecord {
    pub fn create(
        ids: &IdGenerator,
        title: &str,
        description: &str,
        objectives: Vec<String>,
    ) -> Result<Self> {
        if title.trim().is_empty() {
            return Err(Error::invalid("title", "must not be empty"));
        }
        Ok(Self {
            id: ProjectId(ids.next("prj")),
            title: title.trim().to_owned(),
            description: description.to_owned(),
            objectives,
            experts: Vec::new(),
            corpus: Vec::new(),
            meetings: Vec::new(),
            created_at: ids.now(),
        })
    }

    /// Appends a domain expert. Names are unique within the project and may
    /// not shadow the system roles.
    pub fn add_expert(&mut self, ids: &IdGenerator, name: &str, persona: &str) -> Result<&AgentProfile> {
        let name = name.trim();
        if name.is_empty() {
            return Err(Error::invalid("name", "must not be empty"));
        }
        if persona.trim().is_empty() {
            return Err(Error::invalid("persona", "must not be empty"));
        }
        if [COORDINATOR_NAME, CRITIC_NAME, SYSTEM_SPEAKER]
            .iter()
            .any(|reserved| reserved.eq_ignore_ascii_case(name))
        {
            return Err(Error::Conflict(format!("`{name}` is a reserved system role name")));
        }
        if self.expert(name).is_some() {
            return Err(Error::Conflict(format!(
                "expert `{name}` already exists in project {}",
                self.id
            )));
        }
        self.experts.push(AgentProfile {
            id: ExpertId(ids.next("exp")),
            name: name.to_owned(),
            role: AgentRole::DomainExpert,
            persona: persona.to_owned(),
            knowledge_base_id: None,
            warmup_done: false,
        });
        Ok(self.experts.last().expect("just pushed"))
    }

    pub fn expert(&self, name: &str) -> Option<&AgentProfile> {
        self.experts.iter().find(|e| e.name == name)
    }

    pub fn expert_mut(&mut self, name: &str) -> Option<&mut AgentProfile> {
        self.experts.iter_mut().find(|e| e.name == name)
    }

    pub fn expert_by_id(&self, id: &ExpertId) -> Option<&AgentProfile> {
        self.experts.iter().find(|e| &e.id == id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeetingKind {
    Team,
    Warmup,
}

pub const DEFAULT_RETRIEVAL_K: usize = 5;
pub const DEFAULT_CONTEXT_BUDGET: usize = 12_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeetingConfig {
    pub project_id: ProjectId,
    pub agenda: String,
    pub rounds: u32,
    pub participants: Vec<String>,
    pub kind: MeetingKind,
    pub retrieval_k: usize,
    /// Per-section prompt budget, in characters.
    pub context_budget: usize,
}

impl MeetingConfig {
    pub fn team(project_id: ProjectId, agenda: impl Into<String>, rounds: u32, participants: Vec<String>) -> Self {
        Self {
            project_id,
            agenda: agenda.into(),
            rounds,
            participants,
            kind: MeetingKind::Team,
            retrieval_k: DEFAULT_RETRIEVAL_K,
            context_budget: DEFAULT_CONTEXT_BUDGET,
        }
    }

    pub fn warmup(project_id: ProjectId, expert: impl Into<String>) -> Self {
        let expert = expert.into();
        Self {
            project_id,
            agenda: format!("Warm-up: {expert} studies their knowledge base"),
            rounds: 1,
            participants: vec![expert],
            kind: MeetingKind::Warmup,
            retrieval_k: DEFAULT_RETRIEVAL_K,
            context_budget: DEFAULT_CONTEXT_BUDGET,
        }
    }
}

/// Returns every violated meeting-config invariant; `Ok` iff there are none.
pub fn validate_meeting_config(config: &MeetingConfig, project: &ProjectRecord) -> Result<(), Vec<Violation>> {
    let mut violations = Vec::new();

    if config.project_id != project.id {
        violations.push(Violation::new(
            "project_id",
            format!("config targets {} but project is {}", config.project_id, project.id),
        ));
    }
    if config.agenda.trim().is_empty() {
        violations.push(Violation::new("agenda", "must not be empty"));
    }
    if config.rounds < 1 {
        violations.push(Violation::new("rounds", "must be at least 1"));
    }
    if config.retrieval_k < 1 {
        violations.push(Violation::new("retrieval_k", "must be at least 1"));
    }
    if config.context_budget < 1 {
        violations.push(Violation::new("context_budget", "must be at least 1"));
    }

    match config.kind {
        MeetingKind::Warmup if config.participants.len() != 1 => violations.push(Violation::new(
            "participants",
            format!(
                "a warm-up meeting takes exactly 1 participant, got {}",
                config.participants.len()
            ),
        )),
        MeetingKind::Team if config.participants.is_empty() => {
            violations.push(Violation::new("participants", "a team meeting needs at least 1 expert"))
        }
        _ => {}
    }

    let mut seen = HashSet::new();
    for name in &config.participants {
        if project.expert(name).is_none() {
            violations.push(Violation::new("participants", format!("unknown expert `{name}`")));
        }
        if !seen.insert(name.as_str()) {
            violations.push(Violation::new("participants", format!("duplicate expert `{name}`")));
        }
    }

    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    MeetingStarted,
    Guidance,
    ExpertTurn,
    Critique,
    Synthesis,
    FinalSummary,
    MeetingFinished,
    MeetingFailed,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::MeetingStarted => "meeting_started",
            Phase::Guidance => "guidance",
            Phase::ExpertTurn => "expert_turn",
            Phase::Critique => "critique",
            Phase::Synthesis => "synthesis",
            Phase::FinalSummary => "final_summary",
            Phase::MeetingFinished => "meeting_finished",
            Phase::MeetingFailed => "meeting_failed",
        }
    }

    /// Phases that carry an agent's contribution (as opposed to bookends).
    pub fn is_content(self) -> bool {
        matches!(
            self,
            Phase::Guidance | Phase::ExpertTurn | Phase::Critique | Phase::Synthesis | Phase::FinalSummary
        )
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::MeetingFinished | Phase::MeetingFailed)
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeetingEvent {
    pub seq: u64,
    pub meeting_id: MeetingId,
    pub phase: Phase,
    pub speaker: String,
    pub content: String,
    /// 1-based round (or warm-up batch) index; 0 outside rounds.
    pub round: u32,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpertTurn {
    pub speaker: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    pub guidance: String,
    pub expert_turns: Vec<ExpertTurn>,
    pub critique: String,
    pub synthesis: String,
    pub follow_up_questions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum MeetingStatus {
    Running,
    Completed,
    Failed { reason: String },
}

impl MeetingStatus {
    pub fn is_running(&self) -> bool {
        matches!(self, MeetingStatus::Running)
    }
}

/// Durable header of a meeting: its configuration and lifecycle state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeetingRecord {
    pub id: MeetingId,
    pub config: MeetingConfig,
    pub status: MeetingStatus,
    pub created_at: DateTime<Utc>,
    #[serde(default)]
    pub finished_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeetingMinutes {
    pub meeting_id: MeetingId,
    pub project_id: ProjectId,
    pub kind: MeetingKind,
    pub agenda: String,
    pub participants: Vec<String>,
    pub status: MeetingStatus,
    pub per_round: Vec<RoundRecord>,
    pub final_summary: String,
    pub transcript: Vec<MeetingEvent>,
}

impl MeetingMinutes {
    /// Number of events that carry agent content.
    pub fn content_event_count(&self) -> usize {
        self.transcript.iter().filter(|e| e.phase.is_content()).count()
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use proptest::prelude::*;

    use super::*;
    use crate::ids::SystemClock;

    fn ids() -> IdGenerator {
        IdGenerator::new(Arc::new(SystemClock))
    }

    fn project_with(names: &[&str]) -> ProjectRecord {
        let ids = ids();
        let mut p = ProjectRecord::create(&ids, "Digital human", "desc", vec!["obj1".into()]).unwrap();
        for n in names {
            p.add_expert(&ids, n, "persona").unwrap();
        }
        p
    }

    #[test]
    fn create_project_starts_empty() {
        let p = ProjectRecord::create(&ids(), "Digital human", "desc", vec!["obj1".into()]).unwrap();
        assert!(p.experts.is_empty());
        assert!(p.meetings.is_empty());
        assert!(p.corpus.is_empty());
    }

    #[test]
    fn empty_title_is_rejected() {
        let err = ProjectRecord::create(&ids(), "", "d", vec![]).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn identical_inputs_give_distinct_ids() {
        let ids = ids();
        let a = ProjectRecord::create(&ids, "t", "d", vec![]).unwrap();
        let b = ProjectRecord::create(&ids, "t", "d", vec![]).unwrap();
        assert_ne!(a.id, b.id);
    }

    #[test]
    fn experts_keep_insertion_order() {
        let p = project_with(&["Graphics Expert", "ML Expert"]);
        let names: Vec<_> = p.experts.iter().map(|e| e.name.as_str()).collect();
        assert_eq!(names, ["Graphics Expert", "ML Expert"]);
        assert!(p.experts.iter().all(|e| e.role == AgentRole::DomainExpert && !e.warmup_done));
        assert!(p.experts.iter().all(|e| e.knowledge_base_id.is_none()));
    }

    #[test]
    fn duplicate_expert_conflicts() {
        let ids = ids();
        let mut p = project_with(&["X"]);
        assert!(matches!(p.add_expert(&ids, "X", "p"), Err(Error::Conflict(_))));
        assert!(matches!(p.add_expert(&ids, "Coordinator", "p"), Err(Error::Conflict(_))));
        assert_eq!(p.experts.len(), 1);
    }

    #[test]
    fn four_expert_roster() {
        let p = project_with(&["Graphics", "ML", "UX", "Performance"]);
        assert_eq!(p.experts.len(), 4);
    }

    #[test]
    fn two_rounds_three_experts_is_valid() {
        let p = project_with(&["A", "B", "C"]);
        let cfg = MeetingConfig::team(p.id.clone(), "agenda", 2, vec!["A".into(), "B".into(), "C".into()]);
        assert_eq!(validate_meeting_config(&cfg, &p), Ok(()));
    }

    #[test]
    fn zero_rounds_is_reported() {
        let p = project_with(&["A"]);
        let cfg = MeetingConfig::team(p.id.clone(), "agenda", 0, vec!["A".into()]);
        let violations = validate_meeting_config(&cfg, &p).unwrap_err();
        assert!(violations.iter().any(|v| v.field == "rounds" && v.message == "must be at least 1"));
    }

    #[test]
    fn warmup_with_two_participants_is_reported() {
        let p = project_with(&["A", "B"]);
        let mut cfg = MeetingConfig::warmup(p.id.clone(), "A");
        cfg.participants.push("B".into());
        let violations = validate_meeting_config(&cfg, &p).unwrap_err();
        assert!(violations.iter().any(|v| v.field == "participants"));
    }

    #[test]
    fn all_violations_are_collected() {
        let p = project_with(&["A"]);
        let cfg = MeetingConfig {
            project_id: ProjectId::from("other"),
            agenda: " ".into(),
            rounds: 0,
            participants: vec!["Z".into()],
            kind: MeetingKind::Team,
            retrieval_k: 0,
            context_budget: 0,
        };
        assert_eq!(validate_meeting_config(&cfg, &p).unwrap_err().len(), 6);
    }

    proptest! {
        #[test]
        fn validation_is_total(
            agenda in ".{0,20}",
            rounds in any::<u32>(),
            participants in proptest::collection::vec("[A-D]{0,2}", 0..6),
            warmup in any::<bool>(),
            k in any::<usize>(),
            budget in any::<usize>(),
        ) {
            let p = project_with(&["A", "B"]);
            let cfg = MeetingConfig {
                project_id: p.id.clone(),
                agenda,
                rounds,
                participants,
                kind: if warmup { MeetingKind::Warmup } else { MeetingKind::Team },
                retrieval_k: k,
                context_budget: budget,
            };
            let valid = validate_meeting_config(&cfg, &p).is_ok();
            if valid {
                prop_assert!(cfg.rounds >= 1 && !cfg.participants.is_empty());
            }
        }

        #[test]
        fn expert_names_stay_unique(names in proptest::collection::vec("[a-c]{1,2}", 0..20)) {
            let ids = ids();
            let mut p = ProjectRecord::create(&ids, "t", "", vec![]).unwrap();
            for n in &names {
                let _ = p.add_expert(&ids, n, "persona");
            }
            let set: HashSet<_> = p.experts.iter().map(|e| e.name.clone()).collect();
            prop_assert_eq!(set.len(), p.experts.len());
        }
    }
}
