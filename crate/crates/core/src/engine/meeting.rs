//! Running a prepared meeting: the round protocol and the warm-up pass.

use tracing::{info, warn};

use super::prompts::{
    assemble_critic_prompt, assemble_expert_prompt, assemble_final_prompt, assemble_guidance_prompt,
    assemble_reformat_prompt, assemble_synthesis_prompt, assemble_warmup_prompt, carried_context, ExpertInputs,
    GuidanceInputs, SynthesisInputs,
};
use super::synthesis::{parse_synthesis, ParsedSynthesis};
use super::{Engine, WarmupReport};
use crate::error::{Error, Result};
use crate::knowledge::{adaptive_filter, Citation, ScoredChunk};
use crate::llm::ChatRequest;
use crate::memory::{LongTermNote, NoteOrigin, SessionMemory};
use crate::model::{
    AgentProfile, ExpertTurn, MeetingEvent, MeetingKind, MeetingMinutes, MeetingRecord, MeetingStatus, Phase,
    ProjectRecord, RoundRecord, COORDINATOR_NAME, CRITIC_NAME, SYSTEM_SPEAKER,
};
use crate::persistence::fsutil::FileLock;
use crate::persistence::EventLog;

/// A validated meeting holding its project's meeting slot. Dropping it
/// without running leaves the meeting `running` until the next recovery.
pub struct PreparedMeeting {
    engine: Engine,
    record: MeetingRecord,
    project: ProjectRecord,
    log: EventLog,
    transcript: Vec<MeetingEvent>,
    session: SessionMemory,
    _slot: FileLock,
}

impl std::fmt::Debug for PreparedMeeting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PreparedMeeting").field("id", &self.record.id).finish_non_exhaustive()
    }
}

impl PreparedMeeting {
    pub(super) fn new(engine: Engine, record: MeetingRecord, project: ProjectRecord, log: EventLog, slot: FileLock) -> Self {
        let session = SessionMemory::new(record.id.clone());
        Self {
            engine,
            record,
            project,
            log,
            transcript: Vec::new(),
            session,
            _slot: slot,
        }
    }

    pub fn record(&self) -> &MeetingRecord {
        &self.record
    }

    /// Runs to a terminal state and returns the minutes. On failure the
    /// minutes are persisted with a failed status and the cause is returned.
    pub fn run(self) -> Result<MeetingMinutes> {
        match self.record.config.kind {
            MeetingKind::Team => self.run_team(),
            MeetingKind::Warmup => self.run_warmup().map(|r| r.minutes),
        }
    }

    fn emit(&mut self, phase: Phase, speaker: &str, round: u32, content: &str) -> Result<()> {
        let event = MeetingEvent {
            seq: self.log.next_seq(),
            meeting_id: self.record.id.clone(),
            phase,
            speaker: speaker.to_owned(),
            content: content.to_owned(),
            round,
            timestamp: self.engine.ids.now(),
        };
        self.log.append(&event)?;
        self.engine.sink.publish(&event);
        if phase.is_content() {
            self.session.append_turn(speaker, phase, content)?;
        }
        self.transcript.push(event);
        Ok(())
    }

    fn chat(&self, request: &ChatRequest) -> Result<String> {
        Ok(self.engine.gateway.chat(request)?)
    }

    fn budget(&self) -> usize {
        self.record.config.context_budget
    }

    fn participants(&self) -> Vec<AgentProfile> {
        self.record
            .config
            .participants
            .iter()
            .map(|n| self.project.expert(n).expect("participants validated").clone())
            .collect()
    }

    fn minutes(&self, status: MeetingStatus, per_round: Vec<RoundRecord>, final_summary: String) -> MeetingMinutes {
        MeetingMinutes {
            meeting_id: self.record.id.clone(),
            project_id: self.record.config.project_id.clone(),
            kind: self.record.config.kind,
            agenda: self.record.config.agenda.clone(),
            participants: self.record.config.participants.clone(),
            status,
            per_round,
            final_summary,
            transcript: self.transcript.clone(),
        }
    }

    fn finish(&mut self, per_round: Vec<RoundRecord>, final_summary: String, note: &str) -> Result<MeetingMinutes> {
        self.emit(Phase::MeetingFinished, SYSTEM_SPEAKER, 0, note)?;
        let minutes = self.minutes(MeetingStatus::Completed, per_round, final_summary);
        self.engine.store.save_minutes(&minutes)?;
        self.record.status = MeetingStatus::Completed;
        self.record.finished_at = Some(self.engine.ids.now());
        self.engine.store.save_meeting(&self.record)?;
        info!(meeting = %self.record.id, "meeting completed");
        Ok(minutes)
    }

    /// Records the failure durably, best effort, and hands back `cause`.
    fn fail(&mut self, cause: Error, per_round: Vec<RoundRecord>, final_summary: String) -> Error {
        let reason = cause.to_string();
        warn!(meeting = %self.record.id, %reason, "meeting failed");
        let status = MeetingStatus::Failed { reason: reason.clone() };
        let persisted = self
            .emit(Phase::MeetingFailed, SYSTEM_SPEAKER, 0, &reason)
            .and_then(|_| {
                let minutes = self.minutes(status.clone(), per_round, final_summary);
                self.engine.store.save_minutes(&minutes)
            })
            .and_then(|_| {
                self.record.status = status;
                self.record.finished_at = Some(self.engine.ids.now());
                self.engine.store.save_meeting(&self.record)
            });
        if let Err(e) = persisted {
            warn!(meeting = %self.record.id, error = %e, "could not record meeting failure");
        }
        cause
    }

    // -- team meetings -----------------------------------------------------

    fn run_team(mut self) -> Result<MeetingMinutes> {
        let mut rounds: Vec<RoundRecord> = Vec::new();
        let agenda = self.record.config.agenda.clone();
        if let Err(e) = self.emit(Phase::MeetingStarted, SYSTEM_SPEAKER, 0, &agenda) {
            return Err(self.fail(e, rounds, String::new()));
        }
        for round in 1..=self.record.config.rounds {
            match self.run_round(round, rounds.last()) {
                Ok(record) => rounds.push(record),
                Err(e) => return Err(self.fail(e, rounds, String::new())),
            }
        }

        let request = assemble_final_prompt(
            &self.engine.settings,
            &agenda,
            &rounds,
            &self.session.context(self.budget()),
            self.budget(),
        );
        let summary = match self.chat(&request) {
            Ok(s) => s,
            Err(e) => {
                let marker = format!("[final summary failed: {e}]");
                return Err(self.fail(e, rounds, marker));
            }
        };
        let after = self
            .emit(Phase::FinalSummary, COORDINATOR_NAME, 0, &summary)
            .and_then(|_| self.remember_syntheses(&rounds));
        if let Err(e) = after {
            return Err(self.fail(e, rounds, summary));
        }
        let note = format!("meeting completed after {} rounds", rounds.len());
        self.finish(rounds, summary, &note)
    }

    fn run_round(&mut self, round: u32, previous: Option<&RoundRecord>) -> Result<RoundRecord> {
        let settings = self.engine.settings.clone();
        let budget = self.budget();
        let agenda = self.record.config.agenda.clone();
        let rounds = self.record.config.rounds;
        let carried = carried_context(previous);
        let participants = self.participants();

        let guidance = self.chat(&assemble_guidance_prompt(
            &settings,
            &GuidanceInputs {
                project: &self.project,
                agenda: &agenda,
                round,
                rounds,
                participants: &participants,
                carried_context: &carried,
            },
            budget,
        ))?;
        self.emit(Phase::Guidance, COORDINATOR_NAME, round, &guidance)?;

        let query = format!("{agenda}\n\n{guidance}");
        let mut turns: Vec<ExpertTurn> = Vec::with_capacity(participants.len());
        for expert in &participants {
            let retrieved = self.retrieve(expert, &query)?;
            let notes = self.engine.store.notes(&self.project.id)?.recall_notes(
                &*self.engine.gateway,
                &self.project,
                &expert.name,
                &query,
                self.record.config.retrieval_k,
            )?;
            let request = assemble_expert_prompt(
                &settings,
                &ExpertInputs {
                    expert,
                    round,
                    agenda: &agenda,
                    guidance: &guidance,
                    prior_turns: &turns,
                    carried_context: &carried,
                    retrieved: &retrieved,
                    recalled_notes: &notes,
                },
                budget,
            );
            let content = self.chat(&request)?;
            self.emit(Phase::ExpertTurn, &expert.name, round, &content)?;
            turns.push(ExpertTurn {
                speaker: expert.name.clone(),
                content,
            });
        }

        let critique = self.chat(&assemble_critic_prompt(&settings, &agenda, round, &turns, &carried, budget))?;
        self.emit(Phase::Critique, CRITIC_NAME, round, &critique)?;

        let parsed = self.synthesize(&SynthesisInputs {
            agenda: &agenda,
            round,
            rounds,
            guidance: &guidance,
            expert_turns: &turns,
            critique: &critique,
        })?;
        self.emit(Phase::Synthesis, COORDINATOR_NAME, round, &parsed.render())?;

        Ok(RoundRecord {
            round,
            guidance,
            expert_turns: turns,
            critique,
            synthesis: parsed.synthesis,
            follow_up_questions: parsed.follow_up_questions,
        })
    }

    fn retrieve(&self, expert: &AgentProfile, query: &str) -> Result<Vec<Citation>> {
        let Some(kb_id) = &expert.knowledge_base_id else {
            return Ok(Vec::new());
        };
        let kb = self.engine.store.knowledge_base(kb_id)?;
        let hits: Vec<ScoredChunk> = kb.retrieve(&*self.engine.gateway, query, self.record.config.retrieval_k)?;
        Ok(kb.cite(adaptive_filter(hits)))
    }

    /// One reformat attempt on unparseable output; after that the raw text
    /// stands as the synthesis with no follow-up questions.
    fn synthesize(&self, input: &SynthesisInputs<'_>) -> Result<ParsedSynthesis> {
        let settings = &self.engine.settings;
        let raw = self.chat(&assemble_synthesis_prompt(settings, input, self.budget()))?;
        if let Some(parsed) = parse_synthesis(&raw) {
            return Ok(parsed);
        }
        warn!(meeting = %self.record.id, round = input.round, "synthesis not in the expected format, asking to reformat");
        let retry = self.chat(&assemble_reformat_prompt(settings, input.round, &raw))?;
        if let Some(parsed) = parse_synthesis(&retry) {
            return Ok(parsed);
        }
        warn!(meeting = %self.record.id, round = input.round, "reformat failed, keeping raw synthesis");
        Ok(ParsedSynthesis {
            synthesis: raw.trim().to_owned(),
            follow_up_questions: Vec::new(),
        })
    }

    fn remember_syntheses(&self, rounds: &[RoundRecord]) -> Result<()> {
        let notes = self.engine.store.notes(&self.project.id)?;
        for round in rounds {
            let text = format!(
                "Meeting on \"{}\", round {} synthesis: {}",
                first_line(&self.record.config.agenda),
                round.round,
                round.synthesis
            );
            for name in &self.record.config.participants {
                notes.store_note(
                    &*self.engine.gateway,
                    &self.engine.ids,
                    &self.project,
                    name,
                    &text,
                    NoteOrigin::RoundSynthesis,
                )?;
            }
        }
        Ok(())
    }

    // -- warm-up -------------------------------------------------------------

    pub fn run_warmup(mut self) -> Result<WarmupReport> {
        if self.record.config.kind != MeetingKind::Warmup {
            return Err(Error::State(format!("meeting {} is not a warm-up", self.record.id)));
        }
        let mut notes = Vec::new();
        match self.warmup_batches(&mut notes) {
            Ok(summary) => {
                let minutes = self.finish(Vec::new(), summary, "warm-up completed")?;
                Ok(WarmupReport { minutes, notes })
            }
            Err(e) => Err(self.fail(e, Vec::new(), String::new())),
        }
    }

    fn warmup_batches(&mut self, notes: &mut Vec<LongTermNote>) -> Result<String> {
        let settings = self.engine.settings.clone();
        let agenda = self.record.config.agenda.clone();
        self.emit(Phase::MeetingStarted, SYSTEM_SPEAKER, 0, &agenda)?;

        let expert = self.participants().remove(0);
        let kb_id = expert
            .knowledge_base_id
            .clone()
            .ok_or_else(|| Error::Precondition(format!("{} has no knowledge base", expert.name)))?;
        let kb = self.engine.store.knowledge_base(&kb_id)?;
        let excerpts = kb.cite(
            kb.chunks()
                .into_iter()
                .map(|chunk| ScoredChunk { chunk, score: 1.0 })
                .collect(),
        );
        let store = self.engine.store.notes(&self.project.id)?;
        let batch_size = settings.warmup_batch.max(1);
        let batches = excerpts.len().div_ceil(batch_size) as u32;

        for (i, batch) in excerpts.chunks(batch_size).enumerate() {
            let index = i as u32 + 1;
            let request = assemble_warmup_prompt(&settings, &expert, index, batches, batch, self.budget());
            let content = self.chat(&request)?;
            self.emit(Phase::ExpertTurn, &expert.name, index, &content)?;
            notes.push(store.store_note(
                &*self.engine.gateway,
                &self.engine.ids,
                &self.project,
                &expert.name,
                &content,
                NoteOrigin::Warmup,
            )?);
        }

        self.engine.store.update_project(&self.project.id, |p| {
            if let Some(e) = p.expert_mut(&expert.name) {
                e.warmup_done = true;
            }
            Ok(())
        })?;
        let summary = format!(
            "{} studied {} chunks in {} batches and stored {} notes.",
            expert.name,
            excerpts.len(),
            batches,
            notes.len()
        );
        self.emit(Phase::FinalSummary, SYSTEM_SPEAKER, 0, &summary)?;
        Ok(summary)
    }
}

fn first_line(text: &str) -> &str {
    text.lines().find(|l| !l.trim().is_empty()).unwrap_or("").trim()
}
