//! Durable storage under a single data directory.
//!
//! ```text
//! <root>/thinktank.json                     format version
//! <root>/projects/<project>/project.json
//! <root>/projects/<project>/kb/<kb>/...     see knowledge::KnowledgeBase
//! <root>/projects/<project>/notes/...       see memory::NoteStore
//! <root>/projects/<project>/meetings/<meeting>/meeting.json
//! <root>/projects/<project>/meetings/<meeting>/events.log
//! <root>/projects/<project>/meetings/<meeting>/minutes.json
//! ```
//!
//! Records are pretty-printed JSON replaced atomically. Writers of a project
//! serialize on `<project>/.write.lock`; a running meeting holds
//! `<project>/.meeting.lock`.

pub mod event_log;
mod export;
pub mod fsutil;

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use tracing::info;

pub use event_log::EventLog;
pub use export::render_minutes;
use fsutil::{read_json, write_json_atomic, FileLock};

use crate::error::{Error, Result};
use crate::knowledge::{ChunkParams, KnowledgeBase};
use crate::memory::NoteStore;
use crate::model::{
    KnowledgeBaseId, MeetingEvent, MeetingId, MeetingMinutes, MeetingRecord, MeetingStatus, Phase, ProjectId,
    ProjectRecord, SYSTEM_SPEAKER,
};

pub const FORMAT_VERSION: u32 = 1;

const ROOT_MANIFEST: &str = "thinktank.json";
const PROJECT_FILE: &str = "project.json";
const MEETING_FILE: &str = "meeting.json";
const EVENTS_FILE: &str = "events.log";
const MINUTES_FILE: &str = "minutes.json";

#[derive(Debug, Serialize, Deserialize)]
struct RootManifest {
    format_version: u32,
}

#[derive(Debug)]
pub struct Store {
    root: PathBuf,
    knowledge_bases: Mutex<HashMap<KnowledgeBaseId, Arc<KnowledgeBase>>>,
    notes: Mutex<HashMap<ProjectId, Arc<NoteStore>>>,
    meeting_projects: Mutex<HashMap<MeetingId, ProjectId>>,
}

/// Ids reach the filesystem as path components, so only a conservative
/// alphabet is accepted.
fn component<'a>(kind: &'static str, id: &'a str) -> Result<&'a str> {
    let ok = !id.is_empty()
        && id.len() <= 128
        && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
    if ok {
        Ok(id)
    } else {
        Err(Error::not_found(kind, id))
    }
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join("projects")).map_err(|e| Error::io(&root, e))?;
        let manifest_path = root.join(ROOT_MANIFEST);
        match read_json::<RootManifest>(&manifest_path)? {
            Some(m) if m.format_version != FORMAT_VERSION => {
                return Err(Error::FormatVersion {
                    path: manifest_path,
                    found: m.format_version,
                    expected: FORMAT_VERSION,
                })
            }
            Some(_) => {}
            None => write_json_atomic(
                &manifest_path,
                &RootManifest {
                    format_version: FORMAT_VERSION,
                },
            )?,
        }
        Ok(Self {
            root,
            knowledge_bases: Mutex::new(HashMap::new()),
            notes: Mutex::new(HashMap::new()),
            meeting_projects: Mutex::new(HashMap::new()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn project_dir(&self, id: &ProjectId) -> Result<PathBuf> {
        Ok(self.root.join("projects").join(component("project", id.as_str())?))
    }

    // -- projects ---------------------------------------------------------

    pub fn save_project(&self, project: &ProjectRecord) -> Result<()> {
        let dir = self.project_dir(&project.id)?;
        write_json_atomic(&dir.join(PROJECT_FILE), project)
    }

    pub fn load_project(&self, id: &ProjectId) -> Result<ProjectRecord> {
        let path = self.project_dir(id)?.join(PROJECT_FILE);
        read_json(&path)?.ok_or_else(|| Error::not_found("project", id.as_str()))
    }

    pub fn list_projects(&self) -> Result<Vec<ProjectRecord>> {
        let dir = self.root.join("projects");
        let mut ids: Vec<String> = fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .flatten()
            .filter(|e| e.path().join(PROJECT_FILE).exists())
            .filter_map(|e| e.file_name().into_string().ok())
            .collect();
        ids.sort();
        ids.into_iter().map(|id| self.load_project(&ProjectId(id))).collect()
    }

    /// Load-modify-save under the project's write lock.
    pub fn update_project<T>(
        &self,
        id: &ProjectId,
        change: impl FnOnce(&mut ProjectRecord) -> Result<T>,
    ) -> Result<T> {
        let _lock = self.lock_project_writes(id)?;
        let mut project = self.load_project(id)?;
        let out = change(&mut project)?;
        self.save_project(&project)?;
        Ok(out)
    }

    pub fn lock_project_writes(&self, id: &ProjectId) -> Result<FileLock> {
        FileLock::acquire(&self.project_dir(id)?.join(".write.lock"))
    }

    /// Claims the project's single meeting slot; `None` if a meeting is
    /// already running on it (in this or another process).
    pub fn try_lock_meeting_slot(&self, id: &ProjectId) -> Result<Option<FileLock>> {
        FileLock::try_acquire(&self.project_dir(id)?.join(".meeting.lock"))
    }

    // -- knowledge bases and notes -------------------------------------------

    pub fn create_knowledge_base(
        &self,
        project: &ProjectId,
        id: KnowledgeBaseId,
        params: ChunkParams,
    ) -> Result<Arc<KnowledgeBase>> {
        let dir = self
            .project_dir(project)?
            .join("kb")
            .join(component("knowledge base", id.as_str())?);
        let kb = Arc::new(KnowledgeBase::create(&dir, id.clone(), project.clone(), params)?);
        self.knowledge_bases
            .lock()
            .expect("kb cache poisoned")
            .insert(id, kb.clone());
        Ok(kb)
    }

    pub fn knowledge_base(&self, id: &KnowledgeBaseId) -> Result<Arc<KnowledgeBase>> {
        let mut cache = self.knowledge_bases.lock().expect("kb cache poisoned");
        if let Some(kb) = cache.get(id) {
            return Ok(kb.clone());
        }
        let name = component("knowledge base", id.as_str())?;
        let dir = self
            .project_dirs()?
            .into_iter()
            .map(|p| p.join("kb").join(name))
            .find(|d| d.exists())
            .ok_or_else(|| Error::not_found("knowledge base", id.as_str()))?;
        let kb = Arc::new(KnowledgeBase::open(&dir)?);
        cache.insert(id.clone(), kb.clone());
        Ok(kb)
    }

    pub fn notes(&self, project: &ProjectId) -> Result<Arc<NoteStore>> {
        let mut cache = self.notes.lock().expect("notes cache poisoned");
        if let Some(n) = cache.get(project) {
            return Ok(n.clone());
        }
        let dir = self.project_dir(project)?;
        if !dir.join(PROJECT_FILE).exists() {
            return Err(Error::not_found("project", project.as_str()));
        }
        let notes = Arc::new(NoteStore::open(&dir.join("notes"), project.clone())?);
        cache.insert(project.clone(), notes.clone());
        Ok(notes)
    }

    fn project_dirs(&self) -> Result<Vec<PathBuf>> {
        let dir = self.root.join("projects");
        let mut dirs: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .flatten()
            .map(|e| e.path())
            .filter(|p| p.is_dir())
            .collect();
        dirs.sort();
        Ok(dirs)
    }

    // -- meetings -------------------------------------------------------------

    fn meeting_dir(&self, id: &MeetingId) -> Result<PathBuf> {
        let name = component("meeting", id.as_str())?;
        if let Some(project) = self.meeting_projects.lock().expect("meeting index poisoned").get(id) {
            return Ok(self.project_dir(project)?.join("meetings").join(name));
        }
        for project_dir in self.project_dirs()? {
            let dir = project_dir.join("meetings").join(name);
            if dir.join(MEETING_FILE).exists() {
                return Ok(dir);
            }
        }
        Err(Error::not_found("meeting", id.as_str()))
    }

    pub fn create_meeting(&self, record: &MeetingRecord) -> Result<()> {
        let dir = self
            .project_dir(&record.config.project_id)?
            .join("meetings")
            .join(component("meeting", record.id.as_str())?);
        if dir.join(MEETING_FILE).exists() {
            return Err(Error::Conflict(format!("meeting {} already exists", record.id)));
        }
        write_json_atomic(&dir.join(MEETING_FILE), record)?;
        self.meeting_projects
            .lock()
            .expect("meeting index poisoned")
            .insert(record.id.clone(), record.config.project_id.clone());
        Ok(())
    }

    pub fn save_meeting(&self, record: &MeetingRecord) -> Result<()> {
        write_json_atomic(&self.meeting_dir(&record.id)?.join(MEETING_FILE), record)
    }

    pub fn load_meeting(&self, id: &MeetingId) -> Result<MeetingRecord> {
        let path = self.meeting_dir(id)?.join(MEETING_FILE);
        read_json(&path)?.ok_or_else(|| Error::not_found("meeting", id.as_str()))
    }

    pub fn list_meetings(&self, project: &ProjectId) -> Result<Vec<MeetingRecord>> {
        let project = self.load_project(project)?;
        project.meetings.iter().map(|m| self.load_meeting(m)).collect()
    }

    pub fn events_path(&self, id: &MeetingId) -> Result<PathBuf> {
        Ok(self.meeting_dir(id)?.join(EVENTS_FILE))
    }

    pub fn open_event_log(&self, id: &MeetingId) -> Result<EventLog> {
        EventLog::open(&self.events_path(id)?)
    }

    pub fn read_events(&self, id: &MeetingId, from_seq: u64) -> Result<Vec<MeetingEvent>> {
        event_log::read_events(&self.events_path(id)?, from_seq)
    }

    pub fn save_minutes(&self, minutes: &MeetingMinutes) -> Result<()> {
        write_json_atomic(&self.meeting_dir(&minutes.meeting_id)?.join(MINUTES_FILE), minutes)
    }

    /// Minutes of a finished meeting; a state error while it is running.
    pub fn load_minutes(&self, id: &MeetingId) -> Result<MeetingMinutes> {
        let record = self.load_meeting(id)?;
        if record.status.is_running() {
            return Err(Error::State(format!("meeting in progress: {id}")));
        }
        let path = self.meeting_dir(id)?.join(MINUTES_FILE);
        read_json(&path)?.ok_or_else(|| Error::integrity(&path, "finished meeting has no minutes"))
    }

    /// Deterministic text rendering of a completed meeting's minutes.
    pub fn export_minutes(&self, id: &MeetingId) -> Result<String> {
        let minutes = self.load_minutes(id)?;
        match &minutes.status {
            MeetingStatus::Completed => Ok(render_minutes(&minutes)),
            MeetingStatus::Failed { reason } => Err(Error::State(format!("meeting {id} failed: {reason}"))),
            MeetingStatus::Running => Err(Error::State(format!("meeting in progress: {id}"))),
        }
    }

    /// Settles meetings left `running` by a previous process. A log that
    /// already ends in a terminal event decides the outcome; otherwise a
    /// `meeting_failed` event is appended. Minutes are written when missing.
    /// Meetings whose project slot is still held elsewhere are left alone.
    pub fn fail_interrupted_meetings(&self, now: chrono::DateTime<chrono::Utc>) -> Result<Vec<MeetingId>> {
        let mut settled = Vec::new();
        for project in self.list_projects()? {
            let Some(_slot) = self.try_lock_meeting_slot(&project.id)? else {
                continue;
            };
            for id in &project.meetings {
                let mut record = self.load_meeting(id)?;
                if !record.status.is_running() {
                    continue;
                }
                let mut log = self.open_event_log(id)?;
                let mut events = self.read_events(id, 1)?;
                let status = match events.last() {
                    Some(last) if last.phase == Phase::MeetingFinished => MeetingStatus::Completed,
                    Some(last) if last.phase == Phase::MeetingFailed => MeetingStatus::Failed {
                        reason: last.content.clone(),
                    },
                    _ => {
                        let reason = "service restarted while the meeting was running".to_owned();
                        let event = MeetingEvent {
                            seq: log.next_seq(),
                            meeting_id: id.clone(),
                            phase: Phase::MeetingFailed,
                            speaker: SYSTEM_SPEAKER.to_owned(),
                            content: reason.clone(),
                            round: 0,
                            timestamp: now,
                        };
                        log.append(&event)?;
                        events.push(event);
                        MeetingStatus::Failed { reason }
                    }
                };
                let minutes_path = self.meeting_dir(id)?.join(MINUTES_FILE);
                let existing: Option<MeetingMinutes> = read_json(&minutes_path)?;
                let status = match (status, existing) {
                    (status, Some(m)) if m.status == status => status,
                    (status, _) => {
                        let status = match status {
                            MeetingStatus::Completed => MeetingStatus::Failed {
                                reason: "meeting finished but its minutes were not written".into(),
                            },
                            other => other,
                        };
                        self.save_minutes(&MeetingMinutes {
                            meeting_id: id.clone(),
                            project_id: project.id.clone(),
                            kind: record.config.kind,
                            agenda: record.config.agenda.clone(),
                            participants: record.config.participants.clone(),
                            status: status.clone(),
                            per_round: Vec::new(),
                            final_summary: String::new(),
                            transcript: events,
                        })?;
                        status
                    }
                };
                record.status = status;
                record.finished_at = Some(now);
                self.save_meeting(&record)?;
                info!(meeting = %id, status = ?record.status, "settled interrupted meeting");
                settled.push(id.clone());
            }
        }
        Ok(settled)
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::ids::{IdGenerator, SystemClock};

    fn store() -> (tempfile::TempDir, Store, IdGenerator) {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        (dir, store, IdGenerator::new(Arc::new(SystemClock)))
    }

    #[test]
    fn project_round_trip() {
        let (_d, store, ids) = store();
        let mut p = ProjectRecord::create(&ids, "Digital human", "d", vec!["o".into()]).unwrap();
        p.add_expert(&ids, "ML", "persona").unwrap();
        store.save_project(&p).unwrap();
        assert_eq!(store.load_project(&p.id).unwrap(), p);
        assert_eq!(store.list_projects().unwrap(), vec![p]);
    }

    #[test]
    fn unknown_project_is_not_found() {
        let (_d, store, _) = store();
        assert!(matches!(
            store.load_project(&ProjectId::from("prj_nope")),
            Err(Error::NotFound { .. })
        ));
        assert!(matches!(
            store.load_project(&ProjectId::from("../etc")),
            Err(Error::NotFound { .. })
        ));
    }

    #[test]
    fn truncated_project_record_is_an_integrity_error() {
        let (dir, store, ids) = store();
        let p = ProjectRecord::create(&ids, "t", "d", vec![]).unwrap();
        store.save_project(&p).unwrap();
        let path = dir.path().join("projects").join(p.id.as_str()).join(PROJECT_FILE);
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        match store.load_project(&p.id) {
            Err(Error::Integrity { path: named, .. }) => assert_eq!(named, path),
            other => panic!("expected integrity error, got {other:?}"),
        }
    }

    #[test]
    fn newer_format_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(ROOT_MANIFEST), r#"{"format_version": 99}"#).unwrap();
        assert!(matches!(
            Store::open(dir.path()),
            Err(Error::FormatVersion { found: 99, .. })
        ));
    }

    #[test]
    fn meeting_slot_is_exclusive() {
        let (_d, store, ids) = store();
        let p = ProjectRecord::create(&ids, "t", "d", vec![]).unwrap();
        store.save_project(&p).unwrap();
        let slot = store.try_lock_meeting_slot(&p.id).unwrap();
        assert!(slot.is_some());
        assert!(store.try_lock_meeting_slot(&p.id).unwrap().is_none());
    }

    #[test]
    fn update_project_persists_changes() {
        let (_d, store, ids) = store();
        let p = ProjectRecord::create(&ids, "t", "d", vec![]).unwrap();
        store.save_project(&p).unwrap();
        store
            .update_project(&p.id, |p| p.add_expert(&ids, "A", "persona").map(|_| ()))
            .unwrap();
        assert_eq!(store.load_project(&p.id).unwrap().experts.len(), 1);
        assert!(store
            .update_project(&p.id, |p| p.add_expert(&ids, "A", "persona").map(|_| ()))
            .is_err());
        assert_eq!(store.load_project(&p.id).unwrap().experts.len(), 1);
    }
}
