//! Append-only meeting event log.
//!
//! One record per line: `<crc32 of json, 8 lowercase hex> <json>\n`. A line
//! without its terminating newline is a torn append and is ignored on read
//! (and cut off before the next append). Any complete line that fails its
//! checksum, does not parse, or breaks the dense `1..n` sequence is an
//! integrity error.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::MeetingEvent;
use crate::persistence::fsutil::read_optional;

pub fn encode_event(event: &MeetingEvent) -> Vec<u8> {
    let json = serde_json::to_vec(event).expect("events always serialize");
    let mut line = format!("{:08x} ", crc32fast::hash(&json)).into_bytes();
    line.extend_from_slice(&json);
    line.push(b'\n');
    line
}

/// Parses a log image. Returns the events and the byte length of the
/// complete-record prefix.
pub fn parse_log(path: &Path, bytes: &[u8]) -> Result<(Vec<MeetingEvent>, usize)> {
    let mut events: Vec<MeetingEvent> = Vec::new();
    let mut offset = 0;
    while let Some(nl) = bytes[offset..].iter().position(|b| *b == b'\n') {
        let line = &bytes[offset..offset + nl];
        let line_no = events.len() + 1;
        let bad = |detail: String| Error::integrity(path, format!("record {line_no}: {detail}"));

        if line.len() < 10 || line[8] != b' ' {
            return Err(bad("malformed record header".into()));
        }
        let crc = std::str::from_utf8(&line[..8])
            .ok()
            .and_then(|h| u32::from_str_radix(h, 16).ok())
            .ok_or_else(|| bad("malformed checksum".into()))?;
        let json = &line[9..];
        if crc32fast::hash(json) != crc {
            return Err(bad("checksum mismatch".into()));
        }
        let event: MeetingEvent = serde_json::from_slice(json).map_err(|e| bad(e.to_string()))?;
        let expected = events.len() as u64 + 1;
        if event.seq != expected {
            return Err(bad(format!("sequence gap: expected seq {expected}, found {}", event.seq)));
        }
        if let Some(first) = events.first() {
            if first.meeting_id != event.meeting_id {
                return Err(bad(format!("foreign meeting id {}", event.meeting_id)));
            }
        }
        events.push(event);
        offset += nl + 1;
    }
    Ok((events, offset))
}

/// Events with `seq >= from_seq`, in order. A missing log reads as empty.
pub fn read_events(path: &Path, from_seq: u64) -> Result<Vec<MeetingEvent>> {
    let Some(bytes) = read_optional(path)? else {
        return Ok(Vec::new());
    };
    let (events, _) = parse_log(path, &bytes)?;
    Ok(events.into_iter().filter(|e| e.seq >= from_seq).collect())
}

#[derive(Debug)]
pub struct EventLog {
    path: PathBuf,
    file: File,
    next_seq: u64,
}

impl EventLog {
    /// Opens (or creates) a log for appending, discarding a torn tail.
    pub fn open(path: &Path) -> Result<Self> {
        let bytes = read_optional(path)?.unwrap_or_default();
        let (events, complete) = parse_log(path, &bytes)?;
        let file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        if complete < bytes.len() {
            file.set_len(complete as u64).map_err(|e| Error::io(path, e))?;
        }
        let mut log = Self {
            path: path.to_owned(),
            file,
            next_seq: events.len() as u64 + 1,
        };
        log.seek_end()?;
        Ok(log)
    }

    fn seek_end(&mut self) -> Result<()> {
        use std::io::{Seek, SeekFrom};
        self.file
            .seek(SeekFrom::End(0))
            .map(|_| ())
            .map_err(|e| Error::io(&self.path, e))
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Durably appends `event`, whose `seq` must be the next in sequence.
    pub fn append(&mut self, event: &MeetingEvent) -> Result<()> {
        if event.seq != self.next_seq {
            return Err(Error::integrity(
                &self.path,
                format!("append of seq {} but next seq is {}", event.seq, self.next_seq),
            ));
        }
        self.file
            .write_all(&encode_event(event))
            .and_then(|_| self.file.sync_data())
            .map_err(|e| Error::io(&self.path, e))?;
        self.next_seq += 1;
        Ok(())
    }
}
