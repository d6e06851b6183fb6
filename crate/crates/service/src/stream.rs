//! Server-sent event stream of one meeting: replay from the log, then the
//! live tail, ending after the terminal event.
//!
//! The subscription is opened before the log is read, so every event is
//! either in the replay or still to arrive on the channel; duplicates are
//! dropped by sequence number.

use std::sync::Arc;

use axum::response::sse::Event;
use futures::stream::{self, Stream, StreamExt};
use serde_json::json;
use thinktank_core::model::{MeetingEvent, MeetingId};
use tokio::sync::broadcast::{self, error::RecvError};

use crate::hub::Hub;

#[derive(Debug, Clone, PartialEq)]
pub enum Frame {
    Event(MeetingEvent),
    /// Sent instead of further events when a subscriber fell behind; the
    /// client reconnects with this `from_seq`.
    Resume(u64),
}

impl Frame {
    pub fn into_sse(self) -> Event {
        match self {
            Frame::Event(event) => Event::default()
                .id(event.seq.to_string())
                .event(event.phase.as_str())
                .json_data(&event)
                .expect("events always serialize"),
            Frame::Resume(from_seq) => Event::default()
                .event("resume")
                .json_data(json!({ "from_seq": from_seq }))
                .expect("resume frame serializes"),
        }
    }
}

struct Tail {
    rx: Option<broadcast::Receiver<MeetingEvent>>,
    last: u64,
    hub: Arc<Hub>,
    meeting: MeetingId,
    done: bool,
}

impl Drop for Tail {
    fn drop(&mut self) {
        self.rx.take();
        self.hub.release(&self.meeting);
    }
}

pub fn event_stream(
    hub: Arc<Hub>,
    meeting: MeetingId,
    rx: broadcast::Receiver<MeetingEvent>,
    replay: Vec<MeetingEvent>,
    from_seq: u64,
) -> impl Stream<Item = Frame> + Send {
    let finished = replay.last().is_some_and(|e| e.phase.is_terminal());
    let last = replay.last().map_or(from_seq.saturating_sub(1), |e| e.seq);
    let head = stream::iter(replay.into_iter().map(Frame::Event));
    let tail = Tail {
        rx: Some(rx),
        last,
        hub,
        meeting,
        done: finished,
    };
    let live = stream::unfold(tail, |mut tail| async move {
        if tail.done {
            return None;
        }
        let rx = tail.rx.as_mut()?;
        loop {
            match rx.recv().await {
                Ok(event) if event.seq <= tail.last => continue,
                Ok(event) if event.seq > tail.last + 1 => {
                    // A gap can only be recovered by replay.
                    tail.done = true;
                    let hint = tail.last + 1;
                    return Some((Frame::Resume(hint), tail));
                }
                Ok(event) => {
                    tail.last = event.seq;
                    tail.done = event.phase.is_terminal();
                    return Some((Frame::Event(event), tail));
                }
                Err(RecvError::Lagged(_)) => {
                    tail.done = true;
                    let hint = tail.last + 1;
                    return Some((Frame::Resume(hint), tail));
                }
                Err(RecvError::Closed) => return None,
            }
        }
    });
    head.chain(live)
}
