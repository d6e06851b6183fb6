//! Per-meeting fan-out of persisted events to live subscribers.

use std::collections::HashMap;
use std::sync::Mutex;

use thinktank_core::model::{MeetingEvent, MeetingId};
use thinktank_core::EventSink;
use tokio::sync::broadcast;

/// Events a subscriber may fall behind by before it is cut off.
pub const SUBSCRIBER_BUFFER: usize = 256;

#[derive(Debug)]
pub struct Hub {
    capacity: usize,
    channels: Mutex<HashMap<MeetingId, broadcast::Sender<MeetingEvent>>>,
}

impl Default for Hub {
    fn default() -> Self {
        Self::with_capacity(SUBSCRIBER_BUFFER)
    }
}

impl Hub {
    pub fn with_capacity(capacity: usize) -> Self {
        Self {
            capacity,
            channels: Mutex::new(HashMap::new()),
        }
    }

    pub fn subscribe(&self, meeting: &MeetingId) -> broadcast::Receiver<MeetingEvent> {
        self.channels
            .lock()
            .expect("hub poisoned")
            .entry(meeting.clone())
            .or_insert_with(|| broadcast::channel(self.capacity).0)
            .subscribe()
    }

    /// Drops the channel of a finished meeting once nobody listens.
    pub fn release(&self, meeting: &MeetingId) {
        let mut channels = self.channels.lock().expect("hub poisoned");
        if channels.get(meeting).is_some_and(|tx| tx.receiver_count() == 0) {
            channels.remove(meeting);
        }
    }

    pub fn channel_count(&self) -> usize {
        self.channels.lock().expect("hub poisoned").len()
    }
}

impl EventSink for Hub {
    fn publish(&self, event: &MeetingEvent) {
        let mut channels = self.channels.lock().expect("hub poisoned");
        if let Some(tx) = channels.get(&event.meeting_id) {
            // No receivers is fine: late subscribers replay from the log.
            let _ = tx.send(event.clone());
            if event.phase.is_terminal() {
                channels.remove(&event.meeting_id);
            }
        }
    }
}
