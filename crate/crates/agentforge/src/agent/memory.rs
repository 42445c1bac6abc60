//! Bounded FIFO conversation memory. Oldest entries are evicted once the
//! buffer is full. The buffer serializes its own mutations, so one agent can
//! be driven from several threads.

use std::collections::VecDeque;
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

pub const DEFAULT_MEMORY_CAPACITY: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub role: String,
    pub content: String,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug)]
pub struct MemoryBuffer {
    capacity: usize,
    entries: Mutex<VecDeque<MemoryEntry>>,
}

impl Default for MemoryBuffer {
    fn default() -> Self {
        MemoryBuffer::new(DEFAULT_MEMORY_CAPACITY)
    }
}

impl Clone for MemoryBuffer {
    fn clone(&self) -> Self {
        MemoryBuffer {
            capacity: self.capacity,
            entries: Mutex::new(self.lock().clone()),
        }
    }
}

impl MemoryBuffer {
    pub fn new(capacity: usize) -> Self {
        MemoryBuffer { capacity: capacity.max(1), entries: Mutex::new(VecDeque::new()) }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, VecDeque<MemoryEntry>> {
        self.entries.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn append(&self, role: impl Into<String>, content: impl Into<String>) {
        let mut entries = self.lock();
        if entries.len() == self.capacity {
            entries.pop_front();
        }
        entries.push_back(MemoryEntry {
            role: role.into(),
            content: content.into(),
            timestamp: Utc::now(),
        });
    }

    /// Last `k` entries in chronological order (all of them when k ≥ size).
    pub fn recent(&self, k: usize) -> Vec<MemoryEntry> {
        let entries = self.lock();
        let skip = entries.len().saturating_sub(k);
        entries.iter().skip(skip).cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.lock().is_empty()
    }

    pub fn clear(&self) {
        self.lock().clear();
    }

    /// The recent(k) entries rendered one per line as `role: content`, the
    /// form injected into prompts through the reserved `{memory}` slot.
    pub fn transcript(&self, k: usize) -> String {
        self.recent(k)
            .iter()
            .map(|e| format!("{}: {}", e.role, e.content))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn eviction_drops_the_oldest() {
        let buffer = MemoryBuffer::new(2);
        buffer.append("user", "a");
        buffer.append("user", "b");
        buffer.append("user", "c");
        let contents: Vec<String> =
            buffer.recent(10).into_iter().map(|e| e.content).collect();
        assert_eq!(contents, vec!["b", "c"]);
    }

    #[test]
    fn recent_clamps_and_zero_is_empty() {
        let buffer = MemoryBuffer::new(8);
        buffer.append("user", "a");
        buffer.append("assistant", "b");
        assert!(buffer.recent(0).is_empty());
        assert_eq!(buffer.recent(99).len(), 2);
        let last: Vec<String> = buffer.recent(1).into_iter().map(|e| e.content).collect();
        assert_eq!(last, vec!["b"]);
    }

    #[test]
    fn transcript_is_role_prefixed_lines() {
        let buffer = MemoryBuffer::new(8);
        buffer.append("user", "question");
        buffer.append("assistant", "answer");
        assert_eq!(buffer.transcript(10), "user: question\nassistant: answer");
        assert_eq!(MemoryBuffer::new(4).transcript(10), "");
    }

    #[test]
    fn concurrent_appends_stay_bounded() {
        let buffer = MemoryBuffer::new(16);
        std::thread::scope(|scope| {
            for t in 0..4 {
                let buffer = &buffer;
                scope.spawn(move || {
                    for i in 0..50 {
                        buffer.append("user", format!("{t}/{i}"));
                    }
                });
            }
        });
        assert_eq!(buffer.len(), 16);
    }

    proptest! {
        #[test]
        fn size_never_exceeds_capacity(
            capacity in 1usize..12,
            messages in prop::collection::vec("[a-z]{0,6}", 0..40),
        ) {
            let buffer = MemoryBuffer::new(capacity);
            for (i, message) in messages.iter().enumerate() {
                buffer.append(if i % 2 == 0 { "user" } else { "assistant" }, message.clone());
                prop_assert!(buffer.len() <= capacity);
            }
            let expected: Vec<&String> =
                messages.iter().rev().take(capacity).rev().collect();
            let actual: Vec<String> =
                buffer.recent(usize::MAX).into_iter().map(|e| e.content).collect();
            prop_assert_eq!(actual, expected.into_iter().cloned().collect::<Vec<_>>());
        }
    }
}
