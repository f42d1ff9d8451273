//! Shared information buffer.
//!
//! At most one unit per `(role, action, data_source)` key is live; a put with
//! an existing key tombstones the older unit. Tombstones still occupy slots
//! until a sweep. When the slots are full the capacity doubles, so capacity
//! is always `initial * 2^n`.

use std::collections::HashMap;
use std::sync::Mutex;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use super::unit::{InformationUnit, UnitKey};

pub const DEFAULT_CAPACITY: usize = 8;
pub const DEFAULT_SWEEP_EVERY: usize = 16;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum BufferError {
    #[error("malformed unit: missing {0}")]
    MalformedUnit(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BufferConfig {
    pub initial_capacity: usize,
    /// Sweep tombstones after this many puts; 0 disables auto-sweep.
    pub sweep_every: usize,
}

impl Default for BufferConfig {
    fn default() -> Self {
        BufferConfig { initial_capacity: DEFAULT_CAPACITY, sweep_every: DEFAULT_SWEEP_EVERY }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SweepPolicy {
    /// Also expire live units at least this old.
    pub max_age: Option<Duration>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PutReceipt {
    pub seq: u64,
    pub capacity: usize,
    pub superseded: bool,
}

/// Live units at one linearization point. `watermark` is the sequence number
/// of the last put visible in `units`.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub watermark: u64,
    pub units: Vec<(u64, InformationUnit)>,
}

#[derive(Debug, Clone)]
struct Slot {
    seq: u64,
    unit: InformationUnit,
    live: bool,
}

#[derive(Debug, Clone)]
struct State {
    slots: Vec<Slot>,
    live: HashMap<UnitKey, usize>,
    capacity: usize,
    puts_since_sweep: usize,
    seq: u64,
}

impl State {
    fn reindex(&mut self) {
        self.live = self
            .slots
            .iter()
            .enumerate()
            .filter(|(_, s)| s.live)
            .map(|(i, s)| (s.unit.key(), i))
            .collect();
    }

    fn sweep(&mut self, policy: SweepPolicy, now: DateTime<Utc>) -> usize {
        let before = self.slots.len();
        self.slots.retain(|s| s.live && policy.max_age.is_none_or(|age| now - s.unit.timestamp < age));
        self.reindex();
        before - self.slots.len()
    }
}

#[derive(Debug)]
pub struct SharedBuffer {
    config: BufferConfig,
    state: Mutex<State>,
}

impl Default for SharedBuffer {
    fn default() -> Self {
        SharedBuffer::new(BufferConfig::default())
    }
}

impl Clone for SharedBuffer {
    fn clone(&self) -> Self {
        SharedBuffer { config: self.config, state: Mutex::new(self.lock().clone()) }
    }
}

impl SharedBuffer {
    pub fn new(config: BufferConfig) -> Self {
        let capacity = config.initial_capacity.max(1);
        SharedBuffer {
            config: BufferConfig { initial_capacity: capacity, ..config },
            state: Mutex::new(State { slots: Vec::new(), live: HashMap::new(), capacity, puts_since_sweep: 0, seq: 0 }),
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn config(&self) -> BufferConfig {
        self.config
    }

    pub fn put(&self, unit: InformationUnit) -> Result<PutReceipt, BufferError> {
        if let Some(field) = unit.missing_field() {
            return Err(BufferError::MalformedUnit(field));
        }
        let mut st = self.lock();
        let key = unit.key();
        let superseded = match st.live.remove(&key) {
            Some(i) => {
                st.slots[i].live = false;
                true
            }
            None => false,
        };
        if st.slots.len() >= st.capacity {
            st.capacity *= 2;
        }
        st.seq += 1;
        let seq = st.seq;
        let idx = st.slots.len();
        st.slots.push(Slot { seq, unit, live: true });
        st.live.insert(key, idx);
        st.puts_since_sweep += 1;
        if self.config.sweep_every > 0 && st.puts_since_sweep >= self.config.sweep_every {
            st.puts_since_sweep = 0;
            st.sweep(SweepPolicy::default(), DateTime::UNIX_EPOCH);
        }
        Ok(PutReceipt { seq, capacity: st.capacity, superseded })
    }

    /// Tombstones the live unit under `key`; returns it if there was one.
    pub fn retract(&self, key: &UnitKey) -> Option<InformationUnit> {
        let mut st = self.lock();
        let i = st.live.remove(key)?;
        st.slots[i].live = false;
        Some(st.slots[i].unit.clone())
    }

    /// Physically removes tombstones, plus live units older than
    /// `policy.max_age` relative to `now`. A zero age expires every live unit.
    pub fn sweep(&self, policy: SweepPolicy, now: DateTime<Utc>) -> usize {
        let mut st = self.lock();
        st.puts_since_sweep = 0;
        st.sweep(policy, now)
    }

    /// Live units in put order.
    pub fn live(&self) -> Vec<InformationUnit> {
        self.snapshot().units.into_iter().map(|(_, u)| u).collect()
    }

    pub fn snapshot(&self) -> Snapshot {
        let st = self.lock();
        Snapshot {
            watermark: st.seq,
            units: st.slots.iter().filter(|s| s.live).map(|s| (s.seq, s.unit.clone())).collect(),
        }
    }

    pub fn get(&self, key: &UnitKey) -> Option<InformationUnit> {
        let st = self.lock();
        st.live.get(key).map(|&i| st.slots[i].unit.clone())
    }

    pub fn live_count(&self) -> usize {
        self.lock().live.len()
    }

    pub fn slot_count(&self) -> usize {
        self.lock().slots.len()
    }

    pub fn tombstone_count(&self) -> usize {
        let st = self.lock();
        st.slots.len() - st.live.len()
    }

    pub fn capacity(&self) -> usize {
        self.lock().capacity
    }
}
