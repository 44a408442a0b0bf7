//! In-memory session table with idle expiry.

use std::collections::HashMap;
use std::sync::{Arc, Mutex as StdMutex};
use std::time::{Duration, Instant};

use rand::RngCore;
use tokio::sync::{Mutex, OwnedMutexGuard};
use unids::pipeline::{GenerationTrace, SessionState};

#[derive(Debug)]
pub struct Session {
    pub state: SessionState,
    pub traces: Vec<GenerationTrace>,
    pub created: Instant,
    pub last_active: Instant,
}

impl Session {
    fn new(now: Instant) -> Self {
        Session {
            state: SessionState::new(),
            traces: Vec::new(),
            created: now,
            last_active: now,
        }
    }

    pub fn reset(&mut self) {
        self.state = SessionState::new();
        self.traces.clear();
        self.last_active = Instant::now();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LookupError {
    NotFound,
    /// Another request holds the session.
    Busy,
}

/// Sessions by id. Each session has its own async mutex; a second request
/// for a held session is rejected rather than queued.
#[derive(Debug)]
pub struct SessionStore {
    ttl: Duration,
    sessions: StdMutex<HashMap<String, Arc<Mutex<Session>>>>,
}

impl SessionStore {
    pub fn new(ttl: Duration) -> Self {
        SessionStore {
            ttl,
            sessions: StdMutex::new(HashMap::new()),
        }
    }

    pub fn ttl(&self) -> Duration {
        self.ttl
    }

    pub fn len(&self) -> usize {
        self.sessions.lock().expect("session table poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Creates a session and returns its id. Expired sessions are evicted
    /// on the way.
    pub fn create(&self) -> String {
        let mut bytes = [0u8; 16];
        rand::thread_rng().fill_bytes(&mut bytes);
        let id = hex::encode(bytes);
        let now = Instant::now();
        let mut table = self.sessions.lock().expect("session table poisoned");
        self.evict(&mut table, now);
        table.insert(id.clone(), Arc::new(Mutex::new(Session::new(now))));
        id
    }

    /// Exclusive access to a live session.
    pub fn acquire(&self, id: &str) -> Result<OwnedMutexGuard<Session>, LookupError> {
        let now = Instant::now();
        let slot = {
            let mut table = self.sessions.lock().expect("session table poisoned");
            let slot = table.get(id).cloned().ok_or(LookupError::NotFound)?;
            // A held session is in use, so it is not idle.
            if let Ok(s) = slot.try_lock() {
                if now.duration_since(s.last_active) > self.ttl {
                    drop(s);
                    table.remove(id);
                    return Err(LookupError::NotFound);
                }
            }
            slot
        };
        let mut guard = slot.try_lock_owned().map_err(|_| LookupError::Busy)?;
        guard.last_active = now;
        Ok(guard)
    }

    fn evict(&self, table: &mut HashMap<String, Arc<Mutex<Session>>>, now: Instant) {
        table.retain(|_, s| match s.try_lock() {
            Ok(s) => now.duration_since(s.last_active) <= self.ttl,
            Err(_) => true,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn second_acquire_is_busy() {
        let store = SessionStore::new(Duration::from_secs(60));
        let id = store.create();
        let held = store.acquire(&id).unwrap();
        assert_eq!(store.acquire(&id).unwrap_err(), LookupError::Busy);
        drop(held);
        assert!(store.acquire(&id).is_ok());
    }

    #[test]
    fn expired_sessions_are_gone() {
        let store = SessionStore::new(Duration::ZERO);
        let id = store.create();
        std::thread::sleep(Duration::from_millis(5));
        assert_eq!(store.acquire(&id).unwrap_err(), LookupError::NotFound);
        assert_eq!(store.acquire("nope").unwrap_err(), LookupError::NotFound);
        assert!(store.is_empty());
    }
}
