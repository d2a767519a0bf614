//! The single latest-input cell shared by all client receivers and the
//! simulation loop. Last writer wins; nothing here ever blocks for long.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use apfsim_core::Result;
use nalgebra::Vector3;

use crate::protocol::{parse_client_frame, HandMessage};

/// Where the hand sits until a client says otherwise.
pub const DEFAULT_HAND: [f64; 3] = [10.0, 10.0, 10.0];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HandInput {
    pub hand: Vector3<f64>,
    pub drag: Option<Vector3<f64>>,
    /// Bumped on every accepted write.
    pub seq: u64,
}

#[derive(Debug, Clone)]
pub struct SharedInput {
    cell: Arc<Mutex<HandInput>>,
    malformed: Arc<AtomicU64>,
}

impl Default for SharedInput {
    fn default() -> Self {
        Self::new(Vector3::from(DEFAULT_HAND))
    }
}

impl SharedInput {
    pub fn new(hand: Vector3<f64>) -> Self {
        Self {
            cell: Arc::new(Mutex::new(HandInput { hand, drag: None, seq: 0 })),
            malformed: Arc::new(AtomicU64::new(0)),
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, HandInput> {
        // A panicking writer cannot leave a half-written Copy value behind.
        self.cell.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn latest(&self) -> HandInput {
        *self.lock()
    }

    /// Parses a raw client frame and applies it. Bad frames are counted and
    /// leave the previous input in place.
    pub fn apply_frame(&self, text: &str) -> Result<()> {
        let applied = parse_client_frame(text).and_then(|m| apply_hand_input(self, &m));
        if applied.is_err() {
            self.count_malformed();
        }
        applied
    }

    pub fn count_malformed(&self) {
        self.malformed.fetch_add(1, Ordering::Relaxed);
    }

    pub fn malformed_frames(&self) -> u64 {
        self.malformed.load(Ordering::Relaxed)
    }

    pub fn clear_drag(&self) {
        self.lock().drag = None;
    }

    /// Drops the drag only if nothing newer has been written since `seq`.
    pub fn clear_drag_if_unchanged(&self, seq: u64) {
        let mut cell = self.lock();
        if cell.seq == seq {
            cell.drag = None;
        }
    }
}

/// Validates `msg` and makes it the current input.
pub fn apply_hand_input(input: &SharedInput, msg: &HandMessage) -> Result<()> {
    msg.validate()?;
    let mut cell = input.lock();
    cell.hand = msg.pos();
    cell.drag = msg.drag();
    cell.seq += 1;
    Ok(())
}
