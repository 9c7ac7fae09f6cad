//! Intervention traces and the bounded replay buffer.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::agent::ControllerState;
use crate::dsl::{Action, ActionLibrary, Intervention};

/// One supervised step of a trace: the states around the action, the
/// controller state the step was computed from, the masks search saw, and
/// the search-improved policy targets.
#[derive(Debug, Clone)]
pub struct TraceStep {
    pub state_before: crate::schema::UserState,
    pub state_after: crate::schema::UserState,
    pub bits_before: Vec<f64>,
    pub controller: ControllerState,
    pub function_mask: Vec<bool>,
    pub arg_mask: Vec<bool>,
    pub action: Action,
    pub target_pi_f: Vec<f64>,
    pub target_pi_x: Vec<f64>,
    /// Terminal episode reward, broadcast to every step.
    pub reward: f64,
}

#[derive(Debug, Clone)]
pub struct InterventionTrace {
    pub steps: Vec<TraceStep>,
    pub success: bool,
    pub reward: f64,
}

impl InterventionTrace {
    pub fn intervention(&self) -> Intervention {
        Intervention { actions: self.steps.iter().map(|s| s.action).collect() }
    }

    pub fn effective_len(&self, lib: &ActionLibrary) -> usize {
        self.intervention().effective_len(lib)
    }
}

/// Bounded FIFO of successful traces.
#[derive(Debug)]
pub struct ReplayBuffer {
    traces: VecDeque<InterventionTrace>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { traces: VecDeque::with_capacity(capacity.min(4096)), capacity }
    }

    /// Pushes a successful trace, evicting the oldest at capacity.
    /// Unsuccessful traces are rejected.
    pub fn push(&mut self, trace: InterventionTrace) -> bool {
        if !trace.success {
            return false;
        }
        if self.traces.len() == self.capacity {
            self.traces.pop_front();
        }
        self.traces.push_back(trace);
        true
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &InterventionTrace> {
        self.traces.iter()
    }

    /// Samples up to `k` distinct traces uniformly.
    pub fn sample<'a>(&'a self, rng: &mut ChaCha8Rng, k: usize) -> Vec<&'a InterventionTrace> {
        let n = self.traces.len();
        if n == 0 {
            return Vec::new();
        }
        let k = k.min(n);
        // Partial Fisher-Yates over indices.
        let mut idx: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = rng.gen_range(i..n);
            idx.swap(i, j);
        }
        idx[..k].iter().map(|&i| &self.traces[i]).collect()
    }

    pub fn oldest(&self) -> Option<&InterventionTrace> {
        self.traces.front()
    }
}
