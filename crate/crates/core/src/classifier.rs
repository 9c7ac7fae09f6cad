//! The black-box decision interface and query accounting.
//!
//! Everything that consumes the classifier goes through [`BlackBox::predict`],
//! which bumps a phase-tagged counter on every call. Harness-side scoring
//! (measuring whether a finished intervention actually flipped the outcome)
//! uses [`BlackBox::score_uncounted`] so reported query counts reflect only
//! what the models themselves asked.

use std::sync::atomic::{AtomicU64, AtomicU8, Ordering};
use std::sync::Arc;

use crate::config::{Domain, LabelSpec};
use crate::schema::{FeatureSchema, UserState};

/// Which stage of the pipeline is issuing queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train = 0,
    Inference = 1,
    DistillTrain = 2,
    DistillPredict = 3,
}

pub const PHASES: [Phase; 4] =
    [Phase::Train, Phase::Inference, Phase::DistillTrain, Phase::DistillPredict];

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Train => "train",
            Phase::Inference => "inference",
            Phase::DistillTrain => "distill-train",
            Phase::DistillPredict => "distill-predict",
        }
    }
}

/// Monotone per-phase counters of predict calls.
#[derive(Debug, Default)]
pub struct QueryCounter {
    counts: [AtomicU64; 4],
}

impl QueryCounter {
    pub fn count(&self, phase: Phase) -> u64 {
        self.counts[phase as usize].load(Ordering::Relaxed)
    }

    pub fn total(&self) -> u64 {
        PHASES.iter().map(|p| self.count(*p)).sum()
    }

    pub fn snapshot(&self) -> [u64; 4] {
        [
            self.count(Phase::Train),
            self.count(Phase::Inference),
            self.count(Phase::DistillTrain),
            self.count(Phase::DistillPredict),
        ]
    }

    fn bump(&self, phase: Phase) {
        self.counts[phase as usize].fetch_add(1, Ordering::Relaxed);
    }
}

/// A deterministic decision function over user states.
pub trait Decision: Send + Sync {
    fn decide(&self, state: &UserState) -> bool;
}

/// The domain's hand-written decision formula, evaluated on feature levels.
pub struct FormulaClassifier {
    schema: FeatureSchema,
    label: LabelSpec,
}

impl FormulaClassifier {
    pub fn from_domain(domain: &Domain) -> Option<Self> {
        domain
            .label
            .clone()
            .map(|label| Self { schema: domain.schema.clone(), label })
    }
}

impl Decision for FormulaClassifier {
    fn decide(&self, state: &UserState) -> bool {
        self.label.evaluate(&self.schema, state)
    }
}

/// Counting wrapper around any decision function. Cloning shares the model,
/// the counters and the active phase.
#[derive(Clone)]
pub struct BlackBox {
    inner: Arc<dyn Decision>,
    counter: Arc<QueryCounter>,
    phase: Arc<AtomicU8>,
}

impl BlackBox {
    pub fn new(inner: Arc<dyn Decision>) -> Self {
        Self {
            inner,
            counter: Arc::new(QueryCounter::default()),
            phase: Arc::new(AtomicU8::new(Phase::Train as u8)),
        }
    }

    pub fn formula(domain: &Domain) -> Option<Self> {
        FormulaClassifier::from_domain(domain).map(|f| Self::new(Arc::new(f)))
    }

    pub fn set_phase(&self, phase: Phase) {
        self.phase.store(phase as u8, Ordering::Relaxed);
    }

    pub fn phase(&self) -> Phase {
        match self.phase.load(Ordering::Relaxed) {
            0 => Phase::Train,
            1 => Phase::Inference,
            2 => Phase::DistillTrain,
            _ => Phase::DistillPredict,
        }
    }

    /// True = favourable. Counted against the active phase.
    pub fn predict(&self, state: &UserState) -> bool {
        self.counter.bump(self.phase());
        self.inner.decide(state)
    }

    /// Harness-side scoring that bypasses the counters. Never use this
    /// inside search, training, or program execution.
    pub fn score_uncounted(&self, state: &UserState) -> bool {
        self.inner.decide(state)
    }

    pub fn counter(&self) -> &QueryCounter {
        &self.counter
    }
}
