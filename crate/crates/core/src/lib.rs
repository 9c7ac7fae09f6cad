//! Learning minimum-cost counterfactual intervention policies and
//! distilling them into explainable programs.
//!
//! The pipeline: declare a domain (features, action DSL with preconditions
//! and base costs, causal graph) in one config file; sample or load a
//! population; wrap any decision function as a counted black box; train the
//! recurrent policy/value agent by imitating tree search over intervention
//! space; generate interventions for new users with a small search budget;
//! and distill the trained agent into a deterministic automaton whose
//! per-node decision trees both pick the next action and explain it with a
//! boolean rule over the user's features.

pub mod agent;
pub mod bench;
pub mod causal;
pub mod classifier;
pub mod config;
pub mod data;
pub mod dsl;
pub mod encoding;
pub mod error;
pub mod inference;
pub mod mcts;
pub mod mlp;
mod persist;
pub mod program;
pub mod replay;
pub mod schema;
pub mod trainer;
pub mod tree;

pub use agent::{select_action, ActionMaskView, AgentConfig, AgentNet, ControllerState};
pub use bench::{run_bench, BenchConfig, BenchReport};
pub use causal::{action_cost, intervention_cost, CausalGraph, CostConfig};
pub use classifier::{BlackBox, Decision, Phase, QueryCounter};
pub use config::{Defaults, Domain, GenerativeSpec, LabelSpec};
pub use data::{load_csv, sample_synthetic, save_csv, split_indices, Dataset};
pub use dsl::{Action, ActionLibrary, FunctionSpec, Intervention, Precondition};
pub use encoding::BinaryEncoding;
pub use error::{Error, Result};
pub use inference::{generate_intervention, InterventionOutcome};
pub use mcts::{compute_l, compute_reward, run_episode, EpisodeOutcome, SearchParams};
pub use mlp::{train_mlp, Mlp, MlpClassifier, MlpConfig};
pub use program::{
    build_automaton, run_program, sample_traces, sequence_similarity, train_program,
    ExplainableProgram, ProgramRun, SampledTrace,
};
pub use replay::{InterventionTrace, ReplayBuffer, TraceStep};
pub use schema::{Feature, FeatureKind, FeatureSchema, UserState, Value};
pub use trainer::{train, TrainSchedule, TrainingLog};
pub use tree::{DecisionTree, Rule, TreeConfig};
