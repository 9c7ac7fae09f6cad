//! Distilling the trained agent into a deterministic, explainable automaton.
//!
//! Successful interventions are sampled from the agent, unrolled into an
//! automaton with one node per library function (plus the INTERVENE start
//! node and a STOP sink), and each node learns a decision tree predicting
//! its outgoing transition from the binary state. Executing the program
//! never touches the black-box classifier; every step comes with the rule
//! extracted from the decision path that chose it.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::agent::AgentNet;
use crate::classifier::{BlackBox, Phase};
use crate::config::Domain;
use crate::dsl::{Action, Intervention};
use crate::error::{Error, Result};
use crate::inference::generate_intervention;
use crate::schema::UserState;
use crate::tree::{DecisionTree, Rule, TreeConfig};

pub const INTERVENE: &str = "INTERVENE";
const PROGRAM_VERSION: u32 = 1;

/// One sampled supervision trace: the initial state and the
/// (state-before, action) pair of every step, ending with STOP.
#[derive(Debug, Clone)]
pub struct SampledTrace {
    pub initial: UserState,
    pub steps: Vec<(UserState, Action)>,
}

/// Collects `m` successful traces by running the trained agent over the
/// user pool (cycling, skipping failures). Queries raised here are tagged
/// distill-train.
pub fn sample_traces(
    domain: &Domain,
    bb: &BlackBox,
    agent: &AgentNet,
    users: &[UserState],
    m: usize,
    sims: usize,
    alpha: usize,
    attempt_multiplier: usize,
) -> Result<Vec<SampledTrace>> {
    if m == 0 {
        return Err(Error::Config("need a positive trace budget".into()));
    }
    bb.set_phase(Phase::DistillTrain);
    let budget = m.saturating_mul(attempt_multiplier.max(1)).max(users.len());
    let mut traces = Vec::with_capacity(m);
    let mut attempts = 0;
    let d = &domain.defaults;
    'outer: loop {
        if users.is_empty() {
            break;
        }
        for user in users {
            if traces.len() == m {
                break 'outer;
            }
            if attempts == budget {
                break 'outer;
            }
            attempts += 1;
            if bb.predict(user) {
                continue; // already favourable, nothing to flip
            }
            let out = generate_intervention(
                domain, bb, agent, user, sims, alpha, d.lambda, d.c_puct, d.beta,
            )?;
            if !out.success {
                continue;
            }
            let mut steps = Vec::with_capacity(out.actions.actions.len());
            let mut state = user.clone();
            for &a in &out.actions.actions {
                steps.push((state.clone(), a));
                state = domain.library.apply_action(&domain.schema, &state, a)?;
            }
            traces.push(SampledTrace { initial: user.clone(), steps });
        }
    }
    if traces.len() < m {
        return Err(Error::InsufficientTraces { wanted: m, got: traces.len(), attempts });
    }
    Ok(traces)
}

/// The automaton before the trees are fitted: stored decision pairs per
/// node.
#[derive(Debug, Clone)]
pub struct RawAutomaton {
    /// Index 0 is INTERVENE; node `f + 1` belongs to library function `f`
    /// (the STOP function's node is the sink and stays empty).
    pub nodes: Vec<RawNode>,
}

#[derive(Debug, Clone)]
pub struct RawNode {
    pub name: String,
    /// (binary state, raw state, chosen transition) triples.
    pub pairs: Vec<(Vec<u8>, UserState, Action)>,
}

/// Unrolls traces into the automaton: each decision `(s_i, a_i)` is stored
/// at the node of the function executed just before it (INTERVENE for the
/// first step), and the labeled arc points at `a_i`'s function node.
pub fn build_automaton(domain: &Domain, traces: &[SampledTrace]) -> Result<RawAutomaton> {
    if traces.is_empty() {
        return Err(Error::Config("cannot build an automaton from no traces".into()));
    }
    let lib = &domain.library;
    let mut nodes = vec![RawNode { name: INTERVENE.into(), pairs: Vec::new() }];
    for f in lib.functions() {
        nodes.push(RawNode { name: f.name.clone(), pairs: Vec::new() });
    }
    for trace in traces {
        let mut current = 0usize;
        for (state, action) in &trace.steps {
            if action.func >= lib.function_count() {
                return Err(Error::Schema(format!(
                    "trace references unknown function index {}",
                    action.func
                )));
            }
            let bits = domain.encoding.encode(&domain.schema, state);
            nodes[current].pairs.push((bits, state.clone(), *action));
            current = action.func + 1;
        }
    }
    Ok(RawAutomaton { nodes })
}

/// A trained node: a constant arc when all stored transitions agree,
/// otherwise a decision tree over the binary state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum ProgramNode {
    Constant(Action),
    Tree(DecisionTree),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExplainableProgram {
    pub domain_name: String,
    pub alpha: usize,
    /// Runnable nodes keyed by name; nodes never visited by any trace are
    /// left out.
    pub nodes: BTreeMap<String, ProgramNode>,
}

/// Fits the per-node classifiers once; the program is fixed afterwards.
pub fn train_program(
    domain: &Domain,
    raw: &RawAutomaton,
    cfg: &TreeConfig,
    alpha: usize,
) -> ExplainableProgram {
    let lib = &domain.library;
    let render = |a: Action| lib.render_action(a, &domain.schema);
    let mut nodes = BTreeMap::new();
    for node in &raw.nodes {
        if node.name == crate::dsl::STOP_NAME || node.pairs.is_empty() {
            continue;
        }
        let mut unique: Vec<Action> = node.pairs.iter().map(|p| p.2).collect();
        unique.sort();
        unique.dedup();
        let trained = if unique.len() == 1 {
            ProgramNode::Constant(unique[0])
        } else {
            let samples: Vec<(Vec<u8>, Action)> =
                node.pairs.iter().map(|(b, _, a)| (b.clone(), *a)).collect();
            ProgramNode::Tree(DecisionTree::fit(&samples, cfg, &render))
        };
        nodes.insert(node.name.clone(), trained);
    }
    ExplainableProgram { domain_name: domain.name.clone(), alpha, nodes }
}

/// Result of executing the program on one user. `success` means STOP was
/// reached within the length limit with every predicted action feasible;
/// whether the outcome actually flipped is for the caller to score.
#[derive(Debug, Clone)]
pub struct ProgramRun {
    pub success: bool,
    pub failure: Option<String>,
    pub intervention: Intervention,
    pub rules: Vec<Rule>,
    pub rule_texts: Vec<String>,
    pub final_state: UserState,
    pub time_ms: f64,
}

/// Traverses the automaton from INTERVENE, predicting each transition with
/// the node's classifier and applying it. Makes no classifier queries.
pub fn run_program(domain: &Domain, program: &ExplainableProgram, s0: &UserState) -> ProgramRun {
    let start = Instant::now();
    let lib = &domain.library;
    let mut state = s0.clone();
    let mut node_name = INTERVENE.to_string();
    let mut actions = Vec::new();
    let mut rules = Vec::new();
    let mut rule_texts = Vec::new();
    let mut failure = None;
    let mut success = false;
    loop {
        if actions.len() >= program.alpha {
            failure = Some("length limit reached before STOP".to_string());
            break;
        }
        let Some(node) = program.nodes.get(&node_name) else {
            failure = Some(format!("no trained node `{node_name}`"));
            break;
        };
        let (action, rule) = match node {
            ProgramNode::Constant(a) => (*a, Rule::default()),
            ProgramNode::Tree(tree) => {
                let bits = domain.encoding.encode(&domain.schema, &state);
                tree.predict_with_path(&bits)
            }
        };
        match lib.check_precondition(&domain.schema, &state, action) {
            Ok(true) => {}
            Ok(false) => {
                failure = Some(format!(
                    "predicted action `{}` violates its precondition",
                    lib.render_action(action, &domain.schema)
                ));
                break;
            }
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        }
        state = match lib.apply_action(&domain.schema, &state, action) {
            Ok(s) => s,
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        };
        rule_texts.push(rule.render(&domain.schema, &domain.encoding));
        rules.push(rule);
        actions.push(action);
        if lib.is_stop(action) {
            success = true;
            break;
        }
        node_name = lib.function(action.func).name.clone();
    }
    ProgramRun {
        success,
        failure,
        intervention: Intervention { actions },
        rules,
        rule_texts,
        final_state: state,
        time_ms: start.elapsed().as_secs_f64() * 1e3,
    }
}

/// 1 minus the normalized edit distance between action sequences; 1.0 iff
/// identical.
pub fn sequence_similarity(a: &[Action], b: &[Action]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let dist = levenshtein(a, b);
    1.0 - dist as f64 / a.len().max(b.len()) as f64
}

fn levenshtein(a: &[Action], b: &[Action]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, ai) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, bj) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ai != bj);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[derive(Serialize, Deserialize)]
struct ProgramFile {
    version: u32,
    program: ExplainableProgram,
}

impl ExplainableProgram {
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = ProgramFile { version: PROGRAM_VERSION, program: self.clone() };
        std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
        Ok(())
    }

    pub fn load(path: &Path, domain: &Domain) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: ProgramFile = serde_json::from_str(&text)?;
        if file.version != PROGRAM_VERSION {
            return Err(Error::Config(format!(
                "program file version {} unsupported",
                file.version
            )));
        }
        if file.program.domain_name != domain.name {
            return Err(Error::Config(format!(
                "program was distilled for `{}`, not `{}`",
                file.program.domain_name, domain.name
            )));
        }
        Ok(file.program)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::Value;

    fn syn() -> Domain {
        Domain::builtin("syn").unwrap()
    }

    fn mk_state(domain: &Domain, edu: usize, income: f64) -> UserState {
        // education, job, income, house, relation, age, sex, savings,
        // dependents, city
        UserState::new(
            &domain.schema,
            vec![
                Value::Cat(edu),
                Value::Cat(1),
                Value::Num(income),
                Value::Cat(0),
                Value::Cat(0),
                Value::Num(30.0),
                Value::Cat(0),
                Value::Num(500.0),
                Value::Cat(0),
                Value::Cat(1),
            ],
        )
        .unwrap()
    }

    fn act(domain: &Domain, f: &str, arg: usize) -> Action {
        Action { func: domain.library.function_index(f).unwrap(), arg: Some(arg) }
    }

    #[test]
    fn single_trace_automaton_shape() {
        let domain = syn();
        let stop = Action::stop(&domain.library);
        let edu_up = act(&domain, "CHANGE_EDUCATION", 2);
        let s0 = mk_state(&domain, 0, 4000.0);
        let s1 = domain.library.apply_action(&domain.schema, &s0, edu_up).unwrap();
        let trace =
            SampledTrace { initial: s0.clone(), steps: vec![(s0, edu_up), (s1, stop)] };
        let raw = build_automaton(&domain, &[trace]).unwrap();
        assert_eq!(raw.nodes[0].name, INTERVENE);
        assert_eq!(raw.nodes[0].pairs.len(), 1);
        let edu_node = &raw.nodes[edu_up.func + 1];
        assert_eq!(edu_node.name, "CHANGE_EDUCATION");
        assert_eq!(edu_node.pairs.len(), 1);
        assert_eq!(edu_node.pairs[0].2, stop);
        // Unvisited nodes exist in the raw automaton but not in the program.
        let program = train_program(&domain, &raw, &TreeConfig::default(), 10);
        assert!(program.nodes.contains_key(INTERVENE));
        assert!(program.nodes.contains_key("CHANGE_EDUCATION"));
        assert!(!program.nodes.contains_key("CHANGE_JOB"));
        assert!(!program.nodes.contains_key(crate::dsl::STOP_NAME));
        // Both trained nodes saw a single label, so they are constant arcs.
        assert!(matches!(program.nodes[INTERVENE], ProgramNode::Constant(_)));
    }

    #[test]
    fn diverging_traces_store_two_pairs_and_fit_a_tree() {
        let domain = syn();
        let stop = Action::stop(&domain.library);
        let edu_up = act(&domain, "CHANGE_EDUCATION", 2);
        let job_up = act(&domain, "CHANGE_JOB", 2);
        // Users differing in education pick different first actions.
        let a0 = mk_state(&domain, 0, 4000.0);
        let a1 = domain.library.apply_action(&domain.schema, &a0, edu_up).unwrap();
        let b0 = mk_state(&domain, 2, 4000.0);
        let b1 = domain.library.apply_action(&domain.schema, &b0, job_up).unwrap();
        let traces = vec![
            SampledTrace { initial: a0.clone(), steps: vec![(a0.clone(), edu_up), (a1, stop)] },
            SampledTrace { initial: b0.clone(), steps: vec![(b0.clone(), job_up), (b1, stop)] },
        ];
        let raw = build_automaton(&domain, &traces).unwrap();
        assert_eq!(raw.nodes[0].pairs.len(), 2);
        let program = train_program(&domain, &raw, &TreeConfig::default(), 10);
        match &program.nodes[INTERVENE] {
            ProgramNode::Tree(tree) => {
                let bits_a = domain.encoding.encode(&domain.schema, &a0);
                let bits_b = domain.encoding.encode(&domain.schema, &b0);
                assert_eq!(tree.predict(&bits_a), edu_up);
                assert_eq!(tree.predict(&bits_b), job_up);
                assert!(tree.depth() >= 1);
            }
            other => panic!("expected a tree, got {other:?}"),
        }
        // Program execution replays either trace without any black box.
        let run = run_program(&domain, &program, &a0);
        assert!(run.success, "{:?}", run.failure);
        assert_eq!(run.intervention.actions.first(), Some(&edu_up));
        assert!(run.intervention.ends_with_stop(&domain.library));
        // Each step's rule is satisfied by the state it was emitted for.
        let mut state = a0.clone();
        for (action, rule) in run.intervention.actions.iter().zip(&run.rules) {
            let bits = domain.encoding.encode(&domain.schema, &state);
            assert!(rule.satisfied_by(&bits));
            state = domain.library.apply_action(&domain.schema, &state, *action).unwrap();
        }
    }

    #[test]
    fn length_limit_marks_failure() {
        let domain = syn();
        // A program whose INTERVENE node always emits the same non-STOP
        // action will loop until the limit.
        let edu_up = act(&domain, "CHANGE_EDUCATION", 4);
        let mut nodes = BTreeMap::new();
        nodes.insert(INTERVENE.to_string(), ProgramNode::Constant(edu_up));
        nodes.insert("CHANGE_EDUCATION".to_string(), ProgramNode::Constant(edu_up));
        let program =
            ExplainableProgram { domain_name: domain.name.clone(), alpha: 10, nodes };
        let run = run_program(&domain, &program, &mk_state(&domain, 0, 4000.0));
        assert!(!run.success);
        // The second prediction is a self-assignment and fails its
        // precondition first.
        assert!(run.failure.unwrap().contains("precondition"));
        let run2 = {
            // With upgrades available each time the limit fires instead.
            let skill_like = act(&domain, "CHANGE_RELATION", 1);
            let mut nodes = BTreeMap::new();
            nodes.insert(INTERVENE.to_string(), ProgramNode::Constant(skill_like));
            nodes.insert(
                "CHANGE_RELATION".to_string(),
                ProgramNode::Constant(act(&domain, "CHANGE_RELATION", 2)),
            );
            // relation flips between two values forever
            let program =
                ExplainableProgram { domain_name: domain.name.clone(), alpha: 6, nodes };
            run_program(&domain, &program, &mk_state(&domain, 0, 4000.0))
        };
        assert!(!run2.success);
        assert!(run2.failure.unwrap().contains("length limit"));
        assert_eq!(run2.intervention.actions.len(), 6);
    }

    #[test]
    fn similarity_anchors() {
        let a = |f| Action { func: f, arg: Some(0) };
        assert_eq!(sequence_similarity(&[a(1), a(2)], &[a(1), a(2)]), 1.0);
        assert_eq!(sequence_similarity(&[a(1), a(2)], &[a(3), a(4)]), 0.0);
        let s = sequence_similarity(&[a(1), a(2), a(3)], &[a(1), a(3)]);
        assert!((s - (1.0 - 1.0 / 3.0)).abs() < 1e-12);
        assert_eq!(sequence_similarity(&[], &[]), 1.0);
        assert_eq!(sequence_similarity(&[a(1)], &[]), 0.0);
    }

    #[test]
    fn program_file_round_trips_behavior() {
        let domain = syn();
        let stop = Action::stop(&domain.library);
        let edu_up = act(&domain, "CHANGE_EDUCATION", 2);
        let s0 = mk_state(&domain, 0, 4000.0);
        let s1 = domain.library.apply_action(&domain.schema, &s0, edu_up).unwrap();
        let trace =
            SampledTrace { initial: s0.clone(), steps: vec![(s0.clone(), edu_up), (s1, stop)] };
        let raw = build_automaton(&domain, &[trace]).unwrap();
        let program = train_program(&domain, &raw, &TreeConfig::default(), 10);
        let dir = std::env::temp_dir().join("recourse_core_program_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("program.json");
        program.save(&path).unwrap();
        let back = ExplainableProgram::load(&path, &domain).unwrap();
        let a = run_program(&domain, &program, &s0);
        let b = run_program(&domain, &back, &s0);
        assert_eq!(a.intervention, b.intervention);
        assert_eq!(a.rule_texts, b.rule_texts);
        let other = Domain::builtin("syn_long").unwrap();
        assert!(ExplainableProgram::load(&path, &other).is_err());
    }
}
