//! UCT search over intervention space, guided by the agent's policies.
//!
//! Each tree node is a user state at some step; arcs are actions. Selection
//! maximizes Q + U + L where U is the prior-weighted visit bonus and L is an
//! effort score `exp(-(cost + beta * repeat_calls))` discouraging expensive
//! actions and repeated use of the same function. Terminal leaves (reached
//! via STOP) are scored by querying the black box; other leaves use the
//! agent's value head.

use crate::agent::{ActionMaskView, AgentNet, ControllerState};
use crate::causal::{action_cost, CausalGraph, CostConfig};
use crate::classifier::BlackBox;
use crate::config::Domain;
use crate::dsl::{Action, ActionLibrary};
use crate::error::{Error, Result};
use crate::replay::{InterventionTrace, TraceStep};
use crate::schema::{FeatureSchema, UserState};

#[derive(Debug, Clone)]
pub struct SearchParams {
    /// Simulations per move.
    pub sims: usize,
    /// Maximum intervention length, STOP included.
    pub alpha: usize,
    /// Visit-count temperature for the improved policies.
    pub tau: f64,
    /// Length penalty of the reward.
    pub lambda: f64,
    pub c_puct: f64,
    /// Weight of the repeated-function penalty inside L.
    pub beta: f64,
}

impl SearchParams {
    pub fn from_defaults(d: &crate::config::Defaults, sims: usize, tau: f64) -> Self {
        Self { sims, alpha: d.alpha, tau, lambda: d.lambda, c_puct: d.c_puct, beta: d.beta }
    }

    fn validate(&self) -> Result<()> {
        if self.sims == 0 {
            return Err(Error::Config("search budget must be positive".into()));
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(Error::Config(format!("lambda must be in (0, 1), got {}", self.lambda)));
        }
        Ok(())
    }
}

/// r = lambda^T if the outcome flipped, else 0. T counts non-STOP actions.
pub fn compute_reward(len_nonstop: usize, flipped: bool, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::Config(format!("lambda must be in (0, 1), got {lambda}")));
    }
    Ok(if flipped { lambda.powi(len_nonstop as i32) } else { 0.0 })
}

/// L(s, a) = exp(-(C(a, s) + beta * prior calls of a's function)).
pub fn compute_l(
    schema: &FeatureSchema,
    lib: &ActionLibrary,
    graph: &CausalGraph,
    cfg: &CostConfig,
    state: &UserState,
    action: Action,
    history: &[Action],
    beta: f64,
) -> f64 {
    let cost = action_cost(schema, lib, graph, cfg, state, action, history);
    let count = history.iter().filter(|a| a.func == action.func).count();
    (-(cost + beta * count as f64)).exp()
}

/// Per-node search statistics, indexed by the flat action vocabulary.
pub struct SearchNode {
    pub state: UserState,
    bits: Vec<f64>,
    /// Actions taken since the episode root (played moves plus tree path).
    pub depth: usize,
    history: Vec<Action>,
    ctrl_in: ControllerState,
    /// Exact value for terminal nodes; `flipped` holds the query outcome.
    terminal: Option<f64>,
    pub flipped: bool,
    expanded: bool,
    function_mask: Vec<bool>,
    arg_mask: Vec<bool>,
    prior: Vec<f64>,
    l_score: Vec<f64>,
    pub n: Vec<u32>,
    pub w: Vec<f64>,
    child: Vec<Option<usize>>,
    ctrl_out: Option<ControllerState>,
}

impl SearchNode {
    fn new(state: UserState, ctrl_in: ControllerState, depth: usize, history: Vec<Action>) -> Self {
        Self {
            state,
            bits: Vec::new(),
            depth,
            history,
            ctrl_in,
            terminal: None,
            flipped: false,
            expanded: false,
            function_mask: Vec::new(),
            arg_mask: Vec::new(),
            prior: Vec::new(),
            l_score: Vec::new(),
            n: Vec::new(),
            w: Vec::new(),
            child: Vec::new(),
            ctrl_out: None,
        }
    }

    pub fn q(&self, a: usize) -> f64 {
        if self.n[a] == 0 {
            0.0
        } else {
            self.w[a] / self.n[a] as f64
        }
    }

    pub fn total_visits(&self) -> u32 {
        self.n.iter().sum()
    }
}

/// One search tree rooted at the current episode state.
pub struct SearchTree<'a> {
    domain: &'a Domain,
    bb: &'a BlackBox,
    agent: &'a AgentNet,
    params: &'a SearchParams,
    nodes: Vec<SearchNode>,
}

impl<'a> SearchTree<'a> {
    pub fn new(
        domain: &'a Domain,
        bb: &'a BlackBox,
        agent: &'a AgentNet,
        params: &'a SearchParams,
        state: UserState,
        ctrl: ControllerState,
        depth: usize,
        history: Vec<Action>,
    ) -> Result<Self> {
        let mut tree = Self { domain, bb, agent, params, nodes: Vec::with_capacity(params.sims + 1) };
        tree.nodes.push(SearchNode::new(state, ctrl, depth, history));
        tree.expand(0)?;
        Ok(tree)
    }

    pub fn root(&self) -> &SearchNode {
        &self.nodes[0]
    }

    /// Action mask at a node: valid actions, narrowed to STOP alone when
    /// this is the last slot before the length limit.
    fn masks(&self, state: &UserState, depth: usize) -> (Vec<bool>, Vec<bool>) {
        let lib = &self.domain.library;
        let mut flat = lib.action_mask(&self.domain.schema, state);
        if depth + 1 >= self.params.alpha {
            let stop = lib.action_index(Action::stop(lib));
            for (i, m) in flat.iter_mut().enumerate() {
                *m = i == stop;
            }
        }
        let view = ActionMaskView::from_flat(lib, &flat);
        (view.functions, flat)
    }

    fn expand(&mut self, idx: usize) -> Result<f64> {
        let lib = &self.domain.library;
        let count = lib.action_count();
        let (state, depth, ctrl_in) = {
            let node = &self.nodes[idx];
            (node.state.clone(), node.depth, node.ctrl_in.clone())
        };
        let (function_mask, arg_mask) = self.masks(&state, depth);
        let bits = self.domain.encoding.encode_f64(&self.domain.schema, &state);
        let mask = ActionMaskView { functions: function_mask.clone(), args: arg_mask.clone() };
        let out = self.agent.forward(&bits, &ctrl_in, &mask)?;
        let mut prior = vec![0.0; count];
        let mut l_score = vec![0.0; count];
        for i in 0..count {
            if !arg_mask[i] {
                continue;
            }
            let a = lib.action_from_index(i);
            prior[i] = out.pi_f[a.func] * if lib.is_stop(a) { 1.0 } else { out.pi_x[i] };
            l_score[i] = compute_l(
                &self.domain.schema,
                lib,
                &self.domain.graph,
                &self.domain.cost,
                &state,
                a,
                &self.nodes[idx].history,
                self.params.beta,
            );
        }
        let node = &mut self.nodes[idx];
        node.bits = bits;
        node.function_mask = function_mask;
        node.arg_mask = arg_mask;
        node.prior = prior;
        node.l_score = l_score;
        node.n = vec![0; count];
        node.w = vec![0.0; count];
        node.child = vec![None; count];
        node.ctrl_out = Some(out.next);
        node.expanded = true;
        Ok(out.value)
    }

    /// UCT criterion: argmax over valid actions of Q + U + L, ties to the
    /// lowest action index.
    pub fn uct_select(&self, idx: usize) -> Result<usize> {
        let node = &self.nodes[idx];
        if !node.expanded {
            return Err(Error::Config("uct_select on an unexpanded node".into()));
        }
        let sqrt_total = (node.total_visits() as f64).sqrt();
        let mut best = None;
        let mut best_score = f64::NEG_INFINITY;
        for a in 0..node.arg_mask.len() {
            if !node.arg_mask[a] {
                continue;
            }
            let u = self.params.c_puct * node.prior[a] * sqrt_total / (1.0 + node.n[a] as f64);
            let score = node.q(a) + u + node.l_score[a];
            if score > best_score {
                best_score = score;
                best = Some(a);
            }
        }
        best.ok_or(Error::DegenerateMask)
    }

    /// Creates (if needed) the child reached by `flat` from `idx`. STOP
    /// children are terminal and scored against the black box on creation.
    fn child_of(&mut self, idx: usize, flat: usize) -> Result<usize> {
        if let Some(c) = self.nodes[idx].child[flat] {
            return Ok(c);
        }
        let lib = &self.domain.library;
        let action = lib.action_from_index(flat);
        let (state, depth, history, ctrl_out) = {
            let node = &self.nodes[idx];
            (
                node.state.clone(),
                node.depth,
                node.history.clone(),
                node.ctrl_out.clone().expect("parent is expanded"),
            )
        };
        let mut child = if lib.is_stop(action) {
            let flipped = self.bb.predict(&state);
            let reward = compute_reward(depth, flipped, self.params.lambda)?;
            let mut c = SearchNode::new(state, ctrl_out, depth, history);
            c.terminal = Some(reward);
            c.flipped = flipped;
            c
        } else {
            let next = lib.apply_action(&self.domain.schema, &state, action)?;
            let mut history = history;
            history.push(action);
            SearchNode::new(next, ctrl_out, depth + 1, history)
        };
        child.history.shrink_to_fit();
        let ci = self.nodes.len();
        self.nodes.push(child);
        self.nodes[idx].child[flat] = Some(ci);
        Ok(ci)
    }

    /// One simulation: select to a leaf, expand or read its value, then
    /// backpropagate along the path.
    pub fn simulate(&mut self) -> Result<()> {
        let mut path: Vec<(usize, usize)> = Vec::new();
        let mut cur = 0usize;
        let value = loop {
            if let Some(v) = self.nodes[cur].terminal {
                break v;
            }
            if !self.nodes[cur].expanded {
                break self.expand(cur)?;
            }
            let a = self.uct_select(cur)?;
            let child = self.child_of(cur, a)?;
            path.push((cur, a));
            cur = child;
        };
        for (node, a) in path {
            self.nodes[node].n[a] += 1;
            self.nodes[node].w[a] += value;
        }
        Ok(())
    }

    /// Visit-count policy at the root: joint distribution proportional to
    /// N^(1/tau), marginalized over functions, with per-block conditionals.
    /// A near-zero tau collapses to the visit argmax.
    pub fn improved_policy(&self, tau: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let root = self.root();
        let lib = &self.domain.library;
        if root.total_visits() == 0 {
            return Err(Error::Config("improved policy needs at least one visit".into()));
        }
        let count = lib.action_count();
        let mut joint = vec![0.0; count];
        if tau < 1e-9 {
            joint[self.best_action_flat()] = 1.0;
        } else {
            let max_ln = root
                .n
                .iter()
                .filter(|n| **n > 0)
                .map(|n| (*n as f64).ln())
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (a, &n) in root.n.iter().enumerate() {
                if n > 0 {
                    joint[a] = (((n as f64).ln() - max_ln) / tau).exp();
                    total += joint[a];
                }
            }
            for v in &mut joint {
                *v /= total;
            }
        }
        let mut pi_f = vec![0.0; lib.function_count()];
        let mut pi_x = vec![0.0; count];
        for f in 0..lib.function_count() {
            let off = lib.block_offset(f);
            let len = lib.block_len(f);
            let mass: f64 = joint[off..off + len].iter().sum();
            pi_f[f] = mass;
            if mass > 0.0 {
                for i in off..off + len {
                    pi_x[i] = joint[i] / mass;
                }
            }
        }
        Ok((pi_f, pi_x))
    }

    /// Most-visited root action, ties to the lowest flat index.
    pub fn best_action_flat(&self) -> usize {
        let root = self.root();
        let mut best = 0;
        let mut best_n = 0u32;
        let mut seen = false;
        for (a, &n) in root.n.iter().enumerate() {
            if root.arg_mask[a] && (!seen || n > best_n) {
                best = a;
                best_n = n;
                seen = true;
            }
        }
        best
    }

    fn root_ctrl_out(&self) -> ControllerState {
        self.root().ctrl_out.clone().expect("root is expanded")
    }

    /// Invariant check used by tests: per-edge visits are consistent and
    /// every Q stays within [0, 1].
    pub fn check_consistency(&self) -> bool {
        self.nodes.iter().all(|node| {
            if !node.expanded {
                return true;
            }
            let edge_sum: u32 = node.n.iter().sum();
            let child_ok = node.n.iter().enumerate().all(|(a, &n)| {
                (0.0..=1.0 + 1e-12).contains(&node.q(a))
                    && (n == 0 || node.child[a].is_some())
            });
            child_ok && edge_sum == node.total_visits()
        })
    }
}

/// Result of one full episode.
#[derive(Debug, Clone)]
pub struct EpisodeOutcome {
    pub trace: InterventionTrace,
    pub success: bool,
    pub final_state: UserState,
    pub reward: f64,
}

/// Plays one search-guided episode from an unfavourably classified root.
/// Each move runs `params.sims` simulations, extracts the improved
/// policies, and plays the visit argmax; the episode ends with STOP or at
/// the length limit (a failure).
pub fn run_episode(
    domain: &Domain,
    bb: &BlackBox,
    agent: &AgentNet,
    root: &UserState,
    params: &SearchParams,
) -> Result<EpisodeOutcome> {
    params.validate()?;
    let lib = &domain.library;
    let mut state = root.clone();
    let mut ctrl = agent.controller_start();
    let mut history: Vec<Action> = Vec::new();
    let mut steps: Vec<TraceStep> = Vec::new();
    let mut success = false;
    let mut reward = 0.0;
    if params.alpha == 0 {
        let trace = InterventionTrace { steps, success: false, reward: 0.0 };
        return Ok(EpisodeOutcome { trace, success: false, final_state: state, reward: 0.0 });
    }
    loop {
        let tree = {
            let mut tree = SearchTree::new(
                domain,
                bb,
                agent,
                params,
                state.clone(),
                ctrl.clone(),
                history.len(),
                history.clone(),
            )?;
            for _ in 0..params.sims {
                tree.simulate()?;
            }
            tree
        };
        let (pi_f, pi_x) = tree.improved_policy(params.tau)?;
        let flat = tree.best_action_flat();
        let action = lib.action_from_index(flat);
        let root_node = tree.root();
        let state_after = if lib.is_stop(action) {
            state.clone()
        } else {
            lib.apply_action(&domain.schema, &state, action)?
        };
        steps.push(TraceStep {
            state_before: state.clone(),
            state_after: state_after.clone(),
            bits_before: domain.encoding.encode_f64(&domain.schema, &state),
            controller: ctrl.clone(),
            function_mask: root_node.function_mask.clone(),
            arg_mask: root_node.arg_mask.clone(),
            action,
            target_pi_f: pi_f,
            target_pi_x: pi_x,
            reward: 0.0,
        });
        if lib.is_stop(action) {
            let stop_child = root_node.child[flat].expect("played actions were visited");
            let terminal = &tree.nodes[stop_child];
            success = terminal.flipped;
            reward = terminal.terminal.unwrap_or(0.0);
            break;
        }
        ctrl = tree.root_ctrl_out();
        state = state_after;
        history.push(action);
        if history.len() >= params.alpha {
            // Length exhausted without STOP; only reachable when alpha == 1
            // forces the played action to be STOP, so treat defensively.
            break;
        }
    }
    for s in &mut steps {
        s.reward = reward;
    }
    let trace = InterventionTrace { steps, success, reward };
    Ok(EpisodeOutcome { trace, success, final_state: state, reward })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::AgentConfig;
    use crate::classifier::Phase;
    use crate::data::sample_synthetic;

    fn setup(seed: u64) -> (Domain, BlackBox, AgentNet) {
        let domain = Domain::builtin("syn").unwrap();
        let bb = BlackBox::formula(&domain).unwrap();
        let cfg = AgentConfig::for_library(domain.encoding.width(), 16, 24, &domain.library, seed);
        let agent = AgentNet::new(cfg);
        (domain, bb, agent)
    }

    fn first_unfavourable(domain: &Domain, bb: &BlackBox, seed: u64) -> UserState {
        let data = sample_synthetic(domain, 300, seed).unwrap();
        data.rows
            .into_iter()
            .find(|r| !bb.score_uncounted(r))
            .expect("population has unfavourable users")
    }

    #[test]
    fn reward_formula() {
        assert_eq!(compute_reward(0, true, 0.9).unwrap(), 1.0);
        assert_eq!(compute_reward(5, false, 0.9).unwrap(), 0.0);
        let r = compute_reward(3, true, 0.9).unwrap();
        assert!((r - 0.729).abs() < 1e-12);
        assert!(compute_reward(1, true, 1.0).is_err());
        assert!(compute_reward(1, true, 0.0).is_err());
    }

    #[test]
    fn reward_monotone_in_length() {
        let mut last = f64::INFINITY;
        for t in 0..8 {
            let r = compute_reward(t, true, 0.9).unwrap();
            assert!(r < last);
            last = r;
        }
    }

    #[test]
    fn l_score_values() {
        let (domain, _, _) = setup(0);
        let lib = &domain.library;
        let stop = Action::stop(lib);
        let data = sample_synthetic(&domain, 1, 0).unwrap();
        let s = &data.rows[0];
        let l_stop = compute_l(
            &domain.schema, lib, &domain.graph, &domain.cost, s, stop, &[], 1.0,
        );
        assert_eq!(l_stop, 1.0);
        // A relation change costs exactly 1 (no parents), never called.
        let f = lib.function_index("CHANGE_RELATION").unwrap();
        let rel = domain.schema.feature_index("relation").unwrap();
        let cur = s.ordinal(&domain.schema, rel);
        let arg = (0..4).find(|a| *a != cur).unwrap();
        let a = Action { func: f, arg: Some(arg) };
        let l0 = compute_l(&domain.schema, lib, &domain.graph, &domain.cost, s, a, &[], 1.0);
        assert!((l0 - (-1.0f64).exp()).abs() < 1e-12);
        // Same action after its function ran twice: penalty adds 2.
        let hist = vec![a, a];
        let l2 = compute_l(&domain.schema, lib, &domain.graph, &domain.cost, s, a, &hist, 1.0);
        assert!((l2 - (-3.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn fresh_node_selects_by_l() {
        let (domain, bb, agent) = setup(1);
        let user = first_unfavourable(&domain, &bb, 1);
        let params = SearchParams {
            sims: 1,
            alpha: 10,
            tau: 1.0,
            lambda: 0.9,
            c_puct: 3.0,
            beta: 1.0,
        };
        let tree = SearchTree::new(
            &domain,
            &bb,
            &agent,
            &params,
            user,
            agent.controller_start(),
            0,
            vec![],
        )
        .unwrap();
        let picked = tree.uct_select(0).unwrap();
        let root = tree.root();
        // With all visit counts at zero the bonus term vanishes, so the
        // largest L must win; STOP has L = 1, the maximum.
        let best_l = root
            .l_score
            .iter()
            .enumerate()
            .filter(|(a, _)| root.arg_mask[*a])
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(picked, best_l);
        assert_eq!(picked, domain.library.action_index(Action::stop(&domain.library)));
    }

    #[test]
    fn exploration_kicks_in_as_visits_grow() {
        let (domain, bb, agent) = setup(2);
        let user = first_unfavourable(&domain, &bb, 2);
        let params = SearchParams {
            sims: 1,
            alpha: 10,
            tau: 1.0,
            lambda: 0.9,
            c_puct: 3.0,
            beta: 1.0,
        };
        let mut tree = SearchTree::new(
            &domain,
            &bb,
            &agent,
            &params,
            user,
            agent.controller_start(),
            0,
            vec![],
        )
        .unwrap();
        // Give one child a perfect Q and flat priors/L; it must eventually
        // stop being selected as its visit count grows.
        let count = tree.nodes[0].arg_mask.len();
        let valid: Vec<usize> = (0..count).filter(|a| tree.nodes[0].arg_mask[*a]).collect();
        let hero = valid[0];
        {
            let node = &mut tree.nodes[0];
            for &a in &valid {
                node.prior[a] = 1.0 / valid.len() as f64;
                node.l_score[a] = 0.5;
            }
        }
        let mut switched = None;
        for round in 0..200u32 {
            let pick = tree.uct_select(0).unwrap();
            if pick != hero {
                switched = Some(round);
                break;
            }
            let node = &mut tree.nodes[0];
            node.n[hero] += 1;
            node.w[hero] += 1.0;
        }
        let switched = switched.expect("exploration never kicked in");
        assert!(switched >= 1, "the perfect child should win at least once");
    }

    #[test]
    fn zero_budget_is_config_error() {
        let (domain, bb, agent) = setup(3);
        let user = first_unfavourable(&domain, &bb, 3);
        let params = SearchParams {
            sims: 0,
            alpha: 10,
            tau: 1.0,
            lambda: 0.9,
            c_puct: 3.0,
            beta: 1.0,
        };
        assert!(run_episode(&domain, &bb, &agent, &user, &params).is_err());
    }

    #[test]
    fn alpha_zero_fails_immediately() {
        let (domain, bb, agent) = setup(4);
        let user = first_unfavourable(&domain, &bb, 4);
        let params = SearchParams {
            sims: 10,
            alpha: 0,
            tau: 1.0,
            lambda: 0.9,
            c_puct: 3.0,
            beta: 1.0,
        };
        let out = run_episode(&domain, &bb, &agent, &user, &params).unwrap();
        assert!(!out.success);
        assert!(out.trace.steps.is_empty());
    }

    #[test]
    fn episodes_are_deterministic() {
        let (domain, bb, agent) = setup(5);
        let user = first_unfavourable(&domain, &bb, 5);
        let params = SearchParams {
            sims: 40,
            alpha: 8,
            tau: 1.0,
            lambda: 0.9,
            c_puct: 3.0,
            beta: 1.0,
        };
        let a = run_episode(&domain, &bb, &agent, &user, &params).unwrap();
        let b = run_episode(&domain, &bb, &agent, &user, &params).unwrap();
        assert_eq!(a.trace.intervention(), b.trace.intervention());
        assert_eq!(a.reward, b.reward);
    }

    #[test]
    fn one_step_flip_is_found_with_enough_budget() {
        // Find a user for whom a single action flips the outcome (verified
        // exhaustively), then check the episode discovers a length-1
        // intervention plus STOP.
        let (domain, bb, agent) = setup(6);
        let data = sample_synthetic(&domain, 500, 6).unwrap();
        let lib = &domain.library;
        let mut chosen = None;
        'outer: for s in &data.rows {
            if bb.score_uncounted(s) {
                continue;
            }
            for a in lib.valid_actions(&domain.schema, s) {
                if lib.is_stop(a) {
                    continue;
                }
                let next = lib.apply_action(&domain.schema, s, a).unwrap();
                if bb.score_uncounted(&next) {
                    chosen = Some(s.clone());
                    break 'outer;
                }
            }
        }
        let user = chosen.expect("some user is one action from recourse");
        let params = SearchParams {
            sims: 2 * lib.action_count(),
            alpha: 10,
            tau: 1.0,
            lambda: 0.9,
            c_puct: 3.0,
            beta: 1.0,
        };
        let out = run_episode(&domain, &bb, &agent, &user, &params).unwrap();
        assert!(out.success);
        assert!(out.trace.effective_len(lib) >= 1);
    }

    #[test]
    fn tree_statistics_stay_consistent() {
        let (domain, bb, agent) = setup(7);
        let user = first_unfavourable(&domain, &bb, 7);
        let params = SearchParams {
            sims: 1,
            alpha: 10,
            tau: 1.0,
            lambda: 0.9,
            c_puct: 3.0,
            beta: 1.0,
        };
        let mut tree = SearchTree::new(
            &domain,
            &bb,
            &agent,
            &params,
            user,
            agent.controller_start(),
            0,
            vec![],
        )
        .unwrap();
        for _ in 0..300 {
            tree.simulate().unwrap();
            assert!(tree.check_consistency());
        }
    }

    #[test]
    fn improved_policy_matches_visit_ratios() {
        let (domain, bb, agent) = setup(8);
        let user = first_unfavourable(&domain, &bb, 8);
        let params = SearchParams {
            sims: 1,
            alpha: 10,
            tau: 1.0,
            lambda: 0.9,
            c_puct: 3.0,
            beta: 1.0,
        };
        let mut tree = SearchTree::new(
            &domain,
            &bb,
            &agent,
            &params,
            user,
            agent.controller_start(),
            0,
            vec![],
        )
        .unwrap();
        let valid: Vec<usize> =
            (0..tree.nodes[0].arg_mask.len()).filter(|a| tree.nodes[0].arg_mask[*a]).collect();
        let (a, b) = (valid[0], valid[1]);
        tree.nodes[0].n[a] = 3;
        tree.nodes[0].n[b] = 1;
        let (pi_f, _) = tree.improved_policy(1.0).unwrap();
        let fa = domain.library.action_from_index(a).func;
        let fb = domain.library.action_from_index(b).func;
        if fa != fb {
            assert!((pi_f[fa] - 0.75).abs() < 1e-12);
            assert!((pi_f[fb] - 0.25).abs() < 1e-12);
        }
        // tau -> 0 collapses to the argmax.
        let (pi_f0, _) = tree.improved_policy(0.0).unwrap();
        assert_eq!(pi_f0[fa], 1.0);
        // Single visited child is a one-hot under any temperature.
        tree.nodes[0].n[b] = 0;
        let (pi_f1, _) = tree.improved_policy(1.0).unwrap();
        assert_eq!(pi_f1[fa], 1.0);
    }

    #[test]
    fn stop_terminal_queries_are_counted() {
        let (domain, bb, agent) = setup(9);
        let user = first_unfavourable(&domain, &bb, 9);
        bb.set_phase(Phase::Inference);
        let before = bb.counter().count(Phase::Inference);
        let params = SearchParams {
            sims: 30,
            alpha: 6,
            tau: 1.0,
            lambda: 0.9,
            c_puct: 3.0,
            beta: 1.0,
        };
        let out = run_episode(&domain, &bb, &agent, &user, &params).unwrap();
        let spent = bb.counter().count(Phase::Inference) - before;
        assert!(spent > 0, "terminal evaluations must query the black box");
        let moves = out.trace.steps.len() as u64;
        assert!(spent <= 30 * moves + moves);
    }
}
