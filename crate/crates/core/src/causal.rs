//! Causal graph over features and the consequence-aware cost function.
//!
//! The cost of an action is its base cost shrunk by a multiplicative
//! discount for every parent of the target feature that is "already
//! improved": either modified earlier in the episode or currently at or
//! above a configured favorable level. Ordering therefore matters — acting
//! on a parent first makes the child's action cheaper.

use std::collections::BTreeMap;

use crate::dsl::{Action, ActionLibrary, Intervention};
use crate::error::{Error, Result};
use crate::schema::{FeatureSchema, UserState};

#[derive(Debug, Clone)]
pub struct CausalGraph {
    node_count: usize,
    edges: Vec<(usize, usize)>,
    parents: Vec<Vec<usize>>,
    topo: Vec<usize>,
}

impl CausalGraph {
    /// Builds the DAG; rejects cycles and out-of-schema nodes.
    pub fn new(schema: &FeatureSchema, edges: Vec<(usize, usize)>) -> Result<Self> {
        let n = schema.len();
        let mut parents = vec![Vec::new(); n];
        let mut children = vec![Vec::new(); n];
        for &(from, to) in &edges {
            if from >= n || to >= n {
                return Err(Error::Schema("graph edge references unknown feature".into()));
            }
            if from == to {
                return Err(Error::Schema("graph has a self-loop".into()));
            }
            parents[to].push(from);
            children[from].push(to);
        }
        // Kahn's algorithm; leftover nodes mean a cycle.
        let mut indeg: Vec<usize> = parents.iter().map(Vec::len).collect();
        let mut queue: Vec<usize> = (0..n).filter(|i| indeg[*i] == 0).collect();
        let mut topo = Vec::with_capacity(n);
        let mut head = 0;
        while head < queue.len() {
            let u = queue[head];
            head += 1;
            topo.push(u);
            for &v in &children[u] {
                indeg[v] -= 1;
                if indeg[v] == 0 {
                    queue.push(v);
                }
            }
        }
        if topo.len() != n {
            return Err(Error::Schema("causal graph contains a cycle".into()));
        }
        Ok(Self { node_count: n, edges, parents, topo })
    }

    pub fn parents(&self, feature: usize) -> &[usize] {
        &self.parents[feature]
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Features in ancestral order (parents before children).
    pub fn topological_order(&self) -> &[usize] {
        &self.topo
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }
}

/// Parameters of the consequence-aware cost.
#[derive(Debug, Clone)]
pub struct CostConfig {
    /// Discount applied per improved parent; in (0, 1].
    pub gamma: f64,
    /// A feature already at or above this ordinal level counts as improved.
    pub improved_min_ordinal: BTreeMap<usize, usize>,
}

impl CostConfig {
    pub fn new(gamma: f64, improved_min_ordinal: BTreeMap<usize, usize>) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::Config(format!("gamma must be in (0, 1], got {gamma}")));
        }
        Ok(Self { gamma, improved_min_ordinal })
    }

    fn improved(
        &self,
        schema: &FeatureSchema,
        lib: &ActionLibrary,
        state: &UserState,
        feature: usize,
        history: &[Action],
    ) -> bool {
        let touched = history
            .iter()
            .any(|a| lib.function(a.func).target == Some(feature));
        if touched {
            return true;
        }
        match self.improved_min_ordinal.get(&feature) {
            Some(min) => state.ordinal(schema, feature) >= *min,
            None => false,
        }
    }
}

/// Cost of one action in the given state: base cost times a gamma factor per
/// improved parent of the target. STOP costs 0.
pub fn action_cost(
    schema: &FeatureSchema,
    lib: &ActionLibrary,
    graph: &CausalGraph,
    cfg: &CostConfig,
    state: &UserState,
    action: Action,
    episode_history: &[Action],
) -> f64 {
    let spec = lib.function(action.func);
    let target = match spec.target {
        None => return 0.0,
        Some(t) => t,
    };
    let base = spec.costs[action.arg.expect("non-stop action has an argument")];
    let mut cost = base;
    for &p in graph.parents(target) {
        if cfg.improved(schema, lib, state, p, episode_history) {
            cost *= cfg.gamma;
        }
    }
    cost
}

/// Total cost of an intervention: the fold of [`action_cost`] over the
/// induced state sequence. Fails if a precondition breaks mid-sequence.
pub fn intervention_cost(
    schema: &FeatureSchema,
    lib: &ActionLibrary,
    graph: &CausalGraph,
    cfg: &CostConfig,
    state: &UserState,
    intervention: &Intervention,
) -> Result<f64> {
    let mut total = 0.0;
    let mut current = state.clone();
    let mut history: Vec<Action> = Vec::new();
    for (step, &a) in intervention.actions.iter().enumerate() {
        if !lib.check_precondition(schema, &current, a)? {
            return Err(Error::InfeasibleIntervention {
                step,
                reason: format!("precondition of `{}` fails", lib.render_action(a, schema)),
            });
        }
        total += action_cost(schema, lib, graph, cfg, &current, a, &history);
        current = lib.apply_action(schema, &current, a)?;
        history.push(a);
    }
    Ok(total)
}
