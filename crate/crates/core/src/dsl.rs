//! The action DSL: functions, arguments, preconditions, interventions.
//!
//! Every function targets exactly one non-protected feature. Categorical
//! functions assign their argument; numeric functions add their argument to
//! the current value. `STOP` is always present as the last function, takes
//! no argument, and costs nothing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{FeatureKind, FeatureSchema, UserState, Value};

pub const STOP_NAME: &str = "STOP";

/// A function argument: a categorical assignment or a numeric delta.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ArgValue {
    Cat(usize),
    Delta(f64),
}

/// A gate on the current state: the feature's ordinal level must be at least
/// `min_ordinal` for the guarded action to be applicable.
#[derive(Debug, Clone, PartialEq)]
pub struct Gate {
    pub feature: usize,
    pub min_ordinal: usize,
}

/// Numeric cap: the result of the action must not exceed
/// `limits[state.ordinal(by)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CapBy {
    pub by: usize,
    pub limits: Vec<f64>,
}

/// Boolean predicate attached to a function.
///
/// When `unrestricted` is set the predicate always holds. Otherwise two
/// defaults apply on top of any configured clauses: categorical assignment
/// to the current value is forbidden, and a numeric result must stay within
/// the feature's declared range.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Precondition {
    pub unrestricted: bool,
    /// Categorical: the new value's index must exceed the current one.
    pub upgrade_only: bool,
    /// Categorical: bound on the ordinal jump per action.
    pub max_step: Option<usize>,
    /// Numeric: lower bound on the result.
    pub min_result: Option<f64>,
    /// Gates that must hold regardless of the argument.
    pub requires: Vec<Gate>,
    /// Additional gates for specific arguments (indexes into the domain).
    pub arg_requires: Vec<(usize, Gate)>,
    /// Numeric: result capped by another feature's level.
    pub cap_by: Option<CapBy>,
}

#[derive(Debug, Clone)]
pub struct FunctionSpec {
    pub name: String,
    /// Target feature index; `None` only for STOP.
    pub target: Option<usize>,
    pub args: Vec<ArgValue>,
    /// Positive base cost per argument, parallel to `args`.
    pub costs: Vec<f64>,
    pub pre: Precondition,
}

impl FunctionSpec {
    pub fn is_stop(&self) -> bool {
        self.target.is_none()
    }
}

/// A (function, argument) pair. `arg` is `None` exactly for STOP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Action {
    pub func: usize,
    pub arg: Option<usize>,
}

impl Action {
    pub fn stop(lib: &ActionLibrary) -> Action {
        Action { func: lib.stop_index(), arg: None }
    }
}

/// An ordered action sequence; successful interventions end with STOP.
#[derive(Debug, Clone, PartialEq)]
pub struct Intervention {
    pub actions: Vec<Action>,
}

impl Intervention {
    /// Number of non-STOP actions.
    pub fn effective_len(&self, lib: &ActionLibrary) -> usize {
        self.actions.iter().filter(|a| !lib.is_stop(**a)).count()
    }

    pub fn ends_with_stop(&self, lib: &ActionLibrary) -> bool {
        self.actions.last().is_some_and(|a| lib.is_stop(*a))
    }
}

/// The function library plus a flat index over all (function, argument)
/// pairs. STOP is always the last function and the last flat action.
#[derive(Debug, Clone)]
pub struct ActionLibrary {
    functions: Vec<FunctionSpec>,
    /// Flat-vocabulary offset of each function's argument block.
    offsets: Vec<usize>,
    /// Total flat actions: sum of argument-domain sizes plus one for STOP.
    action_count: usize,
}

impl ActionLibrary {
    pub fn new(schema: &FeatureSchema, mut functions: Vec<FunctionSpec>) -> Result<Self> {
        for f in &functions {
            if f.is_stop() {
                return Err(Error::Schema("STOP is implicit; do not declare it".into()));
            }
            let target = f.target.expect("non-stop function has a target");
            if target >= schema.len() {
                return Err(Error::Schema(format!("function `{}` targets unknown feature", f.name)));
            }
            let feat = schema.feature(target);
            if feat.protected {
                return Err(Error::Schema(format!(
                    "function `{}` targets protected feature `{}`",
                    f.name, feat.name
                )));
            }
            if f.args.is_empty() {
                return Err(Error::Schema(format!("function `{}` has no arguments", f.name)));
            }
            if f.costs.len() != f.args.len() {
                return Err(Error::Schema(format!(
                    "function `{}` has {} costs for {} arguments",
                    f.name,
                    f.costs.len(),
                    f.args.len()
                )));
            }
            if f.costs.iter().any(|c| !(*c > 0.0) || !c.is_finite()) {
                return Err(Error::Schema(format!(
                    "function `{}` must have positive finite base costs",
                    f.name
                )));
            }
            for a in &f.args {
                match (a, &feat.kind) {
                    (ArgValue::Cat(c), FeatureKind::Categorical { values }) => {
                        if *c >= values.len() {
                            return Err(Error::Schema(format!(
                                "function `{}` argument out of vocabulary",
                                f.name
                            )));
                        }
                    }
                    (ArgValue::Delta(d), FeatureKind::Numeric { .. }) => {
                        if !d.is_finite() {
                            return Err(Error::Schema(format!(
                                "function `{}` has a non-finite delta",
                                f.name
                            )));
                        }
                    }
                    _ => {
                        return Err(Error::Schema(format!(
                            "function `{}` argument kind does not match its target",
                            f.name
                        )))
                    }
                }
            }
        }
        functions.push(FunctionSpec {
            name: STOP_NAME.into(),
            target: None,
            args: Vec::new(),
            costs: Vec::new(),
            pre: Precondition { unrestricted: true, ..Default::default() },
        });
        let mut offsets = Vec::with_capacity(functions.len());
        let mut off = 0;
        for f in &functions {
            offsets.push(off);
            off += f.args.len().max(if f.is_stop() { 1 } else { 0 });
        }
        Ok(Self { functions, offsets, action_count: off })
    }

    pub fn functions(&self) -> &[FunctionSpec] {
        &self.functions
    }

    pub fn function_count(&self) -> usize {
        self.functions.len()
    }

    pub fn stop_index(&self) -> usize {
        self.functions.len() - 1
    }

    pub fn is_stop(&self, a: Action) -> bool {
        a.func == self.stop_index()
    }

    pub fn function(&self, idx: usize) -> &FunctionSpec {
        &self.functions[idx]
    }

    pub fn function_index(&self, name: &str) -> Result<usize> {
        self.functions
            .iter()
            .position(|f| f.name == name)
            .ok_or_else(|| Error::Schema(format!("unknown function `{name}`")))
    }

    /// Size of the flat (function, argument) vocabulary, STOP included.
    pub fn action_count(&self) -> usize {
        self.action_count
    }

    /// Offset of a function's block in the flat vocabulary.
    pub fn block_offset(&self, func: usize) -> usize {
        self.offsets[func]
    }

    /// Width of a function's block (1 for STOP).
    pub fn block_len(&self, func: usize) -> usize {
        if self.functions[func].is_stop() { 1 } else { self.functions[func].args.len() }
    }

    pub fn action_index(&self, a: Action) -> usize {
        self.offsets[a.func] + a.arg.unwrap_or(0)
    }

    pub fn action_from_index(&self, idx: usize) -> Action {
        let func = match self.offsets.binary_search(&idx) {
            Ok(f) => {
                // Offsets repeat only for empty blocks, which cannot exist.
                f
            }
            Err(f) => f - 1,
        };
        let arg = idx - self.offsets[func];
        if self.functions[func].is_stop() {
            Action { func, arg: None }
        } else {
            Action { func, arg: Some(arg) }
        }
    }

    pub fn render_action(&self, a: Action, schema: &FeatureSchema) -> String {
        let f = &self.functions[a.func];
        match a.arg {
            None => f.name.clone(),
            Some(_) => format!("{}({})", f.name, self.render_argument(a, schema)),
        }
    }

    pub fn render_argument(&self, a: Action, schema: &FeatureSchema) -> String {
        let f = &self.functions[a.func];
        match a.arg {
            None => String::new(),
            Some(i) => match f.args[i] {
                ArgValue::Cat(c) => {
                    let target = f.target.expect("categorical arg implies target");
                    match &schema.feature(target).kind {
                        FeatureKind::Categorical { values } => values[c].clone(),
                        _ => unreachable!("validated at construction"),
                    }
                }
                ArgValue::Delta(d) => {
                    if d >= 0.0 {
                        format!("+{}", crate::schema::format_num(d))
                    } else {
                        crate::schema::format_num(d)
                    }
                }
            },
        }
    }

    pub fn parse_action(&self, function: &str, argument: Option<&str>, schema: &FeatureSchema) -> Result<Action> {
        let func = self.function_index(function)?;
        let spec = &self.functions[func];
        if spec.is_stop() {
            return Ok(Action { func, arg: None });
        }
        let argument =
            argument.ok_or_else(|| Error::Schema(format!("function `{function}` needs an argument")))?;
        for i in 0..spec.args.len() {
            if self.render_argument(Action { func, arg: Some(i) }, schema) == argument {
                return Ok(Action { func, arg: Some(i) });
            }
        }
        Err(Error::Schema(format!("unknown argument `{argument}` for `{function}`")))
    }

    /// Evaluates the function's predicate for (state, argument).
    pub fn check_precondition(&self, schema: &FeatureSchema, state: &UserState, action: Action) -> Result<bool> {
        if action.func >= self.functions.len() {
            return Err(Error::Schema(format!("unknown function index {}", action.func)));
        }
        let spec = &self.functions[action.func];
        if spec.is_stop() {
            return Ok(true);
        }
        let arg_idx = match action.arg {
            Some(i) if i < spec.args.len() => i,
            _ => return Err(Error::Schema(format!("argument out of domain for `{}`", spec.name))),
        };
        if spec.pre.unrestricted {
            return Ok(true);
        }
        let target = spec.target.expect("non-stop function has a target");
        for g in &spec.pre.requires {
            if state.ordinal(schema, g.feature) < g.min_ordinal {
                return Ok(false);
            }
        }
        for (arg, g) in &spec.pre.arg_requires {
            if *arg == arg_idx && state.ordinal(schema, g.feature) < g.min_ordinal {
                return Ok(false);
            }
        }
        match spec.args[arg_idx] {
            ArgValue::Cat(new_idx) => {
                let cur = match state.value(target) {
                    Value::Cat(c) => c,
                    Value::Num(_) => unreachable!("validated at construction"),
                };
                if new_idx == cur {
                    return Ok(false);
                }
                if spec.pre.upgrade_only && new_idx < cur {
                    return Ok(false);
                }
                if let Some(step) = spec.pre.max_step {
                    if new_idx.abs_diff(cur) > step {
                        return Ok(false);
                    }
                }
            }
            ArgValue::Delta(d) => {
                let cur = match state.value(target) {
                    Value::Num(x) => x,
                    Value::Cat(_) => unreachable!("validated at construction"),
                };
                let result = cur + d;
                let (lo, hi) = match &schema.feature(target).kind {
                    FeatureKind::Numeric { range, .. } => *range,
                    _ => unreachable!("validated at construction"),
                };
                if result < lo || result > hi {
                    return Ok(false);
                }
                if let Some(min) = spec.pre.min_result {
                    if result < min {
                        return Ok(false);
                    }
                }
                if let Some(cap) = &spec.pre.cap_by {
                    let level = state.ordinal(schema, cap.by);
                    if result > cap.limits[level.min(cap.limits.len() - 1)] {
                        return Ok(false);
                    }
                }
            }
        }
        Ok(true)
    }

    /// Applies the action, changing exactly the target feature. STOP is the
    /// identity.
    pub fn apply_action(&self, schema: &FeatureSchema, state: &UserState, action: Action) -> Result<UserState> {
        if !self.check_precondition(schema, state, action)? {
            return Err(Error::RejectedAction(format!(
                "precondition of `{}` does not hold",
                self.render_action(action, schema)
            )));
        }
        let spec = &self.functions[action.func];
        if spec.is_stop() {
            return Ok(state.clone());
        }
        let target = spec.target.expect("non-stop function has a target");
        let mut next = state.clone();
        match spec.args[action.arg.expect("non-stop action has an argument")] {
            ArgValue::Cat(c) => next.set(target, Value::Cat(c)),
            ArgValue::Delta(d) => {
                let cur = match state.value(target) {
                    Value::Num(x) => x,
                    Value::Cat(_) => unreachable!("validated at construction"),
                };
                next.set(target, Value::Num(cur + d));
            }
        }
        Ok(next)
    }

    /// All actions whose preconditions hold, in flat-index order; always
    /// contains STOP.
    pub fn valid_actions(&self, schema: &FeatureSchema, state: &UserState) -> Vec<Action> {
        let mut out = Vec::new();
        for (fi, f) in self.functions.iter().enumerate() {
            if f.is_stop() {
                out.push(Action { func: fi, arg: None });
                continue;
            }
            for ai in 0..f.args.len() {
                let a = Action { func: fi, arg: Some(ai) };
                if self
                    .check_precondition(schema, state, a)
                    .expect("action indices are in range")
                {
                    out.push(a);
                }
            }
        }
        out
    }

    /// Flat boolean mask over the action vocabulary.
    pub fn action_mask(&self, schema: &FeatureSchema, state: &UserState) -> Vec<bool> {
        let mut mask = vec![false; self.action_count];
        for a in self.valid_actions(schema, state) {
            mask[self.action_index(a)] = true;
        }
        mask
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::schema::Feature;

    /// Two-feature domain used across the crate's unit tests: a categorical
    /// `job` ladder and a numeric `income` with an upgrade/cap structure.
    pub(crate) fn toy_domain() -> (FeatureSchema, ActionLibrary) {
        let schema = FeatureSchema::new(vec![
            Feature {
                name: "job".into(),
                kind: FeatureKind::Categorical {
                    values: vec!["none".into(), "junior".into(), "senior".into(), "ceo".into()],
                },
                protected: false,
            },
            Feature {
                name: "income".into(),
                kind: FeatureKind::Numeric { bins: vec![5000.0, 10000.0], range: (0.0, 20000.0) },
                protected: false,
            },
        ])
        .unwrap();
        let lib = ActionLibrary::new(
            &schema,
            vec![
                FunctionSpec {
                    name: "CHANGE_JOB".into(),
                    target: Some(0),
                    args: vec![ArgValue::Cat(0), ArgValue::Cat(1), ArgValue::Cat(2), ArgValue::Cat(3)],
                    costs: vec![0.5, 1.0, 1.5, 2.0],
                    pre: Precondition { upgrade_only: true, ..Default::default() },
                },
                FunctionSpec {
                    name: "CHANGE_INCOME".into(),
                    target: Some(1),
                    args: vec![ArgValue::Delta(5000.0), ArgValue::Delta(-10000.0)],
                    costs: vec![1.0, 1.0],
                    pre: Precondition { min_result: Some(0.0), ..Default::default() },
                },
            ],
        )
        .unwrap();
        (schema, lib)
    }

    pub(crate) fn toy_state(schema: &FeatureSchema, job: usize, income: f64) -> UserState {
        UserState::new(schema, vec![Value::Cat(job), Value::Num(income)]).unwrap()
    }

    #[test]
    fn stop_always_satisfiable_and_identity() {
        let (schema, lib) = toy_domain();
        let s = toy_state(&schema, 0, 0.0);
        let stop = Action::stop(&lib);
        assert!(lib.check_precondition(&schema, &s, stop).unwrap());
        assert_eq!(lib.apply_action(&schema, &s, stop).unwrap(), s);
    }

    #[test]
    fn self_assignment_forbidden() {
        let (schema, lib) = toy_domain();
        let s = toy_state(&schema, 3, 0.0);
        let a = Action { func: 0, arg: Some(3) }; // ceo -> ceo
        assert!(!lib.check_precondition(&schema, &s, a).unwrap());
    }

    #[test]
    fn negative_result_forbidden() {
        let (schema, lib) = toy_domain();
        let s = toy_state(&schema, 0, 5000.0);
        let a = Action { func: 1, arg: Some(1) }; // -10000
        assert!(!lib.check_precondition(&schema, &s, a).unwrap());
    }

    #[test]
    fn unknown_function_is_schema_error() {
        let (schema, lib) = toy_domain();
        let s = toy_state(&schema, 0, 0.0);
        let err = lib
            .check_precondition(&schema, &s, Action { func: 9, arg: Some(0) })
            .unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn apply_changes_exactly_one_feature() {
        let (schema, lib) = toy_domain();
        let s = toy_state(&schema, 0, 5000.0);
        let next = lib.apply_action(&schema, &s, Action { func: 1, arg: Some(0) }).unwrap();
        assert_eq!(next.value(1), Value::Num(10000.0));
        assert_eq!(next.value(0), s.value(0));
        let err = lib.apply_action(&schema, &s, Action { func: 0, arg: Some(0) }).unwrap_err();
        assert!(matches!(err, Error::RejectedAction(_)));
    }

    #[test]
    fn valid_actions_contains_stop_and_respects_mask() {
        let (schema, lib) = toy_domain();
        let s = toy_state(&schema, 3, 20000.0);
        let acts = lib.valid_actions(&schema, &s);
        assert!(acts.contains(&Action::stop(&lib)));
        // job upgrades exhausted, +5000 exceeds range, -10000 ok.
        assert_eq!(acts.len(), 2);
        let mask = lib.action_mask(&schema, &s);
        assert_eq!(mask.iter().filter(|m| **m).count(), 2);
        assert!(mask[lib.action_index(Action::stop(&lib))]);
    }

    #[test]
    fn flat_index_round_trips() {
        let (_, lib) = toy_domain();
        for idx in 0..lib.action_count() {
            assert_eq!(lib.action_index(lib.action_from_index(idx)), idx);
        }
        assert_eq!(lib.action_count(), 4 + 2 + 1);
        assert_eq!(lib.action_index(Action::stop(&lib)), lib.action_count() - 1);
    }

    #[test]
    fn protected_targets_rejected() {
        let schema = FeatureSchema::new(vec![Feature {
            name: "age".into(),
            kind: FeatureKind::Numeric { bins: vec![30.0], range: (18.0, 90.0) },
            protected: true,
        }])
        .unwrap();
        let err = ActionLibrary::new(
            &schema,
            vec![FunctionSpec {
                name: "CHANGE_AGE".into(),
                target: Some(0),
                args: vec![ArgValue::Delta(1.0)],
                costs: vec![1.0],
                pre: Precondition::default(),
            }],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }
}
