//! Declarative domain configuration.
//!
//! One TOML file describes a whole experiment domain: the feature schema and
//! bin thresholds, the function library with argument domains, base costs and
//! preconditions, the causal graph edges, the cost parameters, an optional
//! generative spec for sampling synthetic populations, an optional label
//! formula acting as the ground-truth decision function, and tuning defaults.
//!
//! Four configs ship with the crate: `syn`, `syn_long`, `german`, `adult`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use crate::causal::{CausalGraph, CostConfig};
use crate::dsl::{ActionLibrary, ArgValue, CapBy, FunctionSpec, Gate, Precondition};
use crate::encoding::BinaryEncoding;
use crate::error::{Error, Result};
use crate::schema::{Feature, FeatureKind, FeatureSchema, UserState};

pub const BUILTIN_CONFIGS: [(&str, &str); 4] = [
    ("syn", include_str!("../../../configs/syn.toml")),
    ("syn_long", include_str!("../../../configs/syn_long.toml")),
    ("german", include_str!("../../../configs/german.toml")),
    ("adult", include_str!("../../../configs/adult.toml")),
];

/// A fully validated domain: everything the pipeline needs, derived from one
/// config file.
#[derive(Debug, Clone)]
pub struct Domain {
    pub name: String,
    pub schema: FeatureSchema,
    pub library: ActionLibrary,
    pub graph: CausalGraph,
    pub cost: CostConfig,
    pub encoding: BinaryEncoding,
    pub generator: Option<GenerativeSpec>,
    pub label: Option<LabelSpec>,
    /// Probability of flipping the sampled label, for noisy populations.
    pub label_noise: f64,
    pub defaults: Defaults,
}

impl Domain {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text)?;
        compile(raw)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn builtin(name: &str) -> Result<Self> {
        for (n, text) in BUILTIN_CONFIGS {
            if n == name {
                return Self::from_toml_str(text);
            }
        }
        Err(Error::Config(format!(
            "unknown built-in config `{name}` (available: syn, syn_long, german, adult)"
        )))
    }

    /// Resolves a `--config` argument: a built-in name or a file path.
    pub fn resolve(spec: &str) -> Result<Self> {
        if BUILTIN_CONFIGS.iter().any(|(n, _)| *n == spec) {
            Self::builtin(spec)
        } else {
            Self::from_path(Path::new(spec))
        }
    }
}

/// Boolean decision formula over feature ordinals.
#[derive(Debug, Clone)]
pub enum LabelSpec {
    /// sum(weight * ordinal) >= threshold
    Linear { terms: Vec<(usize, f64)>, threshold: f64 },
    AllOf(Vec<LabelSpec>),
    AnyOf(Vec<LabelSpec>),
}

impl LabelSpec {
    pub fn evaluate(&self, schema: &FeatureSchema, state: &UserState) -> bool {
        match self {
            LabelSpec::Linear { terms, threshold } => {
                let score: f64 = terms
                    .iter()
                    .map(|(f, w)| w * state.ordinal(schema, *f) as f64)
                    .sum();
                score >= *threshold
            }
            LabelSpec::AllOf(parts) => parts.iter().all(|p| p.evaluate(schema, state)),
            LabelSpec::AnyOf(parts) => parts.iter().any(|p| p.evaluate(schema, state)),
        }
    }
}

/// Ancestral-sampling spec: per feature, ordered cases conditioned on parent
/// levels; the first matching case supplies the weights over this feature's
/// ordinal levels.
#[derive(Debug, Clone)]
pub struct GenerativeSpec {
    pub per_feature: Vec<FeatureGen>,
}

#[derive(Debug, Clone)]
pub struct FeatureGen {
    pub cases: Vec<GenCase>,
}

#[derive(Debug, Clone)]
pub struct GenCase {
    /// (feature, min ordinal, max ordinal) — all must hold for the case to match.
    pub when: Vec<(usize, usize, usize)>,
    pub weights: Vec<f64>,
}

/// Tuning defaults shipped with a config; every value can be overridden on
/// the command line.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Defaults {
    pub episodes: usize,
    pub train_sims: usize,
    pub infer_sims: usize,
    pub alpha: usize,
    pub lambda: f64,
    pub c_puct: f64,
    pub beta: f64,
    pub lr: f64,
    pub batch_traces: usize,
    pub train_every: usize,
    pub buffer_capacity: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub traces_m: usize,
    pub tree_max_depth: usize,
    pub sample_n: usize,
}

impl Default for Defaults {
    fn default() -> Self {
        Self {
            episodes: 600,
            train_sims: 200,
            infer_sims: 30,
            alpha: 10,
            lambda: 0.9,
            c_puct: 3.0,
            beta: 1.0,
            lr: 0.05,
            batch_traces: 16,
            train_every: 1,
            buffer_capacity: 2000,
            embed_dim: 32,
            hidden_dim: 64,
            traces_m: 250,
            tree_max_depth: 6,
            sample_n: 10004,
        }
    }
}

// ---------------------------------------------------------------------------
// Raw TOML shapes
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    name: String,
    schema: RawSchema,
    #[serde(default)]
    functions: Vec<RawFunction>,
    #[serde(default)]
    graph: RawGraph,
    cost: RawCost,
    #[serde(default)]
    generate: Vec<RawGen>,
    label: Option<RawLabel>,
    #[serde(default)]
    label_noise: f64,
    #[serde(default)]
    defaults: Defaults,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSchema {
    #[serde(default)]
    protected: Vec<String>,
    features: Vec<RawFeature>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFeature {
    name: String,
    values: Option<Vec<String>>,
    bins: Option<Vec<f64>>,
    range: Option<(f64, f64)>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFunction {
    name: String,
    target: String,
    arguments: Option<Vec<String>>,
    deltas: Option<Vec<f64>>,
    costs: Vec<f64>,
    #[serde(default)]
    precondition: RawPrecondition,
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct RawPrecondition {
    unrestricted: bool,
    upgrade_only: bool,
    max_step: Option<usize>,
    min_result: Option<f64>,
    requires: Vec<RawGate>,
    arg_requires: Vec<RawArgGate>,
    cap: Option<RawCap>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGate {
    feature: String,
    min: OrdinalRef,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawArgGate {
    argument: String,
    feature: String,
    min: OrdinalRef,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCap {
    by: String,
    limits: Vec<f64>,
}

/// A level reference: a categorical value name or a plain ordinal index.
#[derive(Deserialize)]
#[serde(untagged)]
enum OrdinalRef {
    Level(usize),
    Name(String),
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawGraph {
    #[serde(default)]
    edges: Vec<(String, String)>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCost {
    gamma: f64,
    #[serde(default)]
    improved: BTreeMap<String, OrdinalRef>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGen {
    feature: String,
    cases: Vec<RawGenCase>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGenCase {
    #[serde(default)]
    when: Vec<RawWhen>,
    weights: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWhen {
    feature: String,
    min: Option<OrdinalRef>,
    max: Option<OrdinalRef>,
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum RawLabel {
    Linear { terms: Vec<RawTerm>, threshold: f64 },
    AllOf { parts: Vec<RawLabel> },
    AnyOf { parts: Vec<RawLabel> },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTerm {
    feature: String,
    weight: f64,
}

// ---------------------------------------------------------------------------
// Compilation
// ---------------------------------------------------------------------------

fn resolve_ordinal(schema: &FeatureSchema, feature: usize, r: &OrdinalRef) -> Result<usize> {
    match r {
        OrdinalRef::Level(n) => {
            if *n >= schema.feature(feature).kind.ordinal_count() {
                return Err(Error::Config(format!(
                    "level {n} out of range for `{}`",
                    schema.feature(feature).name
                )));
            }
            Ok(*n)
        }
        OrdinalRef::Name(name) => schema.categorical_index(feature, name),
    }
}

fn compile(raw: RawConfig) -> Result<Domain> {
    let mut features = Vec::with_capacity(raw.schema.features.len());
    for rf in &raw.schema.features {
        let kind = match (&rf.values, &rf.bins) {
            (Some(values), None) => FeatureKind::Categorical { values: values.clone() },
            (None, Some(bins)) => {
                let range = rf.range.ok_or_else(|| {
                    Error::Config(format!("numeric feature `{}` needs a range", rf.name))
                })?;
                FeatureKind::Numeric { bins: bins.clone(), range }
            }
            _ => {
                return Err(Error::Config(format!(
                    "feature `{}` must declare either values or bins",
                    rf.name
                )))
            }
        };
        features.push(Feature {
            name: rf.name.clone(),
            kind,
            protected: raw.schema.protected.contains(&rf.name),
        });
    }
    let schema = FeatureSchema::new(features)?;
    for p in &raw.schema.protected {
        schema.feature_index(p)?;
    }

    let mut functions = Vec::with_capacity(raw.functions.len());
    for rf in &raw.functions {
        let target = schema.feature_index(&rf.target)?;
        let args: Vec<ArgValue> = match (&rf.arguments, &rf.deltas) {
            (Some(names), None) => names
                .iter()
                .map(|n| schema.categorical_index(target, n).map(ArgValue::Cat))
                .collect::<Result<_>>()?,
            (None, Some(deltas)) => deltas.iter().map(|d| ArgValue::Delta(*d)).collect(),
            _ => {
                return Err(Error::Config(format!(
                    "function `{}` must declare either arguments or deltas",
                    rf.name
                )))
            }
        };
        let pre = compile_precondition(&schema, &rf.precondition, &args, rf, target)?;
        functions.push(FunctionSpec {
            name: rf.name.clone(),
            target: Some(target),
            args,
            costs: rf.costs.clone(),
            pre,
        });
    }
    let library = ActionLibrary::new(&schema, functions)?;

    let mut edges = Vec::with_capacity(raw.graph.edges.len());
    for (from, to) in &raw.graph.edges {
        edges.push((schema.feature_index(from)?, schema.feature_index(to)?));
    }
    let graph = CausalGraph::new(&schema, edges)?;

    let mut improved = BTreeMap::new();
    for (name, level) in &raw.cost.improved {
        let f = schema.feature_index(name)?;
        improved.insert(f, resolve_ordinal(&schema, f, level)?);
    }
    let cost = CostConfig::new(raw.cost.gamma, improved)?;

    let generator = if raw.generate.is_empty() {
        None
    } else {
        Some(compile_generator(&schema, &graph, &raw.generate)?)
    };

    let label = raw.label.as_ref().map(|l| compile_label(&schema, l)).transpose()?;
    if !(0.0..=1.0).contains(&raw.label_noise) {
        return Err(Error::Config("label_noise must be in [0, 1]".into()));
    }

    let encoding = BinaryEncoding::new(&schema);
    Ok(Domain {
        name: raw.name,
        schema,
        library,
        graph,
        cost,
        encoding,
        generator,
        label,
        label_noise: raw.label_noise,
        defaults: raw.defaults,
    })
}

fn compile_precondition(
    schema: &FeatureSchema,
    rp: &RawPrecondition,
    args: &[ArgValue],
    rf: &RawFunction,
    target: usize,
) -> Result<Precondition> {
    let mut requires = Vec::new();
    for g in &rp.requires {
        let feature = schema.feature_index(&g.feature)?;
        requires.push(Gate { feature, min_ordinal: resolve_ordinal(schema, feature, &g.min)? });
    }
    let mut arg_requires = Vec::new();
    for g in &rp.arg_requires {
        let arg = match &rf.arguments {
            Some(names) => names
                .iter()
                .position(|n| n == &g.argument)
                .ok_or_else(|| {
                    Error::Config(format!(
                        "arg_requires references unknown argument `{}` of `{}`",
                        g.argument, rf.name
                    ))
                })?,
            None => {
                return Err(Error::Config(format!(
                    "arg_requires only applies to categorical functions (`{}`)",
                    rf.name
                )))
            }
        };
        let feature = schema.feature_index(&g.feature)?;
        arg_requires
            .push((arg, Gate { feature, min_ordinal: resolve_ordinal(schema, feature, &g.min)? }));
    }
    let cap_by = match &rp.cap {
        None => None,
        Some(c) => {
            let by = schema.feature_index(&c.by)?;
            let levels = schema.feature(by).kind.ordinal_count();
            if c.limits.len() != levels {
                return Err(Error::Config(format!(
                    "cap for `{}` needs {levels} limits, got {}",
                    rf.name,
                    c.limits.len()
                )));
            }
            if args.iter().any(|a| matches!(a, ArgValue::Cat(_))) {
                return Err(Error::Config(format!(
                    "cap only applies to numeric functions (`{}`)",
                    rf.name
                )));
            }
            Some(CapBy { by, limits: c.limits.clone() })
        }
    };
    if (rp.upgrade_only || rp.max_step.is_some())
        && !matches!(schema.feature(target).kind, FeatureKind::Categorical { .. })
    {
        return Err(Error::Config(format!(
            "upgrade_only/max_step only apply to categorical functions (`{}`)",
            rf.name
        )));
    }
    Ok(Precondition {
        unrestricted: rp.unrestricted,
        upgrade_only: rp.upgrade_only,
        max_step: rp.max_step,
        min_result: rp.min_result,
        requires,
        arg_requires,
        cap_by,
    })
}

fn compile_generator(
    schema: &FeatureSchema,
    graph: &CausalGraph,
    raws: &[RawGen],
) -> Result<GenerativeSpec> {
    let mut per_feature: Vec<Option<FeatureGen>> = vec![None; schema.len()];
    for rg in raws {
        let feature = schema.feature_index(&rg.feature)?;
        let levels = schema.feature(feature).kind.ordinal_count();
        let mut cases = Vec::with_capacity(rg.cases.len());
        for rc in &rg.cases {
            if rc.weights.len() != levels {
                return Err(Error::Config(format!(
                    "generator for `{}` needs {levels} weights, got {}",
                    rg.feature,
                    rc.weights.len()
                )));
            }
            if rc.weights.iter().any(|w| *w < 0.0 || !w.is_finite())
                || rc.weights.iter().sum::<f64>() <= 0.0
            {
                return Err(Error::Config(format!(
                    "generator weights for `{}` must be non-negative with a positive sum",
                    rg.feature
                )));
            }
            let mut when = Vec::with_capacity(rc.when.len());
            for w in &rc.when {
                let wf = schema.feature_index(&w.feature)?;
                if !graph.parents(feature).contains(&wf) {
                    return Err(Error::Config(format!(
                        "generator for `{}` conditions on `{}`, which is not a causal parent",
                        rg.feature, w.feature
                    )));
                }
                let lo = match &w.min {
                    Some(r) => resolve_ordinal(schema, wf, r)?,
                    None => 0,
                };
                let hi = match &w.max {
                    Some(r) => resolve_ordinal(schema, wf, r)?,
                    None => schema.feature(wf).kind.ordinal_count() - 1,
                };
                when.push((wf, lo, hi));
            }
            cases.push(GenCase { when, weights: rc.weights.clone() });
        }
        match rg.cases.last() {
            Some(last) if last.when.is_empty() => {}
            _ => {
                return Err(Error::Config(format!(
                    "generator for `{}` must end with an unconditional case",
                    rg.feature
                )))
            }
        }
        if per_feature[feature].replace(FeatureGen { cases }).is_some() {
            return Err(Error::Config(format!("duplicate generator for `{}`", rg.feature)));
        }
    }
    let per_feature = per_feature
        .into_iter()
        .enumerate()
        .map(|(i, g)| {
            g.ok_or_else(|| {
                Error::Config(format!(
                    "no generator declared for feature `{}`",
                    schema.feature(i).name
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GenerativeSpec { per_feature })
}

fn compile_label(schema: &FeatureSchema, raw: &RawLabel) -> Result<LabelSpec> {
    Ok(match raw {
        RawLabel::Linear { terms, threshold } => LabelSpec::Linear {
            terms: terms
                .iter()
                .map(|t| Ok((schema.feature_index(&t.feature)?, t.weight)))
                .collect::<Result<_>>()?,
            threshold: *threshold,
        },
        RawLabel::AllOf { parts } => LabelSpec::AllOf(
            parts.iter().map(|p| compile_label(schema, p)).collect::<Result<_>>()?,
        ),
        RawLabel::AnyOf { parts } => LabelSpec::AnyOf(
            parts.iter().map(|p| compile_label(schema, p)).collect::<Result<_>>()?,
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_configs_compile() {
        for (name, _) in BUILTIN_CONFIGS {
            let d = Domain::builtin(name).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(d.name, name);
        }
    }

    #[test]
    fn builtin_shapes_match_published_dimensions() {
        // (name, features, bits, functions incl. STOP)
        for (name, s, b, f) in [
            ("syn", 10, 40, 6),
            ("syn_long", 14, 64, 10),
            ("german", 10, 44, 7),
            ("adult", 15, 125, 6),
        ] {
            let d = Domain::builtin(name).unwrap();
            assert_eq!(d.schema.len(), s, "{name} features");
            assert_eq!(d.encoding.width(), b, "{name} bits");
            assert_eq!(d.library.function_count(), f, "{name} functions");
        }
    }

    #[test]
    fn unknown_builtin_is_config_error() {
        assert!(matches!(Domain::builtin("nope"), Err(Error::Config(_))));
    }

    #[test]
    fn german_dsl_is_unrestricted() {
        // Every declared function allows every argument in any state, so the
        // full action set (plus STOP) is valid everywhere.
        let d = Domain::builtin("german").unwrap();
        let total: usize = d
            .library
            .functions()
            .iter()
            .filter(|f| !f.is_stop())
            .map(|f| f.args.len())
            .sum();
        assert_eq!(d.library.action_count(), total + 1);
        assert_eq!(total + 1, 28);
    }

    #[test]
    fn label_round_trip() {
        let toml = r#"
            name = "mini"
            [schema]
            features = [
                { name = "a", values = ["x", "y", "z"] },
                { name = "b", bins = [1.0], range = [0.0, 2.0] },
            ]
            [cost]
            gamma = 0.5
            [label]
            kind = "all_of"
            [[label.parts]]
            kind = "linear"
            terms = [{ feature = "a", weight = 1.0 }]
            threshold = 1.0
            [[label.parts]]
            kind = "linear"
            terms = [{ feature = "b", weight = 1.0 }]
            threshold = 1.0
        "#;
        let d = Domain::from_toml_str(toml).unwrap();
        let label = d.label.unwrap();
        let yes = UserState::new(
            &d.schema,
            vec![crate::schema::Value::Cat(2), crate::schema::Value::Num(1.5)],
        )
        .unwrap();
        let no = UserState::new(
            &d.schema,
            vec![crate::schema::Value::Cat(2), crate::schema::Value::Num(0.5)],
        )
        .unwrap();
        assert!(label.evaluate(&d.schema, &yes));
        assert!(!label.evaluate(&d.schema, &no));
    }
}
