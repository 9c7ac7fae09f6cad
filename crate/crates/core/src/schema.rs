//! Feature schema and user states.
//!
//! A schema declares the ordered feature set: categorical features with a
//! fixed value vocabulary and numeric features discretized by sorted bin
//! thresholds. Protected features exist in the state but may never be the
//! target of an action.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureKind {
    Categorical {
        values: Vec<String>,
    },
    /// `bins` are strictly increasing thresholds; a value falls in bin `i`
    /// when `bins[i-1] <= v < bins[i]`, with open-ended boundary bins.
    /// `range` bounds the values the generator and preconditions work with.
    Numeric {
        bins: Vec<f64>,
        range: (f64, f64),
    },
}

impl FeatureKind {
    /// Number of ordinal levels: category count, or bin count (`bins.len() + 1`).
    pub fn ordinal_count(&self) -> usize {
        match self {
            FeatureKind::Categorical { values } => values.len(),
            FeatureKind::Numeric { bins, .. } => bins.len() + 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    pub kind: FeatureKind,
    pub protected: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureSchema {
    features: Vec<Feature>,
    #[serde(skip)]
    index: BTreeMap<String, usize>,
}

impl FeatureSchema {
    pub fn new(features: Vec<Feature>) -> Result<Self> {
        let mut index = BTreeMap::new();
        for (i, f) in features.iter().enumerate() {
            if index.insert(f.name.clone(), i).is_some() {
                return Err(Error::Schema(format!("duplicate feature name `{}`", f.name)));
            }
            match &f.kind {
                FeatureKind::Categorical { values } => {
                    if values.is_empty() {
                        return Err(Error::Schema(format!("feature `{}` has no values", f.name)));
                    }
                    let mut seen = std::collections::BTreeSet::new();
                    for v in values {
                        if !seen.insert(v) {
                            return Err(Error::Schema(format!(
                                "feature `{}` repeats value `{v}`",
                                f.name
                            )));
                        }
                    }
                }
                FeatureKind::Numeric { bins, range } => {
                    if bins.is_empty() {
                        return Err(Error::Schema(format!("feature `{}` has no bins", f.name)));
                    }
                    if !bins.windows(2).all(|w| w[0] < w[1]) {
                        return Err(Error::Schema(format!(
                            "feature `{}` bins must be strictly increasing",
                            f.name
                        )));
                    }
                    if !(range.0 < range.1) || !range.0.is_finite() || !range.1.is_finite() {
                        return Err(Error::Schema(format!("feature `{}` has a bad range", f.name)));
                    }
                }
            }
        }
        Ok(Self { features, index })
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn feature(&self, idx: usize) -> &Feature {
        &self.features[idx]
    }

    pub fn feature_index(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::Schema(format!("unknown feature `{name}`")))
    }

    /// Rebuilds the name index after deserialization.
    pub fn reindex(&mut self) {
        self.index = self
            .features
            .iter()
            .enumerate()
            .map(|(i, f)| (f.name.clone(), i))
            .collect();
    }

    pub fn categorical_index(&self, feature: usize, value: &str) -> Result<usize> {
        match &self.features[feature].kind {
            FeatureKind::Categorical { values } => values
                .iter()
                .position(|v| v == value)
                .ok_or_else(|| {
                    Error::Schema(format!(
                        "value `{value}` not in vocabulary of `{}`",
                        self.features[feature].name
                    ))
                }),
            FeatureKind::Numeric { .. } => Err(Error::Schema(format!(
                "feature `{}` is numeric",
                self.features[feature].name
            ))),
        }
    }

    /// Bin index of a numeric value; values beyond the outermost thresholds
    /// fall in the boundary bins.
    pub fn bin_index(&self, feature: usize, value: f64) -> usize {
        match &self.features[feature].kind {
            FeatureKind::Numeric { bins, .. } => bins.iter().take_while(|t| value >= **t).count(),
            FeatureKind::Categorical { .. } => panic!("bin_index on categorical feature"),
        }
    }
}

/// One feature's value inside a [`UserState`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Value {
    Cat(usize),
    Num(f64),
}

/// A user's full attribute vector, conforming to a [`FeatureSchema`].
#[derive(Debug, Clone, PartialEq)]
pub struct UserState {
    values: Vec<Value>,
}

impl UserState {
    pub fn new(schema: &FeatureSchema, values: Vec<Value>) -> Result<Self> {
        if values.len() != schema.len() {
            return Err(Error::Schema(format!(
                "state has {} values, schema has {} features",
                values.len(),
                schema.len()
            )));
        }
        for (i, v) in values.iter().enumerate() {
            match (v, &schema.feature(i).kind) {
                (Value::Cat(c), FeatureKind::Categorical { values }) => {
                    if *c >= values.len() {
                        return Err(Error::Schema(format!(
                            "categorical index {c} out of range for `{}`",
                            schema.feature(i).name
                        )));
                    }
                }
                (Value::Num(x), FeatureKind::Numeric { .. }) => {
                    if !x.is_finite() {
                        return Err(Error::Schema(format!(
                            "non-finite value for `{}`",
                            schema.feature(i).name
                        )));
                    }
                }
                _ => {
                    return Err(Error::Schema(format!(
                        "value kind mismatch for `{}`",
                        schema.feature(i).name
                    )))
                }
            }
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[Value] {
        &self.values
    }

    pub fn value(&self, feature: usize) -> Value {
        self.values[feature]
    }

    pub(crate) fn set(&mut self, feature: usize, value: Value) {
        self.values[feature] = value;
    }

    /// Ordinal level of a feature: category index or bin index.
    pub fn ordinal(&self, schema: &FeatureSchema, feature: usize) -> usize {
        match self.values[feature] {
            Value::Cat(c) => c,
            Value::Num(x) => schema.bin_index(feature, x),
        }
    }

    /// Human-readable rendering of one feature value.
    pub fn render(&self, schema: &FeatureSchema, feature: usize) -> String {
        match (self.values[feature], &schema.feature(feature).kind) {
            (Value::Cat(c), FeatureKind::Categorical { values }) => values[c].clone(),
            (Value::Num(x), _) => format_num(x),
            _ => unreachable!("validated at construction"),
        }
    }

    pub fn to_json(&self, schema: &FeatureSchema) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        for i in 0..schema.len() {
            let v = match self.values[i] {
                Value::Cat(_) => serde_json::Value::String(self.render(schema, i)),
                Value::Num(x) => serde_json::json!(x),
            };
            map.insert(schema.feature(i).name.clone(), v);
        }
        serde_json::Value::Object(map)
    }
}

/// Integer-like floats print without a trailing `.0` so CSV files stay tidy.
pub fn format_num(x: f64) -> String {
    if x == x.trunc() && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_schema() -> FeatureSchema {
        FeatureSchema::new(vec![
            Feature {
                name: "color".into(),
                kind: FeatureKind::Categorical {
                    values: vec!["red".into(), "green".into(), "blue".into()],
                },
                protected: false,
            },
            Feature {
                name: "income".into(),
                kind: FeatureKind::Numeric {
                    bins: vec![1000.0, 2000.0],
                    range: (0.0, 5000.0),
                },
                protected: false,
            },
        ])
        .unwrap()
    }

    #[test]
    fn duplicate_names_rejected() {
        let err = FeatureSchema::new(vec![
            Feature {
                name: "a".into(),
                kind: FeatureKind::Categorical { values: vec!["x".into()] },
                protected: false,
            },
            Feature {
                name: "a".into(),
                kind: FeatureKind::Categorical { values: vec!["y".into()] },
                protected: false,
            },
        ])
        .unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn bins_must_increase() {
        let err = FeatureSchema::new(vec![Feature {
            name: "x".into(),
            kind: FeatureKind::Numeric { bins: vec![2.0, 1.0], range: (0.0, 3.0) },
            protected: false,
        }])
        .unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn bin_index_covers_the_line() {
        let schema = toy_schema();
        assert_eq!(schema.bin_index(1, -10.0), 0);
        assert_eq!(schema.bin_index(1, 999.9), 0);
        assert_eq!(schema.bin_index(1, 1000.0), 1);
        assert_eq!(schema.bin_index(1, 1999.0), 1);
        assert_eq!(schema.bin_index(1, 2000.0), 2);
        assert_eq!(schema.bin_index(1, 1e9), 2);
    }

    #[test]
    fn state_validation() {
        let schema = toy_schema();
        let s = UserState::new(&schema, vec![Value::Cat(1), Value::Num(1500.0)]).unwrap();
        assert_eq!(s.ordinal(&schema, 0), 1);
        assert_eq!(s.ordinal(&schema, 1), 1);
        assert!(UserState::new(&schema, vec![Value::Cat(7), Value::Num(0.0)]).is_err());
        assert!(UserState::new(&schema, vec![Value::Cat(0), Value::Num(f64::NAN)]).is_err());
        assert!(UserState::new(&schema, vec![Value::Num(0.0), Value::Cat(0)]).is_err());
    }
}
