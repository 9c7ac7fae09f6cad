//! Datasets: ancestral sampling from the causal graph, delimited-text
//! loading, and the train/test split helper.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::Domain;
use crate::error::{Error, Result};
use crate::schema::{FeatureKind, UserState, Value};

#[derive(Debug, Clone)]
pub struct Dataset {
    pub rows: Vec<UserState>,
    pub labels: Option<Vec<bool>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

fn sample_weighted(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut pick = rng.gen_range(0.0..total);
    for (i, w) in weights.iter().enumerate() {
        if pick < *w {
            return i;
        }
        pick -= w;
    }
    weights.len() - 1
}

/// Draws a concrete numeric value uniformly inside the chosen bin, bounded
/// by the feature's declared range.
fn sample_in_bin(rng: &mut ChaCha8Rng, bins: &[f64], range: (f64, f64), bin: usize) -> f64 {
    let lo = if bin == 0 { range.0 } else { bins[bin - 1].max(range.0) };
    let hi = if bin == bins.len() { range.1 } else { bins[bin].min(range.1) };
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Samples `n` states in topological order of the causal graph, evaluating
/// the domain's label formula (with configured noise) for each row.
/// Deterministic for a fixed seed.
pub fn sample_synthetic(domain: &Domain, n: usize, seed: u64) -> Result<Dataset> {
    let gen = domain
        .generator
        .as_ref()
        .ok_or_else(|| Error::Config(format!("config `{}` has no generator", domain.name)))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    let mut labels = domain.label.as_ref().map(|_| Vec::with_capacity(n));
    let order = domain.graph.topological_order();
    for _ in 0..n {
        let mut values = vec![Value::Num(0.0); domain.schema.len()];
        let mut ordinals = vec![0usize; domain.schema.len()];
        for &f in order {
            let fg = &gen.per_feature[f];
            let case = fg
                .cases
                .iter()
                .find(|c| c.when.iter().all(|&(wf, lo, hi)| ordinals[wf] >= lo && ordinals[wf] <= hi))
                .ok_or_else(|| {
                    Error::Config(format!(
                        "no generator case matches for `{}`",
                        domain.schema.feature(f).name
                    ))
                })?;
            let level = sample_weighted(&mut rng, &case.weights);
            ordinals[f] = level;
            values[f] = match &domain.schema.feature(f).kind {
                FeatureKind::Categorical { .. } => Value::Cat(level),
                FeatureKind::Numeric { bins, range } => {
                    Value::Num(sample_in_bin(&mut rng, bins, *range, level))
                }
            };
        }
        let state = UserState::new(&domain.schema, values)?;
        if let (Some(labels), Some(spec)) = (labels.as_mut(), domain.label.as_ref()) {
            let mut y = spec.evaluate(&domain.schema, &state);
            if domain.label_noise > 0.0 && rng.gen_range(0.0..1.0) < domain.label_noise {
                y = !y;
            }
            labels.push(y);
        }
        rows.push(state);
    }
    Ok(Dataset { rows, labels })
}

pub fn save_csv(domain: &Domain, dataset: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> =
        domain.schema.features().iter().map(|f| f.name.clone()).collect();
    if dataset.labels.is_some() {
        header.push("label".into());
    }
    w.write_record(&header)?;
    for (i, row) in dataset.rows.iter().enumerate() {
        let mut rec: Vec<String> =
            (0..domain.schema.len()).map(|f| row.render(&domain.schema, f)).collect();
        if let Some(labels) = &dataset.labels {
            rec.push(if labels[i] { "1".into() } else { "0".into() });
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Loads a delimited text file whose header must name every schema feature
/// (plus an optional `label` column). Errors carry the offending row index.
pub fn load_csv(domain: &Domain, path: &Path) -> Result<Dataset> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let mut col_of = vec![usize::MAX; domain.schema.len()];
    let mut label_col = None;
    for (ci, name) in header.iter().enumerate() {
        if name == "label" {
            label_col = Some(ci);
        } else {
            let f = domain
                .schema
                .feature_index(name)
                .map_err(|_| Error::Data { row: 0, reason: format!("unknown column `{name}`") })?;
            col_of[f] = ci;
        }
    }
    for (f, c) in col_of.iter().enumerate() {
        if *c == usize::MAX {
            return Err(Error::Data {
                row: 0,
                reason: format!("missing column `{}`", domain.schema.feature(f).name),
            });
        }
    }
    let mut rows = Vec::new();
    let mut labels = label_col.map(|_| Vec::new());
    for (ri, rec) in r.records().enumerate() {
        let rec = rec?;
        let row_no = ri + 1;
        let mut values = Vec::with_capacity(domain.schema.len());
        for f in 0..domain.schema.len() {
            let raw = rec.get(col_of[f]).ok_or_else(|| Error::Data {
                row: row_no,
                reason: "short record".into(),
            })?;
            let v = match &domain.schema.feature(f).kind {
                FeatureKind::Categorical { .. } => Value::Cat(
                    domain.schema.categorical_index(f, raw).map_err(|_| Error::Data {
                        row: row_no,
                        reason: format!(
                            "value `{raw}` not in vocabulary of `{}`",
                            domain.schema.feature(f).name
                        ),
                    })?,
                ),
                FeatureKind::Numeric { .. } => {
                    Value::Num(raw.parse::<f64>().map_err(|_| Error::Data {
                        row: row_no,
                        reason: format!(
                            "cannot parse `{raw}` as number for `{}`",
                            domain.schema.feature(f).name
                        ),
                    })?)
                }
            };
            values.push(v);
        }
        let state = UserState::new(&domain.schema, values)
            .map_err(|e| Error::Data { row: row_no, reason: e.to_string() })?;
        if let (Some(labels), Some(lc)) = (labels.as_mut(), label_col) {
            let raw = rec.get(lc).ok_or_else(|| Error::Data {
                row: row_no,
                reason: "missing label".into(),
            })?;
            labels.push(match raw {
                "1" | "true" => true,
                "0" | "false" => false,
                other => {
                    return Err(Error::Data {
                        row: row_no,
                        reason: format!("bad label `{other}`"),
                    })
                }
            });
        }
        rows.push(state);
    }
    Ok(Dataset { rows, labels })
}

/// Random 80/20-style split: shuffled indices, first `frac` in train.
/// Train and test are disjoint and cover the dataset.
pub fn split_indices(n: usize, frac: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let cut = ((n as f64) * frac).round() as usize;
    let test = idx.split_off(cut.min(n));
    (idx, test)
}
