//! A small trainable MLP over binary-encoded states, used as a stand-in
//! black-box classifier for tabular datasets.
//!
//! Rectifier hidden layers, a sigmoid output thresholded at 0.5, plain
//! stochastic gradient descent on the cross-entropy loss. The classifier is
//! a fixture here, not the interesting part, so the implementation stays
//! deliberately plain.

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::Decision;
use crate::config::Domain;
use crate::data::Dataset;
use crate::encoding::BinaryEncoding;
use crate::error::{Error, Result};
use crate::persist;
use crate::schema::{FeatureSchema, UserState};

const MAGIC: &[u8; 4] = b"RCMD";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpConfig {
    /// Hidden layer widths; the depth is hidden layers plus the output layer.
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        // Five weight layers in total.
        Self { hidden: vec![64, 32, 16, 8], epochs: 300, lr: 0.05, seed: 0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
}

impl Mlp {
    fn new(input: usize, cfg: &MlpConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut dims = vec![input];
        dims.extend_from_slice(&cfg.hidden);
        dims.push(1);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let scale = (2.0 / fan_in as f64).sqrt();
            weights.push(Array2::from_shape_fn((fan_out, fan_in), |_| {
                rng.gen_range(-scale..scale)
            }));
            biases.push(Array1::zeros(fan_out));
        }
        Self { weights, biases }
    }

    /// Probability of the favourable class.
    pub fn probability(&self, input: &[f64]) -> f64 {
        let mut x = Array1::from_vec(input.to_vec());
        let last = self.weights.len() - 1;
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            x = w.dot(&x) + b;
            if i < last {
                x.mapv_inplace(|v| v.max(0.0));
            }
        }
        sigmoid(x[0])
    }

    pub fn predict_bits(&self, input: &[f64]) -> bool {
        self.probability(input) >= 0.5
    }

    fn sgd_step(&mut self, input: &[f64], target: f64, lr: f64) -> f64 {
        // Forward pass, keeping activations.
        let mut acts = vec![Array1::from_vec(input.to_vec())];
        let last = self.weights.len() - 1;
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = w.dot(acts.last().unwrap()) + b;
            if i < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            acts.push(z);
        }
        let p = sigmoid(acts[last + 1][0]);
        let loss = -(target * (p.max(1e-12)).ln() + (1.0 - target) * ((1.0 - p).max(1e-12)).ln());
        // Backward: cross-entropy with sigmoid gives (p - y) at the output.
        let mut delta = Array1::from_vec(vec![p - target]);
        for i in (0..self.weights.len()).rev() {
            let grad_w = outer(&delta, &acts[i]);
            let back = self.weights[i].t().dot(&delta);
            self.weights[i].scaled_add(-lr, &grad_w);
            self.biases[i].scaled_add(-lr, &delta);
            if i > 0 {
                delta = back;
                for (d, a) in delta.iter_mut().zip(acts[i].iter()) {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
        }
        loss
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        persist::save(path, MAGIC, VERSION, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        persist::load(path, MAGIC, VERSION)
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((a.len(), b.len()));
    for i in 0..a.len() {
        for j in 0..b.len() {
            out[(i, j)] = a[i] * b[j];
        }
    }
    out
}

/// Trains an MLP on the binary encodings of a labeled dataset.
pub fn train_mlp(
    schema: &FeatureSchema,
    encoding: &BinaryEncoding,
    dataset: &Dataset,
    cfg: &MlpConfig,
) -> Result<Mlp> {
    let labels = dataset
        .labels
        .as_ref()
        .ok_or_else(|| Error::Config("training needs a labeled dataset".into()))?;
    if dataset.is_empty() {
        return Err(Error::Config("training needs a non-empty dataset".into()));
    }
    let inputs: Vec<Vec<f64>> =
        dataset.rows.iter().map(|r| encoding.encode_f64(schema, r)).collect();
    let mut mlp = Mlp::new(encoding.width(), cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    for _ in 0..cfg.epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        for &i in &order {
            mlp.sgd_step(&inputs[i], if labels[i] { 1.0 } else { 0.0 }, cfg.lr);
        }
    }
    Ok(mlp)
}

pub fn accuracy(
    schema: &FeatureSchema,
    encoding: &BinaryEncoding,
    mlp: &Mlp,
    rows: &[UserState],
    labels: &[bool],
) -> f64 {
    let correct = rows
        .iter()
        .zip(labels)
        .filter(|(r, l)| mlp.predict_bits(&encoding.encode_f64(schema, r)) == **l)
        .count();
    correct as f64 / rows.len().max(1) as f64
}

/// Adapter so a trained MLP can serve as the black box.
pub struct MlpClassifier {
    pub schema: FeatureSchema,
    pub encoding: BinaryEncoding,
    pub mlp: Mlp,
}

impl MlpClassifier {
    pub fn new(domain: &Domain, mlp: Mlp) -> Self {
        Self { schema: domain.schema.clone(), encoding: domain.encoding.clone(), mlp }
    }
}

impl Decision for MlpClassifier {
    fn decide(&self, state: &UserState) -> bool {
        self.mlp.predict_bits(&self.encoding.encode_f64(&self.schema, state))
    }
}
