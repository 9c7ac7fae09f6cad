//! Greedy binary CART over bit vectors, with rule extraction.
//!
//! Internal nodes test one bit; leaves hold an action label decided by
//! majority. Splits maximize Gini gain, breaking ties toward the lowest bit
//! index; leaf-label ties break toward the lexicographically smallest
//! rendered label. The root-to-leaf path of a prediction renders back into
//! a conjunction of feature-level literals.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dsl::Action;
use crate::encoding::BinaryEncoding;
use crate::schema::{format_num, FeatureKind, FeatureSchema};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreeConfig {
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self { max_depth: 6, min_leaf: 1 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum TreeNode {
    Leaf { action: Action },
    Split { bit: usize, zero: Box<TreeNode>, one: Box<TreeNode> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecisionTree {
    root: TreeNode,
}

/// One bit test on the path to a leaf.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Literal {
    pub bit: usize,
    pub expected: bool,
}

/// Conjunction of bit tests; an empty rule is the constant `true`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Rule {
    pub literals: Vec<Literal>,
}

impl Rule {
    pub fn satisfied_by(&self, bits: &[u8]) -> bool {
        self.literals.iter().all(|l| (bits[l.bit] == 1) == l.expected)
    }

    /// Renders the conjunction in feature terms, e.g.
    /// `income >= 20000 and education = bachelor`.
    pub fn render(&self, schema: &FeatureSchema, encoding: &BinaryEncoding) -> String {
        if self.literals.is_empty() {
            return "true".into();
        }
        self.literals
            .iter()
            .map(|l| render_literal(l, schema, encoding))
            .collect::<Vec<_>>()
            .join(" and ")
    }
}

fn render_literal(l: &Literal, schema: &FeatureSchema, encoding: &BinaryEncoding) -> String {
    let (feature, pos) = encoding.bit_meaning(l.bit);
    let f = schema.feature(feature);
    match &f.kind {
        FeatureKind::Categorical { values } => {
            if l.expected {
                format!("{} = {}", f.name, values[pos])
            } else {
                format!("{} != {}", f.name, values[pos])
            }
        }
        FeatureKind::Numeric { bins, .. } => {
            let last = bins.len();
            match (pos, l.expected) {
                (0, true) => format!("{} < {}", f.name, format_num(bins[0])),
                (0, false) => format!("{} >= {}", f.name, format_num(bins[0])),
                (p, true) if p == last => format!("{} >= {}", f.name, format_num(bins[last - 1])),
                (p, false) if p == last => format!("{} < {}", f.name, format_num(bins[last - 1])),
                (p, true) => format!(
                    "{} <= {} < {}",
                    format_num(bins[p - 1]),
                    f.name,
                    format_num(bins[p])
                ),
                (p, false) => format!(
                    "not({} <= {} < {})",
                    format_num(bins[p - 1]),
                    f.name,
                    format_num(bins[p])
                ),
            }
        }
    }
}

fn gini(counts: &BTreeMap<Action, usize>, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let mut sum_sq = 0.0;
    for &c in counts.values() {
        let p = c as f64 / total as f64;
        sum_sq += p * p;
    }
    1.0 - sum_sq
}

fn majority(counts: &BTreeMap<Action, usize>, render: &impl Fn(Action) -> String) -> Action {
    let best_count = *counts.values().max().expect("non-empty leaf");
    counts
        .iter()
        .filter(|(_, c)| **c == best_count)
        .map(|(a, _)| *a)
        .min_by_key(|a| render(*a))
        .expect("non-empty leaf")
}

impl DecisionTree {
    /// Fits a tree to (bit vector, action) pairs. `render` supplies the
    /// label strings used only for deterministic tie-breaking.
    pub fn fit(
        samples: &[(Vec<u8>, Action)],
        cfg: &TreeConfig,
        render: &impl Fn(Action) -> String,
    ) -> Self {
        assert!(!samples.is_empty(), "cannot fit a tree to no samples");
        let width = samples[0].0.len();
        let indices: Vec<usize> = (0..samples.len()).collect();
        let root = build(samples, &indices, width, 0, cfg, render);
        Self { root }
    }

    pub fn predict(&self, bits: &[u8]) -> Action {
        self.predict_with_path(bits).0
    }

    /// Prediction plus the rule of the path taken.
    pub fn predict_with_path(&self, bits: &[u8]) -> (Action, Rule) {
        let mut node = &self.root;
        let mut rule = Rule::default();
        loop {
            match node {
                TreeNode::Leaf { action } => return (*action, rule),
                TreeNode::Split { bit, zero, one } => {
                    let taken = bits[*bit] == 1;
                    rule.literals.push(Literal { bit: *bit, expected: taken });
                    node = if taken { one } else { zero };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn d(n: &TreeNode) -> usize {
            match n {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { zero, one, .. } => 1 + d(zero).max(d(one)),
            }
        }
        d(&self.root)
    }

    pub fn training_accuracy(&self, samples: &[(Vec<u8>, Action)]) -> f64 {
        let hit = samples.iter().filter(|(b, a)| self.predict(b) == *a).count();
        hit as f64 / samples.len().max(1) as f64
    }
}

fn build(
    samples: &[(Vec<u8>, Action)],
    indices: &[usize],
    width: usize,
    depth: usize,
    cfg: &TreeConfig,
    render: &impl Fn(Action) -> String,
) -> TreeNode {
    let mut counts: BTreeMap<Action, usize> = BTreeMap::new();
    for &i in indices {
        *counts.entry(samples[i].1).or_default() += 1;
    }
    let total = indices.len();
    let parent_gini = gini(&counts, total);
    if counts.len() == 1 || depth >= cfg.max_depth || total < 2 * cfg.min_leaf {
        return TreeNode::Leaf { action: majority(&counts, render) };
    }
    let mut best: Option<(f64, usize)> = None;
    for bit in 0..width {
        let mut left: BTreeMap<Action, usize> = BTreeMap::new();
        let mut right: BTreeMap<Action, usize> = BTreeMap::new();
        let mut n_left = 0;
        for &i in indices {
            if samples[i].0[bit] == 0 {
                *left.entry(samples[i].1).or_default() += 1;
                n_left += 1;
            } else {
                *right.entry(samples[i].1).or_default() += 1;
            }
        }
        let n_right = total - n_left;
        if n_left < cfg.min_leaf || n_right < cfg.min_leaf {
            continue;
        }
        let weighted = (n_left as f64 * gini(&left, n_left)
            + n_right as f64 * gini(&right, n_right))
            / total as f64;
        let gain = parent_gini - weighted;
        if best.map_or(true, |(g, _)| gain > g + 1e-12) {
            best = Some((gain, bit));
        }
    }
    match best {
        Some((gain, bit)) if gain > 1e-12 => {
            let zero: Vec<usize> =
                indices.iter().copied().filter(|&i| samples[i].0[bit] == 0).collect();
            let one: Vec<usize> =
                indices.iter().copied().filter(|&i| samples[i].0[bit] == 1).collect();
            TreeNode::Split {
                bit,
                zero: Box::new(build(samples, &zero, width, depth + 1, cfg, render)),
                one: Box::new(build(samples, &one, width, depth + 1, cfg, render)),
            }
        }
        _ => TreeNode::Leaf { action: majority(&counts, render) },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn a(func: usize) -> Action {
        Action { func, arg: Some(0) }
    }

    fn label(action: Action) -> String {
        format!("f{}", action.func)
    }

    #[test]
    fn pure_samples_give_a_depth_zero_tree() {
        let samples = vec![(vec![0, 1], a(1)), (vec![1, 0], a(1))];
        let tree = DecisionTree::fit(&samples, &TreeConfig::default(), &label);
        assert_eq!(tree.depth(), 0);
        let (_, rule) = tree.predict_with_path(&[0, 0]);
        assert!(rule.literals.is_empty());
    }

    #[test]
    fn single_bit_separation_is_learned_exactly() {
        let samples = vec![
            (vec![0, 0, 1], a(1)),
            (vec![0, 1, 0], a(1)),
            (vec![1, 0, 0], a(2)),
            (vec![1, 1, 1], a(2)),
        ];
        let tree = DecisionTree::fit(&samples, &TreeConfig::default(), &label);
        assert_eq!(tree.depth(), 1);
        assert_eq!(tree.training_accuracy(&samples), 1.0);
    }

    #[test]
    fn split_ties_break_to_the_lowest_bit() {
        // Bits 0 and 1 are identical separators.
        let samples = vec![(vec![0, 0], a(1)), (vec![1, 1], a(2))];
        let tree = DecisionTree::fit(&samples, &TreeConfig::default(), &label);
        match &tree.root {
            TreeNode::Split { bit, .. } => assert_eq!(*bit, 0),
            other => panic!("expected a split, got {other:?}"),
        }
    }

    #[test]
    fn contradictory_samples_fall_to_majority_with_label_tie_break() {
        // Identical states, three different labels with a 2/1/1 count: the
        // majority wins; and in a 1/1 tie the smaller label string wins.
        let samples = vec![
            (vec![1, 0], a(3)),
            (vec![1, 0], a(3)),
            (vec![1, 0], a(1)),
            (vec![1, 0], a(2)),
        ];
        let tree = DecisionTree::fit(&samples, &TreeConfig::default(), &label);
        assert_eq!(tree.predict(&[1, 0]), a(3));
        let tied = vec![(vec![1, 0], a(2)), (vec![1, 0], a(1))];
        let tree = DecisionTree::fit(&tied, &TreeConfig::default(), &label);
        assert_eq!(tree.predict(&[1, 0]), a(1));
    }

    #[test]
    fn max_depth_is_respected() {
        // Parity labels force deep trees; cap at 2.
        let mut samples = Vec::new();
        for i in 0..16u8 {
            let bits = vec![i & 1, (i >> 1) & 1, (i >> 2) & 1, (i >> 3) & 1];
            let parity = bits.iter().sum::<u8>() % 2;
            samples.push((bits, a(parity as usize)));
        }
        let cfg = TreeConfig { max_depth: 2, min_leaf: 1 };
        let tree = DecisionTree::fit(&samples, &cfg, &label);
        assert!(tree.depth() <= 2);
    }

    #[test]
    fn states_satisfy_their_own_rules() {
        let samples = vec![
            (vec![0, 0, 1], a(1)),
            (vec![0, 1, 0], a(2)),
            (vec![1, 0, 0], a(3)),
            (vec![1, 1, 1], a(4)),
        ];
        let tree = DecisionTree::fit(&samples, &TreeConfig::default(), &label);
        for (bits, _) in &samples {
            let (_, rule) = tree.predict_with_path(bits);
            assert!(rule.satisfied_by(bits));
        }
    }

    #[test]
    fn literal_rendering_uses_feature_semantics() {
        use crate::schema::{Feature, FeatureSchema};
        let schema = FeatureSchema::new(vec![
            Feature {
                name: "education".into(),
                kind: FeatureKind::Categorical { values: vec!["none".into(), "bachelor".into()] },
                protected: false,
            },
            Feature {
                name: "income".into(),
                kind: FeatureKind::Numeric { bins: vec![5000.0, 10000.0], range: (0.0, 20000.0) },
                protected: false,
            },
        ])
        .unwrap();
        let enc = BinaryEncoding::new(&schema);
        // bits: [education=none, education=bachelor, income<5000,
        //        5000<=income<10000, income>=10000]
        let r = |bit, expected| {
            Rule { literals: vec![Literal { bit, expected }] }.render(&schema, &enc)
        };
        assert_eq!(r(1, true), "education = bachelor");
        assert_eq!(r(1, false), "education != bachelor");
        assert_eq!(r(2, true), "income < 5000");
        assert_eq!(r(3, true), "5000 <= income < 10000");
        assert_eq!(r(3, false), "not(5000 <= income < 10000)");
        assert_eq!(r(4, true), "income >= 10000");
        assert_eq!(Rule::default().render(&schema, &enc), "true");
    }
}
