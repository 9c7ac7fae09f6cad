//! Binary state encoding: one-hot blocks per feature.
//!
//! Categorical features one-hot their value; numeric features one-hot the
//! bin their value falls into. Values beyond the outermost thresholds land
//! in the boundary bins, so every state encodes.

use crate::schema::{FeatureSchema, UserState, Value};

#[derive(Debug, Clone)]
pub struct Block {
    pub feature: usize,
    pub offset: usize,
    pub width: usize,
}

#[derive(Debug, Clone)]
pub struct BinaryEncoding {
    blocks: Vec<Block>,
    width: usize,
}

impl BinaryEncoding {
    pub fn new(schema: &FeatureSchema) -> Self {
        let mut blocks = Vec::with_capacity(schema.len());
        let mut offset = 0;
        for (i, f) in schema.features().iter().enumerate() {
            let width = f.kind.ordinal_count();
            blocks.push(Block { feature: i, offset, width });
            offset += width;
        }
        Self { blocks, width: offset }
    }

    /// Total bit width |B(s)|.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    /// Maps a bit position back to (feature index, position within block).
    pub fn bit_meaning(&self, bit: usize) -> (usize, usize) {
        let block = self
            .blocks
            .iter()
            .rfind(|b| bit >= b.offset)
            .expect("bit within width");
        (block.feature, bit - block.offset)
    }

    pub fn encode(&self, schema: &FeatureSchema, state: &UserState) -> Vec<u8> {
        let mut bits = vec![0u8; self.width];
        for b in &self.blocks {
            let hot = match state.value(b.feature) {
                Value::Cat(c) => c,
                Value::Num(x) => schema.bin_index(b.feature, x),
            };
            bits[b.offset + hot] = 1;
        }
        bits
    }

    /// Same encoding as floats, ready as network input.
    pub fn encode_f64(&self, schema: &FeatureSchema, state: &UserState) -> Vec<f64> {
        self.encode(schema, state).into_iter().map(f64::from).collect()
    }
}
