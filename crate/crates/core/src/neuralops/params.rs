use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

/// How a block is filled at construction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Init {
    Zeros,
    /// Uniform on `±sqrt(6 / (fan_in + fan_out))`.
    Glorot {
        fan_in: usize,
        fan_out: usize,
    },
    /// Uniform on `[0, scale)`.
    Uniform {
        scale: f64,
    },
}

/// Named, shaped slice of the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub init: Init,
}

impl Block {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Declaration-ordered list of parameter blocks packed into one vector.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamLayout {
    blocks: Vec<Block>,
    total: usize,
}

impl ParamLayout {
    pub fn push(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> Range<usize> {
        let block = Block {
            name: name.into(),
            shape: shape.to_vec(),
            offset: self.total,
            init,
        };
        let range = block.range();
        self.total += block.len();
        self.blocks.push(block);
        range
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn total(&self) -> usize {
        self.total
    }

    /// Name of the block that owns flat index `i`.
    pub fn owner(&self, i: usize) -> Option<&str> {
        self.blocks
            .iter()
            .find(|b| b.range().contains(&i))
            .map(|b| b.name.as_str())
    }

    /// First block containing a non-finite value.
    pub fn first_non_finite(&self, values: &[f64]) -> Option<&str> {
        values.iter().position(|v| !v.is_finite()).and_then(|i| self.owner(i))
    }

    pub fn initialize<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut values = vec![0.0; self.total];
        for block in &self.blocks {
            let dst = &mut values[block.range()];
            match block.init {
                Init::Zeros => {}
                Init::Glorot { fan_in, fan_out } => {
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    dst.iter_mut().for_each(|v| *v = limit * (2.0 * rng.gen::<f64>() - 1.0));
                }
                Init::Uniform { scale } => dst.iter_mut().for_each(|v| *v = scale * rng.gen::<f64>()),
            }
        }
        values
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};

    #[test]
    fn layout_and_init() {
        let mut layout = ParamLayout::default();
        let w = layout.push("w", &[3, 4], Init::Glorot { fan_in: 3, fan_out: 4 });
        let b = layout.push("b", &[4], Init::Zeros);
        assert_eq!(w, 0..12);
        assert_eq!(b, 12..16);
        assert_eq!(layout.total(), 16);
        assert_eq!(layout.owner(13), Some("b"));
        let v = layout.initialize(&mut stream(1, Domain::Init, 0));
        let limit = (6.0f64 / 7.0).sqrt();
        assert!(v[w].iter().all(|x| x.abs() <= limit));
        assert!(v[b.clone()].iter().all(|&x| x == 0.0));
        let mut bad = v.clone();
        bad[14] = f64::NAN;
        assert_eq!(layout.first_non_finite(&bad), Some("b"));
        assert_eq!(layout.first_non_finite(&v), None);
    }
}
