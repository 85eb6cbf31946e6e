//! Run-length encoding of binary masks.
//!
//! Pixels are read in row-major order. `counts` alternates between runs of
//! background and foreground, always starting with background, so a mask
//! whose first pixel is set begins with a zero-length run.

use serde::{Deserialize, Serialize};

use crate::domain::BinaryMask;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    /// `[height, width]`.
    pub size: [usize; 2],
    pub counts: Vec<u64>,
}

impl RleMask {
    pub fn encode(mask: &BinaryMask) -> Self {
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u64;
        for &v in mask.as_slice() {
            let on = v != 0;
            if on != current {
                counts.push(run);
                run = 0;
                current = on;
            }
            run += 1;
        }
        counts.push(run);
        Self {
            size: [mask.height(), mask.width()],
            counts,
        }
    }

    pub fn decode(&self) -> Result<BinaryMask> {
        let [h, w] = self.size;
        let total: u64 = self.counts.iter().sum();
        if total != (h * w) as u64 {
            return Err(Error::ShapeMismatch(format!(
                "run lengths sum to {total}, expected {h}x{w} = {}",
                h * w
            )));
        }
        let mut values = Vec::with_capacity(h * w);
        for (i, &n) in self.counts.iter().enumerate() {
            values.extend(std::iter::repeat_n(u8::from(i % 2 == 1), n as usize));
        }
        let arr = ndarray::Array2::from_shape_vec((h, w), values).expect("length checked");
        BinaryMask::from_array(arr)
    }

    /// Number of foreground pixels.
    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).sum()
    }
}
