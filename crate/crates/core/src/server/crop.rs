use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ServerError;

/// Two overlapping sub-windows `[a1, b1)` and `[a2, b2)` with
/// `a1 <= a2 <= b1 <= b2`; the shared part is `[a2, b1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropPair {
    pub a1: usize,
    pub b1: usize,
    pub a2: usize,
    pub b2: usize,
}

impl CropPair {
    pub fn overlap(&self) -> Range<usize> {
        self.a2..self.b1
    }

    pub fn first(&self) -> Range<usize> {
        self.a1..self.b1
    }

    pub fn second(&self) -> Range<usize> {
        self.a2..self.b2
    }

    pub fn is_valid(&self, len: usize) -> bool {
        self.a1 <= self.a2 && self.a2 < self.b1 && self.b1 <= self.b2 && self.b2 <= len
    }
}

/// Samples an overlap of length in `[2, len]`, then extends it independently
/// to the left for the first crop and to the right for the second.
pub fn random_crop_pair<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Result<CropPair, ServerError> {
    if len < 2 {
        return Err(ServerError::Config(format!(
            "crop pairs need a window of at least 2 steps, got {len}"
        )));
    }
    let overlap = rng.random_range(2..=len);
    let left = rng.random_range(0..=len - overlap);
    let right = left + overlap;
    let ext_left = rng.random_range(0..=left);
    let ext_right = rng.random_range(right..=len);
    Ok(CropPair {
        a1: ext_left,
        b1: right,
        a2: left,
        b2: ext_right,
    })
}
