use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use super::DataError;

/// Plug-in Shannon entropies in bits.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyTriple {
    pub hx: f64,
    pub hy: f64,
    pub hxy: f64,
}

impl EntropyTriple {
    /// `H(x) + H(y) - H(x, y)`.
    pub fn mutual_information(&self) -> f64 {
        self.hx + self.hy - self.hxy
    }

    /// Joint entropy is strictly below the sum of marginals.
    pub fn is_correlated(&self) -> bool {
        self.hxy < self.hx + self.hy - 1e-12
    }
}

fn plug_in<K: Hash + Eq>(symbols: impl Iterator<Item = K>, n: usize) -> f64 {
    let mut counts: HashMap<K, usize> = HashMap::new();
    for s in symbols {
        *counts.entry(s).or_default() += 1;
    }
    let n = n as f64;
    // sorted so the float sum does not depend on hash order
    let mut counts: Vec<usize> = counts.into_values().collect();
    counts.sort_unstable();
    counts
        .into_iter()
        .map(|c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

pub fn entropy_check<T: Hash + Eq>(x: &[T], y: &[T]) -> Result<EntropyTriple, DataError> {
    if x.len() != y.len() {
        return Err(DataError::Usage(format!(
            "entropy of sequences with lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.is_empty() {
        return Err(DataError::Usage("entropy of empty sequences".into()));
    }
    let n = x.len();
    Ok(EntropyTriple {
        hx: plug_in(x.iter(), n),
        hy: plug_in(y.iter(), n),
        hxy: plug_in(x.iter().zip(y), n),
    })
}

/// Equal-frequency binning into at most `bins` symbols; equal values always
/// share a bin.
pub fn discretize(values: &[f64], bins: usize) -> Vec<usize> {
    if values.is_empty() || bins <= 1 {
        return vec![0; values.len()];
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let cuts: Vec<f64> = (1..bins)
        .map(|i| sorted[i * sorted.len() / bins])
        .collect();
    values
        .iter()
        .map(|v| cuts.partition_point(|c| c <= v))
        .collect()
}
