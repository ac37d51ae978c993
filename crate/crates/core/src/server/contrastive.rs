//! Hierarchical contrastive loss over two views of the same windows.
//!
//! At every pooling level the loss combines
//! * an instance term: for each timestamp, `z1[i]` must pick out `z2[i]`
//!   among `z2[0..N]` (and symmetrically `z2[i]` among `z1[0..N]`);
//! * a temporal term: for each instance, `z1[t]` must pick out `z2[t]`
//!   among `z2[0..O]` (and symmetrically).
//!
//! Each term is the mean negative log-softmax of dot-product similarities.
//! Levels are produced by max-pooling pairs of timestamps (an odd trailing
//! step is dropped) until one timestamp remains; the loss is the mean over
//! levels where at least one term is defined.

use crate::nn::gemm::{gemm, Layout};
use crate::nn::{Graph, Tensor, Var};

use super::ServerError;

struct Level {
    n: usize,
    len: usize,
    z1: Vec<f64>,
    z2: Vec<f64>,
    /// For each pooled entry, the flat index it was taken from one level up.
    arg1: Vec<usize>,
    arg2: Vec<usize>,
}

fn max_pool(z: &[f64], n: usize, len: usize, d: usize) -> (Vec<f64>, Vec<usize>) {
    let half = len / 2;
    let mut out = Vec::with_capacity(n * half * d);
    let mut arg = Vec::with_capacity(n * half * d);
    for i in 0..n {
        for t in 0..half {
            let a = (i * len + 2 * t) * d;
            let b = a + d;
            for c in 0..d {
                if z[b + c] > z[a + c] {
                    out.push(z[b + c]);
                    arg.push(b + c);
                } else {
                    out.push(z[a + c]);
                    arg.push(a + c);
                }
            }
        }
    }
    (out, arg)
}

/// Symmetric InfoNCE over a `m × m` similarity block whose diagonal holds
/// the positives. Adds `scale * d loss / d sim` into `dsim` and returns the
/// loss `(row_term + col_term) / 2`, each averaged over anchors.
fn symmetric_infonce(sim: &[f64], m: usize, scale: f64, dsim: &mut [f64]) -> f64 {
    let mut loss = 0.0;
    let w = scale / (2.0 * m as f64);
    // rows: anchor from view 1
    for i in 0..m {
        let row = &sim[i * m..(i + 1) * m];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|s| (s - max).exp()).sum();
        let lse = max + z.ln();
        loss += lse - row[i];
        for j in 0..m {
            dsim[i * m + j] += w * (row[j] - lse).exp();
        }
        dsim[i * m + i] -= w;
    }
    // columns: anchor from view 2
    for j in 0..m {
        let max = (0..m).map(|i| sim[i * m + j]).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = (0..m).map(|i| (sim[i * m + j] - max).exp()).sum();
        let lse = max + z.ln();
        loss += lse - sim[j * m + j];
        for i in 0..m {
            dsim[i * m + j] += w * (sim[i * m + j] - lse).exp();
        }
        dsim[j * m + j] -= w;
    }
    loss / (2.0 * m as f64)
}

/// Loss value and gradients with respect to both views.
pub fn hierarchical_contrastive_loss_grad(
    z1: &Tensor,
    z2: &Tensor,
) -> Result<(f64, Tensor, Tensor), ServerError> {
    if z1.shape() != z2.shape() || z1.shape().len() != 3 {
        return Err(ServerError::Shape(format!(
            "contrastive views must share a [batch, time, dim] shape, got {:?} and {:?}",
            z1.shape(),
            z2.shape()
        )));
    }
    let (n, len, d) = (z1.shape()[0], z1.shape()[1], z1.shape()[2]);
    if n < 2 && len < 2 {
        return Err(ServerError::UndefinedLoss { batch: n, overlap: len });
    }

    let mut levels = vec![Level {
        n,
        len,
        z1: z1.data().to_vec(),
        z2: z2.data().to_vec(),
        arg1: Vec::new(),
        arg2: Vec::new(),
    }];
    while levels.last().unwrap().len > 1 {
        let prev = levels.last().unwrap();
        let (p1, a1) = max_pool(&prev.z1, n, prev.len, d);
        let (p2, a2) = max_pool(&prev.z2, n, prev.len, d);
        let len = prev.len / 2;
        levels.push(Level {
            n,
            len,
            z1: p1,
            z2: p2,
            arg1: a1,
            arg2: a2,
        });
    }

    let counted = levels.iter().filter(|l| l.n >= 2 || l.len >= 2).count();
    let level_weight = 1.0 / counted as f64;
    let mut total = 0.0;
    let mut grads1: Vec<Vec<f64>> = Vec::with_capacity(levels.len());
    let mut grads2: Vec<Vec<f64>> = Vec::with_capacity(levels.len());

    for level in &levels {
        let (ln, lt) = (level.n, level.len);
        let mut g1 = vec![0.0; level.z1.len()];
        let mut g2 = vec![0.0; level.z2.len()];
        if ln >= 2 {
            let scale = level_weight / lt as f64;
            let mut sim = vec![0.0; ln * ln];
            let mut dsim = vec![0.0; ln * ln];
            let strided = Layout { rs: (lt * d) as isize, cs: 1 };
            for t in 0..lt {
                let off = t * d;
                gemm(
                    ln, d, ln, 1.0,
                    &level.z1[off..], strided,
                    &level.z2[off..], Layout { rs: 1, cs: (lt * d) as isize },
                    0.0, &mut sim, Layout::rows(ln),
                );
                dsim.iter_mut().for_each(|v| *v = 0.0);
                total += scale * symmetric_infonce(&sim, ln, scale, &mut dsim);
                gemm(ln, ln, d, 1.0, &dsim, Layout::rows(ln), &level.z2[off..], strided, 1.0, &mut g1[off..], strided);
                gemm(ln, ln, d, 1.0, &dsim, Layout::transposed(ln), &level.z1[off..], strided, 1.0, &mut g2[off..], strided);
            }
        }
        if lt >= 2 {
            let scale = level_weight / ln as f64;
            let mut sim = vec![0.0; lt * lt];
            let mut dsim = vec![0.0; lt * lt];
            for i in 0..ln {
                let off = i * lt * d;
                let a = &level.z1[off..off + lt * d];
                let b = &level.z2[off..off + lt * d];
                gemm(lt, d, lt, 1.0, a, Layout::rows(d), b, Layout::transposed(d), 0.0, &mut sim, Layout::rows(lt));
                dsim.iter_mut().for_each(|v| *v = 0.0);
                total += scale * symmetric_infonce(&sim, lt, scale, &mut dsim);
                gemm(lt, lt, d, 1.0, &dsim, Layout::rows(lt), b, Layout::rows(d), 1.0, &mut g1[off..off + lt * d], Layout::rows(d));
                gemm(lt, lt, d, 1.0, &dsim, Layout::transposed(lt), a, Layout::rows(d), 1.0, &mut g2[off..off + lt * d], Layout::rows(d));
            }
        }
        grads1.push(g1);
        grads2.push(g2);
    }

    // route pooled gradients back to the entries that won each max
    for l in (1..levels.len()).rev() {
        let (upper, lower) = grads1.split_at_mut(l);
        for (k, &src) in levels[l].arg1.iter().enumerate() {
            upper[l - 1][src] += lower[0][k];
        }
        let (upper, lower) = grads2.split_at_mut(l);
        for (k, &src) in levels[l].arg2.iter().enumerate() {
            upper[l - 1][src] += lower[0][k];
        }
    }

    if !total.is_finite() {
        return Err(ServerError::NonFiniteLoss(format!("contrastive loss is {total}")));
    }
    let g1 = Tensor::new(z1.shape(), grads1.swap_remove(0))?;
    let g2 = Tensor::new(z2.shape(), grads2.swap_remove(0))?;
    Ok((total, g1, g2))
}

pub fn hierarchical_contrastive_loss(z1: &Tensor, z2: &Tensor) -> Result<f64, ServerError> {
    hierarchical_contrastive_loss_grad(z1, z2).map(|(l, _, _)| l)
}

/// Records the loss on a graph so gradients flow into both views.
pub fn contrastive_node(g: &mut Graph, z1: Var, z2: Var) -> Result<Var, ServerError> {
    let (loss, g1, g2) = hierarchical_contrastive_loss_grad(g.value(z1), g.value(z2))?;
    Ok(g.custom(&[z1, z2], Tensor::scalar(loss), move |up| {
        let s = up.data()[0];
        let scale = |t: &Tensor| {
            let data = t.data().iter().map(|v| v * s).collect();
            Tensor::new(t.shape(), data).expect("same shape")
        };
        vec![scale(&g1), scale(&g2)]
    }))
}
