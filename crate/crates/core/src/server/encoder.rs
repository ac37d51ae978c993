use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{receptive_field, Graph, ParamId, ParameterSet, Tensor, Var};

use super::{ReprMatrix, ServerError};

/// Output stage of the encoder.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderHead {
    /// Per-timestep linear map `hidden → repr_dim`.
    #[default]
    Linear,
    /// A further residual dilated block widening `hidden → repr_dim`, with a
    /// linear projection on the skip path.
    ConvBlock,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub hidden: usize,
    pub blocks: usize,
    pub repr_dim: usize,
    pub kernel: usize,
    pub head: EncoderHead,
    /// Length of the training windows crops are drawn from, and of the
    /// sliding window behind inference-point representations.
    pub window: usize,
    /// Probability that a timestep's latent is zeroed during training.
    pub mask_prob: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub iterations: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            blocks: 3,
            repr_dim: 256,
            kernel: 3,
            head: EncoderHead::Linear,
            window: 128,
            mask_prob: 0.5,
            lr: 0.001,
            batch_size: 8,
            iterations: 600,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), ServerError> {
        let bad = |m: &str| Err(ServerError::Config(m.to_owned()));
        if self.repr_dim == 0 || self.hidden == 0 || self.blocks == 0 {
            return bad("encoder repr_dim, hidden and blocks must be at least 1");
        }
        if self.kernel == 0 || self.window < 2 || self.batch_size == 0 {
            return bad("encoder kernel, window (>= 2) and batch_size must be positive");
        }
        if !(0.0..1.0).contains(&self.mask_prob) {
            return bad("encoder mask_prob must lie in [0, 1)");
        }
        if !(self.lr > 0.0) {
            return bad("encoder lr must be positive");
        }
        Ok(())
    }

    /// Closed-form parameter count for `input_dims` input features.
    pub fn parameter_count(&self, input_dims: usize) -> usize {
        let (h, d, k) = (self.hidden, self.repr_dim, self.kernel);
        let conv = |cin: usize, cout: usize| cout * cin * k + cout;
        let body = input_dims * h + h + self.blocks * 2 * conv(h, h);
        body + match self.head {
            EncoderHead::Linear => h * d + d,
            EncoderHead::ConvBlock => conv(h, d) + conv(d, d) + h * d + d,
        }
    }
}

#[derive(Clone, Debug)]
struct Block {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    dilation: usize,
}

#[derive(Clone, Debug)]
enum Head {
    Linear { w: ParamId, b: ParamId },
    Conv { block: Block, proj_w: ParamId, proj_b: ParamId },
}

/// Dilated causal convolutional encoder producing one `repr_dim` vector per
/// input timestep.
#[derive(Clone, Debug)]
pub struct Encoder {
    config: EncoderConfig,
    input_dims: usize,
    params: ParameterSet,
    input_w: ParamId,
    input_b: ParamId,
    blocks: Vec<Block>,
    head: Head,
    version: u64,
}

fn add_block<R: Rng + ?Sized>(
    params: &mut ParameterSet,
    prefix: &str,
    cin: usize,
    cout: usize,
    kernel: usize,
    dilation: usize,
    rng: &mut R,
) -> Result<Block, ServerError> {
    Ok(Block {
        w1: params.add_uniform(&format!("{prefix}.conv1.w"), &[cout, cin, kernel], cin * kernel, rng)?,
        b1: params.add_uniform(&format!("{prefix}.conv1.b"), &[cout], cin * kernel, rng)?,
        w2: params.add_uniform(&format!("{prefix}.conv2.w"), &[cout, cout, kernel], cout * kernel, rng)?,
        b2: params.add_uniform(&format!("{prefix}.conv2.b"), &[cout], cout * kernel, rng)?,
        dilation,
    })
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(
        input_dims: usize,
        config: EncoderConfig,
        rng: &mut R,
    ) -> Result<Self, ServerError> {
        config.validate()?;
        if input_dims == 0 {
            return Err(ServerError::Config("encoder needs at least one input feature".into()));
        }
        let (h, d, k) = (config.hidden, config.repr_dim, config.kernel);
        let mut params = ParameterSet::new();
        let input_w = params.add_uniform("input.w", &[h, input_dims], input_dims, rng)?;
        let input_b = params.add_uniform("input.b", &[h], input_dims, rng)?;
        let blocks = (0..config.blocks)
            .map(|i| add_block(&mut params, &format!("block{i}"), h, h, k, 1 << i, rng))
            .collect::<Result<Vec<_>, _>>()?;
        let head = match config.head {
            EncoderHead::Linear => Head::Linear {
                w: params.add_uniform("head.w", &[d, h], h, rng)?,
                b: params.add_uniform("head.b", &[d], h, rng)?,
            },
            EncoderHead::ConvBlock => {
                let block = add_block(&mut params, "head", h, d, k, 1 << config.blocks, rng)?;
                Head::Conv {
                    block,
                    proj_w: params.add_uniform("head.proj.w", &[d, h], h, rng)?,
                    proj_b: params.add_uniform("head.proj.b", &[d], h, rng)?,
                }
            }
        };
        Ok(Self {
            config,
            input_dims,
            params,
            input_w,
            input_b,
            blocks,
            head,
            version: 0,
        })
    }

    /// Rebuilds an encoder around checkpointed parameters.
    pub fn from_parameters(
        input_dims: usize,
        config: EncoderConfig,
        params: ParameterSet,
        version: u64,
    ) -> Result<Self, ServerError> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut enc = Self::new(input_dims, config, &mut rng)?;
        if enc.params.layout() != params.layout() {
            return Err(ServerError::Config(
                "checkpoint parameters do not match the encoder configuration".into(),
            ));
        }
        enc.params = params;
        enc.version = version;
        Ok(enc)
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn input_dims(&self) -> usize {
        self.input_dims
    }

    pub fn repr_dim(&self) -> usize {
        self.config.repr_dim
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub(crate) fn bump_version(&mut self) -> u64 {
        self.version += 1;
        self.version
    }

    /// Number of trailing input steps that influence one output step.
    pub fn receptive_field(&self) -> usize {
        let k = self.config.kernel;
        let mut layers: Vec<(usize, usize)> = self
            .blocks
            .iter()
            .flat_map(|b| [(k, b.dilation), (k, b.dilation)])
            .collect();
        if let Head::Conv { block, .. } = &self.head {
            layers.extend([(k, block.dilation), (k, block.dilation)]);
        }
        receptive_field(layers)
    }

    fn block(&self, g: &mut Graph, x: Var, b: &Block, skip: Var) -> Result<Var, ServerError> {
        let p = &self.params;
        let a = g.gelu(x);
        let (w, bias) = (g.param(p, b.w1), g.param(p, b.b1));
        let a = g.conv1d_causal(a, w, bias, b.dilation)?;
        let a = g.gelu(a);
        let (w, bias) = (g.param(p, b.w2), g.param(p, b.b2));
        let a = g.conv1d_causal(a, w, bias, b.dilation)?;
        Ok(g.add(a, skip)?)
    }

    /// `x: [batch, time, input_dims]` → `[batch, time, repr_dim]`. When
    /// `mask` is given (one entry per batch×time), latents after the input
    /// projection are multiplied by it.
    pub fn forward(&self, g: &mut Graph, x: Var, mask: Option<Vec<f64>>) -> Result<Var, ServerError> {
        let last = *g.value(x).shape().last().unwrap_or(&0);
        if last != self.input_dims {
            return Err(ServerError::Config(format!(
                "encoder expects {} input features, got {last}",
                self.input_dims
            )));
        }
        let p = &self.params;
        let (w, b) = (g.param(p, self.input_w), g.param(p, self.input_b));
        let mut h = g.linear(x, w, Some(b))?;
        if let Some(mask) = mask {
            h = g.mask_time(h, mask)?;
        }
        for block in &self.blocks {
            h = self.block(g, h, block, h)?;
        }
        match &self.head {
            Head::Linear { w, b } => {
                let (w, b) = (g.param(p, *w), g.param(p, *b));
                Ok(g.linear(h, w, Some(b))?)
            }
            Head::Conv { block, proj_w, proj_b } => {
                let (w, b) = (g.param(p, *proj_w), g.param(p, *proj_b));
                let skip = g.linear(h, w, Some(b))?;
                self.block(g, h, block, skip)
            }
        }
    }

    /// Encodes a batch of equal-length windows, `[n, len, input_dims]` →
    /// `[n, len, repr_dim]`.
    pub fn encode_batch(&self, x: Tensor) -> Result<Tensor, ServerError> {
        let mut g = Graph::new();
        let xv = g.input(x);
        let z = self.forward(&mut g, xv, None)?;
        Ok(g.value(z).clone())
    }

    fn check_series(&self, series: &[f64]) -> Result<usize, ServerError> {
        if series.len() % self.input_dims != 0 {
            return Err(ServerError::Shape(format!(
                "series of {} values is not a multiple of {} features",
                series.len(),
                self.input_dims
            )));
        }
        Ok(series.len() / self.input_dims)
    }

    /// Causal encoding of rows `range` of a row-major `T × input_dims`
    /// series, returned time-major (`range.len() × repr_dim`).
    ///
    /// Work is split into chunks preceded by `receptive_field - 1` rows of
    /// context, which reproduces a single pass over the whole prefix.
    pub fn encode_rows(&self, series: &[f64], range: Range<usize>) -> Result<Vec<f64>, ServerError> {
        const CHUNK: usize = 1024;
        let rows = self.check_series(series)?;
        if range.end > rows || range.start > range.end {
            return Err(ServerError::Range(format!(
                "rows {range:?} requested from a series of {rows}"
            )));
        }
        let f = self.input_dims;
        let d = self.repr_dim();
        let context = self.receptive_field() - 1;
        let mut out = Vec::with_capacity(range.len() * d);
        let mut s = range.start;
        while s < range.end {
            let e = (s + CHUNK).min(range.end);
            let from = s.saturating_sub(context);
            let x = Tensor::new(&[1, e - from, f], series[from * f..e * f].to_vec())?;
            let z = self.encode_batch(x)?;
            out.extend_from_slice(&z.data()[(s - from) * d..]);
            s = e;
        }
        Ok(out)
    }

    /// Representation vector at time `t` from the sliding window of
    /// `config.window` rows ending at `t`; rows after `t` are never read.
    pub fn inference_point(&self, series: &[f64], t: usize) -> Result<Vec<f64>, ServerError> {
        let rows = self.check_series(series)?;
        if t >= rows {
            return Err(ServerError::Range(format!(
                "inference time {t} outside a series of {rows} rows"
            )));
        }
        let f = self.input_dims;
        let from = (t + 1).saturating_sub(self.config.window);
        let x = Tensor::new(&[1, t + 1 - from, f], series[from * f..(t + 1) * f].to_vec())?;
        let z = self.encode_batch(x)?;
        let d = self.repr_dim();
        Ok(z.data()[z.len() - d..].to_vec())
    }

    /// Inference-point vectors for many times, time-major `times.len() × repr_dim`.
    ///
    /// When the receptive field fits in the sliding window, the output at `t`
    /// depends only on the last `receptive_field` rows, so windows are
    /// trimmed to that length, and densely packed times are served from one
    /// causal pass over the rows they span.
    pub fn inference_points(&self, series: &[f64], times: &[usize]) -> Result<Vec<f64>, ServerError> {
        const BATCH: usize = 256;
        let rows = self.check_series(series)?;
        let f = self.input_dims;
        let d = self.repr_dim();
        let rf = self.receptive_field();
        let span = rf.min(self.config.window);
        if let (Some(&lo), Some(&hi)) = (times.iter().min(), times.iter().max()) {
            if hi >= rows {
                return Err(ServerError::Range(format!(
                    "inference time {hi} outside a series of {rows} rows"
                )));
            }
            if rf <= self.config.window && hi - lo < times.len() * rf {
                let z = self.encode_rows(series, lo..hi + 1)?;
                let mut out = Vec::with_capacity(times.len() * d);
                for &t in times {
                    out.extend_from_slice(&z[(t - lo) * d..(t - lo + 1) * d]);
                }
                return Ok(out);
            }
        }
        let mut out = vec![0.0; times.len() * d];
        let (full, short): (Vec<usize>, Vec<usize>) =
            (0..times.len()).partition(|&i| times[i] + 1 >= span);
        for chunk in full.chunks(BATCH) {
            let mut data = Vec::with_capacity(chunk.len() * span * f);
            for &i in chunk {
                let t = times[i];
                if t >= rows {
                    return Err(ServerError::Range(format!(
                        "inference time {t} outside a series of {rows} rows"
                    )));
                }
                data.extend_from_slice(&series[(t + 1 - span) * f..(t + 1) * f]);
            }
            let z = self.encode_batch(Tensor::new(&[chunk.len(), span, f], data)?)?;
            for (j, &i) in chunk.iter().enumerate() {
                let off = (j * span + span - 1) * d;
                out[i * d..(i + 1) * d].copy_from_slice(&z.data()[off..off + d]);
            }
        }
        for i in short {
            let v = self.inference_point(series, times[i])?;
            out[i * d..(i + 1) * d].copy_from_slice(&v);
        }
        Ok(out)
    }

    /// Global representation over `range` in training-matrix form.
    pub fn training_matrix(&self, series: &[f64], range: Range<usize>) -> Result<ReprMatrix, ServerError> {
        let z = self.encode_rows(series, range.clone())?;
        ReprMatrix::from_time_major(self.version, self.repr_dim(), range.start, &z)
    }
}
