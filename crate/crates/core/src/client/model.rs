use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::nn::{read_checkpoint, receptive_field, write_checkpoint, Graph, ParamId, ParameterSet, Tensor, Var};

use super::ClientError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClientVariant {
    /// Local features only.
    NoFm,
    /// Local features plus one server representation vector per window.
    #[default]
    WithRepr,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClientConfig {
    pub id: String,
    pub inputs: Vec<String>,
    pub targets: Vec<String>,
    pub seq_len: usize,
    pub horizon: usize,
    pub depth: usize,
    pub kernel: usize,
    pub hidden: usize,
    pub repr_dim: usize,
    pub lr: f64,
    pub patience: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub variant: ClientVariant,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            id: String::new(),
            inputs: Vec::new(),
            targets: Vec::new(),
            seq_len: 128,
            horizon: 1,
            depth: 3,
            kernel: 3,
            hidden: 64,
            repr_dim: 256,
            lr: 1e-4,
            patience: 3,
            batch_size: 32,
            max_epochs: 50,
            variant: ClientVariant::WithRepr,
        }
    }
}

impl ClientConfig {
    /// Number of trailing input steps the TCN can see.
    pub fn receptive_field(&self) -> usize {
        receptive_field((0..self.depth).map(|i| (self.kernel, 1 << i)))
    }

    pub fn output_dim(&self) -> usize {
        self.horizon * self.targets.len()
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        let bad = |m: String| Err(ClientError::Config(format!("client {:?}: {m}", self.id)));
        if self.inputs.is_empty() || self.targets.is_empty() {
            return bad("input and target feature lists must be nonempty".into());
        }
        if self.depth == 0 || self.kernel == 0 || self.hidden == 0 || self.horizon == 0 {
            return bad("depth, kernel, hidden and horizon must be positive".into());
        }
        if self.seq_len < self.receptive_field() {
            return bad(format!(
                "sequence length {} is shorter than the TCN span {}",
                self.seq_len,
                self.receptive_field()
            ));
        }
        if self.variant == ClientVariant::WithRepr && self.repr_dim == 0 {
            return bad("repr_dim must be positive".into());
        }
        if self.batch_size == 0 || !(self.lr > 0.0) {
            return bad("batch_size and lr must be positive".into());
        }
        Ok(())
    }

    /// Closed-form parameter count.
    pub fn parameter_count(&self) -> usize {
        let (h, k, f) = (self.hidden, self.kernel, self.inputs.len());
        let tcn = h * f * k + h + (self.depth - 1) * (h * h * k + h);
        let out = self.output_dim();
        let head = out * h + out;
        match self.variant {
            ClientVariant::NoFm => tcn + head,
            ClientVariant::WithRepr => tcn + head + self.repr_dim * h + h + out * h,
        }
    }
}

#[derive(Clone, Debug)]
struct ReprBranch {
    w: ParamId,
    b: ParamId,
    /// Head weights applied to this branch's output.
    head_w: ParamId,
}

#[derive(Clone, Debug)]
pub struct ClientModel {
    config: ClientConfig,
    params: ParameterSet,
    convs: Vec<(ParamId, ParamId, usize)>,
    head_w: ParamId,
    head_b: ParamId,
    repr: Option<ReprBranch>,
}

impl ClientModel {
    /// Builds the model. Shared parameters are drawn before the
    /// representation branch, so the two variants agree on them for a given
    /// RNG state.
    pub fn new<R: Rng + ?Sized>(config: ClientConfig, rng: &mut R) -> Result<Self, ClientError> {
        config.validate()?;
        let (h, k) = (config.hidden, config.kernel);
        let out = config.output_dim();
        let mut params = ParameterSet::new();
        let mut convs = Vec::with_capacity(config.depth);
        let mut cin = config.inputs.len();
        for i in 0..config.depth {
            let w = params.add_uniform(&format!("tcn{i}.w"), &[h, cin, k], cin * k, rng)?;
            let b = params.add_uniform(&format!("tcn{i}.b"), &[h], cin * k, rng)?;
            convs.push((w, b, 1 << i));
            cin = h;
        }
        let fan_in = match config.variant {
            ClientVariant::NoFm => h,
            ClientVariant::WithRepr => 2 * h,
        };
        let head_w = params.add_uniform("head.local.w", &[out, h], fan_in, rng)?;
        let head_b = params.add_uniform("head.b", &[out], fan_in, rng)?;
        let repr = match config.variant {
            ClientVariant::NoFm => None,
            ClientVariant::WithRepr => Some(ReprBranch {
                w: params.add_uniform("repr.w", &[h, config.repr_dim], config.repr_dim, rng)?,
                b: params.add_uniform("repr.b", &[h], config.repr_dim, rng)?,
                head_w: params.add_uniform("head.repr.w", &[out, h], fan_in, rng)?,
            }),
        };
        Ok(Self {
            config,
            params,
            convs,
            head_w,
            head_b,
            repr,
        })
    }

    pub fn config(&self) -> &ClientConfig {
        &self.config
    }

    pub fn id(&self) -> &str {
        &self.config.id
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    pub fn uses_repr(&self) -> bool {
        self.repr.is_some()
    }

    /// Sets every parameter of the representation branch, including its head
    /// weights, to zero.
    pub fn zero_repr_branch(&mut self) {
        if let Some(r) = &self.repr {
            for id in [r.w, r.b, r.head_w] {
                self.params.value_mut(id).fill(0.0);
            }
        }
    }

    /// Local branch: `[n, time, F] → [n, hidden]` (last step of the TCN).
    fn local(&self, g: &mut Graph, x: Var) -> Result<Var, ClientError> {
        let mut a = x;
        for &(w, b, dil) in &self.convs {
            let (wv, bv) = (g.param(&self.params, w), g.param(&self.params, b));
            a = g.conv1d_causal(a, wv, bv, dil)?;
            a = g.relu(a);
        }
        Ok(g.last_step(a)?)
    }

    /// `x: [n, time, F]`, `h: [n, repr_dim]` → `[n, horizon × targets]`,
    /// laid out step-major.
    pub fn forward(&self, g: &mut Graph, x: Var, h: Option<Var>) -> Result<Var, ClientError> {
        let shape = g.value(x).shape().to_vec();
        if shape.len() != 3 || shape[2] != self.config.inputs.len() {
            return Err(ClientError::Usage(format!(
                "client {:?} expects [batch, time, {}] input, got {shape:?}",
                self.config.id,
                self.config.inputs.len()
            )));
        }
        let p = &self.params;
        let fl = self.local(g, x)?;
        let (w, b) = (g.param(p, self.head_w), g.param(p, self.head_b));
        let y = g.linear(fl, w, Some(b))?;
        match (&self.repr, h) {
            (None, None) => Ok(y),
            (None, Some(_)) => Err(ClientError::Usage(format!(
                "client {:?} has no representation branch but was given a representation",
                self.config.id
            ))),
            (Some(_), None) => Err(ClientError::Usage(format!(
                "client {:?} requires a representation vector",
                self.config.id
            ))),
            (Some(r), Some(h)) => {
                let hs = g.value(h).shape().to_vec();
                if hs != [shape[0], self.config.repr_dim] {
                    return Err(ClientError::Usage(format!(
                        "representation shape {hs:?}, expected [{}, {}]",
                        shape[0], self.config.repr_dim
                    )));
                }
                let (w, b) = (g.param(p, r.w), g.param(p, r.b));
                let fg = g.linear(h, w, Some(b))?;
                let fg = g.relu(fg);
                let hw = g.param(p, r.head_w);
                let yg = g.linear(fg, hw, None)?;
                Ok(g.add(y, yg)?)
            }
        }
    }

    /// Prediction for a batch; `x: [n, time, F]`, `h: [n, repr_dim]`.
    pub fn predict(&self, x: Tensor, h: Option<Tensor>) -> Result<Tensor, ClientError> {
        let mut g = Graph::new();
        let xv = g.input(x);
        let hv = h.map(|h| g.input(h));
        let y = self.forward(&mut g, xv, hv)?;
        Ok(g.value(y).clone())
    }
}

/// Saves client weights with the configuration echoed in the header.
pub fn write_client<W: Write>(model: &ClientModel, w: W) -> Result<(), ClientError> {
    let meta = json!({ "kind": "client", "config": model.config() });
    Ok(write_checkpoint(w, model.params(), &meta)?)
}

pub fn read_client<R: Read>(r: R) -> Result<ClientModel, ClientError> {
    let (params, meta) = read_checkpoint(r)?;
    if meta.get("kind").and_then(|k| k.as_str()) != Some("client") {
        return Err(ClientError::Config("not a client checkpoint".into()));
    }
    let config: ClientConfig = serde_json::from_value(meta["config"].clone())
        .map_err(|e| ClientError::Config(format!("client checkpoint: {e}")))?;
    let mut model = ClientModel::new(config, &mut rand_chacha::ChaCha8Rng::from_seed([0; 32]))?;
    if model.params.layout() != params.layout() {
        return Err(ClientError::Config(
            "checkpoint parameters do not match the client configuration".into(),
        ));
    }
    model.params = params;
    Ok(model)
}
