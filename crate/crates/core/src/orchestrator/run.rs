use std::collections::HashMap;
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::client::{evaluate, local_train, ClientConfig, ClientInputs, ClientModel, ClientVariant, EpochRecord};
use crate::data::{
    assign_features, load_weather_csv, make_windows, normalize, split, synth, ColumnStats, DatasetSplits,
    TimeSeriesTable, WindowBatch, WindowSpec,
};
use crate::server::{pretrain, Encoder, EncoderConfig, EncoderHead, PretrainReport, ReprMatrix};

use super::align::align_representations;
use super::message::{frame_len, Endpoint, Message, MessageBus, MessageKind};
use super::report::*;
use super::schedule::schedule_rounds;
use super::{ExperimentConfig, OrchestratorError, Task, Variant};

/// Normalized table holding every column an experiment touches.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub table: TimeSeriesTable,
    pub stats: Vec<ColumnStats>,
    pub splits: DatasetSplits,
    pub summary: DataSummary,
}

fn client_layout(cfg: &ExperimentConfig) -> Vec<(Vec<String>, Vec<String>)> {
    cfg.client_features
        .clone()
        .unwrap_or_else(|| assign_features(cfg.setting).clients)
        .into_iter()
        .map(|inputs| {
            let targets = match cfg.task {
                Task::H2coForecast => vec![cfg.data.target.clone()],
                Task::LocalForecast => inputs.clone(),
            };
            (inputs, targets)
        })
        .collect()
}

/// Client configurations of an experiment, in setting order.
pub fn client_configs(cfg: &ExperimentConfig) -> Vec<ClientConfig> {
    let s = &cfg.client;
    client_layout(cfg)
        .into_iter()
        .map(|(inputs, targets)| ClientConfig {
            id: inputs.join("+"),
            inputs,
            targets,
            seq_len: s.seq_len,
            horizon: cfg.data.horizon,
            depth: s.depth,
            kernel: s.kernel,
            hidden: s.hidden,
            repr_dim: cfg.encoder.repr_dim,
            lr: s.lr,
            patience: s.patience,
            batch_size: s.batch_size,
            max_epochs: s.max_epochs,
            variant: match cfg.variant {
                Variant::NoFm => ClientVariant::NoFm,
                _ => ClientVariant::WithRepr,
            },
        })
        .collect()
}

fn needed_columns(cfg: &ExperimentConfig) -> Vec<String> {
    let mut cols: Vec<String> = Vec::new();
    let mut push = |c: &String| {
        if !cols.contains(c) {
            cols.push(c.clone());
        }
    };
    for (inputs, targets) in client_layout(cfg) {
        inputs.iter().chain(&targets).for_each(&mut push);
    }
    cfg.server_columns().iter().flatten().for_each(&mut push);
    cols
}

/// Loads (or generates), splits and normalizes the experiment's columns.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData, OrchestratorError> {
    let cols = needed_columns(cfg);
    let rows = cfg.data.rows.map(|r| r.range());
    let (table, source, dropped) = match &cfg.data.path {
        Some(path) => {
            let (t, stats) = load_weather_csv(path, &cols, rows, cfg.data.bad_rows)?;
            (t, path.display().to_string(), stats.rows_dropped)
        }
        None => {
            let end = rows.as_ref().map_or(cfg.data.synthetic_rows, |r| r.end);
            let full = synth::generate_weather(end, cfg.data.synthetic_seed)?;
            let t = match rows {
                Some(r) => full.slice_rows(r.start, r.end)?,
                None => full,
            };
            (
                t.select_resolved(&cols)?,
                format!("synthetic(seed={})", cfg.data.synthetic_seed),
                0,
            )
        }
    };
    let splits = split(table.len())?;
    let (table, stats) = normalize(&table, &splits);
    let summary = DataSummary {
        source,
        rows: table.len(),
        train: (splits.train.start, splits.train.end),
        val: (splits.val.start, splits.val.end),
        test: (splits.test.start, splits.test.end),
        rows_dropped: dropped,
    };
    Ok(PreparedData {
        table,
        stats,
        splits,
        summary,
    })
}

/// Stable 64-bit FNV-1a hash, used to key per-client RNG streams.
fn stream_id(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// RNG for one named participant; streams of different names never overlap.
pub fn participant_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(name));
    rng
}

#[derive(Clone)]
struct CachedEncoder {
    encoder: Arc<Encoder>,
    report: PretrainReport,
}

/// Pretrained encoders keyed by everything that determines their weights,
/// so that runs sharing a server configuration train it once.
#[derive(Default)]
pub struct EncoderCache {
    entries: HashMap<String, CachedEncoder>,
}

impl EncoderCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn cache_key(cfg: &ExperimentConfig, columns: &[String], seed: u64) -> String {
    let d = &cfg.data;
    let drop_cols = (d.bad_rows == crate::data::BadRowPolicy::Drop).then(|| needed_columns(cfg));
    serde_json::json!({
        "columns": columns,
        "seed": seed,
        "encoder": cfg.encoder,
        "path": d.path,
        "rows": d.rows,
        "synthetic": [d.synthetic_rows, d.synthetic_seed],
        "drop_columns": drop_cols,
    })
    .to_string()
}

/// Progress callback payload: one loss value of one client epoch.
#[derive(Clone, Copy, Debug)]
pub struct CurveEvent<'a> {
    pub run_id: &'a str,
    pub seed: u64,
    pub client: &'a str,
    /// Zero-based and consecutive across client updates.
    pub epoch: usize,
    pub split: &'static str,
    pub loss: f64,
}

#[derive(Debug)]
pub struct RunOutput {
    pub report: RunReport,
    pub timings: RunTimings,
    /// Final encoder of each seed, when the variant has a server.
    pub encoders: Vec<Arc<Encoder>>,
    pub clients: Vec<Vec<ClientModel>>,
}

fn context(seed: u64, client: &str, phase: &str) -> impl FnOnce(OrchestratorError) -> OrchestratorError {
    let (client, phase) = (client.to_owned(), phase.to_owned());
    move |e| OrchestratorError::Context {
        seed,
        client,
        phase,
        source: Box::new(e),
    }
}

struct ClientState {
    model: ClientModel,
    rng: ChaCha8Rng,
    train: WindowBatch,
    val: WindowBatch,
    test: WindowBatch,
    records: Vec<EpochRecord>,
    best_epoch: usize,
    best_val: f64,
    stopped_early: bool,
}

impl ClientState {
    fn update(
        &mut self,
        repr: Option<&ReprMatrix>,
        on_epoch: &(dyn Fn(&EpochRecord) + Sync),
    ) -> Result<(), OrchestratorError> {
        let (rt, rv) = match repr {
            Some(m) => (
                Some(align_representations(m, &self.train)?),
                Some(align_representations(m, &self.val)?),
            ),
            None => (None, None),
        };
        let offset = self.records.len();
        let out = local_train(
            &mut self.model,
            ClientInputs::new(&self.train, rt.as_deref()),
            ClientInputs::new(&self.val, rv.as_deref()),
            &mut self.rng,
            |r| {
                let mut r = r.clone();
                r.epoch += offset;
                on_epoch(&r)
            },
        )?;
        self.records.extend(out.records.into_iter().map(|mut r| {
            r.epoch += offset;
            r
        }));
        self.best_epoch = out.best_epoch + offset;
        self.best_val = out.best_val;
        self.stopped_early = out.stopped_early;
        Ok(())
    }
}

fn parameter_summary(cfg: &ExperimentConfig, server: Option<usize>, clients: &[ClientConfig]) -> ParameterSummary {
    let conv = EncoderConfig {
        head: EncoderHead::ConvBlock,
        ..cfg.encoder.clone()
    };
    let mut notes = vec![format!(
        "encoder with the conv-block head over one input feature has {} parameters",
        conv.parameter_count(1)
    )];
    if let Some(n) = server {
        let cols = cfg.server_columns().map_or(0, |c| c.len());
        notes.push(format!(
            "server encoder ({:?} head, {cols} input columns) has {n} parameters against the reference {}",
            cfg.encoder.head, REFERENCE_SERVER_PARAMETERS
        ));
    }
    notes.push(format!(
        "client counts depend on the unstated head and fusion widths; the reference clients have {:?}",
        REFERENCE_CLIENT_PARAMETERS
    ));
    ParameterSummary {
        server,
        clients: clients.iter().map(|c| (c.id.clone(), c.parameter_count())).collect(),
        reference_server: REFERENCE_SERVER_PARAMETERS,
        reference_clients: REFERENCE_CLIENT_PARAMETERS.to_vec(),
        notes,
    }
}

/// Runs experiments, sharing pretrained encoders between runs.
#[derive(Default)]
pub struct Runner {
    pub cache: EncoderCache,
}

impl Runner {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn run(
        &mut self,
        cfg: &ExperimentConfig,
        on_curve: &(dyn Fn(CurveEvent<'_>) + Sync),
    ) -> Result<RunOutput, OrchestratorError> {
        cfg.validate()?;
        let started = Instant::now();
        let data = prepare_data(cfg)?;
        let mut timings = RunTimings {
            load_secs: started.elapsed().as_secs_f64(),
            ..RunTimings::default()
        };
        let configs = client_configs(cfg);
        let run_id = cfg.run_id();
        let server_cols = cfg.server_columns();
        let server_series = server_cols
            .as_ref()
            .map(|c| data.table.matrix(c))
            .transpose()?;
        let mut seeds = Vec::new();
        let mut encoders = Vec::new();
        let mut all_clients = Vec::new();
        let mut first_bus = None;
        let mut server_params = None;

        for &seed in &cfg.seeds {
            let mut timing = SeedTiming {
                seed,
                ..SeedTiming::default()
            };
            let mut bus = MessageBus::new();
            let spec = |stride| WindowSpec {
                seq_len: cfg.client.seq_len,
                horizon: cfg.data.horizon,
                stride,
            };
            let lookback = |r: &std::ops::Range<usize>| r.start.saturating_sub(cfg.client.seq_len)..r.end;
            let mut states = Vec::with_capacity(configs.len());
            for cc in &configs {
                let build = || -> Result<ClientState, OrchestratorError> {
                    let mut rng = participant_rng(seed, &cc.id);
                    let model = ClientModel::new(cc.clone(), &mut rng)?;
                    let w = |range, stride| make_windows(&data.table, &cc.inputs, &cc.targets, range, spec(stride));
                    Ok(ClientState {
                        model,
                        rng,
                        train: w(data.splits.train.clone(), cfg.data.train_stride)?,
                        val: w(lookback(&data.splits.val), cfg.data.eval_stride)?,
                        test: w(lookback(&data.splits.test), cfg.data.eval_stride)?,
                        records: Vec::new(),
                        best_epoch: 0,
                        best_val: f64::INFINITY,
                        stopped_early: false,
                    })
                };
                states.push(build().map_err(context(seed, &cc.id, "setup"))?);
            }

            let mut encoder: Option<Arc<Encoder>> = None;
            let mut server_losses = Vec::new();
            let mut current: Option<Arc<ReprMatrix>> = None;
            let repr_span = data.splits.val.end;

            for round in 0..cfg.schedule.rounds {
                let act = schedule_rounds(&cfg.schedule, round);
                if let (true, Some(cols), Some(series)) = (act.server_update, &server_cols, &server_series) {
                    let t0 = Instant::now();
                    let train_rows = &series[..data.splits.train.end * cols.len()];
                    let pretrain_err = context(seed, "server", "pretrain");
                    let enc = match encoder.take() {
                        None => {
                            let key = cache_key(cfg, cols, seed);
                            let cached = match self.cache.entries.get(&key) {
                                Some(c) => c.clone(),
                                None => {
                                    let mut rng = participant_rng(seed, "server");
                                    let mut enc = Encoder::new(cols.len(), cfg.encoder.clone(), &mut rng)
                                        .map_err(|e| pretrain_err(e.into()))?;
                                    let report = pretrain(&mut enc, train_rows, &mut rng, |_, _, _| {})
                                        .map_err(|e| context(seed, "server", "pretrain")(e.into()))?;
                                    let c = CachedEncoder {
                                        encoder: Arc::new(enc),
                                        report,
                                    };
                                    self.cache.entries.insert(key, c.clone());
                                    c
                                }
                            };
                            server_losses.extend_from_slice(&cached.report.losses);
                            cached.encoder
                        }
                        Some(prev) => {
                            let mut enc = (*prev).clone();
                            let mut rng = participant_rng(seed, &format!("server/round{round}"));
                            let report = pretrain(&mut enc, train_rows, &mut rng, |_, _, _| {})
                                .map_err(|e| pretrain_err(e.into()))?;
                            server_losses.extend(report.losses);
                            Arc::new(enc)
                        }
                    };
                    server_params = Some(enc.params().count());
                    let matrix = enc
                        .training_matrix(series, 0..repr_span)
                        .map_err(|e| context(seed, "server", "emit")(e.into()))?;
                    for i in 0..states.len() {
                        bus.send(round, Endpoint::Client(i), &Message::ServerModelUpdated { version: enc.version() })?;
                        bus.record(
                            round,
                            Endpoint::Client(i),
                            MessageKind::ReprTrainingMatrix,
                            matrix.version,
                            1,
                            frame_len(matrix.dim, matrix.len),
                        )?;
                    }
                    current = Some(Arc::new(matrix));
                    encoder = Some(enc);
                    timing.pretrain_secs += t0.elapsed().as_secs_f64();
                }
                if act.clients_update {
                    let t0 = Instant::now();
                    let repr = current.as_deref();
                    let train_one = |st: &mut ClientState| -> Result<(), OrchestratorError> {
                        let id = st.model.id().to_owned();
                        let observe = |r: &EpochRecord| {
                            for (split, loss) in [("train", r.train_loss), ("val", r.val_loss)] {
                                on_curve(CurveEvent {
                                    run_id: &run_id,
                                    seed,
                                    client: &id,
                                    epoch: r.epoch - 1,
                                    split,
                                    loss,
                                });
                            }
                        };
                        st.update(repr, &observe).map_err(context(seed, &id, "train"))
                    };
                    if cfg.parallel && states.len() > 1 {
                        let results: Vec<Result<(), OrchestratorError>> = std::thread::scope(|s| {
                            let handles: Vec<_> = states
                                .iter_mut()
                                .map(|st| s.spawn(move || train_one(st)))
                                .collect();
                            handles
                                .into_iter()
                                .map(|h| h.join().expect("client training thread panicked"))
                                .collect()
                        });
                        results.into_iter().collect::<Result<Vec<_>, _>>()?;
                    } else {
                        states.iter_mut().try_for_each(train_one)?;
                    }
                    timing.clients_secs += t0.elapsed().as_secs_f64();
                }
            }

            let t0 = Instant::now();
            let mut clients = Vec::with_capacity(states.len());
            for (i, st) in states.iter().enumerate() {
                let id = st.model.id();
                let vectors = match (&encoder, &server_series) {
                    (Some(enc), Some(series)) => {
                        let times: Vec<usize> = (0..st.test.len()).map(|k| st.test.end_index(k)).collect();
                        let v = enc
                            .inference_points(series, &times)
                            .map_err(|e| context(seed, id, "inference")(e.into()))?;
                        bus.record(
                            cfg.schedule.rounds - 1,
                            Endpoint::Client(i),
                            MessageKind::ReprInferenceVector,
                            enc.version(),
                            times.len(),
                            frame_len(enc.repr_dim(), 1),
                        )?;
                        Some(v)
                    }
                    _ => None,
                };
                let test = evaluate(&st.model, ClientInputs::new(&st.test, vectors.as_deref()))
                    .map_err(|e| context(seed, id, "evaluate")(e.into()))?;
                let test_original_units = test
                    .per_variable
                    .iter()
                    .map(|(name, mse)| {
                        let std = data.stats.iter().find(|s| &s.name == name).map_or(1.0, |s| s.std);
                        (name.clone(), mse * std * std)
                    })
                    .collect();
                let cfg_c = st.model.config();
                clients.push(ClientRun {
                    id: id.to_owned(),
                    inputs: cfg_c.inputs.clone(),
                    targets: cfg_c.targets.clone(),
                    parameters: st.model.params().count(),
                    train_windows: st.train.len(),
                    val_windows: st.val.len(),
                    best_epoch: st.best_epoch,
                    best_val: st.best_val,
                    stopped_early: st.stopped_early,
                    records: st.records.clone(),
                    test,
                    test_original_units,
                });
            }
            timing.evaluate_secs = t0.elapsed().as_secs_f64();
            seeds.push(SeedReport {
                seed,
                server: match (&server_cols, &encoder) {
                    (Some(cols), Some(enc)) => Some(ServerRun {
                        columns: cols.clone(),
                        version: enc.version(),
                        losses: server_losses,
                    }),
                    _ => None,
                },
                clients,
            });
            if let Some(enc) = encoder {
                encoders.push(enc);
            }
            all_clients.push(states.into_iter().map(|s| s.model).collect());
            timings.seeds.push(timing);
            if first_bus.is_none() {
                first_bus = Some(bus);
            }
        }

        let bus = first_bus.unwrap_or_default();
        timings.total_secs = started.elapsed().as_secs_f64();
        let report = RunReport {
            run_id,
            setting: cfg.setting,
            variant: cfg.variant,
            task: cfg.task,
            data: data.summary,
            parameters: parameter_summary(cfg, server_params, &configs),
            seeds,
            messages: MessageSummary {
                totals: bus.totals(),
                total_bytes: bus.total_bytes(),
                trace: bus.into_trace(),
            },
            config: cfg.clone(),
        };
        Ok(RunOutput {
            report,
            timings,
            encoders,
            clients: all_clients,
        })
    }
}

/// Runs one experiment with a fresh encoder cache and no progress output.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput, OrchestratorError> {
    Runner::new().run(cfg, &|_| {})
}
