//! SplitNN: the model is divided at the cut layer; clients train the first
//! sub-network h_t on their own data while the server trains the remaining
//! sub-network w_t. Clients take turns in a fixed round-robin — one active
//! client at a time — exchanging cut-layer activations ("smashed data") and
//! labels for gradients, batch by batch. No frame type ever carries raw
//! samples to the server.
//!
//! Between turns the client sub-network moves via `sync_mode`:
//!
//! - [`SyncMode::Relay`] (default): the finishing client uploads its weights
//!   in a CLIENT_WEIGHTS frame and the coordinator relays them to the next
//!   client, whose arrival doubles as the turn token. Both legs are counted.
//! - [`SyncMode::None`]: only empty ROUND_DONE/TOKEN_PASS frames cross the
//!   wire and every client keeps (and diverges with) its own h_t. The
//!   coordinator then never learns the trained client weights, so reported
//!   accuracy uses the initial client sub-network; relay mode reports exact
//!   reconstructed accuracy.

use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, PartitionPlan};
use crate::engine::{
    decode_vector, epoch_rng, expect_frame, send_vector, shuffled_batches, EngineError,
};
use crate::metrics::{evaluate_accuracy, RoundMetrics};
use crate::model::{init_network, ModelSpec};
use crate::nn::{softmax_cross_entropy, Network, Optimizer, OptimizerKind};
use crate::seed::derive_seed;
use crate::tensor::Tensor;
use crate::transport::{
    decode_tensor_prefix, encode_tensor, loopback_pair, ByteSnapshot, Channel, Frame, FrameType,
    TransportError,
};

/// How the client sub-network travels between consecutive clients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyncMode {
    Relay,
    None,
}

#[derive(Debug, Clone)]
pub struct SplitConfig {
    pub clients: usize,
    pub rounds: usize,
    /// SplitNN's local epoch is fixed at one pass per round by construction.
    pub batch_size: usize,
    pub lr: f32,
    pub seed: u64,
    pub cut_index: usize,
    pub sync_mode: SyncMode,
    pub optimizer: OptimizerKind,
    /// Seed namespace distinguishing models that share one experiment seed;
    /// the ensemble engine sets this to the model index.
    pub model_tag: u64,
    /// Round-robin start offset: within a round clients are visited in the
    /// order `(visit_offset + step) % clients`.
    pub visit_offset: usize,
}

impl SplitConfig {
    pub fn validate(&self, spec: &ModelSpec) -> Result<(), EngineError> {
        if self.clients == 0 || self.rounds == 0 || self.batch_size == 0 {
            return Err(EngineError::Invalid(
                "clients, rounds and batch_size must all be >= 1".into(),
            ));
        }
        spec.smashed_shape(self.cut_index)?;
        Ok(())
    }
}

/// Initialization seed for a model under a shared experiment seed.
pub fn model_init_seed(seed: u64, model_tag: u64) -> u64 {
    derive_seed(seed, &[crate::seed::tag::MODEL, model_tag])
}

/// Coordinator-side state for one split-trained model.
pub(crate) struct ServerModel {
    pub spec: ModelSpec,
    pub cut: usize,
    pub server: Network,
    pub optimizer: Optimizer,
    /// Latest known client sub-network weights (initial ones in none mode).
    pub h: Vec<f32>,
    client_shell: Network,
    smashed: Vec<usize>,
}

impl ServerModel {
    pub fn new(
        spec: &ModelSpec,
        cut: usize,
        seed: u64,
        model_tag: u64,
        optimizer: OptimizerKind,
        lr: f32,
    ) -> Result<Self, EngineError> {
        let full = init_network(spec, model_init_seed(seed, model_tag));
        let (client_shell, server) = full.split_off(cut);
        let h = client_shell.flat_params();
        let smashed = spec.smashed_shape(cut)?;
        Ok(ServerModel {
            spec: spec.clone(),
            cut,
            server,
            optimizer: Optimizer::new(optimizer, lr),
            h,
            client_shell,
            smashed,
        })
    }

    /// Full model reconstructed from the relayed h_t and the server part.
    pub fn reconstruct(&self) -> Network {
        let mut client = self.client_shell.clone();
        client
            .set_flat_params(&self.h)
            .expect("h matches the client shell");
        Network::join(client, self.server.clone())
    }
}

#[derive(Debug)]
pub(crate) struct SessionStats {
    pub batches: usize,
    pub wall: Duration,
    /// Client-perspective byte delta for the session.
    pub bytes: ByteSnapshot,
}

/// Serves one client's epoch: turn signal out, then ACTIVATIONS/GRADIENTS
/// ping-pong until the client signals completion. This is the only place
/// the server touches client traffic, and it never requests raw samples.
pub(crate) fn serve_session(
    model: &mut ServerModel,
    ch: &mut dyn Channel,
    client: usize,
    sync_mode: SyncMode,
    batch_delay: Duration,
) -> Result<SessionStats, EngineError> {
    let started = Instant::now();
    let before = ch.snapshot();
    match sync_mode {
        SyncMode::Relay => send_vector(ch, FrameType::ClientWeights, &model.h)?,
        SyncMode::None => ch.send(&Frame::empty(FrameType::TokenPass))?,
    }
    let smashed_elems: usize = model.smashed.iter().product();
    let mut batches = 0;
    loop {
        let frame = ch.recv()?;
        match frame.frame_type {
            FrameType::Activations => {
                let (smashed, labels) = decode_activations(&frame.payload, smashed_elems, client)?;
                if batch_delay > Duration::ZERO {
                    thread::sleep(batch_delay);
                }
                let batch = smashed.shape()[0];
                let mut act_shape = vec![batch];
                act_shape.extend_from_slice(&model.smashed);
                let act = smashed.reshape(act_shape).expect("validated element count");

                model.server.zero_grads();
                let logits = model.server.forward(&act)?;
                let (_, grad_logits) = softmax_cross_entropy(&logits, &labels)?;
                let grad_cut = model.server.backward(&grad_logits)?;
                let flat_grad = grad_cut
                    .reshape(vec![batch, smashed_elems])
                    .expect("cut gradient matches the cut shape");
                ch.send(&Frame::new(
                    FrameType::Gradients,
                    encode_tensor(&flat_grad),
                ))?;
                model.optimizer.step(&mut model.server)?;
                batches += 1;
            }
            FrameType::ClientWeights if sync_mode == SyncMode::Relay => {
                let h = decode_vector(&frame.payload)?;
                if h.len() != model.h.len() {
                    return Err(EngineError::Invalid(format!(
                        "client {client} returned {} client parameters, expected {}",
                        h.len(),
                        model.h.len()
                    )));
                }
                model.h = h;
                break;
            }
            FrameType::RoundDone if sync_mode == SyncMode::None => break,
            other => {
                return Err(EngineError::Protocol {
                    client,
                    expected: "ACTIVATIONS or session end",
                    got: format!("{other:?}"),
                })
            }
        }
    }
    let delta = ch.snapshot().delta_since(before);
    Ok(SessionStats {
        batches,
        wall: started.elapsed(),
        bytes: ByteSnapshot {
            tx: delta.rx,
            rx: delta.tx,
        },
    })
}

/// ACTIVATIONS payload: a `[batch, smashed]` tensor followed by a label
/// vector, back to back.
fn decode_activations(
    payload: &[u8],
    smashed_elems: usize,
    client: usize,
) -> Result<(Tensor, Vec<usize>), EngineError> {
    let (act, used) = decode_tensor_prefix(payload).map_err(TransportError::from)?;
    let (labels_t, used2) =
        decode_tensor_prefix(&payload[used..]).map_err(TransportError::from)?;
    if used + used2 != payload.len() {
        return Err(EngineError::Invalid(format!(
            "{} trailing bytes in ACTIVATIONS payload",
            payload.len() - used - used2
        )));
    }
    let shape = act.shape();
    if shape.len() != 2 || shape[1] != smashed_elems {
        return Err(EngineError::Protocol {
            client,
            expected: "activations shaped [batch, smashed]",
            got: format!("{shape:?} with smashed {smashed_elems}"),
        });
    }
    let labels = crate::transport::tensor_to_labels(&labels_t).map_err(TransportError::from)?;
    if labels.len() != shape[0] {
        return Err(EngineError::Protocol {
            client,
            expected: "one label per activation row",
            got: format!("{} labels for {} rows", labels.len(), shape[0]),
        });
    }
    Ok((act, labels))
}

#[derive(Debug)]
pub struct SplitOutcome {
    pub metrics: Vec<RoundMetrics>,
    /// Full model reconstructed from the last relayed h_t and the server
    /// part.
    pub model: Network,
}

/// SplitNN coordinator: per round, visit every client once in round-robin
/// order and serve its epoch, then evaluate the reconstructed model.
pub fn run_split(
    cfg: &SplitConfig,
    spec: &ModelSpec,
    test: &Dataset,
    channels: Vec<Box<dyn Channel>>,
) -> Result<SplitOutcome, EngineError> {
    cfg.validate(spec)?;
    if channels.len() != cfg.clients {
        return Err(EngineError::Invalid(format!(
            "expected {} channels, got {}",
            cfg.clients,
            channels.len()
        )));
    }
    let mut channels = order_by_hello(channels, cfg.clients)?;
    let mut model = ServerModel::new(
        spec,
        cfg.cut_index,
        cfg.seed,
        cfg.model_tag,
        cfg.optimizer,
        cfg.lr,
    )?;

    let mut metrics = Vec::with_capacity(cfg.rounds);
    let mut last = vec![ByteSnapshot::default(); cfg.clients];
    let (mut cum_tx, mut cum_rx) = (0u64, 0u64);
    for round in 0..cfg.rounds {
        let started = Instant::now();
        for step in 0..cfg.clients {
            let client = (cfg.visit_offset + step) % cfg.clients;
            serve_session(
                &mut model,
                &mut channels[client],
                client,
                cfg.sync_mode,
                Duration::ZERO,
            )?;
        }
        if round + 1 == cfg.rounds {
            for ch in channels.iter_mut() {
                ch.send(&Frame::empty(FrameType::Bye))?;
            }
        }

        let reconstructed = model.reconstruct();
        let (accuracy, loss) = evaluate_accuracy(&reconstructed, test, cfg.batch_size);
        let per_client: Vec<ByteSnapshot> = channels
            .iter()
            .enumerate()
            .map(|(i, ch)| {
                let now = ch.snapshot();
                let delta = now.delta_since(last[i]);
                last[i] = now;
                ByteSnapshot {
                    tx: delta.rx,
                    rx: delta.tx,
                }
            })
            .collect();
        cum_tx += per_client.iter().map(|c| c.tx).sum::<u64>();
        cum_rx += per_client.iter().map(|c| c.rx).sum::<u64>();
        metrics.push(RoundMetrics {
            round,
            accuracy,
            loss,
            wall_ms: started.elapsed().as_millis() as u64,
            per_client,
            cum_tx,
            cum_rx,
        });
    }

    Ok(SplitOutcome {
        metrics,
        model: model.reconstruct(),
    })
}

pub(crate) fn order_by_hello(
    channels: Vec<Box<dyn Channel>>,
    clients: usize,
) -> Result<Vec<Box<dyn Channel>>, EngineError> {
    let mut by_client: Vec<Option<Box<dyn Channel>>> = (0..clients).map(|_| None).collect();
    for mut ch in channels {
        let payload = expect_frame(ch.recv()?, FrameType::Hello, usize::MAX, "HELLO")?;
        if payload.len() != 4 {
            return Err(EngineError::Invalid(format!(
                "HELLO payload must be 4 bytes, got {}",
                payload.len()
            )));
        }
        let id =
            u32::from_le_bytes([payload[0], payload[1], payload[2], payload[3]]) as usize;
        if id >= clients || by_client[id].is_some() {
            return Err(EngineError::Invalid(format!(
                "bad or duplicate client id {id} in HELLO"
            )));
        }
        by_client[id] = Some(ch);
    }
    Ok(by_client.into_iter().map(Option::unwrap).collect())
}

/// SplitNN client worker: forward each shuffled mini-batch through the
/// client sub-network, ship the smashed activations and labels, apply the
/// returned gradient, and step the local optimizer. The optimizer state is
/// local and persistent across rounds; only weights are ever relayed.
/// Returns the final client sub-network.
pub fn run_split_client(
    channel: &mut impl Channel,
    client_id: usize,
    cfg: &SplitConfig,
    spec: &ModelSpec,
    shard: &Dataset,
) -> Result<Network, EngineError> {
    channel.send(&Frame::new(
        FrameType::Hello,
        (client_id as u32).to_le_bytes().to_vec(),
    ))?;
    let full = init_network(spec, model_init_seed(cfg.seed, cfg.model_tag));
    let (mut client_net, _) = full.split_off(cfg.cut_index);
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.lr);
    let mut round: u64 = 0;
    loop {
        let frame = channel.recv()?;
        match frame.frame_type {
            FrameType::ClientWeights if cfg.sync_mode == SyncMode::Relay => {
                let h = decode_vector(&frame.payload)?;
                client_net.set_flat_params(&h)?;
                client_epoch(channel, client_id, cfg, &mut client_net, &mut optimizer, shard, round)?;
                send_vector(channel, FrameType::ClientWeights, &client_net.flat_params())?;
                round += 1;
            }
            FrameType::TokenPass if cfg.sync_mode == SyncMode::None => {
                client_epoch(channel, client_id, cfg, &mut client_net, &mut optimizer, shard, round)?;
                channel.send(&Frame::empty(FrameType::RoundDone))?;
                round += 1;
            }
            FrameType::Bye => return Ok(client_net),
            other => {
                return Err(EngineError::Protocol {
                    client: client_id,
                    expected: "turn signal or BYE",
                    got: format!("{other:?}"),
                })
            }
        }
    }
}

/// One full pass over the shard: per batch, one ACTIVATIONS/GRADIENTS
/// exchange and one local optimizer step.
fn client_epoch(
    channel: &mut impl Channel,
    client_id: usize,
    cfg: &SplitConfig,
    client_net: &mut Network,
    optimizer: &mut Optimizer,
    shard: &Dataset,
    round: u64,
) -> Result<(), EngineError> {
    let mut rng = epoch_rng(cfg.seed, cfg.model_tag, client_id as u64, round);
    for batch in shuffled_batches(shard.len(), cfg.batch_size, &mut rng) {
        let (x, labels) = shard.gather(&batch);
        client_net.zero_grads();
        let act = client_net.forward(&x)?;
        let batch_len = act.shape()[0];
        let elems: usize = act.shape()[1..].iter().product();
        let act_shape = act.shape().to_vec();
        let smashed = act.reshape(vec![batch_len, elems]).expect("batch leading dim");

        let mut payload = encode_tensor(&smashed);
        payload.extend_from_slice(&encode_tensor(&crate::transport::labels_to_tensor(&labels)));
        channel.send(&Frame::new(FrameType::Activations, payload))?;

        let grad_payload =
            expect_frame(channel.recv()?, FrameType::Gradients, client_id, "GRADIENTS")?;
        let (grad_flat, used) =
            decode_tensor_prefix(&grad_payload).map_err(TransportError::from)?;
        if used != grad_payload.len() || grad_flat.shape() != smashed.shape() {
            return Err(EngineError::Protocol {
                client: client_id,
                expected: "gradient matching the activations shape",
                got: format!("{:?}", grad_flat.shape()),
            });
        }
        let grad = grad_flat.reshape(act_shape).expect("same element count");
        client_net.backward(&grad)?;
        optimizer.step(client_net)?;
    }
    Ok(())
}

/// Runs the whole SplitNN experiment in-process over loopback channels.
/// Returns the outcome plus every client's final sub-network (these only
/// diverge from each other in none mode).
pub fn run_split_loopback(
    cfg: &SplitConfig,
    spec: &ModelSpec,
    train: &Dataset,
    plan: &PartitionPlan,
    test: &Dataset,
) -> Result<(SplitOutcome, Vec<Network>), EngineError> {
    cfg.validate(spec)?;
    if plan.client_count() != cfg.clients {
        return Err(EngineError::Invalid(format!(
            "plan has {} clients, config wants {}",
            plan.client_count(),
            cfg.clients
        )));
    }
    plan.validate(train.len())?;

    let mut coordinator_ends = Vec::with_capacity(cfg.clients);
    let mut client_ends = Vec::with_capacity(cfg.clients);
    for _ in 0..cfg.clients {
        let (a, b) = loopback_pair();
        coordinator_ends.push(Box::new(a) as Box<dyn Channel>);
        client_ends.push(b);
    }

    thread::scope(|scope| {
        let mut workers = Vec::with_capacity(cfg.clients);
        for (client_id, mut ch) in client_ends.into_iter().enumerate() {
            let shard = train.subset(plan.indices(client_id));
            workers.push(
                scope.spawn(move || run_split_client(&mut ch, client_id, cfg, spec, &shard)),
            );
        }

        let outcome = run_split(cfg, spec, test, coordinator_ends);

        let mut finals = Vec::with_capacity(cfg.clients);
        let mut client_err = None;
        for (client, worker) in workers.into_iter().enumerate() {
            match worker.join() {
                Ok(Ok(net)) => finals.push(net),
                Ok(Err(e)) => {
                    client_err.get_or_insert(EngineError::ClientFailed {
                        client,
                        message: e.to_string(),
                    });
                }
                Err(_) => {
                    client_err.get_or_insert(EngineError::ClientFailed {
                        client,
                        message: "worker panicked".into(),
                    });
                }
            }
        }
        match (outcome, client_err) {
            (Ok(o), None) => Ok((o, finals)),
            (Err(e), _) => Err(e),
            (Ok(_), Some(e)) => Err(e),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{partition_iid, synth_sequences};
    use crate::model::{cut_for_conv_blocks, ModelProfile};

    fn tiny_profile() -> ModelProfile {
        ModelProfile {
            conv_depth: 4,
            channels: 4,
            kernel: 3,
            pool_window: 2,
            pooled_blocks: usize::MAX,
            hidden_dense: 16,
            classes: 5,
            input_channels: 1,
            input_len: 32,
        }
    }

    fn tiny_cfg(clients: usize, rounds: usize, cut_index: usize, sync: SyncMode) -> SplitConfig {
        SplitConfig {
            clients,
            rounds,
            batch_size: 8,
            lr: 0.001,
            seed: 13,
            cut_index,
            sync_mode: sync,
            optimizer: OptimizerKind::Adam,
            model_tag: 0,
            visit_offset: 0,
        }
    }

    /// Monolithic oracle: trains the unsplit model with the batch schedule
    /// the split client derives, using one optimizer per sub-network exactly
    /// like the split pipeline does not — a single whole-model optimizer.
    fn monolithic_oracle(cfg: &SplitConfig, spec: &ModelSpec, shard: &Dataset) -> Network {
        let mut net = init_network(spec, model_init_seed(cfg.seed, cfg.model_tag));
        let mut optimizer = Optimizer::new(cfg.optimizer, cfg.lr);
        for round in 0..cfg.rounds {
            let mut rng = epoch_rng(cfg.seed, cfg.model_tag, 0, round as u64);
            for batch in shuffled_batches(shard.len(), cfg.batch_size, &mut rng) {
                let (x, labels) = shard.gather(&batch);
                net.zero_grads();
                let logits = net.forward(&x).unwrap();
                let (_, grad) = softmax_cross_entropy(&logits, &labels).unwrap();
                net.backward(&grad).unwrap();
                optimizer.step(&mut net).unwrap();
            }
        }
        net
    }

    #[test]
    fn single_client_split_matches_monolithic_training() {
        let spec = tiny_profile().build().unwrap();
        let cut = cut_for_conv_blocks(&spec, 2).unwrap();
        let cfg = tiny_cfg(1, 4, cut, SyncMode::Relay);
        let ds = synth_sequences(48, 5, 32, 0.4, 3).unwrap();
        let plan = partition_iid(&ds, 1, cfg.seed).unwrap();
        let shard = ds.subset(plan.indices(0));

        let (outcome, _) = run_split_loopback(&cfg, &spec, &ds, &plan, &ds).unwrap();
        let oracle = monolithic_oracle(&cfg, &spec, &shard);

        let got = outcome.model.flat_params();
        let want = oracle.flat_params();
        let max_diff = got
            .iter()
            .zip(&want)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(max_diff < 1e-5, "max diff {max_diff}");
    }

    #[test]
    fn relay_passes_weights_to_the_next_client_exactly() {
        use crate::transport::{FrameDirection, FrameLog, RecordingChannel};

        let spec = tiny_profile().build().unwrap();
        let cut = cut_for_conv_blocks(&spec, 1).unwrap();
        let cfg = tiny_cfg(2, 1, cut, SyncMode::Relay);
        let ds = synth_sequences(20, 5, 32, 0.4, 3).unwrap();
        let plan = partition_iid(&ds, 2, cfg.seed).unwrap();

        let log = FrameLog::new();
        let mut coord_ends: Vec<Box<dyn Channel>> = Vec::new();
        let mut client_ends = Vec::new();
        for peer in 0..2 {
            let (a, b) = loopback_pair();
            coord_ends.push(Box::new(RecordingChannel::new(a, peer, log.clone())));
            client_ends.push(b);
        }
        thread::scope(|scope| {
            for (client_id, mut ch) in client_ends.into_iter().enumerate() {
                let shard = ds.subset(plan.indices(client_id));
                let cfg = &cfg;
                let spec = &spec;
                scope.spawn(move || run_split_client(&mut ch, client_id, cfg, spec, &shard));
            }
            run_split(&cfg, &spec, &ds, coord_ends).unwrap();
        });

        // the weights relayed down to client 1 must be exactly the payload
        // client 0 uploaded at the end of its epoch
        let events = log.events();
        let uploads: Vec<_> = events
            .iter()
            .filter(|e| {
                e.frame.frame_type == FrameType::ClientWeights
                    && e.direction == FrameDirection::Received
                    && e.peer == 0
            })
            .collect();
        let downloads: Vec<_> = events
            .iter()
            .filter(|e| {
                e.frame.frame_type == FrameType::ClientWeights
                    && e.direction == FrameDirection::Sent
                    && e.peer == 1
            })
            .collect();
        assert_eq!(uploads.len(), 1);
        assert_eq!(downloads.len(), 1);
        assert_eq!(uploads[0].frame.payload, downloads[0].frame.payload);
    }

    #[test]
    fn none_mode_lets_clients_diverge() {
        let spec = tiny_profile().build().unwrap();
        let cut = cut_for_conv_blocks(&spec, 2).unwrap();
        let cfg = tiny_cfg(2, 2, cut, SyncMode::None);
        let ds = synth_sequences(40, 5, 32, 0.4, 3).unwrap();
        let plan = partition_iid(&ds, 2, cfg.seed).unwrap();
        let (_, finals) = run_split_loopback(&cfg, &spec, &ds, &plan, &ds).unwrap();
        let diff = finals[0]
            .flat_params()
            .iter()
            .zip(finals[1].flat_params())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(diff > 0.0, "independent clients should diverge");
    }

    #[test]
    fn relay_clients_end_in_lockstep() {
        let spec = tiny_profile().build().unwrap();
        let cut = cut_for_conv_blocks(&spec, 2).unwrap();
        let cfg = tiny_cfg(2, 2, cut, SyncMode::Relay);
        let ds = synth_sequences(40, 5, 32, 0.4, 3).unwrap();
        let plan = partition_iid(&ds, 2, cfg.seed).unwrap();
        let (outcome, finals) = run_split_loopback(&cfg, &spec, &ds, &plan, &ds).unwrap();
        // the last client to train holds the h the coordinator relayed back;
        // the reconstruction uses exactly that h
        let h_last = finals[1].flat_params();
        let model_h: Vec<f32> = outcome.model.flat_params()[..h_last.len()].to_vec();
        assert_eq!(model_h, h_last);
    }

    #[test]
    fn byte_accounting_matches_the_estimator() {
        let spec = tiny_profile().build().unwrap();
        let cut = cut_for_conv_blocks(&spec, 2).unwrap();
        for sync in [SyncMode::Relay, SyncMode::None] {
            let cfg = tiny_cfg(3, 2, cut, sync);
            let ds = synth_sequences(50, 5, 32, 0.4, 3).unwrap();
            let plan = partition_iid(&ds, 3, cfg.seed).unwrap();
            let (outcome, _) = run_split_loopback(&cfg, &spec, &ds, &plan, &ds).unwrap();

            let smashed = spec.smashed_elems(cut).unwrap();
            let client_params = {
                let full = init_network(&spec, 0);
                full.split_off(cut).0.param_count()
            };
            let est = crate::metrics::estimate_split_bytes(
                smashed,
                &plan.sizes(),
                cfg.batch_size,
                cfg.rounds,
                client_params,
                sync,
            );
            let last = outcome.metrics.last().unwrap();
            assert_eq!(last.cum_tx, est.total_to_server(), "{sync:?}");
            assert_eq!(last.cum_rx, est.total_to_client(), "{sync:?}");
            let per_client_live: Vec<ByteSnapshot> = (0..3)
                .map(|c| {
                    let tx = outcome.metrics.iter().map(|m| m.per_client[c].tx).sum();
                    let rx = outcome.metrics.iter().map(|m| m.per_client[c].rx).sum();
                    ByteSnapshot { tx, rx }
                })
                .collect();
            assert_eq!(per_client_live, est.per_client, "{sync:?}");
        }
    }

    #[test]
    fn one_sample_shard_performs_exactly_one_exchange() {
        let spec = tiny_profile().build().unwrap();
        let cut = cut_for_conv_blocks(&spec, 2).unwrap();
        let cfg = tiny_cfg(1, 1, cut, SyncMode::None);
        let ds = synth_sequences(5, 5, 32, 0.4, 3).unwrap();
        let single = ds.subset(&[0]);
        let plan = PartitionPlan::new(vec![vec![0]]);
        let (outcome, _) = run_split_loopback(&cfg, &spec, &single, &plan, &ds).unwrap();
        let smashed = spec.smashed_elems(cut).unwrap();
        // up: HELLO(9) + one ACTIVATIONS + ROUND_DONE(5)
        let act_frame = 5 + (12 + 4 * smashed as u64) + (8 + 4);
        assert_eq!(
            outcome.metrics[0].per_client[0].tx,
            9 + act_frame + 5
        );
        // down: TOKEN_PASS(5) + one GRADIENTS + BYE(5)
        let grad_frame = 5 + 12 + 4 * smashed as u64;
        assert_eq!(outcome.metrics[0].per_client[0].rx, 5 + grad_frame + 5);
    }

    #[test]
    fn mismatched_smashed_shape_aborts_with_protocol_error() {
        let spec = tiny_profile().build().unwrap();
        let cut = cut_for_conv_blocks(&spec, 2).unwrap();
        let cfg = tiny_cfg(1, 1, cut, SyncMode::None);
        let mut model = ServerModel::new(&spec, cut, 1, 0, OptimizerKind::Adam, 0.001).unwrap();
        let (mut coord, mut client) = loopback_pair();

        let wrong = Tensor::zeros(vec![2, 7]);
        let mut payload = encode_tensor(&wrong);
        payload.extend_from_slice(&encode_tensor(&crate::transport::labels_to_tensor(&[0, 1])));
        client
            .send(&Frame::new(FrameType::Activations, payload))
            .unwrap();
        client.send(&Frame::empty(FrameType::RoundDone)).unwrap();

        let err =
            serve_session(&mut model, &mut coord, 0, cfg.sync_mode, Duration::ZERO).unwrap_err();
        assert!(matches!(err, EngineError::Protocol { .. }), "{err}");
    }
}
