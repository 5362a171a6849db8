//! FedAvg: the coordinator broadcasts the global model, every client trains
//! locally for E epochs in parallel, and the server forms the
//! sample-count-weighted average of the returned models.
//!
//! Per-client traffic is two full parameter vectors per round regardless of
//! shard sizes, which is what makes FL's communication overhead independent
//! of the local data size.

use std::thread;
use std::time::Instant;

use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, PartitionPlan};
use crate::engine::{
    decode_vector, epoch_rng, expect_frame, send_vector, shuffled_batches, EngineError,
};
use crate::metrics::{evaluate_accuracy, RoundMetrics};
use crate::model::{init_network, ModelSpec};
use crate::nn::{softmax_cross_entropy, Network, Optimizer, OptimizerKind};
use crate::transport::{loopback_pair, ByteSnapshot, Channel, Frame, FrameType};

#[derive(Debug, Clone)]
pub struct FlConfig {
    pub clients: usize,
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl FlConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.clients == 0 || self.rounds == 0 || self.local_epochs == 0 || self.batch_size == 0
        {
            return Err(EngineError::Invalid(
                "clients, rounds, local_epochs and batch_size must all be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Sample-count-weighted average of client updates, elementwise
/// `sum_k (s_k / s) * w_k`.
///
/// Accumulation runs in f64 with the integer sample counts as weights and a
/// single final division, so aggregating identical vectors returns them
/// bit-exactly and the result does not depend on float rounding of the
/// individual quotients. Callers pass updates in ascending client order;
/// the summation order is part of the reproducibility contract.
pub fn fedavg_aggregate(updates: &[(Vec<f32>, usize)]) -> Result<Vec<f32>, EngineError> {
    let Some(((first, _), rest)) = updates.split_first() else {
        return Err(EngineError::Invalid("no updates to aggregate".into()));
    };
    let len = first.len();
    for (w, s_k) in updates {
        if w.len() != len {
            return Err(EngineError::Invalid(format!(
                "update length mismatch: {} vs {len}",
                w.len()
            )));
        }
        if *s_k == 0 {
            return Err(EngineError::Invalid("client sample count is zero".into()));
        }
    }
    let _ = rest;
    let total: f64 = updates.iter().map(|(_, s)| *s as f64).sum();
    let mut acc = vec![0.0f64; len];
    for (w, s_k) in updates {
        let weight = *s_k as f64;
        for (a, &v) in acc.iter_mut().zip(w) {
            *a += weight * f64::from(v);
        }
    }
    Ok(acc.into_iter().map(|v| (v / total) as f32).collect())
}

/// E shuffled passes over the shard with one optimizer step per mini-batch.
pub fn local_train(
    net: &mut Network,
    shard: &Dataset,
    epochs: usize,
    batch_size: usize,
    optimizer: &mut Optimizer,
    rng: &mut ChaCha8Rng,
) -> Result<(), EngineError> {
    if shard.is_empty() {
        return Err(EngineError::Invalid("cannot train on an empty shard".into()));
    }
    for _ in 0..epochs {
        for batch in shuffled_batches(shard.len(), batch_size, rng) {
            let (x, labels) = shard.gather(&batch);
            net.zero_grads();
            let logits = net.forward(&x)?;
            let (_, grad) = softmax_cross_entropy(&logits, &labels)?;
            net.backward(&grad)?;
            optimizer.step(net)?;
        }
    }
    Ok(())
}

#[derive(Debug)]
pub struct FlOutcome {
    pub metrics: Vec<RoundMetrics>,
    pub model: Network,
}

/// FedAvg coordinator over one channel per client. Channels are matched to
/// client ids by the HELLO handshake; `shard_sizes[k]` is client k's sample
/// count s_k used for aggregation weights.
pub fn run_fl(
    cfg: &FlConfig,
    spec: &ModelSpec,
    shard_sizes: &[usize],
    test: &Dataset,
    channels: Vec<Box<dyn Channel>>,
) -> Result<FlOutcome, EngineError> {
    cfg.validate()?;
    if channels.len() != cfg.clients || shard_sizes.len() != cfg.clients {
        return Err(EngineError::Invalid(format!(
            "expected {} channels and shard sizes, got {} and {}",
            cfg.clients,
            channels.len(),
            shard_sizes.len()
        )));
    }

    let mut by_client: Vec<Option<Box<dyn Channel>>> =
        (0..cfg.clients).map(|_| None).collect();
    for mut ch in channels {
        let payload = expect_frame(ch.recv()?, FrameType::Hello, usize::MAX, "HELLO")?;
        let id = hello_id(&payload)?;
        if id >= cfg.clients || by_client[id].is_some() {
            return Err(EngineError::Invalid(format!(
                "bad or duplicate client id {id} in HELLO"
            )));
        }
        by_client[id] = Some(ch);
    }
    let mut channels: Vec<Box<dyn Channel>> =
        by_client.into_iter().map(Option::unwrap).collect();

    let mut net = init_network(spec, cfg.seed);
    let mut flat = net.flat_params();
    let mut metrics = Vec::with_capacity(cfg.rounds);
    let mut last = vec![ByteSnapshot::default(); cfg.clients];
    let (mut cum_tx, mut cum_rx) = (0u64, 0u64);

    for round in 0..cfg.rounds {
        let started = Instant::now();
        for ch in channels.iter_mut() {
            send_vector(ch, FrameType::ModelDown, &flat)?;
        }
        let mut updates = Vec::with_capacity(cfg.clients);
        for (client, ch) in channels.iter_mut().enumerate() {
            let payload = expect_frame(ch.recv()?, FrameType::ModelUp, client, "MODEL_UP")?;
            let w = decode_vector(&payload)?;
            if w.len() != flat.len() {
                return Err(EngineError::Invalid(format!(
                    "client {client} returned {} parameters, expected {}",
                    w.len(),
                    flat.len()
                )));
            }
            updates.push((w, shard_sizes[client]));
        }
        flat = fedavg_aggregate(&updates)?;
        net.set_flat_params(&flat)?;

        if round + 1 == cfg.rounds {
            for ch in channels.iter_mut() {
                ch.send(&Frame::empty(FrameType::Bye))?;
            }
        }

        let (accuracy, loss) = evaluate_accuracy(&net, test, cfg.batch_size);
        let per_client: Vec<ByteSnapshot> = channels
            .iter()
            .enumerate()
            .map(|(i, ch)| {
                let now = ch.snapshot();
                let delta = now.delta_since(last[i]);
                last[i] = now;
                // channel counters are coordinator-side; flip to the client view
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

    Ok(FlOutcome { metrics, model: net })
}

fn hello_id(payload: &[u8]) -> Result<usize, EngineError> {
    if payload.len() != 4 {
        return Err(EngineError::Invalid(format!(
            "HELLO payload must be 4 bytes, got {}",
            payload.len()
        )));
    }
    Ok(u32::from_le_bytes([payload[0], payload[1], payload[2], payload[3]]) as usize)
}

/// FL client worker: announce the client id, then train each received model
/// for E local epochs and return it, until BYE. The optimizer is
/// reinitialized every round so no stale moments survive aggregation.
pub fn run_fl_client(
    channel: &mut impl Channel,
    client_id: usize,
    cfg: &FlConfig,
    spec: &ModelSpec,
    shard: &Dataset,
) -> Result<(), EngineError> {
    channel.send(&Frame::new(
        FrameType::Hello,
        (client_id as u32).to_le_bytes().to_vec(),
    ))?;
    let mut net = init_network(spec, cfg.seed);
    let mut round: u64 = 0;
    loop {
        let frame = channel.recv()?;
        match frame.frame_type {
            FrameType::ModelDown => {
                let flat = decode_vector(&frame.payload)?;
                net.set_flat_params(&flat)?;
                let mut optimizer = Optimizer::new(cfg.optimizer, cfg.lr);
                let mut rng = epoch_rng(cfg.seed, 0, client_id as u64, round);
                local_train(
                    &mut net,
                    shard,
                    cfg.local_epochs,
                    cfg.batch_size,
                    &mut optimizer,
                    &mut rng,
                )?;
                send_vector(channel, FrameType::ModelUp, &net.flat_params())?;
                round += 1;
            }
            FrameType::Bye => return Ok(()),
            other => {
                return Err(EngineError::Protocol {
                    client: client_id,
                    expected: "MODEL_DOWN or BYE",
                    got: format!("{other:?}"),
                })
            }
        }
    }
}

/// Runs the whole FL experiment in-process over loopback channels, clients
/// training in parallel threads.
pub fn run_fl_loopback(
    cfg: &FlConfig,
    spec: &ModelSpec,
    train: &Dataset,
    plan: &PartitionPlan,
    test: &Dataset,
) -> Result<FlOutcome, EngineError> {
    cfg.validate()?;
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
            workers.push(scope.spawn(move || {
                run_fl_client(&mut ch, client_id, cfg, spec, &shard)
            }));
        }

        let outcome = run_fl(cfg, spec, &plan.sizes(), test, coordinator_ends);

        for (client, worker) in workers.into_iter().enumerate() {
            match worker.join() {
                Ok(Ok(())) => {}
                Ok(Err(e)) => {
                    if outcome.is_ok() {
                        return Err(EngineError::ClientFailed {
                            client,
                            message: e.to_string(),
                        });
                    }
                }
                Err(_) => {
                    return Err(EngineError::ClientFailed {
                        client,
                        message: "worker panicked".into(),
                    })
                }
            }
        }
        outcome
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{partition_iid, synth_sequences};
    use crate::model::ModelProfile;

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

    fn tiny_cfg(clients: usize, rounds: usize) -> FlConfig {
        FlConfig {
            clients,
            rounds,
            local_epochs: 1,
            batch_size: 8,
            lr: 0.001,
            seed: 42,
            optimizer: OptimizerKind::Adam,
        }
    }

    #[test]
    fn aggregate_identity_symmetry_and_weighted_mean() {
        let w = vec![0.25f32, -1.5, 3.0];
        // identical updates reproduce the weights exactly
        let out = fedavg_aggregate(&[(w.clone(), 3), (w.clone(), 5), (w.clone(), 2)]).unwrap();
        assert_eq!(out, w);

        // equal sizes, opposite scalars cancel
        let out = fedavg_aggregate(&[(vec![2.5], 4), (vec![-2.5], 4)]).unwrap();
        assert_eq!(out, vec![0.0]);

        // sizes {1,2,3} with scalar weights {1,2,3} -> 14/6
        let out =
            fedavg_aggregate(&[(vec![1.0], 1), (vec![2.0], 2), (vec![3.0], 3)]).unwrap();
        assert_eq!(out, vec![(14.0f64 / 6.0) as f32]);
    }

    #[test]
    fn aggregate_rejects_mismatched_lengths() {
        let err = fedavg_aggregate(&[(vec![1.0, 2.0], 1), (vec![1.0], 1)]).unwrap_err();
        assert!(err.to_string().contains("length mismatch"));
    }

    #[test]
    fn aggregate_is_permutation_invariant_after_sorting() {
        // the engine always aggregates in ascending client order; the same
        // multiset of updates in that order is bitwise identical
        let updates = vec![
            (vec![0.1f32, 0.7], 2),
            (vec![-0.3, 0.4], 5),
            (vec![0.9, -0.2], 1),
        ];
        let a = fedavg_aggregate(&updates).unwrap();
        let b = fedavg_aggregate(&updates.clone()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_lr_local_train_keeps_weights() {
        let spec = tiny_profile().build().unwrap();
        let mut net = init_network(&spec, 1);
        let before = net.flat_params();
        let shard = synth_sequences(10, 5, 32, 0.2, 3).unwrap();
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.0);
        let mut rng = epoch_rng(1, 0, 0, 0);
        local_train(&mut net, &shard, 1, 4, &mut opt, &mut rng).unwrap();
        assert_eq!(net.flat_params(), before);
    }

    #[test]
    fn one_sample_shard_is_one_step_per_epoch() {
        let spec = tiny_profile().build().unwrap();
        let mut net = init_network(&spec, 1);
        let ds = synth_sequences(5, 5, 32, 0.2, 3).unwrap();
        let shard = ds.subset(&[0]);
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.001);
        let mut rng = epoch_rng(1, 0, 0, 0);
        local_train(&mut net, &shard, 1, 32, &mut opt, &mut rng).unwrap();
        match opt {
            Optimizer::Adam(a) => assert_eq!(a.steps(), 1),
            Optimizer::Sgd { .. } => unreachable!(),
        }
    }

    /// Independent oracle: plain centralized training with the same batch
    /// schedule the single FL client derives.
    fn centralized_oracle(
        cfg: &FlConfig,
        spec: &ModelSpec,
        shard: &Dataset,
        rounds: usize,
    ) -> Network {
        let mut net = init_network(spec, cfg.seed);
        for round in 0..rounds {
            let mut optimizer = Optimizer::new(cfg.optimizer, cfg.lr);
            let mut rng = epoch_rng(cfg.seed, 0, 0, round as u64);
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
    fn single_client_fl_equals_centralized_training() {
        let cfg = tiny_cfg(1, 3);
        let spec = tiny_profile().build().unwrap();
        let ds = synth_sequences(60, 5, 32, 0.4, 7).unwrap();
        let train = ds.subset(&(0..40).collect::<Vec<_>>());
        let test = ds.subset(&(40..60).collect::<Vec<_>>());
        let plan = partition_iid(&train, 1, cfg.seed).unwrap();

        let outcome = run_fl_loopback(&cfg, &spec, &train, &plan, &test).unwrap();
        // FL shuffles each client's shard; the oracle must see the same view
        let shard = train.subset(plan.indices(0));
        let oracle = centralized_oracle(&cfg, &spec, &shard, cfg.rounds);

        let got = outcome.model.flat_params();
        let want = oracle.flat_params();
        let max_diff = got
            .iter()
            .zip(&want)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(max_diff < 1e-6, "max diff {max_diff}");
    }

    #[test]
    fn per_round_bytes_follow_the_protocol_formula() {
        let cfg = tiny_cfg(3, 2);
        let spec = tiny_profile().build().unwrap();
        let params = crate::model::count_params(&spec) as u64;
        let ds = synth_sequences(60, 5, 32, 0.4, 7).unwrap();
        let plan = partition_iid(&ds, 3, cfg.seed).unwrap();
        let outcome = run_fl_loopback(&cfg, &spec, &ds, &plan, &ds).unwrap();

        let per_round = 13 + 4 * params;
        let m0 = &outcome.metrics[0];
        for c in &m0.per_client {
            assert_eq!(c.tx, 9 + per_round, "round 0 includes HELLO");
            assert_eq!(c.rx, per_round);
        }
        let m1 = &outcome.metrics[1];
        for c in &m1.per_client {
            assert_eq!(c.tx, per_round);
            assert_eq!(c.rx, per_round + 5, "last round includes BYE");
        }
        assert_eq!(
            m1.cum_tx,
            3 * (9 + 2 * per_round),
            "cumulative client-to-server bytes"
        );
    }

    #[test]
    fn fl_bytes_are_independent_of_partition_regime() {
        let cfg = tiny_cfg(4, 2);
        let spec = tiny_profile().build().unwrap();
        let ds = synth_sequences(100, 5, 32, 0.4, 7).unwrap();
        let mut totals = Vec::new();
        for plan in [
            partition_iid(&ds, 4, 1).unwrap(),
            crate::data::partition_imbalanced(&ds, 4, 0.8, 1).unwrap(),
            crate::data::partition_noniid(&ds, 4, 1, 1).unwrap(),
        ] {
            let outcome = run_fl_loopback(&cfg, &spec, &ds, &plan, &ds).unwrap();
            let last = outcome.metrics.last().unwrap();
            totals.push((last.cum_tx, last.cum_rx));
        }
        assert_eq!(totals[0], totals[1]);
        assert_eq!(totals[1], totals[2]);
    }
}
