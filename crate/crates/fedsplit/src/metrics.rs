//! Per-round metric records, accuracy evaluation, analytical communication
//! estimators and CSV/JSON export.
//!
//! The estimators and the live engines implement the same normative framing,
//! so for every run in this harness the estimate totals equal the live
//! [`ByteSnapshot`] totals byte-for-byte.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::data::Dataset;
use crate::nn::{softmax_cross_entropy, Network};
use crate::split::SyncMode;
use crate::transport::{encoded_tensor_len, ByteSnapshot, FRAME_HEADER_LEN};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One row of the experiment record.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    pub round: usize,
    /// Test accuracy in [0, 1].
    pub accuracy: f32,
    pub loss: f32,
    pub wall_ms: u64,
    /// This round's bytes from the client's perspective: tx is
    /// client-to-server traffic, rx is server-to-client.
    pub per_client: Vec<ByteSnapshot>,
    pub cum_tx: u64,
    pub cum_rx: u64,
}

impl RoundMetrics {
    /// Client-to-server bytes this round, summed over clients.
    pub fn tx_bytes(&self) -> u64 {
        self.per_client.iter().map(|c| c.tx).sum()
    }

    /// Server-to-client bytes this round, summed over clients.
    pub fn rx_bytes(&self) -> u64 {
        self.per_client.iter().map(|c| c.rx).sum()
    }
}

/// Argmax-of-logits accuracy and mean loss over a test set. Deterministic
/// and independent of `batch_size`; ties resolve to the lowest class index.
pub fn evaluate_accuracy(net: &Network, test: &Dataset, batch_size: usize) -> (f32, f32) {
    assert!(batch_size >= 1, "batch_size must be >= 1");
    assert!(!test.is_empty(), "test set must be non-empty");
    let n = test.len();
    let mut correct = 0usize;
    let mut loss_sum = 0.0f64;
    let mut start = 0;
    while start < n {
        let end = (start + batch_size).min(n);
        let indices: Vec<usize> = (start..end).collect();
        let (batch, labels) = test.gather(&indices);
        let logits = net.infer(&batch).expect("evaluation forward");
        let classes = logits.shape()[1];
        for (b, &label) in labels.iter().enumerate() {
            let row = &logits.data()[b * classes..][..classes];
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            if best == label {
                correct += 1;
            }
        }
        // per-sample losses accumulate so batching cannot change the mean
        let (batch_loss, _) = softmax_cross_entropy(&logits, &labels).expect("valid labels");
        loss_sum += f64::from(batch_loss) * labels.len() as f64;
        start = end;
    }
    (correct as f32 / n as f32, (loss_sum / n as f64) as f32)
}

/// Which traffic direction an estimate aggregates. The paper's own FL byte
/// figure does not say whether it counts one or both directions, so both
/// conventions are reportable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Client-to-server only.
    One,
    /// Both directions.
    Both,
}

/// Itemized byte totals. Data items count tensor payload values only; all
/// frame headers, tensor-encoding headers and control payloads land in
/// `framing`, so the grand total is exactly the sum of the items.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CommEstimate {
    pub model_down: u64,
    pub model_up: u64,
    pub activations: u64,
    pub gradients: u64,
    pub labels: u64,
    pub handoff: u64,
    pub framing: u64,
    /// Client-perspective view: tx is client-to-server.
    pub per_client: Vec<ByteSnapshot>,
}

impl CommEstimate {
    pub fn grand_total(&self) -> u64 {
        self.model_down
            + self.model_up
            + self.activations
            + self.gradients
            + self.labels
            + self.handoff
            + self.framing
    }

    /// Total client-to-server bytes.
    pub fn total_to_server(&self) -> u64 {
        self.per_client.iter().map(|c| c.tx).sum()
    }

    /// Total server-to-client bytes.
    pub fn total_to_client(&self) -> u64 {
        self.per_client.iter().map(|c| c.rx).sum()
    }
}

/// 1-D tensor frame cost helpers (see the transport wire layout).
fn enc1(elems: usize) -> u64 {
    encoded_tensor_len(1, elems)
}

fn enc2(elems: usize) -> u64 {
    encoded_tensor_len(2, elems)
}

/// Ragged-tail batch sizes for one epoch over `n` samples.
pub fn batch_sizes(n: usize, batch: usize) -> impl Iterator<Item = usize> {
    let full = n / batch;
    let tail = n % batch;
    (0..full)
        .map(move |_| batch)
        .chain((tail > 0).then_some(tail))
}

/// FedAvg traffic: every client sends and receives the full flattened
/// parameter vector once per round, independent of its shard size. The
/// protocol adds one HELLO (client id payload) up and one BYE down per
/// client.
pub fn estimate_fl_bytes(
    param_count: usize,
    rounds: usize,
    clients: usize,
    direction: Direction,
) -> CommEstimate {
    let mut est = CommEstimate::default();
    let param_data = 4 * param_count as u64;
    let vec_overhead = enc1(param_count) - param_data; // ndim word + one dim word
    for _ in 0..clients {
        let mut client = ByteSnapshot::default();
        // up: HELLO + R x MODEL_UP
        est.framing += FRAME_HEADER_LEN + 4;
        client.tx += FRAME_HEADER_LEN + 4;
        est.model_up += rounds as u64 * param_data;
        est.framing += rounds as u64 * (FRAME_HEADER_LEN + vec_overhead);
        client.tx += rounds as u64 * (FRAME_HEADER_LEN + enc1(param_count));
        if direction == Direction::Both {
            // down: R x MODEL_DOWN + BYE
            est.model_down += rounds as u64 * param_data;
            est.framing += rounds as u64 * (FRAME_HEADER_LEN + vec_overhead);
            est.framing += FRAME_HEADER_LEN;
            client.rx += rounds as u64 * (FRAME_HEADER_LEN + enc1(param_count)) + FRAME_HEADER_LEN;
        }
        est.per_client.push(client);
    }
    est
}

/// SplitNN traffic: per batch one ACTIVATIONS frame up (cut activations
/// flattened to `[batch, smashed]` plus a label vector) and one GRADIENTS
/// frame down; per (round, client) one turn signal down and one done signal
/// up (CLIENT_WEIGHTS carrying the client sub-network in relay mode, empty
/// TOKEN_PASS/ROUND_DONE otherwise); plus HELLO/BYE once per client.
/// Always counts both directions.
pub fn estimate_split_bytes(
    smashed_elems: usize,
    shard_sizes: &[usize],
    batch_size: usize,
    rounds: usize,
    client_param_count: usize,
    sync_mode: SyncMode,
) -> CommEstimate {
    let mut est = CommEstimate::default();
    let client_data = 4 * client_param_count as u64;
    let client_vec_overhead = enc1(client_param_count) - client_data;
    for &s_k in shard_sizes {
        let mut client = ByteSnapshot::default();
        // HELLO up, BYE down
        est.framing += 2 * FRAME_HEADER_LEN + 4;
        client.tx += FRAME_HEADER_LEN + 4;
        client.rx += FRAME_HEADER_LEN;
        for _ in 0..rounds {
            // session control: turn down, done up
            match sync_mode {
                SyncMode::Relay => {
                    est.handoff += 2 * client_data;
                    est.framing += 2 * (FRAME_HEADER_LEN + client_vec_overhead);
                    client.tx += FRAME_HEADER_LEN + enc1(client_param_count);
                    client.rx += FRAME_HEADER_LEN + enc1(client_param_count);
                }
                SyncMode::None => {
                    est.framing += 2 * FRAME_HEADER_LEN;
                    client.tx += FRAME_HEADER_LEN;
                    client.rx += FRAME_HEADER_LEN;
                }
            }
            for bs in batch_sizes(s_k, batch_size) {
                let act_data = 4 * (bs * smashed_elems) as u64;
                let label_data = 4 * bs as u64;
                est.activations += act_data;
                est.labels += label_data;
                est.framing += FRAME_HEADER_LEN
                    + (enc2(bs * smashed_elems) - act_data)
                    + (enc1(bs) - label_data);
                client.tx += FRAME_HEADER_LEN + enc2(bs * smashed_elems) + enc1(bs);

                est.gradients += act_data;
                est.framing += FRAME_HEADER_LEN + (enc2(bs * smashed_elems) - act_data);
                client.rx += FRAME_HEADER_LEN + enc2(bs * smashed_elems);
            }
        }
        est.per_client.push(client);
    }
    est
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Json,
}

#[derive(Serialize)]
struct ExportRow {
    round: usize,
    accuracy: f32,
    loss: f32,
    wall_ms: u64,
    tx_bytes: u64,
    rx_bytes: u64,
    cum_tx: u64,
    cum_rx: u64,
}

fn export_rows(series: &[RoundMetrics]) -> Vec<ExportRow> {
    series
        .iter()
        .map(|m| ExportRow {
            round: m.round,
            accuracy: m.accuracy,
            loss: m.loss,
            wall_ms: m.wall_ms,
            tx_bytes: m.tx_bytes(),
            rx_bytes: m.rx_bytes(),
            cum_tx: m.cum_tx,
            cum_rx: m.cum_rx,
        })
        .collect()
}

/// Renders the series in the stable column order
/// `round,accuracy,loss,wall_ms,tx_bytes,rx_bytes,cum_tx,cum_rx`.
pub fn render_metrics(series: &[RoundMetrics], format: ExportFormat) -> String {
    let rows = export_rows(series);
    match format {
        ExportFormat::Csv => {
            let mut out =
                String::from("round,accuracy,loss,wall_ms,tx_bytes,rx_bytes,cum_tx,cum_rx\n");
            for r in rows {
                out.push_str(&format!(
                    "{},{:.6},{:.6},{},{},{},{},{}\n",
                    r.round,
                    r.accuracy,
                    r.loss,
                    r.wall_ms,
                    r.tx_bytes,
                    r.rx_bytes,
                    r.cum_tx,
                    r.cum_rx
                ));
            }
            out
        }
        ExportFormat::Json => {
            let mut out = serde_json::to_string_pretty(&rows).expect("serializable rows");
            out.push('\n');
            out
        }
    }
}

pub fn export_metrics(
    series: &[RoundMetrics],
    path: impl AsRef<Path>,
    format: ExportFormat,
) -> Result<(), MetricsError> {
    let path = path.as_ref();
    let text = render_metrics(series, format);
    let mut file = fs::File::create(path).map_err(|source| MetricsError::Io {
        path: path.display().to_string(),
        source,
    })?;
    file.write_all(text.as_bytes())
        .map_err(|source| MetricsError::Io {
            path: path.display().to_string(),
            source,
        })
}
