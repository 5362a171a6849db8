//! Plumbing shared by the FL, split and ensemble engines: the engine error
//! type, deterministic epoch batching, and frame helpers.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::DataError;
use crate::model::ModelError;
use crate::nn::NnError;
use crate::seed::{rng_for, tag};
use crate::tensor::Tensor;
use crate::transport::{
    decode_tensor, encode_tensor, Channel, Frame, FrameType, TransportError,
};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("transport: {0}")]
    Transport(#[from] TransportError),
    #[error("nn: {0}")]
    Nn(#[from] NnError),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("data: {0}")]
    Data(#[from] DataError),
    #[error("protocol violation (client {client}): expected {expected}, got {got}")]
    Protocol {
        client: usize,
        expected: &'static str,
        got: String,
    },
    #[error("{0}")]
    Invalid(String),
    #[error("client {client} failed: {message}")]
    ClientFailed { client: usize, message: String },
}

/// RNG stream for one client's batch shuffling in one round. Oracles replay
/// the same stream to reproduce a distributed run step for step.
pub fn epoch_rng(seed: u64, model_tag: u64, client_id: u64, round: u64) -> ChaCha8Rng {
    rng_for(seed, &[tag::SHUFFLE, model_tag, client_id, round])
}

/// Shuffled mini-batches over `n` local samples; the final ragged batch is
/// processed at its true size.
pub fn shuffled_batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}

pub(crate) fn expect_frame(
    frame: Frame,
    want: FrameType,
    client: usize,
    expected: &'static str,
) -> Result<Vec<u8>, EngineError> {
    if frame.frame_type != want {
        return Err(EngineError::Protocol {
            client,
            expected,
            got: format!("{:?}", frame.frame_type),
        });
    }
    Ok(frame.payload)
}

/// Sends a flat f32 vector as a 1-D tensor frame.
pub(crate) fn send_vector<C: Channel + ?Sized>(
    ch: &mut C,
    frame_type: FrameType,
    data: &[f32],
) -> Result<(), EngineError> {
    let t = Tensor::from_vec(data.to_vec());
    ch.send(&Frame::new(frame_type, encode_tensor(&t)))?;
    Ok(())
}

pub(crate) fn decode_vector(payload: &[u8]) -> Result<Vec<f32>, EngineError> {
    let t = decode_tensor(payload).map_err(TransportError::from)?;
    Ok(t.into_data())
}
