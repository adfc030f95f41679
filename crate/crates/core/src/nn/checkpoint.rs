//! NNP1 checkpoint format: JSON header (layer specs, normalization,
//! optimizer flags) followed by a little-endian f32 parameter payload.
//! Round trips are byte-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::model::{Model, ModelSpec, Normalization};
use super::{NnError, Real, Result};
use crate::grid::io::atomic_write_bytes;

const MAGIC: &[u8; 5] = b"NNP1\n";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct OptimizerHeader {
    step_count: u64,
    learning_rate: f32,
    beta1: f32,
    beta2: f32,
    epsilon: f32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Nnp1Header {
    model: ModelSpec,
    norm: Normalization,
    param_count: usize,
    optimizer_state: bool,
    optimizer: Option<OptimizerHeader>,
}

fn push_f32s(out: &mut Vec<u8>, values: impl Iterator<Item = f32>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_f32s(bytes: &[u8], n: usize) -> Result<(Vec<f32>, &[u8])> {
    if bytes.len() < n * 4 {
        return Err(NnError::Format("truncated parameter payload".into()));
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let b = &bytes[i * 4..i * 4 + 4];
        out.push(f32::from_le_bytes([b[0], b[1], b[2], b[3]]));
    }
    Ok((out, &bytes[n * 4..]))
}

/// Serialize a model (plus, optionally, its ADAM state) into NNP1 bytes.
/// Parameters are stored as f32 regardless of the compute type.
pub fn to_nnp1_bytes<T: Real>(model: &Model<T>, optimizer: Option<&AdamState<T>>) -> Vec<u8> {
    let header = Nnp1Header {
        model: model.spec(),
        norm: model.norm.clone(),
        param_count: model.param_count(),
        optimizer_state: optimizer.is_some(),
        optimizer: optimizer.map(|o| OptimizerHeader {
            step_count: o.step_count,
            learning_rate: o.learning_rate.as_f32(),
            beta1: o.beta1.as_f32(),
            beta2: o.beta2.as_f32(),
            epsilon: o.epsilon.as_f32(),
        }),
    };
    let header_bytes = serde_json::to_vec(&header).expect("header serialization");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    push_f32s(&mut out, model.collect_params().iter().map(|v| v.as_f32()));
    if let Some(o) = optimizer {
        push_f32s(&mut out, o.first_moment.iter().map(|v| v.as_f32()));
        push_f32s(&mut out, o.second_moment.iter().map(|v| v.as_f32()));
    }
    out
}

pub fn from_nnp1_bytes<T: Real>(bytes: &[u8]) -> Result<(Model<T>, Option<AdamState<T>>)> {
    if bytes.len() < MAGIC.len() + 8 || &bytes[..5] != MAGIC {
        return Err(NnError::Format("not an NNP1 checkpoint".into()));
    }
    let hlen = u64::from_le_bytes(bytes[5..13].try_into().unwrap()) as usize;
    if bytes.len() < 13 + hlen {
        return Err(NnError::Format("truncated header".into()));
    }
    let header: Nnp1Header = serde_json::from_slice(&bytes[13..13 + hlen])
        .map_err(|e| NnError::Format(format!("header: {e}")))?;
    let mut model: Model<T> = Model::from_spec(&header.model, header.norm.clone())?;
    if header.param_count != model.param_count() {
        return Err(NnError::Format(format!(
            "param count {} does not match layer specs ({})",
            header.param_count,
            model.param_count()
        )));
    }
    let rest = &bytes[13 + hlen..];
    let (params, rest) = read_f32s(rest, header.param_count)?;
    model.load_params(&params.iter().map(|&v| T::of_f32(v)).collect::<Vec<_>>());
    let optimizer = if header.optimizer_state {
        let oh = header
            .optimizer
            .ok_or_else(|| NnError::Format("optimizer_state set but no optimizer header".into()))?;
        let (m, rest) = read_f32s(rest, header.param_count)?;
        let (v, _) = read_f32s(rest, header.param_count)?;
        Some(AdamState {
            step_count: oh.step_count,
            learning_rate: T::of_f32(oh.learning_rate),
            beta1: T::of_f32(oh.beta1),
            beta2: T::of_f32(oh.beta2),
            epsilon: T::of_f32(oh.epsilon),
            first_moment: m.iter().map(|&x| T::of_f32(x)).collect(),
            second_moment: v.iter().map(|&x| T::of_f32(x)).collect(),
        })
    } else {
        None
    };
    Ok((model, optimizer))
}

pub fn write_nnp1<T: Real>(
    model: &Model<T>,
    optimizer: Option<&AdamState<T>>,
    path: &Path,
) -> Result<()> {
    atomic_write_bytes(path, &to_nnp1_bytes(model, optimizer))?;
    Ok(())
}

pub fn read_nnp1<T: Real>(path: &Path) -> Result<(Model<T>, Option<AdamState<T>>)> {
    let bytes = std::fs::read(path)?;
    from_nnp1_bytes(&bytes)
}
