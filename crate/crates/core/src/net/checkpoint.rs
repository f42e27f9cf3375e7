//! Model checkpoints: a JSON header (network spec + run metadata) followed
//! by every parameter tensor — batch-norm running statistics included — in
//! the flat binary tensor format. Byte-deterministic for a given network
//! state, which the reproducibility contract depends on.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Normalization;
use crate::error::{Error, Result};
use crate::net::{Network, NetworkSpec};
use crate::rng::SplitMix64;
use crate::tensor::{read_vec_record, write_vec_record, Tensor4};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"CMN1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    /// Human-readable record of the initialization scheme.
    pub init_desc: String,
    /// Dataset the normalization constants came from, when applicable.
    #[serde(default)]
    pub dataset: Option<String>,
    /// Training-split normalization constants, so eval runs reuse them.
    #[serde(default)]
    pub normalization: Option<Normalization>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    spec: NetworkSpec,
    meta: CheckpointMeta,
}

/// Serialize to bytes (exposed for byte-identity checks).
pub fn checkpoint_bytes(net: &Network<f32>, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&Header {
        spec: net.spec.clone(),
        meta: meta.clone(),
    })
    .map_err(|e| Error::Checkpoint(format!("header encode: {e}")))?;
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    let io_err = |e: std::io::Error| Error::Checkpoint(format!("tensor encode: {e}"));
    for block in &net.blocks {
        for module in block {
            for branch in &module.branches {
                if let Some(bott) = &branch.bottleneck {
                    bott.weights.write_to(&mut out).map_err(io_err)?;
                    write_vec_record(&bott.bias, &mut out).map_err(io_err)?;
                }
                branch.conv.weights.write_to(&mut out).map_err(io_err)?;
                write_vec_record(&branch.conv.bias, &mut out).map_err(io_err)?;
                if let Some(bn) = &branch.bn {
                    write_vec_record(&bn.gamma, &mut out).map_err(io_err)?;
                    write_vec_record(&bn.beta, &mut out).map_err(io_err)?;
                    write_vec_record(&bn.running_mean, &mut out).map_err(io_err)?;
                    write_vec_record(&bn.running_var, &mut out).map_err(io_err)?;
                }
            }
        }
    }
    Ok(out)
}

pub fn save_checkpoint(net: &Network<f32>, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    let bytes = checkpoint_bytes(net, meta)?;
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<(Network<f32>, CheckpointMeta)> {
    if bytes.len() < 12 || bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad checkpoint magic".into()));
    }
    let header_len = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
    if bytes.len() < 12 + header_len {
        return Err(Error::Checkpoint("truncated checkpoint header".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[12..12 + header_len])
        .map_err(|e| Error::Checkpoint(format!("header decode: {e}")))?;
    header.spec.validate()?;

    // Build the skeleton, then overwrite every tensor from the stream.
    let mut net = Network::<f32>::build(&header.spec, &mut SplitMix64::new(0))?;
    let mut cursor = &bytes[12 + header_len..];
    for block in net.blocks.iter_mut() {
        for module in block.iter_mut() {
            for branch in module.branches.iter_mut() {
                if let Some(bott) = branch.bottleneck.as_mut() {
                    let w = Tensor4::<f32>::read_from(&mut cursor)?;
                    if w.dims() != bott.weights.dims() {
                        return Err(Error::Checkpoint(format!(
                            "bottleneck weight dims {:?} do not match spec {:?}",
                            w.dims(),
                            bott.weights.dims()
                        )));
                    }
                    bott.weights = w;
                    bott.bias = read_vec_record(&mut cursor, bott.bias.len())?;
                }
                let w = Tensor4::<f32>::read_from(&mut cursor)?;
                if w.dims() != branch.conv.weights.dims() {
                    return Err(Error::Checkpoint(format!(
                        "conv weight dims {:?} do not match spec {:?}",
                        w.dims(),
                        branch.conv.weights.dims()
                    )));
                }
                branch.conv.weights = w;
                branch.conv.bias = read_vec_record(&mut cursor, branch.conv.bias.len())?;
                branch.conv.apply_mask();
                if let Some(bn) = branch.bn.as_mut() {
                    let c = bn.gamma.len();
                    bn.gamma = read_vec_record(&mut cursor, c)?;
                    bn.beta = read_vec_record(&mut cursor, c)?;
                    bn.running_mean = read_vec_record(&mut cursor, c)?;
                    bn.running_var = read_vec_record(&mut cursor, c)?;
                }
            }
        }
    }
    if !cursor.is_empty() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after parameters",
            cursor.len()
        )));
    }
    Ok((net, header.meta))
}

pub fn load_checkpoint(path: &Path) -> Result<(Network<f32>, CheckpointMeta)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::micro_inception_spec;
    use crate::tensor::Tensor4;

    fn meta() -> CheckpointMeta {
        CheckpointMeta {
            seed: 7,
            init_desc: "test".into(),
            dataset: None,
            normalization: None,
        }
    }

    #[test]
    fn round_trip_preserves_forward_bitwise() {
        let spec = micro_inception_spec();
        let mut rng = SplitMix64::new(42);
        let mut net = Network::<f32>::build(&spec, &mut rng).unwrap();
        // Touch running stats so they are not at their init values.
        for branch in net.blocks[0][0].branches.iter_mut() {
            if let Some(bn) = branch.bn.as_mut() {
                for (i, v) in bn.running_mean.iter_mut().enumerate() {
                    *v = i as f32 * 0.25;
                }
            }
        }
        let bytes = checkpoint_bytes(&net, &meta()).unwrap();
        let (loaded, m) = checkpoint_from_bytes(&bytes).unwrap();
        assert_eq!(m, meta());
        let x = Tensor4::<f32>::gaussian((2, 2, 8, 8), 1.0, &mut rng).unwrap();
        let a = net.forward_eval(&x).unwrap();
        let b = loaded.forward_eval(&x).unwrap();
        for (u, v) in a.iter().zip(b.iter()) {
            assert_eq!(u.to_bits(), v.to_bits());
        }
        // Serialization is itself deterministic.
        assert_eq!(bytes, checkpoint_bytes(&loaded, &meta()).unwrap());
    }

    #[test]
    fn truncation_and_magic_errors() {
        let spec = micro_inception_spec();
        let net = Network::<f32>::build(&spec, &mut SplitMix64::new(1)).unwrap();
        let bytes = checkpoint_bytes(&net, &meta()).unwrap();
        assert!(checkpoint_from_bytes(&bytes[..bytes.len() - 4]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(checkpoint_from_bytes(&bad).is_err());
        let mut trailing = bytes;
        trailing.extend_from_slice(&[0u8; 3]);
        assert!(checkpoint_from_bytes(&trailing).is_err());
    }
}
