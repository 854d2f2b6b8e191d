//! Binary checkpoint format.
//!
//! ```text
//! offset  size  field
//! 0       8     magic "DEVGANCK"
//! 8       4     format version, u32 LE (currently 1)
//! 12      4     header length H, u32 LE
//! 16      H     header, UTF-8 JSON (see below)
//! 16+H    D     tensor data: little-endian floats, tensors in header order
//! 16+H+D  4     CRC32 (IEEE) of every preceding byte, u32 LE
//! ```
//!
//! The header holds the element type, a free-form `meta` object (iteration,
//! seed, ...) and, per network, its input shape, layer specs with trainable
//! flags, optimizer/loss settings, optimizer step, and the name and shape of
//! every stored tensor. Per layer the tensors are the parameters, then the
//! running statistics, then the optimizer slots of each parameter.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::layers::LayerSpec;
use super::network::{Compile, Network};
use crate::error::{CheckpointError, Error, Result};
use crate::tensor::{DType, Scalar, Tensor};

pub const MAGIC: &[u8; 8] = b"DEVGANCK";
pub const FORMAT_VERSION: u32 = 1;
const PREAMBLE: usize = 16;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    dtype: DType,
    meta: Map<String, Value>,
    networks: Vec<NetworkHeader>,
}

#[derive(Debug, Serialize, Deserialize)]
struct NetworkHeader {
    name: String,
    input_shape: Vec<usize>,
    layers: Vec<LayerHeader>,
    compile: Option<Compile>,
    step: u64,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerHeader {
    spec: LayerSpec,
    trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

/// Named networks plus metadata, stored together in one file.
#[derive(Debug, Clone)]
pub struct Archive<T: Scalar = f32> {
    pub meta: Map<String, Value>,
    pub networks: Vec<(String, Network<T>)>,
}

fn tensors_of<T: Scalar>(net: &Network<T>) -> Vec<(String, &Tensor<T>)> {
    let mut out = Vec::new();
    for (i, layer) in net.layers().iter().enumerate() {
        for (j, p) in layer.params().iter().enumerate() {
            out.push((format!("layer{i}.param{j}"), p));
        }
        for (j, s) in layer.state().iter().enumerate() {
            out.push((format!("layer{i}.state{j}"), s));
        }
        for (j, slots) in layer.slots().iter().enumerate() {
            for (k, s) in slots.iter().enumerate() {
                out.push((format!("layer{i}.slot{j}.{k}"), s));
            }
        }
    }
    out
}

fn tensors_of_mut<T: Scalar>(net: &mut Network<T>) -> Vec<&mut Tensor<T>> {
    net.layers_mut()
        .iter_mut()
        .flat_map(|l| l.stored_tensors_mut())
        .collect()
}

pub fn encode<T: Scalar>(archive: &Archive<T>) -> Vec<u8> {
    let networks = archive
        .networks
        .iter()
        .map(|(name, net)| NetworkHeader {
            name: name.clone(),
            input_shape: net.input_shape().to_vec(),
            layers: net
                .layers()
                .iter()
                .map(|l| LayerHeader {
                    spec: l.spec().clone(),
                    trainable: l.trainable(),
                })
                .collect(),
            compile: net.compiled().copied(),
            step: net.step(),
            tensors: tensors_of(net)
                .into_iter()
                .map(|(name, t)| TensorEntry {
                    name,
                    shape: t.shape().to_vec(),
                })
                .collect(),
        })
        .collect();
    let header = Header {
        dtype: T::DTYPE,
        meta: archive.meta.clone(),
        networks,
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for (_, net) in &archive.networks {
        for (_, t) in tensors_of(net) {
            out.extend(t.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn verify_crc(bytes: &[u8]) -> std::result::Result<(), CheckpointError> {
    let body = bytes.len() - 4;
    let stored = read_u32(bytes, body);
    let computed = crc32fast::hash(&bytes[..body]);
    if stored != computed {
        return Err(CheckpointError::ChecksumMismatch { stored, computed });
    }
    Ok(())
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<Archive<T>> {
    let truncated = |needed: usize| CheckpointError::Truncated {
        needed,
        found: bytes.len(),
    };
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(if bytes.len() < MAGIC.len() && MAGIC.starts_with(bytes) {
            truncated(PREAMBLE + 4).into()
        } else {
            CheckpointError::BadMagic.into()
        });
    }
    if bytes.len() < PREAMBLE {
        return Err(truncated(PREAMBLE + 4).into());
    }
    let version = read_u32(bytes, 8);
    if version != FORMAT_VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        }
        .into());
    }
    let header_len = read_u32(bytes, 12) as usize;
    let data_start = PREAMBLE + header_len;
    if bytes.len() < data_start + 4 {
        return Err(truncated(data_start + 4).into());
    }
    let header: Header = match serde_json::from_slice(&bytes[PREAMBLE..data_start]) {
        Ok(h) => h,
        Err(e) => {
            // A corrupted header usually means a corrupted file.
            verify_crc(bytes)?;
            return Err(CheckpointError::Header(e.to_string()).into());
        }
    };
    if header.dtype != T::DTYPE {
        return Err(CheckpointError::Header(format!(
            "stored element type {:?}, requested {:?}",
            header.dtype,
            T::DTYPE
        ))
        .into());
    }
    let width = T::DTYPE.size();
    let data_len: usize = header
        .networks
        .iter()
        .flat_map(|n| &n.tensors)
        .map(|t| t.shape.iter().product::<usize>() * width)
        .sum();
    let needed = data_start + data_len + 4;
    if bytes.len() < needed {
        return Err(truncated(needed).into());
    }
    if bytes.len() > needed {
        return Err(CheckpointError::TrailingBytes.into());
    }
    verify_crc(bytes)?;

    let mut cursor = data_start;
    let mut networks = Vec::with_capacity(header.networks.len());
    for nh in header.networks {
        let (specs, trainable): (Vec<_>, Vec<_>) =
            nh.layers.into_iter().map(|l| (l.spec, l.trainable)).unzip();
        let mut net = Network::<T>::zeroed(&nh.input_shape, specs)
            .map_err(|e| CheckpointError::Header(format!("network {}: {e}", nh.name)))?;
        if let Some(c) = nh.compile {
            net.compile(c.optimizer, c.loss)?;
        }
        net.set_compiled(nh.compile, nh.step);
        for (layer, &t) in net.layers_mut().iter_mut().zip(&trainable) {
            layer.set_trainable(t);
        }
        let expected: Vec<TensorEntry> = tensors_of(&net)
            .into_iter()
            .map(|(name, t)| TensorEntry {
                name,
                shape: t.shape().to_vec(),
            })
            .collect();
        if expected != nh.tensors {
            return Err(CheckpointError::Header(format!(
                "tensor list of network {} does not match its layers",
                nh.name
            ))
            .into());
        }
        for t in tensors_of_mut(&mut net) {
            for v in t.data_mut() {
                *v = T::read_le(&bytes[cursor..cursor + width]);
                cursor += width;
            }
            if !t.all_finite() {
                return Err(Error::NonFinite(format!("checkpoint network {}", nh.name)));
            }
        }
        networks.push((nh.name, net));
    }
    Ok(Archive {
        meta: header.meta,
        networks,
    })
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn save_network<T: Scalar>(net: &Network<T>, path: &Path) -> Result<()> {
    let archive = Archive {
        meta: Map::new(),
        networks: vec![("network".to_string(), net.clone())],
    };
    write_file(path, &encode(&archive))
}

pub fn load_network<T: Scalar>(path: &Path) -> Result<Network<T>> {
    let archive = decode::<T>(&read_file(path)?)?;
    archive
        .networks
        .into_iter()
        .next()
        .map(|(_, n)| n)
        .ok_or_else(|| CheckpointError::Header("archive holds no network".into()).into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::activation::Activation;
    use crate::nn::loss::{LossKind, Target};
    use crate::nn::optim::{Adam, OptimizerConfig};
    use crate::rng::Rng;

    fn trained() -> Network {
        let mut rng = Rng::new(11);
        let mut net = Network::new(
            &[4],
            vec![
                LayerSpec::dense(5),
                LayerSpec::batchnorm(0.8),
                LayerSpec::leaky_relu(0.2),
                LayerSpec::dense(1),
                LayerSpec::act(Activation::Sigmoid),
            ],
            &mut rng,
        )
        .unwrap();
        net.compile(OptimizerConfig::Adam(Adam::gan()), LossKind::BinaryCe).unwrap();
        let x = Tensor::from_fn(&[3, 4], |i| (i as f32 * 0.37).cos());
        let y = Tensor::new(&[3, 1], vec![1.0, 0.0, 1.0]).unwrap();
        net.train_on_batch(&x, &Target::Dense(&y), &mut rng).unwrap();
        net
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let net = trained();
        let bytes = encode(&Archive {
            meta: Map::new(),
            networks: vec![("n".into(), net.clone())],
        });
        let back = decode::<f32>(&bytes).unwrap();
        let again = encode(&back);
        assert_eq!(bytes, again);
        let loaded = &back.networks[0].1;
        assert_eq!(loaded.step(), 1);
        let x = Tensor::from_fn(&[2, 4], |i| i as f32 * 0.1);
        assert_eq!(loaded.predict(&x).unwrap(), net.predict(&x).unwrap());
    }

    #[test]
    fn contract_errors() {
        let bytes = encode(&Archive {
            meta: Map::new(),
            networks: vec![("n".into(), trained())],
        });
        for cut in [4, 10, 20, bytes.len() - 9] {
            let err = decode::<f32>(&bytes[..cut]).unwrap_err();
            assert!(
                matches!(err, Error::Checkpoint(CheckpointError::Truncated { .. })),
                "cut {cut}: {err}"
            );
        }
        let mut flipped = bytes.clone();
        let last_data = flipped.len() - 5;
        flipped[last_data] ^= 0x40;
        assert!(matches!(
            decode::<f32>(&flipped),
            Err(Error::Checkpoint(CheckpointError::ChecksumMismatch { .. }))
        ));
        let mut versioned = bytes.clone();
        versioned[8] = 9;
        assert!(matches!(
            decode::<f32>(&versioned),
            Err(Error::Checkpoint(CheckpointError::VersionMismatch { found: 9, .. }))
        ));
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(
            decode::<f32>(&magic),
            Err(Error::Checkpoint(CheckpointError::BadMagic))
        ));
        assert!(decode::<f64>(&bytes).is_err());
    }
}
