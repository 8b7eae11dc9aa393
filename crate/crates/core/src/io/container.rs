//! Self-describing model container for detector banks and part classifiers.
//!
//! ```text
//! "PCULM001" | u32 LE header length | UTF-8 JSON header | f32 LE blocks
//! ```
//!
//! The header lists every weight block with its shape, in storage order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifier::{ClassifierHead, Dense, PartClassifier};
use crate::detector::DetectorBank;
use crate::error::{Error, FormatError, Result};
use crate::io::write_atomic;
use crate::scalar::Scalar;

pub const CONTAINER_MAGIC: &[u8; 8] = b"PCULM001";
pub const CONTAINER_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

impl BlockInfo {
    fn len(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContainerKind {
    Bank,
    Classifier,
}

/// JSON manifest stored at the start of a container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainerHeader {
    pub version: u32,
    pub kind: ContainerKind,
    pub p: usize,
    #[serde(rename = "D")]
    pub depth: usize,
    pub lambda: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropout_rate: Option<f64>,
    /// `[D, h1, h2, classes]`, shared by all heads.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer_sizes: Option<[usize; 4]>,
    pub blocks: Vec<BlockInfo>,
}

/// Training provenance stored alongside a bank.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BankMeta {
    pub lambda: f64,
    pub seed: u64,
}

fn encode(header: &ContainerHeader, blocks: &[&[f64]]) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header)?;
    let mut out = CONTAINER_MAGIC.to_vec();
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for block in blocks {
        for &v in *block {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

fn decode(bytes: &[u8]) -> Result<(ContainerHeader, Vec<Vec<f64>>), FormatError> {
    if bytes.len() < 12 {
        return Err(FormatError::Truncated {
            section: "container header",
            expected: 12,
            found: bytes.len() as u64,
        });
    }
    if &bytes[..8] != CONTAINER_MAGIC {
        let found = String::from_utf8_lossy(&bytes[..8]).into_owned();
        let expected = String::from_utf8_lossy(CONTAINER_MAGIC).into_owned();
        return Err(if bytes.starts_with(b"PCULM") {
            FormatError::UnsupportedVersion {
                supported: expected,
                found,
            }
        } else {
            FormatError::BadMagic { expected, found }
        });
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let rest = &bytes[12..];
    if rest.len() < header_len {
        return Err(FormatError::Truncated {
            section: "container manifest",
            expected: header_len as u64,
            found: rest.len() as u64,
        });
    }
    let header: ContainerHeader = serde_json::from_slice(&rest[..header_len])
        .map_err(|e| FormatError::Header(e.to_string()))?;
    if header.version != CONTAINER_VERSION {
        return Err(FormatError::Header(format!(
            "unsupported container version {}",
            header.version
        )));
    }
    let mut payload = &rest[header_len..];
    let expected: u64 = header.blocks.iter().map(|b| 4 * b.len() as u64).sum();
    if (payload.len() as u64) < expected {
        return Err(FormatError::Truncated {
            section: "weight blocks",
            expected,
            found: payload.len() as u64,
        });
    }
    if payload.len() as u64 > expected {
        return Err(FormatError::TrailingBytes {
            found: payload.len() as u64 - expected,
        });
    }
    let mut blocks = Vec::with_capacity(header.blocks.len());
    let mut index = 0;
    for info in &header.blocks {
        let (chunk, tail) = payload.split_at(4 * info.len());
        payload = tail;
        let mut values = Vec::with_capacity(info.len());
        for c in chunk.chunks_exact(4) {
            let v = f32::from_le_bytes(c.try_into().unwrap());
            if !v.is_finite() {
                return Err(FormatError::NonFiniteValue { index });
            }
            values.push(v as f64);
            index += 1;
        }
        blocks.push(values);
    }
    Ok((header, blocks))
}

fn bank_blocks<T: Scalar>(bank: &DetectorBank<T>) -> (BlockInfo, Vec<f64>) {
    (
        BlockInfo {
            name: "kernels".into(),
            shape: vec![bank.parts(), bank.depth()],
        },
        bank.weights().iter().map(|w| w.as_f64()).collect(),
    )
}

fn expect_block(info: &BlockInfo, name: &str, shape: &[usize]) -> Result<()> {
    if info.name != name || info.shape != shape {
        return Err(FormatError::Header(format!(
            "expected block {name} {shape:?}, found {} {:?}",
            info.name, info.shape
        ))
        .into());
    }
    Ok(())
}

fn bank_from<T: Scalar>(header: &ContainerHeader, info: &BlockInfo, values: &[f64]) -> Result<DetectorBank<T>> {
    expect_block(info, "kernels", &[header.p, header.depth])?;
    DetectorBank::new(
        header.p,
        header.depth,
        values.iter().map(|&v| T::lit(v)).collect(),
    )
}

pub fn encode_bank<T: Scalar>(bank: &DetectorBank<T>, meta: BankMeta) -> Result<Vec<u8>> {
    let (info, values) = bank_blocks(bank);
    let header = ContainerHeader {
        version: CONTAINER_VERSION,
        kind: ContainerKind::Bank,
        p: bank.parts(),
        depth: bank.depth(),
        lambda: meta.lambda,
        seed: meta.seed,
        num_classes: None,
        dropout_rate: None,
        layer_sizes: None,
        blocks: vec![info],
    };
    encode(&header, &[&values])
}

pub fn decode_bank<T: Scalar>(bytes: &[u8]) -> Result<(DetectorBank<T>, BankMeta)> {
    let (header, blocks) = decode(bytes)?;
    if header.kind != ContainerKind::Bank || blocks.len() != 1 {
        return Err(FormatError::Header("not a detector bank container".into()).into());
    }
    let bank = bank_from(&header, &header.blocks[0], &blocks[0])?;
    Ok((
        bank,
        BankMeta {
            lambda: header.lambda,
            seed: header.seed,
        },
    ))
}

pub fn encode_classifier<T: Scalar>(model: &PartClassifier<T>, meta: BankMeta) -> Result<Vec<u8>> {
    let (bank_info, bank_values) = bank_blocks(&model.bank);
    let mut infos = vec![bank_info];
    let mut values = vec![bank_values];
    for (i, head) in model.heads.iter().enumerate() {
        for (l, layer) in head.layers.iter().enumerate() {
            infos.push(BlockInfo {
                name: format!("head{i}.layer{l}.weight"),
                shape: vec![layer.outputs, layer.inputs],
            });
            values.push(layer.weights.iter().map(|w| w.as_f64()).collect());
            infos.push(BlockInfo {
                name: format!("head{i}.layer{l}.bias"),
                shape: vec![layer.outputs],
            });
            values.push(layer.bias.iter().map(|w| w.as_f64()).collect());
        }
    }
    let first = model.heads.first().ok_or(Error::Empty("classifier heads"))?;
    let header = ContainerHeader {
        version: CONTAINER_VERSION,
        kind: ContainerKind::Classifier,
        p: model.bank.parts(),
        depth: model.bank.depth(),
        lambda: meta.lambda,
        seed: meta.seed,
        num_classes: Some(model.num_classes),
        dropout_rate: Some(first.dropout_rate),
        layer_sizes: Some(first.layer_sizes()),
        blocks: infos,
    };
    let refs: Vec<&[f64]> = values.iter().map(Vec::as_slice).collect();
    encode(&header, &refs)
}

pub fn decode_classifier<T: Scalar>(bytes: &[u8]) -> Result<(PartClassifier<T>, BankMeta)> {
    let (header, blocks) = decode(bytes)?;
    let missing = |what: &str| Error::from(FormatError::Header(format!("classifier container lacks {what}")));
    if header.kind != ContainerKind::Classifier {
        return Err(FormatError::Header("not a classifier container".into()).into());
    }
    let sizes = header.layer_sizes.ok_or_else(|| missing("layer_sizes"))?;
    let num_classes = header.num_classes.ok_or_else(|| missing("num_classes"))?;
    let dropout = header.dropout_rate.ok_or_else(|| missing("dropout_rate"))?;
    if blocks.len() != 1 + 6 * header.p {
        return Err(FormatError::Header(format!(
            "expected {} blocks, found {}",
            1 + 6 * header.p,
            blocks.len()
        ))
        .into());
    }
    let bank = bank_from(&header, &header.blocks[0], &blocks[0])?;
    let mut heads = Vec::with_capacity(header.p);
    let mut k = 1;
    for i in 0..header.p {
        let mut layers = Vec::with_capacity(3);
        for l in 0..3 {
            let (inputs, outputs) = (sizes[l], sizes[l + 1]);
            expect_block(&header.blocks[k], &format!("head{i}.layer{l}.weight"), &[outputs, inputs])?;
            expect_block(&header.blocks[k + 1], &format!("head{i}.layer{l}.bias"), &[outputs])?;
            let cast = |v: &[f64]| v.iter().map(|&x| T::lit(x)).collect::<Vec<T>>();
            layers.push(Dense::new(inputs, outputs, cast(&blocks[k]), cast(&blocks[k + 1]))?);
            k += 2;
        }
        let layers: [Dense<T>; 3] = layers.try_into().expect("three layers");
        heads.push(ClassifierHead::new(layers, dropout)?);
    }
    Ok((
        PartClassifier::new(bank, heads, num_classes)?,
        BankMeta {
            lambda: header.lambda,
            seed: header.seed,
        },
    ))
}

pub fn write_bank<T: Scalar>(path: impl AsRef<Path>, bank: &DetectorBank<T>, meta: BankMeta) -> Result<()> {
    write_atomic(path.as_ref(), &encode_bank(bank, meta)?)
}

pub fn read_bank<T: Scalar>(path: impl AsRef<Path>) -> Result<(DetectorBank<T>, BankMeta)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::from(e).at(path))?;
    decode_bank(&bytes).map_err(|e| e.at(path))
}

pub fn write_classifier<T: Scalar>(
    path: impl AsRef<Path>,
    model: &PartClassifier<T>,
    meta: BankMeta,
) -> Result<()> {
    write_atomic(path.as_ref(), &encode_classifier(model, meta)?)
}

pub fn read_classifier<T: Scalar>(path: impl AsRef<Path>) -> Result<(PartClassifier<T>, BankMeta)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::from(e).at(path))?;
    decode_classifier(&bytes).map_err(|e| e.at(path))
}
